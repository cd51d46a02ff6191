//! Stable hashing used wherever determinism must survive across platforms
//! and compiler versions (fold assignment, keyed random streams).

/// 64-bit FNV-1a over a byte stream.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash a sequence of string parts together with a numeric seed.
///
/// Parts are length-prefixed so that ("ab","c") and ("a","bc") differ.
pub(crate) fn keyed_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut buf = Vec::with_capacity(16 + parts.iter().map(|p| p.len() + 8).sum::<usize>());
    buf.extend_from_slice(&seed.to_le_bytes());
    for part in parts {
        buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
        buf.extend_from_slice(part.as_bytes());
    }
    fnv1a64(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_fnv_vector() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn parts_are_length_prefixed() {
        assert_ne!(keyed_hash(0, &["ab", "c"]), keyed_hash(0, &["a", "bc"]));
        assert_ne!(keyed_hash(0, &["x"]), keyed_hash(1, &["x"]));
    }
}
