//! Small shared helpers.

/// FNV-1a 64-bit hash. Stable across platforms and releases, which the
/// deterministic mock client and checkpoint checksums rely on.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Resident-set memory estimate in kilobytes: the high-water mark where the
/// platform exposes it, else current RSS, else unavailable.
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let parse = |prefix: &str| -> Option<u64> {
        status
            .lines()
            .find_map(|l| l.strip_prefix(prefix))
            .and_then(|rest| rest.trim().trim_end_matches("kB").trim().parse().ok())
    };
    parse("VmHWM:").or_else(|| parse("VmRSS:"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_ne!(fnv1a64(b"abc"), fnv1a64(b"acb"));
    }
}
