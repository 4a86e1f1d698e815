//! File formats, persistence, multi-run studies and reports for the Guard
//! node-health loop. The `guard` binary is a thin CLI over this crate.

pub mod config;
pub mod error;
pub mod harness;
pub mod report;
pub mod state;
pub mod trace;
pub mod wire;

pub use error::{GuardError, Result};

/// Parses a seed list: `a..b` (inclusive), `a..=b`, a comma list, or a
/// single seed.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    let num = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("bad seed `{x}`: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(num).collect()
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..10").unwrap().len(), 10);
        assert_eq!(parse_seeds("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4,2").unwrap(), vec![4, 2]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
