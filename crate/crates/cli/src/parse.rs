//! Small value grammars shared by several subcommands.

use coboost::boosting::alpha_range;
use coboost::{Error, Result};

/// `start:end:step`, inclusive of `end`.
pub fn alpha_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("alpha grid must be start:end:step, got {s:?}")));
    }
    let num = |p: &str| {
        p.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number {p:?} in alpha grid")))
    };
    alpha_range(num(parts[0])?, num(parts[1])?, num(parts[2])?)
}

/// Comma-separated integers and inclusive `a-b` ranges, sorted and deduplicated.
pub fn k_grid(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad k grid {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() || out[0] == 0 {
        return Err(Error::InvalidArgument(format!("k grid {s:?} must list values >= 1")));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoostArg {
    LastK { k: usize, alpha: f64 },
    Separator { alpha: f64 },
}

pub fn boost(s: &str) -> Result<BoostArg> {
    let bad = || Error::InvalidArgument(format!("boost must be k:ALPHA or sep:ALPHA, got {s:?}"));
    let (head, alpha) = s.split_once(':').ok_or_else(bad)?;
    let alpha: f64 = alpha.trim().parse().map_err(|_| bad())?;
    if head == "sep" {
        return Ok(BoostArg::Separator { alpha });
    }
    let k: usize = head.trim().parse().map_err(|_| bad())?;
    Ok(BoostArg::LastK { k, alpha })
}
