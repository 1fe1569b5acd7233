//! Absolute and Good-Turing discounting estimated from count-of-counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Katz cutoff: counts above this are not discounted.
pub const KATZ_CUTOFF: u64 = 5;

/// Absolute discount used when the count-of-counts cannot support Ney's
/// estimator.
pub const FALLBACK_ABSOLUTE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DiscountScheme {
    #[default]
    Absolute,
    GoodTuring,
}

impl FromStr for DiscountScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abs" => Ok(DiscountScheme::Absolute),
            "gt" => Ok(DiscountScheme::GoodTuring),
            other => Err(format!("unknown discount `{other}` (abs|gt)")),
        }
    }
}

impl fmt::Display for DiscountScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscountScheme::Absolute => "abs",
            DiscountScheme::GoodTuring => "gt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiscountConfig {
    /// Subtract `c` training occurrences.
    Absolute { c: f64 },
    /// Multiply by `ratios[r - 1]` for raw counts `1 ≤ r ≤ cutoff`.
    GoodTuring { ratios: Vec<f64>, cutoff: u64 },
}

impl DiscountConfig {
    pub fn scheme(&self) -> DiscountScheme {
        match self {
            DiscountConfig::Absolute { .. } => DiscountScheme::Absolute,
            DiscountConfig::GoodTuring { .. } => DiscountScheme::GoodTuring,
        }
    }

    /// Good-Turing ratio applied to an event seen `r` times in training.
    pub fn ratio(&self, r: u64) -> f64 {
        match self {
            DiscountConfig::GoodTuring { ratios, cutoff } if r >= 1 && r <= *cutoff => {
                ratios.get(r as usize - 1).copied().unwrap_or(1.0)
            }
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            DiscountConfig::Absolute { c } if !(c.is_finite() && *c >= 0.0) => {
                Err(format!("absolute discount must be >= 0, got {c}"))
            }
            DiscountConfig::GoodTuring { ratios, cutoff } => {
                if ratios.len() as u64 != *cutoff {
                    return Err(format!("{} ratios for cutoff {cutoff}", ratios.len()));
                }
                match ratios.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
                    Some(d) => Err(format!("Good-Turing ratio {d} outside (0, 1]")),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// Discount configurations for each model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discounts {
    pub unigram: DiscountConfig,
    pub bigram: DiscountConfig,
}

/// `n_r`: how many events were seen exactly `r` times.
pub fn count_of_counts<I: IntoIterator<Item = u64>>(raw_counts: I) -> BTreeMap<u64, u64> {
    let mut coc = BTreeMap::new();
    for r in raw_counts {
        if r > 0 {
            *coc.entry(r).or_default() += 1;
        }
    }
    coc
}

/// Estimate discounting constants from the raw training counts of the events
/// of one order.
///
/// Absolute: `c = n₁ / (n₁ + 2n₂)`. Good-Turing: Katz ratios
/// `d_r = ((r+1) n_{r+1} / (r n_r) − A) / (1 − A)` with
/// `A = (k+1) n_{k+1} / n₁` for `r ≤ k`.
pub fn estimate_discounts<I: IntoIterator<Item = u64>>(
    raw_counts: I,
    scheme: DiscountScheme,
) -> DiscountConfig {
    let coc = count_of_counts(raw_counts);
    let n = |r: u64| coc.get(&r).copied().unwrap_or(0) as f64;
    let (n1, n2) = (n(1), n(2));
    match scheme {
        DiscountScheme::Absolute => {
            if n1 == 0.0 || n2 == 0.0 {
                log::warn!("count-of-counts n1={n1}, n2={n2}: using absolute discount {FALLBACK_ABSOLUTE}");
                DiscountConfig::Absolute {
                    c: FALLBACK_ABSOLUTE,
                }
            } else {
                DiscountConfig::Absolute {
                    c: n1 / (n1 + 2.0 * n2),
                }
            }
        }
        DiscountScheme::GoodTuring => {
            let k = KATZ_CUTOFF;
            if n1 == 0.0 || n2 == 0.0 {
                log::warn!("count-of-counts n1={n1}, n2={n2}: Good-Turing disabled");
                return DiscountConfig::GoodTuring {
                    ratios: vec![1.0; k as usize],
                    cutoff: k,
                };
            }
            let a = (k + 1) as f64 * n(k + 1) / n1;
            let ratios = (1..=k)
                .map(|r| {
                    let (nr, nr1) = (n(r), n(r + 1));
                    if nr == 0.0 || a >= 1.0 {
                        return 1.0;
                    }
                    let rf = r as f64;
                    let d = ((rf + 1.0) * nr1 / (rf * nr) - a) / (1.0 - a);
                    if d > 0.0 && d <= 1.0 {
                        d
                    } else {
                        log::warn!("Good-Turing ratio d_{r} = {d} outside (0, 1]; not discounting r = {r}");
                        1.0
                    }
                })
                .collect();
            DiscountConfig::GoodTuring { ratios, cutoff: k }
        }
    }
}

/// `max(f − c/trials, 0)` for absolute discounting, `d_r · f` for
/// Good-Turing, where `trials` is the number of training observations the
/// frequency `f` is relative to.
pub fn discounted_frequency(f: f64, raw_count: u64, config: &DiscountConfig, trials: f64) -> f64 {
    match config {
        DiscountConfig::Absolute { c } => (f - c / trials).max(0.0),
        DiscountConfig::GoodTuring { .. } => config.ratio(raw_count) * f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ney_estimator() {
        let raw = std::iter::repeat_n(1, 100).chain(std::iter::repeat_n(2, 25));
        let DiscountConfig::Absolute { c } = estimate_discounts(raw, DiscountScheme::Absolute) else {
            unreachable!()
        };
        assert!((c - 100.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn fallbacks_without_singletons() {
        let raw = [3u64, 3, 7, 9];
        assert_eq!(
            estimate_discounts(raw, DiscountScheme::Absolute),
            DiscountConfig::Absolute { c: FALLBACK_ABSOLUTE }
        );
        let gt = estimate_discounts(raw, DiscountScheme::GoodTuring);
        assert_eq!(gt.ratio(3), 1.0);
    }

    #[test]
    fn mass_above_cutoff_is_untouched() {
        let cfg = estimate_discounts([1, 1, 2, 10, 20, 30], DiscountScheme::GoodTuring);
        for r in [6u64, 10, 30] {
            assert_eq!(discounted_frequency(0.3, r, &cfg, 1.0), 0.3);
        }
    }

    #[test]
    fn katz_ratios_hand_check() {
        // n1=10, n2=4, n3=3, n4=2, n5=2, n6=1 -> A = 6/10
        let mut raw = Vec::new();
        for (r, nr) in [(1u64, 10usize), (2, 4), (3, 3), (4, 2), (5, 2), (6, 1)] {
            raw.extend(std::iter::repeat_n(r, nr));
        }
        let cfg = estimate_discounts(raw, DiscountScheme::GoodTuring);
        let a = 0.6;
        let d1: f64 = ((2.0 * 4.0 / 10.0) - a) / (1.0 - a);
        assert!((cfg.ratio(1) - d1).abs() < 1e-14);
        let d4: f64 = ((5.0 * 2.0 / (4.0 * 2.0)) - a) / (1.0 - a);
        // d4 > 1 gets disabled
        assert!(d4 > 1.0);
        assert_eq!(cfg.ratio(4), 1.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn arithmetic() {
        let abs = DiscountConfig::Absolute { c: 1.0 };
        assert!((discounted_frequency(0.01, 3, &abs, 1000.0) - 0.009).abs() < 1e-17);
        assert_eq!(discounted_frequency(0.0005, 1, &abs, 1000.0), 0.0);
        let gt = DiscountConfig::GoodTuring { ratios: vec![0.8], cutoff: 1 };
        assert!((discounted_frequency(0.01, 1, &gt, 1000.0) - 0.008).abs() < 1e-17);
        let identity = DiscountConfig::GoodTuring { ratios: vec![1.0; 5], cutoff: 5 };
        for r in 0..10 {
            assert_eq!(discounted_frequency(0.123, r, &identity, 7.0), 0.123);
        }
    }

    #[test]
    fn validation() {
        assert!(DiscountConfig::Absolute { c: -0.1 }.validate().is_err());
        assert!(DiscountConfig::GoodTuring { ratios: vec![0.0], cutoff: 1 }.validate().is_err());
        assert!(DiscountConfig::GoodTuring { ratios: vec![0.5], cutoff: 2 }.validate().is_err());
    }
}
