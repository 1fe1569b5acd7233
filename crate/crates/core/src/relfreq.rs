//! Relative frequencies conditioned on prior occurrences.
//!
//! After `n` occurrences of an event have been seen in the current
//! `N`-token span, its relative frequency is the expected residual rate
//!
//! ```text
//! f(≥n) = (1/N) · (m − Σ_{j<n} j·θ(j)) / (1 − Σ_{j<n} θ(j))  =  E[X | X ≥ n] / N
//! ```
//!
//! which is `m/N` with no prior information, grows monotonically in `n`, and
//! reaches 1 at `n = N`. The same code path serves unigram and bigram
//! profiles.

use thiserror::Error;

use crate::ratemodel::RateProfile;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelFreqError {
    #[error("prior count {count} outside [0, {doc_length}]")]
    CountOutOfRange { count: usize, doc_length: usize },
    #[error("prior count of event {event} may only change by one (was {stored}, got {old} -> {new})")]
    InvalidStep {
        event: usize,
        stored: usize,
        old: usize,
        new: usize,
    },
}

/// Outcome of one relative-frequency evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequency {
    pub value: f64,
    /// The profile has no mass at or above `n`; `value` was set to the lower
    /// bound `n/N` of the conditional expectation.
    pub exhausted: bool,
}

/// `f(≥n)` for one profile, with `exhausted` diagnostics.
pub fn relative_frequency_detail(profile: &RateProfile, n: usize) -> Result<Frequency, RelFreqError> {
    let doc_length = profile.doc_length();
    if n > doc_length {
        return Err(RelFreqError::CountOutOfRange {
            count: n,
            doc_length,
        });
    }
    let nf = doc_length as f64;
    let floor = profile.mean() / nf;
    if n == 0 {
        return Ok(Frequency {
            value: floor,
            exhausted: false,
        });
    }
    if n == doc_length {
        return Ok(Frequency {
            value: 1.0,
            exhausted: false,
        });
    }
    Ok(match profile.conditional_mean(n) {
        Some(q) => Frequency {
            value: (q / nf).clamp(floor, 1.0),
            exhausted: false,
        },
        None => Frequency {
            value: (n as f64 / nf).max(floor),
            exhausted: true,
        },
    })
}

/// `f(≥n)` for one profile.
pub fn relative_frequency(profile: &RateProfile, n: usize) -> Result<f64, RelFreqError> {
    relative_frequency_detail(profile, n).map(|f| f.value)
}

/// `f(w ≥ n_w) / Σ_{w'} f(w' ≥ n_{w'})`, recomputed from scratch.
pub fn normalized_probability(
    profiles: &[RateProfile],
    counts: &[usize],
    w: usize,
) -> Result<f64, RelFreqError> {
    let mut z = CompensatedSum::default();
    for (p, &n) in profiles.iter().zip(counts) {
        z.add(relative_frequency(p, n)?);
    }
    Ok(relative_frequency(&profiles[w], counts[w])? / z.value())
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Lazily filled `f(event ≥ n)` values, one growable row per event.
#[derive(Debug, Clone, Default)]
pub struct FrequencyMemo {
    rows: Vec<Vec<f64>>,
    exhausted: u64,
}

impl FrequencyMemo {
    pub fn new(events: usize) -> Self {
        Self {
            rows: vec![Vec::new(); events],
            exhausted: 0,
        }
    }

    /// Number of distinct evaluations that hit an exhausted tail.
    pub fn exhausted(&self) -> u64 {
        self.exhausted
    }

    pub fn get(&mut self, event: usize, profile: &RateProfile, n: usize) -> Result<f64, RelFreqError> {
        let row = &mut self.rows[event];
        if let Some(&v) = row.get(n) {
            if !v.is_nan() {
                return Ok(v);
            }
        }
        let f = relative_frequency_detail(profile, n)?;
        if f.exhausted {
            self.exhausted += 1;
        }
        if row.len() <= n {
            row.resize(n + 1, f64::NAN);
        }
        row[n] = f.value;
        Ok(f.value)
    }
}

/// Running sum `Z = Σ_w term(w)` over a fixed set of events whose prior
/// counts move one step at a time.
///
/// Each event's current term is cached, so an update costs O(1).
#[derive(Debug, Clone)]
pub struct ConditionalNormalizer {
    terms: Vec<f64>,
    counts: Vec<usize>,
    sum: CompensatedSum,
    doc_length: usize,
}

impl ConditionalNormalizer {
    /// Start from zero prior counts with the given initial terms.
    pub fn new(terms: Vec<f64>, doc_length: usize) -> Self {
        let sum = terms.iter().copied().collect();
        Self {
            counts: vec![0; terms.len()],
            terms,
            sum,
            doc_length,
        }
    }

    pub fn total(&self) -> f64 {
        self.sum.value()
    }

    pub fn term(&self, event: usize) -> f64 {
        self.terms[event]
    }

    pub fn count(&self, event: usize) -> usize {
        self.counts[event]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Z' = Z − term(old) + term(new)`.
    pub fn update(
        &mut self,
        event: usize,
        old_n: usize,
        new_n: usize,
        new_term: f64,
    ) -> Result<(), RelFreqError> {
        if new_n > self.doc_length {
            return Err(RelFreqError::CountOutOfRange {
                count: new_n,
                doc_length: self.doc_length,
            });
        }
        let stored = self.counts[event];
        if stored != old_n || old_n.abs_diff(new_n) > 1 {
            return Err(RelFreqError::InvalidStep {
                event,
                stored,
                old: old_n,
                new: new_n,
            });
        }
        if old_n == new_n {
            return Ok(());
        }
        let old_term = self.terms[event];
        self.sum.add(-old_term);
        self.sum.add(new_term);
        self.terms[event] = new_term;
        self.counts[event] = new_n;
        Ok(())
    }

    /// Sum of the cached terms, ignoring the running total.
    pub fn recompute(&self) -> f64 {
        self.terms.iter().copied().collect::<CompensatedSum>().value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratemodel::{NegBinParams, PoissonParams, RateDistribution};

    fn poisson_profile(lambda: f64, n: usize) -> RateProfile {
        let d = RateDistribution::Poisson(PoissonParams::new(lambda).unwrap());
        RateProfile::build(d, lambda, n).unwrap()
    }

    /// Direct evaluation of the prefix-sum form with freshly computed pmf
    /// terms (e^{-λ} λ^j / j!), independent of the profile's tail routine.
    fn direct_poisson_frequency(lambda: f64, doc_length: usize, n: usize) -> f64 {
        let mut pmf = Vec::new();
        let mut term = (-lambda).exp();
        for j in 0..=doc_length.min(400) {
            pmf.push(term);
            term *= lambda / (j as f64 + 1.0);
        }
        let total: f64 = pmf.iter().sum();
        let m: f64 = pmf.iter().enumerate().map(|(j, p)| j as f64 * p / total).sum();
        let s0: f64 = pmf[..n].iter().map(|p| p / total).sum();
        let s1: f64 = pmf[..n].iter().enumerate().map(|(j, p)| j as f64 * p / total).sum();
        (m - s1) / (1.0 - s0) / doc_length as f64
    }

    #[test]
    fn boundary_values() {
        let p = poisson_profile(2.0, 1000);
        assert_eq!(relative_frequency(&p, 0).unwrap(), p.mean() / 1000.0);
        assert_eq!(relative_frequency(&p, 1000).unwrap(), 1.0);
        assert!(relative_frequency(&p, 1001).is_err());
    }

    #[test]
    fn matches_direct_summation() {
        let p = poisson_profile(2.0, 1000);
        let got = relative_frequency(&p, 3).unwrap();
        let want = direct_poisson_frequency(2.0, 1000, 3);
        assert!((got - want).abs() < 1e-12 * want, "{got} vs {want}");
        // 25-digit reference from an arbitrary-precision evaluation.
        assert!((got - 0.003_674_301_412_089_240_4).abs() < 1e-15);
    }

    #[test]
    fn monotone_for_negbin() {
        let d = RateDistribution::NegBin(NegBinParams::new(0.05, 20.0).unwrap());
        let p = RateProfile::build(d, 1.0, 500).unwrap();
        let mut prev = 0.0;
        for n in 0..=500 {
            let f = relative_frequency(&p, n).unwrap();
            assert!(f >= prev, "n={n}");
            prev = f;
        }
    }

    #[test]
    fn degenerate_exhausts() {
        let p = RateProfile::build(RateDistribution::Degenerate { mean: 0.0 }, 0.0, 100).unwrap();
        assert_eq!(relative_frequency(&p, 0).unwrap(), 0.0);
        let f = relative_frequency_detail(&p, 3).unwrap();
        assert!(f.exhausted);
        assert_eq!(f.value, 0.03);
    }

    #[test]
    fn symmetric_normalization() {
        let profiles = vec![poisson_profile(3.0, 100), poisson_profile(3.0, 100)];
        let p0 = normalized_probability(&profiles, &[2, 2], 0).unwrap();
        assert!((p0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn memo_returns_identical_values() {
        let p = poisson_profile(4.0, 200);
        let mut memo = FrequencyMemo::new(1);
        for n in [5usize, 0, 5, 17, 3] {
            assert_eq!(memo.get(0, &p, n).unwrap(), relative_frequency(&p, n).unwrap());
        }
    }

    #[test]
    fn normalizer_contract() {
        let mut z = ConditionalNormalizer::new(vec![0.25, 0.5], 10);
        z.update(0, 0, 0, 0.25).unwrap();
        assert_eq!(z.total(), 0.75);
        z.update(0, 0, 1, 0.3).unwrap();
        assert!((z.total() - 0.8).abs() < 1e-16);
        assert!(z.update(0, 1, 3, 0.4).is_err());
        assert!(z.update(0, 0, 1, 0.4).is_err());
        assert!(z.update(1, 0, 11, 0.4).is_err());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-16);
        }
        assert!((s.value() - (1.0 + 1e-13)).abs() < 1e-16);
    }
}
