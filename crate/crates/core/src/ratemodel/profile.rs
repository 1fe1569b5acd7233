use serde::Serialize;

use super::{RateDistribution, RateError};

/// Relative tail scale below which the remainder of a tail sum is dropped.
const TAIL_EPS: f64 = 1e-17;
const RESCALE_AT: f64 = 1e200;
const MAX_UNBOUNDED_TERMS: u64 = 20_000_000;

/// Upper tail sums `Σ_{j≥n} θ(j)` and `Σ_{j≥n} j·θ(j)` of a truncated
/// profile, both multiplied by the same unspecified positive factor.
///
/// Only ratios of the two are meaningful; keeping them relative to `θ(n)`
/// means neither underflows even when `θ(n)` itself is far below the smallest
/// representable double.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSums {
    pub mass: f64,
    pub moment: f64,
}

/// Occurrence distribution of one event restricted to `0..=N` and
/// renormalized, so that `Σθ = 1` and the mean `m` is the truncated mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    dist: RateDistribution,
    doc_length: usize,
    target_mean: f64,
    mean: f64,
    truncation_loss: f64,
}

/// Materialized `θ(0..=N)` with prefix sums `S0[n] = Σ_{j<n} θ(j)` and
/// `S1[n] = Σ_{j<n} j·θ(j)` (both of length `N + 2`).
#[derive(Debug, Clone, Serialize)]
pub struct ProfileTable {
    pub theta: Vec<f64>,
    pub prefix_mass: Vec<f64>,
    pub prefix_moment: Vec<f64>,
}

impl RateProfile {
    /// Truncate `dist` to an `doc_length`-token document.
    ///
    /// `target_mean` is the mean the distribution was fitted to; it is kept
    /// for reporting next to the truncated mean.
    pub fn build(
        dist: RateDistribution,
        target_mean: f64,
        doc_length: usize,
    ) -> Result<Self, RateError> {
        if doc_length == 0 {
            return Err(RateError::InvalidParameter {
                name: "N",
                value: 0.0,
            });
        }
        let mut profile = Self {
            dist,
            doc_length,
            target_mean,
            mean: 0.0,
            truncation_loss: 0.0,
        };
        profile.truncation_loss = profile.mass_beyond_support();
        let tail = profile.tail_sums(0);
        profile.mean = if tail.mass > 0.0 {
            tail.moment / tail.mass
        } else {
            0.0
        };
        if profile.truncation_loss > 0.01 {
            log::warn!(
                "{dist} loses {:.4} of its mass when truncated to N = {doc_length}",
                profile.truncation_loss
            );
        }
        Ok(profile)
    }

    pub fn distribution(&self) -> &RateDistribution {
        &self.dist
    }

    /// `N`
    pub fn doc_length(&self) -> usize {
        self.doc_length
    }

    /// Truncated mean `m = Σ_{j=0..N} j·θ(j)`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    /// Untruncated probability mass above `N` that renormalization removed.
    pub fn truncation_loss(&self) -> f64 {
        self.truncation_loss
    }

    /// `θ(x)` of the truncated, renormalized profile.
    pub fn theta(&self, x: usize) -> f64 {
        if x > self.doc_length {
            return 0.0;
        }
        self.dist.pmf(x as u64) / (1.0 - self.truncation_loss)
    }

    /// Tail sums from `n` to `N`, see [`TailSums`]. Beyond `N` both are zero.
    pub fn tail_sums(&self, n: usize) -> TailSums {
        if n > self.doc_length {
            return TailSums {
                mass: 0.0,
                moment: 0.0,
            };
        }
        match self.dist {
            RateDistribution::Degenerate { .. } => {
                let (mut mass, mut moment) = (0.0, 0.0);
                let k = self.dist.mean().floor() as usize;
                for x in [k, k + 1] {
                    if x >= n && x <= self.doc_length {
                        let p = self.dist.pmf(x as u64);
                        mass += p;
                        moment += x as f64 * p;
                    }
                }
                TailSums { mass, moment }
            }
            _ => self.relative_tail(n as u64, Some(self.doc_length as u64)),
        }
    }

    /// `E[X | X ≥ n]` under the truncated profile, or `None` when the profile
    /// has no mass at or above `n`.
    pub fn conditional_mean(&self, n: usize) -> Option<f64> {
        if n > 0 && (n as f64) <= self.mean && !matches!(self.dist, RateDistribution::Degenerate { .. }) {
            if let Some(q) = self.conditional_mean_from_head(n) {
                return Some(q);
            }
        }
        let tail = self.tail_sums(n);
        (tail.mass > 0.0 && tail.mass.is_finite()).then(|| tail.moment / tail.mass)
    }

    /// Below the mean, write `E[X | X ≥ n]` as `m` plus a non-negative
    /// correction `Σ_{j<n} (m − j)·θ(j) / P(X ≥ n)`. The head terms are all
    /// non-negative, so the result does not drift below its neighbours by
    /// rounding the way the plain tail ratio can once the head mass is
    /// negligible.
    fn conditional_mean_from_head(&self, n: usize) -> Option<f64> {
        let ln_tail = self.ln_tail_mass(n as u64, Some(self.doc_length as u64));
        if !ln_tail.is_finite() {
            return None;
        }
        let excess: f64 = (0..n)
            .map(|j| (self.mean - j as f64) * (self.dist.ln_pmf(j as u64) - ln_tail).exp())
            .sum();
        excess.is_finite().then_some(self.mean + excess)
    }

    /// Materialize the whole support. `O(N)` time and memory.
    pub fn table(&self) -> ProfileTable {
        let n = self.doc_length;
        let raw: Vec<f64> = (0..=n as u64).map(|x| self.dist.pmf(x)).collect();
        let total: f64 = raw.iter().sum();
        let theta: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let mut prefix_mass = Vec::with_capacity(n + 2);
        let mut prefix_moment = Vec::with_capacity(n + 2);
        let (mut s0, mut s1) = (0.0, 0.0);
        prefix_mass.push(0.0);
        prefix_moment.push(0.0);
        for (j, t) in theta.iter().enumerate() {
            s0 += t;
            s1 += j as f64 * t;
            prefix_mass.push(s0);
            prefix_moment.push(s1);
        }
        ProfileTable {
            theta,
            prefix_mass,
            prefix_moment,
        }
    }

    fn mass_beyond_support(&self) -> f64 {
        if let RateDistribution::Degenerate { .. } = self.dist {
            let k = self.dist.mean().floor() as usize;
            return [k, k + 1]
                .into_iter()
                .filter(|&x| x > self.doc_length)
                .map(|x| self.dist.pmf(x as u64))
                .sum();
        }
        let start = self.doc_length as u64 + 1;
        if self.dist.ln_pmf(start) < -745.0 {
            return 0.0;
        }
        self.ln_tail_mass(start, None).exp().min(1.0)
    }

    /// Sum `ρ(j) = θ(j)/θ(start)` and `j·ρ(j)` for `j ≥ start` (up to `end`),
    /// stopping once the geometric bound on the remainder is negligible.
    fn relative_tail(&self, start: u64, end: Option<u64>) -> TailSums {
        self.scaled_tail(start, end).0
    }

    /// [`relative_tail`](Self::relative_tail) plus the number of times the
    /// sums were divided by `RESCALE_AT` on the way.
    fn scaled_tail(&self, start: u64, end: Option<u64>) -> (TailSums, i32) {
        let (mut rho, mut mass, mut moment) = (1.0f64, 0.0f64, 0.0f64);
        let mut rescaled = 0;
        let mut j = start;
        loop {
            mass += rho;
            moment += j as f64 * rho;
            if end == Some(j) {
                break;
            }
            let ratio = self.dist.successor_ratio(j);
            rho *= ratio;
            j += 1;
            if rho == 0.0 {
                break;
            }
            if rho > RESCALE_AT {
                rho /= RESCALE_AT;
                mass /= RESCALE_AT;
                moment /= RESCALE_AT;
                rescaled += 1;
            }
            if ratio < 1.0 {
                let bound = self.dist.ratio_bound_after(ratio);
                if bound < 1.0 {
                    // ρ(j) = rho now; remainder ≤ rho·Σ_i b^i and rho·Σ_i (j+i) b^i.
                    let geo = 1.0 / (1.0 - bound);
                    let rest_mass = rho * geo;
                    let rest_moment = rho * (j as f64 * geo + bound * geo * geo);
                    if rest_mass <= TAIL_EPS * mass && rest_moment <= TAIL_EPS * moment {
                        break;
                    }
                    if end.is_none() && j - start > MAX_UNBOUNDED_TERMS {
                        mass += rest_mass;
                        moment += rest_moment;
                        break;
                    }
                }
            }
        }
        (TailSums { mass, moment }, rescaled)
    }

    /// `ln Σ_{j ≥ start} pmf(j)`, up to `end` if given.
    fn ln_tail_mass(&self, start: u64, end: Option<u64>) -> f64 {
        let (tail, rescaled) = self.scaled_tail(start, end);
        self.dist.ln_pmf(start) + tail.mass.ln() + rescaled as f64 * RESCALE_AT.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratemodel::{NegBinParams, PoissonParams};

    fn poisson(lambda: f64) -> RateDistribution {
        RateDistribution::Poisson(PoissonParams::new(lambda).unwrap())
    }

    fn negbin(alpha: f64, beta: f64) -> RateDistribution {
        RateDistribution::NegBin(NegBinParams::new(alpha, beta).unwrap())
    }

    #[test]
    fn rejects_zero_length() {
        assert!(RateProfile::build(poisson(1.0), 1.0, 0).is_err());
    }

    #[test]
    fn light_poisson_tail_loses_nothing() {
        let p = RateProfile::build(poisson(0.5), 0.5, 1000).unwrap();
        assert!(p.truncation_loss() < 1e-100);
        assert!((p.mean() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn heavy_negbin_is_shifted_by_truncation() {
        // Direct high-precision summation over 0..=1000 gives a truncated
        // mean of 4.999999982228485826 and a lost mass of 1.7022762779e-11.
        let p = RateProfile::build(negbin(0.1, 50.0), 5.0, 1000).unwrap();
        assert!(p.mean() < 5.0);
        assert!((p.mean() - 4.999_999_982_228_486).abs() < 1e-11);
        assert!((p.truncation_loss() - 1.702_276_277_881_9e-11).abs() < 1e-15);
    }

    #[test]
    fn table_prefix_sums_close() {
        for dist in [poisson(3.0), negbin(0.7, 4.0), negbin(3.0, 0.2)] {
            let p = RateProfile::build(dist, dist.mean(), 200).unwrap();
            let t = p.table();
            let total: f64 = t.theta.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            let n = t.prefix_mass.len();
            assert_eq!(n, 202);
            assert!((t.prefix_mass[n - 1] - 1.0).abs() < 1e-9);
            assert!((t.prefix_moment[n - 1] - p.mean()).abs() < 1e-9 * p.mean().max(1.0));
            assert!(t.prefix_mass.windows(2).all(|w| w[1] >= w[0]));
            assert!(t.prefix_moment.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn tail_sums_agree_with_prefix_route() {
        let p = RateProfile::build(negbin(0.4, 6.0), 2.4, 300).unwrap();
        let t = p.table();
        let m = t.prefix_moment[301];
        for n in [1usize, 2, 5, 10, 20] {
            let via_prefix = (m - t.prefix_moment[n]) / (1.0 - t.prefix_mass[n]);
            let via_tail = p.conditional_mean(n).unwrap();
            assert!(
                (via_prefix - via_tail).abs() < 1e-9 * via_tail,
                "n={n}: {via_prefix} vs {via_tail}"
            );
        }
    }

    #[test]
    fn huge_rate_does_not_overflow() {
        let p = RateProfile::build(poisson(3000.0), 3000.0, 50_000).unwrap();
        assert!((p.mean() - 3000.0).abs() < 1e-8);
        let far = p.conditional_mean(49_000).unwrap();
        assert!((49_000.0..49_001.0).contains(&far));
    }

    #[test]
    fn degenerate_tails() {
        let p = RateProfile::build(RateDistribution::Degenerate { mean: 0.0 }, 0.0, 100).unwrap();
        assert_eq!(p.mean(), 0.0);
        assert_eq!(p.conditional_mean(1), None);
        let q = RateProfile::build(RateDistribution::Degenerate { mean: 1.5 }, 1.5, 100).unwrap();
        assert_eq!(q.mean(), 1.5);
        assert_eq!(q.conditional_mean(2), Some(2.0));
    }
}
