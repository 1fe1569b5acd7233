use std::collections::HashMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::{discounted_frequency, Discounts, LanguageModel, LmError, Smoothing};
use crate::corpus::{Bigram, WordId};
use crate::ratemodel::RateProfile;
use crate::relfreq::{relative_frequency, CompensatedSum, FrequencyMemo, RelFreqError};

/// Smallest probability mass left for unseen events.
pub const EPS_MASS: f64 = 1e-6;

/// Division of a context's probability mass between seen entries (scaled by
/// `scale`) and the lower-order distribution (`reserved`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSplit {
    /// Discounted mass before clamping.
    pub raw: f64,
    pub scale: f64,
    pub reserved: f64,
    pub clamped: bool,
}

impl MassSplit {
    /// Keep `raw` as is when it leaves at least [`EPS_MASS`] unallocated;
    /// otherwise scale the seen entries down to `1 − EPS_MASS`.
    pub fn new(raw: f64) -> Self {
        if raw <= 1.0 - EPS_MASS {
            Self {
                raw,
                scale: 1.0,
                reserved: 1.0 - raw,
                clamped: false,
            }
        } else {
            Self {
                raw,
                scale: (1.0 - EPS_MASS) / raw,
                reserved: EPS_MASS,
                clamped: true,
            }
        }
    }

    /// Effective seen mass after clamping.
    pub fn alpha(&self) -> f64 {
        1.0 - self.reserved
    }
}

/// How often each safeguard fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampCounts {
    pub unigram_mass: u64,
    pub context_mass: u64,
    pub backoff_denominator: u64,
}

impl AddAssign for ClampCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.unigram_mass += rhs.unigram_mass;
        self.context_mass += rhs.context_mass;
        self.backoff_denominator += rhs.backoff_denominator;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub probability: f64,
    pub clamps: ClampCounts,
}

/// Relative frequencies at the current prior counts.
pub trait PriorView {
    /// `f̂(w ≥ n_w)`
    fn unigram_discounted(&self, w: WordId) -> f64;
    /// `(Σ_w f(w ≥ n_w), Σ_w f̂(w ≥ n_w))` over the whole vocabulary.
    fn unigram_mass(&self) -> (f64, f64);
    /// Joint relative frequency `f(vw ≥ n_{w|v})` of a bigram entry.
    fn bigram_frequency(&self, entry: usize) -> f64;
    /// `Σ_{w ∈ E(v)} f(vw ≥ n_{w|v})`
    fn context_frequency(&self, v: WordId) -> f64;
}

/// A [`LanguageModel`] with profiles materialized for one window length.
#[derive(Debug, Clone)]
pub struct AdaptedModel<'m> {
    model: &'m LanguageModel,
    doc_length: usize,
    discounts: Discounts,
    unigram_profiles: Vec<RateProfile>,
    bigram_profiles: Vec<RateProfile>,
    /// `C(v·)`
    context_trials: Vec<f64>,
}

impl<'m> AdaptedModel<'m> {
    pub fn new(model: &'m LanguageModel, doc_length: usize, discounts: Discounts) -> Result<Self, LmError> {
        if doc_length == 0 {
            return Err(LmError::Invalid("window length must be positive".into()));
        }
        for d in [&discounts.unigram, &discounts.bigram] {
            d.validate().map_err(LmError::Invalid)?;
        }
        let n0 = model.doc_length();
        let policy = model.policy();
        let build = |stats: &super::EventStats| -> Result<RateProfile, LmError> {
            let (dist, target) = stats.distribution_at(n0, doc_length, policy)?;
            Ok(RateProfile::build(dist, target, doc_length)?)
        };
        let unigram_profiles = model
            .unigrams()
            .iter()
            .map(build)
            .collect::<Result<Vec<_>, _>>()?;
        let bigram_profiles = model
            .bigrams()
            .iter()
            .map(|e| build(&e.stats))
            .collect::<Result<Vec<_>, _>>()?;
        let context_trials = model
            .vocabulary()
            .ids()
            .map(|v| model.context_count(v) as f64)
            .collect();
        Ok(Self {
            model,
            doc_length,
            discounts,
            unigram_profiles,
            bigram_profiles,
            context_trials,
        })
    }

    pub fn model(&self) -> &'m LanguageModel {
        self.model
    }

    pub fn doc_length(&self) -> usize {
        self.doc_length
    }

    pub fn discounts(&self) -> &Discounts {
        &self.discounts
    }

    pub fn vocab_size(&self) -> usize {
        self.unigram_profiles.len()
    }

    pub fn unigram_profile(&self, w: WordId) -> &RateProfile {
        &self.unigram_profiles[w.index()]
    }

    pub fn bigram_profile(&self, entry: usize) -> &RateProfile {
        &self.bigram_profiles[entry]
    }

    /// `f(w ≥ n)`
    pub fn unigram_frequency(&self, w: WordId, n: usize) -> Result<f64, RelFreqError> {
        relative_frequency(&self.unigram_profiles[w.index()], n)
    }

    pub fn discount_unigram(&self, w: WordId, f: f64) -> f64 {
        discounted_frequency(
            f,
            self.model.unigram(w).raw_count,
            &self.discounts.unigram,
            self.model.total_tokens() as f64,
        )
    }

    /// Joint `f(vw ≥ n)` of a bigram entry.
    pub fn bigram_frequency(&self, entry: usize, n: usize) -> Result<f64, RelFreqError> {
        relative_frequency(&self.bigram_profiles[entry], n)
    }

    /// `f(w | v ≥ n_{w|v})`: the entry's joint frequency normalized over the
    /// entries of its context.
    pub fn conditional_frequency<P: PriorView + ?Sized>(&self, priors: &P, entry: usize) -> f64 {
        let v = self.model.bigrams()[entry].context;
        priors.bigram_frequency(entry) / priors.context_frequency(v)
    }

    /// `f̂(w | v ≥ n_{w|v})`
    pub fn bigram_discounted<P: PriorView + ?Sized>(&self, priors: &P, entry: usize) -> f64 {
        self.discount_bigram(entry, self.conditional_frequency(priors, entry))
    }

    pub fn discount_bigram(&self, entry: usize, f: f64) -> f64 {
        let e = &self.model.bigrams()[entry];
        discounted_frequency(
            f,
            e.stats.raw_count,
            &self.discounts.bigram,
            self.context_trials[e.context.index()],
        )
    }

    /// Split of unigram mass between discounted frequencies and the uniform
    /// floor, together with `Z = Σ_w f(w ≥ n_w)`.
    pub fn unigram_split<P: PriorView + ?Sized>(&self, priors: &P) -> (MassSplit, f64) {
        let (z, d) = priors.unigram_mass();
        (MassSplit::new(d / z), z)
    }

    /// `p_uni(w ≥ n_w)`
    pub fn unigram_probability<P: PriorView + ?Sized>(&self, priors: &P, w: WordId) -> Scored {
        let (split, z) = self.unigram_split(priors);
        Scored {
            probability: self.unigram_with(priors, &split, z, w),
            clamps: ClampCounts {
                unigram_mass: split.clamped as u64,
                ..Default::default()
            },
        }
    }

    fn unigram_with<P: PriorView + ?Sized>(&self, priors: &P, split: &MassSplit, z: f64, w: WordId) -> f64 {
        split.scale * priors.unigram_discounted(w) / z + split.reserved / self.vocab_size() as f64
    }

    /// `α(v) = Σ_{w ∈ E(v)} f̂(w | v ≥ n_{w|v})` with its clamp, or `None`
    /// for a context without entries.
    pub fn nonzero_mass<P: PriorView + ?Sized>(&self, priors: &P, v: WordId) -> Option<MassSplit> {
        let range = self.model.context_entries(v);
        if range.is_empty() {
            return None;
        }
        let total = priors.context_frequency(v);
        let alpha: CompensatedSum = range
            .map(|e| self.discount_bigram(e, priors.bigram_frequency(e) / total))
            .collect();
        Some(MassSplit::new(alpha.value()))
    }

    pub fn bigram_probability<P: PriorView + ?Sized>(
        &self,
        priors: &P,
        v: WordId,
        w: WordId,
        smoothing: Smoothing,
    ) -> Scored {
        match smoothing {
            Smoothing::Interpolated => self.interpolated_bigram(priors, v, w),
            Smoothing::BackOff => self.backoff_bigram(priors, v, w),
        }
    }

    /// `scale · f̂(w|v) + (1 − α(v)) · p_uni(w)`
    pub fn interpolated_bigram<P: PriorView + ?Sized>(&self, priors: &P, v: WordId, w: WordId) -> Scored {
        let (uni_split, z) = self.unigram_split(priors);
        let p_uni = self.unigram_with(priors, &uni_split, z, w);
        let mut clamps = ClampCounts {
            unigram_mass: uni_split.clamped as u64,
            ..Default::default()
        };
        let Some(split) = self.nonzero_mass(priors, v) else {
            return Scored {
                probability: p_uni,
                clamps,
            };
        };
        clamps.context_mass = split.clamped as u64;
        let seen = match self.model.entry(v, w) {
            Some(e) => split.scale * self.bigram_discounted(priors, e),
            None => 0.0,
        };
        Scored {
            probability: seen + split.reserved * p_uni,
            clamps,
        }
    }

    /// Seen entries keep their (scaled) discounted frequency; unseen words, and
    /// entries discounted to zero, get `β(v) · p_uni(w)` with
    /// `β(v) = (1 − α(v)) / (1 − Σ_{w kept} p_uni(w))`.
    pub fn backoff_bigram<P: PriorView + ?Sized>(&self, priors: &P, v: WordId, w: WordId) -> Scored {
        let (uni_split, z) = self.unigram_split(priors);
        let mut clamps = ClampCounts {
            unigram_mass: uni_split.clamped as u64,
            ..Default::default()
        };
        let Some(split) = self.nonzero_mass(priors, v) else {
            return Scored {
                probability: self.unigram_with(priors, &uni_split, z, w),
                clamps,
            };
        };
        clamps.context_mass = split.clamped as u64;
        let kept = self.kept_entries(priors, v);
        if kept == self.vocab_size() && split.raw > 0.0 {
            // Every word keeps a seen estimate after `v`: there is nothing to
            // back off to, so the seen entries share the whole mass.
            let e = self.model.entry(v, w).expect("complete context");
            return Scored {
                probability: self.bigram_discounted(priors, e) / split.raw,
                clamps,
            };
        }
        if let Some(e) = self.model.entry(v, w) {
            let discounted = self.bigram_discounted(priors, e);
            if discounted > 0.0 {
                return Scored {
                    probability: split.scale * discounted,
                    clamps,
                };
            }
        }
        let (beta, denominator_clamped) = self.backoff_factor_with(priors, v, &split, &uni_split, z);
        clamps.backoff_denominator = denominator_clamped as u64;
        Scored {
            probability: beta * self.unigram_with(priors, &uni_split, z, w),
            clamps,
        }
    }

    /// Entries of `v` whose discounted frequency is still positive. The
    /// others were discounted away at the current priors and back off like
    /// unseen words.
    fn kept_entries<P: PriorView + ?Sized>(&self, priors: &P, v: WordId) -> usize {
        self.model.context_entries(v).filter(|&e| self.bigram_discounted(priors, e) > 0.0).count()
    }

    /// `β(v)` and whether its denominator had to be clamped.
    pub fn backoff_factor<P: PriorView + ?Sized>(&self, priors: &P, v: WordId) -> (f64, bool) {
        let (uni_split, z) = self.unigram_split(priors);
        match self.nonzero_mass(priors, v) {
            None => (1.0, false),
            Some(split) => self.backoff_factor_with(priors, v, &split, &uni_split, z),
        }
    }

    fn backoff_factor_with<P: PriorView + ?Sized>(
        &self,
        priors: &P,
        v: WordId,
        split: &MassSplit,
        uni_split: &MassSplit,
        z: f64,
    ) -> (f64, bool) {
        let covered: CompensatedSum = self
            .model
            .context_entries(v)
            .filter(|&e| self.bigram_discounted(priors, e) > 0.0)
            .map(|e| self.unigram_with(priors, uni_split, z, self.model.bigrams()[e].word))
            .collect();
        let denominator = 1.0 - covered.value();
        if denominator <= EPS_MASS {
            (split.reserved / EPS_MASS, true)
        } else {
            (split.reserved / denominator, false)
        }
    }
}

/// Prior counts of a window, recounted from scratch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorCounts {
    /// `n_w` by word id.
    pub unigram: Vec<usize>,
    /// `n_{w|v}` for pairs present in the window.
    pub bigram: HashMap<Bigram, usize>,
}

impl PriorCounts {
    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            unigram: vec![0; vocab_size],
            bigram: HashMap::new(),
        }
    }
}

/// Every frequency evaluated once for a fixed set of prior counts.
#[derive(Debug, Clone, PartialEq)]
pub struct NaivePriors {
    unigram: Vec<f64>,
    mass: (f64, f64),
    bigram: Vec<f64>,
    context: Vec<f64>,
}

/// The all-zero prior state, which turns an [`AdaptedModel`] into a
/// conventional constant-rate discounted model.
pub type ZeroPriors = NaivePriors;

impl NaivePriors {
    pub fn zero(model: &AdaptedModel<'_>) -> Result<Self, LmError> {
        Self::from_counts(model, &PriorCounts::zeros(model.vocab_size()))
    }

    pub fn from_counts(model: &AdaptedModel<'_>, counts: &PriorCounts) -> Result<Self, LmError> {
        Self::from_counts_with(
            model,
            counts,
            |w, n| model.unigram_frequency(w, n),
            |e, n| model.bigram_frequency(e, n),
        )
    }

    /// As [`from_counts`](Self::from_counts), reusing already computed
    /// relative frequencies.
    pub fn from_counts_memo(
        model: &AdaptedModel<'_>,
        counts: &PriorCounts,
        unigram: &mut FrequencyMemo,
        bigram: &mut FrequencyMemo,
    ) -> Result<Self, LmError> {
        Self::from_counts_with(
            model,
            counts,
            |w, n| unigram.get(w.index(), model.unigram_profile(w), n),
            |e, n| bigram.get(e, model.bigram_profile(e), n),
        )
    }

    fn from_counts_with(
        model: &AdaptedModel<'_>,
        counts: &PriorCounts,
        mut unigram_frequency: impl FnMut(WordId, usize) -> Result<f64, RelFreqError>,
        mut bigram_frequency: impl FnMut(usize, usize) -> Result<f64, RelFreqError>,
    ) -> Result<Self, LmError> {
        let lm = model.model();
        let mut z = CompensatedSum::default();
        let mut d = CompensatedSum::default();
        let mut unigram = Vec::with_capacity(model.vocab_size());
        for w in lm.vocabulary().ids() {
            let f = unigram_frequency(w, counts.unigram[w.index()])?;
            let fd = model.discount_unigram(w, f);
            z.add(f);
            d.add(fd);
            unigram.push(fd);
        }
        let mut bigram = Vec::with_capacity(lm.bigrams().len());
        for (i, e) in lm.bigrams().iter().enumerate() {
            let n = counts.bigram.get(&(e.context, e.word)).copied().unwrap_or(0);
            bigram.push(bigram_frequency(i, n)?);
        }
        let context = lm
            .vocabulary()
            .ids()
            .map(|v| {
                bigram[lm.context_entries(v)]
                    .iter()
                    .copied()
                    .collect::<CompensatedSum>()
                    .value()
            })
            .collect();
        Ok(Self {
            unigram,
            mass: (z.value(), d.value()),
            bigram,
            context,
        })
    }

    pub fn unigram_values(&self) -> &[f64] {
        &self.unigram
    }

    pub fn bigram_values(&self) -> &[f64] {
        &self.bigram
    }
}

impl PriorView for NaivePriors {
    fn unigram_discounted(&self, w: WordId) -> f64 {
        self.unigram[w.index()]
    }

    fn unigram_mass(&self) -> (f64, f64) {
        self.mass
    }

    fn bigram_frequency(&self, entry: usize) -> f64 {
        self.bigram[entry]
    }

    fn context_frequency(&self, v: WordId) -> f64 {
        self.context[v.index()]
    }
}
