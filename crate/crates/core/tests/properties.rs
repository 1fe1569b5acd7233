mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use common::toy_setup;
use varrate::corpus::{RawDocument, WordId};
use varrate::eval::{evaluate, EvalOptions, Mode, Order, SlidingWindow, TestStream};
use varrate::lm::{
    discounted_frequency, DiscountConfig, DiscountScheme, LanguageModel, NaivePriors, Smoothing,
};
use varrate::ratemodel::{
    fit_rate, FitPolicy, NegBinParams, PoissonParams, RateDistribution, RateProfile, SampleMoments,
};
use varrate::relfreq::relative_frequency;

fn model() -> &'static (LanguageModel, Vec<RawDocument>) {
    static MODEL: OnceLock<(LanguageModel, Vec<RawDocument>)> = OnceLock::new();
    MODEL.get_or_init(|| toy_setup(7, 30, 40, 3, FitPolicy::Auto, DiscountScheme::Absolute))
}

fn distribution() -> impl Strategy<Value = RateDistribution> {
    prop_oneof![
        (1e-3f64..200.0).prop_map(|l| RateDistribution::Poisson(PoissonParams::new(l).unwrap())),
        (1e-2f64..50.0, 1e-2f64..100.0)
            .prop_map(|(a, b)| RateDistribution::NegBin(NegBinParams::new(a, b).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_counts_match_recount(
        capacity in 0usize..40,
        stream in prop::collection::vec((0u32..12, 0usize..3), 0..200),
    ) {
        let mut window = SlidingWindow::new(capacity, 12);
        let mut doc = 0;
        for (w, step) in stream {
            // Document indices only move forward.
            doc += usize::from(step == 0);
            window.advance(WordId(w), doc);
            prop_assert_eq!(window.counts(), window.recount());
            prop_assert!(window.len() <= capacity);
        }
    }

    #[test]
    fn relative_frequency_bounded_and_monotone(dist in distribution(), n in 1usize..400) {
        let profile = RateProfile::build(dist, dist.mean(), n).unwrap();
        let floor = profile.mean() / n as f64;
        prop_assert_eq!(relative_frequency(&profile, 0).unwrap(), floor);
        prop_assert_eq!(relative_frequency(&profile, n).unwrap(), 1.0);
        let mut prev = floor;
        for k in 1..=n {
            let f = relative_frequency(&profile, k).unwrap();
            prop_assert!(f >= prev, "f({k}) = {f} < {prev}");
            prop_assert!(f >= floor && f <= 1.0);
            prev = f;
        }
    }

    #[test]
    fn discounting_never_goes_negative(
        f in 0.0f64..=1.0,
        raw in 0u64..20,
        c in 0.0f64..1.0,
        trials in 1.0f64..1e6,
        ratios in prop::collection::vec(0.0f64..=1.0, 1..6),
    ) {
        let cutoff = ratios.len() as u64;
        for cfg in [DiscountConfig::Absolute { c }, DiscountConfig::GoodTuring { ratios, cutoff }] {
            let d = discounted_frequency(f, raw, &cfg, trials);
            prop_assert!((0.0..=f).contains(&d));
        }
    }

    #[test]
    fn identity_good_turing_is_a_no_op(f in 0.0f64..=1.0, raw in 0u64..100, k in 1usize..8) {
        let cfg = DiscountConfig::GoodTuring { ratios: vec![1.0; k], cutoff: k as u64 };
        prop_assert_eq!(discounted_frequency(f, raw, &cfg, 1000.0), f);
    }

    #[test]
    fn fitted_mean_is_the_sample_mean(mean in 1e-4f64..500.0, dispersion in 0.0f64..20.0) {
        let moments = SampleMoments { mean, variance: Some(mean * (0.5 + dispersion)) };
        let dist = fit_rate(&moments, FitPolicy::Auto).unwrap();
        prop_assert!((dist.mean() - mean).abs() <= 1e-12 * mean);
        let poisson = fit_rate(&moments, FitPolicy::Poisson).unwrap();
        prop_assert!((poisson.mean() - mean).abs() <= 1e-12 * mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distributions_normalize_on_random_windows(
        window in 1usize..300,
        start in 0usize..400,
        steps in 0usize..300,
        backoff in any::<bool>(),
    ) {
        let (lm, test) = model();
        let stream = TestStream::encode(lm.vocabulary(), test).unwrap();
        let tokens: Vec<WordId> = stream.documents.iter().flat_map(|d| d.tokens.iter().copied()).collect();
        let adapted = lm.adapt(window, lm.discounts().clone()).unwrap();
        let mut w = SlidingWindow::new(window, lm.vocabulary().len());
        let start = start % tokens.len();
        for &t in tokens.iter().skip(start).take(steps) {
            w.advance(t, 0);
        }
        let priors = NaivePriors::from_counts(&adapted, &w.recount()).unwrap();
        let smoothing = if backoff { Smoothing::BackOff } else { Smoothing::Interpolated };
        let ids: Vec<WordId> = lm.vocabulary().ids().collect();
        let uni: f64 = ids.iter().map(|&x| adapted.unigram_probability(&priors, x).probability).sum();
        prop_assert!((uni - 1.0).abs() < 1e-12);
        for &v in &ids {
            let total: f64 = ids
                .iter()
                .map(|&x| adapted.bigram_probability(&priors, v, x, smoothing).probability)
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-4, "context {v:?} sums to {total}");
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_proper(
        window in 0usize..400,
        bigram in any::<bool>(),
        backoff in any::<bool>(),
        gt in any::<bool>(),
        reset_on_doc in any::<bool>(),
    ) {
        let (lm, test) = model();
        let stream = TestStream::encode(lm.vocabulary(), test).unwrap();
        let options = EvalOptions {
            order: if bigram { Order::Bigram } else { Order::Unigram },
            mode: Mode::Variable,
            window,
            smoothing: if backoff { Smoothing::BackOff } else { Smoothing::Interpolated },
            discount: if gt { DiscountScheme::GoodTuring } else { DiscountScheme::Absolute },
            reset_on_doc,
        };
        let a = evaluate(lm, &stream, &options).unwrap();
        let b = evaluate(lm, &stream, &options).unwrap();
        prop_assert_eq!(&a.token_log_probs, &b.token_log_probs);
        for &lp in &a.token_log_probs {
            prop_assert!(lp.is_finite() && lp <= 1e-12);
        }
        prop_assert!((a.perplexity - a.recomputed_perplexity()).abs() <= 1e-9 * a.perplexity);
    }
}

#[test]
fn save_load_round_trip_is_exact() {
    let (lm, _) = model();
    let mut buf = Vec::new();
    lm.save(&mut buf).unwrap();
    let loaded = LanguageModel::load(buf.as_slice()).unwrap();
    assert_eq!(&loaded, lm);
    let mut again = Vec::new();
    loaded.save(&mut again).unwrap();
    assert_eq!(buf, again);
}
