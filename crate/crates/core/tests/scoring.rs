use rand::Rng;

use coboost::backend::CachedModel;
use coboost::decode::{generate, GenConfig, Strategy};
use coboost::dist::{log_linear_mix, LogProbVec};
use coboost::{boosted_next_dist, BoostSpec, LanguageModel, TokenId, ToyLm};

#[test]
fn chain_rule_on_random_cases() {
    let mut rng = coboost::rng::stream(3, "chain-rule", 0);
    let models: Vec<ToyLm> = (0..5).map(|s| ToyLm::random(9, 10, 2.0, s)).collect();
    for case in 0..1000 {
        let m = &models[case % models.len()];
        let ctx_len = rng.random_range(1..=6);
        let cont_len = rng.random_range(1..=5);
        let ctx: Vec<TokenId> = (0..ctx_len).map(|_| rng.random_range(0..9)).collect();
        let cont: Vec<TokenId> = (0..cont_len).map(|_| rng.random_range(0..9)).collect();
        let total = m.score_continuation(&ctx, &cont).unwrap();
        let mut manual = 0.0;
        let mut c = ctx.clone();
        for &t in &cont {
            manual += m.next_logprobs(&c).unwrap().get(t);
            c.push(t);
        }
        assert!((total - manual).abs() <= 1e-9, "case {case}");
    }
}

#[test]
fn cache_is_bit_identical() {
    let m = ToyLm::random(8, 6, 1.5, 4);
    let cached = CachedModel::with_capacity(m.clone(), 64);
    let spec = BoostSpec::contrast_k(2, -0.7).unwrap();
    let mut rng = coboost::rng::stream(5, "cache", 0);
    for _ in 0..300 {
        let len = rng.random_range(1..=6);
        let ctx: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..8)).collect();
        assert_eq!(m.next_logprobs(&ctx).unwrap(), cached.next_logprobs(&ctx).unwrap());
        assert_eq!(boosted_next_dist(&m, &ctx, &spec).unwrap(), boosted_next_dist(&cached, &ctx, &spec).unwrap());
    }
    let cfg = GenConfig {
        max_new_tokens: 30,
        strategy: Strategy::Sample { temperature: 1.0, top_p: Some(0.9), top_k: None },
        seed: 9,
        boost: Some(spec),
        ..Default::default()
    };
    assert_eq!(generate(&m, &[1, 2], &cfg).unwrap(), generate(&cached, &[1, 2], &cfg).unwrap());
    assert!(cached.inner_calls() > 0);
}

#[test]
fn hand_mix_against_high_precision_value() {
    let p = LogProbVec::from_normalized(vec![0.8f64.ln(), 0.2f64.ln()]);
    let q = LogProbVec::from_normalized(vec![0.5f64.ln(), 0.5f64.ln()]);
    let mix = log_linear_mix(&[&p, &q], &[1.5, -0.5]).unwrap().to_probs();
    // 0.8^1.5 / (0.8^1.5 + 0.2^1.5), evaluated at 50 digits
    assert!((mix.values()[0] - 0.88888888888888888888888888888888888888888888888889).abs() < 1e-12);
    assert!((mix.values()[1] - 0.11111111111111111111111111111111111111111111111111).abs() < 1e-12);
}
