//! Local behaviour of the boosted family `g_t ∝ f_M^{1+t} f_k^{-t}` around
//! `t = 0`, where the derivative of the held-out NLL is
//! `(L_M - L_k) + E[KL(f_M ‖ f_k)]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::truncated_context;
use crate::dist::{kl_divergence_log, log_linear_mix, log_softmax, LogProbVec, TokenId};
use crate::error::{Error, Result};
use crate::metrics::report::render_table;
use crate::toy_lm::ToyLm;

pub const PROBE_TS: [f64; 2] = [0.05, 0.1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostDerivativeReport {
    pub k: usize,
    pub max_context: usize,
    pub positions: usize,
    pub l_m: f64,
    pub l_k: f64,
    pub mean_kl: f64,
    pub analytic_derivative: f64,
    pub fd_derivative: f64,
    pub h: f64,
    pub improvement_predicted: bool,
    pub nll_at_zero: f64,
    /// `(t, NLL(t))` at the probe points.
    pub probes: Vec<(f64, f64)>,
    /// Whether any probe beat `NLL(0)`.
    pub probe_improved: bool,
}

impl BoostDerivativeReport {
    pub fn to_table(&self) -> String {
        let cols: Vec<String> =
            ["L_M", "L_k", "KL", "analytic", "fd", "improves"].iter().map(|s| s.to_string()).collect();
        let row = vec![
            format!("{:.6}", self.l_m),
            format!("{:.6}", self.l_k),
            format!("{:.6}", self.mean_kl),
            format!("{:.6}", self.analytic_derivative),
            format!("{:.6}", self.fd_derivative),
            self.improvement_predicted.to_string(),
        ];
        render_table(&cols, &[(format!("k={}", self.k), row)])
    }
}

/// Full-window and `k`-truncated distributions at every held-out position
/// with at least `M` tokens of history.
struct Positions {
    full: Vec<LogProbVec>,
    short: Vec<LogProbVec>,
    targets: Vec<TokenId>,
}

fn collect_positions(model: &ToyLm, heldout: &[TokenId], k: usize) -> Result<Positions> {
    let m = model.max_context();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k must be in 1..={m}, got {k}")));
    }
    if heldout.len() <= m {
        return Err(Error::CorpusTooShort { len: heldout.len(), needed: m + 1 });
    }
    if let Some(&bad) = heldout.iter().find(|&&t| t as usize >= model.vocab_size()) {
        return Err(Error::TokenOutOfRange { token: bad, vocab_size: model.vocab_size() });
    }
    let pairs = (m..heldout.len())
        .into_par_iter()
        .map(|t| {
            let ctx = &heldout[t - m..t];
            Ok((log_softmax(&model.logits(ctx))?, log_softmax(&model.logits(truncated_context(ctx, k)))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (full, short) = pairs.into_iter().unzip();
    Ok(Positions { full, short, targets: heldout[m..].to_vec() })
}

fn mean_nll_at(p: &Positions, t: f64) -> Result<f64> {
    let nll = p
        .full
        .par_iter()
        .zip(&p.short)
        .zip(&p.targets)
        .map(|((f, s), &y)| {
            if t == 0.0 {
                return Ok(-f.get(y));
            }
            Ok(-log_linear_mix(&[f, s], &[1.0 + t, -t])?.get(y))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

/// Held-out mean NLL of the renormalized `f_M^{1+t} f_k^{-t}`.
pub fn nll_at(model: &ToyLm, heldout: &[TokenId], k: usize, t: f64) -> Result<f64> {
    mean_nll_at(&collect_positions(model, heldout, k)?, t)
}

pub fn boost_derivative_check(model: &ToyLm, heldout: &[TokenId], k: usize, h: f64) -> Result<BoostDerivativeReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let p = collect_positions(model, heldout, k)?;
    let n = p.targets.len() as f64;
    let l_m = -p.full.iter().zip(&p.targets).map(|(f, &y)| f.get(y)).sum::<f64>() / n;
    let l_k = -p.short.iter().zip(&p.targets).map(|(s, &y)| s.get(y)).sum::<f64>() / n;
    let mean_kl = p.full.iter().zip(&p.short).map(|(f, s)| kl_divergence_log(f, s)).sum::<f64>() / n;
    let analytic = (l_m - l_k) + mean_kl;
    let fd = (mean_nll_at(&p, h)? - mean_nll_at(&p, -h)?) / (2.0 * h);
    let nll0 = mean_nll_at(&p, 0.0)?;
    let probes = PROBE_TS.iter().map(|&t| Ok((t, mean_nll_at(&p, t)?))).collect::<Result<Vec<_>>>()?;
    let probe_improved = probes.iter().any(|&(_, v)| v < nll0);
    let improvement_predicted = analytic < 0.0;
    if improvement_predicted && !probe_improved {
        log::warn!("first-order improvement predicted at k={k} but no probe t in {PROBE_TS:?} lowered the NLL");
    }
    Ok(BoostDerivativeReport {
        k,
        max_context: model.max_context(),
        positions: p.targets.len(),
        l_m,
        l_k,
        mean_kl,
        analytic_derivative: analytic,
        fd_derivative: fd,
        h,
        improvement_predicted,
        nll_at_zero: nll0,
        probes,
        probe_improved,
    })
}

/// Per-length losses `L_1..L_M` and `KL(f_M ‖ f_k)` for every `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoProfile {
    pub positions: usize,
    pub per_length_nll: Vec<f64>,
    pub kl_from_full: Vec<f64>,
}

impl ParetoProfile {
    pub fn to_table(&self) -> String {
        let cols: Vec<String> = (1..=self.per_length_nll.len()).map(|k| k.to_string()).collect();
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>();
        render_table(&cols, &[("L_k".to_string(), fmt(&self.per_length_nll)), ("KL".to_string(), fmt(&self.kl_from_full))])
    }
}

pub fn pareto_profile(model: &ToyLm, heldout: &[TokenId]) -> Result<ParetoProfile> {
    let m = model.max_context();
    let mut per_length_nll = Vec::with_capacity(m);
    let mut kl_from_full = Vec::with_capacity(m);
    let mut positions = 0;
    for k in 1..=m {
        let p = collect_positions(model, heldout, k)?;
        let n = p.targets.len() as f64;
        positions = p.targets.len();
        per_length_nll.push(-p.short.iter().zip(&p.targets).map(|(s, &y)| s.get(y)).sum::<f64>() / n);
        kl_from_full.push(p.full.iter().zip(&p.short).map(|(f, s)| kl_divergence_log(f, s)).sum::<f64>() / n);
    }
    Ok(ParetoProfile { positions, per_length_nll, kl_from_full })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_lm::{loss_profile, train_uniform_scalarization, TrainConfig};
    use rand::Rng;

    fn random_stream(v: u32, n: usize, seed: u64) -> Vec<TokenId> {
        let mut r = crate::rng::stream(seed, "analysis-test", 0);
        (0..n).map(|_| r.random_range(0..v)).collect()
    }

    #[test]
    fn k_equal_m_is_exactly_zero() {
        let m = ToyLm::random(5, 4, 1.0, 1);
        let r = boost_derivative_check(&m, &random_stream(5, 300, 2), 4, 1e-3).unwrap();
        assert_eq!(r.analytic_derivative, 0.0);
        assert_eq!(r.mean_kl, 0.0);
        assert!(r.fd_derivative.abs() <= 1e-6);
        assert!(!r.improvement_predicted);
    }

    #[test]
    fn uniform_model_has_zero_derivative() {
        let m = ToyLm::zeros(6, 5);
        let r = boost_derivative_check(&m, &random_stream(6, 200, 3), 2, 1e-3).unwrap();
        assert_eq!(r.analytic_derivative, 0.0);
        assert!(r.fd_derivative.abs() <= 1e-9);
        let p = pareto_profile(&m, &random_stream(6, 200, 3)).unwrap();
        assert!(p.per_length_nll.iter().all(|&l| (l - 6f64.ln()).abs() < 1e-12));
        assert!(p.kl_from_full.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn analytic_matches_finite_difference_on_random_models() {
        for seed in 0..5 {
            let m = ToyLm::random(6, 5, 1.5, seed);
            let held = random_stream(6, 400, seed + 10);
            for k in [1, 3] {
                let r = boost_derivative_check(&m, &held, k, 1e-3).unwrap();
                assert!((r.analytic_derivative - r.fd_derivative).abs() <= 1e-4, "{r:?}");
                assert_eq!(r.improvement_predicted, r.analytic_derivative < 0.0);
            }
        }
    }

    #[test]
    fn losses_agree_with_loss_profile() {
        let corpus: Vec<TokenId> = (0..2000).map(|i| ((i * 7 + i / 3) % 4) as TokenId).collect();
        let cfg = TrainConfig { max_context: 4, steps: 200, ..Default::default() };
        let model = train_uniform_scalarization(&corpus, 4, &cfg).unwrap().model;
        let held = &corpus[..500];
        let lp = loss_profile(&model, held, 4).unwrap();
        let pp = pareto_profile(&model, held).unwrap();
        for k in 1..=4 {
            assert!((lp.get(k) - pp.per_length_nll[k - 1]).abs() < 1e-12);
        }
        assert_eq!(pp.kl_from_full[3], 0.0);
        assert_eq!(pp.to_table().lines().count(), 3);
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = ToyLm::zeros(3, 3);
        let held = random_stream(3, 50, 1);
        assert!(boost_derivative_check(&m, &held, 1, 0.0).is_err());
        assert!(boost_derivative_check(&m, &held, 4, 1e-3).is_err());
        assert!(boost_derivative_check(&m, &held[..3], 1, 1e-3).is_err());
    }
}
