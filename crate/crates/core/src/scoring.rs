//! Sequence scoring from token log-probabilities and the λ-softmax over a
//! candidate set.
//!
//! A candidate's score combines the mean and the spread of its token
//! log-probabilities, each min-max normalized across the current candidate
//! set:
//!
//! ```text
//! s(a) = alpha * minmax(mean(a)) - (1 - alpha) * minmax(var(a))
//! minmax(x) = (x - x_min) / (x_max - x_min + epsilon)
//! ```
//!
//! The formula bounds each score to `[-(1 - alpha), alpha]`; scores are not
//! re-normalized into `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Default normalization guard.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Default scoring weight.
pub const DEFAULT_ALPHA: f64 = 0.8;

/// One proposed action with the log-probabilities of its tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAction {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

impl CandidateAction {
    /// Builds a candidate, rejecting empty, non-finite, or positive log-probabilities.
    pub fn new(text: impl Into<String>, token_logprobs: Vec<f64>) -> Result<Self> {
        let cand = Self {
            text: text.into(),
            token_logprobs,
        };
        cand.validate()?;
        Ok(cand)
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_logprobs.is_empty() {
            return Err(contract(format!(
                "candidate {:?} has no token log-probabilities",
                self.text
            )));
        }
        if let Some(bad) = self
            .token_logprobs
            .iter()
            .find(|lp| !lp.is_finite() || **lp > 0.0)
        {
            return Err(contract(format!(
                "candidate {:?} has invalid log-probability {bad}",
                self.text
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ScoreParams {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        let params = Self { alpha, epsilon };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(contract(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(contract(format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Scores, the λ that sharpened them, and the resulting categorical probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaDistribution {
    pub scores: Vec<f64>,
    pub lambda: f64,
    pub probs: Vec<f64>,
}

impl LambdaDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the highest probability, lowest index on exact ties.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.probs)
    }
}

pub fn mean_logprob(cand: &CandidateAction) -> Result<f64> {
    cand.validate()?;
    Ok(mean(&cand.token_logprobs))
}

/// Population variance (divides by N) of the token log-probabilities.
pub fn variance_logprob(cand: &CandidateAction) -> Result<f64> {
    cand.validate()?;
    let mu = mean(&cand.token_logprobs);
    let n = cand.token_logprobs.len() as f64;
    Ok(cand
        .token_logprobs
        .iter()
        .map(|lp| (lp - mu) * (lp - mu))
        .sum::<f64>()
        / n)
}

pub fn minmax_normalize(values: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(contract("min-max normalization of an empty vector"));
    }
    if !(epsilon > 0.0) {
        return Err(contract(format!("epsilon {epsilon} must be > 0")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(contract("min-max normalization of non-finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom = hi - lo + epsilon;
    Ok(values.iter().map(|v| (v - lo) / denom).collect())
}

/// Scores every candidate against the rest of the set. Output order matches input order.
pub fn score_candidates(cands: &[CandidateAction], params: &ScoreParams) -> Result<Vec<f64>> {
    params.validate()?;
    if cands.is_empty() {
        return Err(contract("cannot score an empty candidate set"));
    }
    let means = cands.iter().map(mean_logprob).collect::<Result<Vec<_>>>()?;
    let vars = cands
        .iter()
        .map(variance_logprob)
        .collect::<Result<Vec<_>>>()?;
    let norm_means = minmax_normalize(&means, params.epsilon)?;
    let norm_vars = minmax_normalize(&vars, params.epsilon)?;
    Ok(norm_means
        .iter()
        .zip(&norm_vars)
        .map(|(m, v)| params.alpha * m - (1.0 - params.alpha) * v)
        .collect())
}

/// Softmax of `lambda * scores`, computed with max subtraction.
pub fn lambda_probabilities(scores: &[f64], lambda: f64) -> Result<LambdaDistribution> {
    if scores.is_empty() {
        return Err(contract("λ-probabilities of an empty score vector"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(contract(format!("lambda {lambda} must be finite and >= 0")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(contract("λ-probabilities of non-finite scores"));
    }
    let probs = if lambda == 0.0 {
        vec![1.0 / scores.len() as f64; scores.len()]
    } else {
        let logits: Vec<f64> = scores.iter().map(|s| lambda * s).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    };
    Ok(LambdaDistribution {
        scores: scores.to_vec(),
        lambda,
        probs,
    })
}

/// Inverse-CDF draw of one index.
pub fn sample_categorical<R: Rng + ?Sized>(dist: &LambdaDistribution, rng: &mut R) -> usize {
    debug_assert!(!dist.probs.is_empty());
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in dist.probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    dist.probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(dist.probs.len() - 1)
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(lps: &[f64]) -> CandidateAction {
        CandidateAction::new("a", lps.to_vec()).unwrap()
    }

    // Straight-line reference: no shared helpers with the module under test.
    fn oracle_scores(sets: &[Vec<f64>], alpha: f64, eps: f64) -> Vec<f64> {
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for lps in sets {
            let mut sum = 0.0;
            for x in lps {
                sum += x;
            }
            let m = sum / lps.len() as f64;
            let mut sq = 0.0;
            for x in lps {
                sq += (x - m) * (x - m);
            }
            means.push(m);
            vars.push(sq / lps.len() as f64);
        }
        let (mut mlo, mut mhi, mut vlo, mut vhi) = (means[0], means[0], vars[0], vars[0]);
        for i in 1..means.len() {
            if means[i] < mlo {
                mlo = means[i];
            }
            if means[i] > mhi {
                mhi = means[i];
            }
            if vars[i] < vlo {
                vlo = vars[i];
            }
            if vars[i] > vhi {
                vhi = vars[i];
            }
        }
        let mut out = Vec::new();
        for i in 0..means.len() {
            let nm = (means[i] - mlo) / (mhi - mlo + eps);
            let nv = (vars[i] - vlo) / (vhi - vlo + eps);
            out.push(alpha * nm - (1.0 - alpha) * nv);
        }
        out
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_logprob(&cand(&[-1.0, -1.0, -1.0])).unwrap(), -1.0);
        assert_eq!(mean_logprob(&cand(&[-0.5])).unwrap(), -0.5);
        // (-0.1 - 2.0 - 0.9) / 3
        assert!((mean_logprob(&cand(&[-0.1, -2.0, -0.9])).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_logprob(&cand(&[-1.0, -1.0])).unwrap(), 0.0);
        assert_eq!(variance_logprob(&cand(&[-0.5])).unwrap(), 0.0);
        // (0.81 + 1.0 + 0.01) / 3
        let v = variance_logprob(&cand(&[-0.1, -2.0, -0.9])).unwrap();
        assert!((v - 1.82 / 3.0).abs() < 1e-12);
        assert!((v - 0.60667).abs() < 1e-5);
    }

    #[test]
    fn empty_logprobs_rejected() {
        let bad = CandidateAction {
            text: "x".into(),
            token_logprobs: vec![],
        };
        assert!(mean_logprob(&bad).is_err());
        assert!(variance_logprob(&bad).is_err());
        assert!(CandidateAction::new("x", vec![0.5]).is_err());
        assert!(CandidateAction::new("x", vec![f64::NAN]).is_err());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(
            minmax_normalize(&[3.0, 3.0, 3.0], 1e-8).unwrap(),
            vec![0.0; 3]
        );
        let v = minmax_normalize(&[0.0, 1.0], 1e-8).unwrap();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
        let v = minmax_normalize(&[-0.1, -1.25, -1.0], 1e-8).unwrap();
        let expect = [1.15 / (1.15 + 1e-8), 0.0, 0.25 / (1.15 + 1e-8)];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((v[2] - 0.2174).abs() < 1e-4);
        assert!(minmax_normalize(&[], 1e-8).is_err());
        assert!(minmax_normalize(&[1.0], 0.0).is_err());
    }

    #[test]
    fn score_examples() {
        let params = ScoreParams::default();
        assert_eq!(
            score_candidates(&[cand(&[-0.3, -2.0])], &params).unwrap(),
            vec![0.0]
        );

        let sets = vec![vec![-0.1, -0.1], vec![-2.0, -0.5], vec![-1.0, -1.0]];
        let cands: Vec<_> = sets.iter().map(|s| cand(s)).collect();
        let got = score_candidates(&cands, &params).unwrap();
        let want = oracle_scores(&sets, 0.8, 1e-8);
        for ((g, w), approx) in got.iter().zip(&want).zip([0.8, -0.2, 0.1739]) {
            assert!((g - w).abs() < 1e-12);
            assert!((g - approx).abs() < 1e-4);
        }

        let twins = [cand(&[-0.4, -1.2]), cand(&[-0.4, -1.2])];
        assert_eq!(score_candidates(&twins, &params).unwrap(), vec![0.0, 0.0]);
        assert!(score_candidates(&[], &params).is_err());
    }

    #[test]
    fn lambda_examples() {
        let d = lambda_probabilities(&[0.3, 0.9], 0.0).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);

        let d = lambda_probabilities(&[1.0, 0.0], std::f64::consts::LN_2).unwrap();
        assert!((d.probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.probs[1] - 1.0 / 3.0).abs() < 1e-12);

        // direct evaluation of exp(5 s_i) / sum_j exp(5 s_j)
        let s = [0.8, -0.2, 0.8 * 0.25 / (1.15 + 1e-8)];
        let exps: Vec<f64> = s.iter().map(|x: &f64| (5.0 * x).exp()).collect();
        let total: f64 = exps.iter().sum();
        let d = lambda_probabilities(&s, 5.0).unwrap();
        for (p, e) in d.probs.iter().zip(&exps) {
            assert!((p - e / total).abs() < 1e-12);
        }
        for (p, frozen) in d.probs.iter().zip([0.951985, 0.006414, 0.041601]) {
            assert!((p - frozen).abs() < 1e-6);
        }

        assert!(lambda_probabilities(&[0.1], -1.0).is_err());
        assert!(lambda_probabilities(&[], 1.0).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let one = lambda_probabilities(&[0.2], 3.0).unwrap();
        let degenerate = LambdaDistribution {
            scores: vec![0.0, 1.0],
            lambda: 1.0,
            probs: vec![0.0, 1.0],
        };
        for _ in 0..100 {
            assert_eq!(sample_categorical(&one, &mut rng), 0);
            assert_eq!(sample_categorical(&degenerate, &mut rng), 1);
        }

        let half = lambda_probabilities(&[0.0, 0.0], 1.0).unwrap();
        let draws = 10_000;
        let zeros = (0..draws)
            .filter(|_| sample_categorical(&half, &mut rng) == 0)
            .count();
        let freq = zeros as f64 / draws as f64;
        // binomial sd at n=10000 is 0.005; 0.02 is four sd
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let d = lambda_probabilities(&[0.1, 0.5, 0.2, 0.9], 2.0).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_categorical(&d, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }

    fn logprob_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..=0.0, 1..30), 2..20)
    }

    proptest! {
        #[test]
        fn matches_scalar_oracle(sets in logprob_sets(), alpha in 0.0f64..=1.0) {
            let cands: Vec<_> = sets.iter().map(|s| cand(s)).collect();
            let params = ScoreParams::new(alpha, 1e-8).unwrap();
            let got = score_candidates(&cands, &params).unwrap();
            let want = oracle_scores(&sets, alpha, 1e-8);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-9);
            }
        }

        #[test]
        fn scores_within_bounds(sets in logprob_sets(), alpha in 0.0f64..=1.0) {
            let cands: Vec<_> = sets.iter().map(|s| cand(s)).collect();
            let params = ScoreParams::new(alpha, 1e-8).unwrap();
            for s in score_candidates(&cands, &params).unwrap() {
                prop_assert!(s >= -(1.0 - alpha) - 1e-12 && s <= alpha + 1e-12);
            }
        }

        #[test]
        fn softmax_normalized(scores in prop::collection::vec(-1.0f64..1.0, 1..30), lambda in 0.0f64..1000.0) {
            let d = lambda_probabilities(&scores, lambda).unwrap();
            prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.probs.iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn zero_lambda_is_uniform(scores in prop::collection::vec(-1.0f64..1.0, 1..30)) {
            let d = lambda_probabilities(&scores, 0.0).unwrap();
            let u = 1.0 / scores.len() as f64;
            prop_assert!(d.probs.iter().all(|p| *p == u));
        }

        #[test]
        fn shift_invariant(scores in prop::collection::vec(-1.0f64..1.0, 1..20), lambda in 0.0f64..40.0, c in -5.0f64..5.0) {
            let a = lambda_probabilities(&scores, lambda).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let b = lambda_probabilities(&shifted, lambda).unwrap();
            for (x, y) in a.probs.iter().zip(&b.probs) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_equivariant(sets in logprob_sets(), lambda in 0.0f64..40.0, rot in 0usize..20) {
            let cands: Vec<_> = sets.iter().map(|s| cand(s)).collect();
            let params = ScoreParams::default();
            let k = rot % cands.len();
            let mut rotated = cands.clone();
            rotated.rotate_left(k);
            let s = score_candidates(&cands, &params).unwrap();
            let mut sr = score_candidates(&rotated, &params).unwrap();
            sr.rotate_right(k);
            for (a, b) in s.iter().zip(&sr) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let p = lambda_probabilities(&s, lambda).unwrap().probs;
            let mut pr = lambda_probabilities(&score_candidates(&rotated, &params).unwrap(), lambda).unwrap().probs;
            pr.rotate_right(k);
            for (a, b) in p.iter().zip(&pr) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_preserved_and_sharpening(raw in prop::collection::btree_set(-200i32..200, 2..12)) {
            // narrow range keeps the argmax probability below 1.0 in f64 at λ = 40
            let scores: Vec<f64> = raw.iter().rev().map(|v| *v as f64 / 1000.0).collect();
            let best = argmax_lowest(&scores);
            let mut prev = 0.0;
            for lambda in [0.1, 1.0, 5.0, 20.0, 40.0] {
                let d = lambda_probabilities(&scores, lambda).unwrap();
                prop_assert_eq!(d.argmax(), best);
                prop_assert!(d.probs[best] > prev);
                prev = d.probs[best];
            }
        }
    }
}
