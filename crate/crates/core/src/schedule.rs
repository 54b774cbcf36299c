//! Choosing the exploration degree λ: an exponential schedule over the
//! horizon, or a value sampled from the policy and parsed out of its reply.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const DEFAULT_LAMBDA_MIN: f64 = 0.0;
pub const DEFAULT_LAMBDA_MAX: f64 = 40.0;
pub const DEFAULT_GROWTH: f64 = 5.0;

/// `λ(t) = λ_min + (λ_max - λ_min) * (e^{k t / T} - 1) / (e^k - 1)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Exponential growth constant `k`.
    pub k: f64,
    pub horizon: u32,
}

impl LambdaSchedule {
    pub fn new(lambda_min: f64, lambda_max: f64, k: f64, horizon: u32) -> Result<Self> {
        let sched = Self {
            lambda_min,
            lambda_max,
            k,
            horizon,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min >= 0.0 && self.lambda_min.is_finite()) {
            return Err(contract(format!(
                "lambda_min {} must be >= 0",
                self.lambda_min
            )));
        }
        if !(self.lambda_max >= self.lambda_min && self.lambda_max.is_finite()) {
            return Err(contract(format!(
                "lambda_max {} must be >= lambda_min {}",
                self.lambda_max, self.lambda_min
            )));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(contract(format!(
                "growth constant k {} must be > 0",
                self.k
            )));
        }
        if self.horizon == 0 {
            return Err(contract("schedule horizon must be >= 1"));
        }
        Ok(())
    }

    pub fn at(&self, t: u32) -> Result<f64> {
        lambda_exp(self, t)
    }
}

pub fn lambda_exp(sched: &LambdaSchedule, t: u32) -> Result<f64> {
    sched.validate()?;
    if t > sched.horizon {
        return Err(contract(format!(
            "step {t} outside schedule range 0..={}",
            sched.horizon
        )));
    }
    if t == 0 {
        return Ok(sched.lambda_min);
    }
    if t == sched.horizon {
        return Ok(sched.lambda_max);
    }
    let frac = (sched.k * t as f64 / sched.horizon as f64).exp_m1() / sched.k.exp_m1();
    Ok(sched.lambda_min + (sched.lambda_max - sched.lambda_min) * frac)
}

/// Where λ comes from on an explore step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSource {
    Scheduled(LambdaSchedule),
    PolicySampled { bounds: (f64, f64), fallback: f64 },
}

impl LambdaSource {
    /// Policy-sampled λ in `[lo, hi]` falling back to the midpoint.
    pub fn policy(lo: f64, hi: f64) -> Result<Self> {
        let src = LambdaSource::PolicySampled {
            bounds: (lo, hi),
            fallback: (lo + hi) / 2.0,
        };
        src.validate()?;
        Ok(src)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LambdaSource::Scheduled(s) => s.validate(),
            LambdaSource::PolicySampled { bounds, fallback } => {
                let (lo, hi) = *bounds;
                if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(contract(format!("λ bounds [{lo}, {hi}] are not ordered")));
                }
                if !(lo..=hi).contains(fallback) {
                    return Err(contract(format!(
                        "fallback λ {fallback} outside [{lo}, {hi}]"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Pulls the `lambda` field out of a single-line JSON reply. `None` on any parse failure.
pub fn try_parse_lambda(raw: &str) -> Option<f64> {
    let value = crate::policy::parse_json_object(raw)?;
    let lambda = value.get("lambda")?.as_f64()?;
    lambda.is_finite().then_some(lambda)
}

/// Parsed λ clamped into `bounds`, or `fallback` when the reply does not parse.
pub fn parse_lambda_reply(raw: &str, bounds: (f64, f64), fallback: f64) -> f64 {
    match try_parse_lambda(raw) {
        Some(v) => v.clamp(bounds.0, bounds.1),
        None => fallback.clamp(bounds.0, bounds.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mab() -> LambdaSchedule {
        LambdaSchedule::new(0.0, 40.0, 5.0, 200).unwrap()
    }

    #[test]
    fn endpoints() {
        let s = LambdaSchedule::new(1.5, 9.0, 3.0, 17).unwrap();
        assert_eq!(lambda_exp(&s, 0).unwrap(), 1.5);
        assert_eq!(lambda_exp(&s, 17).unwrap(), 9.0);
    }

    #[test]
    fn midpoint_value() {
        // 40 (e^2.5 - 1) / (e^5 - 1)
        let direct = 40.0 * (2.5f64.exp() - 1.0) / (5.0f64.exp() - 1.0);
        let v = lambda_exp(&mab(), 100).unwrap();
        assert!((v - direct).abs() < 1e-12);
        assert!((v - 3.034327).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(lambda_exp(&mab(), 201).is_err());
        assert!(LambdaSchedule::new(5.0, 1.0, 5.0, 10).is_err());
        assert!(LambdaSchedule::new(0.0, 1.0, 0.0, 10).is_err());
        assert!(LambdaSchedule::new(0.0, 1.0, 1.0, 0).is_err());
        assert!(LambdaSource::PolicySampled {
            bounds: (0.0, 1.0),
            fallback: 2.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn monotone_and_convex() {
        let s = mab();
        let vals: Vec<f64> = (0..=200).map(|t| lambda_exp(&s, t).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        assert!(vals[100] < 20.0);
    }

    #[test]
    fn reply_examples() {
        assert_eq!(
            parse_lambda_reply(r#"{"lambda":0.5}"#, (0.0, 40.0), 20.0),
            0.5
        );
        assert_eq!(
            parse_lambda_reply(r#"{"lambda":99}"#, (0.0, 40.0), 20.0),
            40.0
        );
        assert_eq!(
            parse_lambda_reply("I choose lambda 3", (0.0, 40.0), 20.0),
            20.0
        );
        assert_eq!(
            parse_lambda_reply(r#"  {"lambda": -2.0} "#, (0.0, 40.0), 20.0),
            0.0
        );
        assert_eq!(
            parse_lambda_reply(r#"{"lambda":"3"}"#, (0.0, 40.0), 20.0),
            20.0
        );
        assert_eq!(try_parse_lambda(r#"{"mode":"EXPLORE"}"#), None);
    }

    proptest! {
        #[test]
        fn schedule_stays_in_range(lo in 0.0f64..10.0, span in 0.0f64..50.0, k in 0.1f64..10.0, horizon in 1u32..500) {
            let s = LambdaSchedule::new(lo, lo + span, k, horizon).unwrap();
            for t in 0..=horizon {
                let v = lambda_exp(&s, t).unwrap();
                prop_assert!(v >= lo && v <= lo + span);
            }
        }

        #[test]
        fn parsed_lambda_in_bounds(raw in ".*", lo in 0.0f64..10.0, span in 0.0f64..50.0) {
            let v = parse_lambda_reply(&raw, (lo, lo + span), lo);
            prop_assert!(v >= lo && v <= lo + span);
        }

        #[test]
        fn json_lambda_in_bounds(x in -1e6f64..1e6) {
            let v = parse_lambda_reply(&format!("{{\"lambda\":{x}}}"), (0.0, 40.0), 20.0);
            prop_assert!((0.0..=40.0).contains(&v));
        }
    }
}
