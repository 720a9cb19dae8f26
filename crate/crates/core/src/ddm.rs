//! Two-boundary drift-diffusion: Euler–Maruyama forward simulation and the
//! closed-form EZ inversion from accuracy and correct-RT moments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Congruency;

/// Decision time cap; walks still unabsorbed here return a timeout.
pub const TIMEOUT_MS: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdmParams {
    /// Drift toward the correct (upper) boundary, evidence units per second.
    pub v: f64,
    /// Boundary separation.
    pub a: f64,
    /// Start point in `(0, a)`.
    pub z: f64,
    pub ter_ms: f64,
    /// Diffusion scale.
    pub s: f64,
    pub dt_ms: f64,
}

impl Default for DdmParams {
    fn default() -> Self {
        DdmParams::new(0.25, 0.12, 400.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdmError {
    #[error("invalid diffusion parameters: {0}")]
    InvalidParams(String),
    #[error("need at least 10 trials, got {0}")]
    TooFewTrials(usize),
    #[error("RT variance must be positive (got {0})")]
    NonPositiveVariance(f64),
    #[error("degenerate data: EZ radicand {0} is negative")]
    Degenerate(f64),
}

impl DdmParams {
    /// Unbiased start, `s = 0.1`, 1 ms steps.
    pub fn new(v: f64, a: f64, ter_ms: f64) -> Self {
        DdmParams {
            v,
            a,
            z: a / 2.0,
            ter_ms,
            s: 0.1,
            dt_ms: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DdmError> {
        let bad = |m: &str| Err(DdmError::InvalidParams(m.to_string()));
        if !self.v.is_finite() {
            return bad("v must be finite");
        }
        if !(self.a > 0.0) {
            return bad("a must be positive");
        }
        if !(self.z > 0.0 && self.z < self.a) {
            return bad("z must lie strictly between 0 and a");
        }
        if !(self.ter_ms >= 0.0) {
            return bad("ter_ms must be non-negative");
        }
        if !(self.s > 0.0) {
            return bad("s must be positive");
        }
        if !(self.dt_ms > 0.0) {
            return bad("dt_ms must be positive");
        }
        Ok(())
    }

    /// Closed-form probability of hitting the upper boundary from `z = a/2`.
    pub fn p_correct_unbiased(&self) -> f64 {
        1.0 / (1.0 + (-self.v * self.a / (self.s * self.s)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdmTrialResult {
    pub correct: bool,
    pub rt_ms: u32,
    pub timed_out: bool,
}

pub fn simulate_ddm<R: Rng + ?Sized>(params: &DdmParams, rng: &mut R) -> DdmTrialResult {
    let dt = params.dt_ms / 1000.0;
    let drift_step = params.v * dt;
    let noise_step = params.s * dt.sqrt();
    let max_steps = (TIMEOUT_MS / params.dt_ms).ceil() as u64;
    let mut x = params.z;
    for step in 1..=max_steps {
        let n: f64 = rng.sample(StandardNormal);
        x += drift_step + noise_step * n;
        if x >= params.a || x <= 0.0 {
            let decision_ms = step as f64 * params.dt_ms;
            return DdmTrialResult {
                correct: x >= params.a,
                rt_ms: (decision_ms + params.ter_ms).round() as u32,
                timed_out: false,
            };
        }
    }
    DdmTrialResult {
        correct: x >= params.a / 2.0,
        rt_ms: (TIMEOUT_MS + params.ter_ms).round() as u32,
        timed_out: true,
    }
}

/// Halves drift on switch trials and takes a further 0.8 on incongruent ones.
pub fn switch_drift(base: &DdmParams, is_switch: bool, congruency: Congruency) -> DdmParams {
    let mut out = *base;
    if is_switch {
        out.v *= 0.5;
    }
    if congruency == Congruency::Incongruent {
        out.v *= 0.8;
    }
    out
}

/// Moves `pc` off the singular values 0, 0.5 and 1 by `1/(2n)`.
pub fn edge_correct(pc: f64, n: usize) -> f64 {
    let shift = 1.0 / (2.0 * n as f64);
    if pc == 0.0 {
        shift
    } else if pc == 1.0 {
        1.0 - shift
    } else if pc == 0.5 {
        0.5 + shift
    } else {
        pc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EzEstimate {
    pub v: f64,
    pub a: f64,
    pub ter_s: f64,
}

impl EzEstimate {
    pub fn to_params(&self, s: f64) -> DdmParams {
        DdmParams {
            v: self.v,
            a: self.a,
            z: self.a / 2.0,
            ter_ms: self.ter_s * 1000.0,
            s,
            dt_ms: 1.0,
        }
    }
}

/// EZ-diffusion inversion. `vrt_s2` and `mrt_s` are the variance and mean
/// of correct RTs in seconds.
pub fn ez_fit(pc: f64, vrt_s2: f64, mrt_s: f64, s: f64, n: usize) -> Result<EzEstimate, DdmError> {
    if n < 10 {
        return Err(DdmError::TooFewTrials(n));
    }
    if !(vrt_s2 > 0.0) {
        return Err(DdmError::NonPositiveVariance(vrt_s2));
    }
    let pc = edge_correct(pc, n);
    let l = (pc / (1.0 - pc)).ln();
    let x = l * (l * pc * pc - l * pc + pc - 0.5) / vrt_s2;
    if x < 0.0 {
        return Err(DdmError::Degenerate(x));
    }
    let v = (pc - 0.5).signum() * s * x.powf(0.25);
    let a = s * s * l / v;
    let y = -v * a / (s * s);
    let mdt = (a / (2.0 * v)) * (1.0 - y.exp()) / (1.0 + y.exp());
    Ok(EzEstimate {
        v,
        a,
        ter_s: mrt_s - mdt,
    })
}

/// Accuracy, correct-RT mean and variance (seconds), and trial count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtSummary {
    pub pc: f64,
    pub mrt_s: f64,
    pub vrt_s2: f64,
    pub n: usize,
    pub n_correct: usize,
}

impl RtSummary {
    pub fn from_trials(trials: impl IntoIterator<Item = (bool, u32)>) -> Self {
        let mut n = 0;
        let mut rts = Vec::new();
        for (correct, rt_ms) in trials {
            n += 1;
            if correct {
                rts.push(rt_ms as f64 / 1000.0);
            }
        }
        let k = rts.len();
        let mean = if k > 0 {
            rts.iter().sum::<f64>() / k as f64
        } else {
            f64::NAN
        };
        let var = if k > 1 {
            rts.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1) as f64
        } else {
            f64::NAN
        };
        RtSummary {
            pc: if n > 0 { k as f64 / n as f64 } else { f64::NAN },
            mrt_s: mean,
            vrt_s2: var,
            n,
            n_correct: k,
        }
    }

    pub fn ez_fit(&self, s: f64) -> Result<EzEstimate, DdmError> {
        ez_fit(self.pc, self.vrt_s2, self.mrt_s, s, self.n)
    }
}
