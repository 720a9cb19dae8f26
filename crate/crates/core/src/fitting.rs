//! Maximum-likelihood fitting and parameter-recovery studies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{credited_rule, q_update, softmax, AgentConfig, AgentKind, HierQParams};
use crate::ddm::{DdmError, EzEstimate, RtSummary};
use crate::domain::{classify, BlockSpec, MissionKind, MissionSpec, Rule};
use crate::engine::{SessionConfig, TrialRecord};
use crate::optim::{nelder_mead, Bounds, NelderMeadOptions};
use crate::sim::{derive_seed, simulate_records};

/// Lapse rate assumed (not fitted) by the Q-learning likelihood.
pub const FIXED_LAPSE: f64 = 0.02;
pub const ALPHA_BOUNDS: (f64, f64) = (0.01, 1.0);
pub const BETA_BOUNDS: (f64, f64) = (0.0, 32.0);
pub const MIN_RECOMMENDED_TRIALS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("non-finite likelihood at trial {trial_index}")]
    NonFinite { trial_index: usize },
    #[error("every optimizer start produced a non-finite objective")]
    AllStartsFailed,
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("unknown model {0:?} (expected qlearn or ez)")]
    UnknownModel(String),
    #[error(transparent)]
    Ddm(#[from] DdmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Qlearn,
    Ez,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Qlearn => "qlearn",
            Model::Ez => "ez",
        })
    }
}

impl FromStr for Model {
    type Err = FitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qlearn" => Ok(Model::Qlearn),
            "ez" => Ok(Model::Ez),
            _ => Err(FitError::UnknownModel(s.to_string())),
        }
    }
}

/// One learned-rule trial reduced to what the likelihood needs.
#[derive(Debug, Clone, Copy)]
struct QlTrial {
    new_block: bool,
    cue: usize,
    /// Whether each rule's mapping produces the observed response.
    consistent: [bool; 2],
    credit: Option<Rule>,
    reward: f64,
}

/// Learned-rule trials prepared for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct QlearnData {
    trials: Vec<QlTrial>,
    n_cues: usize,
}

impl QlearnData {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let mut trials = Vec::new();
        let mut block = None;
        let mut n_cues = 0;
        for r in records
            .iter()
            .filter(|r| r.mission_kind == MissionKind::LearnedRule)
        {
            let key = (r.address.mission_id, r.address.block_index);
            let new_block = block != Some(key);
            block = Some(key);
            n_cues = n_cues.max(r.cue_id as usize + 1);
            trials.push(QlTrial {
                new_block,
                cue: r.cue_id as usize,
                consistent: Rule::ALL.map(|rule| classify(&r.stimulus, rule) == r.final_response),
                credit: credited_rule(&r.stimulus, r.final_response),
                reward: if r.correct { 1.0 } else { -1.0 },
            });
        }
        QlearnData { trials, n_cues }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Sums log-probabilities left to right in trial order.
    pub fn loglik(&self, alpha: f64, beta: f64, lapse: f64) -> Result<f64, FitError> {
        let mut q = vec![[0.0f64; 2]; self.n_cues];
        let mut total = 0.0;
        for (i, t) in self.trials.iter().enumerate() {
            if t.new_block {
                q.iter_mut().for_each(|v| *v = [0.0, 0.0]);
            }
            let p_rule = softmax(&q[t.cue], beta);
            let p: f64 = (0..2)
                .map(|k| p_rule[k] * ((1.0 - lapse) * t.consistent[k] as u8 as f64 + lapse * 0.5))
                .sum();
            let lp = p.ln();
            if !lp.is_finite() {
                return Err(FitError::NonFinite { trial_index: i });
            }
            total += lp;
            if let Some(rule) = t.credit {
                let slot = &mut q[t.cue][rule.index()];
                *slot = q_update(*slot, t.reward, alpha);
            }
        }
        Ok(total)
    }
}

/// Log-likelihood of the learned-rule trials under the Q learner.
pub fn qlearn_loglik(
    records: &[TrialRecord],
    alpha: f64,
    beta: f64,
    lapse: f64,
) -> Result<f64, FitError> {
    QlearnData::from_records(records).loglik(alpha, beta, lapse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub grid: usize,
    pub nm: NelderMeadOptions,
    pub lapse: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grid: 5,
            nm: NelderMeadOptions::default(),
            lapse: FIXED_LAPSE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub estimates: BTreeMap<String, f64>,
    /// `None` for closed-form models.
    pub loglik: Option<f64>,
    pub n_trials: usize,
    pub converged: bool,
    pub n_restarts_used: usize,
    /// Parameters whose estimate sits on a search bound.
    pub at_bound: Vec<String>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.estimates.get(name).copied()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Multi-start Nelder–Mead over (alpha, beta) with the lapse held fixed.
pub fn fit_qlearn(records: &[TrialRecord], opts: &FitOptions) -> Result<FitResult, FitError> {
    let data = QlearnData::from_records(records);
    if data.is_empty() {
        return Err(FitError::Insufficient("no learned-rule trials".into()));
    }
    let bounds = Bounds::new(
        vec![ALPHA_BOUNDS.0, BETA_BOUNDS.0],
        vec![ALPHA_BOUNDS.1, BETA_BOUNDS.1],
    );
    let objective = |x: &[f64]| match data.loglik(x[0], x[1], opts.lapse) {
        Ok(ll) => -ll,
        Err(_) => f64::INFINITY,
    };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut used = 0;
    for &alpha in &linspace(0.05, 0.95, opts.grid) {
        for &beta in &logspace(0.5, 16.0, opts.grid) {
            let m = nelder_mead(objective, &[alpha, beta], &bounds, &opts.nm);
            if !m.f.is_finite() {
                continue;
            }
            used += 1;
            if best.as_ref().is_none_or(|b| m.f < b.1) {
                best = Some((m.x, m.f, m.converged));
            }
        }
    }
    let (x, f, converged) = best.ok_or(FitError::AllStartsFailed)?;
    let mut at_bound = Vec::new();
    for (i, name) in ["alpha", "beta"].iter().enumerate() {
        let range = bounds.upper[i] - bounds.lower[i];
        if (x[i] - bounds.lower[i]).abs() < 1e-6 * range
            || (bounds.upper[i] - x[i]).abs() < 1e-6 * range
        {
            at_bound.push(name.to_string());
        }
    }
    let mut warnings = Vec::new();
    if data.len() < MIN_RECOMMENDED_TRIALS {
        warnings.push(format!(
            "only {} learned-rule trials; at least {MIN_RECOMMENDED_TRIALS} recommended",
            data.len()
        ));
    }
    Ok(FitResult {
        model: Model::Qlearn,
        estimates: BTreeMap::from([("alpha".to_string(), x[0]), ("beta".to_string(), x[1])]),
        loglik: Some(-f),
        n_trials: data.len(),
        converged,
        n_restarts_used: used,
        at_bound,
        warnings,
    })
}

pub fn fit_mle(
    records: &[TrialRecord],
    model: Model,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    match model {
        Model::Qlearn => fit_qlearn(records, opts),
        Model::Ez => fit_ez(records),
    }
}

/// EZ estimates for the switch and repeat conditions of the cued-switching
/// trials, named `v_switch`, `a_switch`, `ter_s_switch` and so on.
pub fn fit_ez(records: &[TrialRecord]) -> Result<FitResult, FitError> {
    let mut estimates = BTreeMap::new();
    for (cond, suffix) in [
        (SwitchCondition::Switch, "switch"),
        (SwitchCondition::Repeat, "repeat"),
    ] {
        let ez = ez_fit_session(records, cond)?;
        estimates.insert(format!("v_{suffix}"), ez.v);
        estimates.insert(format!("a_{suffix}"), ez.a);
        estimates.insert(format!("ter_s_{suffix}"), ez.ter_s);
    }
    let n_trials = records
        .iter()
        .filter(|r| r.mission_kind == MissionKind::CuedSwitch && r.is_switch.is_some())
        .count();
    Ok(FitResult {
        model: Model::Ez,
        estimates,
        loglik: None,
        n_trials,
        converged: true,
        n_restarts_used: 0,
        at_bound: Vec::new(),
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SwitchCondition {
    Switch,
    Repeat,
}

impl fmt::Display for SwitchCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SwitchCondition::Switch => "SWITCH",
            SwitchCondition::Repeat => "REPEAT",
        })
    }
}

pub const EZ_SCALE: f64 = 0.1;

/// EZ estimate from the cued-switching trials of one condition.
pub fn ez_fit_session(
    records: &[TrialRecord],
    condition: SwitchCondition,
) -> Result<EzEstimate, FitError> {
    let want = condition == SwitchCondition::Switch;
    let summary = RtSummary::from_trials(
        records
            .iter()
            .filter(|r| r.mission_kind == MissionKind::CuedSwitch && r.is_switch == Some(want))
            .map(|r| (r.correct, r.rt_ms)),
    );
    if summary.n_correct < 10 {
        return Err(FitError::Insufficient(format!(
            "{condition}: {} correct trials, need 10",
            summary.n_correct
        )));
    }
    Ok(summary.ez_fit(EZ_SCALE)?)
}

/// Learned-rule blocks used to generate recovery data: 100-trial 2-car
/// blocks alternating with 40-trial 8-car blocks.
pub fn recovery_mission(n_trials: u32) -> MissionSpec {
    // Long 2-cue blocks pin down alpha; short 8-cue blocks add many fresh
    // cue episodes, which is where beta shows up in the choices.
    const PATTERN: [(u32, u32); 2] = [(100, 2), (40, 8)];
    let mut m = MissionSpec::default_mission2();
    m.blocks.clear();
    let mut used = 0;
    let mut i = 0u32;
    while used < n_trials.max(2) {
        let (len, cues) = PATTERN[i as usize % PATTERN.len()];
        let mut len = len.min(n_trials.max(2) - used);
        // A trailing sliver is folded into the previous block.
        if len < 10 && !m.blocks.is_empty() {
            let last = m.blocks.pop().expect("non-empty");
            i -= 1;
            let (_, cues) = PATTERN[i as usize % PATTERN.len()];
            len += last.n_trials;
            used -= last.n_trials;
            m.blocks.push(BlockSpec::learned_rule(i, len, cues));
        } else {
            m.blocks.push(BlockSpec::learned_rule(i, len, cues));
        }
        used += len;
        i += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecovery {
    pub name: String,
    pub true_value: f64,
    pub mean: f64,
    pub median: f64,
    /// `None` with fewer than two successful fits.
    pub sd: Option<f64>,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub truth: BTreeMap<String, f64>,
    pub params: Vec<ParamRecovery>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub flags: Vec<String>,
}

impl RecoveryCell {
    pub fn param(&self, name: &str) -> Option<&ParamRecovery> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub model: Model,
    pub trials_per_run: u32,
    pub n_replicates: usize,
    pub seed: u64,
    pub cells: Vec<RecoveryCell>,
}

/// Simulate, fit, and summarize per grid cell. Replicates run in parallel
/// but results are assembled in index order, so reports depend only on
/// the seed.
pub fn parameter_recovery(
    model: Model,
    grid: &[HierQParams],
    trials_per_run: u32,
    n_replicates: usize,
    seed: u64,
) -> Result<RecoveryReport, FitError> {
    if model != Model::Qlearn {
        return Err(FitError::UnknownModel(format!(
            "recovery supports qlearn only, got {model}"
        )));
    }
    if grid.is_empty() {
        return Err(FitError::Insufficient("empty parameter grid".into()));
    }
    let mission = recovery_mission(trials_per_run);
    let opts = FitOptions::default();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..n_replicates).map(move |r| (c, r)))
        .collect();
    let fits: Vec<Result<FitResult, FitError>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let truth = HierQParams {
                lapse: FIXED_LAPSE,
                ..grid[c]
            };
            let run_seed = derive_seed(seed, &[c as u64, r as u64]);
            let config = SessionConfig {
                missions: vec![mission.clone()],
                seed: run_seed,
            };
            let mut agent = AgentConfig::new(AgentKind::HierQ, derive_seed(run_seed, &[1]));
            agent.hier_q = truth;
            let records = simulate_records(config, &agent).expect("recovery mission is valid");
            fit_qlearn(&records, &opts)
        })
        .collect();

    let cells = grid
        .iter()
        .enumerate()
        .map(|(c, truth)| {
            let results = &fits[c * n_replicates..(c + 1) * n_replicates];
            let ok: Vec<&FitResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
            let mut flags = Vec::new();
            if ok.len() < 2 {
                flags.push("sd undefined: fewer than two replicates".to_string());
            }
            let n_failed = results.len() - ok.len();
            if n_failed > 0 {
                flags.push(format!("{n_failed} fits failed"));
            }
            let at_bound = ok.iter().filter(|f| !f.at_bound.is_empty()).count();
            if at_bound > 0 {
                flags.push(format!("{at_bound} fits at a search bound"));
            }
            let params = [("alpha", truth.alpha), ("beta", truth.beta)]
                .iter()
                .map(|&(name, true_value)| {
                    summarize(name, true_value, ok.iter().map(|f| f.get(name).unwrap()))
                })
                .collect();
            RecoveryCell {
                truth: BTreeMap::from([
                    ("alpha".to_string(), truth.alpha),
                    ("beta".to_string(), truth.beta),
                ]),
                params,
                n_ok: ok.len(),
                n_failed,
                flags,
            }
        })
        .collect();
    Ok(RecoveryReport {
        model,
        trials_per_run,
        n_replicates,
        seed,
        cells,
    })
}

fn summarize(name: &str, true_value: f64, estimates: impl Iterator<Item = f64>) -> ParamRecovery {
    let est: Vec<f64> = estimates.collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let sd = (est.len() >= 2)
        .then(|| (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    let rmse = (est.iter().map(|e| (e - true_value).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = est.clone();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => f64::NAN,
        k if k % 2 == 1 => sorted[k / 2],
        k => (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0,
    };
    ParamRecovery {
        name: name.to_string(),
        true_value,
        mean,
        median,
        sd,
        bias: mean - true_value,
        rmse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Congruency, ResponseSide};

    fn hierq_records(alpha: f64, beta: f64, trials: u32, seed: u64) -> Vec<TrialRecord> {
        let config = SessionConfig {
            missions: vec![recovery_mission(trials)],
            seed,
        };
        let mut agent = AgentConfig::new(AgentKind::HierQ, seed ^ 0xABCD);
        agent.hier_q = HierQParams {
            alpha,
            beta,
            lapse: FIXED_LAPSE,
        };
        simulate_records(config, &agent).unwrap()
    }

    #[test]
    fn beta_zero_incongruent_is_half() {
        let recs: Vec<TrialRecord> = hierq_records(0.3, 6.0, 200, 1)
            .into_iter()
            .filter(|r| r.congruency == Congruency::Incongruent)
            .collect();
        let ll = qlearn_loglik(&recs, 0.3, 0.0, FIXED_LAPSE).unwrap();
        assert!((ll - recs.len() as f64 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_records_have_zero_loglik() {
        assert_eq!(qlearn_loglik(&[], 0.5, 3.0, FIXED_LAPSE).unwrap(), 0.0);
        assert!(matches!(
            fit_qlearn(&[], &FitOptions::default()),
            Err(FitError::Insufficient(_))
        ));
    }

    #[test]
    fn zero_lapse_impossible_response_is_reported() {
        let mut recs = hierq_records(0.3, 6.0, 60, 2);
        // a congruent trial answered against both rules has probability 0
        let i = recs
            .iter()
            .position(|r| r.congruency == Congruency::Congruent)
            .unwrap();
        let correct = classify(&recs[i].stimulus, recs[i].true_rule);
        recs[i].final_response = match correct {
            ResponseSide::Left => ResponseSide::Right,
            ResponseSide::Right => ResponseSide::Left,
        };
        assert_eq!(
            qlearn_loglik(&recs, 0.3, 6.0, 0.0),
            Err(FitError::NonFinite { trial_index: i })
        );
    }

    #[test]
    fn loglik_is_bit_reproducible() {
        let recs = hierq_records(0.3, 6.0, 180, 3);
        let a = qlearn_loglik(&recs, 0.27, 5.5, FIXED_LAPSE).unwrap();
        let b = qlearn_loglik(&recs, 0.27, 5.5, FIXED_LAPSE).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn true_params_beat_beta_zero() {
        let wins = (0..200)
            .filter(|&s| {
                let recs = hierq_records(0.3, 6.0, 180, 100 + s);
                qlearn_loglik(&recs, 0.3, 6.0, FIXED_LAPSE).unwrap()
                    > qlearn_loglik(&recs, 0.3, 0.0, FIXED_LAPSE).unwrap()
            })
            .count();
        assert!(wins >= 198, "{wins}/200");
    }

    #[test]
    fn fit_stays_in_bounds_and_flags_perfect_play() {
        // perfect play: answer with the true rule on every trial
        let mut recs = hierq_records(0.3, 6.0, 200, 4);
        for r in &mut recs {
            r.final_response = classify(&r.stimulus, r.true_rule);
            r.correct = true;
        }
        let fit = fit_qlearn(&recs, &FitOptions::default()).unwrap();
        let beta = fit.get("beta").unwrap();
        assert!(beta <= BETA_BOUNDS.1 && beta > 20.0, "{fit:?}");
        assert!(fit.at_bound.contains(&"beta".to_string()), "{fit:?}");
        assert!(fit.loglik.unwrap() <= 0.0);
    }

    #[test]
    fn short_data_warns() {
        let recs = hierq_records(0.3, 6.0, 30, 5);
        let fit = fit_qlearn(&recs, &FitOptions::default()).unwrap();
        assert_eq!(fit.warnings.len(), 1);
        let a = fit.get("alpha").unwrap();
        assert!((ALPHA_BOUNDS.0..=ALPHA_BOUNDS.1).contains(&a));
    }

    #[test]
    fn ez_session_needs_trials() {
        let recs = hierq_records(0.3, 6.0, 30, 6);
        assert!(matches!(
            ez_fit_session(&recs, SwitchCondition::Switch),
            Err(FitError::Insufficient(_))
        ));
    }

    #[test]
    fn single_replicate_flags_sd() {
        let grid = [HierQParams {
            alpha: 0.3,
            beta: 4.0,
            lapse: FIXED_LAPSE,
        }];
        let rep = parameter_recovery(Model::Qlearn, &grid, 100, 1, 9).unwrap();
        assert!(rep.cells[0].params.iter().all(|p| p.sd.is_none()));
        assert!(rep.cells[0]
            .flags
            .iter()
            .any(|f| f.contains("sd undefined")));
        let again = parameter_recovery(Model::Qlearn, &grid, 100, 1, 9).unwrap();
        assert_eq!(rep, again);
        assert!(parameter_recovery(Model::Qlearn, &[], 100, 1, 9).is_err());
    }

    #[test]
    fn recovery_mission_sizes() {
        let m = recovery_mission(500);
        assert_eq!(m.n_trials(), 500);
        assert_eq!(m.blocks.len(), 7);
        for n in [50, 141, 180, 444] {
            let m = recovery_mission(n);
            assert_eq!(m.n_trials(), n);
            assert!(crate::domain::validate_mission(&m).is_empty());
        }
        let m = recovery_mission(180);
        assert_eq!(m.n_trials(), 180);
        assert!(crate::domain::validate_mission(&m).is_empty());
    }
}
