//! Artificial players. Each agent sees only [`PromptView`]s and
//! [`Feedback`], the same information a human client receives.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddm::{simulate_ddm, switch_drift, DdmParams};
use crate::domain::{
    classify, congruency_of, CodeStimulus, Congruency, Controllability, ResponseSide, Rule,
    DEFAULT_AVOID_COST, DEFAULT_PENALTY, DEFAULT_REWARD,
};
use crate::engine::{ActionKind, Feedback, PlayerAction, PromptView, TrialView};

/// Overflow-safe softmax of `beta * values`.
pub fn softmax(values: &[f64], beta: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let m = values
        .iter()
        .map(|v| beta * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (beta * v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Delta rule.
pub fn q_update(q: f64, reward: f64, alpha: f64) -> f64 {
    q + alpha * (reward - q)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("unknown agent kind {0:?} (expected random, instructed_ddm, hier_q, partner_belief)")]
    UnknownKind(String),
    #[error("unknown parameter {key:?} for agent {kind}")]
    UnknownParam { kind: AgentKind, key: String },
    #[error("parameter {key}={value:?} is not a number")]
    BadNumber { key: String, value: String },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Random,
    InstructedDdm,
    HierQ,
    PartnerBelief,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Random,
        AgentKind::InstructedDdm,
        AgentKind::HierQ,
        AgentKind::PartnerBelief,
    ];
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Random => "random",
            AgentKind::InstructedDdm => "instructed_ddm",
            AgentKind::HierQ => "hier_q",
            AgentKind::PartnerBelief => "partner_belief",
        })
    }
}

impl FromStr for AgentKind {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| AgentError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierQParams {
    pub alpha: f64,
    pub beta: f64,
    pub lapse: f64,
}

impl Default for HierQParams {
    fn default() -> Self {
        HierQParams {
            alpha: 0.3,
            beta: 6.0,
            lapse: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefParams {
    /// Points lost per expected loss of control.
    pub kappa: f64,
    /// Own solve accuracy assumed when avoiding.
    pub p_self: f64,
    pub reward: f64,
    pub penalty: f64,
    pub avoid_cost: f64,
    /// Expected squeeze probability under partial control.
    pub squeeze_estimate: f64,
    pub decision: DecisionRule,
}

/// Softmax inverse temperature over engage-minus-avoid points.
pub const DEFAULT_DECISION_BETA: f64 = 0.5;

/// How the belief agent turns values into an engage/avoid choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionRule {
    /// [`delegation_decision`] on the posterior mean.
    Greedy,
    /// Engage with probability `logistic(beta * (EV_engage - EV_avoid))`.
    Softmax { beta: f64 },
    /// Greedy on a reliability drawn from the posterior.
    Thompson,
}

impl Default for BeliefParams {
    fn default() -> Self {
        BeliefParams {
            kappa: 0.0,
            p_self: 0.8,
            reward: DEFAULT_REWARD as f64,
            penalty: DEFAULT_PENALTY as f64,
            avoid_cost: DEFAULT_AVOID_COST as f64,
            squeeze_estimate: 0.8,
            decision: DecisionRule::Softmax {
                beta: DEFAULT_DECISION_BETA,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub hier_q: HierQParams,
    pub ddm: DdmParams,
    pub belief: BeliefParams,
    pub seed: u64,
}

impl AgentConfig {
    pub fn new(kind: AgentKind, seed: u64) -> Self {
        AgentConfig {
            kind,
            hier_q: HierQParams::default(),
            ddm: DdmParams::default(),
            belief: BeliefParams::default(),
            seed,
        }
    }

    /// Applies `key=value` overrides. Keys: `alpha beta lapse` (Q learner),
    /// `v a ter_ms s` (diffusion), `kappa p_self squeeze_estimate
    /// decision_beta` (partner beliefs). `decision=greedy|thompson` picks
    /// a rule; `decision_beta` selects softmax.
    pub fn with_params<'a>(
        mut self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, AgentError> {
        for (key, value) in pairs {
            if key == "decision" {
                self.belief.decision = match value {
                    "greedy" => DecisionRule::Greedy,
                    "thompson" => DecisionRule::Thompson,
                    _ => {
                        return Err(AgentError::BadNumber {
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                };
                continue;
            }
            let num: f64 = value.parse().map_err(|_| AgentError::BadNumber {
                key: key.to_string(),
                value: value.to_string(),
            })?;
            match key {
                "alpha" => self.hier_q.alpha = num,
                "beta" => self.hier_q.beta = num,
                "lapse" => self.hier_q.lapse = num,
                "v" => self.ddm.v = num,
                "a" => {
                    self.ddm.a = num;
                    self.ddm.z = num / 2.0;
                }
                "ter_ms" => self.ddm.ter_ms = num,
                "s" => self.ddm.s = num,
                "kappa" => self.belief.kappa = num,
                "p_self" => self.belief.p_self = num,
                "squeeze_estimate" => self.belief.squeeze_estimate = num,
                "decision_beta" => self.belief.decision = DecisionRule::Softmax { beta: num },
                _ => {
                    return Err(AgentError::UnknownParam {
                        kind: self.kind,
                        key: key.to_string(),
                    })
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let q = &self.hier_q;
        let b = &self.belief;
        let mut bad = Vec::new();
        if !(q.alpha > 0.0 && q.alpha <= 1.0) {
            bad.push(format!("alpha={} not in (0, 1]", q.alpha));
        }
        if !(q.beta >= 0.0) || !q.beta.is_finite() {
            bad.push(format!("beta={} must be >= 0", q.beta));
        }
        if !(0.0..=0.5).contains(&q.lapse) {
            bad.push(format!("lapse={} not in [0, 0.5]", q.lapse));
        }
        if !(b.kappa >= 0.0) {
            bad.push(format!("kappa={} must be >= 0", b.kappa));
        }
        if !(0.0..=1.0).contains(&b.p_self) {
            bad.push(format!("p_self={} not in [0, 1]", b.p_self));
        }
        if !(0.0..=1.0).contains(&b.squeeze_estimate) {
            bad.push(format!(
                "squeeze_estimate={} not in [0, 1]",
                b.squeeze_estimate
            ));
        }
        if let DecisionRule::Softmax { beta } = b.decision {
            if !(beta >= 0.0) || !beta.is_finite() {
                bad.push(format!("decision_beta={beta} must be finite and >= 0"));
            }
        }
        if let Err(e) = self.ddm.validate() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(AgentError::OutOfRange(bad.join("; ")))
        }
    }

    pub fn build(&self) -> Box<dyn Agent + Send> {
        match self.kind {
            AgentKind::Random => Box::new(RandomAgent::new(self.seed)),
            AgentKind::InstructedDdm => {
                Box::new(InstructedDdmAgent::new(self.ddm, self.hier_q, self.seed))
            }
            AgentKind::HierQ => Box::new(HierQAgent::new(self.hier_q, self.ddm, self.seed)),
            AgentKind::PartnerBelief => Box::new(PartnerBeliefAgent::new(
                self.belief,
                self.hier_q,
                self.ddm,
                self.seed,
            )),
        }
    }
}

/// A player driven by prompts.
pub trait Agent {
    fn act(&mut self, prompt: &PromptView) -> PlayerAction;
    fn observe(&mut self, _feedback: &Feedback) {}
}

pub fn random_act<R: Rng + ?Sized>(prompt: &PromptView, rng: &mut R) -> PlayerAction {
    let legal = prompt.legal_actions();
    assert!(!legal.is_empty(), "no legal action at a terminal prompt");
    let kind = legal[rng.random_range(0..legal.len())];
    let rt_ms = rng.random_range(300..=1500);
    match kind {
        ActionKind::Respond => PlayerAction::Respond {
            side: if rng.random::<bool>() {
                ResponseSide::Left
            } else {
                ResponseSide::Right
            },
            rt_ms,
        },
        ActionKind::Avoid => PlayerAction::Avoid { rt_ms },
        ActionKind::Engage => PlayerAction::Engage { rt_ms },
        ActionKind::Accept => PlayerAction::Accept { rt_ms },
        ActionKind::Check => PlayerAction::Check { rt_ms },
        ActionKind::SelfSolve => PlayerAction::SelfSolve { rt_ms },
    }
}

pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, prompt: &PromptView) -> PlayerAction {
        random_act(prompt, &mut self.rng)
    }
}

/// Q table over (cue, rule) for the current block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierQState {
    pub params: HierQParams,
    pub q: HashMap<u32, [f64; 2]>,
    block: Option<(u32, u32)>,
}

impl HierQState {
    pub fn new(params: HierQParams) -> Self {
        HierQState {
            params,
            q: HashMap::new(),
            block: None,
        }
    }

    /// Clears the table when a new block starts; cue ids are per block.
    fn enter(&mut self, trial: &TrialView) {
        let key = (trial.address.mission_id, trial.address.block_index);
        if self.block != Some(key) {
            self.block = Some(key);
            self.q.clear();
        }
    }

    pub fn values(&self, cue_id: u32) -> [f64; 2] {
        self.q.get(&cue_id).copied().unwrap_or([0.0, 0.0])
    }

    pub fn rule_probs(&self, cue_id: u32) -> [f64; 2] {
        let p = softmax(&self.values(cue_id), self.params.beta);
        [p[0], p[1]]
    }

    /// Credits the rule implied by the observed response. Congruent codes
    /// carry no information about the rule and leave the table unchanged.
    pub fn learn(
        &mut self,
        cue_id: u32,
        stimulus: &CodeStimulus,
        response: ResponseSide,
        correct: bool,
    ) {
        let Some(rule) = credited_rule(stimulus, response) else {
            return;
        };
        let reward = if correct { 1.0 } else { -1.0 };
        let entry = self.q.entry(cue_id).or_insert([0.0, 0.0]);
        entry[rule.index()] = q_update(entry[rule.index()], reward, self.params.alpha);
    }
}

/// The rule a response reveals: defined only for incongruent codes.
pub fn credited_rule(stimulus: &CodeStimulus, response: ResponseSide) -> Option<Rule> {
    if congruency_of(stimulus) == Congruency::Congruent {
        return None;
    }
    Rule::ALL
        .into_iter()
        .find(|&r| classify(stimulus, r) == response)
}

/// Picks a rule (the signaled one if shown) and answers with it, with a
/// uniform lapse.
pub fn hier_q_act<R: Rng + ?Sized>(
    state: &mut HierQState,
    trial: &TrialView,
    rng: &mut R,
) -> (Rule, ResponseSide) {
    state.enter(trial);
    let rule = match trial.signaled_rule {
        Some(r) => r,
        None => {
            let p = state.rule_probs(trial.cue_id);
            if rng.random::<f64>() < p[0] {
                Rule::Letter
            } else {
                Rule::Number
            }
        }
    };
    let mut side = classify(&trial.stimulus, rule);
    if rng.random::<f64>() < state.params.lapse {
        side = if rng.random::<bool>() {
            ResponseSide::Left
        } else {
            ResponseSide::Right
        };
    }
    (rule, side)
}

pub struct HierQAgent {
    state: HierQState,
    ddm: DdmParams,
    rng: ChaCha8Rng,
    current: Option<TrialView>,
}

impl HierQAgent {
    pub fn new(params: HierQParams, ddm: DdmParams, seed: u64) -> Self {
        HierQAgent {
            state: HierQState::new(params),
            ddm,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
        }
    }

    pub fn state(&self) -> &HierQState {
        &self.state
    }
}

fn decision_rt<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    rng.random_range(300..=900)
}

impl Agent for HierQAgent {
    fn act(&mut self, prompt: &PromptView) -> PlayerAction {
        match prompt {
            PromptView::TrialPresent { trial } | PromptView::SelfSolve { trial, .. } => {
                self.current = Some(trial.clone());
                let (_, side) = hier_q_act(&mut self.state, trial, &mut self.rng);
                let rt_ms = simulate_ddm(&self.ddm, &mut self.rng).rt_ms;
                PlayerAction::Respond { side, rt_ms }
            }
            PromptView::PartnerOffer { trial } => {
                self.current = Some(trial.clone());
                PlayerAction::Avoid {
                    rt_ms: decision_rt(&mut self.rng),
                }
            }
            PromptView::ProposalReview { .. } => PlayerAction::Accept {
                rt_ms: decision_rt(&mut self.rng),
            },
            PromptView::SessionEnd { .. } => panic!("no action at session end"),
        }
    }

    fn observe(&mut self, feedback: &Feedback) {
        if let Some(t) = self.current.take() {
            self.state.learn(
                t.cue_id,
                &t.stimulus,
                feedback.final_response,
                feedback.correct,
            );
        }
    }
}

/// Follows the signaled rule (or a learned one) and answers through a
/// diffusion process whose drift drops on switches and incongruent codes.
pub struct InstructedDdmAgent {
    ddm: DdmParams,
    rules: HierQState,
    rng: ChaCha8Rng,
    last_rule: Option<((u32, u32), Rule)>,
    current: Option<TrialView>,
}

impl InstructedDdmAgent {
    pub fn new(ddm: DdmParams, hier_q: HierQParams, seed: u64) -> Self {
        InstructedDdmAgent {
            ddm,
            rules: HierQState::new(HierQParams {
                lapse: 0.0,
                ..hier_q
            }),
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_rule: None,
            current: None,
        }
    }

    fn respond(&mut self, trial: &TrialView) -> PlayerAction {
        self.current = Some(trial.clone());
        let (rule, _) = hier_q_act(&mut self.rules, trial, &mut self.rng);
        let block = (trial.address.mission_id, trial.address.block_index);
        let is_switch = match self.last_rule {
            Some((b, prev)) if b == block => prev != rule,
            _ => false,
        };
        self.last_rule = Some((block, rule));
        let params = switch_drift(&self.ddm, is_switch, congruency_of(&trial.stimulus));
        let r = simulate_ddm(&params, &mut self.rng);
        let intended = classify(&trial.stimulus, rule);
        let side = if r.timed_out {
            if self.rng.random::<bool>() {
                ResponseSide::Left
            } else {
                ResponseSide::Right
            }
        } else if r.correct {
            intended
        } else {
            intended.opposite()
        };
        PlayerAction::Respond {
            side,
            rt_ms: r.rt_ms,
        }
    }
}

impl Agent for InstructedDdmAgent {
    fn act(&mut self, prompt: &PromptView) -> PlayerAction {
        match prompt {
            PromptView::TrialPresent { trial } | PromptView::SelfSolve { trial, .. } => {
                self.respond(trial)
            }
            PromptView::PartnerOffer { .. } => PlayerAction::Avoid {
                rt_ms: decision_rt(&mut self.rng),
            },
            PromptView::ProposalReview { .. } => PlayerAction::Accept {
                rt_ms: decision_rt(&mut self.rng),
            },
            PromptView::SessionEnd { .. } => panic!("no action at session end"),
        }
    }

    fn observe(&mut self, feedback: &Feedback) {
        if let Some(t) = self.current.take() {
            self.rules.learn(
                t.cue_id,
                &t.stimulus,
                feedback.final_response,
                feedback.correct,
            );
        }
    }
}

/// Beta(a, b) belief about one partner's reliability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBelief {
    pub a: f64,
    pub b: f64,
}

impl Default for BetaBelief {
    fn default() -> Self {
        BetaBelief { a: 1.0, b: 1.0 }
    }
}

impl BetaBelief {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn update(self, proposal_was_correct: bool) -> Self {
        if proposal_was_correct {
            BetaBelief {
                a: self.a + 1.0,
                ..self
            }
        } else {
            BetaBelief {
                b: self.b + 1.0,
                ..self
            }
        }
    }
}

/// Per-partner beliefs, keyed by the avatar the player sees.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartnerBeliefState {
    pub params: BeliefParams,
    pub beliefs: HashMap<u32, BetaBelief>,
}

impl PartnerBeliefState {
    pub fn new(params: BeliefParams) -> Self {
        PartnerBeliefState {
            params,
            beliefs: HashMap::new(),
        }
    }

    pub fn belief(&self, avatar: u32) -> BetaBelief {
        self.beliefs.get(&avatar).copied().unwrap_or_default()
    }
}

pub fn belief_update(
    mut state: PartnerBeliefState,
    avatar: u32,
    proposal_was_correct: bool,
) -> PartnerBeliefState {
    let b = state.belief(avatar).update(proposal_was_correct);
    state.beliefs.insert(avatar, b);
    state
}

/// Expected points of engaging and of avoiding.
pub fn delegation_values(
    p_hat: f64,
    controllability: Controllability,
    params: &BeliefParams,
) -> (f64, f64) {
    let control_loss = match controllability {
        Controllability::Full => 0.0,
        Controllability::Partial => params.squeeze_estimate,
    };
    let engage =
        p_hat * params.reward - (1.0 - p_hat) * params.penalty - params.kappa * control_loss;
    let avoid =
        params.p_self * params.reward - (1.0 - params.p_self) * params.penalty - params.avoid_cost;
    (engage, avoid)
}

/// Greedy choice on posterior-mean reliability; ties go to AVOID.
pub fn delegation_decision(
    state: &PartnerBeliefState,
    avatar: u32,
    controllability: Controllability,
) -> ActionKind {
    let (engage, avoid) =
        delegation_values(state.belief(avatar).mean(), controllability, &state.params);
    if engage > avoid {
        ActionKind::Engage
    } else {
        ActionKind::Avoid
    }
}

pub struct PartnerBeliefAgent {
    state: PartnerBeliefState,
    solver: HierQState,
    ddm: DdmParams,
    rng: ChaCha8Rng,
    current: Option<TrialView>,
}

impl PartnerBeliefAgent {
    pub fn new(params: BeliefParams, hier_q: HierQParams, ddm: DdmParams, seed: u64) -> Self {
        PartnerBeliefAgent {
            state: PartnerBeliefState::new(params),
            solver: HierQState::new(hier_q),
            ddm,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
        }
    }

    pub fn state(&self) -> &PartnerBeliefState {
        &self.state
    }

    fn offer(&mut self, trial: &TrialView) -> ActionKind {
        let avatar = trial.avatar_id.unwrap_or(0);
        let control = trial.controllability.unwrap_or(Controllability::Full);
        let belief = self.state.belief(avatar);
        let params = &self.state.params;
        let engage = match params.decision {
            DecisionRule::Greedy => return delegation_decision(&self.state, avatar, control),
            DecisionRule::Softmax { beta } => {
                let (engage, avoid) = delegation_values(belief.mean(), control, params);
                self.rng.random::<f64>() < logistic(beta * (engage - avoid))
            }
            DecisionRule::Thompson => {
                let p = Beta::new(belief.a, belief.b)
                    .expect("posterior parameters >= 1")
                    .sample(&mut self.rng);
                let (engage, avoid) = delegation_values(p, control, params);
                engage > avoid
            }
        };
        if engage {
            ActionKind::Engage
        } else {
            ActionKind::Avoid
        }
    }
}

impl Agent for PartnerBeliefAgent {
    fn act(&mut self, prompt: &PromptView) -> PlayerAction {
        let rt_ms = decision_rt(&mut self.rng);
        match prompt {
            PromptView::PartnerOffer { trial } => {
                self.current = Some(trial.clone());
                match self.offer(trial) {
                    ActionKind::Engage => PlayerAction::Engage { rt_ms },
                    _ => PlayerAction::Avoid { rt_ms },
                }
            }
            PromptView::ProposalReview { .. } => PlayerAction::Accept { rt_ms },
            PromptView::TrialPresent { trial } | PromptView::SelfSolve { trial, .. } => {
                self.current = Some(trial.clone());
                let (_, side) = hier_q_act(&mut self.solver, trial, &mut self.rng);
                let rt_ms = simulate_ddm(&self.ddm, &mut self.rng).rt_ms;
                PlayerAction::Respond { side, rt_ms }
            }
            PromptView::SessionEnd { .. } => panic!("no action at session end"),
        }
    }

    fn observe(&mut self, feedback: &Feedback) {
        let Some(t) = self.current.take() else { return };
        if feedback.delegated {
            // the committed answer was the partner's proposal
            let avatar = t.avatar_id.unwrap_or(0);
            self.state = belief_update(std::mem::take(&mut self.state), avatar, feedback.correct);
        }
        self.solver.learn(
            t.cue_id,
            &t.stimulus,
            feedback.final_response,
            feedback.correct,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Address, MissionKind};

    fn view(cue_id: u32, stim: CodeStimulus, signaled: Option<Rule>) -> TrialView {
        TrialView {
            address: Address {
                mission_id: 2,
                block_index: 0,
                trial_index: 0,
            },
            mission_kind: MissionKind::LearnedRule,
            cue_id,
            signaled_rule: signaled,
            stimulus: stim,
            avatar_id: None,
            controllability: None,
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[1.0, 0.0], 2.0);
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        assert_eq!(softmax(&[3.0, -7.0, 1.0], 0.0), vec![1.0 / 3.0; 3]);
        assert_eq!(softmax(&[5.0, 5.0], 17.0), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 0.0], 10.0);
        assert!(big.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn q_update_examples() {
        assert!((q_update(0.0, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(q_update(0.37, 0.37, 0.4), 0.37);
        assert_eq!(q_update(0.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn unseen_cue_is_uniform() {
        let s = HierQState::new(HierQParams {
            beta: 50.0,
            ..Default::default()
        });
        assert_eq!(s.rule_probs(3), [0.5, 0.5]);
    }

    #[test]
    fn learns_cue_rule_after_rewarded_trials() {
        // oracle: simulate 1,000 replicates of 50 rewarded LETTER trials
        let params = HierQParams {
            alpha: 0.3,
            beta: 6.0,
            lapse: 0.0,
        };
        let stim = CodeStimulus::clean('A', 4); // LETTER → LEFT, NUMBER → RIGHT
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p_letter = 0.0;
        for _ in 0..1000 {
            let mut s = HierQState::new(params);
            for _ in 0..50 {
                let (_, side) = hier_q_act(&mut s, &view(0, stim, None), &mut rng);
                let correct = side == classify(&stim, Rule::Letter);
                s.learn(0, &stim, side, correct);
            }
            p_letter += s.rule_probs(0)[Rule::Letter.index()];
        }
        assert!(p_letter / 1000.0 > 0.95);
    }

    #[test]
    fn lapse_caps_accuracy() {
        let mut s = HierQState::new(HierQParams {
            alpha: 0.3,
            beta: 6.0,
            lapse: 0.5,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stim = CodeStimulus::clean('K', 3);
        let v = view(0, stim, Some(Rule::Number));
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| hier_q_act(&mut s, &v, &mut rng).1 == classify(&stim, Rule::Number))
            .count();
        let acc = hits as f64 / n as f64;
        assert!(acc <= 0.75 + 0.01, "{acc}");
        assert!(acc >= 0.74);
    }

    #[test]
    fn q_values_stay_bounded() {
        let mut s = HierQState::new(HierQParams {
            alpha: 1.0,
            ..Default::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..5000u32 {
            let stim = if i % 2 == 0 {
                CodeStimulus::clean('A', 2)
            } else {
                CodeStimulus::clean('G', 5)
            };
            let side = if rng.random::<bool>() {
                ResponseSide::Left
            } else {
                ResponseSide::Right
            };
            s.learn(i % 3, &stim, side, rng.random::<bool>());
        }
        assert!(s.q.values().flatten().all(|q| (-1.0..=1.0).contains(q)));
    }

    #[test]
    fn beta_updates() {
        let b = BetaBelief::default().update(true);
        assert_eq!(b, BetaBelief { a: 2.0, b: 1.0 });
        assert!((b.mean() - 2.0 / 3.0).abs() < 1e-15);
        let b = BetaBelief::default().update(false);
        assert!((b.mean() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn belief_converges_to_reliability() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut within, mut close) = (0, 0);
        let (p, n) = (0.85, 100);
        for _ in 0..1000 {
            let mut state = PartnerBeliefState::default();
            for _ in 0..n {
                state = belief_update(state, 0, rng.random::<f64>() < p);
            }
            let mean = state.belief(0).mean();
            if (mean - p).abs() <= 0.07 {
                close += 1;
            }
            if (mean - p).abs() <= 2.0 * (p * (1.0 - p) / n as f64).sqrt() {
                within += 1;
            }
        }
        assert!(within >= 900, "{within}");
        assert!(close >= 900, "{close}");
    }

    fn params(kappa: f64) -> BeliefParams {
        BeliefParams {
            kappa,
            decision: DecisionRule::Greedy,
            ..Default::default()
        }
    }

    fn state_with_mean(p: f64) -> PartnerBeliefState {
        let mut s = PartnerBeliefState::new(params(0.0));
        // Beta(1 + 100p, 1 + 100(1-p)) has mean close to p; set exactly
        s.beliefs.insert(
            0,
            BetaBelief {
                a: p * 10.0,
                b: (1.0 - p) * 10.0,
            },
        );
        s
    }

    #[test]
    fn delegation_examples() {
        let s = state_with_mean(0.9);
        let (e, a) = delegation_values(0.9, Controllability::Full, &s.params);
        assert!((e - 8.0).abs() < 1e-12 && (a - 4.0).abs() < 1e-12);
        assert_eq!(
            delegation_decision(&s, 0, Controllability::Full),
            ActionKind::Engage
        );

        let s = state_with_mean(0.2);
        let (e, _) = delegation_values(0.2, Controllability::Full, &s.params);
        assert!((e + 6.0).abs() < 1e-12);
        assert_eq!(
            delegation_decision(&s, 0, Controllability::Full),
            ActionKind::Avoid
        );

        let mut s = state_with_mean(1.0);
        s.beliefs.insert(0, BetaBelief { a: 1e9, b: 1e-9 });
        s.params.kappa = 100.0;
        assert_eq!(
            delegation_decision(&s, 0, Controllability::Partial),
            ActionKind::Avoid
        );
    }

    #[test]
    fn delegation_tie_goes_to_avoid() {
        // p̂ = 0.7 makes both values 4
        let s = state_with_mean(0.7);
        let (e, a) = delegation_values(0.7, Controllability::Full, &s.params);
        assert!((e - a).abs() < 1e-12);
        let tie = BeliefParams {
            p_self: 0.5,
            avoid_cost: 0.0,
            ..params(0.0)
        };
        let s = PartnerBeliefState::new(tie);
        assert_eq!(
            delegation_decision(&s, 0, Controllability::Full),
            ActionKind::Avoid
        );
    }

    #[test]
    fn random_act_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stim = CodeStimulus::clean('A', 3);
        let present = PromptView::TrialPresent {
            trial: view(0, stim, Some(Rule::Letter)),
        };
        let offer = PromptView::PartnerOffer {
            trial: view(0, stim, None),
        };
        let n = 10_000;
        let left = (0..n)
            .filter(|_| {
                matches!(
                    random_act(&present, &mut rng),
                    PlayerAction::Respond {
                        side: ResponseSide::Left,
                        ..
                    }
                )
            })
            .count();
        assert!((left as f64 / n as f64 - 0.5).abs() <= 0.02);
        let engage = (0..n)
            .filter(|_| matches!(random_act(&offer, &mut rng), PlayerAction::Engage { .. }))
            .count();
        assert!((engage as f64 / n as f64 - 0.5).abs() <= 0.02);
        for _ in 0..1000 {
            let rt = random_act(&present, &mut rng).rt_ms();
            assert!((300..=1500).contains(&rt));
        }
    }

    #[test]
    fn params_parse_and_validate() {
        let c = AgentConfig::new(AgentKind::HierQ, 1)
            .with_params([("alpha", "0.5"), ("beta", "3")])
            .unwrap();
        assert_eq!(c.hier_q.alpha, 0.5);
        assert!(AgentConfig::new(AgentKind::HierQ, 1)
            .with_params([("alpha", "0")])
            .is_err());
        assert!(AgentConfig::new(AgentKind::HierQ, 1)
            .with_params([("lapse", "0.7")])
            .is_err());
        assert!(AgentConfig::new(AgentKind::HierQ, 1)
            .with_params([("gamma", "1")])
            .is_err());
        assert!(AgentConfig::new(AgentKind::HierQ, 1)
            .with_params([("beta", "x")])
            .is_err());
        assert!("nope".parse::<AgentKind>().is_err());
        assert_eq!("hier_q".parse::<AgentKind>(), Ok(AgentKind::HierQ));
    }
}
