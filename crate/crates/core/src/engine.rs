//! Deterministic session state machine for the three missions.
//!
//! All trials are generated up front from the session seed. Partner
//! proposals and squeeze draws use a per-trial random stream, so the
//! outcome of a trial depends only on the seed, the trial address and the
//! actions taken on that trial.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    classify, congruency_of, error_taxonomy, validate_mission, Address, BlockSpec, CodeStimulus,
    Congruency, Controllability, Cue, ErrorClass, Fraction, MissionKind, MissionSpec, PartnerSpec,
    PartnerType, ResponseSide, Rule, TrialSpec, CONSONANTS, EVEN_DIGITS, ODD_DIGITS, VOWELS,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub missions: Vec<MissionSpec>,
    pub seed: u64,
}

impl SessionConfig {
    /// Missions 1 to 3 with default sizes and payoffs.
    pub fn default_session(seed: u64) -> Self {
        SessionConfig {
            missions: (1..=3).filter_map(MissionSpec::default_for).collect(),
            seed,
        }
    }

    pub fn single_mission(mission_id: u32, seed: u64) -> Option<Self> {
        Some(SessionConfig {
            missions: vec![MissionSpec::default_for(mission_id)?],
            seed,
        })
    }

    /// Default missions in the given order; `None` on an unknown id.
    pub fn for_missions(ids: &[u32], seed: u64) -> Option<Self> {
        Some(SessionConfig {
            missions: ids
                .iter()
                .map(|&m| MissionSpec::default_for(m))
                .collect::<Option<_>>()?,
            seed,
        })
    }

    pub fn n_trials(&self) -> u32 {
        self.missions.iter().map(MissionSpec::n_trials).sum()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.missions.is_empty() {
            out.push("session has no missions".to_string());
        }
        for w in self.missions.windows(2) {
            if w[1].mission_id <= w[0].mission_id {
                out.push(format!(
                    "mission {} follows mission {}; ids must increase",
                    w[1].mission_id, w[0].mission_id
                ));
            }
        }
        for m in &self.missions {
            out.extend(validate_mission(m));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlayerAction {
    Respond { side: ResponseSide, rt_ms: u32 },
    Avoid { rt_ms: u32 },
    Engage { rt_ms: u32 },
    Accept { rt_ms: u32 },
    SelfSolve { rt_ms: u32 },
    Check { rt_ms: u32 },
}

impl PlayerAction {
    pub fn kind(&self) -> ActionKind {
        match self {
            PlayerAction::Respond { .. } => ActionKind::Respond,
            PlayerAction::Avoid { .. } => ActionKind::Avoid,
            PlayerAction::Engage { .. } => ActionKind::Engage,
            PlayerAction::Accept { .. } => ActionKind::Accept,
            PlayerAction::SelfSolve { .. } => ActionKind::SelfSolve,
            PlayerAction::Check { .. } => ActionKind::Check,
        }
    }

    pub fn rt_ms(&self) -> u32 {
        match *self {
            PlayerAction::Respond { rt_ms, .. }
            | PlayerAction::Avoid { rt_ms }
            | PlayerAction::Engage { rt_ms }
            | PlayerAction::Accept { rt_ms }
            | PlayerAction::SelfSolve { rt_ms }
            | PlayerAction::Check { rt_ms } => rt_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Respond,
    Avoid,
    Engage,
    Accept,
    SelfSolve,
    Check,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Respond => "RESPOND",
            ActionKind::Avoid => "AVOID",
            ActionKind::Engage => "ENGAGE",
            ActionKind::Accept => "ACCEPT",
            ActionKind::SelfSolve => "SELF_SOLVE",
            ActionKind::Check => "CHECK",
        })
    }
}

/// How a self-solve sub-prompt was reached; decides the effort cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelfSolveOrigin {
    Avoid,
    Check,
}

/// The engine-side prompt, including hidden trial fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Prompt {
    TrialPresent {
        trial: TrialSpec,
    },
    PartnerOffer {
        trial: TrialSpec,
        partner: PartnerSpec,
    },
    ProposalReview {
        trial: TrialSpec,
        proposed: ResponseSide,
        forced: bool,
    },
    SelfSolve {
        trial: TrialSpec,
        origin: SelfSolveOrigin,
    },
    SessionEnd {
        score: i64,
    },
}

const LEGAL_RESPOND: &[ActionKind] = &[ActionKind::Respond];
const LEGAL_OFFER: &[ActionKind] = &[ActionKind::Avoid, ActionKind::Engage];
const LEGAL_REVIEW: &[ActionKind] = &[ActionKind::Accept, ActionKind::Check];
const LEGAL_FORCED: &[ActionKind] = &[ActionKind::Accept];

impl Prompt {
    pub fn legal_actions(&self) -> &'static [ActionKind] {
        match self {
            Prompt::TrialPresent { .. } | Prompt::SelfSolve { .. } => LEGAL_RESPOND,
            Prompt::PartnerOffer { .. } => LEGAL_OFFER,
            Prompt::ProposalReview { forced: false, .. } => LEGAL_REVIEW,
            Prompt::ProposalReview { forced: true, .. } => LEGAL_FORCED,
            Prompt::SessionEnd { .. } => &[],
        }
    }

    pub fn trial(&self) -> Option<&TrialSpec> {
        match self {
            Prompt::TrialPresent { trial }
            | Prompt::PartnerOffer { trial, .. }
            | Prompt::ProposalReview { trial, .. }
            | Prompt::SelfSolve { trial, .. } => Some(trial),
            Prompt::SessionEnd { .. } => None,
        }
    }

    pub fn address(&self) -> Option<Address> {
        self.trial().map(|t| t.address)
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Prompt::SessionEnd { .. })
    }

    /// What a player is allowed to see.
    pub fn view(&self) -> PromptView {
        match self {
            Prompt::TrialPresent { trial } => PromptView::TrialPresent {
                trial: TrialView::of(trial),
            },
            Prompt::PartnerOffer { trial, .. } => PromptView::PartnerOffer {
                trial: TrialView::of(trial),
            },
            Prompt::ProposalReview {
                trial,
                proposed,
                forced,
            } => PromptView::ProposalReview {
                trial: TrialView::of(trial),
                proposed: *proposed,
                forced: *forced,
            },
            Prompt::SelfSolve { trial, origin } => PromptView::SelfSolve {
                trial: TrialView::of(trial),
                origin: *origin,
            },
            Prompt::SessionEnd { score } => PromptView::SessionEnd { score: *score },
        }
    }
}

/// Player-visible trial content. Never carries the true rule when it is
/// not signaled, nor a partner's type or reliability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialView {
    pub address: Address,
    pub mission_kind: MissionKind,
    pub cue_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signaled_rule: Option<Rule>,
    pub stimulus: CodeStimulus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avatar_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllability: Option<Controllability>,
}

impl TrialView {
    pub fn of(trial: &TrialSpec) -> Self {
        TrialView {
            address: trial.address,
            mission_kind: trial.mission_kind,
            cue_id: trial.cue.id,
            signaled_rule: trial.cue.signaled_rule,
            stimulus: trial.stimulus,
            avatar_id: trial.partner.map(|p| p.avatar_id),
            controllability: trial.controllability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptView {
    TrialPresent {
        trial: TrialView,
    },
    PartnerOffer {
        trial: TrialView,
    },
    ProposalReview {
        trial: TrialView,
        proposed: ResponseSide,
        forced: bool,
    },
    SelfSolve {
        trial: TrialView,
        origin: SelfSolveOrigin,
    },
    SessionEnd {
        score: i64,
    },
}

impl PromptView {
    pub fn trial(&self) -> Option<&TrialView> {
        match self {
            PromptView::TrialPresent { trial }
            | PromptView::PartnerOffer { trial }
            | PromptView::ProposalReview { trial, .. }
            | PromptView::SelfSolve { trial, .. } => Some(trial),
            PromptView::SessionEnd { .. } => None,
        }
    }

    pub fn legal_actions(&self) -> &'static [ActionKind] {
        match self {
            PromptView::TrialPresent { .. } | PromptView::SelfSolve { .. } => LEGAL_RESPOND,
            PromptView::PartnerOffer { .. } => LEGAL_OFFER,
            PromptView::ProposalReview { forced: false, .. } => LEGAL_REVIEW,
            PromptView::ProposalReview { forced: true, .. } => LEGAL_FORCED,
            PromptView::SessionEnd { .. } => &[],
        }
    }
}

/// Trial outcome as shown to the player. Reveals correctness, never the rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub address: Address,
    pub correct: bool,
    pub payoff: i64,
    pub score: i64,
    pub final_response: ResponseSide,
    pub delegated: bool,
    pub control_lost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Boundary {
    BlockEnd {
        mission_id: u32,
        block_index: u32,
        score: i64,
    },
    MissionEnd {
        mission_id: u32,
        score: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub address: Address,
    pub mission_kind: MissionKind,
    pub cue_id: u32,
    pub signaled_rule: Option<Rule>,
    pub true_rule: Rule,
    pub stimulus: CodeStimulus,
    pub congruency: Congruency,
    pub is_switch: Option<bool>,
    pub actions: Vec<PlayerAction>,
    pub final_response: ResponseSide,
    pub correct: bool,
    pub error_class: ErrorClass,
    pub payoff: i64,
    pub partner_type: Option<PartnerType>,
    pub controllability: Option<Controllability>,
    pub delegated: bool,
    pub control_lost: bool,
    pub rt_ms: u32,
}

impl TrialRecord {
    /// The answer to the partner offer, if one was made.
    pub fn offer_response(&self) -> Option<ActionKind> {
        if self.mission_kind != MissionKind::Social {
            return None;
        }
        self.actions
            .first()
            .map(PlayerAction::kind)
            .filter(|k| matches!(k, ActionKind::Avoid | ActionKind::Engage))
    }

    pub fn engaged(&self) -> Option<bool> {
        self.offer_response().map(|k| k == ActionKind::Engage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid session config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{got} is not legal here; expected one of [{}]", fmt_kinds(.legal))]
    IllegalAction {
        got: ActionKind,
        legal: Vec<ActionKind>,
    },
    #[error("session is over")]
    SessionOver,
}

fn fmt_kinds(kinds: &[ActionKind]) -> String {
    kinds
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Result of applying one action.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub feedback: Option<Feedback>,
    pub record: Option<TrialRecord>,
    pub boundaries: Vec<Boundary>,
    pub prompt: Prompt,
}

/// Generates one block's trials.
pub fn generate_block_trials<R: Rng + ?Sized>(
    mission: &MissionSpec,
    block: &BlockSpec,
    rng: &mut R,
) -> Vec<TrialSpec> {
    let n = block.n_trials as usize;
    let n_cues = block.effective_cue_count() as usize;

    // cue id per trial plus the cue→rule map
    let (cue_ids, cue_rules): (Vec<u32>, Vec<Rule>) = match block.mission_kind {
        MissionKind::CuedSwitch => {
            let rules: Vec<Rule> = (0..n)
                .map(|_| {
                    if rng.random::<bool>() {
                        Rule::Letter
                    } else {
                        Rule::Number
                    }
                })
                .collect();
            (
                rules.iter().map(|r| r.index() as u32).collect(),
                Rule::ALL.to_vec(),
            )
        }
        MissionKind::LearnedRule | MissionKind::Social => {
            let mut map: Vec<Rule> = (0..n_cues).map(|i| Rule::ALL[i % 2]).collect();
            map.shuffle(rng);
            (balanced_cue_sequence(n, n_cues, rng), map)
        }
    };

    let n_congruent = n / 2;
    let mut congruency: Vec<Congruency> = (0..n)
        .map(|i| {
            if i < n_congruent {
                Congruency::Congruent
            } else {
                Congruency::Incongruent
            }
        })
        .collect();
    congruency.shuffle(rng);

    let mut trials = Vec::with_capacity(n);
    let mut prev_rule = None;
    for i in 0..n {
        let cue_id = cue_ids[i];
        let true_rule = cue_rules[cue_id as usize];
        let stimulus = draw_stimulus(congruency[i], rng);
        let partner = match block.mission_kind {
            MissionKind::Social => {
                let t = PartnerType::ALL[rng.random_range(0..PartnerType::ALL.len())];
                Some(mission.partner(t))
            }
            _ => None,
        };
        let is_switch = prev_rule.map(|p| p != true_rule);
        trials.push(TrialSpec {
            address: Address {
                mission_id: mission.mission_id,
                block_index: block.index,
                trial_index: i as u32,
            },
            mission_kind: block.mission_kind,
            cue: Cue {
                id: cue_id,
                signaled_rule: (block.mission_kind == MissionKind::CuedSwitch).then_some(true_rule),
                true_rule,
            },
            stimulus,
            is_switch,
            prev_rule,
            congruency: congruency_of(&stimulus),
            partner,
            controllability: block
                .controllability
                .filter(|_| block.mission_kind == MissionKind::Social),
        });
        prev_rule = Some(true_rule);
    }
    trials
}

/// Each cue appears `n / k` times; the remainder goes to distinct random cues.
fn balanced_cue_sequence<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<u32> {
    let mut seq: Vec<u32> = (0..n / k).flat_map(|_| 0..k as u32).collect();
    let mut extra: Vec<u32> = (0..k as u32).collect();
    extra.shuffle(rng);
    seq.extend(extra.into_iter().take(n % k));
    seq.shuffle(rng);
    seq
}

fn draw_stimulus<R: Rng + ?Sized>(congruency: Congruency, rng: &mut R) -> CodeStimulus {
    let vowel = rng.random::<bool>();
    let letter = if vowel {
        VOWELS[rng.random_range(0..VOWELS.len())]
    } else {
        CONSONANTS[rng.random_range(0..CONSONANTS.len())]
    };
    // vowel and odd both map to LEFT
    let odd = match congruency {
        Congruency::Congruent => vowel,
        Congruency::Incongruent => !vowel,
    };
    let digit = if odd {
        ODD_DIGITS[rng.random_range(0..ODD_DIGITS.len())]
    } else {
        EVEN_DIGITS[rng.random_range(0..EVEN_DIGITS.len())]
    };
    let degradation =
        Fraction::from_millionths(rng.random_range(0..=Fraction::SCALE)).expect("in range");
    CodeStimulus::new(letter, digit, degradation).expect("drawn from the alphabet")
}

/// With probability `p_correct` the correct side, else the opposite one.
pub fn partner_propose<R: Rng + ?Sized>(
    partner: &PartnerSpec,
    trial: &TrialSpec,
    rng: &mut R,
) -> ResponseSide {
    let correct = classify(&trial.stimulus, trial.cue.true_rule);
    if rng.random::<f64>() < partner.p_correct.get() {
        correct
    } else {
        correct.opposite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
enum Stage {
    Open,
    Review {
        proposed: ResponseSide,
        forced: bool,
    },
    SelfSolve {
        origin: SelfSolveOrigin,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
struct Cursor {
    mission: usize,
    block: usize,
    trial: usize,
    /// Trials resolved so far across the session.
    global: u64,
}

/// A running session. Apply actions serially with [`SessionState::submit_action`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    config: SessionConfig,
    trials: Vec<Vec<Vec<TrialSpec>>>,
    cursor: Cursor,
    stage: Stage,
    trace: Vec<PlayerAction>,
    score: i64,
    finished: bool,
    records: Vec<TrialRecord>,
}

pub fn start_session(config: SessionConfig) -> Result<SessionState, ConfigError> {
    SessionState::new(config)
}

impl SessionState {
    pub fn new(config: SessionConfig) -> Result<Self, ConfigError> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trials = config
            .missions
            .iter()
            .map(|m| {
                m.blocks
                    .iter()
                    .map(|b| generate_block_trials(m, b, &mut rng))
                    .collect()
            })
            .collect();
        Ok(SessionState {
            config,
            trials,
            cursor: Cursor {
                mission: 0,
                block: 0,
                trial: 0,
                global: 0,
            },
            stage: Stage::Open,
            trace: Vec::new(),
            score: 0,
            finished: false,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn score(&self) -> i64 {
        self.score
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TrialRecord> {
        self.records
    }

    /// Every generated trial in session order.
    pub fn trial_plan(&self) -> impl Iterator<Item = &TrialSpec> {
        self.trials.iter().flatten().flatten()
    }

    fn mission(&self) -> &MissionSpec {
        &self.config.missions[self.cursor.mission]
    }

    fn current_trial(&self) -> &TrialSpec {
        &self.trials[self.cursor.mission][self.cursor.block][self.cursor.trial]
    }

    pub fn pending_prompt(&self) -> Prompt {
        if self.finished {
            return Prompt::SessionEnd { score: self.score };
        }
        let trial = self.current_trial().clone();
        match self.stage {
            Stage::Open => match trial.partner {
                Some(partner) => Prompt::PartnerOffer { trial, partner },
                None => Prompt::TrialPresent { trial },
            },
            Stage::Review { proposed, forced } => Prompt::ProposalReview {
                trial,
                proposed,
                forced,
            },
            Stage::SelfSolve { origin } => Prompt::SelfSolve { trial, origin },
        }
    }

    /// Stable digest of the full state, used to check that rejected
    /// actions leave a session untouched.
    pub fn fingerprint(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        let mut h = DefaultHasher::new();
        bytes.hash(&mut h);
        h.finish()
    }

    fn trial_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + self.cursor.global);
        rng
    }

    pub fn submit_action(&mut self, action: PlayerAction) -> Result<StepOutcome, ProtocolError> {
        if self.finished {
            return Err(ProtocolError::SessionOver);
        }
        let prompt = self.pending_prompt();
        let legal = prompt.legal_actions();
        if !legal.contains(&action.kind()) {
            return Err(ProtocolError::IllegalAction {
                got: action.kind(),
                legal: legal.to_vec(),
            });
        }
        self.trace.push(action);
        let trial = self.current_trial().clone();
        let mission = self.mission().clone();

        let resolved = match (self.stage, action) {
            (Stage::Open, PlayerAction::Respond { side, rt_ms }) => {
                Some((side, rt_ms, 0, false, false))
            }
            (Stage::Open, PlayerAction::Avoid { .. }) => {
                self.stage = Stage::SelfSolve {
                    origin: SelfSolveOrigin::Avoid,
                };
                None
            }
            (Stage::Open, PlayerAction::Engage { .. }) => {
                let partner = trial.partner.expect("offer implies partner");
                let mut rng = self.trial_rng();
                let proposed = partner_propose(&partner, &trial, &mut rng);
                let forced = trial.controllability == Some(Controllability::Partial)
                    && rng.random::<f64>()
                        < self.config.missions[self.cursor.mission].blocks[self.cursor.block]
                            .squeeze();
                self.stage = Stage::Review { proposed, forced };
                None
            }
            (Stage::Review { proposed, forced }, PlayerAction::Accept { rt_ms }) => {
                Some((proposed, rt_ms, 0, true, forced))
            }
            (Stage::Review { .. }, PlayerAction::Check { .. }) => {
                self.stage = Stage::SelfSolve {
                    origin: SelfSolveOrigin::Check,
                };
                None
            }
            (Stage::SelfSolve { origin }, PlayerAction::Respond { side, rt_ms }) => {
                let cost = match origin {
                    SelfSolveOrigin::Avoid => mission.avoid_cost,
                    SelfSolveOrigin::Check => mission.check_cost,
                };
                Some((side, rt_ms, cost, false, false))
            }
            _ => unreachable!("legality checked above"),
        };

        let Some((response, rt_ms, cost, delegated, control_lost)) = resolved else {
            return Ok(StepOutcome {
                feedback: None,
                record: None,
                boundaries: Vec::new(),
                prompt: self.pending_prompt(),
            });
        };

        let error_class = error_taxonomy(&trial, response, trial.prev_rule)
            .expect("generated trials carry prev_rule");
        let correct = error_class == ErrorClass::None;
        let payoff = if correct {
            mission.reward_correct
        } else {
            -mission.penalty_error
        } - cost;
        self.score += payoff;
        let record = TrialRecord {
            address: trial.address,
            mission_kind: trial.mission_kind,
            cue_id: trial.cue.id,
            signaled_rule: trial.cue.signaled_rule,
            true_rule: trial.cue.true_rule,
            stimulus: trial.stimulus,
            congruency: trial.congruency,
            is_switch: trial.is_switch,
            actions: std::mem::take(&mut self.trace),
            final_response: response,
            correct,
            error_class,
            payoff,
            partner_type: trial.partner.map(|p| p.partner_type),
            controllability: trial.controllability,
            delegated,
            control_lost,
            rt_ms,
        };
        self.records.push(record.clone());
        let feedback = Feedback {
            address: trial.address,
            correct,
            payoff,
            score: self.score,
            final_response: response,
            delegated,
            control_lost,
        };
        self.stage = Stage::Open;
        let boundaries = self.advance();
        Ok(StepOutcome {
            feedback: Some(feedback),
            record: Some(record),
            boundaries,
            prompt: self.pending_prompt(),
        })
    }

    fn advance(&mut self) -> Vec<Boundary> {
        let mut out = Vec::new();
        let c = &mut self.cursor;
        c.global += 1;
        c.trial += 1;
        if c.trial < self.trials[c.mission][c.block].len() {
            return out;
        }
        let mission_id = self.config.missions[c.mission].mission_id;
        out.push(Boundary::BlockEnd {
            mission_id,
            block_index: self.config.missions[c.mission].blocks[c.block].index,
            score: self.score,
        });
        c.trial = 0;
        c.block += 1;
        if c.block < self.trials[c.mission].len() {
            return out;
        }
        out.push(Boundary::MissionEnd {
            mission_id,
            score: self.score,
        });
        c.block = 0;
        c.mission += 1;
        if c.mission >= self.trials.len() {
            self.finished = true;
        }
        out
    }
}
