//! Task vocabulary: codes, cues, rules, partners, mission layout, and the
//! classification logic that decides whether a response is correct.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which feature of the code is relevant on a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    Letter,
    Number,
}

impl Rule {
    pub const ALL: [Rule; 2] = [Rule::Letter, Rule::Number];

    pub fn other(self) -> Rule {
        match self {
            Rule::Letter => Rule::Number,
            Rule::Number => Rule::Letter,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Rule::Letter => 0,
            Rule::Number => 1,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Letter => "LETTER",
            Rule::Number => "NUMBER",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResponseSide {
    Left,
    Right,
}

impl ResponseSide {
    pub const ALL: [ResponseSide; 2] = [ResponseSide::Left, ResponseSide::Right];

    pub fn opposite(self) -> ResponseSide {
        match self {
            ResponseSide::Left => ResponseSide::Right,
            ResponseSide::Right => ResponseSide::Left,
        }
    }
}

impl fmt::Display for ResponseSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResponseSide::Left => "LEFT",
            ResponseSide::Right => "RIGHT",
        })
    }
}

/// A value in `[0, 1]` held as integer millionths.
///
/// Event logs carry no floating-point numbers, so every probability or
/// level that reaches a log (partner reliability, squeeze probability,
/// stimulus degradation) is stored in this form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fraction(u32);

impl Fraction {
    pub const SCALE: u32 = 1_000_000;
    pub const ZERO: Fraction = Fraction(0);
    pub const ONE: Fraction = Fraction(Self::SCALE);

    pub fn from_millionths(v: u32) -> Result<Self, DomainError> {
        if v > Self::SCALE {
            return Err(DomainError::FractionOutOfRange(
                v as f64 / Self::SCALE as f64,
            ));
        }
        Ok(Fraction(v))
    }

    /// Rounds to the nearest millionth.
    pub fn from_f64(v: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&v) {
            return Err(DomainError::FractionOutOfRange(v));
        }
        Ok(Fraction((v * Self::SCALE as f64).round() as u32))
    }

    pub fn millionths(self) -> u32 {
        self.0
    }

    pub fn get(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("value {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("letter {0:?} is not in the code alphabet")]
    BadLetter(char),
    #[error("digit {0} is not in the code digit set")]
    BadDigit(u8),
    #[error("switch trial without a previous rule")]
    MissingPrevRule,
}

pub const VOWELS: [char; 4] = ['A', 'E', 'I', 'U'];
pub const CONSONANTS: [char; 4] = ['G', 'K', 'M', 'R'];
pub const ODD_DIGITS: [u8; 4] = [1, 3, 5, 7];
pub const EVEN_DIGITS: [u8; 4] = [2, 4, 6, 8];

/// The two-feature code shown on each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStimulus", into = "RawStimulus")]
pub struct CodeStimulus {
    letter: char,
    digit: u8,
    degradation: Fraction,
}

#[derive(Serialize, Deserialize)]
struct RawStimulus {
    letter: char,
    digit: u8,
    degradation: Fraction,
}

impl TryFrom<RawStimulus> for CodeStimulus {
    type Error = DomainError;
    fn try_from(raw: RawStimulus) -> Result<Self, Self::Error> {
        CodeStimulus::new(raw.letter, raw.digit, raw.degradation)
    }
}

impl From<CodeStimulus> for RawStimulus {
    fn from(s: CodeStimulus) -> Self {
        RawStimulus {
            letter: s.letter,
            digit: s.digit,
            degradation: s.degradation,
        }
    }
}

impl CodeStimulus {
    pub fn new(letter: char, digit: u8, degradation: Fraction) -> Result<Self, DomainError> {
        if !VOWELS.contains(&letter) && !CONSONANTS.contains(&letter) {
            return Err(DomainError::BadLetter(letter));
        }
        if !ODD_DIGITS.contains(&digit) && !EVEN_DIGITS.contains(&digit) {
            return Err(DomainError::BadDigit(digit));
        }
        Ok(CodeStimulus {
            letter,
            digit,
            degradation,
        })
    }

    /// A noise-free stimulus; panics on an invalid letter or digit.
    pub fn clean(letter: char, digit: u8) -> Self {
        Self::new(letter, digit, Fraction::ZERO).expect("valid code")
    }

    pub fn letter(&self) -> char {
        self.letter
    }

    pub fn digit(&self) -> u8 {
        self.digit
    }

    pub fn degradation(&self) -> Fraction {
        self.degradation
    }

    pub fn is_vowel(&self) -> bool {
        VOWELS.contains(&self.letter)
    }

    pub fn is_odd(&self) -> bool {
        self.digit % 2 == 1
    }

    /// Every valid (letter, digit) pair with zero degradation.
    pub fn all_clean() -> impl Iterator<Item = CodeStimulus> {
        VOWELS.iter().chain(CONSONANTS.iter()).flat_map(|&l| {
            ODD_DIGITS
                .iter()
                .chain(EVEN_DIGITS.iter())
                .map(move |&d| CodeStimulus::clean(l, d))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Congruency {
    Congruent,
    Incongruent,
}

/// LETTER: vowel → LEFT, consonant → RIGHT. NUMBER: odd → LEFT, even → RIGHT.
pub fn classify(stimulus: &CodeStimulus, rule: Rule) -> ResponseSide {
    let left = match rule {
        Rule::Letter => stimulus.is_vowel(),
        Rule::Number => stimulus.is_odd(),
    };
    if left {
        ResponseSide::Left
    } else {
        ResponseSide::Right
    }
}

pub fn congruency_of(stimulus: &CodeStimulus) -> Congruency {
    if classify(stimulus, Rule::Letter) == classify(stimulus, Rule::Number) {
        Congruency::Congruent
    } else {
        Congruency::Incongruent
    }
}

/// The car cue. `signaled_rule` is only set when the rule is announced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cue {
    pub id: u32,
    pub signaled_rule: Option<Rule>,
    pub true_rule: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PartnerType {
    Kind,
    Clumsy,
    Jerk,
}

impl PartnerType {
    pub const ALL: [PartnerType; 3] = [PartnerType::Kind, PartnerType::Clumsy, PartnerType::Jerk];

    pub fn default_p_correct(self) -> f64 {
        match self {
            PartnerType::Kind => 0.85,
            PartnerType::Clumsy => 0.55,
            PartnerType::Jerk => 0.20,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PartnerType::Kind => 0,
            PartnerType::Clumsy => 1,
            PartnerType::Jerk => 2,
        }
    }
}

impl fmt::Display for PartnerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartnerType::Kind => "KIND",
            PartnerType::Clumsy => "CLUMSY",
            PartnerType::Jerk => "JERK",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartnerSpec {
    pub partner_type: PartnerType,
    pub p_correct: Fraction,
    pub avatar_id: u32,
}

impl PartnerSpec {
    /// Default reliability; the avatar id is the type index, so each type
    /// is recognisable by its avatar.
    pub fn default_for(partner_type: PartnerType) -> Self {
        PartnerSpec {
            partner_type,
            p_correct: Fraction::from_f64(partner_type.default_p_correct()).expect("in range"),
            avatar_id: partner_type.index() as u32,
        }
    }

    pub fn defaults() -> Vec<PartnerSpec> {
        PartnerType::ALL
            .iter()
            .map(|&t| Self::default_for(t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionKind {
    CuedSwitch,
    LearnedRule,
    Social,
}

impl MissionKind {
    pub fn for_mission(mission_id: u32) -> Option<MissionKind> {
        match mission_id {
            1 => Some(MissionKind::CuedSwitch),
            2 => Some(MissionKind::LearnedRule),
            3 => Some(MissionKind::Social),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Controllability {
    Full,
    Partial,
}

impl fmt::Display for Controllability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Controllability::Full => "FULL",
            Controllability::Partial => "PARTIAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub index: u32,
    pub n_trials: u32,
    pub mission_kind: MissionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue_set_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllability: Option<Controllability>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squeeze_prob: Option<Fraction>,
}

impl BlockSpec {
    pub fn cued_switch(index: u32, n_trials: u32) -> Self {
        BlockSpec {
            index,
            n_trials,
            mission_kind: MissionKind::CuedSwitch,
            cue_set_size: None,
            controllability: None,
            squeeze_prob: None,
        }
    }

    pub fn learned_rule(index: u32, n_trials: u32, cue_set_size: u32) -> Self {
        BlockSpec {
            index,
            n_trials,
            mission_kind: MissionKind::LearnedRule,
            cue_set_size: Some(cue_set_size),
            controllability: None,
            squeeze_prob: None,
        }
    }

    pub fn social(
        index: u32,
        n_trials: u32,
        controllability: Controllability,
        squeeze_prob: Option<f64>,
    ) -> Self {
        BlockSpec {
            index,
            n_trials,
            mission_kind: MissionKind::Social,
            cue_set_size: None,
            controllability: Some(controllability),
            squeeze_prob: squeeze_prob.map(|p| Fraction::from_f64(p).expect("probability")),
        }
    }

    /// Number of cars in the block. Cued switching always uses one car per
    /// rule; social blocks default to two.
    pub fn effective_cue_count(&self) -> u32 {
        match self.mission_kind {
            MissionKind::CuedSwitch => 2,
            MissionKind::LearnedRule => self.cue_set_size.unwrap_or(2),
            MissionKind::Social => self.cue_set_size.unwrap_or(2),
        }
    }

    pub fn squeeze(&self) -> f64 {
        match self.controllability {
            Some(Controllability::Partial) => self.squeeze_prob.map(Fraction::get).unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub mission_id: u32,
    pub blocks: Vec<BlockSpec>,
    pub reward_correct: i64,
    pub penalty_error: i64,
    pub avoid_cost: i64,
    pub check_cost: i64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partners: Vec<PartnerSpec>,
}

pub const DEFAULT_REWARD: i64 = 10;
pub const DEFAULT_PENALTY: i64 = 10;
pub const DEFAULT_AVOID_COST: i64 = 2;
pub const DEFAULT_CHECK_COST: i64 = 2;

impl MissionSpec {
    fn with_blocks(mission_id: u32, blocks: Vec<BlockSpec>) -> Self {
        let partners = if mission_id == 3 {
            PartnerSpec::defaults()
        } else {
            Vec::new()
        };
        MissionSpec {
            mission_id,
            blocks,
            reward_correct: DEFAULT_REWARD,
            penalty_error: DEFAULT_PENALTY,
            avoid_cost: DEFAULT_AVOID_COST,
            check_cost: DEFAULT_CHECK_COST,
            partners,
        }
    }

    /// Three cued-switching blocks of 48 trials.
    pub fn default_mission1() -> Self {
        Self::with_blocks(1, (0..3).map(|i| BlockSpec::cued_switch(i, 48)).collect())
    }

    /// Three learned-rule blocks of 60 trials with 2, 3, then 4 cars.
    pub fn default_mission2() -> Self {
        Self::with_blocks(
            2,
            (0..3)
                .map(|i| BlockSpec::learned_rule(i, 60, i + 2))
                .collect(),
        )
    }

    /// A full-control block then a partial-control block, 60 trials each.
    pub fn default_mission3() -> Self {
        Self::with_blocks(
            3,
            vec![
                BlockSpec::social(0, 60, Controllability::Full, None),
                BlockSpec::social(1, 60, Controllability::Partial, Some(0.8)),
            ],
        )
    }

    pub fn default_for(mission_id: u32) -> Option<Self> {
        match mission_id {
            1 => Some(Self::default_mission1()),
            2 => Some(Self::default_mission2()),
            3 => Some(Self::default_mission3()),
            _ => None,
        }
    }

    pub fn kind(&self) -> Option<MissionKind> {
        MissionKind::for_mission(self.mission_id)
    }

    pub fn n_trials(&self) -> u32 {
        self.blocks.iter().map(|b| b.n_trials).sum()
    }

    pub fn partner(&self, partner_type: PartnerType) -> PartnerSpec {
        self.partners
            .iter()
            .copied()
            .find(|p| p.partner_type == partner_type)
            .unwrap_or_else(|| PartnerSpec::default_for(partner_type))
    }
}

/// (mission, block, trial); ordering is lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address {
    pub mission_id: u32,
    pub block_index: u32,
    pub trial_index: u32,
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "m{}/b{}/t{}",
            self.mission_id, self.block_index, self.trial_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub address: Address,
    pub mission_kind: MissionKind,
    pub cue: Cue,
    pub stimulus: CodeStimulus,
    /// `None` on the first trial of a block.
    pub is_switch: Option<bool>,
    /// True rule of the previous trial in the block.
    pub prev_rule: Option<Rule>,
    pub congruency: Congruency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<PartnerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllability: Option<Controllability>,
}

impl TrialSpec {
    pub fn correct_side(&self) -> ResponseSide {
        classify(&self.stimulus, self.cue.true_rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorClass {
    None,
    LowerOrder,
    HigherOrder,
    OutContext,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 4] = [
        ErrorClass::None,
        ErrorClass::LowerOrder,
        ErrorClass::HigherOrder,
        ErrorClass::OutContext,
    ];

    pub fn index(self) -> usize {
        match self {
            ErrorClass::None => 0,
            ErrorClass::LowerOrder => 1,
            ErrorClass::HigherOrder => 2,
            ErrorClass::OutContext => 3,
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::None => "NONE",
            ErrorClass::LowerOrder => "LOWER_ORDER",
            ErrorClass::HigherOrder => "HIGHER_ORDER",
            ErrorClass::OutContext => "OUT_CONTEXT",
        })
    }
}

/// Attributes an error to the perceptual level or to the rule level.
///
/// With two responses an incongruent error always equals the other rule's
/// mapping, so it is a rule-level error; on a switch trial where that other
/// rule was the previous one it is an out-of-context error.
pub fn error_taxonomy(
    trial: &TrialSpec,
    response: ResponseSide,
    prev_rule: Option<Rule>,
) -> Result<ErrorClass, DomainError> {
    let switch = trial.is_switch.unwrap_or(false);
    if switch && prev_rule.is_none() {
        return Err(DomainError::MissingPrevRule);
    }
    let true_rule = trial.cue.true_rule;
    if response == classify(&trial.stimulus, true_rule) {
        return Ok(ErrorClass::None);
    }
    if congruency_of(&trial.stimulus) == Congruency::Congruent {
        return Ok(ErrorClass::LowerOrder);
    }
    let other = true_rule.other();
    if switch && prev_rule == Some(other) {
        Ok(ErrorClass::OutContext)
    } else {
        Ok(ErrorClass::HigherOrder)
    }
}

/// Lists every invariant violation in a mission spec; empty means valid.
pub fn validate_mission(spec: &MissionSpec) -> Vec<String> {
    let mut out = Vec::new();
    let kind = match spec.kind() {
        Some(k) => k,
        None => {
            out.push(format!(
                "mission_id {} is not one of 1, 2, 3",
                spec.mission_id
            ));
            return out;
        }
    };
    if spec.blocks.is_empty() {
        out.push(format!("mission {} has no blocks", spec.mission_id));
    }
    if spec.reward_correct < 0
        || spec.penalty_error < 0
        || spec.avoid_cost < 0
        || spec.check_cost < 0
    {
        out.push(format!(
            "mission {}: payoffs and costs must be non-negative",
            spec.mission_id
        ));
    }
    for (i, b) in spec.blocks.iter().enumerate() {
        let at = format!("mission {} block {}", spec.mission_id, i);
        if b.index as usize != i {
            out.push(format!("{at}: index {} out of order", b.index));
        }
        if b.mission_kind != kind {
            out.push(format!(
                "{at}: kind {:?} does not match mission {}",
                b.mission_kind, spec.mission_id
            ));
        }
        if b.n_trials < 2 {
            out.push(format!(
                "{at}: n_trials must be at least 2 (got {})",
                b.n_trials
            ));
        }
        match b.mission_kind {
            MissionKind::LearnedRule => match b.cue_set_size {
                None => out.push(format!("{at}: LEARNED_RULE block requires cue_set_size")),
                Some(k) if k < 2 => {
                    out.push(format!("{at}: cue_set_size must be at least 2 (got {k})"))
                }
                _ => {}
            },
            MissionKind::Social => {
                if let Some(k) = b.cue_set_size {
                    if k < 2 {
                        out.push(format!("{at}: cue_set_size must be at least 2 (got {k})"));
                    }
                }
                match b.controllability {
                    None => out.push(format!("{at}: SOCIAL block requires controllability")),
                    Some(Controllability::Partial) if b.squeeze_prob.is_none() => {
                        out.push(format!("{at}: PARTIAL block requires squeeze_prob"))
                    }
                    _ => {}
                }
            }
            MissionKind::CuedSwitch => {}
        }
    }
    if kind == MissionKind::Social {
        for t in PartnerType::ALL {
            if spec.partners.iter().filter(|p| p.partner_type == t).count() > 1 {
                out.push(format!(
                    "mission {}: duplicate partner {t}",
                    spec.mission_id
                ));
            }
        }
    }
    out
}
