//! Behavioral metrics computed from trial records.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::domain::{Congruency, Controllability, ErrorClass, MissionKind, PartnerType};
use crate::engine::TrialRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("incomplete table: {0}")]
    IncompleteTable(String),
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some(xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Switch minus repeat. RT terms use correct trials only; first trials of
/// a block carry no switch label and are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchCostResult {
    pub d_rt_ms: f64,
    pub d_acc: f64,
    pub sem_rt_ms: Option<f64>,
    pub sem_acc: Option<f64>,
    pub n_switch: usize,
    pub n_repeat: usize,
    pub rt_switch_ms: f64,
    pub rt_repeat_ms: f64,
    pub acc_switch: f64,
    pub acc_repeat: f64,
}

struct Condition {
    n: usize,
    correct: usize,
    rts: Vec<f64>,
}

impl Condition {
    fn new() -> Self {
        Condition {
            n: 0,
            correct: 0,
            rts: Vec::new(),
        }
    }
    fn acc(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

/// Single-session switch cost. The SEMs here are standard errors of the
/// difference; [`aggregate_switch_costs`] gives within-subject SEMs.
pub fn switch_cost(records: &[TrialRecord]) -> Result<SwitchCostResult, AnalyticsError> {
    switch_cost_by(records, |r| r.is_switch)
}

/// As [`switch_cost`] with caller-supplied switch labels.
pub fn switch_cost_by(
    records: &[TrialRecord],
    label: impl Fn(&TrialRecord) -> Option<bool>,
) -> Result<SwitchCostResult, AnalyticsError> {
    let mut sw = Condition::new();
    let mut rep = Condition::new();
    for r in records {
        let Some(is_switch) = label(r) else { continue };
        let c = if is_switch { &mut sw } else { &mut rep };
        c.n += 1;
        if r.correct {
            c.correct += 1;
            c.rts.push(r.rt_ms as f64);
        }
    }
    if sw.n == 0 || rep.n == 0 {
        return Err(AnalyticsError::Insufficient(format!(
            "need switch and repeat trials (got {} and {})",
            sw.n, rep.n
        )));
    }
    if sw.rts.is_empty() || rep.rts.is_empty() {
        return Err(AnalyticsError::Insufficient(
            "no correct trials in a condition".into(),
        ));
    }
    let sem_rt_ms = match (sample_var(&sw.rts), sample_var(&rep.rts)) {
        (Some(vs), Some(vr)) => Some((vs / sw.rts.len() as f64 + vr / rep.rts.len() as f64).sqrt()),
        _ => None,
    };
    let (ps, pr) = (sw.acc(), rep.acc());
    let sem_acc = Some((ps * (1.0 - ps) / sw.n as f64 + pr * (1.0 - pr) / rep.n as f64).sqrt());
    let (rt_s, rt_r) = (mean(&sw.rts), mean(&rep.rts));
    Ok(SwitchCostResult {
        d_rt_ms: rt_s - rt_r,
        d_acc: ps - pr,
        sem_rt_ms,
        sem_acc,
        n_switch: sw.n,
        n_repeat: rep.n,
        rt_switch_ms: rt_s,
        rt_repeat_ms: rt_r,
        acc_switch: ps,
        acc_repeat: pr,
    })
}

/// Across-session means of per-session switch costs, with Cousineau–Morey
/// within-subject SEMs on the (session × {switch, repeat}) tables.
pub fn aggregate_switch_costs(
    results: &[SwitchCostResult],
) -> Result<SwitchCostResult, AnalyticsError> {
    if results.len() < 2 {
        return Err(AnalyticsError::Insufficient(
            "need at least two sessions".into(),
        ));
    }
    let rt_table: Vec<Vec<f64>> = results
        .iter()
        .map(|r| vec![r.rt_switch_ms, r.rt_repeat_ms])
        .collect();
    let acc_table: Vec<Vec<f64>> = results
        .iter()
        .map(|r| vec![r.acc_switch, r.acc_repeat])
        .collect();
    let sem_rt = within_subject_sem(&rt_table)?;
    let sem_acc = within_subject_sem(&acc_table)?;
    let avg =
        |f: fn(&SwitchCostResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    Ok(SwitchCostResult {
        d_rt_ms: avg(|r| r.d_rt_ms),
        d_acc: avg(|r| r.d_acc),
        sem_rt_ms: Some(sem_rt[0].max(sem_rt[1])),
        sem_acc: Some(sem_acc[0].max(sem_acc[1])),
        n_switch: results.iter().map(|r| r.n_switch).sum(),
        n_repeat: results.iter().map(|r| r.n_repeat).sum(),
        rt_switch_ms: avg(|r| r.rt_switch_ms),
        rt_repeat_ms: avg(|r| r.rt_repeat_ms),
        acc_switch: avg(|r| r.acc_switch),
        acc_repeat: avg(|r| r.acc_repeat),
    })
}

/// Cousineau normalization with the Morey correction; one SEM per column.
pub fn within_subject_sem(table: &[Vec<f64>]) -> Result<Vec<f64>, AnalyticsError> {
    let n = table.len();
    if n < 2 {
        return Err(AnalyticsError::IncompleteTable(format!(
            "need >= 2 subjects, got {n}"
        )));
    }
    let c = table[0].len();
    if c < 2 {
        return Err(AnalyticsError::IncompleteTable(format!(
            "need >= 2 conditions, got {c}"
        )));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != c || row.iter().any(|x| !x.is_finite()) {
            return Err(AnalyticsError::IncompleteTable(format!(
                "row {i} has missing cells"
            )));
        }
    }
    let grand = table.iter().flatten().sum::<f64>() / (n * c) as f64;
    let normalized: Vec<Vec<f64>> = table
        .iter()
        .map(|row| {
            let m = mean(row);
            row.iter().map(|x| x - m + grand).collect()
        })
        .collect();
    let morey = (c as f64 / (c as f64 - 1.0)).sqrt();
    Ok((0..c)
        .map(|j| {
            let col: Vec<f64> = normalized.iter().map(|r| r[j]).collect();
            let sd = sample_var(&col).unwrap_or(0.0).sqrt();
            morey * sd / (n as f64).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub total: usize,
    /// Indexed by [`ErrorClass::index`].
    pub counts: [usize; 4],
    pub rates: [f64; 4],
}

impl ErrorBreakdown {
    pub fn count(&self, class: ErrorClass) -> usize {
        self.counts[class.index()]
    }

    pub fn rate(&self, class: ErrorClass) -> f64 {
        self.rates[class.index()]
    }
}

pub fn error_breakdown(records: &[TrialRecord]) -> ErrorBreakdown {
    let mut counts = [0usize; 4];
    for r in records {
        counts[r.error_class.index()] += 1;
    }
    let total = records.len();
    let mut rates = [0.0; 4];
    if total > 0 {
        for (rate, &count) in rates.iter_mut().zip(&counts) {
            *rate = count as f64 / total as f64;
        }
    }
    ErrorBreakdown {
        total,
        counts,
        rates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub exposure_index: u32,
    /// Accuracy on incongruent trials, where the chosen rule is identifiable.
    pub higher_order_acc: Option<f64>,
    /// Accuracy on congruent trials, where only classification matters.
    pub lower_order_acc: Option<f64>,
    pub n: usize,
    pub n_higher: usize,
    pub n_lower: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

pub const LOW_CONFIDENCE_N: usize = 5;

impl LearningCurve {
    /// Pools per-session curves exposure by exposure, weighting by counts.
    pub fn pool<'a>(curves: impl IntoIterator<Item = &'a LearningCurve>) -> LearningCurve {
        let mut acc: BTreeMap<u32, [usize; 5]> = BTreeMap::new();
        let hits = |a: Option<f64>, n: usize| a.map_or(0, |a| (a * n as f64).round() as usize);
        for c in curves {
            for p in &c.points {
                let e = acc.entry(p.exposure_index).or_default();
                e[0] += p.n;
                e[1] += hits(p.higher_order_acc, p.n_higher);
                e[2] += p.n_higher;
                e[3] += hits(p.lower_order_acc, p.n_lower);
                e[4] += p.n_lower;
            }
        }
        let ratio = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
        LearningCurve {
            points: acc
                .into_iter()
                .map(|(exposure_index, [n, hh, nh, hl, nl])| CurvePoint {
                    exposure_index,
                    higher_order_acc: ratio(hh, nh),
                    lower_order_acc: ratio(hl, nl),
                    n,
                    n_higher: nh,
                    n_lower: nl,
                    low_confidence: n < LOW_CONFIDENCE_N,
                })
                .collect(),
        }
    }

    pub fn point(&self, exposure: u32) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.exposure_index == exposure)
    }

    /// Pooled higher-order accuracy over exposures `>= from`.
    pub fn higher_order_from(&self, from: u32) -> Option<f64> {
        let (hits, n) = self
            .points
            .iter()
            .filter(|p| p.exposure_index >= from)
            .filter_map(|p| {
                p.higher_order_acc
                    .map(|a| (a * p.n_higher as f64, p.n_higher))
            })
            .fold((0.0, 0usize), |(h, n), (a, k)| (h + a, n + k));
        (n > 0).then(|| hits / n as f64)
    }

    /// Least-squares slope of higher-order accuracy on exposure index,
    /// weighted by trial counts.
    pub fn slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64, f64)> = self
            .points
            .iter()
            .filter_map(|p| {
                p.higher_order_acc
                    .map(|a| (p.exposure_index as f64, a, p.n_higher as f64))
            })
            .collect();
        let w: f64 = pts.iter().map(|p| p.2).sum();
        if pts.len() < 2 || w == 0.0 {
            return None;
        }
        let mx = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / w;
        let my = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / w;
        let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

/// Accuracy by the number of times each cue has been shown in its block.
pub fn learning_curve(records: &[TrialRecord]) -> LearningCurve {
    #[derive(Default)]
    struct Acc {
        n: usize,
        hi: (usize, usize),
        lo: (usize, usize),
    }
    let mut seen: HashMap<(u32, u32, u32), u32> = HashMap::new();
    let mut by_exposure: BTreeMap<u32, Acc> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.mission_kind == MissionKind::LearnedRule)
    {
        let k = seen
            .entry((r.address.mission_id, r.address.block_index, r.cue_id))
            .or_insert(0);
        *k += 1;
        let acc = by_exposure.entry(*k).or_default();
        acc.n += 1;
        let bucket = match r.congruency {
            Congruency::Incongruent => &mut acc.hi,
            Congruency::Congruent => &mut acc.lo,
        };
        bucket.0 += r.correct as usize;
        bucket.1 += 1;
    }
    let ratio = |(h, n): (usize, usize)| (n > 0).then(|| h as f64 / n as f64);
    LearningCurve {
        points: by_exposure
            .into_iter()
            .map(|(exposure_index, a)| CurvePoint {
                exposure_index,
                higher_order_acc: ratio(a.hi),
                lower_order_acc: ratio(a.lo),
                n: a.n,
                n_higher: a.hi.1,
                n_lower: a.lo.1,
                low_confidence: a.n < LOW_CONFIDENCE_N,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustCell {
    pub engaged: usize,
    pub offers: usize,
}

impl TrustCell {
    pub fn p_engage(&self) -> Option<f64> {
        (self.offers > 0).then(|| self.engaged as f64 / self.offers as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrustMatrix {
    pub cells: BTreeMap<(PartnerType, Controllability), TrustCell>,
}

impl TrustMatrix {
    pub fn cell(&self, partner: PartnerType, phase: Controllability) -> TrustCell {
        self.cells
            .get(&(partner, phase))
            .copied()
            .unwrap_or(TrustCell {
                engaged: 0,
                offers: 0,
            })
    }

    /// Pooled over phases.
    pub fn by_partner(&self, partner: PartnerType) -> TrustCell {
        self.cells.iter().filter(|((p, _), _)| *p == partner).fold(
            TrustCell {
                engaged: 0,
                offers: 0,
            },
            |acc, (_, c)| TrustCell {
                engaged: acc.engaged + c.engaged,
                offers: acc.offers + c.offers,
            },
        )
    }

    /// Strict KIND > CLUMSY > JERK ordering of engagement rates.
    pub fn ordered(&self) -> bool {
        let p: Vec<Option<f64>> = PartnerType::ALL
            .iter()
            .map(|&t| self.by_partner(t).p_engage())
            .collect();
        matches!((p[0], p[1], p[2]), (Some(k), Some(c), Some(j)) if k > c && c > j)
    }
}

/// P(ENGAGE | partner type, controllability).
pub fn trust_matrix(records: &[TrialRecord]) -> TrustMatrix {
    let mut m = TrustMatrix::default();
    for r in records {
        let (Some(engaged), Some(p), Some(c)) = (r.engaged(), r.partner_type, r.controllability)
        else {
            continue;
        };
        let cell = m.cells.entry((p, c)).or_insert(TrustCell {
            engaged: 0,
            offers: 0,
        });
        cell.offers += 1;
        cell.engaged += engaged as usize;
    }
    m
}

/// Trust matrices over `n_bins` consecutive slices of the social trials.
pub fn trust_series(records: &[TrialRecord], n_bins: usize) -> Vec<TrustMatrix> {
    let social: Vec<TrialRecord> = records
        .iter()
        .filter(|r| r.engaged().is_some())
        .cloned()
        .collect();
    if n_bins == 0 {
        return Vec::new();
    }
    (0..n_bins)
        .map(|b| {
            let lo = b * social.len() / n_bins;
            let hi = (b + 1) * social.len() / n_bins;
            trust_matrix(&social[lo..hi])
        })
        .collect()
}

/// The last third of the social trials.
pub fn final_third(records: &[TrialRecord]) -> Vec<TrialRecord> {
    let social: Vec<&TrialRecord> = records.iter().filter(|r| r.engaged().is_some()).collect();
    let start = social.len() - social.len().div_ceil(3);
    social[start..].iter().map(|r| (*r).clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceRates {
    pub full: Option<f64>,
    pub partial: Option<f64>,
    pub n_full: usize,
    pub n_partial: usize,
}

impl AvoidanceRates {
    /// PARTIAL minus FULL.
    pub fn delta(&self) -> Option<f64> {
        Some(self.partial? - self.full?)
    }
}

/// Fraction of partner offers answered with AVOID, per phase.
pub fn avoidance_rate(records: &[TrialRecord]) -> AvoidanceRates {
    let mut counts = [(0usize, 0usize); 2];
    for r in records {
        let (Some(engaged), Some(c)) = (r.engaged(), r.controllability) else {
            continue;
        };
        let i = match c {
            Controllability::Full => 0,
            Controllability::Partial => 1,
        };
        counts[i].0 += (!engaged) as usize;
        counts[i].1 += 1;
    }
    let rate = |(a, n): (usize, usize)| (n > 0).then(|| a as f64 / n as f64);
    AvoidanceRates {
        full: rate(counts[0]),
        partial: rate(counts[1]),
        n_full: counts[0].1,
        n_partial: counts[1].1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided Student-t p-value.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<AssociationResult, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::Insufficient(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalyticsError::Insufficient(format!(
            "need n >= 3, got {n}"
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::Undefined("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(AssociationResult { r, p, n })
}
