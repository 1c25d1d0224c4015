//! Windowing, prediction-error distributions, KS tests, voting and metrics.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::UserSequence;

pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_STEP: usize = 4;
pub const DEFAULT_BINS: usize = 16;
/// Tie-breaking step between equal PED boundaries, one Q16.16 ulp.
pub const BOUNDARY_EPSILON: f64 = 1.0 / 65536.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("user {0} has fewer than 2 sequences")]
    TooFewSequences(u32),
    #[error("empty sample")]
    EmptySample,
    #[error("observed {observed} errors but the reference holds {reference}")]
    CountMismatch { observed: usize, reference: usize },
    #[error("{0} is undefined for these counts")]
    UndefinedMetric(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Windows at offsets `0, step, 2*step, ...`; empty when the sequence is too short.
pub fn make_windows(sequence: ArrayView2<'_, f64>, window_len: usize, step: usize) -> Vec<ArrayView2<'_, f64>> {
    window_offsets(sequence.nrows(), window_len, step)
        .into_iter()
        .map(|o| sequence.slice_move(ndarray::s![o..o + window_len, ..]))
        .collect()
}

pub fn window_offsets(len: usize, window_len: usize, step: usize) -> Vec<usize> {
    if window_len == 0 || step == 0 || len < window_len {
        return Vec::new();
    }
    (0..=(len - window_len) / step).map(|k| k * step).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub user: u32,
    pub sequence: u32,
    pub start: usize,
    pub data: Array2<f64>,
}

/// Assigns whole sequences of each user to the train or test side, then cuts
/// windows. Each user keeps at least one sequence on each side.
pub fn split_by_sequence(
    sequences: &[UserSequence],
    train_fraction: f64,
    seed: u64,
    window_len: usize,
    step: usize,
) -> Result<(Vec<Window>, Vec<Window>), DetectionError> {
    let mut by_user: BTreeMap<u32, Vec<&UserSequence>> = BTreeMap::new();
    for s in sequences {
        by_user.entry(s.user).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (user, mut seqs) in by_user {
        if seqs.len() < 2 {
            return Err(DetectionError::TooFewSequences(user));
        }
        seqs.sort_by_key(|s| s.sequence);
        seqs.shuffle(&mut rng);
        let n_train = ((train_fraction * seqs.len() as f64).round() as usize).clamp(1, seqs.len() - 1);
        for (k, s) in seqs.into_iter().enumerate() {
            let side = if k < n_train { &mut train } else { &mut test };
            for start in window_offsets(s.readings.nrows(), window_len, step) {
                side.push(Window {
                    user,
                    sequence: s.sequence,
                    start,
                    data: s.readings.slice(ndarray::s![start..start + window_len, ..]).to_owned(),
                });
            }
        }
    }
    Ok((train, test))
}

/// Quantile bin boundaries of a reference error sample with cumulative counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Ped {
    pub boundaries: Vec<f64>,
    pub counts: Vec<u32>,
    pub n: usize,
}

/// Boundary `j` (1-based) is the order statistic `x_(ceil(j n / B))`. Equal
/// boundaries are pushed apart by [`BOUNDARY_EPSILON`] steps.
pub fn build_ped(errors: &[f64], bins: usize) -> Result<Ped, DetectionError> {
    if errors.is_empty() {
        return Err(DetectionError::EmptySample);
    }
    if bins == 0 {
        return Err(DetectionError::Config("bin count must be at least 1".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut boundaries = Vec::with_capacity(bins);
    for j in 1..=bins {
        let rank = (j * n).div_ceil(bins);
        let mut b = sorted[rank - 1];
        if let Some(&prev) = boundaries.last() {
            if b <= prev {
                b = prev + BOUNDARY_EPSILON;
            }
        }
        boundaries.push(b);
    }
    let counts = boundaries.iter().map(|&b| sorted.partition_point(|&x| x <= b) as u32).collect();
    Ok(Ped { boundaries, counts, n })
}

/// A reference error sample together with its PED.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub sample: Vec<f64>,
    pub ped: Ped,
}

impl Reference {
    pub fn new(sample: Vec<f64>, bins: usize) -> Result<Self, DetectionError> {
        let ped = build_ped(&sample, bins)?;
        Ok(Reference { sample, ped })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KsDecisionConfig {
    pub alpha: f64,
    pub c_alpha: f64,
    pub refs: usize,
    pub n: usize,
    pub vote_threshold: usize,
}

impl Default for KsDecisionConfig {
    fn default() -> Self {
        KsDecisionConfig { alpha: 0.05, c_alpha: 1.358, refs: 20, n: 40, vote_threshold: 10 }
    }
}

impl KsDecisionConfig {
    /// Critical value for `alpha` from the asymptotic KS table.
    pub fn c_for_alpha(alpha: f64) -> f64 {
        (-0.5 * (alpha / 2.0).ln()).sqrt()
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DetectionError::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.refs == 0 || self.n == 0 {
            return Err(DetectionError::Config("refs and n must be at least 1".into()));
        }
        Ok(())
    }

    /// Hardware threshold on raw count differences for equal sizes `n = m`.
    pub fn count_threshold(&self) -> f64 {
        self.c_alpha * (2.0 * self.n as f64).sqrt()
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `sup |F_a - F_b|` as the exact fraction `num / (n m)`.
pub fn ks_statistic_exact(a: &[f64], b: &[f64]) -> Result<Ratio<u64>, DetectionError> {
    if a.is_empty() || b.is_empty() {
        return Err(DetectionError::EmptySample);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (n, m) = (sa.len() as u64, sb.len() as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0u64;
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        best = best.max((i as u64 * m).abs_diff(j as u64 * n));
    }
    Ok(Ratio::new_raw(best, n * m))
}

pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, DetectionError> {
    let r = ks_statistic_exact(a, b)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

/// Strict: a statistic exactly on the critical value is accepted.
pub fn ks_reject(d: f64, n: usize, m: usize, cfg: &KsDecisionConfig) -> bool {
    let (n, m) = (n as f64, m as f64);
    d > cfg.c_alpha * ((n + m) / (n * m)).sqrt()
}

/// Software KS restricted to the reference boundaries, as a count difference.
pub fn ks_boundary_counts(reference: &Reference, observed: &[f64]) -> u32 {
    let obs = sorted(observed);
    let refs = sorted(&reference.sample);
    reference
        .ped
        .boundaries
        .iter()
        .map(|&b| {
            let fr = refs.partition_point(|&x| x <= b) as i64;
            let fo = obs.partition_point(|&x| x <= b) as i64;
            (fr - fo).unsigned_abs() as u32
        })
        .max()
        .unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsHardware {
    pub d_count: u32,
    pub reject: bool,
}

/// The count-domain KS of the accelerator: `obs.count[j] = n - #{e > b_j}`.
pub fn ks_hardware(reference: &Ped, observed: &[f64], cfg: &KsDecisionConfig) -> Result<KsHardware, DetectionError> {
    if observed.len() != reference.n {
        return Err(DetectionError::CountMismatch { observed: observed.len(), reference: reference.n });
    }
    let n = observed.len() as i64;
    let d_count = reference
        .boundaries
        .iter()
        .zip(&reference.counts)
        .map(|(&b, &rc)| {
            let above = observed.iter().filter(|&&e| e > b).count() as i64;
            (rc as i64 - (n - above)).unsigned_abs() as u32
        })
        .max()
        .unwrap_or(0);
    let threshold = cfg.c_alpha * (2.0 * n as f64).sqrt();
    Ok(KsHardware { d_count, reject: d_count as f64 > threshold })
}

/// Anomaly iff at least `vote_threshold` of the decisions reject.
pub fn vote_decide(rejections: &[bool], cfg: &KsDecisionConfig) -> bool {
    rejections.iter().filter(|&&r| r).count() >= cfg.vote_threshold
}

pub fn ks_feature_vector(window_errors: &[f64], references: &[Reference]) -> Result<Vec<f64>, DetectionError> {
    references.iter().map(|r| ks_statistic(window_errors, &r.sample)).collect()
}

/// Mean-error baseline: anomaly iff the window mean exceeds the `(1 - alpha)`
/// quantile of validation window means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanThreshold {
    pub threshold: f64,
}

impl MeanThreshold {
    pub fn fit(validation_means: &[f64], alpha: f64) -> Result<Self, DetectionError> {
        if validation_means.is_empty() {
            return Err(DetectionError::EmptySample);
        }
        let s = sorted(validation_means);
        let rank = (((1.0 - alpha) * s.len() as f64).ceil() as usize).clamp(1, s.len());
        Ok(MeanThreshold { threshold: s[rank - 1] })
    }

    pub fn is_anomaly(&self, errors: &[f64]) -> bool {
        mean(errors) > self.threshold
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Positive means an impostor was flagged. Precision and F1 are 0 when
/// nothing is flagged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, impostor: bool, flagged: bool) {
        match (impostor, flagged) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub tnr: f64,
    pub tpr: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactMetrics {
    pub tnr: Ratio<u64>,
    pub tpr: Ratio<u64>,
    pub accuracy: Ratio<u64>,
    pub precision: Ratio<u64>,
    pub recall: Ratio<u64>,
    pub f1: Ratio<u64>,
}

pub fn confusion_metrics_exact(c: &ConfusionCounts) -> Result<ExactMetrics, DetectionError> {
    let negatives = c.tn + c.fp;
    let positives = c.tp + c.fn_;
    if negatives == 0 {
        return Err(DetectionError::UndefinedMetric("TNR"));
    }
    if positives == 0 {
        return Err(DetectionError::UndefinedMetric("TPR"));
    }
    let tnr = Ratio::new(c.tn, negatives);
    let tpr = Ratio::new(c.tp, positives);
    let precision = if c.tp == 0 { Ratio::from_integer(0) } else { Ratio::new(c.tp, c.tp + c.fp) };
    let f1 = if c.tp == 0 { Ratio::from_integer(0) } else { Ratio::new(2 * c.tp, 2 * c.tp + c.fp + c.fn_) };
    Ok(ExactMetrics { tnr, tpr, accuracy: Ratio::new(c.tn + c.tp, negatives + positives), precision, recall: tpr, f1 })
}

pub fn confusion_metrics(c: &ConfusionCounts) -> Result<Metrics, DetectionError> {
    let e = confusion_metrics_exact(c)?;
    let f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
    Ok(Metrics { tnr: f(e.tnr), tpr: f(e.tpr), accuracy: f(e.accuracy), precision: f(e.precision), recall: f(e.recall), f1: f(e.f1) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelCost {
    pub fnr: f64,
    pub fpr: f64,
    pub time: f64,
    pub mem: f64,
}

/// Weights `[a1, a2, b1, b2]` for FNR, FPR, time and memory.
pub fn combined_score(models: &[ModelCost], weights: [f64; 4]) -> Result<Vec<f64>, DetectionError> {
    if (weights.iter().sum::<f64>() - 2.0).abs() > 1e-9 {
        return Err(DetectionError::Config(format!("weights sum to {}, expected 2", weights.iter().sum::<f64>())));
    }
    let min = |f: fn(&ModelCost) -> f64, name: &'static str| -> Result<f64, DetectionError> {
        let m = models.iter().map(f).fold(f64::INFINITY, f64::min);
        if m > 0.0 && m.is_finite() {
            Ok(m)
        } else {
            Err(DetectionError::UndefinedMetric(name))
        }
    };
    let mins = [min(|m| m.fnr, "NormFNR")?, min(|m| m.fpr, "NormFPR")?, min(|m| m.time, "NormTime")?, min(|m| m.mem, "NormMem")?];
    Ok(models
        .iter()
        .map(|m| combined_score_normalized([m.fnr / mins[0], m.fpr / mins[1], m.time / mins[2], m.mem / mins[3]], weights))
        .collect())
}

/// Score from already-normalized `[FNR, FPR, time, mem]`.
pub fn combined_score_normalized(norm: [f64; 4], weights: [f64; 4]) -> f64 {
    2.0 / norm.iter().zip(&weights).map(|(n, w)| n * w).sum::<f64>()
}
