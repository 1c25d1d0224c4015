//! End-to-end detection scenarios over user sequences.
//!
//! LAD: a per-owner predictor turns readings into prediction errors, windows
//! of errors are compared against owner reference PEDs, and a window is
//! flagged by the KS vote, by a one-class SVM over KS features, or by the
//! mean-error threshold baseline. IDaaS: two-class models over raw or
//! hand-made window features.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{krr_features, DataError, UserSequence};
use crate::detection::{
    confusion_metrics, ks_feature_vector, ks_reject, ks_statistic, mean, split_by_sequence, vote_decide, ConfusionCounts,
    DetectionError, KsDecisionConfig, MeanThreshold, Metrics, Reference,
};
use crate::models::{
    infer_krr, infer_lr, infer_mlp, infer_ocsvm, infer_svm, predict_series, train, ModelBundle, ModelError, ModelKind, OneClassSvm,
    TrainConfig, TrainSet,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Idaas,
    Lad,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "idaas" => Ok(Scenario::Idaas),
            "lad" => Ok(Scenario::Lad),
            _ => Err(format!("unknown scenario '{s}' (expected idaas or lad)")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Idaas => "idaas",
            Scenario::Lad => "lad",
        })
    }
}

impl Scenario {
    /// LAD trains on the owner only, so it needs a one-class or predictive model.
    pub fn allows(self, kind: ModelKind) -> bool {
        match self {
            Scenario::Lad => matches!(kind, ModelKind::Lstm | ModelKind::Gru | ModelKind::Ocsvm),
            Scenario::Idaas => !kind.is_one_class() && !matches!(kind, ModelKind::Lstm | ModelKind::Gru),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PipelineKind {
    Vote,
    Ocsvm,
    Threshold,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 3] = [PipelineKind::Vote, PipelineKind::Ocsvm, PipelineKind::Threshold];
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vote" => Ok(PipelineKind::Vote),
            "ocsvm" => Ok(PipelineKind::Ocsvm),
            "threshold" => Ok(PipelineKind::Threshold),
            _ => Err(format!("unknown pipeline '{s}' (expected vote, ocsvm or threshold)")),
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::Vote => "vote",
            PipelineKind::Ocsvm => "ocsvm",
            PipelineKind::Threshold => "threshold",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadConfig {
    /// Readings per detection window.
    pub window: usize,
    /// Start-to-start distance between windows.
    pub window_step: usize,
    pub bins: usize,
    pub ks: KsDecisionConfig,
    pub train: TrainConfig,
    /// Fraction of each owner's sequences used to train the predictor; the
    /// remainder of the non-test sequences forms the validation slice.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for LadConfig {
    fn default() -> Self {
        LadConfig {
            window: 200,
            window_step: 50,
            bins: 16,
            ks: KsDecisionConfig::default(),
            train: TrainConfig { epochs: 30, learning_rate: 2e-2, ..TrainConfig::default() },
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl LadConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.ks.validate()?;
        if self.ks.n > self.window {
            return Err(PipelineError::Setup(format!("{} errors per window exceed the window of {}", self.ks.n, self.window)));
        }
        if self.window_step == 0 || self.bins == 0 {
            return Err(PipelineError::Setup("window step and bins must be at least 1".into()));
        }
        Ok(())
    }
}

/// The last `n` errors of each window of `window` readings.
pub fn window_errors(errors: &[f64], window: usize, step: usize, n: usize) -> Vec<Vec<f64>> {
    crate::detection::window_offsets(errors.len(), window, step)
        .into_iter()
        .map(|s| errors[s + window - n..s + window].to_vec())
        .collect()
}

/// Error windows of every sequence under one predictor.
pub fn error_windows(model: &ModelBundle, sequences: &[ArrayView2<'_, f64>], cfg: &LadConfig) -> Result<Vec<Vec<f64>>, PipelineError> {
    let mut out = Vec::new();
    for s in sequences {
        let errors = predict_series(model, *s)?;
        out.extend(window_errors(&errors, cfg.window, cfg.window_step, cfg.ks.n));
    }
    Ok(out)
}

/// A fitted owner profile: predictor, references and the three deciders.
#[derive(Clone, Debug)]
pub struct LadProfile {
    pub predictor: ModelBundle,
    pub references: Vec<Reference>,
    pub threshold: MeanThreshold,
    pub ocsvm: OneClassSvm,
    pub ks: KsDecisionConfig,
}

impl LadProfile {
    /// References are drawn from the validation windows; the threshold uses
    /// all of them and the OCSVM is trained on the windows not drawn.
    pub fn fit(predictor: ModelBundle, validation: &[Vec<f64>], cfg: &LadConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let r = cfg.ks.refs;
        if validation.len() < r + 2 {
            return Err(PipelineError::Setup(format!("need at least {} validation windows, found {}", r + 2, validation.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let picked = sample(&mut rng, validation.len(), r).into_vec();
        let references = picked.iter().map(|&i| Reference::new(validation[i].clone(), cfg.bins)).collect::<Result<Vec<_>, _>>()?;
        let means: Vec<f64> = validation.iter().map(|w| mean(w)).collect();
        let threshold = MeanThreshold::fit(&means, cfg.ks.alpha)?;
        let rest: Vec<&Vec<f64>> = validation.iter().enumerate().filter(|(i, _)| !picked.contains(i)).map(|(_, w)| w).collect();
        let mut feats = Array2::zeros((rest.len(), r));
        for (row, w) in rest.iter().enumerate() {
            let f = ks_feature_vector(w, &references)?;
            feats.row_mut(row).assign(&Array1::from_vec(f));
        }
        let ocsvm = match train(ModelKind::Ocsvm, TrainSet::OneClass(feats.view()), &cfg.train, cfg.seed)?.model {
            ModelBundle::Ocsvm(m) => m,
            other => return Err(PipelineError::Setup(format!("OCSVM trainer returned {}", other.kind()))),
        };
        Ok(LadProfile { predictor, references, threshold, ocsvm, ks: cfg.ks.clone() })
    }

    /// Per-reference KS rejections of one error window.
    pub fn rejections(&self, errors: &[f64]) -> Result<Vec<bool>, PipelineError> {
        self.references
            .iter()
            .map(|r| Ok(ks_reject(ks_statistic(errors, &r.sample)?, errors.len(), r.sample.len(), &self.ks)))
            .collect()
    }

    /// True when the window is flagged as an impostor.
    pub fn decide(&self, errors: &[f64], pipeline: PipelineKind) -> Result<bool, PipelineError> {
        Ok(match pipeline {
            PipelineKind::Vote => vote_decide(&self.rejections(errors)?, &self.ks),
            PipelineKind::Threshold => self.threshold.is_anomaly(errors),
            PipelineKind::Ocsvm => {
                let f = Array1::from_vec(ks_feature_vector(errors, &self.references)?);
                infer_ocsvm(&self.ocsvm, f.view())?.anomaly
            }
        })
    }
}

/// Equal numbers of owner and impostor windows, taken in order.
pub fn balance<T: Clone>(owner: &[T], impostor: &[T]) -> (Vec<T>, Vec<T>) {
    let k = owner.len().min(impostor.len());
    (owner[..k].to_vec(), impostor[..k].to_vec())
}

pub fn evaluate_windows(
    profile: &LadProfile,
    owner: &[Vec<f64>],
    impostor: &[Vec<f64>],
    pipeline: PipelineKind,
) -> Result<ConfusionCounts, PipelineError> {
    let mut c = ConfusionCounts::default();
    for w in owner {
        c.record(false, profile.decide(w, pipeline)?);
    }
    for w in impostor {
        c.record(true, profile.decide(w, pipeline)?);
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub user: u32,
    pub model: String,
    pub pipeline: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Sequences of `owner`, split into predictor-training, validation and test
/// slices. Each slice gets at least one sequence.
fn owner_slices(owner: &[&UserSequence], cfg: &LadConfig) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<Array2<f64>>), PipelineError> {
    let s = owner.len();
    if s < 3 {
        return Err(PipelineError::Setup(format!("user {} needs at least 3 sequences, found {s}", owner.first().map_or(0, |o| o.user))));
    }
    let n_test = (s / 3).max(1);
    let n_train = ((cfg.train_fraction * (s - n_test) as f64).round() as usize).clamp(1, s - n_test - 1);
    let take = |r: std::ops::Range<usize>| owner[r].iter().map(|q| q.readings.clone()).collect::<Vec<_>>();
    Ok((take(0..n_train), take(n_train..s - n_test), take(s - n_test..s)))
}

fn views(v: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
    v.iter().map(|a| a.view()).collect()
}

/// Trains a predictor per owner and evaluates every requested pipeline with
/// all other users as impostors.
pub fn evaluate_lad(
    sequences: &[UserSequence],
    kind: ModelKind,
    pipelines: &[PipelineKind],
    cfg: &LadConfig,
) -> Result<Vec<EvalRow>, PipelineError> {
    if !matches!(kind, ModelKind::Lstm | ModelKind::Gru) {
        return Err(PipelineError::Setup(format!("LAD pipelines need an LSTM or GRU predictor, not {kind}")));
    }
    let mut users: Vec<u32> = sequences.iter().map(|s| s.user).collect();
    users.sort_unstable();
    users.dedup();
    if users.len() < 2 {
        return Err(PipelineError::Setup("LAD evaluation needs at least two users".into()));
    }
    let mut rows = Vec::new();
    for &user in &users {
        let mut owner: Vec<&UserSequence> = sequences.iter().filter(|s| s.user == user).collect();
        owner.sort_by_key(|s| s.sequence);
        let (train_seqs, val_seqs, test_seqs) = owner_slices(&owner, cfg)?;
        let predictor = train(kind, TrainSet::Series(&train_seqs), &cfg.train, cfg.seed.wrapping_add(user as u64))?.model;
        let validation = error_windows(&predictor, &views(&val_seqs), cfg)?;
        let profile = LadProfile::fit(predictor, &validation, &LadConfig { seed: cfg.seed.wrapping_add(user as u64), ..cfg.clone() })?;
        let owner_test = error_windows(&profile.predictor, &views(&test_seqs), cfg)?;
        let others: Vec<ArrayView2<'_, f64>> = sequences.iter().filter(|s| s.user != user).map(|s| s.readings.view()).collect();
        let impostor = error_windows(&profile.predictor, &others, cfg)?;
        let (neg, pos) = balance(&owner_test, &impostor);
        if neg.is_empty() {
            return Err(PipelineError::Setup(format!("user {user}: no complete test windows")));
        }
        for &p in pipelines {
            let counts = evaluate_windows(&profile, &neg, &pos, p)?;
            rows.push(EvalRow { user, model: kind.to_string(), pipeline: p.to_string(), counts, metrics: confusion_metrics(&counts)? });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdaasConfig {
    pub window: usize,
    pub step: usize,
    pub train_fraction: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for IdaasConfig {
    fn default() -> Self {
        IdaasConfig {
            window: crate::detection::DEFAULT_WINDOW,
            step: 16,
            train_fraction: 0.5,
            train: TrainConfig { epochs: 50, ..TrainConfig::default() },
            seed: 0,
        }
    }
}

/// Flattened window for raw-input models, hand-made features for KRR.
pub fn window_features(kind: ModelKind, window: ArrayView2<'_, f64>) -> Result<Array1<f64>, PipelineError> {
    if kind == ModelKind::Krr {
        Ok(krr_features(window)?)
    } else {
        Ok(window.iter().copied().collect())
    }
}

/// True when a two-class model flags the input as an impostor.
pub fn two_class_decide(model: &ModelBundle, x: ndarray::ArrayView1<'_, f64>) -> Result<bool, PipelineError> {
    Ok(match model {
        ModelBundle::Lr(m) => infer_lr(m, x)? >= 0.5,
        ModelBundle::LinearSvm(_) | ModelBundle::KernelSvm(_) => infer_svm(model, x)?.label > 0,
        ModelBundle::Krr(m) => infer_krr(m, x)?.label > 0,
        ModelBundle::Mlp(m) => infer_mlp(m, x)?[1] >= 0.5,
        other => return Err(PipelineError::Setup(format!("{} is not a two-class model", other.kind()))),
    })
}

fn stack(rows: &[Array1<f64>]) -> Result<Array2<f64>, PipelineError> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| PipelineError::Setup(e.to_string()))
}

/// Owner-vs-rest classification per user over sequence-disjoint windows.
pub fn evaluate_idaas(sequences: &[UserSequence], kind: ModelKind, cfg: &IdaasConfig) -> Result<Vec<EvalRow>, PipelineError> {
    if !Scenario::Idaas.allows(kind) {
        return Err(PipelineError::Setup(format!("{kind} is not a two-class model")));
    }
    let (train_w, test_w) = split_by_sequence(sequences, cfg.train_fraction, cfg.seed, cfg.window, cfg.step)?;
    let feats = |ws: &[crate::detection::Window]| -> Result<Vec<Array1<f64>>, PipelineError> {
        ws.iter().map(|w| window_features(kind, w.data.view())).collect()
    };
    let (train_x, test_x) = (stack(&feats(&train_w)?)?, feats(&test_w)?);
    let mut users: Vec<u32> = sequences.iter().map(|s| s.user).collect();
    users.sort_unstable();
    users.dedup();
    let mut rows = Vec::new();
    for &user in &users {
        let y: Vec<i8> = train_w.iter().map(|w| if w.user == user { -1 } else { 1 }).collect();
        let model = train(kind, TrainSet::Labeled { x: train_x.view(), y: &y }, &cfg.train, cfg.seed.wrapping_add(user as u64))?.model;
        let mut counts = ConfusionCounts::default();
        for (w, x) in test_w.iter().zip(&test_x) {
            counts.record(w.user != user, two_class_decide(&model, x.view())?);
        }
        rows.push(EvalRow { user, model: kind.to_string(), pipeline: "two-class".into(), counts, metrics: confusion_metrics(&counts)? });
    }
    Ok(rows)
}

/// CSV rows plus a key=value summary of the mean metrics.
pub fn report_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("user,model,pipeline,tp,fp,tn,fn,tnr,tpr,accuracy,precision,recall,f1\n");
    for r in rows {
        let (c, m) = (&r.counts, &r.metrics);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.user, r.model, r.pipeline, c.tp, c.fp, c.tn, c.fn_, m.tnr, m.tpr, m.accuracy, m.precision, m.recall, m.f1
        ));
    }
    let mut pipelines: Vec<&str> = Vec::new();
    for r in rows {
        if !pipelines.contains(&r.pipeline.as_str()) {
            pipelines.push(&r.pipeline);
        }
    }
    out.push('\n');
    for p in pipelines {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.pipeline == p).collect();
        let avg = |f: fn(&Metrics) -> f64| mean(&sel.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
        out.push_str(&format!("{p}.mean_accuracy={:.4}\n", avg(|m| m.accuracy)));
        out.push_str(&format!("{p}.mean_tnr={:.4}\n", avg(|m| m.tnr)));
        out.push_str(&format!("{p}.mean_tpr={:.4}\n", avg(|m| m.tpr)));
    }
    out
}

/// Mean accuracy of one pipeline over all users.
pub fn mean_accuracy(rows: &[EvalRow], pipeline: PipelineKind) -> f64 {
    let name = pipeline.to_string();
    mean(&rows.iter().filter(|r| r.pipeline == name).map(|r| r.metrics.accuracy).collect::<Vec<_>>())
}
