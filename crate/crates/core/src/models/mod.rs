//! Floating-point reference models. These are the oracle the compiled
//! fixed-point programs are checked against.

mod bundle;
mod rnn;
mod train;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use thiserror::Error;

pub use bundle::{ModelBundle, ModelKind, NamedTensor, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use rnn::{
    gru_sequence_grad, lstm_sequence_grad, predict_series, step_gru, step_lstm, Gate, Gru, GruStep, Lstm, LstmStep,
    Recurrent,
};
pub use train::{mlp_loss_and_grad, train, train_krr, Adam, TrainConfig, TrainSet, Trained};

/// Channels per sensor reading: three accelerometer axes, three gyroscope axes.
pub const CHANNELS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("series needs at least 2 readings, got {0}")]
    SeriesTooShort(usize),
    #[error("malformed model bundle: {0}")]
    Bundle(String),
    #[error("expected a {expected} model, found {found}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("{0} cannot be trained from this dataset")]
    Unsupported(ModelKind),
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Shape(format!("{what}: expected length {expected}, got {got}")))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gaussian_kernel(u: ArrayView1<f64>, v: ArrayView1<f64>, gamma: f64) -> f64 {
    let d2: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

pub fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// `+1` flags an impostor (or anomaly), `-1` the owner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmDecision {
    pub label: i8,
    pub score: f64,
}

impl SvmDecision {
    /// A score of exactly zero counts as an impostor.
    fn from_score(score: f64) -> Self {
        SvmDecision { label: if score >= 0.0 { 1 } else { -1 }, score }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcsvmDecision {
    pub anomaly: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub w: Array1<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub w: Array1<f64>,
    pub b: f64,
}

/// `support` holds one support vector per row.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSvm {
    pub support: Array2<f64>,
    pub coef: Array1<f64>,
    pub b: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Krr {
    pub w: Array1<f64>,
    pub b: f64,
    pub lambda: f64,
}

/// Weights are `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Sigmoid hidden layers, affine output layer, softmax on top.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneClassSvm {
    pub support: Array2<f64>,
    pub coef: Array1<f64>,
    pub rho: f64,
    pub gamma: f64,
}

pub fn infer_lr(m: &LogisticRegression, x: ArrayView1<f64>) -> Result<f64, ModelError> {
    check_len("lr input", m.w.len(), x.len())?;
    Ok(sigmoid(m.w.dot(&x) + m.b))
}

pub fn infer_linear_svm(m: &LinearSvm, x: ArrayView1<f64>) -> Result<SvmDecision, ModelError> {
    check_len("svm input", m.w.len(), x.len())?;
    Ok(SvmDecision::from_score(m.w.dot(&x) + m.b))
}

fn kernel_sum(support: &Array2<f64>, coef: &Array1<f64>, gamma: f64, x: ArrayView1<f64>) -> Result<f64, ModelError> {
    check_len("kernel input", support.ncols(), x.len())?;
    check_len("coefficients", support.nrows(), coef.len())?;
    let diff = support - &x.insert_axis(Axis(0));
    let d2 = diff.mapv(|v| v * v).sum_axis(Axis(1));
    Ok(d2.mapv(|d| (-gamma * d).exp()).dot(coef))
}

pub fn infer_kernel_svm(m: &KernelSvm, x: ArrayView1<f64>) -> Result<SvmDecision, ModelError> {
    Ok(SvmDecision::from_score(kernel_sum(&m.support, &m.coef, m.gamma, x)? + m.b))
}

pub fn infer_svm(m: &ModelBundle, x: ArrayView1<f64>) -> Result<SvmDecision, ModelError> {
    match m {
        ModelBundle::LinearSvm(s) => infer_linear_svm(s, x),
        ModelBundle::KernelSvm(s) => infer_kernel_svm(s, x),
        other => Err(ModelError::WrongKind { expected: ModelKind::KernelSvm, found: other.kind() }),
    }
}

pub fn infer_krr(m: &Krr, features: ArrayView1<f64>) -> Result<SvmDecision, ModelError> {
    check_len("krr features", m.w.len(), features.len())?;
    Ok(SvmDecision::from_score(m.w.dot(&features) + m.b))
}

pub fn infer_ocsvm(m: &OneClassSvm, x: ArrayView1<f64>) -> Result<OcsvmDecision, ModelError> {
    let score = kernel_sum(&m.support, &m.coef, m.gamma, x)? - m.rho;
    Ok(OcsvmDecision { anomaly: score < 0.0, score })
}

impl Mlp {
    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.ncols())
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Shape("mlp has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            check_len(&format!("layer {i} bias"), l.w.nrows(), l.b.len())?;
            if i > 0 {
                check_len(&format!("layer {i} input"), self.layers[i - 1].w.nrows(), l.w.ncols())?;
            }
        }
        Ok(())
    }
}

/// Pre-softmax output scores.
pub fn mlp_logits(m: &Mlp, x: ArrayView1<f64>) -> Result<Array1<f64>, ModelError> {
    m.validate()?;
    check_len("mlp input", m.input_len(), x.len())?;
    let mut a = x.to_owned();
    for (i, l) in m.layers.iter().enumerate() {
        let z = l.w.dot(&a) + &l.b;
        a = if i + 1 < m.layers.len() { z.mapv(sigmoid) } else { z };
    }
    Ok(a)
}

pub fn infer_mlp(m: &Mlp, x: ArrayView1<f64>) -> Result<Array1<f64>, ModelError> {
    Ok(softmax(&mlp_logits(m, x)?))
}
