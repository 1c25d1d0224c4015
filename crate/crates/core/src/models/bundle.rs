use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use super::{Dense, Gate, Gru, KernelSvm, Krr, LinearSvm, LogisticRegression, Lstm, Mlp, ModelError, OneClassSvm};

pub const BUNDLE_MAGIC: &[u8; 4] = b"SIDB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lr,
    LinearSvm,
    KernelSvm,
    Krr,
    Mlp,
    Ocsvm,
    Lstm,
    Gru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Lr,
        ModelKind::LinearSvm,
        ModelKind::KernelSvm,
        ModelKind::Krr,
        ModelKind::Mlp,
        ModelKind::Ocsvm,
        ModelKind::Lstm,
        ModelKind::Gru,
    ];

    pub fn tag(self) -> u32 {
        self as u32
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::LinearSvm => "linear-svm",
            ModelKind::KernelSvm => "kernel-svm",
            ModelKind::Krr => "krr",
            ModelKind::Mlp => "mlp",
            ModelKind::Ocsvm => "ocsvm",
            ModelKind::Lstm => "lstm",
            ModelKind::Gru => "gru",
        }
    }

    /// Kinds trained only on the owner's data.
    pub fn is_one_class(self) -> bool {
        matches!(self, ModelKind::Ocsvm | ModelKind::Lstm | ModelKind::Gru)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model kind '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn scalar(name: &str, v: f64) -> Self {
        NamedTensor { name: name.into(), dims: vec![], data: vec![v] }
    }

    fn vector(name: &str, v: &Array1<f64>) -> Self {
        NamedTensor { name: name.into(), dims: vec![v.len()], data: v.to_vec() }
    }

    fn matrix(name: &str, m: &Array2<f64>) -> Self {
        NamedTensor { name: name.into(), dims: vec![m.nrows(), m.ncols()], data: m.iter().copied().collect() }
    }
}

/// A trained model of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelBundle {
    Lr(LogisticRegression),
    LinearSvm(LinearSvm),
    KernelSvm(KernelSvm),
    Krr(Krr),
    Mlp(Mlp),
    Ocsvm(OneClassSvm),
    Lstm(Lstm),
    Gru(Gru),
}

struct TensorReader {
    tensors: Vec<NamedTensor>,
}

impl TensorReader {
    fn take(&mut self, name: &str) -> Result<NamedTensor, ModelError> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| ModelError::Bundle(format!("missing tensor '{name}'")))?;
        Ok(self.tensors.remove(pos))
    }

    fn scalar(&mut self, name: &str) -> Result<f64, ModelError> {
        let t = self.take(name)?;
        if !t.dims.is_empty() {
            return Err(ModelError::Bundle(format!("'{name}' should be a scalar")));
        }
        Ok(t.data[0])
    }

    fn vector(&mut self, name: &str) -> Result<Array1<f64>, ModelError> {
        let t = self.take(name)?;
        if t.dims.len() != 1 {
            return Err(ModelError::Bundle(format!("'{name}' should have rank 1")));
        }
        Ok(Array1::from(t.data))
    }

    fn matrix(&mut self, name: &str) -> Result<Array2<f64>, ModelError> {
        let t = self.take(name)?;
        if t.dims.len() != 2 {
            return Err(ModelError::Bundle(format!("'{name}' should have rank 2")));
        }
        Array2::from_shape_vec((t.dims[0], t.dims[1]), t.data).map_err(|e| ModelError::Bundle(e.to_string()))
    }

    fn gate(&mut self, suffix: &str) -> Result<Gate, ModelError> {
        Ok(Gate {
            w: self.matrix(&format!("W_{suffix}"))?,
            u: self.matrix(&format!("U_{suffix}"))?,
            b: self.vector(&format!("b_{suffix}"))?,
        })
    }
}

fn push_gate(out: &mut Vec<NamedTensor>, suffix: &str, g: &Gate) {
    out.push(NamedTensor::matrix(&format!("W_{suffix}"), &g.w));
    out.push(NamedTensor::matrix(&format!("U_{suffix}"), &g.u));
    out.push(NamedTensor::vector(&format!("b_{suffix}"), &g.b));
}

impl ModelBundle {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelBundle::Lr(_) => ModelKind::Lr,
            ModelBundle::LinearSvm(_) => ModelKind::LinearSvm,
            ModelBundle::KernelSvm(_) => ModelKind::KernelSvm,
            ModelBundle::Krr(_) => ModelKind::Krr,
            ModelBundle::Mlp(_) => ModelKind::Mlp,
            ModelBundle::Ocsvm(_) => ModelKind::Ocsvm,
            ModelBundle::Lstm(_) => ModelKind::Lstm,
            ModelBundle::Gru(_) => ModelKind::Gru,
        }
    }

    /// Named tensors in a fixed order; hyperparameters are rank-0 tensors.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        match self {
            ModelBundle::Lr(m) => {
                out.push(NamedTensor::vector("w", &m.w));
                out.push(NamedTensor::scalar("b", m.b));
            }
            ModelBundle::LinearSvm(m) => {
                out.push(NamedTensor::vector("w", &m.w));
                out.push(NamedTensor::scalar("b", m.b));
            }
            ModelBundle::KernelSvm(m) => {
                out.push(NamedTensor::matrix("v", &m.support));
                out.push(NamedTensor::vector("a", &m.coef));
                out.push(NamedTensor::scalar("b", m.b));
                out.push(NamedTensor::scalar("gamma", m.gamma));
            }
            ModelBundle::Krr(m) => {
                out.push(NamedTensor::vector("w", &m.w));
                out.push(NamedTensor::scalar("b", m.b));
                out.push(NamedTensor::scalar("lambda", m.lambda));
            }
            ModelBundle::Mlp(m) => {
                for (i, l) in m.layers.iter().enumerate() {
                    out.push(NamedTensor::matrix(&format!("W{i}"), &l.w));
                    out.push(NamedTensor::vector(&format!("b{i}"), &l.b));
                }
            }
            ModelBundle::Ocsvm(m) => {
                out.push(NamedTensor::matrix("v", &m.support));
                out.push(NamedTensor::vector("a", &m.coef));
                out.push(NamedTensor::scalar("rho", m.rho));
                out.push(NamedTensor::scalar("gamma", m.gamma));
            }
            ModelBundle::Lstm(m) => {
                push_gate(&mut out, "i", &m.input);
                push_gate(&mut out, "f", &m.forget);
                push_gate(&mut out, "o", &m.output);
                push_gate(&mut out, "c", &m.cell);
                out.push(NamedTensor::matrix("W_out", &m.w_out));
                out.push(NamedTensor::vector("b_out", &m.b_out));
            }
            ModelBundle::Gru(m) => {
                push_gate(&mut out, "z", &m.update);
                push_gate(&mut out, "r", &m.reset);
                out.push(NamedTensor::matrix("W_h", &m.w_h));
                out.push(NamedTensor::vector("b_h", &m.b_h));
                out.push(NamedTensor::matrix("W_out", &m.w_out));
                out.push(NamedTensor::vector("b_out", &m.b_out));
            }
        }
        out
    }

    pub fn from_tensors(kind: ModelKind, tensors: Vec<NamedTensor>) -> Result<Self, ModelError> {
        for t in &tensors {
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(ModelError::Bundle(format!("tensor '{}' dims do not match its payload", t.name)));
            }
        }
        let mut r = TensorReader { tensors };
        let bundle = match kind {
            ModelKind::Lr => ModelBundle::Lr(LogisticRegression { w: r.vector("w")?, b: r.scalar("b")? }),
            ModelKind::LinearSvm => ModelBundle::LinearSvm(LinearSvm { w: r.vector("w")?, b: r.scalar("b")? }),
            ModelKind::KernelSvm => ModelBundle::KernelSvm(KernelSvm {
                support: r.matrix("v")?,
                coef: r.vector("a")?,
                b: r.scalar("b")?,
                gamma: r.scalar("gamma")?,
            }),
            ModelKind::Krr => ModelBundle::Krr(Krr { w: r.vector("w")?, b: r.scalar("b")?, lambda: r.scalar("lambda")? }),
            ModelKind::Mlp => {
                let mut layers = Vec::new();
                while r.tensors.iter().any(|t| t.name == format!("W{}", layers.len())) {
                    let i = layers.len();
                    layers.push(Dense { w: r.matrix(&format!("W{i}"))?, b: r.vector(&format!("b{i}"))? });
                }
                ModelBundle::Mlp(Mlp { layers })
            }
            ModelKind::Ocsvm => ModelBundle::Ocsvm(OneClassSvm {
                support: r.matrix("v")?,
                coef: r.vector("a")?,
                rho: r.scalar("rho")?,
                gamma: r.scalar("gamma")?,
            }),
            ModelKind::Lstm => ModelBundle::Lstm(Lstm {
                input: r.gate("i")?,
                forget: r.gate("f")?,
                output: r.gate("o")?,
                cell: r.gate("c")?,
                w_out: r.matrix("W_out")?,
                b_out: r.vector("b_out")?,
            }),
            ModelKind::Gru => ModelBundle::Gru(Gru {
                update: r.gate("z")?,
                reset: r.gate("r")?,
                w_h: r.matrix("W_h")?,
                b_h: r.vector("b_h")?,
                w_out: r.matrix("W_out")?,
                b_out: r.vector("b_out")?,
            }),
        };
        if let Some(extra) = r.tensors.first() {
            return Err(ModelError::Bundle(format!("unexpected tensor '{}'", extra.name)));
        }
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        use super::check_len;
        match self {
            ModelBundle::KernelSvm(m) => check_len("support vector coefficients", m.support.nrows(), m.coef.len()),
            ModelBundle::Ocsvm(m) => check_len("support vector coefficients", m.support.nrows(), m.coef.len()),
            ModelBundle::Mlp(m) => m.validate(),
            ModelBundle::Lstm(m) => m.validate(),
            ModelBundle::Gru(m) => m.validate(),
            _ => Ok(()),
        }
    }

    /// All trainable tensors concatenated in `tensors()` order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|t| t.data).collect()
    }

    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self, ModelError> {
        let mut tensors = self.tensors();
        let total: usize = tensors.iter().map(|t| t.data.len()).sum();
        if total != flat.len() {
            return Err(ModelError::Shape(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut at = 0;
        for t in &mut tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Self::from_tensors(self.kind(), tensors)
    }

    /// `"SIDB"`, version, kind tag, tensor count, then per tensor: name length,
    /// name bytes, rank, dims, f64 payload. Integers are u32 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        for v in [BUNDLE_VERSION, self.kind().tag(), tensors.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in &tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ModelError> {
            let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| ModelError::Bundle("unexpected end of file".into()))?;
            let s = &bytes[at..end];
            at = end;
            Ok(s)
        };
        if take(4)? != BUNDLE_MAGIC {
            return Err(ModelError::Bundle("missing SIDB magic".into()));
        }
        let read_u32 = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let version = read_u32(take(4)?);
        if version != BUNDLE_VERSION {
            return Err(ModelError::Bundle(format!("unsupported version {version}")));
        }
        let tag = read_u32(take(4)?);
        let kind = ModelKind::from_tag(tag).ok_or_else(|| ModelError::Bundle(format!("unknown kind tag {tag}")))?;
        let count = read_u32(take(4)?) as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name_len = read_u32(take(4)?) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| ModelError::Bundle("tensor name is not UTF-8".into()))?;
            let rank = read_u32(take(4)?) as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(read_u32(take(4)?) as usize);
            }
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| ModelError::Bundle("tensor too large".into()))?;
            let payload = take(n.checked_mul(8).ok_or_else(|| ModelError::Bundle("tensor too large".into()))?)?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if at != bytes.len() {
            return Err(ModelError::Bundle(format!("{} trailing bytes", bytes.len() - at)));
        }
        Self::from_tensors(kind, tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Gru, Lstm};
    use ndarray::array;

    fn samples() -> Vec<ModelBundle> {
        vec![
            ModelBundle::Lr(LogisticRegression { w: array![1.0, -2.0], b: 0.5 }),
            ModelBundle::LinearSvm(LinearSvm { w: array![0.25], b: -1.0 }),
            ModelBundle::KernelSvm(KernelSvm { support: array![[1.0, 2.0], [3.0, 4.0]], coef: array![0.5, -0.5], b: 0.1, gamma: 0.2 }),
            ModelBundle::Krr(Krr { w: Array1::from_elem(14, 0.5), b: 1.0, lambda: 1e-3 }),
            ModelBundle::Mlp(Mlp {
                layers: vec![
                    Dense { w: Array2::from_elem((3, 2), 0.1), b: array![1.0, 2.0, 3.0] },
                    Dense { w: Array2::from_elem((2, 3), -0.1), b: array![0.0, 1.0] },
                ],
            }),
            ModelBundle::Ocsvm(OneClassSvm { support: array![[0.0, 1.0]], coef: array![1.0], rho: 0.3, gamma: 2.0 }),
            ModelBundle::Lstm(Lstm::zeros(3, 2, 2)),
            ModelBundle::Gru(Gru::zeros(2, 3, 3)),
        ]
    }

    #[test]
    fn bytes_roundtrip_every_kind() {
        for m in samples() {
            let bytes = m.to_bytes();
            assert_eq!(&bytes[..4], b"SIDB");
            assert_eq!(ModelBundle::from_bytes(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelKind::from_tag(k.tag()), Some(k));
        }
        assert!("svm2".parse::<ModelKind>().is_err());
    }

    #[test]
    fn corrupted_bundles_are_rejected() {
        let bytes = samples()[2].to_bytes();
        assert!(ModelBundle::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(ModelBundle::from_bytes(b"SIDM\x01\0\0\0").is_err());
        let mut tensors = samples()[2].tensors();
        tensors[1].data.push(1.0);
        tensors[1].dims[0] += 1;
        assert!(matches!(ModelBundle::from_tensors(ModelKind::KernelSvm, tensors), Err(ModelError::Shape(_))));
    }

    #[test]
    fn flat_params_roundtrip() {
        let m = samples().remove(4);
        let flat: Vec<f64> = (0..m.flat_params().len()).map(|i| i as f64).collect();
        assert_eq!(m.with_flat_params(&flat).unwrap().flat_params(), flat);
        assert!(m.with_flat_params(&flat[1..]).is_err());
    }
}
