//! Desk-scale trainers. Every trainer is single-threaded and driven by one
//! seeded ChaCha stream, so identical inputs give bit-identical models.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rnn::{gru_sequence_grad, lstm_sequence_grad, Gate, Gru, Lstm};
use super::{
    gaussian_kernel, sigmoid, softmax, Dense, KernelSvm, Krr, LinearSvm, LogisticRegression, Mlp, ModelBundle, ModelError,
    ModelKind, OneClassSvm,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Hidden layer sizes (MLP) or the single hidden size (LSTM/GRU uses the first entry).
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub lambda: f64,
    pub nu: f64,
    pub bptt_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 32,
            clip_norm: 5.0,
            hidden: vec![16],
            gamma: 0.5,
            lambda: 1e-3,
            nu: 0.1,
            bptt_len: 20,
        }
    }
}

/// Labels are `+1` (impostor) and `-1` (owner). Series rows are readings.
#[derive(Clone, Copy, Debug)]
pub enum TrainSet<'a> {
    Labeled { x: ArrayView2<'a, f64>, y: &'a [i8] },
    OneClass(ArrayView2<'a, f64>),
    Series(&'a [Array2<f64>]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub model: ModelBundle,
    /// Mean training loss per epoch (empty for closed-form trainers).
    pub losses: Vec<f64>,
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grads[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grads[k] * grads[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

fn clip(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
}

fn check_finite(epoch: usize, loss: f64) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite { epoch, loss })
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn labeled<'a>(kind: ModelKind, set: &TrainSet<'a>) -> Result<(ArrayView2<'a, f64>, &'a [i8]), ModelError> {
    match *set {
        TrainSet::Labeled { x, y } => {
            if x.nrows() == 0 {
                return Err(ModelError::EmptyDataset);
            }
            super::check_len("labels", x.nrows(), y.len())?;
            Ok((x, y))
        }
        _ => Err(ModelError::Unsupported(kind)),
    }
}

pub fn train(kind: ModelKind, set: TrainSet<'_>, cfg: &TrainConfig, seed: u64) -> Result<Trained, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        ModelKind::Lr => {
            let (x, y) = labeled(kind, &set)?;
            train_lr(x, y, cfg, &mut rng)
        }
        ModelKind::LinearSvm => {
            let (x, y) = labeled(kind, &set)?;
            train_linear_svm(x, y, cfg, &mut rng)
        }
        ModelKind::KernelSvm => {
            let (x, y) = labeled(kind, &set)?;
            train_kernel_svm(x, y, cfg)
        }
        ModelKind::Krr => {
            let (x, y) = labeled(kind, &set)?;
            Ok(Trained { model: ModelBundle::Krr(train_krr(x, y, cfg.lambda)?), losses: vec![] })
        }
        ModelKind::Mlp => {
            let (x, y) = labeled(kind, &set)?;
            train_mlp(x, y, cfg, &mut rng)
        }
        ModelKind::Ocsvm => match set {
            TrainSet::OneClass(x) | TrainSet::Labeled { x, .. } => train_ocsvm(x, cfg),
            TrainSet::Series(_) => Err(ModelError::Unsupported(kind)),
        },
        ModelKind::Lstm | ModelKind::Gru => match set {
            TrainSet::Series(series) => train_recurrent(kind, series, cfg, &mut rng),
            _ => Err(ModelError::Unsupported(kind)),
        },
    }
}

fn minibatches(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

fn train_lr(x: ArrayView2<f64>, y: &[i8], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Trained, ModelError> {
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = 0.0;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in minibatches(rng, x.nrows(), cfg.batch_size) {
            let mut gw = Array1::<f64>::zeros(x.ncols());
            let mut gb = 0.0;
            for &j in &batch {
                let t = if y[j] > 0 { 1.0 } else { 0.0 };
                let p = sigmoid(w.dot(&x.row(j)) + b);
                total -= t * p.max(1e-300).ln() + (1.0 - t) * (1.0 - p).max(1e-300).ln();
                gw.scaled_add(p - t, &x.row(j));
                gb += p - t;
            }
            let k = cfg.learning_rate / batch.len() as f64;
            w.scaled_add(-k, &gw);
            b -= k * gb;
        }
        let loss = total / x.nrows() as f64;
        check_finite(epoch, loss)?;
        losses.push(loss);
    }
    Ok(Trained { model: ModelBundle::Lr(LogisticRegression { w, b }), losses })
}

fn train_linear_svm(x: ArrayView2<f64>, y: &[i8], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Trained, ModelError> {
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = 0.0;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in minibatches(rng, x.nrows(), cfg.batch_size) {
            let mut gw = &w * cfg.lambda;
            let mut gb = 0.0;
            let inv = 1.0 / batch.len() as f64;
            for &j in &batch {
                let yj = y[j] as f64;
                let margin = yj * (w.dot(&x.row(j)) + b);
                if margin < 1.0 {
                    total += 1.0 - margin;
                    gw.scaled_add(-yj * inv, &x.row(j));
                    gb -= yj * inv;
                }
            }
            w.scaled_add(-cfg.learning_rate, &gw);
            b -= cfg.learning_rate * gb;
        }
        let loss = total / x.nrows() as f64 + 0.5 * cfg.lambda * w.dot(&w);
        check_finite(epoch, loss)?;
        losses.push(loss);
    }
    Ok(Trained { model: ModelBundle::LinearSvm(LinearSvm { w, b }), losses })
}

fn gram(x: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = gaussian_kernel(x.row(i), x.row(j), gamma);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Projected gradient ascent on the dual of the regularized hinge loss, with
/// the bias folded into the kernel as `k + 1` and box `0 <= alpha <= 1/(lambda n)`.
/// Coefficients that land on zero are pruned from the support set.
fn train_kernel_svm(x: ArrayView2<f64>, y: &[i8], cfg: &TrainConfig) -> Result<Trained, ModelError> {
    let n = x.nrows();
    let yv: Array1<f64> = y.iter().map(|&v| v as f64).collect();
    let mut q = gram(x, cfg.gamma) + 1.0;
    for i in 0..n {
        for j in 0..n {
            q[[i, j]] *= yv[i] * yv[j];
        }
    }
    let cap = 1.0 / (cfg.lambda * n as f64);
    let lipschitz = q.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let eta = 1.0 / lipschitz.max(1e-12);
    let mut alpha = Array1::<f64>::zeros(n);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let qa = q.dot(&alpha);
        let dual = alpha.sum() - 0.5 * alpha.dot(&qa);
        check_finite(epoch, dual)?;
        losses.push(-dual);
        alpha = (&alpha + &((1.0 - qa) * eta)).mapv(|v| v.clamp(0.0, cap));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    let support = x.select(Axis(0), &keep);
    let coef: Array1<f64> = keep.iter().map(|&i| alpha[i] * yv[i]).collect();
    let b = coef.sum();
    Ok(Trained { model: ModelBundle::KernelSvm(KernelSvm { support, coef, b, gamma: cfg.gamma }), losses })
}

/// Solves `A z = rhs` by Gaussian elimination with partial pivoting.
pub(crate) fn solve(mut a: Array2<f64>, mut rhs: Array1<f64>) -> Result<Array1<f64>, ModelError> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("non-empty range");
        if a[[pivot, col]].abs() < 1e-300 {
            return Err(ModelError::Shape("singular system".into()));
        }
        if pivot != col {
            for c in 0..n {
                a.swap([pivot, c], [col, c]);
            }
            rhs.swap(pivot, col);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor != 0.0 {
                for c in col..n {
                    a[[row, c]] -= factor * a[[col, c]];
                }
                rhs[row] -= factor * rhs[col];
            }
        }
    }
    let mut z = Array1::<f64>::zeros(n);
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[[row, c]] * z[c]).sum();
        z[row] = (rhs[row] - tail) / a[[row, row]];
    }
    Ok(z)
}

/// Ridge regression on `[x, 1]` against `y`. The primal normal equations give
/// the same `(w, b)` as `alpha = (K + 1 + lambda I)^-1 y` with `w = X^T alpha`,
/// `b = sum(alpha)`, at a size set by the feature count.
pub fn train_krr(x: ArrayView2<f64>, y: &[i8], lambda: f64) -> Result<Krr, ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyDataset);
    }
    super::check_len("labels", x.nrows(), y.len())?;
    let (n, d) = x.dim();
    let mut phi = Array2::<f64>::ones((n, d + 1));
    phi.slice_mut(s![.., ..d]).assign(&x);
    let yv: Array1<f64> = y.iter().map(|&v| v as f64).collect();
    let mut gram = phi.t().dot(&phi);
    for i in 0..=d {
        gram[[i, i]] += lambda;
    }
    let z = solve(gram, phi.t().dot(&yv))?;
    Ok(Krr { w: z.slice(s![..d]).to_owned(), b: z[d], lambda })
}

/// Euclidean projection onto `{0 <= a_i <= cap, sum a = 1}`.
fn project_capped_simplex(v: &Array1<f64>, cap: f64) -> Array1<f64> {
    let total = |tau: f64| v.iter().map(|&x| (x - tau).clamp(0.0, cap)).sum::<f64>();
    let (mut lo, mut hi) = (v.fold(f64::INFINITY, |a, &b| a.min(b)) - cap - 1.0, v.fold(f64::NEG_INFINITY, |a, &b| a.max(b)));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.mapv(|x| (x - tau).clamp(0.0, cap))
}

/// Projected gradient on the dual `min 1/2 a^T K a` over the capped simplex
/// with cap `1/(nu n)`. `rho` is the mean kernel score over free vectors.
fn train_ocsvm(x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<Trained, ModelError> {
    let n = x.nrows();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let nu = cfg.nu.clamp(1.0 / n as f64, 1.0);
    let cap = 1.0 / (nu * n as f64);
    let k = gram(x, cfg.gamma);
    let lipschitz = k.rows().into_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let eta = 1.0 / lipschitz.max(1e-12);
    let mut a = Array1::from_elem(n, 1.0 / n as f64);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let grad = k.dot(&a);
        let loss = 0.5 * a.dot(&grad);
        check_finite(epoch, loss)?;
        losses.push(loss);
        a = project_capped_simplex(&(&a - &(grad * eta)), cap);
    }
    let scores = k.dot(&a);
    let tol = cap * 1e-6;
    let free: Vec<usize> = (0..n).filter(|&i| a[i] > tol && a[i] < cap - tol).collect();
    let pool: Vec<usize> = if free.is_empty() { (0..n).filter(|&i| a[i] > tol).collect() } else { free };
    let rho = pool.iter().map(|&i| scores[i]).sum::<f64>() / pool.len().max(1) as f64;
    let keep: Vec<usize> = (0..n).filter(|&i| a[i] > tol).collect();
    let model = OneClassSvm { support: x.select(Axis(0), &keep), coef: a.select(Axis(0), &keep), rho, gamma: cfg.gamma };
    Ok(Trained { model: ModelBundle::Ocsvm(model), losses })
}

/// Mean cross-entropy over a batch of rows and its gradient. `classes[j]` is
/// the target output index of row `j`.
pub fn mlp_loss_and_grad(m: &Mlp, x: ArrayView2<f64>, classes: &[usize]) -> Result<(f64, Mlp), ModelError> {
    m.validate()?;
    super::check_len("mlp input", m.input_len(), x.ncols())?;
    super::check_len("targets", x.nrows(), classes.len())?;
    let n = x.nrows();
    let mut grads: Vec<Dense> = m.layers.iter().map(|l| Dense { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.len()) }).collect();
    let mut loss = 0.0;
    for (row, &class) in x.rows().into_iter().zip(classes) {
        let mut acts = vec![row.to_owned()];
        for (i, l) in m.layers.iter().enumerate() {
            let z = l.w.dot(acts.last().expect("input")) + &l.b;
            acts.push(if i + 1 < m.layers.len() { z.mapv(sigmoid) } else { z });
        }
        let p = softmax(acts.last().expect("output"));
        loss -= p[class].max(1e-300).ln() / n as f64;
        let mut delta = p / n as f64;
        delta[class] -= 1.0 / n as f64;
        for i in (0..m.layers.len()).rev() {
            grads[i].w += &delta.view().insert_axis(Axis(1)).dot(&acts[i].view().insert_axis(Axis(0)));
            grads[i].b += &delta;
            if i > 0 {
                let back = m.layers[i].w.t().dot(&delta);
                delta = back * &acts[i].mapv(|a| a * (1.0 - a));
            }
        }
    }
    Ok((loss, Mlp { layers: grads }))
}

fn train_mlp(x: ArrayView2<f64>, y: &[i8], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Trained, ModelError> {
    let mut sizes = vec![x.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            Dense { w: uniform_matrix(rng, w[1], w[0], bound), b: Array1::zeros(w[1]) }
        })
        .collect();
    let mut model = ModelBundle::Mlp(Mlp { layers });
    let classes: Vec<usize> = y.iter().map(|&v| usize::from(v > 0)).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in minibatches(rng, x.nrows(), cfg.batch_size) {
            let ModelBundle::Mlp(m) = &model else { unreachable!() };
            let bx = x.select(Axis(0), &batch);
            let bc: Vec<usize> = batch.iter().map(|&j| classes[j]).collect();
            let (loss, g) = mlp_loss_and_grad(m, bx.view(), &bc)?;
            total += loss * batch.len() as f64;
            let grads = ModelBundle::Mlp(g).flat_params();
            let mut params = model.flat_params();
            params.iter_mut().zip(&grads).for_each(|(p, g)| *p -= cfg.learning_rate * g);
            model = model.with_flat_params(&params)?;
        }
        let loss = total / x.nrows() as f64;
        check_finite(epoch, loss)?;
        losses.push(loss);
    }
    Ok(Trained { model, losses })
}

fn init_gate(rng: &mut ChaCha8Rng, h: usize, d: usize, bias: f64) -> Gate {
    let bound = 1.0 / (h as f64).sqrt();
    Gate { w: uniform_matrix(rng, h, d, bound), u: uniform_matrix(rng, h, h, bound), b: Array1::from_elem(h, bias) }
}

/// Truncated BPTT with Adam and global-norm clipping on next-reading MSE.
/// State carries across chunks of a sequence but gradients do not.
fn train_recurrent(kind: ModelKind, series: &[Array2<f64>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Trained, ModelError> {
    let usable: Vec<&Array2<f64>> = series.iter().filter(|s| s.nrows() >= 2).collect();
    if usable.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let d = usable[0].ncols();
    let h = cfg.hidden.first().copied().unwrap_or(16);
    let bound = 1.0 / (h as f64).sqrt();
    let mut model = if kind == ModelKind::Lstm {
        ModelBundle::Lstm(Lstm {
            input: init_gate(rng, h, d, 0.0),
            forget: init_gate(rng, h, d, 1.0),
            output: init_gate(rng, h, d, 0.0),
            cell: init_gate(rng, h, d, 0.0),
            w_out: uniform_matrix(rng, d, h, bound),
            b_out: Array1::zeros(d),
        })
    } else {
        ModelBundle::Gru(Gru {
            update: init_gate(rng, h, d, 0.0),
            reset: init_gate(rng, h, d, 0.0),
            w_h: uniform_matrix(rng, h, d, bound),
            b_h: Array1::zeros(h),
            w_out: uniform_matrix(rng, d, h, bound),
            b_out: Array1::zeros(d),
        })
    };
    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let chunk = cfg.bptt_len.max(1);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for &si in &order {
            let seq = usable[si];
            let inputs = seq.slice(s![..seq.nrows() - 1, ..]);
            let targets = seq.slice(s![1.., ..]);
            let mut hs = Array1::<f64>::zeros(h);
            let mut cs = Array1::<f64>::zeros(h);
            let mut start = 0;
            while start < inputs.nrows() {
                let end = (start + chunk).min(inputs.nrows());
                let (xi, ti) = (inputs.slice(s![start..end, ..]), targets.slice(s![start..end, ..]));
                let (loss, mut grads) = match &model {
                    ModelBundle::Lstm(m) => {
                        let (loss, g, h2, c2) = lstm_sequence_grad(m, hs.view(), cs.view(), xi, ti)?;
                        hs = h2;
                        cs = c2;
                        (loss, ModelBundle::Lstm(g).flat_params())
                    }
                    ModelBundle::Gru(m) => {
                        let (loss, g, h2) = gru_sequence_grad(m, hs.view(), xi, ti)?;
                        hs = h2;
                        (loss, ModelBundle::Gru(g).flat_params())
                    }
                    _ => unreachable!(),
                };
                check_finite(epoch, loss)?;
                total += loss * (end - start) as f64;
                steps += end - start;
                clip(&mut grads, cfg.clip_norm);
                adam.step(&mut params, &grads);
                model = model.with_flat_params(&params)?;
                start = end;
            }
        }
        losses.push(total / steps as f64);
    }
    Ok(Trained { model, losses })
}
