use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{check_len, sigmoid, ModelBundle, ModelError, ModelKind};

/// One gate's parameters: `w` is `H x D`, `u` is `H x H`, `b` has length `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl Gate {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Gate { w: Array2::zeros((hidden, input)), u: Array2::zeros((hidden, hidden)), b: Array1::zeros(hidden) }
    }

    fn pre(&self, x: ArrayView1<f64>, h: ArrayView1<f64>) -> Array1<f64> {
        self.w.dot(&x) + self.u.dot(&h) + &self.b
    }

    fn validate(&self, name: &str, hidden: usize, input: usize) -> Result<(), ModelError> {
        check_len(&format!("{name} W rows"), hidden, self.w.nrows())?;
        check_len(&format!("{name} W cols"), input, self.w.ncols())?;
        check_len(&format!("{name} U rows"), hidden, self.u.nrows())?;
        check_len(&format!("{name} U cols"), hidden, self.u.ncols())?;
        check_len(&format!("{name} b"), hidden, self.b.len())
    }

    /// Accumulates `da x^T`, `da h^T` and `da` into this gate.
    fn accumulate(&mut self, da: &Array1<f64>, x: ArrayView1<f64>, h: ArrayView1<f64>) {
        self.w += &outer(da.view(), x);
        self.u += &outer(da.view(), h);
        self.b += da;
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub input: Gate,
    pub forget: Gate,
    pub output: Gate,
    pub cell: Gate,
    /// `D_out x H` readout producing the next-reading prediction.
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub update: Gate,
    pub reset: Gate,
    pub w_h: Array2<f64>,
    pub b_h: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl Lstm {
    pub fn zeros(hidden: usize, input: usize, output: usize) -> Self {
        Lstm {
            input: Gate::zeros(hidden, input),
            forget: Gate::zeros(hidden, input),
            output: Gate::zeros(hidden, input),
            cell: Gate::zeros(hidden, input),
            w_out: Array2::zeros((output, hidden)),
            b_out: Array1::zeros(output),
        }
    }

    pub fn hidden_len(&self) -> usize {
        self.input.b.len()
    }

    pub fn input_len(&self) -> usize {
        self.input.w.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.b_out.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (h, d) = (self.hidden_len(), self.input_len());
        self.input.validate("input gate", h, d)?;
        self.forget.validate("forget gate", h, d)?;
        self.output.validate("output gate", h, d)?;
        self.cell.validate("cell gate", h, d)?;
        check_len("readout cols", h, self.w_out.ncols())?;
        check_len("readout bias", self.w_out.nrows(), self.b_out.len())
    }
}

impl Gru {
    pub fn zeros(hidden: usize, input: usize, output: usize) -> Self {
        Gru {
            update: Gate::zeros(hidden, input),
            reset: Gate::zeros(hidden, input),
            w_h: Array2::zeros((hidden, input)),
            b_h: Array1::zeros(hidden),
            w_out: Array2::zeros((output, hidden)),
            b_out: Array1::zeros(output),
        }
    }

    pub fn hidden_len(&self) -> usize {
        self.update.b.len()
    }

    pub fn input_len(&self) -> usize {
        self.update.w.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.b_out.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (h, d) = (self.hidden_len(), self.input_len());
        self.update.validate("update gate", h, d)?;
        self.reset.validate("reset gate", h, d)?;
        check_len("W_h rows", h, self.w_h.nrows())?;
        check_len("W_h cols", d, self.w_h.ncols())?;
        check_len("b_h", h, self.b_h.len())?;
        check_len("readout cols", h, self.w_out.ncols())?;
        check_len("readout bias", self.w_out.nrows(), self.b_out.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
    pub prediction: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruStep {
    pub h: Array1<f64>,
    pub prediction: Array1<f64>,
}

struct LstmCache {
    i: Array1<f64>,
    f: Array1<f64>,
    o: Array1<f64>,
    cand: Array1<f64>,
    c_prev: Array1<f64>,
    h_prev: Array1<f64>,
    tanh_c: Array1<f64>,
    h: Array1<f64>,
    c: Array1<f64>,
    prediction: Array1<f64>,
}

fn lstm_forward(m: &Lstm, h: ArrayView1<f64>, c: ArrayView1<f64>, x: ArrayView1<f64>) -> LstmCache {
    let i = m.input.pre(x, h).mapv(sigmoid);
    let f = m.forget.pre(x, h).mapv(sigmoid);
    let o = m.output.pre(x, h).mapv(sigmoid);
    let cand = m.cell.pre(x, h).mapv(f64::tanh);
    let c_new = &f * &c + &i * &cand;
    let tanh_c = c_new.mapv(f64::tanh);
    let h_new = &o * &tanh_c;
    let prediction = m.w_out.dot(&h_new) + &m.b_out;
    LstmCache { i, f, o, cand, c_prev: c.to_owned(), h_prev: h.to_owned(), tanh_c, h: h_new, c: c_new, prediction }
}

pub fn step_lstm(m: &Lstm, h: ArrayView1<f64>, c: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<LstmStep, ModelError> {
    m.validate()?;
    check_len("lstm h", m.hidden_len(), h.len())?;
    check_len("lstm c", m.hidden_len(), c.len())?;
    check_len("lstm input", m.input_len(), x.len())?;
    let k = lstm_forward(m, h, c, x);
    Ok(LstmStep { h: k.h, c: k.c, prediction: k.prediction })
}

struct GruCache {
    z: Array1<f64>,
    r: Array1<f64>,
    q: Array1<f64>,
    cand: Array1<f64>,
    h_prev: Array1<f64>,
    h: Array1<f64>,
    prediction: Array1<f64>,
}

/// The candidate uses `U_r` and a sigmoid, as the model is defined.
fn gru_forward(m: &Gru, h: ArrayView1<f64>, x: ArrayView1<f64>) -> GruCache {
    let z = m.update.pre(x, h).mapv(sigmoid);
    let r = m.reset.pre(x, h).mapv(sigmoid);
    let q = &r * &h;
    let cand = (m.w_h.dot(&x) + m.reset.u.dot(&q) + &m.b_h).mapv(sigmoid);
    let h_new = (1.0 - &z) * &h + &z * &cand;
    let prediction = m.w_out.dot(&h_new) + &m.b_out;
    GruCache { z, r, q, cand, h_prev: h.to_owned(), h: h_new, prediction }
}

pub fn step_gru(m: &Gru, h: ArrayView1<f64>, x: ArrayView1<f64>) -> Result<GruStep, ModelError> {
    m.validate()?;
    check_len("gru h", m.hidden_len(), h.len())?;
    check_len("gru input", m.input_len(), x.len())?;
    let k = gru_forward(m, h, x);
    Ok(GruStep { h: k.h, prediction: k.prediction })
}

/// A model that consumes one reading per step and predicts the next.
pub trait Recurrent {
    type State: Clone;

    fn zero_state(&self) -> Self::State;
    fn advance(&self, state: &Self::State, x: ArrayView1<f64>) -> Result<(Self::State, Array1<f64>), ModelError>;
}

impl Recurrent for Lstm {
    type State = (Array1<f64>, Array1<f64>);

    fn zero_state(&self) -> Self::State {
        (Array1::zeros(self.hidden_len()), Array1::zeros(self.hidden_len()))
    }

    fn advance(&self, state: &Self::State, x: ArrayView1<f64>) -> Result<(Self::State, Array1<f64>), ModelError> {
        let s = step_lstm(self, state.0.view(), state.1.view(), x)?;
        Ok(((s.h, s.c), s.prediction))
    }
}

impl Recurrent for Gru {
    type State = Array1<f64>;

    fn zero_state(&self) -> Self::State {
        Array1::zeros(self.hidden_len())
    }

    fn advance(&self, state: &Self::State, x: ArrayView1<f64>) -> Result<(Self::State, Array1<f64>), ModelError> {
        let s = step_gru(self, state.view(), x)?;
        Ok((s.h, s.prediction))
    }
}

fn series_errors<M: Recurrent>(m: &M, readings: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
    let t_len = readings.nrows();
    if t_len < 2 {
        return Err(ModelError::SeriesTooShort(t_len));
    }
    let mut state = m.zero_state();
    let mut errors = Vec::with_capacity(t_len - 1);
    for t in 1..t_len {
        let (next, pred) = m.advance(&state, readings.row(t - 1))?;
        check_len("prediction", readings.ncols(), pred.len())?;
        let d = &pred - &readings.row(t);
        errors.push(d.dot(&d));
        state = next;
    }
    Ok(errors)
}

/// `errors[t-1] = ||prediction after x_{t-1} - x_t||^2` for `t = 1..T`, from a zero state.
pub fn predict_series(m: &ModelBundle, readings: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
    match m {
        ModelBundle::Lstm(l) => series_errors(l, readings),
        ModelBundle::Gru(g) => series_errors(g, readings),
        other => Err(ModelError::WrongKind { expected: ModelKind::Lstm, found: other.kind() }),
    }
}

fn check_chunk(input_len: usize, output_len: usize, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(), ModelError> {
    if inputs.nrows() == 0 {
        return Err(ModelError::SeriesTooShort(0));
    }
    check_len("chunk targets", inputs.nrows(), targets.nrows())?;
    check_len("chunk input width", input_len, inputs.ncols())?;
    check_len("chunk target width", output_len, targets.ncols())
}

/// Loss `mean_t ||pred_t - target_t||^2` over one truncated chunk and its
/// gradient with respect to every parameter. Returns the final state too so
/// the next chunk can continue from it.
pub fn lstm_sequence_grad(
    m: &Lstm,
    h0: ArrayView1<f64>,
    c0: ArrayView1<f64>,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<(f64, Lstm, Array1<f64>, Array1<f64>), ModelError> {
    m.validate()?;
    check_chunk(m.input_len(), m.output_len(), inputs, targets)?;
    let t_len = inputs.nrows();
    let scale = 1.0 / t_len as f64;
    let mut caches = Vec::with_capacity(t_len);
    let (mut h, mut c) = (h0.to_owned(), c0.to_owned());
    let mut loss = 0.0;
    for t in 0..t_len {
        let k = lstm_forward(m, h.view(), c.view(), inputs.row(t));
        let d = &k.prediction - &targets.row(t);
        loss += d.dot(&d) * scale;
        h = k.h.clone();
        c = k.c.clone();
        caches.push(k);
    }

    let hidden = m.hidden_len();
    let mut g = Lstm::zeros(hidden, m.input_len(), m.output_len());
    let mut dh_next = Array1::<f64>::zeros(hidden);
    let mut dc_next = Array1::<f64>::zeros(hidden);
    for t in (0..t_len).rev() {
        let k = &caches[t];
        let dpred = (&k.prediction - &targets.row(t)) * (2.0 * scale);
        g.w_out += &outer(dpred.view(), k.h.view());
        g.b_out += &dpred;
        let dh = m.w_out.t().dot(&dpred) + &dh_next;
        let d_o = &dh * &k.tanh_c;
        let dc = &dh * &k.o * &k.tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
        let df = &dc * &k.c_prev;
        let di = &dc * &k.cand;
        let dcand = &dc * &k.i;
        dc_next = &dc * &k.f;

        let da_i = di * &k.i.mapv(|v| v * (1.0 - v));
        let da_f = df * &k.f.mapv(|v| v * (1.0 - v));
        let da_o = d_o * &k.o.mapv(|v| v * (1.0 - v));
        let da_c = dcand * &k.cand.mapv(|v| 1.0 - v * v);
        let x = inputs.row(t);
        g.input.accumulate(&da_i, x, k.h_prev.view());
        g.forget.accumulate(&da_f, x, k.h_prev.view());
        g.output.accumulate(&da_o, x, k.h_prev.view());
        g.cell.accumulate(&da_c, x, k.h_prev.view());
        dh_next = m.input.u.t().dot(&da_i) + m.forget.u.t().dot(&da_f) + m.output.u.t().dot(&da_o) + m.cell.u.t().dot(&da_c);
    }
    Ok((loss, g, h, c))
}

/// Same contract as [`lstm_sequence_grad`] for the GRU.
pub fn gru_sequence_grad(
    m: &Gru,
    h0: ArrayView1<f64>,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<(f64, Gru, Array1<f64>), ModelError> {
    m.validate()?;
    check_chunk(m.input_len(), m.output_len(), inputs, targets)?;
    let t_len = inputs.nrows();
    let scale = 1.0 / t_len as f64;
    let mut caches = Vec::with_capacity(t_len);
    let mut h = h0.to_owned();
    let mut loss = 0.0;
    for t in 0..t_len {
        let k = gru_forward(m, h.view(), inputs.row(t));
        let d = &k.prediction - &targets.row(t);
        loss += d.dot(&d) * scale;
        h = k.h.clone();
        caches.push(k);
    }

    let hidden = m.hidden_len();
    let mut g = Gru::zeros(hidden, m.input_len(), m.output_len());
    let mut dh_next = Array1::<f64>::zeros(hidden);
    for t in (0..t_len).rev() {
        let k = &caches[t];
        let x = inputs.row(t);
        let dpred = (&k.prediction - &targets.row(t)) * (2.0 * scale);
        g.w_out += &outer(dpred.view(), k.h.view());
        g.b_out += &dpred;
        let dh = m.w_out.t().dot(&dpred) + &dh_next;

        let dz = &dh * &(&k.cand - &k.h_prev);
        let dcand = &dh * &k.z;
        let mut dh_prev = &dh * &k.z.mapv(|v| 1.0 - v);

        let da_h = dcand * &k.cand.mapv(|v| v * (1.0 - v));
        g.w_h += &outer(da_h.view(), x);
        g.b_h += &da_h;
        g.reset.u += &outer(da_h.view(), k.q.view());
        let dq = m.reset.u.t().dot(&da_h);
        let dr = &dq * &k.h_prev;
        dh_prev += &(&dq * &k.r);

        let da_z = dz * &k.z.mapv(|v| v * (1.0 - v));
        let da_r = dr * &k.r.mapv(|v| v * (1.0 - v));
        g.update.accumulate(&da_z, x, k.h_prev.view());
        g.reset.accumulate(&da_r, x, k.h_prev.view());
        dh_prev += &m.update.u.t().dot(&da_z);
        dh_prev += &m.reset.u.t().dot(&da_r);
        dh_next = dh_prev;
    }
    Ok((loss, g, h))
}
