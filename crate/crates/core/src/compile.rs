//! Lowering of model bundles and KS pipeline stages to SID programs.
//!
//! Every program starts by copying biases into its accumulator regions, so a
//! compiled program can be rerun on the same memory after new inputs are
//! written. Mvmul layers wider than the scratchpad are split into balanced
//! row blocks.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use thiserror::Error;

use crate::detection::{KsDecisionConfig, Reference};
use crate::isa::{MacroInstruction, OffsetReg, Opcode, RegGroup, INSTRUCTION_BYTES, MAX_LENGTH};
use crate::machine::{MachineConfig, MachineError, MachineState, MemoryImage, RunReport, Trap};
use crate::models::{Gate, Gru, KernelSvm, Lstm, Mlp, ModelBundle, ModelKind, OneClassSvm};
use crate::numerics::FxWord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Looped,
    Unrolled,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Looped => "looped",
            Strategy::Unrolled => "unrolled",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "looped" => Ok(Strategy::Looped),
            "unrolled" => Ok(Strategy::Unrolled),
            _ => Err(format!("unknown strategy '{s}' (expected looped or unrolled)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("{0} models need feature-extraction ops the accelerator does not provide")]
    Unsupported(ModelKind),
    #[error("{0}")]
    Shape(String),
    #[error("program needs {needed} data words but memory holds {capacity}")]
    OutOfMemory { needed: usize, capacity: usize },
    #[error("{field} = {value} exceeds the 14-bit instruction field")]
    FieldTooLarge { field: &'static str, value: usize },
    #[error("model: {0}")]
    Model(#[from] crate::models::ModelError),
    #[error("detection: {0}")]
    Detection(#[from] crate::detection::DetectionError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Symbol {
    pub name: String,
    pub addr: usize,
    pub len: usize,
}

/// Program, initial memory image, symbol table and the host-visible regions.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledProgram {
    pub name: String,
    pub program: Vec<MacroInstruction>,
    pub image: MemoryImage,
    pub symbols: Vec<Symbol>,
    pub input: Symbol,
    pub output: Symbol,
    pub warnings: Vec<String>,
}

impl CompiledProgram {
    pub fn instructions(&self) -> usize {
        self.program.len()
    }

    pub fn code_size_bytes(&self) -> usize {
        INSTRUCTION_BYTES * self.program.len()
    }

    pub fn symbol(&self, name: &str) -> Option<&Symbol> {
        self.symbols.iter().find(|s| s.name == name)
    }

    /// One `name address length` line per symbol.
    pub fn symbol_table_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(&format!("{} {} {}\n", s.name, s.addr, s.len));
        }
        out.push_str(&format!("@input {} {} {}\n", self.input.name, self.input.addr, self.input.len));
        out.push_str(&format!("@output {} {} {}\n", self.output.name, self.output.addr, self.output.len));
        out
    }

    pub fn load(&self, config: MachineConfig) -> Result<MachineState, MachineError> {
        MachineState::load(config, self.program.clone(), &self.image)
    }

    /// Writes `input`, restarts at pc 0, runs and returns the output region.
    pub fn execute(&self, state: &mut MachineState, input: &[f64]) -> Result<(Vec<f64>, RunReport), Trap> {
        let words: Vec<FxWord> = input.iter().map(|&v| FxWord::from_real(v)).collect();
        state.write(self.input.addr, &words[..words.len().min(self.input.len)]);
        state.restart();
        state.reset_counters();
        let report = state.run(None)?;
        Ok((read_real(state, &self.output), report))
    }
}

pub fn read_real(state: &MachineState, sym: &Symbol) -> Vec<f64> {
    state.read(sym.addr, sym.len).iter().map(|w| w.to_real()).collect()
}

/// Parses the text written by [`CompiledProgram::symbol_table_text`].
pub fn parse_symbol_table(text: &str) -> Result<(Vec<Symbol>, Option<Symbol>, Option<Symbol>), String> {
    let (mut symbols, mut input, mut output) = (Vec::new(), None, None);
    for (n, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        let bad = || format!("symbol table line {}: malformed '{line}'", n + 1);
        let (tag, rest) = if parts[0].starts_with('@') { (Some(parts[0]), &parts[1..]) } else { (None, &parts[..]) };
        if rest.len() != 3 {
            return Err(bad());
        }
        let sym = Symbol {
            name: rest[0].to_string(),
            addr: rest[1].parse().map_err(|_| bad())?,
            len: rest[2].parse().map_err(|_| bad())?,
        };
        match tag {
            None => symbols.push(sym),
            Some("@input") => input = Some(sym),
            Some("@output") => output = Some(sym),
            Some(_) => return Err(bad()),
        }
    }
    Ok((symbols, input, output))
}

/// Bump allocator over the data image.
struct Layout {
    words: Vec<FxWord>,
    symbols: Vec<Symbol>,
    clamped: Vec<String>,
}

impl Layout {
    fn new() -> Self {
        Layout { words: Vec::new(), symbols: Vec::new(), clamped: Vec::new() }
    }

    fn alloc(&mut self, name: &str, len: usize) -> usize {
        let addr = self.words.len();
        self.words.resize(addr + len, FxWord::ZERO);
        self.symbols.push(Symbol { name: name.to_string(), addr, len });
        addr
    }

    /// Reuses an existing region of the same name when it is long enough.
    fn shared(&mut self, name: &str, len: usize) -> usize {
        match self.symbols.iter().find(|s| s.name == name && s.len >= len) {
            Some(s) => s.addr,
            None => self.alloc(name, len),
        }
    }

    fn place(&mut self, name: &str, values: impl IntoIterator<Item = f64>) -> usize {
        let addr = self.words.len();
        let limit = FxWord::MAX.to_real();
        let mut clamped = false;
        for v in values {
            clamped |= !(v.abs() <= limit);
            self.words.push(FxWord::from_real(v));
        }
        if clamped {
            self.clamped.push(name.to_string());
        }
        self.symbols.push(Symbol { name: name.to_string(), addr, len: self.words.len() - addr });
        addr
    }

    fn sym(&self, name: &str) -> Symbol {
        self.symbols.iter().find(|s| s.name == name).cloned().expect("symbol allocated")
    }

    fn finish(
        self,
        name: String,
        program: Vec<MacroInstruction>,
        input: Symbol,
        output: Symbol,
        config: &MachineConfig,
    ) -> Result<CompiledProgram, CompileError> {
        if self.words.len() > config.data_mem_words {
            return Err(CompileError::OutOfMemory { needed: self.words.len(), capacity: config.data_mem_words });
        }
        for inst in &program {
            for (field, value) in [("length", inst.length as usize), ("width", inst.width as usize)] {
                if value > MAX_LENGTH as usize {
                    return Err(CompileError::FieldTooLarge { field, value });
                }
            }
        }
        let warnings = self.clamped.iter().map(|t| format!("tensor {t} clamped to the fixed-point range")).collect();
        Ok(CompiledProgram { name, program, image: MemoryImage::new(self.words), symbols: self.symbols, input, output, warnings })
    }
}

fn check_field(field: &'static str, value: usize) -> Result<(), CompileError> {
    if value > MAX_LENGTH as usize {
        Err(CompileError::FieldTooLarge { field, value })
    } else {
        Ok(())
    }
}

/// Rows per Mvmul block: `ceil(rows / n_local)` blocks of balanced size.
pub fn row_blocks(rows: usize, n_local: usize) -> Vec<(usize, usize)> {
    if rows == 0 {
        return Vec::new();
    }
    let blocks = rows.div_ceil(n_local.max(1));
    let base = rows / blocks;
    let extra = rows % blocks;
    let mut out = Vec::with_capacity(blocks);
    let mut start = 0;
    for k in 0..blocks {
        let n = base + usize::from(k < extra);
        out.push((start, n));
        start += n;
    }
    out
}

/// `Z = B; Z += W y` with W row-major `rows x cols`, split into row blocks.
fn emit_affine(p: &mut Vec<MacroInstruction>, w: usize, b: usize, y: usize, z: usize, zero: usize, rows: usize, cols: usize, n_local: usize) {
    p.push(MacroInstruction::vector(Opcode::Vadd, rows, b, zero, z));
    for (start, n) in row_blocks(rows, n_local) {
        p.push(MacroInstruction::mvmul(cols, n, w + start * cols, y, z + start));
    }
}

fn row_major(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// `[W | U]` so one Mvmul chain covers the input and recurrent terms.
fn concat_gate(w: &Array2<f64>, u: &Array2<f64>) -> Vec<f64> {
    row_major(&concatenate(Axis(1), &[w.view(), u.view()]).expect("gate shapes validated"))
}

pub fn compile_model(bundle: &ModelBundle, config: &MachineConfig, strategy: Strategy) -> Result<CompiledProgram, CompileError> {
    bundle.validate()?;
    let name = format!("{}-{}", bundle.kind(), strategy);
    match bundle {
        ModelBundle::Lr(m) => compile_linear(name, &m.w.to_vec(), m.b, false, config),
        ModelBundle::LinearSvm(m) => compile_linear(name, &m.w.to_vec(), m.b, true, config),
        ModelBundle::KernelSvm(m) => compile_kernel(name, m, config, strategy),
        ModelBundle::Ocsvm(m) => compile_ocsvm(name, m, config, strategy),
        ModelBundle::Mlp(m) => compile_mlp(name, m, config),
        ModelBundle::Lstm(m) => compile_lstm(name, m, config),
        ModelBundle::Gru(m) => compile_gru(name, m, config),
        ModelBundle::Krr(_) => Err(CompileError::Unsupported(ModelKind::Krr)),
    }
}

/// LR output is `[p]`; linear SVM output is `[score, decision]`.
fn compile_linear(name: String, w: &[f64], b: f64, svm: bool, config: &MachineConfig) -> Result<CompiledProgram, CompileError> {
    check_field("input length", w.len())?;
    let mut l = Layout::new();
    let x = l.alloc("x", w.len());
    let wa = l.place("w", w.iter().copied());
    let ba = l.place("b", [b]);
    let zero = l.alloc("zero", 1);
    let out = l.alloc("out", 2);
    let mut p = Vec::new();
    emit_affine(&mut p, wa, ba, x, out, zero, 1, w.len(), config.n_local);
    let output = if svm {
        p.push(MacroInstruction::vector(Opcode::Vsgt, 1, out, zero, out + 1));
        Symbol { name: "out".into(), addr: out, len: 2 }
    } else {
        p.push(MacroInstruction::vector(Opcode::Vsig, 1, out, 0, out));
        Symbol { name: "out".into(), addr: out, len: 1 }
    };
    p.push(MacroInstruction::halt());
    let input = l.sym("x");
    l.finish(name, p, input, output, config)
}

struct KernelParts<'a> {
    support: &'a Array2<f64>,
    coef: Vec<f64>,
    bias: f64,
    gamma: f64,
}

/// Gaussian-kernel expansion over an input region already in the layout.
/// Leaves `[score, decision]` at the returned address.
fn emit_kernel(
    l: &mut Layout,
    p: &mut Vec<MacroInstruction>,
    k: &KernelParts<'_>,
    x: usize,
    one_class: bool,
    strategy: Strategy,
) -> Result<usize, CompileError> {
    let (n, d) = k.support.dim();
    if n == 0 {
        return Err(CompileError::Shape("kernel model has no support vectors".into()));
    }
    check_field("support vectors", n)?;
    check_field("input length", d)?;
    let sv = l.place("sv", k.support.iter().copied());
    let coef = l.place("coef", k.coef.iter().copied());
    let bias = l.place("bias", [k.bias]);
    let neg_gamma = l.place("neg_gamma", std::iter::repeat_n(-k.gamma, n));
    let zero = l.shared("zero", 1);
    let zero3 = l.shared("zero3", 3);
    let diff = l.alloc("diff", d);
    let dist = l.alloc("dist", n);
    let out = l.alloc("score", 2);
    match strategy {
        Strategy::Looped => {
            p.push(MacroInstruction::reg_load(RegGroup::Offsets, zero3));
            p.push(MacroInstruction::vector(Opcode::Vadd, 1, bias, zero, out));
            let body = p.len() + 1;
            p.push(MacroInstruction::loop_to(body + 3, n as u32 - 1));
            p.push(MacroInstruction::vector(Opcode::Vsub, d, x, sv, diff).with_offsets(false, true, false));
            p.push(MacroInstruction::vector(Opcode::Vsqnorm, d, diff, 0, dist).with_offsets(false, false, true));
            p.push(MacroInstruction::reg_addi(OffsetReg::Y, d as i32));
            p.push(MacroInstruction::reg_addi(OffsetReg::Z, 1));
        }
        Strategy::Unrolled => {
            p.push(MacroInstruction::vector(Opcode::Vadd, 1, bias, zero, out));
            for i in 0..n {
                p.push(MacroInstruction::vector(Opcode::Vsub, d, x, sv + i * d, diff));
                p.push(MacroInstruction::vector(Opcode::Vsqnorm, d, diff, 0, dist + i));
            }
        }
    }
    p.push(MacroInstruction::vector(Opcode::Vmul, n, dist, neg_gamma, dist));
    p.push(MacroInstruction::vector(Opcode::Vexp, n, dist, 0, dist));
    p.push(MacroInstruction::mvmul(n, 1, coef, dist, out));
    if one_class {
        p.push(MacroInstruction::vector(Opcode::VSsgt, 1, zero, out, out + 1));
    } else {
        p.push(MacroInstruction::vector(Opcode::Vsgt, 1, out, zero, out + 1));
    }
    Ok(out)
}

/// Output is `[score, decision]`; decision 1 means label +1.
fn compile_kernel(name: String, m: &KernelSvm, config: &MachineConfig, strategy: Strategy) -> Result<CompiledProgram, CompileError> {
    let mut l = Layout::new();
    let x = l.alloc("x", m.support.ncols());
    let mut p = Vec::new();
    let parts = KernelParts { support: &m.support, coef: m.coef.to_vec(), bias: m.b, gamma: m.gamma };
    let out = emit_kernel(&mut l, &mut p, &parts, x, false, strategy)?;
    p.push(MacroInstruction::halt());
    let input = l.sym("x");
    l.finish(name, p, input, Symbol { name: "score".into(), addr: out, len: 2 }, config)
}

/// Output is `[score, decision]`; decision 1 means anomaly.
fn compile_ocsvm(name: String, m: &OneClassSvm, config: &MachineConfig, strategy: Strategy) -> Result<CompiledProgram, CompileError> {
    let mut l = Layout::new();
    let x = l.alloc("x", m.support.ncols());
    let mut p = Vec::new();
    let parts = KernelParts { support: &m.support, coef: m.coef.to_vec(), bias: -m.rho, gamma: m.gamma };
    let out = emit_kernel(&mut l, &mut p, &parts, x, true, strategy)?;
    p.push(MacroInstruction::halt());
    let input = l.sym("x");
    l.finish(name, p, input, Symbol { name: "score".into(), addr: out, len: 2 }, config)
}

/// Two-logit MLP; output is `[p]`, the softmax probability of class 1.
fn compile_mlp(name: String, m: &Mlp, config: &MachineConfig) -> Result<CompiledProgram, CompileError> {
    if m.output_len() != 2 {
        return Err(CompileError::Shape(format!("MLP must have 2 outputs, found {}", m.output_len())));
    }
    let widest = m.layers.iter().map(|d| d.w.nrows().max(d.w.ncols())).max().unwrap_or(0);
    check_field("layer width", widest)?;
    let mut l = Layout::new();
    let x = l.alloc("x", m.input_len());
    let zero = l.alloc("zero", widest);
    let mut p = Vec::new();
    let mut act = x;
    for (i, layer) in m.layers.iter().enumerate() {
        let (rows, cols) = layer.w.dim();
        let w = l.place(&format!("W{i}"), row_major(&layer.w));
        let b = l.place(&format!("b{i}"), layer.b.iter().copied());
        let z = l.alloc(&format!("a{i}"), rows);
        emit_affine(&mut p, w, b, act, z, zero, rows, cols, config.n_local);
        if i + 1 < m.layers.len() {
            p.push(MacroInstruction::vector(Opcode::Vsig, rows, z, 0, z));
        }
        act = z;
    }
    let out = l.alloc("p", 1);
    p.push(MacroInstruction::vector(Opcode::Vsub, 1, act + 1, act, out));
    p.push(MacroInstruction::vector(Opcode::Vsig, 1, out, 0, out));
    p.push(MacroInstruction::halt());
    let input = l.sym("x");
    l.finish(name, p, input, Symbol { name: "p".into(), addr: out, len: 1 }, config)
}

/// Shared prologue for recurrent steps: `err = |pred - x|^2` against the
/// previous step's prediction, computed before the state moves.
fn emit_error(p: &mut Vec<MacroInstruction>, pred: usize, x: usize, diff: usize, err: usize, d: usize) {
    p.push(MacroInstruction::vector(Opcode::Vsub, d, pred, x, diff));
    p.push(MacroInstruction::vector(Opcode::Vsqnorm, d, diff, 0, err));
}

fn place_gate(l: &mut Layout, tag: &str, g: &Gate) -> (usize, usize) {
    let w = l.place(&format!("WU_{tag}"), concat_gate(&g.w, &g.u));
    let b = l.place(&format!("b_{tag}"), g.b.iter().copied());
    (w, b)
}

/// One LSTM step. The host writes the reading into `x`; `h` and `c` persist
/// across steps; output is the next-reading prediction. `err` holds the
/// squared error of the previous prediction against this reading.
fn compile_lstm(name: String, m: &Lstm, config: &MachineConfig) -> Result<CompiledProgram, CompileError> {
    let (h, d, o) = (m.hidden_len(), m.input_len(), m.output_len());
    check_field("gate input", h + d)?;
    let mut l = Layout::new();
    let xh = l.alloc("xh", d + h);
    let c = l.alloc("c", h);
    let pred = l.alloc("pred", o);
    let err = l.alloc("err", 1);
    let zero = l.alloc("zero", h.max(o));
    let diff = l.alloc("diff", d);
    let tmp = l.alloc("tmp", h);
    let mut p = Vec::new();
    emit_error(&mut p, pred, xh, diff, err, d.min(o));
    let mut gates = Vec::new();
    for (tag, gate, op) in [
        ("i", &m.input, Opcode::Vsig),
        ("f", &m.forget, Opcode::Vsig),
        ("o", &m.output, Opcode::Vsig),
        ("g", &m.cell, Opcode::Vtanh),
    ] {
        let (w, b) = place_gate(&mut l, tag, gate);
        let z = l.alloc(&format!("gate_{tag}"), h);
        emit_affine(&mut p, w, b, xh, z, zero, h, d + h, config.n_local);
        p.push(MacroInstruction::vector(op, h, z, 0, z));
        gates.push(z);
    }
    let (gi, gf, go, gg) = (gates[0], gates[1], gates[2], gates[3]);
    p.push(MacroInstruction::vector(Opcode::Vmul, h, gf, c, c));
    p.push(MacroInstruction::vector(Opcode::Vmul, h, gi, gg, tmp));
    p.push(MacroInstruction::vector(Opcode::Vadd, h, c, tmp, c));
    p.push(MacroInstruction::vector(Opcode::Vtanh, h, c, 0, tmp));
    p.push(MacroInstruction::vector(Opcode::Vmul, h, go, tmp, xh + d));
    let w_out = l.place("W_out", row_major(&m.w_out));
    let b_out = l.place("b_out", m.b_out.iter().copied());
    emit_affine(&mut p, w_out, b_out, xh + d, pred, zero, o, h, config.n_local);
    p.push(MacroInstruction::halt());
    let input = Symbol { name: "x".into(), addr: xh, len: d };
    l.finish(name, p, input, Symbol { name: "pred".into(), addr: pred, len: o }, config)
}

/// One GRU step, same host contract as the LSTM step.
fn compile_gru(name: String, m: &Gru, config: &MachineConfig) -> Result<CompiledProgram, CompileError> {
    let (h, d, o) = (m.hidden_len(), m.input_len(), m.output_len());
    check_field("gate input", h + d)?;
    let mut l = Layout::new();
    let xh = l.alloc("xh", d + h);
    let xrh = l.alloc("xrh", d + h);
    let pred = l.alloc("pred", o);
    let err = l.alloc("err", 1);
    let zero = l.alloc("zero", h.max(o).max(d));
    let diff = l.alloc("diff", d);
    let tmp = l.alloc("tmp", h);
    let mut p = Vec::new();
    emit_error(&mut p, pred, xh, diff, err, d.min(o));
    let mut gates = Vec::new();
    for (tag, gate) in [("z", &m.update), ("r", &m.reset)] {
        let (w, b) = place_gate(&mut l, tag, gate);
        let z = l.alloc(&format!("gate_{tag}"), h);
        emit_affine(&mut p, w, b, xh, z, zero, h, d + h, config.n_local);
        p.push(MacroInstruction::vector(Opcode::Vsig, h, z, 0, z));
        gates.push(z);
    }
    let (gz, gr) = (gates[0], gates[1]);
    p.push(MacroInstruction::vector(Opcode::Vadd, d, xh, zero, xrh));
    p.push(MacroInstruction::vector(Opcode::Vmul, h, gr, xh + d, xrh + d));
    let wh = l.place("WU_h", concat_gate(&m.w_h, &m.reset.u));
    let bh = l.place("b_h", m.b_h.iter().copied());
    let cand = l.alloc("cand", h);
    emit_affine(&mut p, wh, bh, xrh, cand, zero, h, d + h, config.n_local);
    p.push(MacroInstruction::vector(Opcode::Vsig, h, cand, 0, cand));
    p.push(MacroInstruction::vector(Opcode::Vsub, h, cand, xh + d, tmp));
    p.push(MacroInstruction::vector(Opcode::Vmul, h, gz, tmp, tmp));
    p.push(MacroInstruction::vector(Opcode::Vadd, h, xh + d, tmp, xh + d));
    let w_out = l.place("W_out", row_major(&m.w_out));
    let b_out = l.place("b_out", m.b_out.iter().copied());
    emit_affine(&mut p, w_out, b_out, xh + d, pred, zero, o, h, config.n_local);
    p.push(MacroInstruction::halt());
    let input = Symbol { name: "x".into(), addr: xh, len: d };
    l.finish(name, p, input, Symbol { name: "pred".into(), addr: pred, len: o }, config)
}

/// Regions of the KS stage inside a layout.
struct KsRegions {
    d: usize,
    rej: usize,
}

/// Emits the count-domain KS test of `n` observed errors (at `e`) against
/// every reference PED, leaving per-reference `D_count` values and reject
/// bits. With `stop_at_counts` the reject comparison is skipped.
fn emit_ks(
    l: &mut Layout,
    p: &mut Vec<MacroInstruction>,
    refs: &[Reference],
    cfg: &KsDecisionConfig,
    e: usize,
    strategy: Strategy,
    stop_at_counts: bool,
) -> Result<KsRegions, CompileError> {
    let r = refs.len();
    let n = cfg.n;
    if r == 0 {
        return Err(CompileError::Shape("KS stage needs at least one reference".into()));
    }
    let b = refs[0].ped.boundaries.len();
    for (k, rf) in refs.iter().enumerate() {
        if rf.ped.n != n {
            return Err(CompileError::Shape(format!("reference {k} holds {} errors, expected {n}", rf.ped.n)));
        }
        if rf.ped.boundaries.len() != b {
            return Err(CompileError::Shape(format!("reference {k} has {} bins, expected {b}", rf.ped.boundaries.len())));
        }
    }
    check_field("bins x refs", r * b)?;
    check_field("errors", n)?;
    let nb = l.place("neg_bounds", refs.iter().flat_map(|rf| rf.ped.boundaries.iter().map(|v| -v)));
    let ref_gt = l.place("ref_gt", refs.iter().flat_map(|rf| rf.ped.counts.iter().map(move |&c| (n - c as usize) as f64)));
    let thr = l.place("thr", [cfg.count_threshold()]);
    let zeros = l.alloc("zeros", n);
    let zero3 = l.shared("zero3", 3);
    let loop_save = l.alloc("loop_save", 3);
    let off_save = l.alloc("off_save", 3);
    let ne = l.alloc("neg_errors", n);
    let ind = l.alloc("ind", b);
    let acc = l.alloc("acc", r * b);
    let diff = l.alloc("ks_diff", r * b);
    let d = l.alloc("d_count", r);
    let rej = l.alloc("reject", r);

    p.push(MacroInstruction::vector(Opcode::Vsub, r * b, acc, acc, acc));
    p.push(MacroInstruction::vector(Opcode::Vsub, n, zeros, e, ne));
    match strategy {
        Strategy::Looped => {
            p.insert(p.len() - 2, MacroInstruction::reg_load(RegGroup::Offsets, zero3));
            let outer = p.len();
            p.push(MacroInstruction::loop_to(outer + 10, r as u32 - 1));
            p.push(MacroInstruction::reg_store(RegGroup::Loop, loop_save));
            p.push(MacroInstruction::reg_store(RegGroup::Offsets, off_save));
            p.push(MacroInstruction::loop_to(outer + 6, n as u32 - 1));
            p.push(MacroInstruction::vector(Opcode::VSsgt, b, nb, ne, ind).with_offsets(true, true, false));
            p.push(MacroInstruction::vector(Opcode::Vadd, b, acc, ind, acc).with_offsets(true, false, true));
            p.push(MacroInstruction::reg_addi(OffsetReg::Y, 1));
            p.push(MacroInstruction::reg_load(RegGroup::Loop, loop_save));
            p.push(MacroInstruction::reg_load(RegGroup::Offsets, off_save));
            p.push(MacroInstruction::reg_addi(OffsetReg::X, b as i32));
            p.push(MacroInstruction::reg_addi(OffsetReg::Z, b as i32));
            p.push(MacroInstruction::vector(Opcode::Vsub, r * b, acc, ref_gt, diff));
            p.push(MacroInstruction::reg_load(RegGroup::Offsets, zero3));
            let tail = p.len();
            p.push(MacroInstruction::loop_to(tail + 3, r as u32 - 1));
            p.push(MacroInstruction::vector(Opcode::Vmaxabs, b, diff, 0, d).with_offsets(true, false, true));
            p.push(MacroInstruction::reg_addi(OffsetReg::X, b as i32));
            p.push(MacroInstruction::reg_addi(OffsetReg::Z, 1));
        }
        Strategy::Unrolled => {
            for k in 0..r {
                for i in 0..n {
                    p.push(MacroInstruction::vector(Opcode::VSsgt, b, nb + k * b, ne + i, ind));
                    p.push(MacroInstruction::vector(Opcode::Vadd, b, acc + k * b, ind, acc + k * b));
                }
            }
            p.push(MacroInstruction::vector(Opcode::Vsub, r * b, acc, ref_gt, diff));
            for k in 0..r {
                p.push(MacroInstruction::vector(Opcode::Vmaxabs, b, diff + k * b, 0, d + k));
            }
        }
    }
    if !stop_at_counts {
        p.push(MacroInstruction::vector(Opcode::VSsgt, r, d, thr, rej));
    }
    Ok(KsRegions { d, rej })
}

fn ks_input(l: &mut Layout, n: usize) -> usize {
    l.alloc("errors", n)
}

/// KS test of one window of errors against every reference. Output is the
/// reject bit per reference.
pub fn compile_ks_stage(refs: &[Reference], cfg: &KsDecisionConfig, config: &MachineConfig, strategy: Strategy) -> Result<CompiledProgram, CompileError> {
    cfg.validate()?;
    let mut l = Layout::new();
    let e = ks_input(&mut l, cfg.n);
    let mut p = Vec::new();
    let regions = emit_ks(&mut l, &mut p, refs, cfg, e, strategy, false)?;
    p.push(MacroInstruction::halt());
    let input = l.sym("errors");
    let output = Symbol { name: "reject".into(), addr: regions.rej, len: refs.len() };
    l.finish(format!("ks-{}-{strategy}", cfg.n), p, input, output, config)
}

fn emit_vote(l: &mut Layout, p: &mut Vec<MacroInstruction>, rej: usize, r: usize, cfg: &KsDecisionConfig) -> usize {
    let cnt = l.alloc("vote_count", 1);
    let vt = l.place("vote_threshold", [cfg.vote_threshold as f64]);
    let anomaly = l.alloc("anomaly", 1);
    p.push(MacroInstruction::vector(Opcode::Vsqnorm, r, rej, 0, cnt));
    p.push(MacroInstruction::vector(Opcode::Vsgt, 1, cnt, vt, anomaly));
    anomaly
}

/// The vote alone: reject bits in, one anomaly bit out.
pub fn compile_vote(cfg: &KsDecisionConfig, config: &MachineConfig) -> Result<CompiledProgram, CompileError> {
    cfg.validate()?;
    let mut l = Layout::new();
    let rej = l.alloc("reject", cfg.refs);
    let mut p = Vec::new();
    let anomaly = emit_vote(&mut l, &mut p, rej, cfg.refs, cfg);
    let input = l.sym("reject");
    l.finish("vote-ks".into(), p, input, Symbol { name: "anomaly".into(), addr: anomaly, len: 1 }, config)
}

/// KS stage followed by the vote. Output is `[anomaly]`.
pub fn compile_ks_vote(refs: &[Reference], cfg: &KsDecisionConfig, config: &MachineConfig, strategy: Strategy) -> Result<CompiledProgram, CompileError> {
    cfg.validate()?;
    let mut l = Layout::new();
    let e = ks_input(&mut l, cfg.n);
    let mut p = Vec::new();
    let regions = emit_ks(&mut l, &mut p, refs, cfg, e, strategy, false)?;
    let anomaly = emit_vote(&mut l, &mut p, regions.rej, refs.len(), cfg);
    p.push(MacroInstruction::halt());
    let input = l.sym("errors");
    l.finish(format!("ks-{}-vote-{strategy}", cfg.n), p, input, Symbol { name: "anomaly".into(), addr: anomaly, len: 1 }, config)
}

/// KS statistics against every reference fed to a one-class SVM.
/// Output is `[score, anomaly]`.
pub fn compile_ocsvm_ks(
    refs: &[Reference],
    cfg: &KsDecisionConfig,
    model: &OneClassSvm,
    config: &MachineConfig,
    strategy: Strategy,
) -> Result<CompiledProgram, CompileError> {
    cfg.validate()?;
    if model.support.ncols() != refs.len() {
        return Err(CompileError::Shape(format!("OCSVM expects {} features, found {} references", model.support.ncols(), refs.len())));
    }
    let mut l = Layout::new();
    let e = ks_input(&mut l, cfg.n);
    let mut p = Vec::new();
    let regions = emit_ks(&mut l, &mut p, refs, cfg, e, strategy, true)?;
    let inv_n = l.place("inv_n", std::iter::repeat_n(1.0 / cfg.n as f64, refs.len()));
    let feat = l.alloc("ks_features", refs.len());
    p.push(MacroInstruction::vector(Opcode::Vmul, refs.len(), regions.d, inv_n, feat));
    let parts = KernelParts { support: &model.support, coef: model.coef.to_vec(), bias: -model.rho, gamma: model.gamma };
    let out = emit_kernel(&mut l, &mut p, &parts, feat, true, strategy)?;
    p.push(MacroInstruction::halt());
    let input = l.sym("errors");
    l.finish(format!("ocsvm-ks-{strategy}"), p, input, Symbol { name: "score".into(), addr: out, len: 2 }, config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodeSizeRow {
    pub name: String,
    pub instructions: usize,
    pub bytes: usize,
    pub unrolled_bytes: usize,
    pub reduction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodeSizeReport {
    pub rows: Vec<CodeSizeRow>,
}

/// Sizes per stage; a stage without an unrolled variant reports itself.
pub fn code_size_report(programs: &[(&str, &CompiledProgram, Option<&CompiledProgram>)]) -> CodeSizeReport {
    let rows = programs
        .iter()
        .map(|(name, looped, unrolled)| {
            let bytes = looped.code_size_bytes();
            let unrolled_bytes = unrolled.map_or(bytes, |u| u.code_size_bytes());
            CodeSizeRow {
                name: name.to_string(),
                instructions: looped.instructions(),
                bytes,
                unrolled_bytes,
                reduction: unrolled_bytes as f64 / bytes as f64,
            }
        })
        .collect();
    CodeSizeReport { rows }
}

impl fmt::Display for CodeSizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stage,instructions,bytes,unrolled_bytes,reduction")?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{},{:.1}", r.name, r.instructions, r.bytes, r.unrolled_bytes, r.reduction)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Dense, LogisticRegression};
    use ndarray::{Array1, Array2};

    #[test]
    fn blocks_are_balanced() {
        assert_eq!(row_blocks(200, 64), vec![(0, 50), (50, 50), (100, 50), (150, 50)]);
        assert_eq!(row_blocks(50, 64), vec![(0, 50)]);
        assert_eq!(row_blocks(65, 64), vec![(0, 33), (33, 32)]);
        assert!(row_blocks(500, 64).iter().all(|&(_, n)| n <= 64));
    }

    fn mlp(sizes: &[usize]) -> ModelBundle {
        let layers = sizes
            .windows(2)
            .map(|w| Dense { w: Array2::from_elem((w[1], w[0]), 0.01), b: Array1::zeros(w[1]) })
            .collect();
        ModelBundle::Mlp(Mlp { layers })
    }

    #[test]
    fn mlp_instruction_counts() {
        let cfg = MachineConfig::default();
        let count = |s: &[usize]| compile_model(&mlp(s), &cfg, Strategy::Looped).unwrap().instructions();
        assert_eq!(count(&[384, 50, 2]), 8);
        assert_eq!(count(&[384, 500, 2]), 15);
        assert_eq!(count(&[384, 50, 25, 2]), 11);
        assert_eq!(count(&[384, 200, 100, 2]), 15);
    }

    #[test]
    fn every_mvmul_fits_the_scratchpad() {
        let cfg = MachineConfig::default();
        let prog = compile_model(&mlp(&[384, 500, 2]), &cfg, Strategy::Looped).unwrap();
        assert!(prog.program.iter().filter(|i| i.opcode == Opcode::Mvmul).all(|i| i.width as usize <= cfg.n_local));
    }

    #[test]
    fn symbols_do_not_overlap() {
        let prog = compile_model(&mlp(&[8, 5, 2]), &MachineConfig::default(), Strategy::Looped).unwrap();
        let mut s = prog.symbols.clone();
        s.sort_by_key(|s| s.addr);
        assert!(s.windows(2).all(|w| w[0].addr + w[0].len <= w[1].addr));
        let (parsed, input, output) = parse_symbol_table(&prog.symbol_table_text()).unwrap();
        assert_eq!(parsed, prog.symbols);
        assert_eq!(input.unwrap(), prog.input);
        assert_eq!(output.unwrap(), prog.output);
    }

    #[test]
    fn krr_is_rejected() {
        let krr = ModelBundle::Krr(crate::models::Krr { w: Array1::zeros(15), b: 0.0, lambda: 1.0 });
        assert_eq!(compile_model(&krr, &MachineConfig::default(), Strategy::Looped).unwrap_err(), CompileError::Unsupported(ModelKind::Krr));
    }

    #[test]
    fn clamped_parameters_warn() {
        let lr = ModelBundle::Lr(LogisticRegression { w: Array1::from_vec(vec![1e6, 0.5]), b: 0.0 });
        let prog = compile_model(&lr, &MachineConfig::default(), Strategy::Looped).unwrap();
        assert_eq!(prog.warnings.len(), 1);
        assert!(prog.warnings[0].contains('w'));
    }

    #[test]
    fn lr_runs() {
        let lr = ModelBundle::Lr(LogisticRegression { w: Array1::from_vec(vec![1.0, -2.0]), b: 0.5 });
        let prog = compile_model(&lr, &MachineConfig::default(), Strategy::Looped).unwrap();
        let mut m = prog.load(MachineConfig { data_mem_words: 64, ..MachineConfig::default() }).unwrap();
        let (out, _) = prog.execute(&mut m, &[1.0, 1.0]).unwrap();
        assert!((out[0] - crate::models::sigmoid(-0.5)).abs() < 2f64.powi(-8));
        let (again, _) = prog.execute(&mut m, &[1.0, 1.0]).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("looped".parse::<Strategy>().unwrap(), Strategy::Looped);
        assert!("rolled".parse::<Strategy>().is_err());
    }
}
