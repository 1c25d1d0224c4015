//! One PASS/FAIL line per acceptance criterion. Set `SID_ACCEPTANCE_STRICT=1`
//! to turn any FAIL into a non-zero exit status.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array1;
use num_rational::Ratio;
use rand::{Rng, RngCore};
use sid_core::compile::{compile_ks_stage, compile_model, compile_vote, read_real, CompiledProgram, Strategy};
use sid_core::data::{synth_generate, GaitParams};
use sid_core::detection::{
    combined_score_normalized, confusion_metrics_exact, ks_hardware, ks_statistic_exact, ConfusionCounts, KsDecisionConfig, Reference,
};
use sid_core::energy::{energy_ratio, DeviceProfile};
use sid_core::isa::{MacroInstruction, Opcode};
use sid_core::machine::{MachineConfig, MachineState};
use sid_core::models::{
    gru_sequence_grad, infer_kernel_svm, infer_linear_svm, infer_lr, infer_mlp, infer_ocsvm, lstm_sequence_grad, mlp_loss_and_grad,
    step_gru, step_lstm, Mlp, ModelBundle, ModelKind,
};
use sid_core::numerics::FxWord;
use sid_core::pipeline::{evaluate_lad, mean_accuracy, LadConfig, PipelineKind};

use common::*;

/// Per-element fixed-point tolerance against the float oracle.
const FX_TOL: f64 = 1.0 / 256.0;
const GRAD_EPS: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const PERIOD_S: f64 = 0.020;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn isa_roundtrip() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut failures = 0;
    for _ in 0..10_000 {
        let inst = MacroInstruction {
            opcode: Opcode::from_mode(r.random_range(0..16)),
            length: r.random_range(0..1 << 14),
            width: r.random_range(0..1 << 14),
            off_x: r.random(),
            off_y: r.random(),
            off_z: r.random(),
            addr_x: r.random_range(0..1 << 31),
            addr_y: r.random_range(0..1 << 31),
            addr_z: r.random_range(0..1 << 31),
        };
        if MacroInstruction::decode(inst.encode().unwrap()) != inst {
            failures += 1;
        }
        let word = ((r.next_u64() as u128) << 64) | r.next_u64() as u128;
        if MacroInstruction::decode(word).encode().unwrap() != word {
            failures += 1;
        }
    }
    let t = start.elapsed();
    outcome(failures == 0 && within(t, 5.0), format!("10000 instructions, {failures} mismatches, {:.2}s", t.as_secs_f64()))
}

/// Cycle cost written out independently of the machine.
fn expected_cycles(inst: &MacroInstruction, n_track: u64) -> u64 {
    let iters = (inst.length as u64).div_ceil(n_track);
    match inst.opcode {
        Opcode::Loop | Opcode::RegAddi | Opcode::RegStore | Opcode::RegLoad | Opcode::Halt => 1,
        Opcode::Mvmul => inst.width as u64 * iters + 4,
        _ => iters + 4,
    }
}

fn random_input(r: &mut impl Rng, len: usize) -> Vec<FxWord> {
    (0..len).map(|_| FxWord::from_real(r.random_range(0.0..2.0))).collect()
}

fn n_track_invariance() -> Outcome {
    let config = MachineConfig::default();
    let suite = program_suite(&config, Strategy::Looped);
    let mut r = rng(2);
    let mut bad = Vec::new();
    for (name, _, prog) in &suite {
        let input = random_input(&mut r, prog.input.len);
        let mut reference: Option<Vec<FxWord>> = None;
        for n_track in [1, 2, 4, 8] {
            let mut m = prog.load(config.clone().with_n_track(n_track)).unwrap();
            m.write(prog.input.addr, &input);
            let mut expected = 0;
            while !m.halted {
                if let Some(inst) = m.program().get(m.pc).copied() {
                    expected += expected_cycles(&inst, n_track as u64);
                }
                m.step().unwrap();
            }
            if m.cycles != expected {
                bad.push(format!("{name}@{n_track}: cycles {} != {expected}", m.cycles));
            }
            match &reference {
                None => reference = Some(m.memory().to_vec()),
                Some(mem) if mem.as_slice() != m.memory() => bad.push(format!("{name}@{n_track}: memory differs")),
                _ => {}
            }
        }
    }
    outcome(bad.is_empty(), format!("{} programs x n_track {{1,2,4,8}}; {}", suite.len(), if bad.is_empty() { "all identical".into() } else { bad.join("; ") }))
}

fn write_real(m: &mut MachineState, addr: usize, vals: &[f64]) {
    let w: Vec<FxWord> = vals.iter().map(|&v| FxWord::from_real(v)).collect();
    m.write(addr, &w);
}

fn sym_addr(p: &CompiledProgram, name: &str) -> usize {
    p.symbol(name).unwrap().addr
}

struct OracleStats {
    worst: f64,
    decision_mismatches: usize,
}

impl OracleStats {
    fn check(&mut self, sim: &[f64], oracle: &[f64]) {
        for (s, o) in sim.iter().zip(oracle) {
            self.worst = self.worst.max((s - o).abs());
        }
    }

    /// Decisions may differ only when the oracle score sits within the tolerance band.
    fn decision(&mut self, sim_bit: f64, oracle_bit: bool, oracle_score: f64) {
        if (sim_bit == 1.0) != oracle_bit && oracle_score.abs() > FX_TOL {
            self.decision_mismatches += 1;
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let config = MachineConfig::default();
    let suite = program_suite(&config, Strategy::Looped);
    let mut r = rng(3);
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, bundle, prog) in &suite {
        let Some(bundle) = bundle else { continue };
        let mut m = prog.load(config.clone()).unwrap();
        let mut st = OracleStats { worst: 0.0, decision_mismatches: 0 };
        for _ in 0..100 {
            match bundle {
                ModelBundle::Lr(lr) => {
                    let x = uniform_vec(&mut r, lr.w.len(), 8.0);
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    st.check(&out, &[infer_lr(lr, x.view()).unwrap()]);
                }
                ModelBundle::LinearSvm(svm) => {
                    let x = uniform_vec(&mut r, svm.w.len(), 8.0);
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    let d = infer_linear_svm(svm, x.view()).unwrap();
                    st.check(&out[..1], &[d.score]);
                    st.decision(out[1], d.label > 0, d.score);
                }
                ModelBundle::KernelSvm(svm) => {
                    let k = r.random_range(0..svm.support.nrows());
                    let x = &svm.support.row(k) + &uniform_vec(&mut r, svm.support.ncols(), 1.0);
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    let d = infer_kernel_svm(svm, x.view()).unwrap();
                    st.check(&out[..1], &[d.score]);
                    st.decision(out[1], d.label > 0, d.score);
                }
                ModelBundle::Ocsvm(oc) => {
                    let x = Array1::from_shape_fn(oc.support.ncols(), |_| r.random_range(0.0..1.0));
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    let d = infer_ocsvm(oc, x.view()).unwrap();
                    st.check(&out[..1], &[d.score]);
                    st.decision(out[1], d.anomaly, d.score);
                }
                ModelBundle::Mlp(mlp) => {
                    let x = uniform_vec(&mut r, mlp.input_len(), 8.0);
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    st.check(&out, &[infer_mlp(mlp, x.view()).unwrap()[1]]);
                }
                ModelBundle::Lstm(lstm) => {
                    let (h, d) = (lstm.hidden_len(), lstm.input_len());
                    let (x, h0, c0, prev) =
                        (uniform_vec(&mut r, d, 8.0), uniform_vec(&mut r, h, 1.0), uniform_vec(&mut r, h, 4.0), uniform_vec(&mut r, d, 8.0));
                    let xh = sym_addr(prog, "xh");
                    write_real(&mut m, xh + d, h0.as_slice().unwrap());
                    write_real(&mut m, sym_addr(prog, "c"), c0.as_slice().unwrap());
                    write_real(&mut m, sym_addr(prog, "pred"), prev.as_slice().unwrap());
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    let o = step_lstm(lstm, h0.view(), c0.view(), x.view()).unwrap();
                    st.check(&out, o.prediction.as_slice().unwrap());
                    st.check(&read_real(&m, &sym(xh + d, h)), o.h.as_slice().unwrap());
                    st.check(&read_real(&m, prog.symbol("c").unwrap()), o.c.as_slice().unwrap());
                    let err: f64 = (&prev - &x).mapv(|v| v * v).sum();
                    st.check(&read_real(&m, prog.symbol("err").unwrap()), &[err]);
                }
                ModelBundle::Gru(gru) => {
                    let (h, d) = (gru.hidden_len(), gru.input_len());
                    let (x, h0, prev) = (uniform_vec(&mut r, d, 8.0), uniform_vec(&mut r, h, 1.0), uniform_vec(&mut r, d, 8.0));
                    let xh = sym_addr(prog, "xh");
                    write_real(&mut m, xh + d, h0.as_slice().unwrap());
                    write_real(&mut m, sym_addr(prog, "pred"), prev.as_slice().unwrap());
                    let (out, _) = prog.execute(&mut m, x.as_slice().unwrap()).unwrap();
                    let o = step_gru(gru, h0.view(), x.view()).unwrap();
                    st.check(&out, o.prediction.as_slice().unwrap());
                    st.check(&read_real(&m, &sym(xh + d, h)), o.h.as_slice().unwrap());
                    let err: f64 = (&prev - &x).mapv(|v| v * v).sum();
                    st.check(&read_real(&m, prog.symbol("err").unwrap()), &[err]);
                }
                ModelBundle::Krr(_) => unreachable!(),
            }
        }
        let ok = st.worst <= FX_TOL && st.decision_mismatches == 0;
        pass &= ok;
        lines.push(format!("{name} max|err|={:.5}{}", st.worst, if st.decision_mismatches > 0 { " decision mismatch" } else { "" }));
    }
    let t = start.elapsed();
    outcome(pass && within(t, 120.0), format!("100 inputs each, tol 2^-8: {}; {:.1}s", lines.join(", "), t.as_secs_f64()))
}

fn sym(addr: usize, len: usize) -> sid_core::compile::Symbol {
    sid_core::compile::Symbol { name: String::new(), addr, len }
}

/// `sup |F_a - F_b|` over every merged sample point, as an exact fraction.
fn brute_ks(a: &[f64], b: &[f64]) -> Ratio<u64> {
    let (n, m) = (a.len() as u64, b.len() as u64);
    a.iter()
        .chain(b)
        .map(|&x| {
            let ca = a.iter().filter(|&&v| v <= x).count() as u64;
            let cb = b.iter().filter(|&&v| v <= x).count() as u64;
            Ratio::new((ca * m).abs_diff(cb * n), n * m)
        })
        .max()
        .unwrap()
}

fn brute_boundary_counts(reference: &Reference, observed: &[f64]) -> u32 {
    reference
        .ped
        .boundaries
        .iter()
        .map(|&b| {
            let fr = reference.sample.iter().filter(|&&v| v <= b).count() as i64;
            let fo = observed.iter().filter(|&&v| v <= b).count() as i64;
            fr.abs_diff(fo) as u32
        })
        .max()
        .unwrap()
}

fn random_sample(r: &mut impl Rng, n: usize) -> Vec<f64> {
    if r.random_bool(0.5) {
        (0..n).map(|_| r.random_range(0..12) as f64).collect()
    } else {
        (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
    }
}

fn ks_oracle() -> Outcome {
    let mut r = rng(4);
    let cfg = KsDecisionConfig::default();
    let mut sw_bad = 0;
    for _ in 0..1000 {
        let (n, m) = (r.random_range(1..60), r.random_range(1..60));
        let (a, b) = (random_sample(&mut r, n), random_sample(&mut r, m));
        if ks_statistic_exact(&a, &b).unwrap() != brute_ks(&a, &b) {
            sw_bad += 1;
        }
    }
    let mut hw_bad = 0;
    for _ in 0..1000 {
        let reference = Reference::new(random_sample(&mut r, cfg.n), 16).unwrap();
        let scale = r.random_range(0.5..2.0);
        let observed: Vec<f64> = random_sample(&mut r, cfg.n).into_iter().map(|v| v * scale).collect();
        if ks_hardware(&reference.ped, &observed, &cfg).unwrap().d_count != brute_boundary_counts(&reference, &observed) {
            hw_bad += 1;
        }
    }
    let config = MachineConfig::default();
    let (mut prog_bad, mut rejections, mut total_bits) = (0, 0, 0);
    for case in 0..100 {
        let refs = references(&mut r, cfg.refs, cfg.n, 16);
        let strategy = if case % 2 == 0 { Strategy::Looped } else { Strategy::Unrolled };
        let prog = compile_ks_stage(&refs, &cfg, &config, strategy).unwrap();
        let hi = r.random_range(1.0..4.0);
        let observed = grid_sample(&mut r, cfg.n, 0.0, hi);
        let mut m = prog.load(config.clone()).unwrap();
        let (bits, _) = prog.execute(&mut m, &observed).unwrap();
        for (bit, rf) in bits.iter().zip(&refs) {
            let hw = ks_hardware(&rf.ped, &observed, &cfg).unwrap();
            total_bits += 1;
            rejections += usize::from(hw.reject);
            if (*bit == 1.0) != hw.reject {
                prog_bad += 1;
            }
        }
    }
    outcome(
        sw_bad == 0 && hw_bad == 0 && prog_bad == 0,
        format!(
            "software vs brute force {sw_bad}/1000 mismatches; hardware counts {hw_bad}/1000; compiled program {prog_bad}/{total_bits} bits ({rejections} rejects)"
        ),
    )
}

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

fn central_difference(params: &[f64], loss: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + GRAD_EPS;
            let up = loss(&p);
            p[i] = orig - GRAD_EPS;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * GRAD_EPS)
        })
        .collect()
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let (mut worst_mlp, mut worst_lstm, mut worst_gru) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let mlp = ModelBundle::Mlp(common::mlp(&mut r, &[5, 4, 3, 2]));
        let x = uniform(&mut r, (3, 5), 1.0);
        let classes: Vec<usize> = (0..3).map(|_| r.random_range(0..2)).collect();
        let as_mlp = |b: &ModelBundle| -> Mlp {
            match b {
                ModelBundle::Mlp(m) => m.clone(),
                _ => unreachable!(),
            }
        };
        let (_, g) = mlp_loss_and_grad(&as_mlp(&mlp), x.view(), &classes).unwrap();
        let fd = central_difference(&mlp.flat_params(), |p| {
            mlp_loss_and_grad(&as_mlp(&mlp.with_flat_params(p).unwrap()), x.view(), &classes).unwrap().0
        });
        worst_mlp = worst_mlp.max(max_rel_error(&ModelBundle::Mlp(g).flat_params(), &fd));

        let (h, d, t) = (4, 3, 6);
        let lstm = ModelBundle::Lstm(common::lstm(&mut r, h, d, 0.5));
        let (inputs, targets) = (uniform(&mut r, (t, d), 1.0), uniform(&mut r, (t, d), 1.0));
        let (h0, c0) = (uniform_vec(&mut r, h, 0.5), uniform_vec(&mut r, h, 0.5));
        let lstm_of = |b: &ModelBundle| match b {
            ModelBundle::Lstm(m) => m.clone(),
            _ => unreachable!(),
        };
        let (_, g, _, _) = lstm_sequence_grad(&lstm_of(&lstm), h0.view(), c0.view(), inputs.view(), targets.view()).unwrap();
        let fd = central_difference(&lstm.flat_params(), |p| {
            lstm_sequence_grad(&lstm_of(&lstm.with_flat_params(p).unwrap()), h0.view(), c0.view(), inputs.view(), targets.view()).unwrap().0
        });
        worst_lstm = worst_lstm.max(max_rel_error(&ModelBundle::Lstm(g).flat_params(), &fd));

        let gru = ModelBundle::Gru(common::gru(&mut r, h, d, 0.5));
        let gru_of = |b: &ModelBundle| match b {
            ModelBundle::Gru(m) => m.clone(),
            _ => unreachable!(),
        };
        let (_, g, _) = gru_sequence_grad(&gru_of(&gru), h0.view(), inputs.view(), targets.view()).unwrap();
        let fd = central_difference(&gru.flat_params(), |p| {
            gru_sequence_grad(&gru_of(&gru.with_flat_params(p).unwrap()), h0.view(), inputs.view(), targets.view()).unwrap().0
        });
        worst_gru = worst_gru.max(max_rel_error(&ModelBundle::Gru(g).flat_params(), &fd));
    }
    let t = start.elapsed();
    let worst = worst_mlp.max(worst_lstm).max(worst_gru);
    outcome(
        worst < GRAD_TOL && within(t, 60.0),
        format!("max relative error MLP {worst_mlp:.2e}, LSTM {worst_lstm:.2e}, GRU {worst_gru:.2e} (tol 1e-4); {:.1}s", t.as_secs_f64()),
    )
}

fn zero_mlp(sizes: &[usize]) -> ModelBundle {
    let mut r = rng(6);
    ModelBundle::Mlp(common::mlp(&mut r, sizes))
}

fn code_size() -> Outcome {
    let config = MachineConfig::default();
    let cfg = KsDecisionConfig::default();
    let mut r = rng(7);
    let looped = |b: &ModelBundle| compile_model(b, &config, Strategy::Looped).unwrap();
    let lstm = ModelBundle::Lstm(common::lstm(&mut r, 200, 6, 0.1));
    let refs = references(&mut r, cfg.refs, cfg.n, 16);
    let ks_looped = compile_ks_stage(&refs, &cfg, &config, Strategy::Looped).unwrap();
    let ks_unrolled = compile_ks_stage(&refs, &cfg, &config, Strategy::Unrolled).unwrap();
    let staged = [
        ("MLP-50", looped(&zero_mlp(&[384, 50, 2])), 112),
        ("MLP-500", looped(&zero_mlp(&[384, 500, 2])), 224),
        ("MLP-50-25", looped(&zero_mlp(&[384, 50, 25, 2])), 208),
        ("MLP-200-100", looped(&zero_mlp(&[384, 200, 100, 2])), 224),
        ("LSTM-200", looped(&lstm), 560),
        ("KS-40", ks_looped.clone(), 352),
        ("Vote-KS", compile_vote(&cfg, &config).unwrap(), 32),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, prog, target) in &staged {
        let ok = prog.code_size_bytes().abs_diff(*target) <= 64;
        pass &= ok;
        parts.push(format!("{name} {}B (target {target}){}", prog.code_size_bytes(), if ok { "" } else { " OUT" }));
    }
    let ks_ratio = ks_unrolled.code_size_bytes() as f64 / ks_looped.code_size_bytes() as f64;
    let svm = ModelBundle::KernelSvm(kernel_svm(&mut r, 400, 14));
    let svm_l = compile_model(&svm, &config, Strategy::Looped).unwrap();
    let svm_u = compile_model(&svm, &config, Strategy::Unrolled).unwrap();
    let svm_ratio = svm_u.code_size_bytes() as f64 / svm_l.code_size_bytes() as f64;
    pass &= ks_ratio >= 100.0 && svm_ratio >= 50.0;
    parts.push(format!("KS unrolled/looped {ks_ratio:.1}X (need >= 100)"));
    parts.push(format!("kernel SVM 400 SVs {svm_ratio:.1}X (need >= 50)"));
    outcome(pass, parts.join(", "))
}

/// Wall time of one LSTM-200 step and of one full KS-40 + vote pass at n_track = 4.
fn detection_step_times() -> (f64, f64) {
    let config = MachineConfig::default();
    let mut r = rng(8);
    let lstm = compile_model(&ModelBundle::Lstm(common::lstm(&mut r, 200, 6, 0.1)), &config, Strategy::Looped).unwrap();
    let mut m = lstm.load(config.clone()).unwrap();
    let (_, lstm_report) = lstm.execute(&mut m, &[0.5; 6]).unwrap();
    let cfg = KsDecisionConfig::default();
    let refs = references(&mut r, cfg.refs, cfg.n, 16);
    let ks = sid_core::compile::compile_ks_vote(&refs, &cfg, &config, Strategy::Looped).unwrap();
    let mut m = ks.load(config.clone()).unwrap();
    let (_, ks_report) = ks.execute(&mut m, &grid_sample(&mut r, cfg.n, 0.0, 2.0)).unwrap();
    (lstm_report.wall_time_s, ks_report.wall_time_s)
}

fn real_time() -> Outcome {
    let (lstm, ks) = detection_step_times();
    let amortized = lstm + ks / KsDecisionConfig::default().n as f64;
    outcome(
        lstm + ks < PERIOD_S,
        format!("LSTM-200 step {:.3} ms, KS-40+vote {:.3} ms, amortized {:.3} ms, unamortized {:.3} ms < 20 ms", lstm * 1e3, ks * 1e3, amortized * 1e3, (lstm + ks) * 1e3),
    )
}

fn energy() -> Outcome {
    let (lstm, ks) = detection_step_times();
    let t_sid = lstm + ks;
    let (gpu, sid) = (DeviceProfile::gpu(), DeviceProfile::sid());
    let sweep: Vec<(f64, f64)> = [0.5e-3, 0.75e-3, 1.0e-3, 1.5e-3, 2.0e-3]
        .iter()
        .map(|&t| (t, energy_ratio(&[(&gpu, t)], &[(&sid, t_sid)], PERIOD_S).unwrap().ratio))
        .collect();
    let idle = energy_ratio(&[(&gpu, 0.0)], &[(&sid, 0.0)], PERIOD_S).unwrap().idle_ratio;
    let in_bracket = sweep.iter().filter(|(_, ratio)| (55.0..=70.0).contains(ratio)).count();
    let text: Vec<String> = sweep.iter().map(|(t, ratio)| format!("{:.2}ms:{ratio:.1}X", t * 1e3)).collect();
    outcome(
        in_bracket > 0 && (idle - 66.66).abs() < 0.01,
        format!("t_SID {:.3} ms; t_GPU sweep {}; {in_bracket}/5 in [55,70]; idle ratio {idle:.2}", t_sid * 1e3, text.join(" ")),
    )
}

fn synthetic_ped() -> Outcome {
    let start = Instant::now();
    let owner = GaitParams::random(1.6, 0.1, 11);
    let impostor = owner.mimic(1.8, 0.03, 12);
    let seqs = synth_generate(&[owner, impostor], 6, 1200).unwrap();
    let cfg = LadConfig { train: sid_core::models::TrainConfig { epochs: 10, learning_rate: 2e-2, ..Default::default() }, ..LadConfig::default() };
    let rows = evaluate_lad(&seqs, ModelKind::Lstm, &[PipelineKind::Vote, PipelineKind::Threshold], &cfg).unwrap();
    let (vote, thr) = (mean_accuracy(&rows, PipelineKind::Vote), mean_accuracy(&rows, PipelineKind::Threshold));
    let t = start.elapsed();
    outcome(
        vote >= 0.8 && vote - thr >= 0.10 && within(t, 600.0),
        format!("PED-vote accuracy {:.1}%, mean-threshold {:.1}%, margin {:+.1} pp; {:.1}s", vote * 100.0, thr * 100.0, (vote - thr) * 100.0, t.as_secs_f64()),
    )
}

fn metric_identities() -> Outcome {
    let mut r = rng(9);
    let mut bad = 0;
    for _ in 0..1000 {
        let total = r.random_range(1..10_000u64);
        let c = ConfusionCounts { tp: r.random_range(0..=total), tn: r.random_range(0..=total), fp: 0, fn_: 0 };
        let c = ConfusionCounts { fn_: total - c.tp, fp: total - c.tn, ..c };
        let e = confusion_metrics_exact(&c).unwrap();
        if e.accuracy != (e.tnr + e.tpr) / Ratio::from_integer(2) {
            bad += 1;
        }
    }
    let score = combined_score_normalized([3.06, 6.03, 1.0, 1.0], [0.5; 4]);
    let rounded = (score * 100.0).round() / 100.0;
    outcome(bad == 0 && rounded == 0.36, format!("{bad}/1000 identity failures; OCSVM combined score {score:.4} -> {rounded:.2}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("ISA roundtrip", isa_roundtrip),
        ("N_track invariance", n_track_invariance),
        ("oracle equivalence", oracle_equivalence),
        ("KS oracle", ks_oracle),
        ("gradient checks", gradient_checks),
        ("code size", code_size),
        ("real-time", real_time),
        ("energy", energy),
        ("synthetic PED analogue", synthetic_ped),
        ("metric identities", metric_identities),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/10 criteria pass", 10 - failed);
    if failed > 0 && std::env::var_os("SID_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
