#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sid_core::compile::{compile_ks_vote, compile_model, CompiledProgram, Strategy};
use sid_core::detection::{KsDecisionConfig, Reference};
use sid_core::machine::MachineConfig;
use sid_core::models::{Dense, Gate, Gru, KernelSvm, LinearSvm, LogisticRegression, Lstm, Mlp, ModelBundle, OneClassSvm};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-scale..scale))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random_range(-scale..scale))
}

pub fn mlp(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Mlp {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let scale = (6.0 / (w[0] + w[1]) as f64).sqrt();
            Dense { w: uniform(rng, (w[1], w[0]), scale), b: uniform_vec(rng, w[1], 0.1) }
        })
        .collect();
    Mlp { layers }
}

fn gate(rng: &mut ChaCha8Rng, h: usize, d: usize, scale: f64) -> Gate {
    Gate { w: uniform(rng, (h, d), scale), u: uniform(rng, (h, h), scale), b: uniform_vec(rng, h, scale) }
}

pub fn lstm(rng: &mut ChaCha8Rng, h: usize, d: usize, scale: f64) -> Lstm {
    Lstm {
        input: gate(rng, h, d, scale),
        forget: gate(rng, h, d, scale),
        output: gate(rng, h, d, scale),
        cell: gate(rng, h, d, scale),
        w_out: uniform(rng, (d, h), scale),
        b_out: uniform_vec(rng, d, scale),
    }
}

pub fn gru(rng: &mut ChaCha8Rng, h: usize, d: usize, scale: f64) -> Gru {
    Gru {
        update: gate(rng, h, d, scale),
        reset: gate(rng, h, d, scale),
        w_h: uniform(rng, (h, d), scale),
        b_h: uniform_vec(rng, h, scale),
        w_out: uniform(rng, (d, h), scale),
        b_out: uniform_vec(rng, d, scale),
    }
}

pub fn kernel_svm(rng: &mut ChaCha8Rng, n: usize, d: usize) -> KernelSvm {
    KernelSvm { support: uniform(rng, (n, d), 2.0), coef: uniform_vec(rng, n, 1.0), b: rng.random_range(-0.2..0.2), gamma: 0.25 }
}

pub fn ocsvm(rng: &mut ChaCha8Rng, n: usize, d: usize) -> OneClassSvm {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    OneClassSvm {
        support: Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0)),
        coef: Array1::from_iter(raw.iter().map(|v| v / total)),
        rho: rng.random_range(0.2..0.6),
        gamma: 1.0,
    }
}

/// Reference samples on a 2^-10 grid so fixed-point storage is exact.
pub fn grid_sample(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.random_range(lo..hi) * 1024.0).round() / 1024.0).collect()
}

pub fn references(rng: &mut ChaCha8Rng, r: usize, n: usize, bins: usize) -> Vec<Reference> {
    (0..r).map(|_| Reference::new(grid_sample(rng, n, 0.0, 2.0), bins).unwrap()).collect()
}

/// Named set of compiled programs covering every supported stage.
pub fn program_suite(config: &MachineConfig, strategy: Strategy) -> Vec<(String, Option<ModelBundle>, CompiledProgram)> {
    let mut r = rng(42);
    let bundles = vec![
        ("lr", ModelBundle::Lr(LogisticRegression { w: uniform_vec(&mut r, 64, 0.2), b: 0.1 })),
        ("linear-svm", ModelBundle::LinearSvm(LinearSvm { w: uniform_vec(&mut r, 64, 0.2), b: -0.1 })),
        ("kernel-svm", ModelBundle::KernelSvm(kernel_svm(&mut r, 40, 14))),
        ("mlp-50", ModelBundle::Mlp(mlp(&mut r, &[384, 50, 2]))),
        ("mlp-200-100", ModelBundle::Mlp(mlp(&mut r, &[384, 200, 100, 2]))),
        ("ocsvm", ModelBundle::Ocsvm(ocsvm(&mut r, 30, 20))),
        ("lstm-200", ModelBundle::Lstm(lstm(&mut r, 200, 6, 0.1))),
        ("gru-64", ModelBundle::Gru(gru(&mut r, 64, 6, 0.2))),
    ];
    let mut out: Vec<_> = bundles
        .into_iter()
        .map(|(name, b)| {
            let p = compile_model(&b, config, strategy).unwrap();
            (name.to_string(), Some(b), p)
        })
        .collect();
    let refs = references(&mut r, 20, 40, 16);
    let ks = compile_ks_vote(&refs, &KsDecisionConfig::default(), config, strategy).unwrap();
    out.push(("ks-40-vote".into(), None, ks));
    out
}
