//! Synthetic gait, HAPT-format loading and window features.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::models::CHANNELS;

pub const SAMPLE_HZ: f64 = 50.0;
pub const HARMONICS: usize = 3;
/// HAPT activity id of walking.
pub const WALK_ACTIVITY: u32 = 1;
pub const DFT_LEN: usize = 64;
pub const KRR_FEATURES: usize = 14;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{acc} has {acc_rows} rows but {gyro} has {gyro_rows}")]
    RowMismatch { acc: PathBuf, acc_rows: usize, gyro: PathBuf, gyro_rows: usize },
    #[error("expected a series of {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid gait parameters: {0}")]
    Params(String),
}

/// Readings are rows of six channels: acc x/y/z then gyro x/y/z, at 50 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct UserSequence {
    pub user: u32,
    pub sequence: u32,
    pub readings: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaitParams {
    pub step_hz: f64,
    pub amplitude: [[f64; HARMONICS]; CHANNELS],
    pub phase: [[f64; HARMONICS]; CHANNELS],
    pub noise_std: f64,
    pub seed: u64,
}

impl GaitParams {
    /// Random amplitudes in `[0.2, 1.0] / h` and uniform phases for harmonic `h`.
    pub fn random(step_hz: f64, noise_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amplitude = [[0.0; HARMONICS]; CHANNELS];
        let mut phase = [[0.0; HARMONICS]; CHANNELS];
        for c in 0..CHANNELS {
            for h in 0..HARMONICS {
                amplitude[c][h] = rng.random_range(0.2..1.0) / (h + 1) as f64;
                phase[c][h] = rng.random_range(0.0..2.0 * PI);
            }
        }
        GaitParams { step_hz, amplitude, phase, noise_std, seed }
    }

    /// Same harmonic shape at another cadence and noise level.
    pub fn mimic(&self, step_hz: f64, noise_std: f64, seed: u64) -> Self {
        GaitParams { step_hz, noise_std, seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(1.4..=2.4).contains(&self.step_hz) {
            return Err(DataError::Params(format!("step frequency {} Hz outside [1.4, 2.4]", self.step_hz)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(DataError::Params(format!("noise std {} is negative", self.noise_std)));
        }
        Ok(())
    }

    /// Noise-free value of channel `c` at sample `t` (fractional samples allowed).
    pub fn clean(&self, c: usize, t: f64) -> f64 {
        let time = t / SAMPLE_HZ;
        (0..HARMONICS)
            .map(|h| self.amplitude[c][h] * (2.0 * PI * (h + 1) as f64 * self.step_hz * time + self.phase[c][h]).sin())
            .sum()
    }
}

/// `sequences` walks per user, each `length` readings long. Each walk starts at
/// a random point of the gait cycle; users are numbered from 0 in `params` order.
pub fn synth_generate(params: &[GaitParams], sequences: usize, length: usize) -> Result<Vec<UserSequence>, DataError> {
    let mut out = Vec::with_capacity(params.len() * sequences);
    for (user, p) in params.iter().enumerate() {
        p.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let noise = Normal::new(0.0, p.noise_std).map_err(|e| DataError::Params(e.to_string()))?;
        for seq in 0..sequences {
            let offset = rng.random_range(0.0..SAMPLE_HZ / p.step_hz);
            let mut readings = Array2::zeros((length, CHANNELS));
            for t in 0..length {
                for c in 0..CHANNELS {
                    readings[[t, c]] = p.clean(c, t as f64 + offset) + noise.sample(&mut rng);
                }
            }
            out.push(UserSequence { user: user as u32, sequence: seq as u32, readings });
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.into(), source })
}

fn parse_rows(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>, DataError> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| DataError::Parse { path: path.into(), line: i + 1, reason: e.to_string() })?;
        if vals.len() != cols {
            return Err(DataError::Parse { path: path.into(), line: i + 1, reason: format!("expected {cols} columns, found {}", vals.len()) });
        }
        rows.push(vals);
    }
    Ok(rows)
}

fn raw_paths(dir: &Path, exp: u32, user: u32) -> (PathBuf, PathBuf) {
    (dir.join(format!("acc_exp{exp:02}_user{user:02}.txt")), dir.join(format!("gyro_exp{exp:02}_user{user:02}.txt")))
}

/// Loads every WALK segment listed in `labels.txt`. Rows are 0-based and both
/// `start` and `end` are included.
pub fn hapt_load(dir: &Path) -> Result<Vec<UserSequence>, DataError> {
    let labels_path = dir.join("labels.txt");
    let labels = parse_rows(&labels_path, 5)?;
    let mut cache: Vec<(u32, Array2<f64>)> = Vec::new();
    let mut out = Vec::new();
    let mut per_user: std::collections::BTreeMap<u32, u32> = Default::default();
    for (i, row) in labels.iter().enumerate() {
        let bad = |reason: String| DataError::Parse { path: labels_path.clone(), line: i + 1, reason };
        if row.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(bad("label columns must be non-negative integers".into()));
        }
        let (exp, user, activity) = (row[0] as u32, row[1] as u32, row[2] as u32);
        let (start, end) = (row[3] as usize, row[4] as usize);
        if activity != WALK_ACTIVITY {
            continue;
        }
        let readings = match cache.iter().find(|(e, _)| *e == exp) {
            Some((_, r)) => r,
            None => {
                let (acc_path, gyro_path) = raw_paths(dir, exp, user);
                let acc = parse_rows(&acc_path, 3)?;
                let gyro = parse_rows(&gyro_path, 3)?;
                if acc.len() != gyro.len() {
                    return Err(DataError::RowMismatch { acc: acc_path, acc_rows: acc.len(), gyro: gyro_path, gyro_rows: gyro.len() });
                }
                let joined = Array2::from_shape_fn((acc.len(), CHANNELS), |(t, c)| if c < 3 { acc[t][c] } else { gyro[t][c - 3] });
                cache.push((exp, joined));
                &cache.last().expect("just pushed").1
            }
        };
        if start > end || end >= readings.nrows() {
            return Err(bad(format!("rows {start}..={end} outside experiment of {} rows", readings.nrows())));
        }
        let seq = per_user.entry(user).or_default();
        out.push(UserSequence { user, sequence: *seq, readings: readings.slice(s![start..=end, ..]).to_owned() });
        *seq += 1;
    }
    Ok(out)
}

/// Writes each sequence as its own experiment, all labelled WALK.
pub fn hapt_write(dir: &Path, sequences: &[UserSequence]) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.into(), source })?;
    let mut labels = String::new();
    for (k, seq) in sequences.iter().enumerate() {
        let exp = k as u32 + 1;
        let (acc_path, gyro_path) = raw_paths(dir, exp, seq.user);
        let mut acc = String::new();
        let mut gyro = String::new();
        for row in seq.readings.rows() {
            acc.push_str(&format!("{:e} {:e} {:e}\n", row[0], row[1], row[2]));
            gyro.push_str(&format!("{:e} {:e} {:e}\n", row[3], row[4], row[5]));
        }
        for (path, body) in [(&acc_path, acc), (&gyro_path, gyro)] {
            fs::write(path, body).map_err(|source| DataError::Io { path: path.clone(), source })?;
        }
        labels.push_str(&format!("{exp} {} {WALK_ACTIVITY} 0 {}\n", seq.user, seq.readings.nrows().saturating_sub(1)));
    }
    let path = dir.join("labels.txt");
    fs::write(&path, labels).map_err(|source| DataError::Io { path, source })
}

/// Squared magnitude per reading for the accelerometer and the gyroscope.
pub fn amp_features(window: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let sq = |r: ArrayView1<f64>, lo: usize| r.slice(s![lo..lo + 3]).iter().map(|v| v * v).sum::<f64>();
    let acc = window.rows().into_iter().map(|r| sq(r, 0)).collect();
    let gyr = window.rows().into_iter().map(|r| sq(r, 3)).collect();
    (acc, gyr)
}

/// `|DFT_k|` for `k = 0..=32` of a length-64 real series, by the direct sum.
pub fn dft_features(series: ArrayView1<f64>) -> Result<Array1<f64>, DataError> {
    if series.len() != DFT_LEN {
        return Err(DataError::Length { expected: DFT_LEN, got: series.len() });
    }
    Ok(dft_magnitudes(series, DFT_LEN / 2 + 1))
}

pub(crate) fn dft_magnitudes(series: ArrayView1<f64>, bins: usize) -> Array1<f64> {
    let n = series.len();
    (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in series.iter().enumerate() {
                let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Per sensor: min, max, mean and population std of the amplitude series, then
/// the three largest non-DC spectrum magnitudes in descending order.
pub fn krr_features(window: ArrayView2<f64>) -> Result<Array1<f64>, DataError> {
    if window.nrows() != DFT_LEN {
        return Err(DataError::Length { expected: DFT_LEN, got: window.nrows() });
    }
    let (acc, gyr) = amp_features(window);
    let mut out = Vec::with_capacity(KRR_FEATURES);
    for amp in [&acc, &gyr] {
        let mean = amp.mean().expect("non-empty");
        let std = (amp.mapv(|v| (v - mean).powi(2)).sum() / amp.len() as f64).sqrt();
        out.push(amp.fold(f64::INFINITY, |a, &b| a.min(b)));
        out.push(amp.fold(f64::NEG_INFINITY, |a, &b| a.max(b)));
        out.push(mean);
        out.push(std);
    }
    for amp in [&acc, &gyr] {
        let mut spectrum = dft_features(amp.view())?.to_vec();
        spectrum.remove(0);
        spectrum.sort_by(|a, b| b.total_cmp(a));
        out.extend_from_slice(&spectrum[..3]);
    }
    Ok(Array1::from(out))
}
