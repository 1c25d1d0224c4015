//! Per-period energy of a set of devices running the detector.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("device {0}: powers and energies must be non-negative with running >= idle")]
    BadProfile(String),
    #[error("device {name}: busy time {t} s outside [0, {period}] s")]
    BusyTime { name: String, t: f64, period: f64 },
    #[error("energy ratio undefined: denominator energy is {0} J")]
    ZeroDenominator(f64),
    #[error("profile line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown device profile '{0}'")]
    UnknownDevice(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    pub p_running: f64,
    pub p_idle: f64,
    pub e_wakeup: f64,
    pub e_sleep: f64,
}

impl DeviceProfile {
    pub fn new(name: &str, p_running: f64, p_idle: f64) -> Self {
        DeviceProfile { name: name.to_string(), p_running, p_idle, e_wakeup: 0.0, e_sleep: 0.0 }
    }

    pub fn gpu() -> Self {
        Self::new("GPU", 56.0, 8.0)
    }

    pub fn sid() -> Self {
        Self::new("SID", 0.62, 0.12)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let vals = [self.p_running, self.p_idle, self.e_wakeup, self.e_sleep];
        if vals.iter().all(|v| v.is_finite() && *v >= 0.0) && self.p_running >= self.p_idle {
            Ok(())
        } else {
            Err(EnergyError::BadProfile(self.name.clone()))
        }
    }
}

/// Device profiles, one `name p_run p_idle [e_wake e_sleep]` per line; `#`
/// starts a comment.
pub fn parse_profiles(text: &str) -> Result<Vec<DeviceProfile>, EnergyError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if parts.len() != 3 && parts.len() != 5 {
            return Err(EnergyError::Parse { line: i + 1, reason: format!("expected 3 or 5 fields, found {}", parts.len()) });
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| EnergyError::Parse { line: i + 1, reason: format!("'{s}' is not a number") });
        let mut p = DeviceProfile::new(parts[0], num(parts[1])?, num(parts[2])?);
        if parts.len() == 5 {
            p.e_wakeup = num(parts[3])?;
            p.e_sleep = num(parts[4])?;
        }
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

pub fn find_profile<'a>(profiles: &'a [DeviceProfile], name: &str) -> Result<&'a DeviceProfile, EnergyError> {
    profiles.iter().find(|p| p.name.eq_ignore_ascii_case(name)).ok_or_else(|| EnergyError::UnknownDevice(name.to_string()))
}

/// Joules over one period `period` (seconds) with each device busy for `t_i`.
pub fn energy_sod(devices: &[(&DeviceProfile, f64)], period: f64) -> Result<f64, EnergyError> {
    let mut total = 0.0;
    for (p, t) in devices {
        p.validate()?;
        if !(*t >= 0.0 && *t <= period) {
            return Err(EnergyError::BusyTime { name: p.name.clone(), t: *t, period });
        }
        total += p.p_running * t + p.p_idle * (period - t) + p.e_wakeup + p.e_sleep;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyComparison {
    pub energy_a: f64,
    pub energy_b: f64,
    pub ratio: f64,
    pub idle_ratio: f64,
}

impl fmt::Display for EnergyComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "energy_a_j={:.6}", self.energy_a)?;
        writeln!(f, "energy_b_j={:.6}", self.energy_b)?;
        writeln!(f, "ratio={:.2}", self.ratio)?;
        writeln!(f, "idle_ratio={:.2}", self.idle_ratio)
    }
}

pub fn energy_ratio(a: &[(&DeviceProfile, f64)], b: &[(&DeviceProfile, f64)], period: f64) -> Result<EnergyComparison, EnergyError> {
    let energy_a = energy_sod(a, period)?;
    let energy_b = energy_sod(b, period)?;
    if energy_b <= 0.0 {
        return Err(EnergyError::ZeroDenominator(energy_b));
    }
    let idle_b: f64 = b.iter().map(|(p, _)| p.p_idle).sum();
    if idle_b <= 0.0 {
        return Err(EnergyError::ZeroDenominator(idle_b));
    }
    let idle_a: f64 = a.iter().map(|(p, _)| p.p_idle).sum();
    Ok(EnergyComparison { energy_a, energy_b, ratio: energy_a / energy_b, idle_ratio: idle_a / idle_b })
}
