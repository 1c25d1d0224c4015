//! Flag values merged over an optional `key=value` config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

use crate::CliError;

/// Options shared by every subcommand. Each may also come from `--config`.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// key=value file supplying defaults for the flags below
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub n_track: Option<usize>,
    /// idaas or lad
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// vote, ocsvm, threshold or all
    #[arg(long, global = true)]
    pub pipeline: Option<String>,
    /// looped, unrolled or both
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub step: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub refs: Option<usize>,
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

const KEYS: [&str; 11] = ["seed", "n-track", "scenario", "pipeline", "strategy", "window", "step", "alpha", "refs", "bins", "out"];

pub fn parse_config(text: &str, path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("{}:{}: unknown key '{}'", path.display(), i + 1, k.trim())));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Resolved options: flags first, then the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    flags: Common,
    file: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(flags: Common) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                parse_config(&text, p)?
            }
            None => BTreeMap::new(),
        };
        let s = Settings { flags, file };
        s.seed()?;
        s.n_track()?;
        s.window()?;
        s.step()?;
        s.alpha()?;
        s.refs()?;
        s.bins()?;
        Ok(s)
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("config key {key}: {e}"))))
            .transpose()
    }

    fn pick<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v.clone())),
            None => self.from_file(key),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        Ok(self.pick(&self.flags.seed, "seed")?.unwrap_or(0))
    }

    pub fn n_track(&self) -> Result<Option<usize>, CliError> {
        self.pick(&self.flags.n_track, "n-track")
    }

    pub fn scenario(&self) -> Result<Option<String>, CliError> {
        self.pick(&self.flags.scenario, "scenario")
    }

    pub fn pipeline(&self) -> Result<Option<String>, CliError> {
        self.pick(&self.flags.pipeline, "pipeline")
    }

    pub fn strategy(&self) -> Result<Option<String>, CliError> {
        self.pick(&self.flags.strategy, "strategy")
    }

    pub fn window(&self) -> Result<Option<usize>, CliError> {
        self.pick(&self.flags.window, "window")
    }

    pub fn step(&self) -> Result<Option<usize>, CliError> {
        self.pick(&self.flags.step, "step")
    }

    pub fn alpha(&self) -> Result<Option<f64>, CliError> {
        self.pick(&self.flags.alpha, "alpha")
    }

    pub fn refs(&self) -> Result<Option<usize>, CliError> {
        self.pick(&self.flags.refs, "refs")
    }

    pub fn bins(&self) -> Result<Option<usize>, CliError> {
        self.pick(&self.flags.bins, "bins")
    }

    pub fn out(&self) -> Result<Option<PathBuf>, CliError> {
        self.pick(&self.flags.out, "out")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let file = parse_config("seed = 7\n# comment\nn_track=2\nwindow=100\n", Path::new("c")).unwrap();
        let flags = Common { seed: Some(3), ..Default::default() };
        let s = Settings { flags, file };
        assert_eq!(s.seed().unwrap(), 3);
        assert_eq!(s.n_track().unwrap(), Some(2));
        assert_eq!(s.window().unwrap(), Some(100));
        assert_eq!(s.bins().unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_config("seed 7", Path::new("c")), Err(CliError::Usage(_))));
        assert!(matches!(parse_config("colour=red", Path::new("c")), Err(CliError::Usage(_))));
        let s = Settings { flags: Common::default(), file: parse_config("seed=x", Path::new("c")).unwrap() };
        assert!(s.seed().is_err());
    }
}
