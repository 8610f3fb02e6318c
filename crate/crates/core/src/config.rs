//! JSON run configuration.
//!
//! All randomness in a run derives from `seed`: training phantom `i` uses
//! `derive_seed(seed, i)`, test phantom `j` uses `derive_seed(seed,
//! train_subjects + j)`, and the SWN sampler of the `k`-th strategy entry
//! uses its own `seed` if given, else `derive_seed(seed, SWN_STREAM + k)`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::simulation::{reference_phantom, shift_grid, BandFitConfig, PhantomConfig};
use crate::stats::CompareSettings;
use crate::windowing::{Strategy, SwnParams};

/// Offset separating SWN sampler seeds from phantom seeds.
pub const SWN_STREAM: u64 = 1 << 32;

/// A normalization strategy with its SWN coefficients, e.g.
/// `{"strategy":"SWN","x":50,"y":50,"seed":1234}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl StrategySpec {
    pub fn stn() -> Self {
        StrategySpec {
            strategy: Strategy::Stn,
            x: None,
            y: None,
            seed: None,
        }
    }

    pub fn wir() -> Self {
        StrategySpec {
            strategy: Strategy::Wir,
            ..Self::stn()
        }
    }

    pub fn swn(x: f64, y: f64) -> Self {
        StrategySpec {
            strategy: Strategy::Swn,
            x: Some(x),
            y: Some(y),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.strategy, self.x, self.y) {
            (Strategy::Swn, Some(x), Some(y)) => SwnParams::new(x, y, 0).map(|_| ()),
            (Strategy::Swn, _, _) => Err(Error::Config("SWN needs both `x` and `y`".into())),
            (_, None, None) if self.seed.is_none() => Ok(()),
            (s, _, _) => Err(Error::Config(format!("`x`, `y` and `seed` only apply to SWN, not {s}"))),
        }
    }

    /// SWN sampler parameters; `None` for the fixed strategies.
    pub fn swn_params(&self, fallback_seed: u64) -> Result<Option<SwnParams>> {
        self.validate()?;
        match (self.strategy, self.x, self.y) {
            (Strategy::Swn, Some(x), Some(y)) => Ok(Some(SwnParams::new(x, y, self.seed.unwrap_or(fallback_seed))?)),
            _ => Ok(None),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.strategy, self.x, self.y) {
            (Strategy::Swn, Some(x), Some(y)) => write!(f, "SWN[{x},{y}]"),
            (s, _, _) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftGridSpec {
    pub start: i32,
    pub stop: i32,
    pub step: i32,
}

impl Default for ShiftGridSpec {
    fn default() -> Self {
        ShiftGridSpec {
            start: -300,
            stop: 300,
            step: 25,
        }
    }
}

impl ShiftGridSpec {
    pub fn values(&self) -> Result<Vec<f32>> {
        shift_grid(self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub strategies: Vec<StrategySpec>,
    pub shifts: ShiftGridSpec,
    pub epochs: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    /// In-plane organ centre jitter between subjects, voxels.
    pub jitter: f64,
    /// Phantom template; per-subject seeds override its `seed`.
    pub phantom: PhantomConfig,
    pub band: BandFitConfig,
    pub augment: AugmentConfig,
    pub alpha: f64,
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            strategies: vec![StrategySpec::stn(), StrategySpec::wir(), StrategySpec::swn(50.0, 50.0)],
            shifts: ShiftGridSpec::default(),
            epochs: 10,
            train_subjects: 5,
            test_subjects: 5,
            jitter: 2.0,
            phantom: reference_phantom(15.0),
            band: BandFitConfig::default(),
            augment: AugmentConfig::default(),
            alpha: 0.05,
            m: 12,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let mut names = BTreeSet::new();
        for s in &self.strategies {
            s.validate()?;
            if !names.insert(s.to_string()) {
                return Err(Error::Config(format!("strategy {s} listed twice")));
            }
        }
        self.shifts.values()?;
        if self.epochs == 0 || self.train_subjects == 0 || self.test_subjects == 0 {
            return Err(Error::Config("epochs and subject counts must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config("jitter must be finite and >= 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || self.m == 0 {
            return Err(Error::Config("alpha must lie in (0, 1) and m must be positive".into()));
        }
        Ok(())
    }

    pub fn compare_settings(&self) -> CompareSettings {
        CompareSettings {
            alpha: self.alpha,
            m: self.m,
        }
    }

    /// Seed of the SWN sampler for the `k`-th strategy entry.
    pub fn swn_seed(&self, k: usize) -> u64 {
        rng::derive_seed(self.seed, SWN_STREAM + k as u64)
    }
}
