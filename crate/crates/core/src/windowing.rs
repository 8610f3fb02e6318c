//! Tissue-window normalization: fixed soft-tissue (STN), whole intensity
//! range (WIR) and stochastic tissue windows (SWN).
//!
//! A window `(L, W)` clamps intensities to `[L - W, L + W]` and rescales that
//! band linearly onto `[0, 255]`:
//!
//! ```text
//! out = 255 * (clamp(v, L - W, L + W) - (L - W)) / ((L + W) - (L - W))
//! ```
//!
//! SWN draws a fresh window around the soft-tissue window for every slice it
//! normalizes during training, `L ~ N(40, x)` then `W ~ |N(200, y)|`, and
//! falls back to the plain soft-tissue window at test time.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::volume::Slice2D;

/// Smallest admissible half-width in HU. Sampled widths are floored here so
/// the rescale never divides by (nearly) zero.
pub const W_MIN: f32 = 1.0;

/// Upper end of the normalized intensity range.
pub const OUTPUT_MAX: f32 = 255.0;

/// Level of the soft-tissue window, the centre of SWN level sampling.
pub const SOFT_TISSUE_LEVEL: f32 = 40.0;
/// Half-width of the soft-tissue window, the centre of SWN width sampling.
pub const SOFT_TISSUE_HALF_WIDTH: f32 = 200.0;

/// A tissue window: level (centre) and half-width, both in HU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowSpec {
    level: f32,
    half_width: f32,
}

impl WindowSpec {
    pub fn new(level: f32, half_width: f32) -> Result<Self> {
        if !level.is_finite() || !half_width.is_finite() {
            return Err(Error::InvalidWindow(format!(
                "level {level} and half-width {half_width} must be finite"
            )));
        }
        if half_width < W_MIN {
            return Err(Error::InvalidWindow(format!(
                "half-width {half_width} is below the {W_MIN} HU floor"
            )));
        }
        Ok(WindowSpec { level, half_width })
    }

    pub fn level(&self) -> f32 {
        self.level
    }

    pub fn half_width(&self) -> f32 {
        self.half_width
    }

    /// Lower band edge `L - W`.
    pub fn lower(&self) -> f32 {
        self.level - self.half_width
    }

    /// Upper band edge `L + W`.
    pub fn upper(&self) -> f32 {
        self.level + self.half_width
    }

    /// Normalize a single intensity.
    #[inline]
    pub fn apply(&self, v: f32) -> f32 {
        let min_threshold = self.lower();
        let max_threshold = self.upper();
        let mut c = v;
        if c > max_threshold {
            c = max_threshold;
        }
        if c < min_threshold {
            c = min_threshold;
        }
        OUTPUT_MAX * (c - min_threshold) / (max_threshold - min_threshold)
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L={} W={} [{}, {}]", self.level, self.half_width, self.lower(), self.upper())
    }
}

/// Named clinical windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// -160..240 HU
    SoftTissue,
    /// -1150..350 HU
    Lung,
    /// -1000..1000 HU
    WholeRange,
}

impl Preset {
    pub fn window(self) -> WindowSpec {
        let (level, half_width) = match self {
            Preset::SoftTissue => (SOFT_TISSUE_LEVEL, SOFT_TISSUE_HALF_WIDTH),
            Preset::Lung => (-400.0, 750.0),
            Preset::WholeRange => (0.0, 1000.0),
        };
        WindowSpec { level, half_width }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_tissue" => Ok(Preset::SoftTissue),
            "lung" => Ok(Preset::Lung),
            "whole_range" => Ok(Preset::WholeRange),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// Look up a preset window by name (`soft_tissue`, `lung`, `whole_range`).
pub fn preset(name: &str) -> Result<WindowSpec> {
    name.parse::<Preset>().map(Preset::window)
}

/// Window every value of a slice.
pub fn apply_window(slice: &Slice2D, window: WindowSpec) -> Slice2D {
    slice.with_values(slice.values.iter().map(|&v| window.apply(v)).collect())
}

/// Whole-intensity-range normalization (-1000..1000 HU, clamped).
pub fn normalize_wir(slice: &Slice2D) -> Slice2D {
    apply_window(slice, Preset::WholeRange.window())
}

/// SWN sampling coefficients: standard deviations of the level and width
/// Gaussians, plus the stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwnParams {
    #[serde(alias = "x")]
    pub sigma_level: f64,
    #[serde(alias = "y")]
    pub sigma_width: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SwnParams {
    pub fn new(sigma_level: f64, sigma_width: f64, seed: u64) -> Result<Self> {
        let p = SwnParams {
            sigma_level,
            sigma_width,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_level", self.sigma_level), ("sigma_width", self.sigma_width)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// The `[x, y]` settings evaluated for SWN.
pub const SWN_GRID: [[f64; 2]; 5] = [[10.0, 10.0], [10.0, 100.0], [50.0, 50.0], [100.0, 10.0], [100.0, 100.0]];

/// Deterministic stream of random windows around the soft-tissue window.
///
/// Single-owner state; parallel workers each build their own with
/// [`WindowSampler::for_worker`].
#[derive(Debug, Clone)]
pub struct WindowSampler {
    params: SwnParams,
    level: Normal<f64>,
    width: Normal<f64>,
    stream: Stream,
    draws: u64,
}

impl WindowSampler {
    pub fn new(params: SwnParams) -> Result<Self> {
        Self::with_seed(params, params.seed)
    }

    /// Sampler for worker `worker_id`, seeded from `hash(base_seed, worker_id)`.
    pub fn for_worker(params: SwnParams, worker_id: u64) -> Result<Self> {
        Self::with_seed(params, rng::derive_seed(params.seed, worker_id))
    }

    fn with_seed(params: SwnParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let bad = |e: rand_distr::NormalError| Error::InvalidParameter(e.to_string());
        Ok(WindowSampler {
            params,
            level: Normal::new(SOFT_TISSUE_LEVEL as f64, params.sigma_level).map_err(bad)?,
            width: Normal::new(SOFT_TISSUE_HALF_WIDTH as f64, params.sigma_width).map_err(bad)?,
            stream: rng::stream(seed),
            draws: 0,
        })
    }

    pub fn params(&self) -> SwnParams {
        self.params
    }

    /// Number of windows drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Draw the next window. Level first, then width; the width is folded to
    /// its absolute value and floored at [`W_MIN`].
    pub fn sample(&mut self) -> WindowSpec {
        let level = self.level.sample(&mut self.stream) as f32;
        let width = self.width.sample(&mut self.stream) as f32;
        self.draws += 1;
        WindowSpec {
            level,
            half_width: width.abs().max(W_MIN),
        }
    }
}

/// Draw one window from `sampler`.
pub fn sample_window(sampler: &mut WindowSampler) -> WindowSpec {
    sampler.sample()
}

/// Normalization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "STN")]
    Stn,
    #[serde(rename = "WIR")]
    Wir,
    #[serde(rename = "SWN")]
    Swn,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Stn => "STN",
            Strategy::Wir => "WIR",
            Strategy::Swn => "SWN",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "STN" => Ok(Strategy::Stn),
            "WIR" => Ok(Strategy::Wir),
            "SWN" => Ok(Strategy::Swn),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

/// Window used for one training-time normalization. SWN consumes one draw.
pub fn training_window(strategy: Strategy, sampler: Option<&mut WindowSampler>) -> Result<WindowSpec> {
    match strategy {
        Strategy::Stn => Ok(Preset::SoftTissue.window()),
        Strategy::Wir => Ok(Preset::WholeRange.window()),
        Strategy::Swn => sampler.map(WindowSampler::sample).ok_or(Error::MissingSampler),
    }
}

/// Window used at test time: never random.
pub fn testing_window(strategy: Strategy) -> WindowSpec {
    match strategy {
        Strategy::Stn | Strategy::Swn => Preset::SoftTissue.window(),
        Strategy::Wir => Preset::WholeRange.window(),
    }
}

/// Training-time normalization of one slice.
pub fn normalize_for_training(
    slice: &Slice2D,
    strategy: Strategy,
    sampler: Option<&mut WindowSampler>,
) -> Result<Slice2D> {
    let window = training_window(strategy, sampler)?;
    Ok(apply_window(slice, window))
}

/// Test-time normalization of one slice.
pub fn normalize_for_testing(slice: &Slice2D, strategy: Strategy) -> Slice2D {
    apply_window(slice, testing_window(strategy))
}
