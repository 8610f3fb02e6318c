//! Desk-scale intensity-shift robustness study.
//!
//! Synthetic ellipsoid phantoms stand in for patient scans and a percentile
//! band classifier stands in for a trained network. The classifier is fitted
//! on normalized intensities, so its tolerance to a global HU shift at test
//! time depends only on the normalization strategy used while fitting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::rng;
use crate::volume::{
    extract_slice, shift_intensity, CtVolume, LabelSlice, LabelVolume, Slice2D, Voxels, BACKGROUND,
};
use crate::windowing::{testing_window, training_window, Strategy, SwnParams, WindowSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganSpec {
    pub label_id: u8,
    pub label_name: String,
    /// Ellipsoid centre in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub radii: [f64; 3],
    pub mean_hu: f64,
    pub noise_std: f64,
}

impl OrganSpec {
    #[inline]
    fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    pub organs: Vec<OrganSpec>,
    pub background_hu: f64,
    #[serde(default)]
    pub background_noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

impl PhantomConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPhantom(m));
        if self.dims.contains(&0) {
            return Err(Error::InvalidDims(self.dims.to_vec()));
        }
        if !self.background_hu.is_finite() || !(self.background_noise_std >= 0.0) {
            return bad("background intensity and noise must be finite, noise >= 0".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.organs {
            if o.label_id == BACKGROUND {
                return bad(format!("organ `{}` uses the background id 0", o.label_name));
            }
            if !ids.insert(o.label_id) {
                return bad(format!("duplicate label id {}", o.label_id));
            }
            if !o.mean_hu.is_finite() || !(o.noise_std >= 0.0 && o.noise_std.is_finite()) {
                return bad(format!("organ `{}` needs finite mean and noise >= 0", o.label_name));
            }
            for a in 0..3 {
                let (c, r) = (o.center[a], o.radii[a]);
                if !(r > 0.0 && r.is_finite()) || !c.is_finite() {
                    return bad(format!("organ `{}` has invalid centre or radii", o.label_name));
                }
                if c - r < 0.0 || c + r > (self.dims[a] - 1) as f64 {
                    return bad(format!("organ `{}` extends outside the volume on axis {a}", o.label_name));
                }
            }
        }
        Ok(())
    }

    pub fn label_names(&self) -> BTreeMap<u8, String> {
        self.organs.iter().map(|o| (o.label_id, o.label_name.clone())).collect()
    }
}

/// Render a phantom: organ voxels ~ N(mean_hu, noise_std), background
/// ~ N(background_hu, background_noise_std), rounded to int16.
///
/// One Gaussian draw is taken per voxel in storage order, so the output
/// depends only on the config and its seed.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(CtVolume, LabelVolume)> {
    cfg.validate()?;
    let [nx, ny, nz] = cfg.dims;
    let mut labels = vec![BACKGROUND; nx * ny * nz];
    let mut owner: Vec<Option<usize>> = vec![None; nx * ny * nz];
    for (k, organ) in cfg.organs.iter().enumerate() {
        // bounding box only; membership test does the rest
        let lo = |a: usize| (organ.center[a] - organ.radii[a]).floor().max(0.0) as usize;
        let hi = |a: usize| ((organ.center[a] + organ.radii[a]).ceil() as usize).min(cfg.dims[a] - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    if organ.contains(x, y, z) {
                        let i = x + nx * (y + ny * z);
                        if let Some(other) = owner[i] {
                            return Err(Error::InvalidPhantom(format!(
                                "organs `{}` and `{}` overlap",
                                cfg.organs[other].label_name, organ.label_name
                            )));
                        }
                        owner[i] = Some(k);
                        labels[i] = organ.label_id;
                    }
                }
            }
        }
    }

    let to_normal = |mean: f64, std: f64| Normal::new(mean, std).map_err(|e| Error::InvalidPhantom(e.to_string()));
    let background = to_normal(cfg.background_hu, cfg.background_noise_std)?;
    let organs: Vec<Normal<f64>> = cfg
        .organs
        .iter()
        .map(|o| to_normal(o.mean_hu, o.noise_std))
        .collect::<Result<_>>()?;
    let mut stream = rng::stream(cfg.seed);
    let voxels: Vec<i16> = owner
        .iter()
        .map(|o| {
            let d = o.map_or(&background, |k| &organs[k]);
            d.sample(&mut stream).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();

    let image = CtVolume::new(cfg.dims, cfg.spacing, Voxels::Int16(voxels))?;
    let labels = LabelVolume::new(cfg.dims, cfg.spacing, labels, cfg.label_names())?;
    Ok((image, labels))
}

/// Phantom for subject `index`: the template with a derived seed and organ
/// centres jittered by up to `jitter` voxels in-plane.
pub fn subject_phantom(template: &PhantomConfig, base_seed: u64, index: u64, jitter: f64) -> PhantomConfig {
    let mut cfg = template.clone();
    cfg.seed = rng::derive_seed(base_seed, index);
    if jitter > 0.0 {
        let mut s = rng::stream(rng::derive_seed(cfg.seed, u64::MAX));
        for o in &mut cfg.organs {
            for a in 0..2 {
                o.center[a] += s.random_range(-jitter..=jitter);
            }
        }
    }
    cfg
}

/// Three soft-tissue organs (40, 120, 200 HU) on an air background.
pub fn reference_phantom(noise_std: f64) -> PhantomConfig {
    let organ = |id: u8, name: &str, center: [f64; 3], radii: [f64; 3], hu: f64| OrganSpec {
        label_id: id,
        label_name: name.to_string(),
        center,
        radii,
        mean_hu: hu,
        noise_std,
    };
    PhantomConfig {
        dims: [64, 64, 12],
        spacing: [1.0, 1.0, 2.5],
        organs: vec![
            organ(1, "organ40", [18.0, 18.0, 5.5], [10.0, 10.0, 4.5], 40.0),
            organ(2, "organ120", [46.0, 18.0, 5.5], [9.0, 9.0, 4.5], 120.0),
            organ(3, "organ200", [32.0, 46.0, 5.5], [10.0, 8.0, 4.5], 200.0),
        ],
        background_hu: -1000.0,
        background_noise_std: noise_std,
        seed: 0,
    }
}

/// Maps a normalized slice to labels.
pub trait Segmenter: Sync {
    fn predict(&self, slice: &Slice2D) -> LabelSlice;

    /// Strategy the segmenter was fitted under.
    fn strategy(&self) -> Strategy;
}

/// How a value inside several bands is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// The label whose pooled median is closest wins; equal distances go to
    /// the lower id.
    #[default]
    NearestMedian,
    /// The lowest label id wins.
    LowestLabel,
}

/// Normalized-intensity band of one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label_id: u8,
    pub label_name: String,
    pub lo: f32,
    pub hi: f32,
    /// Median of the pooled training values.
    pub median: f32,
}

impl Band {
    pub fn width(&self) -> f32 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandFitConfig {
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    /// Bands narrower than `2 * epsilon` are widened to `median ± epsilon`
    /// around their midpoint.
    pub epsilon: f32,
    pub tie_break: TieBreak,
}

impl Default for BandFitConfig {
    fn default() -> Self {
        BandFitConfig {
            lower_percentile: 1.0,
            upper_percentile: 99.0,
            epsilon: 0.5,
            tie_break: TieBreak::NearestMedian,
        }
    }
}

impl BandFitConfig {
    fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.lower_percentile
            && self.lower_percentile < self.upper_percentile
            && self.upper_percentile <= 100.0
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid band fit settings {self:?}")))
        }
    }
}

/// Intensity-band classifier over normalized slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSegmenter {
    pub bands: Vec<Band>,
    pub tie_break: TieBreak,
    pub strategy: Strategy,
}

impl BandSegmenter {
    pub fn new(mut bands: Vec<Band>, tie_break: TieBreak, strategy: Strategy) -> Result<Self> {
        bands.sort_by_key(|b| b.label_id);
        if let Some(b) = bands.iter().find(|b| !(b.lo < b.hi)) {
            return Err(Error::InvalidParameter(format!(
                "band of label {} is empty: [{}, {}]",
                b.label_id, b.lo, b.hi
            )));
        }
        Ok(BandSegmenter {
            bands,
            tie_break,
            strategy,
        })
    }

    pub fn band(&self, label_id: u8) -> Option<&Band> {
        self.bands.iter().find(|b| b.label_id == label_id)
    }

    #[inline]
    pub fn classify(&self, v: f32) -> u8 {
        let mut best: Option<(f32, u8)> = None;
        for b in &self.bands {
            if v < b.lo || v > b.hi {
                continue;
            }
            match self.tie_break {
                TieBreak::LowestLabel => return b.label_id,
                TieBreak::NearestMedian => {
                    let d = (v - b.median).abs();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, b.label_id));
                    }
                }
            }
        }
        best.map_or(BACKGROUND, |(_, id)| id)
    }
}

impl Segmenter for BandSegmenter {
    fn predict(&self, slice: &Slice2D) -> LabelSlice {
        LabelSlice {
            dims: slice.dims,
            values: slice.values.iter().map(|&v| self.classify(v)).collect(),
            axis: slice.axis,
            index: slice.index,
        }
    }

    fn strategy(&self) -> Strategy {
        self.strategy
    }
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f32], pct: f64) -> f32 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    (sorted[i] as f64 * (1.0 - frac) + sorted[i + 1] as f64 * frac) as f32
}

/// Fit one band per organ label from training-time normalized intensities.
///
/// Every epoch visits every axial slice of every training volume once, in
/// order, and normalizes it with `normalize_for_training`; under SWN each
/// visit draws a new window. Values of each label are pooled over all
/// epochs and the band spans the configured percentiles of the pool.
pub fn fit_band_segmenter(
    training: &[(CtVolume, LabelVolume)],
    strategy: Strategy,
    swn: Option<SwnParams>,
    epochs: usize,
    cfg: &BandFitConfig,
) -> Result<BandSegmenter> {
    if training.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be at least 1".into()));
    }
    cfg.validate()?;
    let mut sampler = match (strategy, swn) {
        (Strategy::Swn, Some(p)) => Some(WindowSampler::new(p)?),
        (Strategy::Swn, None) => return Err(Error::MissingSampler),
        (_, Some(_)) => {
            return Err(Error::InvalidParameter(format!(
                "SWN parameters given for strategy {strategy}"
            )))
        }
        (_, None) => None,
    };

    let mut names: BTreeMap<u8, String> = BTreeMap::new();
    for (image, labels) in training {
        labels.check_aligned(image)?;
        for id in labels.organ_ids() {
            names.entry(id).or_insert_with(|| labels.label_name(id).unwrap_or_default().to_string());
        }
    }
    let mut pools: BTreeMap<u8, Vec<f32>> = names.keys().map(|&id| (id, Vec::new())).collect();

    for _ in 0..epochs {
        for (image, labels) in training {
            let [nx, ny, nz] = image.dims();
            let plane = nx * ny;
            for z in 0..nz {
                let window = training_window(strategy, sampler.as_mut())?;
                let base = z * plane;
                for i in base..base + plane {
                    let l = labels.voxels()[i];
                    if l != BACKGROUND {
                        if let Some(pool) = pools.get_mut(&l) {
                            pool.push(window.apply(image.voxels().get_f32(i)));
                        }
                    }
                }
            }
        }
    }

    let mut bands = Vec::with_capacity(pools.len());
    for (id, mut pool) in pools {
        if pool.is_empty() {
            return Err(Error::EmptyLabel(id));
        }
        pool.sort_by(f32::total_cmp);
        let mut lo = percentile(&pool, cfg.lower_percentile);
        let mut hi = percentile(&pool, cfg.upper_percentile);
        let median = percentile(&pool, 50.0);
        if hi - lo < 2.0 * cfg.epsilon {
            let mid = (lo + hi) / 2.0;
            lo = mid - cfg.epsilon;
            hi = mid + cfg.epsilon;
        }
        bands.push(Band {
            label_id: id,
            label_name: names[&id].clone(),
            lo,
            hi,
            median,
        });
    }
    BandSegmenter::new(bands, cfg.tie_break, strategy)
}

/// Test-time normalize every axial slice, segment it, and reassemble the
/// label map in storage order.
pub fn segment_volume<S: Segmenter + ?Sized>(seg: &S, image: &CtVolume, strategy: Strategy) -> Result<Vec<u8>> {
    let window = testing_window(strategy);
    let mut out = Vec::with_capacity(image.len());
    for z in 0..image.dims()[2] {
        let slice = extract_slice(image, 2, z)?;
        let normalized = crate::windowing::apply_window(&slice, window);
        out.extend(seg.predict(&normalized).values);
    }
    Ok(out)
}

/// One cell of a sweep: mean Dice over subjects for a shift and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub shift_hu: f32,
    pub strategy: String,
    pub label_id: u8,
    pub label_name: String,
    pub mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn extend(&mut self, other: SweepResult) {
        self.rows.extend(other.rows);
    }

    /// Rename the strategy column, e.g. to `SWN[50,50]`.
    pub fn with_strategy_name(mut self, name: &str) -> Self {
        for r in &mut self.rows {
            r.strategy = name.to_string();
        }
        self
    }

    pub fn dice(&self, strategy: &str, label_id: u8, shift: f32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.label_id == label_id && r.shift_hu == shift)
            .map(|r| r.mean_dice)
    }

    /// Number of shifts at which the mean Dice reaches `threshold`.
    pub fn tolerance_width(&self, strategy: &str, label_id: u8, threshold: f64) -> usize {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy && r.label_id == label_id && r.mean_dice >= threshold)
            .count()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| metrics::csv_io(path, e))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Inclusive grid `start, start + step, ..., stop`.
pub fn shift_grid(start: i32, stop: i32, step: i32) -> Result<Vec<f32>> {
    if step <= 0 || stop < start {
        return Err(Error::InvalidParameter(format!(
            "shift grid needs step > 0 and stop >= start, got {start}..{stop} step {step}"
        )));
    }
    Ok((start..=stop).step_by(step as usize).map(|s| s as f32).collect())
}

/// Default sweep: -300 to +300 HU in steps of 25.
pub fn default_shifts() -> Vec<f32> {
    shift_grid(-300, 300, 25).expect("static grid")
}

/// Shift every test volume by each offset, normalize at test time, segment
/// and score against ground truth. One row per `(shift, label)`, labels
/// being the organ labels of the test set.
///
/// Cells `(shift, subject)` are evaluated in parallel and reduced in a fixed
/// order, so the result does not depend on scheduling.
pub fn run_shift_sweep<S: Segmenter + ?Sized>(
    seg: &S,
    test: &[(CtVolume, LabelVolume)],
    strategy: Strategy,
    shifts: &[f32],
) -> Result<SweepResult> {
    if shifts.is_empty() {
        return Err(Error::Empty("shift grid"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut names: BTreeMap<u8, String> = BTreeMap::new();
    for (image, labels) in test {
        labels.check_aligned(image)?;
        for id in labels.organ_ids() {
            names.entry(id).or_insert_with(|| labels.label_name(id).unwrap_or_default().to_string());
        }
    }
    let label_ids: Vec<u8> = names.keys().copied().collect();

    let cells: Vec<(usize, usize)> = (0..shifts.len())
        .flat_map(|s| (0..test.len()).map(move |t| (s, t)))
        .collect();
    let scores: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(s, t)| {
            let (image, truth) = &test[t];
            let shifted = shift_intensity(image, shifts[s]);
            let pred = segment_volume(seg, &shifted, strategy)?;
            let dice = metrics::label_dice(&pred, truth.voxels(), &label_ids)?;
            Ok(dice.into_iter().map(|(_, d)| d).collect())
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(shifts.len() * label_ids.len());
    for (s, &shift) in shifts.iter().enumerate() {
        let per_subject = &scores[s * test.len()..(s + 1) * test.len()];
        for (k, &id) in label_ids.iter().enumerate() {
            let mean = per_subject.iter().map(|d| d[k]).sum::<f64>() / test.len() as f64;
            rows.push(SweepRow {
                shift_hu: shift,
                strategy: strategy.as_str().to_string(),
                label_id: id,
                label_name: names[&id].clone(),
                mean_dice: mean,
            });
        }
    }
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::Preset;

    fn one_organ(hu: f64, noise: f64) -> PhantomConfig {
        PhantomConfig {
            dims: [16, 16, 4],
            spacing: [1.0; 3],
            organs: vec![OrganSpec {
                label_id: 1,
                label_name: "organ".into(),
                center: [8.0, 8.0, 1.5],
                radii: [4.0, 5.0, 1.5],
                mean_hu: hu,
                noise_std: noise,
            }],
            background_hu: -1000.0,
            background_noise_std: noise,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_phantom_has_two_values() {
        let (img, lab) = generate_phantom(&one_organ(40.0, 0.0)).unwrap();
        let mut vals: Vec<f32> = img.to_f32();
        vals.sort_by(f32::total_cmp);
        vals.dedup();
        assert_eq!(vals, vec![-1000.0, 40.0]);
        // label count equals discrete ellipsoid membership
        let o = &one_organ(40.0, 0.0).organs[0];
        let mut expected = 0;
        for z in 0..4 {
            for y in 0..16 {
                for x in 0..16 {
                    let d = ((x as f64 - 8.0) / 4.0).powi(2)
                        + ((y as f64 - 8.0) / 5.0).powi(2)
                        + ((z as f64 - 1.5) / 1.5).powi(2);
                    expected += (d <= 1.0) as usize;
                }
            }
        }
        assert!(o.contains(8, 8, 1));
        assert_eq!(lab.voxels().iter().filter(|&&l| l == 1).count(), expected);
        assert_eq!(lab.label_name(1), Some("organ"));
    }

    #[test]
    fn phantom_is_deterministic() {
        let a = generate_phantom(&one_organ(40.0, 15.0)).unwrap();
        let b = generate_phantom(&one_organ(40.0, 15.0)).unwrap();
        assert_eq!(a, b);
        let mut other = one_organ(40.0, 15.0);
        other.seed = 4;
        assert_ne!(generate_phantom(&other).unwrap().0, a.0);
    }

    #[test]
    fn phantom_validation() {
        let mut cfg = one_organ(40.0, 0.0);
        cfg.organs.push(OrganSpec {
            label_id: 2,
            center: [9.0, 8.0, 1.5],
            ..cfg.organs[0].clone()
        });
        assert!(matches!(generate_phantom(&cfg), Err(Error::InvalidPhantom(m)) if m.contains("overlap")));
        let mut cfg = one_organ(40.0, 0.0);
        cfg.organs[0].center[0] = 13.0;
        assert!(generate_phantom(&cfg).is_err());
        let mut cfg = one_organ(40.0, 0.0);
        cfg.organs[0].label_id = 0;
        assert!(generate_phantom(&cfg).is_err());
        let mut cfg = one_organ(40.0, 0.0);
        cfg.organs.push(OrganSpec {
            center: [2.0, 2.0, 1.5],
            radii: [1.0, 1.0, 1.0],
            ..cfg.organs[0].clone()
        });
        assert!(matches!(generate_phantom(&cfg), Err(Error::InvalidPhantom(m)) if m.contains("duplicate")));
    }

    #[test]
    fn reference_phantoms_are_valid_under_jitter() {
        let template = reference_phantom(15.0);
        for i in 0..20 {
            generate_phantom(&subject_phantom(&template, 99, i, 2.0)).unwrap();
        }
    }

    #[test]
    fn stn_noiseless_band_is_epsilon_floor() {
        let data = vec![generate_phantom(&one_organ(40.0, 0.0)).unwrap()];
        let seg = fit_band_segmenter(&data, Strategy::Stn, None, 2, &BandFitConfig::default()).unwrap();
        let b = seg.band(1).unwrap();
        assert_eq!((b.lo, b.hi, b.median), (127.0, 128.0, 127.5));
    }

    #[test]
    fn zero_sigma_swn_band_matches_stn() {
        let data = vec![generate_phantom(&one_organ(40.0, 15.0)).unwrap()];
        let cfg = BandFitConfig::default();
        let stn = fit_band_segmenter(&data, Strategy::Stn, None, 3, &cfg).unwrap();
        let swn = fit_band_segmenter(&data, Strategy::Swn, Some(SwnParams::new(0.0, 0.0, 1).unwrap()), 3, &cfg).unwrap();
        assert_eq!(stn.bands, swn.bands);
    }

    #[test]
    fn swn_band_is_wider() {
        let data = vec![generate_phantom(&one_organ(40.0, 15.0)).unwrap()];
        let cfg = BandFitConfig::default();
        let stn = fit_band_segmenter(&data, Strategy::Stn, None, 10, &cfg).unwrap();
        let swn = fit_band_segmenter(&data, Strategy::Swn, Some(SwnParams::new(50.0, 50.0, 1).unwrap()), 10, &cfg).unwrap();
        assert!(swn.band(1).unwrap().width() > stn.band(1).unwrap().width());
        assert!(swn.band(1).unwrap().lo < stn.band(1).unwrap().lo);
        assert!(swn.band(1).unwrap().hi > stn.band(1).unwrap().hi);
    }

    #[test]
    fn fit_errors() {
        let data = vec![generate_phantom(&one_organ(40.0, 0.0)).unwrap()];
        let cfg = BandFitConfig::default();
        assert!(matches!(
            fit_band_segmenter(&data, Strategy::Swn, None, 1, &cfg),
            Err(Error::MissingSampler)
        ));
        assert!(fit_band_segmenter(&data, Strategy::Stn, Some(SwnParams::new(1.0, 1.0, 0).unwrap()), 1, &cfg).is_err());
        assert!(fit_band_segmenter(&[], Strategy::Stn, None, 1, &cfg).is_err());
        // label named but never present
        let (img, lab) = data[0].clone();
        let mut names = lab.label_names().clone();
        names.insert(5, "ghost".into());
        let lab = LabelVolume::new(lab.dims(), lab.spacing(), lab.voxels().to_vec(), names).unwrap();
        assert!(matches!(
            fit_band_segmenter(&[(img, lab)], Strategy::Stn, None, 1, &cfg),
            Err(Error::EmptyLabel(5))
        ));
    }

    #[test]
    fn tie_break_rules() {
        let band = |id: u8, lo: f32, hi: f32, median: f32| Band {
            label_id: id,
            label_name: format!("l{id}"),
            lo,
            hi,
            median,
        };
        let bands = vec![band(2, 100.0, 200.0, 180.0), band(1, 50.0, 150.0, 60.0)];
        let low = BandSegmenter::new(bands.clone(), TieBreak::LowestLabel, Strategy::Stn).unwrap();
        let near = BandSegmenter::new(bands, TieBreak::NearestMedian, Strategy::Stn).unwrap();
        assert_eq!(low.classify(140.0), 1);
        assert_eq!(near.classify(140.0), 2);
        assert_eq!(near.classify(110.0), 1);
        assert_eq!(near.classify(120.0), 1);
        assert_eq!(near.classify(10.0), 0);
        assert_eq!(near.classify(190.0), 2);
        assert!(BandSegmenter::new(vec![band(1, 5.0, 5.0, 5.0)], TieBreak::LowestLabel, Strategy::Stn).is_err());
    }

    #[test]
    fn shift_zero_self_consistent() {
        let data: Vec<_> = (0..2)
            .map(|i| generate_phantom(&subject_phantom(&one_organ(40.0, 0.0), 5, i, 1.0)).unwrap())
            .collect();
        for strategy in [Strategy::Stn, Strategy::Wir] {
            let seg = fit_band_segmenter(&data, strategy, None, 1, &BandFitConfig::default()).unwrap();
            let r = run_shift_sweep(&seg, &data, strategy, &[0.0]).unwrap();
            assert_eq!(r.rows.len(), 1);
            assert_eq!(r.rows[0].mean_dice, 1.0);
        }
    }

    #[test]
    fn stn_saturates_at_large_shift() {
        let data = vec![generate_phantom(&one_organ(40.0, 0.0)).unwrap()];
        let seg = fit_band_segmenter(&data, Strategy::Stn, None, 1, &BandFitConfig::default()).unwrap();
        let r = run_shift_sweep(&seg, &data, Strategy::Stn, &[300.0]).unwrap();
        assert_eq!(r.rows[0].mean_dice, 0.0);
        assert_eq!(Preset::SoftTissue.window().apply(340.0), 255.0);
    }

    #[test]
    fn wir_shift_is_linear() {
        let w = Preset::WholeRange.window();
        for hu in [-200.0f32, 40.0, 120.0, 200.0] {
            for s in (-300..=300).step_by(25) {
                let moved = w.apply(hu + s as f32) - w.apply(hu);
                assert!((moved - 255.0 * s as f32 / 2000.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn grid() {
        let g = default_shifts();
        assert_eq!(g.len(), 25);
        assert_eq!((g[0], g[12], g[24]), (-300.0, 0.0, 300.0));
        assert!(shift_grid(0, 10, 0).is_err());
        assert!(shift_grid(10, 0, 5).is_err());
    }

    #[test]
    fn sweep_emits_every_cell_and_is_order_independent() {
        let data: Vec<_> = (0..3)
            .map(|i| generate_phantom(&subject_phantom(&reference_phantom(15.0), 8, i, 2.0)).unwrap())
            .collect();
        let seg = fit_band_segmenter(&data, Strategy::Stn, None, 1, &BandFitConfig::default()).unwrap();
        let shifts = [-50.0, 0.0, 25.0];
        let r = run_shift_sweep(&seg, &data, Strategy::Stn, &shifts).unwrap();
        assert_eq!(r.rows.len(), 9);
        let reversed: Vec<_> = data.iter().rev().cloned().collect();
        let r2 = run_shift_sweep(&seg, &reversed, Strategy::Stn, &shifts).unwrap();
        for (a, b) in r.rows.iter().zip(&r2.rows) {
            assert!((a.mean_dice - b.mean_dice).abs() < 1e-12);
        }
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r3 = single.install(|| run_shift_sweep(&seg, &data, Strategy::Stn, &shifts)).unwrap();
        assert_eq!(r, r3);
    }
}
