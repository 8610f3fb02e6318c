//! Paired spatial augmentation of image and label slices.
//!
//! One random transform is drawn per call and applied identically to the
//! image (bilinear) and the label slice (nearest neighbour). The fixed order
//! is rotate about the slice centre, translate by whole voxels, then pad by
//! a fixed margin and crop to `crop_size` at a random offset. Draw order
//! from the stream: rotation, translation x, translation y, crop offset x,
//! crop offset y.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelSlice, Slice2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotation is drawn uniformly from `[-max_rotation, max_rotation]` degrees.
    pub max_rotation: f64,
    /// Per-axis translation bound in voxels.
    pub max_translation: [u32; 2],
    /// Output slice size; `None` keeps the input size.
    pub crop_size: Option<[usize; 2]>,
    /// Margin added on every side before cropping.
    pub pad: [usize; 2],
    pub pad_value_image: f32,
    pub pad_value_label: u8,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation: 10.0,
            max_translation: [20, 20],
            crop_size: None,
            pad: [0, 0],
            pad_value_image: 0.0,
            pad_value_label: 0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration: no rotation, translation, padding or cropping.
    pub fn identity() -> Self {
        AugmentConfig {
            max_rotation: 0.0,
            max_translation: [0, 0],
            ..Default::default()
        }
    }

    fn validate(&self, dims: [usize; 2]) -> Result<[usize; 2]> {
        if !(self.max_rotation.is_finite() && self.max_rotation >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max_rotation must be finite and >= 0, got {}",
                self.max_rotation
            )));
        }
        let crop = self.crop_size.unwrap_or(dims);
        let padded = [dims[0] + 2 * self.pad[0], dims[1] + 2 * self.pad[1]];
        if crop[0] == 0 || crop[1] == 0 {
            return Err(Error::InvalidParameter(format!("crop size {crop:?} must be positive")));
        }
        if crop[0] > padded[0] || crop[1] > padded[1] {
            return Err(Error::InvalidParameter(format!(
                "crop size {crop:?} exceeds padded input {padded:?}"
            )));
        }
        Ok(crop)
    }
}

/// One concrete draw of the augmentation transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translation: [i64; 2],
    /// Crop origin within the padded slice.
    pub crop_offset: [usize; 2],
}

/// Draw transform parameters for an input of size `dims`.
pub fn draw_params<R: Rng + ?Sized>(cfg: &AugmentConfig, dims: [usize; 2], rng: &mut R) -> Result<AugmentParams> {
    let crop = cfg.validate(dims)?;
    let rotation_deg = if cfg.max_rotation > 0.0 {
        rng.random_range(-cfg.max_rotation..=cfg.max_rotation)
    } else {
        0.0
    };
    let mut translation = [0i64; 2];
    for (t, &m) in translation.iter_mut().zip(&cfg.max_translation) {
        let m = m as i64;
        *t = if m > 0 { rng.random_range(-m..=m) } else { 0 };
    }
    let mut crop_offset = [0usize; 2];
    for a in 0..2 {
        let slack = dims[a] + 2 * cfg.pad[a] - crop[a];
        crop_offset[a] = if slack > 0 { rng.random_range(0..=slack) } else { 0 };
    }
    Ok(AugmentParams {
        rotation_deg,
        translation,
        crop_offset,
    })
}

/// Output coordinate → input sampling position, `None` when the output
/// voxel falls in padding or in the strip vacated by translation.
struct Mapping {
    dims: [usize; 2],
    pad: [usize; 2],
    params: AugmentParams,
    cos: f64,
    sin: f64,
    centre: [f64; 2],
}

impl Mapping {
    fn new(dims: [usize; 2], cfg: &AugmentConfig, params: AugmentParams) -> Self {
        let theta = params.rotation_deg.to_radians();
        Mapping {
            dims,
            pad: cfg.pad,
            params,
            cos: theta.cos(),
            sin: theta.sin(),
            centre: [(dims[0] as f64 - 1.0) / 2.0, (dims[1] as f64 - 1.0) / 2.0],
        }
    }

    fn source(&self, u: usize, v: usize) -> Option<[f64; 2]> {
        let mut q = [0i64; 2];
        for (a, c) in [u, v].into_iter().enumerate() {
            // undo crop and pad, then translation
            let unpadded = (c + self.params.crop_offset[a]) as i64 - self.pad[a] as i64;
            if unpadded < 0 || unpadded >= self.dims[a] as i64 {
                return None;
            }
            let pre = unpadded - self.params.translation[a];
            if pre < 0 || pre >= self.dims[a] as i64 {
                return None;
            }
            q[a] = pre;
        }
        if self.params.rotation_deg == 0.0 {
            return Some([q[0] as f64, q[1] as f64]);
        }
        // inverse rotation about the centre
        let dx = q[0] as f64 - self.centre[0];
        let dy = q[1] as f64 - self.centre[1];
        Some([
            self.cos * dx + self.sin * dy + self.centre[0],
            -self.sin * dx + self.cos * dy + self.centre[1],
        ])
    }
}

fn bilinear(img: &Slice2D, p: [f64; 2], pad: f32) -> f32 {
    let [w, h] = img.dims;
    let fetch = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            pad as f64
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    let x0 = p[0].floor();
    let y0 = p[1].floor();
    let (fx, fy) = (p[0] - x0, p[1] - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    if fx == 0.0 && fy == 0.0 {
        return fetch(x0, y0) as f32;
    }
    let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
    let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

fn nearest(lab: &LabelSlice, p: [f64; 2], pad: u8) -> u8 {
    let x = p[0].round();
    let y = p[1].round();
    if x < 0.0 || y < 0.0 || x >= lab.dims[0] as f64 || y >= lab.dims[1] as f64 {
        pad
    } else {
        lab.get(x as usize, y as usize)
    }
}

/// Apply an already drawn transform to an image/label pair.
pub fn apply_params(
    img: &Slice2D,
    lab: &LabelSlice,
    cfg: &AugmentConfig,
    params: AugmentParams,
) -> Result<(Slice2D, LabelSlice)> {
    if img.dims != lab.dims {
        return Err(Error::DimsMismatch(img.dims.to_vec(), lab.dims.to_vec()));
    }
    let crop = cfg.validate(img.dims)?;
    let map = Mapping::new(img.dims, cfg, params);
    let n = crop[0] * crop[1];
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for v in 0..crop[1] {
        for u in 0..crop[0] {
            match map.source(u, v) {
                Some(p) => {
                    values.push(bilinear(img, p, cfg.pad_value_image));
                    labels.push(nearest(lab, p, cfg.pad_value_label));
                }
                None => {
                    values.push(cfg.pad_value_image);
                    labels.push(cfg.pad_value_label);
                }
            }
        }
    }
    let out_img = Slice2D {
        dims: crop,
        values,
        axis: img.axis,
        index: img.index,
    };
    let out_lab = LabelSlice {
        dims: crop,
        values: labels,
        axis: lab.axis,
        index: lab.index,
    };
    Ok((out_img, out_lab))
}

/// Draw one transform from `rng` and apply it to both slices.
pub fn augment_pair<R: Rng + ?Sized>(
    img: &Slice2D,
    lab: &LabelSlice,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Slice2D, LabelSlice)> {
    if img.dims != lab.dims {
        return Err(Error::DimsMismatch(img.dims.to_vec(), lab.dims.to_vec()));
    }
    let params = draw_params(cfg, img.dims, rng)?;
    apply_params(img, lab, cfg, params)
}
