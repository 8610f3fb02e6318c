//! Hounsfield-unit volumes, aligned label volumes, and the CTV file format.
//!
//! A CTV volume is a JSON header (`<name>.ctv.json`) next to a headerless raw
//! voxel file. Voxels are stored x-fastest, then y, then z, little-endian,
//! with no padding.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage kind of CT voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Int16,
    Float32,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Int16 => "int16",
            ElementKind::Float32 => "float32",
        }
    }

    fn byte_width(self) -> usize {
        match self {
            ElementKind::Int16 => 2,
            ElementKind::Float32 => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "int16" => Ok(ElementKind::Int16),
            "float32" => Ok(ElementKind::Float32),
            other => Err(Error::UnknownElementKind(other.to_string())),
        }
    }
}

/// Voxel storage in one of the two supported element kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum Voxels {
    Int16(Vec<i16>),
    Float32(Vec<f32>),
}

impl Voxels {
    pub fn len(&self) -> usize {
        match self {
            Voxels::Int16(v) => v.len(),
            Voxels::Float32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            Voxels::Int16(_) => ElementKind::Int16,
            Voxels::Float32(_) => ElementKind::Float32,
        }
    }

    #[inline]
    pub fn get_f32(&self, i: usize) -> f32 {
        match self {
            Voxels::Int16(v) => v[i] as f32,
            Voxels::Float32(v) => v[i],
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Voxels::Int16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Voxels::Float32(v) => v.iter().flat_map(|x| x.to_bits().to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(kind: ElementKind, bytes: &[u8]) -> Self {
        match kind {
            ElementKind::Int16 => Voxels::Int16(
                bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            ElementKind::Float32 => Voxels::Float32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect(),
            ),
        }
    }
}

fn check_dims(dims: [usize; 3]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::InvalidDims(dims.to_vec()));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidDims(dims.to_vec()))
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidSpacing(spacing))
    }
}

/// A 3D CT intensity grid in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Voxels,
}

impl CtVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], voxels: Voxels) -> Result<Self> {
        let expected = check_dims(dims)?;
        check_spacing(spacing)?;
        if voxels.len() != expected {
            return Err(Error::VoxelCount {
                expected,
                actual: voxels.len(),
            });
        }
        Ok(CtVolume {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &Voxels {
        &self.voxels
    }

    pub fn element_kind(&self) -> ElementKind {
        self.voxels.kind()
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Linear index of voxel `(x, y, z)`.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels.get_f32(self.index(x, y, z))
    }

    /// All voxels promoted to float32.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.voxels {
            Voxels::Int16(v) => v.iter().map(|&x| x as f32).collect(),
            Voxels::Float32(v) => v.clone(),
        }
    }
}

/// Integer label grid aligned to a [`CtVolume`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<u8>,
    label_names: BTreeMap<u8, String>,
}

pub const BACKGROUND: u8 = 0;

impl LabelVolume {
    /// Build a label volume. Label 0 is always named (`background` unless
    /// the caller supplies a name); every other voxel value must be named.
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        voxels: Vec<u8>,
        mut label_names: BTreeMap<u8, String>,
    ) -> Result<Self> {
        let expected = check_dims(dims)?;
        check_spacing(spacing)?;
        if voxels.len() != expected {
            return Err(Error::VoxelCount {
                expected,
                actual: voxels.len(),
            });
        }
        label_names
            .entry(BACKGROUND)
            .or_insert_with(|| "background".to_string());
        let mut seen = [false; 256];
        for &v in &voxels {
            seen[v as usize] = true;
        }
        if let Some(id) = (0..=255u8).find(|&id| seen[id as usize] && !label_names.contains_key(&id)) {
            return Err(Error::UnnamedLabel(id));
        }
        Ok(LabelVolume {
            dims,
            spacing,
            voxels,
            label_names,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn label_names(&self) -> &BTreeMap<u8, String> {
        &self.label_names
    }

    pub fn label_name(&self, id: u8) -> Option<&str> {
        self.label_names.get(&id).map(String::as_str)
    }

    /// Named non-background labels.
    pub fn organ_ids(&self) -> Vec<u8> {
        self.label_names.keys().copied().filter(|&id| id != BACKGROUND).collect()
    }

    pub fn check_aligned(&self, image: &CtVolume) -> Result<()> {
        if self.dims != image.dims() {
            return Err(Error::DimsMismatch(self.dims.to_vec(), image.dims().to_vec()));
        }
        Ok(())
    }
}

/// A 2D view of one plane of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub dims: [usize; 2],
    pub values: Vec<f32>,
    pub axis: usize,
    pub index: usize,
}

impl Slice2D {
    pub fn new(dims: [usize; 2], values: Vec<f32>) -> Result<Self> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(Error::InvalidDims(dims.to_vec()));
        }
        if values.len() != dims[0] * dims[1] {
            return Err(Error::VoxelCount {
                expected: dims[0] * dims[1],
                actual: values.len(),
            });
        }
        Ok(Slice2D {
            dims,
            values,
            axis: 2,
            index: 0,
        })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.values[u + self.dims[0] * v]
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Slice2D {
        debug_assert_eq!(values.len(), self.values.len());
        Slice2D {
            dims: self.dims,
            values,
            axis: self.axis,
            index: self.index,
        }
    }
}

/// A 2D plane of labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSlice {
    pub dims: [usize; 2],
    pub values: Vec<u8>,
    pub axis: usize,
    pub index: usize,
}

impl LabelSlice {
    pub fn new(dims: [usize; 2], values: Vec<u8>) -> Result<Self> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(Error::InvalidDims(dims.to_vec()));
        }
        if values.len() != dims[0] * dims[1] {
            return Err(Error::VoxelCount {
                expected: dims[0] * dims[1],
                actual: values.len(),
            });
        }
        Ok(LabelSlice {
            dims,
            values,
            axis: 2,
            index: 0,
        })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.values[u + self.dims[0] * v]
    }
}

/// In-plane extents for a slice taken along `axis`. The first in-plane
/// coordinate is the lower-numbered remaining volume axis.
pub fn plane_dims(dims: [usize; 3], axis: usize) -> Result<[usize; 2]> {
    match axis {
        0 => Ok([dims[1], dims[2]]),
        1 => Ok([dims[0], dims[2]]),
        2 => Ok([dims[0], dims[1]]),
        a => Err(Error::InvalidAxis(a)),
    }
}

/// Volume linear indices of every plane element, in plane order (u fastest).
fn plane_indices(dims: [usize; 3], axis: usize, index: usize) -> Result<impl Iterator<Item = usize>> {
    let pd = plane_dims(dims, axis)?;
    if index >= dims[axis] {
        return Err(Error::SliceOutOfRange {
            axis,
            index,
            extent: dims[axis],
        });
    }
    let (nx, ny) = (dims[0], dims[1]);
    Ok((0..pd[1]).flat_map(move |v| {
        (0..pd[0]).map(move |u| {
            let (x, y, z) = match axis {
                0 => (index, u, v),
                1 => (u, index, v),
                _ => (u, v, index),
            };
            x + nx * (y + ny * z)
        })
    }))
}

/// Extract one plane of `volume` as float intensities.
pub fn extract_slice(volume: &CtVolume, axis: usize, index: usize) -> Result<Slice2D> {
    let dims = plane_dims(volume.dims, axis)?;
    let values = match &volume.voxels {
        // Along z the plane is contiguous.
        Voxels::Float32(v) if axis == 2 => {
            let n = dims[0] * dims[1];
            if index >= volume.dims[2] {
                return Err(Error::SliceOutOfRange {
                    axis,
                    index,
                    extent: volume.dims[2],
                });
            }
            v[index * n..(index + 1) * n].to_vec()
        }
        voxels => plane_indices(volume.dims, axis, index)?
            .map(|i| voxels.get_f32(i))
            .collect(),
    };
    Ok(Slice2D {
        dims,
        values,
        axis,
        index,
    })
}

pub fn extract_label_slice(labels: &LabelVolume, axis: usize, index: usize) -> Result<LabelSlice> {
    let dims = plane_dims(labels.dims, axis)?;
    let values = plane_indices(labels.dims, axis, index)?
        .map(|i| labels.voxels[i])
        .collect();
    Ok(LabelSlice {
        dims,
        values,
        axis,
        index,
    })
}

/// Reassemble a float32 volume from a full set of slices along `axis`.
///
/// `slices[k]` becomes plane `k`; the in-plane dims may differ from the
/// original volume (e.g. after cropping), the volume dims follow them.
pub fn stack_slices(axis: usize, slices: &[Slice2D], spacing: [f64; 3]) -> Result<CtVolume> {
    let first = slices.first().ok_or(Error::Empty("slice stack"))?;
    let pd = first.dims;
    let dims = match axis {
        0 => [slices.len(), pd[0], pd[1]],
        1 => [pd[0], slices.len(), pd[1]],
        2 => [pd[0], pd[1], slices.len()],
        a => return Err(Error::InvalidAxis(a)),
    };
    let mut out = vec![0f32; check_dims(dims)?];
    for (k, s) in slices.iter().enumerate() {
        if s.dims != pd {
            return Err(Error::DimsMismatch(s.dims.to_vec(), pd.to_vec()));
        }
        for (i, value) in plane_indices(dims, axis, k)?.zip(&s.values) {
            out[i] = *value;
        }
    }
    CtVolume::new(dims, spacing, Voxels::Float32(out))
}

/// Reassemble a label volume from slices along `axis`.
pub fn stack_label_slices(
    axis: usize,
    slices: &[LabelSlice],
    spacing: [f64; 3],
    label_names: BTreeMap<u8, String>,
) -> Result<LabelVolume> {
    let first = slices.first().ok_or(Error::Empty("slice stack"))?;
    let pd = first.dims;
    let dims = match axis {
        0 => [slices.len(), pd[0], pd[1]],
        1 => [pd[0], slices.len(), pd[1]],
        2 => [pd[0], pd[1], slices.len()],
        a => return Err(Error::InvalidAxis(a)),
    };
    let mut out = vec![0u8; check_dims(dims)?];
    for (k, s) in slices.iter().enumerate() {
        if s.dims != pd {
            return Err(Error::DimsMismatch(s.dims.to_vec(), pd.to_vec()));
        }
        for (i, value) in plane_indices(dims, axis, k)?.zip(&s.values) {
            out[i] = *value;
        }
    }
    LabelVolume::new(dims, spacing, out, label_names)
}

/// Add a constant HU offset to every voxel. The result is always float32.
pub fn shift_intensity(volume: &CtVolume, shift: f32) -> CtVolume {
    let voxels = match &volume.voxels {
        Voxels::Int16(v) => v.iter().map(|&x| x as f32 + shift).collect(),
        Voxels::Float32(v) => v.iter().map(|&x| x + shift).collect(),
    };
    CtVolume {
        dims: volume.dims,
        spacing: volume.spacing,
        voxels: Voxels::Float32(voxels),
    }
}

// ---------------------------------------------------------------------------
// CTV format
// ---------------------------------------------------------------------------

const HEADER_SUFFIX: &str = ".ctv.json";
const UNITS_HU: &str = "HU";
const UNITS_LABEL: &str = "label";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CtvHeader {
    dims: [i64; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    raw: String,
    units: String,
    /// Label id → name, label volumes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<String, String>>,
}

impl CtvHeader {
    fn dims(&self) -> Result<[usize; 3]> {
        if self.dims.iter().any(|&d| d <= 0) {
            return Err(Error::InvalidDims(self.dims.iter().map(|&d| d.max(0) as usize).collect()));
        }
        Ok([self.dims[0] as usize, self.dims[1] as usize, self.dims[2] as usize])
    }
}

/// Path of the raw file that accompanies `header_path`.
fn raw_name(header_path: &Path) -> String {
    let file = header_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = file.strip_suffix(HEADER_SUFFIX).unwrap_or(&file);
    format!("{stem}.raw")
}

fn read_header(path: &Path) -> Result<CtvHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Header {
        path: path.to_path_buf(),
        source,
    })
}

fn read_raw(header_path: &Path, header: &CtvHeader, width: usize) -> Result<(PathBuf, Vec<u8>, usize)> {
    let dims = header.dims()?;
    let count = check_dims(dims)?;
    let raw_path = header_path.parent().unwrap_or(Path::new(".")).join(&header.raw);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = count * width;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((raw_path, bytes, count))
}

fn write_pair(path: &Path, header: &CtvHeader, bytes: &[u8]) -> Result<()> {
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&header.raw);
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    let mut text = serde_json::to_string_pretty(header)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load a CT volume from a `.ctv.json` header and its raw sibling.
pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.units != UNITS_HU {
        return Err(Error::Units {
            expected: UNITS_HU,
            found: header.units,
        });
    }
    let kind = ElementKind::parse(&header.dtype)?;
    check_spacing(header.spacing_mm)?;
    let (_, bytes, _) = read_raw(path, &header, kind.byte_width())?;
    CtVolume::new(header.dims()?, header.spacing_mm, Voxels::from_le_bytes(kind, &bytes))
}

/// Write a CT volume as `<path>` (header) plus `<name>.raw` beside it.
pub fn save_volume(volume: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CtvHeader {
        dims: volume.dims.map(|d| d as i64),
        spacing_mm: volume.spacing,
        dtype: volume.element_kind().as_str().to_string(),
        raw: raw_name(path),
        units: UNITS_HU.to_string(),
        labels: None,
    };
    write_pair(path, &header, &volume.voxels.to_le_bytes())
}

/// Load a label volume (`units: "label"`, `dtype: "uint8"`).
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let header = read_header(path)?;
    if header.units != UNITS_LABEL {
        return Err(Error::Units {
            expected: UNITS_LABEL,
            found: header.units,
        });
    }
    if header.dtype != "uint8" {
        return Err(Error::UnknownElementKind(header.dtype));
    }
    check_spacing(header.spacing_mm)?;
    let (_, bytes, _) = read_raw(path, &header, 1)?;
    let mut names = BTreeMap::new();
    for (k, v) in header.labels.iter().flatten() {
        let id: u8 = k
            .parse()
            .map_err(|_| Error::Config(format!("label key `{k}` is not an id in 0..=255")))?;
        names.insert(id, v.clone());
    }
    if header.labels.is_none() {
        // Unnamed label files get generic names for every id present.
        let mut seen = [false; 256];
        for &b in &bytes {
            seen[b as usize] = true;
        }
        for id in (1..=255u8).filter(|&id| seen[id as usize]) {
            names.insert(id, format!("label_{id}"));
        }
    }
    LabelVolume::new(header.dims()?, header.spacing_mm, bytes, names)
}

pub fn save_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CtvHeader {
        dims: labels.dims.map(|d| d as i64),
        spacing_mm: labels.spacing,
        dtype: "uint8".to_string(),
        raw: raw_name(path),
        units: UNITS_LABEL.to_string(),
        labels: Some(
            labels
                .label_names
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        ),
    };
    write_pair(path, &header, &labels.voxels)
}
