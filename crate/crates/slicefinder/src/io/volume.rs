//! Raw volumes with a `key: value` text header.
//!
//! ```text
//! dims: 64 64 96
//! spacing_um: 25 25 25
//! dtype: uint16
//! byte_order: little
//! data_file: phantom.raw
//! ```
//!
//! Voxels are stored x fastest, then y, then z.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use slicefinder_core::{LabelVolume3D, Volume3D};

use super::{parse_key_values, read_bytes, read_text, sidecar, write_file};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelType {
    U8,
    U16,
    F32,
}

impl VoxelType {
    pub fn bytes(self) -> usize {
        match self {
            VoxelType::U8 => 1,
            VoxelType::U16 => 2,
            VoxelType::F32 => 4,
        }
    }

    /// Smallest type holding every value exactly, if any.
    pub fn smallest_exact(values: &[f64]) -> VoxelType {
        let integral = |max: f64| {
            values
                .iter()
                .all(|&v| v >= 0.0 && v <= max && v.fract() == 0.0)
        };
        if integral(255.0) {
            VoxelType::U8
        } else if integral(65535.0) {
            VoxelType::U16
        } else {
            VoxelType::F32
        }
    }
}

impl fmt::Display for VoxelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoxelType::U8 => "uint8",
            VoxelType::U16 => "uint16",
            VoxelType::F32 => "float32",
        })
    }
}

impl FromStr for VoxelType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uint8" => Ok(VoxelType::U8),
            "uint16" => Ok(VoxelType::U16),
            "float32" => Ok(VoxelType::F32),
            other => Err(format!("unsupported dtype '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_um: [f64; 3],
    pub dtype: VoxelType,
    /// Relative to the header's directory.
    pub data_file: PathBuf,
}

impl VolumeHeader {
    pub fn to_text(&self) -> String {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing_um;
        format!(
            "dims: {nx} {ny} {nz}\nspacing_um: {sx:?} {sy:?} {sz:?}\ndtype: {}\nbyte_order: little\ndata_file: {}\n",
            self.dtype,
            self.data_file.display()
        )
    }
}

fn three<T: FromStr>(v: &str) -> Option<[T; 3]> {
    let parts: Vec<T> = v
        .split_whitespace()
        .map(|p| p.parse().ok())
        .collect::<Option<_>>()?;
    <[T; 3]>::try_from(parts).ok()
}

pub fn parse_volume_header(text: &str, path: &Path) -> Result<VolumeHeader> {
    let bad = |msg: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        msg,
    };
    let (mut dims, mut spacing, mut dtype, mut data_file) = (None, None, None, None);
    for (k, v) in parse_key_values(text, path)? {
        match k.as_str() {
            "dims" => {
                let d: [usize; 3] = three(&v).ok_or_else(|| bad(format!("bad dims '{v}'")))?;
                if d.contains(&0) {
                    return Err(bad(format!("dims must be positive, got '{v}'")));
                }
                dims = Some(d);
            }
            "spacing_um" => {
                let s: [f64; 3] = three(&v).ok_or_else(|| bad(format!("bad spacing_um '{v}'")))?;
                if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(bad(format!("spacing must be positive, got '{v}'")));
                }
                spacing = Some(s);
            }
            "dtype" => dtype = Some(v.parse::<VoxelType>().map_err(bad)?),
            "byte_order" if v == "little" => {}
            "byte_order" => return Err(bad(format!("unsupported byte order '{v}'"))),
            "data_file" if !v.is_empty() => data_file = Some(PathBuf::from(v)),
            other => return Err(bad(format!("unknown or empty key '{other}'"))),
        }
    }
    Ok(VolumeHeader {
        dims: dims.ok_or_else(|| bad("missing 'dims'".into()))?,
        spacing_um: spacing.ok_or_else(|| bad("missing 'spacing_um'".into()))?,
        dtype: dtype.ok_or_else(|| bad("missing 'dtype'".into()))?,
        data_file: data_file.ok_or_else(|| bad("missing 'data_file'".into()))?,
    })
}

fn data_path(header_path: &Path, header: &VolumeHeader) -> PathBuf {
    header_path
        .parent()
        .unwrap_or(Path::new(""))
        .join(&header.data_file)
}

fn read_voxels(header_path: &Path) -> Result<(VolumeHeader, Vec<f64>)> {
    let header = parse_volume_header(&read_text(header_path)?, header_path)?;
    let raw_path = data_path(header_path, &header);
    let raw = read_bytes(&raw_path)?;
    let n: usize = header.dims.iter().product();
    let expected = (n * header.dtype.bytes()) as u64;
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            found: raw.len() as u64,
        });
    }
    let values = match header.dtype {
        VoxelType::U8 => raw.iter().map(|&b| f64::from(b)).collect(),
        VoxelType::U16 => raw
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
        VoxelType::F32 => raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    };
    Ok((header, values))
}

pub fn load_volume(header_path: &Path) -> Result<Volume3D> {
    let (header, values) = read_voxels(header_path)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedHeader {
            path: header_path.to_path_buf(),
            msg: "voxel data contains non-finite values".into(),
        });
    }
    Ok(Volume3D::new(header.dims, header.spacing_um, values)?)
}

fn encode(values: &[f64], dtype: VoxelType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.bytes());
    for &v in values {
        match dtype {
            VoxelType::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            VoxelType::U16 => out.extend((v.round().clamp(0.0, 65535.0) as u16).to_le_bytes()),
            VoxelType::F32 => out.extend((v as f32).to_le_bytes()),
        }
    }
    out
}

fn raw_name(header_path: &Path) -> Result<PathBuf> {
    let stem = header_path
        .file_stem()
        .ok_or_else(|| Error::MalformedHeader {
            path: header_path.to_path_buf(),
            msg: "header path has no file name".into(),
        })?;
    let mut name = stem.to_owned();
    name.push(".raw");
    Ok(PathBuf::from(name))
}

fn write_volume(
    header_path: &Path,
    dims: [usize; 3],
    spacing_um: [f64; 3],
    values: &[f64],
    dtype: VoxelType,
) -> Result<()> {
    let header = VolumeHeader {
        dims,
        spacing_um,
        dtype,
        data_file: raw_name(header_path)?,
    };
    write_file(&data_path(header_path, &header), encode(values, dtype))?;
    write_file(header_path, header.to_text())
}

/// Writes `header_path` and a raw file with the same stem and a `.raw`
/// extension. Without an explicit type the smallest exact one is used.
pub fn save_volume(vol: &Volume3D, header_path: &Path, dtype: Option<VoxelType>) -> Result<()> {
    let dtype = dtype.unwrap_or_else(|| VoxelType::smallest_exact(vol.data()));
    write_volume(header_path, vol.dims(), vol.spacing_um(), vol.data(), dtype)
}

/// Label volumes use the volume format with an integer dtype; region names
/// go to a `.names.csv` sidecar.
pub fn load_label_volume(header_path: &Path) -> Result<LabelVolume3D> {
    let (header, values) = read_voxels(header_path)?;
    if header.dtype == VoxelType::F32 {
        return Err(Error::MalformedHeader {
            path: header_path.to_path_buf(),
            msg: "label volumes need an integer dtype".into(),
        });
    }
    let labels = values.into_iter().map(|v| v as u16).collect();
    let names = super::image::load_names(&sidecar(header_path, ".names.csv"))?;
    Ok(LabelVolume3D::new(header.dims, labels)?.with_names(names.unwrap_or_default()))
}

pub fn save_label_volume(
    labels: &LabelVolume3D,
    spacing_um: [f64; 3],
    header_path: &Path,
) -> Result<()> {
    let values: Vec<f64> = labels.labels().iter().map(|&l| f64::from(l)).collect();
    write_volume(
        header_path,
        labels.dims(),
        spacing_um,
        &values,
        VoxelType::U16,
    )?;
    super::image::save_names(labels.region_names(), &sidecar(header_path, ".names.csv"))
}
