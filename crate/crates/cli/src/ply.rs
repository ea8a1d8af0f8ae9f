//! Binary little-endian PLY splat files.
//!
//! Records keep the stored parameterization (logit opacity, log scales,
//! SH-DC colors) so that load followed by save reproduces the file bytes.

use std::path::Path;

use viewsplat_core::gaussian::{Gaussian, GaussianSet};
use viewsplat_core::Real;

use crate::error::{io_err, Error, Result};

/// Zeroth-order spherical harmonic basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

pub const PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

/// One vertex, in [`PROPERTIES`] order.
pub type Record = [f32; 17];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatFile {
    pub records: Vec<Record>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SplatFile {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_gaussians<T: Real>(set: &GaussianSet<T>) -> Self {
        let records = set
            .gaussians
            .iter()
            .map(|g| {
                let f = |v: T| v.f64();
                let mut r = [0.0f32; 17];
                for i in 0..3 {
                    r[i] = f(g.mean[i]) as f32;
                    r[6 + i] = ((f(g.color[i]) - 0.5) / SH_C0) as f32;
                    r[10 + i] = f(g.scale[i]).ln() as f32;
                }
                r[9] = logit(f(g.opacity)) as f32;
                for i in 0..4 {
                    r[13 + i] = f(g.rotation[i]) as f32;
                }
                r
            })
            .collect();
        Self { records }
    }

    /// Activates the stored values. Quaternions are normalized.
    pub fn to_gaussians<T: Real>(&self) -> GaussianSet<T> {
        let gaussians = self
            .records
            .iter()
            .map(|r| {
                let v = |i: usize| r[i] as f64;
                let q = [v(13), v(14), v(15), v(16)];
                let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                let q = if n > 0.0 { q.map(|x| x / n) } else { [1.0, 0.0, 0.0, 0.0] };
                Gaussian {
                    mean: [v(0), v(1), v(2)].map(T::of),
                    opacity: T::of(sigmoid(v(9))),
                    scale: [v(10), v(11), v(12)].map(|s| T::of(s.exp())),
                    rotation: q.map(T::of),
                    color: [v(6), v(7), v(8)].map(|c| T::of(0.5 + SH_C0 * c)),
                }
            })
            .collect();
        GaussianSet { gaussians }
    }

    pub fn header(&self) -> String {
        let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", self.len());
        for p in PROPERTIES {
            h.push_str(&format!("property float {p}\n"));
        }
        h.push_str("end_header\n");
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        out.reserve(self.len() * 68);
        for r in &self.records {
            for v in r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |offset: usize, detail: String| Error::Format {
            path: path.into(),
            offset: offset as u64,
            detail,
        };
        let mut pos = 0;
        let mut next_line = |expect: &str| -> Result<String> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| fmt(pos, format!("unterminated header, expected {expect:?}")))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| fmt(pos, "header is not UTF-8".into()))?;
            let start = pos;
            pos += end + 1;
            if !expect.is_empty() && line != expect {
                return Err(fmt(start, format!("expected {expect:?}, found {line:?}")));
            }
            Ok(line.to_string())
        };
        const MAGIC: &str = "ply";
        const FORMAT: &str = "format binary_little_endian 1.0";
        next_line(MAGIC)?;
        next_line(FORMAT)?;
        let count_at = MAGIC.len() + FORMAT.len() + 2;
        let count_line = next_line("")?;
        let count: usize = count_line
            .strip_prefix("element vertex ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| fmt(count_at, format!("expected \"element vertex N\", found {count_line:?}")))?;
        for p in PROPERTIES {
            next_line(&format!("property float {p}"))?;
        }
        next_line("end_header")?;
        let body = &bytes[pos..];
        if body.len() != count * 68 {
            return Err(fmt(pos, format!("expected {} bytes of vertex data, found {}", count * 68, body.len())));
        }
        let records = body
            .chunks_exact(68)
            .map(|chunk| core::array::from_fn(|i| f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap())))
            .collect();
        Ok(Self { records })
    }
}

pub fn write_ply(path: &Path, file: &SplatFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()).map_err(io_err(path))
}

pub fn read_ply(path: &Path) -> Result<SplatFile> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    SplatFile::from_bytes(&bytes, path)
}
