//! On-disk sample format and dataset loading.
//!
//! A dataset is a directory with an `index.txt` naming one binary file per
//! sample. Each sample file holds a fixed header (magic, image size, rig
//! intrinsics) followed by twelve little-endian f32 planes: left RGB, right
//! RGB, the two ground-truth disparity maps, then the sparse odometry
//! values and mask for each camera. Files are validated on read; a wrong
//! magic, a truncated body, or an inconsistent sparse map is rejected.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{SparseDisparityMap, StereoRig};
use crate::scalar::Scalar;
use crate::synth::SceneSample;
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"VODP1";
const PLANES: usize = 12;
pub const INDEX_NAME: &str = "index.txt";

/// One loaded training or evaluation sample.
pub struct Sample<T: Scalar> {
    pub left: Tensor<T>,
    pub right: Tensor<T>,
    pub gt_left: Tensor<T>,
    pub gt_right: Tensor<T>,
    pub sparse_left: SparseDisparityMap<T>,
    pub sparse_right: SparseDisparityMap<T>,
    pub rig: StereoRig,
}

impl<T: Scalar> Sample<T> {
    pub fn dims(&self) -> Result<(usize, usize)> {
        let (_, _, h, w) = self.left.dims4()?;
        Ok((h, w))
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::FileFormat {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Serializes one rendered scene. Planes are stored as f32.
pub fn write_sample(path: &Path, scene: &SceneSample, rig: &StereoRig) -> Result<()> {
    let (_, _, h, w) = scene.left.dims4()?;
    let plane_len = h * w;
    let mut buf = Vec::with_capacity(5 + 8 + 40 + PLANES * plane_len * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for v in [rig.fx, rig.fy, rig.cx, rig.cy, rig.baseline] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let planes: [&Tensor<f64>; 8] = [
        &scene.left,
        &scene.right,
        &scene.gt_left,
        &scene.gt_right,
        &scene.sparse_left.values,
        &scene.sparse_left.mask,
        &scene.sparse_right.values,
        &scene.sparse_right.mask,
    ];
    for t in planes {
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(Error::io_at(path))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.path, "file is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn plane<T: Scalar>(&mut self, len: usize) -> Result<Vec<T>> {
        let raw = self.take(len * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }
}

/// Reads and validates one sample file.
pub fn read_sample<T: Scalar>(path: &Path) -> Result<Sample<T>> {
    let bytes = fs::read(path).map_err(Error::io_at(path))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(5)? != MAGIC {
        return Err(format_err(path, "not a sample file (bad magic)"));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if h == 0 || w == 0 || h > 1 << 14 || w > 1 << 14 {
        return Err(format_err(path, format!("implausible image size {h}x{w}")));
    }
    let fx = r.f64()?;
    let fy = r.f64()?;
    let cx = r.f64()?;
    let cy = r.f64()?;
    let baseline = r.f64()?;
    let rig = StereoRig::new(fx, fy, cx, cy, baseline)
        .map_err(|e| format_err(path, format!("bad rig header: {e}")))?;

    let expected = r.pos + PLANES * h * w * 4;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes, file has {}", bytes.len()),
        ));
    }

    let len = h * w;
    let rgb = |r: &mut Reader| -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(3 * len);
        for _ in 0..3 {
            data.extend(r.plane::<T>(len)?);
        }
        Tensor::new(vec![1, 3, h, w], data)
    };
    let left = rgb(&mut r)?;
    let right = rgb(&mut r)?;
    let map = |r: &mut Reader| -> Result<Tensor<T>> {
        Tensor::new(vec![1, 1, h, w], r.plane::<T>(len)?)
    };
    let gt_left = map(&mut r)?;
    let gt_right = map(&mut r)?;
    let sl_values = map(&mut r)?;
    let sl_mask = map(&mut r)?;
    let sr_values = map(&mut r)?;
    let sr_mask = map(&mut r)?;
    let sparse_left = SparseDisparityMap::new(sl_values, sl_mask)
        .map_err(|e| format_err(path, format!("left sparse map: {e}")))?;
    let sparse_right = SparseDisparityMap::new(sr_values, sr_mask)
        .map_err(|e| format_err(path, format!("right sparse map: {e}")))?;

    for (name, t) in [("left image", &left), ("right image", &right)] {
        if !t.all_finite() {
            return Err(format_err(path, format!("{name} holds non-finite values")));
        }
    }
    for (name, t) in [("left disparity", &gt_left), ("right disparity", &gt_right)] {
        if t.data().iter().any(|v| !(v.as_f64() >= 0.0) || !v.is_finite()) {
            return Err(format_err(path, format!("{name} must be finite and >= 0")));
        }
    }

    Ok(Sample {
        left,
        right,
        gt_left,
        gt_right,
        sparse_left,
        sparse_right,
        rig,
    })
}

/// Writes the dataset manifest.
pub fn write_index(dir: &Path, names: &[String]) -> Result<()> {
    let mut body = String::new();
    for n in names {
        body.push_str(n);
        body.push('\n');
    }
    fs::write(dir.join(INDEX_NAME), body).map_err(Error::io_at(dir.join(INDEX_NAME)))?;
    Ok(())
}

/// Reads the manifest and returns the sample paths in manifest order.
pub fn read_index(dir: &Path) -> Result<Vec<PathBuf>> {
    let index = dir.join(INDEX_NAME);
    let body = fs::read_to_string(&index)
        .map_err(|e| format_err(&index, format!("cannot read manifest: {e}")))?;
    let paths: Vec<PathBuf> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| dir.join(l))
        .collect();
    if paths.is_empty() {
        return Err(format_err(&index, "manifest lists no samples"));
    }
    Ok(paths)
}

/// Loads every sample in the manifest, requiring one consistent image size.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Vec<Sample<T>>> {
    let mut samples = Vec::new();
    for path in read_index(dir)? {
        let s = read_sample::<T>(&path)?;
        if let Some(first) = samples.first() {
            let a: &Sample<T> = first;
            if a.left.shape() != s.left.shape() {
                return Err(format_err(
                    &path,
                    format!(
                        "sample size {:?} differs from the rest of the dataset {:?}",
                        s.left.shape(),
                        a.left.shape()
                    ),
                ));
            }
        }
        samples.push(s);
    }
    Ok(samples)
}
