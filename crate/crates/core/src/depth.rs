//! Depth maps, confidence maps, and their on-disk formats.

use std::path::Path;

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{domain, format, Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

pub const DEPTH_MAGIC: &[u8; 6] = b"RFDPT\0";

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d > 0.0 && d.is_finite()
}

/// Row-major `width x height` z-depths in meters; `<= 0` or non-finite marks a missing value.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return domain("depth map must be at least 1x1");
        }
        if data.len() != width * height {
            return domain(format!("depth data has {} entries, expected {}x{}", data.len(), width, height));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| is_valid_depth(d)).count()
    }

    pub fn matches(&self, k: &CameraIntrinsics) -> bool {
        self.width == k.width && self.height == k.height
    }

    /// Missing values replaced by 0, the network's "no measurement" encoding.
    pub fn zero_filled(&self) -> Vec<f32> {
        self.data.iter().map(|&d| if is_valid_depth(d) { d } else { 0.0 }).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + 4 * self.data.len());
        out.extend_from_slice(DEPTH_MAGIC);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        put_f32s(&mut out, &self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "depth file");
        r.magic(DEPTH_MAGIC)?;
        let w = r.u32()? as usize;
        let h = r.u32()? as usize;
        let n = w.checked_mul(h).filter(|&n| n > 0).map_or_else(|| format("depth file: bad size"), Ok)?;
        let data = r.f32_vec(n)?;
        r.finish()?;
        Self::new(w, h, data).map_err(|e| Error::Format(e.to_string()))
    }

    /// 16-bit grayscale PNG, `depth_m = raw / scale`, raw 0 = missing.
    pub fn read_png(path: &Path, scale: f32) -> Result<Self> {
        if !(scale > 0.0) {
            return domain(format!("depth scale must be positive, got {scale}"));
        }
        let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let img = img.into_luma16();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| if p.0[0] == 0 { 0.0 } else { p.0[0] as f32 / scale }).collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn write_png(&self, path: &Path, scale: f32) -> Result<()> {
        if !(scale > 0.0) {
            return domain(format!("depth scale must be positive, got {scale}"));
        }
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|&d| if is_valid_depth(d) { (d * scale).round().clamp(1.0, 65535.0) as u16 } else { 0 })
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches");
        img.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Reads either format, chosen by extension (`.png` or anything else as raw).
    pub fn load(path: &Path, png_scale: f32) -> Result<Self> {
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            Self::read_png(path, png_scale)
        } else {
            Self::from_bytes(&std::fs::read(path)?)
        }
    }

    pub fn save(&self, path: &Path, png_scale: f32) -> Result<()> {
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            self.write_png(path, png_scale)
        } else {
            std::fs::write(path, self.to_bytes())?;
            Ok(())
        }
    }
}

/// Per-pixel confidence in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return domain("confidence map shape mismatch");
        }
        if data.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return domain("confidence values must lie in (0, 1]");
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A depth map together with the camera that produced it.
#[derive(Clone, Debug)]
pub struct DepthFrame {
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl DepthFrame {
    pub fn new(depth: DepthMap, intrinsics: CameraIntrinsics, pose: Pose) -> Result<Self> {
        if !depth.matches(&intrinsics) {
            return domain(format!(
                "depth map is {}x{} but intrinsics are {}x{}",
                depth.width(),
                depth.height(),
                intrinsics.width,
                intrinsics.height
            ));
        }
        Ok(Self { depth, intrinsics, pose })
    }
}
