//! Standard truncated signed distance fusion with uniform per-sample weights.

use crate::depth::{is_valid_depth, DepthFrame};
use crate::error::{domain, Result};
use crate::geometry::backproject_unchecked;
use crate::volume::TsdfVolume;

/// Half-width of the update band in voxels when none is given.
pub const DEFAULT_TRUNCATION_VOXELS: u32 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StandardStats {
    pub valid_rays: usize,
    pub samples: usize,
}

/// Integrates one depth frame with the running-average update.
///
/// For each valid pixel with depth `d`, samples at z-depths `d + k * voxel_size`,
/// `k = -T..=T`, receive `v = clamp((d - z) / (T * voxel_size), -1, 1)` with
/// weight 1, splatted trilinearly.
pub fn integrate_frame_standard(
    volume: &mut TsdfVolume,
    frame: &DepthFrame,
    truncation_voxels: u32,
) -> Result<StandardStats> {
    if truncation_voxels == 0 {
        return domain("truncation must be at least one voxel");
    }
    let k = &frame.intrinsics;
    if !frame.depth.matches(k) {
        return domain("depth map does not match intrinsics");
    }
    let step = volume.voxel_size() as f64;
    let band = truncation_voxels as f64 * step;
    let t = truncation_voxels as i64;
    let mut stats = StandardStats::default();
    for v in 0..k.height {
        for u in 0..k.width {
            let d = frame.depth.get(u, v);
            if !is_valid_depth(d) {
                continue;
            }
            let d = d as f64;
            stats.valid_rays += 1;
            for i in -t..=t {
                let z = d + i as f64 * step;
                if z <= 0.0 {
                    continue;
                }
                let p = backproject_unchecked(k, &frame.pose, u, v, z);
                let fp = volume.footprint(&p);
                if fp.is_empty() {
                    continue;
                }
                let sdf = ((d - z) / band).clamp(-1.0, 1.0);
                volume.splat_unchecked(&fp, sdf, 1.0);
                stats.samples += 1;
            }
        }
    }
    Ok(stats)
}
