//! Volume metrics (MAD, MSE, occupancy accuracy and IoU) and zero-level-set
//! mesh extraction.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::mesh::TriangleMesh;
use crate::volume::TsdfVolume;

/// Which voxels a metric is averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    All,
    /// Voxels with positive weight in either volume.
    Observed,
}

fn check(est: &TsdfVolume, gt: &TsdfVolume) -> Result<()> {
    if !est.same_grid(gt) {
        return domain("volumes do not share a grid");
    }
    Ok(())
}

fn selected<'a>(est: &'a TsdfVolume, gt: &'a TsdfVolume, mask: Mask) -> impl Iterator<Item = usize> + 'a {
    let (we, wg) = (est.weights(), gt.weights());
    (0..est.len()).filter(move |&i| mask == Mask::All || we[i] > 0.0 || wg[i] > 0.0)
}

fn mean_over(est: &TsdfVolume, gt: &TsdfVolume, mask: Mask, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    check(est, gt)?;
    let (ve, vg) = (est.values(), gt.values());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in selected(est, gt, mask) {
        sum += f(ve[i] as f64, vg[i] as f64);
        n += 1;
    }
    if n == 0 {
        return domain("mask selects no voxels");
    }
    Ok(sum / n as f64)
}

/// Mean absolute difference.
pub fn mad(est: &TsdfVolume, gt: &TsdfVolume, mask: Mask) -> Result<f64> {
    mean_over(est, gt, mask, |a, b| (a - b).abs())
}

/// Mean squared difference.
pub fn mse(est: &TsdfVolume, gt: &TsdfVolume, mask: Mask) -> Result<f64> {
    mean_over(est, gt, mask, |a, b| (a - b) * (a - b))
}

/// Percentage of masked voxels whose occupancy (value < 0) agrees.
pub fn occupancy_accuracy(est: &TsdfVolume, gt: &TsdfVolume, mask: Mask) -> Result<f64> {
    check(est, gt)?;
    let (ve, vg) = (est.values(), gt.values());
    let (mut agree, mut n) = (0usize, 0usize);
    for i in selected(est, gt, mask) {
        agree += usize::from((ve[i] < 0.0) == (vg[i] < 0.0));
        n += 1;
    }
    if n == 0 {
        return domain("mask selects no voxels");
    }
    Ok(100.0 * agree as f64 / n as f64)
}

/// Intersection over union of the occupied sets over the whole grid.
pub fn occupancy_iou(est: &TsdfVolume, gt: &TsdfVolume) -> Result<f64> {
    occupancy_iou_masked(est, gt, Mask::All)
}

/// Intersection over union restricted to a mask; 1 when the union is empty.
pub fn occupancy_iou_masked(est: &TsdfVolume, gt: &TsdfVolume, mask: Mask) -> Result<f64> {
    check(est, gt)?;
    let (ve, vg) = (est.values(), gt.values());
    let (mut inter, mut union) = (0usize, 0usize);
    for i in selected(est, gt, mask) {
        let (a, b) = (ve[i] < 0.0, vg[i] < 0.0);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaskedMetrics {
    pub voxels: usize,
    pub mad: Option<f64>,
    pub mse: Option<f64>,
    pub accuracy: Option<f64>,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub all: MaskedMetrics,
    pub observed: MaskedMetrics,
    pub metadata: BTreeMap<String, String>,
}

impl EvalRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

pub fn masked_metrics(est: &TsdfVolume, gt: &TsdfVolume, mask: Mask) -> Result<MaskedMetrics> {
    check(est, gt)?;
    Ok(MaskedMetrics {
        voxels: selected(est, gt, mask).count(),
        mad: mad(est, gt, mask).ok(),
        mse: mse(est, gt, mask).ok(),
        accuracy: occupancy_accuracy(est, gt, mask).ok(),
        iou: occupancy_iou_masked(est, gt, mask)?,
    })
}

pub fn evaluate(est: &TsdfVolume, gt: &TsdfVolume, metadata: BTreeMap<String, String>) -> Result<EvalRecord> {
    Ok(EvalRecord {
        all: masked_metrics(est, gt, Mask::All)?,
        observed: masked_metrics(est, gt, Mask::Observed)?,
        metadata,
    })
}

// Cube corner i sits at offset (i & 1, (i >> 1) & 1, (i >> 2) & 1).
const CORNER: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]];

// Edge (axis, corner at the lower end).
const EDGES: [(usize, usize); 12] =
    [(0, 0), (0, 2), (0, 4), (0, 6), (1, 0), (1, 1), (1, 4), (1, 5), (2, 0), (2, 1), (2, 2), (2, 3)];

fn edge_corners(e: usize) -> (usize, usize) {
    let (axis, c) = EDGES[e];
    (c, c | (1 << axis))
}

fn edge_mid(e: usize) -> Vector3<f64> {
    let (a, b) = edge_corners(e);
    (corner_pos(a) + corner_pos(b)) * 0.5
}

fn corner_pos(c: usize) -> Vector3<f64> {
    Vector3::new(CORNER[c][0] as f64, CORNER[c][1] as f64, CORNER[c][2] as f64)
}

/// Triangle table: for each inside-corner mask, triangles as edge triples,
/// oriented so normals point from inside (below iso) to outside.
///
/// Built per face: each face contributes segments between its crossed edges.
/// Faces with four crossed edges separate the two inside corners. Segments
/// chain into closed loops that are fan-triangulated.
fn table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|m| build_case(m as u8)))
}

fn build_case(mask: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask >> c & 1 == 1;
    let crossed = |e: usize| {
        let (a, b) = edge_corners(e);
        inside(a) != inside(b)
    };
    let mut next = [usize::MAX; 12];
    for axis in 0..3 {
        for side in 0..2 {
            let corners: Vec<usize> = (0..8).filter(|&c| CORNER[c][axis] == side).collect();
            let face_edges: Vec<usize> = (0..12)
                .filter(|&e| {
                    let (a, b) = edge_corners(e);
                    corners.contains(&a) && corners.contains(&b)
                })
                .collect();
            let active: Vec<usize> = face_edges.iter().copied().filter(|&e| crossed(e)).collect();
            let mut normal = Vector3::zeros();
            normal[axis] = if side == 1 { 1.0 } else { -1.0 };
            let inner: Vec<usize> = corners.iter().copied().filter(|&c| inside(c)).collect();
            let mut segments: Vec<(usize, usize, Vector3<f64>)> = Vec::new();
            match active.len() {
                0 => {}
                2 => {
                    let r = inner.iter().map(|&c| corner_pos(c)).sum::<Vector3<f64>>() / inner.len() as f64;
                    segments.push((active[0], active[1], r));
                }
                4 => {
                    for &c in &inner {
                        let es: Vec<usize> = active
                            .iter()
                            .copied()
                            .filter(|&e| {
                                let (a, b) = edge_corners(e);
                                a == c || b == c
                            })
                            .collect();
                        segments.push((es[0], es[1], corner_pos(c)));
                    }
                }
                _ => unreachable!("a face has an even number of crossed edges"),
            }
            for (a, b, r) in segments {
                let (pa, pb) = (edge_mid(a), edge_mid(b));
                let (a, b) = if (pb - pa).cross(&normal).dot(&(r - (pa + pb) * 0.5)) > 0.0 { (a, b) } else { (b, a) };
                debug_assert_eq!(next[a], usize::MAX);
                next[a] = b;
            }
        }
    }
    let mut tris = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut e = next[start];
        while e != start {
            seen[e] = true;
            lp.push(e);
            e = next[e];
        }
        for k in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
        }
    }
    tris
}

/// Crossings closer than this (in voxels) to a grid corner snap onto it, so
/// the tiny caps around near-iso corners collapse instead of leaving slivers.
const SNAP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Weld {
    Corner(usize),
    Edge(usize, usize),
}

/// Extracts the `iso` level set as a welded triangle mesh in world
/// coordinates. Only cells whose eight corners all have positive weight
/// contribute.
pub fn marching_cubes(volume: &TsdfVolume, iso: f32) -> TriangleMesh {
    let [nx, ny, nz] = volume.dims();
    let (vals, wts) = (volume.values(), volume.weights());
    let table = table();
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut welded: HashMap<Weld, u32> = HashMap::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::default();
    }
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let idx: [usize; 8] = std::array::from_fn(|c| {
                    volume.index(x + CORNER[c][0], y + CORNER[c][1], z + CORNER[c][2])
                });
                if idx.iter().any(|&i| wts[i] <= 0.0) {
                    continue;
                }
                let mut mask = 0u8;
                for (c, &i) in idx.iter().enumerate() {
                    if vals[i] < iso {
                        mask |= 1 << c;
                    }
                }
                let tris = &table[mask as usize];
                if tris.is_empty() {
                    continue;
                }
                let mut vertex_of = |e: usize| -> u32 {
                    let (a, b) = edge_corners(e);
                    let axis = EDGES[e].0;
                    let (va, vb) = (vals[idx[a]] as f64, vals[idx[b]] as f64);
                    let t = ((iso as f64 - va) / (vb - va)).clamp(0.0, 1.0);
                    let key = if t < SNAP {
                        Weld::Corner(idx[a])
                    } else if t > 1.0 - SNAP {
                        Weld::Corner(idx[b])
                    } else {
                        Weld::Edge(idx[a], axis)
                    };
                    *welded.entry(key).or_insert_with(|| {
                        let p = match key {
                            Weld::Corner(i) => {
                                let [x, y, z] = volume.coords(i);
                                volume.voxel_center(x, y, z)
                            }
                            Weld::Edge(i, _) => {
                                let [x, y, z] = volume.coords(i);
                                let mut p = volume.voxel_center(x, y, z);
                                p[axis] += t * volume.voxel_size() as f64;
                                p
                            }
                        };
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    })
                };
                for t in tris {
                    let f = t.map(|e| vertex_of(e as usize));
                    if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                        faces.push(f);
                    }
                }
            }
        }
    }
    TriangleMesh::new_filtered(vertices, faces).expect("indices are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(n: usize) -> TsdfVolume {
        TsdfVolume::new([n; 3], [0.0; 3], 0.1).unwrap()
    }

    fn random_pair(seed: u64, n: usize) -> (TsdfVolume, TsdfVolume) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut a, mut b) = (vol(n), vol(n));
        for v in [&mut a, &mut b] {
            for x in v.values_mut() {
                *x = rng.random_range(-1.0..=1.0);
            }
            for w in v.weights_mut() {
                *w = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.1..5.0) };
            }
        }
        (a, b)
    }

    #[test]
    fn identical_volumes() {
        let (a, _) = random_pair(1, 8);
        assert_eq!(mad(&a, &a, Mask::All).unwrap(), 0.0);
        assert_eq!(mse(&a, &a, Mask::Observed).unwrap(), 0.0);
        assert_eq!(occupancy_accuracy(&a, &a, Mask::All).unwrap(), 100.0);
        assert_eq!(occupancy_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn opposite_constants() {
        let (mut a, mut b) = (vol(4), vol(4));
        a.values_mut().fill(-1.0);
        b.values_mut().fill(1.0);
        assert_eq!(mad(&a, &b, Mask::All).unwrap(), 2.0);
        assert_eq!(mse(&a, &b, Mask::All).unwrap(), 4.0);
        assert_eq!(occupancy_accuracy(&a, &b, Mask::All).unwrap(), 0.0);
        assert_eq!(occupancy_iou(&a, &b).unwrap(), 0.0);
        // no occupancy anywhere
        assert_eq!(occupancy_iou(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_occupancy() {
        let (mut a, mut b) = (vol(4), vol(4));
        a.values_mut().fill(1.0);
        b.values_mut().fill(1.0);
        a.values_mut()[..8].fill(-0.5);
        b.values_mut()[8..16].fill(-0.5);
        assert_eq!(occupancy_iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = vol(4);
        let b = TsdfVolume::new([4; 3], [0.0; 3], 0.2).unwrap();
        assert!(mad(&a, &b, Mask::All).is_err());
        assert!(occupancy_iou(&a, &b).is_err());
        assert!(evaluate(&a, &b, BTreeMap::new()).is_err());
    }

    #[test]
    fn empty_observed_mask() {
        let a = vol(3);
        assert!(mad(&a, &a, Mask::Observed).is_err());
        let r = evaluate(&a, &a, BTreeMap::new()).unwrap();
        assert_eq!(r.observed.mad, None);
        assert!(r.to_json().contains("\"mad\":null"));
    }

    #[test]
    fn scalar_loop_oracle() {
        for seed in 0..5 {
            let (a, b) = random_pair(seed, 16);
            for mask in [Mask::All, Mask::Observed] {
                let (mut s1, mut s2, mut agree, mut n) = (0.0f64, 0.0f64, 0usize, 0usize);
                let (mut inter, mut uni) = (std::collections::HashSet::new(), std::collections::HashSet::new());
                for i in 0..a.len() {
                    let keep = mask == Mask::All || a.weights()[i] > 0.0 || b.weights()[i] > 0.0;
                    if !keep {
                        continue;
                    }
                    let (x, y) = (a.values()[i] as f64, b.values()[i] as f64);
                    s1 += (x - y).abs();
                    s2 += (x - y).powi(2);
                    agree += usize::from((x < 0.0) == (y < 0.0));
                    n += 1;
                    if x < 0.0 && y < 0.0 {
                        inter.insert(i);
                    }
                    if x < 0.0 || y < 0.0 {
                        uni.insert(i);
                    }
                }
                assert!((mad(&a, &b, mask).unwrap() - s1 / n as f64).abs() < 1e-12);
                assert!((mse(&a, &b, mask).unwrap() - s2 / n as f64).abs() < 1e-12);
                assert_eq!(occupancy_accuracy(&a, &b, mask).unwrap(), 100.0 * agree as f64 / n as f64);
                assert_eq!(occupancy_iou_masked(&a, &b, mask).unwrap(), inter.len() as f64 / uni.len() as f64);
            }
        }
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_bounded(seed in 0u64..1000) {
            let (a, b) = random_pair(seed, 6);
            for mask in [Mask::All, Mask::Observed] {
                let m = mad(&a, &b, mask).unwrap();
                let s = mse(&a, &b, mask).unwrap();
                let acc = occupancy_accuracy(&a, &b, mask).unwrap();
                prop_assert_eq!(m, mad(&b, &a, mask).unwrap());
                prop_assert_eq!(s, mse(&b, &a, mask).unwrap());
                prop_assert!((0.0..=2.0).contains(&m));
                prop_assert!((0.0..=4.0).contains(&s));
                prop_assert!((0.0..=100.0).contains(&acc));
            }
            let iou = occupancy_iou(&a, &b).unwrap();
            prop_assert_eq!(iou, occupancy_iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&iou));
        }
    }

    #[test]
    fn case_table_is_consistent() {
        for m in 0..=255u8 {
            let tris = &table()[m as usize];
            if m == 0 || m == 255 {
                assert!(tris.is_empty());
            } else {
                assert!(!tris.is_empty(), "case {m}");
            }
            // every triangle edge inside the cube appears once in each direction
            // or lies on a cube face
            let comp = &table()[(!m) as usize];
            assert_eq!(tris.is_empty(), comp.is_empty());
        }
        assert_eq!(table()[1].len(), 1);
    }

    fn sphere_volume(n: usize, vs: f64, c: Vector3<f64>, r: f64) -> TsdfVolume {
        let mut v = TsdfVolume::new([n; 3], [0.0; 3], vs as f32).unwrap();
        for i in 0..v.len() {
            let [x, y, z] = v.coords(i);
            let d = (v.voxel_center(x, y, z) - c).norm() - r;
            v.values_mut()[i] = (d / (4.0 * vs)).clamp(-1.0, 1.0) as f32;
            v.weights_mut()[i] = 1.0;
        }
        v
    }

    #[test]
    fn uniform_volume_gives_empty_mesh() {
        let mut v = vol(6);
        v.values_mut().fill(0.5);
        v.weights_mut().fill(1.0);
        assert!(marching_cubes(&v, 0.0).is_empty());
    }

    #[test]
    fn unobserved_cells_are_skipped() {
        let c = Vector3::repeat(0.256);
        let mut v = sphere_volume(64, 0.008, c, 0.15);
        v.weights_mut().fill(0.0);
        assert!(marching_cubes(&v, 0.0).is_empty());
    }

    #[test]
    fn sphere_surface_accuracy() {
        let vs = 0.008;
        let c = Vector3::new(0.2531, 0.2497, 0.2518);
        let r = 0.2;
        let v = sphere_volume(64, vs, c, r);
        let m = marching_cubes(&v, 0.0);
        assert!(m.vertices().len() > 1000);
        let mean = m.vertices().iter().map(|p| ((p - c).norm() - r).abs()).sum::<f64>() / m.vertices().len() as f64;
        assert!(mean < 0.5 * vs, "mean error {mean}");
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!((m.signed_volume() - exact).abs() / exact < 0.01);
    }

    #[test]
    fn sign_flip_reverses_orientation() {
        let c = Vector3::new(0.2531, 0.2497, 0.2518);
        let v = sphere_volume(64, 0.008, c, 0.2);
        let mut f = v.clone();
        for x in f.values_mut() {
            *x = -*x;
        }
        let (a, b) = (marching_cubes(&v, 0.0), marching_cubes(&f, 0.0));
        let key = |m: &TriangleMesh, t: [u32; 3]| -> [[u64; 3]; 3] {
            let p = t.map(|i| m.vertices()[i as usize].map(f64::to_bits).into());
            let k = (0..3).min_by_key(|&i| p[i]).unwrap();
            [p[k], p[(k + 1) % 3], p[(k + 2) % 3]]
        };
        let mut fa: Vec<_> = a.faces().iter().map(|&t| key(&a, [t[0], t[2], t[1]])).collect();
        let mut fb: Vec<_> = b.faces().iter().map(|&t| key(&b, t)).collect();
        fa.sort();
        fb.sort();
        assert_eq!(fa, fb);
        assert!((a.signed_volume() + b.signed_volume()).abs() < 1e-9);
    }
}
