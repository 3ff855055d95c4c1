//! Triangle meshes: procedural primitives, PLY/OBJ input, binary PLY output,
//! and a bounding-volume hierarchy for ray casting and closest-point queries.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};

use crate::error::{domain, format, Error, Result};

/// Minimum triangle area accepted by [`TriangleMesh::new`].
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return domain("mesh has non-finite vertices");
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&ix| ix as usize >= n) {
                return domain(format!("face {i} references a vertex out of range"));
            }
            let [a, b, c] = f.map(|ix| vertices[ix as usize]);
            if (b - a).cross(&(c - a)).norm() * 0.5 <= MIN_TRIANGLE_AREA {
                return domain(format!("face {i} is degenerate"));
            }
        }
        Ok(Self { vertices, faces, normals: None })
    }

    /// Builds a mesh, silently dropping degenerate faces.
    pub fn new_filtered(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let keep = faces
            .into_iter()
            .filter(|f| {
                f.iter().all(|&i| (i as usize) < vertices.len()) && {
                    let [a, b, c] = f.map(|ix| vertices[ix as usize]);
                    (b - a).cross(&(c - a)).norm() * 0.5 > MIN_TRIANGLE_AREA
                }
            })
            .collect();
        Self::new(vertices, keep)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return domain("normal count must match vertex count");
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    }

    /// True when every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    /// Signed enclosed volume (positive for outward-facing triangles).
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn transformed(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self { vertices: self.vertices.iter().map(f).collect(), faces: self.faces.clone(), normals: None }
    }

    /// Icosahedron subdivided `level` times and projected onto the sphere
    /// (`20 * 4^level` faces, outward orientation).
    pub fn icosphere(center: Vector3<f64>, radius: f64, level: u32) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| Vector3::from(*v).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                    (verts.len() - 1) as u32
                })
            };
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let normals = verts.clone();
        let vertices = verts.iter().map(|v| center + v * radius).collect();
        Self { vertices, faces, normals: Some(normals) }
    }

    /// Latitude/longitude sphere with its poles on the z axis.
    pub fn uv_sphere(center: Vector3<f64>, radius: f64, stacks: u32, slices: u32) -> Self {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut verts = vec![Vector3::new(0.0, 0.0, -1.0)];
        for i in 1..stacks {
            let phi = PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let th = 2.0 * PI * j as f64 / slices as f64;
                verts.push(Vector3::new(phi.sin() * th.cos(), phi.sin() * th.sin(), -phi.cos()));
            }
        }
        verts.push(Vector3::new(0.0, 0.0, 1.0));
        let top = (verts.len() - 1) as u32;
        let ring = |i: u32, j: u32| 1 + (i - 1) * slices + (j % slices);
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j + 1), ring(1, j)]);
            faces.push([top, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        let normals = verts.clone();
        let vertices = verts.iter().map(|v| center + v * radius).collect();
        Self { vertices, faces, normals: Some(normals) }
    }

    /// Axis-aligned box, two triangles per face, outward orientation.
    pub fn cuboid(center: Vector3<f64>, half: Vector3<f64>) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            vertices.push(center + half.component_mul(&s));
        }
        let faces = vec![
            [0, 2, 3],
            [0, 3, 1], // -z
            [4, 5, 7],
            [4, 7, 6], // +z
            [0, 1, 5],
            [0, 5, 4], // -y
            [2, 6, 7],
            [2, 7, 3], // +y
            [0, 4, 6],
            [0, 6, 2], // -x
            [1, 3, 7],
            [1, 7, 5], // +x
        ];
        Self { vertices, faces, normals: None }
    }

    /// Torus around the z axis.
    pub fn torus(center: Vector3<f64>, major: f64, minor: f64, rings: u32, sides: u32) -> Self {
        let (rings, sides) = (rings.max(3), sides.max(3));
        let mut vertices = Vec::with_capacity((rings * sides) as usize);
        for i in 0..rings {
            let u = 2.0 * PI * i as f64 / rings as f64;
            for j in 0..sides {
                let v = 2.0 * PI * j as f64 / sides as f64;
                let r = major + minor * v.cos();
                vertices.push(center + Vector3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
            }
        }
        let idx = |i: u32, j: u32| (i % rings) * sides + (j % sides);
        let mut faces = Vec::new();
        for i in 0..rings {
            for j in 0..sides {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        Self { vertices, faces, normals: None }
    }

    /// Square of side `2 * half` in the plane z = `z`, facing -z (toward a camera at the origin).
    pub fn quad(z: f64, half: f64) -> Self {
        let vertices = vec![
            Vector3::new(-half, -half, z),
            Vector3::new(half, -half, z),
            Vector3::new(half, half, z),
            Vector3::new(-half, half, z),
        ];
        Self { vertices, faces: vec![[0, 2, 1], [0, 3, 2]], normals: None }
    }

    /// Rotated copy about `pivot`.
    pub fn rotated(&self, axis: Vector3<f64>, angle: f64, pivot: Vector3<f64>) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        self.transformed(|v| pivot + r * (v - pivot))
    }

    pub fn merged(&self, other: &TriangleMesh) -> Self {
        let off = self.vertices.len() as u32;
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|i| i + off)));
        Self { vertices, faces, normals: None }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        match ext.as_str() {
            "ply" => parse_ply(&bytes),
            "obj" => parse_obj(std::str::from_utf8(&bytes).map_err(|_| Error::Format("OBJ is not UTF-8".into()))?),
            other => format(format!("unsupported mesh extension '{other}'")),
        }
    }

    /// Binary little-endian PLY with float positions and int index lists.
    pub fn to_ply_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.faces.len()
        )
        .into_bytes();
        for v in &self.vertices {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        for f in &self.faces {
            out.push(3);
            for &i in f {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        out
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ply_bytes())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return format(format!("PLY: unknown scalar type '{s}'")),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8], big: bool) -> f64 {
        macro_rules! rd {
            ($t:ty) => {{
                let a = b[..std::mem::size_of::<$t>()].try_into().unwrap();
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16),
            Self::U16 => rd!(u16),
            Self::I32 => rd!(i32),
            Self::U32 => rd!(u32),
            Self::F32 => rd!(f32),
            Self::F64 => rd!(f64),
        }
    }
}

#[derive(Debug)]
enum PlyProp {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

/// Parses ASCII or binary PLY (positions and faces only; polygons are fan-triangulated).
pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let end = b"end_header";
    let hpos = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| Error::Format("PLY: missing end_header".into()))?;
    let mut body_start = hpos + end.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..hpos]).map_err(|_| Error::Format("PLY: header not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return format("PLY: bad magic");
    }
    let mut fmt = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _] => fmt = Some(f.to_string()),
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Format("PLY: bad element count".into()))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("PLY: property before element".into()))?
                .props
                .push(PlyProp::List(name.to_string(), PlyScalar::parse(ct)?, PlyScalar::parse(it)?)),
            ["property", t, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("PLY: property before element".into()))?
                .props
                .push(PlyProp::Scalar(name.to_string(), PlyScalar::parse(t)?)),
            _ => {}
        }
    }
    let fmt = fmt.ok_or_else(|| Error::Format("PLY: missing format line".into()))?;
    let body = bytes.get(body_start..).unwrap_or(&[]);

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let emit_face = |idx: &[f64], faces: &mut Vec<[u32; 3]>| {
        for k in 1..idx.len().saturating_sub(1) {
            faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
        }
    };

    if fmt == "ascii" {
        let text = std::str::from_utf8(body).map_err(|_| Error::Format("PLY: body not UTF-8".into()))?;
        let mut toks = text.split_whitespace().map(|t| {
            t.parse::<f64>().map_err(|_| Error::Format(format!("PLY: bad number '{t}'")))
        });
        let mut next = || toks.next().unwrap_or_else(|| format("PLY: truncated body"));
        for el in &elements {
            for _ in 0..el.count {
                let mut pos = [0.0; 3];
                let mut list = Vec::new();
                for p in &el.props {
                    match p {
                        PlyProp::Scalar(name, _) => {
                            let x = next()?;
                            if let Some(a) = ["x", "y", "z"].iter().position(|n| n == name) {
                                pos[a] = x;
                            }
                        }
                        PlyProp::List(name, _, _) => {
                            let n = next()? as usize;
                            let vals = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                            if name == "vertex_indices" || name == "vertex_index" {
                                list = vals;
                            }
                        }
                    }
                }
                match el.name.as_str() {
                    "vertex" => vertices.push(Vector3::from(pos)),
                    "face" => emit_face(&list, &mut faces),
                    _ => {}
                }
            }
        }
    } else {
        let big = match fmt.as_str() {
            "binary_little_endian" => false,
            "binary_big_endian" => true,
            f => return format(format!("PLY: unknown format '{f}'")),
        };
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + n).ok_or_else(|| Error::Format("PLY: truncated body".into()))?;
            pos += n;
            Ok(s)
        };
        for el in &elements {
            for _ in 0..el.count {
                let mut p3 = [0.0; 3];
                let mut list = Vec::new();
                for p in &el.props {
                    match p {
                        PlyProp::Scalar(name, t) => {
                            let x = t.read(take(t.size())?, big);
                            if let Some(a) = ["x", "y", "z"].iter().position(|n| n == name) {
                                p3[a] = x;
                            }
                        }
                        PlyProp::List(name, ct, it) => {
                            let n = ct.read(take(ct.size())?, big) as usize;
                            let mut vals = Vec::with_capacity(n);
                            for _ in 0..n {
                                vals.push(it.read(take(it.size())?, big));
                            }
                            if name == "vertex_indices" || name == "vertex_index" {
                                list = vals;
                            }
                        }
                    }
                }
                match el.name.as_str() {
                    "vertex" => vertices.push(Vector3::from(p3)),
                    "face" => emit_face(&list, &mut faces),
                    _ => {}
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Parses `v` and `f` records of a Wavefront OBJ file.
pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse().map_err(|_| Error::Format(format!("OBJ line {}: bad vertex", ln + 1))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return format(format!("OBJ line {}: vertex needs 3 coordinates", ln + 1));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| Error::Format(format!("OBJ line {}: bad face index", ln + 1)))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 {
                            return format(format!("OBJ line {}: face index out of range", ln + 1));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                for k in 1..idx.len().saturating_sub(1) {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self { min: Vector3::repeat(f64::INFINITY), max: Vector3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    #[inline]
    fn ray_entry(&self, o: &Vector3<f64>, inv_d: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if !inv_d[a].is_finite() {
                // ray parallel to this slab
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let ta = (self.min[a] - o[a]) * inv_d[a];
            let tb = (self.max[a] - o[a]) * inv_d[a];
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    #[inline]
    fn dist2(&self, p: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = (self.min[a] - p[a]).max(0.0).max(p[a] - self.max[a]);
            d += v * v;
        }
        d
    }
}

#[derive(Clone, Debug)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf: first triangle slot; interior: index of the left child (right = left + 1).
    start: u32,
    /// Number of triangles for leaves, 0 for interior nodes.
    count: u32,
}

/// Which part of a triangle a closest point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Vertex(u32),
    Edge(u32, u32),
    Face,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestPoint {
    pub point: Vector3<f64>,
    pub dist2: f64,
    pub face: usize,
    pub feature: Feature,
}

/// Median-split bounding-volume hierarchy over a mesh's triangles.
pub struct Bvh<'m> {
    mesh: &'m TriangleMesh,
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl<'m> Bvh<'m> {
    pub fn build(mesh: &'m TriangleMesh) -> Self {
        let n = mesh.faces.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vector3<f64>> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut bvh = Self { mesh, nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1), order: Vec::new() };
        if n > 0 {
            bvh.nodes.push(BvhNode { bounds: Aabb::empty(), start: 0, count: 0 });
            bvh.split(0, &mut order, 0, n, &centroids);
        }
        bvh.order = order;
        bvh
    }

    fn split(&mut self, node: usize, order: &mut [u32], lo: usize, hi: usize, centroids: &[Vector3<f64>]) {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &order[lo..hi] {
            for v in self.mesh.triangle(f as usize) {
                bounds.grow(&v);
            }
            cbounds.grow(&centroids[f as usize]);
        }
        self.nodes[node].bounds = bounds;
        if hi - lo <= LEAF_SIZE {
            self.nodes[node].start = lo as u32;
            self.nodes[node].count = (hi - lo) as u32;
            return;
        }
        let ext = cbounds.max - cbounds.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
        let mid = (lo + hi) / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        let left = self.nodes.len();
        self.nodes.push(BvhNode { bounds: Aabb::empty(), start: 0, count: 0 });
        self.nodes.push(BvhNode { bounds: Aabb::empty(), start: 0, count: 0 });
        self.nodes[node].start = left as u32;
        self.nodes[node].count = 0;
        self.split(left, order, lo, mid, centroids);
        self.split(left + 1, order, mid, hi, centroids);
    }

    /// Nearest hit parameter `t > t_min` along `origin + t * dir` (dir need not be unit).
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let t_max = best.map_or(f64::INFINITY, |b| b.0);
            if node.bounds.ray_entry(origin, &inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some(t) = ray_triangle(origin, dir, &self.mesh.triangle(f as usize)) {
                        if t > t_min && best.is_none_or(|b| t < b.0) {
                            best = Some((t, f as usize));
                        }
                    }
                }
            } else {
                stack.push(node.start as usize);
                stack.push(node.start as usize + 1);
            }
        }
        best
    }

    pub fn closest_point(&self, p: &Vector3<f64>) -> Option<ClosestPoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestPoint> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let bound = best.map_or(f64::INFINITY, |b| b.dist2);
            if node.bounds.dist2(p) >= bound {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let f = f as usize;
                    let (q, feat) = closest_on_triangle(p, &self.mesh.triangle(f));
                    let d2 = (q - p).norm_squared();
                    if best.is_none_or(|b| d2 < b.dist2) {
                        let idx = self.mesh.faces[f];
                        let feature = match feat {
                            LocalFeature::Vertex(i) => Feature::Vertex(idx[i]),
                            LocalFeature::Edge(i, j) => Feature::Edge(idx[i], idx[j]),
                            LocalFeature::Face => Feature::Face,
                        };
                        best = Some(ClosestPoint { point: q, dist2: d2, face: f, feature });
                    }
                }
            } else {
                let (l, r) = (node.start as usize, node.start as usize + 1);
                let (dl, dr) = (self.nodes[l].bounds.dist2(p), self.nodes[r].bounds.dist2(p));
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

/// Moller-Trumbore; returns `t` for hits inside the (closed) triangle.
#[inline]
pub fn ray_triangle(o: &Vector3<f64>, d: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pv = d.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = o - tri[0];
    let u = tv.dot(&pv) * inv;
    const EPS: f64 = 1e-12;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = d.dot(&qv) * inv;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    Some(e2.dot(&qv) * inv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LocalFeature {
    Vertex(usize),
    Edge(usize, usize),
    Face,
}

/// Closest point on a triangle (Voronoi-region walk).
fn closest_on_triangle(p: &Vector3<f64>, t: &[Vector3<f64>; 3]) -> (Vector3<f64>, LocalFeature) {
    let (a, b, c) = (t[0], t[1], t[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, LocalFeature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, LocalFeature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, LocalFeature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, LocalFeature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, LocalFeature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, LocalFeature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, LocalFeature::Face)
}

/// Angle-weighted pseudo-normals for vertices, edges, and faces, used to
/// decide inside/outside from a closest point.
pub struct PseudoNormals {
    vertex: Vec<Vector3<f64>>,
    edge: HashMap<(u32, u32), Vector3<f64>>,
    face: Vec<Vector3<f64>>,
}

impl PseudoNormals {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let mut vertex = vec![Vector3::zeros(); mesh.vertices.len()];
        let mut edge: HashMap<(u32, u32), Vector3<f64>> = HashMap::new();
        let mut face = Vec::with_capacity(mesh.faces.len());
        for (fi, f) in mesh.faces.iter().enumerate() {
            let n = mesh.face_normal(fi);
            face.push(n);
            let tri = mesh.triangle(fi);
            for k in 0..3 {
                let e1 = (tri[(k + 1) % 3] - tri[k]).normalize();
                let e2 = (tri[(k + 2) % 3] - tri[k]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex[f[k] as usize] += n * angle;
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edge.entry((a.min(b), a.max(b))).or_insert_with(Vector3::zeros) += n;
            }
        }
        Self { vertex, edge, face }
    }

    pub fn normal(&self, cp: &ClosestPoint) -> Vector3<f64> {
        match cp.feature {
            Feature::Vertex(v) => self.vertex[v as usize],
            Feature::Edge(a, b) => self.edge.get(&(a.min(b), a.max(b))).copied().unwrap_or(self.face[cp.face]),
            Feature::Face => self.face[cp.face],
        }
    }
}
