//! Triangle mesh storage and derived geometry.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use crate::{is_class, ClassId, Error, Result, UNLABELED};

/// Faces with twice-area below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle mesh with per-vertex attributes.
///
/// Attributes are stored as parallel arrays indexed by vertex id. `normals`
/// stays empty until [`TriangleMesh::compute_vertex_normals`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Point3<f32>>,
    pub normals: Vec<Vector3<f64>>,
    /// RGB in [0, 1].
    pub colors: Vec<[f32; 3]>,
    pub labels: Vec<ClassId>,
    /// Counter-clockwise winding is the front face.
    pub faces: Vec<[u32; 3]>,
    pub class_count: usize,
}

/// Outcome of normal computation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalReport {
    /// Vertices without any non-degenerate incident face (normal forced to +Z).
    pub isolated: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBounds {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl SceneBounds {
    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Maps a point into [0, 1]^3 relative to the box. Flat axes map to 0.
    pub fn normalize(&self, p: &Point3<f64>) -> [f32; 3] {
        let ext = self.extent();
        let mut out = [0.0f32; 3];
        for i in 0..3 {
            if ext[i] > 0.0 {
                out[i] = ((p[i] - self.min[i]) / ext[i]).clamp(0.0, 1.0) as f32;
            }
        }
        out
    }
}

/// Shared-edge face adjacency in compressed row form.
#[derive(Debug, Clone)]
pub struct FaceAdjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl FaceAdjacency {
    pub fn neighbors(&self, face: usize) -> &[u32] {
        &self.neighbors[self.offsets[face]..self.offsets[face + 1]]
    }

    pub fn face_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

impl TriangleMesh {
    /// Builds a mesh and validates face indices and labels.
    pub fn new(
        positions: Vec<Point3<f32>>,
        colors: Vec<[f32; 3]>,
        labels: Vec<ClassId>,
        faces: Vec<[u32; 3]>,
        class_count: usize,
    ) -> Result<Self> {
        let mesh = Self {
            positions,
            normals: Vec::new(),
            colors,
            labels,
            faces,
            class_count,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty(class_count: usize) -> Self {
        Self {
            positions: Vec::new(),
            normals: Vec::new(),
            colors: Vec::new(),
            labels: Vec::new(),
            faces: Vec::new(),
            class_count,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.len() == self.positions.len()
    }

    pub fn position(&self, v: u32) -> Point3<f64> {
        self.positions[v as usize].cast()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n || self.labels.len() != n {
            return Err(Error::Validation(format!(
                "attribute lengths differ: {} positions, {} colors, {} labels",
                n,
                self.colors.len(),
                self.labels.len()
            )));
        }
        if !self.normals.is_empty() && self.normals.len() != n {
            return Err(Error::Validation("normal count differs from vertex count".into()));
        }
        if self.class_count == 0 || self.class_count > crate::MAX_CLASSES {
            return Err(Error::Validation(format!(
                "class count {} out of range",
                self.class_count
            )));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v as usize >= n {
                    return Err(Error::Validation(format!(
                        "face {fi} references vertex {v} but the mesh has {n} vertices"
                    )));
                }
            }
        }
        for (vi, &l) in self.labels.iter().enumerate() {
            if l != UNLABELED && (!is_class(l) || l as usize >= self.class_count) {
                return Err(Error::Validation(format!(
                    "vertex {vi} has label {l} outside [0, {})",
                    self.class_count
                )));
            }
        }
        Ok(())
    }

    /// Sets the class count, checking that every label fits.
    pub fn set_class_count(&mut self, class_count: usize) -> Result<()> {
        let old = self.class_count;
        self.class_count = class_count;
        if let Err(e) = self.validate() {
            self.class_count = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn face_positions(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [self.position(a), self.position(b), self.position(c)]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_positions(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn is_degenerate(&self, f: usize) -> bool {
        self.face_cross(f).norm() < DEGENERATE_AREA
    }

    /// Unit face normal, `None` for degenerate faces.
    pub fn face_normal(&self, f: usize) -> Option<Vector3<f64>> {
        let n = self.face_cross(f);
        let len = n.norm();
        (len >= DEGENERATE_AREA).then(|| n / len)
    }

    pub fn face_normals(&self) -> Vec<Option<Vector3<f64>>> {
        (0..self.faces.len()).map(|f| self.face_normal(f)).collect()
    }

    pub fn face_centroid(&self, f: usize) -> Point3<f64> {
        let [a, b, c] = self.face_positions(f);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Area-weighted vertex normals. Degenerate faces do not contribute.
    pub fn compute_vertex_normals(&mut self) -> NormalReport {
        let mut acc = vec![Vector3::<f64>::zeros(); self.positions.len()];
        for f in 0..self.faces.len() {
            let n = self.face_cross(f);
            if n.norm() < DEGENERATE_AREA {
                continue;
            }
            for &v in &self.faces[f] {
                acc[v as usize] += n;
            }
        }
        let mut report = NormalReport::default();
        self.normals = acc
            .into_iter()
            .enumerate()
            .map(|(v, n)| {
                let len = n.norm();
                if len < DEGENERATE_AREA {
                    report.isolated.push(v as u32);
                    Vector3::z()
                } else {
                    n / len
                }
            })
            .collect();
        report
    }

    pub fn face_adjacency(&self) -> FaceAdjacency {
        let mut edges: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a == b {
                    continue;
                }
                let key = (a.min(b), a.max(b));
                edges.entry(key).or_default().push(fi as u32);
            }
        }
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); self.faces.len()];
        for faces in edges.values() {
            for (i, &fa) in faces.iter().enumerate() {
                for &fb in &faces[i + 1..] {
                    if fa != fb {
                        lists[fa as usize].push(fb);
                        lists[fb as usize].push(fa);
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            neighbors.extend(l);
            offsets.push(neighbors.len());
        }
        FaceAdjacency { offsets, neighbors }
    }

    /// Per-vertex list of incident face ids.
    pub fn vertex_faces(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.positions.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if out[v as usize].last() != Some(&(fi as u32)) {
                    out[v as usize].push(fi as u32);
                }
            }
        }
        out
    }

    /// Majority label of the face's three vertices; ties go to the smallest id.
    pub fn face_label(&self, f: usize) -> ClassId {
        let mut ls = self.faces[f].map(|v| self.labels[v as usize]);
        ls.sort_unstable();
        if ls[1] == ls[2] {
            ls[1]
        } else {
            // ls[0] == ls[1] or all distinct: smallest wins either way.
            ls[0]
        }
    }

    pub fn scene_bounds(&self) -> Result<SceneBounds> {
        scene_bounds(self)
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.positions.len() as u32;
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        self.labels.extend_from_slice(&other.labels);
        if self.has_normals() && other.has_normals() {
            self.normals.extend_from_slice(&other.normals);
        } else {
            self.normals.clear();
        }
        self.faces
            .extend(other.faces.iter().map(|f| f.map(|v| v + base)));
        self.class_count = self.class_count.max(other.class_count);
    }
}

/// Tight axis-aligned box around all vertices.
pub fn scene_bounds(mesh: &TriangleMesh) -> Result<SceneBounds> {
    let mut it = mesh.positions.iter();
    let first: Point3<f64> = it.next().ok_or(Error::EmptyMesh)?.cast();
    let (mut min, mut max) = (first, first);
    for p in it {
        let p: Point3<f64> = p.cast();
        for i in 0..3 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    }
    Ok(SceneBounds { min, max })
}
