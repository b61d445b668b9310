//! Unsupervised over-segmentation by normal-based region growing.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Point3, Vector3};

use crate::mesh::TriangleMesh;
use crate::{is_class, ClassId, UNLABELED};

pub const DEFAULT_NORMAL_THRESHOLD: f64 = 0.26;
pub const DEFAULT_MIN_FACES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub centroid: Point3<f64>,
    /// `None` when the area-weighted normals cancel out.
    pub mean_normal: Option<Vector3<f64>>,
    pub area: f64,
    /// Area-dominant face label; UNLABELED if no face carries a class.
    pub dominant_label: ClassId,
    pub face_count: usize,
}

/// Partition of the faces into edge-connected segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Segment id per face.
    pub face_segment: Vec<u32>,
    pub segments: Vec<SegmentSummary>,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Face ids per segment, ascending.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.segments.len()];
        for (f, &s) in self.face_segment.iter().enumerate() {
            out[s as usize].push(f as u32);
        }
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges `b` into `a`'s set; the smaller root id stays the representative.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop] = keep;
        keep
    }
}

/// Greedy region growing over shared-edge face adjacency.
///
/// Seeds are taken in ascending face order. A neighbor joins the growing
/// region when its normal is within `normal_threshold` radians of the seed
/// face normal. Regions with fewer than `min_faces` faces are then merged
/// into the adjacent region whose mean normal is most similar. Degenerate
/// faces never seed and attach to their lowest-numbered grown neighbor.
pub fn oversegment(mesh: &TriangleMesh, normal_threshold: f64, min_faces: usize) -> Segmentation {
    let nf = mesh.face_count();
    if nf == 0 {
        return Segmentation {
            face_segment: Vec::new(),
            segments: Vec::new(),
        };
    }
    let adj = mesh.face_adjacency();
    let normals = mesh.face_normals();
    let cos_threshold = normal_threshold.cos();

    const NONE: u32 = u32::MAX;
    let mut region = vec![NONE; nf];
    let mut region_count = 0u32;
    let mut queue = VecDeque::new();
    for seed in 0..nf {
        if region[seed] != NONE {
            continue;
        }
        let Some(seed_normal) = normals[seed] else {
            continue;
        };
        let id = region_count;
        region_count += 1;
        region[seed] = id;
        queue.push_back(seed);
        while let Some(f) = queue.pop_front() {
            for &nb in adj.neighbors(f) {
                let nb = nb as usize;
                if region[nb] != NONE {
                    continue;
                }
                if let Some(n) = normals[nb] {
                    if n.dot(&seed_normal) > cos_threshold {
                        region[nb] = id;
                        queue.push_back(nb);
                    }
                }
            }
        }
    }

    // Degenerate faces: attach to a grown neighbor, propagating until stable.
    loop {
        let mut changed = false;
        for f in 0..nf {
            if region[f] != NONE {
                continue;
            }
            if let Some(&nb) = adj
                .neighbors(f)
                .iter()
                .filter(|&&nb| region[nb as usize] != NONE)
                .min()
            {
                region[f] = region[nb as usize];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for r in region.iter_mut() {
        if *r == NONE {
            *r = region_count;
            region_count += 1;
        }
    }

    // Small-region merging.
    let nr = region_count as usize;
    let mut uf = UnionFind::new(nr);
    let mut sizes = vec![0usize; nr];
    let mut normal_sum = vec![Vector3::<f64>::zeros(); nr];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nr];
    for (f, &r) in region.iter().enumerate() {
        let r = r as usize;
        sizes[r] += 1;
        normal_sum[r] += mesh.face_cross(f);
        members[r].push(f);
    }
    loop {
        let mut merged_any = false;
        for r in 0..nr {
            if uf.find(r) != r || sizes[r] >= min_faces {
                continue;
            }
            // Neighboring region roots.
            let mut best: Option<(f64, usize)> = None;
            let my_normal = normal_sum[r].try_normalize(1e-300);
            for &f in &members[r] {
                for &nb in adj.neighbors(f) {
                    let other = uf.find(region[nb as usize] as usize);
                    if other == r {
                        continue;
                    }
                    let sim = match (my_normal, normal_sum[other].try_normalize(1e-300)) {
                        (Some(a), Some(b)) => a.dot(&b),
                        _ => -2.0,
                    };
                    let better = match best {
                        None => true,
                        Some((s, o)) => sim > s || (sim == s && other < o),
                    };
                    if better {
                        best = Some((sim, other));
                    }
                }
            }
            if let Some((_, other)) = best {
                let keep = uf.union(r, other);
                let drop = if keep == r { other } else { r };
                sizes[keep] += sizes[drop];
                normal_sum[keep] = normal_sum[keep] + normal_sum[drop];
                let moved = std::mem::take(&mut members[drop]);
                members[keep].extend(moved);
                merged_any = true;
            }
        }
        if !merged_any {
            break;
        }
    }

    // Relabel in order of first appearance by face index.
    let mut remap: BTreeMap<usize, u32> = BTreeMap::new();
    let mut face_segment = Vec::with_capacity(nf);
    for &r in &region {
        let root = uf.find(r as usize);
        let next = remap.len() as u32;
        face_segment.push(*remap.entry(root).or_insert(next));
    }
    let segments = summarize(mesh, &face_segment, remap.len());
    Segmentation {
        face_segment,
        segments,
    }
}

fn summarize(mesh: &TriangleMesh, face_segment: &[u32], count: usize) -> Vec<SegmentSummary> {
    let mut area = vec![0.0; count];
    let mut weighted_centroid = vec![Vector3::<f64>::zeros(); count];
    let mut plain_centroid = vec![Vector3::<f64>::zeros(); count];
    let mut normal = vec![Vector3::<f64>::zeros(); count];
    let mut faces = vec![0usize; count];
    let mut label_area: Vec<BTreeMap<ClassId, f64>> = vec![BTreeMap::new(); count];
    for (f, &s) in face_segment.iter().enumerate() {
        let s = s as usize;
        let cross = mesh.face_cross(f);
        let a = 0.5 * cross.norm();
        let c = mesh.face_centroid(f).coords;
        area[s] += a;
        weighted_centroid[s] += c * a;
        plain_centroid[s] += c;
        normal[s] += cross;
        faces[s] += 1;
        let l = mesh.face_label(f);
        if is_class(l) {
            *label_area[s].entry(l).or_insert(0.0) += a;
        }
    }
    (0..count)
        .map(|s| {
            let centroid = if area[s] > 0.0 {
                weighted_centroid[s] / area[s]
            } else {
                plain_centroid[s] / faces[s] as f64
            };
            let mut dominant = UNLABELED;
            let mut best = f64::NEG_INFINITY;
            for (&l, &a) in &label_area[s] {
                if a > best {
                    best = a;
                    dominant = l;
                }
            }
            SegmentSummary {
                centroid: Point3::from(centroid),
                mean_normal: normal[s].try_normalize(1e-12),
                area: area[s],
                dominant_label: dominant,
                face_count: faces[s],
            }
        })
        .collect()
}
