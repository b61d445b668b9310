//! Procedural test scenes: axis-aligned lattice rooms and random prism rooms.
//!
//! All generated meshes are edge-conforming: neighboring surfaces share
//! their seam vertices, so the rasterized surface has no cracks.

use std::collections::HashMap;
use std::f64::consts::TAU;

use nalgebra::{Point2, Point3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::TriangleMesh;
use crate::ClassId;

pub const ROOM_CLASS_NAMES: [&str; 9] = [
    "floor", "ceiling", "wall_west", "wall_east", "wall_south", "wall_north", "column_a",
    "column_b", "column_c",
];

/// Flat color per class, used for the color channel of generated scenes.
pub fn class_color(label: ClassId) -> [f32; 3] {
    crate::fusion::palette_color(label).map(|c| c as f32 / 255.0)
}

/// Builds meshes on an integer lattice with per-axis step, deduplicating
/// vertices by lattice coordinate. The first label written to a vertex sticks.
struct Lattice {
    step: [f64; 3],
    index: HashMap<[i64; 3], u32>,
    positions: Vec<Point3<f32>>,
    labels: Vec<ClassId>,
    faces: Vec<[u32; 3]>,
}

impl Lattice {
    fn new(step: [f64; 3]) -> Self {
        Self {
            step,
            index: HashMap::new(),
            positions: Vec::new(),
            labels: Vec::new(),
            faces: Vec::new(),
        }
    }

    fn vertex(&mut self, ijk: [i64; 3], label: ClassId) -> u32 {
        if let Some(&v) = self.index.get(&ijk) {
            return v;
        }
        let v = self.positions.len() as u32;
        self.positions.push(Point3::new(
            (ijk[0] as f64 * self.step[0]) as f32,
            (ijk[1] as f64 * self.step[1]) as f32,
            (ijk[2] as f64 * self.step[2]) as f32,
        ));
        self.labels.push(label);
        self.index.insert(ijk, v);
        v
    }

    /// Grid of cells on the plane `axis = level`. `(u, v)` are the next two
    /// axes in cyclic order; `outward_positive` selects a normal along +axis.
    #[allow(clippy::too_many_arguments)]
    fn rect(
        &mut self,
        axis: usize,
        level: i64,
        u_range: (i64, i64),
        v_range: (i64, i64),
        positive: bool,
        label: ClassId,
        skip: impl Fn(i64, i64) -> bool,
    ) {
        let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
        let at = |u: i64, v: i64| {
            let mut c = [0i64; 3];
            c[axis] = level;
            c[ua] = u;
            c[va] = v;
            c
        };
        for u in u_range.0..u_range.1 {
            for v in v_range.0..v_range.1 {
                if skip(u, v) {
                    continue;
                }
                let a = self.vertex(at(u, v), label);
                let b = self.vertex(at(u + 1, v), label);
                let c = self.vertex(at(u + 1, v + 1), label);
                let d = self.vertex(at(u, v + 1), label);
                if positive {
                    self.faces.push([a, b, c]);
                    self.faces.push([a, c, d]);
                } else {
                    self.faces.push([a, c, b]);
                    self.faces.push([a, d, c]);
                }
            }
        }
    }

    fn finish(self, class_count: usize) -> TriangleMesh {
        let colors = self.labels.iter().map(|&l| class_color(l)).collect();
        TriangleMesh::new(self.positions, colors, self.labels, self.faces, class_count)
            .expect("lattice mesh is valid")
    }
}

fn lattice_counts(dims: [f64; 3], spacing: f64) -> ([i64; 3], [f64; 3]) {
    let mut n = [1i64; 3];
    let mut step = [1.0; 3];
    for i in 0..3 {
        n[i] = ((dims[i] / spacing).round() as i64).max(1);
        step[i] = dims[i] / n[i] as f64;
    }
    (n, step)
}

/// Adds the six sides of the lattice box `[0, n]`. Labels in order
/// floor, ceiling, x = 0, x = max, y = 0, y = max.
fn box_sides(l: &mut Lattice, n: [i64; 3], inward: bool, labels: [ClassId; 6], hole: impl Fn(i64, i64) -> bool + Copy) {
    let [nx, ny, nz] = n;
    // z planes: u = x, v = y.
    l.rect(2, 0, (0, nx), (0, ny), inward, labels[0], hole);
    l.rect(2, nz, (0, nx), (0, ny), !inward, labels[1], hole);
    // x planes: u = y, v = z.
    l.rect(0, 0, (0, ny), (0, nz), inward, labels[2], |_, _| false);
    l.rect(0, nx, (0, ny), (0, nz), !inward, labels[3], |_, _| false);
    // y planes: u = z, v = x.
    l.rect(1, 0, (0, nz), (0, nx), inward, labels[4], |_, _| false);
    l.rect(1, ny, (0, nz), (0, nx), !inward, labels[5], |_, _| false);
}

/// Unit cube `[0, 1]^3` with outward-facing triangles. Each side is a fan
/// of four triangles around a center vertex, so every corner touches equal
/// area on its three sides.
pub fn unit_cube() -> TriangleMesh {
    let mut l = Lattice::new([0.5; 3]);
    for axis in 0..3 {
        let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
        for (level, positive) in [(0i64, false), (2, true)] {
            let at = |u: i64, v: i64| {
                let mut c = [0i64; 3];
                c[axis] = level;
                c[ua] = u;
                c[va] = v;
                c
            };
            let center = l.vertex(at(1, 1), 0);
            let ring = [at(0, 0), at(2, 0), at(2, 2), at(0, 2)].map(|c| l.vertex(c, 0));
            for i in 0..4 {
                let (a, b) = (ring[i], ring[(i + 1) % 4]);
                l.faces.push(if positive { [center, a, b] } else { [center, b, a] });
            }
        }
    }
    l.finish(1)
}

/// Closed axis-aligned room `[0, dims]` seen from inside, walls gridded at
/// roughly `spacing`. Labels follow [`ROOM_CLASS_NAMES`] order for the six sides.
pub fn box_room(dims: [f64; 3], spacing: f64) -> TriangleMesh {
    let (n, step) = lattice_counts(dims, spacing);
    let mut l = Lattice::new(step);
    box_sides(&mut l, n, true, [0, 1, 2, 3, 4, 5], |_, _| false);
    l.finish(6)
}

/// Footprints of the floor-to-ceiling columns of [`labeled_room`], in meters.
pub const ROOM_COLUMNS: [([f64; 2], [f64; 2]); 3] = [
    ([1.0, 1.0], [1.5, 1.5]),
    ([3.25, 0.75], [3.75, 1.5]),
    ([2.0, 2.5], [2.75, 3.0]),
];

pub const ROOM_DIMS: [f64; 3] = [5.0, 4.0, 2.5];
pub const ROOM_SPACING: f64 = 0.25;

/// Labeled closed room with six surface classes and three box columns.
///
/// The columns run from floor to ceiling; their corner edges are shared with
/// the floor and ceiling grids, whose cells under the footprints are removed.
pub fn labeled_room() -> TriangleMesh {
    let (n, step) = lattice_counts(ROOM_DIMS, ROOM_SPACING);
    let cells: Vec<([i64; 2], [i64; 2])> = ROOM_COLUMNS
        .iter()
        .map(|(lo, hi)| {
            let c = |x: f64, i: usize| (x / step[i]).round() as i64;
            ([c(lo[0], 0), c(lo[1], 1)], [c(hi[0], 0), c(hi[1], 1)])
        })
        .collect();
    let in_column = {
        let cells = cells.clone();
        move |u: i64, v: i64| cells.iter().any(|(lo, hi)| u >= lo[0] && u < hi[0] && v >= lo[1] && v < hi[1])
    };
    let mut l = Lattice::new(step);
    box_sides(&mut l, n, true, [0, 1, 2, 3, 4, 5], &in_column);
    let nz = n[2];
    for (k, (lo, hi)) in cells.iter().enumerate() {
        let label = 6 + k as ClassId;
        l.rect(0, lo[0], (lo[1], hi[1]), (0, nz), false, label, |_, _| false);
        l.rect(0, hi[0], (lo[1], hi[1]), (0, nz), true, label, |_, _| false);
        l.rect(1, lo[1], (0, nz), (lo[0], hi[0]), false, label, |_, _| false);
        l.rect(1, hi[1], (0, nz), (lo[0], hi[0]), true, label, |_, _| false);
    }
    let mut mesh = l.finish(ROOM_CLASS_NAMES.len());
    mesh.compute_vertex_normals();
    mesh
}

/// True when a point lies strictly inside one of the room columns, grown by `margin`.
pub fn inside_column(p: &Point3<f64>, margin: f64) -> bool {
    ROOM_COLUMNS.iter().any(|(lo, hi)| {
        p.x > lo[0] - margin && p.x < hi[0] + margin && p.y > lo[1] - margin && p.y < hi[1] + margin
    })
}

/// Convex prism room with pillars, for randomized geometry tests.
#[derive(Debug, Clone)]
pub struct RandomRoom {
    pub mesh: TriangleMesh,
    /// Counter-clockwise footprint corners.
    pub footprint: Vec<Point2<f64>>,
    pub center: Point2<f64>,
    pub height: f64,
    /// Pillar centers and circumradii.
    pub pillars: Vec<(Point2<f64>, f64)>,
}

pub const RANDOM_ROOM_CLASSES: usize = 6;

impl RandomRoom {
    /// Distance from the footprint center to its nearest edge.
    pub fn inradius(&self) -> f64 {
        edge_distance(&self.footprint, &self.center)
    }

    /// A random eye point inside the room, clear of walls, floor, ceiling and pillars.
    pub fn random_eye(&self, rng: &mut impl Rng) -> Point3<f64> {
        let r = self.inradius();
        loop {
            let a = rng.gen_range(0.0..TAU);
            let d = r * rng.gen_range(0.0f64..0.85).sqrt();
            let p = self.center + Vector2::new(a.cos(), a.sin()) * d;
            if self.pillars.iter().any(|(c, pr)| (p - c).norm() < pr + 0.25) {
                continue;
            }
            let z = rng.gen_range(0.25..self.height - 0.25);
            return Point3::new(p.x, p.y, z);
        }
    }

    /// A random look-at target inside the room.
    pub fn random_target(&self, rng: &mut impl Rng) -> Point3<f64> {
        let r = self.inradius();
        let a = rng.gen_range(0.0..TAU);
        let d = r * rng.gen_range(0.0f64..1.0).sqrt();
        let p = self.center + Vector2::new(a.cos(), a.sin()) * d;
        Point3::new(p.x, p.y, rng.gen_range(0.0..self.height))
    }
}

fn edge_distance(poly: &[Point2<f64>], p: &Point2<f64>) -> f64 {
    (0..poly.len())
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let e = (b - a).normalize();
            let d = p - a;
            (e.x * d.y - e.y * d.x).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random convex prism room with one to three pillars, at most 500 triangles.
pub fn random_room(seed: u64) -> RandomRoom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sides = rng.gen_range(4..=7usize);
    let (footprint, center) = loop {
        let mut angles: Vec<f64> = (0..sides).map(|_| rng.gen_range(0.0..TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let radius = rng.gen_range(2.0..3.5);
        let aspect = rng.gen_range(0.7..1.3);
        let poly: Vec<Point2<f64>> = angles
            .iter()
            .map(|a| Point2::new(radius * aspect * a.cos(), radius / aspect * a.sin()))
            .collect();
        let c = Point2::from(poly.iter().map(|p| p.coords).sum::<Vector2<f64>>() / sides as f64);
        let min_edge = (0..sides).map(|i| (poly[(i + 1) % sides] - poly[i]).norm()).fold(f64::INFINITY, f64::min);
        if edge_distance(&poly, &c) > 1.2 && min_edge > 0.5 {
            break (poly, c);
        }
    };
    let height = rng.gen_range(2.2..3.5);
    let per_side = rng.gen_range(2..=3usize);
    let rings = rng.gen_range(2..=3usize);
    let wall_rows = rng.gen_range(2..=3usize);

    let outer: Vec<Point2<f64>> = (0..sides)
        .flat_map(|s| {
            let a = footprint[s];
            let b = footprint[(s + 1) % sides];
            (0..per_side).map(move |t| a + (b - a) * (t as f64 / per_side as f64))
        })
        .collect();
    let m = outer.len();

    let mut positions: Vec<Point3<f32>> = Vec::new();
    let mut labels: Vec<ClassId> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut push = |p: Point3<f64>, l: ClassId, positions: &mut Vec<Point3<f32>>| {
        positions.push(p.cast());
        labels.push(l);
        positions.len() as u32 - 1
    };

    // Floor and ceiling share xy layout; interior rings get radial jitter.
    let mut ring_scale = vec![vec![0.0; m]; rings + 1];
    for (r, row) in ring_scale.iter_mut().enumerate().skip(1) {
        for s in row.iter_mut() {
            let base = r as f64 / rings as f64;
            *s = if r == rings {
                1.0
            } else {
                base + rng.gen_range(-0.3..0.3) / rings as f64
            };
        }
    }
    let mut cap = |z: f64, label: ClassId, up: bool, positions: &mut Vec<Point3<f32>>, faces: &mut Vec<[u32; 3]>| {
        let c = push(Point3::new(center.x, center.y, z), label, positions);
        let mut prev: Vec<u32> = vec![c; m];
        let mut outer_ids = Vec::new();
        for (r, scales) in ring_scale.iter().enumerate().skip(1) {
            let ids: Vec<u32> = (0..m)
                .map(|i| {
                    let p = center + (outer[i] - center) * scales[i];
                    push(Point3::new(p.x, p.y, z), label, positions)
                })
                .collect();
            for i in 0..m {
                let j = (i + 1) % m;
                let tris = if r == 1 {
                    vec![[c, ids[i], ids[j]]]
                } else {
                    vec![[prev[i], ids[i], ids[j]], [prev[i], ids[j], prev[j]]]
                };
                for t in tris {
                    faces.push(if up { t } else { [t[0], t[2], t[1]] });
                }
            }
            prev = ids.clone();
            outer_ids = ids;
        }
        outer_ids
    };
    let floor_ring = cap(0.0, 0, true, &mut positions, &mut faces);
    let ceiling_ring = cap(height, 1, false, &mut positions, &mut faces);

    // Walls, bottom and top rows shared with the floor and ceiling rings.
    let mut grid: Vec<Vec<u32>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut col = vec![floor_ring[i]];
        for k in 1..wall_rows {
            let z = height * k as f64 / wall_rows as f64;
            col.push(push(Point3::new(outer[i].x, outer[i].y, z), 2, &mut positions));
        }
        col.push(ceiling_ring[i]);
        grid.push(col);
    }
    for i in 0..m {
        let j = (i + 1) % m;
        for k in 0..wall_rows {
            let (a, b, c, d) = (grid[i][k], grid[i][k + 1], grid[j][k + 1], grid[j][k]);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }

    // Pillars: convex k-gons from floor to ceiling, vertices only at the ends.
    let inradius = edge_distance(&footprint, &center);
    let mut pillars: Vec<(Point2<f64>, f64)> = Vec::new();
    let count = rng.gen_range(1..=3usize);
    let mut attempts = 0;
    while pillars.len() < count && attempts < 200 {
        attempts += 1;
        let pr = rng.gen_range(0.15..0.4);
        let a = rng.gen_range(0.0..TAU);
        let d = rng.gen_range(0.0..(inradius - pr - 0.3).max(0.0));
        let pc = center + Vector2::new(a.cos(), a.sin()) * d;
        if pillars.iter().any(|(c, r)| (pc - c).norm() < pr + r + 0.4) {
            continue;
        }
        let k = rng.gen_range(3..=5usize);
        let phase = rng.gen_range(0.0..TAU);
        let label = 3 + pillars.len() as ClassId;
        let ring: Vec<(u32, u32)> = (0..k)
            .map(|j| {
                let t = phase + TAU * j as f64 / k as f64;
                let p = pc + Vector2::new(t.cos(), t.sin()) * pr;
                (
                    push(Point3::new(p.x, p.y, 0.0), label, &mut positions),
                    push(Point3::new(p.x, p.y, height), label, &mut positions),
                )
            })
            .collect();
        for j in 0..k {
            let (b0, t0) = ring[j];
            let (b1, t1) = ring[(j + 1) % k];
            faces.push([b0, b1, t1]);
            faces.push([b0, t1, t0]);
        }
        pillars.push((pc, pr));
    }

    let colors = labels.iter().map(|&l| class_color(l)).collect();
    let mut mesh = TriangleMesh::new(positions, colors, labels, faces, RANDOM_ROOM_CLASSES)
        .expect("random room is valid");
    mesh.compute_vertex_normals();
    RandomRoom {
        mesh,
        footprint,
        center,
        height,
        pillars,
    }
}
