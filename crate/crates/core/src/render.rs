//! Deterministic z-buffered software rasterizer.
//!
//! Produces color, normal, normalized-coordinate, depth, label and face-id
//! channels for one view. Attributes use perspective-correct barycentric
//! interpolation; labels are categorical and take the label of the vertex
//! with the largest barycentric weight. Pixel ownership on shared edges is
//! decided by a symbolic perturbation of the sample point, so adjacent
//! triangles never double-cover or leave a gap.

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{camera_center, CameraExtrinsics, CameraIntrinsics, DEFAULT_Z_NEAR};
use crate::mesh::{SceneBounds, TriangleMesh};
use crate::raycast::ray_triangle_tolerant;
use crate::view::VirtualView;
use crate::{ClassId, Error, Result, BACKGROUND};

pub const NO_FACE: u32 = u32::MAX;
pub const NO_VERTEX: u32 = u32::MAX;

/// Depth ties closer than this keep the lower face index.
const DEPTH_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub backface_culling: bool,
    pub z_near: f64,
    pub z_far: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            backface_culling: true,
            z_near: DEFAULT_Z_NEAR,
            z_far: 100.0,
        }
    }
}

impl RenderParams {
    /// Far plane at twice the scene diagonal.
    pub fn for_bounds(bounds: &SceneBounds, backface_culling: bool) -> Self {
        let z_far = (2.0 * bounds.diagonal()).max(2.0 * DEFAULT_Z_NEAR);
        Self {
            backface_culling,
            z_near: DEFAULT_Z_NEAR,
            z_far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_near > 0.0 && self.z_near < self.z_far && self.z_far.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < z_near < z_far, got {} and {}",
                self.z_near, self.z_far
            )));
        }
        Ok(())
    }
}

/// Channel images for one view, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub view_id: u32,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub params: RenderParams,
    pub color: Vec<[f32; 3]>,
    pub normal: Vec<[f32; 3]>,
    pub coords: Vec<[f32; 3]>,
    /// Camera-frame z in meters, `+inf` on background.
    pub depth: Vec<f32>,
    pub label: Vec<ClassId>,
    /// Visible face per pixel, [`NO_FACE`] on background.
    pub face: Vec<u32>,
    /// Vertex whose label the pixel carries, [`NO_VERTEX`] on background.
    pub label_vertex: Vec<u32>,
}

impl RenderedView {
    fn blank(view: &VirtualView) -> Self {
        let n = view.intrinsics.pixel_count();
        Self {
            view_id: view.id,
            intrinsics: view.intrinsics,
            extrinsics: view.extrinsics,
            params: view.params,
            color: vec![[0.0; 3]; n],
            normal: vec![[0.0; 3]; n],
            coords: vec![[0.0; 3]; n],
            depth: vec![f32::INFINITY; n],
            label: vec![BACKGROUND; n],
            face: vec![NO_FACE; n],
            label_vertex: vec![NO_VERTEX; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.intrinsics.width as usize + x as usize
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.face[idx] != NO_FACE
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.face.iter().map(|&f| f != NO_FACE).collect()
    }

    pub fn camera_center(&self) -> Point3<f64> {
        camera_center(&self.extrinsics)
    }

    /// Surface seen through continuous image coordinates `(u, v)`.
    ///
    /// Candidates are the faces owning pixels within [`LOOKUP_RADIUS`] of the
    /// pixel containing `(u, v)`; the surface is the nearest candidate hit by
    /// the ray through `(u, v)`. The face of the containing pixel wins exact
    /// depth ties. `None` when no candidate is hit.
    pub fn surface_at(&self, mesh: &TriangleMesh, u: f64, v: f64) -> Option<SurfaceHit> {
        let intr = &self.intrinsics;
        if !(u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64) {
            return None;
        }
        let (px, py) = (u.floor() as i64, v.floor() as i64);
        let own = self.face[self.index(px as u32, py as u32)];
        let r = LOOKUP_RADIUS as i64;
        let mut candidates: Vec<u32> = Vec::with_capacity(8);
        for y in (py - r).max(0)..=(py + r).min(intr.height as i64 - 1) {
            for x in (px - r).max(0)..=(px + r).min(intr.width as i64 - 1) {
                let f = self.face[self.index(x as u32, y as u32)];
                if f != NO_FACE && !candidates.contains(&f) {
                    candidates.push(f);
                }
            }
        }
        candidates.sort_unstable();
        let origin = self.camera_center();
        let dir = self.extrinsics.direction_to_world(&intr.unproject(u, v)).normalize();
        let mut best: Option<(f64, u32)> = None;
        let mut own_range = None;
        for &f in &candidates {
            let Some(face) = mesh.faces.get(f as usize) else {
                continue;
            };
            let [a, b, c] = face.map(|i| mesh.position(i));
            let Some(t) = ray_triangle_tolerant(&origin, &dir, &a, &b, &c, HIT_SLACK) else {
                continue;
            };
            if t <= 0.0 {
                continue;
            }
            if f == own {
                own_range = Some(t);
            }
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, f));
            }
        }
        let (t, f) = best?;
        let (range, face) = match own_range {
            Some(ot) if ot <= t + 1e-9 * (1.0 + t) => (ot, own),
            _ => (t, f),
        };
        // Feature pixel: nearest pixel center owned by the chosen face.
        let pixel = if own == face {
            self.index(px as u32, py as u32)
        } else {
            let mut best_px = None;
            for y in (py - r).max(0)..=(py + r).min(intr.height as i64 - 1) {
                for x in (px - r).max(0)..=(px + r).min(intr.width as i64 - 1) {
                    let idx = self.index(x as u32, y as u32);
                    if self.face[idx] != face {
                        continue;
                    }
                    let d = (x as f64 + 0.5 - u).powi(2) + (y as f64 + 0.5 - v).powi(2);
                    if best_px.is_none_or(|(bd, _)| d < bd) {
                        best_px = Some((d, idx));
                    }
                }
            }
            best_px?.1
        };
        Some(SurfaceHit { range, face, pixel })
    }

    /// Depth-matched lookup for a world point.
    ///
    /// Returns the pixel whose feature belongs to the point when it projects
    /// in front of the near plane into the image and the surface range
    /// there differs from the point-to-camera distance by less than `delta`.
    pub fn depth_match(&self, mesh: &TriangleMesh, point: &Point3<f64>, delta: f64) -> Option<usize> {
        let p = crate::camera::project_point_with_near(
            point,
            &self.intrinsics,
            &self.extrinsics,
            self.params.z_near,
        )?;
        let hit = self.surface_at(mesh, p.u, p.v)?;
        let c = (point - self.camera_center()).norm();
        ((hit.range - c).abs() < delta).then_some(hit.pixel)
    }
}

/// Pixel radius searched for candidate faces by [`RenderedView::surface_at`].
pub const LOOKUP_RADIUS: u32 = 2;

/// Barycentric slack so rays through shared vertices and edges still hit.
const HIT_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// Distance from the camera center along the ray.
    pub range: f64,
    pub face: u32,
    /// Pixel index carrying the feature for this surface point.
    pub pixel: usize,
}

/// Vertices passing the depth-matched visibility test, ascending.
pub fn visible_vertices(mesh: &TriangleMesh, rendered: &RenderedView, delta: f64) -> Vec<u32> {
    (0..mesh.vertex_count() as u32)
        .filter(|&k| rendered.depth_match(mesh, &mesh.position(k), delta).is_some())
        .collect()
}

/// Renders all channels; coordinates are normalized by the mesh bounds.
pub fn render(mesh: &TriangleMesh, view: &VirtualView) -> RenderedView {
    match mesh.scene_bounds() {
        Ok(b) => render_with_bounds(mesh, view, &b),
        Err(_) => RenderedView::blank(view),
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Point3<f64>,
    bary: Vector3<f64>,
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    p: Point2<f64>,
    inv_z: f64,
    bary: Vector3<f64>,
}

fn lex_less(a: &Point2<f64>, b: &Point2<f64>) -> bool {
    a.x < b.x || (a.x == b.x && a.y < b.y)
}

/// Edge function evaluated from a canonical endpoint order, so that
/// `edge(a, b, p) == -edge(b, a, p)` holds exactly.
fn edge(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> f64 {
    if lex_less(b, a) {
        return -edge(b, a, p);
    }
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Tie rule for samples exactly on an edge: owned iff nudging the sample by
/// `(eps, eps^2)` moves it inside, i.e. the inward gradient is positive in
/// lexicographic order.
fn owns_edge(a: &Point2<f64>, b: &Point2<f64>, orientation: f64) -> bool {
    let gx = -(b.y - a.y) * orientation;
    let gy = (b.x - a.x) * orientation;
    gx > 0.0 || (gx == 0.0 && gy > 0.0)
}

/// Clips a polygon to `z >= z_near` in camera space.
fn clip_near(poly: &[ClipVertex], z_near: f64) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a.cam.z >= z_near;
        let b_in = b.cam.z >= z_near;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            // Interpolate from a canonical endpoint so shared edges clip identically.
            let (p, q) = if (a.cam.x, a.cam.y, a.cam.z) < (b.cam.x, b.cam.y, b.cam.z) {
                (a, b)
            } else {
                (b, a)
            };
            let t = (z_near - p.cam.z) / (q.cam.z - p.cam.z);
            out.push(ClipVertex {
                cam: Point3::from(p.cam.coords + (q.cam.coords - p.cam.coords) * t),
                bary: p.bary + (q.bary - p.bary) * t,
            });
        }
    }
    out
}

/// Per-pixel winner of the depth test, resolved into channels afterwards.
struct Fragments {
    z: Vec<f64>,
    face: Vec<u32>,
    bary: Vec<Vector3<f64>>,
}

/// Pixel window of the full image that is rasterized.
#[derive(Clone, Copy)]
struct Window {
    x0: u32,
    y0: u32,
    width: u32,
    height: u32,
}

fn rasterize_triangle(
    tri: [ScreenVertex; 3],
    face: u32,
    win: Window,
    params: &RenderParams,
    frags: &mut Fragments,
) {
    let [a, b, c] = tri;
    let area = edge(&a.p, &b.p, &c.p);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let orientation = area.signum();
    let inv_area = 1.0 / area;
    let min_x = a.p.x.min(b.p.x).min(c.p.x);
    let max_x = a.p.x.max(b.p.x).max(c.p.x);
    let min_y = a.p.y.min(b.p.y).min(c.p.y);
    let max_y = a.p.y.max(b.p.y).max(c.p.y);
    let x0 = (min_x - 0.5).ceil().max(win.x0 as f64);
    let x1 = (max_x - 0.5).floor().min((win.x0 + win.width) as f64 - 1.0);
    let y0 = (min_y - 0.5).ceil().max(win.y0 as f64);
    let y1 = (max_y - 0.5).floor().min((win.y0 + win.height) as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let own = [
        owns_edge(&b.p, &c.p, orientation),
        owns_edge(&c.p, &a.p, orientation),
        owns_edge(&a.p, &b.p, orientation),
    ];
    for y in y0 as u32..=y1 as u32 {
        let py = y as f64 + 0.5;
        for x in x0 as u32..=x1 as u32 {
            let p = Point2::new(x as f64 + 0.5, py);
            let w = [edge(&b.p, &c.p, &p), edge(&c.p, &a.p, &p), edge(&a.p, &b.p, &p)];
            let inside = (0..3).all(|i| {
                let s = w[i] * orientation;
                s > 0.0 || (s == 0.0 && own[i])
            });
            if !inside {
                continue;
            }
            let l = [w[0] * inv_area, w[1] * inv_area, w[2] * inv_area];
            let wz = [l[0] * a.inv_z, l[1] * b.inv_z, l[2] * c.inv_z];
            let inv_z = wz[0] + wz[1] + wz[2];
            if inv_z <= 0.0 {
                continue;
            }
            let z = 1.0 / inv_z;
            if z < params.z_near || z > params.z_far {
                continue;
            }
            let idx = (y - win.y0) as usize * win.width as usize + (x - win.x0) as usize;
            if frags.face[idx] != NO_FACE && z >= frags.z[idx] - DEPTH_TIE {
                continue;
            }
            let bary = (a.bary * wz[0] + b.bary * wz[1] + c.bary * wz[2]) / inv_z;
            frags.z[idx] = z;
            frags.face[idx] = face;
            frags.bary[idx] = bary;
        }
    }
}

/// Keeps stored f32 depth inside the closed depth range after rounding.
fn store_depth(z: f64, params: &RenderParams) -> f32 {
    let mut d = z as f32;
    if (d as f64) < params.z_near {
        d = f32::from_bits(d.to_bits() + 1);
    }
    if (d as f64) > params.z_far {
        d = f32::from_bits(d.to_bits() - 1);
    }
    d
}

fn rasterize(mesh: &TriangleMesh, view: &VirtualView, win: Window) -> Fragments {
    let intr = &view.intrinsics;
    let extr = &view.extrinsics;
    let params = &view.params;
    let n = win.width as usize * win.height as usize;
    let mut frags = Fragments {
        z: vec![f64::INFINITY; n],
        face: vec![NO_FACE; n],
        bary: vec![Vector3::zeros(); n],
    };
    let eye = camera_center(extr);
    let cam: Vec<Point3<f64>> = mesh
        .positions
        .iter()
        .map(|p| extr.to_camera(&p.cast()))
        .collect();

    for (fi, f) in mesh.faces.iter().enumerate() {
        let cross = mesh.face_cross(fi);
        if cross.norm() < crate::mesh::DEGENERATE_AREA {
            continue;
        }
        if params.backface_culling && cross.dot(&(mesh.position(f[0]) - eye)) > 0.0 {
            continue;
        }
        let pc = f.map(|v| cam[v as usize]);
        if pc.iter().all(|p| p.z < params.z_near) || pc.iter().all(|p| p.z > params.z_far) {
            continue;
        }
        let poly = [
            ClipVertex { cam: pc[0], bary: Vector3::x() },
            ClipVertex { cam: pc[1], bary: Vector3::y() },
            ClipVertex { cam: pc[2], bary: Vector3::z() },
        ];
        let clipped;
        let poly: &[ClipVertex] = if pc.iter().all(|p| p.z >= params.z_near) {
            &poly
        } else {
            clipped = clip_near(&poly, params.z_near);
            &clipped
        };
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|v| ScreenVertex {
                p: Point2::new(
                    intr.fx * v.cam.x / v.cam.z + intr.cx,
                    intr.fy * v.cam.y / v.cam.z + intr.cy,
                ),
                inv_z: 1.0 / v.cam.z,
                bary: v.bary,
            })
            .collect();
        for i in 1..screen.len() - 1 {
            rasterize_triangle([screen[0], screen[i], screen[i + 1]], fi as u32, win, params, &mut frags);
        }
    }
    frags
}

/// Camera z of the surface at one pixel, identical to what a full render
/// stores there (before the f32 conversion). `None` on background.
pub fn depth_at_pixel(mesh: &TriangleMesh, view: &VirtualView, x: u32, y: u32) -> Option<f64> {
    if x >= view.intrinsics.width || y >= view.intrinsics.height {
        return None;
    }
    let frags = rasterize(mesh, view, Window { x0: x, y0: y, width: 1, height: 1 });
    (frags.face[0] != NO_FACE).then_some(frags.z[0])
}

/// Renders all channels with explicit coordinate-normalization bounds.
pub fn render_with_bounds(mesh: &TriangleMesh, view: &VirtualView, bounds: &SceneBounds) -> RenderedView {
    let mut out = RenderedView::blank(view);
    let params = &view.params;
    let n = view.intrinsics.pixel_count();
    let win = Window {
        x0: 0,
        y0: 0,
        width: view.intrinsics.width,
        height: view.intrinsics.height,
    };
    let frags = rasterize(mesh, view, win);

    let use_vertex_normals = mesh.has_normals();
    for idx in 0..n {
        let f = frags.face[idx];
        if f == NO_FACE {
            continue;
        }
        let verts = mesh.faces[f as usize];
        let b = frags.bary[idx];
        let mut best = 0;
        for k in 1..3 {
            if b[k] > b[best] {
                best = k;
            }
        }
        let lv = verts[best];
        let mut color = [0.0f64; 3];
        let mut pos = Vector3::<f64>::zeros();
        let mut normal = Vector3::<f64>::zeros();
        for k in 0..3 {
            let v = verts[k] as usize;
            for (c, &vc) in color.iter_mut().zip(&mesh.colors[v]) {
                *c += b[k] * vc as f64;
            }
            pos += mesh.positions[v].coords.cast::<f64>() * b[k];
            if use_vertex_normals {
                normal += mesh.normals[v] * b[k];
            }
        }
        if !use_vertex_normals {
            normal = mesh.face_cross(f as usize);
        }
        let normal = normal
            .try_normalize(1e-12)
            .or_else(|| mesh.face_normal(f as usize))
            .unwrap_or_else(Vector3::z);
        out.color[idx] = color.map(|c| c.clamp(0.0, 1.0) as f32);
        out.normal[idx] = [normal.x as f32, normal.y as f32, normal.z as f32];
        out.coords[idx] = bounds.normalize(&Point3::from(pos));
        out.depth[idx] = store_depth(frags.z[idx], params);
        out.label[idx] = mesh.labels[lv as usize];
        out.face[idx] = f;
        out.label_vertex[idx] = lv;
    }
    out
}
