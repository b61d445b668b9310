//! Virtual view samplers and view-set composition.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{intrinsics_from_fov, look_at, CameraIntrinsics};
use crate::mesh::{SceneBounds, TriangleMesh};
use crate::raycast::segment_blocked;
use crate::render::{depth_at_pixel, RenderParams};
use crate::segment::Segmentation;
use crate::view::{read_view_records, ViewSource, VirtualView};
use crate::{is_class, ClassId, Error, Result};

pub const DEFAULT_FOV: f64 = 120.0 * std::f64::consts::PI / 180.0;
pub const DEFAULT_WIDTH: u32 = 320;
pub const DEFAULT_HEIGHT: u32 = 240;
pub const DEFAULT_PULLBACKS: [f64; 3] = [0.75, 1.5, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Horizontal field of view, radians.
    pub horizontal_fov: f64,
    pub width: u32,
    pub height: u32,
    pub topdown_spacing: f64,
    pub topdown_clearance: f64,
    pub center_view_count: usize,
    /// Half-extent scale of the box that center-looking eyes are drawn from.
    pub center_inflation: f64,
    /// Upper bound on segments used by scale-invariant sampling; `None` uses all.
    pub segment_budget: Option<usize>,
    pub pullback_distances: Vec<f64>,
    pub occlusion_tolerance: f64,
    pub class_balance_target_count: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            horizontal_fov: DEFAULT_FOV,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            topdown_spacing: 1.0,
            topdown_clearance: 0.5,
            center_view_count: 10,
            center_inflation: 1.25,
            segment_budget: None,
            pullback_distances: DEFAULT_PULLBACKS.to_vec(),
            occlusion_tolerance: 0.05,
            class_balance_target_count: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.topdown_spacing > 0.0) {
            return bad(format!("topdown spacing must be positive, got {}", self.topdown_spacing));
        }
        if !(self.topdown_clearance > 0.0) {
            return bad(format!("topdown clearance must be positive, got {}", self.topdown_clearance));
        }
        if !(self.center_inflation > 0.0) {
            return bad(format!("center inflation must be positive, got {}", self.center_inflation));
        }
        if let Some(d) = self.pullback_distances.iter().find(|&&d| !(d > 0.0)) {
            return bad(format!("pullback distances must be positive, got {d}"));
        }
        if !(self.occlusion_tolerance > 0.0) {
            return bad(format!("occlusion tolerance must be positive, got {}", self.occlusion_tolerance));
        }
        self.intrinsics().map(|_| ())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        intrinsics_from_fov(self.width, self.height, self.horizontal_fov)
    }
}

fn make_view(
    intrinsics: CameraIntrinsics,
    eye: &Point3<f64>,
    target: &Point3<f64>,
    up: &Vector3<f64>,
    params: &RenderParams,
    source: ViewSource,
) -> Result<VirtualView> {
    Ok(VirtualView {
        id: 0,
        intrinsics,
        extrinsics: look_at(eye, target, up)?,
        params: *params,
        source,
    })
}

/// Evenly spaced samples covering `[lo, hi]` with both ends, at most `spacing` apart.
fn grid_axis(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let extent = hi - lo;
    if extent <= 0.0 || spacing > extent {
        return vec![0.5 * (lo + hi)];
    }
    let n = (extent / spacing - 1e-9).ceil() as usize + 1;
    (0..n)
        .map(|i| lo + extent * i as f64 / (n - 1) as f64)
        .collect()
}

/// Straight-down cameras on a grid over the top face of the scene bounds.
pub fn sample_uniform_topdown(
    mesh: &TriangleMesh,
    cfg: &SamplerConfig,
    params: &RenderParams,
) -> Result<Vec<VirtualView>> {
    let b = mesh.scene_bounds()?;
    topdown_over(&b, cfg, params)
}

fn topdown_over(b: &SceneBounds, cfg: &SamplerConfig, params: &RenderParams) -> Result<Vec<VirtualView>> {
    let intr = cfg.intrinsics()?;
    let z = b.max.z + cfg.topdown_clearance;
    let mut out = Vec::new();
    for y in grid_axis(b.min.y, b.max.y, cfg.topdown_spacing) {
        for x in grid_axis(b.min.x, b.max.x, cfg.topdown_spacing) {
            let eye = Point3::new(x, y, z);
            let below = Point3::new(x, y, z - 1.0);
            out.push(make_view(intr, &eye, &below, &Vector3::y(), params, ViewSource::UniformTopdown)?);
        }
    }
    Ok(out)
}

/// Cameras drawn uniformly inside the inflated bounds, aimed at the bounds center.
pub fn sample_uniform_center(
    mesh: &TriangleMesh,
    cfg: &SamplerConfig,
    params: &RenderParams,
    seed: u64,
) -> Result<Vec<VirtualView>> {
    let b = mesh.scene_bounds()?;
    let intr = cfg.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = b.center();
    let half = b.extent() * (0.5 * cfg.center_inflation);
    let mut out = Vec::with_capacity(cfg.center_view_count);
    while out.len() < cfg.center_view_count {
        let eye = Point3::from(
            center.coords
                + Vector3::new(
                    half.x * rng.gen_range(-1.0..=1.0),
                    half.y * rng.gen_range(-1.0..=1.0),
                    half.z * rng.gen_range(-1.0..=1.0),
                ),
        );
        if (eye - center).norm() < 1e-6 {
            continue;
        }
        out.push(make_view(intr, &eye, &center, &Vector3::z(), params, ViewSource::UniformCenter)?);
    }
    Ok(out)
}

/// Outcome counts of scale-invariant sampling.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleInvariantReport {
    pub candidates: usize,
    pub kept: usize,
    pub dropped_by_depth: usize,
    pub dropped_by_ray: usize,
    /// Segments skipped because their mean normal is undefined.
    pub skipped_degenerate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occlusion {
    Clear,
    BlockedRay,
    DepthMismatch,
}

/// Occlusion test for a view aimed at `target` from `distance` away.
///
/// With culling off, the eye-to-target segment must not cross any face.
/// The rendered depth at the principal pixel must then match `distance`.
pub fn occlusion_check(
    mesh: &TriangleMesh,
    view: &VirtualView,
    target: &Point3<f64>,
    distance: f64,
    tolerance: f64,
) -> Occlusion {
    let eye = crate::camera::camera_center(&view.extrinsics);
    if !view.params.backface_culling && segment_blocked(mesh, &eye, target, tolerance, false) {
        return Occlusion::BlockedRay;
    }
    let (px, py) = principal_pixel(&view.intrinsics);
    match depth_at_pixel(mesh, view, px, py) {
        Some(z) if (z - distance).abs() < tolerance => Occlusion::Clear,
        _ => Occlusion::DepthMismatch,
    }
}

pub fn principal_pixel(intr: &CameraIntrinsics) -> (u32, u32) {
    let x = intr.cx.floor().clamp(0.0, intr.width as f64 - 1.0) as u32;
    let y = intr.cy.floor().clamp(0.0, intr.height as f64 - 1.0) as u32;
    (x, y)
}

/// Segment indices used under a budget: all, or a seeded subset in ascending order.
fn budget_segments(count: usize, budget: Option<usize>, seed: u64) -> Vec<usize> {
    match budget {
        Some(b) if b < count => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, count, b).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..count).collect(),
    }
}

/// Cameras pulled back along segment normals at each configured distance,
/// filtered by [`occlusion_check`].
pub fn sample_scale_invariant(
    mesh: &TriangleMesh,
    segmentation: &Segmentation,
    cfg: &SamplerConfig,
    params: &RenderParams,
    seed: u64,
) -> Result<(Vec<VirtualView>, ScaleInvariantReport)> {
    let intr = cfg.intrinsics()?;
    let mut report = ScaleInvariantReport::default();
    let mut out = Vec::new();
    for s in budget_segments(segmentation.len(), cfg.segment_budget, seed) {
        let seg = &segmentation.segments[s];
        let Some(n) = seg.mean_normal else {
            report.skipped_degenerate += 1;
            continue;
        };
        for &d in &cfg.pullback_distances {
            report.candidates += 1;
            let eye = seg.centroid + n * d;
            let view = make_view(intr, &eye, &seg.centroid, &Vector3::z(), params, ViewSource::ScaleInvariant)?;
            match occlusion_check(mesh, &view, &seg.centroid, d, cfg.occlusion_tolerance) {
                Occlusion::Clear => {
                    report.kept += 1;
                    out.push(view);
                }
                Occlusion::BlockedRay => report.dropped_by_ray += 1,
                Occlusion::DepthMismatch => report.dropped_by_depth += 1,
            }
        }
    }
    Ok((out, report))
}

/// Selection probability per class: inverse surface-area frequency over
/// segment dominant labels, normalized to sum to one.
pub fn class_weights(segmentation: &Segmentation) -> Result<BTreeMap<ClassId, f64>> {
    let mut area: BTreeMap<ClassId, f64> = BTreeMap::new();
    for s in &segmentation.segments {
        if is_class(s.dominant_label) && s.mean_normal.is_some() && s.area > 0.0 {
            *area.entry(s.dominant_label).or_insert(0.0) += s.area;
        }
    }
    if area.is_empty() {
        return Err(Error::Validation(
            "class-balanced sampling needs at least one labeled segment".into(),
        ));
    }
    let total: f64 = area.values().sum();
    let inv: BTreeMap<ClassId, f64> = area.iter().map(|(&c, &a)| (c, total / a)).collect();
    let norm: f64 = inv.values().sum();
    Ok(inv.into_iter().map(|(c, w)| (c, w / norm)).collect())
}

/// Draws `count` segment indices: a class by [`class_weights`], then a
/// segment of that class uniformly, with replacement.
pub fn class_balanced_draws(segmentation: &Segmentation, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let weights = class_weights(segmentation)?;
    let mut members: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, s) in segmentation.segments.iter().enumerate() {
        if weights.contains_key(&s.dominant_label) && s.mean_normal.is_some() && s.area > 0.0 {
            members.entry(s.dominant_label).or_default().push(i);
        }
    }
    let classes: Vec<ClassId> = weights.keys().copied().collect();
    let dist = WeightedIndex::new(weights.values().copied())
        .map_err(|e| Error::Validation(format!("class weights: {e}")))?;
    Ok((0..count)
        .map(|_| {
            let pool = &members[&classes[dist.sample(rng)]];
            pool[rng.gen_range(0..pool.len())]
        })
        .collect())
}

/// Scale-invariant style views at segments drawn by [`class_balanced_draws`].
/// Each draw uses one pullback distance chosen uniformly; views failing the
/// occlusion check are dropped.
pub fn sample_class_balanced(
    mesh: &TriangleMesh,
    segmentation: &Segmentation,
    cfg: &SamplerConfig,
    params: &RenderParams,
    seed: u64,
) -> Result<Vec<VirtualView>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = class_balanced_draws(segmentation, cfg.class_balance_target_count, &mut rng)?;
    if cfg.pullback_distances.is_empty() {
        return Ok(Vec::new());
    }
    let intr = cfg.intrinsics()?;
    let mut out = Vec::new();
    for s in draws {
        let seg = &segmentation.segments[s];
        let n = seg.mean_normal.expect("drawn segments have normals");
        let d = cfg.pullback_distances[rng.gen_range(0..cfg.pullback_distances.len())];
        let view = make_view(intr, &(seg.centroid + n * d), &seg.centroid, &Vector3::z(), params, ViewSource::ClassBalanced)?;
        if occlusion_check(mesh, &view, &seg.centroid, d, cfg.occlusion_tolerance) == Occlusion::Clear {
            out.push(view);
        }
    }
    Ok(out)
}

/// Every `stride`-th record of a trajectory file, tagged as original views.
pub fn sample_original_views(
    trajectory: &Path,
    stride: usize,
    params: &RenderParams,
) -> Result<Vec<VirtualView>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("original view stride must be at least 1".into()));
    }
    read_view_records(trajectory)?
        .iter()
        .step_by(stride)
        .map(|r| {
            let mut v = r.to_view(params)?;
            v.source = ViewSource::Original;
            Ok(v)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Training,
    Inference,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Training => "training",
            Stage::Inference => "inference",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Stage::Training),
            "inference" => Ok(Stage::Inference),
            _ => Err(Error::InvalidParameter(format!("unknown stage '{s}'"))),
        }
    }
}

/// Which samplers contribute to a view set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrategyMix {
    pub uniform_topdown: bool,
    pub uniform_center: bool,
    pub scale_invariant: bool,
    pub class_balanced: bool,
    /// Trajectory file and stride for original views.
    pub original: Option<(std::path::PathBuf, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<VirtualView>,
    pub scale_invariant: ScaleInvariantReport,
}

impl ViewSet {
    pub fn count_by_source(&self) -> BTreeMap<ViewSource, usize> {
        let mut out = BTreeMap::new();
        for v in &self.views {
            *out.entry(v.source).or_insert(0) += 1;
        }
        out
    }
}

// Per-strategy seed offsets keep each sampler's stream independent of the mix.
const CENTER_STREAM: u64 = u64::from_be_bytes(*b"\0\0CENTER");
const SCALE_STREAM: u64 = u64::from_be_bytes(*b"\0\0\0SCALE");
const BALANCE_STREAM: u64 = u64::from_be_bytes(*b"\0BALANCE");

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

/// Runs the selected samplers and concatenates their views in the order
/// topdown, center, scale-invariant, class-balanced, original, assigning
/// ids `0..N`. Class-balanced sampling is rejected at inference.
pub fn compose_view_set(
    mesh: &TriangleMesh,
    segmentation: &Segmentation,
    cfg: &SamplerConfig,
    mix: &StrategyMix,
    stage: Stage,
    params: &RenderParams,
    seed: u64,
) -> Result<ViewSet> {
    if mix.class_balanced && stage == Stage::Inference {
        return Err(Error::StageRule(
            "class-balanced sampling is only allowed at the training stage".into(),
        ));
    }
    cfg.validate()?;
    params.validate()?;
    let mut views = Vec::new();
    let mut report = ScaleInvariantReport::default();
    if mix.uniform_topdown {
        views.extend(sample_uniform_topdown(mesh, cfg, params)?);
    }
    if mix.uniform_center {
        views.extend(sample_uniform_center(mesh, cfg, params, stream_seed(seed, CENTER_STREAM))?);
    }
    if mix.scale_invariant {
        let (v, r) = sample_scale_invariant(mesh, segmentation, cfg, params, stream_seed(seed, SCALE_STREAM))?;
        views.extend(v);
        report = r;
    }
    if mix.class_balanced {
        views.extend(sample_class_balanced(mesh, segmentation, cfg, params, stream_seed(seed, BALANCE_STREAM))?);
    }
    if let Some((path, stride)) = &mix.original {
        views.extend(sample_original_views(path, *stride, params)?);
    }
    for (i, v) in views.iter_mut().enumerate() {
        v.id = i as u32;
    }
    Ok(ViewSet {
        views,
        scale_invariant: report,
    })
}
