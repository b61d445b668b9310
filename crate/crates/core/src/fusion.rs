//! Depth-matched back-projection of pixel features onto mesh vertices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::TriangleMesh;
use crate::ply::{save_mesh, PlyFormat};
use crate::render::RenderedView;
use crate::segmenter::FeatureMap;
use crate::{ClassId, Error, Result, UNOBSERVED};

pub const DEFAULT_DEPTH_TOLERANCE: f64 = 0.02;

/// Fixed-point scale of accumulated probabilities. Integer sums make the
/// result independent of the order in which views are accumulated.
const FIXED_SCALE: f64 = (1u64 << 40) as f64;

/// Color written for vertices without any contribution.
pub const UNOBSERVED_COLOR: [u8; 3] = [0, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Average,
    MaxProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Depth-matching threshold, meters.
    pub depth_tolerance: f64,
    pub reduction: Reduction,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            depth_tolerance: DEFAULT_DEPTH_TOLERANCE,
            reduction: Reduction::Average,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_tolerance > 0.0 && self.depth_tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "depth tolerance must be positive, got {}",
                self.depth_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Best {
    score: f32,
    view_id: u32,
}

/// Running per-vertex sums and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    classes: usize,
    sums: Vec<u64>,
    counts: Vec<u32>,
    best: Vec<Option<Best>>,
    best_feature: Vec<f32>,
    views: usize,
}

impl Accumulator {
    pub fn new(vertex_count: usize, classes: usize) -> Self {
        Self {
            classes,
            sums: vec![0; vertex_count * classes],
            counts: vec![0; vertex_count],
            best: vec![None; vertex_count],
            best_feature: vec![0.0; vertex_count * classes],
            views: 0,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.counts.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn view_count(&self) -> usize {
        self.views
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Adds one feature vector from view `view_id` to vertex `k`.
    ///
    /// All-zero features carry no evidence and are skipped. Entries must be
    /// finite and within `[0, 1]`.
    pub fn add(&mut self, k: usize, view_id: u32, feature: &[f32]) -> Result<bool> {
        if feature.len() != self.classes {
            return Err(Error::Shape(format!(
                "feature has {} classes, accumulator has {}",
                feature.len(),
                self.classes
            )));
        }
        if feature.iter().all(|&v| v == 0.0) {
            return Ok(false);
        }
        if let Some(v) = feature.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("feature entry {v} outside [0, 1]")));
        }
        let c = self.classes;
        for (s, &v) in self.sums[k * c..(k + 1) * c].iter_mut().zip(feature) {
            let q = (v as f64 * FIXED_SCALE).round() as u64;
            *s = s
                .checked_add(q)
                .ok_or_else(|| Error::Validation("fusion accumulator overflow".into()))?;
        }
        self.counts[k] += 1;
        let score = feature.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let replace = match self.best[k] {
            None => true,
            Some(b) => score > b.score || (score == b.score && view_id < b.view_id),
        };
        if replace {
            self.best[k] = Some(Best { score, view_id });
            self.best_feature[k * c..(k + 1) * c].copy_from_slice(feature);
        }
        Ok(true)
    }
}

/// Accumulates one view. Returns the depth-matched vertices in ascending order.
pub fn accumulate_view(
    mesh: &TriangleMesh,
    rendered: &RenderedView,
    features: &FeatureMap,
    cfg: &FusionConfig,
    acc: &mut Accumulator,
) -> Result<Vec<u32>> {
    if features.width != rendered.width() || features.height != rendered.height() {
        return Err(Error::Shape(format!(
            "feature map of view {} is {}x{}, render is {}x{}",
            features.view_id,
            features.width,
            features.height,
            rendered.width(),
            rendered.height()
        )));
    }
    if features.classes != acc.classes || mesh.vertex_count() != acc.vertex_count() {
        return Err(Error::Shape(format!(
            "accumulator is {} vertices x {} classes, got {} vertices x {} classes",
            acc.vertex_count(),
            acc.classes,
            mesh.vertex_count(),
            features.classes
        )));
    }
    let mut matched = Vec::new();
    for k in 0..mesh.vertex_count() {
        if let Some(idx) = rendered.depth_match(mesh, &mesh.position(k as u32), cfg.depth_tolerance) {
            acc.add(k, rendered.view_id, features.pixel(idx))?;
            matched.push(k as u32);
        }
    }
    acc.views += 1;
    Ok(matched)
}

/// Final per-vertex distributions and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVertexFeatures {
    pub classes: usize,
    pub reduction: Reduction,
    pub view_count: usize,
    /// Accumulated feature sums, `V x C`.
    pub sums: Vec<f64>,
    pub counts: Vec<u32>,
    /// Fused distribution, `V x C`; zero rows where unobserved.
    pub probabilities: Vec<f32>,
    pub labels: Vec<ClassId>,
}

impl FusedVertexFeatures {
    pub fn probability(&self, k: usize) -> &[f32] {
        &self.probabilities[k * self.classes..(k + 1) * self.classes]
    }

    pub fn observed(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.counts.is_empty() {
            0.0
        } else {
            self.observed() as f64 / self.counts.len() as f64
        }
    }
}

fn argmax(p: &[f32]) -> ClassId {
    let mut best = 0;
    for (c, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = c;
        }
    }
    best as ClassId
}

pub fn finalize(acc: &Accumulator, reduction: Reduction) -> FusedVertexFeatures {
    let c = acc.classes;
    let n = acc.vertex_count();
    let mut probabilities = vec![0.0f32; n * c];
    let mut labels = vec![UNOBSERVED; n];
    for k in 0..n {
        let count = acc.counts[k];
        if count == 0 {
            continue;
        }
        let out = &mut probabilities[k * c..(k + 1) * c];
        match reduction {
            Reduction::Average => {
                for (o, &s) in out.iter_mut().zip(&acc.sums[k * c..(k + 1) * c]) {
                    *o = (s as f64 / FIXED_SCALE / count as f64) as f32;
                }
            }
            Reduction::MaxProbability => out.copy_from_slice(&acc.best_feature[k * c..(k + 1) * c]),
        }
        labels[k] = argmax(out);
    }
    FusedVertexFeatures {
        classes: c,
        reduction,
        view_count: acc.views,
        sums: acc.sums.iter().map(|&s| s as f64 / FIXED_SCALE).collect(),
        counts: acc.counts.clone(),
        probabilities,
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVertexCount {
    pub class: usize,
    pub name: String,
    pub vertices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub reduction: Reduction,
    pub depth_tolerance: f64,
    pub view_count: usize,
    pub vertex_count: usize,
    pub observed_vertices: usize,
    pub coverage: f64,
    pub unobserved_vertices: usize,
    pub class_vertex_counts: Vec<ClassVertexCount>,
}

/// Summary of a fusion run. Missing class names fall back to `class_<id>`.
pub fn fusion_report(fused: &FusedVertexFeatures, cfg: &FusionConfig, class_names: &[String]) -> FusionReport {
    let mut counts = vec![0usize; fused.classes];
    for &l in &fused.labels {
        if let Some(c) = counts.get_mut(l as usize) {
            *c += 1;
        }
    }
    let observed = fused.observed();
    FusionReport {
        reduction: fused.reduction,
        depth_tolerance: cfg.depth_tolerance,
        view_count: fused.view_count,
        vertex_count: fused.labels.len(),
        observed_vertices: observed,
        coverage: fused.coverage(),
        unobserved_vertices: fused.labels.len() - observed,
        class_vertex_counts: counts
            .into_iter()
            .enumerate()
            .map(|(class, vertices)| ClassVertexCount {
                class,
                name: class_name(class_names, class),
                vertices,
            })
            .collect(),
    }
}

pub fn class_name(names: &[String], class: usize) -> String {
    names.get(class).cloned().unwrap_or_else(|| format!("class_{class}"))
}

/// Distinct, never-black color for class `label`.
pub fn palette_color(label: ClassId) -> [u8; 3] {
    let h = (label as f64 * 0.618_033_988_75).fract();
    let sector = (h * 6.0).floor();
    let f = h * 6.0 - sector;
    let (lo, hi) = (64.0, 230.0);
    let up = lo + (hi - lo) * f;
    let down = hi - (hi - lo) * f;
    let rgb = match sector as u32 {
        0 => (hi, up, lo),
        1 => (down, hi, lo),
        2 => (lo, hi, up),
        3 => (lo, down, hi),
        4 => (up, lo, hi),
        _ => (hi, lo, down),
    };
    [rgb.0 as u8, rgb.1 as u8, rgb.2 as u8]
}

pub fn default_palette(classes: usize) -> Vec<[u8; 3]> {
    (0..classes).map(|c| palette_color(c as ClassId)).collect()
}

/// Copy of `mesh` with fused labels and palette colors. Unobserved vertices
/// keep the UNOBSERVED label and get [`UNOBSERVED_COLOR`].
pub fn labeled_mesh(mesh: &TriangleMesh, fused: &FusedVertexFeatures, palette: &[[u8; 3]]) -> Result<TriangleMesh> {
    if fused.labels.len() != mesh.vertex_count() {
        return Err(Error::Shape(format!(
            "fused labels for {} vertices, mesh has {}",
            fused.labels.len(),
            mesh.vertex_count()
        )));
    }
    let mut out = mesh.clone();
    for (k, &l) in fused.labels.iter().enumerate() {
        let rgb = if l == UNOBSERVED {
            UNOBSERVED_COLOR
        } else {
            *palette.get(l as usize).ok_or_else(|| {
                Error::InvalidParameter(format!("palette has {} entries, label {l} needs more", palette.len()))
            })?
        };
        out.colors[k] = rgb.map(|c| c as f32 / 255.0);
        out.labels[k] = l;
    }
    Ok(out)
}

/// Writes the fused labeling as a binary PLY; UNOBSERVED is stored as -1.
pub fn export_labeled_mesh(
    mesh: &TriangleMesh,
    fused: &FusedVertexFeatures,
    palette: &[[u8; 3]],
    path: &Path,
    label_property: &str,
) -> Result<()> {
    save_mesh(&labeled_mesh(mesh, fused, palette)?, path, label_property, PlyFormat::BinaryLittleEndian)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ply::load_mesh;
    use crate::UNLABELED;

    #[test]
    fn average_of_two() {
        let mut acc = Accumulator::new(1, 2);
        acc.add(0, 0, &[0.2, 0.8]).unwrap();
        acc.add(0, 1, &[0.6, 0.4]).unwrap();
        let f = finalize(&acc, Reduction::Average);
        assert!((f.probability(0)[0] - 0.4).abs() < 1e-7);
        assert!((f.probability(0)[1] - 0.6).abs() < 1e-7);
        assert_eq!(f.labels[0], 1);
    }

    #[test]
    fn max_probability_keeps_most_confident() {
        let mut acc = Accumulator::new(1, 2);
        acc.add(0, 0, &[0.2, 0.8]).unwrap();
        acc.add(0, 1, &[0.6, 0.4]).unwrap();
        let f = finalize(&acc, Reduction::MaxProbability);
        assert_eq!(f.probability(0), &[0.2, 0.8]);
        // Equal confidence: the earlier view id wins regardless of order.
        let mut acc = Accumulator::new(1, 2);
        acc.add(0, 5, &[0.3, 0.7]).unwrap();
        acc.add(0, 2, &[0.7, 0.3]).unwrap();
        assert_eq!(finalize(&acc, Reduction::MaxProbability).labels[0], 0);
    }

    #[test]
    fn unobserved_and_zero_features() {
        let mut acc = Accumulator::new(2, 3);
        assert!(!acc.add(0, 0, &[0.0; 3]).unwrap());
        let f = finalize(&acc, Reduction::Average);
        assert_eq!(f.labels, vec![UNOBSERVED, UNOBSERVED]);
        assert_eq!(f.coverage(), 0.0);
    }

    #[test]
    fn ties_go_to_smallest_class() {
        let mut acc = Accumulator::new(1, 3);
        acc.add(0, 0, &[0.0, 0.5, 0.5]).unwrap();
        assert_eq!(finalize(&acc, Reduction::Average).labels[0], 1);
    }

    #[test]
    fn export_round_trip() {
        let mesh = crate::synthetic::box_room([2.0, 2.0, 2.0], 1.0);
        let mut acc = Accumulator::new(mesh.vertex_count(), 6);
        for k in 0..mesh.vertex_count() {
            if k % 3 != 0 {
                let mut p = [0.0f32; 6];
                p[k % 6] = 1.0;
                acc.add(k, 0, &p).unwrap();
            }
        }
        let fused = finalize(&acc, Reduction::Average);
        let palette = default_palette(6);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("fused.ply");
        export_labeled_mesh(&mesh, &fused, &palette, &path, "label").unwrap();
        let back = load_mesh(&path, "label").unwrap();
        for k in 0..mesh.vertex_count() {
            let l = fused.labels[k];
            if l == UNOBSERVED {
                assert_eq!(back.labels[k], UNLABELED);
                assert_eq!(back.colors[k], [0.0; 3]);
            } else {
                assert_eq!(back.labels[k], l);
                assert_eq!(back.colors[k], palette[l as usize].map(|c| c as f32 / 255.0));
            }
        }
    }

    #[test]
    fn palette_avoids_reserved_color() {
        for c in 0..1000 {
            assert_ne!(palette_color(c), UNOBSERVED_COLOR);
        }
    }
}
