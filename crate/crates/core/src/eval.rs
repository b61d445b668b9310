//! Confusion matrices, IoU metrics and reprojected 2D evaluation.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::fusion::class_name;
use crate::mesh::TriangleMesh;
use crate::render::{render_with_bounds, NO_VERTEX};
use crate::view::VirtualView;
use crate::{is_class, ClassId, Error, Result, BACKGROUND, UNLABELED, UNOBSERVED};

/// Ground-truth values skipped by default.
pub const DEFAULT_IGNORE: [ClassId; 2] = [UNLABELED, BACKGROUND];

/// Treatment of UNOBSERVED predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnobservedPolicy {
    /// Skipped and counted as ignored.
    #[default]
    Ignore,
    /// Counted as a miss for the ground-truth class.
    Strict,
}

/// Rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
    /// Samples skipped by the ignore set or the UNOBSERVED policy.
    pub ignored: u64,
    /// Per ground-truth class, UNOBSERVED predictions under the strict policy.
    pub missed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            ignored: 0,
            missed: vec![0; classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Samples that entered the matrix (including strict-mode misses).
    pub fn evaluated(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.missed.iter().sum::<u64>()
    }

    pub fn transpose(&self) -> Self {
        let c = self.classes;
        let mut out = Self::new(c);
        for g in 0..c {
            for p in 0..c {
                out.counts[p * c + g] = self.get(g, p);
            }
        }
        out.ignored = self.ignored;
        out
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.classes, rhs.classes, "merging matrices of different class counts");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
        for (a, b) in self.missed.iter_mut().zip(&rhs.missed) {
            *a += b;
        }
        self.ignored += rhs.ignored;
    }
}

fn check_label(label: ClassId, classes: usize, what: &str, i: usize) -> Result<usize> {
    if (label as usize) < classes {
        Ok(label as usize)
    } else {
        Err(Error::Validation(format!(
            "{what} label {label} at sample {i} is outside 0..{classes}"
        )))
    }
}

/// Adds samples to `cm`. See [`confusion`].
pub fn accumulate_confusion(
    cm: &mut ConfusionMatrix,
    pred: &[ClassId],
    gt: &[ClassId],
    ignore: &[ClassId],
    policy: UnobservedPolicy,
) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if ignore.contains(&g) {
            cm.ignored += 1;
            continue;
        }
        let g = check_label(g, cm.classes, "ground-truth", i)?;
        if p == UNOBSERVED {
            match policy {
                UnobservedPolicy::Ignore => cm.ignored += 1,
                UnobservedPolicy::Strict => cm.missed[g] += 1,
            }
            continue;
        }
        let p = check_label(p, cm.classes, "predicted", i)?;
        cm.counts[g * cm.classes + p] += 1;
    }
    Ok(())
}

/// Confusion matrix over paired labels. Samples whose ground truth is in
/// `ignore` are skipped; UNOBSERVED predictions follow `policy`.
pub fn confusion(
    pred: &[ClassId],
    gt: &[ClassId],
    classes: usize,
    ignore: &[ClassId],
    policy: UnobservedPolicy,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    accumulate_confusion(&mut cm, pred, gt, ignore, policy)?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Miou {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<Miou> {
    let c = cm.classes;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let row: u64 = (0..c).map(|p| cm.get(k, p)).sum();
            let col: u64 = (0..c).map(|g| cm.get(g, k)).sum();
            let denom = row + col - tp + cm.missed[k];
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoSamples);
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(Miou { per_class, mean })
}

/// Fraction of vertices with a real prediction and ground truth that agree.
pub fn covered_accuracy(pred: &[ClassId], gt: &[ClassId]) -> Option<f64> {
    let mut total = 0usize;
    let mut hit = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if p != UNOBSERVED && is_class(g) {
            total += 1;
            hit += usize::from(p == g);
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// 2D confusion from rendering each view with `fused` labels substituted
/// for the mesh labels, compared against the ground-truth label image.
pub fn reprojected_confusion(
    mesh: &TriangleMesh,
    fused: &[ClassId],
    views: &[VirtualView],
    policy: UnobservedPolicy,
) -> Result<ConfusionMatrix> {
    if views.is_empty() {
        return Err(Error::NoSamples);
    }
    if fused.len() != mesh.vertex_count() {
        return Err(Error::Shape(format!(
            "{} fused labels for {} vertices",
            fused.len(),
            mesh.vertex_count()
        )));
    }
    let bounds = mesh.scene_bounds()?;
    let mut cm = ConfusionMatrix::new(mesh.class_count);
    for view in views {
        let r = render_with_bounds(mesh, view, &bounds);
        let pred: Vec<ClassId> = r
            .label_vertex
            .iter()
            .map(|&v| if v == NO_VERTEX { BACKGROUND } else { fused[v as usize] })
            .collect();
        accumulate_confusion(&mut cm, &pred, &r.label, &DEFAULT_IGNORE, policy)?;
    }
    Ok(cm)
}

pub fn reprojected_2d_miou(
    mesh: &TriangleMesh,
    fused: &[ClassId],
    views: &[VirtualView],
    policy: UnobservedPolicy,
) -> Result<Miou> {
    miou(&reprojected_confusion(mesh, fused, views, policy)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: usize,
    pub name: String,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub policy: UnobservedPolicy,
    pub mean_iou: f64,
    pub evaluated: u64,
    pub ignored: u64,
    pub classes: Vec<ClassIou>,
}

pub fn metric_report(cm: &ConfusionMatrix, names: &[String], policy: UnobservedPolicy) -> Result<MetricReport> {
    let m = miou(cm)?;
    Ok(MetricReport {
        policy,
        mean_iou: m.mean,
        evaluated: cm.evaluated(),
        ignored: cm.ignored,
        classes: m
            .per_class
            .iter()
            .enumerate()
            .map(|(class, &iou)| ClassIou {
                class,
                name: class_name(names, class),
                iou,
            })
            .collect(),
    })
}
