//! Stage commands. Each reads only its declared inputs and writes one
//! directory with its artifacts and a `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vfusion_core::bundle::{read_bundle, write_bundle, BundleEntry};
use vfusion_core::eval::{
    accumulate_confusion, covered_accuracy, metric_report, reprojected_confusion, ConfusionMatrix,
    MetricReport, DEFAULT_IGNORE,
};
use vfusion_core::fusion::{
    accumulate_view, default_palette, export_labeled_mesh, finalize, fusion_report, Accumulator,
    FusionReport,
};
use vfusion_core::mesh::TriangleMesh;
use vfusion_core::ply::{load_mesh, save_mesh, PlyFormat};
use vfusion_core::render::{render_with_bounds, RenderParams};
use vfusion_core::segment::oversegment;
use vfusion_core::segmenter::{
    load_probability_maps, noisy_oracle_segment, oracle_segment, probability_file_name,
    write_probability_map,
};
use vfusion_core::synthetic::{labeled_room, random_room};
use vfusion_core::view::{read_view_file, write_view_file, ViewSource, VirtualView};
use vfusion_core::views::{compose_view_set, ScaleInvariantReport, ViewSet};
use vfusion_core::{ClassId, Error, UNLABELED, UNOBSERVED};

use crate::config::{LoadedConfig, SegmenterConfig};
use crate::manifest::{hash_tree, read_manifest, sha256_bytes, sha256_file, write_manifest, Manifest};

pub const VIEWS_FILE: &str = "views.jsonl";
pub const FUSED_MESH_FILE: &str = "fused.ply";
pub const FUSED_PROBS_FILE: &str = "probabilities.f32";
pub const FUSION_REPORT_FILE: &str = "fusion_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn manifest(
    cfg: &LoadedConfig,
    command: &str,
    inputs: BTreeMap<String, String>,
    output_dir: &Path,
    summary: impl Serialize,
) -> anyhow::Result<Manifest> {
    let m = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.config.hash(),
        config: cfg.config.canonical_json(),
        inputs,
        outputs: hash_tree(output_dir)?,
        summary: serde_json::to_value(summary)?,
    };
    write_manifest(output_dir, &m)?;
    Ok(m)
}

/// Loads the configured mesh and applies the configured class count.
pub fn load_config_mesh(cfg: &LoadedConfig) -> anyhow::Result<(TriangleMesh, String)> {
    let path = cfg.mesh_path();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut mesh = vfusion_core::ply::parse_mesh(&bytes, &cfg.config.mesh.label_property)
        .with_context(|| format!("loading {}", path.display()))?;
    if let Some(c) = cfg.config.classes.count {
        mesh.set_class_count(c)
            .with_context(|| format!("applying class count to {}", path.display()))?;
    }
    Ok((mesh, sha256_bytes(&bytes)))
}

fn render_params(cfg: &LoadedConfig, mesh: &TriangleMesh) -> anyhow::Result<RenderParams> {
    let params = cfg.config.render_params(&mesh.scene_bounds()?);
    params.validate()?;
    Ok(params)
}

/// Keeps `budget` evenly spaced members of the topdown grid.
fn trim_topdown(set: &mut ViewSet, budget: usize) {
    let grid: Vec<usize> = (0..set.views.len())
        .filter(|&i| set.views[i].source == ViewSource::UniformTopdown)
        .collect();
    if grid.len() > budget {
        let keep: BTreeSet<usize> = (0..budget).map(|i| grid[i * grid.len() / budget]).collect();
        let mut i = 0;
        set.views.retain(|v| {
            let ok = v.source != ViewSource::UniformTopdown || keep.contains(&i);
            i += 1;
            ok
        });
    }
    for (i, v) in set.views.iter_mut().enumerate() {
        v.id = i as u32;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectSummary {
    pub view_count: usize,
    pub views_by_source: BTreeMap<String, usize>,
    pub segment_count: usize,
    pub scale_invariant: ScaleInvariantReport,
    pub render_params: RenderParams,
}

pub fn select_views(cfg: &LoadedConfig, output: &Path) -> anyhow::Result<Manifest> {
    let c = &cfg.config;
    let (mesh, mesh_hash) = load_config_mesh(cfg)?;
    let params = render_params(cfg, &mesh)?;
    let seg = oversegment(&mesh, c.oversegment.normal_threshold, c.oversegment.min_faces);
    let mut set = compose_view_set(
        &mesh,
        &seg,
        &c.sampler_config(),
        &c.strategy_mix(&cfg.base_dir),
        c.stage,
        &params,
        c.seed,
    )?;
    trim_topdown(&mut set, c.views.uniform_topdown.budget);

    create_dir(output)?;
    write_view_file(output.join(VIEWS_FILE), &set.views)?;
    let mut inputs = BTreeMap::from([("mesh".to_string(), mesh_hash)]);
    if let Some(o) = &c.views.original {
        inputs.insert("trajectory".into(), sha256_file(&cfg.resolve(&o.trajectory))?);
    }
    let summary = SelectSummary {
        view_count: set.views.len(),
        views_by_source: set
            .count_by_source()
            .into_iter()
            .map(|(s, n)| (s.tag().to_string(), n))
            .collect(),
        segment_count: seg.len(),
        scale_invariant: set.scale_invariant,
        render_params: params,
    };
    manifest(cfg, "select-views", inputs, output, summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSummary {
    pub view_count: usize,
    pub render_params: RenderParams,
    pub bundles: Vec<BundleEntry>,
}

pub fn render(cfg: &LoadedConfig, views_dir: &Path, output: &Path) -> anyhow::Result<Manifest> {
    let (mesh, mesh_hash) = load_config_mesh(cfg)?;
    let bounds = mesh.scene_bounds()?;
    let params = render_params(cfg, &mesh)?;
    let views_path = views_dir.join(VIEWS_FILE);
    let views = read_view_file(&views_path, &params)?;
    create_dir(output)?;
    let mut bundles = Vec::with_capacity(views.len());
    for view in &views {
        let rendered = render_with_bounds(&mesh, view, &bounds);
        bundles.push(write_bundle(output, view, &rendered)?);
    }
    let inputs = BTreeMap::from([
        ("mesh".to_string(), mesh_hash),
        ("views".to_string(), sha256_file(&views_path)?),
    ]);
    let summary = RenderSummary {
        view_count: views.len(),
        render_params: params,
        bundles,
    };
    manifest(cfg, "render", inputs, output, summary)
}

fn read_render_summary(bundles_dir: &Path) -> anyhow::Result<(RenderSummary, String)> {
    let m = read_manifest(bundles_dir)?;
    if m.command != "render" {
        return Err(Error::Validation(format!(
            "{} was written by '{}', expected a render manifest",
            bundles_dir.display(),
            m.command
        ))
        .into());
    }
    let hash = sha256_file(&bundles_dir.join(crate::manifest::MANIFEST_FILE))?;
    Ok((m.summary_as()?, hash))
}

fn bundle_views(summary: &RenderSummary) -> anyhow::Result<Vec<VirtualView>> {
    Ok(summary
        .bundles
        .iter()
        .map(BundleEntry::to_view)
        .collect::<Result<_, _>>()?)
}

fn class_count(cfg: &LoadedConfig) -> anyhow::Result<usize> {
    match cfg.config.classes.count {
        Some(c) => Ok(c),
        None => Ok(load_config_mesh(cfg)?.0.class_count),
    }
}

/// Per-view noise seed, independent of view order.
fn view_seed(seed: u64, view_id: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view_id as u64 + 1);
    rng.gen()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub segmenter: SegmenterConfig,
    pub classes: usize,
    pub view_count: usize,
}

pub fn segment(cfg: &LoadedConfig, bundles_dir: &Path, output: &Path) -> anyhow::Result<Manifest> {
    let classes = class_count(cfg)?;
    let (summary, render_hash) = read_render_summary(bundles_dir)?;
    create_dir(output)?;
    let mut inputs = BTreeMap::from([("render_manifest".to_string(), render_hash)]);
    match &cfg.config.segmenter {
        SegmenterConfig::External { dir } => {
            let dir = cfg.resolve(dir);
            let views = bundle_views(&summary)?;
            let maps = load_probability_maps(&dir, &views, classes)
                .with_context(|| format!("reading external probabilities from {}", dir.display()))?;
            for (view, map) in views.iter().zip(&maps) {
                inputs.insert(
                    format!("external/{}", probability_file_name(view.id)),
                    sha256_file(&dir.join(probability_file_name(view.id)))?,
                );
                write_probability_map(output, map)?;
            }
        }
        seg => {
            for entry in &summary.bundles {
                let rendered = read_bundle(bundles_dir, entry)?;
                let map = match *seg {
                    SegmenterConfig::NoisyOracle { flip_rate, smoothing } => noisy_oracle_segment(
                        &rendered,
                        classes,
                        flip_rate,
                        smoothing,
                        view_seed(cfg.config.seed, rendered.view_id),
                    )?,
                    _ => oracle_segment(&rendered, classes)?,
                };
                write_probability_map(output, &map)?;
            }
        }
    }
    let out = SegmentSummary {
        segmenter: cfg.config.segmenter.clone(),
        classes,
        view_count: summary.bundles.len(),
    };
    manifest(cfg, "segment", inputs, output, out)
}

pub fn fuse(cfg: &LoadedConfig, bundles_dir: &Path, probs_dir: &Path, output: &Path) -> anyhow::Result<Manifest> {
    let c = &cfg.config;
    let fusion_cfg = c.fusion_config();
    let (mesh, mesh_hash) = load_config_mesh(cfg)?;
    let classes = mesh.class_count;
    let (summary, render_hash) = read_render_summary(bundles_dir)?;
    let views = bundle_views(&summary)?;
    let missing: Vec<u32> = views
        .iter()
        .filter(|v| !probs_dir.join(probability_file_name(v.id)).is_file())
        .map(|v| v.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingViews(missing).into());
    }

    let mut inputs = BTreeMap::from([
        ("mesh".to_string(), mesh_hash),
        ("render_manifest".to_string(), render_hash),
    ]);
    let mut acc = Accumulator::new(mesh.vertex_count(), classes);
    for (entry, view) in summary.bundles.iter().zip(&views) {
        let name = probability_file_name(view.id);
        inputs.insert(format!("probs/{name}"), sha256_file(&probs_dir.join(&name))?);
        let maps = load_probability_maps(probs_dir, std::slice::from_ref(view), classes)?;
        let rendered = read_bundle(bundles_dir, entry)?;
        accumulate_view(&mesh, &rendered, &maps[0], &fusion_cfg, &mut acc)?;
    }
    let fused = finalize(&acc, fusion_cfg.reduction);

    create_dir(output)?;
    export_labeled_mesh(
        &mesh,
        &fused,
        &default_palette(classes),
        &output.join(FUSED_MESH_FILE),
        &c.mesh.label_property,
    )?;
    let probs: Vec<u8> = fused.probabilities.iter().flat_map(|p| p.to_le_bytes()).collect();
    let probs_path = output.join(FUSED_PROBS_FILE);
    fs::write(&probs_path, probs).map_err(|e| Error::io(&probs_path, e))?;
    let report = fusion_report(&fused, &fusion_cfg, &c.classes.names);
    write_json(&output.join(FUSION_REPORT_FILE), &report)?;
    manifest(cfg, "fuse", inputs, output, &report)
}

/// Fused labels from a fused mesh. `-1` (loaded as UNLABELED) means unobserved.
pub fn read_fused_labels(path: &Path, label_property: &str) -> anyhow::Result<Vec<ClassId>> {
    let mesh = load_mesh(path, label_property)?;
    Ok(mesh
        .labels
        .into_iter()
        .map(|l| if l == UNLABELED { UNOBSERVED } else { l })
        .collect())
}

/// Accepts either a fused mesh file or a directory holding `fused.ply`.
pub fn fused_mesh_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(FUSED_MESH_FILE)
    } else {
        input.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub vertex_count: usize,
    pub coverage: f64,
    pub covered_accuracy: Option<f64>,
    pub vertex_miou: MetricReport,
    /// Present when views were supplied.
    pub reprojected_miou: Option<MetricReport>,
}

pub fn eval(
    cfg: &LoadedConfig,
    fused_input: &Path,
    views_dir: Option<&Path>,
    output: &Path,
) -> anyhow::Result<Manifest> {
    let c = &cfg.config;
    let policy = c.eval.unobserved;
    let fused_path = fused_mesh_path(fused_input);
    let pred = read_fused_labels(&fused_path, &c.mesh.label_property)?;
    let (gt, gt_hash) = load_config_mesh(cfg)?;
    if pred.len() != gt.vertex_count() {
        return Err(Error::Shape(format!(
            "fused mesh has {} vertices, ground truth has {}",
            pred.len(),
            gt.vertex_count()
        ))
        .into());
    }
    let mut inputs = BTreeMap::from([
        ("fused_mesh".to_string(), sha256_file(&fused_path)?),
        ("mesh".to_string(), gt_hash),
    ]);
    let mut cm = ConfusionMatrix::new(gt.class_count);
    accumulate_confusion(&mut cm, &pred, &gt.labels, &DEFAULT_IGNORE, policy)?;
    let vertex_miou = metric_report(&cm, &c.classes.names, policy)?;

    let reprojected_miou = match views_dir {
        Some(dir) => {
            let path = dir.join(VIEWS_FILE);
            let views = read_view_file(&path, &render_params(cfg, &gt)?)?;
            inputs.insert("views".into(), sha256_file(&path)?);
            let cm2 = reprojected_confusion(&gt, &pred, &views, policy)?;
            Some(metric_report(&cm2, &c.classes.names, policy)?)
        }
        None => None,
    };
    let observed = pred.iter().filter(|&&l| l != UNOBSERVED).count();
    let report = EvalReport {
        vertex_count: pred.len(),
        coverage: if pred.is_empty() { 0.0 } else { observed as f64 / pred.len() as f64 },
        covered_accuracy: covered_accuracy(&pred, &gt.labels),
        vertex_miou,
        reprojected_miou,
    };
    create_dir(output)?;
    write_json(&output.join(EVAL_REPORT_FILE), &report)?;
    manifest(cfg, "eval", inputs, output, &report)
}

/// Rewrites a fused (or any labeled) mesh in the requested PLY encoding.
pub fn export_mesh(label_property: &str, input: &Path, output: &Path, format: PlyFormat) -> anyhow::Result<()> {
    let path = fused_mesh_path(input);
    let mesh = load_mesh(&path, label_property)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_mesh(&mesh, output, label_property, format)?;
    Ok(())
}

/// Writes a synthetic labeled scene: the fixed room, or a random room for `seed`.
pub fn synth_room(output: &Path, random_seed: Option<u64>, label_property: &str, format: PlyFormat) -> anyhow::Result<SceneSize> {
    let mesh = match random_seed {
        Some(s) => random_room(s).mesh,
        None => labeled_room(),
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_mesh(&mesh, output, label_property, format)?;
    Ok(SceneSize {
        vertices: mesh.vertex_count(),
        faces: mesh.face_count(),
        classes: mesh.class_count,
    })
}

/// Size of a generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SceneSize {
    pub vertices: usize,
    pub faces: usize,
    pub classes: usize,
}

pub fn read_fusion_report(dir: &Path) -> anyhow::Result<FusionReport> {
    let path = dir.join(FUSION_REPORT_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_eval_report(dir: &Path) -> anyhow::Result<EvalReport> {
    let path = dir.join(EVAL_REPORT_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
