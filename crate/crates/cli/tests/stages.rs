use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vfusion_cli::manifest::read_manifest;
use vfusion_cli::pipeline::{self, RenderSummary, SelectSummary};
use vfusion_cli::LoadedConfig;
use vfusion_core::bundle::read_bundle;
use vfusion_core::fusion::Reduction;
use vfusion_core::ply::{save_mesh, PlyFormat, DEFAULT_LABEL_PROPERTY};
use vfusion_core::segmenter::{decode_probability_map, probability_file_name};
use vfusion_core::synthetic::labeled_room;
use vfusion_core::{is_class, UNOBSERVED};

const SMALL: &str = "[views]\nwidth = 96\nheight = 72\n";

struct Scene {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Scene {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        save_mesh(&labeled_room(), dir.join("room.ply"), DEFAULT_LABEL_PROPERTY, PlyFormat::BinaryLittleEndian)
            .unwrap();
        Self { _tmp: tmp, dir }
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let path = self.dir.join(name);
        fs::write(&path, format!("{body}\n[mesh]\npath = \"room.ply\"\n")).unwrap();
        path
    }

    fn load(&self, name: &str, body: &str) -> LoadedConfig {
        LoadedConfig::load(&self.config(name, body)).unwrap()
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.join(p)
    }
}

fn vfusion(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfusion")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_through_render(scene: &Scene, cfg: &LoadedConfig) {
    pipeline::select_views(cfg, &scene.path("views")).unwrap();
    pipeline::render(cfg, &scene.path("views"), &scene.path("bundles")).unwrap();
}

#[test]
fn view_count_is_the_sum_of_strategy_budgets() {
    let scene = Scene::new();
    let cfg = scene.load(
        "c.toml",
        &format!(
            "{SMALL}[views.uniform_topdown]\nbudget = 25\n[views.uniform_center]\nbudget = 10\n\
             [views.scale_invariant]\nbudget = 6\npullback_distances = [0.75, 1.5, 3.0]\n[views.class_balanced]\nbudget = 0\n"
        ),
    );
    let m = pipeline::select_views(&cfg, &scene.path("views")).unwrap();
    let s: SelectSummary = m.summary_as().unwrap();
    let si = &s.scale_invariant;
    assert_eq!(si.candidates, (6 - si.skipped_degenerate) * 3);
    assert_eq!(si.kept + si.dropped_by_depth + si.dropped_by_ray, si.candidates);
    assert_eq!(s.view_count, 25 + 10 + si.kept);
    assert_eq!(s.views_by_source["uniform_topdown"], 25);
    assert_eq!(s.views_by_source["uniform_center"], 10);
    let lines = fs::read_to_string(scene.path("views/views.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), s.view_count);
}

#[test]
fn inference_rejects_class_balanced_views() {
    let scene = Scene::new();
    let config = scene.config("c.toml", "stage = \"inference\"\n[views.class_balanced]\nbudget = 5\n");
    let out = vfusion(&[Path::new("select-views"), Path::new("--config"), &config]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error[stage_rule]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!scene.path("out/views").exists());
}

#[test]
fn missing_mesh_is_named() {
    let scene = Scene::new();
    let config = scene.dir.join("c.toml");
    fs::write(&config, "[mesh]\npath = \"no_such_room.ply\"\n").unwrap();
    for cmd in ["select-views", "render", "fuse"] {
        let out = vfusion(&[Path::new(cmd), Path::new("--config"), &config]);
        assert!(!out.status.success());
        let err = stderr(&out);
        assert!(err.starts_with("error[io]:") && err.contains("no_such_room.ply"), "{cmd}: {err}");
    }
}

#[test]
fn render_writes_one_bundle_per_view_with_all_channels() {
    let scene = Scene::new();
    let cfg = scene.load("c.toml", SMALL);
    run_through_render(&scene, &cfg);
    let views = fs::read_to_string(scene.path("views/views.jsonl")).unwrap().lines().count();
    let m = read_manifest(&scene.path("bundles")).unwrap();
    let s: RenderSummary = m.summary_as().unwrap();
    assert_eq!(s.bundles.len(), views);
    let dirs = fs::read_dir(scene.path("bundles")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, views);
    for b in &s.bundles {
        let names: Vec<&str> = b.channels.iter().map(|c| c.name.as_str()).collect();
        for ch in ["color", "label", "depth", "normal", "coords"] {
            assert!(names.contains(&ch), "{names:?}");
        }
        for c in &b.channels {
            assert!(m.outputs.contains_key(&format!("{}/{}", b.directory, c.file)));
        }
    }

    // A second render is bit-identical.
    pipeline::render(&cfg, &scene.path("views"), &scene.path("bundles2")).unwrap();
    let again = read_manifest(&scene.path("bundles2")).unwrap();
    assert_eq!(m.outputs, again.outputs);
}

#[test]
fn oracle_probabilities_reproduce_label_images() {
    let scene = Scene::new();
    let cfg = scene.load("c.toml", SMALL);
    run_through_render(&scene, &cfg);
    pipeline::segment(&cfg, &scene.path("bundles"), &scene.path("probs")).unwrap();
    let s: RenderSummary = read_manifest(&scene.path("bundles")).unwrap().summary_as().unwrap();
    let mut labeled = 0;
    for b in &s.bundles {
        let r = read_bundle(&scene.path("bundles"), b).unwrap();
        let bytes = fs::read(scene.path("probs").join(probability_file_name(r.view_id))).unwrap();
        let map = decode_probability_map(&bytes).unwrap();
        for (idx, &l) in r.label.iter().enumerate() {
            if is_class(l) {
                labeled += 1;
                assert_eq!(map.argmax(idx), Some(l));
            } else {
                assert_eq!(map.argmax(idx), None);
            }
        }
    }
    assert!(labeled > 0);
}

#[test]
fn noisy_segmentation_is_reproducible() {
    let scene = Scene::new();
    let cfg = scene.load("c.toml", &format!("{SMALL}[segmenter]\nkind = \"noisy_oracle\"\nflip_rate = 0.3\n"));
    run_through_render(&scene, &cfg);
    let a = pipeline::segment(&cfg, &scene.path("bundles"), &scene.path("p1")).unwrap();
    let b = pipeline::segment(&cfg, &scene.path("bundles"), &scene.path("p2")).unwrap();
    assert_eq!(a.outputs, b.outputs);
    let other = scene.load("d.toml", &format!("seed = 1\n{SMALL}[segmenter]\nkind = \"noisy_oracle\"\nflip_rate = 0.3\n"));
    let c = pipeline::segment(&other, &scene.path("bundles"), &scene.path("p3")).unwrap();
    assert_ne!(a.outputs, c.outputs);
}

#[test]
fn external_segmenter_lists_missing_views() {
    let scene = Scene::new();
    let cfg = scene.load("c.toml", SMALL);
    run_through_render(&scene, &cfg);
    pipeline::segment(&cfg, &scene.path("bundles"), &scene.path("probs")).unwrap();
    fs::remove_file(scene.path("probs").join(probability_file_name(1))).unwrap();
    fs::remove_file(scene.path("probs").join(probability_file_name(4))).unwrap();
    let config = scene.config("ext.toml", &format!("{SMALL}[segmenter]\nkind = \"external\"\ndir = \"probs\"\n"));
    let out = vfusion(&[
        Path::new("segment"),
        Path::new("--config"),
        &config,
        Path::new("--input"),
        &scene.path("bundles"),
        Path::new("--output"),
        &scene.path("probs_ext"),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error[missing_views]:") && err.contains("[1, 4]"), "{err}");
}

#[test]
fn zero_views_leave_every_vertex_unobserved() {
    let scene = Scene::new();
    let cfg = scene.load(
        "c.toml",
        "[views.uniform_topdown]\nbudget = 0\n[views.uniform_center]\nbudget = 0\n[views.scale_invariant]\nbudget = 0\n",
    );
    run_through_render(&scene, &cfg);
    pipeline::segment(&cfg, &scene.path("bundles"), &scene.path("probs")).unwrap();
    pipeline::fuse(&cfg, &scene.path("bundles"), &scene.path("probs"), &scene.path("fused")).unwrap();
    let report = pipeline::read_fusion_report(&scene.path("fused")).unwrap();
    assert_eq!(report.view_count, 0);
    assert_eq!(report.coverage, 0.0);
    assert_eq!(report.observed_vertices, 0);
    let labels = pipeline::read_fused_labels(&scene.path("fused/fused.ply"), DEFAULT_LABEL_PROPERTY).unwrap();
    assert!(labels.iter().all(|&l| l == UNOBSERVED));
}

#[test]
fn max_probability_mode_is_reported() {
    let scene = Scene::new();
    let cfg = scene.load("c.toml", &format!("{SMALL}[fusion]\nreduction = \"max_probability\"\n"));
    run_through_render(&scene, &cfg);
    pipeline::segment(&cfg, &scene.path("bundles"), &scene.path("probs")).unwrap();
    pipeline::fuse(&cfg, &scene.path("bundles"), &scene.path("probs"), &scene.path("fused")).unwrap();
    let report = pipeline::read_fusion_report(&scene.path("fused")).unwrap();
    assert_eq!(report.reduction, Reduction::MaxProbability);
    let text = fs::read_to_string(scene.path("fused/fusion_report.json")).unwrap();
    assert!(text.contains("\"max_probability\""));
}

#[test]
fn ground_truth_scores_perfectly() {
    let scene = Scene::new();
    let cfg = scene.load("c.toml", SMALL);
    pipeline::select_views(&cfg, &scene.path("views")).unwrap();
    pipeline::eval(&cfg, &scene.path("room.ply"), Some(&scene.path("views")), &scene.path("eval")).unwrap();
    let r = pipeline::read_eval_report(&scene.path("eval")).unwrap();
    assert_eq!(r.vertex_miou.mean_iou, 1.0);
    assert_eq!(r.reprojected_miou.unwrap().mean_iou, 1.0);
    assert_eq!(r.coverage, 1.0);
}

#[test]
fn missing_fused_mesh_fails_eval() {
    let scene = Scene::new();
    let config = scene.config("c.toml", "");
    let out = vfusion(&[Path::new("eval"), Path::new("--config"), &config, Path::new("--input"), &scene.path("nowhere.ply")]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error[io]:"));
}

#[test]
fn fov_sweep_gives_comparable_reports() {
    let scene = Scene::new();
    let mut reports = Vec::new();
    for fov in [60, 120] {
        let name = format!("fov{fov}");
        let cfg = scene.load(
            &format!("{name}.toml"),
            &format!("output_dir = \"{name}\"\n[views]\nwidth = 96\nheight = 72\nhorizontal_fov_deg = {fov}\n"),
        );
        let d = |s: &str| cfg.stage_dir(s);
        pipeline::select_views(&cfg, &d("views")).unwrap();
        pipeline::render(&cfg, &d("views"), &d("bundles")).unwrap();
        pipeline::segment(&cfg, &d("bundles"), &d("probs")).unwrap();
        pipeline::fuse(&cfg, &d("bundles"), &d("probs"), &d("fused")).unwrap();
        let m = pipeline::eval(&cfg, &d("fused"), Some(&d("views")), &d("eval")).unwrap();
        reports.push((m.config_hash, pipeline::read_eval_report(&d("eval")).unwrap()));
    }
    let (narrow, wide) = (&reports[0], &reports[1]);
    assert_ne!(narrow.0, wide.0);
    assert_eq!(narrow.1.vertex_count, wide.1.vertex_count);
    assert_eq!(narrow.1.vertex_miou.classes.len(), wide.1.vertex_miou.classes.len());
    assert!(wide.1.coverage >= narrow.1.coverage);
}

#[test]
fn export_mesh_round_trips_labels() {
    let scene = Scene::new();
    let config = scene.config("c.toml", "");
    let out = vfusion(&[
        Path::new("export-mesh"),
        Path::new("--config"),
        &config,
        Path::new("--input"),
        &scene.path("room.ply"),
        Path::new("--output"),
        &scene.path("export/room_ascii.ply"),
        Path::new("--format"),
        Path::new("ascii"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(scene.path("export/room_ascii.ply")).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\n"));
    let a = vfusion_core::ply::load_mesh(scene.path("room.ply"), DEFAULT_LABEL_PROPERTY).unwrap();
    let b = vfusion_core::ply::load_mesh(scene.path("export/room_ascii.ply"), DEFAULT_LABEL_PROPERTY).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.faces, b.faces);
}

#[test]
fn bad_config_is_a_single_line_error() {
    let scene = Scene::new();
    let config = scene.config("c.toml", "[views]\nfov = 3\n");
    let out = vfusion(&[Path::new("select-views"), Path::new("--config"), &config]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}
