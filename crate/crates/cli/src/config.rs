//! Pipeline configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vfusion_core::eval::UnobservedPolicy;
use vfusion_core::fusion::{FusionConfig, Reduction, DEFAULT_DEPTH_TOLERANCE};
use vfusion_core::mesh::SceneBounds;
use vfusion_core::ply::DEFAULT_LABEL_PROPERTY;
use vfusion_core::render::RenderParams;
use vfusion_core::segment::{DEFAULT_MIN_FACES, DEFAULT_NORMAL_THRESHOLD};
use vfusion_core::views::{SamplerConfig, Stage, StrategyMix, DEFAULT_HEIGHT, DEFAULT_PULLBACKS, DEFAULT_WIDTH};
use vfusion_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stage")]
    pub stage: Stage,
    /// Root for stage outputs when `--output` is not given. Not hashed.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub mesh: MeshConfig,
    #[serde(default)]
    pub classes: ClassConfig,
    #[serde(default)]
    pub oversegment: OversegmentConfig,
    #[serde(default)]
    pub views: ViewsConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_stage() -> Stage {
    Stage::Training
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub path: PathBuf,
    #[serde(default = "default_label_property")]
    pub label_property: String,
}

fn default_label_property() -> String {
    DEFAULT_LABEL_PROPERTY.to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassConfig {
    /// Defaults to the mesh's label range.
    pub count: Option<usize>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OversegmentConfig {
    pub normal_threshold: f64,
    pub min_faces: usize,
}

impl Default for OversegmentConfig {
    fn default() -> Self {
        Self {
            normal_threshold: DEFAULT_NORMAL_THRESHOLD,
            min_faces: DEFAULT_MIN_FACES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewsConfig {
    pub horizontal_fov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub occlusion_tolerance: f64,
    pub uniform_topdown: TopdownConfig,
    pub uniform_center: CenterConfig,
    pub scale_invariant: ScaleInvariantConfig,
    pub class_balanced: ClassBalancedConfig,
    pub original: Option<OriginalConfig>,
}

impl Default for ViewsConfig {
    fn default() -> Self {
        Self {
            horizontal_fov_deg: 120.0,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            occlusion_tolerance: 0.05,
            uniform_topdown: TopdownConfig::default(),
            uniform_center: CenterConfig::default(),
            scale_invariant: ScaleInvariantConfig::default(),
            class_balanced: ClassBalancedConfig::default(),
            original: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopdownConfig {
    /// Maximum number of grid views kept; 0 disables the strategy.
    pub budget: usize,
    pub spacing: f64,
    pub clearance: f64,
}

impl Default for TopdownConfig {
    fn default() -> Self {
        Self {
            budget: 25,
            spacing: 1.0,
            clearance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CenterConfig {
    pub budget: usize,
    pub inflation: f64,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self {
            budget: 10,
            inflation: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleInvariantConfig {
    /// Number of segments sampled; each yields one candidate per distance.
    pub budget: usize,
    pub pullback_distances: Vec<f64>,
}

impl Default for ScaleInvariantConfig {
    fn default() -> Self {
        Self {
            budget: 6,
            pullback_distances: DEFAULT_PULLBACKS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassBalancedConfig {
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginalConfig {
    pub trajectory: PathBuf,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub backface_culling: bool,
    /// Defaults to 0.01.
    pub z_near: Option<f64>,
    /// Defaults to twice the scene diagonal.
    pub z_far: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            backface_culling: true,
            z_near: None,
            z_far: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterConfig {
    #[default]
    Oracle,
    NoisyOracle {
        flip_rate: f64,
        #[serde(default)]
        smoothing: f64,
    },
    /// Probability files produced elsewhere.
    External { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub depth_tolerance: f64,
    pub reduction: Reduction,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            depth_tolerance: DEFAULT_DEPTH_TOLERANCE,
            reduction: Reduction::Average,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub unobserved: UnobservedPolicy,
}

/// A parsed config plus the directory relative paths are resolved against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Checks ranges and the stage rule. Paths are checked when used.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.views.class_balanced.budget > 0 && self.stage == Stage::Inference {
            return Err(Error::StageRule(
                "class-balanced sampling is only allowed at the training stage".into(),
            ));
        }
        if !(self.views.horizontal_fov_deg > 0.0 && self.views.horizontal_fov_deg < 180.0) {
            return bad(format!(
                "horizontal_fov_deg must be in (0, 180), got {}",
                self.views.horizontal_fov_deg
            ));
        }
        if let Some(c) = self.classes.count {
            if c == 0 || c > vfusion_core::MAX_CLASSES {
                return bad(format!("class count {c} out of range"));
            }
            if self.classes.names.len() > c {
                return bad(format!("{} class names for {c} classes", self.classes.names.len()));
            }
        }
        if !(self.oversegment.normal_threshold >= 0.0) {
            return bad(format!("normal_threshold must be non-negative, got {}", self.oversegment.normal_threshold));
        }
        if let SegmenterConfig::NoisyOracle { flip_rate, smoothing } = self.segmenter {
            if !(0.0..1.0).contains(&flip_rate) || !(0.0..1.0).contains(&smoothing) {
                return bad(format!(
                    "noisy oracle needs 0 <= flip_rate < 1 and 0 <= smoothing < 1, got {flip_rate} and {smoothing}"
                ));
            }
        }
        if let Some(o) = &self.views.original {
            if o.stride == 0 {
                return bad("original view stride must be at least 1".into());
            }
        }
        self.fusion_config().validate()?;
        self.sampler_config().validate()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let v = &self.views;
        SamplerConfig {
            horizontal_fov: v.horizontal_fov_deg.to_radians(),
            width: v.width,
            height: v.height,
            topdown_spacing: v.uniform_topdown.spacing,
            topdown_clearance: v.uniform_topdown.clearance,
            center_view_count: v.uniform_center.budget,
            center_inflation: v.uniform_center.inflation,
            segment_budget: Some(v.scale_invariant.budget),
            pullback_distances: v.scale_invariant.pullback_distances.clone(),
            occlusion_tolerance: v.occlusion_tolerance,
            class_balance_target_count: v.class_balanced.budget,
        }
    }

    /// Strategy switches; `original` is resolved against `base_dir`.
    pub fn strategy_mix(&self, base_dir: &Path) -> StrategyMix {
        let v = &self.views;
        StrategyMix {
            uniform_topdown: v.uniform_topdown.budget > 0,
            uniform_center: v.uniform_center.budget > 0,
            scale_invariant: v.scale_invariant.budget > 0,
            class_balanced: v.class_balanced.budget > 0,
            original: v
                .original
                .as_ref()
                .map(|o| (base_dir.join(&o.trajectory), o.stride)),
        }
    }

    pub fn render_params(&self, bounds: &SceneBounds) -> RenderParams {
        let auto = RenderParams::for_bounds(bounds, self.render.backface_culling);
        RenderParams {
            backface_culling: self.render.backface_culling,
            z_near: self.render.z_near.unwrap_or(auto.z_near),
            z_far: self.render.z_far.unwrap_or(auto.z_far),
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            depth_tolerance: self.fusion.depth_tolerance,
            reduction: self.fusion.reduction,
        }
    }

    /// The config as JSON with defaults filled in and `output_dir` removed.
    /// Keys are sorted, so equal configs serialize identically.
    pub fn canonical_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        value
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical_json()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = PipelineConfig::from_toml(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn mesh_path(&self) -> PathBuf {
        self.resolve(&self.config.mesh.path)
    }

    /// Default directory for a stage's output when no flag is given.
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.resolve(&self.config.output_dir).join(stage)
    }
}
