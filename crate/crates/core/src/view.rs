//! Virtual views and the line-delimited view record format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraExtrinsics, CameraIntrinsics};
use crate::render::RenderParams;
use crate::{Error, Result};

/// Which sampler produced a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    UniformTopdown,
    UniformCenter,
    ScaleInvariant,
    ClassBalanced,
    Original,
}

impl ViewSource {
    pub const ALL: [ViewSource; 5] = [
        ViewSource::UniformTopdown,
        ViewSource::UniformCenter,
        ViewSource::ScaleInvariant,
        ViewSource::ClassBalanced,
        ViewSource::Original,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ViewSource::UniformTopdown => "uniform_topdown",
            ViewSource::UniformCenter => "uniform_center",
            ViewSource::ScaleInvariant => "scale_invariant",
            ViewSource::ClassBalanced => "class_balanced",
            ViewSource::Original => "original",
        }
    }
}

impl fmt::Display for ViewSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ViewSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewSource::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown view source '{s}'")))
    }
}

/// A camera plus render settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualView {
    pub id: u32,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub params: RenderParams,
    pub source: ViewSource,
}

impl VirtualView {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.extrinsics.validate()?;
        self.params.validate()
    }

    pub fn record(&self) -> ViewRecord {
        let r = &self.extrinsics.rotation;
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let t = &self.extrinsics.translation;
        ViewRecord {
            id: self.id,
            width: self.intrinsics.width,
            height: self.intrinsics.height,
            fx: self.intrinsics.fx,
            fy: self.intrinsics.fy,
            cx: self.intrinsics.cx,
            cy: self.intrinsics.cy,
            rotation,
            translation: [t.x, t.y, t.z],
            backface_culling: self.params.backface_culling,
            source: self.source,
        }
    }
}

/// One line of a view file. Rotation is row-major world-to-camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub backface_culling: bool,
    pub source: ViewSource,
}

impl ViewRecord {
    /// Builds a view; the depth range comes from `params`, culling from the record.
    pub fn to_view(&self, params: &RenderParams) -> Result<VirtualView> {
        let intrinsics =
            CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let extrinsics = CameraExtrinsics::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
        )?;
        Ok(VirtualView {
            id: self.id,
            intrinsics,
            extrinsics,
            params: RenderParams {
                backface_culling: self.backface_culling,
                ..*params
            },
            source: self.source,
        })
    }
}

pub fn format_view_records(views: &[VirtualView]) -> String {
    let mut out = String::new();
    for v in views {
        out.push_str(&serde_json::to_string(&v.record()).expect("view record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_view_file(path: impl AsRef<Path>, views: &[VirtualView]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_view_records(views)).map_err(|e| Error::io(path, e))
}

/// Parses view records; blank lines are skipped, line numbers are 1-based.
pub fn parse_view_records(text: &str) -> Result<Vec<ViewRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ViewRecord = serde_json::from_str(line).map_err(|e| Error::ParseLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_view_records(path: impl AsRef<Path>) -> Result<Vec<ViewRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_view_records(&text)
}

/// Reads a view file and validates every record.
pub fn read_view_file(path: impl AsRef<Path>, params: &RenderParams) -> Result<Vec<VirtualView>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut views = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |message: String| Error::ParseLine { line: i + 1, message };
        let rec: ViewRecord = serde_json::from_str(line).map_err(|e| at_line(e.to_string()))?;
        views.push(rec.to_view(params).map_err(|e| at_line(e.to_string()))?);
    }
    Ok(views)
}
