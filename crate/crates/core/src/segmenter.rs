//! Per-pixel class-probability sources and the probability file format.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::render::RenderedView;
use crate::view::VirtualView;
use crate::{is_class, ClassId, Error, Result};

pub const PROB_MAGIC: &[u8; 8] = b"VFPROB01";

/// Tolerance within which a pixel sum is accepted and renormalized.
pub const RENORMALIZE_TOLERANCE: f32 = 1e-3;

/// Class probabilities for one view, row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(view_id: u32, width: u32, height: u32, classes: usize) -> Self {
        Self {
            view_id,
            width,
            height,
            classes,
            data: vec![0.0; width as usize * height as usize * classes],
        }
    }

    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.classes..(idx + 1) * self.classes]
    }

    pub fn pixel_mut(&mut self, idx: usize) -> &mut [f32] {
        &mut self.data[idx * self.classes..(idx + 1) * self.classes]
    }

    /// Index of the largest entry, ties to the smallest class; `None` for zero pixels.
    pub fn argmax(&self, idx: usize) -> Option<ClassId> {
        let p = self.pixel(idx);
        let mut best: Option<(usize, f32)> = None;
        for (c, &v) in p.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        best.map(|(c, _)| c as ClassId)
    }
}

fn check_classes(classes: usize) -> Result<()> {
    if classes == 0 || classes > crate::MAX_CLASSES {
        return Err(Error::InvalidParameter(format!("class count {classes} out of range")));
    }
    Ok(())
}

fn true_label(label: ClassId, classes: usize, idx: usize, width: u32) -> Result<Option<usize>> {
    if !is_class(label) {
        return Ok(None);
    }
    if label as usize >= classes {
        return Err(Error::Validation(format!(
            "pixel ({}, {}) has label {label} but class count is {classes}",
            idx % width as usize,
            idx / width as usize
        )));
    }
    Ok(Some(label as usize))
}

/// One-hot maps from the rendered label channel.
pub fn oracle_segment(rendered: &RenderedView, classes: usize) -> Result<FeatureMap> {
    noisy_oracle_segment(rendered, classes, 0.0, 0.0, 0)
}

/// Oracle labels flipped with probability `flip_rate` to a uniformly random
/// wrong class, emitted as `(1 - smoothing) * onehot + smoothing / C`.
///
/// Random draws happen only at labeled pixels, in row-major order.
pub fn noisy_oracle_segment(
    rendered: &RenderedView,
    classes: usize,
    flip_rate: f64,
    smoothing: f64,
    seed: u64,
) -> Result<FeatureMap> {
    check_classes(classes)?;
    if !(0.0..1.0).contains(&flip_rate) || !(0.0..1.0).contains(&smoothing) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= flip rate < 1 and 0 <= smoothing < 1, got {flip_rate} and {smoothing}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FeatureMap::zeros(rendered.view_id, rendered.width(), rendered.height(), classes);
    let floor = (smoothing / classes as f64) as f32;
    let peak = (1.0 - smoothing + smoothing / classes as f64) as f32;
    for (idx, &label) in rendered.label.iter().enumerate() {
        let Some(mut c) = true_label(label, classes, idx, rendered.width())? else {
            continue;
        };
        if flip_rate > 0.0 && classes > 1 && rng.gen_bool(flip_rate) {
            let r = rng.gen_range(0..classes - 1);
            c = if r >= c { r + 1 } else { r };
        }
        let p = out.pixel_mut(idx);
        p.fill(floor);
        p[c] = peak;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbHeader {
    view_id: u32,
    height: u32,
    width: u32,
    classes: usize,
    dtype: String,
    layout: String,
}

pub fn probability_file_name(view_id: u32) -> String {
    format!("view_{view_id:06}.prob")
}

pub fn encode_probability_map(map: &FeatureMap) -> Vec<u8> {
    let header = ProbHeader {
        view_id: map.view_id,
        height: map.height,
        width: map.width,
        classes: map.classes,
        dtype: "float32".into(),
        layout: "HWC".into(),
    };
    let mut out = Vec::with_capacity(64 + map.data.len() * 4);
    out.extend_from_slice(PROB_MAGIC);
    out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
    out.push(b'\n');
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Writes `dir/view_XXXXXX.prob`.
pub fn write_probability_map(dir: &Path, map: &FeatureMap) -> Result<PathBuf> {
    let path = dir.join(probability_file_name(map.view_id));
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&encode_probability_map(map)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parses a probability file without normalization checks.
pub fn decode_probability_map(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 8 || &bytes[..8] != PROB_MAGIC {
        return Err(Error::Parse { offset: 0, message: "bad probability file magic".into() });
    }
    let nl = bytes[8..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse { offset: 8, message: "unterminated header".into() })?;
    let header: ProbHeader = serde_json::from_slice(&bytes[8..8 + nl])
        .map_err(|e| Error::Parse { offset: 8, message: format!("header: {e}") })?;
    if header.dtype != "float32" || header.layout != "HWC" {
        return Err(Error::Parse {
            offset: 8,
            message: format!("unsupported dtype/layout {}/{}", header.dtype, header.layout),
        });
    }
    let payload = &bytes[9 + nl..];
    let n = header.height as usize * header.width as usize * header.classes;
    if payload.len() != n * 4 {
        return Err(Error::Shape(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            n * 4
        )));
    }
    Ok(FeatureMap {
        view_id: header.view_id,
        width: header.width,
        height: header.height,
        classes: header.classes,
        data: payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    })
}

/// Checks each pixel: all-zero, or non-negative with a sum within
/// [`RENORMALIZE_TOLERANCE`] of one (then rescaled to sum to one).
pub fn normalize_map(map: &mut FeatureMap) -> Result<()> {
    let (w, view_id) = (map.width as usize, map.view_id);
    for idx in 0..(map.width as usize * map.height as usize) {
        let p = map.pixel_mut(idx);
        if p.iter().all(|&v| v == 0.0) {
            continue;
        }
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        let negative = p.iter().any(|&v| v < 0.0 || !v.is_finite());
        if negative || (sum - 1.0).abs() > RENORMALIZE_TOLERANCE as f64 {
            return Err(Error::NotNormalizable {
                view_id,
                x: (idx % w) as u32,
                y: (idx / w) as u32,
                sum,
            });
        }
        for v in p.iter_mut() {
            *v = (*v as f64 / sum) as f32;
        }
    }
    Ok(())
}

/// Loads and validates one probability file per view from `dir`.
pub fn load_probability_maps(dir: &Path, views: &[VirtualView], classes: usize) -> Result<Vec<FeatureMap>> {
    let missing: BTreeSet<u32> = views
        .iter()
        .filter(|v| !dir.join(probability_file_name(v.id)).is_file())
        .map(|v| v.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingViews(missing.into_iter().collect()));
    }
    views
        .iter()
        .map(|v| {
            let path = dir.join(probability_file_name(v.id));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let mut map = decode_probability_map(&bytes)?;
            let (w, h) = (v.intrinsics.width, v.intrinsics.height);
            if map.view_id != v.id || map.width != w || map.height != h || map.classes != classes {
                return Err(Error::Shape(format!(
                    "{}: holds view {} as HxWxC {}x{}x{}, expected view {} as {h}x{w}x{classes}",
                    path.display(),
                    map.view_id,
                    map.height,
                    map.width,
                    map.classes,
                    v.id,
                )));
            }
            normalize_map(&mut map)?;
            Ok(map)
        })
        .collect()
}
