//! On-disk per-view render bundles.
//!
//! Each view is a directory `view_XXXXXX` holding `color.png` (8-bit RGB),
//! `label.png` (16-bit gray, sentinels kept verbatim) and raw little-endian
//! buffers `depth.f32`, `normal.f32`, `coords.f32`, `face.u32`, `vertex.u32`.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::render::{RenderParams, RenderedView};
use crate::view::{ViewRecord, VirtualView};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub name: String,
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

/// Manifest entry describing one written bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub view: ViewRecord,
    pub directory: String,
    pub z_near: f64,
    pub z_far: f64,
    pub channels: Vec<ChannelEntry>,
}

impl BundleEntry {
    pub fn to_view(&self) -> Result<VirtualView> {
        self.view.to_view(&RenderParams {
            backface_culling: self.view.backface_culling,
            z_near: self.z_near,
            z_far: self.z_far,
        })
    }
}

pub fn bundle_dir_name(view_id: u32) -> String {
    format!("view_{view_id:06}")
}

fn channel(name: &str, file: &str, dtype: &str, shape: &[usize]) -> ChannelEntry {
    ChannelEntry {
        name: name.into(),
        file: file.into(),
        dtype: dtype.into(),
        shape: shape.to_vec(),
    }
}

fn write_raw(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn f32_bytes<'a>(values: impl Iterator<Item = &'a f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes all channels of `rendered` under `root/view_XXXXXX/`.
pub fn write_bundle(root: &Path, view: &VirtualView, rendered: &RenderedView) -> Result<BundleEntry> {
    let (w, h) = (rendered.width(), rendered.height());
    let (wu, hu) = (w as usize, h as usize);
    let name = bundle_dir_name(view.id);
    let dir = root.join(&name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let color: Vec<u8> = rendered
        .color
        .iter()
        .flat_map(|c| c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, color)
        .expect("color buffer matches image size")
        .save(dir.join("color.png"))?;
    ImageBuffer::<Luma<u16>, _>::from_raw(w, h, rendered.label.clone())
        .expect("label buffer matches image size")
        .save(dir.join("label.png"))?;
    write_raw(&dir.join("depth.f32"), f32_bytes(rendered.depth.iter()))?;
    write_raw(&dir.join("normal.f32"), f32_bytes(rendered.normal.iter().flatten()))?;
    write_raw(&dir.join("coords.f32"), f32_bytes(rendered.coords.iter().flatten()))?;
    write_raw(
        &dir.join("face.u32"),
        rendered.face.iter().flat_map(|v| v.to_le_bytes()).collect(),
    )?;
    write_raw(
        &dir.join("vertex.u32"),
        rendered.label_vertex.iter().flat_map(|v| v.to_le_bytes()).collect(),
    )?;

    Ok(BundleEntry {
        view: view.record(),
        directory: name,
        z_near: rendered.params.z_near,
        z_far: rendered.params.z_far,
        channels: vec![
            channel("color", "color.png", "u8", &[hu, wu, 3]),
            channel("label", "label.png", "u16", &[hu, wu]),
            channel("depth", "depth.f32", "f32", &[hu, wu]),
            channel("normal", "normal.f32", "f32", &[hu, wu, 3]),
            channel("coords", "coords.f32", "f32", &[hu, wu, 3]),
            channel("face", "face.u32", "u32", &[hu, wu]),
            channel("vertex", "vertex.u32", "u32", &[hu, wu]),
        ],
    })
}

fn read_words(path: &Path, expected: usize) -> Result<Vec<[u8; 4]>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Shape(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    Ok(read_words(path, expected)?.into_iter().map(f32::from_le_bytes).collect())
}

fn read_u32(path: &Path, expected: usize) -> Result<Vec<u32>> {
    Ok(read_words(path, expected)?.into_iter().map(u32::from_le_bytes).collect())
}

fn triples(v: Vec<f32>) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Loads a bundle written by [`write_bundle`].
pub fn read_bundle(root: &Path, entry: &BundleEntry) -> Result<RenderedView> {
    let view = entry.to_view()?;
    let (w, h) = (view.intrinsics.width, view.intrinsics.height);
    let n = view.intrinsics.pixel_count();
    let dir = root.join(&entry.directory);

    let color_img = image::open(dir.join("color.png"))?.into_rgb8();
    let label_img = image::open(dir.join("label.png"))?.into_luma16();
    for (name, dims) in [("color", color_img.dimensions()), ("label", label_img.dimensions())] {
        if dims != (w, h) {
            return Err(Error::Shape(format!(
                "{}: {name} image is {}x{}, view is {w}x{h}",
                dir.display(),
                dims.0,
                dims.1
            )));
        }
    }
    let color = color_img
        .pixels()
        .map(|p| p.0.map(|c| c as f32 / 255.0))
        .collect();
    Ok(RenderedView {
        view_id: view.id,
        intrinsics: view.intrinsics,
        extrinsics: view.extrinsics,
        params: view.params,
        color,
        normal: triples(read_f32(&dir.join("normal.f32"), 3 * n)?),
        coords: triples(read_f32(&dir.join("coords.f32"), 3 * n)?),
        depth: read_f32(&dir.join("depth.f32"), n)?,
        label: label_img.into_raw(),
        face: read_u32(&dir.join("face.u32"), n)?,
        label_vertex: read_u32(&dir.join("vertex.u32"), n)?,
    })
}
