//! File-based pipeline stages behind the `vfusion` command.
//!
//! Each stage reads the outputs of the previous one from disk, so any stage
//! can be rerun or replaced (for example, segmentation by an external model
//! that writes probability files).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::{LoadedConfig, PipelineConfig};
pub use manifest::Manifest;

/// Stable tag for an error chain, used as the `error[...]` prefix.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<vfusion_core::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<config::ConfigError>().is_some() {
            return "config";
        }
    }
    "internal"
}

/// The error chain on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    let flat: Vec<&str> = msg.split_whitespace().collect();
    format!("error[{}]: {}", error_kind(err), flat.join(" "))
}
