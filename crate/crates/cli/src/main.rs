use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vfusion_cli::pipeline;
use vfusion_cli::{error_line, LoadedConfig, Manifest};
use vfusion_core::ply::{PlyFormat, DEFAULT_LABEL_PROPERTY};

#[derive(Parser)]
#[command(name = "vfusion", version, about = "Virtual-view semantic fusion for labeled meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose virtual cameras and write views.jsonl.
    SelectViews {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to <output_dir>/views.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render every selected view into a bundle directory.
    Render {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding views.jsonl. Defaults to <output_dir>/views.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to <output_dir>/bundles.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write per-view class probability files.
    Segment {
        #[arg(long)]
        config: PathBuf,
        /// Bundle directory. Defaults to <output_dir>/bundles.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to <output_dir>/probs.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fuse probabilities onto mesh vertices.
    Fuse {
        #[arg(long)]
        config: PathBuf,
        /// Bundle directory. Defaults to <output_dir>/bundles.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Probability directory. Defaults to <output_dir>/probs.
        #[arg(long)]
        probs: Option<PathBuf>,
        /// Defaults to <output_dir>/fused.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a fused mesh against the configured ground-truth mesh.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Fused mesh or its directory. Defaults to <output_dir>/fused.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Views directory for the reprojected 2D score.
        #[arg(long)]
        views: Option<PathBuf>,
        /// Defaults to <output_dir>/eval.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-encode a fused mesh.
    ExportMesh {
        #[arg(long)]
        config: PathBuf,
        /// Fused mesh or its directory. Defaults to <output_dir>/fused.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Write a synthetic labeled scene.
    SynthRoom {
        #[arg(long)]
        output: PathBuf,
        /// Generate a random room from this seed instead of the fixed room.
        #[arg(long)]
        random: Option<u64>,
        #[arg(long, default_value = DEFAULT_LABEL_PROPERTY)]
        label_property: String,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Binary,
}

impl From<Format> for PlyFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ascii => PlyFormat::Ascii,
            Format::Binary => PlyFormat::BinaryLittleEndian,
        }
    }
}

fn or_stage(cfg: &LoadedConfig, flag: Option<PathBuf>, stage: &str) -> PathBuf {
    flag.unwrap_or_else(|| cfg.stage_dir(stage))
}

fn print_manifest(dir: &Path, m: &Manifest) {
    println!("{} -> {} (config {})", m.command, dir.display(), &m.config_hash[..12]);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SelectViews { config, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let out = or_stage(&cfg, output, "views");
            let m = pipeline::select_views(&cfg, &out)?;
            print_manifest(&out, &m);
        }
        Command::Render { config, input, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let input = or_stage(&cfg, input, "views");
            let out = or_stage(&cfg, output, "bundles");
            let m = pipeline::render(&cfg, &input, &out)?;
            print_manifest(&out, &m);
        }
        Command::Segment { config, input, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let input = or_stage(&cfg, input, "bundles");
            let out = or_stage(&cfg, output, "probs");
            let m = pipeline::segment(&cfg, &input, &out)?;
            print_manifest(&out, &m);
        }
        Command::Fuse { config, input, probs, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let input = or_stage(&cfg, input, "bundles");
            let probs = or_stage(&cfg, probs, "probs");
            let out = or_stage(&cfg, output, "fused");
            let m = pipeline::fuse(&cfg, &input, &probs, &out)?;
            print_manifest(&out, &m);
        }
        Command::Eval { config, input, views, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let input = or_stage(&cfg, input, "fused");
            let out = or_stage(&cfg, output, "eval");
            let m = pipeline::eval(&cfg, &input, views.as_deref(), &out)?;
            print_manifest(&out, &m);
        }
        Command::ExportMesh { config, input, output, format } => {
            let cfg = LoadedConfig::load(&config)?;
            let input = or_stage(&cfg, input, "fused");
            pipeline::export_mesh(&cfg.config.mesh.label_property, &input, &output, format.into())?;
            println!("export-mesh -> {}", output.display());
        }
        Command::SynthRoom { output, random, label_property, format } => {
            let size = pipeline::synth_room(&output, random, &label_property, format.into())?;
            println!(
                "synth-room -> {} ({} vertices, {} faces, {} classes)",
                output.display(),
                size.vertices,
                size.faces,
                size.classes
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
