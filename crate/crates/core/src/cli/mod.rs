//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on any validation or I/O error (message on
//! stderr), 2 when a `*-check` command finds a mismatch. Numeric results go
//! to files or to stdout as JSON/CSV; diagnostics go to stderr.

mod checks;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

pub use checks::{emulate_check, matmul_check, CheckReport};
pub use manifest::{config_hash, RunManifest};

use crate::analysis::{landscape, quantization_distance, LandscapeMode, LandscapeSpec};
use crate::bfp::{dequantize_tensor, quantize_tensor, Blocking, QuantConfig, Rounding};
use crate::density::{density_csv, density_table, Calibration, FormatDescriptor};
use crate::error::{Error, Result};
use crate::io::{
    read_quantized_file, read_tensor_file, write_atomic, write_quantized_file, write_tensor_file,
};
use crate::train::{
    evaluate, load_checkpoint, make_dataset, save_checkpoint, train, LayerNumerics, RunReport,
    TrainConfig,
};

/// Environment variable naming a density calibration JSON file.
pub const CALIB_ENV: &str = "HBFP_CALIB";

#[derive(Debug, Parser)]
#[command(name = "hbfp", version, about = "Block floating point numerics lab")]
struct Cli {
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Where to write the run manifest (default: next to the primary output,
    /// or stderr when there is none).
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize an HBT1 tensor into an HBQ1 file.
    Quantize(QuantizeArgs),
    /// Decode an HBQ1 file back to an HBT1 tensor.
    Dequantize(DequantizeArgs),
    /// Compare the integer kernel against its FP32 oracle on random cases.
    MatmulCheck(CheckArgs),
    /// Verify 6-bit-on-4-bit emulation, exhaustively and on random blocks.
    EmulateCheck(EmulateArgs),
    /// Arithmetic density and storage table.
    Density(DensityArgs),
    /// Train the desk MLP for one or more seeds.
    Train(TrainArgs),
    /// Distribution distance and loss-landscape analysis.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Wasserstein-1 distance between a tensor and its quantization.
    Wasserstein(WassersteinArgs),
    /// Loss along filter-normalized random directions around a checkpoint.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BlockingArg {
    Rows,
    Columns,
    Tiles,
}

impl From<BlockingArg> for Blocking {
    fn from(b: BlockingArg) -> Self {
        match b {
            BlockingArg::Rows => Blocking::Rows,
            BlockingArg::Columns => Blocking::Columns,
            BlockingArg::Tiles => Blocking::Tiles,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoundingArg {
    NearestEven,
    Truncate,
}

#[derive(Debug, Args)]
struct FormatArgs {
    /// Total bits per element, sign included.
    #[arg(long)]
    mantissa: u8,
    #[arg(long, default_value_t = 64)]
    block: usize,
    #[arg(long, default_value_t = 8)]
    exponent_bits: u8,
    #[arg(long, value_enum, default_value_t = RoundingArg::NearestEven)]
    rounding: RoundingArg,
    #[arg(long, value_enum, default_value_t = BlockingArg::Rows)]
    blocking: BlockingArg,
}

impl FormatArgs {
    fn config(&self) -> Result<QuantConfig> {
        let c = QuantConfig {
            mantissa_bits: self.mantissa,
            block_size: self.block,
            exponent_bits: self.exponent_bits,
            rounding: match self.rounding {
                RoundingArg::NearestEven => Rounding::NearestEven,
                RoundingArg::Truncate => Rounding::Truncate,
            },
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Debug, Args)]
struct DequantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 100)]
    cases: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EmulateArgs {
    /// Random 64-element block pairs after the exhaustive sweep.
    #[arg(long, default_value_t = 100_000)]
    random: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DensityArgs {
    /// Comma-separated format names (default: the nine block formats).
    #[arg(long, value_delimiter = ',')]
    formats: Vec<String>,
    /// Comma-separated block sizes / PE widths (default: each format's own).
    #[arg(long, value_delimiter = ',')]
    blocks: Vec<u32>,
    /// Systolic array side.
    #[arg(long, default_value_t = 8)]
    n: u32,
    /// Calibration JSON; falls back to $HBFP_CALIB, then built-in constants.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds; each overrides the config's seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WassersteinArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    format: FormatArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Slice,
    Grid,
}

#[derive(Debug, Args)]
struct LandscapeArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Run config that produced the checkpoint (selects the evaluation set).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Slice)]
    mode: ModeArg,
    /// Points per axis, odd (default 51 for slices, 25 for grids).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coefficients span [-span, span].
    #[arg(long, default_value_t = 1.0)]
    span: f64,
    /// Report raw loss instead of log10(loss).
    #[arg(long)]
    linear: bool,
    /// Evaluate with HBFP GEMMs of this many bits (default FP32).
    #[arg(long)]
    mantissa: Option<u8>,
    #[arg(long, default_value_t = 64)]
    block: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// What a command produced.
#[derive(Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<u64>,
    /// Text for stdout without `--json`.
    text: Option<String>,
    /// Summary for stdout with `--json`.
    json: Option<serde_json::Value>,
    check_failed: bool,
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let started_at = manifest::unix_now();
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if cli.json {
        if let Some(j) = &outcome.json {
            println!("{}", serde_json::to_string_pretty(j).expect("json value"));
        }
    } else if let Some(t) = &outcome.text {
        print!("{t}");
    }
    let exit_code = if outcome.check_failed { 2 } else { 0 };
    let args: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let m = RunManifest {
        config_hash: config_hash(&args, &outcome.inputs),
        command: args,
        seeds: outcome.seeds.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started_at,
        finished_at: manifest::unix_now(),
        outputs: outcome.outputs.clone(),
        exit_code,
    };
    let target = cli.manifest.clone().or_else(|| {
        outcome.outputs.first().map(|p| {
            if p.is_dir() {
                p.join("manifest.json")
            } else {
                let mut s = p.clone().into_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
        })
    });
    match target {
        Some(p) => {
            if let Err(e) = m.write(&p) {
                eprintln!("error: writing manifest: {e}");
                return 1;
            }
        }
        None => eprintln!("{}", serde_json::to_string(&m).expect("manifest")),
    }
    exit_code
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Quantize(a) => quantize_cmd(a),
        Command::Dequantize(a) => dequantize_cmd(a),
        Command::MatmulCheck(a) => check_outcome(matmul_check(a.cases, a.seed)?, a.seed),
        Command::EmulateCheck(a) => check_outcome(emulate_check(a.random, a.seed)?, a.seed),
        Command::Density(a) => density_cmd(a, cli.json),
        Command::Train(a) => train_cmd(a),
        Command::Analyze(AnalyzeCommand::Wasserstein(a)) => wasserstein_cmd(a),
        Command::Analyze(AnalyzeCommand::Landscape(a)) => landscape_cmd(a, cli.json),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn quantize_cmd(a: &QuantizeArgs) -> Result<Outcome> {
    let cfg = a.format.config()?;
    let x = read_tensor_file(&a.input)?;
    let q = quantize_tensor(&x, &cfg, a.format.blocking.into())?;
    write_quantized_file(&a.out, &q)?;
    let summary = json!({
        "shape": q.shape(),
        "blocks": q.blocks().len(),
        "padding": q.padding_count(),
        "config": cfg,
    });
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        text: Some(format!("{} blocks -> {}\n", q.blocks().len(), a.out.display())),
        json: Some(summary),
        ..Default::default()
    })
}

fn dequantize_cmd(a: &DequantizeArgs) -> Result<Outcome> {
    let q = read_quantized_file(&a.input)?;
    let x = dequantize_tensor(&q);
    write_tensor_file(&a.out, &x)?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        text: Some(format!("{} elements -> {}\n", x.len(), a.out.display())),
        json: Some(json!({ "shape": x.shape(), "elements": x.len() })),
        ..Default::default()
    })
}

fn check_outcome(r: CheckReport, seed: u64) -> Result<Outcome> {
    let verdict = if r.passed { "ok" } else { "FAILED" };
    if !r.passed {
        eprintln!("{}: {} of {} cases mismatched", r.check, r.mismatches, r.cases);
    }
    Ok(Outcome {
        seeds: vec![seed],
        text: Some(format!("{}: {} cases {verdict}\n", r.check, r.cases)),
        check_failed: !r.passed,
        json: Some(to_json(&r)),
        ..Default::default()
    })
}

fn density_cmd(a: &DensityArgs, json_out: bool) -> Result<Outcome> {
    let formats = if a.formats.is_empty() {
        FormatDescriptor::table_formats()
    } else {
        a.formats
            .iter()
            .map(|n| FormatDescriptor::named(n))
            .collect::<Result<_>>()?
    };
    let calib_path = a
        .calib
        .clone()
        .or_else(|| std::env::var_os(CALIB_ENV).map(PathBuf::from));
    let calibration = match &calib_path {
        Some(p) => Calibration::from_json(&read_text(p)?)?,
        None => Calibration::default(),
    };
    let blocks = (!a.blocks.is_empty()).then_some(a.blocks.as_slice());
    let rows = density_table(&formats, blocks, a.n, calibration)?;
    let csv = density_csv(&rows);
    let mut out = Outcome {
        inputs: calib_path.into_iter().collect(),
        json: Some(to_json(&rows)),
        ..Default::default()
    };
    match &a.csv {
        Some(p) => {
            write_atomic(p, csv.as_bytes())?;
            out.outputs.push(p.clone());
        }
        None if !json_out => out.text = Some(csv),
        None => {}
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    mode: String,
    seeds: Vec<u64>,
    final_val_acc: Vec<f64>,
    mean_final_val_acc: f64,
    std_final_val_acc: f64,
    mac_fraction: Vec<std::collections::BTreeMap<String, f64>>,
}

fn write_run(dir: &Path, report: &RunReport) -> Result<Vec<PathBuf>> {
    let stem = format!("seed-{}", report.seed);
    let json_path = dir.join(format!("{stem}.report.json"));
    let csv_path = dir.join(format!("{stem}.curve.csv"));
    write_atomic(&json_path, serde_json::to_string_pretty(report)?.as_bytes())?;
    write_atomic(&csv_path, report.epoch_csv().as_bytes())?;
    Ok(vec![json_path, csv_path])
}

fn train_cmd(a: &TrainArgs) -> Result<Outcome> {
    let base = TrainConfig::from_json(&read_text(&a.config)?)?;
    let seeds = if a.seeds.is_empty() {
        vec![base.seed]
    } else {
        a.seeds.clone()
    };
    std::fs::create_dir_all(&a.out)?;
    let runs: Vec<Result<RunReport>> = seeds
        .par_iter()
        .map(|&seed| {
            let out = train(&TrainConfig {
                seed,
                ..base.clone()
            })?;
            let ckpt = a.out.join(format!("seed-{seed}.ckpt"));
            save_checkpoint(&out.model, &ckpt)?;
            write_run(&a.out, &out.report)?;
            Ok(out.report)
        })
        .collect();
    let reports = runs.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(r) = reports.iter().find(|r| r.diverged_at.is_some()) {
        return Err(Error::Diverged {
            epoch: r.diverged_at.unwrap_or_default(),
        });
    }
    let accs: Vec<f64> = reports.iter().map(|r| r.final_val_acc).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / accs.len() as f64;
    let summary = TrainSummary {
        mode: base.numeric.label(),
        seeds: seeds.clone(),
        final_val_acc: accs,
        mean_final_val_acc: mean,
        std_final_val_acc: var.sqrt(),
        mac_fraction: reports.iter().map(|r| r.mac_fraction.clone()).collect(),
    };
    let summary_path = a.out.join("summary.json");
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(Outcome {
        inputs: vec![a.config.clone()],
        outputs: vec![a.out.clone()],
        text: Some(format!(
            "{}: mean final val acc {:.4} over {} seed(s)\n",
            summary.mode,
            mean,
            seeds.len()
        )),
        json: Some(to_json(&summary)),
        seeds,
        ..Default::default()
    })
}

fn wasserstein_cmd(a: &WassersteinArgs) -> Result<Outcome> {
    let cfg = a.format.config()?;
    let x = read_tensor_file(&a.input)?;
    let d = quantization_distance(&x, &cfg, a.format.blocking.into())?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        text: Some(format!("{d}\n")),
        json: Some(json!({ "distance": d, "config": cfg, "elements": x.len() })),
        ..Default::default()
    })
}

fn landscape_cmd(a: &LandscapeArgs, json_out: bool) -> Result<Outcome> {
    let cfg = TrainConfig::from_json(&read_text(&a.config)?)?;
    let model = load_checkpoint(&a.model)?;
    let split = make_dataset(&cfg.dataset)?;
    if split.val.features() != model.input_dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features, dataset has {}",
            model.input_dim(),
            split.val.features()
        )));
    }
    let numerics: LayerNumerics = a
        .mantissa
        .map(|m| QuantConfig::hbfp(m, a.block))
        .transpose()?;
    let cfgs = vec![numerics; model.num_layers()];
    let mode = match a.mode {
        ModeArg::Slice => LandscapeMode::Slice,
        ModeArg::Grid => LandscapeMode::Grid,
    };
    let defaults = match mode {
        LandscapeMode::Slice => LandscapeSpec::slice(a.seed),
        LandscapeMode::Grid => LandscapeSpec::grid(a.seed),
    };
    let spec = LandscapeSpec {
        span: a.span,
        steps: a.steps.unwrap_or(defaults.steps),
        log_scale: !a.linear,
        ..defaults
    };
    let grid = landscape(&model.params(), &model.param_kinds(), &spec, |p| {
        model
            .with_params(p)
            .and_then(|m| evaluate(&m, &split.val, &cfgs, 256))
            .map_or(f64::INFINITY, |(loss, _)| loss)
    })?;
    let csv = grid.to_csv();
    let mut out = Outcome {
        inputs: vec![a.model.clone(), a.config.clone()],
        seeds: vec![a.seed],
        json: Some(json!({
            "center_loss": grid.center(),
            "points": grid.alphas.len() * grid.betas.as_ref().map_or(1, Vec::len),
            "grid": to_json(&grid),
        })),
        ..Default::default()
    };
    match &a.csv {
        Some(p) => {
            write_atomic(p, csv.as_bytes())?;
            out.outputs.push(p.clone());
        }
        None if !json_out => out.text = Some(csv),
        None => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["hbfp", "--bogus"]), 1);
        assert_eq!(run(["hbfp", "density", "--formats", "nope"]), 1);
        assert_eq!(run(["hbfp", "--help"]), 0);
        assert_eq!(run(["hbfp", "emulate-check", "--random", "10"]), 0);
    }
}
