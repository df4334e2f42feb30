//! Command-line front end.
//!
//! Exit codes: 0 success, 1 `check` found a mismatch, 2 I/O or parse
//! failure, 3 invariant violation or usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::accelsim::{
    simulate_dot, simulate_layer, write_cycle_csv, AccelConfig, AccelMode, CycleReport, LayerShape,
    SimError,
};
use crate::codebook::{build_codebook, decode, encode, index_width, BinningMethod, CodebookError};
use crate::convref::{conv2d_ref, valid_output_dims};
use crate::costmodel::{config_pairs, sweep, write_cost_csv, write_pair_csv, CostError, GateConstants};
use crate::fxp::{guard_bits, Fxp, QFormat};
use crate::pas::pasm_conv2d;
use crate::tensor::{KernelSet, Payload, Tensor3, TensorFile, MAGIC};
use crate::workload::Workload;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<CodebookError> for CliError {
    fn from(e: CodebookError) -> Self {
        match e {
            CodebookError::Csv(_) | CodebookError::Tensor(_) => CliError::io(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Csv(_) => CliError::io(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        match e {
            CostError::Constants(_) | CostError::Csv(_) => CliError::io(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pasm", version, about = "Weight-shared MAC vs parallel-accumulate shared-MAC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a codebook for a weight file and encode the weights as bin indices.
    Quantize(QuantizeArgs),
    /// Run a seeded random layer through the reference and PASM convolutions.
    Check(CheckArgs),
    /// Cycle counts for a layer or a single dot product.
    Simulate(SimulateArgs),
    /// Gate-count sweep over bit widths or bin counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Uniform,
    Kmeans,
}

impl From<MethodArg> for BinningMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Uniform => BinningMethod::UniformRange,
            MethodArg::Kmeans => BinningMethod::LloydKmeans,
        }
    }
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Weight file: PASM tensor with fxp payload, or CSV of real values.
    input: PathBuf,
    #[arg(long, default_value = "Q24.8")]
    format: QFormat,
    #[command(flatten)]
    bins: BinsArgs,
    #[arg(long, value_enum, default_value = "uniform")]
    method: MethodArg,
    /// Codebook CSV destination.
    #[arg(long, default_value = "codebook.csv")]
    out: PathBuf,
    /// Index tensor destination; defaults to the codebook path with an
    /// `.idx` extension.
    #[arg(long)]
    indices: Option<PathBuf>,
}

/// `--bins b` or `--wci i` (b = 2^i); 16 when neither is given.
#[derive(Debug, Args)]
struct BinsArgs {
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    wci: Option<u32>,
}

impl BinsArgs {
    fn resolve(&self) -> Result<usize, CliError> {
        let from_wci = match self.wci {
            Some(i) if i < usize::BITS => Some(1usize << i),
            Some(i) => return Err(CliError::usage(format!("wci {i} is too large"))),
            None => None,
        };
        match (self.bins, from_wci) {
            (Some(b), Some(w)) if b != w => Err(CliError::usage(format!(
                "--bins {b} disagrees with --wci {} (2^wci = {w})",
                self.wci.unwrap_or_default()
            ))),
            (Some(b), _) | (None, Some(b)) => Ok(b),
            (None, None) => Ok(16),
        }
    }
}

#[derive(Debug, Args)]
struct LayerArgs {
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 4)]
    out_channels: usize,
}

impl LayerArgs {
    fn shape(&self) -> LayerShape {
        LayerShape {
            width: self.width,
            height: self.height,
            k: self.kernel,
            in_channels: self.channels,
            out_channels: self.out_channels,
        }
    }
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    layer: LayerArgs,
    #[command(flatten)]
    bins: BinsArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "Q24.8")]
    format: QFormat,
    #[arg(long, value_enum, default_value = "uniform")]
    method: MethodArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConfigArg {
    #[value(name = "16-mac")]
    Mac16,
    #[value(name = "16-pas-4-mac")]
    Pas16Mac4,
    Custom,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    DirectMac,
    PasSharedMac,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "16-pas-4-mac")]
    config: ConfigArg,
    #[command(flatten)]
    layer: LayerArgs,
    /// Simulate one dot product of this length instead of a layer.
    #[arg(long)]
    dot: Option<u64>,
    #[command(flatten)]
    bins: BinsArgs,
    /// Data format; its total width is reported as `w`.
    #[arg(long, default_value = "Q24.8")]
    format: QFormat,
    /// Double-buffer the bins so the post-pass overlaps the next batch.
    #[arg(long)]
    overlap: bool,
    /// Custom config: organization.
    #[arg(long, value_enum, default_value = "pas-shared-mac")]
    mode: ModeArg,
    /// Custom config: PAS units.
    #[arg(long, default_value_t = 16)]
    n_pas: usize,
    /// Custom config: MAC units.
    #[arg(long, default_value_t = 4)]
    n_mac: usize,
    /// Custom config: image values read per cycle.
    #[arg(long, default_value_t = 4)]
    image_inputs: usize,
    /// Custom config: bin indices read per cycle.
    #[arg(long, default_value_t = 4)]
    weight_inputs: usize,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Width,
    Bins,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u32).range(1..))]
    values: Vec<u32>,
    /// Bit width held fixed when sweeping bins.
    #[arg(long, default_value_t = 32)]
    bits: u32,
    /// Bin count held fixed when sweeping width.
    #[command(flatten)]
    bins: BinsArgs,
    /// `name,value` CSV overriding the default gate constants.
    #[arg(long)]
    constants: Option<PathBuf>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every unit and configuration report here.
    #[arg(long)]
    reports: Option<PathBuf>,
}

/// Run the CLI with `args` (program name first). Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Quantize(a) => quantize(a, stdout),
        Command::Check(a) => check(a, stdout),
        Command::Simulate(a) => simulate(a, stdout, stderr),
        Command::Sweep(a) => sweep_cmd(a, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::io(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Load weights as `(dims, values)`.
fn load_weights(path: &Path, fmt: QFormat) -> Result<(Vec<usize>, Vec<Fxp>), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(MAGIC) {
        let t = TensorFile::read_from(&bytes[..]).map_err(|e| CliError::io(e.to_string()))?;
        let raws = t.raws_in(fmt).map_err(|e| CliError::io(e.to_string()))?;
        let values = raws
            .into_iter()
            .map(|r| Fxp::from_raw_wrapping(r, fmt))
            .collect();
        return Ok((t.dims, values));
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::io("weight file is neither PASM nor text"))?;
    let mut values = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).filter(|f| !f.is_empty()).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(reals) => {
                for x in reals {
                    values.push(Fxp::from_real(x, fmt).map_err(|e| CliError::usage(e.to_string()))?);
                }
            }
            // a header line
            Err(_) if line_no == 0 => {}
            Err(_) => return Err(CliError::io(format!("line {}: not a number", line_no + 1))),
        }
    }
    Ok((vec![values.len()], values))
}

fn quantize(a: QuantizeArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let b = a.bins.resolve()?;
    index_width(b)?;
    let (dims, weights) = load_weights(&a.input, a.format)?;
    if weights.is_empty() {
        return Err(CliError::io("weight file holds no values"));
    }
    let method = BinningMethod::from(a.method);
    let cb = build_codebook(&weights, b, method)?;
    let indices = cb.encode_values(&weights)?;
    let decoded = cb.decode_indices(&indices)?;

    let errs: Vec<f64> = weights
        .iter()
        .zip(&decoded)
        .map(|(w, d)| (w.to_f64() - d.to_f64()).abs())
        .collect();
    let max_err = errs.iter().cloned().fold(0.0, f64::max);
    let mean_err = errs.iter().sum::<f64>() / errs.len() as f64;

    let mut csv_bytes = Vec::new();
    cb.write_csv(&mut csv_bytes)?;
    write_file(&a.out, &csv_bytes)?;
    let idx_path = a.indices.unwrap_or_else(|| a.out.with_extension("idx"));
    let idx = TensorFile::new(dims, Payload::Index(indices)).map_err(|e| CliError::io(e.to_string()))?;
    write_file(&idx_path, &idx.to_bytes())?;

    say(
        stdout,
        format_args!(
            "weights={} bins={} method={:?} format={}",
            weights.len(),
            b,
            a.method,
            a.format
        ),
    )?;
    say(stdout, format_args!("max_abs_error={max_err} mean_abs_error={mean_err}"))?;
    if method == BinningMethod::UniformRange {
        let lo = weights.iter().map(|w| w.to_f64()).fold(f64::INFINITY, f64::min);
        let hi = weights.iter().map(|w| w.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let bound = (hi - lo) / (2 * b) as f64 + a.format.step();
        if max_err > bound {
            return Err(CliError::usage(format!(
                "quantization error {max_err} exceeds uniform bound {bound}"
            )));
        }
        say(stdout, format_args!("bound={bound} ok"))?;
    }
    say(
        stdout,
        format_args!("wrote {} and {}", a.out.display(), idx_path.display()),
    )?;
    Ok(EXIT_OK)
}

fn check(a: CheckArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let l = &a.layer;
    let b = a.bins.resolve()?;
    index_width(b)?;
    if l.channels == 0 || l.out_channels == 0 {
        return Err(CliError::usage("channel counts must be positive"));
    }
    let (out_w, out_h) = valid_output_dims(l.width, l.height, l.kernel).ok_or_else(|| {
        CliError::usage(format!(
            "kernel {} does not fit a {}x{} input",
            l.kernel, l.width, l.height
        ))
    })?;
    let ops = out_w * out_h * l.out_channels * l.kernel * l.kernel * l.channels;
    if ops > 1_000_000 {
        return Err(CliError::usage(format!("{ops} ops is too large for a check run")));
    }

    let fmt = a.format;
    let n = l.kernel * l.kernel * l.channels;
    let g = guard_bits(n);
    let bad = |e: crate::fxp::FxpError| CliError::usage(e.to_string());
    let bin_fmt = fmt.widened(g).map_err(bad)?;
    let ref_acc = fmt.product(fmt).and_then(|p| p.widened(g)).map_err(bad)?;

    let mut rng = Workload::new(a.seed);
    let input = Tensor3::from_raw(
        l.width,
        l.height,
        l.channels,
        fmt,
        rng.raws(fmt, l.width * l.height * l.channels),
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    let kernels = KernelSet::from_raw(
        l.out_channels,
        l.kernel,
        l.channels,
        fmt,
        rng.raws(fmt, l.out_channels * n),
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    let weights: Vec<Fxp> = kernels.values().collect();
    let cb = build_codebook(&weights, b, a.method.into())?;
    let enc = encode(&kernels, &cb)?;

    let reference = conv2d_ref(&input, &decode(&enc), ref_acc).map_err(|e| CliError::usage(e.to_string()))?;
    let pasm = pasm_conv2d(&input, &enc, &cb, bin_fmt, fmt).map_err(|e| CliError::usage(e.to_string()))?;

    say(
        stdout,
        format_args!(
            "layer {}x{}x{} K={} out_channels={} b={} format={} seed={}",
            l.width, l.height, l.channels, l.kernel, l.out_channels, b, fmt, a.seed
        ),
    )?;
    say(
        stdout,
        format_args!(
            "outputs={} accumulations_per_output={} bin_format={} reference_acc={}",
            out_w * out_h * l.out_channels,
            n,
            bin_fmt,
            ref_acc
        ),
    )?;
    for w in 0..out_w {
        for h in 0..out_h {
            for o in 0..l.out_channels {
                let (r, p) = (reference.get(w, h, o), pasm.get(w, h, o));
                if r != p {
                    say(
                        stdout,
                        format_args!(
                            "MISMATCH at ({w},{h},{o}): reference raw {} pasm raw {}",
                            r.raw(),
                            p.raw()
                        ),
                    )?;
                    return Ok(EXIT_MISMATCH);
                }
            }
        }
    }
    say(stdout, format_args!("BITEXACT"))?;
    Ok(EXIT_OK)
}

fn sim_config(a: &SimulateArgs) -> Result<AccelConfig, CliError> {
    let (b, w) = (a.bins.resolve()?, a.format.total_bits());
    let base = match a.config {
        ConfigArg::Mac16 => AccelConfig::mac16(b, w),
        ConfigArg::Pas16Mac4 => AccelConfig::pas16_mac4(b, w),
        ConfigArg::Custom => {
            let mode = match a.mode {
                ModeArg::DirectMac => AccelMode::DirectMac,
                ModeArg::PasSharedMac => AccelMode::PasSharedMac,
            };
            AccelConfig {
                n_pas_units: if mode == AccelMode::DirectMac { 0 } else { a.n_pas },
                n_mac_units: a.n_mac,
                image_inputs_per_cycle: a.image_inputs,
                weight_inputs_per_cycle: a.weight_inputs,
                b,
                w,
                mode,
                overlap_postpass: false,
            }
        }
    };
    Ok(base.with_overlap(a.overlap))
}

fn summarize(cfg: &AccelConfig, r: &CycleReport) -> String {
    let mut s = format!(
        "{} b={} w={} overlap={}: batches={} acc={} post={} total={} cycles, ops={}, util pas={:.4} mac={:.4}",
        cfg.label(),
        r.b,
        r.w,
        u8::from(r.overlap),
        r.batches,
        r.accumulate_cycles,
        r.postpass_cycles,
        r.total_cycles,
        r.ops_executed,
        r.util_pas(),
        r.util_mac()
    );
    if r.overlap && r.batches > 0 {
        let per_acc = r.accumulate_cycles / r.batches;
        let per_post = r.postpass_cycles / r.batches;
        s.push_str(&format!(", steady-state {} cycles/batch", per_acc.max(per_post)));
    }
    s
}

fn emit_csv(
    bytes: Vec<u8>,
    summary: &str,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_file(path, &bytes)?;
            say(stdout, format_args!("{summary}"))?;
        }
        None => {
            stdout.write_all(&bytes).map_err(|e| CliError::io(e.to_string()))?;
            say(stderr, format_args!("{summary}"))?;
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = sim_config(&a)?;
    cfg.validate()?;
    let report = match a.dot {
        Some(n) => simulate_dot(&cfg, n),
        None => simulate_layer(&cfg, &a.layer.shape())?,
    };
    let mut bytes = Vec::new();
    write_cycle_csv(&[report.row()], &mut bytes)?;
    emit_csv(bytes, &summarize(&cfg, &report), a.out.as_deref(), stdout, stderr)?;
    Ok(EXIT_OK)
}

fn sweep_cmd(a: SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let constants = match &a.constants {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            GateConstants::read_csv(&bytes[..])?
        }
        None => GateConstants::default(),
    };
    let fixed_bins = a.bins.resolve()?;
    let mut values = a.values.clone();
    values.sort_unstable();
    values.dedup();
    let points: Vec<(u32, usize)> = values
        .iter()
        .map(|&v| match a.axis {
            AxisArg::Width => (v, fixed_bins),
            AxisArg::Bins => (a.bits, v as usize),
        })
        .collect();
    let rows = config_pairs(&points, &constants)?;
    let mut bytes = Vec::new();
    write_pair_csv(&rows, &mut bytes)?;
    let summary = rows
        .iter()
        .map(|r| format!("w={} b={} pasm/mac={:.4}", r.w, r.b, r.ratio))
        .collect::<Vec<_>>()
        .join("\n");
    if let Some(path) = &a.reports {
        let (ws, bs): (Vec<u32>, Vec<usize>) = points.iter().cloned().unzip();
        let reports: Vec<_> = sweep(&ws, &bs, &constants)?
            .into_iter()
            .filter(|r| points.contains(&(r.w, r.b)))
            .map(|r| r.row())
            .collect();
        let mut buf = Vec::new();
        write_cost_csv(&reports, &mut buf)?;
        write_file(path, &buf)?;
    }
    emit_csv(bytes, &summary, a.out.as_deref(), stdout, stderr)?;
    Ok(EXIT_OK)
}
