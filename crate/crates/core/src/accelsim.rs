//! Cycle-level model of two convolution accelerator organizations:
//! an array of weight-shared MACs, and an array of PAS units draining
//! through a smaller set of shared post-pass MACs.
//!
//! Each cycle the accelerator reads `image_inputs_per_cycle` image values
//! (one per output pixel in flight) and `weight_inputs_per_cycle` bin
//! indices (one per output channel in flight) and pairs them all-to-all, so
//! a 4 + 4 input port feeds 16 units. A batch is the set of outputs in
//! flight; it accumulates for `n = K*K*c` cycles. In PAS mode every shared
//! MAC then drains its `n_pas / n_mac` PAS units one after another, one bin
//! per cycle. With `overlap_postpass` the bins are double-buffered and the
//! drain of one batch runs under the accumulation of the next.
//!
//! Clearing bins between batches costs no cycles. Memory traffic is not
//! modeled.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{index_width, CodebookError, EncodedKernels};
use crate::convref::{check_guard_bits, valid_output_dims, ConvError};
use crate::fxp::{Fxp, QFormat};
use crate::pas::{postpass_format, PasState, PasmError, WsMacState, OpTally};
use crate::tensor::Tensor3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid accelerator config: {0}")]
    InvalidConfig(String),
    #[error("{demanded} ops per cycle demanded but only {available} units available")]
    BandwidthInfeasible { demanded: usize, available: usize },
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("malformed report csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Pasm(#[from] PasmError),
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Csv(e.to_string())
    }
}

impl From<ConvError> for SimError {
    fn from(e: ConvError) -> Self {
        SimError::Pasm(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccelMode {
    #[serde(rename = "direct-mac")]
    DirectMac,
    #[serde(rename = "pas-shared-mac")]
    PasSharedMac,
}

impl fmt::Display for AccelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccelMode::DirectMac => "direct-mac",
            AccelMode::PasSharedMac => "pas-shared-mac",
        })
    }
}

impl FromStr for AccelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct-mac" => Ok(AccelMode::DirectMac),
            "pas-shared-mac" => Ok(AccelMode::PasSharedMac),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccelConfig {
    pub n_pas_units: usize,
    pub n_mac_units: usize,
    pub image_inputs_per_cycle: usize,
    pub weight_inputs_per_cycle: usize,
    pub b: usize,
    pub w: u32,
    pub mode: AccelMode,
    pub overlap_postpass: bool,
}

impl AccelConfig {
    /// Sixteen weight-shared MACs fed 4 images and 4 weights per cycle.
    pub fn mac16(b: usize, w: u32) -> Self {
        AccelConfig {
            n_pas_units: 0,
            n_mac_units: 16,
            image_inputs_per_cycle: 4,
            weight_inputs_per_cycle: 4,
            b,
            w,
            mode: AccelMode::DirectMac,
            overlap_postpass: false,
        }
    }

    /// Sixteen PAS units sharing four post-pass MACs, same input ports.
    pub fn pas16_mac4(b: usize, w: u32) -> Self {
        AccelConfig {
            n_pas_units: 16,
            n_mac_units: 4,
            mode: AccelMode::PasSharedMac,
            ..Self::mac16(b, w)
        }
    }

    /// One weight-shared MAC, one input pair per cycle.
    pub fn single_mac(b: usize, w: u32) -> Self {
        AccelConfig {
            n_mac_units: 1,
            image_inputs_per_cycle: 1,
            weight_inputs_per_cycle: 1,
            ..Self::mac16(b, w)
        }
    }

    /// One PAS unit with its own post-pass MAC.
    pub fn single_pasm(b: usize, w: u32) -> Self {
        AccelConfig {
            n_pas_units: 1,
            mode: AccelMode::PasSharedMac,
            ..Self::single_mac(b, w)
        }
    }

    pub fn with_overlap(self, overlap_postpass: bool) -> Self {
        AccelConfig {
            overlap_postpass,
            ..self
        }
    }

    /// Short name, e.g. `16-mac` or `16-pas-4-mac`.
    pub fn label(&self) -> String {
        match self.mode {
            AccelMode::DirectMac => format!("{}-mac", self.n_mac_units),
            AccelMode::PasSharedMac => format!("{}-pas-{}-mac", self.n_pas_units, self.n_mac_units),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        index_width(self.b)?;
        if self.w < 2 {
            return bad(format!("bit width {} < 2", self.w));
        }
        if self.n_mac_units == 0 {
            return bad("at least one MAC unit is required".into());
        }
        if self.image_inputs_per_cycle == 0 || self.weight_inputs_per_cycle == 0 {
            return bad("input ports must be at least one wide".into());
        }
        match self.mode {
            AccelMode::DirectMac if self.n_pas_units != 0 => {
                bad("direct-mac mode has no PAS units".into())
            }
            AccelMode::PasSharedMac if self.n_pas_units < self.n_mac_units => bad(format!(
                "{} PAS units cannot share {} MACs",
                self.n_pas_units, self.n_mac_units
            )),
            AccelMode::PasSharedMac if !self.n_pas_units.is_multiple_of(self.n_mac_units) => bad(format!(
                "{} PAS units do not divide evenly over {} MACs",
                self.n_pas_units, self.n_mac_units
            )),
            _ => Ok(()),
        }
    }

    /// Units that receive one image/weight pair per cycle.
    fn compute_units(&self) -> usize {
        match self.mode {
            AccelMode::DirectMac => self.n_mac_units,
            AccelMode::PasSharedMac => self.n_pas_units,
        }
    }

    fn check_bandwidth(&self) -> Result<(), SimError> {
        let demanded = self.image_inputs_per_cycle * self.weight_inputs_per_cycle;
        let available = self.compute_units();
        if demanded > available {
            return Err(SimError::BandwidthInfeasible {
                demanded,
                available,
            });
        }
        Ok(())
    }

    /// PAS units drained serially by each shared MAC.
    pub fn pas_per_mac(&self) -> usize {
        match self.mode {
            AccelMode::DirectMac => 0,
            AccelMode::PasSharedMac => self.n_pas_units / self.n_mac_units,
        }
    }

    fn postpass_cycles_per_batch(&self) -> u64 {
        (self.pas_per_mac() * self.b) as u64
    }
}

/// Convolution layer dimensions; the output is `(width-K+1) x (height-K+1)
/// x out_channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerShape {
    pub fn validate(&self) -> Result<(usize, usize), SimError> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(SimError::InvalidLayer("channel counts must be positive".into()));
        }
        valid_output_dims(self.width, self.height, self.k).ok_or_else(|| {
            SimError::InvalidLayer(format!(
                "kernel {} does not fit a {}x{} input",
                self.k, self.width, self.height
            ))
        })
    }

    /// Accumulations per output element, `K*K*c`.
    pub fn terms_per_output(&self) -> usize {
        self.k * self.k * self.in_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub mode: AccelMode,
    pub w: u32,
    pub b: usize,
    pub n_pas: usize,
    pub n_mac: usize,
    pub layer: LayerShape,
    pub overlap: bool,
    pub batches: u64,
    pub accumulate_cycles: u64,
    pub postpass_cycles: u64,
    pub total_cycles: u64,
    pub ops_executed: u64,
    /// Unit-cycles of useful work, per unit class.
    pub pas_busy: u64,
    pub mac_busy: u64,
    /// Cycles charged for clearing bins between batches; always zero.
    pub bin_reset_cycles: u64,
}

impl CycleReport {
    pub fn util_pas(&self) -> f64 {
        ratio(self.pas_busy, self.n_pas as u64 * self.total_cycles)
    }

    pub fn util_mac(&self) -> f64 {
        ratio(self.mac_busy, self.n_mac as u64 * self.total_cycles)
    }

    pub fn row(&self) -> CycleRow {
        CycleRow {
            mode: self.mode,
            w: self.w,
            b: self.b,
            n_pas: self.n_pas,
            n_mac: self.n_mac,
            k: self.layer.k,
            c: self.layer.in_channels,
            out_ch: self.layer.out_channels,
            width: self.layer.width,
            height: self.layer.height,
            acc_cycles: self.accumulate_cycles,
            post_cycles: self.postpass_cycles,
            total_cycles: self.total_cycles,
            util_pas: self.util_pas(),
            util_mac: self.util_mac(),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One line of the cycle report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub mode: AccelMode,
    pub w: u32,
    pub b: usize,
    pub n_pas: usize,
    pub n_mac: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub c: usize,
    pub out_ch: usize,
    pub width: usize,
    pub height: usize,
    pub acc_cycles: u64,
    pub post_cycles: u64,
    pub total_cycles: u64,
    pub util_pas: f64,
    pub util_mac: f64,
}

pub const CYCLE_CSV_HEADER: &str =
    "mode,w,b,n_pas,n_mac,K,c,out_ch,width,height,acc_cycles,post_cycles,total_cycles,util_pas,util_mac";

pub fn write_cycle_csv<W: Write>(rows: &[CycleRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CYCLE_CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SimError::Csv(e.to_string()))
}

pub fn read_cycle_csv<R: Read>(input: R) -> Result<Vec<CycleRow>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CYCLE_CSV_HEADER {
        return Err(SimError::Csv(format!("unexpected header {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Start/end bookkeeping for the two-stage accumulate / drain pipeline.
#[derive(Debug, Default)]
struct Timeline {
    overlap: bool,
    acc_end: u64,
    post_end: u64,
    post_end_before: u64,
}

impl Timeline {
    fn new(overlap: bool) -> Self {
        Timeline {
            overlap,
            ..Default::default()
        }
    }

    fn push(&mut self, acc: u64, post: u64) {
        let acc_start = if self.overlap {
            // The bin buffer this batch writes was drained two batches ago.
            self.acc_end.max(self.post_end_before)
        } else {
            self.post_end
        };
        self.acc_end = acc_start + acc;
        let post_start = self.acc_end.max(self.post_end);
        self.post_end_before = self.post_end;
        self.post_end = post_start + post;
    }

    fn end(&self) -> u64 {
        self.post_end
    }
}

/// Outputs in flight together: `pixels` consecutive output pixels times
/// `channels` consecutive output channels.
#[derive(Debug, Clone, Copy)]
struct Batch {
    first_pixel: usize,
    pixels: usize,
    first_channel: usize,
    channels: usize,
}

fn batches(cfg: &AccelConfig, out_pixels: usize, out_channels: usize) -> Vec<Batch> {
    let p = cfg.image_inputs_per_cycle;
    let q = cfg.weight_inputs_per_cycle;
    let mut v = Vec::new();
    for first_pixel in (0..out_pixels).step_by(p) {
        for first_channel in (0..out_channels).step_by(q) {
            v.push(Batch {
                first_pixel,
                pixels: p.min(out_pixels - first_pixel),
                first_channel,
                channels: q.min(out_channels - first_channel),
            });
        }
    }
    v
}

/// One dot product of length `n` on a single unit: `n` cycles on a MAC,
/// `n + b` on a PAS unit followed by its post-pass MAC.
pub fn simulate_dot(config: &AccelConfig, n: u64) -> CycleReport {
    let (n_pas, post) = match config.mode {
        AccelMode::DirectMac => (0, 0),
        AccelMode::PasSharedMac => (1, config.b as u64),
    };
    let mut t = Timeline::new(false);
    t.push(n, post);
    let (pas_busy, mac_busy) = match config.mode {
        AccelMode::DirectMac => (0, n),
        AccelMode::PasSharedMac => (n, post),
    };
    CycleReport {
        mode: config.mode,
        w: config.w,
        b: config.b,
        n_pas,
        n_mac: 1,
        layer: LayerShape {
            width: 1,
            height: 1,
            k: 1,
            in_channels: n as usize,
            out_channels: 1,
        },
        overlap: false,
        batches: 1,
        accumulate_cycles: n,
        postpass_cycles: post,
        total_cycles: t.end(),
        ops_executed: n,
        pas_busy,
        mac_busy,
        bin_reset_cycles: 0,
    }
}

/// Cycle tally of a whole convolution layer.
pub fn simulate_layer(config: &AccelConfig, layer: &LayerShape) -> Result<CycleReport, SimError> {
    config.validate()?;
    config.check_bandwidth()?;
    let (out_w, out_h) = layer.validate()?;
    let n = layer.terms_per_output() as u64;
    let post = config.postpass_cycles_per_batch();

    let mut report = empty_report(config, layer);
    let mut timeline = Timeline::new(config.overlap_postpass);
    for batch in batches(config, out_w * out_h, layer.out_channels) {
        let active = (batch.pixels * batch.channels) as u64;
        timeline.push(n, post);
        report.batches += 1;
        report.accumulate_cycles += n;
        report.postpass_cycles += post;
        report.ops_executed += active * n;
        match config.mode {
            AccelMode::DirectMac => report.mac_busy += active * n,
            AccelMode::PasSharedMac => {
                report.pas_busy += active * n;
                report.mac_busy += config.n_mac_units as u64 * post;
            }
        }
    }
    report.total_cycles = timeline.end();
    Ok(report)
}

fn empty_report(config: &AccelConfig, layer: &LayerShape) -> CycleReport {
    CycleReport {
        mode: config.mode,
        w: config.w,
        b: config.b,
        n_pas: config.n_pas_units,
        n_mac: config.n_mac_units,
        layer: *layer,
        overlap: config.overlap_postpass,
        batches: 0,
        accumulate_cycles: 0,
        postpass_cycles: 0,
        total_cycles: 0,
        ops_executed: 0,
        pas_busy: 0,
        mac_busy: 0,
        bin_reset_cycles: 0,
    }
}

/// Run the layer schedule cycle by cycle with real data: every unit sees
/// exactly the image and bin index its input port delivers that cycle, and
/// each shared MAC drains its PAS units one bin per cycle. Returns the
/// cycle report measured from the run along with the computed output.
pub fn simulate_layer_checked(
    config: &AccelConfig,
    input: &Tensor3,
    enc: &EncodedKernels,
    acc_fmt: QFormat,
    out_fmt: QFormat,
) -> Result<(CycleReport, Tensor3), SimError> {
    config.validate()?;
    config.check_bandwidth()?;
    let cb = enc.codebook();
    if cb.bins() != config.b {
        return Err(SimError::InvalidConfig(format!(
            "config has b={} but the codebook has {} bins",
            config.b,
            cb.bins()
        )));
    }
    let layer = LayerShape {
        width: input.width(),
        height: input.height(),
        k: enc.k(),
        in_channels: enc.input_channels(),
        out_channels: enc.output_channels(),
    };
    let (out_w, out_h) = layer.validate()?;
    if input.channels() != layer.in_channels {
        return Err(ConvError::ChannelMismatch {
            input: input.channels(),
            kernels: layer.in_channels,
        }
        .into());
    }
    check_guard_bits(acc_fmt, input.format(), layer.terms_per_output())?;

    let k = layer.k;
    let taps: Vec<(usize, usize, usize)> = (0..k)
        .flat_map(|x| (0..k).flat_map(move |y| (0..layer.in_channels).map(move |i| (x, y, i))))
        .collect();
    let q = config.weight_inputs_per_cycle;
    let mut out = Tensor3::zeros(out_w, out_h, layer.out_channels, out_fmt);
    let mut report = empty_report(config, &layer);
    let mut timeline = Timeline::new(config.overlap_postpass);
    let mut tally = OpTally::default();

    for batch in batches(config, out_w * out_h, layer.out_channels) {
        let unit_of = |p: usize, o: usize| p * q + o;
        let target = |p: usize, o: usize| {
            let pix = batch.first_pixel + p;
            (pix / out_h, pix % out_h, batch.first_channel + o)
        };
        let mut acc_cycles = 0u64;
        let mut post_cycles = 0u64;
        match config.mode {
            AccelMode::DirectMac => {
                let mut macs: Vec<WsMacState> = (0..config.n_mac_units)
                    .map(|_| WsMacState::new(cb.clone(), acc_fmt))
                    .collect::<Result<_, _>>()?;
                for &(x, y, i) in &taps {
                    for p in 0..batch.pixels {
                        for o in 0..batch.channels {
                            let (w, h, ch) = target(p, o);
                            macs[unit_of(p, o)].step(
                                input.get(w + x, h + y, i),
                                enc.index(ch, x, y, i) as usize,
                                &mut tally,
                            )?;
                            report.mac_busy += 1;
                            report.ops_executed += 1;
                        }
                    }
                    acc_cycles += 1;
                }
                for p in 0..batch.pixels {
                    for o in 0..batch.channels {
                        let (w, h, ch) = target(p, o);
                        let v = macs[unit_of(p, o)].acc().resize(out_fmt);
                        out.set(w, h, ch, v).expect("output is in out_fmt");
                    }
                }
            }
            AccelMode::PasSharedMac => {
                let mut units: Vec<PasState> = (0..config.n_pas_units)
                    .map(|_| PasState::reset(cb.bins(), acc_fmt))
                    .collect::<Result<_, _>>()?;
                for &(x, y, i) in &taps {
                    for p in 0..batch.pixels {
                        for o in 0..batch.channels {
                            let (w, h, ch) = target(p, o);
                            units[unit_of(p, o)].accumulate_tallied(
                                input.get(w + x, h + y, i),
                                enc.index(ch, x, y, i) as usize,
                                &mut tally,
                            )?;
                            report.pas_busy += 1;
                            report.ops_executed += 1;
                        }
                    }
                    acc_cycles += 1;
                }
                let reg = postpass_format(acc_fmt, cb).map_err(PasmError::from)?;
                let mut results = vec![Fxp::zero(out_fmt); config.n_pas_units];
                for mac in 0..config.n_mac_units {
                    let mut cycles = 0u64;
                    for u in (mac..config.n_pas_units).step_by(config.n_mac_units) {
                        let mut sum = Fxp::zero(reg);
                        for (bin, &weight) in units[u].bins().iter().zip(cb.weights()) {
                            let p = bin.mul_full(weight).map_err(PasmError::from)?;
                            sum = sum.wrapping_add(p.resize(reg)).map_err(PasmError::from)?;
                            cycles += 1;
                        }
                        results[u] = sum.resize(out_fmt);
                    }
                    report.mac_busy += cycles;
                    post_cycles = post_cycles.max(cycles);
                }
                for p in 0..batch.pixels {
                    for o in 0..batch.channels {
                        let (w, h, ch) = target(p, o);
                        out.set(w, h, ch, results[unit_of(p, o)])
                            .expect("output is in out_fmt");
                    }
                }
            }
        }
        timeline.push(acc_cycles, post_cycles);
        report.batches += 1;
        report.accumulate_cycles += acc_cycles;
        report.postpass_cycles += post_cycles;
    }
    report.total_cycles = timeline.end();
    Ok((report, out))
}

/// Cycle reports of two configurations on the same layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigComparison {
    pub a: CycleReport,
    pub b: CycleReport,
    /// `b.total / a.total`.
    pub cycle_ratio: f64,
    /// `(b.total - a.total) / a.total`: the extra cycles `b` spends,
    /// relative to `a`.
    pub overhead: f64,
}

pub fn compare_configs(
    a: &AccelConfig,
    b: &AccelConfig,
    layer: &LayerShape,
) -> Result<ConfigComparison, SimError> {
    let ra = simulate_layer(a, layer)?;
    let rb = simulate_layer(b, layer)?;
    let (ta, tb) = (ra.total_cycles as f64, rb.total_cycles as f64);
    let (cycle_ratio, overhead) = if ra.total_cycles == 0 {
        (1.0, 0.0)
    } else {
        (tb / ta, (tb - ta) / ta)
    };
    Ok(ConfigComparison {
        a: ra,
        b: rb,
        cycle_ratio,
        overhead,
    })
}
