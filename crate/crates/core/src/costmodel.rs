//! Analytical gate-count model in NAND2 equivalents.
//!
//! Each unit is built from four kinds of part: adders (`O(w)` gates),
//! multipliers (`O(w^2)`), registers (`O(w)`) and register-file ports
//! (`O(w*b)`). A simple MAC has one adder, one multiplier and one register.
//! A weight-shared MAC adds a `b`-entry weight register file with one port.
//! A PAS unit drops the multiplier and keeps `b` bin registers with two
//! ports. The per-bit constants are calibratable; only directions and
//! scaling laws are meaningful, not absolute counts.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accelsim::{AccelConfig, AccelMode};

/// Largest bin count the gate model accepts. Wider than a datapath index
/// so the PASM/MAC crossover can be located.
pub const MAX_MODEL_BINS: usize = 4096;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("bit width {0} < 2")]
    BadWidth(u32),
    #[error("b must be a power of two between 2 and {MAX_MODEL_BINS} (got {0})")]
    Bins(usize),
    #[error("bad constants file: {0}")]
    Constants(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for CostError {
    fn from(e: csv::Error) -> Self {
        CostError::Csv(e.to_string())
    }
}

/// NAND2-equivalent gates per structural unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConstants {
    pub adder_per_bit: f64,
    pub mult_per_bit_sq: f64,
    pub register_per_bit: f64,
    pub regfile_port_per_bit_entry: f64,
}

impl Default for GateConstants {
    /// Full adder ~6 NAND2 per bit, array multiplier ~7 per bit pair,
    /// flip-flop ~5 per bit, mux tree ~1.5 per bit and entry.
    fn default() -> Self {
        GateConstants {
            adder_per_bit: 6.0,
            mult_per_bit_sq: 7.0,
            register_per_bit: 5.0,
            regfile_port_per_bit_entry: 1.5,
        }
    }
}

const CONSTANT_NAMES: [&str; 4] = [
    "adder_per_bit",
    "mult_per_bit_sq",
    "register_per_bit",
    "regfile_port_per_bit_entry",
];

#[derive(Debug, Serialize, Deserialize)]
struct ConstantRow {
    name: String,
    value: f64,
}

impl GateConstants {
    fn as_array(&self) -> [f64; 4] {
        [
            self.adder_per_bit,
            self.mult_per_bit_sq,
            self.register_per_bit,
            self.regfile_port_per_bit_entry,
        ]
    }

    fn from_array(v: [f64; 4]) -> Result<Self, CostError> {
        if let Some((name, x)) = CONSTANT_NAMES
            .iter()
            .zip(v)
            .find(|(_, x)| !(x.is_finite() && *x > 0.0))
        {
            return Err(CostError::Constants(format!("{name} must be positive, got {x}")));
        }
        Ok(GateConstants {
            adder_per_bit: v[0],
            mult_per_bit_sq: v[1],
            register_per_bit: v[2],
            regfile_port_per_bit_entry: v[3],
        })
    }

    /// Parse a `name,value` CSV naming each constant exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, CostError> {
        let mut r = csv::Reader::from_reader(input);
        let mut slots: [Option<f64>; 4] = [None; 4];
        for row in r.deserialize::<ConstantRow>() {
            let row = row.map_err(|e| CostError::Constants(e.to_string()))?;
            let i = CONSTANT_NAMES
                .iter()
                .position(|n| *n == row.name)
                .ok_or_else(|| CostError::Constants(format!("unknown constant {:?}", row.name)))?;
            if slots[i].replace(row.value).is_some() {
                return Err(CostError::Constants(format!("{} given twice", row.name)));
            }
        }
        let mut v = [0.0; 4];
        for (i, s) in slots.iter().enumerate() {
            v[i] = s.ok_or_else(|| CostError::Constants(format!("missing {}", CONSTANT_NAMES[i])))?;
        }
        Self::from_array(v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CostError> {
        let mut w = csv::Writer::from_writer(out);
        for (name, value) in CONSTANT_NAMES.iter().zip(self.as_array()) {
            w.serialize(ConstantRow {
                name: name.to_string(),
                value,
            })?;
        }
        w.flush().map_err(|e| CostError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CostUnit {
    SimpleMac,
    WsMac,
    Pas,
    /// A whole accelerator, by its label (`16-mac`, `16-pas-4-mac`).
    Config(String),
}

impl fmt::Display for CostUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostUnit::SimpleMac => f.write_str("simple-mac"),
            CostUnit::WsMac => f.write_str("ws-mac"),
            CostUnit::Pas => f.write_str("pas"),
            CostUnit::Config(label) => f.write_str(label),
        }
    }
}

impl From<&str> for CostUnit {
    fn from(s: &str) -> Self {
        match s {
            "simple-mac" => CostUnit::SimpleMac,
            "ws-mac" => CostUnit::WsMac,
            "pas" => CostUnit::Pas,
            other => CostUnit::Config(other.to_string()),
        }
    }
}

/// How many of each part a unit is built from, in the units the
/// constants are quoted in.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartCounts {
    pub adder_bits: f64,
    pub mult_bits_sq: f64,
    pub register_bits: f64,
    pub regfile_port_bit_entries: f64,
}

impl PartCounts {
    fn of(unit: &CostUnit, w: u32, b: usize) -> PartCounts {
        let (w, b) = (w as f64, b as f64);
        let (adders, mults, registers, ports) = match unit {
            CostUnit::SimpleMac => (1.0, 1.0, 1.0, 0.0),
            CostUnit::WsMac => (1.0, 1.0, b, 1.0),
            CostUnit::Pas => (1.0, 0.0, b, 2.0),
            CostUnit::Config(_) => unreachable!("configs are sums of units"),
        };
        PartCounts {
            adder_bits: adders * w,
            mult_bits_sq: mults * w * w,
            register_bits: registers * w,
            regfile_port_bit_entries: ports * w * b,
        }
    }

    fn scaled(self, k: f64) -> PartCounts {
        PartCounts {
            adder_bits: self.adder_bits * k,
            mult_bits_sq: self.mult_bits_sq * k,
            register_bits: self.register_bits * k,
            regfile_port_bit_entries: self.regfile_port_bit_entries * k,
        }
    }

    fn plus(self, o: PartCounts) -> PartCounts {
        PartCounts {
            adder_bits: self.adder_bits + o.adder_bits,
            mult_bits_sq: self.mult_bits_sq + o.mult_bits_sq,
            register_bits: self.register_bits + o.register_bits,
            regfile_port_bit_entries: self.regfile_port_bit_entries + o.regfile_port_bit_entries,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [
            self.adder_bits,
            self.mult_bits_sq,
            self.register_bits,
            self.regfile_port_bit_entries,
        ]
    }

    fn priced(self, unit: CostUnit, w: u32, b: usize, k: &GateConstants) -> CostReport {
        let gates_adder = self.adder_bits * k.adder_per_bit;
        let gates_mult = self.mult_bits_sq * k.mult_per_bit_sq;
        let gates_register = self.register_bits * k.register_per_bit;
        let gates_regfile_port = self.regfile_port_bit_entries * k.regfile_port_per_bit_entry;
        CostReport {
            unit,
            w,
            b,
            gates_adder,
            gates_mult,
            gates_register,
            gates_regfile_port,
            gates_total: gates_adder + gates_mult + gates_register + gates_regfile_port,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub unit: CostUnit,
    pub w: u32,
    pub b: usize,
    pub gates_adder: f64,
    pub gates_mult: f64,
    pub gates_register: f64,
    pub gates_regfile_port: f64,
    pub gates_total: f64,
}

impl CostReport {
    pub fn row(&self) -> CostRow {
        CostRow {
            unit: self.unit.to_string(),
            w: self.w,
            b: self.b,
            adder: self.gates_adder,
            mult: self.gates_mult,
            register: self.gates_register,
            regfile_port: self.gates_regfile_port,
            total: self.gates_total,
        }
    }
}

/// One line of the cost report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub unit: String,
    pub w: u32,
    pub b: usize,
    pub adder: f64,
    pub mult: f64,
    pub register: f64,
    pub regfile_port: f64,
    pub total: f64,
}

pub const COST_CSV_HEADER: &str = "unit,w,b,adder,mult,register,regfile_port,total";

pub fn write_cost_csv<W: Write>(rows: &[CostRow], out: W) -> Result<(), CostError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(COST_CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CostError::Csv(e.to_string()))
}

pub fn read_cost_csv<R: Read>(input: R) -> Result<Vec<CostRow>, CostError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != COST_CSV_HEADER {
        return Err(CostError::Csv(format!("unexpected header {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

fn check_dims(w: u32, b: usize) -> Result<(), CostError> {
    if w < 2 {
        return Err(CostError::BadWidth(w));
    }
    if !b.is_power_of_two() || !(2..=MAX_MODEL_BINS).contains(&b) {
        return Err(CostError::Bins(b));
    }
    Ok(())
}

/// Gates of one unit. `b` is validated but unused for a simple MAC.
pub fn unit_gates(unit: CostUnit, w: u32, b: usize, k: &GateConstants) -> Result<CostReport, CostError> {
    check_dims(w, b)?;
    if let CostUnit::Config(label) = &unit {
        return Err(CostError::Constants(format!(
            "{label} is a configuration; use config_gates"
        )));
    }
    Ok(PartCounts::of(&unit, w, b).priced(unit, w, b, k))
}

fn config_parts(cfg: &AccelConfig) -> PartCounts {
    let ws = PartCounts::of(&CostUnit::WsMac, cfg.w, cfg.b).scaled(cfg.n_mac_units as f64);
    match cfg.mode {
        AccelMode::DirectMac => ws,
        AccelMode::PasSharedMac => {
            PartCounts::of(&CostUnit::Pas, cfg.w, cfg.b)
                .scaled(cfg.n_pas_units as f64)
                .plus(ws)
        }
    }
}

/// Gates of a whole accelerator: its weight-shared MACs plus, in PAS mode,
/// its PAS units.
pub fn config_gates(cfg: &AccelConfig, k: &GateConstants) -> Result<CostReport, CostError> {
    check_dims(cfg.w, cfg.b)?;
    Ok(config_parts(cfg).priced(CostUnit::Config(cfg.label()), cfg.w, cfg.b, k))
}

/// Accumulations per output element, `K^2 * c`.
pub fn macs_per_output(k: u64, c: u64) -> u64 {
    k * k * c
}

/// Every unit and both evaluated configurations at each `(w, b)` point,
/// ordered by `w` then `b`.
pub fn sweep(w_values: &[u32], b_values: &[usize], k: &GateConstants) -> Result<Vec<CostReport>, CostError> {
    let mut ws = w_values.to_vec();
    let mut bs = b_values.to_vec();
    ws.sort_unstable();
    ws.dedup();
    bs.sort_unstable();
    bs.dedup();
    let mut out = Vec::new();
    for &w in &ws {
        for &b in &bs {
            for unit in [CostUnit::SimpleMac, CostUnit::WsMac, CostUnit::Pas] {
                out.push(unit_gates(unit, w, b, k)?);
            }
            out.push(config_gates(&AccelConfig::mac16(b, w), k)?);
            out.push(config_gates(&AccelConfig::pas16_mac4(b, w), k)?);
        }
    }
    Ok(out)
}

/// One observed gate count for calibration.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Unit { unit: CostUnit, w: u32, b: usize, gates: f64 },
    Config { cfg: AccelConfig, gates: f64 },
}

/// Least-squares fit of the four constants to observed totals. Needs
/// observations that pin down all four parts; the fitted constants must
/// come out positive.
pub fn calibrate(observations: &[Observation]) -> Result<GateConstants, CostError> {
    if observations.len() < 4 {
        return Err(CostError::Calibration(format!(
            "need at least 4 observations, got {}",
            observations.len()
        )));
    }
    let mut a = DMatrix::<f64>::zeros(observations.len(), 4);
    let mut y = DVector::<f64>::zeros(observations.len());
    for (row, obs) in observations.iter().enumerate() {
        let (parts, gates) = match obs {
            Observation::Unit { unit, w, b, gates } => {
                check_dims(*w, *b)?;
                if matches!(unit, CostUnit::Config(_)) {
                    return Err(CostError::Calibration("config given as unit".into()));
                }
                (PartCounts::of(unit, *w, *b), *gates)
            }
            Observation::Config { cfg, gates } => {
                check_dims(cfg.w, cfg.b)?;
                (config_parts(cfg), *gates)
            }
        };
        for (col, v) in parts.as_array().into_iter().enumerate() {
            a[(row, col)] = v;
        }
        y[row] = gates;
    }
    let svd = a.svd(true, true);
    if svd.rank(1e-9 * svd.singular_values.max()) < 4 {
        return Err(CostError::Calibration(
            "observations do not determine all four constants".into(),
        ));
    }
    let x = svd
        .solve(&y, 1e-12)
        .map_err(|e| CostError::Calibration(e.to_string()))?;
    GateConstants::from_array([x[0], x[1], x[2], x[3]])
}

/// Both evaluated configurations at one `(w, b)` point, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub w: u32,
    pub b: usize,
    pub mac_adder: f64,
    pub mac_mult: f64,
    pub mac_register: f64,
    pub mac_regfile_port: f64,
    pub mac_total: f64,
    pub pasm_adder: f64,
    pub pasm_mult: f64,
    pub pasm_register: f64,
    pub pasm_regfile_port: f64,
    pub pasm_total: f64,
    /// `pasm_total / mac_total`.
    pub ratio: f64,
}

pub const PAIR_CSV_HEADER: &str = "w,b,mac_adder,mac_mult,mac_register,mac_regfile_port,mac_total,\
pasm_adder,pasm_mult,pasm_register,pasm_regfile_port,pasm_total,ratio";

/// 16-MAC against 16-PAS-4-MAC at each point, in the order given.
pub fn config_pairs(points: &[(u32, usize)], k: &GateConstants) -> Result<Vec<PairRow>, CostError> {
    points
        .iter()
        .map(|&(w, b)| {
            let mac = config_gates(&AccelConfig::mac16(b, w), k)?;
            let pasm = config_gates(&AccelConfig::pas16_mac4(b, w), k)?;
            Ok(PairRow {
                w,
                b,
                mac_adder: mac.gates_adder,
                mac_mult: mac.gates_mult,
                mac_register: mac.gates_register,
                mac_regfile_port: mac.gates_regfile_port,
                mac_total: mac.gates_total,
                pasm_adder: pasm.gates_adder,
                pasm_mult: pasm.gates_mult,
                pasm_register: pasm.gates_register,
                pasm_regfile_port: pasm.gates_regfile_port,
                pasm_total: pasm.gates_total,
                ratio: pasm.gates_total / mac.gates_total,
            })
        })
        .collect()
}

pub fn write_pair_csv<W: Write>(rows: &[PairRow], out: W) -> Result<(), CostError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(PAIR_CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CostError::Csv(e.to_string()))
}

pub fn read_pair_csv<R: Read>(input: R) -> Result<Vec<PairRow>, CostError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != PAIR_CSV_HEADER {
        return Err(CostError::Csv(format!("unexpected header {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
