//! Weight sharing: a table of `b = 2^wci` shared weights and the index
//! tensors that refer to it.
//!
//! Kernel weights are replaced by the index of their nearest codeword, so a
//! `wci`-bit index stands in for a full-width weight. Two ways of choosing
//! the codewords are provided: equal-width bins over the weight range, and
//! Lloyd's k-means seeded from those bins.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fxp::{Fxp, FxpError, QFormat};
use crate::tensor::{KernelSet, TensorError};

pub const MAX_WCI: u32 = 8;
pub const LLOYD_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("cannot build a codebook from no weights")]
    Empty,
    #[error("b must be a power of two between 2 and 256 (got {0})")]
    NotPowerOfTwo(usize),
    #[error("codebook weights must share one format: {0} vs {1}")]
    FormatMismatch(QFormat, QFormat),
    #[error("bin index {index} out of range for {bins} bins")]
    IndexOutOfRange { index: usize, bins: usize },
    #[error("malformed codebook csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<csv::Error> for CodebookError {
    fn from(e: csv::Error) -> Self {
        CodebookError::Csv(e.to_string())
    }
}

/// `wci` such that `b == 2^wci`, if `b` is a supported bin count.
pub fn index_width(b: usize) -> Result<u32, CodebookError> {
    if b.is_power_of_two() && (2..=1usize << MAX_WCI).contains(&b) {
        Ok(b.trailing_zeros())
    } else {
        Err(CodebookError::NotPowerOfTwo(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinningMethod {
    #[default]
    UniformRange,
    LloydKmeans,
}

impl FromStr for BinningMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "uniform-range" => Ok(BinningMethod::UniformRange),
            "kmeans" | "lloyd-kmeans" => Ok(BinningMethod::LloydKmeans),
            other => Err(format!("unknown binning method {other:?}")),
        }
    }
}

/// The shared-weight register file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    weights: Vec<Fxp>,
    wci: u32,
}

impl Codebook {
    pub fn new(weights: Vec<Fxp>) -> Result<Self, CodebookError> {
        let wci = index_width(weights.len())?;
        let fmt = weights[0].format();
        if let Some(w) = weights.iter().find(|w| w.format() != fmt) {
            return Err(CodebookError::FormatMismatch(fmt, w.format()));
        }
        Ok(Codebook { weights, wci })
    }

    pub fn from_raw(raw: &[i128], fmt: QFormat) -> Result<Self, CodebookError> {
        let weights = raw
            .iter()
            .map(|&r| Fxp::from_raw(r, fmt))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(weights)
    }

    pub fn weights(&self) -> &[Fxp] {
        &self.weights
    }

    pub fn weight(&self, index: usize) -> Result<Fxp, CodebookError> {
        self.weights
            .get(index)
            .copied()
            .ok_or(CodebookError::IndexOutOfRange {
                index,
                bins: self.bins(),
            })
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn wci(&self) -> u32 {
        self.wci
    }

    pub fn format(&self) -> QFormat {
        self.weights[0].format()
    }

    /// Index of the nearest codeword; ties go to the lower index.
    pub fn nearest(&self, value: Fxp) -> Result<u8, CodebookError> {
        if value.format() != self.format() {
            return Err(CodebookError::FormatMismatch(self.format(), value.format()));
        }
        Ok(nearest_index(&self.raw_weights(), value.raw()) as u8)
    }

    pub fn encode_values(&self, values: &[Fxp]) -> Result<Vec<u8>, CodebookError> {
        values.iter().map(|&v| self.nearest(v)).collect()
    }

    pub fn decode_indices(&self, indices: &[u8]) -> Result<Vec<Fxp>, CodebookError> {
        indices.iter().map(|&i| self.weight(i as usize)).collect()
    }

    fn raw_weights(&self) -> Vec<i128> {
        self.weights.iter().map(|w| w.raw()).collect()
    }

    /// CSV with header `index,raw,value`, one row per bin.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CodebookError> {
        let mut w = csv::Writer::from_writer(out);
        for (index, weight) in self.weights.iter().enumerate() {
            w.serialize(CodebookRow {
                index,
                raw: weight.raw() as i64,
                value: weight.to_f64(),
            })?;
        }
        w.flush().map_err(|e| CodebookError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, fmt: QFormat) -> Result<Self, CodebookError> {
        let mut r = csv::Reader::from_reader(input);
        let mut raws = Vec::new();
        for (expected, row) in r.deserialize::<CodebookRow>().enumerate() {
            let row = row?;
            if row.index != expected {
                return Err(CodebookError::Csv(format!(
                    "row {expected} has index {}",
                    row.index
                )));
            }
            raws.push(row.raw as i128);
        }
        Self::from_raw(&raws, fmt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookRow {
    pub index: usize,
    pub raw: i64,
    pub value: f64,
}

fn nearest_index(codewords: &[i128], raw: i128) -> usize {
    let mut best = 0;
    let mut best_dist = u128::MAX;
    for (k, &c) in codewords.iter().enumerate() {
        let d = c.abs_diff(raw);
        if d < best_dist {
            best = k;
            best_dist = d;
        }
    }
    best
}

/// Choose `b` codewords for `weights`.
pub fn build_codebook(
    weights: &[Fxp],
    b: usize,
    method: BinningMethod,
) -> Result<Codebook, CodebookError> {
    index_width(b)?;
    let first = weights.first().ok_or(CodebookError::Empty)?;
    let fmt = first.format();
    if let Some(w) = weights.iter().find(|w| w.format() != fmt) {
        return Err(CodebookError::FormatMismatch(fmt, w.format()));
    }
    let raws: Vec<i128> = weights.iter().map(|w| w.raw()).collect();
    match method {
        BinningMethod::UniformRange => uniform_codebook(&raws, b, fmt),
        BinningMethod::LloydKmeans => lloyd_codebook(&raws, b, fmt).map(|(cb, _)| cb),
    }
}

fn uniform_centers(raws: &[i128], b: usize) -> Vec<f64> {
    let min = *raws.iter().min().expect("non-empty") as f64;
    let max = *raws.iter().max().expect("non-empty") as f64;
    let width = (max - min) / b as f64;
    (0..b).map(|k| min + (k as f64 + 0.5) * width).collect()
}

fn round_centers(centers: &[f64], fmt: QFormat) -> Result<Codebook, CodebookError> {
    let raws: Vec<i128> = centers
        .iter()
        .map(|c| c.round().clamp(fmt.min_raw() as f64, fmt.max_raw() as f64) as i128)
        .collect();
    Codebook::from_raw(&raws, fmt)
}

fn uniform_codebook(raws: &[i128], b: usize, fmt: QFormat) -> Result<Codebook, CodebookError> {
    round_centers(&uniform_centers(raws, b), fmt)
}

/// Progress record of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydTrace {
    /// Within-cluster squared error (raw units) after the first assignment,
    /// then after each update step.
    pub sse: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd's algorithm seeded from the uniform-range centers, run until the
/// assignment stops changing or [`LLOYD_MAX_ITERATIONS`] is reached.
/// Codewords come back in ascending order.
pub fn lloyd_codebook(
    raws: &[i128],
    b: usize,
    fmt: QFormat,
) -> Result<(Codebook, LloydTrace), CodebookError> {
    index_width(b)?;
    if raws.is_empty() {
        return Err(CodebookError::Empty);
    }
    let points: Vec<f64> = raws.iter().map(|&r| r as f64).collect();
    let mut centers = uniform_centers(raws, b);
    let mut trace = LloydTrace {
        sse: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let mut prev: Option<Vec<usize>> = None;

    for _ in 0..LLOYD_MAX_ITERATIONS {
        let assign: Vec<usize> = points.iter().map(|&p| nearest_center(&centers, p)).collect();
        if prev.as_ref() == Some(&assign) {
            trace.converged = true;
            break;
        }
        if prev.is_none() {
            trace.sse.push(sse(&points, &centers, &assign));
        }
        trace.iterations += 1;

        let mut sums = vec![0.0; b];
        let mut counts = vec![0usize; b];
        for (&p, &a) in points.iter().zip(&assign) {
            sums[a] += p;
            counts[a] += 1;
        }
        for k in 0..b {
            if counts[k] > 0 {
                centers[k] = sums[k] / counts[k] as f64;
            }
        }
        // Empty clusters move onto the points worst served by the current
        // centers, farthest first, ties to the lowest point index.
        let mut taken = vec![false; points.len()];
        for k in (0..b).filter(|&k| counts[k] == 0) {
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(i, &p)| (i, (p - centers[assign[i]]).abs()))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                centers[k] = points[i];
            }
        }
        trace.sse.push(sse(&points, &centers, &assign));
        prev = Some(assign);
    }

    centers.sort_by(|a, b| a.total_cmp(b));
    Ok((round_centers(&centers, fmt)?, trace))
}

fn nearest_center(centers: &[f64], p: f64) -> usize {
    let mut best = 0;
    for (k, &c) in centers.iter().enumerate().skip(1) {
        if (p - c).abs() < (p - centers[best]).abs() {
            best = k;
        }
    }
    best
}

fn sse(points: &[f64], centers: &[f64], assign: &[usize]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(&p, &a)| (p - centers[a]).powi(2))
        .sum()
}

/// Kernels stored as bin indices into a codebook, laid out `[o][x][y][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedKernels {
    dims: [usize; 4],
    indices: Vec<u8>,
    codebook: Codebook,
}

impl EncodedKernels {
    pub fn new(dims: [usize; 4], indices: Vec<u8>, codebook: Codebook) -> Result<Self, CodebookError> {
        if dims[1] != dims[2] {
            return Err(TensorError::Shape(format!("kernel must be square, got {dims:?}")).into());
        }
        if dims.iter().product::<usize>() != indices.len() || dims.contains(&0) {
            return Err(TensorError::Shape(format!(
                "{} indices for dims {dims:?}",
                indices.len()
            ))
            .into());
        }
        if let Some(&i) = indices.iter().find(|&&i| i as usize >= codebook.bins()) {
            return Err(CodebookError::IndexOutOfRange {
                index: i as usize,
                bins: codebook.bins(),
            });
        }
        Ok(EncodedKernels {
            dims,
            indices,
            codebook,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn output_channels(&self) -> usize {
        self.dims[0]
    }

    pub fn k(&self) -> usize {
        self.dims[1]
    }

    pub fn input_channels(&self) -> usize {
        self.dims[3]
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn index(&self, o: usize, x: usize, y: usize, i: usize) -> u8 {
        let k = self.dims[1];
        self.indices[((o * k + x) * k + y) * self.dims[3] + i]
    }
}

/// Replace every kernel weight by the index of its nearest codeword.
pub fn encode(kernels: &KernelSet, cb: &Codebook) -> Result<EncodedKernels, CodebookError> {
    if kernels.format() != cb.format() {
        return Err(CodebookError::FormatMismatch(cb.format(), kernels.format()));
    }
    let codewords = cb.raw_weights();
    let indices = kernels
        .raw()
        .iter()
        .map(|&r| nearest_index(&codewords, r) as u8)
        .collect();
    EncodedKernels::new(kernels.dims(), indices, cb.clone())
}

/// Look every index up in the codebook.
pub fn decode(enc: &EncodedKernels) -> KernelSet {
    let cb = enc.codebook();
    let raw = enc
        .indices
        .iter()
        .map(|&i| cb.weights[i as usize].raw())
        .collect();
    let [o, k, _, c] = enc.dims;
    KernelSet::from_raw(o, k, c, cb.format(), raw).expect("codewords fit their own format")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int8(vals: &[i128]) -> Vec<Fxp> {
        let f = QFormat::int(8).unwrap();
        vals.iter().map(|&v| Fxp::from_raw(v, f).unwrap()).collect()
    }

    fn raws(cb: &Codebook) -> Vec<i128> {
        cb.weights().iter().map(|w| w.raw()).collect()
    }

    #[test]
    fn two_exact_clusters() {
        for m in [BinningMethod::UniformRange, BinningMethod::LloydKmeans] {
            let cb = build_codebook(&int8(&[1, 1, 2, 2]), 2, m).unwrap();
            assert_eq!(raws(&cb), vec![1, 2]);
            assert_eq!(cb.wci(), 1);
        }
    }

    #[test]
    fn degenerate_range_repeats_value() {
        for m in [BinningMethod::UniformRange, BinningMethod::LloydKmeans] {
            let cb = build_codebook(&int8(&[5, 5, 5, 5]), 2, m).unwrap();
            assert_eq!(raws(&cb), vec![5, 5]);
            assert_eq!(cb.encode_values(&int8(&[5, 5])).unwrap(), vec![0, 0]);
        }
        let cb = build_codebook(&int8(&[-3]), 16, BinningMethod::LloydKmeans).unwrap();
        assert!(raws(&cb).iter().all(|&r| r == -3));
    }

    #[test]
    fn kmeans_four_points() {
        let cb = build_codebook(&int8(&[0, 1, 2, 9]), 2, BinningMethod::LloydKmeans).unwrap();
        assert_eq!(raws(&cb), vec![1, 9]);
        assert_eq!(cb.encode_values(&int8(&[0, 1, 2, 9])).unwrap(), vec![0, 0, 0, 1]);
        let decoded = cb.decode_indices(&[0, 0, 0, 1]).unwrap();
        assert_eq!(decoded, int8(&[1, 1, 1, 9]));
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let cb = Codebook::new(int8(&[0, 1, 2, 4])).unwrap();
        assert_eq!(cb.nearest(int8(&[3])[0]).unwrap(), 2);
        assert_eq!(cb.nearest(int8(&[4])[0]).unwrap(), 3);
    }

    #[test]
    fn rejects_bad_bins() {
        let w = int8(&[1, 2, 3]);
        for b in [0, 1, 3, 12, 512] {
            let err = build_codebook(&w, b, BinningMethod::UniformRange).unwrap_err();
            assert!(err.to_string().contains("b must be a power of two"));
        }
        assert!(matches!(
            build_codebook(&[], 4, BinningMethod::UniformRange),
            Err(CodebookError::Empty)
        ));
        assert!(Codebook::new(int8(&[1, 2, 3])).is_err());
    }

    #[test]
    fn format_mismatch_is_reported() {
        let cb = Codebook::new(int8(&[0, 1])).unwrap();
        let other = Fxp::zero(QFormat::new(8, 2).unwrap());
        assert!(matches!(
            cb.nearest(other),
            Err(CodebookError::FormatMismatch(..))
        ));
    }

    #[test]
    fn encoded_kernels_validate_indices() {
        let cb = Codebook::new(int8(&[0, 1])).unwrap();
        assert!(EncodedKernels::new([1, 1, 1, 2], vec![0, 2], cb.clone()).is_err());
        assert!(EncodedKernels::new([1, 1, 1, 2], vec![0], cb.clone()).is_err());
        let enc = EncodedKernels::new([1, 1, 1, 2], vec![0, 0], cb).unwrap();
        assert!(decode(&enc).values().all(|v| v.raw() == 0));
    }

    #[test]
    fn csv_layout() {
        let f = QFormat::new(16, 8).unwrap();
        let cb = Codebook::from_raw(&[-128, 435], f).unwrap();
        let mut out = Vec::new();
        cb.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(text, "index,raw,value\n0,-128,-0.5\n1,435,1.69921875\n");
        assert_eq!(Codebook::read_csv(&out[..], f).unwrap(), cb);
        assert!(Codebook::read_csv(&b"index,raw,value\n1,0,0\n0,0,0\n"[..], f).is_err());
    }
}
