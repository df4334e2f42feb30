//! Parallel accumulate-and-store (PAS) units with a post-pass MAC (PASM),
//! and the weight-shared MAC they replace.
//!
//! A weight-shared MAC looks each bin index up in the codebook and multiplies
//! as it goes: `n` multiplications for `n` inputs. A PAS unit instead keeps
//! one accumulator per bin and adds each image value into the accumulator its
//! bin index selects, leaving the sum as `sum_k bins[k] * weights[k]`,
//! unevaluated. The post-pass then evaluates it with exactly `b`
//! multiplications, regardless of `n`.
//!
//! With bins sized by [`crate::fxp::guard_bits`] neither path wraps before
//! its final resize, so both return the same bits as
//! [`crate::convref::dot_ref`] over the gathered weights.

use thiserror::Error;

use crate::codebook::{index_width, Codebook, CodebookError, EncodedKernels};
use crate::convref::{check_guard_bits, valid_output_dims, ConvError};
use crate::fxp::{guard_bits, Fxp, FxpError, QFormat};
use crate::tensor::Tensor3;

#[derive(Debug, Error)]
pub enum PasmError {
    #[error("bin index {index} out of range for {bins} bins")]
    IndexOutOfRange { index: usize, bins: usize },
    #[error("length mismatch: {0} images vs {1} bin indices")]
    LengthMismatch(usize, usize),
    #[error("image format {image} and accumulator {acc} differ in fraction bits")]
    FracMismatch { image: QFormat, acc: QFormat },
    #[error("{bins} bins but the codebook has {codebook} entries")]
    SizeMismatch { bins: usize, codebook: usize },
    #[error("codebook differs from the one the kernels were encoded with")]
    CodebookMismatch,
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Fxp(#[from] FxpError),
}

/// Operation counts gathered while a kernel runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpTally {
    pub multiplies: u64,
    pub adds: u64,
    pub bin_writes: u64,
}

impl std::ops::AddAssign for OpTally {
    fn add_assign(&mut self, o: OpTally) {
        self.multiplies += o.multiplies;
        self.adds += o.adds;
        self.bin_writes += o.bin_writes;
    }
}

/// The `b`-entry accumulator register file of one PAS unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasState {
    bins: Vec<Fxp>,
    acc_fmt: QFormat,
}

impl PasState {
    /// `b` zeroed bins in `acc_fmt`.
    pub fn reset(b: usize, acc_fmt: QFormat) -> Result<Self, PasmError> {
        index_width(b)?;
        Ok(PasState {
            bins: vec![Fxp::zero(acc_fmt); b],
            acc_fmt,
        })
    }

    pub fn bins(&self) -> &[Fxp] {
        &self.bins
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn acc_format(&self) -> QFormat {
        self.acc_fmt
    }

    /// Add `image` into bin `bin_index`, wrapping in the bin format.
    pub fn accumulate(&mut self, image: Fxp, bin_index: usize) -> Result<(), PasmError> {
        self.accumulate_tallied(image, bin_index, &mut OpTally::default())
    }

    pub fn accumulate_tallied(
        &mut self,
        image: Fxp,
        bin_index: usize,
        tally: &mut OpTally,
    ) -> Result<(), PasmError> {
        if image.format().frac_bits() != self.acc_fmt.frac_bits() {
            return Err(PasmError::FracMismatch {
                image: image.format(),
                acc: self.acc_fmt,
            });
        }
        let bins = self.bins.len();
        let slot = self
            .bins
            .get_mut(bin_index)
            .ok_or(PasmError::IndexOutOfRange {
                index: bin_index,
                bins,
            })?;
        *slot = slot.wrapping_add(image.resize(self.acc_fmt))?;
        tally.adds += 1;
        tally.bin_writes += 1;
        Ok(())
    }

    /// Post-pass: `sum_k bins[k] * cb.weights[k]` in ascending `k`, exactly
    /// `b` multiplications, resized to `out_fmt`.
    ///
    /// The sum is formed in a register wide enough for `b` full products and
    /// only the final resize can wrap or truncate.
    pub fn multiply_phase(&self, cb: &Codebook, out_fmt: QFormat) -> Result<Fxp, PasmError> {
        self.multiply_phase_tallied(cb, out_fmt, &mut OpTally::default())
    }

    pub fn multiply_phase_tallied(
        &self,
        cb: &Codebook,
        out_fmt: QFormat,
        tally: &mut OpTally,
    ) -> Result<Fxp, PasmError> {
        if cb.bins() != self.bins.len() {
            return Err(PasmError::SizeMismatch {
                bins: self.bins.len(),
                codebook: cb.bins(),
            });
        }
        let reg = postpass_format(self.acc_fmt, cb)?;
        let mut sum = Fxp::zero(reg);
        for (bin, &weight) in self.bins.iter().zip(cb.weights()) {
            let p = bin.mul_full(weight)?;
            tally.multiplies += 1;
            sum = sum.wrapping_add(p.resize(reg))?;
            tally.adds += 1;
        }
        Ok(sum.resize(out_fmt))
    }
}

/// Register the post-pass MAC accumulates in: a bin times a weight, plus
/// `ceil(log2 b)` guard bits.
pub fn postpass_format(acc_fmt: QFormat, cb: &Codebook) -> Result<QFormat, FxpError> {
    acc_fmt
        .product(cb.format())?
        .widened(guard_bits(cb.bins()))
}

/// The single accumulator of a weight-shared MAC together with its weight
/// register file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WsMacState {
    acc: Fxp,
    codebook: Codebook,
}

impl WsMacState {
    /// Accumulator in `Q{acc_w + weight_w, acc_f + weight_f}`, the widest
    /// product of an `acc_fmt` value and a codeword.
    pub fn new(codebook: Codebook, acc_fmt: QFormat) -> Result<Self, PasmError> {
        let reg = acc_fmt.product(codebook.format())?;
        Ok(WsMacState {
            acc: Fxp::zero(reg),
            codebook,
        })
    }

    pub fn acc(&self) -> Fxp {
        self.acc
    }

    /// Look the weight up by index, multiply, accumulate.
    pub fn step(&mut self, image: Fxp, bin_index: usize, tally: &mut OpTally) -> Result<(), PasmError> {
        let weight = self
            .codebook
            .weights()
            .get(bin_index)
            .copied()
            .ok_or(PasmError::IndexOutOfRange {
                index: bin_index,
                bins: self.codebook.bins(),
            })?;
        let p = image.mul_full(weight)?;
        tally.multiplies += 1;
        self.acc = self.acc.wrapping_add(p.resize(self.acc.format()))?;
        tally.adds += 1;
        Ok(())
    }
}

fn check_dot_inputs(
    images: &[Fxp],
    bin_indices: &[usize],
    cb: &Codebook,
    acc_fmt: QFormat,
) -> Result<(), PasmError> {
    if images.len() != bin_indices.len() {
        return Err(PasmError::LengthMismatch(images.len(), bin_indices.len()));
    }
    if let Some(&index) = bin_indices.iter().find(|&&i| i >= cb.bins()) {
        return Err(PasmError::IndexOutOfRange {
            index,
            bins: cb.bins(),
        });
    }
    for x in images {
        if x.format().frac_bits() != acc_fmt.frac_bits() {
            return Err(PasmError::FracMismatch {
                image: x.format(),
                acc: acc_fmt,
            });
        }
        check_guard_bits(acc_fmt, x.format(), images.len())?;
    }
    Ok(())
}

/// Dot product through one PAS unit and a post-pass MAC.
///
/// `acc_fmt` is the bin format: same fraction bits as the images and at
/// least `ceil(log2 n)` more integer bits. `out_fmt` receives the final
/// resize; a narrower `out_fmt` wraps exactly like [`ws_mac_dot`] does.
pub fn pasm_dot(
    images: &[Fxp],
    bin_indices: &[usize],
    cb: &Codebook,
    acc_fmt: QFormat,
    out_fmt: QFormat,
) -> Result<Fxp, PasmError> {
    pasm_dot_tallied(images, bin_indices, cb, acc_fmt, out_fmt, &mut OpTally::default())
}

pub fn pasm_dot_tallied(
    images: &[Fxp],
    bin_indices: &[usize],
    cb: &Codebook,
    acc_fmt: QFormat,
    out_fmt: QFormat,
    tally: &mut OpTally,
) -> Result<Fxp, PasmError> {
    check_dot_inputs(images, bin_indices, cb, acc_fmt)?;
    let mut state = PasState::reset(cb.bins(), acc_fmt)?;
    for (&x, &k) in images.iter().zip(bin_indices) {
        state.accumulate_tallied(x, k, tally)?;
    }
    state.multiply_phase_tallied(cb, out_fmt, tally)
}

/// Dot product through a weight-shared MAC: one lookup and one multiply per
/// input. Same format contract as [`pasm_dot`].
pub fn ws_mac_dot(
    images: &[Fxp],
    bin_indices: &[usize],
    cb: &Codebook,
    acc_fmt: QFormat,
    out_fmt: QFormat,
) -> Result<Fxp, PasmError> {
    ws_mac_dot_tallied(images, bin_indices, cb, acc_fmt, out_fmt, &mut OpTally::default())
}

pub fn ws_mac_dot_tallied(
    images: &[Fxp],
    bin_indices: &[usize],
    cb: &Codebook,
    acc_fmt: QFormat,
    out_fmt: QFormat,
    tally: &mut OpTally,
) -> Result<Fxp, PasmError> {
    check_dot_inputs(images, bin_indices, cb, acc_fmt)?;
    let mut mac = WsMacState::new(cb.clone(), acc_fmt)?;
    for (&x, &k) in images.iter().zip(bin_indices) {
        mac.step(x, k, tally)?;
    }
    Ok(mac.acc().resize(out_fmt))
}

/// How often each bin index occurs: a PAS unit fed the image value 1 for
/// every input.
pub fn bin_frequencies(bin_indices: &[usize], b: usize) -> Result<Vec<u64>, PasmError> {
    let fmt = QFormat::int(guard_bits(bin_indices.len()) + 2)?;
    let one = Fxp::from_raw(1, fmt)?;
    let mut state = PasState::reset(b, fmt)?;
    for &k in bin_indices {
        state.accumulate(one, k)?;
    }
    Ok(state.bins().iter().map(|v| v.raw() as u64).collect())
}

/// Convolution with every output computed by [`pasm_dot`] over its
/// `K*K*c` window, gathered in the same `x, y, i` order as the reference.
pub fn pasm_conv2d(
    input: &Tensor3,
    enc: &EncodedKernels,
    cb: &Codebook,
    acc_fmt: QFormat,
    out_fmt: QFormat,
) -> Result<Tensor3, PasmError> {
    pasm_conv2d_tallied(input, enc, cb, acc_fmt, out_fmt, &mut OpTally::default())
}

pub fn pasm_conv2d_tallied(
    input: &Tensor3,
    enc: &EncodedKernels,
    cb: &Codebook,
    acc_fmt: QFormat,
    out_fmt: QFormat,
    tally: &mut OpTally,
) -> Result<Tensor3, PasmError> {
    if enc.codebook() != cb {
        return Err(PasmError::CodebookMismatch);
    }
    let (k, c) = (enc.k(), enc.input_channels());
    if input.channels() != c {
        return Err(ConvError::ChannelMismatch {
            input: input.channels(),
            kernels: c,
        }
        .into());
    }
    let (out_w, out_h) =
        valid_output_dims(input.width(), input.height(), k).ok_or(ConvError::KernelTooLarge {
            k,
            width: input.width(),
            height: input.height(),
        })?;
    if input.format().frac_bits() != acc_fmt.frac_bits() {
        return Err(PasmError::FracMismatch {
            image: input.format(),
            acc: acc_fmt,
        });
    }
    check_guard_bits(acc_fmt, input.format(), k * k * c)?;

    let mut out = Tensor3::zeros(out_w, out_h, enc.output_channels(), out_fmt);
    for w in 0..out_w {
        for h in 0..out_h {
            for o in 0..enc.output_channels() {
                let mut state = PasState::reset(cb.bins(), acc_fmt)?;
                for x in 0..k {
                    for y in 0..k {
                        for i in 0..c {
                            state.accumulate_tallied(
                                input.get(w + x, h + y, i),
                                enc.index(o, x, y, i) as usize,
                                tally,
                            )?;
                        }
                    }
                }
                let v = state.multiply_phase_tallied(cb, out_fmt, tally)?;
                out.set(w, h, o, v).expect("output is in out_fmt");
            }
        }
    }
    Ok(out)
}
