//! Golden multi-channel 2-D convolution and dot product.
//!
//! Straight loops over full-width products, no lowering or tiling. Every
//! accelerated path in this crate is checked against these.

use thiserror::Error;

use crate::fxp::{guard_bits, Fxp, FxpError, QFormat};
use crate::tensor::{KernelSet, Tensor3, TensorError};

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("length mismatch: {0} images vs {1} weights")]
    LengthMismatch(usize, usize),
    #[error("input has {input} channels, kernels expect {kernels}")]
    ChannelMismatch { input: usize, kernels: usize },
    #[error("kernel size {k} larger than {width}x{height} input")]
    KernelTooLarge { k: usize, width: usize, height: usize },
    #[error("accumulator {acc} too narrow for {terms} terms of {term}: need {needed} integer bits")]
    AccumulatorTooNarrow {
        acc: QFormat,
        term: QFormat,
        terms: usize,
        needed: u32,
    },
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Check that `acc` can hold the sum of `terms` values of format `term`
/// without wrapping: `ceil(log2 terms)` integer bits beyond the term's.
pub fn check_guard_bits(acc: QFormat, term: QFormat, terms: usize) -> Result<(), ConvError> {
    let needed = term.int_bits() + guard_bits(terms);
    if acc.int_bits() < needed {
        return Err(ConvError::AccumulatorTooNarrow {
            acc,
            term,
            terms,
            needed,
        });
    }
    Ok(())
}

/// Output spatial size of a stride-1, unpadded convolution.
pub fn valid_output_dims(width: usize, height: usize, k: usize) -> Option<(usize, usize)> {
    if k == 0 || width < k || height < k {
        None
    } else {
        Some((width - k + 1, height - k + 1))
    }
}

fn uniform_format(xs: &[Fxp]) -> Result<Option<QFormat>, FxpError> {
    let Some(first) = xs.first() else {
        return Ok(None);
    };
    let fmt = first.format();
    match xs.iter().find(|x| x.format() != fmt) {
        Some(x) => Err(FxpError::FormatMismatch(fmt, x.format())),
        None => Ok(Some(fmt)),
    }
}

/// Sum of full-width products accumulated with wrap-around in `acc_fmt`.
pub fn dot_ref(images: &[Fxp], weights: &[Fxp], acc_fmt: QFormat) -> Result<Fxp, ConvError> {
    if images.len() != weights.len() {
        return Err(ConvError::LengthMismatch(images.len(), weights.len()));
    }
    let (Some(img_fmt), Some(w_fmt)) = (uniform_format(images)?, uniform_format(weights)?) else {
        return Ok(Fxp::zero(acc_fmt));
    };
    check_guard_bits(acc_fmt, img_fmt.product(w_fmt)?, images.len())?;
    let mut acc = Fxp::zero(acc_fmt);
    for (&x, &w) in images.iter().zip(weights) {
        acc = acc.wrapping_add(x.mul_full(w)?.resize(acc_fmt))?;
    }
    Ok(acc)
}

/// Multi-channel convolution in "valid" mode, stride 1.
///
/// For each output `(w, h, o)` the products `input[w+x][h+y][i] *
/// kernels[o][x][y][i]` are summed over `x`, `y`, `i` (that order, `i`
/// innermost) in `acc_fmt`, and the sum is resized to the input format.
pub fn conv2d_ref(input: &Tensor3, kernels: &KernelSet, acc_fmt: QFormat) -> Result<Tensor3, ConvError> {
    let k = kernels.k();
    let c = kernels.input_channels();
    if input.channels() != c {
        return Err(ConvError::ChannelMismatch {
            input: input.channels(),
            kernels: c,
        });
    }
    let (out_w, out_h) = valid_output_dims(input.width(), input.height(), k).ok_or(
        ConvError::KernelTooLarge {
            k,
            width: input.width(),
            height: input.height(),
        },
    )?;
    let prod_fmt = input.format().product(kernels.format())?;
    check_guard_bits(acc_fmt, prod_fmt, k * k * c)?;

    let out_fmt = input.format();
    let mut out = Tensor3::zeros(out_w, out_h, kernels.output_channels(), out_fmt);
    for w in 0..out_w {
        for h in 0..out_h {
            for o in 0..kernels.output_channels() {
                let mut sum = Fxp::zero(acc_fmt);
                for x in 0..k {
                    for y in 0..k {
                        for i in 0..c {
                            let p = input.get(w + x, h + y, i).mul_full(kernels.get(o, x, y, i))?;
                            sum = sum.wrapping_add(p.resize(acc_fmt))?;
                        }
                    }
                }
                out.set(w, h, o, sum.resize(out_fmt))?;
            }
        }
    }
    Ok(out)
}
