//! Arbitrary-precision oracles shared by the integration tests.
#![allow(dead_code)]

use num::bigint::BigInt;
use num::{Integer, One, Zero};

use pasm::fxp::{Fxp, QFormat};
use pasm::tensor::{KernelSet, Tensor3};

pub fn q(total: u32, frac: u32) -> QFormat {
    QFormat::new(total, frac).unwrap()
}

pub fn big(x: i128) -> BigInt {
    BigInt::from(x)
}

/// Two's-complement wrap of an exact integer into `bits`.
pub fn wrap_big(x: &BigInt, bits: u32) -> BigInt {
    let m = BigInt::one() << bits;
    let r = x.mod_floor(&m);
    if r >= (BigInt::one() << (bits - 1)) {
        r - m
    } else {
        r
    }
}

/// Exact value `x / 2^from` moved to `to` fraction bits, rounded toward -inf.
pub fn rescale_big(x: &BigInt, from: u32, to: u32) -> BigInt {
    if to >= from {
        x << (to - from)
    } else {
        x.div_floor(&(BigInt::one() << (from - to)))
    }
}

/// Expected raw of an exact result with `frac` fraction bits after a single
/// resize into `out`.
pub fn expect_raw(exact: &BigInt, frac: u32, out: QFormat) -> i128 {
    let r = wrap_big(&rescale_big(exact, frac, out.frac_bits()), out.total_bits());
    i128::try_from(r).unwrap()
}

/// Exact dot product in units of `2^-(fi+fw)`.
pub fn exact_dot(images: &[Fxp], weights: &[Fxp]) -> BigInt {
    images
        .iter()
        .zip(weights)
        .fold(BigInt::zero(), |acc, (x, w)| acc + big(x.raw()) * big(w.raw()))
}

/// Exact valid-mode convolution: `[w][h][o]` outputs in units of
/// `2^-(fi+fw)`.
pub fn exact_conv(input: &Tensor3, kernels: &KernelSet) -> Vec<Vec<Vec<BigInt>>> {
    let k = kernels.k();
    let ow = input.width() + 1 - k;
    let oh = input.height() + 1 - k;
    let mut out = vec![vec![vec![BigInt::zero(); kernels.output_channels()]; oh]; ow];
    for (w, col) in out.iter_mut().enumerate() {
        for (h, cell) in col.iter_mut().enumerate() {
            for (o, acc) in cell.iter_mut().enumerate() {
                for x in 0..k {
                    for y in 0..k {
                        for i in 0..input.channels() {
                            *acc += big(input.get(w + x, h + y, i).raw()) * big(kernels.get(o, x, y, i).raw());
                        }
                    }
                }
            }
        }
    }
    out
}
