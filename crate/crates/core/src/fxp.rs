//! Two's-complement fixed-point scalars with an explicit Q-format.
//!
//! A value is a signed raw integer together with a [`QFormat`] giving the
//! total width (sign included) and the number of fraction bits; the real
//! value denoted is `raw / 2^frac_bits`. Arithmetic wraps modulo `2^w` the
//! way a hardware adder of that width does. Checked variants report
//! overflow instead of wrapping.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Widest supported format. Raws are stored in an `i128`.
pub const MAX_BITS: u32 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FxpError {
    #[error("invalid format Q{total}.{frac}: need 2 <= total <= {MAX_BITS} and frac < total")]
    InvalidFormat { total: u32, frac: u32 },
    #[error("cannot parse format {0:?}; expected Qw.f, e.g. Q24.8")]
    BadFormatString(String),
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(QFormat, QFormat),
    #[error("value {value} does not fit in {fmt}")]
    Overflow { value: String, fmt: QFormat },
    #[error("product of {0} and {1} would exceed {MAX_BITS} bits")]
    WidthExceeded(QFormat, QFormat),
    #[error("value is not finite")]
    NotFinite,
}

/// Bit layout of a fixed-point value: `total_bits` wide, `frac_bits` of
/// them below the binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl QFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FxpError> {
        if !(2..=MAX_BITS).contains(&total_bits) || frac_bits >= total_bits {
            return Err(FxpError::InvalidFormat {
                total: total_bits,
                frac: frac_bits,
            });
        }
        Ok(QFormat {
            total_bits,
            frac_bits,
        })
    }

    /// Integer format (no fraction bits).
    pub fn int(total_bits: u32) -> Result<Self, FxpError> {
        Self::new(total_bits, 0)
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Bits above the binary point, sign included.
    pub fn int_bits(self) -> u32 {
        self.total_bits - self.frac_bits
    }

    pub fn min_raw(self) -> i128 {
        i128::MIN >> (MAX_BITS - self.total_bits)
    }

    pub fn max_raw(self) -> i128 {
        i128::MAX >> (MAX_BITS - self.total_bits)
    }

    /// Weight of one least-significant bit, `2^-frac_bits`.
    pub fn step(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn fits(self, raw: i128) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }

    /// Reduce `raw` modulo `2^total_bits` into the signed range.
    pub fn wrap(self, raw: i128) -> i128 {
        let shift = MAX_BITS - self.total_bits;
        (raw << shift) >> shift
    }

    /// Same fraction bits, `extra` more integer bits.
    pub fn widened(self, extra: u32) -> Result<Self, FxpError> {
        Self::new(self.total_bits + extra, self.frac_bits)
    }

    /// Format of the exact product of values in `self` and `other`.
    pub fn product(self, other: QFormat) -> Result<Self, FxpError> {
        if self.total_bits + other.total_bits > MAX_BITS {
            return Err(FxpError::WidthExceeded(self, other));
        }
        Self::new(
            self.total_bits + other.total_bits,
            self.frac_bits + other.frac_bits,
        )
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.total_bits, self.frac_bits)
    }
}

impl FromStr for QFormat {
    type Err = FxpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FxpError::BadFormatString(s.to_string());
        let body = s
            .strip_prefix('Q')
            .or_else(|| s.strip_prefix('q'))
            .ok_or_else(bad)?;
        let (w, f) = body.split_once('.').ok_or_else(bad)?;
        let w: u32 = w.parse().map_err(|_| bad())?;
        let f: u32 = f.parse().map_err(|_| bad())?;
        QFormat::new(w, f)
    }
}

/// Number of extra integer bits needed to add `n` terms without overflow:
/// `ceil(log2 n)`, zero for `n <= 1`.
pub fn guard_bits(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// A fixed-point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fxp {
    raw: i128,
    fmt: QFormat,
}

impl Fxp {
    pub fn zero(fmt: QFormat) -> Self {
        Fxp { raw: 0, fmt }
    }

    pub fn from_raw(raw: i128, fmt: QFormat) -> Result<Self, FxpError> {
        if !fmt.fits(raw) {
            return Err(FxpError::Overflow {
                value: raw.to_string(),
                fmt,
            });
        }
        Ok(Fxp { raw, fmt })
    }

    pub fn from_raw_wrapping(raw: i128, fmt: QFormat) -> Self {
        Fxp {
            raw: fmt.wrap(raw),
            fmt,
        }
    }

    /// Quantize a real number, rounding half away from zero.
    pub fn from_real(x: f64, fmt: QFormat) -> Result<Self, FxpError> {
        if !x.is_finite() {
            return Err(FxpError::NotFinite);
        }
        // Scaling by a power of two is exact in binary floating point, so the
        // only rounding is the one below.
        let scaled = (x * (fmt.frac_bits as f64).exp2()).round();
        let limit = ((fmt.total_bits - 1) as f64).exp2();
        if scaled >= limit || scaled < -limit {
            return Err(FxpError::Overflow {
                value: x.to_string(),
                fmt,
            });
        }
        Ok(Fxp {
            raw: scaled as i128,
            fmt,
        })
    }

    pub fn raw(self) -> i128 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.fmt
    }

    /// Real value as `f64`. Exact while the raw fits in 53 bits.
    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.fmt.step()
    }

    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    /// Two's-complement wrap-around addition.
    pub fn wrapping_add(self, other: Fxp) -> Result<Fxp, FxpError> {
        self.same_format(other)?;
        Ok(Fxp::from_raw_wrapping(
            self.raw.wrapping_add(other.raw),
            self.fmt,
        ))
    }

    pub fn checked_add(self, other: Fxp) -> Result<Fxp, FxpError> {
        self.same_format(other)?;
        self.raw
            .checked_add(other.raw)
            .filter(|&r| self.fmt.fits(r))
            .map(|raw| Fxp { raw, fmt: self.fmt })
            .ok_or_else(|| FxpError::Overflow {
                value: format!("{} + {}", self, other),
                fmt: self.fmt,
            })
    }

    /// Exact product in `Q{wa+wb, fa+fb}`. Fails only when the result
    /// would be wider than [`MAX_BITS`].
    pub fn mul_full(self, other: Fxp) -> Result<Fxp, FxpError> {
        let fmt = self.fmt.product(other.fmt)?;
        // |a| <= 2^(wa-1), |b| <= 2^(wb-1), so |a*b| <= 2^(wa+wb-2) < 2^127.
        Ok(Fxp {
            raw: self.raw * other.raw,
            fmt,
        })
    }

    /// Convert to `fmt`. Dropped fraction bits truncate toward negative
    /// infinity; dropped integer bits wrap.
    pub fn resize(self, fmt: QFormat) -> Fxp {
        Fxp::from_raw_wrapping(self.align_frac(fmt.frac_bits).0, fmt)
    }

    /// Like [`Fxp::resize`] but fails when the integer part does not fit.
    /// Fraction truncation is not an error.
    pub fn checked_resize(self, fmt: QFormat) -> Result<Fxp, FxpError> {
        let (raw, lost) = self.align_frac(fmt.frac_bits);
        if lost || !fmt.fits(raw) {
            return Err(FxpError::Overflow {
                value: self.to_string(),
                fmt,
            });
        }
        Ok(Fxp { raw, fmt })
    }

    fn align_frac(self, frac: u32) -> (i128, bool) {
        let from = self.fmt.frac_bits;
        if frac >= from {
            let d = frac - from;
            let shifted = self.raw << d;
            (shifted, (shifted >> d) != self.raw)
        } else {
            (self.raw >> (from - frac), false)
        }
    }

    fn same_format(self, other: Fxp) -> Result<(), FxpError> {
        if self.fmt != other.fmt {
            return Err(FxpError::FormatMismatch(self.fmt, other.fmt));
        }
        Ok(())
    }
}

impl fmt::Display for Fxp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}
