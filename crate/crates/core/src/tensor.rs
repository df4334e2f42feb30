//! Dense fixed-point tensors and the on-disk tensor format.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! 0   4  magic "PASM"
//! 4   1  rank (1..=4)
//! 5   1  element kind: 0 = fxp raw as i64, 1 = bin index as u8
//! 6   2  reserved, written as zero
//! 8   8  four u16 dims; dims past `rank` are written as zero
//! 16  .. row-major payload
//! ```
//!
//! The Q-format is not stored; readers supply it.

use std::io::{Read, Write};

use thiserror::Error;

use crate::fxp::{Fxp, FxpError, QFormat};

pub const MAGIC: &[u8; 4] = b"PASM";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("element format {found} differs from tensor format {expected}")]
    Format { expected: QFormat, found: QFormat },
    #[error("bad tensor file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `width x height x channels` array indexed `[w][h][c]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor3 {
    width: usize,
    height: usize,
    channels: usize,
    fmt: QFormat,
    raw: Vec<i128>,
}

impl Tensor3 {
    pub fn zeros(width: usize, height: usize, channels: usize, fmt: QFormat) -> Self {
        Tensor3 {
            width,
            height,
            channels,
            fmt,
            raw: vec![0; width * height * channels],
        }
    }

    pub fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        fmt: QFormat,
        raw: Vec<i128>,
    ) -> Result<Self, TensorError> {
        if raw.len() != width * height * channels {
            return Err(TensorError::Shape(format!(
                "{} elements for {width}x{height}x{channels}",
                raw.len()
            )));
        }
        if let Some(&r) = raw.iter().find(|&&r| !fmt.fits(r)) {
            return Err(FxpError::Overflow {
                value: r.to_string(),
                fmt,
            }
            .into());
        }
        Ok(Tensor3 {
            width,
            height,
            channels,
            fmt,
            raw,
        })
    }

    pub fn from_fxp(
        width: usize,
        height: usize,
        channels: usize,
        data: &[Fxp],
    ) -> Result<Self, TensorError> {
        let fmt = common_format(data)?;
        Self::from_raw(
            width,
            height,
            channels,
            fmt,
            data.iter().map(|x| x.raw()).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn format(&self) -> QFormat {
        self.fmt
    }

    pub fn raw(&self) -> &[i128] {
        &self.raw
    }

    fn offset(&self, w: usize, h: usize, c: usize) -> usize {
        debug_assert!(w < self.width && h < self.height && c < self.channels);
        (w * self.height + h) * self.channels + c
    }

    pub fn get(&self, w: usize, h: usize, c: usize) -> Fxp {
        Fxp::from_raw_wrapping(self.raw[self.offset(w, h, c)], self.fmt)
    }

    pub fn set(&mut self, w: usize, h: usize, c: usize, v: Fxp) -> Result<(), TensorError> {
        if v.format() != self.fmt {
            return Err(TensorError::Format {
                expected: self.fmt,
                found: v.format(),
            });
        }
        let i = self.offset(w, h, c);
        self.raw[i] = v.raw();
        Ok(())
    }
}

/// Convolution kernels indexed `[o][x][y][i]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSet {
    output_channels: usize,
    k: usize,
    input_channels: usize,
    fmt: QFormat,
    raw: Vec<i128>,
}

impl KernelSet {
    pub fn from_raw(
        output_channels: usize,
        k: usize,
        input_channels: usize,
        fmt: QFormat,
        raw: Vec<i128>,
    ) -> Result<Self, TensorError> {
        if output_channels == 0 || k == 0 || input_channels == 0 {
            return Err(TensorError::Shape("kernel dimensions must be positive".into()));
        }
        if raw.len() != output_channels * k * k * input_channels {
            return Err(TensorError::Shape(format!(
                "{} elements for {output_channels}x{k}x{k}x{input_channels}",
                raw.len()
            )));
        }
        if let Some(&r) = raw.iter().find(|&&r| !fmt.fits(r)) {
            return Err(FxpError::Overflow {
                value: r.to_string(),
                fmt,
            }
            .into());
        }
        Ok(KernelSet {
            output_channels,
            k,
            input_channels,
            fmt,
            raw,
        })
    }

    pub fn from_fxp(
        output_channels: usize,
        k: usize,
        input_channels: usize,
        data: &[Fxp],
    ) -> Result<Self, TensorError> {
        let fmt = common_format(data)?;
        Self::from_raw(
            output_channels,
            k,
            input_channels,
            fmt,
            data.iter().map(|x| x.raw()).collect(),
        )
    }

    pub fn output_channels(&self) -> usize {
        self.output_channels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.output_channels, self.k, self.k, self.input_channels]
    }

    pub fn format(&self) -> QFormat {
        self.fmt
    }

    pub fn raw(&self) -> &[i128] {
        &self.raw
    }

    pub fn values(&self) -> impl Iterator<Item = Fxp> + '_ {
        self.raw
            .iter()
            .map(move |&r| Fxp::from_raw_wrapping(r, self.fmt))
    }

    pub fn get(&self, o: usize, x: usize, y: usize, i: usize) -> Fxp {
        let idx = ((o * self.k + x) * self.k + y) * self.input_channels + i;
        Fxp::from_raw_wrapping(self.raw[idx], self.fmt)
    }
}

fn common_format(data: &[Fxp]) -> Result<QFormat, TensorError> {
    let first = data
        .first()
        .ok_or_else(|| TensorError::Shape("no elements".into()))?
        .format();
    match data.iter().find(|x| x.format() != first) {
        Some(x) => Err(TensorError::Format {
            expected: first,
            found: x.format(),
        }),
        None => Ok(first),
    }
}

/// Payload of a tensor file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Raw(Vec<i64>),
    Index(Vec<u8>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Raw(v) => v.len(),
            Payload::Index(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn kind(&self) -> u8 {
        match self {
            Payload::Raw(_) => 0,
            Payload::Index(_) => 1,
        }
    }
}

/// A tensor as stored on disk: shape plus payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(TensorError::Shape(format!("rank {} not in 1..=4", dims.len())));
        }
        if let Some(d) = dims.iter().find(|&&d| d > u16::MAX as usize) {
            return Err(TensorError::Shape(format!("dimension {d} exceeds u16")));
        }
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(TensorError::Shape(format!(
                "dims {dims:?} hold {n} elements, payload has {}",
                payload.len()
            )));
        }
        Ok(TensorFile { dims, payload })
    }

    /// Raw payload from fixed-point values. Formats wider than 64 bits are
    /// rejected since the payload stores `i64`.
    pub fn from_raws(dims: Vec<usize>, fmt: QFormat, raw: &[i128]) -> Result<Self, TensorError> {
        if fmt.total_bits() > 64 {
            return Err(TensorError::Malformed(format!(
                "{fmt} is wider than the 64-bit raw payload"
            )));
        }
        Self::new(dims, Payload::Raw(raw.iter().map(|&r| r as i64).collect()))
    }

    /// Interpret a raw payload in `fmt`.
    pub fn raws_in(&self, fmt: QFormat) -> Result<Vec<i128>, TensorError> {
        match &self.payload {
            Payload::Raw(v) => v
                .iter()
                .map(|&r| Fxp::from_raw(r as i128, fmt).map(|x| x.raw()))
                .collect::<Result<_, _>>()
                .map_err(Into::into),
            Payload::Index(_) => Err(TensorError::Malformed("expected fxp payload, found indices".into())),
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), TensorError> {
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(MAGIC);
        header[4] = self.dims.len() as u8;
        header[5] = self.payload.kind();
        for (slot, &d) in self.dims.iter().enumerate() {
            let at = 8 + 2 * slot;
            header[at..at + 2].copy_from_slice(&(d as u16).to_le_bytes());
        }
        out.write_all(&header)?;
        match &self.payload {
            Payload::Raw(v) => {
                let mut buf = Vec::with_capacity(v.len() * 8);
                for r in v {
                    buf.extend_from_slice(&r.to_le_bytes());
                }
                out.write_all(&buf)?;
            }
            Payload::Index(v) => out.write_all(v)?,
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, TensorError> {
        let mut header = [0u8; HEADER_LEN];
        input.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(TensorError::Malformed("missing PASM magic".into()));
        }
        let rank = header[4] as usize;
        if !(1..=4).contains(&rank) {
            return Err(TensorError::Malformed(format!("rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank)
            .map(|slot| u16::from_le_bytes([header[8 + 2 * slot], header[9 + 2 * slot]]) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        let payload = match header[5] {
            0 => {
                if body.len() != n * 8 {
                    return Err(TensorError::Malformed(format!(
                        "expected {} payload bytes, found {}",
                        n * 8,
                        body.len()
                    )));
                }
                Payload::Raw(
                    body.chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect(),
                )
            }
            1 => {
                if body.len() != n {
                    return Err(TensorError::Malformed(format!(
                        "expected {n} payload bytes, found {}",
                        body.len()
                    )));
                }
                Payload::Index(body)
            }
            k => return Err(TensorError::Malformed(format!("unknown element kind {k}"))),
        };
        TensorFile::new(dims, payload)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}
