//! Binary file formats.
//!
//! All integers and floats are little endian.
//!
//! `HBT1` (dense tensor): magic `HBT1`, u8 dtype (0 = FP32), u8 rank,
//! rank × u32 dims, row-major f32 payload.
//!
//! `HBQ1` (quantized tensor): magic `HBQ1`, u8 mantissa_bits, u32 block_size,
//! u8 exponent_bits, u8 blocking kind, u32 block rows, u32 block cols, u8 rank,
//! rank × u32 dims, u32 padding_count, then per block an i16 shared exponent
//! (-32768 for an all-zero block) followed by block_size × i8 mantissas.
//!
//! `HBC1` (tensor container, used for checkpoints): magic `HBC1`, u32 entry
//! count, then per entry a u8 tag, u32 byte length and an `HBT1` image.

use std::fs;
use std::path::Path;

use crate::bfp::{BfpBlock, BfpTensor, Blocking, QuantConfig, ZERO_BLOCK_EXPONENT};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"HBT1";
pub const QUANT_MAGIC: &[u8; 4] = b"HBQ1";
pub const CONTAINER_MAGIC: &[u8; 4] = b"HBC1";

const DTYPE_F32: u8 = 0;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn i8(&mut self) -> Result<i8> {
        Ok(self.u8()? as i8)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()?;
        (0..rank).map(|_| Ok(self.u32()? as usize)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    let rank = u8::try_from(shape.len())
        .map_err(|_| Error::Format(format!("rank {} too large", shape.len())))?;
    out.push(rank);
    for &d in shape {
        put_u32(out, d)?;
    }
    Ok(())
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(DTYPE_F32);
    put_shape(&mut out, t.shape())?;
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor> {
    r.magic(TENSOR_MAGIC)?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let shape = r.shape()?;
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    if n > (r.buf.len() - r.pos) / 4 {
        return Err(Error::Format("payload shorter than shape".into()));
    }
    let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    Tensor::new(shape, data)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    let t = read_tensor(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub fn encode_quantized(q: &BfpTensor) -> Result<Vec<u8>> {
    let cfg = q.config();
    let (br, bc) = q.blocking().block_dims(cfg.block_size)?;
    let mut out = Vec::new();
    out.extend_from_slice(QUANT_MAGIC);
    out.push(cfg.mantissa_bits);
    put_u32(&mut out, cfg.block_size)?;
    out.push(cfg.exponent_bits);
    out.push(q.blocking().code());
    put_u32(&mut out, br)?;
    put_u32(&mut out, bc)?;
    put_shape(&mut out, q.shape())?;
    put_u32(&mut out, q.padding_count())?;
    for b in q.blocks() {
        let e = i16::try_from(b.shared_exponent())
            .map_err(|_| Error::Format("shared exponent exceeds i16".into()))?;
        out.extend_from_slice(&e.to_le_bytes());
        out.extend(b.mantissas().iter().map(|&m| m as u8));
    }
    Ok(out)
}

pub fn decode_quantized(bytes: &[u8]) -> Result<BfpTensor> {
    let mut r = Reader::new(bytes);
    r.magic(QUANT_MAGIC)?;
    let mantissa_bits = r.u8()?;
    let block_size = r.u32()? as usize;
    let exponent_bits = r.u8()?;
    let cfg = QuantConfig {
        mantissa_bits,
        block_size,
        exponent_bits,
        rounding: Default::default(),
    };
    cfg.validate()?;
    let blocking = Blocking::from_code(r.u8()?)?;
    let dims = (r.u32()? as usize, r.u32()? as usize);
    if blocking.block_dims(block_size)? != dims {
        return Err(Error::Format(format!(
            "block dims {dims:?} disagree with kind {blocking:?} and size {block_size}"
        )));
    }
    let shape = r.shape()?;
    let padding = r.u32()? as usize;
    let remaining = r.buf.len() - r.pos;
    if remaining % (2 + block_size) != 0 {
        return Err(Error::Format("truncated block payload".into()));
    }
    let mut blocks = Vec::with_capacity(remaining / (2 + block_size));
    while r.pos < r.buf.len() {
        let e = i32::from(r.i16()?);
        let mantissas = (0..block_size).map(|_| r.i8()).collect::<Result<Vec<_>>>()?;
        blocks.push(BfpBlock::new(e, cfg.magnitude_bits(), mantissas)?);
    }
    debug_assert_eq!(ZERO_BLOCK_EXPONENT, i32::from(i16::MIN));
    BfpTensor::from_blocks(shape, cfg, blocking, blocks, padding)
}

pub fn encode_container(entries: &[(u8, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    put_u32(&mut out, entries.len())?;
    for &(tag, t) in entries {
        let img = encode_tensor(t)?;
        out.push(tag);
        put_u32(&mut out, img.len())?;
        out.extend_from_slice(&img);
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<(u8, Tensor)>> {
    let mut r = Reader::new(bytes);
    r.magic(CONTAINER_MAGIC)?;
    let n = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..n {
        let tag = r.u8()?;
        let len = r.u32()? as usize;
        entries.push((tag, decode_tensor(r.take(len)?)?));
    }
    r.finish()?;
    Ok(entries)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t)?)
}

pub fn read_quantized_file(path: &Path) -> Result<BfpTensor> {
    decode_quantized(&fs::read(path)?)
}

pub fn write_quantized_file(path: &Path, q: &BfpTensor) -> Result<()> {
    write_atomic(path, &encode_quantized(q)?)
}
