use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::block::{dequantize_block, quantize_into, BfpBlock};
use super::QuantConfig;

/// How a tensor's elements are grouped into blocks.
///
/// Tensors are viewed as matrices (see [`Tensor::matrix_dims`]). Row and
/// column blocking run along one axis in runs of `block_size`; tiles are
/// square with side `sqrt(block_size)`. Partial blocks are zero padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocking {
    /// Along the last axis (the reduction axis of a left GEMM operand).
    #[default]
    Rows,
    /// Down each column (the reduction axis of a right GEMM operand).
    Columns,
    /// Square 2D tiles.
    Tiles,
}

impl Blocking {
    pub fn code(self) -> u8 {
        match self {
            Blocking::Rows => 0,
            Blocking::Columns => 1,
            Blocking::Tiles => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Blocking::Rows),
            1 => Ok(Blocking::Columns),
            2 => Ok(Blocking::Tiles),
            c => Err(Error::Format(format!("unknown blocking kind {c}"))),
        }
    }

    /// Dimensions (rows, cols) of a single block.
    pub fn block_dims(self, block_size: usize) -> Result<(usize, usize)> {
        match self {
            Blocking::Rows => Ok((1, block_size)),
            Blocking::Columns => Ok((block_size, 1)),
            Blocking::Tiles => {
                let side = tile_side(block_size)?;
                Ok((side, side))
            }
        }
    }
}

fn tile_side(block_size: usize) -> Result<usize> {
    let side = (block_size as f64).sqrt().round() as usize;
    if side * side != block_size {
        return Err(Error::InvalidConfig(format!(
            "2D tiling needs a square block size, got {block_size}"
        )));
    }
    Ok(side)
}

const PAD: usize = usize::MAX;

/// Flat element index for every block slot, block after block; [`PAD`] marks
/// padding.
fn block_layout(rows: usize, cols: usize, blocking: Blocking, bs: usize) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    match blocking {
        Blocking::Rows => {
            let per_row = cols.div_ceil(bs);
            for r in 0..rows {
                for b in 0..per_row {
                    for k in 0..bs {
                        let c = b * bs + k;
                        idx.push(if c < cols { r * cols + c } else { PAD });
                    }
                }
            }
        }
        Blocking::Columns => {
            let per_col = rows.div_ceil(bs);
            for c in 0..cols {
                for b in 0..per_col {
                    for k in 0..bs {
                        let r = b * bs + k;
                        idx.push(if r < rows { r * cols + c } else { PAD });
                    }
                }
            }
        }
        Blocking::Tiles => {
            let s = tile_side(bs)?;
            for tr in 0..rows.div_ceil(s) {
                for tc in 0..cols.div_ceil(s) {
                    for i in 0..s {
                        for j in 0..s {
                            let (r, c) = (tr * s + i, tc * s + j);
                            idx.push(if r < rows && c < cols { r * cols + c } else { PAD });
                        }
                    }
                }
            }
        }
    }
    Ok(idx)
}

/// A tensor encoded as a sequence of BFP blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfpTensor {
    shape: Vec<usize>,
    cfg: QuantConfig,
    blocking: Blocking,
    blocks: Vec<BfpBlock>,
    padding_count: usize,
}

impl BfpTensor {
    /// Reassembles an encoded tensor, checking that the block list matches
    /// what `shape`, `cfg` and `blocking` imply.
    pub fn from_blocks(
        shape: Vec<usize>,
        cfg: QuantConfig,
        blocking: Blocking,
        blocks: Vec<BfpBlock>,
        padding_count: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let n: usize = shape.iter().product();
        let (rows, cols) = Tensor::zeros(shape.clone()).matrix_dims();
        let layout = block_layout(rows, cols, blocking, cfg.block_size)?;
        let expected_blocks = layout.len() / cfg.block_size;
        if blocks.len() != expected_blocks {
            return Err(Error::Format(format!(
                "expected {expected_blocks} blocks, found {}",
                blocks.len()
            )));
        }
        if layout.len() - n != padding_count {
            return Err(Error::Format(format!(
                "padding count {padding_count} does not match layout ({})",
                layout.len() - n
            )));
        }
        for b in &blocks {
            if b.len() != cfg.block_size || b.magnitude_bits() != cfg.magnitude_bits() {
                return Err(Error::Format("block does not match config".into()));
            }
        }
        for (slot, &i) in layout.iter().enumerate() {
            let q = blocks[slot / cfg.block_size].mantissas()[slot % cfg.block_size];
            if i == PAD && q != 0 {
                return Err(Error::Format("nonzero padding mantissa".into()));
            }
        }
        Ok(Self {
            shape,
            cfg,
            blocking,
            blocks,
            padding_count,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn config(&self) -> &QuantConfig {
        &self.cfg
    }

    pub fn blocking(&self) -> Blocking {
        self.blocking
    }

    pub fn blocks(&self) -> &[BfpBlock] {
        &self.blocks
    }

    pub fn padding_count(&self) -> usize {
        self.padding_count
    }
}

pub fn quantize_tensor(x: &Tensor, cfg: &QuantConfig, blocking: Blocking) -> Result<BfpTensor> {
    cfg.validate()?;
    x.check_finite()?;
    let (rows, cols) = x.matrix_dims();
    let bs = cfg.block_size;
    let layout = block_layout(rows, cols, blocking, bs)?;
    let data = x.data();
    let mut buf = vec![0.0f32; bs];
    let mut blocks = Vec::with_capacity(layout.len() / bs);
    for slots in layout.chunks(bs) {
        for (b, &i) in buf.iter_mut().zip(slots) {
            *b = if i == PAD { 0.0 } else { data[i] };
        }
        let mut mantissas = vec![0i8; bs];
        let e = quantize_into(&buf, cfg, &mut mantissas);
        blocks.push(BfpBlock::from_parts(e, cfg.magnitude_bits(), mantissas));
    }
    Ok(BfpTensor {
        shape: x.shape().to_vec(),
        cfg: *cfg,
        blocking,
        padding_count: layout.len() - x.len(),
        blocks,
    })
}

pub fn dequantize_tensor(q: &BfpTensor) -> Tensor {
    let n: usize = q.shape.iter().product();
    let (rows, cols) = Tensor::zeros(q.shape.clone()).matrix_dims();
    let bs = q.cfg.block_size;
    let layout =
        block_layout(rows, cols, q.blocking, bs).expect("blocking validated at construction");
    let mut data = vec![0.0f32; n];
    for (slots, block) in layout.chunks(bs).zip(&q.blocks) {
        for (&i, v) in slots.iter().zip(dequantize_block(block)) {
            if i != PAD {
                data[i] = v;
            }
        }
    }
    Tensor::from_parts(q.shape.clone(), data)
}

/// Quantize-then-dequantize, the FP32 view of what the BFP encoding keeps.
pub fn fake_quantize(x: &Tensor, cfg: &QuantConfig, blocking: Blocking) -> Result<Tensor> {
    Ok(dequantize_tensor(&quantize_tensor(x, cfg, blocking)?))
}
