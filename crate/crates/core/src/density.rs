//! Gate-count model of an N×N systolic array and per-element storage
//! accounting for block-scaled and floating-point formats.
//!
//! Area is the number of basic logic gates. With the same clock for every
//! configuration, arithmetic density is `N²·W / area`.
//!
//! Block formats (HBFP, MX) use PEs that compute a W-wide integer mantissa dot
//! product: W array multipliers, a ripple-carry adder tree whose node widths
//! grow one bit per level, and an exponent adder. FP32→BFP converters sit on
//! the two input edges (one per row/column, W lanes each, with a max-exponent
//! comparator tree) and every PE has a BFP→FP32 accumulator. MX adds a
//! per-sub-block exponent adder and alignment shifter. Element-wise floating
//! point formats pay for a full multiply, exponent logic and an FP32
//! accumulator per element, with no converters.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLevel {
    pub block_size: u32,
    pub exponent_bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    BlockFixed,
    ElementFloat,
}

/// Static description of a number format.
///
/// A per-element exponent is a second scaling level with block size 1, so
/// FP32 is `level2 = {1, 8}` with no first level, and MXFP6 (E3M2) is
/// `level1 = {32, 8}, level2 = {1, 3}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatDescriptor {
    pub name: String,
    pub level1: Option<ScaleLevel>,
    pub level2: Option<ScaleLevel>,
    /// Magnitude bits; the sign bit is counted separately.
    pub mantissa_bits: u32,
    pub element_kind: ElementKind,
}

fn level(block_size: u32, exponent_bits: u32) -> Option<ScaleLevel> {
    Some(ScaleLevel {
        block_size,
        exponent_bits,
    })
}

impl FormatDescriptor {
    fn new(
        name: &str,
        kind: ElementKind,
        mantissa_bits: u32,
        level1: Option<ScaleLevel>,
        level2: Option<ScaleLevel>,
    ) -> Self {
        Self {
            name: name.to_string(),
            level1,
            level2,
            mantissa_bits,
            element_kind: kind,
        }
    }

    /// HBFPn: `total_bits - 1` magnitude bits sharing an 8-bit exponent.
    pub fn hbfp(total_bits: u32, block_size: u32) -> Self {
        Self::new(
            &format!("hbfp{total_bits}"),
            ElementKind::BlockFixed,
            total_bits - 1,
            level(block_size, 8),
            None,
        )
    }

    pub fn fp32() -> Self {
        Self::new("fp32", ElementKind::ElementFloat, 23, None, level(1, 8))
    }

    pub fn bf16() -> Self {
        Self::new("bf16", ElementKind::ElementFloat, 7, None, level(1, 8))
    }

    /// FP8 E4M3.
    pub fn fp8() -> Self {
        Self::new("fp8", ElementKind::ElementFloat, 3, None, level(1, 4))
    }

    fn mx(name: &str, mantissa_bits: u32) -> Self {
        Self::new(
            name,
            ElementKind::BlockFixed,
            mantissa_bits,
            level(16, 8),
            level(2, 1),
        )
    }

    fn mxfp(name: &str, exponent_bits: u32, mantissa_bits: u32) -> Self {
        Self::new(
            name,
            ElementKind::ElementFloat,
            mantissa_bits,
            level(32, 8),
            level(1, exponent_bits),
        )
    }

    /// Looks up a format by name: `fp32`, `bf16`, `fp8`, `hbfp<n>`
    /// (n in 2..=9), `mx9`, `mx6`, `mx4`, `mxfp8`, `mxfp6`, `mxfp4`.
    pub fn named(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        let f = match lower.as_str() {
            "fp32" => Self::fp32(),
            "bf16" => Self::bf16(),
            "fp8" => Self::fp8(),
            "mx9" => Self::mx("mx9", 7),
            "mx6" => Self::mx("mx6", 4),
            "mx4" => Self::mx("mx4", 2),
            "mxfp8" => Self::mxfp("mxfp8", 4, 3),
            // E3M2; the only split that gives 6.25 bits per element
            "mxfp6" => Self::mxfp("mxfp6", 3, 2),
            "mxfp4" => Self::mxfp("mxfp4", 2, 1),
            s => match s.strip_prefix("hbfp").and_then(|n| n.parse::<u32>().ok()) {
                Some(n) if (2..=9).contains(&n) => Self::hbfp(n, 64),
                _ => return Err(Error::Invalid(format!("unknown format '{name}'"))),
            },
        };
        f.validate()?;
        Ok(f)
    }

    /// The nine block-scaled formats of the standard comparison table.
    pub fn table_formats() -> Vec<Self> {
        [
            "hbfp8", "hbfp6", "hbfp4", "mx9", "mx6", "mx4", "mxfp8", "mxfp6", "mxfp4",
        ]
        .iter()
        .map(|n| Self::named(n).expect("built-in format"))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("{}: {m}", self.name)));
        for l in [self.level1, self.level2].into_iter().flatten() {
            if l.block_size == 0 {
                return bad("zero block size");
            }
        }
        match self.element_kind {
            ElementKind::BlockFixed => {
                if self.level1.is_none() {
                    return bad("block formats need a first scaling level");
                }
                if self.mantissa_bits == 0 {
                    return bad("block formats need at least one magnitude bit");
                }
            }
            ElementKind::ElementFloat => match self.level2 {
                Some(l) if l.block_size == 1 && l.exponent_bits > 0 => {}
                _ => return bad("float elements need a per-element exponent"),
            },
        }
        Ok(())
    }

    /// Returns a copy whose first scaling level uses `block_size`. Formats
    /// without a first level are returned unchanged.
    pub fn with_block_size(&self, block_size: u32) -> Self {
        let mut f = self.clone();
        if let Some(l) = f.level1.as_mut() {
            l.block_size = block_size;
        }
        f
    }

    /// PE dot-product width implied by the format (first-level block size),
    /// or `default` for element-wise formats.
    pub fn native_width(&self, default: u32) -> u32 {
        self.level1.map_or(default, |l| l.block_size)
    }
}

impl fmt::Display for FormatDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for FormatDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::named(s)
    }
}

/// Average storage bits per element as an exact fraction:
/// sign + magnitude bits + every scaling level's exponent bits spread over
/// its block.
pub fn bits_per_element(f: &FormatDescriptor) -> Ratio<u64> {
    let mut bits = Ratio::from_integer(1 + u64::from(f.mantissa_bits));
    for l in [f.level1, f.level2].into_iter().flatten() {
        bits += Ratio::new(u64::from(l.exponent_bits), u64::from(l.block_size));
    }
    bits
}

/// Rounds a non-negative fraction to one decimal place, ties to even, and
/// returns it in tenths.
pub fn round_to_tenths(r: Ratio<u64>) -> u64 {
    let scaled = r * Ratio::from_integer(10);
    let floor = scaled.to_integer();
    let frac = scaled - Ratio::from_integer(floor);
    let half = Ratio::new(1, 2);
    if frac > half || (frac == half && floor % 2 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// One-decimal rendering of [`bits_per_element`], e.g. `"4.1"`.
pub fn bits_per_element_display(f: &FormatDescriptor) -> String {
    let tenths = round_to_tenths(bits_per_element(f));
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Gate-cost constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Array multiplier: `c_mul · w²` gates for w-bit operands.
    pub c_mul: f64,
    /// Ripple-carry adder or comparator: `c_add · w` gates for w bits.
    pub c_add: f64,
    /// Shifter: `c_mux · width · stages` gates.
    pub c_mux: f64,
    /// Full FP32 fused multiply-add.
    pub fp32_fma: f64,
    /// FP32 adder used to accumulate narrower floating-point products.
    pub fp32_add: f64,
    /// Per-lane cost of an FP32→BFP converter (alignment shifter, rounding).
    pub f2b_lane: f64,
    /// BFP→FP32 conversion and accumulation per PE.
    pub b2f: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            c_mul: 6.0,
            c_add: 9.0,
            c_mux: 3.0,
            fp32_fma: 8000.0,
            fp32_add: 1000.0,
            f2b_lane: 250.0,
            b2f: 1200.0,
        }
    }
}

impl Calibration {
    /// Parses a flat JSON map of constant name to number; missing names keep
    /// their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.c_mul,
            self.c_add,
            self.c_mux,
            self.fp32_fma,
            self.fp32_add,
            self.f2b_lane,
            self.b2f,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(
                "calibration constants must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystolicConfig {
    /// Array side.
    pub n: u32,
    /// PE dot-product width.
    pub w: u32,
    pub calibration: Calibration,
}

impl Default for SystolicConfig {
    fn default() -> Self {
        Self {
            n: 8,
            w: 64,
            calibration: Calibration::default(),
        }
    }
}

impl SystolicConfig {
    pub fn new(n: u32, w: u32) -> Result<Self> {
        if n == 0 || w == 0 {
            return Err(Error::Invalid("array side and PE width must be positive".into()));
        }
        Ok(Self {
            n,
            w,
            calibration: Calibration::default(),
        })
    }

    pub fn with_calibration(mut self, calibration: Calibration) -> Self {
        self.calibration = calibration;
        self
    }
}

fn ceil_log2(x: u32) -> u32 {
    if x <= 1 {
        0
    } else {
        32 - (x - 1).leading_zeros()
    }
}

/// Binary ripple-carry adder tree reducing `inputs` values of width `w0`;
/// adders at level `l` are `w0 + l` bits wide.
fn adder_tree(inputs: u32, w0: u32, c: &Calibration) -> f64 {
    let mut n = inputs;
    let mut level = 0;
    let mut gates = 0.0;
    while n > 1 {
        level += 1;
        gates += f64::from(n / 2) * c.c_add * f64::from(w0 + level);
        n = n.div_ceil(2);
    }
    gates
}

/// Extra accumulator bits needed to align products whose exponents are each
/// `e` bits wide: the product exponent spans `2·(2^e - 1)` positions.
fn alignment_span(e: u32) -> u32 {
    2 * ((1u32 << e) - 1)
}

fn mul(bits: u32, c: &Calibration) -> f64 {
    c.c_mul * f64::from(bits) * f64::from(bits)
}

/// Cost of one element-wise floating-point multiply-accumulate.
fn float_mac(f: &FormatDescriptor, e: u32, c: &Calibration) -> f64 {
    if f.mantissa_bits >= 23 {
        c.fp32_fma
    } else {
        mul(f.mantissa_bits + 1, c) + c.c_add * f64::from(e + 1) + c.fp32_add
    }
}

/// Per-PE area and per-array edge converter area for a W-wide PE.
fn pe_and_edge(f: &FormatDescriptor, w: u32, c: &Calibration) -> (f64, f64) {
    let m1 = f.mantissa_bits + 1;
    let w0 = 2 * m1;
    let Some(l1) = f.level1 else {
        // element-wise floating point: W independent MACs, no converters
        let e = f.level2.map_or(0, |l| l.exponent_bits);
        return (f64::from(w) * float_mac(f, e, c), 0.0);
    };
    let e1 = l1.exponent_bits;
    let mut pe = f64::from(w) * mul(m1, c) + c.c_add * f64::from(e1 + 1);
    match (f.element_kind, f.level2) {
        (ElementKind::BlockFixed, None) => pe += adder_tree(w, w0, c),
        (ElementKind::BlockFixed, Some(l2)) => {
            let span = alignment_span(l2.exponent_bits);
            let sub_blocks = w.div_ceil(l2.block_size);
            let shift = c.c_mux
                * f64::from(w0 + ceil_log2(l2.block_size))
                * f64::from(ceil_log2(span + 1));
            pe += f64::from(sub_blocks) * (c.c_add * f64::from(l2.exponent_bits + 1) + shift);
            pe += adder_tree(w, w0 + span, c);
        }
        (ElementKind::ElementFloat, l2) => {
            let e2 = l2.map_or(0, |l| l.exponent_bits);
            let span = alignment_span(e2);
            let per_elem = c.c_add * f64::from(e2 + 1)
                + c.c_mux * f64::from(w0) * f64::from(ceil_log2(span + 1));
            pe += f64::from(w) * per_elem + adder_tree(w, w0 + span, c);
        }
    }
    let converter = f64::from(w) * c.f2b_lane + f64::from(w - 1) * c.c_add * f64::from(e1);
    (pe + c.b2f, converter)
}

/// Gate count of the whole N×N array for format `f` with PE width `sc.w`.
pub fn systolic_area(f: &FormatDescriptor, sc: &SystolicConfig) -> f64 {
    let (pe, converter) = pe_and_edge(f, sc.w, &sc.calibration);
    let n = f64::from(sc.n);
    n * n * pe + 2.0 * n * converter
}

/// Multiply-accumulates per gate per cycle: `N²·W / area`.
pub fn arithmetic_density(f: &FormatDescriptor, sc: &SystolicConfig) -> f64 {
    let n = f64::from(sc.n);
    n * n * f64::from(sc.w) / systolic_area(f, sc)
}

/// Density of `f` divided by the density of `baseline`, each evaluated with
/// its own PE width.
pub fn normalized_density(
    f: &FormatDescriptor,
    sc: &SystolicConfig,
    baseline: &FormatDescriptor,
    baseline_sc: &SystolicConfig,
) -> f64 {
    arithmetic_density(f, sc) / arithmetic_density(baseline, baseline_sc)
}

/// Closed-form density as W grows without bound: converters and the
/// per-PE exponent and accumulator logic amortize away and the adder tree
/// costs `c_add·(w0 + 2)` per element.
pub fn asymptotic_density(f: &FormatDescriptor, sc: &SystolicConfig) -> f64 {
    let c = &sc.calibration;
    let m1 = f.mantissa_bits + 1;
    let w0 = 2 * m1;
    let n = f64::from(sc.n);
    let Some(l1) = f.level1 else {
        let e = f.level2.map_or(0, |l| l.exponent_bits);
        return 1.0 / float_mac(f, e, c);
    };
    let edge = 2.0 * (c.f2b_lane + c.c_add * f64::from(l1.exponent_bits)) / n;
    let per_elem = match (f.element_kind, f.level2) {
        (ElementKind::BlockFixed, None) => mul(m1, c) + c.c_add * f64::from(w0 + 2),
        (ElementKind::BlockFixed, Some(l2)) => {
            let span = alignment_span(l2.exponent_bits);
            let shift = c.c_mux
                * f64::from(w0 + ceil_log2(l2.block_size))
                * f64::from(ceil_log2(span + 1));
            mul(m1, c)
                + (c.c_add * f64::from(l2.exponent_bits + 1) + shift) / f64::from(l2.block_size)
                + c.c_add * f64::from(w0 + span + 2)
        }
        (ElementKind::ElementFloat, l2) => {
            let e2 = l2.map_or(0, |l| l.exponent_bits);
            let span = alignment_span(e2);
            mul(m1, c)
                + c.c_add * f64::from(e2 + 1)
                + c.c_mux * f64::from(w0) * f64::from(ceil_log2(span + 1))
                + c.c_add * f64::from(w0 + span + 2)
        }
    };
    1.0 / (per_elem + edge)
}

/// One row of the density table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub format: String,
    pub block_size: u32,
    pub bits_per_element: String,
    pub bits_per_element_exact: String,
    pub area_gates: f64,
    pub density: f64,
    pub normalized_vs_fp32: f64,
    pub normalized_vs_hbfp8: f64,
}

pub const DENSITY_CSV_HEADER: &str = "format,block_size,bits_per_element,bits_per_element_exact,area_gates,density,normalized_vs_fp32,normalized_vs_hbfp8";

impl DensityRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.format,
            self.block_size,
            self.bits_per_element,
            self.bits_per_element_exact,
            self.area_gates,
            self.density,
            self.normalized_vs_fp32,
            self.normalized_vs_hbfp8
        )
    }
}

/// One row per (format, block size). The block size replaces each format's
/// first-level block size and sets the PE width; `None` uses every format's
/// own block size (64 for element-wise formats). Normalization baselines are
/// FP32 at the same width and HBFP8 with 64-element blocks.
pub fn density_table(
    formats: &[FormatDescriptor],
    block_sizes: Option<&[u32]>,
    n: u32,
    calibration: Calibration,
) -> Result<Vec<DensityRow>> {
    let sc_for = |w: u32| SystolicConfig::new(n, w).map(|s| s.with_calibration(calibration));
    let hbfp8 = FormatDescriptor::hbfp(8, 64);
    let hbfp8_density = arithmetic_density(&hbfp8, &sc_for(64)?);
    let fp32 = FormatDescriptor::fp32();
    let mut rows = Vec::new();
    for f in formats {
        f.validate()?;
        let sizes = match block_sizes {
            Some(b) => b.to_vec(),
            None => vec![f.native_width(64)],
        };
        for w in sizes {
            let f = f.with_block_size(w);
            let sc = sc_for(w)?;
            let d = arithmetic_density(&f, &sc);
            let bits = bits_per_element(&f);
            rows.push(DensityRow {
                format: f.name.clone(),
                block_size: w,
                bits_per_element: bits_per_element_display(&f),
                bits_per_element_exact: bits.to_string(),
                area_gates: systolic_area(&f, &sc),
                density: d,
                normalized_vs_fp32: d / arithmetic_density(&fp32, &sc),
                normalized_vs_hbfp8: d / hbfp8_density,
            });
        }
    }
    Ok(rows)
}

pub fn density_csv(rows: &[DensityRow]) -> String {
    let mut out = String::from(DENSITY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
