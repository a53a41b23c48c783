//! Parameterized fixed-point emulation and per-block scaling.
//!
//! Fixed-point values travel as `f64` constrained to the quantization grid
//! of their format. Every primitive (multiply, add) re-quantizes, which is
//! what a fixed word-length datapath does.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    /// Round toward negative infinity (drop the low bits).
    #[default]
    Truncate,
    NearestEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Overflow {
    #[default]
    Saturate,
    Wrap,
}

/// Word-length descriptor `{W, I}`: `W` total bits, `I` integer bits
/// including the sign bit, `W - I` fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxpFormat {
    total_bits: u32,
    integer_bits: u32,
    pub rounding: Rounding,
    pub overflow: Overflow,
}

impl FxpFormat {
    pub fn new(total_bits: u32, integer_bits: u32) -> Result<Self> {
        if !(4..=64).contains(&total_bits) {
            return Err(Error::Config(format!(
                "total bits must be in [4, 64], got {total_bits}"
            )));
        }
        if !(1..=total_bits).contains(&integer_bits) {
            return Err(Error::Config(format!(
                "integer bits must be in [1, {total_bits}], got {integer_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            integer_bits,
            rounding: Rounding::default(),
            overflow: Overflow::default(),
        })
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_overflow(mut self, overflow: Overflow) -> Self {
        self.overflow = overflow;
        self
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn integer_bits(&self) -> u32 {
        self.integer_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.total_bits - self.integer_bits
    }

    /// Grid spacing `2^-F`.
    pub fn lsb(&self) -> f64 {
        exp2(-(self.frac_bits() as i32))
    }

    pub fn max_value(&self) -> f64 {
        exp2(self.integer_bits as i32 - 1) - self.lsb()
    }

    pub fn min_value(&self) -> f64 {
        -exp2(self.integer_bits as i32 - 1)
    }
}

impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.total_bits, self.integer_bits)
    }
}

fn exp2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Snaps `x` onto the grid of `fmt`, resolving overflow by policy.
pub fn quantize(x: f64, fmt: FxpFormat) -> f64 {
    let f = fmt.frac_bits() as i32;
    let scaled = x * exp2(f);
    let n = match fmt.rounding {
        Rounding::Truncate => scaled.floor(),
        Rounding::NearestEven => scaled.round_ties_even(),
    };
    let half = exp2(fmt.total_bits as i32 - 1);
    let n = match fmt.overflow {
        Overflow::Saturate => n.clamp(-half, half - 1.0),
        Overflow::Wrap => {
            let span = 2.0 * half;
            n - span * ((n + half) / span).floor()
        }
    };
    n * exp2(-f)
}

pub fn quantize_complex(z: Complex64, fmt: FxpFormat) -> Complex64 {
    Complex64::new(quantize(z.re, fmt), quantize(z.im, fmt))
}

/// Complex product with four real multiplies and two adds, each
/// re-quantized.
pub fn fxp_complex_mul(a: Complex64, b: Complex64, fmt: FxpFormat) -> Complex64 {
    let q = |x| quantize(x, fmt);
    let rr = q(a.re * b.re);
    let ii = q(a.im * b.im);
    let ri = q(a.re * b.im);
    let ir = q(a.im * b.re);
    Complex64::new(q(rr - ii), q(ri + ir))
}

/// Scalar arithmetic of one numeric representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arith {
    Float64,
    /// Every result narrowed to IEEE single precision.
    Float32,
    Fixed(FxpFormat),
}

impl Arith {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Arith::Float64 => x,
            Arith::Float32 => x as f32 as f64,
            Arith::Fixed(fmt) => quantize(x, fmt),
        }
    }

    #[inline]
    pub fn round_c(self, z: Complex64) -> Complex64 {
        Complex64::new(self.round(z.re), self.round(z.im))
    }

    #[inline]
    pub fn mul(self, a: f64, b: f64) -> f64 {
        self.round(a * b)
    }

    #[inline]
    pub fn add(self, a: f64, b: f64) -> f64 {
        self.round(a + b)
    }

    #[inline]
    pub fn cmul(self, a: Complex64, b: Complex64) -> Complex64 {
        match self {
            Arith::Float64 => a * b,
            Arith::Fixed(fmt) => fxp_complex_mul(a, b, fmt),
            Arith::Float32 => {
                let rr = self.mul(a.re, b.re);
                let ii = self.mul(a.im, b.im);
                let ri = self.mul(a.re, b.im);
                let ir = self.mul(a.im, b.re);
                Complex64::new(self.add(rr, -ii), self.add(ri, ir))
            }
        }
    }

    #[inline]
    pub fn cadd(self, a: Complex64, b: Complex64) -> Complex64 {
        Complex64::new(self.add(a.re, b.re), self.add(a.im, b.im))
    }

    /// `|z|^2` as two multiplies and one add.
    #[inline]
    pub fn norm_sqr(self, z: Complex64) -> f64 {
        self.add(self.mul(z.re, z.re), self.mul(z.im, z.im))
    }
}

/// Pipeline stages that may carry their own power-of-two scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    /// ADC output feeding the processing chain.
    Input,
    Acf,
    Sap,
    Evd,
    Msg,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::Input, Block::Acf, Block::Sap, Block::Evd, Block::Msg];

    pub fn name(self) -> &'static str {
        match self {
            Block::Input => "input",
            Block::Acf => "acf",
            Block::Sap => "sap",
            Block::Evd => "evd",
            Block::Msg => "msg",
        }
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Block::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline block '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NumericKind {
    Float64,
    Float32,
    Fixed(FxpFormat),
}

pub const MIN_SCALE: i32 = -16;
pub const MAX_SCALE: i32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NumericMode {
    pub kind: NumericKind,
    block_scales: BTreeMap<Block, i32>,
}

impl Default for NumericMode {
    fn default() -> Self {
        Self::float64()
    }
}

impl NumericMode {
    pub fn new(kind: NumericKind) -> Self {
        Self {
            kind,
            block_scales: BTreeMap::new(),
        }
    }

    pub fn float64() -> Self {
        Self::new(NumericKind::Float64)
    }

    pub fn float32() -> Self {
        Self::new(NumericKind::Float32)
    }

    pub fn fixed(fmt: FxpFormat) -> Self {
        Self::new(NumericKind::Fixed(fmt))
    }

    pub fn with_scale(mut self, block: Block, exponent: i32) -> Result<Self> {
        self.set_scale(block, exponent)?;
        Ok(self)
    }

    pub fn set_scale(&mut self, block: Block, exponent: i32) -> Result<()> {
        if !(MIN_SCALE..=MAX_SCALE).contains(&exponent) {
            return Err(Error::Config(format!(
                "scale exponent for '{}' must be in [{MIN_SCALE}, {MAX_SCALE}], got {exponent}",
                block.name()
            )));
        }
        if exponent == 0 {
            self.block_scales.remove(&block);
        } else {
            self.block_scales.insert(block, exponent);
        }
        Ok(())
    }

    pub fn scales(&self) -> &BTreeMap<Block, i32> {
        &self.block_scales
    }

    pub fn clear_scales(&mut self) {
        self.block_scales.clear();
    }

    /// Exponent applied at `block`; float modes never scale.
    pub fn scale(&self, block: Block) -> i32 {
        match self.kind {
            NumericKind::Fixed(_) => self.block_scales.get(&block).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn arith(&self) -> Arith {
        match self.kind {
            NumericKind::Float64 => Arith::Float64,
            NumericKind::Float32 => Arith::Float32,
            NumericKind::Fixed(fmt) => Arith::Fixed(fmt),
        }
    }

    pub fn is_float64(&self) -> bool {
        matches!(self.kind, NumericKind::Float64)
    }

    /// Short label, e.g. `float32`, `fixed{17,7}` or `fixed{17,7}+scaled`.
    pub fn label(&self) -> String {
        match self.kind {
            NumericKind::Float64 => "float64".into(),
            NumericKind::Float32 => "float32".into(),
            NumericKind::Fixed(fmt) if self.block_scales.is_empty() => format!("fixed{fmt}"),
            NumericKind::Fixed(fmt) => format!("fixed{fmt}+scaled"),
        }
    }
}

impl FromStr for NumericMode {
    type Err = Error;

    /// Accepts `float64`, `float32`, `fixed:W,I` and `{W,I}`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "float64" | "f64" => return Ok(Self::float64()),
            "float32" | "f32" => return Ok(Self::float32()),
            _ => {}
        }
        let body = s
            .strip_prefix("fixed")
            .map(|r| r.trim_start_matches(':'))
            .unwrap_or(s)
            .trim_start_matches('{')
            .trim_end_matches('}');
        let parts: Vec<&str> = body.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [w, i] => {
                let w = w
                    .parse()
                    .map_err(|_| Error::Config(format!("bad total bits in '{s}'")))?;
                let i = i
                    .parse()
                    .map_err(|_| Error::Config(format!("bad integer bits in '{s}'")))?;
                Ok(Self::fixed(FxpFormat::new(w, i)?))
            }
            _ => Err(Error::Config(format!("unrecognized numeric mode '{s}'"))),
        }
    }
}

/// Matrix entering a block, in that block's scaled domain.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub matrix: ComplexMatrix,
    /// Values are `2^exponent` times the true values.
    pub exponent: i32,
}

/// Multiplies by an exact power of two.
pub fn pow2_scale(m: &ComplexMatrix, exponent: i32) -> ComplexMatrix {
    if exponent == 0 {
        return m.clone();
    }
    m.scale(exp2(exponent))
}

/// Prepares `m` for `block` under `mode`.
///
/// Float64 passes through, float32 narrows every scalar, fixed point
/// scales by `2^scale` and quantizes every element.
pub fn apply_mode(m: &ComplexMatrix, mode: &NumericMode, block: &str) -> Result<Scaled> {
    let block: Block = block.parse()?;
    Ok(apply_block(m, mode, block))
}

pub fn apply_block(m: &ComplexMatrix, mode: &NumericMode, block: Block) -> Scaled {
    let exponent = mode.scale(block);
    let matrix = match mode.kind {
        NumericKind::Float64 => m.clone(),
        NumericKind::Float32 => m.map(|z| Arith::Float32.round_c(z)),
        NumericKind::Fixed(fmt) => pow2_scale(m, exponent).map(|z| quantize_complex(z, fmt)),
    };
    Scaled { matrix, exponent }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn f(w: u32, i: u32) -> FxpFormat {
        FxpFormat::new(w, i).unwrap()
    }

    #[test]
    fn format_validation() {
        assert!(FxpFormat::new(3, 1).is_err());
        assert!(FxpFormat::new(65, 1).is_err());
        assert!(FxpFormat::new(16, 0).is_err());
        assert!(FxpFormat::new(16, 17).is_err());
        let fmt = f(17, 7);
        assert_eq!(fmt.frac_bits(), 10);
        assert_eq!(fmt.max_value(), 63.9990234375);
        assert_eq!(fmt.min_value(), -64.0);
        assert_eq!(fmt.to_string(), "{17,7}");
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(1.5, f(17, 7)), 1.5);
        for fmt in [f(17, 7), f(24, 8), f(4, 4), f(64, 1)] {
            assert_eq!(quantize(0.0, fmt), 0.0);
        }
        // 2^(I-1) - 2^-F with I = 7, F = 10
        assert_eq!(quantize(100.0, f(17, 7)), 64.0 - 2f64.powi(-10));
        assert_eq!(quantize(100.0, f(17, 7)), 63.9990234375);
        assert_eq!(quantize(-100.0, f(17, 7)), -64.0);
    }

    #[test]
    fn truncation_rounds_toward_negative_infinity() {
        let fmt = f(8, 4); // lsb 1/16
        assert_eq!(quantize(0.07, fmt), 0.0625);
        assert_eq!(quantize(-0.07, fmt), -0.125);
        let ne = fmt.with_rounding(Rounding::NearestEven);
        assert_eq!(quantize(0.07, ne), 0.0625);
        assert_eq!(quantize(3.0 / 32.0, ne), 0.125); // tie to even
        assert_eq!(quantize(1.0 / 32.0, ne), 0.0);
    }

    #[test]
    fn wrap_overflow() {
        let fmt = f(8, 4).with_overflow(Overflow::Wrap); // range [-8, 8)
        assert_eq!(quantize(8.0, fmt), -8.0);
        assert_eq!(quantize(9.0, fmt), -7.0);
        assert_eq!(quantize(-9.0, fmt), 7.0);
        assert_eq!(quantize(7.5, fmt), 7.5);
    }

    #[test]
    fn complex_mul_examples() {
        let fmt = f(17, 7);
        let z = Complex64::new(quantize(1.37, fmt), quantize(-2.2, fmt));
        assert_eq!(
            fxp_complex_mul(Complex64::new(1.0, 0.0), z, fmt),
            quantize_complex(z, fmt)
        );
        let j = Complex64::new(0.0, 1.0);
        assert_eq!(fxp_complex_mul(j, j, f(24, 8)), Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn complex_mul_matches_stepwise_oracle() {
        let fmt = f(17, 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let mut draw = || quantize(rng.random_range(-7.0..7.0), fmt);
            let (ar, ai, br, bi) = (draw(), draw(), draw(), draw());
            // Oracle: float64 products, quantized in the stated order.
            let p1 = quantize(ar * br, fmt);
            let p2 = quantize(ai * bi, fmt);
            let p3 = quantize(ar * bi, fmt);
            let p4 = quantize(ai * br, fmt);
            let re = quantize(p1 - p2, fmt);
            let im = quantize(p3 + p4, fmt);
            let got = fxp_complex_mul(Complex64::new(ar, ai), Complex64::new(br, bi), fmt);
            assert_eq!(got.re.to_bits(), re.to_bits());
            assert_eq!(got.im.to_bits(), im.to_bits());
        }
    }

    #[test]
    fn apply_mode_float64_is_identity() {
        let m = ComplexMatrix::from_fn(2, 3, |i, j| Complex64::new(i as f64 * 0.1234567, j as f64 / 3.0));
        let out = apply_mode(&m, &NumericMode::float64(), "acf").unwrap();
        assert_eq!(out.matrix, m);
        assert_eq!(out.exponent, 0);
    }

    #[test]
    fn apply_mode_float32_narrows() {
        let m = ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(0.1, 1.0 / 3.0));
        let out = apply_mode(&m, &NumericMode::float32(), "msg").unwrap();
        assert_eq!(out.matrix[(0, 0)].re, 0.1f32 as f64);
        assert_eq!(out.matrix[(0, 0)].im, (1.0f32 / 3.0) as f64);
    }

    #[test]
    fn apply_mode_fixed_grid() {
        let mode = NumericMode::fixed(f(24, 8));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = ComplexMatrix::from_fn(4, 4, |_, _| {
            Complex64::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0))
        });
        let out = apply_mode(&m, &mode, "input").unwrap();
        for z in out.matrix.data() {
            for x in [z.re, z.im] {
                let n = x * 2f64.powi(16);
                assert_eq!(n, n.trunc());
            }
        }
    }

    #[test]
    fn apply_mode_scale_avoids_saturation() {
        let fmt = f(17, 7);
        let mode = NumericMode::fixed(fmt).with_scale(Block::Acf, -2).unwrap();
        let m = ComplexMatrix::from_fn(2, 2, |i, j| {
            if i == 0 && j == 0 {
                Complex64::new(200.0, -200.0)
            } else {
                Complex64::new(i as f64 * 3.0, 1.5)
            }
        });
        let out = apply_mode(&m, &mode, "acf").unwrap();
        assert_eq!(out.exponent, -2);
        assert!(out.matrix.max_abs() < 64.0 * 2f64.sqrt());
        assert!(out
            .matrix
            .data()
            .iter()
            .all(|z| z.re < fmt.max_value() && z.im > fmt.min_value()));
        assert_eq!(out.matrix[(0, 0)], Complex64::new(50.0, -50.0));
        let back = pow2_scale(&out.matrix, -out.exponent);
        assert_eq!(back[(0, 0)], Complex64::new(200.0, -200.0));

        let unscaled = apply_mode(&m, &NumericMode::fixed(fmt), "acf").unwrap();
        assert_eq!(unscaled.matrix[(0, 0)].re, fmt.max_value());
    }

    #[test]
    fn apply_mode_rejects_unknown_block() {
        let m = ComplexMatrix::identity(2);
        assert!(matches!(
            apply_mode(&m, &NumericMode::float64(), "fft"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scale_exponent_range() {
        let mode = NumericMode::fixed(f(17, 7));
        assert!(mode.clone().with_scale(Block::Msg, 17).is_err());
        assert!(mode.clone().with_scale(Block::Msg, -16).is_ok());
    }

    #[test]
    fn float_modes_ignore_scales() {
        let mode = NumericMode::float32().with_scale(Block::Acf, -3).unwrap();
        assert_eq!(mode.scale(Block::Acf), 0);
    }

    #[test]
    fn parses_modes() {
        assert_eq!("float64".parse::<NumericMode>().unwrap(), NumericMode::float64());
        assert_eq!("float32".parse::<NumericMode>().unwrap(), NumericMode::float32());
        assert_eq!(
            "fixed:17,7".parse::<NumericMode>().unwrap(),
            NumericMode::fixed(f(17, 7))
        );
        assert_eq!("{24,8}".parse::<NumericMode>().unwrap(), NumericMode::fixed(f(24, 8)));
        assert!("fixed:3,1".parse::<NumericMode>().is_err());
        assert!("double".parse::<NumericMode>().is_err());
    }

    fn formats() -> impl Strategy<Value = FxpFormat> {
        (4u32..=40)
            .prop_flat_map(|w| (Just(w), 1..=w, any::<bool>()))
            .prop_map(|(w, i, ne)| {
                let fmt = FxpFormat::new(w, i).unwrap();
                if ne {
                    fmt.with_rounding(Rounding::NearestEven)
                } else {
                    fmt
                }
            })
    }

    proptest! {
        #[test]
        fn idempotent(x in -1e6f64..1e6, fmt in formats()) {
            let q = quantize(x, fmt);
            prop_assert_eq!(quantize(q, fmt), q);
        }

        #[test]
        fn monotone(x in -1e4f64..1e4, y in -1e4f64..1e4, fmt in formats()) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(quantize(lo, fmt) <= quantize(hi, fmt));
        }

        #[test]
        fn error_bound_in_range(t in 0.0f64..1.0, fmt in formats()) {
            let x = fmt.min_value() + t * (fmt.max_value() - fmt.min_value());
            let err = (quantize(x, fmt) - x).abs();
            let bound = match fmt.rounding {
                Rounding::Truncate => fmt.lsb(),
                Rounding::NearestEven => fmt.lsb() / 2.0,
            };
            prop_assert!(err <= bound, "x={x} err={err} bound={bound}");
        }

        #[test]
        fn on_grid_and_in_range(x in -1e9f64..1e9, fmt in formats()) {
            let q = quantize(x, fmt);
            prop_assert!(q >= fmt.min_value() && q <= fmt.max_value());
            let n = q / fmt.lsb();
            prop_assert_eq!(n, n.trunc());
        }
    }
}
