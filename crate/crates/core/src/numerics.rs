//! Q16.16 fixed-point words and piecewise-linear lookup tables.
//!
//! Every value the machine touches is an [`FxWord`]. Arithmetic saturates at
//! the ends of the representable range instead of wrapping, and multiplication
//! truncates toward negative infinity (a plain arithmetic shift).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Number of fractional bits.
pub const FRAC_BITS: u32 = 16;
const SCALE: f64 = (1u64 << FRAC_BITS) as f64;

/// One 32-bit datapath word, `raw / 2^16`.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FxWord(i32);

impl FxWord {
    pub const ZERO: FxWord = FxWord(0);
    pub const ONE: FxWord = FxWord(1 << FRAC_BITS);
    pub const MAX: FxWord = FxWord(i32::MAX);
    pub const MIN: FxWord = FxWord(i32::MIN);
    /// Smallest positive step, 2^-16.
    pub const EPSILON: FxWord = FxWord(1);

    pub const fn from_raw(raw: i32) -> Self {
        FxWord(raw)
    }

    pub const fn raw(self) -> i32 {
        self.0
    }

    /// Nearest representable value; out-of-range inputs saturate and NaN maps to zero.
    pub fn from_real(v: f64) -> Self {
        if v.is_nan() {
            return FxWord::ZERO;
        }
        let scaled = (v * SCALE).round();
        if scaled >= i32::MAX as f64 {
            FxWord::MAX
        } else if scaled <= i32::MIN as f64 {
            FxWord::MIN
        } else {
            FxWord(scaled as i32)
        }
    }

    pub fn to_real(self) -> f64 {
        self.0 as f64 / SCALE
    }

    pub fn from_int(v: i64) -> Self {
        saturate(v << FRAC_BITS)
    }

    pub fn saturating_add(self, rhs: FxWord) -> FxWord {
        FxWord(self.0.saturating_add(rhs.0))
    }

    pub fn saturating_sub(self, rhs: FxWord) -> FxWord {
        FxWord(self.0.saturating_sub(rhs.0))
    }

    /// `(a * b) >> 16` on a 64-bit product, floor rounding, saturated.
    pub fn saturating_mul(self, rhs: FxWord) -> FxWord {
        let wide = (self.0 as i64) * (rhs.0 as i64);
        saturate(wide >> FRAC_BITS)
    }

    pub fn saturating_abs(self) -> FxWord {
        FxWord(self.0.saturating_abs())
    }

    pub fn saturating_neg(self) -> FxWord {
        FxWord(self.0.saturating_neg())
    }
}

fn saturate(v: i64) -> FxWord {
    FxWord(v.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
}

impl fmt::Debug for FxWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fx({})", self.to_real())
    }
}

impl fmt::Display for FxWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_real())
    }
}

impl Add for FxWord {
    type Output = FxWord;
    fn add(self, rhs: FxWord) -> FxWord {
        self.saturating_add(rhs)
    }
}

impl Sub for FxWord {
    type Output = FxWord;
    fn sub(self, rhs: FxWord) -> FxWord {
        self.saturating_sub(rhs)
    }
}

impl Mul for FxWord {
    type Output = FxWord;
    fn mul(self, rhs: FxWord) -> FxWord {
        self.saturating_mul(rhs)
    }
}

impl Neg for FxWord {
    type Output = FxWord;
    fn neg(self) -> FxWord {
        self.saturating_neg()
    }
}

pub fn fx_from_real(v: f64) -> FxWord {
    FxWord::from_real(v)
}

pub fn fx_to_real(w: FxWord) -> f64 {
    w.to_real()
}

pub fn fx_add(a: FxWord, b: FxWord) -> FxWord {
    a.saturating_add(b)
}

pub fn fx_sub(a: FxWord, b: FxWord) -> FxWord {
    a.saturating_sub(b)
}

pub fn fx_mul(a: FxWord, b: FxWord) -> FxWord {
    a.saturating_mul(b)
}

/// Nonlinear functions the lookup-table unit can approximate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LutFunction {
    Sigmoid,
    Tanh,
    /// `exp(x)` on a non-positive domain.
    ExpNeg,
}

impl LutFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            LutFunction::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            LutFunction::Tanh => x.tanh(),
            LutFunction::ExpNeg => x.exp(),
        }
    }

    pub fn id(self) -> i32 {
        match self {
            LutFunction::Sigmoid => 0,
            LutFunction::Tanh => 1,
            LutFunction::ExpNeg => 2,
        }
    }

    pub fn from_id(id: i32) -> Option<Self> {
        match id {
            0 => Some(LutFunction::Sigmoid),
            1 => Some(LutFunction::Tanh),
            2 => Some(LutFunction::ExpNeg),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LutFunction::Sigmoid => "sigmoid",
            LutFunction::Tanh => "tanh",
            LutFunction::ExpNeg => "exp",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LutError {
    #[error("lookup table needs at least 2 segments, got {0}")]
    TooFewSegments(usize),
    #[error("lookup table range is empty: lo={lo} hi={hi}")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("malformed lookup table words: {0}")]
    Malformed(String),
}

/// Default segment count of every table.
pub const DEFAULT_SEGMENTS: usize = 128;

/// Uniformly segmented slope/intercept table. Segment `i` covers
/// `[lo + i*w, lo + (i+1)*w)` and evaluates to `k[i]*x + b[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LutTable {
    function: LutFunction,
    lo: FxWord,
    hi: FxWord,
    slopes: Vec<FxWord>,
    intercepts: Vec<FxWord>,
    low_value: FxWord,
    high_value: FxWord,
    max_error: f64,
}

const ERROR_GRID_PER_SEGMENT: usize = 64;

impl LutTable {
    /// Builds a table from the secant of `f` over each segment, with the
    /// intercept lifted by half the largest secant deviation on that segment so
    /// the linear piece straddles the curve.
    pub fn build(function: LutFunction, segments: usize, lo: f64, hi: f64) -> Result<Self, LutError> {
        if segments < 2 {
            return Err(LutError::TooFewSegments(segments));
        }
        if !(lo < hi) {
            return Err(LutError::EmptyRange { lo, hi });
        }
        let lo_fx = FxWord::from_real(lo);
        let hi_fx = FxWord::from_real(hi);
        let (lo, hi) = (lo_fx.to_real(), hi_fx.to_real());
        let width = (hi - lo) / segments as f64;
        let mut slopes = Vec::with_capacity(segments);
        let mut intercepts = Vec::with_capacity(segments);
        for i in 0..segments {
            let a = lo + i as f64 * width;
            let b = a + width;
            let (fa, fb) = (function.eval(a), function.eval(b));
            let k = (fb - fa) / width;
            let c = fa - k * a;
            let (mut above, mut below) = (0.0f64, 0.0f64);
            for s in 0..=ERROR_GRID_PER_SEGMENT {
                let x = a + width * s as f64 / ERROR_GRID_PER_SEGMENT as f64;
                let d = function.eval(x) - (k * x + c);
                above = above.max(d);
                below = below.min(d);
            }
            slopes.push(FxWord::from_real(k));
            intercepts.push(FxWord::from_real(c + 0.5 * (above + below)));
        }
        let mut table = LutTable {
            function,
            lo: lo_fx,
            hi: hi_fx,
            slopes,
            intercepts,
            low_value: FxWord::from_real(function.eval(lo)),
            high_value: FxWord::from_real(function.eval(hi)),
            max_error: 0.0,
        };
        table.max_error = table.measure_error(ERROR_GRID_PER_SEGMENT);
        Ok(table)
    }

    pub fn sigmoid() -> Self {
        Self::build(LutFunction::Sigmoid, DEFAULT_SEGMENTS, -8.0, 8.0).expect("valid defaults")
    }

    pub fn tanh() -> Self {
        Self::build(LutFunction::Tanh, DEFAULT_SEGMENTS, -8.0, 8.0).expect("valid defaults")
    }

    pub fn exp_neg() -> Self {
        Self::build(LutFunction::ExpNeg, DEFAULT_SEGMENTS, -16.0, 0.0).expect("valid defaults")
    }

    pub fn function(&self) -> LutFunction {
        self.function
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn lo(&self) -> FxWord {
        self.lo
    }

    pub fn hi(&self) -> FxWord {
        self.hi
    }

    pub fn slopes(&self) -> &[FxWord] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[FxWord] {
        &self.intercepts
    }

    /// Largest `|table(x) - f(x)|` seen on a dense grid over `[lo, hi]`, in the
    /// fixed-point evaluation path.
    pub fn max_error(&self) -> f64 {
        self.max_error
    }

    /// Slope and intercept for `x`. Outside `[lo, hi)` the segment is flat at the
    /// function value of the nearer bound.
    pub fn lookup(&self, x: FxWord) -> (FxWord, FxWord) {
        if x < self.lo {
            return (FxWord::ZERO, self.low_value);
        }
        if x >= self.hi {
            return (FxWord::ZERO, self.high_value);
        }
        let span = self.hi.raw() as i64 - self.lo.raw() as i64;
        let pos = x.raw() as i64 - self.lo.raw() as i64;
        let idx = ((pos * self.segments() as i64) / span) as usize;
        let idx = idx.min(self.segments() - 1);
        (self.slopes[idx], self.intercepts[idx])
    }

    /// `k*x + b` through the multiplier and adder.
    pub fn apply(&self, x: FxWord) -> FxWord {
        let (k, b) = self.lookup(x);
        fx_add(fx_mul(k, x), b)
    }

    fn measure_error(&self, per_segment: usize) -> f64 {
        let (lo, hi) = (self.lo.to_real(), self.hi.to_real());
        let steps = self.segments() * per_segment;
        (0..=steps)
            .map(|s| {
                let x = FxWord::from_real(lo + (hi - lo) * s as f64 / steps as f64);
                (self.apply(x).to_real() - self.function.eval(x.to_real())).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Flattened word form: `[function id, segments, lo, hi, low value, high value]`
    /// followed by all slopes and then all intercepts.
    pub fn to_words(&self) -> Vec<FxWord> {
        let mut words = vec![
            FxWord::from_raw(self.function.id()),
            FxWord::from_raw(self.segments() as i32),
            self.lo,
            self.hi,
            self.low_value,
            self.high_value,
        ];
        words.extend_from_slice(&self.slopes);
        words.extend_from_slice(&self.intercepts);
        words
    }

    pub fn from_words(words: &[FxWord]) -> Result<Self, LutError> {
        if words.len() < 6 {
            return Err(LutError::Malformed(format!("{} words is shorter than the header", words.len())));
        }
        let function = LutFunction::from_id(words[0].raw())
            .ok_or_else(|| LutError::Malformed(format!("unknown function id {}", words[0].raw())))?;
        let segments = usize::try_from(words[1].raw())
            .map_err(|_| LutError::Malformed("negative segment count".into()))?;
        if segments < 2 {
            return Err(LutError::TooFewSegments(segments));
        }
        if words.len() != 6 + 2 * segments {
            return Err(LutError::Malformed(format!(
                "expected {} words for {} segments, got {}",
                6 + 2 * segments,
                segments,
                words.len()
            )));
        }
        let (lo, hi) = (words[2], words[3]);
        if lo >= hi {
            return Err(LutError::EmptyRange { lo: lo.to_real(), hi: hi.to_real() });
        }
        let mut table = LutTable {
            function,
            lo,
            hi,
            slopes: words[6..6 + segments].to_vec(),
            intercepts: words[6 + segments..].to_vec(),
            low_value: words[4],
            high_value: words[5],
            max_error: 0.0,
        };
        table.max_error = table.measure_error(ERROR_GRID_PER_SEGMENT);
        Ok(table)
    }
}

pub fn lut_build(function: LutFunction, segments: usize, lo: f64, hi: f64) -> Result<LutTable, LutError> {
    LutTable::build(function, segments, lo, hi)
}

pub fn lut_eval(table: &LutTable, x: FxWord) -> (FxWord, FxWord) {
    table.lookup(x)
}

/// The three tables the machine carries.
#[derive(Clone, Debug, PartialEq)]
pub struct LutSet {
    pub sigmoid: LutTable,
    pub tanh: LutTable,
    pub exp: LutTable,
}

impl Default for LutSet {
    fn default() -> Self {
        LutSet { sigmoid: LutTable::sigmoid(), tanh: LutTable::tanh(), exp: LutTable::exp_neg() }
    }
}

impl LutSet {
    pub fn get(&self, function: LutFunction) -> &LutTable {
        match function {
            LutFunction::Sigmoid => &self.sigmoid,
            LutFunction::Tanh => &self.tanh,
            LutFunction::ExpNeg => &self.exp,
        }
    }

    pub fn replace(&mut self, table: LutTable) {
        match table.function() {
            LutFunction::Sigmoid => self.sigmoid = table,
            LutFunction::Tanh => self.tanh = table,
            LutFunction::ExpNeg => self.exp = table,
        }
    }
}
