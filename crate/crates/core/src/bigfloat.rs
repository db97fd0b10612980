//! Scalar abstraction over the two precisions the series code runs at:
//! native f64 and an arbitrary-precision float (>= 50 significant decimal
//! digits by default, overridable via `WFDIFF_PRECISION_DIGITS`).

use std::cell::RefCell;
use std::sync::OnceLock;

use astro_float::{BigFloat, Consts, RoundingMode};

const RM: RoundingMode = RoundingMode::ToEven;

fn precision_bits() -> usize {
    static BITS: OnceLock<usize> = OnceLock::new();
    *BITS.get_or_init(|| {
        let digits = std::env::var("WFDIFF_PRECISION_DIGITS")
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .filter(|d| (10..=10_000).contains(d))
            .unwrap_or(50);
        // bits = digits * log2(10), plus guard bits.
        (digits as f64 * std::f64::consts::LOG2_10).ceil() as usize + 32
    })
}

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
}

/// Arbitrary-precision float with the crate-wide working precision.
#[derive(Debug, Clone)]
pub struct BigF(BigFloat);

/// Minimal scalar interface the series evaluators are generic over.
pub trait Scalar: Clone {
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn abs(&self) -> Self;
    fn exp(&self) -> Self;
    fn lt(&self, o: &Self) -> bool;
    fn is_finite(&self) -> bool;
    /// Relative rounding scale of the type; series truncation stops once
    /// term bounds fall below this times the running sum.
    fn rel_epsilon() -> f64;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn lt(&self, o: &Self) -> bool {
        self < o
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn rel_epsilon() -> f64 {
        1e-16
    }
}

impl Scalar for BigF {
    fn from_f64(v: f64) -> Self {
        BigF(BigFloat::from_f64(v, precision_bits()))
    }
    fn to_f64(&self) -> f64 {
        if self.0.is_zero() {
            return 0.0;
        }
        // astro-float has no direct f64 conversion; its Display output is
        // exact scientific notation, which f64's parser accepts after
        // patching the bare "5.e-1" form.
        let s = format!("{}", self.0).replace(".e", ".0e");
        s.parse::<f64>().unwrap_or(f64::NAN)
    }
    fn add(&self, o: &Self) -> Self {
        BigF(self.0.add(&o.0, precision_bits(), RM))
    }
    fn sub(&self, o: &Self) -> Self {
        BigF(self.0.sub(&o.0, precision_bits(), RM))
    }
    fn mul(&self, o: &Self) -> Self {
        BigF(self.0.mul(&o.0, precision_bits(), RM))
    }
    fn div(&self, o: &Self) -> Self {
        BigF(self.0.div(&o.0, precision_bits(), RM))
    }
    fn abs(&self) -> Self {
        BigF(self.0.abs())
    }
    fn exp(&self) -> Self {
        CONSTS.with(|cc| BigF(self.0.exp(precision_bits(), RM, &mut cc.borrow_mut())))
    }
    fn lt(&self, o: &Self) -> bool {
        matches!(self.0.cmp(&o.0), Some(c) if c < 0)
    }
    fn is_finite(&self) -> bool {
        !self.0.is_nan() && !self.0.is_inf()
    }
    fn rel_epsilon() -> f64 {
        // 2^-(precision bits) with a couple of guard digits left over.
        2f64.powi(-((precision_bits() as i32) - 8))
    }
}
