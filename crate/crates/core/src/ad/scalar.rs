//! Scalar algebras the tape is generic over: plain `f64` for gradients,
//! [`Dual`] for forward-over-reverse Hessian-vector products, and [`Jet2`]
//! for carrying first and second input derivatives through a forward pass.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

/// Arithmetic carrier for tape values.
///
/// Every backward-pass formula is written in terms of this trait, so running
/// the same tape over [`Dual`] numbers yields exact second-order information
/// (forward-mode tangents propagated through the reverse pass).
pub trait Scalar:
    Copy
    + PartialEq
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    /// Value part, discarding any derivative payload.
    fn primal(self) -> f64;
    /// Multiply by a plain constant.
    fn scale(self, c: f64) -> Self;
    /// Apply a C^2 map given its value and first two derivatives at the primal.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self;

    fn exp(self) -> Self {
        let e = self.primal().exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let v = self.primal();
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }
    fn ln_1p(self) -> Self {
        let v = self.primal();
        let u = 1.0 + v;
        self.chain(v.ln_1p(), 1.0 / u, -1.0 / (u * u))
    }
    fn tanh(self) -> Self {
        let t = self.primal().tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }
    fn recip(self) -> Self {
        let v = self.primal();
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
    /// Elementwise max against a constant; the active branch is decided on the
    /// primal, matching the subgradient convention 1[v > c].
    fn max_const(self, c: f64) -> Self {
        if self.primal() > c {
            self
        } else {
            Self::from_f64(c)
        }
    }
}

/// Numerically stable softplus, log(1 + e^x) computed in the non-overflowing branch.
pub fn softplus<S: Scalar>(x: S) -> S {
    if x.primal() > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of softplus.
pub fn logistic<S: Scalar>(x: S) -> S {
    if x.primal() >= 0.0 {
        ((-x).exp() + S::ONE).recip()
    } else {
        let e = x.exp();
        e * (e + S::ONE).recip()
    }
}

/// Inverse of softplus: log(e^y - 1) for y > 0, in an underflow-safe form.
pub fn softplus_inv(y: f64) -> f64 {
    let y = y.max(1e-300);
    if y > 30.0 {
        // e^y - 1 == e^y to double precision
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> f64 {
        v
    }
    #[inline(always)]
    fn primal(self) -> f64 {
        self
    }
    #[inline(always)]
    fn scale(self, c: f64) -> f64 {
        self * c
    }
    #[inline(always)]
    fn chain(self, f0: f64, _f1: f64, _f2: f64) -> f64 {
        f0
    }
}

/// First-order dual number: value plus a single tangent.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Dual {
    pub v: f64,
    pub dv: f64,
}

impl Dual {
    pub fn new(v: f64, dv: f64) -> Self {
        Dual { v, dv }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline(always)]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.dv + o.dv)
    }
}
impl Sub for Dual {
    type Output = Dual;
    #[inline(always)]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.dv - o.dv)
    }
}
impl Mul for Dual {
    type Output = Dual;
    #[inline(always)]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.v * o.dv + self.dv * o.v)
    }
}
impl Neg for Dual {
    type Output = Dual;
    #[inline(always)]
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.dv)
    }
}

impl Scalar for Dual {
    const ZERO: Dual = Dual { v: 0.0, dv: 0.0 };
    const ONE: Dual = Dual { v: 1.0, dv: 0.0 };

    #[inline(always)]
    fn from_f64(v: f64) -> Dual {
        Dual::new(v, 0.0)
    }
    #[inline(always)]
    fn primal(self) -> f64 {
        self.v
    }
    #[inline(always)]
    fn scale(self, c: f64) -> Dual {
        Dual::new(self.v * c, self.dv * c)
    }
    #[inline(always)]
    fn chain(self, f0: f64, f1: f64, _f2: f64) -> Dual {
        Dual::new(f0, f1 * self.dv)
    }
}

/// Second-order jet in two seed directions: value, both first derivatives,
/// and the three distinct entries of the symmetric second-derivative block.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
}

impl Jet2 {
    pub const fn constant(v: f64) -> Self {
        Jet2 { v, d1: 0.0, d2: 0.0, h11: 0.0, h12: 0.0, h22: 0.0 }
    }
    /// Seed for an input coordinate: unit tangent along direction 1 or 2.
    pub fn seed(v: f64, dir: usize) -> Self {
        let mut j = Jet2::constant(v);
        match dir {
            0 => j.d1 = 1.0,
            1 => j.d2 = 1.0,
            _ => panic!("Jet2 has two seed directions"),
        }
        j
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline(always)]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            h11: self.h11 + o.h11,
            h12: self.h12 + o.h12,
            h22: self.h22 + o.h22,
        }
    }
}
impl Sub for Jet2 {
    type Output = Jet2;
    #[inline(always)]
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
            h11: self.h11 - o.h11,
            h12: self.h12 - o.h12,
            h22: self.h22 - o.h22,
        }
    }
}
impl Mul for Jet2 {
    type Output = Jet2;
    #[inline(always)]
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            d1: self.v * o.d1 + self.d1 * o.v,
            d2: self.v * o.d2 + self.d2 * o.v,
            h11: self.v * o.h11 + 2.0 * self.d1 * o.d1 + self.h11 * o.v,
            h12: self.v * o.h12 + self.d1 * o.d2 + self.d2 * o.d1 + self.h12 * o.v,
            h22: self.v * o.h22 + 2.0 * self.d2 * o.d2 + self.h22 * o.v,
        }
    }
}
impl Neg for Jet2 {
    type Output = Jet2;
    #[inline(always)]
    fn neg(self) -> Jet2 {
        Jet2 {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
            h11: -self.h11,
            h12: -self.h12,
            h22: -self.h22,
        }
    }
}

impl Scalar for Jet2 {
    const ZERO: Jet2 = Jet2::constant(0.0);
    const ONE: Jet2 = Jet2::constant(1.0);

    #[inline(always)]
    fn from_f64(v: f64) -> Jet2 {
        Jet2::constant(v)
    }
    #[inline(always)]
    fn primal(self) -> f64 {
        self.v
    }
    #[inline(always)]
    fn scale(self, c: f64) -> Jet2 {
        Jet2 {
            v: self.v * c,
            d1: self.d1 * c,
            d2: self.d2 * c,
            h11: self.h11 * c,
            h12: self.h12 * c,
            h22: self.h22 * c,
        }
    }
    #[inline(always)]
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Jet2 {
        Jet2 {
            v: f0,
            d1: f1 * self.d1,
            d2: f1 * self.d2,
            h11: f2 * self.d1 * self.d1 + f1 * self.h11,
            h12: f2 * self.d1 * self.d2 + f1 * self.h12,
            h22: f2 * self.d2 * self.d2 + f1 * self.h22,
        }
    }
}
