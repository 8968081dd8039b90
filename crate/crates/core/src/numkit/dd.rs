//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`
//! giving roughly 106 significant bits.
//!
//! Only what a finite-difference oracle needs is provided: the four
//! arithmetic operations, `exp`, `ln`, `tanh` and the logistic function.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

const EXP_TERMS: usize = 10;

fn inverse_factorials() -> &'static [Dd; EXP_TERMS + 1] {
    static COEF: OnceLock<[Dd; EXP_TERMS + 1]> = OnceLock::new();
    COEF.get_or_init(|| {
        let mut c = [Dd::ONE; EXP_TERMS + 1];
        for n in 1..=EXP_TERMS {
            c[n] = c[n - 1] / Dd::from(n as f64);
        }
        c
    })
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn renorm(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn ldexp(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        // x = k ln2 + r, then exp(r) = exp(r / 1024)^1024 with a short
        // Taylor series for the reduced argument (|r / 1024| < 3.4e-4).
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).ldexp(-10);
        let coef = inverse_factorials();
        let mut p = coef[EXP_TERMS];
        for c in coef[..EXP_TERMS].iter().rev() {
            p = p * r + *c;
        }
        for _ in 0..10 {
            p = p * p;
        }
        p.ldexp(k as i32)
    }

    pub fn ln(self) -> Dd {
        debug_assert!(self.hi > 0.0);
        // Newton on exp(y) = x, starting from the f64 logarithm.
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn tanh(self) -> Dd {
        let a = self.abs();
        if a.hi > 40.0 {
            return Dd::from(self.hi.signum());
        }
        let e = (-(a + a)).exp();
        let t = (Dd::ONE - e) / (Dd::ONE + e);
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }

    pub fn sigmoid(self) -> Dd {
        if self.hi >= 0.0 {
            Dd::ONE / (Dd::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Dd::ONE + e)
        }
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

impl std::iter::Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::ZERO, |a, b| a + b)
    }
}
