//! Small numerical helpers shared across modules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Unevaluated sum `hi + lo`, roughly twice the working precision.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    /// The exact product `a * b`.
    pub fn product(a: f64, b: f64) -> Self {
        let hi = a * b;
        Self { hi, lo: a.mul_add(b, -hi) }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    /// `x * self`, keeping the rounding error of the leading product.
    pub fn scale(self, x: f64) -> Self {
        let p = Self::product(x, self.hi);
        let lo = x.mul_add(self.lo, p.lo);
        let hi = p.hi + lo;
        Self { hi, lo: lo - (hi - p.hi) }
    }
}

impl std::ops::Div for DoubleDouble {
    type Output = Self;
    /// Long division with two correction terms.
    fn div(self, d: Self) -> Self {
        let q1 = self.hi / d.hi;
        let r = self - d.scale(q1);
        let q2 = r.hi / d.hi;
        let r = r - d.scale(q2);
        let q3 = r.hi / d.hi;
        let hi = q1 + q2;
        let lo = (q2 - (hi - q1)) + q3;
        let s = hi + lo;
        Self { hi: s, lo: lo - (s - hi) }
    }
}

impl std::ops::Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let s = self.hi + o.hi;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (o.hi - bb);
        let lo = err + self.lo + o.lo;
        let hi = s + lo;
        Self { hi, lo: lo - (hi - s) }
    }
}

impl std::ops::Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }
}

impl std::ops::Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

/// Correctly rounded sum of a sequence of finite floats.
///
/// Keeps a list of non-overlapping partial sums (Shewchuk's algorithm), so
/// the result does not depend on summation order. Splitting a mass into
/// exact halves and summing again yields a bit-identical total.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }

    // Round the partials to a single float, taking care of the
    // half-way case the same way Python's math.fsum does.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
    } else {
        1.0 - 0.5 * libm::erfc(z * FRAC_1_SQRT_2)
    }
}

/// `Phi(b) - Phi(a)` for `a <= b`, evaluated on the side that avoids
/// cancellation.
pub fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a * FRAC_1_SQRT_2) - libm::erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * FRAC_1_SQRT_2) - libm::erfc(-a * FRAC_1_SQRT_2))
    } else {
        0.5 * (libm::erf(b * FRAC_1_SQRT_2) - libm::erf(a * FRAC_1_SQRT_2))
    }
}
