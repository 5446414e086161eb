//! Signed reals stored as `sign * exp(ln_abs)`, for memory coefficients and
//! products whose factors under- or overflow long before the product does.

/// `sign * exp(ln_abs)`; `sign == 0` is an exact zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogReal {
    pub ln_abs: f64,
    pub sign: f64,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal { ln_abs: 0.0, sign: 0.0 };
    pub const ONE: LogReal = LogReal { ln_abs: 0.0, sign: 1.0 };

    pub fn new(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogReal {
                ln_abs: x.abs().ln(),
                sign: x.signum(),
            }
        }
    }

    /// `sign * exp(ln_abs)` with `sign` in {-1, 0, 1}.
    pub fn from_parts(sign: f64, ln_abs: f64) -> Self {
        if sign == 0.0 || ln_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            LogReal { ln_abs, sign: sign.signum() }
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0.0
    }

    pub fn value(self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }
}

impl std::ops::Mul for LogReal {
    type Output = LogReal;

    fn mul(self, other: LogReal) -> LogReal {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        LogReal {
            ln_abs: self.ln_abs + other.ln_abs,
            sign: self.sign * other.sign,
        }
    }
}

impl std::ops::Add for LogReal {
    type Output = LogReal;

    fn add(self, other: LogReal) -> LogReal {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (big, small) = if self.ln_abs >= other.ln_abs { (self, other) } else { (other, self) };
        let ratio = (small.ln_abs - big.ln_abs).exp() * small.sign * big.sign;
        let factor = 1.0 + ratio;
        if factor == 0.0 {
            return Self::ZERO;
        }
        LogReal {
            ln_abs: big.ln_abs + factor.abs().ln(),
            sign: big.sign * factor.signum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_arithmetic() {
        for (x, y) in [(3.0, -2.0), (-0.5, 0.25), (1e-200, 1e-200), (0.0, 4.0)] {
            let (a, b) = (LogReal::new(x), LogReal::new(y));
            // exp(ln x) loses about |ln x| ulps
            assert!((a.value() - x).abs() <= 1e-13 * x.abs());
            assert!(((a * b).value() - x * y).abs() <= 1e-13 * (x * y).abs());
            assert!(((a + b).value() - (x + y)).abs() <= 1e-13 * (x.abs() + y.abs()));
        }
        assert!((LogReal::new(2.0) + LogReal::new(-2.0)).is_zero());
    }

    #[test]
    fn survives_underflowing_factors() {
        let tiny = LogReal::from_parts(1.0, -1000.0);
        let huge = LogReal::from_parts(-1.0, 999.0);
        assert!(((tiny * huge).value() + (-1.0f64).exp()).abs() < 1e-15);
    }
}
