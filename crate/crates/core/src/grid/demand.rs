//! Linear demand curves anchored at a baseline price/quantity pair.

use num_traits::{One, Zero};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::GridError;

/// Arithmetic a demand curve needs. Implemented for `f64` and for exact
/// rationals.
pub trait Scalar:
    Copy
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + std::fmt::Debug
{
}

impl<T> Scalar for T where
    T: Copy
        + PartialOrd
        + Zero
        + One
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
        + Div<Output = T>
        + Neg<Output = T>
        + std::fmt::Debug
{
}

/// Inverse demand `π(P) = π₀ + π₀/(ε·P₀)·(P − P₀)`.
///
/// Quantities are clamped to `[0, P₀(1 − ε)]`, the range where the price is
/// non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandCurve<T = f64> {
    p0: T,
    pi0: T,
    elasticity: T,
}

impl<T: Scalar> DemandCurve<T> {
    pub fn new(p0: T, pi0: T, elasticity: T) -> Result<Self, GridError> {
        if !(elasticity < T::zero()) {
            return Err(GridError::BadElasticity(format!("{elasticity:?}")));
        }
        if !(p0 > T::zero()) || !(pi0 > T::zero()) {
            return Err(GridError::Config(format!(
                "demand anchor needs positive quantity and price, got ({p0:?}, {pi0:?})"
            )));
        }
        Ok(DemandCurve { p0, pi0, elasticity })
    }

    pub fn p0(&self) -> T {
        self.p0
    }

    pub fn pi0(&self) -> T {
        self.pi0
    }

    pub fn elasticity(&self) -> T {
        self.elasticity
    }

    /// dπ/dP, negative.
    pub fn slope(&self) -> T {
        self.pi0 / (self.elasticity * self.p0)
    }

    /// Price at quantity zero.
    pub fn intercept(&self) -> T {
        self.pi0 - self.slope() * self.p0
    }

    /// Quantity at which the price reaches zero.
    pub fn max_quantity(&self) -> T {
        self.p0 * (T::one() - self.elasticity)
    }

    pub fn price_at(&self, quantity: T) -> T {
        let q = self.clamp(quantity);
        self.pi0 + self.slope() * (q - self.p0)
    }

    pub fn quantity_at(&self, price: T) -> T {
        let q = self.p0 + (price - self.pi0) / self.slope();
        self.clamp(q)
    }

    /// Integral of the price from zero to `quantity` (per unit time).
    pub fn utility(&self, quantity: T) -> T {
        let q = self.clamp(quantity);
        let half = T::one() / (T::one() + T::one());
        self.intercept() * q + half * self.slope() * q * q
    }

    fn clamp(&self, q: T) -> T {
        let max = self.max_quantity();
        if q < T::zero() {
            T::zero()
        } else if q > max {
            max
        } else {
            q
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_and_zero_price_point() {
        let c: DemandCurve = DemandCurve::new(200.0, 0.8, -2.0).unwrap();
        assert_eq!(c.quantity_at(0.8), 200.0);
        assert_eq!(c.max_quantity(), 600.0);
        assert!(c.price_at(600.0).abs() < 1e-15);
        assert_eq!(c.quantity_at(-1.0), 600.0);
        assert_eq!(c.quantity_at(100.0), 0.0);
    }

    #[test]
    fn utility_is_area_under_curve() {
        let c: DemandCurve = DemandCurve::new(100.0, 1.0, -0.5).unwrap();
        // Trapezoid between 0 and P0.
        let expected = 0.5 * (c.intercept() + 1.0) * 100.0;
        assert!((c.utility(100.0) - expected).abs() < 1e-9);
        assert_eq!(c.utility(1e9), c.utility(c.max_quantity()));
    }

    #[test]
    fn rejects_non_negative_elasticity() {
        assert!(matches!(DemandCurve::new(1.0, 1.0, 0.0), Err(GridError::BadElasticity(_))));
        assert!(DemandCurve::new(0.0, 1.0, -1.0).is_err());
    }
}
