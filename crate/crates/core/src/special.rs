//! Special-function entry points for generic scalars.
//!
//! Evaluation happens in `f64` through `statrs`; results are rounded to `T`.

use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma as ln_gamma_f64;

use crate::scalar::Scalar;

pub fn ln_gamma<T: Scalar>(x: T) -> T {
    T::lit(ln_gamma_f64(x.to_f64_lossy()))
}

/// Regularized incomplete beta `I_x(a, b)`; NaN outside `a, b > 0`, `0 <= x <= 1`.
pub fn beta_inc<T: Scalar>(a: T, b: T, x: T) -> T {
    let (a, b, x) = (a.to_f64_lossy(), b.to_f64_lossy(), x.to_f64_lossy());
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return T::nan();
    }
    T::lit(beta_reg(a, b, x))
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_upper_tail<T: Scalar>(f: T, d1: T, d2: T) -> T {
    let (f, d1, d2) = (f.to_f64_lossy(), d1.to_f64_lossy(), d2.to_f64_lossy());
    if f.is_nan() || !(d1 > 0.0) || !(d2 > 0.0) {
        return T::nan();
    }
    if f <= 0.0 {
        return T::one();
    }
    if f.is_infinite() {
        return T::zero();
    }
    // P(F > f) = I_{d2/(d2 + d1 f)}(d2/2, d1/2)
    T::lit(beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f)))
}

pub fn normal_cdf<T: Scalar>(z: T) -> T {
    let z = z.to_f64_lossy();
    if z.is_nan() {
        return T::nan();
    }
    T::lit(0.5 * erfc(-z / std::f64::consts::SQRT_2))
}

pub fn normal_quantile<T: Scalar>(p: T) -> T {
    let p = p.to_f64_lossy();
    if !(0.0..=1.0).contains(&p) {
        return T::nan();
    }
    if p == 0.0 {
        return T::neg_infinity();
    }
    if p == 1.0 {
        return T::infinity();
    }
    T::lit(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((ln_gamma(5.0_f64) - 24.0_f64.ln()).abs() < 1e-13);
        assert!((beta_inc(1.0, 1.0, 0.25_f64) - 0.25).abs() < 1e-15);
        assert!(beta_inc(-1.0, 1.0, 0.5_f64).is_nan());
        // F(1, 1) at 1 is the two-sided Cauchy tail at 1
        assert!((f_upper_tail(1.0_f64, 1.0, 1.0) - 0.5).abs() < 1e-12);
        // F(2, 2): P(F > f) = 1 / (1 + f)
        assert!((f_upper_tail(3.0_f64, 2.0, 2.0) - 0.25).abs() < 1e-12);
        assert_eq!(f_upper_tail(0.0_f64, 5.0, 5.0), 1.0);
        assert!((normal_cdf(1.959_963_984_540_054_f64) - 0.975).abs() < 1e-11);
        assert!((normal_quantile(0.975_f64) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!(normal_quantile(0.0_f64).is_infinite());
    }

    #[test]
    fn extreme_tails_stay_positive() {
        let p: f64 = f_upper_tail(42.35, 8.0, 144.0);
        assert!(p > 0.0 && p < 1e-30);
        assert!(normal_cdf(-30.0_f64) > 0.0);
    }

    #[test]
    fn f32_paths_are_usable() {
        let p: f32 = f_upper_tail(3.0_f32, 2.0, 2.0);
        assert!((p - 0.25).abs() < 1e-6);
        assert!((normal_quantile(0.975_f32) - 1.959_964).abs() < 1e-5);
    }
}
