//! Standard normal distribution function via the complementary error function.

use std::f64::consts::FRAC_1_SQRT_2;

/// `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `1 - Phi(x)`, accurate in the upper tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values computed with 30-digit arithmetic
    const TAIL: [(f64, f64); 7] = [
        (0.5, 0.308537538725986896),
        (1.0, 0.158655253931457051),
        (1.5, 0.0668072012688580660),
        (2.0, 0.0227501319481792072),
        (3.0, 0.0013498980316300945),
        (5.0, 2.86651571879193911e-7),
        (8.0, 6.22096057427178387e-16),
    ];

    #[test]
    fn upper_tail_relative_accuracy() {
        for (x, p) in TAIL {
            let rel = (normal_sf(x) - p).abs() / p;
            assert!(rel < 1e-12, "x={x}: {rel:e}");
        }
    }

    #[test]
    fn symmetry_and_center() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(-3.0) - 0.0013498980316300945).abs() / 0.0013498980316300945 < 1e-12);
        for i in 0..=80 {
            let x = -8.0 + 0.2 * i as f64;
            assert!((normal_cdf(x) - normal_sf(-x)).abs() <= f64::EPSILON * normal_cdf(x));
            assert!((normal_cdf(x) + normal_sf(x) - 1.0).abs() < 1e-15);
        }
    }
}
