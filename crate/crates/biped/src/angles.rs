//! Small helpers for working with angles.

use nalgebra::DVector;

/// Wraps an angle to the half-open interval (-pi, pi].
pub fn wrap_to_pi(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Signed angular difference a - b wrapped to (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_to_pi(a - b)
}

/// Wraps every entry of a vector to (-pi, pi].
pub fn wrap_vec(v: &DVector<f64>) -> DVector<f64> {
    v.map(wrap_to_pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wraps_into_half_open_interval() {
        assert_eq!(wrap_to_pi(0.0), 0.0);
        assert!((wrap_to_pi(2.0 * PI) - 0.0).abs() < 1e-15);
        assert!((wrap_to_pi(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_to_pi(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
        // pi maps to pi, -pi maps to pi (half-open convention)
        assert!((wrap_to_pi(PI) - PI).abs() < 1e-15);
        assert!((wrap_to_pi(-PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn diff_is_shortest_signed_arc() {
        assert!((angle_diff(0.1, -0.1) - 0.2).abs() < 1e-15);
        assert!((angle_diff(-3.0, 3.0) - (2.0 * PI - 6.0)).abs() < 1e-12);
    }
}
