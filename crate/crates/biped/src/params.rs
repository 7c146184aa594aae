//! Physical parameters of the planar point-foot biped.
//!
//! The mechanism is an open kinematic chain of `n` rigid links (n odd): the
//! stance leg runs from the ground pivot up to the hip, the torso sits on the
//! hip, and the swing leg hangs from the hip down to the free foot.  Links
//! are numbered along that chain starting at the stance shank, so the torso
//! is the middle link and the swing shank is the last one.

use crate::error::{Error, Result};

/// Mass, geometry, and gravity for an n-link chain (n odd, n >= 3).
#[derive(Clone, Debug, PartialEq)]
pub struct BipedParams {
    ell: Vec<f64>,
    d: Vec<f64>,
    m: Vec<f64>,
    inertia: Vec<f64>,
    g: f64,
}

impl BipedParams {
    /// Builds and validates a parameter set.
    ///
    /// * `ell[j]` - link length (joint to joint; torso length is its extent)
    /// * `d[j]` - distance from the proximal joint to the center of mass
    /// * `m[j]` - link mass
    /// * `inertia[j]` - moment of inertia about the center of mass
    /// * `g` - gravitational acceleration
    ///
    /// "Proximal" means the joint closer to the stance foot along the chain,
    /// so for swing-leg links it is the hip-side joint.  Because the two legs
    /// are the same physical pair of limbs with roles swapped every step,
    /// mirrored links must carry mirrored parameters:
    /// `ell`, `m`, `inertia` equal across the pair and
    /// `d[n-1-j] = ell[j] - d[j]`.
    pub fn new(ell: Vec<f64>, d: Vec<f64>, m: Vec<f64>, inertia: Vec<f64>, g: f64) -> Result<Self> {
        let n = ell.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::validation("biped.n", format!("need an odd link count >= 3, got {n}")));
        }
        for (name, v) in [("d", &d), ("m", &m), ("J", &inertia)] {
            if v.len() != n {
                return Err(Error::validation(
                    format!("biped.{name}"),
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
        }
        if !(g > 0.0) {
            return Err(Error::validation("biped.g", format!("gravity must be positive, got {g}")));
        }
        for j in 0..n {
            if !(ell[j] > 0.0) {
                return Err(Error::validation(format!("biped.ell[{j}]"), "length must be positive"));
            }
            if !(d[j] > 0.0 && d[j] < ell[j]) {
                return Err(Error::validation(
                    format!("biped.d[{j}]"),
                    format!("center of mass must lie strictly inside the link (0, {})", ell[j]),
                ));
            }
            if !(m[j] > 0.0) {
                return Err(Error::validation(format!("biped.m[{j}]"), "mass must be positive"));
            }
            if !(inertia[j] > 0.0) {
                return Err(Error::validation(format!("biped.J[{j}]"), "inertia must be positive"));
            }
        }
        let p = BipedParams { ell, d, m, inertia, g };
        p.check_leg_symmetry()?;
        Ok(p)
    }

    /// Verifies that mirrored leg links carry mirrored parameters.
    fn check_leg_symmetry(&self) -> Result<()> {
        let n = self.n();
        let tol = 1e-9;
        for j in 0..(n - 1) / 2 {
            let r = n - 1 - j;
            let rel = |x: f64, y: f64| (x - y).abs() > tol * x.abs().max(y.abs()).max(1.0);
            if rel(self.ell[j], self.ell[r]) {
                return Err(Error::validation(
                    format!("biped.ell[{r}]"),
                    format!("leg symmetry requires ell[{r}] = ell[{j}]"),
                ));
            }
            if rel(self.m[j], self.m[r]) {
                return Err(Error::validation(
                    format!("biped.m[{r}]"),
                    format!("leg symmetry requires m[{r}] = m[{j}]"),
                ));
            }
            if rel(self.inertia[j], self.inertia[r]) {
                return Err(Error::validation(
                    format!("biped.J[{r}]"),
                    format!("leg symmetry requires J[{r}] = J[{j}]"),
                ));
            }
            if rel(self.d[r], self.ell[j] - self.d[j]) {
                return Err(Error::validation(
                    format!("biped.d[{r}]"),
                    format!("leg symmetry requires d[{r}] = ell[{j}] - d[{j}]"),
                ));
            }
        }
        Ok(())
    }

    /// Reference five-link chain of uniform rods used throughout the tests
    /// and as the configuration default.
    pub fn five_link() -> Self {
        let ell = vec![0.5, 0.55, 0.6, 0.55, 0.5];
        let d: Vec<f64> = ell.iter().map(|l| l / 2.0).collect();
        let m = vec![0.4, 0.45, 0.55, 0.45, 0.4];
        // Uniform rods: m * l^2 / 12 about the center of mass.
        let inertia: Vec<f64> =
            ell.iter().zip(&m).map(|(l, mm)| mm * l * l / 12.0).collect();
        BipedParams::new(ell, d, m, inertia, 9.81).expect("reference parameters are valid")
    }

    pub fn n(&self) -> usize {
        self.ell.len()
    }

    /// Index of the torso link (middle of the chain).
    pub fn torso(&self) -> usize {
        (self.n() - 1) / 2
    }

    pub fn ell(&self) -> &[f64] {
        &self.ell
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn total_mass(&self) -> f64 {
        self.m.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_chain_is_valid_and_symmetric() {
        let p = BipedParams::five_link();
        assert_eq!(p.n(), 5);
        assert_eq!(p.torso(), 2);
        assert!((p.total_mass() - 2.25).abs() < 1e-15);
        // Uniform-rod inertias for the given masses and lengths.
        assert!((p.inertia()[0] - 0.4 * 0.25 / 12.0).abs() < 1e-15);
        assert!((p.inertia()[2] - 0.55 * 0.36 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_even_link_count() {
        let e = BipedParams::new(vec![1.0; 4], vec![0.5; 4], vec![1.0; 4], vec![0.1; 4], 9.81);
        assert!(matches!(e, Err(Error::Validation { .. })));
    }

    #[test]
    fn rejects_asymmetric_legs_with_offending_index() {
        let mut ell = vec![0.5, 0.55, 0.6, 0.55, 0.5];
        ell[4] = 0.51;
        let d: Vec<f64> = ell.iter().map(|l| l / 2.0).collect();
        let err = BipedParams::new(ell, d, vec![0.4, 0.45, 0.55, 0.45, 0.4], vec![0.01; 5], 9.81)
            .unwrap_err();
        match err {
            Error::Validation { path, .. } => assert!(path.contains("[4]"), "path = {path}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_com_outside_link() {
        let ell = vec![0.5, 0.55, 0.6, 0.55, 0.5];
        let mut d: Vec<f64> = ell.iter().map(|l| l / 2.0).collect();
        d[2] = 0.7;
        let err =
            BipedParams::new(ell, d, vec![0.4, 0.45, 0.55, 0.45, 0.4], vec![0.01; 5], 9.81).unwrap_err();
        assert!(matches!(err, Error::Validation { ref path, .. } if path == "biped.d[2]"));
    }

    #[test]
    fn off_center_mass_needs_mirrored_counterpart() {
        let ell = vec![0.5, 0.55, 0.6, 0.55, 0.5];
        // Shank centers of mass shifted toward the knee; the swing-side link
        // must carry the complementary offset measured from the hip side.
        let d = vec![0.3, 0.275, 0.3, 0.275, 0.2];
        let p = BipedParams::new(ell, d, vec![0.4, 0.45, 0.55, 0.45, 0.4], vec![0.01; 5], 9.81);
        assert!(p.is_ok(), "mirrored off-center masses must validate: {p:?}");
    }
}
