//! Step-to-step stabilization from a Poincaré section.
//!
//! The section fixes the stance angle mid-swing; a section state collects
//! the joint angles and all velocities there.  One walking step defines a
//! map from section state and applied impulse to the next section state.
//! The periodic gait is a fixed point of that map with zero impulse, and a
//! discrete LQR gain on the numerically linearized map yields an impulse
//! feedback that makes the orbit attracting.

use crate::error::{Error, Result};
use crate::sim::{SectionFeedback, Walker, section_error, section_pack};
use crate::zerodyn::Orbit;
use nalgebra::{DMatrix, DVector};
use std::path::Path;

/// Section state of the periodic orbit.
pub fn fixed_point(walker: &Walker, orbit: &Orbit) -> Result<DVector<f64>> {
    Ok(section_pack(&orbit.state(walker.section_q2())?))
}

/// One application of the step-to-step map under an ideal impulse.
pub fn poincare_map(
    walker: &Walker,
    z: &DVector<f64>,
    impulse: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (_, z_next) = walker.execute_step(
        z,
        impulse,
        &crate::control::ImpulseMode::Ideal,
        0.0,
        None,
    )?;
    Ok(z_next)
}

/// Jacobians of the step-to-step map at a fixed point.
#[derive(Clone, Debug)]
pub struct Linearization {
    /// Sensitivity to the section state.
    pub a: DMatrix<f64>,
    /// Sensitivity to the applied impulse.
    pub b: DMatrix<f64>,
}

/// Central-difference linearization of the map at `z_star`.
///
/// If any perturbed evaluation fails a step, the perturbation is shrunk
/// once (tenfold) before giving up.
pub fn linearize(
    walker: &Walker,
    z_star: &DVector<f64>,
    delta_z: f64,
    delta_impulse: f64,
) -> Result<Linearization> {
    match linearize_with(walker, z_star, delta_z, delta_impulse) {
        Err(Error::Step(_)) => {
            linearize_with(walker, z_star, delta_z / 10.0, delta_impulse / 10.0)
        }
        other => other,
    }
}

fn linearize_with(
    walker: &Walker,
    z_star: &DVector<f64>,
    delta_z: f64,
    delta_impulse: f64,
) -> Result<Linearization> {
    let n = walker.model().n();
    let dim = 2 * n - 1;
    let m = n - 1;
    let zero_impulse = DVector::zeros(m);
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut zp = z_star.clone();
        let mut zm = z_star.clone();
        zp[i] += delta_z;
        zm[i] -= delta_z;
        let fp = poincare_map(walker, &zp, &zero_impulse)?;
        let fm = poincare_map(walker, &zm, &zero_impulse)?;
        let col = section_error(n, &fp, &fm) / (2.0 * delta_z);
        a.set_column(i, &col);
    }
    let mut b = DMatrix::zeros(dim, m);
    for j in 0..m {
        let mut ip = zero_impulse.clone();
        let mut im = zero_impulse.clone();
        ip[j] += delta_impulse;
        im[j] -= delta_impulse;
        let fp = poincare_map(walker, z_star, &ip)?;
        let fm = poincare_map(walker, z_star, &im)?;
        let col = section_error(n, &fp, &fm) / (2.0 * delta_impulse);
        b.set_column(j, &col);
    }
    Ok(Linearization { a, b })
}

/// Rank of the controllability matrix `[B, AB, ..., A^{d-1}B]` by SVD.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let dim = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(dim, dim * m);
    let mut block = b.clone();
    for k in 0..dim {
        ctrb.view_mut((0, k * m), (dim, m)).copy_from(&block);
        block = a * &block;
    }
    let sv = ctrb.svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Stabilizing solution of the discrete algebraic Riccati equation by
/// value iteration from `P = Q`.
pub fn dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let rb = r + b.transpose() * &p * b;
        let inv = rb.clone().try_inverse().ok_or_else(|| {
            Error::numerical("riccati", "input-weight block became singular")
        })?;
        let next =
            q + a.transpose() * (&p - &p * b * &inv * b.transpose() * &p) * a;
        let gap = (&next - &p).amax();
        p = next;
        if gap < 1e-12 * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(Error::numerical("riccati", "value iteration did not converge"))
}

/// Discrete LQR gain `K` such that the impulse `K e` closes the loop as
/// `A + BK`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = dare(a, b, q, r)?;
    let rb = r + b.transpose() * &p * b;
    let inv = rb
        .try_inverse()
        .ok_or_else(|| Error::numerical("riccati", "input-weight block became singular"))?;
    let k = -(&inv * b.transpose() * &p * a);
    Ok((k, p))
}

/// Default LQR weights: unit cost on joint angles, heavier cost on all
/// velocities, unit cost on impulse effort.
pub fn default_weights(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = 2 * n - 1;
    let mut q = DMatrix::identity(dim, dim);
    for i in n - 1..dim {
        q[(i, i)] = 1.5;
    }
    (q, DMatrix::identity(n - 1, n - 1))
}

/// Impulse feedback designed around a fixed point.
#[derive(Clone, Debug)]
pub struct IcpmController {
    z_star: DVector<f64>,
    k: DMatrix<f64>,
    n: usize,
}

impl IcpmController {
    pub fn new(z_star: DVector<f64>, k: DMatrix<f64>) -> Result<Self> {
        let dim = z_star.len();
        if dim % 2 == 0 {
            return Err(Error::validation("icpm.z_star", "section state must be odd-sized"));
        }
        let n = (dim + 1) / 2;
        if k.nrows() != n - 1 || k.ncols() != dim {
            return Err(Error::validation(
                "icpm.gain",
                format!("gain must be {}x{dim}, got {}x{}", n - 1, k.nrows(), k.ncols()),
            ));
        }
        Ok(IcpmController { z_star, k, n })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn z_star(&self) -> &DVector<f64> {
        &self.z_star
    }
}

impl SectionFeedback for IcpmController {
    fn reference(&self) -> &DVector<f64> {
        &self.z_star
    }

    fn impulse(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.k * section_error(self.n, z, &self.z_star)
    }
}

/// Complete synthesis result for one gait.
#[derive(Clone, Debug)]
pub struct IcpmDesign {
    pub z_star: DVector<f64>,
    pub fixed_point_residual: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub controllability_rank: usize,
    pub open_loop_radius: f64,
    pub closed_loop_radius: f64,
}

impl IcpmDesign {
    pub fn controller(&self) -> Result<IcpmController> {
        IcpmController::new(self.z_star.clone(), self.k.clone())
    }
}

/// Runs the full design pipeline: fixed point, linearization, LQR.
pub fn synthesize(
    walker: &Walker,
    orbit: &Orbit,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    delta: f64,
) -> Result<IcpmDesign> {
    let n = walker.model().n();
    let z_star = fixed_point(walker, orbit)?;
    let zero = DVector::zeros(n - 1);
    let z_ret = poincare_map(walker, &z_star, &zero)?;
    let residual = section_error(n, &z_ret, &z_star).norm();
    if residual > 1e-3 {
        return Err(Error::numerical(
            "icpm",
            format!("orbit is not a fixed point of the step map (residual {residual:.3e})"),
        ));
    }
    let lin = linearize(walker, &z_star, delta, delta)?;
    let (k, _p) = lqr_gain(&lin.a, &lin.b, q, r)?;
    let closed = &lin.a + &lin.b * &k;
    Ok(IcpmDesign {
        fixed_point_residual: residual,
        controllability_rank: controllability_rank(&lin.a, &lin.b),
        open_loop_radius: spectral_radius(&lin.a),
        closed_loop_radius: spectral_radius(&closed),
        z_star,
        a: lin.a,
        b: lin.b,
        k,
    })
}

/// Writes a matrix as plain text: one row per line, space-separated
/// full-precision decimals.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{:.16e}", m[(i, j)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::config(
                        path.display().to_string(),
                        format!("bad number {tok:?} on line {}", idx + 1),
                    )
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::config(
                    path.display().to_string(),
                    format!("ragged row on line {}", idx + 1),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::config(path.display().to_string(), "empty matrix file"));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}
