//! Swing-phase dynamics of the pinned chain and its free-floating extension.
//!
//! With absolute link angles the Lagrangian has constant kinetic
//! coefficients: writing the center of mass of link `j` as
//! `p_j = sum_i c[j][i] * e(theta_i)` with `e(t) = (-sin t, cos t)` the unit
//! vector along a link, the chain geometry enters only through the constant
//! matrix `c` (`c[j][i]` is the full length `ell_i` for ancestors of `j` in
//! the chain, `d_j` for the link itself, zero otherwise).  That collapses the
//! mass matrix to
//!
//! `M_theta[i][k] = a[i][k] cos(theta_i - theta_k) + J_i delta_ik`,
//!
//! with `a = c^T diag(m) c`, the gravity torque to `-g b_i sin(theta_i)` with
//! `b = c^T m`, and the velocity bias to
//! `S_i = sum_k a[i][k] sin(theta_i - theta_k) dtheta_k^2`.  Everything the
//! rest of the crate needs (generalized-coordinate dynamics, energies,
//! swing-foot kinematics, the free-floating mass matrix used by the ground
//! impact) is assembled from `a`, `b`, and the link lengths.

use crate::error::{Error, Result};
use crate::params::BipedParams;
use crate::state::{w_matrix, AbsState, State};
use nalgebra::{DMatrix, DVector, Vector2};

/// Unit vector along a link at absolute angle `t` (upward vertical at 0).
#[inline]
fn e(t: f64) -> Vector2<f64> {
    Vector2::new(-t.sin(), t.cos())
}

/// First derivative of [`e`] with respect to the angle.
#[inline]
fn e1(t: f64) -> Vector2<f64> {
    Vector2::new(-t.cos(), -t.sin())
}

/// Second derivative of [`e`] with respect to the angle.
#[inline]
fn e2(t: f64) -> Vector2<f64> {
    Vector2::new(t.sin(), -t.cos())
}

/// Precomputed dynamics of one biped.
#[derive(Clone, Debug)]
pub struct Model {
    params: BipedParams,
    /// Constant kinetic coefficients `a = c^T diag(m) c`.
    a: DMatrix<f64>,
    /// Constant gravity/coupling coefficients `b = c^T m`.
    b: DVector<f64>,
    /// Accumulation matrix with `theta = W q`.
    w: DMatrix<f64>,
}

/// Links whose full length contributes to the position of link `j`'s center
/// of mass: the chain from the stance foot to `j`, which skips the torso for
/// swing-leg links (the swing leg hangs from the hip, not the torso tip).
fn ancestors(n: usize, j: usize) -> Vec<usize> {
    let torso = (n - 1) / 2;
    if j <= torso {
        (0..j).collect()
    } else {
        (0..torso).chain(torso + 1..j).collect()
    }
}

impl Model {
    pub fn new(params: BipedParams) -> Self {
        let n = params.n();
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in ancestors(n, j) {
                c[(j, i)] = params.ell()[i];
            }
            c[(j, j)] = params.d()[j];
        }
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for i in 0..n {
            for k in 0..n {
                a[(i, k)] = (0..n).map(|j| params.m()[j] * c[(j, i)] * c[(j, k)]).sum();
            }
            b[i] = (0..n).map(|j| params.m()[j] * c[(j, i)]).sum();
        }
        let w = w_matrix(n);
        Model { params, a, b, w }
    }

    pub fn params(&self) -> &BipedParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// Mass matrix in absolute link angles.
    pub fn mass_matrix_abs(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..=i {
                let v = self.a[(i, k)] * (theta[i] - theta[k]).cos();
                m[(i, k)] = v;
                m[(k, i)] = v;
            }
            m[(i, i)] += self.params.inertia()[i];
        }
        m
    }

    /// Velocity bias plus gravity torque in absolute link angles.
    pub fn bias_abs(&self, theta: &DVector<f64>, dtheta: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let g = self.params.g();
        let mut h = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += self.a[(i, k)] * (theta[i] - theta[k]).sin() * dtheta[k] * dtheta[k];
            }
            h[i] = s - g * self.b[i] * theta[i].sin();
        }
        h
    }

    /// Mass matrix in generalized coordinates `q = (q1, q2)`.
    pub fn mass_matrix(&self, state: &State) -> DMatrix<f64> {
        let abs = state.to_abs();
        self.w.transpose() * self.mass_matrix_abs(&abs.theta) * &self.w
    }

    /// Velocity/gravity bias in generalized coordinates.
    pub fn bias(&self, state: &State) -> DVector<f64> {
        let abs = state.to_abs();
        self.w.transpose() * self.bias_abs(&abs.theta, &abs.dtheta)
    }

    /// Generalized accelerations under joint torques `u` (length n-1); the
    /// stance pivot is unactuated.
    pub fn accel(&self, state: &State, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        assert_eq!(u.len(), n - 1, "torque vector must have length n-1");
        let m = self.mass_matrix(state);
        let h = self.bias(state);
        let mut rhs = -h;
        for i in 0..n - 1 {
            rhs[i] += u[i];
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::numerical("model", "mass matrix lost positive definiteness"))?;
        Ok(chol.solve(&rhs))
    }

    /// Kinetic energy.
    pub fn kinetic_energy(&self, state: &State) -> f64 {
        let abs = state.to_abs();
        let m = self.mass_matrix_abs(&abs.theta);
        0.5 * abs.dtheta.dot(&(m * &abs.dtheta))
    }

    /// Potential energy relative to all centers of mass at stance-foot height.
    pub fn potential_energy(&self, state: &State) -> f64 {
        let abs = state.to_abs();
        let g = self.params.g();
        g * (0..self.n()).map(|i| self.b[i] * abs.theta[i].cos()).sum::<f64>()
    }

    /// Total mechanical energy.
    pub fn total_energy(&self, state: &State) -> f64 {
        self.kinetic_energy(state) + self.potential_energy(state)
    }

    /// Swing-foot position relative to the stance foot.
    pub fn swing_foot(&self, theta: &DVector<f64>) -> Vector2<f64> {
        let torso = self.params.torso();
        let mut p = Vector2::zeros();
        for j in 0..self.n() {
            if j != torso {
                p += self.params.ell()[j] * e(theta[j]);
            }
        }
        p
    }

    /// Jacobian of the swing-foot position with respect to absolute angles.
    pub fn swing_foot_jacobian_abs(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let torso = self.params.torso();
        let mut jac = DMatrix::zeros(2, n);
        for j in 0..n {
            if j != torso {
                let col = self.params.ell()[j] * e1(theta[j]);
                jac[(0, j)] = col[0];
                jac[(1, j)] = col[1];
            }
        }
        jac
    }

    /// Swing-foot velocity for a pinned-chain state.
    pub fn swing_foot_velocity(&self, abs: &AbsState) -> Vector2<f64> {
        let torso = self.params.torso();
        let mut v = Vector2::zeros();
        for j in 0..self.n() {
            if j != torso {
                v += self.params.ell()[j] * e1(abs.theta[j]) * abs.dtheta[j];
            }
        }
        v
    }

    /// Swing-foot acceleration given absolute angle accelerations.
    pub fn swing_foot_accel(&self, abs: &AbsState, ddtheta: &DVector<f64>) -> Vector2<f64> {
        let torso = self.params.torso();
        let mut acc = Vector2::zeros();
        for j in 0..self.n() {
            if j != torso {
                let l = self.params.ell()[j];
                acc += l * (e2(abs.theta[j]) * abs.dtheta[j] * abs.dtheta[j] + e1(abs.theta[j]) * ddtheta[j]);
            }
        }
        acc
    }

    /// Mass matrix of the free-floating chain in `(theta, foot)` coordinates.
    ///
    /// The extra two degrees of freedom are the stance-foot position; the
    /// coupling column for angle `i` is `b_i * e'(theta_i)` and the foot
    /// block is the total mass times the identity.
    pub fn extended_mass_matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n + 2, n + 2);
        m.view_mut((0, 0), (n, n)).copy_from(&self.mass_matrix_abs(theta));
        for i in 0..n {
            let col = self.b[i] * e1(theta[i]);
            m[(i, n)] = col[0];
            m[(i, n + 1)] = col[1];
            m[(n, i)] = col[0];
            m[(n + 1, i)] = col[1];
        }
        let mt = self.params.total_mass();
        m[(n, n)] = mt;
        m[(n + 1, n + 1)] = mt;
        m
    }

    /// Swing-foot Jacobian of the free-floating chain: `[d(gamma)/d(theta) | I]`.
    pub fn extended_swing_jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut jac = DMatrix::zeros(2, n + 2);
        jac.view_mut((0, 0), (2, n)).copy_from(&self.swing_foot_jacobian_abs(theta));
        jac[(0, n)] = 1.0;
        jac[(1, n + 1)] = 1.0;
        jac
    }

    /// Center-of-mass positions of every link relative to the stance foot,
    /// computed by walking the physical chain joint by joint.  Used as an
    /// independent geometric cross-check of the constant-coefficient form.
    pub fn link_com_positions(&self, theta: &DVector<f64>) -> Vec<Vector2<f64>> {
        let n = self.n();
        let torso = self.params.torso();
        let ell = self.params.ell();
        let d = self.params.d();
        let mut out = vec![Vector2::zeros(); n];
        // Stance leg: from the ground pivot up to the hip.
        let mut joint = Vector2::zeros();
        for j in 0..torso {
            out[j] = joint + d[j] * e(theta[j]);
            joint += ell[j] * e(theta[j]);
        }
        let hip = joint;
        // Torso sits on the hip.
        out[torso] = hip + d[torso] * e(theta[torso]);
        // Swing leg hangs from the hip down to the free foot.
        let mut sj = hip;
        for j in torso + 1..n {
            out[j] = sj + d[j] * e(theta[j]);
            sj += ell[j] * e(theta[j]);
        }
        out
    }
}
