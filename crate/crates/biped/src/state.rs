//! Coordinate bookkeeping for the pinned and free-floating chain.
//!
//! Two equivalent coordinate sets are used:
//!
//! * generalized coordinates `q = (q1, q2)`, where `q1[j]` is the relative
//!   joint angle between consecutive links and `q2` is the absolute angle of
//!   the stance shank (the unactuated cyclic-like coordinate);
//! * absolute link angles `theta[j]`, measured counterclockwise from the
//!   upward vertical for every link.
//!
//! They relate through the lower-triangular accumulation
//! `theta[j] = q2 + q1[0] + ... + q1[j-1]`, i.e. `theta = W q` for a constant
//! unimodular `W`.  The dynamics are cheapest to assemble in absolute angles;
//! everything controller-facing lives in `q`.

use nalgebra::{DMatrix, DVector, Vector2};

/// Pinned-chain state in generalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    /// Relative joint angles, length n-1 (actuated).
    pub q1: DVector<f64>,
    /// Absolute stance-shank angle (unactuated).
    pub q2: f64,
    /// Joint angle rates, length n-1.
    pub dq1: DVector<f64>,
    /// Stance-shank angle rate.
    pub dq2: f64,
}

/// Pinned-chain state in absolute link angles.
#[derive(Clone, Debug, PartialEq)]
pub struct AbsState {
    pub theta: DVector<f64>,
    pub dtheta: DVector<f64>,
}

/// Free-floating chain state: absolute angles plus the stance-foot position.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    pub theta: DVector<f64>,
    pub foot: Vector2<f64>,
    pub dtheta: DVector<f64>,
    pub dfoot: Vector2<f64>,
}

impl State {
    pub fn new(q1: DVector<f64>, q2: f64, dq1: DVector<f64>, dq2: f64) -> Self {
        assert_eq!(q1.len(), dq1.len(), "position/velocity length mismatch");
        State { q1, q2, dq1, dq2 }
    }

    /// Number of links.
    pub fn n(&self) -> usize {
        self.q1.len() + 1
    }

    /// Stacked positions `(q1, q2)`.
    pub fn q(&self) -> DVector<f64> {
        let n = self.n();
        let mut q = DVector::zeros(n);
        q.rows_mut(0, n - 1).copy_from(&self.q1);
        q[n - 1] = self.q2;
        q
    }

    /// Stacked velocities `(dq1, dq2)`.
    pub fn dq(&self) -> DVector<f64> {
        let n = self.n();
        let mut dq = DVector::zeros(n);
        dq.rows_mut(0, n - 1).copy_from(&self.dq1);
        dq[n - 1] = self.dq2;
        dq
    }

    /// Flat vector `(q, dq)` for the integrator.
    pub fn pack(&self) -> DVector<f64> {
        let n = self.n();
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n - 1).copy_from(&self.q1);
        y[n - 1] = self.q2;
        y.rows_mut(n, n - 1).copy_from(&self.dq1);
        y[2 * n - 1] = self.dq2;
        y
    }

    /// Inverse of [`State::pack`].
    pub fn unpack(n: usize, y: &DVector<f64>) -> Self {
        assert_eq!(y.len(), 2 * n, "packed state must have length 2n");
        State {
            q1: y.rows(0, n - 1).into_owned(),
            q2: y[n - 1],
            dq1: y.rows(n, n - 1).into_owned(),
            dq2: y[2 * n - 1],
        }
    }

    pub fn from_q_dq(q: &DVector<f64>, dq: &DVector<f64>) -> Self {
        let n = q.len();
        State {
            q1: q.rows(0, n - 1).into_owned(),
            q2: q[n - 1],
            dq1: dq.rows(0, n - 1).into_owned(),
            dq2: dq[n - 1],
        }
    }

    /// Converts to absolute link angles by accumulating joint angles.
    pub fn to_abs(&self) -> AbsState {
        let n = self.n();
        let mut theta = DVector::zeros(n);
        let mut dtheta = DVector::zeros(n);
        theta[0] = self.q2;
        dtheta[0] = self.dq2;
        for j in 1..n {
            theta[j] = theta[j - 1] + self.q1[j - 1];
            dtheta[j] = dtheta[j - 1] + self.dq1[j - 1];
        }
        AbsState { theta, dtheta }
    }

    /// Converts from absolute link angles by differencing.
    pub fn from_abs(abs: &AbsState) -> Self {
        let n = abs.theta.len();
        let mut q1 = DVector::zeros(n - 1);
        let mut dq1 = DVector::zeros(n - 1);
        for j in 0..n - 1 {
            q1[j] = abs.theta[j + 1] - abs.theta[j];
            dq1[j] = abs.dtheta[j + 1] - abs.dtheta[j];
        }
        State { q1, q2: abs.theta[0], dq1, dq2: abs.dtheta[0] }
    }
}

/// The constant matrix `W` with `theta = W q` for an n-link chain.
pub fn w_matrix(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            w[(j, i)] = 1.0;
        }
        w[(j, n - 1)] = 1.0;
    }
    w
}
