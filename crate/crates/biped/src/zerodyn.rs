//! Reduced dynamics on the constraint manifold.
//!
//! With the joints pinned to the gait targets, the chain keeps a single
//! degree of freedom and the stance angle obeys
//! `ddq2 = alpha1(q2) + alpha2(q2) * dq2^2`.
//! That equation carries an integral of motion
//! `E = 0.5 * Psi(q2) * dq2^2 + P(q2)`,
//! where `Psi` is an integrating factor and `P` a virtual potential; orbits
//! of the reduced system are level sets of `E`, so a gait is a choice of
//! energy level that clears the potential's maximum.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::ode::{DenseStep, Dopri5, OdeOptions, integrate_to};
use crate::state::State;
use crate::vhc::{Gait, regularity_margin};
use nalgebra::DVector;

/// Tabulated integrating factor and virtual potential of the reduced
/// stance dynamics over a stance-angle interval containing 0.
#[derive(Clone, Debug)]
pub struct ZeroDynamics {
    model: Model,
    gait: Gait,
    lo: f64,
    hi: f64,
    /// Dense solution of `[ln Psi, P]` for increasing `q2` in `[0, hi]`.
    fwd: Vec<DenseStep>,
    /// Same, parameterized by `-q2` over `[0, -lo]`.
    bwd: Vec<DenseStep>,
}

/// Coefficients of the reduced acceleration at one stance angle.
#[derive(Clone, Copy, Debug)]
pub struct ReducedCoeffs {
    /// Velocity-independent (gravity) term.
    pub alpha1: f64,
    /// Coefficient of the squared stance rate.
    pub alpha2: f64,
    /// Regularity denominator the terms were divided by.
    pub denominator: f64,
}

impl ZeroDynamics {
    /// Builds the tables on `[lo, hi]`, which must contain the upright
    /// stance angle 0 where the tables are normalized (`Psi = 1`, `P = 0`).
    pub fn new(model: &Model, gait: &Gait, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::validation(
                "orbit.interval",
                format!("empty stance-angle interval [{lo}, {hi}]"),
            ));
        }
        if lo > 0.0 || hi < 0.0 {
            return Err(Error::validation(
                "orbit.interval",
                "interval must contain the upright stance angle 0",
            ));
        }
        regularity_margin(model, gait, lo, hi, 2001)?;
        let mut zd = ZeroDynamics {
            model: model.clone(),
            gait: gait.clone(),
            lo,
            hi,
            fwd: Vec::new(),
            bwd: Vec::new(),
        };
        let opts = OdeOptions { rtol: 1e-12, atol: 1e-14, h_max: 0.01, ..OdeOptions::default() };
        zd.fwd = zd.sweep(hi, 1.0, &opts)?;
        zd.bwd = zd.sweep(-lo, -1.0, &opts)?;
        Ok(zd)
    }

    /// Integrates `d/ds [ln Psi, P] = sign * [-2 alpha2, -Psi alpha1]`
    /// at `q2 = sign * s` from `s = 0` to `s = span`.
    fn sweep(&self, span: f64, sign: f64, opts: &OdeOptions) -> Result<Vec<DenseStep>> {
        let mut steps = Vec::new();
        if span <= 0.0 {
            return Ok(steps);
        }
        let rhs = |s: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            let c = self.coeffs(sign * s);
            dy[0] = sign * (-2.0 * c.alpha2);
            dy[1] = sign * (-y[0].exp() * c.alpha1);
        };
        let mut solver = Dopri5::new(rhs, 0.0, DVector::zeros(2), opts.clone())?;
        while solver.t() < span {
            steps.push(solver.step(Some(span))?);
        }
        Ok(steps)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn gait(&self) -> &Gait {
        &self.gait
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Reduced-acceleration coefficients straight from the full model.
    pub fn coeffs(&self, q2: f64) -> ReducedCoeffs {
        let n = self.model.n();
        let rest = self.gait.manifold_state(q2, 0.0);
        let unit = self.gait.manifold_state(q2, 1.0);
        let mq = self.model.mass_matrix(&rest);
        let m12 = mq.view((0, n - 1), (n - 1, 1));
        let den = (m12.transpose() * self.gait.phi_d(q2))[(0, 0)] + mq[(n - 1, n - 1)];
        let h2_gravity = self.model.bias(&rest)[n - 1];
        let h2_rate = self.model.bias(&unit)[n - 1] - h2_gravity;
        let curvature = (m12.transpose() * self.gait.phi_dd(q2))[(0, 0)];
        ReducedCoeffs {
            alpha1: -h2_gravity / den,
            alpha2: -(curvature + h2_rate) / den,
            denominator: den,
        }
    }

    fn table_eval(&self, q2: f64) -> Result<(f64, f64)> {
        let tiny = 1e-12;
        if q2 < self.lo - tiny || q2 > self.hi + tiny {
            return Err(Error::numerical(
                "zero dynamics",
                format!("stance angle {q2:.6} outside tabulated interval"),
            ));
        }
        let (table, s) = if q2 >= 0.0 { (&self.fwd, q2) } else { (&self.bwd, -q2) };
        if table.is_empty() {
            return Ok((0.0, 0.0));
        }
        let idx = table
            .partition_point(|st| st.t0 + st.h < s)
            .min(table.len() - 1);
        let y = table[idx].eval(s.clamp(table[idx].t0, table[idx].t0 + table[idx].h));
        Ok((y[0], y[1]))
    }

    /// Integrating factor of the reduced dynamics (`Psi(0) = 1`).
    pub fn psi(&self, q2: f64) -> Result<f64> {
        Ok(self.table_eval(q2)?.0.exp())
    }

    /// Virtual potential (`P(0) = 0`).
    pub fn potential(&self, q2: f64) -> Result<f64> {
        Ok(self.table_eval(q2)?.1)
    }

    /// Slope of the virtual potential, computed without differencing.
    pub fn potential_prime(&self, q2: f64) -> Result<f64> {
        Ok(-self.psi(q2)? * self.coeffs(q2).alpha1)
    }

    /// Integral of motion of the reduced dynamics.
    pub fn energy(&self, q2: f64, dq2: f64) -> Result<f64> {
        let (ln_psi, p) = self.table_eval(q2)?;
        Ok(0.5 * ln_psi.exp() * dq2 * dq2 + p)
    }

    /// Interior extrema of the virtual potential as `(q2, P)` pairs,
    /// located by bisecting sign changes of the analytic slope.
    pub fn potential_extrema(&self, n_grid: usize) -> Result<Vec<(f64, f64)>> {
        assert!(n_grid >= 3);
        let mut out = Vec::new();
        let grid: Vec<f64> = (0..n_grid)
            .map(|i| self.lo + (self.hi - self.lo) * (i as f64) / ((n_grid - 1) as f64))
            .collect();
        let mut prev = self.potential_prime(grid[0])?;
        for w in grid.windows(2) {
            let next = self.potential_prime(w[1])?;
            if prev == 0.0 {
                out.push((w[0], self.potential(w[0])?));
            } else if prev * next < 0.0 {
                let (mut a, mut b, mut fa) = (w[0], w[1], prev);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if b - a < 1e-14 {
                        break;
                    }
                    let fm = self.potential_prime(mid)?;
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                }
                let root = 0.5 * (a + b);
                out.push((root, self.potential(root)?));
            }
            prev = next;
        }
        Ok(out)
    }

    /// Largest virtual-potential value on the interval (interior extrema
    /// and endpoints considered).
    pub fn potential_max(&self) -> Result<(f64, f64)> {
        let mut best = (self.lo, self.potential(self.lo)?);
        let end = (self.hi, self.potential(self.hi)?);
        if end.1 > best.1 {
            best = end;
        }
        for (q2, p) in self.potential_extrema(801)? {
            if p > best.1 {
                best = (q2, p);
            }
        }
        Ok(best)
    }
}

/// A periodic orbit of the reduced dynamics, fixed by its energy level.
#[derive(Clone, Debug)]
pub struct Orbit {
    zd: ZeroDynamics,
    c_star: f64,
    anchor: (f64, f64),
    potential_max: f64,
}

impl Orbit {
    /// Fixes the energy level through an anchor point, rejecting anchors
    /// whose level fails to clear the virtual potential anywhere on the
    /// tabulated interval (the stance rate would reverse there).
    pub fn new(zd: ZeroDynamics, anchor_q2: f64, anchor_dq2: f64) -> Result<Self> {
        if !(anchor_dq2 < 0.0) {
            return Err(Error::validation(
                "orbit.anchor",
                "the gait advances with a negative stance rate",
            ));
        }
        let c_star = zd.energy(anchor_q2, anchor_dq2)?;
        let (at, p_max) = zd.potential_max()?;
        if c_star <= p_max {
            return Err(Error::validation(
                "orbit.anchor",
                format!(
                    "energy level {c_star:.6} does not clear the virtual potential \
                     ({p_max:.6} at q2 = {at:.4}); the stance rotation would stall"
                ),
            ));
        }
        Ok(Orbit { zd, c_star, anchor: (anchor_q2, anchor_dq2), potential_max: p_max })
    }

    pub fn zero_dynamics(&self) -> &ZeroDynamics {
        &self.zd
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    pub fn anchor(&self) -> (f64, f64) {
        self.anchor
    }

    pub fn potential_max(&self) -> f64 {
        self.potential_max
    }

    /// Stance rate on the orbit (negative branch).
    pub fn velocity(&self, q2: f64) -> Result<f64> {
        let (ln_psi, p) = self.zd.table_eval(q2)?;
        let gap = self.c_star - p;
        if gap <= 0.0 {
            return Err(Error::numerical(
                "orbit",
                format!("orbit does not reach stance angle {q2:.6}"),
            ));
        }
        Ok(-(2.0 * gap / ln_psi.exp()).sqrt())
    }

    /// Full chain state on the orbit at the given stance angle.
    pub fn state(&self, q2: f64) -> Result<State> {
        Ok(self.zd.gait().manifold_state(q2, self.velocity(q2)?))
    }

    /// Time for the stance angle to fall from `q2_from` to `q2_to`.
    pub fn swing_duration(&self, q2_from: f64, q2_to: f64) -> Result<f64> {
        if !(q2_to < q2_from) {
            return Err(Error::validation(
                "orbit",
                "swing duration needs a decreasing stance-angle span",
            ));
        }
        let span = q2_from - q2_to;
        let rhs = |s: f64, _y: &DVector<f64>, dy: &mut DVector<f64>| {
            let v = self.velocity(q2_from - s).unwrap_or(f64::NAN);
            dy[0] = 1.0 / v.abs();
        };
        let opts = OdeOptions { rtol: 1e-12, atol: 1e-14, h_max: 0.01, ..OdeOptions::default() };
        let y = integrate_to(rhs, 0.0, &DVector::zeros(1), span, &opts)?;
        Ok(y[0])
    }
}
