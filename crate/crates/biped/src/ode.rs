//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 5(4)).
//!
//! The integrator exposes single accepted steps together with a quartic
//! dense-output interpolant, which callers use for event bracketing and for
//! sampling trajectories at fixed output times.  A clamped variant lands
//! exactly on a requested end time so event states can be recomputed at full
//! integration accuracy instead of interpolant accuracy.

use crate::error::{Error, Result};
use nalgebra::DVector;

// Node fractions.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

// Stage coefficients.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
// Fifth-order solution weights (also the last stage row: first-same-as-last).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights (error estimator).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Tolerances and budgets for one integration.
#[derive(Clone, Debug)]
pub struct OdeOptions {
    /// Relative tolerance on the embedded error estimate.
    pub rtol: f64,
    /// Absolute tolerance on the embedded error estimate.
    pub atol: f64,
    /// Upper bound on the step size.
    pub h_max: f64,
    /// Optional initial step size; chosen automatically when absent.
    pub h_init: Option<f64>,
    /// Maximum number of accepted steps before giving up.
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, h_max: 0.1, h_init: None, max_steps: 200_000 }
    }
}

/// One accepted step with its dense-output interpolant.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r1: DVector<f64>,
    r2: DVector<f64>,
    r3: DVector<f64>,
    r4: DVector<f64>,
    r5: DVector<f64>,
}

impl DenseStep {
    /// End time of the step.
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Evaluates the interpolant at `t`, which should lie in `[t0, t1]`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        // r1 + s*(r2 + s1*(r3 + s*(r4 + s1*r5)))
        let mut acc = &self.r4 + &self.r5 * s1;
        acc = &self.r3 + acc * s;
        acc = &self.r2 + acc * s1;
        &self.r1 + acc * s
    }
}

/// Dormand-Prince 5(4) stepper with first-same-as-last stage reuse.
pub struct Dopri5<F> {
    f: F,
    opts: OdeOptions,
    t: f64,
    y: DVector<f64>,
    k1: DVector<f64>,
    h: f64,
    accepted: usize,
    /// Total right-hand-side evaluations (diagnostic).
    pub n_evals: usize,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    pub fn new(mut f: F, t0: f64, y0: DVector<f64>, opts: OdeOptions) -> Result<Self> {
        let mut k1 = DVector::zeros(y0.len());
        f(t0, &y0, &mut k1);
        if !k1.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("ode", "non-finite derivative at initial state"));
        }
        let h = opts.h_init.unwrap_or(0.0);
        let mut s = Dopri5 { f, opts, t: t0, y: y0, k1, h, accepted: 0, n_evals: 1 };
        if s.h <= 0.0 {
            s.h = s.initial_step();
        }
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    /// Standard starting-step heuristic based on the initial derivative and a
    /// trial Euler step.
    fn initial_step(&mut self) -> f64 {
        let n = self.y.len();
        let sc = |y: &DVector<f64>, i: usize| self.opts.atol + self.opts.rtol * y[i].abs();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            let s = sc(&self.y, i);
            d0 += (self.y[i] / s).powi(2);
            d1 += (self.k1[i] / s).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.opts.h_max);
        let y1 = &self.y + &self.k1 * h0;
        let mut f1 = DVector::zeros(n);
        (self.f)(self.t + h0, &y1, &mut f1);
        self.n_evals += 1;
        let mut d2 = 0.0;
        for i in 0..n {
            let s = sc(&self.y, i);
            d2 += ((f1[i] - self.k1[i]) / s).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.opts.h_max)
    }

    /// Takes one accepted step, optionally clamped so that `t1 <= t_stop`.
    ///
    /// Returns the dense-output interpolant covering the accepted interval.
    pub fn step(&mut self, t_stop: Option<f64>) -> Result<DenseStep> {
        let n = self.y.len();
        let mut k2 = DVector::zeros(n);
        let mut k3 = DVector::zeros(n);
        let mut k4 = DVector::zeros(n);
        let mut k5 = DVector::zeros(n);
        let mut k6 = DVector::zeros(n);
        let mut k7 = DVector::zeros(n);
        let mut rejected_in_a_row = 0usize;

        loop {
            if self.accepted >= self.opts.max_steps {
                return Err(Error::numerical(
                    "ode",
                    format!("step budget ({}) exhausted at t = {:.6e}", self.opts.max_steps, self.t),
                ));
            }
            let mut h = self.h.min(self.opts.h_max);
            if let Some(ts) = t_stop {
                let remaining = ts - self.t;
                if remaining <= 0.0 {
                    return Err(Error::numerical("ode", "step requested past the stop time"));
                }
                // Stretch slightly instead of leaving a sliver step behind.
                if h >= remaining * 0.999 {
                    h = remaining;
                }
            }
            if !(h > 0.0) || self.t + h == self.t {
                return Err(Error::numerical(
                    "ode",
                    format!("step size underflow (h = {h:.3e} at t = {:.6e})", self.t),
                ));
            }

            let t = self.t;
            let y = &self.y;
            let k1 = &self.k1;

            let y2 = y + k1 * (A21 * h);
            (self.f)(t + C2 * h, &y2, &mut k2);
            let y3 = y + k1 * (A31 * h) + &k2 * (A32 * h);
            (self.f)(t + C3 * h, &y3, &mut k3);
            let y4 = y + k1 * (A41 * h) + &k2 * (A42 * h) + &k3 * (A43 * h);
            (self.f)(t + C4 * h, &y4, &mut k4);
            let y5 = y + k1 * (A51 * h) + &k2 * (A52 * h) + &k3 * (A53 * h) + &k4 * (A54 * h);
            (self.f)(t + C5 * h, &y5, &mut k5);
            let y6 = y
                + k1 * (A61 * h)
                + &k2 * (A62 * h)
                + &k3 * (A63 * h)
                + &k4 * (A64 * h)
                + &k5 * (A65 * h);
            (self.f)(t + h, &y6, &mut k6);
            let y1 =
                y + k1 * (B1 * h) + &k3 * (B3 * h) + &k4 * (B4 * h) + &k5 * (B5 * h) + &k6 * (B6 * h);
            (self.f)(t + h, &y1, &mut k7);
            self.n_evals += 5;

            let finite = y1.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
            let mut err = f64::INFINITY;
            if finite {
                let mut acc = 0.0;
                for i in 0..n {
                    let e = h
                        * (E1 * k1[i]
                            + E3 * k3[i]
                            + E4 * k4[i]
                            + E5 * k5[i]
                            + E6 * k6[i]
                            + E7 * k7[i]);
                    let scale = self.opts.atol + self.opts.rtol * y[i].abs().max(y1[i].abs());
                    acc += (e / scale).powi(2);
                }
                err = (acc / n as f64).sqrt();
            }

            if err <= 1.0 {
                // Accepted: build the interpolant, advance, and propose the next h.
                let ydiff = &y1 - y;
                let bspl = k1 * h - &ydiff;
                let r4 = &ydiff - &k7 * h - &bspl;
                let r5 = (k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
                let dense = DenseStep {
                    t0: t,
                    h,
                    r1: y.clone(),
                    r2: ydiff,
                    r3: bspl,
                    r4,
                    r5,
                };
                self.t = t + h;
                self.y = y1;
                std::mem::swap(&mut self.k1, &mut k7);
                self.accepted += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
                let fac = if rejected_in_a_row > 0 { fac.min(1.0) } else { fac };
                self.h = (h * fac).min(self.opts.h_max);
                return Ok(dense);
            }

            // Rejected: shrink and retry.
            rejected_in_a_row += 1;
            if rejected_in_a_row > 60 {
                return Err(Error::numerical(
                    "ode",
                    format!("60 consecutive step rejections at t = {:.6e}", self.t),
                ));
            }
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 1.0) } else { 0.1 };
            self.h = h * fac;
        }
    }

    /// Integrates until exactly `t_end` (which must exceed the current time).
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(Some(t_end))?;
        }
        Ok(())
    }
}

/// Integrates `f` from `(t0, y0)` to exactly `t1` and returns the final state.
pub fn integrate_to<F>(f: F, t0: f64, y0: &DVector<f64>, t1: f64, opts: &OdeOptions) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    if t1 == t0 {
        return Ok(y0.clone());
    }
    if t1 < t0 {
        return Err(Error::numerical("ode", "integrate_to requires t1 >= t0"));
    }
    let mut stepper = Dopri5::new(f, t0, y0.clone(), opts.clone())?;
    stepper.advance_to(t1)?;
    Ok(stepper.y.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(rtol: f64, atol: f64) -> OdeOptions {
        OdeOptions { rtol, atol, h_max: 1.0, h_init: None, max_steps: 1_000_000 }
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = -y[0];
        let y = integrate_to(f, 0.0, &DVector::from_vec(vec![1.0]), 2.0, &opts(1e-12, 1e-14)).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_conserves_amplitude() {
        let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let y = integrate_to(f, 0.0, &y0, 20.0 * std::f64::consts::PI, &opts(1e-11, 1e-13)).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8, "y0 = {}", y[0]);
        assert!(y[1].abs() < 1e-8);
    }

    #[test]
    fn dense_output_tracks_solution_inside_steps() {
        // y' = cos(t), compare interpolant with sin(t) at many interior points.
        let f = |t: f64, _y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = t.cos();
        let mut s = Dopri5::new(f, 0.0, DVector::from_vec(vec![0.0]), opts(1e-10, 1e-12)).unwrap();
        let mut worst: f64 = 0.0;
        while s.t() < 10.0 {
            let d = s.step(Some(10.0)).unwrap();
            for j in 0..=8 {
                let t = d.t0 + d.h * (j as f64) / 8.0;
                let y = d.eval(t);
                worst = worst.max((y[0] - t.sin()).abs());
            }
        }
        assert!(worst < 1e-9, "worst dense-output error {worst:.3e}");
    }

    #[test]
    fn dense_output_matches_endpoints_exactly() {
        let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = y[1];
            dy[1] = -y[0] - 0.1 * y[1];
        };
        let mut s = Dopri5::new(f, 0.0, DVector::from_vec(vec![1.0, 0.5]), opts(1e-9, 1e-11)).unwrap();
        let y_before = s.y().clone();
        let d = s.step(None).unwrap();
        let at0 = d.eval(d.t0);
        let at1 = d.eval(d.t1());
        assert!((&at0 - &y_before).norm() < 1e-14);
        assert!((&at1 - s.y()).norm() < 1e-12);
    }

    #[test]
    fn fifth_order_convergence_on_forced_problem() {
        // Fixed-step runs via h_init + h_max on y' = y*cos(t): halving the step
        // must shrink the endpoint error by roughly 2^5.
        let exact = |t: f64| (t.sin()).exp();
        let run = |h: f64| -> f64 {
            let f = |t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = y[0] * t.cos();
            let o = OdeOptions { rtol: 1e30, atol: 1e30, h_max: h, h_init: Some(h), max_steps: 100_000 };
            let y = integrate_to(f, 0.0, &DVector::from_vec(vec![1.0]), 2.0, &o).unwrap();
            (y[0] - exact(2.0)).abs()
        };
        let e1 = run(0.05);
        let e2 = run(0.025);
        let ratio = e1 / e2;
        assert!(ratio > 20.0 && ratio < 50.0, "order ratio {ratio:.1}");
    }

    #[test]
    fn advance_to_lands_exactly_on_target() {
        let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = -0.5 * y[0];
        let mut s = Dopri5::new(f, 0.0, DVector::from_vec(vec![2.0]), opts(1e-10, 1e-12)).unwrap();
        s.advance_to(1.2345).unwrap();
        assert_eq!(s.t(), 1.2345);
    }
}
