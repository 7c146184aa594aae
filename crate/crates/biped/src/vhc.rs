//! Virtual holonomic constraints: the gait is encoded by tying every link
//! angle to the stance-shank angle.
//!
//! Each non-stance link follows
//! `theta_j(q2) = a_j q2 + k_j pi + G_j sin(H_j q2)`,
//! so the joint-angle targets are `Phi_c(q2) = theta_{c+1}(q2) - theta_c(q2)`
//! and enforcing `q1 = Phi(q2)` leaves the one-degree-of-freedom stance
//! rotation free.  Gait design reduces to choosing the family parameters so
//! the step ends in a mirrored double support reached with zero swing-foot
//! velocity, which makes the ground impact lossless and the walk
//! energy-conserving.

use crate::angles::wrap_to_pi;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::BipedParams;
use crate::state::State;
use nalgebra::{DMatrix, DVector};

/// Parameters of the constraint family for links 2..n (index 0 of each
/// vector belongs to link 2, the stance thigh).
#[derive(Clone, Debug, PartialEq)]
pub struct VhcParams {
    /// Linear slopes `a_j`.
    pub a: Vec<f64>,
    /// Half-turn offsets `k_j` (integer multiples of pi).
    pub k: Vec<i32>,
    /// Sinusoid amplitudes `G_j`.
    pub amp: Vec<f64>,
    /// Sinusoid frequencies `H_j` (held fixed by the solver).
    pub freq: Vec<f64>,
    /// Stance angle magnitude at which the step begins and (mirrored) ends.
    pub theta1_i: f64,
}

impl VhcParams {
    /// Published gait for the reference five-link chain (amplitudes rounded
    /// to four decimals).
    pub fn five_link_nominal() -> Self {
        VhcParams {
            a: vec![0.55, 0.0, -0.55, -1.6833],
            k: vec![0, 0, 1, 1],
            amp: vec![0.2717, -0.4, 0.1342, -0.3795],
            freq: vec![8.0, 8.0, 8.0, 10.0],
            theta1_i: std::f64::consts::FRAC_PI_8,
        }
    }

    pub fn n(&self) -> usize {
        self.a.len() + 1
    }

    fn validate(&self) -> Result<()> {
        let m = self.a.len();
        for (name, len) in [("k", self.k.len()), ("G", self.amp.len()), ("H", self.freq.len())] {
            if len != m {
                return Err(Error::validation(
                    format!("vhc.{name}"),
                    format!("expected {m} entries to match vhc.a, got {len}"),
                ));
            }
        }
        if self.n() < 3 || self.n() % 2 == 0 {
            return Err(Error::validation("vhc.a", "parameter count must describe an odd chain"));
        }
        if !(self.theta1_i > 0.0) {
            return Err(Error::validation("vhc.theta1_i", "step amplitude must be positive"));
        }
        Ok(())
    }

    /// Absolute angle of link `j` (0-based) on the constraint.
    pub fn theta(&self, j: usize, q2: f64) -> f64 {
        if j == 0 {
            q2
        } else {
            let i = j - 1;
            self.a[i] * q2 + f64::from(self.k[i]) * std::f64::consts::PI
                + self.amp[i] * (self.freq[i] * q2).sin()
        }
    }

    /// First derivative of [`VhcParams::theta`] with respect to `q2`.
    pub fn theta_d1(&self, j: usize, q2: f64) -> f64 {
        if j == 0 {
            1.0
        } else {
            let i = j - 1;
            self.a[i] + self.amp[i] * self.freq[i] * (self.freq[i] * q2).cos()
        }
    }

    /// Second derivative of [`VhcParams::theta`] with respect to `q2`.
    pub fn theta_d2(&self, j: usize, q2: f64) -> f64 {
        if j == 0 {
            0.0
        } else {
            let i = j - 1;
            -self.amp[i] * self.freq[i] * self.freq[i] * (self.freq[i] * q2).sin()
        }
    }

    /// All link angles on the constraint.
    pub fn theta_all(&self, q2: f64) -> DVector<f64> {
        DVector::from_fn(self.n(), |j, _| self.theta(j, q2))
    }
}

/// One component of the joint-space constraint: an affine part plus a short
/// sum of sinusoids (same-frequency terms merged).
#[derive(Clone, Debug, PartialEq)]
pub struct PhiRow {
    pub slope: f64,
    pub offset: f64,
    /// `(amplitude, frequency)` pairs, frequency-sorted.
    pub harmonics: Vec<(f64, f64)>,
}

impl PhiRow {
    pub fn value(&self, q2: f64) -> f64 {
        self.slope * q2
            + self.offset
            + self.harmonics.iter().map(|(g, h)| g * (h * q2).sin()).sum::<f64>()
    }

    pub fn d1(&self, q2: f64) -> f64 {
        self.slope + self.harmonics.iter().map(|(g, h)| g * h * (h * q2).cos()).sum::<f64>()
    }

    pub fn d2(&self, q2: f64) -> f64 {
        -self.harmonics.iter().map(|(g, h)| g * h * h * (h * q2).sin()).sum::<f64>()
    }
}

/// A validated constraint set with its joint-space representation.
#[derive(Clone, Debug)]
pub struct Gait {
    vhc: VhcParams,
    rows: Vec<PhiRow>,
}

impl Gait {
    pub fn new(vhc: VhcParams) -> Result<Self> {
        vhc.validate()?;
        let n = vhc.n();
        let mut rows = Vec::with_capacity(n - 1);
        for c in 0..n - 1 {
            // theta_{c+1} - theta_c with link 0 the identity in q2.
            let (a_hi, k_hi, g_hi, h_hi) =
                (vhc.a[c], vhc.k[c], vhc.amp[c], vhc.freq[c]);
            let (a_lo, k_lo, g_lo, h_lo) = if c == 0 {
                (1.0, 0, 0.0, 1.0)
            } else {
                (vhc.a[c - 1], vhc.k[c - 1], vhc.amp[c - 1], vhc.freq[c - 1])
            };
            let mut harmonics: Vec<(f64, f64)> = Vec::new();
            for (g, h) in [(g_hi, h_hi), (-g_lo, h_lo)] {
                if g == 0.0 {
                    continue;
                }
                if let Some(entry) = harmonics.iter_mut().find(|(_, hh)| *hh == h) {
                    entry.0 += g;
                } else {
                    harmonics.push((g, h));
                }
            }
            harmonics.retain(|(g, _)| *g != 0.0);
            harmonics.sort_by(|x, y| x.1.partial_cmp(&y.1).expect("finite frequencies"));
            rows.push(PhiRow {
                slope: a_hi - a_lo,
                offset: f64::from(k_hi - k_lo) * std::f64::consts::PI,
                harmonics,
            });
        }
        Ok(Gait { vhc, rows })
    }

    pub fn vhc(&self) -> &VhcParams {
        &self.vhc
    }

    pub fn n(&self) -> usize {
        self.vhc.n()
    }

    pub fn rows(&self) -> &[PhiRow] {
        &self.rows
    }

    /// Joint-angle targets.
    pub fn phi(&self, q2: f64) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |c, _| self.rows[c].value(q2))
    }

    /// First derivative of the targets.
    pub fn phi_d(&self, q2: f64) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |c, _| self.rows[c].d1(q2))
    }

    /// Second derivative of the targets.
    pub fn phi_dd(&self, q2: f64) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |c, _| self.rows[c].d2(q2))
    }

    /// State on the constraint manifold at the given stance angle and rate.
    pub fn manifold_state(&self, q2: f64, dq2: f64) -> State {
        State::new(self.phi(q2), q2, self.phi_d(q2) * dq2, dq2)
    }

    /// Transverse coordinates: `rho = q1 - Phi(q2)` (wrapped) and its rate.
    pub fn transverse_error(&self, state: &State) -> (DVector<f64>, DVector<f64>) {
        let rho = (&state.q1 - self.phi(state.q2)).map(wrap_to_pi);
        let rho_dot = &state.dq1 - self.phi_d(state.q2) * state.dq2;
        (rho, rho_dot)
    }
}

/// Ordered gait-design residuals, evaluated at the step boundary angle.
///
/// For a chain with `m = (n-1)/2` leg pairs the entries are:
/// * `m` mirrored-posture conditions `theta_{n+1-j} + theta_j - pi`,
/// * the torso-vertical condition `theta_torso`,
/// * `m` rate-matching conditions `theta'_{n+1-j} - theta'_j`,
/// * the flat-touchdown condition
///   `sum_j ell_j sin(theta_j) theta'_j` over the stance leg,
///
/// all at `q2 = theta1_i`.  Zero residuals make the touchdown state mirror
/// the step's initial state with the swing foot arriving at zero velocity.
pub fn constraint_residuals(params: &BipedParams, vhc: &VhcParams) -> DVector<f64> {
    let n = vhc.n();
    assert_eq!(n, params.n(), "gait and chain sizes must agree");
    let m = (n - 1) / 2;
    let t1 = vhc.theta1_i;
    let pi = std::f64::consts::PI;
    let mut r = DVector::zeros(2 * m + 2);
    let mut idx = 0;
    for j in 0..m {
        r[idx] = vhc.theta(n - 1 - j, t1) + vhc.theta(j, t1) - pi;
        idx += 1;
    }
    r[idx] = vhc.theta(m, t1); // torso upright at the boundary
    idx += 1;
    for j in 0..m {
        r[idx] = vhc.theta_d1(n - 1 - j, t1) - vhc.theta_d1(j, t1);
        idx += 1;
    }
    let mut flat = 0.0;
    for j in 0..m {
        flat += params.ell()[j] * vhc.theta(j, t1).sin() * vhc.theta_d1(j, t1);
    }
    r[idx] = flat;
    r
}

/// A parameter freed for the gait solver; link indices are 0-based chain
/// indices (so `Slope(4)` is the slope of the last link of a five-link
/// chain).  Offsets `k` and frequencies `H` stay pinned: they set the
/// topology of the family rather than its fine shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeParam {
    Slope(usize),
    Amplitude(usize),
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once the residual infinity norm falls below this.
    pub residual_tol: f64,
    /// Largest residual infinity norm accepted as a usable gait.
    pub feasible_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iters: 200, residual_tol: 1e-12, feasible_tol: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub residual: f64,
}

fn free_index(vhc: &VhcParams, p: FreeParam) -> Result<usize> {
    let (link, name) = match p {
        FreeParam::Slope(j) => (j, "a"),
        FreeParam::Amplitude(j) => (j, "G"),
    };
    if link == 0 || link >= vhc.n() {
        return Err(Error::validation(
            format!("vhc.solve_free.{name}"),
            format!("link index {link} out of range 1..{}", vhc.n() - 1),
        ));
    }
    Ok(link - 1)
}

fn get_free(vhc: &VhcParams, p: FreeParam) -> Result<f64> {
    let i = free_index(vhc, p)?;
    Ok(match p {
        FreeParam::Slope(_) => vhc.a[i],
        FreeParam::Amplitude(_) => vhc.amp[i],
    })
}

fn set_free(vhc: &mut VhcParams, p: FreeParam, v: f64) {
    let i = free_index(vhc, p).expect("validated index");
    match p {
        FreeParam::Slope(_) => vhc.a[i] = v,
        FreeParam::Amplitude(_) => vhc.amp[i] = v,
    }
}

/// Solves the gait-design residuals for the freed parameters by damped
/// least squares, keeping everything else pinned.
///
/// Converges to the least-squares stationary point when the pinned values
/// make the system slightly inconsistent; fails when no nearby parameters
/// bring the residuals under `feasible_tol`.
pub fn solve_parameters(
    params: &BipedParams,
    seed: &VhcParams,
    free: &[FreeParam],
    opts: &SolveOptions,
) -> Result<(VhcParams, SolveReport)> {
    seed.validate()?;
    let mut vhc = seed.clone();
    let mut p = DVector::zeros(free.len());
    for (i, f) in free.iter().enumerate() {
        p[i] = get_free(&vhc, *f)?;
    }
    let eval = |vec: &DVector<f64>, base: &VhcParams| -> DVector<f64> {
        let mut v = base.clone();
        for (i, f) in free.iter().enumerate() {
            set_free(&mut v, *f, vec[i]);
        }
        constraint_residuals(params, &v)
    };

    let mut r = eval(&p, &vhc);
    let initial = r.amax();
    let mut lambda = 1e-3;
    let mut iterations = 0;

    if !free.is_empty() {
        for _ in 0..opts.max_iters {
            if r.amax() < opts.residual_tol {
                break;
            }
            iterations += 1;
            // Central-difference Jacobian.
            let mut jac = DMatrix::zeros(r.len(), free.len());
            for i in 0..free.len() {
                let h = 1e-7 * p[i].abs().max(1.0);
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[i] += h;
                pm[i] -= h;
                let col = (eval(&pp, &vhc) - eval(&pm, &vhc)) / (2.0 * h);
                jac.set_column(i, &col);
            }
            let a = jac.transpose() * &jac;
            let grad = jac.transpose() * &r;
            let mut accepted = false;
            for _ in 0..40 {
                let mut damped = a.clone();
                for i in 0..free.len() {
                    damped[(i, i)] += lambda * a[(i, i)].max(1e-12);
                }
                let Some(step) = damped.lu().solve(&(-&grad)) else {
                    lambda *= 10.0;
                    continue;
                };
                let trial = &p + &step;
                let r_trial = eval(&trial, &vhc);
                if r_trial.norm() < r.norm() {
                    p = trial;
                    r = r_trial;
                    lambda = (lambda / 3.0).max(1e-14);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e14 {
                    break;
                }
            }
            if !accepted {
                break; // stationary: no descent direction left
            }
        }
    }

    for (i, f) in free.iter().enumerate() {
        set_free(&mut vhc, *f, p[i]);
    }
    let residual = r.amax();
    if residual > opts.feasible_tol {
        return Err(Error::numerical(
            "gait solve",
            format!(
                "no feasible gait parameters from this initial guess \
                 (residual {residual:.3e} after {iterations} iterations)"
            ),
        ));
    }
    Ok((vhc, SolveReport { iterations, initial_residual: initial, residual }))
}

/// Minimum of the constraint-regularity denominator over a stance-angle
/// interval, with its location.  The denominator couples the unactuated row
/// of the mass matrix to the constraint slope; a sign change means the
/// reduced dynamics degenerate somewhere in the interval.
pub fn regularity_margin(
    model: &Model,
    gait: &Gait,
    lo: f64,
    hi: f64,
    n_grid: usize,
) -> Result<(f64, f64)> {
    assert!(n_grid >= 2 && hi > lo);
    let n = model.n();
    let mut min_abs = f64::INFINITY;
    let mut argmin = lo;
    let mut first_sign = 0.0;
    for i in 0..n_grid {
        let q2 = lo + (hi - lo) * (i as f64) / ((n_grid - 1) as f64);
        let s = gait.manifold_state(q2, 0.0);
        let mq = model.mass_matrix(&s);
        let m12 = mq.view((0, n - 1), (n - 1, 1));
        let den = (m12.transpose() * gait.phi_d(q2))[(0, 0)] + mq[(n - 1, n - 1)];
        if i == 0 {
            first_sign = den.signum();
        }
        if den == 0.0 || den.signum() != first_sign {
            return Err(Error::numerical(
                "regularity",
                format!("constraint regularity lost near q2 = {q2:.6}"),
            ));
        }
        if den.abs() < min_abs {
            min_abs = den.abs();
            argmin = q2;
        }
    }
    Ok((min_abs, argmin))
}
