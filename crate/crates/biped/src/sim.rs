//! Event-driven simulation of complete walking steps.
//!
//! A step runs as: impulse on the section, swing flow under the tracking
//! controller, touchdown, ground impact, leg relabelling, then flow back to
//! the section.  Touchdown needs two detectors because a well-designed gait
//! arrives at the ground tangentially: steep arrivals are localized as sign
//! changes of the foot height, grazing ones as the zero of its vertical
//! velocity, accepted when the foot is within a small contact band of the
//! ground.  The detectors arm only deep into the swing so the mid-swing
//! moment where both legs align (and the foot skims the ground with purely
//! horizontal velocity) is not mistaken for contact.

use crate::angles::wrap_to_pi;
use crate::control::{ImpulseMode, TrackingGains, apply_impulse, constraint_tracking};
use crate::error::{Error, Result, StepFailure};
use crate::hybrid::{guard_values, impact_map, relabel};
use crate::model::Model;
use crate::ode::{DenseStep, Dopri5, OdeOptions, integrate_to};
use crate::state::{State, w_matrix};
use crate::vhc::Gait;
use nalgebra::{DMatrix, DVector, Vector2};
use std::fmt::Write as _;

/// Tunables of the step simulator.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    /// Accepted integrator steps allowed per flow phase.
    pub max_steps_per_phase: usize,
    /// Trajectory-log sampling interval.
    pub sample_dt: f64,
    /// Foot-height band within which a vertical-velocity zero counts as a
    /// tangential touchdown.
    pub graze_band: f64,
    /// Approach speed below which a height crossing is re-localized at the
    /// following vertical-velocity zero.
    pub graze_vel: f64,
    /// Stance angle below which touchdown detection arms; `None` derives
    /// half the step amplitude from the gait.
    pub touchdown_arm: Option<f64>,
    /// Allowed stance-angle excursion beyond the step amplitude.
    pub range_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.05,
            max_steps_per_phase: 200_000,
            sample_dt: 0.005,
            graze_band: 1e-5,
            graze_vel: 1.5e-2,
            touchdown_arm: None,
            range_margin: 0.1,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("h_max", self.h_max),
            ("sample_dt", self.sample_dt),
            ("graze_band", self.graze_band),
            ("graze_vel", self.graze_vel),
            ("range_margin", self.range_margin),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    format!("sim.{name}"),
                    "must be positive and finite",
                ));
            }
        }
        if self.max_steps_per_phase == 0 {
            return Err(Error::validation("sim.max_steps_per_phase", "must be nonzero"));
        }
        Ok(())
    }
}

/// One sampled instant of a run.
#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    pub theta: DVector<f64>,
    pub q2: f64,
    pub q1: DVector<f64>,
    pub dq2: f64,
    pub dq1: DVector<f64>,
    pub rho: DVector<f64>,
    pub energy: f64,
}

/// Uniformly sampled trajectory with extra rows at hybrid events
/// (discontinuities appear as consecutive rows sharing a timestamp).
#[derive(Clone, Debug)]
pub struct TrajectoryLog {
    pub sample_dt: f64,
    pub samples: Vec<TrajectorySample>,
    next_t: f64,
}

impl TrajectoryLog {
    pub fn new(sample_dt: f64) -> Self {
        TrajectoryLog { sample_dt, samples: Vec::new(), next_t: 0.0 }
    }

    fn push(&mut self, walker: &Walker, t: f64, state: &State) {
        let abs = state.to_abs();
        let (rho, _) = walker.gait.transverse_error(state);
        self.samples.push(TrajectorySample {
            t,
            theta: abs.theta,
            q2: state.q2,
            q1: state.q1.clone(),
            dq2: state.dq2,
            dq1: state.dq1.clone(),
            rho,
            energy: walker.model.total_energy(state),
        });
    }

    /// Emits the uniform samples a dense step covers.
    fn sample_step(&mut self, walker: &Walker, step: &DenseStep, t_stop: f64) {
        while self.next_t <= t_stop + 1e-15 {
            if self.next_t >= step.t0 - 1e-15 {
                let y = step.eval(self.next_t.clamp(step.t0, t_stop));
                let s = State::unpack(walker.model.n(), &y);
                let t = self.next_t;
                self.push(walker, t, &s);
            }
            self.next_t += self.sample_dt;
        }
    }

    /// Records an exact event instant.
    fn event_point(&mut self, walker: &Walker, t: f64, state: &State) {
        self.push(walker, t, state);
        self.next_t = self.next_t.max((t / self.sample_dt).floor() * self.sample_dt
            + self.sample_dt);
    }

    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.theta.len());
        let mut out = String::from("t");
        for j in 1..=n {
            let _ = write!(out, ",theta{j}");
        }
        out.push_str(",q2");
        for j in 1..n {
            let _ = write!(out, ",q1_{j}");
        }
        out.push_str(",dq2");
        for j in 1..n {
            let _ = write!(out, ",dq1_{j}");
        }
        for j in 1..n {
            let _ = write!(out, ",rho{j}");
        }
        out.push_str(",E\n");
        for s in &self.samples {
            let _ = write!(out, "{:.12e}", s.t);
            for v in s.theta.iter() {
                let _ = write!(out, ",{v:.12e}");
            }
            let _ = write!(out, ",{:.12e}", s.q2);
            for v in s.q1.iter() {
                let _ = write!(out, ",{v:.12e}");
            }
            let _ = write!(out, ",{:.12e}", s.dq2);
            for v in s.dq1.iter() {
                let _ = write!(out, ",{v:.12e}");
            }
            for v in s.rho.iter() {
                let _ = write!(out, ",{v:.12e}");
            }
            let _ = writeln!(out, ",{:.12e}", s.energy);
        }
        out
    }
}

/// Summary of one executed step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub k: usize,
    /// Section state before the impulse.
    pub section_state: DVector<f64>,
    pub impulse: DVector<f64>,
    /// Distance to the reference section state (NaN without a reference).
    pub error_norm: f64,
    pub duration: f64,
    pub touchdown_state: State,
    /// Swing-foot velocity at touchdown.
    pub touchdown_rate: Vector2<f64>,
    pub ground_impulse: Vector2<f64>,
    pub kinetic_before: f64,
    pub kinetic_after: f64,
    pub energy_start: f64,
    pub energy_end: f64,
}

/// Renders step records as CSV.
pub fn step_records_csv(records: &[StepRecord]) -> String {
    let m = records.first().map_or(0, |r| r.impulse.len());
    let mut out = String::from("k,dur,norm_e");
    for j in 1..=m {
        let _ = write!(out, ",I_{j}");
    }
    out.push_str(",Ig_x,Ig_y,dT_impact\n");
    for r in records {
        let _ = write!(out, "{},{:.12e},{:.12e}", r.k, r.duration, r.error_norm);
        for v in r.impulse.iter() {
            let _ = write!(out, ",{v:.12e}");
        }
        let _ = writeln!(
            out,
            ",{:.12e},{:.12e},{:.12e}",
            r.ground_impulse.x,
            r.ground_impulse.y,
            r.kinetic_after - r.kinetic_before
        );
    }
    out
}

/// Packs a section state as `[q1, dq1, dq2]`.
pub fn section_pack(state: &State) -> DVector<f64> {
    let m = state.q1.len();
    let mut z = DVector::zeros(2 * m + 1);
    z.rows_mut(0, m).copy_from(&state.q1);
    z.rows_mut(m, m).copy_from(&state.dq1);
    z[2 * m] = state.dq2;
    z
}

/// Rebuilds the full state of a section point.
pub fn section_unpack(n: usize, q2_star: f64, z: &DVector<f64>) -> State {
    let m = n - 1;
    assert_eq!(z.len(), 2 * m + 1, "section state dimension");
    State::new(
        z.rows(0, m).into_owned(),
        q2_star,
        z.rows(m, m).into_owned(),
        z[2 * m],
    )
}

/// Section-state error with the joint-angle components wrapped.
pub fn section_error(n: usize, z: &DVector<f64>, z_ref: &DVector<f64>) -> DVector<f64> {
    let mut e = z - z_ref;
    for i in 0..n - 1 {
        e[i] = wrap_to_pi(e[i]);
    }
    e
}

/// Feedback queried once per step on the section.
pub trait SectionFeedback {
    /// Reference section state the error is measured against.
    fn reference(&self) -> &DVector<f64>;
    /// Impulse to apply at this section state.
    fn impulse(&self, z: &DVector<f64>) -> DVector<f64>;
}

/// Options for a multi-step run.
pub struct RunOptions<'a> {
    pub steps: usize,
    pub feedback: Option<&'a dyn SectionFeedback>,
    /// Error reference when no feedback is active.
    pub reference: Option<DVector<f64>>,
    pub impulse_mode: ImpulseMode,
    pub log_trajectory: bool,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            steps: 1,
            feedback: None,
            reference: None,
            impulse_mode: ImpulseMode::Ideal,
            log_trajectory: true,
        }
    }
}

/// A run that ended early.
#[derive(Clone, Debug)]
pub struct RunFailure {
    /// 1-based index of the failed step.
    pub step: usize,
    pub failure: StepFailure,
}

/// Results of a multi-step run.
#[derive(Debug)]
pub struct GaitRun {
    pub records: Vec<StepRecord>,
    pub trajectory: TrajectoryLog,
    pub failure: Option<RunFailure>,
    /// Section state after the last completed step.
    pub final_state: DVector<f64>,
}

enum FlowTarget {
    Touchdown,
    Section,
}

/// What ended a flow phase.
struct FlowExit {
    state: State,
    t: f64,
}

/// Walking-step simulator for one model/gait/controller combination.
pub struct Walker {
    model: Model,
    gait: Gait,
    gains: TrackingGains,
    section_q2: f64,
    config: SimConfig,
    w: DMatrix<f64>,
    arm_q2: f64,
    q2_lo: f64,
    q2_hi: f64,
}

impl Walker {
    pub fn new(
        model: Model,
        gait: Gait,
        gains: TrackingGains,
        section_q2: f64,
        config: SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        gains.validate()?;
        let t1 = gait.vhc().theta1_i;
        if !(section_q2 > 0.0 && section_q2 < t1) {
            return Err(Error::validation(
                "icpm.section_q2",
                format!("section angle must lie inside the swing (0, {t1:.4})"),
            ));
        }
        let arm_q2 = config.touchdown_arm.unwrap_or(-t1 / 2.0);
        if !(arm_q2 < 0.0 && arm_q2 > -t1) {
            return Err(Error::validation(
                "sim.touchdown_arm",
                format!("arming angle must lie in (-{t1:.4}, 0)"),
            ));
        }
        let n = model.n();
        Ok(Walker {
            w: w_matrix(n),
            model,
            gait,
            gains,
            section_q2,
            arm_q2,
            q2_lo: -t1 - config.range_margin,
            q2_hi: t1 + config.range_margin,
            config,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn gait(&self) -> &Gait {
        &self.gait
    }

    pub fn section_q2(&self) -> f64 {
        self.section_q2
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Closed-loop state derivative under the tracking controller.
    fn derivative(&self, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.model.n();
        let s = State::unpack(n, y);
        let eval = constraint_tracking(&self.model, &self.gait, &s, &self.gains)
            .expect("constraint regularity holds on the operating interval");
        dy.rows_mut(0, n - 1).copy_from(&s.dq1);
        dy[n - 1] = s.dq2;
        dy.rows_mut(n, n - 1).copy_from(&eval.ddq1);
        dy[2 * n - 1] = eval.ddq2;
    }

    fn foot_height(&self, s: &State) -> f64 {
        self.model.swing_foot(&s.to_abs().theta).y
    }

    fn foot_rate_y(&self, s: &State) -> f64 {
        self.model.swing_foot_velocity(&s.to_abs()).y
    }

    fn foot_accel_y(&self, s: &State) -> f64 {
        let eval = constraint_tracking(&self.model, &self.gait, s, &self.gains)
            .expect("constraint regularity holds on the operating interval");
        let n = self.model.n();
        let mut ddq = DVector::zeros(n);
        ddq.rows_mut(0, n - 1).copy_from(&eval.ddq1);
        ddq[n - 1] = eval.ddq2;
        let ddtheta = &self.w * ddq;
        self.model.swing_foot_accel(&s.to_abs(), &ddtheta).y
    }

    /// Re-integrates from an accepted step's start to an interior time at
    /// full accuracy (dense output is not accurate enough for event states
    /// that later enter finite differences).
    fn reintegrate(&self, t_from: f64, y_from: &DVector<f64>, t_to: f64) -> Result<State> {
        if t_to <= t_from {
            return Ok(State::unpack(self.model.n(), y_from));
        }
        let opts = OdeOptions {
            rtol: self.config.rtol,
            atol: self.config.atol,
            h_max: self.config.h_max,
            ..OdeOptions::default()
        };
        let y = integrate_to(
            |_t, y, dy| self.derivative(y, dy),
            t_from,
            y_from,
            t_to,
            &opts,
        )?;
        Ok(State::unpack(self.model.n(), &y))
    }

    /// Localizes a root of `g` bracketed on a dense step: bisect the
    /// interpolant, re-integrate, then polish on the true trajectory.
    fn locate_event(
        &self,
        t_from: f64,
        y_from: &DVector<f64>,
        step: &DenseStep,
        bracket: (f64, f64),
        g: &dyn Fn(&State) -> f64,
        g_slope: &dyn Fn(&State) -> f64,
        tol: f64,
    ) -> Result<(f64, State)> {
        let n = self.model.n();
        let eval_dense = |t: f64| State::unpack(n, &step.eval(t));
        let (mut a, mut b) = bracket;
        let mut ga = g(&eval_dense(a));
        if ga == 0.0 {
            let s = self.reintegrate(t_from, y_from, a)?;
            return Ok((a, s));
        }
        for _ in 0..60 {
            if (b - a).abs() < 1e-13 * b.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (a + b);
            let gm = g(&eval_dense(mid));
            if ga * gm > 0.0 {
                a = mid;
                ga = gm;
            } else {
                b = mid;
            }
        }
        let mut t_star = 0.5 * (a + b);
        let mut state = self.reintegrate(t_from, y_from, t_star)?;
        for _ in 0..8 {
            let r = g(&state);
            if r.abs() < tol {
                break;
            }
            let d = g_slope(&state);
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let dt = (-r / d).clamp(-(b - a).max(1e-9), (b - a).max(1e-9));
            if dt.abs() < 1e-16 {
                break;
            }
            t_star += dt;
            state = self.reintegrate(t_from, y_from, t_star)?;
        }
        Ok((t_star, state))
    }

    /// Flows the closed-loop swing dynamics from `start` until the target
    /// event, watching for stance-rate reversal, range violations, and the
    /// step budget along the way.
    fn flow(
        &self,
        start: &State,
        t_start: f64,
        target: FlowTarget,
        mut log: Option<&mut TrajectoryLog>,
    ) -> Result<FlowExit> {
        const INTERIOR: usize = 12;
        let n = self.model.n();
        if start.dq2 >= 0.0 {
            return Err(Error::Step(StepFailure::VelocityReversal {
                t: t_start,
                q2: start.q2,
            }));
        }
        let opts = OdeOptions {
            rtol: self.config.rtol,
            atol: self.config.atol,
            h_max: self.config.h_max,
            ..OdeOptions::default()
        };
        let mut solver =
            Dopri5::new(|_t, y, dy| self.derivative(y, dy), t_start, start.pack(), opts)?;
        // A shallow height crossing waiting for its vertical-rate zero.
        let mut pending: Option<(f64, State)> = None;
        let mut accepted = 0usize;

        loop {
            if accepted >= self.config.max_steps_per_phase {
                return Err(Error::Step(StepFailure::BudgetExhausted {
                    t: solver.t(),
                    steps: accepted,
                }));
            }
            let t_prev = solver.t();
            let y_prev = solver.y().clone();
            let step = solver.step(None)?;
            accepted += 1;
            let t_end = step.t0 + step.h;

            // Sample the step for event brackets.
            let mut ts = [0.0; INTERIOR + 2];
            let mut q2s = [0.0; INTERIOR + 2];
            let mut dq2s = [0.0; INTERIOR + 2];
            let mut gys = [f64::NAN; INTERIOR + 2];
            let mut gdys = [f64::NAN; INTERIOR + 2];
            for i in 0..INTERIOR + 2 {
                let t = step.t0 + step.h * (i as f64) / ((INTERIOR + 1) as f64);
                let s = State::unpack(n, &step.eval(t));
                ts[i] = t;
                q2s[i] = s.q2;
                dq2s[i] = s.dq2;
                if s.q2 < self.arm_q2 {
                    gys[i] = self.foot_height(&s);
                    gdys[i] = self.foot_rate_y(&s);
                }
            }

            // A pending shallow crossing must resolve promptly.
            if let Some((t_c, _)) = pending {
                if step.t0 > t_c + 0.02 {
                    let (t_c, s_c) = pending.take().expect("pending checked");
                    if let Some(log) = log.as_deref_mut() {
                        log.sample_step(self, &step, t_c);
                    }
                    return Ok(FlowExit { state: s_c, t: t_c });
                }
            }

            for i in 0..INTERIOR + 1 {
                // Hard failures first: they bound the valid region.
                if dq2s[i + 1] >= 0.0 {
                    return Err(Error::Step(StepFailure::VelocityReversal {
                        t: ts[i + 1],
                        q2: q2s[i + 1],
                    }));
                }
                if q2s[i + 1] < self.q2_lo || q2s[i + 1] > self.q2_hi {
                    return Err(Error::Step(StepFailure::OutOfRange {
                        t: ts[i + 1],
                        q2: q2s[i + 1],
                    }));
                }

                let armed = gys[i].is_finite() && gys[i + 1].is_finite();
                if armed && pending.is_none() && gys[i] < -self.config.graze_band {
                    return Err(Error::Step(StepFailure::FootBelowGround {
                        clearance: gys[i],
                    }));
                }

                // Tangential detector: vertical rate turns upward.
                if armed && gdys[i] < 0.0 && gdys[i + 1] >= 0.0 {
                    let (t_m, s_m) = self.locate_event(
                        t_prev,
                        &y_prev,
                        &step,
                        (ts[i], ts[i + 1]),
                        &|s| self.foot_rate_y(s),
                        &|s| self.foot_accel_y(s),
                        1e-12,
                    )?;
                    let height = self.foot_height(&s_m);
                    if pending.is_some() || height.abs() <= self.config.graze_band {
                        if let Some(log) = log.as_deref_mut() {
                            log.sample_step(self, &step, t_m);
                        }
                        return self.finish_touchdown(target, t_m, s_m);
                    }
                    if height < -self.config.graze_band {
                        // Deep dip inside one sampling gap: take the height
                        // crossing that precedes the minimum.
                        let (t_c, s_c) = self.locate_event(
                            t_prev,
                            &y_prev,
                            &step,
                            (ts[i], t_m),
                            &|s| self.foot_height(s),
                            &|s| self.foot_rate_y(s),
                            1e-12,
                        )?;
                        if let Some(log) = log.as_deref_mut() {
                            log.sample_step(self, &step, t_c);
                        }
                        return self.finish_touchdown(target, t_c, s_c);
                    }
                    // The foot stayed clear: not a contact, keep flowing.
                }

                // Transversal detector: foot height crosses the ground.
                if armed && pending.is_none() && gys[i] > 0.0 && gys[i + 1] <= 0.0 {
                    let (t_c, s_c) = self.locate_event(
                        t_prev,
                        &y_prev,
                        &step,
                        (ts[i], ts[i + 1]),
                        &|s| self.foot_height(s),
                        &|s| self.foot_rate_y(s),
                        1e-12,
                    )?;
                    let rate = self.foot_rate_y(&s_c);
                    if rate <= -self.config.graze_vel {
                        if let Some(log) = log.as_deref_mut() {
                            log.sample_step(self, &step, t_c);
                        }
                        return self.finish_touchdown(target, t_c, s_c);
                    }
                    // Nearly tangential: re-localize at the rate zero just
                    // ahead so grazing contacts are handled uniformly.
                    pending = Some((t_c, s_c));
                }

                // Section crossing (only sought between touchdowns).
                if matches!(target, FlowTarget::Section)
                    && pending.is_none()
                    && q2s[i] > self.section_q2
                    && q2s[i + 1] <= self.section_q2
                {
                    let (t_s, s_s) = self.locate_event(
                        t_prev,
                        &y_prev,
                        &step,
                        (ts[i], ts[i + 1]),
                        &|s| s.q2 - self.section_q2,
                        &|s| s.dq2,
                        1e-13,
                    )?;
                    if let Some(log) = log.as_deref_mut() {
                        log.sample_step(self, &step, t_s);
                    }
                    return Ok(FlowExit { state: s_s, t: t_s });
                }
            }

            if let Some(log) = log.as_deref_mut() {
                log.sample_step(self, &step, t_end);
            }
        }
    }

    fn finish_touchdown(&self, target: FlowTarget, t: f64, state: State) -> Result<FlowExit> {
        match target {
            FlowTarget::Touchdown => Ok(FlowExit { state, t }),
            // Contact while seeking the section means the step missed it.
            FlowTarget::Section => Err(Error::Step(StepFailure::NoSectionCrossing)),
        }
    }

    /// Full state at a section point.
    pub fn section_state(&self, z: &DVector<f64>) -> State {
        section_unpack(self.model.n(), self.section_q2, z)
    }

    /// Executes one complete step from a section state: impulse, swing,
    /// impact, relabel, and flow back to the section.
    pub fn execute_step(
        &self,
        z: &DVector<f64>,
        impulse: &DVector<f64>,
        mode: &ImpulseMode,
        t_start: f64,
        mut log: Option<&mut TrajectoryLog>,
    ) -> Result<(StepRecord, DVector<f64>)> {
        let before = self.section_state(z);
        let jump = apply_impulse(&self.model, &before, impulse, mode)?;
        let t0 = t_start + jump.duration;
        if let Some(log) = log.as_deref_mut() {
            log.event_point(self, t_start, &before);
            log.event_point(self, t0, &jump.state);
        }
        let energy_start = self.model.total_energy(&jump.state);

        let touchdown = self.flow(&jump.state, t0, FlowTarget::Touchdown, log.as_deref_mut())?;
        let guard = guard_values(&self.model, &touchdown.state);
        let impact = impact_map(&self.model, &touchdown.state)?;
        let plus = relabel(&impact.state);
        if let Some(log) = log.as_deref_mut() {
            log.event_point(self, touchdown.t, &touchdown.state);
            log.event_point(self, touchdown.t, &plus);
        }

        let section = self.flow(&plus, touchdown.t, FlowTarget::Section, log.as_deref_mut())?;
        if let Some(log) = log.as_deref_mut() {
            log.event_point(self, section.t, &section.state);
        }

        let record = StepRecord {
            k: 0,
            section_state: z.clone(),
            impulse: impulse.clone(),
            error_norm: f64::NAN,
            duration: section.t - t_start,
            touchdown_state: touchdown.state,
            touchdown_rate: guard.gamma_dot,
            ground_impulse: impact.ground_impulse,
            kinetic_before: impact.kinetic_before,
            kinetic_after: impact.kinetic_after,
            energy_start,
            energy_end: self.model.total_energy(&section.state),
        };
        Ok((record, section_pack(&section.state)))
    }

    /// Runs consecutive steps, applying section feedback when provided.
    ///
    /// A failure on the first step rejects the run; later failures return
    /// the completed prefix with the failure annotated.
    pub fn run_gait(&self, z0: &DVector<f64>, opts: &RunOptions) -> Result<GaitRun> {
        let n = self.model.n();
        let mut log = TrajectoryLog::new(self.config.sample_dt);
        let mut records = Vec::with_capacity(opts.steps);
        let mut failure = None;
        let mut z = z0.clone();
        let mut t = 0.0;
        for k in 1..=opts.steps {
            let impulse = match opts.feedback {
                Some(fb) => fb.impulse(&z),
                None => DVector::zeros(n - 1),
            };
            let reference = opts
                .feedback
                .map(|fb| fb.reference())
                .or(opts.reference.as_ref());
            let error_norm = reference
                .map(|r| section_error(n, &z, r).norm())
                .unwrap_or(f64::NAN);
            let maybe_log = if opts.log_trajectory { Some(&mut log) } else { None };
            match self.execute_step(&z, &impulse, &opts.impulse_mode, t, maybe_log) {
                Ok((mut record, z_next)) => {
                    record.k = k;
                    record.error_norm = error_norm;
                    t += record.duration;
                    records.push(record);
                    z = z_next;
                }
                Err(Error::Step(f)) if k > 1 => {
                    failure = Some(RunFailure { step: k, failure: f });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(GaitRun { records, trajectory: log, failure, final_state: z })
    }
}
