//! Discrete transitions of the walking cycle.
//!
//! Three maps act between swing phases:
//!
//! * an impulsive actuator kick that changes joint rates at frozen
//!   configuration (the stabilizer's control input),
//! * the inelastic ground impact of the swing foot, solved on the
//!   free-floating chain with a unilateral-contact impulse, and
//! * the relabelling that swaps leg roles so every step looks like the same
//!   swing phase in new coordinates.

use crate::angles::wrap_to_pi;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::state::State;
use nalgebra::{DMatrix, DVector, Vector2};

/// Applies an impulsive joint torque: rates jump by `M(q)^{-1} (I, 0)` while
/// the configuration is frozen.  The unactuated momentum component is
/// untouched, which makes the map its own inverse under `-impulse`.
pub fn impulse_jump(model: &Model, state: &State, impulse: &DVector<f64>) -> Result<State> {
    let n = model.n();
    assert_eq!(impulse.len(), n - 1, "impulse must act on the n-1 joints");
    let m = model.mass_matrix(state);
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, n - 1).copy_from(impulse);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::numerical("impulse_jump", "mass matrix lost positive definiteness"))?;
    let dv = chol.solve(&rhs);
    let mut out = state.clone();
    out.dq1 += dv.rows(0, n - 1);
    out.dq2 += dv[n - 1];
    Ok(out)
}

/// Result of the inelastic ground impact, still in pre-relabel link order.
#[derive(Clone, Debug)]
pub struct ImpactResult {
    /// Angles unchanged, post-impact link rates (the chain is about to be
    /// re-pinned at the new contact; see [`relabel`]).
    pub state: State,
    /// Lift-off velocity acquired by the old stance foot.
    pub old_foot_velocity: Vector2<f64>,
    /// Contact impulse transmitted by the ground at the new foot.
    pub ground_impulse: Vector2<f64>,
    /// Kinetic energy just before the impact.
    pub kinetic_before: f64,
    /// Kinetic energy just after (never larger than `kinetic_before`).
    pub kinetic_after: f64,
}

/// Solves the inelastic impact of the swing foot with the ground.
///
/// The chain is momentarily freed from its pivot (adding the two
/// translational degrees of freedom of the old stance foot, whose pre-impact
/// velocity is zero) and the new contact point is brought to rest by an
/// impulsive ground reaction: a saddle-point system in the unknown
/// post-impact rates and contact impulse.  A grazing touchdown (zero foot
/// velocity) passes through unchanged.
pub fn impact_map(model: &Model, state: &State) -> Result<ImpactResult> {
    let n = model.n();
    let abs = state.to_abs();
    let me = model.extended_mass_matrix(&abs.theta);
    let jac = model.extended_swing_jacobian(&abs.theta);

    // Saddle system: [ Me  -J^T ] [v+]   [ Me v- ]
    //                [ J     0  ] [Ig] = [   0   ]
    let dim = n + 4;
    let mut sys = DMatrix::zeros(dim, dim);
    sys.view_mut((0, 0), (n + 2, n + 2)).copy_from(&me);
    for r in 0..2 {
        for c in 0..n + 2 {
            sys[(c, n + 2 + r)] = -jac[(r, c)];
            sys[(n + 2 + r, c)] = jac[(r, c)];
        }
    }
    let mut v_minus = DVector::zeros(n + 2);
    v_minus.rows_mut(0, n).copy_from(&abs.dtheta);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n + 2).copy_from(&(&me * &v_minus));

    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("impact_map", "impact saddle system is singular"))?;

    let v_plus = sol.rows(0, n + 2).into_owned();
    let impulse = Vector2::new(sol[n + 2], sol[n + 3]);
    let dtheta_plus = v_plus.rows(0, n).into_owned();
    let old_foot_velocity = Vector2::new(v_plus[n], v_plus[n + 1]);

    let t_before = 0.5 * v_minus.dot(&(&me * &v_minus));
    let t_after = 0.5 * v_plus.dot(&(&me * &v_plus));

    let post_abs = crate::state::AbsState { theta: abs.theta.clone(), dtheta: dtheta_plus };
    Ok(ImpactResult {
        state: State::from_abs(&post_abs),
        old_foot_velocity,
        ground_impulse: impulse,
        kinetic_before: t_before,
        kinetic_after: t_after,
    })
}

/// Position and velocity parts of the relabelling map for an n-link chain:
/// `q+ = V q + Pi`, `dq+ = V dq`.
pub fn relabel_matrices(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let pi = std::f64::consts::PI;
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        // 1-based rule: V[i][j] = -1 when i + j = n; the last row is all ones.
        v[(i, n - 2 - i)] = -1.0;
    }
    for j in 0..n {
        v[(n - 1, j)] = 1.0;
    }
    let mut shift = DVector::zeros(n);
    shift[(n - 1) / 2 - 1] = pi; //  1-based index (n-1)/2
    shift[(n - 1) / 2] = -pi; //     1-based index (n+1)/2
    shift[n - 1] = -pi;
    (v, shift)
}

/// Swaps leg roles after touchdown: the old swing leg becomes the new stance
/// leg and the configuration is re-expressed from the new pivot.  Applied to
/// a state whose swing foot rests on the ground with the post-impact rates,
/// this produces the initial condition of the next swing phase.  Positions
/// are wrapped to (-pi, pi].
pub fn relabel(state: &State) -> State {
    let n = state.n();
    let (v, shift) = relabel_matrices(n);
    let q = &v * state.q() + shift;
    let dq = &v * state.dq();
    let mut out = State::from_q_dq(&q, &dq);
    out.q1 = out.q1.map(wrap_to_pi);
    out.q2 = wrap_to_pi(out.q2);
    out
}

/// Contact classification of a state against the touchdown guards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuardClass {
    /// Swing foot clear of the ground (or moving upward on it).
    Clear,
    /// Foot on the ground with downward velocity: a genuine impact.
    Transversal,
    /// Foot on the ground with zero velocity: an impact-free touchdown.
    Tangential,
}

/// Swing-foot height and velocity used for guard decisions.
#[derive(Clone, Debug)]
pub struct GuardEval {
    pub gamma: Vector2<f64>,
    pub gamma_dot: Vector2<f64>,
}

/// Height tolerance for "on the ground".
pub const GUARD_EPS_POSITION: f64 = 1e-10;
/// Velocity tolerance separating tangential from transversal contact.
pub const GUARD_EPS_VELOCITY: f64 = 1e-6;

/// Evaluates the swing-foot contact data for a pinned state.
pub fn guard_values(model: &Model, state: &State) -> GuardEval {
    let abs = state.to_abs();
    GuardEval {
        gamma: model.swing_foot(&abs.theta),
        gamma_dot: model.swing_foot_velocity(&abs),
    }
}

impl GuardEval {
    /// Classifies the contact with the default tolerances.
    pub fn classify(&self) -> GuardClass {
        self.classify_with(GUARD_EPS_POSITION, GUARD_EPS_VELOCITY)
    }

    pub fn classify_with(&self, eps_pos: f64, eps_vel: f64) -> GuardClass {
        if self.gamma.y.abs() > eps_pos {
            return GuardClass::Clear;
        }
        if self.gamma_dot.norm() <= eps_vel {
            GuardClass::Tangential
        } else if self.gamma_dot.y < -eps_vel {
            GuardClass::Transversal
        } else {
            GuardClass::Clear
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BipedParams;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        Model::new(BipedParams::five_link())
    }

    fn random_state(rng: &mut ChaCha8Rng) -> State {
        let q1 = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let dq1 = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
        State::new(q1, rng.gen_range(-1.0..1.0), dq1, rng.gen_range(-3.0..3.0))
    }

    /// Random configuration with the swing foot exactly on the ground and a
    /// velocity in the null space of the swing-foot Jacobian (both feet
    /// momentarily at rest): a tangential-touchdown state.
    fn random_double_support(model: &Model, rng: &mut ChaCha8Rng) -> State {
        loop {
            let s = random_state(rng);
            // Re-solve the last link angle so the foot height closes to zero.
            let abs = s.to_abs();
            let mut partial = 0.0;
            for j in 0..4 {
                if j != 2 {
                    partial += model.params().ell()[j] * abs.theta[j].cos();
                }
            }
            let c = -partial / model.params().ell()[4];
            if c.abs() > 0.999 {
                continue;
            }
            let mut theta = abs.theta.clone();
            theta[4] = c.acos();
            debug_assert!(model.swing_foot(&theta).y.abs() < 1e-12);
            // Project the rates onto the constraint "swing foot at rest".
            let jac = model.swing_foot_jacobian_abs(&theta);
            let mut dtheta = DVector::from_fn(5, |_, _| rng.gen_range(-3.0..3.0));
            let jjt = &jac * jac.transpose();
            let lam = jjt.lu().solve(&(&jac * &dtheta)).expect("2x2 contact block");
            dtheta -= jac.transpose() * lam;
            if dtheta.norm() < 0.1 {
                continue; // keep the motion nontrivial
            }
            return State::from_abs(&crate::state::AbsState { theta, dtheta });
        }
    }

    #[test]
    fn impulse_jump_preserves_unactuated_momentum_and_inverts() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let imp = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let s2 = impulse_jump(&m, &s, &imp).unwrap();
            // Configuration frozen.
            assert_eq!(s2.q1, s.q1);
            assert_eq!(s2.q2, s.q2);
            // Last row of M dq (the unactuated momentum) unchanged.
            let mq = m.mass_matrix(&s);
            let p_before = (mq.row(4) * s.dq())[0];
            let p_after = (mq.row(4) * s2.dq())[0];
            assert!((p_before - p_after).abs() < 1e-12 * p_before.abs().max(1.0));
            // Applying the negated impulse restores the state.
            let s3 = impulse_jump(&m, &s2, &(-&imp)).unwrap();
            assert!((s3.dq1 - &s.dq1).norm() < 1e-10);
            assert!((s3.dq2 - s.dq2).abs() < 1e-10);
        }
    }

    #[test]
    fn impact_zeroes_new_contact_and_dissipates() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let r = impact_map(&m, &s).unwrap();
            let abs = r.state.to_abs();
            // New contact at rest: the full free-floating contact velocity is
            // J v+ = gamma_dot(theta, dtheta+) + old-foot velocity.
            let contact_vel = m.swing_foot_velocity(&abs) + r.old_foot_velocity;
            assert!(contact_vel.norm() < 1e-10, "contact velocity {:.3e}", contact_vel.norm());
            // Energy can only be lost.
            assert!(r.kinetic_after <= r.kinetic_before + 1e-12 * r.kinetic_before.abs());
            // Quadratic-form identity for inelastic impacts:
            // T- - T+ = 1/2 (v+ - v-)^T Me (v+ - v-).
            let me = m.extended_mass_matrix(&abs.theta);
            let mut vm = DVector::zeros(7);
            vm.rows_mut(0, 5).copy_from(&s.to_abs().dtheta);
            let mut vp = DVector::zeros(7);
            vp.rows_mut(0, 5).copy_from(&abs.dtheta);
            vp[5] = r.old_foot_velocity[0];
            vp[6] = r.old_foot_velocity[1];
            let dv = &vp - &vm;
            let loss_quad = 0.5 * dv.dot(&(&me * &dv));
            let loss = r.kinetic_before - r.kinetic_after;
            assert!(
                (loss - loss_quad).abs() < 1e-9 * loss.abs().max(1.0),
                "loss {loss} vs quadratic form {loss_quad}"
            );
        }
    }

    #[test]
    fn grazing_impact_is_identity() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let s = random_double_support(&m, &mut rng);
            let r = impact_map(&m, &s).unwrap();
            assert!((r.state.dq1.clone() - &s.dq1).norm() < 1e-9);
            assert!((r.state.dq2 - s.dq2).abs() < 1e-9);
            assert!(r.ground_impulse.norm() < 1e-9);
            assert!((r.kinetic_after - r.kinetic_before).abs() < 1e-9);
        }
    }

    #[test]
    fn relabel_is_an_involution_mod_2pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let twice = relabel(&relabel(&s));
            for i in 0..4 {
                assert!(wrap_to_pi(twice.q1[i] - s.q1[i]).abs() < 1e-12);
            }
            assert!(wrap_to_pi(twice.q2 - s.q2).abs() < 1e-12);
            assert!((twice.dq1 - &s.dq1).norm() < 1e-12);
            assert!((twice.dq2 - s.dq2).abs() < 1e-12);
        }
    }

    #[test]
    fn relabel_preserves_energy_on_touchdown_states() {
        // On states with the swing foot resting on the ground, relabelling is
        // a pure re-description of the same physical chain, so both energies
        // must be preserved exactly.
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..200 {
            let s = random_double_support(&m, &mut rng);
            let r = relabel(&s);
            let t0 = m.kinetic_energy(&s);
            let t1 = m.kinetic_energy(&r);
            let v0 = m.potential_energy(&s);
            let v1 = m.potential_energy(&r);
            assert!((t0 - t1).abs() < 1e-9 * t0.max(1.0), "kinetic {t0} vs {t1}");
            assert!((v0 - v1).abs() < 1e-9 * v0.abs().max(1.0), "potential {v0} vs {v1}");
        }
    }

    #[test]
    fn relabel_swaps_link_angles_about_the_torso() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let abs_before = s.to_abs();
            let abs_after = relabel(&s).to_abs();
            let pi = std::f64::consts::PI;
            // New link j carries old link n-1-j rotated by pi (legs), while
            // the torso angle is unchanged.
            for j in 0..5 {
                let expect = if j == 2 {
                    abs_before.theta[2]
                } else {
                    abs_before.theta[4 - j] - pi
                };
                assert!(
                    wrap_to_pi(abs_after.theta[j] - expect).abs() < 1e-10,
                    "link {j} angle mismatch"
                );
                let expect_rate = abs_before.dtheta[if j == 2 { 2 } else { 4 - j }];
                assert!((abs_after.dtheta[j] - expect_rate).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn impact_then_relabel_preserves_physical_kinetic_energy() {
        // The extended post-impact kinetic energy equals the pinned kinetic
        // energy of the relabelled state: the new pivot is at rest, so the
        // pinned description captures the full physical motion.
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..300 {
            let s = random_state(&mut rng);
            let r = impact_map(&m, &s).unwrap();
            let next = relabel(&r.state);
            let t_pinned = m.kinetic_energy(&next);
            assert!(
                (t_pinned - r.kinetic_after).abs() < 1e-9 * r.kinetic_after.max(1.0),
                "pinned {t_pinned} vs extended {}",
                r.kinetic_after
            );
        }
    }

    #[test]
    fn guard_classification_distinguishes_contact_types() {
        let m = model();
        let pi = std::f64::consts::PI;
        // Mid-air configuration.
        let clear = State::new(
            DVector::from_vec(vec![0.1, -0.3, pi - 0.2, 0.05]),
            0.2,
            DVector::zeros(4),
            -1.0,
        );
        assert_eq!(guard_values(&m, &clear).classify(), GuardClass::Clear);

        // Mirrored double support, chain at rest: tangential.
        let alpha = -pi / 8.0;
        let abs = crate::state::AbsState {
            theta: DVector::from_vec(vec![alpha, alpha, 0.0, pi - alpha, pi - alpha]),
            dtheta: DVector::zeros(5),
        };
        let rest = State::from_abs(&abs);
        assert_eq!(guard_values(&m, &rest).classify(), GuardClass::Tangential);

        // Same configuration with the foot moving down: transversal.
        let mut falling = rest.clone();
        falling.dq2 = -1.0;
        let gv = guard_values(&m, &falling);
        assert!(gv.gamma_dot.y < 0.0);
        assert_eq!(gv.classify(), GuardClass::Transversal);
    }
}
