//! Closed-form multi-channel safety filter.
//!
//! The filter solves
//!
//! ```text
//! minimize   (1/2) (u - k_d)' G (u - k_d),    G = B'B
//! subject to  a_i + b_i'u + alpha1_i (y_i - lower_i) >= 0
//!            -a_i - b_i'u + alpha1_i (upper_i - y_i) >= 0
//! ```
//!
//! for all channels i. With the Gram cost the constraint rows satisfy
//! `b_i' G^-1 b_j = delta_ij`, so the multipliers decouple channel by
//! channel:
//!
//! ```text
//! omega_lower_i = a_i + alpha1_i (y_i - lower_i) + b_i' k_d
//! omega_upper_i = -a_i + alpha1_i (upper_i - y_i) - b_i' k_d
//! lambda = max(0, -omega)
//! u* = k_d + B^-1 (lambda_lower - lambda_upper)
//! ```
//!
//! using `G^-1 b_i = B^-1 e_i`. The two omegas of one channel sum to
//! `alpha1_i (upper_i - lower_i) > 0`, so at most one can be negative and
//! the two multipliers are never simultaneously positive.

use nalgebra::{DMatrix, DVector};

use crate::ecbf::{evaluate_channels, EcbfEvaluation, OutputChannel};
use crate::error::CbfError;
use crate::qp::QpInstance;
use crate::reldeg::SINGULARITY_TOL;
use crate::system::SystemModel;

/// Absolute slack tolerance used for feasibility checks and active-set
/// detection.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Which bound of a channel's box a constraint refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Lower => write!(f, "lower"),
            Side::Upper => write!(f, "upper"),
        }
    }
}

/// Primal-dual output of the filter at one state.
#[derive(Debug, Clone)]
pub struct FilterDecision {
    pub u_star: DVector<f64>,
    pub lambda_lower: DVector<f64>,
    pub lambda_upper: DVector<f64>,
    pub omega_lower: DVector<f64>,
    pub omega_upper: DVector<f64>,
    /// Constraint left-hand sides at `u_star`, per channel.
    pub slack_lower: DVector<f64>,
    pub slack_upper: DVector<f64>,
    /// Channels whose slack is within [`FEASIBILITY_TOL`] of zero.
    pub active_set: Vec<(usize, Side)>,
    /// The correction `u_star - k_d`.
    pub k_cbf: DVector<f64>,
}

impl FilterDecision {
    /// Slacks in the interleaved constraint ordering
    /// (lower_1, upper_1, lower_2, ...).
    pub fn interleaved_slacks(&self) -> DVector<f64> {
        interleave(&self.slack_lower, &self.slack_upper)
    }

    /// Multipliers in the interleaved constraint ordering.
    pub fn interleaved_lambdas(&self) -> DVector<f64> {
        interleave(&self.lambda_lower, &self.lambda_upper)
    }

    pub fn is_active(&self) -> bool {
        !self.active_set.is_empty()
    }
}

fn interleave(lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    let m = lower.len();
    DVector::from_fn(2 * m, |j, _| {
        if j % 2 == 0 {
            lower[j / 2]
        } else {
            upper[j / 2]
        }
    })
}

fn check_inputs(
    channels: &[OutputChannel],
    model: &SystemModel,
    x: &DVector<f64>,
    k_d: &DVector<f64>,
) -> Result<(), CbfError> {
    model.check_state(x)?;
    if channels.len() != model.input_dim {
        return Err(CbfError::Dimension {
            context: "channel list for square filter".to_string(),
            expected: model.input_dim,
            got: channels.len(),
        });
    }
    if k_d.len() != model.input_dim {
        return Err(CbfError::Dimension {
            context: "nominal input".to_string(),
            expected: model.input_dim,
            got: k_d.len(),
        });
    }
    if k_d.iter().any(|v| !v.is_finite()) {
        return Err(CbfError::NonFinite {
            context: "nominal input".to_string(),
        });
    }
    Ok(())
}

/// Stacks the per-channel input-direction rows into the decoupling matrix
/// and rejects near-singular stacks.
fn stacked_b(evals: &[EcbfEvaluation], m: usize) -> Result<DMatrix<f64>, CbfError> {
    let mut b = DMatrix::<f64>::zeros(evals.len(), m);
    for (i, e) in evals.iter().enumerate() {
        for j in 0..m {
            b[(i, j)] = e.b[j];
        }
    }
    let sigma_min = b
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |acc, &s| acc.min(s));
    if sigma_min < SINGULARITY_TOL {
        return Err(CbfError::SingularDecouplingMatrix {
            sigma_min,
            threshold: SINGULARITY_TOL,
        });
    }
    Ok(b)
}

fn pair_slacks(e: &EcbfEvaluation, alpha1: f64, bu: f64) -> (f64, f64) {
    let lower = e.a + bu + alpha1 * e.h_lower;
    let upper = -e.a - bu + alpha1 * e.h_upper;
    (lower, upper)
}

/// Evaluates the filter at one state and nominal input.
pub fn closed_form_filter(
    channels: &[OutputChannel],
    model: &SystemModel,
    x: &DVector<f64>,
    k_d: &DVector<f64>,
) -> Result<FilterDecision, CbfError> {
    check_inputs(channels, model, x, k_d)?;
    let m = model.input_dim;
    let evals = evaluate_channels(channels, x)?;
    let b = stacked_b(&evals, m)?;

    let mut omega_lower = DVector::<f64>::zeros(m);
    let mut omega_upper = DVector::<f64>::zeros(m);
    for (i, (ch, e)) in channels.iter().zip(evals.iter()).enumerate() {
        let a1 = ch.alpha1();
        let bu = e.b.dot(k_d);
        omega_lower[i] = e.a + a1 * e.h_lower + bu;
        omega_upper[i] = -e.a + a1 * e.h_upper - bu;
        debug_assert!(
            omega_lower[i] >= -FEASIBILITY_TOL || omega_upper[i] >= -FEASIBILITY_TOL,
            "omega pair both negative for channel {i}; pair sum should be alpha1 * width > 0"
        );
    }
    let lambda_lower = omega_lower.map(|w| (-w).max(0.0));
    let lambda_upper = omega_upper.map(|w| (-w).max(0.0));

    let delta = &lambda_lower - &lambda_upper;
    let correction = b.clone().lu().solve(&delta).ok_or_else(|| {
        CbfError::SingularDecouplingMatrix {
            sigma_min: 0.0,
            threshold: SINGULARITY_TOL,
        }
    })?;
    let u_star = k_d + &correction;

    let mut slack_lower = DVector::<f64>::zeros(m);
    let mut slack_upper = DVector::<f64>::zeros(m);
    let mut active_set = Vec::new();
    for (i, (ch, e)) in channels.iter().zip(evals.iter()).enumerate() {
        let (lo, up) = pair_slacks(e, ch.alpha1(), e.b.dot(&u_star));
        slack_lower[i] = lo;
        slack_upper[i] = up;
        if lo.abs() <= FEASIBILITY_TOL {
            active_set.push((i, Side::Lower));
        }
        if up.abs() <= FEASIBILITY_TOL {
            active_set.push((i, Side::Upper));
        }
    }

    Ok(FilterDecision {
        u_star,
        lambda_lower,
        lambda_upper,
        omega_lower,
        omega_upper,
        slack_lower,
        slack_upper,
        active_set,
        k_cbf: correction,
    })
}

/// Left-hand sides of the 2m constraints at an arbitrary input, in the
/// interleaved ordering.
pub fn constraint_slacks(
    channels: &[OutputChannel],
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, CbfError> {
    check_inputs(channels, model, x, u)?;
    let evals = evaluate_channels(channels, x)?;
    let mut out = DVector::<f64>::zeros(2 * channels.len());
    for (i, (ch, e)) in channels.iter().zip(evals.iter()).enumerate() {
        let (lo, up) = pair_slacks(e, ch.alpha1(), e.b.dot(u));
        out[2 * i] = lo;
        out[2 * i + 1] = up;
    }
    Ok(out)
}

/// Maximum deviation of `b_i' G^-1 b_j` from the identity, a numerical
/// health diagnostic for the decoupling that the closed form relies on.
pub fn gram_orthogonality_check(model: &SystemModel, x: &DVector<f64>) -> Result<f64, CbfError> {
    let dec = crate::reldeg::decoupling_matrix(model, x)?;
    let b = dec.matrix;
    let g = b.transpose() * &b;
    let bt = b.transpose();
    let solved = g.lu().solve(&bt).ok_or(CbfError::SingularDecouplingMatrix {
        sigma_min: dec.sigma_min,
        threshold: SINGULARITY_TOL,
    })?;
    let product = &b * solved;
    let m = b.nrows();
    Ok((product - DMatrix::<f64>::identity(m, m)).amax())
}

/// Builds the equivalent quadratic program for the oracle solver, with the
/// Gram cost and interleaved constraint rows.
pub fn qp_instance(
    channels: &[OutputChannel],
    model: &SystemModel,
    x: &DVector<f64>,
    k_d: &DVector<f64>,
) -> Result<QpInstance, CbfError> {
    check_inputs(channels, model, x, k_d)?;
    let m = model.input_dim;
    let evals = evaluate_channels(channels, x)?;
    let b = stacked_b(&evals, m)?;
    let g = b.transpose() * &b;

    let mut c = DVector::<f64>::zeros(2 * m);
    let mut d = DMatrix::<f64>::zeros(2 * m, m);
    for (i, (ch, e)) in channels.iter().zip(evals.iter()).enumerate() {
        let a1 = ch.alpha1();
        c[2 * i] = e.a + a1 * e.h_lower;
        c[2 * i + 1] = -e.a + a1 * e.h_upper;
        for j in 0..m {
            d[(2 * i, j)] = e.b[j];
            d[(2 * i + 1, j)] = -e.b[j];
        }
    }
    QpInstance::new(g, k_d.clone(), c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecbf::OutputChannel;
    use crate::models::{double_integrator_model, planar_drone_model};
    use approx::assert_relative_eq;

    fn drone_setup() -> (Vec<OutputChannel>, SystemModel) {
        let model = planar_drone_model(&Default::default());
        let z = OutputChannel::new("z", model.outputs[0].clone(), 0.0, 2.0, &[-1.0, -1.0]).unwrap();
        let th =
            OutputChannel::new("theta", model.outputs[1].clone(), -1.0, 1.0, &[-1.0, -1.0]).unwrap();
        (vec![z, th], model)
    }

    fn di_setup() -> (Vec<OutputChannel>, SystemModel) {
        let model = double_integrator_model(9.81);
        let cx =
            OutputChannel::new("x", model.outputs[0].clone(), -1.0, 1.0, &[-1.0, -1.0]).unwrap();
        let cz = OutputChannel::new("z", model.outputs[1].clone(), 0.0, 2.0, &[-1.0, -1.0]).unwrap();
        (vec![cx, cz], model)
    }

    #[test]
    fn golden_drone_decision_near_upper_bound() {
        // Climbing at 1 m/s just below the z ceiling while the nominal
        // input holds hover thrust.
        let (channels, model) = drone_setup();
        let x = DVector::from_vec(vec![0.0, 1.9, 0.0, 0.0, 1.0, 0.0]);
        let k_d = DVector::from_vec(vec![9.81, 0.0]);
        let d = closed_form_filter(&channels, &model, &x, &k_d).unwrap();

        assert_relative_eq!(d.omega_lower[0], 3.9, epsilon = 1e-12);
        assert_relative_eq!(d.omega_upper[0], -1.9, epsilon = 1e-12);
        assert_relative_eq!(d.omega_lower[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.omega_upper[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.lambda_upper[0], 1.9, epsilon = 1e-12);
        assert_eq!(d.lambda_lower[0], 0.0);
        assert_relative_eq!(d.u_star[0], 7.91, epsilon = 1e-12);
        assert_relative_eq!(d.u_star[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.k_cbf[0], -1.9, epsilon = 1e-12);
        assert_relative_eq!(d.slack_lower[0], 2.0, epsilon = 1e-12);
        assert!(d.slack_upper[0].abs() <= FEASIBILITY_TOL);
        assert_relative_eq!(d.slack_lower[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.slack_upper[1], 1.0, epsilon = 1e-12);
        assert_eq!(d.active_set, vec![(0, Side::Upper)]);
    }

    #[test]
    fn filter_inactive_when_nominal_is_safe() {
        let (channels, model) = drone_setup();
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let k_d = DVector::from_vec(vec![9.81, 0.0]);
        let d = closed_form_filter(&channels, &model, &x, &k_d).unwrap();
        assert_eq!(d.u_star, k_d);
        assert_eq!(d.k_cbf, DVector::zeros(2));
        assert!(!d.is_active());
        assert!(d.omega_lower.min() >= 0.0 && d.omega_upper.min() >= 0.0);
    }

    #[test]
    fn identity_b_gives_componentwise_correction() {
        let (channels, model) = di_setup();
        let x = DVector::from_vec(vec![0.0, 1.9, 0.0, 1.0]);
        let k_d = DVector::from_vec(vec![0.0, 9.81]);
        let d = closed_form_filter(&channels, &model, &x, &k_d).unwrap();
        for i in 0..2 {
            assert_relative_eq!(
                d.u_star[i],
                k_d[i] + d.lambda_lower[i] - d.lambda_upper[i],
                epsilon = 1e-12
            );
        }
        assert_relative_eq!(d.u_star[1], 7.91, epsilon = 1e-12);
        assert_eq!(d.active_set, vec![(1, Side::Upper)]);
    }

    #[test]
    fn multipliers_never_both_positive() {
        let (channels, model) = drone_setup();
        for k in 0..40 {
            let t = k as f64 / 39.0;
            let x = DVector::from_vec(vec![
                -1.0 + 2.0 * t,
                -0.5 + 3.0 * t,
                -1.3 + 2.6 * t,
                4.0 * t - 2.0,
                3.0 - 6.0 * t,
                2.0 * t - 1.0,
            ]);
            let k_d = DVector::from_vec(vec![40.0 * t - 20.0, 10.0 - 20.0 * t]);
            let d = closed_form_filter(&channels, &model, &x, &k_d).unwrap();
            for i in 0..2 {
                assert!(d.lambda_lower[i] == 0.0 || d.lambda_upper[i] == 0.0);
                assert!(d.lambda_lower[i] >= 0.0 && d.lambda_upper[i] >= 0.0);
            }
        }
    }

    #[test]
    fn pair_sum_matches_box_width_for_any_input() {
        let (channels, model) = drone_setup();
        let x = DVector::from_vec(vec![0.4, 1.2, -0.6, 1.0, -2.0, 0.5]);
        for u in [
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![15.0, -3.0]),
            DVector::from_vec(vec![-7.5, 0.2]),
        ] {
            let s = constraint_slacks(&channels, &model, &x, &u).unwrap();
            for (i, ch) in channels.iter().enumerate() {
                let sum = s[2 * i] + s[2 * i + 1];
                let want = ch.alpha1() * ch.width();
                assert_relative_eq!(sum, want, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn resting_double_integrator_lower_slack() {
        let (channels, model) = di_setup();
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        let u = DVector::from_vec(vec![0.0, 9.81]);
        let s = constraint_slacks(&channels, &model, &x, &u).unwrap();
        // x channel at origin with zero velocity and zero net force.
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn decision_slacks_match_qp_instance() {
        let (channels, model) = drone_setup();
        let x = DVector::from_vec(vec![0.0, 1.9, 0.2, 0.0, 1.0, -0.3]);
        let k_d = DVector::from_vec(vec![9.81, 0.5]);
        let d = closed_form_filter(&channels, &model, &x, &k_d).unwrap();
        let inst = qp_instance(&channels, &model, &x, &k_d).unwrap();
        let qp_slacks = inst.slacks(&d.u_star);
        let dec_slacks = d.interleaved_slacks();
        for j in 0..4 {
            assert_relative_eq!(qp_slacks[j], dec_slacks[j], epsilon = 1e-12);
        }
        let res = crate::qp::kkt_residuals(&inst, &d.u_star, &d.interleaved_lambdas());
        assert!(res.max() <= 1e-9, "{res:?}");
    }

    #[test]
    fn gram_orthogonality_identity_and_drift() {
        let (_, di) = di_setup();
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(gram_orthogonality_check(&di, &x).unwrap(), 0.0);

        let drone = planar_drone_model(&Default::default());
        let x = DVector::from_vec(vec![0.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
        assert!(gram_orthogonality_check(&drone, &x).unwrap() <= 1e-10);

        // Near the singularity the identity degrades measurably.
        let x = DVector::from_vec(vec![0.0, 1.0, 1.56, 0.0, 0.0, 0.0]);
        let dev = gram_orthogonality_check(&drone, &x).unwrap();
        assert!(dev.is_finite());
    }

    #[test]
    fn nonfinite_nominal_input_rejected() {
        let (channels, model) = drone_setup();
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let k_d = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(
            closed_form_filter(&channels, &model, &x, &k_d),
            Err(CbfError::NonFinite { .. })
        ));
    }
}
