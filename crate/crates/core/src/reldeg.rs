//! Decoupling matrix assembly and numeric relative-degree auditing.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::CbfError;
use crate::system::SystemModel;

/// Smallest singular value below which the decoupling matrix counts as
/// singular.
pub const SINGULARITY_TOL: f64 = 1e-9;

/// Default perturbation size for the finite-difference audit.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// The stacked decoupling rows at one state, with conditioning data.
#[derive(Debug, Clone)]
pub struct DecouplingMatrix {
    pub matrix: DMatrix<f64>,
    pub sigma_min: f64,
}

/// Stacks the `b_row` evaluators into the square decoupling matrix.
///
/// Errors with [`CbfError::SingularDecouplingMatrix`] when the smallest
/// singular value drops below [`SINGULARITY_TOL`], which signals that the
/// vector relative degree fails at `x`.
pub fn decoupling_matrix(model: &SystemModel, x: &DVector<f64>) -> Result<DecouplingMatrix, CbfError> {
    model.check_state(x)?;
    let m = model.input_dim;
    if model.outputs.len() != m {
        return Err(CbfError::Dimension {
            context: format!("output list of model '{}'", model.name),
            expected: m,
            got: model.outputs.len(),
        });
    }
    let mut matrix = DMatrix::<f64>::zeros(m, m);
    for (i, evaluator) in model.outputs.iter().enumerate() {
        let row = (evaluator.b_row)(x);
        if row.len() != m {
            return Err(CbfError::Dimension {
                context: format!("b_row of output {i} of model '{}'", model.name),
                expected: m,
                got: row.len(),
            });
        }
        for j in 0..m {
            matrix[(i, j)] = row[j];
        }
    }
    let sigma_min = matrix
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |acc, &s| acc.min(s));
    if sigma_min < SINGULARITY_TOL {
        return Err(CbfError::SingularDecouplingMatrix {
            sigma_min,
            threshold: SINGULARITY_TOL,
        });
    }
    Ok(DecouplingMatrix { matrix, sigma_min })
}

/// Outcome of the audit at a single state.
#[derive(Debug, Clone)]
pub struct SampleCheck {
    pub state: DVector<f64>,
    pub in_region: bool,
    /// Smallest singular value of the stacked decoupling rows.
    pub sigma_min: f64,
    pub b_ok: bool,
    /// Largest finite-difference estimate of a Lie derivative that must
    /// vanish, `|L_g L_f^j y_i|` over all channels, levels `j < r_i - 1`,
    /// and input directions.
    pub worst_residual: f64,
    /// `(channel, level j, input column)` of `worst_residual`.
    pub worst_location: Option<(usize, usize, usize)>,
    pub fd_ok: bool,
    pub pass: bool,
}

/// Full audit report over a sample set.
#[derive(Debug, Clone)]
pub struct RelDegReport {
    pub fd_step: f64,
    pub samples: Vec<SampleCheck>,
    pub failures: usize,
    pub pass: bool,
}

impl RelDegReport {
    /// The failing or worst sample, preferring failures.
    pub fn worst(&self) -> Option<&SampleCheck> {
        self.samples
            .iter()
            .filter(|s| !s.pass)
            .chain(self.samples.iter())
            .max_by(|a, b| {
                let ka = (!a.pass, a.worst_residual);
                let kb = (!b.pass, b.worst_residual);
                ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
            })
    }
}

impl fmt::Display for RelDegReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "relative-degree audit: {} samples, {} failures (fd_step = {:.1e})",
            self.samples.len(),
            self.failures,
            self.fd_step
        )?;
        if let Some(w) = self.worst() {
            writeln!(
                f,
                "  worst sample: pass = {}, in_region = {}, sigma_min = {:.3e}, max |L_g L_f^j y_i| = {:.3e} at {:?}",
                w.pass, w.in_region, w.sigma_min, w.worst_residual, w.worst_location
            )?;
        }
        write!(f, "  overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Numerically audits the declared relative-degree structure at each sample.
///
/// For every channel and every level `j < r_i - 1` the audit estimates
/// `L_g L_f^j y_i` by central differences of the analytic chain along each
/// column of `g(x)` and requires the estimate to vanish within `1e-6` scaled
/// by the chain magnitude. It also requires the stacked decoupling rows to
/// clear [`SINGULARITY_TOL`] and the sample to lie in the valid region.
/// Failures are report entries, never errors.
pub fn verify_relative_degree(
    model: &SystemModel,
    samples: &[DVector<f64>],
    fd_step: f64,
) -> RelDegReport {
    let m = model.input_dim;
    let mut checks = Vec::with_capacity(samples.len());
    for x in samples {
        if x.len() != model.state_dim || x.iter().any(|v| !v.is_finite()) {
            checks.push(SampleCheck {
                state: x.clone(),
                in_region: false,
                sigma_min: f64::NAN,
                b_ok: false,
                worst_residual: f64::NAN,
                worst_location: None,
                fd_ok: false,
                pass: false,
            });
            continue;
        }
        let in_region = (model.valid_region)(x);
        let g = (model.control_matrix)(x);

        let mut b = DMatrix::<f64>::zeros(m, m);
        for (i, evaluator) in model.outputs.iter().enumerate() {
            let row = (evaluator.b_row)(x);
            for j in 0..m.min(row.len()) {
                b[(i, j)] = row[j];
            }
        }
        let sigma_min = b
            .singular_values()
            .iter()
            .fold(f64::INFINITY, |acc, &s| acc.min(s));
        let b_ok = sigma_min >= SINGULARITY_TOL;

        let mut worst_residual = 0.0_f64;
        let mut worst_location = None;
        let mut fd_ok = true;
        for (i, evaluator) in model.outputs.iter().enumerate() {
            let r = evaluator.rel_degree;
            let chain = (evaluator.lie_f_chain)(x);
            let y0 = (evaluator.y)(x);
            let scale = 1.0 + chain.amax().max(y0.abs());
            let tol = 1e-6 * scale;
            for k in 0..m {
                let dir = g.column(k).clone_owned();
                let xp = x + &dir * fd_step;
                let xm = x - &dir * fd_step;
                for j in 0..r.saturating_sub(1) {
                    let fp = if j == 0 {
                        (evaluator.y)(&xp)
                    } else {
                        (evaluator.lie_f_chain)(&xp)[j - 1]
                    };
                    let fm = if j == 0 {
                        (evaluator.y)(&xm)
                    } else {
                        (evaluator.lie_f_chain)(&xm)[j - 1]
                    };
                    let estimate = ((fp - fm) / (2.0 * fd_step)).abs();
                    if estimate > worst_residual {
                        worst_residual = estimate;
                        worst_location = Some((i, j, k));
                    }
                    if estimate > tol {
                        fd_ok = false;
                    }
                }
            }
        }

        let pass = in_region && b_ok && fd_ok;
        checks.push(SampleCheck {
            state: x.clone(),
            in_region,
            sigma_min,
            b_ok,
            worst_residual,
            worst_location,
            fd_ok,
            pass,
        });
    }
    let failures = checks.iter().filter(|c| !c.pass).count();
    RelDegReport {
        fd_step,
        samples: checks,
        failures,
        pass: failures == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{double_integrator_model, planar_drone_model, PlanarDroneParams};
    use approx::assert_relative_eq;

    #[test]
    fn drone_decoupling_matrix_at_level_attitude() {
        let model = planar_drone_model(&Default::default());
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = decoupling_matrix(&model, &x).unwrap();
        assert_relative_eq!(d.matrix[(0, 0)], 1.0);
        assert_relative_eq!(d.matrix[(1, 1)], 1.0);
        assert_relative_eq!(d.matrix[(0, 1)], 0.0);
        assert_relative_eq!(d.matrix[(1, 0)], 0.0);
        assert_relative_eq!(d.sigma_min, 1.0);
    }

    #[test]
    fn drone_decoupling_fails_outside_region() {
        let model = planar_drone_model(&Default::default());
        let x = DVector::from_vec(vec![0.0, 1.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
        assert!(matches!(
            decoupling_matrix(&model, &x),
            Err(CbfError::OutsideValidRegion { .. })
        ));
    }

    #[test]
    fn drone_decoupling_rank_error_at_exact_singularity() {
        // Margin 0 admits theta = pi/2, where cos(theta) underflows the
        // singularity threshold.
        let params = PlanarDroneParams {
            gravity: 9.81,
            theta_margin: 0.0,
        };
        let model = planar_drone_model(&params);
        let x = DVector::from_vec(vec![0.0, 1.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
        assert!(matches!(
            decoupling_matrix(&model, &x),
            Err(CbfError::SingularDecouplingMatrix { .. })
        ));
    }

    #[test]
    fn double_integrator_decoupling_is_identity() {
        let model = double_integrator_model(9.81);
        let x = DVector::from_vec(vec![0.3, -0.7, 2.0, 1.0]);
        let d = decoupling_matrix(&model, &x).unwrap();
        assert_eq!(d.matrix, DMatrix::identity(2, 2));
    }

    #[test]
    fn audit_passes_on_valid_drone_samples() {
        let model = planar_drone_model(&Default::default());
        let mut samples = Vec::new();
        for i in 0..100 {
            let t = i as f64 / 99.0;
            samples.push(DVector::from_vec(vec![
                -2.0 + 4.0 * t,
                0.5 + t,
                -1.0 + 2.0 * t,
                1.0 - 2.0 * t,
                -0.5 + t,
                2.0 * t - 1.0,
            ]));
        }
        let report = verify_relative_degree(&model, &samples, DEFAULT_FD_STEP);
        assert!(report.pass, "{report}");
    }

    #[test]
    fn audit_flags_out_of_region_sample() {
        let model = planar_drone_model(&Default::default());
        let samples = vec![DVector::from_vec(vec![0.0, 1.0, 1.57, 0.0, 0.0, 0.0])];
        let report = verify_relative_degree(&model, &samples, DEFAULT_FD_STEP);
        assert!(!report.pass);
        assert!(!report.samples[0].in_region);
    }

    #[test]
    fn audit_flags_singular_decoupling_at_margin_zero() {
        let params = PlanarDroneParams {
            gravity: 9.81,
            theta_margin: 0.0,
        };
        let model = planar_drone_model(&params);
        let samples = vec![DVector::from_vec(vec![
            0.0,
            1.0,
            std::f64::consts::FRAC_PI_2,
            0.0,
            0.0,
            0.0,
        ])];
        let report = verify_relative_degree(&model, &samples, DEFAULT_FD_STEP);
        assert!(!report.pass);
        assert!(report.samples[0].in_region);
        assert!(!report.samples[0].b_ok);
    }

    #[test]
    fn audit_passes_on_double_integrator() {
        let model = double_integrator_model(9.81);
        let samples: Vec<_> = (0..50)
            .map(|i| {
                let t = i as f64 / 49.0;
                DVector::from_vec(vec![t, 1.0 - t, 2.0 * t, -t])
            })
            .collect();
        let report = verify_relative_degree(&model, &samples, DEFAULT_FD_STEP);
        assert!(report.pass, "{report}");
    }
}
