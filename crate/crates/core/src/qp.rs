//! Brute-force exact solver for the safety-filter quadratic program.
//!
//! The program is
//!
//! ```text
//! minimize   (1/2) (u - k_d)' G (u - k_d)
//! subject to c + D u >= 0
//! ```
//!
//! with `2m` constraints whose rows come in opposite-sign pairs, one lower
//! and one upper constraint per output channel. The solver enumerates every
//! candidate active set of size at most `m` that does not contain both rows
//! of a pair, solves the equality-constrained KKT system for each, and keeps
//! the feasible candidate with nonnegative multipliers and minimum
//! objective. Enumeration is exact for this convex program and has no
//! pivoting or cycling concerns, at the price of exponential cost in `m`;
//! it is intended as a verification oracle for small systems, not a
//! production solver.

use nalgebra::{DMatrix, DVector};

use crate::error::CbfError;

/// Multiplier nonnegativity tolerance when accepting a candidate.
pub const LAMBDA_TOL: f64 = 1e-12;
/// Primal feasibility tolerance when accepting a candidate.
pub const SLACK_TOL: f64 = 1e-10;
/// Condition-number ceiling for candidate KKT systems.
pub const CONDITION_LIMIT: f64 = 1e12;

/// One instance of the filter QP.
#[derive(Debug, Clone)]
pub struct QpInstance {
    pub g: DMatrix<f64>,
    pub k_d: DVector<f64>,
    /// Constraint constants, interleaved (lower_1, upper_1, lower_2, ...).
    pub c: DVector<f64>,
    /// Constraint rows, same ordering; row `2i+1` equals `-row 2i`.
    pub d: DMatrix<f64>,
}

impl QpInstance {
    /// Validates symmetry and positive definiteness of `G`, shapes, and the
    /// opposite-sign pair structure of `D`.
    pub fn new(
        g: DMatrix<f64>,
        k_d: DVector<f64>,
        c: DVector<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, CbfError> {
        let m = k_d.len();
        if g.nrows() != m || g.ncols() != m {
            return Err(CbfError::Dimension {
                context: "QP cost matrix".to_string(),
                expected: m,
                got: g.nrows().max(g.ncols()),
            });
        }
        if c.len() != 2 * m || d.nrows() != 2 * m || d.ncols() != m {
            return Err(CbfError::Dimension {
                context: "QP constraint data".to_string(),
                expected: 2 * m,
                got: c.len().max(d.nrows()),
            });
        }
        let g_scale = 1.0 + g.amax();
        let asym = (&g - g.transpose()).amax();
        if asym > 1e-12 * g_scale {
            return Err(CbfError::InvalidInstance {
                detail: format!("cost matrix asymmetry {asym:.3e} exceeds tolerance"),
            });
        }
        let min_eig = g
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &e| acc.min(e));
        if !(min_eig > 0.0) {
            return Err(CbfError::InvalidInstance {
                detail: format!("cost matrix minimum eigenvalue {min_eig:.3e} is not positive"),
            });
        }
        let d_scale = 1.0 + d.amax();
        for i in 0..m {
            let mismatch = (d.row(2 * i + 1) + d.row(2 * i)).amax();
            if mismatch > 1e-12 * d_scale {
                return Err(CbfError::InvalidInstance {
                    detail: format!(
                        "constraint rows {} and {} are not opposite-sign pairs (mismatch {mismatch:.3e})",
                        2 * i,
                        2 * i + 1
                    ),
                });
            }
        }
        Ok(Self { g, k_d, c, d })
    }

    pub fn m(&self) -> usize {
        self.k_d.len()
    }

    /// Constraint left-hand sides `c + D u` at an input.
    pub fn slacks(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.c + &self.d * u
    }

    /// Objective `(1/2) (u - k_d)' G (u - k_d)`.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let du = u - &self.k_d;
        0.5 * du.dot(&(&self.g * &du))
    }
}

/// Primal-dual solution produced by the oracle.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Full multiplier vector, zero outside the active set.
    pub lambda: DVector<f64>,
    /// Active constraint indices into the interleaved ordering.
    pub active: Vec<usize>,
    pub objective: f64,
}

/// Residuals of the four KKT conditions.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `|| G (u - k_d) - D' lambda ||_inf`
    pub stationarity: f64,
    /// `max(0, -min_j slack_j)`
    pub primal: f64,
    /// `max(0, -min_j lambda_j)`
    pub dual: f64,
    /// `max_j |lambda_j slack_j|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Evaluates the KKT residuals of any primal-dual pair for an instance.
pub fn kkt_residuals(inst: &QpInstance, u: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let stationarity = (&inst.g * (u - &inst.k_d) - inst.d.transpose() * lambda).amax();
    let slacks = inst.slacks(u);
    let primal = (-slacks.min()).max(0.0);
    let dual = (-lambda.min()).max(0.0);
    let complementarity = lambda
        .iter()
        .zip(slacks.iter())
        .map(|(l, s)| (l * s).abs())
        .fold(0.0_f64, f64::max);
    KktResiduals {
        stationarity,
        primal,
        dual,
        complementarity,
    }
}

/// Solves the instance exactly by enumerating candidate active sets.
///
/// Candidates with a KKT system whose estimated condition number exceeds
/// [`CONDITION_LIMIT`] are skipped; if nothing is accepted the error reports
/// conditioning when any candidate was skipped for it and infeasibility
/// otherwise.
pub fn solve_active_set_enumeration(inst: &QpInstance) -> Result<QpSolution, CbfError> {
    let m = inst.m();
    let nc = 2 * m;
    assert!(m <= 12, "enumeration oracle is limited to m <= 12 inputs");

    let mut best: Option<QpSolution> = None;
    let mut worst_skipped_cond: Option<f64> = None;

    for mask in 0_u32..(1_u32 << nc) {
        if mask.count_ones() as usize > m {
            continue;
        }
        if (0..m).any(|i| (mask >> (2 * i)) & 3 == 3) {
            continue;
        }
        let active: Vec<usize> = (0..nc).filter(|j| (mask >> j) & 1 == 1).collect();
        let na = active.len();
        let dim = m + na;

        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        kkt.view_mut((0, 0), (m, m)).copy_from(&inst.g);
        for (a, &j) in active.iter().enumerate() {
            for col in 0..m {
                kkt[(col, m + a)] = -inst.d[(j, col)];
                kkt[(m + a, col)] = inst.d[(j, col)];
            }
        }
        let mut rhs = DVector::<f64>::zeros(dim);
        let gk = &inst.g * &inst.k_d;
        rhs.rows_mut(0, m).copy_from(&gk);
        for (a, &j) in active.iter().enumerate() {
            rhs[m + a] = -inst.c[j];
        }

        let sv = kkt.singular_values();
        let (s_max, s_min) = sv
            .iter()
            .fold((0.0_f64, f64::INFINITY), |(mx, mn), &s| (mx.max(s), mn.min(s)));
        let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
        if cond > CONDITION_LIMIT {
            worst_skipped_cond = Some(worst_skipped_cond.map_or(cond, |w: f64| w.max(cond)));
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            worst_skipped_cond = Some(f64::INFINITY);
            continue;
        };

        let u = sol.rows(0, m).clone_owned();
        let lam_active = sol.rows(m, na).clone_owned();
        if lam_active.iter().any(|&l| l < -LAMBDA_TOL) {
            continue;
        }
        if inst.slacks(&u).iter().any(|&s| s < -SLACK_TOL) {
            continue;
        }
        let mut lambda = DVector::<f64>::zeros(nc);
        for (a, &j) in active.iter().enumerate() {
            lambda[j] = lam_active[a];
        }
        let objective = inst.objective(&u);
        let better = best
            .as_ref()
            .map(|b| objective < b.objective)
            .unwrap_or(true);
        if better {
            best = Some(QpSolution {
                u,
                lambda,
                active,
                objective,
            });
        }
    }

    match best {
        Some(solution) => Ok(solution),
        None => match worst_skipped_cond {
            Some(cond) => Err(CbfError::IllConditioned { cond }),
            None => Err(CbfError::Infeasible {
                detail: "no candidate active set produced a feasible KKT point".to_string(),
            }),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_box_instance(k_d: f64) -> QpInstance {
        QpInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, k_d),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        )
        .unwrap()
    }

    #[test]
    fn interior_optimum_returns_nominal() {
        let inst = scalar_box_instance(0.0);
        let sol = solve_active_set_enumeration(&inst).unwrap();
        assert_relative_eq!(sol.u[0], 0.0);
        assert!(sol.active.is_empty());
        assert_eq!(sol.lambda, DVector::zeros(2));
    }

    #[test]
    fn clipped_optimum_with_hand_multiplier() {
        // Projecting k_d = -3 onto [-1, 1] gives u = -1 with lower-row
        // multiplier u - k_d = 2.
        let inst = scalar_box_instance(-3.0);
        let sol = solve_active_set_enumeration(&inst).unwrap();
        assert_relative_eq!(sol.u[0], -1.0);
        assert_eq!(sol.active, vec![0]);
        assert_relative_eq!(sol.lambda[0], 2.0);
        assert_relative_eq!(sol.lambda[1], 0.0);
        let res = kkt_residuals(&inst, &sol.u, &sol.lambda);
        assert!(res.max() <= 1e-10, "{res:?}");
    }

    #[test]
    fn residuals_zero_for_feasible_nominal() {
        let inst = scalar_box_instance(0.5);
        let res = kkt_residuals(&inst, &inst.k_d.clone(), &DVector::zeros(2));
        assert_eq!(res.stationarity, 0.0);
        assert_eq!(res.primal, 0.0);
        assert_eq!(res.dual, 0.0);
        assert_eq!(res.complementarity, 0.0);
    }

    #[test]
    fn corrupted_multiplier_is_detected() {
        let inst = scalar_box_instance(-3.0);
        let sol = solve_active_set_enumeration(&inst).unwrap();
        let mut bad = sol.lambda.clone();
        bad[1] = -0.5;
        let res = kkt_residuals(&inst, &sol.u, &bad);
        assert!(res.dual > 0.0);
    }

    #[test]
    fn infeasible_instance_is_reported() {
        // Both sides of the pair demand |u| >= 10 in opposite directions.
        let inst = QpInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            DVector::from_vec(vec![-10.0, -10.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        )
        .unwrap();
        assert!(matches!(
            solve_active_set_enumeration(&inst),
            Err(CbfError::Infeasible { .. })
        ));
    }

    #[test]
    fn construction_rejects_structural_violations() {
        let g = DMatrix::from_element(1, 1, 1.0);
        let kd = DVector::from_element(1, 0.0);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        // Rows that are not an opposite-sign pair.
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            QpInstance::new(g.clone(), kd.clone(), c.clone(), d),
            Err(CbfError::InvalidInstance { .. })
        ));
        // Indefinite cost.
        let d = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert!(matches!(
            QpInstance::new(DMatrix::from_element(1, 1, -1.0), kd, c, d),
            Err(CbfError::InvalidInstance { .. })
        ));
    }

    #[test]
    fn two_channel_instance_clips_each_side_independently() {
        // G = I, channel 1 pushed below its lower bound, channel 2 feasible.
        let g = DMatrix::identity(2, 2);
        let kd = DVector::from_vec(vec![-5.0, 0.3]);
        let c = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let d = DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        );
        let inst = QpInstance::new(g, kd, c, d).unwrap();
        let sol = solve_active_set_enumeration(&inst).unwrap();
        assert_relative_eq!(sol.u[0], -1.0);
        assert_relative_eq!(sol.u[1], 0.3);
        assert_eq!(sol.active, vec![0]);
        assert_relative_eq!(sol.lambda[0], 4.0);
    }
}
