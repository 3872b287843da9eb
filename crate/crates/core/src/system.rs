use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::CbfError;

/// Scalar-valued function of the state.
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Vector-valued function of the state.
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Matrix-valued function of the state.
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Predicate delimiting the region where a model's structure is trusted.
pub type RegionFn = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// One scalar output `y_i` with analytic Lie-derivative data up to its
/// relative degree `r_i`.
///
/// `lie_f_chain` returns `(L_f y, L_f^2 y, ..., L_f^{r_i} y)`, so entry `j`
/// is the `(j+1)`-th drift derivative and the output value itself comes from
/// `y`. `b_row` is `L_g L_f^{r_i - 1} y`, the channel's row of the
/// decoupling matrix. All closures must be pure; they are shared freely
/// across threads.
pub struct OutputChannelEvaluator {
    pub rel_degree: usize,
    pub y: ScalarFn,
    pub lie_f_chain: VectorFn,
    pub b_row: VectorFn,
    pub valid_region: RegionFn,
}

impl fmt::Debug for OutputChannelEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutputChannelEvaluator")
            .field("rel_degree", &self.rel_degree)
            .finish_non_exhaustive()
    }
}

/// A control-affine plant `x' = f(x) + g(x) u` with one output channel per
/// input (square system).
///
/// Drift, control matrix, and the per-output chains are analytic closures
/// supplied by the model author; [`crate::reldeg::verify_relative_degree`]
/// audits them numerically against finite differences.
pub struct SystemModel {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub drift: VectorFn,
    pub control_matrix: MatrixFn,
    pub outputs: Vec<Arc<OutputChannelEvaluator>>,
    pub output_names: Vec<String>,
    pub state_names: Vec<String>,
    pub valid_region: RegionFn,
    /// Human-readable description of the valid region, used in diagnostics.
    pub region_desc: String,
}

impl SystemModel {
    /// Checks dimension, finiteness, and valid-region membership of a state.
    pub fn check_state(&self, x: &DVector<f64>) -> Result<(), CbfError> {
        if x.len() != self.state_dim {
            return Err(CbfError::Dimension {
                context: format!("state for model '{}'", self.name),
                expected: self.state_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CbfError::NonFinite {
                context: format!("state for model '{}'", self.name),
            });
        }
        if !(self.valid_region)(x) {
            return Err(CbfError::OutsideValidRegion {
                detail: format!("model '{}' requires {}", self.name, self.region_desc),
            });
        }
        Ok(())
    }

    /// Closed-loop vector field under a constant (held) input.
    pub fn held_input_field<'a>(
        &'a self,
        u: &'a DVector<f64>,
    ) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'a {
        move |x: &DVector<f64>| (self.drift)(x) + (self.control_matrix)(x) * u
    }
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("outputs", &self.outputs.len())
            .finish_non_exhaustive()
    }
}
