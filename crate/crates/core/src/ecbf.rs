//! Exponential-CBF gain algebra and per-channel barrier evaluation.
//!
//! A channel with relative degree `r` gets a gain vector `alpha` from `r`
//! negative real roots `nu` through the expansion
//!
//! ```text
//! s^r + alpha[r-1] s^{r-1} + ... + alpha[0] = prod_k (s - nu_k)
//! ```
//!
//! so `alpha[j]` multiplies `s^j` and `alpha[0] = prod_k(-nu_k) > 0`. The
//! auxiliary cascade is `psi_0 = h` and `psi_i = d/dt psi_{i-1} - nu_i
//! psi_{i-1}`; expanding the operator product gives each `psi_i` as a fixed
//! linear combination of `h, L_f h, ..., L_f^i h`, captured by the
//! lower-triangular coefficient matrix of [`psi_coefficients`].

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::CbfError;
use crate::system::OutputChannelEvaluator;

/// Expands `prod_k (s - nu_k)` and returns the low-order coefficients
/// `alpha`, dropping the leading monic one.
///
/// Every root must be strictly negative and finite, which makes every gain
/// positive and in particular `alpha[0] > 0`.
pub fn alpha_from_roots(roots: &[f64]) -> Result<Vec<f64>, CbfError> {
    if roots.is_empty() {
        return Err(CbfError::Dimension {
            context: "alpha_from_roots root vector".to_string(),
            expected: 1,
            got: 0,
        });
    }
    for (index, &nu) in roots.iter().enumerate() {
        if !nu.is_finite() || nu >= 0.0 {
            return Err(CbfError::InvalidRoot { index, value: nu });
        }
    }
    // Iterative convolution with the monomial (s - nu), coefficients stored
    // low order first.
    let mut coeffs = vec![1.0_f64];
    for &nu in roots {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= nu * c;
        }
        coeffs = next;
    }
    coeffs.truncate(roots.len());
    Ok(coeffs)
}

/// Recovers the characteristic roots of a gain vector as the eigenvalues of
/// the companion matrix of `s^r + alpha[r-1] s^{r-1} + ... + alpha[0]`.
///
/// Diagnostic inverse of [`alpha_from_roots`]; gains produced from negative
/// real roots come back as those roots up to eigensolver accuracy.
pub fn roots_from_alpha(alpha: &[f64]) -> Vec<Complex<f64>> {
    let r = alpha.len();
    if r == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::<f64>::zeros(r, r);
    for i in 1..r {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..r {
        companion[(i, r - 1)] = -alpha[i];
    }
    companion.complex_eigenvalues().iter().copied().collect()
}

/// Coefficient matrix of the psi cascade.
///
/// Row `i` (0-indexed) holds `c_{i,k}` with `psi_i = sum_k c_{i,k} L_f^k h`,
/// obtained by expanding `prod_{j=1..i} (d/dt - nu_j)` applied to `h`. Row 0
/// is always `(1)`, and row `i` only involves the first `i` roots. The rows
/// stop at `r - 1` because `psi_r` is the input-dependent constraint level.
pub fn psi_coefficients(roots: &[f64]) -> Result<DMatrix<f64>, CbfError> {
    if roots.is_empty() {
        return Err(CbfError::Dimension {
            context: "psi_coefficients root vector".to_string(),
            expected: 1,
            got: 0,
        });
    }
    if roots.iter().any(|nu| !nu.is_finite()) {
        return Err(CbfError::NonFinite {
            context: "psi_coefficients root vector".to_string(),
        });
    }
    let r = roots.len();
    let mut c = DMatrix::<f64>::zeros(r, r);
    c[(0, 0)] = 1.0;
    for i in 1..r {
        let nu = roots[i - 1];
        for k in 0..=i {
            let from_derivative = if k >= 1 { c[(i - 1, k - 1)] } else { 0.0 };
            c[(i, k)] = from_derivative - nu * c[(i - 1, k)];
        }
    }
    Ok(c)
}

/// One box-constrained output channel: bounds, roots, derived gains, and the
/// evaluator that supplies its Lie-derivative data.
///
/// Constructed through [`OutputChannel::new`], which derives `alpha` and the
/// psi coefficients from the roots and rejects empty boxes. Treat the fields
/// as read-only afterwards.
#[derive(Debug, Clone)]
pub struct OutputChannel {
    pub name: String,
    pub evaluator: Arc<OutputChannelEvaluator>,
    pub lower: f64,
    pub upper: f64,
    pub roots: Vec<f64>,
    pub alpha: Vec<f64>,
    pub psi_coeffs: DMatrix<f64>,
}

impl OutputChannel {
    pub fn new(
        name: impl Into<String>,
        evaluator: Arc<OutputChannelEvaluator>,
        lower: f64,
        upper: f64,
        roots: &[f64],
    ) -> Result<Self, CbfError> {
        let name = name.into();
        if !(upper > lower) {
            return Err(CbfError::InvalidBounds {
                channel: name,
                lower,
                upper,
            });
        }
        if roots.len() != evaluator.rel_degree {
            return Err(CbfError::Dimension {
                context: format!("roots for channel '{name}'"),
                expected: evaluator.rel_degree,
                got: roots.len(),
            });
        }
        let alpha = alpha_from_roots(roots)?;
        assert!(
            alpha[0] > 0.0,
            "product of negated negative roots must be positive"
        );
        let psi_coeffs = psi_coefficients(roots)?;
        Ok(Self {
            name,
            evaluator,
            lower,
            upper,
            roots: roots.to_vec(),
            alpha,
            psi_coeffs,
        })
    }

    /// The constant-term gain, the coefficient of `s^0`.
    pub fn alpha1(&self) -> f64 {
        self.alpha[0]
    }

    /// Width of the box, `upper - lower`.
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Everything the filter needs from one channel at one state.
///
/// `h_lower = y - lower` and `h_upper = upper - y`, so their sum is the box
/// width exactly. The derivative stacks hold `(h, L_f y, ..., L_f^{r-1} y)`
/// with the sign of the respective barrier, so entries beyond index 0 are
/// negatives of each other. `a` is the drift part of the constraint level,
/// `L_f^r y + sum_{j=1}^{r-1} alpha[j] L_f^j y`, and `b` is the channel's
/// decoupling row.
#[derive(Debug, Clone)]
pub struct EcbfEvaluation {
    pub h_lower: f64,
    pub h_upper: f64,
    pub h_derivs_lower: DVector<f64>,
    pub h_derivs_upper: DVector<f64>,
    pub a: f64,
    pub b: DVector<f64>,
    pub psi_lower: DVector<f64>,
    pub psi_upper: DVector<f64>,
}

/// Evaluates the paired barriers of one channel at a state.
pub fn evaluate_channel(
    channel: &OutputChannel,
    x: &DVector<f64>,
) -> Result<EcbfEvaluation, CbfError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CbfError::NonFinite {
            context: format!("state passed to channel '{}'", channel.name),
        });
    }
    if !(channel.evaluator.valid_region)(x) {
        return Err(CbfError::OutsideValidRegion {
            detail: format!("channel '{}' evaluated outside the valid region", channel.name),
        });
    }
    let r = channel.evaluator.rel_degree;
    let y = (channel.evaluator.y)(x);
    let chain = (channel.evaluator.lie_f_chain)(x);
    if chain.len() != r {
        return Err(CbfError::Dimension {
            context: format!("lie_f_chain of channel '{}'", channel.name),
            expected: r,
            got: chain.len(),
        });
    }
    let b = (channel.evaluator.b_row)(x);

    let h_lower = y - channel.lower;
    let h_upper = channel.upper - y;
    let mut h_derivs_lower = DVector::<f64>::zeros(r);
    let mut h_derivs_upper = DVector::<f64>::zeros(r);
    h_derivs_lower[0] = h_lower;
    h_derivs_upper[0] = h_upper;
    for j in 1..r {
        h_derivs_lower[j] = chain[j - 1];
        h_derivs_upper[j] = -chain[j - 1];
    }
    let psi_lower = &channel.psi_coeffs * &h_derivs_lower;
    let psi_upper = &channel.psi_coeffs * &h_derivs_upper;

    let mut a = chain[r - 1];
    for j in 1..r {
        a += channel.alpha[j] * chain[j - 1];
    }

    Ok(EcbfEvaluation {
        h_lower,
        h_upper,
        h_derivs_lower,
        h_derivs_upper,
        a,
        b,
        psi_lower,
        psi_upper,
    })
}

/// Evaluates every channel at a state, preserving order.
pub fn evaluate_channels(
    channels: &[OutputChannel],
    x: &DVector<f64>,
) -> Result<Vec<EcbfEvaluation>, CbfError> {
    channels.iter().map(|ch| evaluate_channel(ch, x)).collect()
}

/// Membership result for one channel's pair of barrier cascades.
#[derive(Debug, Clone)]
pub struct ChannelMembership {
    pub name: String,
    pub lower_member: bool,
    pub upper_member: bool,
    /// Minimum over `psi_lower[0..r]`; nonnegative iff `lower_member`.
    pub lower_margin: f64,
    /// Minimum over `psi_upper[0..r]`; nonnegative iff `upper_member`.
    pub upper_margin: f64,
}

/// Tests membership of the input-independent safe set, channel by channel.
///
/// Only the cascade levels `0..r-1` enter; the top level depends on the
/// input and is the controller's obligation rather than a state property.
pub fn safe_set_membership(
    channels: &[OutputChannel],
    x: &DVector<f64>,
) -> Result<Vec<ChannelMembership>, CbfError> {
    channels
        .iter()
        .map(|ch| {
            let eval = evaluate_channel(ch, x)?;
            let lower_margin = eval.psi_lower.min();
            let upper_margin = eval.psi_upper.min();
            Ok(ChannelMembership {
                name: ch.name.clone(),
                lower_member: lower_margin >= 0.0,
                upper_member: upper_margin >= 0.0,
                lower_margin,
                upper_margin,
            })
        })
        .collect()
}

/// True iff every cascade of every channel is nonnegative at `x`.
pub fn in_safe_set(channels: &[OutputChannel], x: &DVector<f64>) -> Result<bool, CbfError> {
    Ok(safe_set_membership(channels, x)?
        .iter()
        .all(|m| m.lower_member && m.upper_member))
}
