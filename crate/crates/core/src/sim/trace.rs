//! Closed-loop trace storage.

use nalgebra::DVector;

/// Everything logged per integration step. For the reduced-order cascade
/// the filter quantities (u, k_d, k_cbf, slacks, psi, lambdas, err) live in
/// the reduced model's input/output spaces while `states` holds the full
/// model; `u` is always the filter's decision, not the adapted input.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub model_name: String,
    pub state_names: Vec<String>,
    pub output_names: Vec<String>,
    pub rel_degrees: Vec<usize>,
    pub dt: f64,
    pub x0_in_safe_set: bool,

    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub k_d: Vec<DVector<f64>>,
    pub k_cbf: Vec<DVector<f64>>,
    /// Constraint slacks at the logged u, interleaved (lower_1, upper_1, ...).
    pub slacks: Vec<DVector<f64>>,
    /// Per channel: the lower psi stack (levels 0..r-1) then the upper one.
    pub psi: Vec<DVector<f64>>,
    /// Multipliers, interleaved like the slacks.
    pub lambdas: Vec<DVector<f64>>,
    /// Output tracking error y - y_d.
    pub err: Vec<DVector<f64>>,
    /// Running supremum of ||k_cbf|| up to each step.
    pub sup_k_cbf: Vec<f64>,
}

/// One step's worth of logged values.
pub struct StepRecord {
    pub t: f64,
    pub state: DVector<f64>,
    pub output: DVector<f64>,
    pub u: DVector<f64>,
    pub k_d: DVector<f64>,
    pub k_cbf: DVector<f64>,
    pub slacks: DVector<f64>,
    pub psi: DVector<f64>,
    pub lambdas: DVector<f64>,
    pub err: DVector<f64>,
}

impl SimTrace {
    pub fn new(
        model_name: String,
        state_names: Vec<String>,
        output_names: Vec<String>,
        rel_degrees: Vec<usize>,
        dt: f64,
        x0_in_safe_set: bool,
    ) -> Self {
        Self {
            model_name,
            state_names,
            output_names,
            rel_degrees,
            dt,
            x0_in_safe_set,
            times: Vec::new(),
            states: Vec::new(),
            outputs: Vec::new(),
            u: Vec::new(),
            k_d: Vec::new(),
            k_cbf: Vec::new(),
            slacks: Vec::new(),
            psi: Vec::new(),
            lambdas: Vec::new(),
            err: Vec::new(),
            sup_k_cbf: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: StepRecord) {
        let sup = self
            .sup_k_cbf
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(rec.k_cbf.norm());
        self.times.push(rec.t);
        self.states.push(rec.state);
        self.outputs.push(rec.output);
        self.u.push(rec.u);
        self.k_d.push(rec.k_d);
        self.k_cbf.push(rec.k_cbf);
        self.slacks.push(rec.slacks);
        self.psi.push(rec.psi);
        self.lambdas.push(rec.lambdas);
        self.err.push(rec.err);
        self.sup_k_cbf.push(sup);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.output_names.len()
    }

    /// Number of strictly positive multipliers at each step.
    pub fn positive_multiplier_counts(&self) -> Vec<usize> {
        self.lambdas
            .iter()
            .map(|l| l.iter().filter(|&&v| v > 0.0).count())
            .collect()
    }

    /// Length of the longest run of consecutive steps with exactly `k`
    /// strictly positive multipliers.
    pub fn longest_run_with_positive_multipliers(&self, k: usize) -> usize {
        let mut best = 0;
        let mut current = 0;
        for count in self.positive_multiplier_counts() {
            if count == k {
                current += 1;
                best = best.max(current);
            } else {
                current = 0;
            }
        }
        best
    }

    /// Offset of channel i's psi block within the flattened psi vector.
    pub fn psi_offset(&self, channel: usize) -> usize {
        self.rel_degrees[..channel].iter().map(|r| 2 * r).sum()
    }

    pub fn psi_len(&self) -> usize {
        self.rel_degrees.iter().map(|r| 2 * r).sum()
    }
}
