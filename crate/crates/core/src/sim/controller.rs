//! Nominal controllers and setpoint scheduling for the bundled scenarios.

use nalgebra::DVector;

use crate::error::CbfError;

/// Per-channel PD gains.
#[derive(Debug, Clone, Copy)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 4.0, kd: 4.0 }
    }
}

impl PdGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self, CbfError> {
        for (name, value) in [("kp", kp), ("kd", kd)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CbfError::InvalidParam {
                    name: name.to_string(),
                    value,
                    requirement: "finite and > 0".to_string(),
                });
            }
        }
        Ok(Self { kp, kd })
    }
}

/// Piecewise-constant target states: at time t the active target is the
/// last entry whose start time is <= t.
#[derive(Debug, Clone)]
pub struct SetpointSchedule {
    entries: Vec<(f64, DVector<f64>)>,
}

impl SetpointSchedule {
    pub fn new(entries: Vec<(f64, DVector<f64>)>) -> Result<Self, CbfError> {
        if entries.is_empty() {
            return Err(CbfError::InvalidParam {
                name: "setpoints".to_string(),
                value: 0.0,
                requirement: "at least one setpoint".to_string(),
            });
        }
        for window in entries.windows(2) {
            if window[1].0 <= window[0].0 {
                return Err(CbfError::InvalidParam {
                    name: "setpoint times".to_string(),
                    value: window[1].0,
                    requirement: "strictly increasing".to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn target(&self, t: f64) -> &DVector<f64> {
        let mut current = &self.entries[0].1;
        for (start, target) in &self.entries {
            if *start <= t {
                current = target;
            } else {
                break;
            }
        }
        current
    }

    pub fn target_dim(&self) -> usize {
        self.entries[0].1.len()
    }

    pub fn entries(&self) -> &[(f64, DVector<f64>)] {
        &self.entries
    }
}

/// PD acceleration command for the double integrator toward a target state
/// (x_d, z_d, xdot_d, zdot_d), with gravity feedforward on the vertical
/// channel. Shared between the simulation nominal and the tracking
/// certificate so both describe the same closed loop.
pub fn di_pd_input(
    x: &DVector<f64>,
    target: &DVector<f64>,
    gains: &PdGains,
    gravity: f64,
) -> DVector<f64> {
    let v1 = gains.kp * (target[0] - x[0]) + gains.kd * (target[2] - x[2]);
    let v2 = gravity + gains.kp * (target[1] - x[1]) + gains.kd * (target[3] - x[3]);
    DVector::from_vec(vec![v1, v2])
}

/// Nominal drone input (thrust, moment) toward a target state. Thrust is a
/// PD law on altitude with gravity feedforward; the attitude reference
/// comes from an outer PD loop on horizontal position, converted to the
/// tilt that would realize the commanded lateral acceleration at hover
/// thrust, and tracked by a PD law on the moment channel.
pub fn drone_pd_input(
    x: &DVector<f64>,
    target: &DVector<f64>,
    gains: &PdGains,
    outer: &PdGains,
    gravity: f64,
) -> DVector<f64> {
    let ax = outer.kp * (target[0] - x[0]) + outer.kd * (target[3] - x[3]);
    let theta_ref = (-ax).atan2(gravity);
    let force = gravity + gains.kp * (target[1] - x[1]) + gains.kd * (target[4] - x[4]);
    let moment = gains.kp * (theta_ref - x[2]) + gains.kd * (target[5] - x[5]);
    DVector::from_vec(vec![force, moment])
}
