//! Bundled concrete systems: a planar drone, a planar double integrator
//! used as its reduced-order model, and the thrust/attitude adapter that
//! turns reduced-order acceleration commands into drone inputs.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ecbf::OutputChannel;
use crate::error::CbfError;
use crate::system::{OutputChannelEvaluator, SystemModel};

/// Parameters of the planar drone. Mass and inertia are normalized to one,
/// so the inputs are total thrust and pitch moment directly.
#[derive(Debug, Clone, Copy)]
pub struct PlanarDroneParams {
    pub gravity: f64,
    /// The valid region is |theta| <= pi/2 - theta_margin, keeping the
    /// decoupling matrix away from its rank drop at theta = pi/2.
    pub theta_margin: f64,
}

impl Default for PlanarDroneParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            theta_margin: 0.01,
        }
    }
}

impl PlanarDroneParams {
    /// Validating constructor for externally supplied parameters. The
    /// fields stay public so diagnostics can probe the singular boundary
    /// with a zero margin.
    pub fn new(gravity: f64, theta_margin: f64) -> Result<Self, CbfError> {
        if !(gravity > 0.0) || !gravity.is_finite() {
            return Err(CbfError::InvalidParam {
                name: "gravity".to_string(),
                value: gravity,
                requirement: "finite and > 0".to_string(),
            });
        }
        if !(theta_margin > 0.0 && theta_margin < FRAC_PI_2) {
            return Err(CbfError::InvalidParam {
                name: "theta_margin".to_string(),
                value: theta_margin,
                requirement: "in (0, pi/2)".to_string(),
            });
        }
        Ok(Self {
            gravity,
            theta_margin,
        })
    }
}

/// PD gains for the inner attitude loop of the reduced-order adapter.
#[derive(Debug, Clone, Copy)]
pub struct RomAdapterParams {
    pub kp_theta: f64,
    pub kd_theta: f64,
}

impl Default for RomAdapterParams {
    fn default() -> Self {
        Self {
            kp_theta: 40.0,
            kd_theta: 12.0,
        }
    }
}

impl RomAdapterParams {
    pub fn new(kp_theta: f64, kd_theta: f64) -> Result<Self, CbfError> {
        for (name, value) in [("kp_theta", kp_theta), ("kd_theta", kd_theta)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CbfError::InvalidParam {
                    name: name.to_string(),
                    value,
                    requirement: "finite and > 0".to_string(),
                });
            }
        }
        Ok(Self { kp_theta, kd_theta })
    }
}

/// Planar drone with state (x, z, theta, xdot, zdot, thetadot) and inputs
/// (thrust F, moment M):
///
/// ```text
/// xddot     = -F sin(theta)
/// zddot     =  F cos(theta) - g
/// thetaddot =  M
/// ```
///
/// Outputs are z and theta, each of relative degree two on the region
/// |theta| <= pi/2 - margin.
pub fn planar_drone_model(params: &PlanarDroneParams) -> SystemModel {
    let g = params.gravity;
    let theta_max = FRAC_PI_2 - params.theta_margin;
    let region = Arc::new(move |x: &DVector<f64>| x[2].abs() <= theta_max);

    let z_output = Arc::new(OutputChannelEvaluator {
        rel_degree: 2,
        y: Arc::new(|x: &DVector<f64>| x[1]),
        lie_f_chain: Arc::new(move |x: &DVector<f64>| DVector::from_vec(vec![x[4], -g])),
        b_row: Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![x[2].cos(), 0.0])),
        valid_region: region.clone(),
    });
    let theta_output = Arc::new(OutputChannelEvaluator {
        rel_degree: 2,
        y: Arc::new(|x: &DVector<f64>| x[2]),
        lie_f_chain: Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![x[5], 0.0])),
        b_row: Arc::new(|_x: &DVector<f64>| DVector::from_vec(vec![0.0, 1.0])),
        valid_region: region.clone(),
    });

    SystemModel {
        name: "planar_drone".to_string(),
        state_dim: 6,
        input_dim: 2,
        drift: Arc::new(move |x: &DVector<f64>| {
            DVector::from_vec(vec![x[3], x[4], x[5], 0.0, -g, 0.0])
        }),
        control_matrix: Arc::new(|x: &DVector<f64>| {
            let (s, c) = x[2].sin_cos();
            DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -s, 0.0, c, 0.0, 0.0, 1.0])
        }),
        outputs: vec![z_output, theta_output],
        output_names: vec!["z".to_string(), "theta".to_string()],
        state_names: ["x", "z", "theta", "xdot", "zdot", "thetadot"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        valid_region: region,
        region_desc: format!("|theta| <= pi/2 - {}", params.theta_margin),
    }
}

/// Planar double integrator with gravity, state (x, z, xdot, zdot) and
/// acceleration inputs (v1, v2):
///
/// ```text
/// xddot = v1
/// zddot = v2 - g
/// ```
///
/// Outputs are x and z, relative degree two everywhere; the decoupling
/// matrix is the identity.
pub fn double_integrator_model(gravity: f64) -> SystemModel {
    let g = gravity;
    let everywhere = Arc::new(|_x: &DVector<f64>| true);

    let x_output = Arc::new(OutputChannelEvaluator {
        rel_degree: 2,
        y: Arc::new(|x: &DVector<f64>| x[0]),
        lie_f_chain: Arc::new(|x: &DVector<f64>| DVector::from_vec(vec![x[2], 0.0])),
        b_row: Arc::new(|_x: &DVector<f64>| DVector::from_vec(vec![1.0, 0.0])),
        valid_region: everywhere.clone(),
    });
    let z_output = Arc::new(OutputChannelEvaluator {
        rel_degree: 2,
        y: Arc::new(|x: &DVector<f64>| x[1]),
        lie_f_chain: Arc::new(move |x: &DVector<f64>| DVector::from_vec(vec![x[3], -g])),
        b_row: Arc::new(|_x: &DVector<f64>| DVector::from_vec(vec![0.0, 1.0])),
        valid_region: everywhere.clone(),
    });

    SystemModel {
        name: "double_integrator".to_string(),
        state_dim: 4,
        input_dim: 2,
        drift: Arc::new(move |x: &DVector<f64>| DVector::from_vec(vec![x[2], x[3], 0.0, -g])),
        control_matrix: Arc::new(|_x: &DVector<f64>| {
            DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        }),
        outputs: vec![x_output, z_output],
        output_names: vec!["x".to_string(), "z".to_string()],
        state_names: ["x", "z", "xdot", "zdot"].iter().map(|s| s.to_string()).collect(),
        valid_region: everywhere,
        region_desc: "all states".to_string(),
    }
}

/// Maps a reduced-order acceleration command v to drone inputs. Thrust is
/// the left pseudo-inverse of the acceleration column at the current
/// attitude; the commanded attitude theta_d realizes v exactly, and the
/// moment tracks it with a PD law.
///
/// Returns (F, M, theta_d). A zero command maps to theta_d = 0.
pub fn rom_to_drone_adapter(
    v: &DVector<f64>,
    drone_state: &DVector<f64>,
    params: &RomAdapterParams,
) -> (f64, f64, f64) {
    let theta = drone_state[2];
    let theta_dot = drone_state[5];
    let (s, c) = theta.sin_cos();
    let force = -v[0] * s + v[1] * c;
    let theta_d = if v[0] == 0.0 && v[1] == 0.0 {
        0.0
    } else {
        (-v[0]).atan2(v[1])
    };
    let moment = params.kp_theta * (theta_d - theta) - params.kd_theta * theta_dot;
    (force, moment, theta_d)
}

/// Box channels used by the bundled scenarios: z in [0, 2] and theta in
/// [-1, 1] for the drone, x in [-1, 1] and z in [0, 2] for the double
/// integrator, all with a double ECBF root at -1.
pub fn default_box_channels(model: &SystemModel) -> Result<Vec<OutputChannel>, CbfError> {
    let roots = [-1.0, -1.0];
    match model.name.as_str() {
        "planar_drone" => Ok(vec![
            OutputChannel::new("z", model.outputs[0].clone(), 0.0, 2.0, &roots)?,
            OutputChannel::new("theta", model.outputs[1].clone(), -1.0, 1.0, &roots)?,
        ]),
        "double_integrator" => Ok(vec![
            OutputChannel::new("x", model.outputs[0].clone(), -1.0, 1.0, &roots)?,
            OutputChannel::new("z", model.outputs[1].clone(), 0.0, 2.0, &roots)?,
        ]),
        other => Err(CbfError::UnknownModel {
            name: other.to_string(),
        }),
    }
}

/// Uniform drone state sample with attitude strictly inside the default
/// valid region.
pub fn sample_planar_drone_state<R: Rng + ?Sized>(rng: &mut R) -> DVector<f64> {
    let theta_max = FRAC_PI_2 - 0.02;
    DVector::from_vec(vec![
        rng.random_range(-2.0..3.0),
        rng.random_range(-2.0..3.0),
        rng.random_range(-theta_max..theta_max),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    ])
}

pub fn sample_double_integrator_state<R: Rng + ?Sized>(rng: &mut R) -> DVector<f64> {
    DVector::from_vec(vec![
        rng.random_range(-2.0..3.0),
        rng.random_range(-2.0..3.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    ])
}

/// Uniform nominal input in [-20, 20]^m.
pub fn sample_nominal_input<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.random_range(-20.0..20.0))
}
