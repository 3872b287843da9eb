//! Closed-loop simulation of the filtered systems.
//!
//! A [`Scenario`] names a model, box channels, a nominal controller with a
//! setpoint schedule, and integration settings. [`simulate`] runs the
//! zero-order-hold closed loop: at every step the nominal input is passed
//! through the closed-form filter, the decision is logged, and the applied
//! input is held constant over the step.
//!
//! Two pipelines exist. The direct one filters the integrated model's own
//! inputs. The reduced-order cascade integrates the drone but runs the
//! filter on the double integrator evaluated at the projected drone state;
//! the filtered acceleration command is converted to thrust and moment by
//! the attitude adapter.

pub mod audit;
pub mod controller;
pub mod integrate;
pub mod iss;
pub mod trace;

pub use audit::{audit_invariance, default_tolerance, InvarianceReport};
pub use controller::{di_pd_input, drone_pd_input, PdGains, SetpointSchedule};
pub use integrate::Integrator;
pub use trace::{SimTrace, StepRecord};

use nalgebra::DVector;

use crate::ecbf::{evaluate_channels, in_safe_set, OutputChannel};
use crate::error::CbfError;
use crate::filter::closed_form_filter;
use crate::models::{
    double_integrator_model, planar_drone_model, rom_to_drone_adapter, PlanarDroneParams,
    RomAdapterParams,
};
use crate::system::SystemModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    PlanarDrone,
    DoubleIntegrator,
    DroneWithRom,
}

impl std::str::FromStr for ModelKind {
    type Err = CbfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planar_drone" => Ok(ModelKind::PlanarDrone),
            "double_integrator" => Ok(ModelKind::DoubleIntegrator),
            "drone_with_rom" => Ok(ModelKind::DroneWithRom),
            other => Err(CbfError::UnknownModel {
                name: other.to_string(),
            }),
        }
    }
}

/// Box bounds and ECBF roots for one output channel, matched to the filter
/// model's outputs by name.
#[derive(Debug, Clone)]
pub struct ChannelCfg {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub roots: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ControllerCfg {
    pub gains: PdGains,
    /// Outer-loop gains generating the attitude reference from horizontal
    /// position error; used by the direct drone pipeline only.
    pub outer_gains: PdGains,
    /// Inner attitude-loop gains; used by the reduced-order cascade only.
    pub adapter: RomAdapterParams,
    pub schedule: SetpointSchedule,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ModelKind,
    pub gravity: f64,
    pub theta_margin: f64,
    pub channels: Vec<ChannelCfg>,
    pub controller: ControllerCfg,
    pub x0: DVector<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub integrator: Integrator,
    /// Overrides the dt-scaled default audit tolerance.
    pub audit_tol: Option<f64>,
}

impl Scenario {
    pub fn audit_tolerance(&self) -> f64 {
        self.audit_tol.unwrap_or_else(|| default_tolerance(self.dt))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// State left the model's valid region.
    RegionExit,
    /// State became non-finite.
    Diverged,
    /// The filter failed (singular decoupling matrix or similar).
    Filter,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::RegionExit => write!(f, "region exit"),
            AbortReason::Diverged => write!(f, "divergence"),
            AbortReason::Filter => write!(f, "filter failure"),
        }
    }
}

#[derive(Debug)]
pub enum SimError {
    /// Scenario construction or validation failed before any stepping.
    Build(CbfError),
    /// The run stopped early; the trace holds all completed steps.
    Abort {
        reason: AbortReason,
        detail: String,
        partial: Box<SimTrace>,
    },
}

impl std::fmt::Display for SimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimError::Build(e) => write!(f, "scenario build failed: {e}"),
            SimError::Abort {
                reason,
                detail,
                partial,
            } => write!(
                f,
                "simulation aborted after {} steps ({reason}): {detail}",
                partial.len()
            ),
        }
    }
}

impl std::error::Error for SimError {}

impl From<CbfError> for SimError {
    fn from(e: CbfError) -> Self {
        SimError::Build(e)
    }
}

/// Builds the model the filter runs on and its box channels. For the
/// cascade this is the double integrator, not the integrated drone.
pub fn filter_setup(scenario: &Scenario) -> Result<(SystemModel, Vec<OutputChannel>), CbfError> {
    let model = match scenario.model {
        ModelKind::PlanarDrone => planar_drone_model(&drone_params(scenario)?),
        ModelKind::DoubleIntegrator | ModelKind::DroneWithRom => {
            double_integrator_model(scenario.gravity)
        }
    };
    let channels = build_channels(&model, &scenario.channels)?;
    Ok((model, channels))
}

fn drone_params(scenario: &Scenario) -> Result<PlanarDroneParams, CbfError> {
    PlanarDroneParams::new(scenario.gravity, scenario.theta_margin)
}

fn build_channels(
    model: &SystemModel,
    cfgs: &[ChannelCfg],
) -> Result<Vec<OutputChannel>, CbfError> {
    if cfgs.len() != model.outputs.len() {
        return Err(CbfError::Dimension {
            context: format!("channel list for model '{}'", model.name),
            expected: model.outputs.len(),
            got: cfgs.len(),
        });
    }
    let mut channels = Vec::with_capacity(cfgs.len());
    for (i, cfg) in cfgs.iter().enumerate() {
        let expected = &model.output_names[i];
        if &cfg.name != expected {
            return Err(CbfError::InvalidParam {
                name: format!("channel[{i}].name"),
                value: f64::NAN,
                requirement: format!(
                    "'{expected}' (model '{}' output order is {:?})",
                    model.name, model.output_names
                ),
            });
        }
        channels.push(OutputChannel::new(
            &cfg.name,
            model.outputs[i].clone(),
            cfg.lower,
            cfg.upper,
            &cfg.roots,
        )?);
    }
    Ok(channels)
}

struct Pipeline<'a> {
    integrated: &'a SystemModel,
    filter_model: &'a SystemModel,
    channels: &'a [OutputChannel],
    project: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>,
    nominal: Box<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + 'a>,
    adapt: Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + 'a>,
}

/// Runs a scenario to completion or abort.
pub fn simulate(scenario: &Scenario) -> Result<SimTrace, SimError> {
    if !(scenario.dt > 0.0 && scenario.dt.is_finite()) {
        return Err(CbfError::InvalidParam {
            name: "dt".to_string(),
            value: scenario.dt,
            requirement: "finite and > 0".to_string(),
        }
        .into());
    }
    if !(scenario.t_final >= scenario.dt && scenario.t_final.is_finite()) {
        return Err(CbfError::InvalidParam {
            name: "t_final".to_string(),
            value: scenario.t_final,
            requirement: "finite and >= dt".to_string(),
        }
        .into());
    }

    let ctrl = &scenario.controller;
    match scenario.model {
        ModelKind::PlanarDrone => {
            let model = planar_drone_model(&drone_params(scenario)?);
            let channels = build_channels(&model, &scenario.channels)?;
            check_schedule(&ctrl.schedule, model.state_dim)?;
            let gravity = scenario.gravity;
            let pipeline = Pipeline {
                integrated: &model,
                filter_model: &model,
                channels: &channels,
                project: Box::new(|x| x.clone()),
                nominal: Box::new(move |x, t| {
                    drone_pd_input(x, ctrl.schedule.target(t), &ctrl.gains, &ctrl.outer_gains, gravity)
                }),
                adapt: Box::new(|_x, u| u.clone()),
            };
            run_loop(scenario, pipeline)
        }
        ModelKind::DoubleIntegrator => {
            let model = double_integrator_model(scenario.gravity);
            let channels = build_channels(&model, &scenario.channels)?;
            check_schedule(&ctrl.schedule, model.state_dim)?;
            let gravity = scenario.gravity;
            let pipeline = Pipeline {
                integrated: &model,
                filter_model: &model,
                channels: &channels,
                project: Box::new(|x| x.clone()),
                nominal: Box::new(move |x, t| {
                    di_pd_input(x, ctrl.schedule.target(t), &ctrl.gains, gravity)
                }),
                adapt: Box::new(|_x, u| u.clone()),
            };
            run_loop(scenario, pipeline)
        }
        ModelKind::DroneWithRom => {
            let drone = planar_drone_model(&drone_params(scenario)?);
            let rom = double_integrator_model(scenario.gravity);
            let channels = build_channels(&rom, &scenario.channels)?;
            check_schedule(&ctrl.schedule, rom.state_dim)?;
            let gravity = scenario.gravity;
            let project =
                |x: &DVector<f64>| DVector::from_vec(vec![x[0], x[1], x[3], x[4]]);
            let pipeline = Pipeline {
                integrated: &drone,
                filter_model: &rom,
                channels: &channels,
                project: Box::new(project),
                nominal: Box::new(move |x, t| {
                    di_pd_input(&project(x), ctrl.schedule.target(t), &ctrl.gains, gravity)
                }),
                adapt: Box::new(move |x, v| {
                    let (force, moment, _) = rom_to_drone_adapter(v, x, &ctrl.adapter);
                    DVector::from_vec(vec![force, moment])
                }),
            };
            run_loop(scenario, pipeline)
        }
    }
}

fn check_schedule(schedule: &SetpointSchedule, state_dim: usize) -> Result<(), CbfError> {
    if schedule.target_dim() != state_dim {
        return Err(CbfError::Dimension {
            context: "setpoint target".to_string(),
            expected: state_dim,
            got: schedule.target_dim(),
        });
    }
    Ok(())
}

fn run_loop(scenario: &Scenario, pipeline: Pipeline<'_>) -> Result<SimTrace, SimError> {
    let Pipeline {
        integrated,
        filter_model,
        channels,
        project,
        nominal,
        adapt,
    } = pipeline;
    let schedule = &scenario.controller.schedule;
    let dt = scenario.dt;
    let n_steps = (scenario.t_final / dt).round().max(1.0) as usize;

    integrated.check_state(&scenario.x0)?;
    let fx0 = project(&scenario.x0);
    let x0_in_s = in_safe_set(channels, &fx0)?;

    let m = channels.len();
    let y_ref = |t: f64| -> DVector<f64> {
        let target = schedule.target(t);
        DVector::from_fn(m, |i, _| (filter_model.outputs[i].y)(target))
    };

    let mut trace = SimTrace::new(
        integrated.name.clone(),
        integrated.state_names.clone(),
        filter_model.output_names.clone(),
        channels.iter().map(|c| c.evaluator.rel_degree).collect(),
        dt,
        x0_in_s,
    );

    let mut x = scenario.x0.clone();
    for k in 0..=n_steps {
        let t = k as f64 * dt;

        if let Err(e) = integrated.check_state(&x) {
            let reason = match e {
                CbfError::OutsideValidRegion { .. } => AbortReason::RegionExit,
                CbfError::NonFinite { .. } => AbortReason::Diverged,
                _ => AbortReason::Filter,
            };
            return Err(SimError::Abort {
                reason,
                detail: e.to_string(),
                partial: Box::new(trace),
            });
        }

        let fx = project(&x);
        let k_d = nominal(&x, t);
        let decision = match closed_form_filter(channels, filter_model, &fx, &k_d) {
            Ok(d) => d,
            Err(e) => {
                let reason = match e {
                    CbfError::OutsideValidRegion { .. } => AbortReason::RegionExit,
                    CbfError::NonFinite { .. } => AbortReason::Diverged,
                    _ => AbortReason::Filter,
                };
                return Err(SimError::Abort {
                    reason,
                    detail: e.to_string(),
                    partial: Box::new(trace),
                });
            }
        };
        let evals = evaluate_channels(channels, &fx).map_err(|e| SimError::Abort {
            reason: AbortReason::Filter,
            detail: e.to_string(),
            partial: Box::new(trace.clone()),
        })?;

        let mut psi = DVector::<f64>::zeros(trace.psi_len());
        let mut offset = 0;
        for e in &evals {
            let r = e.psi_lower.len();
            psi.rows_mut(offset, r).copy_from(&e.psi_lower);
            psi.rows_mut(offset + r, r).copy_from(&e.psi_upper);
            offset += 2 * r;
        }

        let y = DVector::from_fn(m, |i, _| (channels[i].evaluator.y)(&fx));
        let err = &y - y_ref(t);

        trace.push(StepRecord {
            t,
            state: x.clone(),
            output: y,
            u: decision.u_star.clone(),
            k_d,
            k_cbf: decision.k_cbf.clone(),
            slacks: decision.interleaved_slacks(),
            psi,
            lambdas: decision.interleaved_lambdas(),
            err,
        });

        if k < n_steps {
            let applied = adapt(&x, &decision.u_star);
            let field = integrated.held_input_field(&applied);
            let next = scenario.integrator.step(&field, &x, dt);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Abort {
                    reason: AbortReason::Diverged,
                    detail: format!("non-finite state after step {k}"),
                    partial: Box::new(trace),
                });
            }
            x = next;
        }
    }

    Ok(trace)
}
