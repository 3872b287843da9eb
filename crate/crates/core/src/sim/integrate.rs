//! Fixed-step explicit integrators for the zero-order-hold closed loop.

use std::str::FromStr;

use nalgebra::DVector;

use crate::error::CbfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Euler,
}

impl Integrator {
    pub fn step<F>(&self, field: F, x: &DVector<f64>, dt: f64) -> DVector<f64>
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        match self {
            Integrator::Rk4 => rk4_step(field, x, dt),
            Integrator::Euler => euler_step(field, x, dt),
        }
    }
}

impl FromStr for Integrator {
    type Err = CbfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rk4" => Ok(Integrator::Rk4),
            "euler" => Ok(Integrator::Euler),
            other => Err(CbfError::InvalidParam {
                name: "integrator".to_string(),
                value: f64::NAN,
                requirement: format!("'rk4' or 'euler', got '{other}'"),
            }),
        }
    }
}

pub fn euler_step<F>(field: F, x: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    x + field(x) * dt
}

pub fn rk4_step<F>(field: F, x: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = field(x);
    let k2 = field(&(x + &k1 * (dt / 2.0)));
    let k3 = field(&(x + &k2 * (dt / 2.0)));
    let k4 = field(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_is_exact_on_cubic_polynomials() {
        // xdot = 3t^2 encoded with time as a state component.
        let field = |x: &DVector<f64>| DVector::from_vec(vec![3.0 * x[1] * x[1], 1.0]);
        let mut x = DVector::from_vec(vec![0.0, 0.0]);
        for _ in 0..10 {
            x = rk4_step(field, &x, 0.1);
        }
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn euler_first_order_on_exponential() {
        let field = |x: &DVector<f64>| -x.clone();
        let run = |dt: f64| {
            let mut x = DVector::from_element(1, 1.0);
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                x = euler_step(field, &x, dt);
            }
            (x[0] - (-1.0_f64).exp()).abs()
        };
        let e1 = run(0.01);
        let e2 = run(0.005);
        let order = (e1 / e2).log2();
        assert!((order - 1.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn rk4_fourth_order_on_exponential() {
        let field = |x: &DVector<f64>| -x.clone();
        let run = |dt: f64| {
            let mut x = DVector::from_element(1, 1.0);
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                x = rk4_step(field, &x, dt);
            }
            (x[0] - (-1.0_f64).exp()).abs()
        };
        let e1 = run(0.02);
        let e2 = run(0.01);
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn integrator_parsing() {
        assert_eq!("rk4".parse::<Integrator>().unwrap(), Integrator::Rk4);
        assert_eq!("euler".parse::<Integrator>().unwrap(), Integrator::Euler);
        assert!("midpoint".parse::<Integrator>().is_err());
    }
}
