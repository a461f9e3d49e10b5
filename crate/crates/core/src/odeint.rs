//! Fixed-step RK4 and adaptive RKF45 integration of chart vector fields.

use serde::Serialize;

use crate::error::{Error, Result};

/// A time-dependent vector field on a flat state vector.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]);

    /// Called after every completed step. Canonicalizes the state in place
    /// (e.g. wraps angles) and returns `false` when it has left the chart.
    fn settle(&self, _state: &mut [f64]) -> bool {
        true
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (**self).eval(t, state, out)
    }
    fn settle(&self, state: &mut [f64]) -> bool {
        (**self).settle(state)
    }
}

/// Vector field backed by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (self.f)(t, state, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step_count: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }
}

fn checked_eval<F: VectorField>(field: &F, t: f64, state: &[f64], out: &mut [f64]) -> Result<()> {
    field.eval(t, state, out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            t,
            what: format!("vector field at state {state:?}"),
        })
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F: VectorField>(field: &F, t: f64, state: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    checked_eval(field, t, state, &mut k1)?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    checked_eval(field, t + 0.5 * dt, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    checked_eval(field, t + 0.5 * dt, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    checked_eval(field, t + dt, &tmp, &mut k4)?;

    Ok((0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Fixed-step RK4 from `t0` to `t1` (which may be earlier than `t0`).
pub fn integrate<F: VectorField>(
    field: &F,
    state0: &[f64],
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    if state0.len() != field.dim() {
        return Err(Error::Shape(format!(
            "state has length {} but field has dimension {}",
            state0.len(),
            field.dim()
        )));
    }
    let dt = (t1 - t0) / n_steps as f64;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        step_count: 0,
    };
    let mut state = state0.to_vec();
    if !field.settle(&mut state) {
        traj.times.push(t0);
        traj.states.push(state);
        return Err(Error::FlowLeftChart {
            t: t0,
            steps: 0,
            partial: Box::new(traj),
        });
    }
    traj.times.push(t0);
    traj.states.push(state.clone());
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt;
        let mut next = rk4_step(field, t, &state, dt)?;
        let t_next = if k + 1 == n_steps {
            t1
        } else {
            t0 + (k + 1) as f64 * dt
        };
        let inside = field.settle(&mut next);
        traj.times.push(t_next);
        traj.states.push(next.clone());
        traj.step_count += 1;
        if !inside {
            return Err(Error::FlowLeftChart {
                t: t_next,
                steps: traj.step_count,
                partial: Box::new(traj),
            });
        }
        state = next;
    }
    Ok(traj)
}

/// `exp(t * field)` applied to `point`, integrated from time zero.
pub fn flow<F: VectorField>(field: &F, point: &[f64], t: f64, n_steps: usize) -> Result<Vec<f64>> {
    if t == 0.0 {
        let mut p = point.to_vec();
        field.settle(&mut p);
        return Ok(p);
    }
    Ok(integrate(field, point, 0.0, t, n_steps)?
        .final_state()
        .to_vec())
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 100_000,
        }
    }
}

// Runge-Kutta-Fehlberg 4(5) tableau.
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const C: [f64; 6] = [0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0];
const B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -1.0 / 5.0,
    0.0,
];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

/// Adaptive RKF45 for evaluation-only flows. Not used on the training path.
pub fn integrate_adaptive<F: VectorField>(
    field: &F,
    state0: &[f64],
    t0: f64,
    t1: f64,
    opts: AdaptiveOptions,
) -> Result<Trajectory> {
    let n = state0.len();
    let span = t1 - t0;
    let dir = span.signum();
    let mut h = span / 100.0;
    let mut t = t0;
    let mut state = state0.to_vec();
    field.settle(&mut state);
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![state.clone()],
        step_count: 0,
    };
    if span == 0.0 {
        return Ok(traj);
    }
    let mut k = vec![vec![0.0; n]; 6];
    let mut tmp = vec![0.0; n];
    while (t1 - t) * dir > 0.0 {
        if traj.step_count >= opts.max_steps {
            return Err(Error::NoConvergence {
                iterations: traj.step_count,
                residual: (t1 - t).abs(),
            });
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        for s in 0..6 {
            for i in 0..n {
                tmp[i] = state[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            checked_eval(field, t + C[s] * h, &tmp, &mut k[s])?;
        }
        let mut err = 0.0f64;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let y5 = state[i] + h * (0..6).map(|s| B5[s] * k[s][i]).sum::<f64>();
            let y4 = state[i] + h * (0..6).map(|s| B4[s] * k[s][i]).sum::<f64>();
            let scale = opts.atol + opts.rtol * state[i].abs().max(y5.abs());
            err = err.max(((y5 - y4) / scale).abs());
            next[i] = y5;
        }
        if err <= 1.0 {
            t += h;
            let inside = field.settle(&mut next);
            traj.times.push(t);
            traj.states.push(next.clone());
            traj.step_count += 1;
            if !inside {
                return Err(Error::FlowLeftChart {
                    t,
                    steps: traj.step_count,
                    partial: Box::new(traj),
                });
            }
            state = next;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn growth() -> FnField<impl Fn(f64, &[f64], &mut [f64])> {
        FnField::new(1, |_, s: &[f64], o: &mut [f64]| o[0] = s[0])
    }

    fn rotation() -> FnField<impl Fn(f64, &[f64], &mut [f64])> {
        FnField::new(2, |_, s: &[f64], o: &mut [f64]| {
            o[0] = -s[1];
            o[1] = s[0];
        })
    }

    #[test]
    fn rk4_step_examples() {
        let next = rk4_step(&growth(), 0.0, &[1.0], 0.1).unwrap();
        // 1 + h + h^2/2 + h^3/6 + h^4/24 at h = 0.1
        assert!((next[0] - 1.1051708333333334).abs() < 1e-15);

        let still = FnField::new(2, |_, _: &[f64], o: &mut [f64]| o.fill(0.0));
        assert_eq!(
            rk4_step(&still, 3.0, &[0.4, -1.0], 0.7).unwrap(),
            vec![0.4, -1.0]
        );

        let traj = integrate(&rotation(), &[1.0, 0.0], 0.0, FRAC_PI_2, 20).unwrap();
        let end = traj.final_state();
        assert!(end[0].abs() < 1e-6 && (end[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_derivative_is_reported() {
        let bad = FnField::new(1, |_, s: &[f64], o: &mut [f64]| o[0] = 1.0 / (s[0] - 1.0));
        assert!(matches!(
            rk4_step(&bad, 0.25, &[1.0], 0.1),
            Err(Error::NonFinite { t, .. }) if t == 0.25
        ));
    }

    #[test]
    fn integrate_examples() {
        let still = FnField::new(2, |_, _: &[f64], o: &mut [f64]| o.fill(0.0));
        let traj = integrate(&still, &[0.5, 0.5], 0.0, 1.0, 20).unwrap();
        assert!(traj.states.iter().all(|s| s == &[0.5, 0.5]));
        assert_eq!(traj.times.len(), 21);
        assert_eq!(traj.step_count, 20);
        assert_eq!(traj.times[20], 1.0);

        let end = flow(&rotation(), &[1.0, 0.0], 1.0, 20).unwrap();
        assert!((end[0] - 1f64.cos()).abs() < 1e-6 && (end[1] - 1f64.sin()).abs() < 1e-6);

        let back = integrate(&rotation(), &end, 1.0, 0.0, 20).unwrap();
        let p = back.final_state();
        assert!((p[0] - 1.0).abs() < 1e-6 && p[1].abs() < 1e-6);
        assert_eq!(back.times[0], 1.0);
        assert_eq!(*back.times.last().unwrap(), 0.0);

        assert!(integrate(&rotation(), &[1.0, 0.0], 0.0, 1.0, 0).is_err());
        assert!(integrate(&rotation(), &[1.0], 0.0, 1.0, 5).is_err());
    }

    #[test]
    fn leaving_the_chart_keeps_partial_trajectory() {
        struct Outward;
        impl VectorField for Outward {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _: f64, _: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn settle(&self, s: &mut [f64]) -> bool {
                s[0] < 0.5
            }
        }
        match integrate(&Outward, &[0.0], 0.0, 1.0, 10) {
            Err(Error::FlowLeftChart { steps, partial, .. }) => {
                assert_eq!(steps, 5);
                assert_eq!(partial.states.len(), 6);
            }
            other => panic!("expected chart error, got {other:?}"),
        }
    }

    #[test]
    fn flow_group_property() {
        assert_eq!(
            flow(&rotation(), &[0.3, 0.2], 0.0, 20).unwrap(),
            vec![0.3, 0.2]
        );
        let a = flow(
            &rotation(),
            &flow(&rotation(), &[1.0, 0.5], 0.4, 20).unwrap(),
            0.6,
            20,
        )
        .unwrap();
        let b = flow(&rotation(), &[1.0, 0.5], 1.0, 20).unwrap();
        assert!((a[0] - b[0]).abs() < 2e-6 && (a[1] - b[1]).abs() < 2e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        let e = std::f64::consts::E;
        let err10 = (flow(&growth(), &[1.0], 1.0, 10).unwrap()[0] - e).abs();
        let err20 = (flow(&growth(), &[1.0], 1.0, 20).unwrap()[0] - e).abs();
        assert!(err10 / err20 >= 15.0, "ratio {}", err10 / err20);
    }

    #[test]
    fn deterministic() {
        let a = integrate(&rotation(), &[0.9, -0.3], 0.0, 1.0, 20).unwrap();
        let b = integrate(&rotation(), &[0.9, -0.3], 0.0, 1.0, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let traj =
            integrate_adaptive(&growth(), &[1.0], 0.0, 1.0, AdaptiveOptions::default()).unwrap();
        assert!((traj.final_state()[0] - std::f64::consts::E).abs() < 1e-7);
        assert_eq!(*traj.times.last().unwrap(), 1.0);

        let traj = integrate_adaptive(
            &rotation(),
            &[1.0, 0.0],
            0.0,
            -2.0,
            AdaptiveOptions::default(),
        )
        .unwrap();
        let p = traj.final_state();
        assert!((p[0] - 2f64.cos()).abs() < 1e-7 && (p[1] + 2f64.sin()).abs() < 1e-7);
    }
}
