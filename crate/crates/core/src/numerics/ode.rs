use nalgebra::DVector;

use super::SmoothMap;
use crate::error::{Error, Result};

/// Time-stamped states produced by the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub tolerance_used: f64,
    /// Set when integration stopped early because the state left the domain.
    pub domain_exit: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory always holds the initial state")
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds the initial state")
    }

    /// State recorded at exactly `t` (stop times are hit exactly by the integrator).
    pub fn state_at(&self, t: f64) -> Option<&DVector<f64>> {
        let scale = 1e-12 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= scale)
            .map(|i| &self.states[i])
    }

    /// Position part (first `n` entries) of a `(point, velocity)` state.
    pub fn point(&self, i: usize, n: usize) -> DVector<f64> {
        self.states[i].rows(0, n).into_owned()
    }

    pub fn velocity(&self, i: usize, n: usize) -> DVector<f64> {
        self.states[i].rows(n, n).into_owned()
    }

    pub fn reached(&self, t: f64) -> bool {
        !self.domain_exit && self.last_time() >= t - 1e-12 * t.abs().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct OdeOptions {
    /// Mixed absolute/relative local error bound per accepted step.
    pub tol: f64,
    /// Times the integrator must land on exactly.
    pub stops: Vec<f64>,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            stops: Vec::new(),
            initial_step: None,
            max_steps: 200_000,
        }
    }

    pub fn with_stops(mut self, stops: &[f64]) -> Self {
        self.stops = stops.to_vec();
        self
    }
}

// Dormand–Prince 5(4) tableau (autonomous form, nodes unused).
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates an autonomous field `y' = f(y)` from `t = 0` to `t_end` using the
/// field's own domain predicate.
pub fn ode_integrate(field: &SmoothMap, y0: &DVector<f64>, t_end: f64, tol: f64) -> Result<Trajectory> {
    integrate(
        |y| field.eval(y),
        |y| field.contains(y),
        y0,
        t_end,
        &OdeOptions::new(tol),
    )
}

/// Adaptive Dormand–Prince integration of `y' = field(y)` on `[0, t_end]`.
///
/// Field errors that signal a domain boundary (see [`Error::is_domain_like`]) and
/// states rejected by `in_domain` shrink the step; once the step cannot shrink
/// further the partial trajectory is returned inside [`Error::DomainExit`].
pub fn integrate<F, D>(field: F, in_domain: D, y0: &DVector<f64>, t_end: f64, opts: &OdeOptions) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    D: Fn(&DVector<f64>) -> bool,
{
    assert!(opts.tol > 0.0, "tolerance must be positive");
    assert!(t_end >= 0.0, "integration runs forward from t = 0");
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![y0.clone()],
        tolerance_used: opts.tol,
        domain_exit: false,
    };
    let exit = |traj: Trajectory, t: f64| {
        let mut partial = traj;
        partial.domain_exit = true;
        Err(Error::DomainExit {
            t,
            partial: Box::new(partial),
        })
    };
    if !in_domain(y0) {
        return exit(traj, 0.0);
    }
    if t_end == 0.0 {
        return Ok(traj);
    }
    let mut k1 = match field(y0) {
        Ok(k) if k.iter().all(|x| x.is_finite()) => k,
        Ok(_) => return exit(traj, 0.0),
        Err(e) if e.is_domain_like() => return exit(traj, 0.0),
        Err(e) => return Err(e),
    };

    let mut stops: Vec<f64> = opts.stops.iter().copied().filter(|&s| s > 0.0 && s < t_end).collect();
    stops.push(t_end);
    stops.sort_by(|a, b| a.partial_cmp(b).expect("finite stop times"));
    stops.dedup();

    let min_domain_step = 1e-9 * t_end;
    let min_step = 1e-14 * t_end;
    let mut t = 0.0_f64;
    let mut y = y0.clone();
    let mut h = opts.initial_step.unwrap_or(t_end).min(t_end);
    let mut stop_idx = 0;
    let mut steps = 0usize;
    let mut k = vec![DVector::<f64>::zeros(y0.len()); 7];

    while stop_idx < stops.len() {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepUnderflow { t, step: h });
        }
        let target = stops[stop_idx];
        let remaining = target - t;
        let clamped = h >= remaining;
        let h_try = if clamped { remaining } else { h };

        k[0] = k1.clone();
        let mut failed_domain = false;
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    ys.axpy(h_try * a, kj, 1.0);
                }
            }
            if s == 6 && !in_domain(&ys) {
                failed_domain = true;
                break;
            }
            match field(&ys) {
                Ok(v) if v.iter().all(|x| x.is_finite()) => k[s] = v,
                Ok(_) => {
                    failed_domain = true;
                    break;
                }
                Err(e) if e.is_domain_like() => {
                    failed_domain = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed_domain {
            h = 0.5 * h_try;
            if h < min_domain_step {
                return exit(traj, t);
            }
            continue;
        }

        let mut y_new = y.clone();
        let mut err = DVector::<f64>::zeros(y.len());
        for s in 0..7 {
            if B[s] != 0.0 {
                y_new.axpy(h_try * B[s], &k[s], 1.0);
            }
            if E[s] != 0.0 {
                err.axpy(h_try * E[s], &k[s], 1.0);
            }
        }
        let mut err_norm = 0.0_f64;
        for i in 0..y.len() {
            let scale = 1.0 + y[i].abs().max(y_new[i].abs());
            err_norm = err_norm.max(err[i].abs() / scale);
        }
        err_norm /= opts.tol;

        if err_norm <= 1.0 {
            t = if clamped { target } else { t + h_try };
            if clamped {
                stop_idx += 1;
            }
            y = y_new;
            k1 = k[6].clone();
            traj.times.push(t);
            traj.states.push(y.clone());
            let factor = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            let proposed = h_try * factor;
            h = if clamped { proposed.max(h) } else { proposed };
        } else {
            h = h_try * (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9);
            if h < min_step {
                return Err(Error::StepUnderflow { t, step: h });
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E as EULER, PI};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn zero_field_is_constant() {
        let f = SmoothMap::new(2, 2, |_| DVector::zeros(2));
        let tr = ode_integrate(&f, &v(&[1.0, 2.0]), 5.0, 1e-10).unwrap();
        for s in &tr.states {
            assert_eq!(s, &v(&[1.0, 2.0]));
        }
        assert_eq!(tr.last_time(), 5.0);
    }

    #[test]
    fn exponential_growth() {
        let f = SmoothMap::new(1, 1, |y| y.clone());
        let tr = ode_integrate(&f, &v(&[1.0]), 1.0, 1e-10).unwrap();
        assert!((tr.last_state()[0] - EULER).abs() < 1e-8);
    }

    #[test]
    fn global_error_within_hundred_tol() {
        let f = SmoothMap::new(1, 1, |y| y.clone());
        for tol in [1e-5, 1e-7, 1e-9, 1e-11] {
            let tr = ode_integrate(&f, &v(&[1.0]), 1.0, tol).unwrap();
            let err = (tr.last_state()[0] - EULER).abs();
            assert!(err <= 100.0 * tol, "tol {tol}: err {err}");
        }
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        let f = SmoothMap::new(2, 2, |y| v(&[y[1], -y[0]]));
        let tr = ode_integrate(&f, &v(&[1.0, 0.0]), 2.0 * PI, 1e-10).unwrap();
        let end = tr.last_state();
        assert!((end[0] - 1.0).abs() < 1e-7 && end[1].abs() < 1e-7);
    }

    #[test]
    fn stops_are_hit_exactly() {
        let stops = [0.25, 0.5, 0.75];
        let tr = integrate(
            |y| Ok(y.clone()),
            |_| true,
            &v(&[1.0]),
            1.0,
            &OdeOptions::new(1e-10).with_stops(&stops),
        )
        .unwrap();
        for s in stops {
            let y = tr.state_at(s).expect("stop recorded");
            assert!((y[0] - s.exp()).abs() < 1e-9);
        }
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn domain_exit_returns_partial_trajectory() {
        let f = SmoothMap::new(1, 1, |_| v(&[1.0])).with_domain(|y| y[0] < 0.5);
        match ode_integrate(&f, &v(&[0.0]), 1.0, 1e-10) {
            Err(Error::DomainExit { t, partial }) => {
                assert!(partial.domain_exit);
                assert!(t < 0.5 && t > 0.5 - 1e-6, "exit time {t}");
                assert!(partial.last_state()[0] < 0.5);
            }
            other => panic!("expected domain exit, got {other:?}"),
        }
    }

    #[test]
    fn blow_up_underflows_or_exits() {
        // y' = y^2 from 1 blows up at t = 1.
        let f = SmoothMap::new(1, 1, |y| v(&[y[0] * y[0]]));
        assert!(ode_integrate(&f, &v(&[1.0]), 2.0, 1e-8).is_err());
    }
}
