//! Lorenz 96 dynamics and fourth-order Runge-Kutta time stepping.
//!
//! The model is the periodic ring
//! `du_n/dt = (u_{n+1} - u_{n-2}) u_{n-1} - u_n + F`
//! with zero-based storage, so `u_{-1}` wraps to `u_{N-1}` and `u_N` to `u_0`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest ring for which the four stencil neighbours are distinct.
pub const MIN_DIMENSION: usize = 4;

/// One realization of the model state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T>(pub Vec<T>);

impl<T: Real> StateVector<T> {
    /// Checks finiteness only; the ring-size bound is enforced by the model
    /// operations because filter-only uses (scalar toy problems) need N < 4.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidModel("empty state".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("state has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    /// The fixed point `u_n = value` for every `n`.
    pub fn constant(n: usize, value: T) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Cyclic rotation: entry `n` of the result is entry `n - shift` of `self`.
    pub fn rotated(&self, shift: usize) -> Self {
        let mut v = self.0.clone();
        v.rotate_right(shift % self.len().max(1));
        Self(v)
    }
}

impl<T> std::ops::Index<usize> for StateVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub dimension: usize,
    pub forcing: T,
    pub dt: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(dimension: usize, forcing: T, dt: T) -> Result<Self> {
        let p = Self { dimension, forcing, dt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < MIN_DIMENSION {
            return Err(Error::InvalidModel(format!(
                "dimension {} is below {MIN_DIMENSION}",
                self.dimension
            )));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::InvalidModel(format!("time step {} must be positive", self.dt)));
        }
        if !self.forcing.is_finite() {
            return Err(Error::InvalidModel("forcing must be finite".into()));
        }
        Ok(())
    }
}

/// Writes the Lorenz 96 tendency of `u` into `out`.
///
/// Both slices must have the same length of at least [`MIN_DIMENSION`].
pub fn tendency_into<T: Real>(u: &[T], forcing: T, out: &mut [T]) {
    let n = u.len();
    debug_assert!(n >= MIN_DIMENSION && out.len() == n);
    // wrap-around entries handled explicitly so the interior loop is branch free
    for i in [0, 1, n - 1] {
        let ip1 = (i + 1) % n;
        let im1 = (i + n - 1) % n;
        let im2 = (i + n - 2) % n;
        out[i] = (u[ip1] - u[im2]) * u[im1] - u[i] + forcing;
    }
    for i in 2..n - 1 {
        out[i] = (u[i + 1] - u[i - 2]) * u[i - 1] - u[i] + forcing;
    }
}

pub fn lorenz96_tendency<T: Real>(state: &StateVector<T>, forcing: T) -> Result<StateVector<T>> {
    if state.len() < MIN_DIMENSION {
        return Err(Error::InvalidModel(format!(
            "state dimension {} is below {MIN_DIMENSION}",
            state.len()
        )));
    }
    let mut out = vec![T::zero(); state.len()];
    tendency_into(&state.0, forcing, &mut out);
    Ok(StateVector(out))
}

/// Scratch buffers for repeated RK4 steps on one state length.
#[derive(Debug, Clone)]
pub struct Rk4Workspace<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    stage: Vec<T>,
}

impl<T: Real> Rk4Workspace<T> {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![T::zero(); n],
            k2: vec![T::zero(); n],
            k3: vec![T::zero(); n],
            k4: vec![T::zero(); n],
            stage: vec![T::zero(); n],
        }
    }

    /// Advances `u` in place by one classical RK4 step.
    pub fn step(&mut self, u: &mut [T], forcing: T, dt: T) {
        let half = dt * T::lit(0.5);
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);

        tendency_into(u, forcing, &mut self.k1);
        for ((s, &x), &k) in self.stage.iter_mut().zip(u.iter()).zip(&self.k1) {
            *s = x + half * k;
        }
        tendency_into(&self.stage, forcing, &mut self.k2);
        for ((s, &x), &k) in self.stage.iter_mut().zip(u.iter()).zip(&self.k2) {
            *s = x + half * k;
        }
        tendency_into(&self.stage, forcing, &mut self.k3);
        for ((s, &x), &k) in self.stage.iter_mut().zip(u.iter()).zip(&self.k3) {
            *s = x + dt * k;
        }
        tendency_into(&self.stage, forcing, &mut self.k4);
        for i in 0..u.len() {
            u[i] = u[i] + sixth * (self.k1[i] + two * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }

    /// Runs `steps` RK4 steps in place, failing on the first non-finite value.
    ///
    /// `first_step` offsets the step index reported in the overflow error.
    pub fn integrate(
        &mut self,
        u: &mut [T],
        params: &ModelParams<T>,
        steps: usize,
        first_step: usize,
    ) -> Result<()> {
        for s in 0..steps {
            self.step(u, params.forcing, params.dt);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow { step: first_step + s + 1, member: None });
            }
        }
        Ok(())
    }
}

fn check_state<T: Real>(state: &StateVector<T>, params: &ModelParams<T>) -> Result<()> {
    params.validate()?;
    if state.len() != params.dimension {
        return Err(Error::Shape(format!(
            "state has dimension {}, model expects {}",
            state.len(),
            params.dimension
        )));
    }
    Ok(())
}

pub fn rk4_step<T: Real>(state: &StateVector<T>, params: &ModelParams<T>) -> Result<StateVector<T>> {
    check_state(state, params)?;
    let mut u = state.0.clone();
    Rk4Workspace::new(u.len()).integrate(&mut u, params, 1, 0)?;
    Ok(StateVector(u))
}

/// Integrates `steps` RK4 steps from `state`.
pub fn integrate<T: Real>(
    state: &StateVector<T>,
    params: &ModelParams<T>,
    steps: usize,
) -> Result<StateVector<T>> {
    check_state(state, params)?;
    let mut u = state.0.clone();
    Rk4Workspace::new(u.len()).integrate(&mut u, params, steps, 0)?;
    Ok(StateVector(u))
}

/// Starts from the fixed point `u_n = F`, adds `perturbation` to the first
/// component, and integrates for `duration` model time units.
///
/// The number of steps is `round(duration / dt)`.
pub fn spin_up<T: Real>(params: &ModelParams<T>, perturbation: T, duration: T) -> Result<StateVector<T>> {
    params.validate()?;
    if !(duration > T::zero()) {
        return Err(Error::InvalidParameter(format!("spin-up duration {duration} must be positive")));
    }
    let mut state = StateVector::constant(params.dimension, params.forcing);
    state.0[0] = state.0[0] + perturbation;
    let steps = (duration / params.dt).round().to_usize().unwrap_or(0);
    integrate(&state, params, steps)
}

/// States at observation times `t_j = j * steps_per_cycle * dt` for `j = 1..=n_cycles`.
pub fn generate_truth<T: Real>(
    initial: &StateVector<T>,
    params: &ModelParams<T>,
    n_cycles: usize,
    steps_per_cycle: usize,
) -> Result<Vec<StateVector<T>>> {
    check_state(initial, params)?;
    if n_cycles == 0 || steps_per_cycle == 0 {
        return Err(Error::InvalidParameter(
            "n_cycles and steps_per_cycle must both be at least 1".into(),
        ));
    }
    let mut u = initial.0.clone();
    let mut ws = Rk4Workspace::new(u.len());
    let mut out = Vec::with_capacity(n_cycles);
    for j in 0..n_cycles {
        ws.integrate(&mut u, params, steps_per_cycle, j * steps_per_cycle)?;
        out.push(StateVector(u.clone()));
    }
    Ok(out)
}

/// CSV with header `cycle,time,u_0,...,u_{N-1}`; cycle numbering starts at 1.
pub fn write_truth_csv<T: Real, W: Write>(
    writer: W,
    truth: &[StateVector<T>],
    steps_per_cycle: usize,
    dt: T,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = truth.first().map_or(0, |s| s.len());
    let mut header = vec!["cycle".to_string(), "time".to_string()];
    header.extend((0..n).map(|i| format!("u_{i}")));
    w.write_record(&header)?;
    for (j, state) in truth.iter().enumerate() {
        let cycle = j + 1;
        let mut rec = vec![cycle.to_string(), format!("{}", T::from_count(cycle * steps_per_cycle) * dt)];
        rec.extend(state.0.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
