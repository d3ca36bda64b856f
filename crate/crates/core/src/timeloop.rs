//! Integrating-factor IMEX time stepping.
//!
//! Diffusion is integrated exactly per Fourier mode through
//! `E(h) = exp(−4π²|n|² h)`; everything else is explicit:
//!
//! ```text
//! Euler:     u⁺ = E(dt) [u + dt N(u, t)]
//! midpoint:  u* = E(dt/2) [u + dt/2 N(u, t)]
//!            u⁺ = E(dt) u + dt E(dt/2) N(u*, t + dt/2)
//! ```
//!
//! The state lives in physical space between steps, so a checkpoint taken at
//! any step boundary restarts the trajectory bit-exactly.

use std::fmt;
use std::str::FromStr;

use crate::diagnostics::{interval_budget, measure, DiagnosticsRecord, Measurement};
use crate::dynamics::{scale_modes, tendency_from, Dynamics, Forcing, SpectralState, Tendency};
use crate::error::{ConfigError, Error, Result};
use crate::fields::State;
use crate::spectral::Spectrum;

/// Lower bound on the speed used by the CFL rule.
pub const V_FLOOR: f64 = 1e-6;
/// Cap on the adaptive step, in units of the grid spacing.
pub const DT_CAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    ImexEuler,
    #[default]
    ImexMidpoint,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::ImexEuler => "imex_euler",
            Scheme::ImexMidpoint => "imex_midpoint",
        }
    }

    /// Formal order of accuracy.
    pub fn order(self) -> u32 {
        match self {
            Scheme::ImexEuler => 1,
            Scheme::ImexMidpoint => 2,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imex_euler" => Ok(Scheme::ImexEuler),
            "imex_midpoint" => Ok(Scheme::ImexMidpoint),
            other => Err(ConfigError::OutOfRange {
                field: "scheme",
                value: other.to_string(),
                reason: "expected imex_euler or imex_midpoint",
            }),
        }
    }
}

/// Either a fixed step (`dt > 0`, `cfl` ignored) or the CFL rule (`dt = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperOptions {
    pub scheme: Scheme,
    pub dt: f64,
    pub cfl: f64,
}

impl StepperOptions {
    pub fn fixed(scheme: Scheme, dt: f64) -> Self {
        StepperOptions {
            scheme,
            dt,
            cfl: 0.5,
        }
    }

    pub fn adaptive(scheme: Scheme, cfl: f64) -> Self {
        StepperOptions {
            scheme,
            dt: 0.0,
            cfl,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt > 0.0 && self.dt.is_finite() {
            return Ok(());
        }
        if self.dt == 0.0 && self.cfl > 0.0 && self.cfl <= 1.0 {
            return Ok(());
        }
        Err(Error::InvalidArgument(format!(
            "need dt > 0 or dt = 0 with cfl in (0, 1], got dt = {}, cfl = {}",
            self.dt, self.cfl
        )))
    }
}

/// `min(cfl Δx / max(‖v‖∞, V_FLOOR), DT_CAP Δx)` with `Δx = 1/N`.
pub fn adaptive_dt(state: &State, cfl: f64) -> f64 {
    let dx = 1.0 / state.n() as f64;
    let speed = state.velocity.max_speed().max(V_FLOOR);
    (cfl * dx / speed).min(DT_CAP * dx)
}

/// One-step map for a fixed right-hand side.
#[derive(Debug, Clone)]
pub struct Stepper {
    dynamics: Dynamics,
    options: StepperOptions,
}

impl Stepper {
    pub fn new(dynamics: Dynamics, options: StepperOptions) -> Result<Self> {
        options.validate()?;
        Ok(Stepper { dynamics, options })
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn options(&self) -> &StepperOptions {
        &self.options
    }

    /// Step size the options prescribe for `state`.
    pub fn dt_for(&self, state: &State) -> f64 {
        if self.options.dt > 0.0 {
            self.options.dt
        } else {
            adaptive_dt(state, self.options.cfl)
        }
    }

    fn factor(&self, h: f64) -> impl Fn(usize) -> f64 + Sync + Send + '_ {
        let g = self.dynamics.grid();
        move |idx| (-g.laplace_symbol(idx) * h).exp()
    }

    fn explicit(&self, hat: &SpectralState, forcing: &dyn Forcing) -> Result<Tendency> {
        let weighted = self.dynamics.params().regularized();
        self.dynamics.explicit_terms(hat, forcing, weighted)
    }

    /// Advance `state` by `dt`. Fails with `NonFinite { step: 0 }` when the
    /// result contains NaN or infinity.
    pub fn step(&self, state: &State, forcing: &dyn Forcing, dt: f64) -> Result<State> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let hat = self.dynamics.to_spectral(state)?;
        let e_full = self.factor(dt);
        let n1 = self.explicit(&hat, forcing)?;
        let next: [Spectrum; 5] = match self.options.scheme {
            Scheme::ImexEuler => {
                let a = hat.components();
                let b = n1.components();
                std::array::from_fn(|i| scale_modes(&a[i].axpy(dt, b[i]), &e_full))
            }
            Scheme::ImexMidpoint => {
                let e_half = self.factor(0.5 * dt);
                let mid = hat.zip_with(&n1, |u, k| scale_modes(&u.axpy(0.5 * dt, k), &e_half));
                let mid = SpectralState {
                    t: state.t + 0.5 * dt,
                    ..mid
                };
                let n2 = self.explicit(&mid, forcing)?;
                let a = hat.components();
                let b = n2.components();
                std::array::from_fn(|i| {
                    scale_modes(a[i], &e_full).add(&scale_modes(b[i], &e_half).scale(dt))
                })
            }
        };
        let mut next = tendency_from(next);
        self.dynamics.project_velocity(&mut next.du, &mut next.dv)?;
        let Tendency {
            du,
            dv,
            db11,
            db12,
            db22,
        } = next;
        let out = self.dynamics.to_physical(&SpectralState {
            t: state.t + dt,
            u: du,
            v: dv,
            b11: db11,
            b12: db12,
            b22: db22,
        })?;
        if !out.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                last_good: None,
            });
        }
        Ok(out)
    }
}

/// Receiver of emitted diagnostics rows. Called on the stepping thread.
pub trait Observer {
    fn observe(&mut self, step: usize, record: &DiagnosticsRecord, state: &State) -> Result<()>;
}

/// Collects every emitted record.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub records: Vec<DiagnosticsRecord>,
}

impl Observer for Recorder {
    fn observe(&mut self, _step: usize, record: &DiagnosticsRecord, _state: &State) -> Result<()> {
        self.records.push(*record);
        Ok(())
    }
}

/// Loop control for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunControl {
    pub t_end: f64,
    /// Emit a row every this many steps; the final step is always emitted.
    pub output_every: usize,
    /// Emit a row for the initial state. Resumed runs turn this off so that
    /// their rows line up with the uninterrupted run.
    pub emit_initial: bool,
    /// Fail with `NonSpd` as soon as positivity is lost.
    pub abort_on_nonspd: bool,
    /// Stop after this many steps even if `t_end` has not been reached.
    pub max_steps: Option<usize>,
}

impl RunControl {
    pub fn until(t_end: f64) -> Self {
        RunControl {
            t_end,
            output_every: 1,
            emit_initial: true,
            abort_on_nonspd: false,
            max_steps: None,
        }
    }

    pub fn every(mut self, k: usize) -> Self {
        self.output_every = k.max(1);
        self
    }
}

/// Result of [`integrate`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: State,
    pub steps: usize,
}

/// March from `state0` to `ctrl.t_end`. Diagnostics are computed after every
/// step so that the energy-budget columns of each emitted row integrate over
/// all steps since the previous row. The final step is shortened to land on
/// `t_end` exactly.
pub fn integrate(
    stepper: &Stepper,
    state0: State,
    forcing: &dyn Forcing,
    ctrl: &RunControl,
    observers: &mut [&mut dyn Observer],
) -> Result<RunOutcome> {
    let grid = stepper.dynamics().grid().clone();
    let params = *stepper.dynamics().params();
    let measure_at = |s: &State| -> Result<Measurement> {
        let f = forcing.velocity(s.t);
        let m = measure(&grid, s, f.as_ref(), &params)?;
        if ctrl.abort_on_nonspd && !m.positive {
            let (_, idx) = crate::par::min_by(s.n() * s.n(), |i| s.tensor.at(i).min_eig());
            let (i, j) = Error::at(s.n(), idx);
            return Err(Error::NonSpd { i, j });
        }
        Ok(m)
    };

    let mut state = state0;
    let mut prev = measure_at(&state)?;
    if ctrl.emit_initial {
        for o in observers.iter_mut() {
            o.observe(0, &prev.record, &state)?;
        }
    }
    let mut acc = (0.0, 0.0);
    let mut steps = 0usize;
    let mut last_good = prev.record;
    loop {
        let remaining = ctrl.t_end - state.t;
        let nominal = stepper.dt_for(&state);
        if remaining <= 1e-9 * nominal || ctrl.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let last = state.t + nominal >= ctrl.t_end - 1e-6 * nominal;
        let h = if last { remaining } else { nominal };
        let mut next = match stepper.step(&state, forcing, h) {
            Ok(s) => s,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::NonFinite {
                    step: steps + 1,
                    last_good: Some(Box::new(last_good)),
                })
            }
            Err(e) => return Err(e),
        };
        if last {
            next.t = ctrl.t_end;
        }
        steps += 1;
        let cur = measure_at(&next)?;
        let (res, gap) = interval_budget(&prev, &cur);
        acc.0 += res;
        acc.1 += gap;
        let emit = steps.is_multiple_of(ctrl.output_every) || last;
        if emit {
            let mut rec = cur.record;
            rec.energy_residual = acc.0;
            rec.eps_gap = acc.1;
            acc = (0.0, 0.0);
            for o in observers.iter_mut() {
                o.observe(steps, &rec, &next)?;
            }
            last_good = rec;
        }
        prev = cur;
        state = next;
    }
    Ok(RunOutcome { state, steps })
}

/// March to `t_end` without diagnostics, using the same step-size rule as
/// [`integrate`]. Returns the final state and the number of steps.
pub fn advance(
    stepper: &Stepper,
    state0: State,
    forcing: &dyn Forcing,
    t_end: f64,
) -> Result<RunOutcome> {
    let mut state = state0;
    let mut steps = 0usize;
    loop {
        let remaining = t_end - state.t;
        let nominal = stepper.dt_for(&state);
        if remaining <= 1e-9 * nominal {
            break;
        }
        let last = state.t + nominal >= t_end - 1e-6 * nominal;
        let h = if last { remaining } else { nominal };
        state = stepper.step(&state, forcing, h).map_err(|e| match e {
            Error::NonFinite { last_good, .. } => Error::NonFinite {
                step: steps + 1,
                last_good,
            },
            other => other,
        })?;
        if last {
            state.t = t_end;
        }
        steps += 1;
    }
    Ok(RunOutcome { state, steps })
}
