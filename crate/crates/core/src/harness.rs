//! Verification drivers: manufactured solutions and convergence studies, twin
//! runs against the Gronwall envelope, positivity fuzzing and ε-sweeps.
//!
//! Independent rungs, cases and sweep members run concurrently through
//! [`crate::par`]; results are always merged in input order.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::config::{ModelParams, ValidatedConfig};
use crate::constitutive::{regularize_initial, Sym2};
use crate::diagnostics::gronwall_g_pair;
use crate::dynamics::{Dynamics, Forcing, NoForcing};
use crate::error::{Error, Result};
use crate::fields::{State, SymTensorField, VectorField};
use crate::init::{random_spd_tensor, random_symmetric, random_velocity, seeded};
use crate::io::{fmt_f64, write_table};
use crate::par;
use crate::spectral::{Field, SpectralGrid};
use crate::timeloop::{
    advance, integrate, Observer, RunControl, RunOutcome, Scheme, Stepper, StepperOptions,
};

/// Stepper and admissible initial state for a validated configuration. With
/// `ε > 0` the initial tensor is regularized first.
pub fn setup(cfg: &ValidatedConfig) -> Result<(Stepper, State)> {
    let run = cfg.run();
    let params = *cfg.params();
    let grid = SpectralGrid::new(run.grid_size)?;
    let dynamics = Dynamics::new(grid, params)
        .with_dealias(run.dealias)
        .with_galerkin(run.galerkin_k)?;
    let options = StepperOptions {
        scheme: run.scheme,
        dt: run.dt,
        cfl: run.cfl,
    };
    let mut state = run.initial.build(run.grid_size, run.seed)?;
    if params.regularized() {
        state.tensor = regularize_initial(&state.tensor, params.epsilon);
    }
    let state = dynamics.project_state(&state)?;
    Ok((Stepper::new(dynamics, options)?, state))
}

/// Unforced run of a configuration, reporting to `observers`.
pub fn simulate(cfg: &ValidatedConfig, observers: &mut [&mut dyn Observer]) -> Result<RunOutcome> {
    let (stepper, state) = setup(cfg)?;
    let ctrl = RunControl {
        t_end: cfg.run().t_end,
        output_every: cfg.run().output_every,
        emit_initial: true,
        abort_on_nonspd: cfg.run().abort_on_nonspd,
        max_steps: None,
    };
    integrate(&stepper, state, &NoForcing, &ctrl, observers)
}

// ---------------------------------------------------------------------------
// Manufactured solutions

/// Closed-form solutions used for verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManufacturedKind {
    /// Decaying Taylor–Green vortex with `B = I` and `a = 0`; an exact solution.
    TaylorGreen,
    /// `v = 0`, `B = I + 0.1 diag(sin 2πx, −sin 2πx)`, time independent.
    SteadyTensor,
    /// Time-dependent coupled state. The velocity comes from a stream function
    /// whose Fourier coefficients decay geometrically with ratio `RHO`, so
    /// spectral errors are visible on desk-size grids.
    Smooth,
}

/// Geometric decay ratio of the [`ManufacturedKind::Smooth`] velocity.
pub const RHO: f64 = 0.3;

/// A closed-form `(v*, B*)` with the parameters it is run under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub kind: ManufacturedKind,
    pub params: ModelParams,
}

/// Poisson kernel `(1 − ρ²)/(1 − 2ρ cos θ + ρ²) = 1 + 2Σ ρᵏ cos kθ` and its derivative.
fn poisson(theta: f64) -> (f64, f64) {
    let den = 1.0 - 2.0 * RHO * theta.cos() + RHO * RHO;
    let num = 1.0 - RHO * RHO;
    (num / den, -num * 2.0 * RHO * theta.sin() / (den * den))
}

impl ManufacturedCase {
    pub fn taylor_green() -> Self {
        ManufacturedCase {
            kind: ManufacturedKind::TaylorGreen,
            params: ModelParams {
                a: 0.0,
                ..ModelParams::default()
            },
        }
    }

    pub fn steady_tensor() -> Self {
        ManufacturedCase {
            kind: ManufacturedKind::SteadyTensor,
            params: ModelParams::default(),
        }
    }

    pub fn smooth() -> Self {
        ManufacturedCase {
            kind: ManufacturedKind::Smooth,
            params: ModelParams::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ManufacturedKind::TaylorGreen => "taylor_green",
            ManufacturedKind::SteadyTensor => "steady_tensor",
            ManufacturedKind::Smooth => "smooth",
        }
    }

    /// Time amplitudes `(φ, φ′, χ, χ′)` of the separable form
    /// `v* = φ(t) V(x)`, `B* = I + χ(t) Q(x)`.
    pub fn amplitudes(&self, t: f64) -> [f64; 4] {
        match self.kind {
            ManufacturedKind::TaylorGreen => {
                let decay = (-8.0 * PI * PI * t).exp();
                [decay, -8.0 * PI * PI * decay, 0.0, 0.0]
            }
            ManufacturedKind::SteadyTensor => [0.0, 0.0, 1.0, 0.0],
            ManufacturedKind::Smooth => [
                0.5 * (1.0 + 0.5 * (4.0 * t).sin()),
                (4.0 * t).cos(),
                (5.0 * t).cos(),
                -5.0 * (5.0 * t).sin(),
            ],
        }
    }

    /// Spatial shapes `(V, Q)` at a point.
    pub fn shapes(&self, x: f64, y: f64) -> ([f64; 2], Sym2) {
        let (sx, cx) = (2.0 * PI * x).sin_cos();
        let (sy, cy) = (2.0 * PI * y).sin_cos();
        match self.kind {
            ManufacturedKind::TaylorGreen => ([sx * cy, -cx * sy], Sym2::ZERO),
            ManufacturedKind::SteadyTensor => ([0.0; 2], Sym2::diag(0.1 * sx, -0.1 * sx)),
            ManufacturedKind::Smooth => {
                let (p, dp) = poisson(2.0 * PI * x);
                let q = Sym2::new(
                    0.3 * sx * cy,
                    0.15 * (2.0 * PI * (x + y)).sin(),
                    0.3 * cx * sy,
                );
                ([p * cy, -dp * sy], q)
            }
        }
    }

    /// `(v*, ∂t v*)` at a point.
    pub fn velocity(&self, t: f64, x: f64, y: f64) -> ([f64; 2], [f64; 2]) {
        let [phi, dphi, _, _] = self.amplitudes(t);
        let (v, _) = self.shapes(x, y);
        ([phi * v[0], phi * v[1]], [dphi * v[0], dphi * v[1]])
    }

    /// `(B*, ∂t B*)` at a point.
    pub fn tensor(&self, t: f64, x: f64, y: f64) -> (Sym2, Sym2) {
        let [_, _, chi, dchi] = self.amplitudes(t);
        let (_, q) = self.shapes(x, y);
        (Sym2::IDENTITY + q.scale(chi), q.scale(dchi))
    }

    /// `(v*, B*)` sampled on an `n × n` grid, with the velocity passed through
    /// the discrete Leray projection so that it is exactly admissible there.
    pub fn state(&self, n: usize, t: f64) -> Result<State> {
        let g = SpectralGrid::new(n)?;
        let v = VectorField::from_fn(n, |x, y| self.velocity(t, x, y).0);
        let b = SymTensorField::from_fn(n, |x, y| self.tensor(t, x, y).0);
        State::new(t, g.leray_project(&v)?, b)
    }

    fn rates(&self, n: usize, t: f64) -> (VectorField, SymTensorField) {
        (
            VectorField::from_fn(n, |x, y| self.velocity(t, x, y).1),
            SymTensorField::from_fn(n, |x, y| self.tensor(t, x, y).1),
        )
    }
}

/// Sources `(f*, G*)` that make the sampled closed form satisfy the discrete
/// system on the grid of `dynamics`:
/// `f* = P[∂t v*] − rhs_v(v*, B*)` and `G* = ∂t B* − rhs_B(v*, B*)`.
pub fn manufactured_sources(
    case: &ManufacturedCase,
    dynamics: &Dynamics,
    t: f64,
) -> Result<(VectorField, SymTensorField)> {
    let g = dynamics.grid();
    let n = g.n();
    let s = case.state(n, t)?;
    let (dv, db) = case.rates(n, t);
    let dv = g.leray_project(&dv)?;
    let (v_rhs, b_rhs) = rhs_fields(dynamics, &s)?;
    Ok((dv.sub(&v_rhs), db.sub(&b_rhs)))
}

/// Physical-space right-hand sides of `state` without forcing, weighted by
/// `ρ_ε` when the parameters are regularized.
fn rhs_fields(dynamics: &Dynamics, state: &State) -> Result<(VectorField, SymTensorField)> {
    let g = dynamics.grid();
    let ([mu, mv], [t11, t12, t22]) = if dynamics.params().regularized() {
        (
            dynamics.momentum_rhs_regularized(state, None)?,
            dynamics.tensor_rhs_regularized(state)?,
        )
    } else {
        (
            dynamics.momentum_rhs(state, None)?,
            dynamics.tensor_rhs(state)?,
        )
    };
    Ok((
        VectorField::new(g.inverse(&mu)?, g.inverse(&mv)?),
        SymTensorField::new(g.inverse(&t11)?, g.inverse(&t12)?, g.inverse(&t22)?),
    ))
}

/// Sample a field on a grid that divides the source grid.
pub fn inject(f: &Field, n: usize) -> Result<Field> {
    let m = f.n();
    if n == 0 || !m.is_multiple_of(n) {
        return Err(Error::InvalidArgument(format!(
            "cannot inject a {m}-grid onto a {n}-grid"
        )));
    }
    let stride = m / n;
    let src = f.as_slice();
    Field::from_vec(
        n,
        (0..n * n)
            .map(|k| src[(k / n) * stride * m + (k % n) * stride])
            .collect(),
    )
}

type SourcePair = Arc<(VectorField, SymTensorField)>;

fn inject_vector(v: &VectorField, n: usize) -> Result<VectorField> {
    Ok(VectorField::new(inject(&v.x, n)?, inject(&v.y, n)?))
}

fn inject_tensor(b: &SymTensorField, n: usize) -> Result<SymTensorField> {
    Ok(SymTensorField::new(
        inject(&b.b11, n)?,
        inject(&b.b12, n)?,
        inject(&b.b22, n)?,
    ))
}

/// Monomials `1, φ, χ, φ², φχ, χ²` of the unregularized right-hand side.
fn monomials(phi: f64, chi: f64) -> [f64; 6] {
    [1.0, phi, chi, phi * phi, phi * chi, chi * chi]
}

/// Without regularization both right-hand sides are quadratic polynomials in
/// `(φ, χ)`, so the sources at any time are a fixed combination of six fields
/// computed once.
struct Separable {
    v: VectorField,
    q: SymTensorField,
    coeffs: Vec<(VectorField, SymTensorField)>,
}

impl Separable {
    fn new(case: &ManufacturedCase, source: &Dynamics, target: usize) -> Result<Self> {
        let g = source.grid();
        let n = g.n();
        let v = g.leray_project(&VectorField::from_fn(n, |x, y| case.shapes(x, y).0))?;
        let q = SymTensorField::from_fn(n, |x, y| case.shapes(x, y).1);
        let eval = |phi: f64, chi: f64| -> Result<(VectorField, SymTensorField)> {
            let b = SymTensorField::identity(n).add(&q.scale(chi));
            rhs_fields(source, &State::new(0.0, v.scale(phi), b)?)
        };
        let r00 = eval(0.0, 0.0)?;
        let (rp0, rm0) = (eval(1.0, 0.0)?, eval(-1.0, 0.0)?);
        let (r0p, r0m) = (eval(0.0, 1.0)?, eval(0.0, -1.0)?);
        let r11 = eval(1.0, 1.0)?;
        // odd and even parts along each axis
        let odd = |p: &(VectorField, SymTensorField), m: &(VectorField, SymTensorField)| {
            (p.0.sub(&m.0).scale(0.5), p.1.sub(&m.1).scale(0.5))
        };
        let even = |p: &(VectorField, SymTensorField), m: &(VectorField, SymTensorField)| {
            (
                p.0.add(&m.0).scale(0.5).sub(&r00.0),
                p.1.add(&m.1).scale(0.5).sub(&r00.1),
            )
        };
        let c10 = odd(&rp0, &rm0);
        let c20 = even(&rp0, &rm0);
        let c01 = odd(&r0p, &r0m);
        let c02 = even(&r0p, &r0m);
        let c11 = (
            r11.0
                .sub(&r00.0)
                .sub(&c10.0)
                .sub(&c01.0)
                .sub(&c20.0)
                .sub(&c02.0),
            r11.1
                .sub(&r00.1)
                .sub(&c10.1)
                .sub(&c01.1)
                .sub(&c20.1)
                .sub(&c02.1),
        );
        let coeffs = [r00, c10, c01, c20, c11, c02]
            .iter()
            .map(|(a, b)| Ok((inject_vector(a, target)?, inject_tensor(b, target)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Separable {
            v: inject_vector(&v, target)?,
            q: inject_tensor(&q, target)?,
            coeffs,
        })
    }

    fn sources(&self, case: &ManufacturedCase, t: f64) -> (VectorField, SymTensorField) {
        let [phi, dphi, chi, dchi] = case.amplitudes(t);
        let mut f = self.v.scale(dphi);
        let mut g = self.q.scale(dchi);
        for (m, (cv, cb)) in monomials(phi, chi).into_iter().zip(&self.coeffs) {
            f = f.sub(&cv.scale(m));
            g = g.sub(&cb.scale(m));
        }
        (f, g)
    }
}

enum SourceMode {
    Separable(Separable),
    Direct {
        source: Dynamics,
        cache: Mutex<Vec<(u64, SourcePair)>>,
    },
}

/// Forcing that feeds the manufactured sources into the stepper. Sources are
/// computed on a source grid (the run grid for the inverse-crime check, a finer
/// reference grid for convergence studies) and injected onto the run grid.
///
/// Unregularized cases are assembled from precomputed polynomial coefficients;
/// regularized ones are recomputed at each new time.
pub struct ManufacturedForcing {
    case: ManufacturedCase,
    target: usize,
    mode: SourceMode,
}

impl ManufacturedForcing {
    pub fn new(case: ManufacturedCase, source_n: usize, target_n: usize) -> Result<Self> {
        let source = Dynamics::new(SpectralGrid::new(source_n)?, case.params);
        if target_n == 0 || !source_n.is_multiple_of(target_n) {
            return Err(Error::InvalidArgument(format!(
                "source grid {source_n} is not a multiple of run grid {target_n}"
            )));
        }
        let mode = if case.params.regularized() {
            SourceMode::Direct {
                source,
                cache: Mutex::new(Vec::new()),
            }
        } else {
            SourceMode::Separable(Separable::new(&case, &source, target_n)?)
        };
        Ok(ManufacturedForcing {
            case,
            target: target_n,
            mode,
        })
    }

    fn sources(&self, t: f64) -> Result<SourcePair> {
        let (source, cache) = match &self.mode {
            SourceMode::Separable(sep) => return Ok(Arc::new(sep.sources(&self.case, t))),
            SourceMode::Direct { source, cache } => (source, cache),
        };
        let key = t.to_bits();
        if let Some((_, hit)) = cache
            .lock()
            .expect("cache lock")
            .iter()
            .find(|(k, _)| *k == key)
        {
            return Ok(hit.clone());
        }
        let (f, g) = manufactured_sources(&self.case, source, t)?;
        let pair = Arc::new((
            inject_vector(&f, self.target)?,
            inject_tensor(&g, self.target)?,
        ));
        let mut cache = cache.lock().expect("cache lock");
        if cache.len() >= 4 {
            cache.remove(0);
        }
        cache.push((key, pair.clone()));
        Ok(pair)
    }
}

impl Forcing for ManufacturedForcing {
    fn velocity(&self, t: f64) -> Option<VectorField> {
        self.sources(t).ok().map(|p| p.0.clone())
    }

    fn tensor(&self, t: f64) -> Option<SymTensorField> {
        self.sources(t).ok().map(|p| p.1.clone())
    }
}

/// Largest pointwise mismatch between `∂t(v*, B*)` and the discrete right-hand
/// side plus same-grid sources. Zero up to roundoff by construction.
pub fn inverse_crime_residual(case: &ManufacturedCase, n: usize, t: f64) -> Result<f64> {
    let dynamics = Dynamics::new(SpectralGrid::new(n)?, case.params);
    let forcing = ManufacturedForcing::new(*case, n, n)?;
    let s = case.state(n, t)?;
    let tend = dynamics.rhs(&s, &forcing)?;
    let g = dynamics.grid();
    let (dv, db) = case.rates(n, t);
    let dv = g.leray_project(&dv)?;
    let rv = tend.velocity(g)?.sub(&dv).max_abs();
    let rb = tend.tensor(g)?.sub(&db).max_abs();
    Ok(rv.max(rb))
}

// ---------------------------------------------------------------------------
// Convergence studies

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub n: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub case: String,
    pub n: usize,
    pub dt: f64,
    pub eps: f64,
    pub error_v: f64,
    pub error_b: f64,
    /// Observed order against the previous rung; `None` on the first rung.
    pub order: Option<f64>,
    pub pass: bool,
}

impl ConvergenceRow {
    pub fn error(&self) -> f64 {
        self.error_v.hypot(self.error_b)
    }
}

/// What a study has to show to pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    /// Each rung reduces the error by at least this factor.
    Drop(f64),
    /// Each observed order lies within `tol` of `order`.
    Order { order: f64, tol: f64 },
    /// Report only.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub pass: bool,
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "case",
    "N",
    "dt",
    "eps",
    "error_l2_v",
    "error_l2_B",
    "order",
    "pass",
];

#[allow(clippy::too_many_arguments)]
fn report_row(
    case: &str,
    n: usize,
    dt: f64,
    eps: f64,
    ev: f64,
    eb: f64,
    order: Option<f64>,
    pass: bool,
) -> Vec<String> {
    vec![
        case.to_string(),
        n.to_string(),
        fmt_f64(dt),
        fmt_f64(eps),
        fmt_f64(ev),
        fmt_f64(eb),
        order.map_or_else(String::new, fmt_f64),
        pass.to_string(),
    ]
}

impl ConvergenceReport {
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }

    pub fn table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                report_row(
                    &r.case, r.n, r.dt, r.eps, r.error_v, r.error_b, r.order, r.pass,
                )
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_table(path, &REPORT_COLUMNS, &self.table())
    }
}

/// Run a manufactured case on every rung and compare with the closed form at
/// `t_end`. Sources come from a reference grid of size `source_n` when given,
/// otherwise from each rung's own grid.
pub fn convergence_study(
    case: &ManufacturedCase,
    ladder: &[Rung],
    scheme: Scheme,
    t_end: f64,
    source_n: Option<usize>,
    expect: Expectation,
) -> Result<ConvergenceReport> {
    let errors: Vec<Result<(f64, f64)>> =
        par::map(ladder.iter().copied().enumerate().collect(), |(k, rung)| {
            run_rung(case, rung, scheme, t_end, source_n).map_err(|e| Error::Rung {
                index: k,
                source: Box::new(e),
            })
        });
    let errors: Vec<(f64, f64)> = errors.into_iter().collect::<Result<_>>()?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ladder.len());
    for (k, (rung, (ev, eb))) in ladder.iter().zip(errors).enumerate() {
        let e = ev.hypot(eb);
        let (order, pass) = if k == 0 {
            (None, true)
        } else {
            let prev = &rows[k - 1];
            let ratio = prev.error() / e;
            let h = if rung.n != prev.n {
                rung.n as f64 / prev.n as f64
            } else {
                prev.dt / rung.dt
            };
            let p = ratio.ln() / h.ln();
            let ok = match expect {
                Expectation::Drop(f) => ratio >= f,
                Expectation::Order { order, tol } => (p - order).abs() <= tol,
                Expectation::None => true,
            };
            (Some(p), ok)
        };
        rows.push(ConvergenceRow {
            case: case.name().to_string(),
            n: rung.n,
            dt: rung.dt,
            eps: case.params.epsilon,
            error_v: ev,
            error_b: eb,
            order,
            pass,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ConvergenceReport { rows, pass })
}

fn run_rung(
    case: &ManufacturedCase,
    rung: Rung,
    scheme: Scheme,
    t_end: f64,
    source_n: Option<usize>,
) -> Result<(f64, f64)> {
    let n = rung.n;
    let dynamics = Dynamics::new(SpectralGrid::new(n)?, case.params);
    let stepper = Stepper::new(dynamics, StepperOptions::fixed(scheme, rung.dt))?;
    let forcing = ManufacturedForcing::new(*case, source_n.unwrap_or(n).max(n), n)?;
    let out = advance(&stepper, case.state(n, 0.0)?, &forcing, t_end)?;
    let exact = case.state(n, t_end)?;
    Ok((
        out.state.velocity.sub(&exact.velocity).norm_l2(),
        out.state.tensor.sub(&exact.tensor).norm_l2(),
    ))
}

// ---------------------------------------------------------------------------
// Twin runs

#[derive(Debug, Clone, PartialEq)]
pub struct TwinReport {
    pub times: Vec<f64>,
    /// `‖v − u‖² + ‖B − A‖²`.
    pub separation: Vec<f64>,
    /// `∫₀ᵗ g ds` with the pair functional `g(v, B) + g(u, A) − 1`.
    pub int_g: Vec<f64>,
    pub envelope: Vec<f64>,
    pub c_fit: f64,
    /// Share of output times after the start where `separation <= envelope`.
    pub fraction_below: f64,
}

impl TwinReport {
    pub fn pass(&self, min_fraction: f64) -> bool {
        self.fraction_below >= min_fraction
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<Vec<String>> = (0..self.times.len())
            .map(|k| {
                vec![
                    fmt_f64(self.times[k]),
                    fmt_f64(self.separation[k]),
                    fmt_f64(self.int_g[k]),
                    fmt_f64(self.envelope[k]),
                ]
            })
            .collect();
        write_table(path, &["t", "separation", "int_g", "envelope"], &rows)
    }
}

/// Fixed unit-size perturbation direction `(δv, δB)` drawn from `seed`.
pub fn perturbation(n: usize, seed: u64) -> (VectorField, SymTensorField) {
    let mut rng = seeded(seed ^ 0x5eed_7a1f);
    let dv = random_velocity(n, &mut rng, 1.0, 4);
    let db = random_symmetric(n, &mut rng, 1.0, 4);
    (dv, db)
}

fn separation(a: &State, b: &State) -> f64 {
    let dv = a.velocity.sub(&b.velocity);
    let db = a.tensor.sub(&b.tensor);
    dv.dot(&dv) + db.dot(&db)
}

/// Run `state0` and `state0 + amp (δv, δB)` side by side to `t_end` and fit the
/// Gronwall envelope `sep(0) exp(C_fit ∫g)` on the first 10% of the run.
pub fn twin_run(
    stepper: &Stepper,
    state0: &State,
    amp: f64,
    t_end: f64,
    seed: u64,
) -> Result<TwinReport> {
    if !(amp >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be >= 0, got {amp}"
        )));
    }
    let grid = stepper.dynamics().grid().clone();
    let (dv, db) = perturbation(state0.n(), seed);
    let mut a = stepper.dynamics().project_state(state0)?;
    let mut b = State::new(
        state0.t,
        state0.velocity.add(&dv.scale(amp)),
        state0.tensor.add(&db.scale(amp)),
    )?;
    b = stepper.dynamics().project_state(&b)?;
    let mut times = vec![a.t];
    let mut sep = vec![separation(&a, &b)];
    let mut g_prev = gronwall_g_pair(&grid, &a, &b)?;
    let mut int_g = vec![0.0];
    let mut steps = 0usize;
    while t_end - a.t > 1e-9 * stepper.dt_for(&a) {
        let nominal = stepper.dt_for(&a);
        let last = a.t + nominal >= t_end - 1e-6 * nominal;
        let h = if last { t_end - a.t } else { nominal };
        let (na, nb) = par::join(
            || stepper.step(&a, &NoForcing, h),
            || stepper.step(&b, &NoForcing, h),
        );
        steps += 1;
        let tag = |e: Error| match e {
            Error::NonFinite { last_good, .. } => Error::NonFinite {
                step: steps,
                last_good,
            },
            other => other,
        };
        a = na.map_err(tag)?;
        b = nb.map_err(tag)?;
        if last {
            a.t = t_end;
            b.t = t_end;
        }
        let g = gronwall_g_pair(&grid, &a, &b)?;
        let acc = int_g.last().copied().unwrap_or(0.0) + 0.5 * h * (g_prev + g);
        g_prev = g;
        times.push(a.t);
        sep.push(separation(&a, &b));
        int_g.push(acc);
    }
    let sep0 = sep[0];
    let t0 = times[0];
    let window = t0 + 0.1 * (t_end - t0);
    let c_fit = if sep0 > 0.0 {
        times
            .iter()
            .zip(sep.iter().zip(&int_g))
            .skip(1)
            .filter(|(t, _)| **t <= window)
            .map(|(_, (s, ig))| (s / sep0).ln() / ig)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let envelope: Vec<f64> = int_g.iter().map(|ig| sep0 * (c_fit * ig).exp()).collect();
    let later = times.len() - 1;
    let below = (1..times.len())
        .filter(|&k| sep[k] <= envelope[k] * (1.0 + 1e-9))
        .count();
    Ok(TwinReport {
        times,
        separation: sep,
        int_g,
        envelope,
        c_fit,
        fraction_below: if later == 0 {
            1.0
        } else {
            below as f64 / later as f64
        },
    })
}

// ---------------------------------------------------------------------------
// Positivity fuzzing

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzSetup {
    pub n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub params: ModelParams,
    pub seed: u64,
    /// Peak speed of the random initial velocity.
    pub velocity_amp: f64,
    /// Entry bound of the random tensor perturbation.
    pub tensor_amp: f64,
}

impl FuzzSetup {
    pub fn new(n: usize, t_end: f64, dt: f64, params: ModelParams) -> Self {
        FuzzSetup {
            n,
            t_end,
            dt,
            scheme: Scheme::ImexMidpoint,
            params,
            seed: 0,
            velocity_amp: 1.0,
            tensor_amp: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzCase {
    pub seed: u64,
    pub initial_floor: f64,
    /// Minimum of `λmin` over all grid points and steps.
    pub lambda_floor: f64,
    pub dt: f64,
    pub retried: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzReport {
    pub cases: Vec<FuzzCase>,
}

impl FuzzReport {
    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn floor(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.lambda_floor)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .cases
            .iter()
            .map(|c| {
                vec![
                    c.seed.to_string(),
                    fmt_f64(c.initial_floor),
                    fmt_f64(c.lambda_floor),
                    fmt_f64(c.dt),
                    c.retried.to_string(),
                    c.pass.to_string(),
                ]
            })
            .collect();
        write_table(
            path,
            &[
                "seed",
                "initial_floor",
                "lambda_floor",
                "dt",
                "retried",
                "pass",
            ],
            &rows,
        )
    }
}

/// Random admissible initial state of one fuzz case.
pub fn fuzz_state(setup: &FuzzSetup, seed: u64) -> Result<State> {
    let mut rng = seeded(seed);
    let v = random_velocity(setup.n, &mut rng, setup.velocity_amp, 4);
    let b = random_spd_tensor(setup.n, &mut rng, setup.tensor_amp, 4, 0.1);
    State::new(0.0, v, b)
}

fn min_eig(state: &State) -> f64 {
    let b = &state.tensor;
    par::min_by(b.n() * b.n(), |i| b.at(i).min_eig()).0
}

/// Lowest `λmin` over a run, or `None` if the run blew up.
fn track_floor(stepper: &Stepper, state0: &State, t_end: f64) -> Option<f64> {
    let mut s = state0.clone();
    let mut floor = min_eig(&s);
    while t_end - s.t > 1e-9 * stepper.dt_for(&s) {
        let nominal = stepper.dt_for(&s);
        let last = s.t + nominal >= t_end - 1e-6 * nominal;
        let h = if last { t_end - s.t } else { nominal };
        s = stepper.step(&s, &NoForcing, h).ok()?;
        if last {
            s.t = t_end;
        }
        floor = floor.min(min_eig(&s));
    }
    Some(floor)
}

/// Run `n_cases` random SPD cases and record the smallest eigenvalue seen. A
/// case that loses positivity or blows up is retried once with half the step.
pub fn positivity_fuzz(setup: &FuzzSetup, n_cases: usize) -> Result<FuzzReport> {
    if n_cases == 0 {
        return Err(Error::InvalidArgument("n_cases must be >= 1".into()));
    }
    let dynamics = Dynamics::new(SpectralGrid::new(setup.n)?, setup.params);
    let seeds: Vec<u64> = (0..n_cases as u64)
        .map(|k| setup.seed.wrapping_add(k))
        .collect();
    let cases: Vec<Result<FuzzCase>> = par::map(seeds, |seed| {
        let s0 = dynamics.project_state(&fuzz_state(setup, seed)?)?;
        let initial_floor = min_eig(&s0);
        let mut dt = setup.dt;
        let mut retried = false;
        let mut floor = None;
        for attempt in 0..2 {
            let stepper = Stepper::new(dynamics.clone(), StepperOptions::fixed(setup.scheme, dt))?;
            floor = track_floor(&stepper, &s0, setup.t_end);
            if floor.is_some_and(|f| f > 0.0) || attempt == 1 {
                break;
            }
            dt *= 0.5;
            retried = true;
        }
        let lambda_floor = floor.unwrap_or(f64::NAN);
        Ok(FuzzCase {
            seed,
            initial_floor,
            lambda_floor,
            dt,
            retried,
            pass: lambda_floor > 0.0,
        })
    });
    Ok(FuzzReport {
        cases: cases.into_iter().collect::<Result<_>>()?,
    })
}

// ---------------------------------------------------------------------------
// ε-sweeps

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    /// `(∫₀ᵀ ‖v_ε − v‖² + ‖B_ε − B‖² dt)^{1/2}`.
    pub distance: f64,
    pub distance_v: f64,
    pub distance_b: f64,
    /// `ε` at or above the largest initial `λmin`: every weighted source is off.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Smallest eigenvalue seen in the unregularized run.
    pub base_floor: f64,
    pub n: usize,
    pub dt: f64,
}

impl SweepReport {
    /// Distances strictly decrease along the rows (given in decreasing `ε`).
    pub fn decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].distance < w[0].distance)
    }

    pub fn table(&self) -> Vec<Vec<String>> {
        let ok = self.decreasing();
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let order = (k > 0).then(|| {
                    let p = &self.rows[k - 1];
                    (p.distance / r.distance).ln() / (p.eps / r.eps).ln()
                });
                report_row(
                    "eps_sweep",
                    self.n,
                    self.dt,
                    r.eps,
                    r.distance_v,
                    r.distance_b,
                    order,
                    ok && !r.degenerate,
                )
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_table(path, &REPORT_COLUMNS, &self.table())
    }
}

/// Run the unregularized system and one regularized run per `ε` in lockstep
/// and accumulate their space-time `L²` distances. Each regularized run starts
/// from the regularized initial tensor.
pub fn epsilon_sweep(
    stepper: &Stepper,
    state0: &State,
    eps: &[f64],
    t_end: f64,
) -> Result<SweepReport> {
    let base_params = ModelParams {
        epsilon: 0.0,
        ..*stepper.dynamics().params()
    };
    let base = Stepper::new(
        stepper.dynamics().clone().with_params(base_params),
        *stepper.options(),
    )?;
    let mut members: Vec<Stepper> = vec![base];
    for &e in eps {
        if !(e >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be >= 0, got {e}"
            )));
        }
        let p = ModelParams {
            epsilon: e,
            ..base_params
        };
        members.push(Stepper::new(
            stepper.dynamics().clone().with_params(p),
            *stepper.options(),
        )?);
    }
    let max_lambda = {
        let b = &state0.tensor;
        (0..b.n() * b.n())
            .map(|i| b.at(i).min_eig())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut states: Vec<State> = std::iter::once(Ok(state0.clone()))
        .chain(eps.iter().map(|&e| {
            let mut s = state0.clone();
            s.tensor = regularize_initial(&s.tensor, e);
            Ok(s)
        }))
        .collect::<Result<_>>()?;
    let dist = |states: &[State]| -> Vec<(f64, f64)> {
        states[1..]
            .iter()
            .map(|s| {
                let dv = s.velocity.sub(&states[0].velocity);
                let db = s.tensor.sub(&states[0].tensor);
                (dv.dot(&dv), db.dot(&db))
            })
            .collect()
    };
    let mut prev = dist(&states);
    let mut acc = vec![(0.0, 0.0); eps.len()];
    let mut base_floor = min_eig(&states[0]);
    let mut steps = 0usize;
    while t_end - states[0].t > 1e-9 * members[0].dt_for(&states[0]) {
        let nominal = members[0].dt_for(&states[0]);
        let last = states[0].t + nominal >= t_end - 1e-6 * nominal;
        let h = if last { t_end - states[0].t } else { nominal };
        steps += 1;
        let next: Vec<Result<State>> = par::map(members.iter().zip(&states).collect(), |(m, s)| {
            m.step(s, &NoForcing, h)
        });
        states = next
            .into_iter()
            .map(|r| {
                r.map_err(|e| match e {
                    Error::NonFinite { last_good, .. } => Error::NonFinite {
                        step: steps,
                        last_good,
                    },
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        if last {
            for s in states.iter_mut() {
                s.t = t_end;
            }
        }
        base_floor = base_floor.min(min_eig(&states[0]));
        let cur = dist(&states);
        for (a, (p, c)) in acc.iter_mut().zip(prev.iter().zip(&cur)) {
            a.0 += 0.5 * h * (p.0 + c.0);
            a.1 += 0.5 * h * (p.1 + c.1);
        }
        prev = cur;
    }
    let rows = eps
        .iter()
        .zip(acc)
        .map(|(&e, (v2, b2))| SweepRow {
            eps: e,
            distance: (v2 + b2).sqrt(),
            distance_v: v2.sqrt(),
            distance_b: b2.sqrt(),
            degenerate: e >= max_lambda,
        })
        .collect();
    Ok(SweepReport {
        rows,
        base_floor,
        n: state0.n(),
        dt: members[0].options().dt,
    })
}
