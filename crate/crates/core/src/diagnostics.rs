//! Energies, dissipation, the energy-balance residual, the eigenvalue monitor,
//! the norm ladder and the stability functional `g`.
//!
//! All integrals are grid means over the unit torus. The H¹ norm is the full
//! norm `‖u‖² + ‖∇u‖²`.

use crate::config::ModelParams;
use crate::constitutive::{dissipation_breakdown, free_energy_psi, tensor_gradient};
use crate::error::Result;
use crate::fields::{eigen_minmax, State, SymTensorField, VectorField};
use crate::par;
use crate::spectral::{Field, SpectralGrid};

/// One row of the diagnostics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `½‖v‖²`.
    pub kinetic: f64,
    /// `∫ψ(B)`; NaN once positivity is lost.
    pub elastic: f64,
    /// `∫ξ`; NaN once positivity is lost.
    pub dissipation: f64,
    /// `(f, v)`.
    pub power_in: f64,
    /// Energy-balance residual accumulated since the previous emitted row.
    pub energy_residual: f64,
    /// Smallest eigenvalue of `B` over the grid, reported even when negative.
    pub lambda_min: f64,
    pub norm_v: f64,
    pub norm_gradv: f64,
    pub norm_b: f64,
    pub norm_gradb: f64,
    pub norm_b_l4: f64,
    pub gronwall_g: f64,
    /// Residual of the regularized energy identity since the previous row.
    pub eps_gap: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 14] = [
        "t",
        "kinetic",
        "elastic",
        "dissipation",
        "power_in",
        "energy_residual",
        "lambda_min",
        "norm_v",
        "norm_gradv",
        "norm_B",
        "norm_gradB",
        "norm_B_l4",
        "gronwall_g",
        "eps_gap",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.t,
            self.kinetic,
            self.elastic,
            self.dissipation,
            self.power_in,
            self.energy_residual,
            self.lambda_min,
            self.norm_v,
            self.norm_gradv,
            self.norm_b,
            self.norm_gradb,
            self.norm_b_l4,
            self.gronwall_g,
            self.eps_gap,
        ]
    }

    pub fn from_values(v: [f64; 14]) -> Self {
        DiagnosticsRecord {
            t: v[0],
            kinetic: v[1],
            elastic: v[2],
            dissipation: v[3],
            power_in: v[4],
            energy_residual: v[5],
            lambda_min: v[6],
            norm_v: v[7],
            norm_gradv: v[8],
            norm_b: v[9],
            norm_gradb: v[10],
            norm_b_l4: v[11],
            gronwall_g: v[12],
            eps_gap: v[13],
        }
    }

    /// `E = ½‖v‖² + ∫ψ`.
    pub fn energy(&self) -> f64 {
        self.kinetic + self.elastic
    }

    /// Bitwise comparison treating equal NaN payloads as equal.
    pub fn bit_eq(&self, other: &DiagnosticsRecord) -> bool {
        self.values()
            .iter()
            .zip(other.values())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// A record plus the quantities needed for interval budgets that do not appear
/// in the CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub record: DiagnosticsRecord,
    /// Dissipation with the relaxation group weighted by `ρ_ε(B)`.
    pub dissipation_weighted: f64,
    /// False when `B` failed to be positive definite somewhere.
    pub positive: bool,
}

/// Norm ladder of a single `(v, B)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub v: f64,
    pub grad_v: f64,
    pub b: f64,
    pub grad_b: f64,
    pub b_l4: f64,
}

impl Norms {
    pub fn compute(grid: &SpectralGrid, v: &VectorField, b: &SymTensorField) -> Result<Norms> {
        let gx = grid.gradient(&v.x)?;
        let gy = grid.gradient(&v.y)?;
        let grad_v2 = gx.dot(&gx) + gy.dot(&gy);
        let [bx, by] = tensor_gradient(grid, b)?;
        let grad_b2 = bx.dot(&bx) + by.dot(&by);
        let len = b.n() * b.n();
        let l4 = par::sum(len, |i| b.at(i).norm2().powi(2)) / len as f64;
        Ok(Norms {
            v: v.norm_l2(),
            grad_v: grad_v2.sqrt(),
            b: b.norm_l2(),
            grad_b: grad_b2.sqrt(),
            b_l4: l4.sqrt().sqrt(),
        })
    }

    /// `1 + ‖v‖² + ‖∇v‖² + ‖B‖₄⁴ + ‖∇B‖²`.
    pub fn gronwall_g(&self) -> f64 {
        1.0 + self.v.powi(2) + self.grad_v.powi(2) + self.b_l4.powi(4) + self.grad_b.powi(2)
    }
}

/// Stability functional for a single pair.
pub fn gronwall_g(grid: &SpectralGrid, state: &State) -> Result<f64> {
    Ok(Norms::compute(grid, &state.velocity, &state.tensor)?.gronwall_g())
}

/// Stability functional for a twin pair: `g(v, B) + g(u, A) − 1`.
pub fn gronwall_g_pair(grid: &SpectralGrid, a: &State, b: &State) -> Result<f64> {
    Ok(gronwall_g(grid, a)? + gronwall_g(grid, b)? - 1.0)
}

/// Full diagnostics of one state. Loss of positivity does not fail: elastic
/// energy and dissipation become NaN and `positive` is cleared.
pub fn measure(
    grid: &SpectralGrid,
    state: &State,
    f: Option<&VectorField>,
    params: &ModelParams,
) -> Result<Measurement> {
    let v = &state.velocity;
    let b = &state.tensor;
    let (lmin_field, _) = eigen_minmax(b);
    let (lambda_min, _) = par::min_by(lmin_field.len(), |i| lmin_field.as_slice()[i]);
    let positive = lambda_min > 0.0;
    let (elastic, dissipation, dissipation_weighted) = if positive {
        let (_, psi) = free_energy_psi(b, params)?;
        let (_, totals) = dissipation_breakdown(grid, v, b, params)?;
        (psi, totals.total(), totals.total_weighted())
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let norms = Norms::compute(grid, v, b)?;
    let record = DiagnosticsRecord {
        t: state.t,
        kinetic: 0.5 * v.dot(v),
        elastic,
        dissipation,
        power_in: f.map_or(0.0, |f| f.dot(v)),
        energy_residual: 0.0,
        lambda_min,
        norm_v: norms.v,
        norm_gradv: norms.grad_v,
        norm_b: norms.b,
        norm_gradb: norms.grad_b,
        norm_b_l4: norms.b_l4,
        gronwall_g: norms.gronwall_g(),
        eps_gap: 0.0,
    };
    Ok(Measurement {
        record,
        dissipation_weighted,
        positive,
    })
}

/// Diagnostics record of one state.
pub fn record(
    grid: &SpectralGrid,
    state: &State,
    f: Option<&VectorField>,
    params: &ModelParams,
) -> Result<DiagnosticsRecord> {
    Ok(measure(grid, state, f, params)?.record)
}

/// Residual of one interval: `E(t₂) − E(t₁) + ∫(ξ − f·v) dt` by the trapezoid rule.
fn interval(e1: f64, e2: f64, t1: f64, t2: f64, q1: f64, q2: f64) -> f64 {
    (e2 - e1) + 0.5 * (t2 - t1) * (q1 + q2)
}

/// Energy-balance residual and regularized-identity gap between two measurements.
pub fn interval_budget(a: &Measurement, b: &Measurement) -> (f64, f64) {
    let (ra, rb) = (&a.record, &b.record);
    let res = interval(
        ra.energy(),
        rb.energy(),
        ra.t,
        rb.t,
        ra.dissipation - ra.power_in,
        rb.dissipation - rb.power_in,
    );
    let gap = interval(
        ra.energy(),
        rb.energy(),
        ra.t,
        rb.t,
        a.dissipation_weighted - ra.power_in,
        b.dissipation_weighted - rb.power_in,
    );
    (res, gap)
}

/// Absolute and relative residual of one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub absolute: f64,
    /// `absolute / (E(t₁) + ∫ξ)`.
    pub relative: f64,
}

/// Per-interval energy-balance residuals of a record window, using the records'
/// own values at the output times.
pub fn energy_residual(window: &[DiagnosticsRecord]) -> Vec<Residual> {
    window
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let absolute = interval(
                a.energy(),
                b.energy(),
                a.t,
                b.t,
                a.dissipation - a.power_in,
                b.dissipation - b.power_in,
            );
            let scale = a.energy() + 0.5 * (b.t - a.t) * (a.dissipation + b.dissipation);
            Residual {
                absolute,
                relative: relative_to(absolute, scale),
            }
        })
        .collect()
}

/// Per-interval gaps of the regularized energy identity.
pub fn eps_energy_audit(window: &[Measurement]) -> Vec<Residual> {
    window
        .windows(2)
        .map(|w| {
            let (_, absolute) = interval_budget(&w[0], &w[1]);
            let scale = w[0].record.energy()
                + 0.5
                    * (w[1].record.t - w[0].record.t)
                    * (w[0].dissipation_weighted + w[1].dissipation_weighted);
            Residual {
                absolute,
                relative: relative_to(absolute, scale),
            }
        })
        .collect()
}

fn relative_to(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else if x == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Whole-run budget from emitted records: `|Σ residual| / (E(t₀) + ∫ξ)`, where
/// the dissipation integral uses the trapezoid rule over the rows. Pass
/// `weighted = true` to audit the `eps_gap` column instead.
pub fn run_budget(records: &[DiagnosticsRecord], weighted: bool) -> f64 {
    if records.len() < 2 {
        return 0.0;
    }
    let total: f64 = records[1..]
        .iter()
        .map(|r| {
            if weighted {
                r.eps_gap
            } else {
                r.energy_residual
            }
        })
        .sum();
    let diss: f64 = records
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].dissipation + w[1].dissipation))
        .sum();
    relative_to(total.abs(), records[0].energy() + diss)
}

/// `‖u‖₄² / (‖u‖ ‖u‖_{H¹})`, zero for the zero field.
pub fn ladyzhenskaya_check(grid: &SpectralGrid, u: &Field) -> Result<f64> {
    let l2 = u.norm_l2();
    if l2 == 0.0 {
        return Ok(0.0);
    }
    let g = grid.gradient(u)?;
    let h1 = (l2 * l2 + g.dot(&g)).sqrt();
    let l4 = u.norm_lp(4.0);
    Ok(l4 * l4 / (l2 * h1))
}
