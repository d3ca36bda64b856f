//! Semi-discrete right-hand sides.
//!
//! ```text
//! ∂t v = P[−(v·∇)v + 2a div(ρ S(B)) + f] + Δv
//! ∂t B = −(v·∇)B + ρ[a(DB + BD) + (WB − BW) − R(B)] + ΔB
//! ```
//!
//! `ρ = ρ_ε(B)` in the regularized variants and `1` otherwise. Quadratic terms are
//! formed pseudospectrally from 2/3-truncated fields and truncated again after
//! the transform; forcing is added after truncation. The weak form pairs the
//! tensor equation with the grouping `2BW − 2aBD`, which is the same operator as
//! the symmetric assembly used here.

use num_complex::Complex64;

use crate::config::ModelParams;
use crate::constitutive::{relax_r, rho_eps, stress_s, Sym2};
use crate::error::{Error, Result};
use crate::fields::{State, SymTensorField, VectorField};
use crate::par;
use crate::spectral::{Field, SpectralGrid, Spectrum};

/// External sources. Production runs only force the momentum equation; the
/// tensor source exists for manufactured-solution verification.
pub trait Forcing: Sync {
    fn velocity(&self, _t: f64) -> Option<VectorField> {
        None
    }

    fn tensor(&self, _t: f64) -> Option<SymTensorField> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoForcing;

impl Forcing for NoForcing {}

/// Time-independent body force.
#[derive(Debug, Clone)]
pub struct SteadyForcing(pub VectorField);

impl Forcing for SteadyForcing {
    fn velocity(&self, _t: f64) -> Option<VectorField> {
        Some(self.0.clone())
    }
}

/// Spectral view of a [`State`].
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub t: f64,
    pub u: Spectrum,
    pub v: Spectrum,
    pub b11: Spectrum,
    pub b12: Spectrum,
    pub b22: Spectrum,
}

impl SpectralState {
    pub fn components(&self) -> [&Spectrum; 5] {
        [&self.u, &self.v, &self.b11, &self.b12, &self.b22]
    }

    fn from_components(t: f64, c: [Spectrum; 5]) -> Self {
        let [u, v, b11, b12, b22] = c;
        SpectralState {
            t,
            u,
            v,
            b11,
            b12,
            b22,
        }
    }

    /// Componentwise `f(self_c, other_c)`.
    pub fn zip_with<F>(&self, other: &Tendency, f: F) -> SpectralState
    where
        F: Fn(&Spectrum, &Spectrum) -> Spectrum,
    {
        let a = self.components();
        let b = other.components();
        SpectralState::from_components(self.t, std::array::from_fn(|i| f(a[i], b[i])))
    }
}

/// Time derivative of the state in spectral form.
#[derive(Debug, Clone)]
pub struct Tendency {
    pub du: Spectrum,
    pub dv: Spectrum,
    pub db11: Spectrum,
    pub db12: Spectrum,
    pub db22: Spectrum,
}

impl Tendency {
    pub fn components(&self) -> [&Spectrum; 5] {
        [&self.du, &self.dv, &self.db11, &self.db12, &self.db22]
    }

    fn components_mut(&mut self) -> [&mut Spectrum; 5] {
        [
            &mut self.du,
            &mut self.dv,
            &mut self.db11,
            &mut self.db12,
            &mut self.db22,
        ]
    }

    fn from_components(c: [Spectrum; 5]) -> Self {
        let [du, dv, db11, db12, db22] = c;
        Tendency {
            du,
            dv,
            db11,
            db12,
            db22,
        }
    }

    pub fn velocity(&self, grid: &SpectralGrid) -> Result<VectorField> {
        Ok(VectorField::new(
            grid.inverse(&self.du)?,
            grid.inverse(&self.dv)?,
        ))
    }

    pub fn tensor(&self, grid: &SpectralGrid) -> Result<SymTensorField> {
        Ok(SymTensorField::new(
            grid.inverse(&self.db11)?,
            grid.inverse(&self.db12)?,
            grid.inverse(&self.db22)?,
        ))
    }
}

/// Dealiased nonlinear building blocks, all in spectral form.
struct Nonlinear {
    /// `(v·∇)v`.
    adv: [Spectrum; 2],
    /// `div(ρ S(B))`.
    div_s: [Spectrum; 2],
    /// `−(v·∇)B + ρ[a(DB + BD) + (WB − BW) − R(B)]`.
    tensor: [Spectrum; 3],
}

/// Right-hand-side assembler for one grid and parameter set.
#[derive(Debug, Clone)]
pub struct Dynamics {
    grid: SpectralGrid,
    params: ModelParams,
    dealias: bool,
    galerkin_k: usize,
}

impl Dynamics {
    /// Dealiasing on, no Galerkin truncation.
    pub fn new(grid: SpectralGrid, params: ModelParams) -> Self {
        Dynamics {
            grid,
            params,
            dealias: true,
            galerkin_k: 0,
        }
    }

    pub fn with_dealias(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    /// Restrict the evolution to the modes `|n| <= k`; `k = 0` disables truncation.
    pub fn with_galerkin(mut self, k: usize) -> Result<Self> {
        if k > self.grid.n() / 2 {
            return Err(Error::InvalidArgument(format!(
                "galerkin_k = {k} exceeds N/2 = {}",
                self.grid.n() / 2
            )));
        }
        self.galerkin_k = k;
        Ok(self)
    }

    pub fn with_params(mut self, params: ModelParams) -> Self {
        self.params = params;
        self
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    pub fn galerkin_k(&self) -> usize {
        self.galerkin_k
    }

    pub fn to_spectral(&self, s: &State) -> Result<SpectralState> {
        let g = &self.grid;
        let (u, v) = par::join(|| g.forward(&s.velocity.x), || g.forward(&s.velocity.y));
        let (b11, (b12, b22)) = par::join(
            || g.forward(&s.tensor.b11),
            || par::join(|| g.forward(&s.tensor.b12), || g.forward(&s.tensor.b22)),
        );
        Ok(SpectralState {
            t: s.t,
            u: u?,
            v: v?,
            b11: b11?,
            b12: b12?,
            b22: b22?,
        })
    }

    pub fn to_physical(&self, s: &SpectralState) -> Result<State> {
        let g = &self.grid;
        let fields: Vec<Result<Field>> = par::map(s.components().to_vec(), |c| g.inverse(c));
        let mut it = fields.into_iter();
        let mut next = || it.next().expect("five components");
        let velocity = VectorField::new(next()?, next()?);
        let tensor = SymTensorField::new(next()?, next()?, next()?);
        State::new(s.t, velocity, tensor)
    }

    /// Admissible version of a state: velocity Leray-projected, and both fields
    /// Galerkin-truncated when truncation is active.
    pub fn project_state(&self, s: &State) -> Result<State> {
        let mut hat = self.to_spectral(s)?;
        self.project_velocity(&mut hat.u, &mut hat.v)?;
        if self.galerkin_k > 0 {
            self.grid
                .project_qk_hat([&mut hat.b11, &mut hat.b12, &mut hat.b22], self.galerkin_k)?;
        }
        self.to_physical(&hat)
    }

    pub(crate) fn project_velocity(&self, u: &mut Spectrum, v: &mut Spectrum) -> Result<()> {
        if self.galerkin_k > 0 {
            self.grid.project_pk_hat(u, v, self.galerkin_k)
        } else {
            self.grid.leray_project_hat(u, v)
        }
    }

    fn truncate(&self, s: &mut Spectrum) -> Result<()> {
        if self.dealias {
            self.grid.dealias_hat(s)?;
        }
        Ok(())
    }

    fn nonlinear(&self, hat: &SpectralState, weighted: bool) -> Result<Nonlinear> {
        let g = &self.grid;
        let n = g.n();
        let p = self.params;

        let mut comps: Vec<Spectrum> = hat.components().iter().map(|s| (*s).clone()).collect();
        for c in comps.iter_mut() {
            self.truncate(c)?;
        }
        // physical values, then x- and y-derivatives of every component
        let jobs: Vec<(usize, u8)> = (0..5).flat_map(|c| [(c, 0u8), (c, 1), (c, 2)]).collect();
        let phys: Vec<Result<Field>> = par::map(jobs, |(c, op)| match op {
            0 => g.inverse(&comps[c]),
            1 => g.inverse(&g.ddx_hat(&comps[c])?),
            _ => g.inverse(&g.ddy_hat(&comps[c])?),
        });
        let phys: Vec<Field> = phys.into_iter().collect::<Result<_>>()?;
        let val = |c: usize| phys[3 * c].as_slice();
        let dx = |c: usize| phys[3 * c + 1].as_slice();
        let dy = |c: usize| phys[3 * c + 2].as_slice();
        let (u, v) = (val(0), val(1));
        let (ux, uy, vx, vy) = (dx(0), dy(0), dx(1), dy(1));

        // eight pointwise products per sample
        let products: Vec<[f64; 8]> = par::collect(n * n, |i| {
            let b = Sym2::new(val(2)[i], val(3)[i], val(4)[i]);
            let rho = if weighted { rho_eps(b, p.epsilon) } else { 1.0 };
            let d = Sym2::new(ux[i], 0.5 * (uy[i] + vx[i]), vy[i]);
            let w = 0.5 * (uy[i] - vx[i]);
            let s = stress_s(b, &p).scale(rho);
            let adv_b = Sym2::new(
                u[i] * dx(2)[i] + v[i] * dy(2)[i],
                u[i] * dx(3)[i] + v[i] * dy(3)[i],
                u[i] * dx(4)[i] + v[i] * dy(4)[i],
            );
            let source = d.anticommutator(b).scale(p.a) + b.spin(w) - relax_r(b, &p);
            let tb = source.scale(rho) - adv_b;
            [
                u[i] * ux[i] + v[i] * uy[i],
                u[i] * vx[i] + v[i] * vy[i],
                s.xx,
                s.xy,
                s.yy,
                tb.xx,
                tb.xy,
                tb.yy,
            ]
        });
        let fwd: Vec<Result<Spectrum>> = par::map((0..8).collect(), |k: usize| {
            let f = Field::from_vec(n, products.iter().map(|row| row[k]).collect())?;
            g.forward(&f)
        });
        let mut fwd: Vec<Spectrum> = fwd.into_iter().collect::<Result<_>>()?;
        let [adv_u, adv_v, s11, s12, s22, t11, t12, t22]: [Spectrum; 8] =
            std::mem::take(&mut fwd).try_into().expect("eight products");

        let mut div_x = g.ddx_hat(&s11)?.add(&g.ddy_hat(&s12)?);
        let mut div_y = g.ddx_hat(&s12)?.add(&g.ddy_hat(&s22)?);
        let mut out = Nonlinear {
            adv: [adv_u, adv_v],
            div_s: [
                std::mem::replace(&mut div_x, Spectrum::zeros(0)),
                std::mem::replace(&mut div_y, Spectrum::zeros(0)),
            ],
            tensor: [t11, t12, t22],
        };
        for s in out
            .adv
            .iter_mut()
            .chain(out.div_s.iter_mut())
            .chain(out.tensor.iter_mut())
        {
            self.truncate(s)?;
        }
        Ok(out)
    }

    fn forcing_hat(&self, f: Option<&VectorField>) -> Result<Option<[Spectrum; 2]>> {
        f.map(|f| Ok([self.grid.forward(&f.x)?, self.grid.forward(&f.y)?]))
            .transpose()
    }

    /// Everything except diffusion, evaluated at `hat.t`. The velocity part is
    /// projected; Galerkin truncation applies when active.
    pub fn explicit_terms(
        &self,
        hat: &SpectralState,
        forcing: &dyn Forcing,
        weighted: bool,
    ) -> Result<Tendency> {
        let nl = self.nonlinear(hat, weighted)?;
        let f = self.forcing_hat(forcing.velocity(hat.t).as_ref())?;
        let a2 = 2.0 * self.params.a;
        let mut du = nl.div_s[0].scale(a2).sub(&nl.adv[0]);
        let mut dv = nl.div_s[1].scale(a2).sub(&nl.adv[1]);
        if let Some([fx, fy]) = f {
            du = du.add(&fx);
            dv = dv.add(&fy);
        }
        self.project_velocity(&mut du, &mut dv)?;
        let [mut t11, mut t12, mut t22] = nl.tensor;
        if let Some(src) = forcing.tensor(hat.t) {
            t11 = t11.add(&self.grid.forward(&src.b11)?);
            t12 = t12.add(&self.grid.forward(&src.b12)?);
            t22 = t22.add(&self.grid.forward(&src.b22)?);
        }
        if self.galerkin_k > 0 {
            self.grid
                .project_qk_hat([&mut t11, &mut t12, &mut t22], self.galerkin_k)?;
        }
        Ok(Tendency {
            du,
            dv,
            db11: t11,
            db12: t12,
            db22: t22,
        })
    }

    /// Add `Δ(state)` to every component of `tend`.
    pub fn add_diffusion(&self, hat: &SpectralState, tend: &mut Tendency) {
        let g = &self.grid;
        for (t, s) in tend.components_mut().into_iter().zip(hat.components()) {
            let (td, sd) = (t.as_mut_slice(), s.as_slice());
            for (idx, (ti, si)) in td.iter_mut().zip(sd).enumerate() {
                *ti -= *si * g.laplace_symbol(idx);
            }
        }
    }

    /// Full right-hand side as used by the stepper: regularized when `ε > 0`,
    /// Galerkin-truncated when `galerkin_k > 0`.
    pub fn rhs(&self, state: &State, forcing: &dyn Forcing) -> Result<Tendency> {
        let hat = self.to_spectral(state)?;
        let mut tend = self.explicit_terms(&hat, forcing, self.params.regularized())?;
        self.add_diffusion(&hat, &mut tend);
        if self.galerkin_k > 0 {
            tend = self.galerkin_truncate_rhs(tend, self.galerkin_k)?;
        }
        Ok(tend)
    }

    fn momentum(
        &self,
        state: &State,
        f: Option<&VectorField>,
        weighted: bool,
    ) -> Result<[Spectrum; 2]> {
        let hat = self.to_spectral(state)?;
        let nl = self.nonlinear(&hat, weighted)?;
        let a2 = 2.0 * self.params.a;
        let mut du = nl.div_s[0].scale(a2).sub(&nl.adv[0]);
        let mut dv = nl.div_s[1].scale(a2).sub(&nl.adv[1]);
        if let Some([fx, fy]) = self.forcing_hat(f)? {
            du = du.add(&fx);
            dv = dv.add(&fy);
        }
        self.grid.leray_project_hat(&mut du, &mut dv)?;
        let g = &self.grid;
        let lap_u = g.laplacian_hat(&hat.u)?;
        let lap_v = g.laplacian_hat(&hat.v)?;
        Ok([du.add(&lap_u), dv.add(&lap_v)])
    }

    fn tensor(&self, state: &State, weighted: bool) -> Result<[Spectrum; 3]> {
        let hat = self.to_spectral(state)?;
        let nl = self.nonlinear(&hat, weighted)?;
        let g = &self.grid;
        let [t11, t12, t22] = nl.tensor;
        Ok([
            t11.add(&g.laplacian_hat(&hat.b11)?),
            t12.add(&g.laplacian_hat(&hat.b12)?),
            t22.add(&g.laplacian_hat(&hat.b22)?),
        ])
    }

    /// `P(−(v·∇)v + 2a div S(B) + f) + Δv`, spectral components.
    pub fn momentum_rhs(&self, state: &State, f: Option<&VectorField>) -> Result<[Spectrum; 2]> {
        self.momentum(state, f, false)
    }

    /// As [`Dynamics::momentum_rhs`] with `ρ_ε(B) S(B)` inside the divergence.
    pub fn momentum_rhs_regularized(
        &self,
        state: &State,
        f: Option<&VectorField>,
    ) -> Result<[Spectrum; 2]> {
        self.momentum(state, f, true)
    }

    /// `ΔB − (v·∇)B + a(DB + BD) + (WB − BW) − R(B)`, spectral components.
    pub fn tensor_rhs(&self, state: &State) -> Result<[Spectrum; 3]> {
        self.tensor(state, false)
    }

    /// As [`Dynamics::tensor_rhs`] with the three source groups weighted by
    /// `ρ_ε(B)`; advection and diffusion stay unweighted.
    pub fn tensor_rhs_regularized(&self, state: &State) -> Result<[Spectrum; 3]> {
        self.tensor(state, true)
    }

    /// Zero-mean pressure solving `−Δp = div[(v·∇)v − 2a div S(B) − f]`.
    pub fn pressure_recover(&self, state: &State, f: Option<&VectorField>) -> Result<Field> {
        let hat = self.to_spectral(state)?;
        let nl = self.nonlinear(&hat, false)?;
        let a2 = 2.0 * self.params.a;
        let mut hx = nl.adv[0].sub(&nl.div_s[0].scale(a2));
        let mut hy = nl.adv[1].sub(&nl.div_s[1].scale(a2));
        if let Some([fx, fy]) = self.forcing_hat(f)? {
            hx = hx.sub(&fx);
            hy = hy.sub(&fy);
        }
        let g = &self.grid;
        let div = g.divergence_hat(&hx, &hy)?;
        // Δp = −div h
        let p = g.inverse_laplacian_hat(&div.scale(-1.0))?;
        g.inverse(&p)
    }

    /// Apply `P_k` to the velocity part and `Q_k` to the tensor part.
    pub fn galerkin_truncate_rhs(&self, mut tend: Tendency, k: usize) -> Result<Tendency> {
        self.grid.project_pk_hat(&mut tend.du, &mut tend.dv, k)?;
        self.grid
            .project_qk_hat([&mut tend.db11, &mut tend.db12, &mut tend.db22], k)?;
        Ok(tend)
    }
}

/// Multiply every mode by `factor(idx)`; used by the integrating-factor stepper.
pub(crate) fn scale_modes<F>(s: &Spectrum, factor: F) -> Spectrum
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let d = s.as_slice();
    let data: Vec<Complex64> = par::collect(d.len(), |i| d[i] * factor(i));
    Spectrum::from_vec(s.n(), data).expect("same length")
}

pub(crate) fn tendency_from(c: [Spectrum; 5]) -> Tendency {
    Tendency::from_components(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{conjugate_j_field, tensor_gradient};
    use std::f64::consts::PI;

    fn taylor_green(n: usize) -> VectorField {
        VectorField::from_fn(n, |x, y| {
            [
                (2.0 * PI * x).sin() * (2.0 * PI * y).cos(),
                -(2.0 * PI * x).cos() * (2.0 * PI * y).sin(),
            ]
        })
    }

    fn dynamics(n: usize, p: ModelParams) -> Dynamics {
        Dynamics::new(SpectralGrid::new(n).unwrap(), p)
    }

    fn smooth_tensor(n: usize, amp: f64) -> SymTensorField {
        SymTensorField::from_fn(n, |x, y| {
            Sym2::new(
                1.0 + amp * (2.0 * PI * x).sin() * (2.0 * PI * y).cos(),
                amp * 0.5 * (2.0 * PI * (x - 2.0 * y)).sin(),
                1.0 + amp * (2.0 * PI * (x + y)).cos(),
            )
        })
    }

    fn smooth_velocity(n: usize) -> VectorField {
        // v = (∂y ψ, −∂x ψ), ψ = cos(2π(x+2y))/π + sin(2π·3x)/(2π)
        VectorField::from_fn(n, |x, y| {
            let s = (2.0 * PI * (x + 2.0 * y)).sin();
            [-4.0 * s, 2.0 * s - 3.0 * (6.0 * PI * x).cos()]
        })
    }

    #[test]
    fn equilibrium_has_zero_tendency() {
        let dy = dynamics(16, ModelParams::default());
        let t = dy.rhs(&State::equilibrium(16), &NoForcing).unwrap();
        for c in t.components() {
            assert!(c.max_abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_green_decays_viscously() {
        let n = 32;
        let p = ModelParams {
            a: 0.0,
            ..ModelParams::default()
        };
        let dy = dynamics(n, p);
        let v = taylor_green(n);
        let s = State::new(0.0, v.clone(), SymTensorField::identity(n)).unwrap();
        let [du, dv] = dy.momentum_rhs(&s, None).unwrap();
        let g = dy.grid();
        let expect = v.scale(-8.0 * PI * PI);
        assert!(g.inverse(&du).unwrap().sub(&expect.x).max_abs() < 1e-10);
        assert!(g.inverse(&dv).unwrap().sub(&expect.y).max_abs() < 1e-10);
    }

    #[test]
    fn identity_tensor_decouples_momentum() {
        let n = 32;
        let v = taylor_green(n);
        let s = State::new(0.0, v, SymTensorField::identity(n)).unwrap();
        let a0 = dynamics(
            n,
            ModelParams {
                a: 0.0,
                ..ModelParams::default()
            },
        );
        let a3 = dynamics(
            n,
            ModelParams {
                a: 3.0,
                ..ModelParams::default()
            },
        );
        let x = a0.momentum_rhs(&s, None).unwrap();
        let y = a3.momentum_rhs(&s, None).unwrap();
        assert!(x[0].sub(&y[0]).max_abs() < 1e-9 && x[1].sub(&y[1]).max_abs() < 1e-9);
    }

    #[test]
    fn newtonian_limit_ignores_tensor_exactly() {
        let n = 16;
        let dy = dynamics(
            n,
            ModelParams {
                a: 0.0,
                ..ModelParams::default()
            },
        );
        let v = smooth_velocity(n);
        let s1 = State::new(0.0, v.clone(), SymTensorField::identity(n)).unwrap();
        let s2 = State::new(0.0, v, smooth_tensor(n, 0.3)).unwrap();
        let x = dy.momentum_rhs(&s1, None).unwrap();
        let y = dy.momentum_rhs(&s2, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn uniform_tensor_only_relaxes() {
        let n = 8;
        let p = ModelParams {
            delta1: 1.0,
            delta2: 0.0,
            ..ModelParams::default()
        };
        let dy = dynamics(n, p);
        let s = State::new(
            0.0,
            VectorField::zeros(n),
            SymTensorField::uniform(n, Sym2::diag(2.0, 1.0)),
        )
        .unwrap();
        let db = dy.tensor_rhs(&s).unwrap();
        let g = dy.grid();
        assert!(
            g.inverse(&db[0])
                .unwrap()
                .sub(&Field::constant(n, -1.0))
                .max_abs()
                < 1e-12
        );
        assert!(g.inverse(&db[1]).unwrap().max_abs() < 1e-12);
        assert!(g.inverse(&db[2]).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn pure_diffusion_without_flow_or_relaxation() {
        let n = 16;
        let p = ModelParams {
            delta1: 0.0,
            delta2: 0.0,
            ..ModelParams::default()
        };
        let dy = dynamics(n, p);
        let b = smooth_tensor(n, 0.3);
        let s = State::new(0.0, VectorField::zeros(n), b.clone()).unwrap();
        let db = dy.tensor_rhs(&s).unwrap();
        let g = dy.grid();
        for (k, comp) in b.components().into_iter().enumerate() {
            let lap = g.laplacian(comp).unwrap();
            assert!(g.inverse(&db[k]).unwrap().sub(&lap).max_abs() < 1e-10 * lap.max_abs());
        }
    }

    #[test]
    fn momentum_tendency_is_solenoidal_and_zero_mean() {
        let n = 32;
        let dy = dynamics(n, ModelParams::default());
        let s = State::new(0.0, smooth_velocity(n), smooth_tensor(n, 0.3)).unwrap();
        let [du, dv] = dy.momentum_rhs(&s, None).unwrap();
        let g = dy.grid();
        let div = g.divergence_hat(&du, &dv).unwrap();
        assert!(div.max_abs() <= 1e-12 * du.max_abs().max(dv.max_abs()) * n as f64);
        assert_eq!(du.mode(0, 0).norm(), 0.0);
        assert_eq!(dv.mode(0, 0).norm(), 0.0);
    }

    #[test]
    fn tensor_tendency_matches_eigen_coordinate_equations() {
        // e, f, g evolution with (α, β, γ) read off aD + W, advection removed
        let n = 32;
        let p = ModelParams {
            a: 0.7,
            beta: 0.3,
            delta1: 0.8,
            delta2: 0.6,
            epsilon: 0.0,
        };
        let dy = dynamics(n, p);
        let v = smooth_velocity(n);
        let b = smooth_tensor(n, 0.3);
        let s = State::new(0.0, v.clone(), b.clone()).unwrap();
        let g = dy.grid();
        let db = dy.tensor_rhs(&s).unwrap();
        let db: Vec<Field> = db.iter().map(|x| g.inverse(x).unwrap()).collect();
        let (d, w) = crate::fields::velocity_gradient_parts(g, &v).unwrap();
        let grads = tensor_gradient(g, &b).unwrap();
        let lap: Vec<Field> = b
            .components()
            .iter()
            .map(|c| g.laplacian(c).unwrap())
            .collect();
        let mut worst: f64 = 0.0;
        for i in 0..n * n {
            let bb = b.at(i);
            let (e, f, gg) = (0.5 * (bb.xx - bb.yy), bb.xy, bb.trace());
            let alpha = p.a * d.b11.as_slice()[i];
            let be = p.a * d.b12.as_slice()[i] + w.as_slice()[i];
            let ga = p.a * d.b12.as_slice()[i] - w.as_slice()[i];
            let k = p.delta1 + (gg - 1.0) * p.delta2;
            let adv = |c: usize| {
                let (gx, gy) = (
                    grads[0].components()[c].as_slice()[i],
                    grads[1].components()[c].as_slice()[i],
                );
                v.x.as_slice()[i] * gx + v.y.as_slice()[i] * gy
            };
            let lap_e = 0.5 * (lap[0].as_slice()[i] - lap[2].as_slice()[i]);
            let lap_g = lap[0].as_slice()[i] + lap[2].as_slice()[i];
            let de = lap_e - k * e + (be - ga) * f + alpha * gg - 0.5 * (adv(0) - adv(2));
            let df = lap[1].as_slice()[i] - k * f - (be - ga) * e + 0.5 * (be + ga) * gg - adv(1);
            let dg = lap_g - k * gg
                + 4.0 * alpha * e
                + 2.0 * (be + ga) * f
                + 2.0 * p.delta1
                + 2.0 * p.delta2 * (gg * gg / 4.0 - (e * e + f * f))
                - (adv(0) + adv(2));
            let got_e = 0.5 * (db[0].as_slice()[i] - db[2].as_slice()[i]);
            let got_g = db[0].as_slice()[i] + db[2].as_slice()[i];
            worst = worst
                .max((got_e - de).abs())
                .max((db[1].as_slice()[i] - df).abs())
                .max((got_g - dg).abs());
        }
        assert!(worst < 1e-9, "max deviation {worst}");
    }

    #[test]
    fn regularized_rhs_with_zero_epsilon_is_bit_identical() {
        let n = 16;
        let dy = dynamics(
            n,
            ModelParams {
                epsilon: 0.0,
                ..ModelParams::default()
            },
        );
        let s = State::new(0.0, smooth_velocity(n), smooth_tensor(n, 0.3)).unwrap();
        assert_eq!(
            dy.momentum_rhs(&s, None).unwrap(),
            dy.momentum_rhs_regularized(&s, None).unwrap()
        );
        assert_eq!(
            dy.tensor_rhs(&s).unwrap(),
            dy.tensor_rhs_regularized(&s).unwrap()
        );
    }

    #[test]
    fn large_cutoff_switches_off_all_sources() {
        let n = 16;
        let p = ModelParams {
            epsilon: 10.0,
            ..ModelParams::default()
        };
        let dy = dynamics(n, p);
        let v = smooth_velocity(n);
        let b = smooth_tensor(n, 0.3);
        let s = State::new(0.0, v.clone(), b.clone()).unwrap();
        let g = dy.grid();
        // tensor: ΔB − (v·∇)B only
        let db = dy.tensor_rhs_regularized(&s).unwrap();
        let grads = tensor_gradient(g, &b).unwrap();
        for c in 0..3 {
            let comp = b.components()[c];
            let adv =
                v.x.zip_map(grads[0].components()[c], |a, b| a * b)
                    .add(&v.y.zip_map(grads[1].components()[c], |a, b| a * b));
            let expect = g.laplacian(comp).unwrap().sub(&adv);
            let got = g.inverse(&db[c]).unwrap();
            assert!(got.sub(&expect).max_abs() < 1e-9 * expect.max_abs());
        }
        // momentum: plain Navier–Stokes
        let ns = dynamics(n, ModelParams { a: 0.0, ..p });
        let x = dy.momentum_rhs_regularized(&s, None).unwrap();
        let y = ns.momentum_rhs(&s, None).unwrap();
        assert!(x[0].sub(&y[0]).max_abs() < 1e-9 && x[1].sub(&y[1]).max_abs() < 1e-9);
    }

    #[test]
    fn uniform_tensor_regularized_relaxation_and_no_coupling() {
        let n = 8;
        let p = ModelParams {
            epsilon: 0.1,
            ..ModelParams::default()
        };
        let dy = dynamics(n, p);
        let b0 = Sym2::new(1.5, 0.2, 0.8);
        let s = State::new(0.0, VectorField::zeros(n), SymTensorField::uniform(n, b0)).unwrap();
        let db = dy.tensor_rhs_regularized(&s).unwrap();
        let expect = relax_r(b0, &p).scale(-rho_eps(b0, 0.1));
        let g = dy.grid();
        let got = Sym2::new(
            g.inverse(&db[0]).unwrap().at(3, 4),
            g.inverse(&db[1]).unwrap().at(3, 4),
            g.inverse(&db[2]).unwrap().at(3, 4),
        );
        assert!((got - expect).norm() < 1e-13);
        let [du, dv] = dy.momentum_rhs_regularized(&s, None).unwrap();
        assert!(du.max_abs() < 1e-12 && dv.max_abs() < 1e-12);
    }

    #[test]
    fn regularized_rhs_converges_linearly_in_epsilon() {
        let n = 16;
        let v = smooth_velocity(n);
        let b = smooth_tensor(n, 0.3);
        let s = State::new(0.0, v, b).unwrap();
        let base = dynamics(n, ModelParams::default());
        let exact = base.tensor_rhs(&s).unwrap();
        let dist = |eps: f64| {
            let dy = dynamics(
                n,
                ModelParams {
                    epsilon: eps,
                    ..ModelParams::default()
                },
            );
            let r = dy.tensor_rhs_regularized(&s).unwrap();
            (0..3)
                .map(|c| r[c].sub(&exact[c]).max_abs())
                .fold(0.0, f64::max)
        };
        let (d1, d2) = (dist(1e-3), dist(1e-4));
        assert!(d2 < d1);
        assert!((d1 / d2 - 10.0).abs() < 0.5, "ratio {}", d1 / d2);
    }

    #[test]
    fn taylor_green_pressure() {
        let n = 32;
        let dy = dynamics(
            n,
            ModelParams {
                a: 0.0,
                ..ModelParams::default()
            },
        );
        let s = State::new(0.0, taylor_green(n), SymTensorField::identity(n)).unwrap();
        let p = dy.pressure_recover(&s, None).unwrap();
        // oracle: ∇p = −(v·∇)v = −π (sin 4πx, sin 4πy)
        let expect = Field::from_fn(n, |x, y| {
            0.25 * ((4.0 * PI * x).cos() + (4.0 * PI * y).cos())
        });
        assert!(
            p.sub(&expect).max_abs() < 1e-12,
            "{}",
            p.sub(&expect).max_abs()
        );
        assert!(p.mean().abs() < 1e-15);
        let zero = dy.pressure_recover(&State::equilibrium(n), None).unwrap();
        assert!(zero.max_abs() < 1e-14);
    }

    #[test]
    fn unprojected_momentum_residual_vanishes_with_recovered_pressure() {
        let n = 32;
        let dy = dynamics(n, ModelParams::default());
        let v = smooth_velocity(n);
        let b = smooth_tensor(n, 0.3);
        let f = VectorField::from_fn(n, |x, y| [(2.0 * PI * y).sin(), (2.0 * PI * (x + y)).cos()]);
        let s = State::new(0.0, v.clone(), b.clone()).unwrap();
        let g = dy.grid();
        let [du, dv] = dy.momentum_rhs(&s, Some(&f)).unwrap();
        let p = dy.pressure_recover(&s, Some(&f)).unwrap();
        let grad_p = g.gradient(&p).unwrap();
        // residual = ∂t v + (v·∇)v + ∇p − Δv − 2a div S − f
        let gu = g.gradient(&v.x).unwrap();
        let gv = g.gradient(&v.y).unwrap();
        let sb = crate::constitutive::stress_s_field(&b, dy.params());
        let ds = [
            g.divergence(&VectorField::new(sb.b11.clone(), sb.b12.clone()))
                .unwrap(),
            g.divergence(&VectorField::new(sb.b12.clone(), sb.b22.clone()))
                .unwrap(),
        ];
        let adv = [
            v.x.zip_map(&gu.x, |a, b| a * b)
                .add(&v.y.zip_map(&gu.y, |a, b| a * b)),
            v.x.zip_map(&gv.x, |a, b| a * b)
                .add(&v.y.zip_map(&gv.y, |a, b| a * b)),
        ];
        let lap = [g.laplacian(&v.x).unwrap(), g.laplacian(&v.y).unwrap()];
        let dt = [g.inverse(&du).unwrap(), g.inverse(&dv).unwrap()];
        let gp = [&grad_p.x, &grad_p.y];
        let ff = [&f.x, &f.y];
        for c in 0..2 {
            let r = dt[c]
                .add(&adv[c])
                .add(gp[c])
                .sub(&lap[c])
                .sub(&ds[c].scale(2.0 * dy.params().a))
                .sub(ff[c]);
            assert!(r.max_abs() <= 1e-10, "component {c}: {}", r.max_abs());
        }
    }

    #[test]
    fn semi_discrete_energy_pairing() {
        let n = 64;
        let p = ModelParams {
            a: 0.8,
            beta: 0.3,
            delta1: 1.0,
            delta2: 0.5,
            epsilon: 0.05,
        };
        let dy = dynamics(n, p);
        let v = smooth_velocity(n).scale(0.5);
        let b = smooth_tensor(n, 0.3);
        let s = State::new(0.0, v.clone(), b.clone()).unwrap();
        let g = dy.grid();
        let [du, dv] = dy.momentum_rhs_regularized(&s, None).unwrap();
        let db = dy.tensor_rhs_regularized(&s).unwrap();
        let dvel = VectorField::new(g.inverse(&du).unwrap(), g.inverse(&dv).unwrap());
        let dten = SymTensorField::new(
            g.inverse(&db[0]).unwrap(),
            g.inverse(&db[1]).unwrap(),
            g.inverse(&db[2]).unwrap(),
        );
        let j = conjugate_j_field(&b, &p).unwrap();
        let lhs = dvel.dot(&v) + dten.dot(&j);

        let (d, _) = crate::fields::velocity_gradient_parts(g, &v).unwrap();
        let gb = tensor_gradient(g, &b).unwrap();
        let gj = tensor_gradient(g, &j).unwrap();
        let rho = crate::constitutive::cutoff_rho_eps(&b, p.epsilon);
        let r = crate::constitutive::relax_r_field(&b, &p);
        let rho_r = SymTensorField::new(
            r.b11.zip_map(&rho, |a, b| a * b),
            r.b12.zip_map(&rho, |a, b| a * b),
            r.b22.zip_map(&rho, |a, b| a * b),
        );
        let rhs = -(2.0 * d.dot(&d) + gb[0].dot(&gj[0]) + gb[1].dot(&gj[1]) + rho_r.dot(&j));
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn galerkin_truncation_of_tendency() {
        let n = 16;
        let dy = dynamics(n, ModelParams::default());
        let s = State::new(0.0, smooth_velocity(n), smooth_tensor(n, 0.3)).unwrap();
        let full = dy.rhs(&s, &NoForcing).unwrap();
        let same = dy.galerkin_truncate_rhs(full.clone(), n / 2).unwrap();
        // dealiased tendencies carry no modes beyond N/3 < N/2 in either direction
        for (a, b) in full.components().iter().zip(same.components()) {
            assert!(a.sub(b).max_abs() <= 1e-12 * a.max_abs().max(1.0));
        }
        let t = dy.galerkin_truncate_rhs(full, 1).unwrap();
        let g = dy.grid();
        for c in t.components() {
            for idx in 0..n * n {
                let (n1, n2) = g.lattice(idx);
                if n1 * n1 + n2 * n2 > 1 {
                    assert_eq!(c.as_slice()[idx].norm(), 0.0);
                }
            }
        }
        let sym = t.tensor(g).unwrap();
        assert_eq!(sym.b12.n(), n);
    }
}
