//! Pointwise closures of the model: elastic stress `S`, relaxation `R`, Cauchy
//! stress, free energy `ψ`, dissipation `ξ`, the conjugate tensor `J = ∂ψ/∂B`,
//! and the eigenvalue cutoff `ρ_ε`.
//!
//! `|A|` is the Frobenius norm throughout.

use std::ops::{Add, Mul, Sub};

use crate::config::ModelParams;
use crate::error::{Error, Result};
use crate::fields::{SymTensorField, VectorField, VelocityGradient};
use crate::par;
use crate::spectral::{Field, SpectralGrid};

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// General 2×2 matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2::new(a, 0.0, b)
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `|A|² = A:A`.
    pub fn norm2(self) -> f64 {
        self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy
    }

    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    /// `A:B`.
    pub fn ddot(self, o: Sym2) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    pub fn scale(self, c: f64) -> Sym2 {
        Sym2::new(c * self.xx, c * self.xy, c * self.yy)
    }

    /// `A²`, symmetric.
    pub fn square(self) -> Sym2 {
        Sym2::new(
            self.xx * self.xx + self.xy * self.xy,
            self.xy * (self.xx + self.yy),
            self.xy * self.xy + self.yy * self.yy,
        )
    }

    /// `AB + BA`, symmetric for symmetric `A`, `B`.
    pub fn anticommutator(self, o: Sym2) -> Sym2 {
        let p = self.mat() * o.mat();
        Sym2::new(2.0 * p.0[0][0], p.0[0][1] + p.0[1][0], 2.0 * p.0[1][1])
    }

    /// `W A − A W` for the skew matrix `W = [[0, w], [−w, 0]]`.
    pub fn spin(self, w: f64) -> Sym2 {
        Sym2::new(
            2.0 * w * self.xy,
            w * (self.yy - self.xx),
            -2.0 * w * self.xy,
        )
    }

    pub fn mat(self) -> Mat2 {
        Mat2([[self.xx, self.xy], [self.xy, self.yy]])
    }

    pub fn inverse(self) -> Option<Sym2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Sym2::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    pub fn min_eig(self) -> f64 {
        0.5 * self.trace() - (0.5 * (self.xx - self.yy)).hypot(self.xy)
    }

    pub fn max_eig(self) -> f64 {
        0.5 * self.trace() + (0.5 * (self.xx - self.yy)).hypot(self.xy)
    }

    pub fn is_spd(self) -> bool {
        self.min_eig() > 0.0
    }

    /// Principal square root of an SPD matrix via
    /// `√A = (A + √det A · I) / √(tr A + 2√det A)`.
    pub fn sqrt(self) -> Option<Sym2> {
        if !self.is_spd() {
            return None;
        }
        let s = self.det().sqrt();
        let t = (self.trace() + 2.0 * s).sqrt();
        Some(Sym2::new((self.xx + s) / t, self.xy / t, (self.yy + s) / t))
    }

    /// Congruence `M A Mᵀ` with symmetric `M`.
    pub fn congruence(self, m: Sym2) -> Sym2 {
        let p = m.mat() * self.mat() * m.mat();
        Sym2::new(p.0[0][0], 0.5 * (p.0[0][1] + p.0[1][0]), p.0[1][1])
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        let mut c = [[0.0; 2]; 2];
        for (i, row) in c.iter_mut().enumerate() {
            for (j, cij) in row.iter_mut().enumerate() {
                *cij = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(c)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] - b[0][0], a[0][1] - b[0][1]],
            [a[1][0] - b[1][0], a[1][1] - b[1][1]],
        ])
    }
}

impl Mat2 {
    pub fn max_abs(self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// `S(B) = (1−β)(B−I) + β(B²−B)`.
pub fn stress_s(b: Sym2, p: &ModelParams) -> Sym2 {
    (b - Sym2::IDENTITY).scale(1.0 - p.beta) + (b.square() - b).scale(p.beta)
}

/// `R(B) = δ₁(B−I) + δ₂(B²−B)`.
pub fn relax_r(b: Sym2, p: &ModelParams) -> Sym2 {
    (b - Sym2::IDENTITY).scale(p.delta1) + (b.square() - b).scale(p.delta2)
}

/// `J = ∂ψ/∂B = (1−β)(I − B⁻¹) + β(B − I)`; `None` for singular `B`.
pub fn conjugate_j(b: Sym2, p: &ModelParams) -> Option<Sym2> {
    let inv = b.inverse()?;
    Some((Sym2::IDENTITY - inv).scale(1.0 - p.beta) + (b - Sym2::IDENTITY).scale(p.beta))
}

/// Helmholtz free energy `ψ(B) = (1−β)(tr B − 2 − ln det B) + β/2 |B − I|²`;
/// `None` when `det B <= 0`.
pub fn psi(b: Sym2, p: &ModelParams) -> Option<f64> {
    let det = b.det();
    if !(det > 0.0) {
        return None;
    }
    Some(
        (1.0 - p.beta) * (b.trace() - 2.0 - det.ln()) + 0.5 * p.beta * (b - Sym2::IDENTITY).norm2(),
    )
}

/// `ρ_ε(A) = max(0, Λ−ε) / (Λ (1 + ε|A|³))` with `Λ` the smallest eigenvalue.
/// `ε = 0` means no regularization and returns 1.
pub fn rho_eps(b: Sym2, epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        return 1.0;
    }
    let lam = b.min_eig();
    if lam <= epsilon {
        return 0.0;
    }
    (lam - epsilon) / (lam * (1.0 + epsilon * b.norm().powi(3)))
}

/// The three groups of the dissipation density at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct XiParts {
    /// `2|D|²`.
    pub viscous: f64,
    /// `(1−β)|B^{-1/2} ∇B B^{-1/2}|² + β|∇B|²`.
    pub diffusive: f64,
    /// `(1−β)δ₁|B^{1/2}−B^{-1/2}|² + βδ₂|B^{3/2}−B^{1/2}|² + (βδ₁+(1−β)δ₂)|B−I|²`.
    pub relaxation: f64,
}

impl XiParts {
    pub fn total(&self) -> f64 {
        self.viscous + self.diffusive + self.relaxation
    }
}

/// Dissipation density from the strain `d`, the tensor `b` and its two partial
/// derivatives. `None` unless `b` is SPD.
pub fn xi_parts(d: Sym2, b: Sym2, grad_b: [Sym2; 2], p: &ModelParams) -> Option<XiParts> {
    let root = b.sqrt()?;
    let inv_root = root.inverse()?;
    let beta = p.beta;
    let diffusive = grad_b
        .iter()
        .map(|gb| (1.0 - beta) * gb.congruence(inv_root).norm2() + beta * gb.norm2())
        .sum();
    let b32 = b.mat() * root.mat();
    let b32 = Sym2::new(b32.0[0][0], 0.5 * (b32.0[0][1] + b32.0[1][0]), b32.0[1][1]);
    let relaxation = (1.0 - beta) * p.delta1 * (root - inv_root).norm2()
        + beta * p.delta2 * (b32 - root).norm2()
        + (beta * p.delta1 + (1.0 - beta) * p.delta2) * (b - Sym2::IDENTITY).norm2();
    Some(XiParts {
        viscous: 2.0 * d.norm2(),
        diffusive,
        relaxation,
    })
}

pub fn stress_s_field(b: &SymTensorField, p: &ModelParams) -> SymTensorField {
    b.map(|s| stress_s(s, p))
}

pub fn relax_r_field(b: &SymTensorField, p: &ModelParams) -> SymTensorField {
    b.map(|s| relax_r(s, p))
}

/// First grid point where `bad` holds, as an error built by `err`.
fn first_failure<F>(b: &SymTensorField, bad: F) -> Option<usize>
where
    F: Fn(Sym2) -> bool + Sync + Send,
{
    let (flag, idx) = par::min_by(b.n() * b.n(), |i| if bad(b.at(i)) { 0.0 } else { 1.0 });
    (flag == 0.0).then_some(idx)
}

pub fn conjugate_j_field(b: &SymTensorField, p: &ModelParams) -> Result<SymTensorField> {
    if let Some(idx) = first_failure(b, |s| s.inverse().is_none()) {
        let (i, j) = Error::at(b.n(), idx);
        return Err(Error::Singular { i, j });
    }
    Ok(b.map(|s| conjugate_j(s, p).expect("checked invertible")))
}

/// Pointwise `ψ(B)` and its integral over the torus.
pub fn free_energy_psi(b: &SymTensorField, p: &ModelParams) -> Result<(Field, f64)> {
    if let Some(idx) = first_failure(b, |s| !(s.det() > 0.0)) {
        let (i, j) = Error::at(b.n(), idx);
        return Err(Error::NonPositiveDeterminant { i, j });
    }
    let f = b.map_scalar(|s| psi(s, p).expect("checked determinant"));
    let total = f.mean();
    Ok((f, total))
}

pub fn cutoff_rho_eps(b: &SymTensorField, epsilon: f64) -> Field {
    b.map_scalar(|s| rho_eps(s, epsilon))
}

/// Regularized initial tensor: `B₀` where its smallest eigenvalue exceeds `ε`,
/// the identity elsewhere.
pub fn regularize_initial(b: &SymTensorField, epsilon: f64) -> SymTensorField {
    b.map(|s| {
        if s.min_eig() > epsilon {
            s
        } else {
            Sym2::IDENTITY
        }
    })
}

/// Full (not necessarily symmetric in storage) 2×2 tensor field.
#[derive(Debug, Clone)]
pub struct Tensor2Field {
    pub t11: Field,
    pub t12: Field,
    pub t21: Field,
    pub t22: Field,
}

/// `T = −pI + 2D(v) + 2a S(B)`.
pub fn cauchy_stress(
    grid: &SpectralGrid,
    v: &VectorField,
    pressure: &Field,
    b: &SymTensorField,
    p: &ModelParams,
) -> Result<Tensor2Field> {
    let (d, _) = VelocityGradient::compute(grid, v)?.split();
    let s = stress_s_field(b, p);
    let a2 = 2.0 * p.a;
    let diag = |dd: &Field, ss: &Field| {
        let base = dd.scale(2.0).add(&ss.scale(a2));
        base.sub(pressure)
    };
    let off = d.b12.scale(2.0).add(&s.b12.scale(a2));
    Ok(Tensor2Field {
        t11: diag(&d.b11, &s.b11),
        t12: off.clone(),
        t21: off,
        t22: diag(&d.b22, &s.b22),
    })
}

/// Partial derivatives `(∂x B, ∂y B)` of a tensor field.
pub fn tensor_gradient(grid: &SpectralGrid, b: &SymTensorField) -> Result<[SymTensorField; 2]> {
    let g11 = grid.gradient(&b.b11)?;
    let g12 = grid.gradient(&b.b12)?;
    let g22 = grid.gradient(&b.b22)?;
    Ok([
        SymTensorField::new(g11.x, g12.x, g22.x),
        SymTensorField::new(g11.y, g12.y, g22.y),
    ])
}

/// Integrated dissipation groups, plus the `ρ_ε`-weighted relaxation group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DissipationTotals {
    pub viscous: f64,
    pub diffusive: f64,
    pub relaxation: f64,
    pub relaxation_weighted: f64,
}

impl DissipationTotals {
    /// `∫ξ`.
    pub fn total(&self) -> f64 {
        self.viscous + self.diffusive + self.relaxation
    }

    /// Dissipation of the regularized energy identity.
    pub fn total_weighted(&self) -> f64 {
        self.viscous + self.diffusive + self.relaxation_weighted
    }
}

/// Pointwise `ξ` with the integrated groups. Fails with `NonSpd` at the first
/// point where `B` is not positive definite.
pub fn dissipation_breakdown(
    grid: &SpectralGrid,
    v: &VectorField,
    b: &SymTensorField,
    p: &ModelParams,
) -> Result<(Field, DissipationTotals)> {
    if let Some(idx) = first_failure(b, |s| !s.is_spd()) {
        let (i, j) = Error::at(b.n(), idx);
        return Err(Error::NonSpd { i, j });
    }
    let (d, _) = VelocityGradient::compute(grid, v)?.split();
    let [bx, by] = tensor_gradient(grid, b)?;
    let n = grid.n();
    let parts: Vec<(XiParts, f64)> = par::collect(n * n, |i| {
        let s = b.at(i);
        let x = xi_parts(d.at(i), s, [bx.at(i), by.at(i)], p).expect("checked SPD");
        (x, rho_eps(s, p.epsilon))
    });
    let len = parts.len() as f64;
    let totals = DissipationTotals {
        viscous: par::sum(parts.len(), |i| parts[i].0.viscous) / len,
        diffusive: par::sum(parts.len(), |i| parts[i].0.diffusive) / len,
        relaxation: par::sum(parts.len(), |i| parts[i].0.relaxation) / len,
        relaxation_weighted: par::sum(parts.len(), |i| parts[i].1 * parts[i].0.relaxation) / len,
    };
    let xi = Field::from_vec(n, parts.iter().map(|(x, _)| x.total()).collect())?;
    Ok((xi, totals))
}

/// Pointwise `ξ` and `∫ξ`.
pub fn dissipation_xi(
    grid: &SpectralGrid,
    v: &VectorField,
    b: &SymTensorField,
    p: &ModelParams,
) -> Result<(Field, f64)> {
    let (xi, totals) = dissipation_breakdown(grid, v, b, p)?;
    Ok((xi, totals.total()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params(beta: f64, d1: f64, d2: f64) -> ModelParams {
        ModelParams {
            a: 1.0,
            beta,
            delta1: d1,
            delta2: d2,
            epsilon: 0.0,
        }
    }

    /// SPD sample from eigenvalues in [0.1, 5] and a random rotation.
    fn arb_spd() -> impl Strategy<Value = Sym2> {
        (0.1f64..5.0, 0.1f64..5.0, 0.0f64..PI).prop_map(|(l1, l2, th)| spd_from(l1, l2, th))
    }

    fn spd_from(l1: f64, l2: f64, th: f64) -> Sym2 {
        let (c, s) = (th.cos(), th.sin());
        Sym2::new(
            l1 * c * c + l2 * s * s,
            (l1 - l2) * c * s,
            l1 * s * s + l2 * c * c,
        )
    }

    fn close(a: Sym2, b: Sym2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn stress_examples() {
        assert_eq!(stress_s(Sym2::IDENTITY, &params(0.3, 0.0, 0.0)), Sym2::ZERO);
        // 0.5 diag(1,0) + 0.5 diag(2,0)
        let s = stress_s(Sym2::diag(2.0, 1.0), &params(0.5, 0.0, 0.0));
        assert!(close(s, Sym2::diag(1.5, 0.0), 1e-15));
    }

    #[test]
    fn relaxation_examples() {
        assert_eq!(relax_r(Sym2::IDENTITY, &params(0.3, 1.0, 2.0)), Sym2::ZERO);
        let r = relax_r(Sym2::diag(2.0, 1.0), &params(0.3, 1.0, 2.0));
        assert!(close(r, Sym2::diag(5.0, 0.0), 1e-15));
        let r = relax_r(Sym2::new(3.0, 1.2, 0.7), &params(0.3, 0.0, 0.0));
        assert_eq!(r, Sym2::ZERO);
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(
            conjugate_j(Sym2::IDENTITY, &params(0.3, 0.0, 0.0)),
            Some(Sym2::ZERO)
        );
        let j = conjugate_j(Sym2::diag(2.0, 1.0), &params(0.5, 0.0, 0.0)).unwrap();
        assert!(close(j, Sym2::diag(0.75, 0.0), 1e-15));
        assert!(conjugate_j(Sym2::diag(1.0, 0.0), &params(0.5, 0.0, 0.0)).is_none());
    }

    #[test]
    fn free_energy_examples() {
        let p = params(0.5, 0.0, 0.0);
        assert_eq!(psi(Sym2::IDENTITY, &p), Some(0.0));
        let v = psi(Sym2::diag(2.0, 1.0), &p).unwrap();
        let expect = 0.5 * (3.0 - 2.0 - 2f64.ln()) + 0.25;
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.403426).abs() < 1e-6);
        assert!(psi(Sym2::diag(1.0, 1e-8), &p).unwrap() > 8.0);
        assert!(psi(Sym2::diag(1.0, -1.0), &p).is_none());
    }

    #[test]
    fn free_energy_field_flags_lost_positivity() {
        let mut b = SymTensorField::identity(8);
        b.b22.as_mut_slice()[3 * 8 + 5] = -0.5;
        match free_energy_psi(&b, &params(0.5, 0.0, 0.0)) {
            Err(Error::NonPositiveDeterminant { i, j }) => assert_eq!((i, j), (5, 3)),
            other => panic!("unexpected {other:?}"),
        }
        let (f, total) =
            free_energy_psi(&SymTensorField::identity(8), &params(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(rho_eps(Sym2::IDENTITY, 0.0), 1.0);
        assert_eq!(rho_eps(Sym2::diag(0.3, 2.0), 0.3), 0.0);
        assert_eq!(rho_eps(Sym2::diag(-1.0, 2.0), 0.1), 0.0);
        let r = rho_eps(Sym2::IDENTITY, 0.5);
        assert!((r - 0.5 / (1.0 + 0.5 * 2f64.sqrt().powi(3))).abs() < 1e-15);
        assert!((r - 0.207107).abs() < 1e-6);
        let r = rho_eps(Sym2::diag(2.0, 1.0), 0.5);
        assert!((r - 0.5 / (1.0 + 0.5 * 5f64.sqrt().powi(3))).abs() < 1e-15);
        assert!((r - 0.075870).abs() < 1e-6);
    }

    #[test]
    fn cauchy_stress_examples() {
        let n = 8;
        let g = SpectralGrid::new(n).unwrap();
        let zero_v = VectorField::zeros(n);
        let zero_p = Field::zeros(n);
        let t = cauchy_stress(
            &g,
            &zero_v,
            &zero_p,
            &SymTensorField::identity(n),
            &params(0.5, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(t.t11.max_abs() + t.t12.max_abs() + t.t22.max_abs(), 0.0);

        let b = SymTensorField::uniform(n, Sym2::diag(2.0, 1.0));
        let t = cauchy_stress(&g, &zero_v, &zero_p, &b, &params(0.5, 0.0, 0.0)).unwrap();
        assert!((t.t11.at(2, 3) - 3.0).abs() < 1e-15 && t.t22.max_abs() < 1e-15);
        assert_eq!(t.t12, t.t21);

        // a = 0: Newtonian stress −pI + 2D
        let n = 16;
        let g = SpectralGrid::new(n).unwrap();
        let v = VectorField::from_fn(n, |_, y| [(2.0 * PI * y).sin(), 0.0]);
        let pr = Field::from_fn(n, |x, _| (2.0 * PI * x).cos());
        let newt = ModelParams {
            a: 0.0,
            ..params(0.5, 0.0, 0.0)
        };
        let b = SymTensorField::uniform(n, Sym2::diag(2.0, 1.0));
        let t = cauchy_stress(&g, &v, &pr, &b, &newt).unwrap();
        assert!(t.t11.add(&pr).max_abs() < 1e-12);
        let shear = Field::from_fn(n, |_, y| 2.0 * PI * (2.0 * PI * y).cos());
        assert!(t.t12.sub(&shear).max_abs() < 1e-12);
    }

    #[test]
    fn dissipation_reduces_to_viscous_for_identity_tensor() {
        let n = 16;
        let g = SpectralGrid::new(n).unwrap();
        let p = params(0.3, 1.0, 0.5);
        let (xi, total) =
            dissipation_xi(&g, &VectorField::zeros(n), &SymTensorField::identity(n), &p).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(xi.max_abs(), 0.0);

        let v = VectorField::from_fn(n, |x, y| {
            [
                (2.0 * PI * x).sin() * (2.0 * PI * y).cos(),
                -(2.0 * PI * x).cos() * (2.0 * PI * y).sin(),
            ]
        });
        let (xi, _) = dissipation_xi(&g, &v, &SymTensorField::identity(n), &p).unwrap();
        let (d, _) = velocity_parts(&g, &v);
        let expect = d.map_scalar(|s| 2.0 * s.norm2());
        assert!(xi.sub(&expect).max_abs() < 1e-12 * expect.max_abs());
    }

    fn velocity_parts(g: &SpectralGrid, v: &VectorField) -> (SymTensorField, Field) {
        crate::fields::velocity_gradient_parts(g, v).unwrap()
    }

    /// Symmetric matrix function via explicit eigendecomposition.
    fn eig_fn(b: Sym2, f: impl Fn(f64) -> f64) -> [[f64; 2]; 2] {
        let (l1, l2) = (b.max_eig(), b.min_eig());
        let th = 0.5 * (2.0 * b.xy).atan2(b.xx - b.yy);
        let (c, s) = (th.cos(), th.sin());
        let (f1, f2) = (f(l1), f(l2));
        [
            [f1 * c * c + f2 * s * s, (f1 - f2) * c * s],
            [(f1 - f2) * c * s, f1 * s * s + f2 * c * c],
        ]
    }

    fn mm(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    }

    fn fro2(a: [[f64; 2]; 2]) -> f64 {
        a.iter().flatten().map(|x| x * x).sum()
    }

    #[test]
    fn diffusive_dissipation_matches_finite_difference_oracle() {
        let n = 32;
        let g = SpectralGrid::new(n).unwrap();
        let p = params(0.3, 0.0, 0.0);
        let bf = |x: f64, y: f64| {
            Sym2::new(
                1.0 + 0.3 * (2.0 * PI * x).sin(),
                0.2 * (2.0 * PI * (x + y)).cos(),
                1.0 + 0.25 * (2.0 * PI * y).cos(),
            )
        };
        let b = SymTensorField::from_fn(n, bf);
        let (xi, _) = dissipation_xi(&g, &VectorField::zeros(n), &b, &p).unwrap();
        let (i, j) = (5usize, 11usize);
        let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
        let h = 1e-6;
        let dx = (bf(x + h, y) - bf(x - h, y)).scale(0.5 / h);
        let dy = (bf(x, y + h) - bf(x, y - h)).scale(0.5 / h);
        let bpt = bf(x, y);
        let inv_root = eig_fn(bpt, |l| 1.0 / l.sqrt());
        let mut oracle = 0.0;
        for gb in [dx, dy] {
            let m = mm(mm(inv_root, gb.mat().0), inv_root);
            oracle += (1.0 - p.beta) * fro2(m) + p.beta * fro2(gb.mat().0);
        }
        let got = xi.at(i, j);
        assert!((got - oracle).abs() <= 1e-7 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn relaxation_dissipation_matches_eigen_oracle() {
        let p = params(0.3, 1.3, 0.7);
        let b = spd_from(0.4, 2.5, 0.7);
        let parts = xi_parts(Sym2::ZERO, b, [Sym2::ZERO; 2], &p).unwrap();
        let (l1, l2) = (b.max_eig(), b.min_eig());
        let term = |l: f64| {
            (1.0 - p.beta) * p.delta1 * (l.sqrt() - 1.0 / l.sqrt()).powi(2)
                + p.beta * p.delta2 * (l.powf(1.5) - l.sqrt()).powi(2)
                + (p.beta * p.delta1 + (1.0 - p.beta) * p.delta2) * (l - 1.0).powi(2)
        };
        let oracle = term(l1) + term(l2);
        assert!((parts.relaxation - oracle).abs() < 1e-12 * oracle);
        // equals R(B):J(B)
        let rj = relax_r(b, &p).ddot(conjugate_j(b, &p).unwrap());
        assert!((parts.relaxation - rj).abs() < 1e-12 * oracle);
    }

    #[test]
    fn non_spd_tensor_is_rejected_by_dissipation() {
        let n = 8;
        let g = SpectralGrid::new(n).unwrap();
        let mut b = SymTensorField::identity(n);
        b.b12.as_mut_slice()[9] = 2.0;
        assert!(matches!(
            dissipation_xi(&g, &VectorField::zeros(n), &b, &params(0.3, 0.0, 0.0)),
            Err(Error::NonSpd { i: 1, j: 1 })
        ));
    }

    #[test]
    fn square_root_closed_form() {
        let b = spd_from(0.3, 4.0, 1.1);
        let r = b.sqrt().unwrap();
        assert!((r.mat() * r.mat() - b.mat()).max_abs() < 1e-14);
        let e = eig_fn(b, f64::sqrt);
        assert!((r.xx - e[0][0]).abs() < 1e-14 && (r.xy - e[0][1]).abs() < 1e-14);
        assert!(Sym2::diag(1.0, -1.0).sqrt().is_none());
    }

    #[test]
    fn initial_regularization_replaces_weak_points() {
        let mut b = SymTensorField::identity(4);
        b.b11.as_mut_slice()[2] = 0.05;
        let r = regularize_initial(&b, 0.1);
        assert_eq!(r.at(2), Sym2::IDENTITY);
        let keep = SymTensorField::uniform(4, Sym2::diag(2.0, 0.5));
        assert_eq!(regularize_initial(&keep, 0.1), keep);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn algebraic_identities(b in arb_spd(), beta in 0.01f64..0.99) {
            let p = params(beta, 0.0, 0.0);
            let s = stress_s(b, &p);
            let j = conjugate_j(b, &p).unwrap();
            let tol = 1e-12 * (1.0 + b.norm2());
            prop_assert!((b.mat() * j.mat() - s.mat()).max_abs() <= tol);
            prop_assert!((j.mat() * b.mat() - s.mat()).max_abs() <= tol);
            prop_assert!((s.mat() * b.mat() - b.mat() * s.mat()).max_abs() <= tol * b.norm());
        }

        #[test]
        fn free_energy_nonnegative(b in arb_spd(), beta in 0.01f64..0.99) {
            let p = params(beta, 0.0, 0.0);
            prop_assert!(psi(b, &p).unwrap() >= 0.0);
        }

        #[test]
        fn dissipation_nonnegative(b in arb_spd(), g1 in arb_spd(), g2 in arb_spd(),
                                   d in arb_spd(), beta in 0.01f64..0.99,
                                   d1 in 0.0f64..3.0, d2 in 0.0f64..3.0) {
            let p = params(beta, d1, d2);
            let x = xi_parts(d, b, [g1 - Sym2::IDENTITY, g2], &p).unwrap();
            prop_assert!(x.viscous >= 0.0 && x.diffusive >= 0.0 && x.relaxation >= 0.0);
        }

        #[test]
        fn conjugate_is_gradient_of_free_energy(b in arb_spd(), beta in 0.01f64..0.99,
                                                e in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)) {
            let p = params(beta, 0.0, 0.0);
            let dir = Sym2::new(e.0, e.1, e.2);
            let h = 1e-5;
            let fd = (psi(b + dir.scale(h), &p).unwrap() - psi(b - dir.scale(h), &p).unwrap()) / (2.0 * h);
            let exact = conjugate_j(b, &p).unwrap().ddot(dir);
            let scale = conjugate_j(b, &p).unwrap().norm() * dir.norm();
            prop_assert!((fd - exact).abs() <= 1e-6 * scale.max(1e-3));
        }

        #[test]
        fn cutoff_deviation_bound(b in arb_spd(), eps in 1e-6f64..1e-2) {
            let c = b.min_eig();
            let r = rho_eps(b, eps);
            prop_assert!((0.0..1.0).contains(&r));
            prop_assert!((r - 1.0).abs() <= eps * (1.0 / c + b.norm().powi(3)));
        }
    }
}
