//! State containers and pointwise kinematics.

use crate::constitutive::Sym2;
use crate::error::{Error, Result};
use crate::par;
use crate::spectral::{Field, SpectralGrid};

/// Two-component vector field. As a velocity it is kept zero-mean and
/// divergence-free by the dynamics, which re-project after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Field,
    pub y: Field,
}

impl VectorField {
    pub fn new(x: Field, y: Field) -> Self {
        assert_eq!(x.n(), y.n(), "components on different grids");
        VectorField { x, y }
    }

    pub fn zeros(n: usize) -> Self {
        VectorField::new(Field::zeros(n), Field::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> [f64; 2] + Sync + Send,
    {
        VectorField::new(
            Field::from_fn(n, |x, y| f(x, y)[0]),
            Field::from_fn(n, |x, y| f(x, y)[1]),
        )
    }

    /// `∫ u·w dx`.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorField::new(self.x.scale(c), self.y.scale(c))
    }

    pub fn add(&self, other: &VectorField) -> Self {
        VectorField::new(self.x.add(&other.x), self.y.add(&other.y))
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        VectorField::new(self.x.sub(&other.x), self.y.sub(&other.y))
    }

    pub fn max_abs(&self) -> f64 {
        self.x.max_abs().max(self.y.max_abs())
    }

    /// Pointwise maximum of `|v|`.
    pub fn max_speed(&self) -> f64 {
        let (a, b) = (self.x.as_slice(), self.y.as_slice());
        a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max(u.hypot(*v)))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

pub type VelocityField = VectorField;

/// Symmetric 2×2 tensor field stored by its three independent components,
/// so `B₂₁ ≡ B₁₂` holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub b11: Field,
    pub b12: Field,
    pub b22: Field,
}

impl SymTensorField {
    pub fn new(b11: Field, b12: Field, b22: Field) -> Self {
        assert!(
            b11.n() == b12.n() && b12.n() == b22.n(),
            "components on different grids"
        );
        SymTensorField { b11, b12, b22 }
    }

    pub fn identity(n: usize) -> Self {
        SymTensorField::new(
            Field::constant(n, 1.0),
            Field::zeros(n),
            Field::constant(n, 1.0),
        )
    }

    pub fn zeros(n: usize) -> Self {
        SymTensorField::new(Field::zeros(n), Field::zeros(n), Field::zeros(n))
    }

    /// Spatially constant tensor.
    pub fn uniform(n: usize, b: Sym2) -> Self {
        SymTensorField::new(
            Field::constant(n, b.xx),
            Field::constant(n, b.xy),
            Field::constant(n, b.yy),
        )
    }

    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> Sym2 + Sync + Send,
    {
        SymTensorField::new(
            Field::from_fn(n, |x, y| f(x, y).xx),
            Field::from_fn(n, |x, y| f(x, y).xy),
            Field::from_fn(n, |x, y| f(x, y).yy),
        )
    }

    /// Build from a pointwise function of the flat sample index.
    pub fn from_index_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize) -> Sym2 + Sync + Send,
    {
        let vals: Vec<Sym2> = par::collect(n * n, f);
        let comp = |g: fn(&Sym2) -> f64| {
            Field::from_vec(n, vals.iter().map(g).collect()).expect("length n²")
        };
        SymTensorField::new(comp(|s| s.xx), comp(|s| s.xy), comp(|s| s.yy))
    }

    pub fn n(&self) -> usize {
        self.b11.n()
    }

    /// Tensor at flat sample index `idx`.
    pub fn at(&self, idx: usize) -> Sym2 {
        Sym2::new(
            self.b11.as_slice()[idx],
            self.b12.as_slice()[idx],
            self.b22.as_slice()[idx],
        )
    }

    /// Pointwise map to another tensor field.
    pub fn map<F>(&self, f: F) -> SymTensorField
    where
        F: Fn(Sym2) -> Sym2 + Sync + Send,
    {
        SymTensorField::from_index_fn(self.n(), |i| f(self.at(i)))
    }

    /// Pointwise map to a scalar field.
    pub fn map_scalar<F>(&self, f: F) -> Field
    where
        F: Fn(Sym2) -> f64 + Sync + Send,
    {
        let n = self.n();
        Field::from_vec(n, par::collect(n * n, |i| f(self.at(i)))).expect("length n²")
    }

    pub fn components(&self) -> [&Field; 3] {
        [&self.b11, &self.b12, &self.b22]
    }

    pub fn scale(&self, c: f64) -> Self {
        SymTensorField::new(self.b11.scale(c), self.b12.scale(c), self.b22.scale(c))
    }

    pub fn add(&self, o: &SymTensorField) -> Self {
        SymTensorField::new(
            self.b11.add(&o.b11),
            self.b12.add(&o.b12),
            self.b22.add(&o.b22),
        )
    }

    pub fn sub(&self, o: &SymTensorField) -> Self {
        SymTensorField::new(
            self.b11.sub(&o.b11),
            self.b12.sub(&o.b12),
            self.b22.sub(&o.b22),
        )
    }

    /// Frobenius inner product `∫ A:B dx` (the off-diagonal entry counts twice).
    pub fn dot(&self, o: &SymTensorField) -> f64 {
        self.b11.dot(&o.b11) + 2.0 * self.b12.dot(&o.b12) + self.b22.dot(&o.b22)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.b11
            .max_abs()
            .max(self.b12.max_abs())
            .max(self.b22.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.b11.is_finite() && self.b12.is_finite() && self.b22.is_finite()
    }
}

/// Eigen-coordinates of a symmetric tensor field: `B = [[g/2+e, f], [f, g/2−e]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EfgView {
    pub e: Field,
    pub f: Field,
    pub g: Field,
}

pub fn to_efg(b: &SymTensorField) -> EfgView {
    EfgView {
        e: b.b11.zip_map(&b.b22, |p, q| (p - q) / 2.0),
        f: b.b12.clone(),
        g: b.b11.zip_map(&b.b22, |p, q| p + q),
    }
}

pub fn from_efg(v: &EfgView) -> SymTensorField {
    SymTensorField::new(
        v.g.zip_map(&v.e, |g, e| g / 2.0 + e),
        v.f.clone(),
        v.g.zip_map(&v.e, |g, e| g / 2.0 - e),
    )
}

/// Pointwise extreme eigenvalues `g/2 ∓ √(e² + f²)`.
pub fn eigen_minmax(b: &SymTensorField) -> (Field, Field) {
    (b.map_scalar(|s| s.min_eig()), b.map_scalar(|s| s.max_eig()))
}

/// Velocity gradient `G_ij = ∂_j v_i`, all four entries.
#[derive(Debug, Clone)]
pub struct VelocityGradient {
    pub dux: Field,
    pub duy: Field,
    pub dvx: Field,
    pub dvy: Field,
}

impl VelocityGradient {
    pub fn compute(grid: &SpectralGrid, v: &VectorField) -> Result<Self> {
        let gu = grid.gradient(&v.x)?;
        let gv = grid.gradient(&v.y)?;
        Ok(VelocityGradient {
            dux: gu.x,
            duy: gu.y,
            dvx: gv.x,
            dvy: gv.y,
        })
    }

    /// Symmetric part `D` and the single entry `w = W₁₂` of the skew part.
    pub fn split(&self) -> (SymTensorField, Field) {
        let d = SymTensorField::new(
            self.dux.clone(),
            self.duy.zip_map(&self.dvx, |a, b| 0.5 * (a + b)),
            self.dvy.clone(),
        );
        let w = self.duy.zip_map(&self.dvx, |a, b| 0.5 * (a - b));
        (d, w)
    }
}

/// `D(v) = (∇v + ∇vᵀ)/2` and `W(v) = [[0, w], [−w, 0]]` with `w` returned alone.
pub fn velocity_gradient_parts(
    grid: &SpectralGrid,
    v: &VectorField,
) -> Result<(SymTensorField, Field)> {
    Ok(VelocityGradient::compute(grid, v)?.split())
}

/// Solver state `(t, v, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub velocity: VectorField,
    pub tensor: SymTensorField,
}

impl State {
    pub fn new(t: f64, velocity: VectorField, tensor: SymTensorField) -> Result<Self> {
        let n = velocity.n();
        if tensor.n() != n {
            return Err(Error::SizeMismatch {
                expected: n * n,
                got: tensor.n() * tensor.n(),
            });
        }
        Ok(State {
            t,
            velocity,
            tensor,
        })
    }

    /// `v = 0`, `B = I`.
    pub fn equilibrium(n: usize) -> Self {
        State {
            t: 0.0,
            velocity: VectorField::zeros(n),
            tensor: SymTensorField::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.velocity.n()
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.is_finite() && self.tensor.is_finite()
    }
}
