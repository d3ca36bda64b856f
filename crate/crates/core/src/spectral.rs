//! Fourier calculus on the unit torus `[0,1)²`.
//!
//! Samples live on the uniform `N × N` grid `x_i = i/N`, `y_j = j/N`, stored row
//! major with `y` as the slow index (`data[j * N + i]`). Spectra use the same
//! layout with mode indices `(m1, m2)`; index `m` carries the signed lattice
//! wavenumber `m` for `m <= N/2` and `m - N` above, and the physical wavenumber
//! is `2π` times that.
//!
//! Normalization: the forward transform is unnormalized, the inverse divides by
//! `N²`. A constant field `c` therefore has the single coefficient `c·N²`.
//!
//! Odd derivatives zero every mode whose index is the Nyquist index `N/2` in
//! either direction; the Laplacian and its inverse act on all modes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::par;

/// Real samples of a scalar field on the grid.
#[derive(Clone, PartialEq)]
pub struct Field {
    n: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Field {{ n: {}, max_abs: {:e} }}",
            self.n,
            self.max_abs()
        )
    }
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field {
            n,
            data: vec![c; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::SizeMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Field { n, data })
    }

    /// Sample `f(x, y)` at the grid points.
    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        let h = 1.0 / n as f64;
        let data = par::collect(n * n, |idx| {
            let (i, j) = (idx % n, idx / n);
            f(i as f64 * h, j as f64 * h)
        });
        Field { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Sample at column `i` (x) and row `j` (y).
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn map<F>(&self, f: F) -> Field
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        let d = &self.data;
        Field {
            n: self.n,
            data: par::collect(d.len(), |i| f(d[i])),
        }
    }

    pub fn zip_map<F>(&self, other: &Field, f: F) -> Field
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        assert_eq!(self.n, other.n, "fields on different grids");
        let (a, b) = (&self.data, &other.data);
        Field {
            n: self.n,
            data: par::collect(a.len(), |i| f(a[i], b[i])),
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|x| c * x)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    /// Domain mean; equals the integral since the torus has unit area.
    pub fn mean(&self) -> f64 {
        let d = &self.data;
        par::sum(d.len(), |i| d[i]) / d.len() as f64
    }

    /// Discrete L² inner product `∫ u w dx`.
    pub fn dot(&self, other: &Field) -> f64 {
        assert_eq!(self.n, other.n, "fields on different grids");
        let (a, b) = (&self.data, &other.data);
        par::sum(a.len(), |i| a[i] * b[i]) / a.len() as f64
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `(∫ |u|^p dx)^(1/p)`.
    pub fn norm_lp(&self, p: f64) -> f64 {
        let d = &self.data;
        (par::sum(d.len(), |i| d[i].abs().powf(p)) / d.len() as f64).powf(1.0 / p)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Complex Fourier coefficients of a field.
#[derive(Clone, PartialEq)]
pub struct Spectrum {
    n: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Spectrum {{ n: {} }}", self.n)
    }
}

impl Spectrum {
    pub fn zeros(n: usize) -> Self {
        Spectrum {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::SizeMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Spectrum { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Coefficient of mode index `(m1, m2)`.
    pub fn mode(&self, m1: usize, m2: usize) -> Complex64 {
        self.data[m2 * self.n + m1]
    }

    pub fn set_mode(&mut self, m1: usize, m2: usize, c: Complex64) {
        self.data[m2 * self.n + m1] = c;
    }

    pub fn scale(&self, c: f64) -> Spectrum {
        let d = &self.data;
        Spectrum {
            n: self.n,
            data: par::collect(d.len(), |i| d[i] * c),
        }
    }

    pub fn add(&self, other: &Spectrum) -> Spectrum {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Spectrum) -> Spectrum {
        self.zip(other, |a, b| a - b)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Spectrum) -> Spectrum {
        self.zip(other, |a, b| a + b * c)
    }

    pub fn zip<F>(&self, other: &Spectrum, f: F) -> Spectrum
    where
        F: Fn(Complex64, Complex64) -> Complex64 + Sync + Send,
    {
        assert_eq!(self.n, other.n, "spectra on different grids");
        let (a, b) = (&self.data, &other.data);
        Spectrum {
            n: self.n,
            data: par::collect(a.len(), |i| f(a[i], b[i])),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, c| m.max(c.norm()))
    }
}

/// The `N × N` discretization of the torus with its transform plans.
///
/// Plans are immutable and shared; cloning a grid is cheap.
#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<i64>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpectralGrid {{ n: {} }}", self.n)
    }
}

impl SpectralGrid {
    /// Grid with `n` points per direction; `n` must be even and at least 4.
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "grid size must be an even integer >= 4, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let wavenumbers = (0..n)
            .map(|m| {
                if m <= n / 2 {
                    m as i64
                } else {
                    m as i64 - n as i64
                }
            })
            .collect();
        Ok(SpectralGrid {
            n,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            wavenumbers,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of samples, `N²`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Grid spacing `1/N`.
    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Signed lattice wavenumber of 1D index `m`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        self.wavenumbers[m]
    }

    /// Lattice wavenumber pair of flat spectral index `idx`.
    pub fn lattice(&self, idx: usize) -> (i64, i64) {
        (
            self.wavenumbers[idx % self.n],
            self.wavenumbers[idx / self.n],
        )
    }

    /// Physical wavenumber `2π n` of 1D index `m`.
    pub fn k_phys(&self, m: usize) -> f64 {
        2.0 * PI * self.wavenumbers[m] as f64
    }

    fn is_nyquist(&self, idx: usize) -> bool {
        let h = self.n / 2;
        idx % self.n == h || idx / self.n == h
    }

    /// `4π²|n|²` for flat spectral index `idx`; the Laplacian eigenvalue magnitude.
    pub fn laplace_symbol(&self, idx: usize) -> f64 {
        let (n1, n2) = self.lattice(idx);
        4.0 * PI * PI * (n1 * n1 + n2 * n2) as f64
    }

    /// True for modes retained by the 2/3 rule, `max(|n1|, |n2|) <= N/3`.
    pub fn dealias_keeps(&self, idx: usize) -> bool {
        let (n1, n2) = self.lattice(idx);
        let n = self.n as i64;
        3 * n1.abs() <= n && 3 * n2.abs() <= n
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_field(&self, f: &Field) -> Result<()> {
        self.check_len(f.data.len())?;
        if f.n != self.n {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    fn check_spectrum(&self, s: &Spectrum) -> Result<()> {
        self.check_len(s.data.len())
    }

    fn transform_2d(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let scratch_len = plan.get_inplace_scratch_len();
        let rows = |buf: &mut [Complex64]| {
            par::rows_with_scratch(
                buf,
                n,
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |scratch, _, row| plan.process_with_scratch(row, scratch),
            );
        };
        rows(data);
        let mut t = transpose(data, n);
        rows(&mut t);
        let back = transpose(&t, n);
        data.copy_from_slice(&back);
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, field: &Field) -> Result<Spectrum> {
        self.check_field(field)?;
        let d = &field.data;
        let mut data = par::collect(d.len(), |i| Complex64::new(d[i], 0.0));
        self.transform_2d(&mut data, &self.fft);
        Ok(Spectrum { n: self.n, data })
    }

    /// Inverse transform, scaled by `1/N²`; the imaginary residue is dropped.
    pub fn inverse(&self, spectrum: &Spectrum) -> Result<Field> {
        self.check_spectrum(spectrum)?;
        let mut data = spectrum.data.clone();
        self.transform_2d(&mut data, &self.ifft);
        let scale = 1.0 / self.len() as f64;
        Ok(Field {
            n: self.n,
            data: par::collect(data.len(), |i| data[i].re * scale),
        })
    }

    fn multiply<F>(&self, s: &Spectrum, symbol: F) -> Result<Spectrum>
    where
        F: Fn(usize) -> Complex64 + Sync + Send,
    {
        self.check_spectrum(s)?;
        let d = &s.data;
        Ok(Spectrum {
            n: self.n,
            data: par::collect(d.len(), |i| d[i] * symbol(i)),
        })
    }

    /// Spectral `∂/∂x`.
    pub fn ddx_hat(&self, s: &Spectrum) -> Result<Spectrum> {
        self.multiply(s, |i| {
            if self.is_nyquist(i) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, self.k_phys(i % self.n))
            }
        })
    }

    /// Spectral `∂/∂y`.
    pub fn ddy_hat(&self, s: &Spectrum) -> Result<Spectrum> {
        self.multiply(s, |i| {
            if self.is_nyquist(i) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, self.k_phys(i / self.n))
            }
        })
    }

    pub fn laplacian_hat(&self, s: &Spectrum) -> Result<Spectrum> {
        self.multiply(s, |i| Complex64::new(-self.laplace_symbol(i), 0.0))
    }

    /// Zero-mean solution `φ` of `Δφ = s`; the mean mode of `s` is ignored.
    pub fn inverse_laplacian_hat(&self, s: &Spectrum) -> Result<Spectrum> {
        self.multiply(s, |i| {
            if i == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / self.laplace_symbol(i), 0.0)
            }
        })
    }

    pub fn divergence_hat(&self, sx: &Spectrum, sy: &Spectrum) -> Result<Spectrum> {
        Ok(self.ddx_hat(sx)?.add(&self.ddy_hat(sy)?))
    }

    pub fn gradient(&self, f: &Field) -> Result<VectorField> {
        let s = self.forward(f)?;
        let (gx, gy) = par::join(
            || self.inverse(&self.ddx_hat(&s)?),
            || self.inverse(&self.ddy_hat(&s)?),
        );
        Ok(VectorField::new(gx?, gy?))
    }

    pub fn divergence(&self, v: &VectorField) -> Result<Field> {
        let sx = self.forward(&v.x)?;
        let sy = self.forward(&v.y)?;
        self.inverse(&self.divergence_hat(&sx, &sy)?)
    }

    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        self.inverse(&self.laplacian_hat(&self.forward(f)?)?)
    }

    /// Leray projection in place: per mode `v̂ ↦ v̂ − n (n·v̂)/|n|²`, with the mean
    /// and Nyquist modes set to zero.
    pub fn leray_project_hat(&self, sx: &mut Spectrum, sy: &mut Spectrum) -> Result<()> {
        self.check_spectrum(sx)?;
        self.check_spectrum(sy)?;
        let zero = Complex64::new(0.0, 0.0);
        for idx in 0..self.len() {
            if idx == 0 || self.is_nyquist(idx) {
                sx.data[idx] = zero;
                sy.data[idx] = zero;
                continue;
            }
            let (n1, n2) = self.lattice(idx);
            let (k1, k2) = (n1 as f64, n2 as f64);
            let dot = sx.data[idx] * k1 + sy.data[idx] * k2;
            let inv = 1.0 / (k1 * k1 + k2 * k2);
            sx.data[idx] -= dot * (k1 * inv);
            sy.data[idx] -= dot * (k2 * inv);
        }
        Ok(())
    }

    pub fn leray_project(&self, v: &VectorField) -> Result<VectorField> {
        let mut sx = self.forward(&v.x)?;
        let mut sy = self.forward(&v.y)?;
        self.leray_project_hat(&mut sx, &mut sy)?;
        Ok(VectorField::new(self.inverse(&sx)?, self.inverse(&sy)?))
    }

    /// 2/3-rule truncation in place.
    pub fn dealias_hat(&self, s: &mut Spectrum) -> Result<()> {
        self.check_spectrum(s)?;
        for (idx, c) in s.data.iter_mut().enumerate() {
            if !self.dealias_keeps(idx) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Ok(())
    }

    /// Zero every mode with `|n| > k`.
    pub fn truncate_ball_hat(&self, s: &mut Spectrum, k: usize) -> Result<()> {
        self.check_spectrum(s)?;
        let k2 = (k * k) as i64;
        for (idx, c) in s.data.iter_mut().enumerate() {
            let (n1, n2) = self.lattice(idx);
            if n1 * n1 + n2 * n2 > k2 {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Ok(())
    }

    fn check_radius(&self, k: usize) -> Result<()> {
        if k > self.n / 2 {
            return Err(Error::InvalidArgument(format!(
                "truncation radius {k} exceeds N/2 = {}",
                self.n / 2
            )));
        }
        Ok(())
    }

    /// Velocity Galerkin projector: ball truncation followed by the Leray projection.
    pub fn project_pk_hat(&self, sx: &mut Spectrum, sy: &mut Spectrum, k: usize) -> Result<()> {
        self.check_radius(k)?;
        self.truncate_ball_hat(sx, k)?;
        self.truncate_ball_hat(sy, k)?;
        self.leray_project_hat(sx, sy)
    }

    /// Tensor Galerkin projector: ball truncation of each stored component.
    pub fn project_qk_hat(&self, comps: [&mut Spectrum; 3], k: usize) -> Result<()> {
        self.check_radius(k)?;
        for c in comps {
            self.truncate_ball_hat(c, k)?;
        }
        Ok(())
    }
}

fn transpose(data: &[Complex64], n: usize) -> Vec<Complex64> {
    par::collect(n * n, |idx| {
        let (i, j) = (idx % n, idx / n);
        data[i * n + j]
    })
}
