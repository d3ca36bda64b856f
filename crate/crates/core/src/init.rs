//! Initial data: the Taylor–Green vortex, a smooth deterministic coupled state,
//! and seeded random band-limited fields.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constitutive::Sym2;
use crate::error::{ConfigError, Result};
use crate::fields::{State, SymTensorField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialCondition {
    /// Taylor–Green velocity, `B = I`.
    #[default]
    TaylorGreen,
    /// Taylor–Green velocity with the smooth SPD tensor of [`smooth_spd_tensor`].
    Smooth,
    /// `v = 0`, `B = I`.
    Equilibrium,
    /// Seeded random divergence-free velocity and random SPD tensor.
    Random,
}

impl InitialCondition {
    pub fn name(self) -> &'static str {
        match self {
            InitialCondition::TaylorGreen => "taylor_green",
            InitialCondition::Smooth => "smooth",
            InitialCondition::Equilibrium => "equilibrium",
            InitialCondition::Random => "random",
        }
    }

    pub fn build(self, n: usize, seed: u64) -> Result<State> {
        let (v, b) = match self {
            InitialCondition::TaylorGreen => (taylor_green(n), SymTensorField::identity(n)),
            InitialCondition::Smooth => (taylor_green(n), smooth_spd_tensor(n, 0.2)),
            InitialCondition::Equilibrium => (VectorField::zeros(n), SymTensorField::identity(n)),
            InitialCondition::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_velocity(n, &mut rng, 1.0, 4);
                let b = random_spd_tensor(n, &mut rng, 0.3, 4, 0.1);
                (v, b)
            }
        };
        State::new(0.0, v, b)
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitialCondition {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "taylor_green" => Ok(InitialCondition::TaylorGreen),
            "smooth" => Ok(InitialCondition::Smooth),
            "equilibrium" => Ok(InitialCondition::Equilibrium),
            "random" => Ok(InitialCondition::Random),
            other => Err(ConfigError::OutOfRange {
                field: "initial",
                value: other.to_string(),
                reason: "expected taylor_green, smooth, equilibrium or random",
            }),
        }
    }
}

/// `v = (sin 2πx cos 2πy, −cos 2πx sin 2πy)`.
pub fn taylor_green(n: usize) -> VectorField {
    VectorField::from_fn(n, |x, y| {
        let (sx, cx) = (2.0 * PI * x).sin_cos();
        let (sy, cy) = (2.0 * PI * y).sin_cos();
        [sx * cy, -cx * sy]
    })
}

/// `I` plus a fixed smooth symmetric perturbation whose entries are bounded by
/// `amp`; positive definite whenever `amp < 0.5`.
pub fn smooth_spd_tensor(n: usize, amp: f64) -> SymTensorField {
    SymTensorField::from_fn(n, |x, y| {
        let (sx, cx) = (2.0 * PI * x).sin_cos();
        let (sy, cy) = (2.0 * PI * y).sin_cos();
        Sym2::new(
            1.0 + amp * sx * cy,
            0.5 * amp * (2.0 * PI * (x + y)).sin(),
            1.0 - amp * cx * sy,
        )
    })
}

/// Random lattice vectors in a half plane with `1 <= |n| <= kmax`, one per
/// conjugate pair, together with cosine and sine amplitudes.
fn random_modes(rng: &mut ChaCha8Rng, kmax: i64) -> Vec<([i64; 2], f64, f64)> {
    let mut modes = Vec::new();
    for n2 in 0..=kmax {
        for n1 in -kmax..=kmax {
            let r2 = n1 * n1 + n2 * n2;
            if r2 == 0 || r2 > kmax * kmax || (n2 == 0 && n1 < 0) {
                continue;
            }
            let decay = 1.0 / r2 as f64;
            let a = rng.gen_range(-1.0..1.0) * decay;
            let b = rng.gen_range(-1.0..1.0) * decay;
            modes.push(([n1, n2], a, b));
        }
    }
    modes
}

/// Sum of `a cos 2πn·x + b sin 2πn·x` and its gradient.
fn eval_modes(modes: &[([i64; 2], f64, f64)], x: f64, y: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for &([n1, n2], a, b) in modes {
        let (s, c) = (2.0 * PI * (n1 as f64 * x + n2 as f64 * y)).sin_cos();
        out[0] += a * c + b * s;
        let d = 2.0 * PI * (b * c - a * s);
        out[1] += d * n1 as f64;
        out[2] += d * n2 as f64;
    }
    out
}

fn rescale_vector(v: VectorField, target: f64) -> VectorField {
    let m = v.max_speed();
    if m > 0.0 {
        v.scale(target / m)
    } else {
        v
    }
}

/// Divergence-free, zero-mean, band-limited (`|n| <= kmax`) velocity with peak
/// speed `amp`, built as the skew gradient of a random stream function.
pub fn random_velocity(n: usize, rng: &mut ChaCha8Rng, amp: f64, kmax: i64) -> VectorField {
    let modes = random_modes(rng, kmax);
    let v = VectorField::from_fn(n, |x, y| {
        let [_, px, py] = eval_modes(&modes, x, y);
        [py, -px]
    });
    rescale_vector(v, amp)
}

/// Random band-limited (`|n| <= kmax`) symmetric field whose largest entry has
/// magnitude `amp`.
pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng, amp: f64, kmax: i64) -> SymTensorField {
    let comps: Vec<Vec<([i64; 2], f64, f64)>> = (0..3).map(|_| random_modes(rng, kmax)).collect();
    let raw = SymTensorField::from_fn(n, |x, y| {
        let e = |k: usize| eval_modes(&comps[k], x, y)[0];
        Sym2::new(e(0), e(1), e(2))
    });
    let peak = raw.max_abs();
    if peak > 0.0 {
        raw.scale(amp / peak)
    } else {
        raw
    }
}

/// `I + P` with `P` from [`random_symmetric`]. Draws are repeated until the
/// smallest eigenvalue on the grid is at least `floor`; with
/// `amp <= (1 − floor)/2` the first draw always qualifies.
pub fn random_spd_tensor(
    n: usize,
    rng: &mut ChaCha8Rng,
    amp: f64,
    kmax: i64,
    floor: f64,
) -> SymTensorField {
    loop {
        let b = random_symmetric(n, rng, amp, kmax).add(&SymTensorField::identity(n));
        let lmin = (0..n * n)
            .map(|i| b.at(i).min_eig())
            .fold(f64::INFINITY, f64::min);
        if lmin >= floor {
            return b;
        }
    }
}

/// Convenience wrapper seeding a fresh generator.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
