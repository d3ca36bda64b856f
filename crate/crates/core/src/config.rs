//! Model and run parameters, their validation, and the flat `key = value`
//! configuration file format.
//!
//! Viscosity, density and the stress-diffusion coefficient are all fixed to one
//! and have no knobs.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::ConfigError;
use crate::init::InitialCondition;
use crate::timeloop::Scheme;

/// Physical constants of the governing equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Slip parameter of the objective derivative; also scales the elastic stress.
    pub a: f64,
    /// Interpolation between the log-det and quadratic free energies.
    pub beta: f64,
    /// Linear relaxation rate.
    pub delta1: f64,
    /// Quadratic relaxation rate.
    pub delta2: f64,
    /// Eigenvalue cutoff of the regularized scheme; 0 disables it.
    pub epsilon: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            a: 1.0,
            beta: 0.3,
            delta1: 1.0,
            delta2: 0.5,
            epsilon: 0.0,
        }
    }
}

impl ModelParams {
    pub fn regularized(&self) -> bool {
        self.epsilon > 0.0
    }
}

/// Named limit models. Each preset pins the slip parameter and the relaxation
/// structure; β stays free but defaults to 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Custom,
    OldroydB,
    Giesekus,
    JohnsonSegalman,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Custom => "custom",
            Preset::OldroydB => "oldroyd_b",
            Preset::Giesekus => "giesekus",
            Preset::JohnsonSegalman => "johnson_segalman",
        }
    }

    /// Parameters used for keys the configuration file leaves out.
    pub fn defaults(self) -> ModelParams {
        match self {
            Preset::Custom => ModelParams::default(),
            Preset::OldroydB => ModelParams {
                a: 1.0,
                beta: 0.01,
                delta1: 1.0,
                delta2: 0.0,
                epsilon: 0.0,
            },
            Preset::Giesekus => ModelParams {
                a: 1.0,
                beta: 0.01,
                delta1: 0.0,
                delta2: 1.0,
                epsilon: 0.0,
            },
            Preset::JohnsonSegalman => ModelParams {
                a: 0.5,
                beta: 0.01,
                delta1: 1.0,
                delta2: 0.0,
                epsilon: 0.0,
            },
        }
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "custom" => Ok(Preset::Custom),
            "oldroyd_b" => Ok(Preset::OldroydB),
            "giesekus" => Ok(Preset::Giesekus),
            "johnson_segalman" => Ok(Preset::JohnsonSegalman),
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

/// Discretization and run-control settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid_size: usize,
    pub t_end: f64,
    /// Fixed step; 0 selects the CFL rule.
    pub dt: f64,
    pub cfl: f64,
    pub dealias: bool,
    /// Galerkin truncation radius in lattice units; 0 keeps the full grid.
    pub galerkin_k: usize,
    pub output_every: usize,
    pub seed: u64,
    pub preset: Preset,
    /// Admit β ∈ {0, 1}.
    pub extended_range: bool,
    pub scheme: Scheme,
    pub initial: InitialCondition,
    pub abort_on_nonspd: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_size: 64,
            t_end: 0.1,
            dt: 1e-4,
            cfl: 0.5,
            dealias: true,
            galerkin_k: 0,
            output_every: 10,
            seed: 0,
            preset: Preset::Custom,
            extended_range: false,
            scheme: Scheme::ImexMidpoint,
            initial: InitialCondition::TaylorGreen,
            abort_on_nonspd: false,
        }
    }
}

/// A configuration that passed [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    params: ModelParams,
    run: RunConfig,
}

impl ValidatedConfig {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn run(&self) -> &RunConfig {
        &self.run
    }

    pub fn into_parts(self) -> (ModelParams, RunConfig) {
        (self.params, self.run)
    }
}

fn out_of_range(field: &'static str, value: impl ToString, reason: &'static str) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        value: value.to_string(),
        reason,
    }
}

fn finite(field: &'static str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(out_of_range(field, x, "must be finite"))
    }
}

/// Check every range and cross-field constraint.
pub fn validate(params: ModelParams, run: RunConfig) -> Result<ValidatedConfig, ConfigError> {
    finite("a", params.a)?;
    let beta = finite("beta", params.beta)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(out_of_range("beta", beta, "must lie in [0, 1]"));
    }
    if (beta == 0.0 || beta == 1.0) && !run.extended_range {
        return Err(ConfigError::IncompatibleOptions(format!(
            "beta = {beta} requires extended_range = true (the default range is 0 < beta < 1)"
        )));
    }
    if finite("delta1", params.delta1)? < 0.0 {
        return Err(out_of_range("delta1", params.delta1, "must be >= 0"));
    }
    if finite("delta2", params.delta2)? < 0.0 {
        return Err(out_of_range("delta2", params.delta2, "must be >= 0"));
    }
    if finite("epsilon", params.epsilon)? < 0.0 {
        return Err(out_of_range("epsilon", params.epsilon, "must be >= 0"));
    }

    match run.preset {
        Preset::Custom => {}
        Preset::OldroydB => {
            if params.a != 1.0 || params.delta2 != 0.0 || params.delta1 <= 0.0 {
                return Err(ConfigError::IncompatibleOptions(
                    "preset oldroyd_b requires a = 1, delta1 > 0, delta2 = 0".into(),
                ));
            }
        }
        Preset::Giesekus => {
            if params.a != 1.0 || params.delta1 != 0.0 || params.delta2 <= 0.0 {
                return Err(ConfigError::IncompatibleOptions(
                    "preset giesekus requires a = 1, delta1 = 0, delta2 > 0".into(),
                ));
            }
        }
        Preset::JohnsonSegalman => {
            if !(-1.0..=1.0).contains(&params.a) {
                return Err(ConfigError::IncompatibleOptions(
                    "preset johnson_segalman requires -1 <= a <= 1".into(),
                ));
            }
        }
    }

    let n = run.grid_size;
    if n < 8 || !n.is_multiple_of(2) {
        return Err(out_of_range("grid_size", n, "must be an even integer >= 8"));
    }
    if !(finite("t_end", run.t_end)? > 0.0) {
        return Err(out_of_range("t_end", run.t_end, "must be > 0"));
    }
    if finite("dt", run.dt)? < 0.0 {
        return Err(out_of_range(
            "dt",
            run.dt,
            "must be >= 0 (0 selects the CFL rule)",
        ));
    }
    let cfl = finite("cfl", run.cfl)?;
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(out_of_range("cfl", cfl, "must lie in (0, 1]"));
    }
    if run.galerkin_k > n / 2 {
        return Err(out_of_range(
            "galerkin_k",
            run.galerkin_k,
            "must be <= grid_size / 2",
        ));
    }
    if run.output_every == 0 {
        return Err(out_of_range("output_every", 0, "must be >= 1"));
    }
    Ok(ValidatedConfig { params, run })
}

/// Every key the configuration file understands, in canonical output order.
pub const KEYS: &[&str] = &[
    "preset",
    "a",
    "beta",
    "delta1",
    "delta2",
    "epsilon",
    "extended_range",
    "grid_size",
    "t_end",
    "dt",
    "cfl",
    "dealias",
    "galerkin_k",
    "output_every",
    "seed",
    "scheme",
    "initial",
    "abort_on_nonspd",
];

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| ConfigError::Parse {
        line,
        message: format!("invalid value `{raw}` for `{key}`: {e}"),
    })
}

/// Parse the `key = value` format and validate the result.
///
/// Keys that are absent take the defaults of the selected preset (for model
/// constants) or of [`RunConfig::default`].
pub fn parse_config(text: &str) -> Result<ValidatedConfig, ConfigError> {
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if entries.iter().any(|(_, k, _)| *k == key) {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        entries.push((line, key, value.trim()));
    }

    let preset = match entries.iter().find(|(_, k, _)| *k == "preset") {
        Some((line, key, v)) => parse_value::<Preset>(*line, key, v)?,
        None => Preset::Custom,
    };
    let mut params = preset.defaults();
    let mut run = RunConfig {
        preset,
        ..RunConfig::default()
    };

    for &(line, key, v) in &entries {
        match key {
            "preset" => {}
            "a" => params.a = parse_value(line, key, v)?,
            "beta" => params.beta = parse_value(line, key, v)?,
            "delta1" => params.delta1 = parse_value(line, key, v)?,
            "delta2" => params.delta2 = parse_value(line, key, v)?,
            "epsilon" => params.epsilon = parse_value(line, key, v)?,
            "extended_range" => run.extended_range = parse_value(line, key, v)?,
            "grid_size" => run.grid_size = parse_value(line, key, v)?,
            "t_end" => run.t_end = parse_value(line, key, v)?,
            "dt" => run.dt = parse_value(line, key, v)?,
            "cfl" => run.cfl = parse_value(line, key, v)?,
            "dealias" => run.dealias = parse_value(line, key, v)?,
            "galerkin_k" => run.galerkin_k = parse_value(line, key, v)?,
            "output_every" => run.output_every = parse_value(line, key, v)?,
            "seed" => run.seed = parse_value(line, key, v)?,
            "scheme" => run.scheme = parse_value(line, key, v)?,
            "initial" => run.initial = parse_value(line, key, v)?,
            "abort_on_nonspd" => run.abort_on_nonspd = parse_value(line, key, v)?,
            _ => unreachable!("key list checked above"),
        }
    }
    validate(params, run)
}

/// Canonical text form; `parse_config(&to_config_string(c)) == c` bit for bit.
pub fn to_config_string(cfg: &ValidatedConfig) -> String {
    let (p, r) = (&cfg.params, &cfg.run);
    let mut s = String::new();
    // Debug formatting of f64 is the shortest string that parses back exactly.
    let _ = writeln!(s, "preset = {}", r.preset.name());
    let _ = writeln!(s, "a = {:?}", p.a);
    let _ = writeln!(s, "beta = {:?}", p.beta);
    let _ = writeln!(s, "delta1 = {:?}", p.delta1);
    let _ = writeln!(s, "delta2 = {:?}", p.delta2);
    let _ = writeln!(s, "epsilon = {:?}", p.epsilon);
    let _ = writeln!(s, "extended_range = {}", r.extended_range);
    let _ = writeln!(s, "grid_size = {}", r.grid_size);
    let _ = writeln!(s, "t_end = {:?}", r.t_end);
    let _ = writeln!(s, "dt = {:?}", r.dt);
    let _ = writeln!(s, "cfl = {:?}", r.cfl);
    let _ = writeln!(s, "dealias = {}", r.dealias);
    let _ = writeln!(s, "galerkin_k = {}", r.galerkin_k);
    let _ = writeln!(s, "output_every = {}", r.output_every);
    let _ = writeln!(s, "seed = {}", r.seed);
    let _ = writeln!(s, "scheme = {}", r.scheme.name());
    let _ = writeln!(s, "initial = {}", r.initial.name());
    let _ = writeln!(s, "abort_on_nonspd = {}", r.abort_on_nonspd);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_run() -> RunConfig {
        RunConfig {
            grid_size: 64,
            dt: 1e-4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn accepts_reference_configuration() {
        let p = ModelParams {
            a: 1.0,
            beta: 0.3,
            delta1: 1.0,
            delta2: 0.0,
            epsilon: 0.0,
        };
        let v = validate(p, base_run()).unwrap();
        assert_eq!(*v.params(), p);
    }

    #[test]
    fn beta_zero_needs_extended_range() {
        let p = ModelParams {
            beta: 0.0,
            ..ModelParams::default()
        };
        assert!(matches!(
            validate(p, base_run()),
            Err(ConfigError::IncompatibleOptions(_))
        ));
        let run = RunConfig {
            extended_range: true,
            ..base_run()
        };
        assert!(validate(p, run).is_ok());
    }

    #[test]
    fn beta_above_one_is_out_of_range() {
        let p = ModelParams {
            beta: 1.2,
            ..ModelParams::default()
        };
        match validate(p, base_run()) {
            Err(ConfigError::OutOfRange { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn run_constraints_name_their_field() {
        let p = ModelParams::default();
        let cases: Vec<(RunConfig, &str)> = vec![
            (
                RunConfig {
                    grid_size: 63,
                    ..base_run()
                },
                "grid_size",
            ),
            (
                RunConfig {
                    grid_size: 6,
                    ..base_run()
                },
                "grid_size",
            ),
            (
                RunConfig {
                    galerkin_k: 33,
                    ..base_run()
                },
                "galerkin_k",
            ),
            (
                RunConfig {
                    cfl: 1.5,
                    ..base_run()
                },
                "cfl",
            ),
            (
                RunConfig {
                    dt: -1.0,
                    ..base_run()
                },
                "dt",
            ),
            (
                RunConfig {
                    t_end: 0.0,
                    ..base_run()
                },
                "t_end",
            ),
            (
                RunConfig {
                    output_every: 0,
                    ..base_run()
                },
                "output_every",
            ),
        ];
        for (run, name) in cases {
            match validate(p, run) {
                Err(ConfigError::OutOfRange { field, .. }) => assert_eq!(field, name),
                other => panic!("{name}: unexpected {other:?}"),
            }
        }
        let neg = ModelParams { delta2: -0.1, ..p };
        assert!(matches!(
            validate(neg, base_run()),
            Err(ConfigError::OutOfRange {
                field: "delta2",
                ..
            })
        ));
    }

    #[test]
    fn presets_fill_defaults_and_check_consistency() {
        let v = parse_config("preset = oldroyd_b\n").unwrap();
        assert_eq!(v.params().a, 1.0);
        assert_eq!(v.params().beta, 0.01);
        assert_eq!(v.params().delta2, 0.0);
        assert!(v.params().delta1 > 0.0);
        let v = parse_config("preset = giesekus\n").unwrap();
        assert_eq!((v.params().delta1, v.params().delta2), (0.0, 1.0));
        assert!(matches!(
            parse_config("preset = oldroyd_b\ndelta2 = 0.3\n"),
            Err(ConfigError::IncompatibleOptions(_))
        ));
        assert!(matches!(
            parse_config("preset = johnson_segalman\na = 1.5\n"),
            Err(ConfigError::IncompatibleOptions(_))
        ));
        assert!(matches!(
            parse_config("preset = oldroyd_b\nbeta = 0\n"),
            Err(ConfigError::IncompatibleOptions(_))
        ));
        assert!(parse_config("preset = oldroyd_b\nbeta = 0\nextended_range = true\n").is_ok());
    }

    #[test]
    fn parser_rejects_unknown_and_malformed_lines() {
        assert!(matches!(
            parse_config("# comment\nbta = 0.3\n"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("beta 0.3\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("beta = abc\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("beta = 0.3\nbeta = 0.4\n"),
            Err(ConfigError::Parse { line: 2, .. })
        ));
        let v = parse_config("  beta = 0.25   # trailing comment\n\n").unwrap();
        assert_eq!(v.params().beta, 0.25);
    }

    fn arb_config() -> impl Strategy<Value = ValidatedConfig> {
        (
            (
                -5.0f64..5.0,
                0.001f64..0.999,
                0.0f64..10.0,
                0.0f64..10.0,
                prop_oneof![Just(0.0), 0.0f64..0.5],
            ),
            (
                (4usize..64).prop_map(|h| 2 * h),
                1e-3f64..10.0,
                prop_oneof![Just(0.0), 1e-7f64..1e-2],
                1e-3f64..=1.0,
                any::<bool>(),
                0usize..4,
                1usize..1000,
                any::<u64>(),
                any::<bool>(),
            ),
        )
            .prop_map(
                |((a, beta, d1, d2, eps), (n, t_end, dt, cfl, dealias, k, every, seed, euler))| {
                    let params = ModelParams {
                        a,
                        beta,
                        delta1: d1,
                        delta2: d2,
                        epsilon: eps,
                    };
                    let run = RunConfig {
                        grid_size: n,
                        t_end,
                        dt,
                        cfl,
                        dealias,
                        galerkin_k: k,
                        output_every: every,
                        seed,
                        scheme: if euler {
                            Scheme::ImexEuler
                        } else {
                            Scheme::ImexMidpoint
                        },
                        ..RunConfig::default()
                    };
                    validate(params, run).unwrap()
                },
            )
    }

    proptest! {
        #[test]
        fn config_text_round_trips_bit_exactly(cfg in arb_config()) {
            let text = to_config_string(&cfg);
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(back.params().a.to_bits(), cfg.params().a.to_bits());
            prop_assert_eq!(back.params().beta.to_bits(), cfg.params().beta.to_bits());
            prop_assert_eq!(back.run().dt.to_bits(), cfg.run().dt.to_bits());
            prop_assert_eq!(back, cfg);
        }

        #[test]
        fn validate_is_idempotent(cfg in arb_config()) {
            let (p, r) = cfg.clone().into_parts();
            let again = validate(p, r).unwrap();
            prop_assert_eq!(again, cfg);
        }
    }
}
