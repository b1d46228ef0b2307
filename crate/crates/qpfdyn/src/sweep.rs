//! Parameter grids, text configs and the batch runner.
//!
//! Configs are flat `key = value` files. Keys before the first `[section]`
//! apply to every subcommand; a section named after a subcommand overrides
//! them for that subcommand only.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::CirclePoint;
use crate::conditions::{choose_regions_arnold, choose_regions_pinched};
use crate::dynamics::{
    attractor_sample, lyapunov_pointwise, orbit_density, rotation_number_lift, tongue_boundary,
    TongueConfig,
};
use crate::maps::{
    ArnoldParams, CocycleParams, Family, Forcing, MapError, PinchedParams, QpfSystem,
};
use crate::GOLDEN;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    Map(#[from] MapError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, SweepError>;

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SweepError::Config(msg.into()))
}

// ---------------------------------------------------------------------------
// key = value configs

/// Documentation for one config key.
#[derive(Clone, Copy, Debug)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

/// Aligned `key  [default]  help` lines.
pub fn key_table(docs: &[KeyDoc]) -> String {
    let w = docs.iter().map(|d| d.key.len()).max().unwrap_or(0);
    let mut out = String::new();
    for d in docs {
        let def = if d.default.is_empty() {
            String::new()
        } else {
            format!(" [default: {}]", d.default)
        };
        out.push_str(&format!("  {:w$}  {}{}\n", d.key, d.help, def, w = w));
    }
    out
}

pub const SYSTEM_KEYS: &[KeyDoc] = &[
    KeyDoc {
        key: "family",
        default: "arnold",
        help: "map family: arnold, pinched or cocycle",
    },
    KeyDoc {
        key: "omega",
        default: "golden mean",
        help: "forcing frequency",
    },
    KeyDoc {
        key: "tau",
        default: "0",
        help: "arnold: rotation parameter",
    },
    KeyDoc {
        key: "a",
        default: "0",
        help: "arnold: nonlinearity, at most 1/(2π)",
    },
    KeyDoc {
        key: "b",
        default: "0",
        help: "forcing amplitude (arnold, cos_power, sin_power)",
    },
    KeyDoc {
        key: "d",
        default: "1",
        help: "forcing exponent (odd integer for cos powers)",
    },
    KeyDoc {
        key: "alpha",
        default: "",
        help: "pinched/cocycle: expansion parameter",
    },
    KeyDoc {
        key: "p",
        default: "2",
        help: "pinched: exponent of a_p",
    },
    KeyDoc {
        key: "beta",
        default: "1",
        help: "cosine forcing amplitude",
    },
    KeyDoc {
        key: "forcing",
        default: "cosine",
        help: "pinched/cocycle forcing: cosine, cos_power or sin_power",
    },
];

/// Keys read by one subcommand, looked up with section overrides applied.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Fails on the first key not listed in any of `docs`.
    pub fn check_known(&self, docs: &[&[KeyDoc]]) -> Result<()> {
        for k in self.keys() {
            if !docs.iter().any(|d| d.iter().any(|kd| kd.key == k)) {
                return cfg_err(format!("unknown key `{k}`"));
            }
        }
        Ok(())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => parse_f64(s)
                .map(Some)
                .map_err(|e| SweepError::Config(format!("{key}: {e}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    /// Non-negative integer, accepting forms like `1e6`.
    pub fn count(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => parse_count(s)
                .map(Some)
                .map_err(|e| SweepError::Config(format!("{key}: {e}"))),
        }
    }

    pub fn count_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.count(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(s) => cfg_err(format!("{key}: expected a boolean, got `{s}`")),
        }
    }

    /// Comma or whitespace separated numbers.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => split_list(s)
                .map(parse_f64)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| SweepError::Config(format!("{key}: {e}"))),
        }
    }

    pub fn count_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => split_list(s)
                .map(parse_count)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| SweepError::Config(format!("{key}: {e}"))),
        }
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

pub fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

pub fn parse_count(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    let v = parse_f64(t)?;
    if v < 0.0 || v.fract() != 0.0 || v > 9.0e15 {
        return Err(format!("`{s}` is not a non-negative integer"));
    }
    Ok(v as u64)
}

/// A parsed config file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    general: KeyValues,
    sections: BTreeMap<String, KeyValues>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let opt = ini::ParseOption {
            enabled_quote: false,
            enabled_escape: false,
            ..Default::default()
        };
        let parsed = ini::Ini::load_from_str_opt(text, opt)
            .map_err(|e| SweepError::Config(e.to_string()))?;
        let mut cfg = Config::default();
        for (name, props) in parsed.iter() {
            let target = match name {
                None => &mut cfg.general,
                Some(n) => cfg.sections.entry(n.to_string()).or_default(),
            };
            for (k, v) in props.iter() {
                target.set(k, v.trim());
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| SweepError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Keys before the first section.
    pub fn general(&self) -> &KeyValues {
        &self.general
    }

    pub fn sections(&self) -> &BTreeMap<String, KeyValues> {
        &self.sections
    }

    /// Global keys overlaid with the named section.
    pub fn section(&self, name: &str) -> KeyValues {
        let mut kv = self.general.clone();
        if let Some(s) = self.sections.get(name) {
            for (k, v) in &s.map {
                kv.set(k, v.clone());
            }
        }
        kv
    }
}

// ---------------------------------------------------------------------------
// family from keys

const FAMILY_PARAMS: &[&str] = &["tau", "a", "b", "d", "alpha", "p", "beta"];

/// Map family and parameters in the form configs and sweep axes address them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: String,
    pub forcing: String,
    pub omega: f64,
    pub params: BTreeMap<String, f64>,
}

impl FamilySpec {
    pub fn from_keys(kv: &KeyValues) -> Result<FamilySpec> {
        let family = kv.str_or("family", "arnold").to_string();
        if !matches!(family.as_str(), "arnold" | "pinched" | "cocycle") {
            return cfg_err(format!("unknown family `{family}`"));
        }
        let forcing = kv.str_or("forcing", "cosine").to_string();
        if !matches!(forcing.as_str(), "cosine" | "cos_power" | "sin_power") {
            return cfg_err(format!("unknown forcing `{forcing}`"));
        }
        let mut params = BTreeMap::new();
        for &k in FAMILY_PARAMS {
            if let Some(v) = kv.f64(k)? {
                params.insert(k.to_string(), v);
            }
        }
        let spec = FamilySpec {
            family,
            forcing,
            omega: kv.f64_or("omega", GOLDEN)?,
            params,
        };
        spec.family()?;
        Ok(spec)
    }

    /// Whether `name` is a parameter this spec can vary.
    pub fn is_param(name: &str) -> bool {
        name == "omega" || FAMILY_PARAMS.contains(&name)
    }

    pub fn set(&mut self, name: &str, v: f64) {
        if name == "omega" {
            self.omega = v;
        } else {
            self.params.insert(name.to_string(), v);
        }
    }

    fn param(&self, k: &str, default: f64) -> f64 {
        self.params.get(k).copied().unwrap_or(default)
    }

    fn int_param(&self, k: &str, default: u32) -> Result<u32> {
        let v = self.param(k, default as f64);
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return cfg_err(format!("{k} = {v} must be a non-negative integer"));
        }
        Ok(v as u32)
    }

    fn alpha(&self) -> Result<f64> {
        match self.params.get("alpha") {
            Some(&a) => Ok(a),
            None => cfg_err(format!("family {} needs alpha", self.family)),
        }
    }

    fn forcing_term(&self) -> Result<Forcing> {
        Ok(match self.forcing.as_str() {
            "cosine" => Forcing::Cosine {
                beta: self.param("beta", 1.0),
            },
            "cos_power" => Forcing::CosPower {
                b: self.param("b", 0.0),
                d: self.int_param("d", 1)?,
            },
            _ => Forcing::SinPower {
                b: self.param("b", 0.0),
                d: self.param("d", 1.0),
            },
        })
    }

    pub fn family(&self) -> Result<Family> {
        Ok(match self.family.as_str() {
            "arnold" => Family::Arnold(ArnoldParams::new(
                self.param("tau", 0.0),
                self.param("a", 0.0),
                self.param("b", 0.0),
                self.int_param("d", 1)?,
            )),
            "pinched" => Family::Pinched(PinchedParams {
                alpha: self.alpha()?,
                p: self.int_param("p", 2)?,
                g: self.forcing_term()?,
            }),
            _ => Family::Cocycle(CocycleParams::new(self.alpha()?, self.forcing_term()?)),
        })
    }

    pub fn system(&self) -> Result<QpfSystem> {
        Ok(QpfSystem::new(
            CirclePoint::new(self.omega),
            self.family()?,
        )?)
    }
}

// ---------------------------------------------------------------------------
// sweep specification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub scale: Scale,
}

impl Axis {
    /// `name lo hi count [linear|log]`.
    pub fn parse(s: &str) -> Result<Axis> {
        let t: Vec<&str> = s.split_whitespace().collect();
        if !(4..=5).contains(&t.len()) {
            return cfg_err(format!(
                "axis `{s}`: expected `name lo hi count [linear|log]`"
            ));
        }
        let num =
            |x: &str| parse_f64(x).map_err(|e| SweepError::Config(format!("axis `{s}`: {e}")));
        let count =
            parse_count(t[3]).map_err(|e| SweepError::Config(format!("axis `{s}`: {e}")))? as usize;
        let scale = match t.get(4).copied().unwrap_or("linear") {
            "linear" => Scale::Linear,
            "log" => Scale::Log,
            other => return cfg_err(format!("axis `{s}`: unknown scale `{other}`")),
        };
        Ok(Axis {
            name: t[0].to_string(),
            lo: num(t[1])?,
            hi: num(t[2])?,
            count,
            scale,
        })
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.count <= 1 {
            return self.lo;
        }
        let f = i as f64 / (self.count - 1) as f64;
        match self.scale {
            Scale::Linear => self.lo + (self.hi - self.lo) * f,
            Scale::Log => self.lo * (self.hi / self.lo).powf(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Rho,
    LambdaFwd,
    LambdaBwd,
    TongueWidth,
    Density,
    ConditionsVerdict,
}

impl Observable {
    pub const ALL: [Observable; 6] = [
        Observable::Rho,
        Observable::LambdaFwd,
        Observable::LambdaBwd,
        Observable::TongueWidth,
        Observable::Density,
        Observable::ConditionsVerdict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::Rho => "rho",
            Observable::LambdaFwd => "lambda_fwd",
            Observable::LambdaBwd => "lambda_bwd",
            Observable::TongueWidth => "tongue_width",
            Observable::Density => "density",
            Observable::ConditionsVerdict => "conditions_verdict",
        }
    }

    pub fn parse(s: &str) -> Result<Observable> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .map_or_else(|| cfg_err(format!("unknown observable `{s}`")), Ok)
    }
}

/// Iteration budgets and tolerances for the per-cell observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub n_rho: u64,
    pub tol_rho: f64,
    pub n_lyap: u64,
    pub tol_lyap: f64,
    pub tongue_rho: f64,
    pub tongue_n: u64,
    pub tongue_tol_rho: f64,
    pub tongue_tol_tau: f64,
    pub density_transient: u64,
    pub density_n: u64,
    pub density_bins: usize,
    pub conditions_eps: f64,
    pub conditions_grid_theta: usize,
    pub conditions_grid_x: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            n_rho: 100_000,
            tol_rho: 1e-4,
            n_lyap: 100_000,
            tol_lyap: 1e-3,
            tongue_rho: 0.0,
            tongue_n: 100_000,
            tongue_tol_rho: 1e-4,
            tongue_tol_tau: 1e-6,
            density_transient: 10_000,
            density_n: 100_000,
            density_bins: 64,
            conditions_eps: 0.1,
            conditions_grid_theta: 1000,
            conditions_grid_x: 200,
        }
    }
}

pub const SWEEP_KEYS: &[KeyDoc] = &[
    KeyDoc {
        key: "axis1",
        default: "",
        help: "first axis: `name lo hi count [linear|log]`, slowest varying",
    },
    KeyDoc {
        key: "axis2",
        default: "",
        help: "optional second axis",
    },
    KeyDoc {
        key: "axis3",
        default: "",
        help: "optional third axis, fastest varying",
    },
    KeyDoc {
        key: "observables",
        default: "rho",
        help:
            "comma list of rho, lambda_fwd, lambda_bwd, tongue_width, density, conditions_verdict",
    },
    KeyDoc {
        key: "n_rho",
        default: "1e5",
        help: "rotation number iterations",
    },
    KeyDoc {
        key: "tol_rho",
        default: "1e-4",
        help: "flag rho when the half-window estimate differs by more",
    },
    KeyDoc {
        key: "n_lyap",
        default: "1e5",
        help: "Lyapunov exponent iterations per direction",
    },
    KeyDoc {
        key: "tol_lyap",
        default: "1e-3",
        help: "Lyapunov half-window convergence tolerance",
    },
    KeyDoc {
        key: "tongue_rho",
        default: "0",
        help: "rotation number of the tongue",
    },
    KeyDoc {
        key: "tongue_n",
        default: "1e5",
        help: "iterations per rotation number in tongue bisection",
    },
    KeyDoc {
        key: "tongue_tol_rho",
        default: "1e-4",
        help: "plateau tolerance of tongue bisection",
    },
    KeyDoc {
        key: "tongue_tol_tau",
        default: "1e-6",
        help: "tau resolution of tongue bisection",
    },
    KeyDoc {
        key: "density_transient",
        default: "1e4",
        help: "discarded iterations before density sampling",
    },
    KeyDoc {
        key: "density_n",
        default: "1e5",
        help: "orbit points binned for density",
    },
    KeyDoc {
        key: "density_bins",
        default: "64",
        help: "bins per side of the density grid",
    },
    KeyDoc {
        key: "conditions_eps",
        default: "0.1",
        help: "pinched region width for conditions_verdict",
    },
    KeyDoc {
        key: "conditions_grid_theta",
        default: "1000",
        help: "theta grid for conditions_verdict",
    },
    KeyDoc {
        key: "conditions_grid_x",
        default: "200",
        help: "x grid for conditions_verdict",
    },
    KeyDoc {
        key: "seed",
        default: "0",
        help: "seed for per-cell starting points",
    },
    KeyDoc {
        key: "theta0",
        default: "random",
        help: "fixed starting theta for every cell",
    },
    KeyDoc {
        key: "x0",
        default: "random",
        help: "fixed starting x for every cell",
    },
    KeyDoc {
        key: "output",
        default: "",
        help: "CSV output path",
    },
    KeyDoc {
        key: "checkpoint",
        default: "<output>.checkpoint.json",
        help: "checkpoint path",
    },
    KeyDoc {
        key: "chunk",
        default: "256",
        help: "cells evaluated between checkpoints",
    },
    KeyDoc {
        key: "timing",
        default: "true",
        help: "record wall_ms; set false for byte-reproducible output",
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub system: FamilySpec,
    pub axes: Vec<Axis>,
    pub observables: Vec<Observable>,
    pub budgets: Budgets,
    pub seed: u64,
    pub theta0: Option<f64>,
    pub x0: Option<f64>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub chunk: usize,
    pub timing: bool,
}

impl SweepSpec {
    pub fn new(system: FamilySpec, axes: Vec<Axis>, observables: Vec<Observable>) -> SweepSpec {
        SweepSpec {
            system,
            axes,
            observables,
            budgets: Budgets::default(),
            seed: 0,
            theta0: None,
            x0: None,
            output: None,
            checkpoint: None,
            chunk: 256,
            timing: true,
        }
    }

    pub fn from_keys(kv: &KeyValues) -> Result<SweepSpec> {
        kv.check_known(&[SYSTEM_KEYS, SWEEP_KEYS])?;
        let system = FamilySpec::from_keys(kv)?;
        let mut axes = Vec::new();
        for k in ["axis1", "axis2", "axis3"] {
            if let Some(s) = kv.get(k) {
                if axes.len() + 1 != k[4..].parse::<usize>().unwrap() {
                    return cfg_err(format!("{k} given without the preceding axes"));
                }
                axes.push(Axis::parse(s)?);
            }
        }
        let observables = split_list(kv.str_or("observables", "rho"))
            .map(Observable::parse)
            .collect::<Result<Vec<_>>>()?;
        let d = Budgets::default();
        let budgets = Budgets {
            n_rho: kv.count_or("n_rho", d.n_rho)?,
            tol_rho: kv.f64_or("tol_rho", d.tol_rho)?,
            n_lyap: kv.count_or("n_lyap", d.n_lyap)?,
            tol_lyap: kv.f64_or("tol_lyap", d.tol_lyap)?,
            tongue_rho: kv.f64_or("tongue_rho", d.tongue_rho)?,
            tongue_n: kv.count_or("tongue_n", d.tongue_n)?,
            tongue_tol_rho: kv.f64_or("tongue_tol_rho", d.tongue_tol_rho)?,
            tongue_tol_tau: kv.f64_or("tongue_tol_tau", d.tongue_tol_tau)?,
            density_transient: kv.count_or("density_transient", d.density_transient)?,
            density_n: kv.count_or("density_n", d.density_n)?,
            density_bins: kv.count_or("density_bins", d.density_bins as u64)? as usize,
            conditions_eps: kv.f64_or("conditions_eps", d.conditions_eps)?,
            conditions_grid_theta: kv
                .count_or("conditions_grid_theta", d.conditions_grid_theta as u64)?
                as usize,
            conditions_grid_x: kv.count_or("conditions_grid_x", d.conditions_grid_x as u64)?
                as usize,
        };
        let spec = SweepSpec {
            system,
            axes,
            observables,
            budgets,
            seed: kv.count_or("seed", 0)?,
            theta0: kv.f64("theta0")?,
            x0: kv.f64("x0")?,
            output: kv.get("output").map(PathBuf::from),
            checkpoint: kv.get("checkpoint").map(PathBuf::from),
            chunk: kv.count_or("chunk", 256)? as usize,
            timing: kv.bool_or("timing", true)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 3 {
            return cfg_err(format!("need 1 to 3 axes, got {}", self.axes.len()));
        }
        for a in &self.axes {
            if !FamilySpec::is_param(&a.name) {
                return cfg_err(format!("axis `{}` is not a parameter", a.name));
            }
            if a.count == 0 {
                return cfg_err(format!("axis `{}` has count 0", a.name));
            }
            if a.scale == Scale::Log && !(a.lo > 0.0 && a.hi > 0.0) {
                return cfg_err(format!("log axis `{}` needs positive bounds", a.name));
            }
        }
        if self.observables.is_empty() {
            return cfg_err("observable set is empty");
        }
        let b = &self.budgets;
        let counts = [
            b.n_rho,
            b.n_lyap,
            b.tongue_n,
            b.density_n,
            b.density_bins as u64,
        ];
        let tols = [
            b.tol_rho,
            b.tol_lyap,
            b.tongue_tol_rho,
            b.tongue_tol_tau,
            b.conditions_eps,
        ];
        if counts.contains(&0) || tols.iter().any(|&t| !(t > 0.0)) {
            return cfg_err("budgets and tolerances must be positive");
        }
        if b.conditions_grid_theta == 0 || b.conditions_grid_x == 0 || self.chunk == 0 {
            return cfg_err("grid sizes and chunk must be positive");
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    /// Coordinates of cell `index`; the last axis varies fastest.
    pub fn coords(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut out = vec![0.0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            out[k] = a.value(rem % a.count);
            rem /= a.count;
        }
        out
    }

    fn start_point(&self, index: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let th = self.theta0.unwrap_or_else(|| rng.gen());
        let x = self.x0.unwrap_or_else(|| rng.gen());
        (th, x)
    }

    fn wants(&self, o: Observable) -> bool {
        self.observables.contains(&o)
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.checkpoint.clone().or_else(|| {
            self.output.as_ref().map(|o| {
                let mut s = o.clone().into_os_string();
                s.push(".checkpoint.json");
                PathBuf::from(s)
            })
        })
    }
}

// ---------------------------------------------------------------------------
// per-cell evaluation

pub const SWEEP_HEADER: &str =
    "axis1,axis2,axis3,rho,lambda_fwd,lambda_bwd,tongue_width,density,flags,wall_ms";

/// Scientific notation with 17 significant digits; parses back to the same double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub index: usize,
    pub coords: Vec<f64>,
    pub rho: Option<f64>,
    pub lambda_fwd: Option<f64>,
    pub lambda_bwd: Option<f64>,
    pub tongue_width: Option<f64>,
    pub density: Option<f64>,
    pub conditions_pass: Option<bool>,
    pub flags: Vec<String>,
    pub wall_ms: Option<f64>,
}

impl SweepResult {
    pub fn csv_row(&self) -> String {
        let mut f: Vec<String> = (0..3)
            .map(|k| fmt_opt(self.coords.get(k).copied()))
            .collect();
        for v in [
            self.rho,
            self.lambda_fwd,
            self.lambda_bwd,
            self.tongue_width,
            self.density,
        ] {
            f.push(fmt_opt(v));
        }
        f.push(self.flags.join(";"));
        f.push(fmt_opt(self.wall_ms));
        f.join(",")
    }
}

/// Evaluates one grid cell. Failures become flags.
pub fn evaluate_cell(spec: &SweepSpec, index: usize) -> SweepResult {
    let t0 = Instant::now();
    let coords = spec.coords(index);
    let mut fam = spec.system.clone();
    for (a, &v) in spec.axes.iter().zip(&coords) {
        fam.set(&a.name, v);
    }
    let mut r = SweepResult {
        index,
        coords,
        rho: None,
        lambda_fwd: None,
        lambda_bwd: None,
        tongue_width: None,
        density: None,
        conditions_pass: None,
        flags: Vec::new(),
        wall_ms: None,
    };
    let b = &spec.budgets;
    match fam.system() {
        Err(_) => r.flags.push("invalid_params".into()),
        Ok(sys) => {
            let (th, x) = spec.start_point(index);
            if spec.wants(Observable::Rho) {
                let (rho, err) = rotation_number_lift(&sys, th, x, b.n_rho);
                r.rho = Some(rho);
                if !(err <= b.tol_rho) {
                    r.flags.push("rho_unconverged".into());
                }
            }
            if spec.wants(Observable::LambdaFwd) || spec.wants(Observable::LambdaBwd) {
                match lyapunov_pointwise(&sys, th, x, b.n_lyap, b.tol_lyap) {
                    Ok(l) => {
                        if spec.wants(Observable::LambdaFwd) {
                            r.lambda_fwd = Some(l.forward);
                        }
                        if spec.wants(Observable::LambdaBwd) {
                            r.lambda_bwd = Some(l.backward);
                        }
                        if !l.converged {
                            r.flags.push("lyap_unconverged".into());
                        }
                    }
                    Err(_) => r.flags.push("lyap_failed".into()),
                }
            }
            if spec.wants(Observable::TongueWidth) {
                tongue_cell(&sys, b, &mut r);
            }
            if spec.wants(Observable::Density) {
                let pts = attractor_sample(&sys, th, x, b.density_transient, b.density_n);
                r.density = Some(orbit_density(&pts, b.density_bins));
            }
            if spec.wants(Observable::ConditionsVerdict) {
                conditions_cell(&sys, b, &mut r);
            }
        }
    }
    if spec.timing {
        r.wall_ms = Some(t0.elapsed().as_secs_f64() * 1e3);
    }
    r
}

fn tongue_cell(sys: &QpfSystem, b: &Budgets, r: &mut SweepResult) {
    let Family::Arnold(p) = *sys.family() else {
        r.flags.push("tongue_not_arnold".into());
        return;
    };
    let cfg = TongueConfig::new(b.tongue_rho, b.tongue_tol_rho, b.tongue_tol_tau, b.tongue_n);
    match tongue_boundary(sys.w(), p, &cfg) {
        Ok(t) => {
            r.tongue_width = Some(t.width);
            if !t.resolved {
                r.flags.push("tongue_unresolved".into());
            }
        }
        Err(_) => r.flags.push("tongue_failed".into()),
    }
}

fn conditions_cell(sys: &QpfSystem, b: &Budgets, r: &mut SweepResult) {
    let choice = match *sys.family() {
        Family::Arnold(p) => choose_regions_arnold(&p, None),
        Family::Pinched(p) => choose_regions_pinched(&p, b.conditions_eps),
        Family::Cocycle(_) => {
            r.flags.push("conditions_not_applicable".into());
            return;
        }
    };
    match choice.and_then(|c| c.report(sys, b.conditions_grid_theta, b.conditions_grid_x)) {
        Ok(rep) => {
            let pass = rep.all_pass();
            r.conditions_pass = Some(pass);
            r.flags.push(
                if pass {
                    "conditions_pass"
                } else {
                    "conditions_fail"
                }
                .into(),
            );
        }
        Err(_) => r.flags.push("conditions_failed".into()),
    }
}

// ---------------------------------------------------------------------------
// runner

/// Worker count: `QPFDYN_THREADS` if set, else the hardware thread count.
pub fn thread_count() -> Result<usize> {
    match std::env::var("QPFDYN_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => cfg_err(format!("QPFDYN_THREADS = `{s}` is not a positive integer")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| SweepError::Config(e.to_string()))
}

/// Evaluates cells `range` in parallel and hands results to `sink` in cell
/// order, one chunk at a time.
pub fn run_range<F>(
    spec: &SweepSpec,
    range: std::ops::Range<usize>,
    pool: &rayon::ThreadPool,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(&[SweepResult]) -> Result<()>,
{
    let mut start = range.start;
    while start < range.end {
        let end = (start + spec.chunk).min(range.end);
        let chunk: Vec<SweepResult> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| evaluate_cell(spec, i))
                .collect()
        });
        sink(&chunk)?;
        start = end;
    }
    Ok(())
}

/// All cells of the sweep in order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepResult>> {
    spec.validate()?;
    let pool = thread_pool()?;
    let mut out = Vec::with_capacity(spec.cells());
    run_range(spec, 0..spec.cells(), &pool, |c| {
        out.extend_from_slice(c);
        Ok(())
    })?;
    Ok(out)
}

pub fn sweep_csv(results: &[SweepResult]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    spec: SweepSpec,
    cells_done: usize,
    csv_bytes: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop at the first chunk boundary at or after this many cells.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells_done: usize,
    pub cells: usize,
    pub resumed_from: usize,
}

impl SweepOutcome {
    pub fn complete(&self) -> bool {
        self.cells_done == self.cells
    }
}

fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, serde_json::to_vec_pretty(ck)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Streams the sweep to `spec.output`, checkpointing after every chunk and
/// resuming from an existing checkpoint of the same spec. The checkpoint is
/// removed once the sweep completes.
pub fn run_sweep_to_csv(spec: &SweepSpec, opts: RunOptions) -> Result<SweepOutcome> {
    spec.validate()?;
    let Some(out_path) = spec.output.clone() else {
        return cfg_err("sweep needs an output path");
    };
    let ck_path = spec.checkpoint_path().expect("output is set");
    let cells = spec.cells();
    let (mut file, mut done) = if ck_path.exists() {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(&ck_path)?)?;
        if ck.spec != *spec {
            return Err(SweepError::Checkpoint(format!(
                "{} belongs to a different sweep spec",
                ck_path.display()
            )));
        }
        let mut f = OpenOptions::new().read(true).write(true).open(&out_path)?;
        f.set_len(ck.csv_bytes)?;
        f.seek(SeekFrom::End(0))?;
        (f, ck.cells_done)
    } else {
        let mut f = File::create(&out_path)?;
        writeln!(f, "{SWEEP_HEADER}")?;
        (f, 0)
    };
    let resumed_from = done;
    let stop = opts.stop_after.unwrap_or(cells).min(cells);
    let pool = thread_pool()?;
    let mut start = done;
    while start < stop {
        let end = (start + spec.chunk).min(cells);
        run_range(spec, start..end, &pool, |chunk| {
            let mut buf = String::new();
            for r in chunk {
                buf.push_str(&r.csv_row());
                buf.push('\n');
            }
            file.write_all(buf.as_bytes())?;
            Ok(())
        })?;
        file.flush()?;
        done = end;
        let csv_bytes = file.stream_position()?;
        write_checkpoint(
            &ck_path,
            &Checkpoint {
                spec: spec.clone(),
                cells_done: done,
                csv_bytes,
            },
        )?;
        start = end;
    }
    if done == cells && ck_path.exists() {
        fs::remove_file(&ck_path)?;
    }
    Ok(SweepOutcome {
        cells_done: done,
        cells,
        resumed_from,
    })
}
