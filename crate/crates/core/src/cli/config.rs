//! Typed experiment configs, named presets and the JSON resolution step.

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::channels::Mechanism;
use crate::equivalence_lab::{FiniteMeasure, LocalRule};
use crate::error::{Error, Result};
use crate::models::PanelConfig;
use crate::protocols::{Aggregator, Constraint, Model, ProtocolSpec, Randomness};
use crate::risk_lab::{GridPoint, McSettings, NoneqSettings, SweepParam, SweepSettings};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Calibrate,
    Risk,
    Sweep,
    Equiv,
    Noneq,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Risk => "risk",
            Command::Sweep => "sweep",
            Command::Equiv => "equiv",
            Command::Noneq => "noneq",
        }
    }
}

fn alpha() -> f64 {
    0.05
}

fn ten_thousand() -> usize {
    10_000
}

fn default_quantiles() -> Vec<f64> {
    vec![0.5, 0.9, 0.95, 0.99]
}

fn three() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub protocols: Vec<ProtocolSpec>,
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default = "ten_thousand")]
    pub calibration_reps: usize,
    /// Fresh null replicates for the type I check.
    #[serde(default = "ten_thousand")]
    pub evaluation_reps: usize,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    match OneOrMany::deserialize(d) {
        Ok(OneOrMany::One(x)) => Ok(vec![x]),
        Ok(OneOrMany::Many(v)) => Ok(v),
        Err(_) => Err(serde::de::Error::custom("rho must be a number or an array of numbers")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub protocol: ProtocolSpec,
    /// L1 separations of the panel.
    #[serde(deserialize_with = "one_or_many")]
    pub rho: Vec<f64>,
    #[serde(default = "three")]
    pub r: f64,
    #[serde(default)]
    pub panel: PanelConfig,
    #[serde(default)]
    pub mc: McSettings,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    #[default]
    Exponent,
    Elbow,
    Phase,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub c: f64,
    pub exponent: f64,
}

/// Targets checked against the fitted slopes; every field is optional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expect {
    /// Exponent of the power-law fit, or the slope below b = d for an elbow.
    pub exponent: Option<f64>,
    pub tolerance: f64,
    /// Bound on |slope| over b ≥ d.
    pub plateau: Option<f64>,
    pub low_slope: Option<f64>,
    pub high_slope: Option<f64>,
    /// Allowed multiplicative error of the ε crossover against its prediction.
    pub boundary_factor: Option<f64>,
}

impl Default for Expect {
    fn default() -> Self {
        Expect {
            exponent: None,
            tolerance: 0.15,
            plateau: None,
            low_slope: None,
            high_slope: None,
            boundary_factor: None,
        }
    }
}

fn shared() -> Randomness {
    Randomness::Shared
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Protocol templates; grid points override m, n, d and b or ε, δ.
    #[serde(default)]
    pub family: Vec<ProtocolSpec>,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub base: GridPoint,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub settings: SweepSettings,
    /// Which ε boundary the phase analysis compares with.
    #[serde(default = "shared")]
    pub boundary: Randomness,
    /// Replace simulation by exact ρ*² = c·x^exponent.
    #[serde(default)]
    pub synthetic: Option<Synthetic>,
    #[serde(default)]
    pub expect: Expect,
}

fn lemma_cases() -> usize {
    200
}

fn six() -> usize {
    6
}

fn eight() -> usize {
    8
}

fn fifty() -> usize {
    50
}

fn hundred_thousand() -> usize {
    100_000
}

fn default_q1() -> Vec<f64> {
    vec![0.5, 1.0 / 3.0, 0.4, 0.6, 2.0 / 3.0]
}

fn two_u64() -> u64 {
    2
}

fn two() -> usize {
    2
}

fn thirty_two() -> usize {
    32
}

fn default_rules() -> Vec<LocalRule> {
    vec![LocalRule::Sign, LocalRule::SignRr(1.0), LocalRule::Vote]
}

fn twenty() -> usize {
    20
}

fn carter_ns() -> Vec<u64> {
    vec![16, 64, 256]
}

fn carter_q1() -> Vec<f64> {
    (0..5).map(|i| 1.0 / 3.0 + i as f64 / 12.0).collect()
}

fn carter_bins() -> usize {
    96
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EquivConfig {
    LemmaSuite {
        #[serde(default = "lemma_cases")]
        cases: usize,
        #[serde(default = "six")]
        max_atoms: usize,
    },
    Coupling {
        #[serde(default = "fifty")]
        pairs: usize,
        #[serde(default = "hundred_thousand")]
        samples: usize,
        #[serde(default = "eight")]
        max_atoms: usize,
    },
    /// Two-cell transfer from the Gaussian to the multinomial experiment.
    Transfer {
        #[serde(default = "two_u64")]
        n: u64,
        /// First entry is the null cell probability.
        #[serde(default = "default_q1")]
        q1: Vec<f64>,
        #[serde(default = "thirty_two")]
        bins: usize,
        #[serde(default = "two")]
        m: usize,
        #[serde(default = "default_rules")]
        rules: Vec<LocalRule>,
    },
    DpCertificates {
        #[serde(default = "twenty")]
        random_pairs: usize,
    },
    CarterDirection {
        #[serde(default = "carter_ns")]
        ns: Vec<u64>,
        #[serde(default = "carter_q1")]
        q1: Vec<f64>,
        #[serde(default = "carter_bins")]
        bins: usize,
    },
    /// Exact comparison of two user-supplied measures.
    Tv {
        p: FiniteMeasure,
        q: FiniteMeasure,
        #[serde(default = "hundred_thousand")]
        samples: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoneqConfig {
    pub d: usize,
    pub n: u64,
    pub m: usize,
    #[serde(default)]
    pub settings: NoneqSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Config {
    Calibrate(CalibrateConfig),
    Risk(RiskConfig),
    Sweep(SweepConfig),
    Equiv(EquivConfig),
    Noneq(NoneqConfig),
}

impl Config {
    pub fn to_value(&self) -> Result<Value> {
        Ok(match self {
            Config::Calibrate(c) => serde_json::to_value(c)?,
            Config::Risk(c) => serde_json::to_value(c)?,
            Config::Sweep(c) => serde_json::to_value(c)?,
            Config::Equiv(c) => serde_json::to_value(c)?,
            Config::Noneq(c) => serde_json::to_value(c)?,
        })
    }
}

/// A config after preset merging, with the run-level fields split off.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub command: Command,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub preset: Option<String>,
    pub config: Config,
    /// Canonical JSON of the typed config, defaults filled in.
    pub echo: Value,
}

impl Resolved {
    /// SHA-256 over the canonical JSON of command, seed and config. The
    /// parallelism degree and output path are excluded by construction.
    pub fn hash(&self) -> String {
        let canon = json!({
            "command": self.command.name(),
            "seed": self.seed,
            "config": self.echo,
        });
        let digest = Sha256::digest(canon.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn config_err(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

/// Objects merge key by key; anything else in `over` replaces `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn take_u64(map: &mut Map<String, Value>, key: &str) -> Result<Option<u64>> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("`{key}` must be a nonnegative integer, got {v}"))),
    }
}

/// Split off seed/jobs/preset, merge the preset underneath, and deserialize
/// the remainder strictly. `preset` and `seed` arguments take precedence over
/// the file.
pub fn resolve(command: Command, raw: Option<Value>, preset: Option<&str>, seed: Option<u64>) -> Result<Resolved> {
    let mut map = match raw {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(other) => return Err(Error::Config(format!("config must be a JSON object, got {other}"))),
    };
    let file_seed = take_u64(&mut map, "seed")?;
    let jobs = take_u64(&mut map, "jobs")?.map(|j| j as usize);
    let file_preset = match map.remove("preset") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(v) => return Err(Error::Config(format!("`preset` must be a string, got {v}"))),
    };
    let preset = preset.map(str::to_owned).or(file_preset);
    let mut merged = match &preset {
        Some(name) => preset_config(command, name)?,
        None => Value::Object(Map::new()),
    };
    merge(&mut merged, Value::Object(map));
    let config = match command {
        Command::Calibrate => Config::Calibrate(serde_json::from_value(merged).map_err(config_err)?),
        Command::Risk => Config::Risk(serde_json::from_value(merged).map_err(config_err)?),
        Command::Sweep => Config::Sweep(serde_json::from_value(merged).map_err(config_err)?),
        Command::Equiv => Config::Equiv(serde_json::from_value(merged).map_err(config_err)?),
        Command::Noneq => Config::Noneq(serde_json::from_value(merged).map_err(config_err)?),
    };
    let echo = config.to_value()?;
    Ok(Resolved {
        command,
        seed: seed.or(file_seed).unwrap_or(DEFAULT_SEED),
        jobs,
        preset,
        config,
        echo,
    })
}

fn spec_value(
    model: Model,
    constraint: Constraint,
    randomness: Randomness,
    aggregator: Aggregator,
    m: usize,
    n: u64,
    d: usize,
) -> Value {
    serde_json::to_value(ProtocolSpec::new(model, constraint, randomness, aggregator, m, n, d)).expect("spec serializes")
}

fn rr(epsilon: f64) -> Constraint {
    Constraint::Dp {
        epsilon,
        delta: 0.0,
        clip_bound: 3.0,
        mechanism: Some(Mechanism::RandomizedResponse),
    }
}

/// Names of the presets available to a command.
pub fn preset_names(command: Command) -> &'static [&'static str] {
    match command {
        Command::Calibrate => &["calibration"],
        Command::Risk => &["extreme-separation"],
        Command::Sweep => &[
            "pooled-m-sweep",
            "pooled-n-sweep",
            "bandwidth-m-sweep",
            "bandwidth-b-sweep",
            "bandwidth-b-sweep-d256",
            "dp-epsilon-sweep",
            "synthetic",
        ],
        Command::Equiv => &["lemma-suite", "coupling", "transfer", "dp-certificates", "carter-direction"],
        Command::Noneq => &["sparse-regime"],
    }
}

pub fn preset_config(command: Command, name: &str) -> Result<Value> {
    use Aggregator::*;
    use Model::*;
    use Randomness::*;
    let pooled_settings = json!({ "r": 20.0 });
    let v = match (command, name) {
        (Command::Calibrate, "calibration") => json!({
            "protocols": [
                spec_value(Multinomial, Constraint::None, Local, SumOfSquares, 8, 64, 8),
                spec_value(Multinomial, Constraint::Bandwidth { b: 4 }, Shared, SumOfBits, 8, 1000, 4),
                spec_value(Gaussian, rr(0.5), Local, LocalVote, 64, 10_000, 16),
                serde_json::to_value(crate::protocols::raw_forwarding_protocol(8, 64, 8)).expect("spec serializes"),
            ],
            "alpha": 0.05,
            "calibration_reps": 10_000,
            "evaluation_reps": 10_000,
        }),
        (Command::Risk, "extreme-separation") => json!({
            "protocol": spec_value(Multinomial, Constraint::None, Local, SumOfSquares, 16, 256, 8),
            "rho": 0.35,
            "r": 100.0,
            "mc": { "alpha": 0.01, "calibration_reps": 10_000 },
        }),
        (Command::Sweep, "pooled-m-sweep") => json!({
            "family": [spec_value(Multinomial, Constraint::None, Local, SumOfSquares, 2, 64, 8)],
            "param": "m",
            "values": [2, 4, 8, 16, 32],
            "base": { "m": 2, "n": 64, "d": 8 },
            "settings": pooled_settings,
            "expect": { "exponent": -1.0, "tolerance": 0.15 },
        }),
        (Command::Sweep, "pooled-n-sweep") => json!({
            "family": [spec_value(Multinomial, Constraint::None, Local, SumOfSquares, 8, 16, 8)],
            "param": "n",
            "values": [16, 32, 64, 128, 256],
            "base": { "m": 8, "n": 16, "d": 8 },
            "settings": pooled_settings,
            "expect": { "exponent": -1.0, "tolerance": 0.15 },
        }),
        (Command::Sweep, "bandwidth-m-sweep") => json!({
            "family": [
                spec_value(Gaussian, Constraint::Bandwidth { b: 1 }, Shared, SumOfBits, 8, 10_000, 256),
                spec_value(Gaussian, Constraint::Bandwidth { b: 1 }, Shared, LocalVote, 8, 10_000, 256),
            ],
            "param": "m",
            "values": [8, 16, 32, 64, 128],
            "base": { "m": 8, "n": 10_000, "d": 256, "b": 1 },
            "expect": { "exponent": -0.5, "tolerance": 0.15 },
        }),
        (Command::Sweep, "bandwidth-b-sweep") => json!({
            "family": [spec_value(Gaussian, Constraint::Bandwidth { b: 1 }, Shared, SumOfBits, 256, 10_000, 16)],
            "param": "b",
            "values": [1, 2, 4, 8, 16, 32, 64],
            "base": { "m": 256, "n": 10_000, "d": 16, "b": 1 },
            "analysis": "elbow",
            "expect": { "exponent": -0.5, "tolerance": 0.15, "plateau": 0.15 },
        }),
        (Command::Sweep, "bandwidth-b-sweep-d256") => json!({
            "family": [spec_value(Gaussian, Constraint::Bandwidth { b: 1 }, Shared, SumOfBits, 4096, 10_000, 256)],
            "param": "b",
            "values": [1, 4, 16, 64, 256, 512, 1024],
            "base": { "m": 4096, "n": 10_000, "d": 256, "b": 1 },
            "analysis": "elbow",
            "expect": { "exponent": -0.5, "tolerance": 0.15, "plateau": 0.15 },
        }),
        (Command::Sweep, "dp-epsilon-sweep") => {
            let eps: Vec<f64> = (0..8).map(|i| 0.03 * (1.0f64 / 0.03).powf(i as f64 / 7.0)).collect();
            json!({
                "family": [
                    spec_value(Gaussian, rr(1.0), Shared, SumOfBits, 409_600, 10_000_000, 256),
                    spec_value(Gaussian, rr(1.0), Local, LocalVote, 409_600, 10_000_000, 256),
                ],
                "param": "epsilon",
                "values": eps,
                "base": { "m": 409_600, "n": 10_000_000, "d": 256, "epsilon": 1.0 },
                "analysis": "phase",
                "boundary": "shared",
                "settings": { "bracket_lo": 1e-6 },
                "expect": { "low_slope": -1.0, "high_slope": -2.0, "tolerance": 0.3, "boundary_factor": 2.0 },
            })
        }
        (Command::Sweep, "synthetic") => json!({
            "param": "m",
            "values": [2, 4, 8, 16, 32],
            "base": { "m": 2, "n": 64, "d": 8 },
            "synthetic": { "c": 0.35, "exponent": -1.0 },
            "expect": { "exponent": -1.0, "tolerance": 1e-9 },
        }),
        (Command::Equiv, "lemma-suite") => json!({ "suite": "lemma-suite", "cases": 200 }),
        (Command::Equiv, "coupling") => json!({ "suite": "coupling", "pairs": 50, "samples": 100_000, "max_atoms": 8 }),
        (Command::Equiv, "transfer") => json!({ "suite": "transfer" }),
        (Command::Equiv, "dp-certificates") => json!({ "suite": "dp-certificates" }),
        (Command::Equiv, "carter-direction") => json!({ "suite": "carter-direction", "ns": [16, 64, 256] }),
        (Command::Noneq, "sparse-regime") => json!({ "d": 4096, "n": 8, "m": 4 }),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` for {}; available: {}",
                command.name(),
                preset_names(command).join(", ")
            )))
        }
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for c in [Command::Calibrate, Command::Risk, Command::Sweep, Command::Equiv, Command::Noneq] {
            for name in preset_names(c) {
                resolve(c, None, Some(name), None).unwrap_or_else(|e| panic!("{name}: {e}"));
            }
        }
    }

    #[test]
    fn missing_field_is_named() {
        let err = resolve(Command::Calibrate, Some(json!({ "alpha": 0.05 })), None, None).unwrap_err();
        assert!(err.to_string().contains("protocols"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_field_is_rejected() {
        let err = resolve(Command::Noneq, Some(json!({ "d": 8, "n": 1, "m": 1, "bogus": 1 })), None, None).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = resolve(Command::Equiv, Some(json!({ "suite": "coupling", "pairz": 3 })), None, None).unwrap_err();
        assert!(err.to_string().contains("pairz"), "{err}");
    }

    #[test]
    fn file_overrides_preset_and_flag_overrides_file() {
        let raw = json!({ "preset": "sparse-regime", "m": 2, "seed": 5, "jobs": 3 });
        let r = resolve(Command::Noneq, Some(raw.clone()), None, None).unwrap();
        assert_eq!(r.seed, 5);
        assert_eq!(r.jobs, Some(3));
        match &r.config {
            Config::Noneq(c) => assert_eq!((c.d, c.m), (4096, 2)),
            _ => unreachable!(),
        }
        assert_eq!(resolve(Command::Noneq, Some(raw), None, Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn hash_ignores_jobs_but_not_seed() {
        let a = resolve(Command::Noneq, Some(json!({ "preset": "sparse-regime", "jobs": 1 })), None, None).unwrap();
        let b = resolve(Command::Noneq, Some(json!({ "preset": "sparse-regime", "jobs": 8 })), None, None).unwrap();
        let c = resolve(Command::Noneq, Some(json!({ "preset": "sparse-regime" })), None, Some(2)).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rho_accepts_scalar_or_list() {
        let base = json!({ "protocol": spec_value(Model::Multinomial, Constraint::None, Randomness::Local, Aggregator::SumOfSquares, 2, 8, 4) });
        let mut one = base.clone();
        merge(&mut one, json!({ "rho": 0.1 }));
        let mut many = base;
        merge(&mut many, json!({ "rho": [0.1, 0.2] }));
        match resolve(Command::Risk, Some(one), None, None).unwrap().config {
            Config::Risk(c) => assert_eq!(c.rho, vec![0.1]),
            _ => unreachable!(),
        }
        match resolve(Command::Risk, Some(many), None, None).unwrap().config {
            Config::Risk(c) => assert_eq!(c.rho, vec![0.1, 0.2]),
            _ => unreachable!(),
        }
    }
}
