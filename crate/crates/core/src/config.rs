//! Run configuration shared by the command-line entry points.
//!
//! Sources are layered: TOML file, then `key.path=value` overrides, then the
//! `DASH_SEED` environment variable, then an explicit seed. The master seed
//! is copied into the simulator and training seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ann::{Activation, AnnSpec};
use crate::error::{Error, Result};
use crate::event_sim::SimConfig;
use crate::layers::{parse_arch, Shape3};
use crate::optim::TrainConfig;
use crate::snn::{LifParams, RateTarget, SnnSpec};
use crate::synth::{SceneSampler, SynthSpec};
use crate::tracker::PipelineConfig;

pub const SEED_ENV: &str = "DASH_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpConfig {
    /// Frames inserted between each input pair: 0, 1, 3, 7, ...
    pub factor: usize,
    /// Kernel file; the linear blend of `radius` is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<PathBuf>,
    pub radius: usize,
    pub lr: f64,
    pub steps: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self {
            factor: 0,
            kernel: None,
            radius: 1,
            lr: 0.5,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnnConfig {
    /// Architecture ending in the `FC4` readout; the input shape comes from
    /// the data.
    pub arch: String,
    pub lif: LifParams,
    pub time_steps: usize,
    pub decode_window: usize,
    pub lambda: f64,
    pub init_gain: f64,
    /// Firing-rate calibration applied before training.
    pub rates: RateTarget,
}

impl Default for SnnConfig {
    fn default() -> Self {
        let d = SnnSpec::desk_default();
        Self {
            arch: "Input-8C3S2-16C3S2-FC64-FC4".into(),
            lif: d.lif,
            time_steps: d.time_steps,
            decode_window: d.decode_window,
            lambda: d.lambda,
            init_gain: d.init_gain,
            rates: RateTarget::default(),
        }
    }
}

impl SnnConfig {
    pub fn spec(&self, width: usize, height: usize) -> Result<SnnSpec> {
        Ok(SnnSpec {
            lif: self.lif,
            time_steps: self.time_steps,
            decode_window: self.decode_window,
            lambda: self.lambda,
            init_gain: self.init_gain,
            ..SnnSpec::from_arch(&self.arch, Shape3::new(2, height, width))?
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnConfig {
    pub arch: String,
    pub lambda: f64,
    /// Train with the attention channels.
    pub attention: bool,
    /// Fraction of attention samples given the whole-frame prior.
    pub cold_start_rate: f64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            arch: "Input-8C3S2-MP2-16C3S1-FC64-FC4".into(),
            lambda: 1e-4,
            attention: true,
            cold_start_rate: 0.1,
        }
    }
}

impl AnnConfig {
    pub fn spec(&self, width: usize, height: usize) -> Result<AnnSpec> {
        let channels = if self.attention { 2 } else { 1 };
        Ok(AnnSpec {
            input: Shape3::new(channels, height, width),
            layers: parse_arch(&self.arch)?,
            output_activation: Activation::Identity,
            lambda: self.lambda,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// IOU threshold of the reported success rate.
    pub success_threshold: f64,
    /// IOU below which a sample counts as a failure.
    pub failure_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            success_threshold: 0.5,
            failure_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthSpec,
    /// When present, `synth` draws its scene from this distribution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SceneSampler>,
    pub sim: SimConfig,
    pub interp: InterpConfig,
    pub pipeline: PipelineConfig,
    pub snn: SnnConfig,
    pub ann: AnnConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: 0,
            synth: SynthSpec::default(),
            sampler: None,
            pipeline: PipelineConfig::for_frame_interval(sim.dt_f_ns),
            sim,
            interp: InterpConfig::default(),
            snn: SnnConfig::default(),
            ann: AnnConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables. The value
/// is parsed as TOML and falls back to a plain string.
fn set_key(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Layers the sources and validates the result. `env_seed` is the raw
    /// value of `DASH_SEED`, if set.
    pub fn resolve(text: &str, overrides: &[String], env_seed: Option<&str>, seed: Option<u64>) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            set_key(&mut table, o)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.sim.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any) and resolves it against the process environment.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(&text, overrides, env.as_deref(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.sim.validate()?;
        self.pipeline.validate(self.sim.dt_e_ns)?;
        self.train.validate()?;
        self.snn.lif.validate()?;
        self.snn.spec(self.synth.width, self.synth.height)?;
        parse_arch(&self.ann.arch)?;
        if !(0.0..=1.0).contains(&self.ann.cold_start_rate) {
            return Err(Error::Config("ann.cold_start_rate must lie in [0, 1]".into()));
        }
        if !(self.interp.factor + 1).is_power_of_two() {
            return Err(Error::Config(format!(
                "interp.factor must be 2^k - 1, got {}",
                self.interp.factor
            )));
        }
        if let Some(k) = &self.interp.kernel {
            if !k.is_file() {
                return Err(Error::Config(format!("interp.kernel {} does not exist", k.display())));
            }
        }
        Ok(())
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// [`Self::to_toml`] with every line commented out.
    pub fn header(&self) -> String {
        self.to_toml()
            .lines()
            .map(|l| {
                if l.is_empty() {
                    "#".to_string()
                } else {
                    format!("# {l}")
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::resolve("", &[], None, None).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn layering_order() {
        let text = "seed = 3\n[sim]\ntheta = 0.2\n";
        let cfg = RunConfig::resolve(text, &[], None, None).unwrap();
        assert_eq!((cfg.seed, cfg.sim.theta, cfg.sim.seed), (3, 0.2, 3));
        let o = vec!["sim.theta=0.3".to_string(), "ann.arch=Input-FC4".to_string()];
        let cfg = RunConfig::resolve(text, &o, Some("7"), None).unwrap();
        assert_eq!((cfg.seed, cfg.sim.theta), (7, 0.3));
        assert_eq!(cfg.ann.arch, "Input-FC4");
        let cfg = RunConfig::resolve(text, &o, Some("7"), Some(9)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["bogus = 1", "[sim]\nthetta = 0.1", "[interp]\nfactor = 2", "seed = -1"] {
            let err = RunConfig::resolve(text, &[], None, None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        assert!(RunConfig::resolve("", &[], Some("x"), None).is_err());
        assert!(RunConfig::resolve("", &["noequals".into()], None, None).is_err());
        assert!(RunConfig::resolve("[interp]\nkernel = \"/nonexistent/k.txt\"", &[], None, None).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig {
            sampler: Some(SceneSampler::default()),
            seed: 11,
            ..RunConfig::default()
        };
        cfg.sim.seed = 11;
        cfg.train.seed = 11;
        let back = RunConfig::resolve(&cfg.to_toml(), &[], None, None).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.header().lines().all(|l| l.starts_with('#')));
    }
}
