//! Flat `key = value` run-config file holding every module's settings.
//!
//! ```text
//! # comments and blank lines are ignored
//! partition.angular_sectors = 4
//! partition.radial_shells = 2
//! partition.shell_boundaries_m = 1.25
//! loss.tau = 0.4
//! bench.seeds = 0, 1, 2
//! ```

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::splits::{BenchmarkConfig, BenchmarkMode};
use crate::contrastive::{LossConfig, OptimizerConfig};
use crate::error::{Error, Result};
use crate::instance::{DEFAULT_CLUSTER_RADIUS, DEFAULT_MIN_CLUSTER_SIZE};
use crate::labeling::{SelectOptions, Strategy};
use crate::mining::{DEFAULT_MATCH_RADIUS, DEFAULT_MIN_OVERLAP, DEFAULT_STRIDE, DEFAULT_VOXEL_SIZE};

#[derive(Debug, Clone, PartialEq)]
pub struct MiningSettings {
    pub stride: usize,
    pub match_radius: f64,
    pub min_overlap: f64,
    pub voxel_size: f64,
}

impl Default for MiningSettings {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            match_radius: DEFAULT_MATCH_RADIUS,
            min_overlap: DEFAULT_MIN_OVERLAP,
            voxel_size: DEFAULT_VOXEL_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectSettings {
    pub strategy: Strategy,
    pub budget: usize,
    pub seed: u64,
    pub options: SelectOptions,
}

impl Default for SelectSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::KmeansFeatures,
            budget: 20,
            seed: 0,
            options: SelectOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSettings {
    pub radius: f64,
    pub min_size: usize,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        Self {
            radius: DEFAULT_CLUSTER_RADIUS,
            min_size: DEFAULT_MIN_CLUSTER_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Includes the partition layout (`partition.*` keys).
    pub loss: LossConfig,
    pub train: OptimizerConfig,
    pub mine: MiningSettings,
    pub select: SelectSettings,
    pub cluster: ClusterSettings,
    pub bench: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            train: OptimizerConfig::default(),
            mine: MiningSettings::default(),
            select: SelectSettings::default(),
            cluster: ClusterSettings::default(),
            bench: BenchmarkConfig {
                mode: BenchmarkMode::LaPoints,
                budget: 20,
                seeds: vec![0, 1, 2],
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "partition.angular_sectors",
        "partition.radial_shells",
        "partition.shell_boundaries_m",
        "loss.tau",
        "loss.num_sampled_matches",
        "loss.normalize",
        "train.lr",
        "train.lr_decay",
        "train.decay_every_steps",
        "train.steps",
        "train.seed",
        "train.dim",
        "train.batch_size",
        "mine.stride",
        "mine.match_radius",
        "mine.min_overlap",
        "mine.voxel_size",
        "select.strategy",
        "select.budget",
        "select.seed",
        "select.iterations",
        "select.xyz_weight",
        "cluster.radius",
        "cluster.min_size",
        "bench.mode",
        "bench.budget",
    ];

    /// Sets one key; the combined configuration is checked by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "partition.angular_sectors" => self.loss.partition.angular_sectors = parse(key, v)?,
            "partition.radial_shells" => self.loss.partition.radial_shells = parse(key, v)?,
            "partition.shell_boundaries_m" => self.loss.partition.shell_boundaries_m = parse_list(key, v)?,
            "loss.tau" => self.loss.temperature = parse(key, v)?,
            "loss.num_sampled_matches" => self.loss.num_sampled_matches = parse(key, v)?,
            "loss.normalize" => self.loss.normalize = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.lr_decay" => self.train.lr_decay = parse(key, v)?,
            "train.decay_every_steps" => self.train.decay_every_steps = parse(key, v)?,
            "train.steps" => self.train.steps = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.dim" => self.train.dim = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "mine.stride" => self.mine.stride = parse(key, v)?,
            "mine.match_radius" => self.mine.match_radius = parse(key, v)?,
            "mine.min_overlap" => self.mine.min_overlap = parse(key, v)?,
            "mine.voxel_size" => self.mine.voxel_size = parse(key, v)?,
            "select.strategy" => self.select.strategy = parse(key, v)?,
            "select.budget" => self.select.budget = parse(key, v)?,
            "select.seed" => self.select.seed = parse(key, v)?,
            "select.iterations" => self.select.options.iterations = parse(key, v)?,
            "select.xyz_weight" => self.select.options.xyz_weight = parse(key, v)?,
            "cluster.radius" => self.cluster.radius = parse(key, v)?,
            "cluster.min_size" => self.cluster.min_size = parse(key, v)?,
            "bench.mode" => self.bench.mode = parse(key, v)?,
            "bench.budget" => self.bench.budget = parse(key, v)?,
            "bench.seeds" => self.bench.seeds = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by every `key = value` line of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        Self::parse(&text).map_err(|e| e.at(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.train.validate()?;
        if self.mine.stride == 0 {
            return Err(Error::Config("mining stride must be at least 1".into()));
        }
        if !(self.mine.match_radius > 0.0 && self.mine.voxel_size > 0.0) {
            return Err(Error::Config("match radius and voxel size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mine.min_overlap) {
            return Err(Error::Config("min overlap must lie in [0, 1]".into()));
        }
        if self.select.budget == 0 {
            return Err(Error::Config("selection budget must be positive".into()));
        }
        if !(self.cluster.radius > 0.0 && self.cluster.radius.is_finite()) || self.cluster.min_size == 0 {
            return Err(Error::Config("cluster radius and min size must be positive".into()));
        }
        self.bench.validate()
    }

    /// Every key with its current value, in the order of [`RunConfig::KEYS`] then `bench.seeds`.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.loss.partition;
        let values = [
            p.angular_sectors.to_string(),
            p.radial_shells.to_string(),
            join(&p.shell_boundaries_m),
            self.loss.temperature.to_string(),
            self.loss.num_sampled_matches.to_string(),
            self.loss.normalize.to_string(),
            self.train.lr.to_string(),
            self.train.lr_decay.to_string(),
            self.train.decay_every_steps.to_string(),
            self.train.steps.to_string(),
            self.train.seed.to_string(),
            self.train.dim.to_string(),
            self.train.batch_size.to_string(),
            self.mine.stride.to_string(),
            self.mine.match_radius.to_string(),
            self.mine.min_overlap.to_string(),
            self.mine.voxel_size.to_string(),
            self.select.strategy.to_string(),
            self.select.budget.to_string(),
            self.select.seed.to_string(),
            self.select.options.iterations.to_string(),
            self.select.options.xyz_weight.to_string(),
            self.cluster.radius.to_string(),
            self.cluster.min_size.to_string(),
            self.bench.mode.to_string(),
            self.bench.budget.to_string(),
        ];
        let mut out: Vec<_> = Self::KEYS.iter().copied().zip(values).collect();
        out.push(("bench.seeds", join(&self.bench.seeds)));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Flat JSON object of all keys, for echoing into reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("partition.angular_sectors", "4").unwrap();
        cfg.set("partition.radial_shells", "3").unwrap();
        cfg.set("partition.shell_boundaries_m", "1.0, 2.5").unwrap();
        cfg.set("select.strategy", "random").unwrap();
        cfg.set("bench.mode", "lr").unwrap();
        cfg.set("bench.budget", "10").unwrap();
        cfg.set("bench.seeds", "4,5").unwrap();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::parse("# header\n\nloss.tau = 0.07  # sharper\ncluster.min_size=5\n").unwrap();
        assert_eq!(cfg.loss.temperature, 0.07);
        assert_eq!(cfg.cluster.min_size, 5);
        assert!(RunConfig::parse("loss.tau 0.1").is_err());
        assert!(RunConfig::parse("loss.tauu = 0.1").is_err());
        assert!(RunConfig::parse("loss.tau = fast").is_err());
        assert!(RunConfig::parse("partition.radial_shells = 3").is_err());
        assert!(RunConfig::parse("loss.tau = 0").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        let mut copy = RunConfig::default();
        for (k, v) in cfg.entries() {
            copy.set(k, &v).unwrap();
        }
        assert_eq!(copy, cfg);
    }
}
