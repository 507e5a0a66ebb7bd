//! Pipeline configuration: defaults, optional TOML config file, and flag
//! overrides (flags win over file keys, both win over defaults).

use std::path::Path;

use tomoclass::cube::PolChannel;
use tomoclass::features::Scale;
use tomoclass::learners::Objective;

use crate::{check_fraction, parse_channels, parse_dims, parse_objective, parse_scale, CliError, PipelineArgs};

pub(crate) struct PipelineConfig {
    pub synth_seed: u64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub dims: (usize, usize),
    pub noise: f64,
    pub granularity: usize,
    pub split: String,
    pub test_frac: f64,
    pub side_frac: f64,
    pub buffer: usize,
    pub channels: Vec<PolChannel>,
    pub xy: bool,
    pub scale: Scale,
    pub learner: String,
    pub tune_budget: usize,
    pub objective: Objective,
    pub val_frac: f64,
    pub rounds: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_depth: Option<usize>,
    pub min_leaf: Option<usize>,
    pub trees: Option<usize>,
}

/// Flat key/value view over the TOML config file.
struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::usage(format!("config parse error: {e}")))?
            }
        };
        Ok(FileConfig { table })
    }

    fn str(&self, key: &str) -> Result<Option<String>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(CliError::usage(format!("config key {key} must be a string, got {v}"))),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(CliError::usage(format!(
                "config key {key} must be a nonnegative integer, got {v}"
            ))),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(CliError::usage(format!("config key {key} must be a number, got {v}"))),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(CliError::usage(format!("config key {key} must be a boolean, got {v}"))),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "synth_seed",
    "split_seed",
    "train_seed",
    "dims",
    "full",
    "noise",
    "granularity",
    "split",
    "test_frac",
    "side_frac",
    "buffer",
    "channels",
    "xy",
    "scale",
    "learner",
    "tune_budget",
    "objective",
    "val_frac",
    "rounds",
    "learning_rate",
    "max_depth",
    "min_leaf",
    "trees",
];

impl PipelineConfig {
    pub(crate) fn resolve(args: &PipelineArgs) -> Result<Self, CliError> {
        let file = FileConfig::load(args.config.as_deref())?;
        for key in file.table.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!("unknown config key {key:?}")));
            }
        }

        let full = args.full || file.bool("full")?.unwrap_or(false);
        let dims_str = args
            .dims
            .clone()
            .or(file.str("dims")?)
            .unwrap_or_else(|| "168x120".into());
        let dims = if full { (326, 840) } else { parse_dims(&dims_str)? };

        let split = args
            .split
            .clone()
            .or(file.str("split")?)
            .unwrap_or_else(|| "swath".into());
        if split != "swath" && split != "square" {
            return Err(CliError::usage(format!(
                "split must be swath or square, got {split:?}"
            )));
        }
        let learner = args
            .learner
            .clone()
            .or(file.str("learner")?)
            .unwrap_or_else(|| "gbm".into());
        if !["tree", "forest", "gbm"].contains(&learner.as_str()) {
            return Err(CliError::usage(format!(
                "learner must be tree, forest, or gbm, got {learner:?}"
            )));
        }

        let test_frac = args.test_frac.or(file.f64("test_frac")?).unwrap_or(0.20);
        check_fraction("test-frac", test_frac)?;
        let side_frac = args.side_frac.or(file.f64("side_frac")?).unwrap_or(0.05);
        check_fraction("side-frac", side_frac)?;
        let val_frac = args.val_frac.or(file.f64("val_frac")?).unwrap_or(0.2);
        check_fraction("val-frac", val_frac)?;
        let noise = args.noise.or(file.f64("noise")?).unwrap_or(0.3);
        if noise < 0.0 {
            return Err(CliError::usage("noise must be nonnegative"));
        }

        let channels = parse_channels(
            &args
                .channels
                .clone()
                .or(file.str("channels")?)
                .unwrap_or_else(|| "HH,HV,VV".into()),
        )?;
        let scale = parse_scale(
            &args
                .scale
                .clone()
                .or(file.str("scale")?)
                .unwrap_or_else(|| "linear".into()),
        )?;
        let objective = parse_objective(
            &args
                .objective
                .clone()
                .or(file.str("objective")?)
                .unwrap_or_else(|| "accuracy".into()),
        )?;

        Ok(PipelineConfig {
            synth_seed: args.synth_seed.or(file.u64("synth_seed")?).unwrap_or(7),
            split_seed: args.split_seed.or(file.u64("split_seed")?).unwrap_or(1),
            train_seed: args.train_seed.or(file.u64("train_seed")?).unwrap_or(42),
            dims,
            noise,
            granularity: args
                .granularity
                .or(file.usize("granularity")?)
                .unwrap_or(256)
                .max(1),
            split,
            test_frac,
            side_frac,
            buffer: args.buffer.or(file.usize("buffer")?).unwrap_or(0),
            channels,
            xy: args.xy.or(file.bool("xy")?).unwrap_or(true),
            scale,
            learner,
            tune_budget: args.tune_budget.or(file.usize("tune_budget")?).unwrap_or(0),
            objective,
            val_frac,
            rounds: args.rounds.or(file.usize("rounds")?),
            learning_rate: args.learning_rate.or(file.f64("learning_rate")?),
            max_depth: args.max_depth.or(file.usize("max_depth")?),
            min_leaf: args.min_leaf.or(file.usize("min_leaf")?),
            trees: args.trees.or(file.usize("trees")?),
        })
    }
}
