use std::fs;
use std::path::{Path, PathBuf};

use gconv_core::nn::ConvKind;
use gconv_core::train::{GmmSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::args::CommonArgs;
use crate::error::{LabError, Result};
use crate::output::Format;

/// Resolved settings of one invocation: built-in defaults, then the JSON
/// config file, then command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// `None` runs both kinds.
    pub kind: Option<ConvKind>,
    pub out: Option<PathBuf>,
    pub format: Format,
    /// Gradient-check cases per layer, or equivalence cases in total.
    pub cases: Option<usize>,
    /// Final generated points written per toy run.
    pub samples: usize,
    pub train: TrainConfig,
    pub gmm: GmmSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![1, 2, 3, 4, 5],
            kind: None,
            out: None,
            format: Format::Json,
            cases: None,
            samples: 10_000,
            train: TrainConfig::default(),
            gmm: GmmSpec::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for a subcommand whose built-in seed list is `seeds`.
    pub fn with_seeds(seeds: &[u64]) -> Self {
        RunConfig {
            seeds: seeds.to_vec(),
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path, base: RunConfig) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        // fields missing from the file keep the subcommand's defaults
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, value.take());
        serde_json::from_value(merged)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `args` on top of `base` and validates the result.
    pub fn resolve(args: &CommonArgs, base: RunConfig) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::from_file(p, base)?,
            None => base,
        };
        if let Some(s) = &args.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(k) = args.kind {
            cfg.kind = Some(k);
        }
        if let Some(l) = args.loss {
            cfg.train.loss = l;
        }
        if let Some(n) = args.iterations {
            cfg.train.iterations = n;
        }
        if let Some(o) = &args.out {
            cfg.out = Some(o.clone());
        }
        if let Some(f) = args.format {
            cfg.format = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LabError::Config("seed list is empty".into()));
        }
        if self.samples == 0 {
            return Err(LabError::Config("samples must be positive".into()));
        }
        self.train.validate()?;
        self.gmm.validate()?;
        Ok(())
    }

    pub fn kinds(&self) -> Vec<ConvKind> {
        match self.kind {
            Some(k) => vec![k],
            None => vec![ConvKind::Conv, ConvKind::GConv],
        }
    }

    /// Creates the output directory if one is configured.
    pub fn out_dir(&self) -> Result<Option<&Path>> {
        match &self.out {
            None => Ok(None),
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| {
                    LabError::Config(format!("cannot create {}: {e}", dir.display()))
                })?;
                Ok(Some(dir))
            }
        }
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    use serde_json::Value;
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gconv_core::train::LossKind;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("cfg.json");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            r#"{"seeds": [9], "train": {"iterations": 40, "lr_g": 1e-3}, "gmm": {"radius": 3.0}}"#,
        );
        let args = CommonArgs {
            config: Some(p.clone()),
            iterations: Some(7),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args, RunConfig::default()).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.train.iterations, 7);
        assert_eq!(cfg.train.lr_g, 1e-3);
        assert_eq!(cfg.train.lr_d, TrainConfig::default().lr_d);
        assert_eq!(cfg.gmm.radius, 3.0);
        assert_eq!(cfg.gmm.modes, 8);

        let args = CommonArgs {
            config: Some(p),
            seeds: Some(vec![1, 2]),
            loss: Some(LossKind::Lsgan),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args, RunConfig::default()).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.train.iterations, 40);
        assert_eq!(cfg.train.loss, LossKind::Lsgan);
    }

    #[test]
    fn file_keeps_subcommand_seed_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), r#"{"format": "csv"}"#);
        let args = CommonArgs {
            config: Some(p),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args, RunConfig::with_seeds(&[0])).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.format, Format::Csv);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        for text in [
            r#"{"seedz": [1]}"#,
            r#"{"train": {"n_dis": 0}}"#,
            r#"{"seeds": []}"#,
            r#"{"gmm": {"std": -1}}"#,
            "not json",
        ] {
            let args = CommonArgs {
                config: Some(write(dir.path(), text)),
                ..Default::default()
            };
            let err = RunConfig::resolve(&args, RunConfig::default()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        let args = CommonArgs {
            config: Some(dir.path().join("missing.json")),
            ..Default::default()
        };
        assert_eq!(
            RunConfig::resolve(&args, RunConfig::default())
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn kinds_default_to_both() {
        assert_eq!(
            RunConfig::default().kinds(),
            vec![ConvKind::Conv, ConvKind::GConv]
        );
    }
}
