//! Config files: a base preset plus partial overrides per section.
//!
//! ```toml
//! preset = "tiny"
//!
//! [model]
//! dim = 48
//!
//! [train]
//! steps = 500
//!
//! [train.schedule]
//! lr_peak = 1e-3
//!
//! [task]
//! noise = 0.3
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use squeezeformer::model::{preset, ModelConfig};
use squeezeformer::train::{SyntheticTask, TrainConfig};

use crate::CliError;

pub const DEFAULT_PRESET: &str = "tiny";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    task: toml::Table,
}

/// Everything a command may need, fully expanded.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: SyntheticTask,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Serialize `base`, overwrite it key by key with `overrides` and read it
/// back, so unknown keys and bad values are rejected by the target type.
fn overlay<T>(base: &T, overrides: toml::Table, section: &str) -> Result<T, CliError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut table = toml::Table::try_from(base).map_err(config_err)?;
    merge(&mut table, overrides);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("[{section}] {e}")))
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn resolve(preset_flag: Option<&str>, path: Option<&Path>) -> Result<Resolved, CliError> {
    let file: ConfigFile = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    let name = preset_flag.map(str::to_owned).or(file.preset).unwrap_or_else(|| DEFAULT_PRESET.to_owned());
    let base = preset(&name)?;
    let model = overlay(&base, file.model, "model")?;
    model.validate()?;
    let train = overlay(&TrainConfig::default(), file.train, "train")?;
    let task_base = SyntheticTask {
        vocab: model.vocab_size,
        feature_dim: model.input_feature_dim,
        ..SyntheticTask::default()
    };
    let task = overlay(&task_base, file.task, "task")?;
    Ok(Resolved {
        preset: name,
        model,
        train,
        task,
    })
}

impl Resolved {
    /// The complete config as a file that resolves back to itself.
    pub fn to_toml(&self) -> Result<String, CliError> {
        #[derive(Serialize)]
        struct Out<'a> {
            preset: &'a str,
            model: &'a ModelConfig,
            train: &'a TrainConfig,
            task: &'a SyntheticTask,
        }
        toml::to_string(&Out {
            preset: &self.preset,
            model: &self.model,
            train: &self.train,
            task: &self.task,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_to_tiny() {
        let r = resolve(None, None).unwrap();
        assert_eq!(r.model, preset("tiny").unwrap());
        assert_eq!(r.task.vocab, r.model.vocab_size);
    }

    #[test]
    fn partial_overrides_apply() {
        let f = write("preset = \"tiny-conformer\"\n[model]\ndim = 48\n[train.schedule]\nlr_peak = 0.01\n[task]\nnoise = 0.0\n");
        let r = resolve(None, Some(f.path())).unwrap();
        assert_eq!(r.model.dim, 48);
        assert_eq!(r.model.heads, 4);
        assert_eq!(r.train.schedule.lr_peak, 0.01);
        assert_eq!(r.train.schedule.warmup, TrainConfig::default().schedule.warmup);
        assert_eq!(r.task.noise, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1\n", "[model]\nwidth = 3\n", "[train.schedule]\npeak = 1.0\n", "[task]\nsigma = 1.0\n"] {
            let f = write(text);
            assert!(matches!(resolve(None, Some(f.path())), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn dumped_config_round_trips() {
        let r = resolve(Some("squeezeformer-sm"), None).unwrap();
        let f = write(&r.to_toml().unwrap());
        let back = resolve(None, Some(f.path())).unwrap();
        assert_eq!(back.model, r.model);
        assert_eq!(back.train, r.train);
        assert_eq!(back.task, r.task);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let f = write("[model]\nheads = 5\n");
        assert!(matches!(resolve(None, Some(f.path())), Err(CliError::Config(_))));
        assert!(matches!(resolve(Some("nope"), None), Err(CliError::Config(_))));
    }
}
