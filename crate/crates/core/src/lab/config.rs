//! Experiment configuration: a flat JSON object, optionally patched with
//! `key=value` overrides before validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use crate::data::{GenerationMode, SplitMode, TargetFunction};
use crate::train::{Diagnostics, Hyperparams, LearningRate};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    SweepWidth,
    Similarity,
    KernelProbe,
    GenerateData,
    #[serde(rename = "compare-1d")]
    Compare1d,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Train,
        Command::SweepWidth,
        Command::Similarity,
        Command::KernelProbe,
        Command::GenerateData,
        Command::Compare1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::SweepWidth => "sweep-width",
            Command::Similarity => "similarity",
            Command::KernelProbe => "kernel-probe",
            Command::GenerateData => "generate-data",
            Command::Compare1d => "compare-1d",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("command", format!("unknown command `{s}`")))
    }
}

/// `"auto"` or a nonnegative number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSetting {
    Auto,
    Fixed(f64),
}

impl Serialize for EtaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaSetting::Auto => s.serialize_str("auto"),
            EtaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for EtaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = EtaSetting;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"auto\" or a number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<EtaSetting, E> {
                match v {
                    "auto" => Ok(EtaSetting::Auto),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<EtaSetting, E> {
                Ok(EtaSetting::Fixed(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<EtaSetting, E> {
                Ok(EtaSetting::Fixed(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<EtaSetting, E> {
                Ok(EtaSetting::Fixed(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

fn default_target() -> TargetFunction {
    TargetFunction::F3
}
fn default_n() -> usize {
    100
}
fn default_widths() -> Vec<usize> {
    vec![1024]
}
fn default_kappa() -> f64 {
    1.0
}
fn default_eta() -> EtaSetting {
    EtaSetting::Auto
}
fn default_eta_cap() -> f64 {
    0.1
}
fn default_steps() -> usize {
    1000
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_mode() -> GenerationMode {
    GenerationMode::Box
}
fn default_split() -> SplitMode {
    SplitMode::Independent
}
fn default_grid() -> usize {
    400
}
fn default_embed_dim() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_target")]
    pub target: TargetFunction,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_eta")]
    pub eta: EtaSetting,
    /// Upper bound for the automatic learning rate.
    #[serde(default = "default_eta_cap")]
    pub eta_cap: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: GenerationMode,
    #[serde(default = "default_split")]
    pub split: SplitMode,
    /// Defaults to `max(1, steps / 100)`.
    #[serde(default)]
    pub probe_stride: Option<usize>,
    #[serde(default)]
    pub decomposition: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Concurrent cells; 0 lets the thread pool decide.
    #[serde(default)]
    pub workers: usize,
    /// compare-1d: expression in `x`; the spiky preset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    /// compare-1d: dense evaluation grid size.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// compare-1d: input embedding width (`x/π`, a constant 1, then zeros).
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

impl ExperimentConfig {
    pub fn command(&self) -> Result<Command> {
        self.command.ok_or_else(|| Error::config("command", "no command given"))
    }

    pub fn probe_stride(&self) -> usize {
        self.probe_stride.unwrap_or((self.steps / 100).max(1))
    }

    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            eta: match self.eta {
                EtaSetting::Auto => LearningRate::Auto { cap: self.eta_cap },
                EtaSetting::Fixed(v) => LearningRate::Fixed(v),
            },
            steps: self.steps,
            kappa: self.kappa,
            seed,
        }
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            probe_stride: Some(self.probe_stride()),
            decomposition: self.decomposition,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let command = self.command()?;
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::config("kappa", format!("{} is outside (0, 1]", self.kappa)));
        }
        if let EtaSetting::Fixed(v) = self.eta {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config("eta", format!("{v} must be a nonnegative number")));
            }
        }
        if !(self.eta_cap > 0.0 && self.eta_cap.is_finite()) {
            return Err(Error::config("eta_cap", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test", "must be positive"));
        }
        if self.split == SplitMode::Holdout && self.n_test >= self.n {
            return Err(Error::config("n_test", "holdout must leave training rows"));
        }
        if self.widths.is_empty() {
            return Err(Error::config("widths", "must not be empty"));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("widths", "every width must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.probe_stride == Some(0) {
            return Err(Error::config("probe_stride", "must be positive"));
        }
        if command == Command::Compare1d {
            if self.grid == 0 {
                return Err(Error::config("grid", "must be positive"));
            }
            if self.embed_dim < 2 {
                return Err(Error::config("embed_dim", "must be at least 2"));
            }
            if let Some(src) = &self.expression {
                TargetFunction::from_str(&format!("custom_1d:{src}"))
                    .map_err(|e| Error::config("expression", e.to_string()))?;
            }
        } else if let TargetFunction::Custom1d(_) = self.target {
            return Err(Error::config("target", "custom_1d targets are only used by compare-1d"));
        }
        Ok(())
    }
}

/// Parses a `--set key=value` argument. The value is read as JSON when it
/// parses, otherwise as a bare string.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::config(arg, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Parses and validates a JSON config, applying overrides first.
pub fn parse_config_with_overrides(source: &str, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(source).map_err(|e| Error::config("<root>", e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::config("<root>", "config must be a JSON object"))?;
    for (k, v) in overrides {
        obj.insert(k.clone(), v.clone());
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let key = if path == "." {
            unknown_field(&inner).unwrap_or(path)
        } else {
            path
        };
        Error::config(key, inner)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(source: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(source, &[])
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"command":"train","target":"f3","n":100,"steps":1000,"widths":[1024],"seeds":[1]}"#)
            .unwrap();
        assert_eq!(cfg.command, Some(Command::Train));
        assert_eq!(cfg.kappa, 1.0);
        assert_eq!(cfg.eta, EtaSetting::Auto);
        assert_eq!(cfg.probe_stride(), 10);
        assert_eq!(cfg.target, TargetFunction::F3);
        assert_eq!(cfg.hyperparams(5).eta, LearningRate::Auto { cap: 0.1 });
    }

    #[test]
    fn constraint_violations_name_the_key() {
        assert_eq!(key_of(parse_config(r#"{"command":"train","kappa":2.0}"#)), "kappa");
        assert_eq!(
            key_of(parse_config(r#"{"command":"sweep-width","widths":[]}"#)),
            "widths"
        );
        assert_eq!(key_of(parse_config(r#"{"command":"train","seeds":[]}"#)), "seeds");
        assert_eq!(key_of(parse_config(r#"{"command":"train","steps":0}"#)), "steps");
        assert_eq!(key_of(parse_config(r#"{"command":"train","color":"red"}"#)), "color");
        assert_eq!(key_of(parse_config(r#"{"command":"train","n":"many"}"#)), "n");
        assert_eq!(key_of(parse_config(r#"{"command":"train","eta":"fast"}"#)), "eta");
        assert_eq!(key_of(parse_config(r#"{"command":"train","target":"f9"}"#)), "target");
        assert_eq!(key_of(parse_config(r#"{"command":"dance"}"#)), "command");
        assert_eq!(key_of(parse_config(r#"{"target":"f1"}"#)), "command");
        assert_eq!(
            key_of(parse_config(r#"{"command":"compare-1d","expression":"sin("}"#)),
            "expression"
        );
        assert_eq!(key_of(parse_config("[1, 2]")), "<root>");
    }

    #[test]
    fn overrides_apply_before_validation() {
        let base = r#"{"command":"train","kappa":2.0}"#;
        let fixed = parse_config_with_overrides(base, &[parse_override("kappa=0.5").unwrap()]).unwrap();
        assert_eq!(fixed.kappa, 0.5);
        let cfg = parse_config_with_overrides(
            r#"{"command":"train"}"#,
            &[
                parse_override("target=f6").unwrap(),
                parse_override("widths=[64,128]").unwrap(),
                parse_override("eta=0.05").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.target, TargetFunction::F6);
        assert_eq!(cfg.widths, vec![64, 128]);
        assert_eq!(cfg.eta, EtaSetting::Fixed(0.05));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = parse_config(r#"{"command":"sweep-width","widths":[64,256],"seeds":[1,2],"eta":0.02}"#).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}
