//! Run configuration: a TOML file with `[model]`, `[scheme]`, `[run]`,
//! `[output]` and `[task]` sections, overridden by command-line flags.
//!
//! ```toml
//! [model]
//! dimension = 2
//! alpha = 1.0
//! entries = ["1 + 0.1*sin(x2)", "0", "0", "1"]   # row-major
//! region = { lower = [-10, -10], upper = [10, 10] }
//!
//! [scheme]
//! mode = "fixed-step"      # or "jump-adapted"
//! dt = 0.001
//! beta = 0.1               # jump-adapted only
//! max_steps = 50000000
//! t_cap = 1000.0
//!
//! [run]
//! seed = 7
//! n = 10000
//! threads = 4
//!
//! [output]
//! directory = "out"
//! formats = ["json", "csv"]
//!
//! [task]
//! x0 = "0.1,0"
//! domain = "ball:1"
//! ```
//!
//! Precedence for every value: flag, then file, then (for the seed only)
//! the `STABLE_SDE_SEED` environment variable, then the built-in default.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "STABLE_SDE_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "ModelSection::is_empty")]
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "SchemeSection::is_empty")]
    pub scheme: SchemeSection,
    #[serde(default, skip_serializing_if = "RunSection::is_empty")]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "OutputSection::is_empty")]
    pub output: OutputSection,
    /// Subcommand inputs, using the same text syntax as the flags.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub task: BTreeMap<String, TaskValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<stablesde::Region>,
}

impl ModelSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_cap: Option<f64>,
}

impl SchemeSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl RunSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<String>>,
}

impl OutputSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// A `[task]` value: text in flag syntax, or a bare number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskValue {
    Bool(bool),
    Integer(i64),
    Number(f64),
    Text(String),
}

impl TaskValue {
    pub fn as_text(&self) -> String {
        match self {
            TaskValue::Bool(b) => b.to_string(),
            TaskValue::Integer(i) => i.to_string(),
            TaskValue::Number(x) => format!("{x:?}"),
            TaskValue::Text(s) => s.clone(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks that need no other input; the rest happens at resolution.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(format!("config: {m}")));
        if let Some(d) = self.model.dimension {
            if d == 0 {
                return bad("dimension must be at least 1");
            }
            if let Some(e) = &self.model.entries {
                if e.len() != d * d {
                    return bad("entries must list dimension² expressions");
                }
            }
        }
        if let Some(mode) = &self.scheme.mode {
            if mode != "fixed-step" && mode != "jump-adapted" {
                return bad("scheme.mode must be \"fixed-step\" or \"jump-adapted\"");
            }
        }
        if let Some(formats) = &self.output.formats {
            if formats.iter().any(|f| f != "json" && f != "csv") || formats.is_empty() {
                return bad("output.formats must be a nonempty subset of [\"json\", \"csv\"]");
            }
        }
        if self.run.threads == Some(0) {
            return bad("run.threads must be at least 1");
        }
        Ok(())
    }

    pub fn task_text(&self, key: &str) -> Option<String> {
        self.task.get(key).map(TaskValue::as_text)
    }
}

/// Seed from flag, file, environment, or 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, env: Option<&str>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an integer, got '{v}'"))),
        None => Ok(0),
    }
}
