//! Flat plain-text run configuration with dotted section keys.
//!
//! ```text
//! # lines are `key = value`; `#` starts a comment
//! plant.lambda = 1.0
//! plant.sigma_pm = [0.0, 0.5, 1.0]   # scalar or uniform-grid samples
//! law.type = partial_cancellation
//! numerics.n = 200
//! ```
//!
//! Unknown keys, malformed values and missing required keys are reported
//! with the offending key name (and line number where applicable).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use hyperlab_core::model::{PlantConfig, Profile};
use hyperlab_core::sim::ControlLaw;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
enum Value {
    Scalar(String),
    Array(Vec<String>),
}

/// Parsed key/value view of a config file plus the raw text (echoed into
/// every output directory for reproducibility).
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, (usize, Value)>,
    pub raw: String,
}

const KNOWN_KEYS: &[&str] = &[
    "plant.lambda",
    "plant.mu",
    "plant.q",
    "plant.rho",
    "plant.sigma_pm",
    "plant.sigma_mp",
    "law.type",
    "law.K",
    "law.a",
    "law.b",
    "numerics.n",
    "numerics.delta",
    "numerics.horizon",
    "numerics.tolerance",
    "init.u0",
    "init.v0",
    "scan.re_min",
    "scan.re_max",
    "scan.cap",
    "scan.im_min",
    "scan.im_max",
    "scan.isolate_limit",
    "output.dir",
    "output.stride",
    "sweep.key",
    "sweep.values",
    "verify.kernels_csv",
    "verify.horizon",
];

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&raw)
    }

    pub fn parse_str(raw: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let line_no = idx + 1;
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {line_no}: expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError(format!("line {line_no}: unknown key `{key}`")));
            }
            let value = value.trim();
            let parsed = if value.starts_with('[') {
                if !value.ends_with(']') {
                    return Err(ConfigError(format!(
                        "line {line_no}: unterminated array for `{key}`"
                    )));
                }
                Value::Array(
                    value[1..value.len() - 1]
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect(),
                )
            } else {
                Value::Scalar(value.to_string())
            };
            if values.insert(key.clone(), (line_no, parsed)).is_some() {
                return Err(ConfigError(format!("line {line_no}: duplicate key `{key}`")));
            }
        }
        Ok(Self {
            values,
            raw: raw.to_string(),
        })
    }

    fn get(&self, key: &str) -> Option<&(usize, Value)> {
        self.values.get(key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((line, Value::Scalar(s))) => s.parse::<f64>().map(Some).map_err(|_| {
                ConfigError(format!("line {line}: `{key}` expects a number, got `{s}`"))
            }),
            Some((line, Value::Array(_))) => Err(ConfigError(format!(
                "line {line}: `{key}` expects a scalar, got an array"
            ))),
        }
    }

    pub fn f64_required(&self, key: &str) -> Result<f64, ConfigError> {
        self.f64_opt(key)?
            .ok_or_else(|| ConfigError(format!("missing required key `{key}`")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((line, Value::Scalar(s))) => s.parse::<usize>().map(Some).map_err(|_| {
                ConfigError(format!(
                    "line {line}: `{key}` expects a nonnegative integer, got `{s}`"
                ))
            }),
            Some((line, Value::Array(_))) => Err(ConfigError(format!(
                "line {line}: `{key}` expects a scalar, got an array"
            ))),
        }
    }

    pub fn usize_required(&self, key: &str) -> Result<usize, ConfigError> {
        self.usize_opt(key)?
            .ok_or_else(|| ConfigError(format!("missing required key `{key}`")))
    }

    pub fn string_opt(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((_, Value::Scalar(s))) => Ok(Some(s.clone())),
            Some((line, Value::Array(_))) => Err(ConfigError(format!(
                "line {line}: `{key}` expects a string, got an array"
            ))),
        }
    }

    pub fn f64_array(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((line, Value::Array(items))) => items
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        ConfigError(format!(
                            "line {line}: `{key}` array entry `{s}` is not a number"
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some((line, Value::Scalar(s))) => s
                .parse::<f64>()
                .map(|v| Some(vec![v]))
                .map_err(|_| ConfigError(format!("line {line}: `{key}` expects numbers, got `{s}`"))),
        }
    }

    /// Scalar-or-array coefficient key.
    fn profile(&self, key: &str) -> Result<Profile<f64>, ConfigError> {
        match self.get(key) {
            None => Err(ConfigError(format!("missing required key `{key}`"))),
            Some((line, Value::Scalar(s))) => s
                .parse::<f64>()
                .map(Profile::Constant)
                .map_err(|_| ConfigError(format!("line {line}: `{key}` expects a number, got `{s}`"))),
            Some((line, Value::Array(items))) => {
                let samples = items
                    .iter()
                    .map(|s| {
                        s.parse::<f64>().map_err(|_| {
                            ConfigError(format!(
                                "line {line}: `{key}` array entry `{s}` is not a number"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Profile::tabulated(samples)
                    .map_err(|e| ConfigError(format!("line {line}: `{key}`: {e}")))
            }
        }
    }

    pub fn plant(&self) -> Result<PlantConfig<f64>, ConfigError> {
        let lambda = self.f64_required("plant.lambda")?;
        let mu = self.f64_required("plant.mu")?;
        let q = self.f64_required("plant.q")?;
        let rho = self.f64_required("plant.rho")?;
        let sigma_pm = self.profile("plant.sigma_pm")?;
        let sigma_mp = self.profile("plant.sigma_mp")?;
        PlantConfig::new(lambda, mu, q, rho, sigma_pm, sigma_mp)
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn law(&self) -> Result<ControlLaw<f64>, ConfigError> {
        let kind = self
            .string_opt("law.type")?
            .ok_or_else(|| ConfigError("missing required key `law.type`".into()))?;
        let law = match kind.as_str() {
            "open_loop" => ControlLaw::OpenLoop,
            "full_cancellation" => ControlLaw::FullCancellation,
            "partial_cancellation" => ControlLaw::PartialCancellation {
                k: self.f64_required("law.K")?,
            },
            "static_boundary" => ControlLaw::StaticBoundary {
                k: self.f64_required("law.K")?,
            },
            "filtered" => ControlLaw::Filtered {
                a: self.f64_required("law.a")?,
                b: self.f64_required("law.b")?,
            },
            other => {
                return Err(ConfigError(format!(
                    "`law.type` must be one of open_loop, full_cancellation, \
                     partial_cancellation, static_boundary, filtered; got `{other}`"
                )))
            }
        };
        law.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(law)
    }

    pub fn initial_profiles(&self) -> Result<(Profile<f64>, Profile<f64>), ConfigError> {
        let u0 = if self.has("init.u0") {
            self.profile("init.u0")?
        } else {
            Profile::Constant(1.0)
        };
        let v0 = if self.has("init.v0") {
            self.profile("init.v0")?
        } else {
            Profile::Constant(1.0)
        };
        Ok((u0, v0))
    }

    pub fn n(&self) -> Result<usize, ConfigError> {
        self.usize_required("numerics.n")
    }

    pub fn delta(&self) -> Result<f64, ConfigError> {
        self.f64_or("numerics.delta", 0.0)
    }

    pub fn horizon(&self) -> Result<f64, ConfigError> {
        self.f64_or("numerics.horizon", 40.0)
    }

    pub fn sweep_key(&self) -> Result<String, ConfigError> {
        let key = self
            .string_opt("sweep.key")?
            .ok_or_else(|| ConfigError("missing required key `sweep.key`".into()))?;
        if !["delta", "K", "rho"].contains(&key.as_str()) {
            return Err(ConfigError(format!(
                "`sweep.key` must be one of delta, K, rho; got `{key}`"
            )));
        }
        Ok(key)
    }

    pub fn sweep_values(&self) -> Result<Vec<f64>, ConfigError> {
        Ok(self.f64_array("sweep.values")?.unwrap_or_default())
    }
}
