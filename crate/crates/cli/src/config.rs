//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use obstacle_walk::scaling::EXPERIMENTS;
use obstacle_walk::{ObstacleSpec, StepLaw};
use thiserror::Error;

pub const THREADS_ENV: &str = "OBSTACLE_WALK_THREADS";

#[derive(Debug, Error, PartialEq)]
#[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn missing(key: &str) -> Self {
        ConfigError {
            line: None,
            key: key.to_string(),
            message: "required key is missing".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMethod {
    Quadrature,
    Gibbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: String,
    pub law: String,
    pub slope_margin: Option<f64>,
    pub seed: u64,
    pub output: PathBuf,
    /// Zero means one thread per core.
    pub threads: usize,
    pub obstacle_family: String,
    pub obstacle_param: f64,
    /// Single `n` for `tails`, `covariance` and `free_field`.
    pub obstacle_n: Option<usize>,
    pub grid_n: Option<Vec<usize>>,
    pub grid_lambda: Option<Vec<f64>>,
    /// Observation time as a fraction of `n`.
    pub grid_k: f64,
    pub grid_separations: Option<Vec<usize>>,
    pub grid_p: Vec<f64>,
    pub grid_sites: Option<Vec<usize>>,
    pub k_cap: f64,
    pub mass_tol: f64,
    pub sampler_method: SamplerMethod,
    pub sweeps: usize,
    pub burn_in: usize,
    pub max_sweeps: usize,
    pub coupling_tol: Option<f64>,
    pub thin: Option<usize>,
    pub beta: f64,
    pub chains: usize,
    pub dz: f64,
    pub zmax: Option<f64>,
}

impl RunConfig {
    fn defaults(experiment: String) -> Self {
        RunConfig {
            experiment,
            law: "uniform3".into(),
            slope_margin: None,
            seed: 0,
            output: PathBuf::from("out"),
            threads: 0,
            obstacle_family: "quadratic".into(),
            obstacle_param: 0.5,
            obstacle_n: None,
            grid_n: None,
            grid_lambda: None,
            grid_k: 0.5,
            grid_separations: None,
            grid_p: vec![1.5, 2.0, 3.0],
            grid_sites: None,
            k_cap: obstacle_walk::kernel::DEFAULT_K_CAP,
            mass_tol: obstacle_walk::kernel::DEFAULT_MASS_TOL,
            sampler_method: SamplerMethod::Quadrature,
            sweeps: 10_000,
            burn_in: 100,
            max_sweeps: 1_000_000,
            coupling_tol: None,
            thin: None,
            beta: 1.0,
            chains: 32,
            dz: 0.1,
            zmax: None,
        }
    }

    pub fn law(&self) -> obstacle_walk::Result<StepLaw> {
        let law = StepLaw::parse(&self.law)?;
        Ok(match self.slope_margin {
            Some(m) => law.with_slope_margin(m),
            None => law,
        })
    }

    pub fn obstacle(&self) -> obstacle_walk::Result<ObstacleSpec> {
        ObstacleSpec::from_family(&self.obstacle_family, self.obstacle_param)
    }

    /// Thread count after applying the environment override.
    pub fn effective_threads(&self) -> usize {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(self.threads)
    }
}

fn list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| ConfigError::at(line, key, format!("cannot parse `{s}`")))
        })
        .collect()
}

fn one<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse::<T>()
        .map_err(|_| ConfigError::at(line, key, format!("cannot parse `{value}`")))
}

fn positive(line: usize, key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::at(
            line,
            key,
            format!("must be positive, got {v}"),
        ))
    }
}

fn positive_int(line: usize, key: &str, v: usize) -> Result<usize, ConfigError> {
    if v > 0 {
        Ok(v)
    } else {
        Err(ConfigError::at(line, key, "must be positive"))
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut experiment = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, content, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if entries
            .iter()
            .any(|(_, k, _): &(usize, String, String)| k == key)
        {
            return Err(ConfigError::at(line, key, "duplicate key"));
        }
        if key == "experiment" {
            if !EXPERIMENTS.contains(&value) {
                return Err(ConfigError::at(
                    line,
                    key,
                    format!(
                        "unknown experiment `{value}` (expected one of {})",
                        EXPERIMENTS.join(", ")
                    ),
                ));
            }
            experiment = Some(value.to_string());
        }
        entries.push((line, key.to_string(), value.to_string()));
    }
    let mut c = RunConfig::defaults(experiment.ok_or_else(|| ConfigError::missing("experiment"))?);
    for (line, key, value) in &entries {
        let (line, key, value) = (*line, key.as_str(), value.as_str());
        match key {
            "experiment" => {}
            "law" => {
                StepLaw::parse(value).map_err(|e| ConfigError::at(line, key, e.to_string()))?;
                c.law = value.into();
            }
            "law.slope_margin" => {
                let v: f64 = one(line, key, value)?;
                if !(0.0..1.0).contains(&v) {
                    return Err(ConfigError::at(line, key, "must lie in [0, 1)"));
                }
                c.slope_margin = Some(v);
            }
            "seed" => c.seed = one(line, key, value)?,
            "output" => c.output = PathBuf::from(value),
            "threads" => c.threads = one(line, key, value)?,
            "obstacle.family" => {
                ObstacleSpec::from_family(value, 0.5)
                    .map_err(|e| ConfigError::at(line, key, e.to_string()))?;
                c.obstacle_family = value.into();
            }
            "obstacle.param" => c.obstacle_param = positive(line, key, one(line, key, value)?)?,
            "obstacle.n" => c.obstacle_n = Some(positive_int(line, key, one(line, key, value)?)?),
            "grid.n" => {
                let v: Vec<usize> = list(line, key, value)?;
                if v.iter().any(|&n| n < 2) {
                    return Err(ConfigError::at(line, key, "every n must be at least 2"));
                }
                c.grid_n = Some(v);
            }
            "grid.lambda" => {
                let v: Vec<f64> = list(line, key, value)?;
                for &x in &v {
                    positive(line, key, x)?;
                }
                c.grid_lambda = Some(v);
            }
            "grid.k" => {
                let v: f64 = one(line, key, value)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(ConfigError::at(
                        line,
                        key,
                        "must be a fraction of n in (0, 1)",
                    ));
                }
                c.grid_k = v;
            }
            "grid.separations" => {
                let v: Vec<usize> = list(line, key, value)?;
                for &x in &v {
                    positive_int(line, key, x)?;
                }
                c.grid_separations = Some(v);
            }
            "grid.p" => {
                let v: Vec<f64> = list(line, key, value)?;
                if v.iter().any(|&p| !(p >= 1.0 && p.is_finite())) {
                    return Err(ConfigError::at(line, key, "every p must be ≥ 1"));
                }
                c.grid_p = v;
            }
            "grid.sites" => c.grid_sites = Some(list(line, key, value)?),
            "kernel.k_cap" => c.k_cap = positive(line, key, one(line, key, value)?)?,
            "kernel.mass_tol" => c.mass_tol = positive(line, key, one(line, key, value)?)?,
            "sampler.method" => {
                c.sampler_method = match value {
                    "quadrature" => SamplerMethod::Quadrature,
                    "gibbs" => SamplerMethod::Gibbs,
                    _ => {
                        return Err(ConfigError::at(
                            line,
                            key,
                            "expected `quadrature` or `gibbs`",
                        ))
                    }
                }
            }
            "sampler.sweeps" => c.sweeps = positive_int(line, key, one(line, key, value)?)?,
            "sampler.burn_in" => c.burn_in = one(line, key, value)?,
            "sampler.max_sweeps" => c.max_sweeps = positive_int(line, key, one(line, key, value)?)?,
            "sampler.coupling_tol" => {
                c.coupling_tol = Some(positive(line, key, one(line, key, value)?)?)
            }
            "sampler.thin" => c.thin = Some(positive_int(line, key, one(line, key, value)?)?),
            "sampler.beta" => c.beta = positive(line, key, one(line, key, value)?)?,
            "sampler.chains" => {
                let v = one(line, key, value)?;
                if v < 2 {
                    return Err(ConfigError::at(
                        line,
                        key,
                        "at least 2 chains are needed for standard errors",
                    ));
                }
                c.chains = v;
            }
            "quadrature.dz" => c.dz = positive(line, key, one(line, key, value)?)?,
            "quadrature.zmax" => c.zmax = Some(positive(line, key, one(line, key, value)?)?),
            _ => return Err(ConfigError::at(line, key, "unknown key")),
        }
    }
    Ok(c)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        key: path.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    parse_config_str(&text)
}
