use std::path::{Path, PathBuf};

use anyhow::Result;
use randstop::objectives::Objective;
use randstop::simulate::SimConfig;
use randstop::{DiffusionSpec, Distribution, RandomizedRule};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::BadInput;

/// A value given inline or as a path to a JSON file.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| BadInput(format!("cannot read {}: {e}", path.display())))?;
                Ok(serde_json::from_str(&text).map_err(|e| BadInput(format!("{}: {e}", path.display())))?)
            }
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub diffusion: Option<DiffusionSpec>,
    pub target: Option<Source<Distribution>>,
    pub rule: Option<Source<RandomizedRule>>,
    pub objective: Option<Objective>,
    /// Extra objectives reported by `simulate`.
    #[serde(default)]
    pub objectives: Vec<Objective>,
    /// Two candidate laws for `optimize-csc`.
    pub laws: Option<(Source<Distribution>, Source<Distribution>)>,
    #[serde(default)]
    pub simulation: SimConfig,
    pub grid: Option<(usize, usize)>,
    /// Start of the rank-dependent problem; defaults to the diffusion start.
    pub start: Option<f64>,
    pub cells: Option<usize>,
    /// Tolerance of the pushforward check written by `embed`.
    pub tolerance: Option<f64>,
}

/// Parsed configuration with file references resolved.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub diffusion: Option<DiffusionSpec>,
    pub target: Option<Distribution>,
    pub rule: Option<RandomizedRule>,
    pub objective: Option<Objective>,
    pub objectives: Vec<Objective>,
    pub laws: Option<(Distribution, Distribution)>,
    pub simulation: SimConfig,
    pub grid: (usize, usize),
    pub start: Option<f64>,
    pub cells: usize,
    pub tolerance: f64,
}

pub const DEFAULT_GRID: (usize, usize) = (200, 200);

impl RunConfig {
    /// `arg` is a path, or a JSON object given inline.
    pub fn load(arg: Option<&str>) -> Result<Self> {
        let (raw, base) = match arg {
            None => (RawConfig::default(), PathBuf::from(".")),
            Some(s) if s.trim_start().starts_with('{') => {
                let raw = serde_json::from_str(s).map_err(|e| BadInput(format!("config: {e}")))?;
                (raw, PathBuf::from("."))
            }
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| BadInput(format!("cannot read config {p}: {e}")))?;
                let raw = serde_json::from_str(&text).map_err(|e| BadInput(format!("config {p}: {e}")))?;
                let base = Path::new(p).parent().map(Path::to_path_buf).unwrap_or_default();
                (raw, base)
            }
        };
        Self::resolve(raw, &base)
    }

    fn resolve(raw: RawConfig, base: &Path) -> Result<Self> {
        let laws = match &raw.laws {
            Some((a, b)) => Some((a.resolve(base)?, b.resolve(base)?)),
            None => None,
        };
        Ok(RunConfig {
            target: raw.target.as_ref().map(|t| t.resolve(base)).transpose()?,
            rule: raw.rule.as_ref().map(|r| r.resolve(base)).transpose()?,
            diffusion: raw.diffusion,
            objective: raw.objective,
            objectives: raw.objectives,
            laws,
            simulation: raw.simulation,
            grid: raw.grid.unwrap_or(DEFAULT_GRID),
            start: raw.start,
            cells: raw.cells.unwrap_or(randstop::measures::DEFAULT_GRID_SIZE),
            tolerance: raw.tolerance.unwrap_or(1e-9),
        })
    }

    pub fn diffusion(&self) -> Result<&DiffusionSpec> {
        Ok(self.diffusion.as_ref().ok_or_else(|| BadInput("config needs a \"diffusion\" section".into()))?)
    }

    pub fn objective(&self) -> Result<&Objective> {
        Ok(self.objective.as_ref().ok_or_else(|| BadInput("config needs an \"objective\" section".into()))?)
    }
}

/// Parses `NAxNB`.
pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected <n_a>x<n_b>, got {s}"))?;
    let a = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}
