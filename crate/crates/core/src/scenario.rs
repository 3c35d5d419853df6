//! JSON scenario files: manifold, potential, boundary data and options.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bvp::{BoundaryData, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::{ChartRef, Euclidean, Hyperbolic2, NumericChart, So3, Sphere2};
use crate::model::Model;
use crate::potentials::Potential;

/// Endpoint positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub qa: Vec<f64>,
    pub va: Vec<f64>,
    pub qb: Vec<f64>,
    pub vb: Vec<f64>,
}

fn default_seeds() -> usize {
    1
}

fn default_oracle_intervals() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// `euclidean:<n>`, `sphere2`, `hyperbolic2`, `so3` or `numeric:<file>`.
    pub manifold: String,
    #[serde(default)]
    pub potential: Option<Potential>,
    pub boundary: Endpoints,
    pub interval: [f64; 2],
    /// Integrator step; defaults to `(b − a)/2000`.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub seed: u64,
    /// Number of shooting seeds for the multi-seed scan.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Continuation grid for `sweep`.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    /// Base time of `scan`; defaults to `a`.
    #[serde(default)]
    pub scan_t1: Option<f64>,
    /// Spline knot intervals for the index estimate.
    #[serde(default)]
    pub basis_intervals: Option<usize>,
    #[serde(default = "default_oracle_intervals")]
    pub oracle_intervals: usize,
    /// Directory against which relative paths are resolved.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_str_in(text: &str, base_dir: &Path) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str_in(&text, &dir)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
    }

    pub fn chart(&self) -> Result<ChartRef> {
        parse_manifold(&self.manifold, &self.base_dir)
    }

    pub fn potential(&self) -> Potential {
        self.potential.clone().unwrap_or(Potential::Zero)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.chart()?, self.potential())
    }

    pub fn boundary(&self) -> BoundaryData {
        BoundaryData {
            qa: self.boundary.qa.clone(),
            va: self.boundary.va.clone(),
            qb: self.boundary.qb.clone(),
            vb: self.boundary.vb.clone(),
            a: self.interval[0],
            b: self.interval[1],
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = self.solver;
        if self.step.is_some() {
            o.step = self.step;
        }
        o
    }
}

/// Builds the chart named by a manifold selection string.
pub fn parse_manifold(name: &str, base_dir: &Path) -> Result<ChartRef> {
    let name = name.trim();
    if let Some(n) = name.strip_prefix("euclidean:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Config(format!("bad dimension in manifold {name:?}")))?;
        if n == 0 {
            return Err(Error::Config("euclidean dimension must be positive".into()));
        }
        return Ok(Arc::new(Euclidean::new(n)));
    }
    if let Some(file) = name.strip_prefix("numeric:") {
        let path = base_dir.join(file);
        return Ok(Arc::new(NumericChart::from_spec_file(&path)?));
    }
    match name {
        "sphere2" => Ok(Arc::new(Sphere2::new())),
        "hyperbolic2" => Ok(Arc::new(Hyperbolic2::new())),
        "so3" => Ok(Arc::new(So3::new())),
        _ => Err(Error::Config(format!("unknown manifold {name:?}"))),
    }
}
