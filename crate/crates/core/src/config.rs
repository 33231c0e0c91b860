//! JSON run configuration for the command-line front-end.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conjugacy::ConjugacyOptions;
use crate::dichotomy::VerifyOptions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Either an explicit list or `count` evenly spaced points on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range { start: f64, end: f64, count: usize },
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range { start, end, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
        }
    }
}

/// One interval for every coordinate, or one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxSpec {
    Uniform([f64; 2]),
    PerAxis(Vec<[f64; 2]>),
}

impl BoxSpec {
    pub fn bounds(&self, dim: usize) -> Result<Vec<[f64; 2]>> {
        match self {
            BoxSpec::Uniform(b) => Ok(vec![*b; dim]),
            BoxSpec::PerAxis(v) if v.len() == dim => Ok(v.clone()),
            BoxSpec::PerAxis(v) => Err(Error::Config(format!(
                "grids.box has {} intervals but the system has dimension {dim}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    pub t: GridSpec,
    pub tau: GridSpec,
    #[serde(rename = "box")]
    pub state_box: BoxSpec,
    /// Random sample points drawn from `tau × box`.
    pub samples: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            t: GridSpec::Range {
                start: 0.0,
                end: 5.0,
                count: 11,
            },
            tau: GridSpec::List(vec![0.0, 1.0, 2.0, 3.0]),
            state_box: BoxSpec::Uniform([-2.0, 2.0]),
            samples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub ode_atol: f64,
    pub ode_rtol: f64,
    pub ode_h_max: f64,
    pub quad: f64,
    pub verify_quad: f64,
    pub picard: f64,
    pub c1_slack: f64,
    pub equivalence: f64,
    pub first_derivative: f64,
    pub second_derivative: f64,
    pub identity: f64,
    pub symmetry: f64,
    pub fd_step_first: f64,
    pub fd_step_second: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = ConjugacyOptions::default();
        let v = VerifyOptions::default();
        Self {
            ode_atol: c.ode.atol,
            ode_rtol: c.ode.rtol,
            ode_h_max: c.ode.h_max,
            quad: c.quad_tol,
            verify_quad: v.quad_tol,
            picard: c.picard_tol,
            c1_slack: v.c1_slack,
            equivalence: c.equivalence_tol,
            first_derivative: 1e-4,
            second_derivative: 1e-3,
            identity: 1e-6,
            symmetry: 1e-6,
            fd_step_first: 1e-5,
            fd_step_second: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub tol: Tolerances,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tol;
        for (name, v) in [
            ("ode_atol", t.ode_atol),
            ("ode_rtol", t.ode_rtol),
            ("ode_h_max", t.ode_h_max),
            ("quad", t.quad),
            ("verify_quad", t.verify_quad),
            ("picard", t.picard),
            ("c1_slack", t.c1_slack),
            ("equivalence", t.equivalence),
            ("first_derivative", t.first_derivative),
            ("second_derivative", t.second_derivative),
            ("identity", t.identity),
            ("symmetry", t.symmetry),
            ("fd_step_first", t.fd_step_first),
            ("fd_step_second", t.fd_step_second),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tol.{name} must be positive, got {v}")));
            }
        }
        for (name, g) in [("t", &self.grids.t), ("tau", &self.grids.tau)] {
            let pts = g.points();
            if pts.is_empty() {
                return Err(Error::Config(format!("grids.{name} is empty")));
            }
            if pts.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(format!("grids.{name} must hold finite times >= 0")));
            }
        }
        let boxes: Vec<[f64; 2]> = match &self.grids.state_box {
            BoxSpec::Uniform(b) => vec![*b],
            BoxSpec::PerAxis(v) => v.clone(),
        };
        if boxes.is_empty() {
            return Err(Error::Config("grids.box is empty".into()));
        }
        for [lo, hi] in boxes {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("grids.box interval [{lo}, {hi}] is invalid")));
            }
        }
        if self.grids.samples == 0 {
            return Err(Error::Config("grids.samples must be positive".into()));
        }
        Ok(())
    }

    pub fn conjugacy_options(&self) -> ConjugacyOptions {
        let mut o = ConjugacyOptions::default();
        o.ode.atol = self.tol.ode_atol;
        o.ode.rtol = self.tol.ode_rtol;
        o.ode.h_max = self.tol.ode_h_max;
        o.quad_tol = self.tol.quad;
        o.picard_tol = self.tol.picard;
        o.equivalence_tol = self.tol.equivalence;
        o
    }

    pub fn verify_options(&self) -> VerifyOptions {
        let mut v = VerifyOptions {
            quad_tol: self.tol.verify_quad,
            c1_slack: self.tol.c1_slack,
            ..VerifyOptions::default()
        };
        v.ode.atol = self.tol.ode_atol;
        v.ode.rtol = self.tol.ode_rtol;
        v.ode.h_max = self.tol.ode_h_max;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_json(r#"{"catalog": {"id": "S1"}}"#).unwrap();
        assert_eq!(c.grids.t.points().len(), 11);
        assert_eq!(c.tol, Tolerances::default());
    }

    #[test]
    fn grid_forms_and_box() {
        let c = RunConfig::from_json(
            r#"{"catalog": {"id": "S2", "params": {"lambda": 2}},
                "grids": {"t": {"start": 0, "end": 1, "count": 3}, "tau": [0.5], "box": [[-1, 1], [0, 2]]},
                "tol": {"quad": 1e-9}}"#,
        )
        .unwrap();
        assert_eq!(c.grids.t.points(), vec![0.0, 0.5, 1.0]);
        assert_eq!(c.grids.state_box.bounds(2).unwrap()[1], [0.0, 2.0]);
        assert!(c.grids.state_box.bounds(1).is_err());
        assert_eq!(c.conjugacy_options().quad_tol, 1e-9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            r#"{"catalog": {"id": "S1"}, "tol": {"quad": 0}}"#,
            r#"{"catalog": {"id": "S1"}, "grids": {"t": []}}"#,
            r#"{"catalog": {"id": "S1"}, "grids": {"box": [1, -1]}}"#,
            r#"{"catalog": {"id": "S1"}, "extra": 1}"#,
            r#"{"catalog": {}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
