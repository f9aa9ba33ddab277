//! JSON run configuration shared by the CLI and the C ABI.
//!
//! Unknown keys are rejected everywhere so a typo fails fast (exit code 2)
//! instead of silently running with defaults.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::HwConfig;
use crate::ipm::IpmConfig;
use crate::kkt::{pattern_from_nlp, BlockPattern, PatternOptions};
use crate::model::{Crane, CraneParams};
use crate::ocp::crane_ocp;
use crate::simloop::{EstimatorKind, SimConfig};
use crate::transcription::{build_nlp, make_tableau, NlpProblem, TableauKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub horizon: usize,
    pub t_s: f64,
    /// Measured initial state `[x_c, v_c, x_l, v_l, theta, theta_dot]`.
    pub x_hat: Vec<f64>,
    pub tableau: TableauKind,
    pub model: CraneParams,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            t_s: 0.1,
            x_hat: vec![0.5, 0.0, 0.7, 0.0, -0.2, -0.5],
            tableau: TableauKind::Trapezoidal,
            model: CraneParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub t_sim: f64,
    pub substeps: usize,
    pub estimator: EstimatorKind,
    pub filter_omega: f64,
    pub filter_zeta: f64,
    pub noise_std: f64,
    /// Plant parameters when they differ from the controller model.
    pub plant: Option<CraneParams>,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            t_sim: d.t_sim,
            substeps: d.substeps,
            estimator: d.estimator,
            filter_omega: d.filter_omega,
            filter_zeta: d.filter_zeta,
            noise_std: d.noise_std,
            plant: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Greedy,
    #[default]
    BranchAndBound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwSection {
    pub l_add: usize,
    pub l_mul: usize,
    pub parallel_blocks: usize,
    pub clock_mhz: f64,
    pub scheduler: SchedulerKind,
    pub bnb_time_limit_ms: u64,
}

impl Default for HwSection {
    fn default() -> Self {
        let d = HwConfig::default();
        Self {
            l_add: d.l_add,
            l_mul: d.l_mul,
            parallel_blocks: d.parallel_blocks,
            clock_mhz: d.clock_mhz,
            scheduler: SchedulerKind::default(),
            bnb_time_limit_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub ipm: IpmConfig,
    pub sim: SimSection,
    pub hw: HwSection,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Build the transcribed crane NLP and its KKT block pattern.
    pub fn build_problem(&self) -> Result<(NlpProblem, Arc<BlockPattern>)> {
        let p = &self.problem;
        if p.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(p.t_s > 0.0) {
            return Err(Error::Config("t_s must be positive".into()));
        }
        if p.x_hat.len() != 6 {
            return Err(Error::Config(format!(
                "x_hat must have 6 entries, got {}",
                p.x_hat.len()
            )));
        }
        let spec = crane_ocp(p.horizon, p.t_s, DVector::from_vec(p.x_hat.clone()));
        let model = Crane::new(p.model.clone())?;
        let nlp = build_nlp(spec, Box::new(model), make_tableau(p.tableau))?;
        let pattern = Arc::new(pattern_from_nlp(
            &nlp,
            PatternOptions { include_diagonal: self.ipm.delta != 0.0 },
        )?);
        Ok((nlp, pattern))
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            horizon: self.problem.horizon,
            t_s: self.problem.t_s,
            t_sim: self.sim.t_sim,
            substeps: self.sim.substeps,
            x0: DVector::from_vec(self.problem.x_hat.clone()),
            tableau: self.problem.tableau,
            ipm: self.ipm.clone(),
            estimator: self.sim.estimator,
            filter_omega: self.sim.filter_omega,
            filter_zeta: self.sim.filter_zeta,
            noise_std: self.sim.noise_std,
            seed,
            model_params: self.problem.model.clone(),
            plant_params: self.sim.plant.clone().unwrap_or_else(|| self.problem.model.clone()),
        }
    }

    pub fn hw_config(&self) -> HwConfig {
        HwConfig {
            l_add: self.hw.l_add,
            l_mul: self.hw.l_mul,
            parallel_blocks: self.hw.parallel_blocks,
            clock_mhz: self.hw.clock_mhz,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.problem.horizon, 20);
        assert_eq!(cfg.ipm.n_iter, 15);
        assert_eq!(cfg.hw.l_add, 6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"horizonn": 5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"problem": {"horizonn": 5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ipm": {"n_iters": 5}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let again = RunConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(again.problem.horizon, cfg.problem.horizon);
        assert_eq!(again.hw.bnb_time_limit_ms, cfg.hw.bnb_time_limit_ms);
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = RunConfig::from_json(
            r#"{
                "problem": {"horizon": 10, "tableau": "rk4"},
                "ipm": {"n_iter": 5, "minres": {"rtol": 0.0, "budget": "dim"}},
                "sim": {"estimator": "filtered", "noise_std": 0.001},
                "hw": {"parallel_blocks": 4, "scheduler": "greedy"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.problem.horizon, 10);
        assert_eq!(cfg.problem.tableau, TableauKind::Rk4);
        assert_eq!(cfg.ipm.n_iter, 5);
        assert_eq!(cfg.ipm.minres.budget, crate::minres::IterBudget::Dim);
        assert_eq!(cfg.sim.estimator, EstimatorKind::Filtered);
        assert_eq!(cfg.hw.scheduler, SchedulerKind::Greedy);
    }

    #[test]
    fn bad_x_hat_is_a_config_error() {
        let cfg = RunConfig::from_json(r#"{"problem": {"x_hat": [1.0, 2.0]}}"#).unwrap();
        assert!(matches!(cfg.build_problem(), Err(Error::Config(_))));
    }
}
