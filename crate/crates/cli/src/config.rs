//! TOML experiment configuration.
//!
//! ```toml
//! [grid]        width, height, aps = [[x, y], ...]
//! [model]       a, c1, c2, v1, v2, sigma2, jitter
//! [simulation]  steps, visibility = { kind = "full" | "bernoulli" (p) | "range" (radius) }
//! [boem]        particles, block_slope, block_intercept, stabilize_every,
//!               sigma_update, penalty, partial_sigma, resampling, [boem.theta0]
//! [experiment]  blocks, replications, quantile, partial_visibility
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use rssi_slam_core::mstep::MStepOptions;
use rssi_slam_core::{
    BlockSchedule, BoemConfig, CovarianceKernel, GridMap, PartialSigma, PenaltyWeight, PerturbationPrior, Point,
    Resampling, SigmaUpdate, Theta, TransitionKernel, Visibility,
};
use serde::{Deserialize, Serialize};

/// Study configuration shipped with the binary.
pub const STUDY: &str = include_str!("../configs/study.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub model: ModelSection,
    pub simulation: SimulationSection,
    pub boem: BoemSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub width: usize,
    pub height: usize,
    pub aps: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
    pub v1: f64,
    pub v2: f64,
    pub sigma2: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub steps: usize,
    #[serde(default)]
    pub visibility: VisibilitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probability {
    Shared(f64),
    PerAp(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VisibilitySpec {
    #[default]
    Full,
    Bernoulli { p: Probability },
    Range { radius: f64 },
}

impl VisibilitySpec {
    pub fn resolve(&self, ap_count: usize) -> Result<Visibility> {
        Ok(match self {
            Self::Full => Visibility::Full,
            Self::Bernoulli { p: Probability::Shared(p) } => Visibility::Bernoulli(vec![*p; ap_count]),
            Self::Bernoulli { p: Probability::PerAp(p) } => {
                if p.len() != ap_count {
                    bail!("visibility lists {} probabilities for {} access points", p.len(), ap_count);
                }
                Visibility::Bernoulli(p.clone())
            }
            Self::Range { radius } => Visibility::Range { radius: *radius },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSpec {
    FixedPoint,
    SingleSweep,
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltySpec {
    PerStep,
    PerStepPlusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialSigmaSpec {
    Known,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplingSpec {
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta0 {
    pub c1: f64,
    pub c2: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoemSection {
    pub particles: usize,
    pub block_slope: u64,
    pub block_intercept: u64,
    pub stabilize_every: u64,
    pub sigma_update: SigmaSpec,
    pub penalty: PenaltySpec,
    pub partial_sigma: PartialSigmaSpec,
    pub resampling: ResamplingSpec,
    pub theta0: Theta0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub blocks: u64,
    pub replications: usize,
    pub quantile: f64,
    #[serde(default)]
    pub partial_visibility: VisibilitySpec,
}

/// Objects built once from a [`Config`] and shared by every replication.
pub struct Model {
    pub grid: GridMap,
    pub kernel: TransitionKernel,
    pub prior: PerturbationPrior,
}

impl Config {
    pub fn study() -> Self {
        Self::parse(STUDY).expect("bundled configuration parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.boem.stabilize_every == 0 {
            bail!("stabilize_every must be at least 1");
        }
        if self.boem.block_slope == 0 && self.boem.block_intercept == 0 {
            bail!("block schedule is empty");
        }
        if self.boem.particles == 0 {
            bail!("particle count must be positive");
        }
        if self.simulation.steps == 0 {
            bail!("trajectory length must be at least 1");
        }
        if self.experiment.blocks == 0 || self.experiment.replications == 0 {
            bail!("experiment needs at least one block and one replication");
        }
        if !(self.experiment.quantile > 0.0 && self.experiment.quantile <= 1.0) {
            bail!("quantile must lie in (0, 1]");
        }
        let m = &self.model;
        if !(m.v1 > 0.0 && m.v2 > 0.0 && m.sigma2 > 0.0 && m.a > 0.0) {
            bail!("model variances and the kernel bandwidth must be positive");
        }
        if !(self.boem.theta0.sigma2 > 0.0) {
            bail!("initial noise variance must be positive");
        }
        self.simulation.visibility.resolve(self.grid.aps.len())?;
        self.experiment.partial_visibility.resolve(self.grid.aps.len())?;
        Ok(())
    }

    pub fn schedule(&self) -> BlockSchedule {
        BlockSchedule::new(self.boem.block_slope, self.boem.block_intercept).expect("validated")
    }

    pub fn build(&self) -> Result<Model> {
        let aps = self.grid.aps.iter().map(|p| Point::new(p[0], p[1])).collect();
        let grid = GridMap::new(self.grid.width, self.grid.height, aps)?;
        let kernel = TransitionKernel::build(&grid, self.model.a)?;
        let prior = PerturbationPrior::new(
            &grid,
            &[CovarianceKernel::new(self.model.v1, self.model.v2)?],
            self.model.jitter,
        )?;
        Ok(Model { grid, kernel, prior })
    }

    pub fn theta0(&self, grid: &GridMap) -> Result<Theta> {
        let t = &self.boem.theta0;
        Ok(Theta::uniform(grid, t.c1, t.c2, t.sigma2)?)
    }

    /// Runner settings; `stabilized = false` disables the averaged-estimate copy.
    pub fn boem_config(&self, seed: u64, stabilized: bool) -> BoemConfig {
        let b = &self.boem;
        BoemConfig {
            particles: b.particles,
            schedule: self.schedule(),
            stabilize_every: stabilized.then_some(b.stabilize_every),
            mstep: MStepOptions {
                penalty: match b.penalty {
                    PenaltySpec::PerStep => PenaltyWeight::PerStep,
                    PenaltySpec::PerStepPlusOne => PenaltyWeight::PerStepPlusOne,
                },
                sigma: match b.sigma_update {
                    SigmaSpec::FixedPoint => SigmaUpdate::fixed_point(),
                    SigmaSpec::SingleSweep => SigmaUpdate::SingleSweep,
                    SigmaSpec::Known => SigmaUpdate::Known,
                },
                ..MStepOptions::default()
            },
            partial_sigma: match b.partial_sigma {
                PartialSigmaSpec::Known => PartialSigma::Known,
                PartialSigmaSpec::Estimate => PartialSigma::Estimate,
            },
            resampling: self.resampling(),
            seed,
            ..BoemConfig::default()
        }
    }

    pub fn resampling(&self) -> Resampling {
        match self.boem.resampling {
            ResamplingSpec::Multinomial => Resampling::Multinomial,
            ResamplingSpec::Systematic => Resampling::Systematic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_matches_study() {
        let c = Config::study();
        assert_eq!((c.grid.width, c.grid.height, c.grid.aps.len()), (31, 31, 17));
        assert_eq!((c.model.c1, c.model.c2, c.model.sigma2, c.model.a), (-26.0, -17.5, 25.0, 6.0));
        assert_eq!((c.model.v1, c.model.v2), (10.0, 18.0));
        assert_eq!((c.boem.particles, c.boem.stabilize_every), (25, 5));
        assert_eq!(c.schedule().tau(1), 510);
        assert_eq!((c.boem.theta0.c1, c.boem.theta0.c2, c.boem.theta0.sigma2), (-10.0, -30.0, 30.0));
        assert_eq!(c.experiment.replications, 10);
    }

    #[test]
    fn infeasible_settings_are_rejected() {
        let text = STUDY.replace("stabilize_every = 5", "stabilize_every = 0");
        assert!(Config::parse(&text).is_err());
        let text = STUDY.replace("block_slope = 10", "block_slope = 0").replace("block_intercept = 500", "block_intercept = 0");
        assert!(Config::parse(&text).is_err());
        let text = STUDY.replace("p = 0.8", "p = [0.8, 0.9]");
        assert!(Config::parse(&text).is_err());
        assert!(Config::parse(&format!("{STUDY}\nbogus = 1\n")).is_err());
    }
}
