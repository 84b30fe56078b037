//! TOML run configuration.
//!
//! ```toml
//! solver = "admm"        # or "lm"
//! workers = 4
//! seed = 7               # sets scene.rng_seed = 7 and perturbation.rng_seed = 8
//!
//! [scene]
//! n_cameras = 5
//! n_points = 10
//! visibility_window = 5
//! focal = 500.0
//!
//! [perturbation]
//! sigma_cam = 0.1
//! sigma_point = 0.2
//!
//! [admm]
//! rho_x = 1.0
//! rho_y = 1.0
//! loss = "huber"
//! delta = 1.0
//! block_points = 1
//! block_cameras = 1
//! iters = 1600
//! primal_tol = 1e-6      # omit to run the full budget
//!
//! [lm]
//! max_iters = 100
//!
//! [output]
//! metrics = "metrics.csv"
//! solution = "solution.txt"
//! error_metric = "mean"  # or "rms", for the solve summary
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmOptions, BlockConfig};
use crate::error::{Error, Result};
use crate::geometry::ProjectionGuard;
use crate::lm::LmOptions;
use crate::local_opt::InnerOptions;
use crate::losses::{LossKind, DEFAULT_HUBER_DELTA};
use crate::scene_gen::{InitPerturbation, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Lm,
    #[default]
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    #[default]
    L2,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSection {
    pub rho_x: f64,
    pub rho_y: f64,
    pub loss: LossName,
    pub delta: f64,
    pub block_points: usize,
    pub block_cameras: usize,
    pub iters: usize,
    pub primal_tol: Option<f64>,
    pub inner: InnerOptions,
}

impl Default for AdmmSection {
    fn default() -> Self {
        let d = AdmmOptions::default();
        Self {
            rho_x: d.rho_x,
            rho_y: d.rho_y,
            loss: LossName::L2,
            delta: DEFAULT_HUBER_DELTA,
            block_points: 1,
            block_cameras: 1,
            iters: d.max_iters,
            primal_tol: d.primal_tol,
            inner: d.inner,
        }
    }
}

impl AdmmSection {
    pub fn loss_kind(&self) -> Result<LossKind> {
        match self.loss {
            LossName::L2 => Ok(LossKind::SquaredL2),
            LossName::Huber => LossKind::huber(self.delta),
        }
    }

    pub fn options(&self, workers: usize) -> Result<AdmmOptions> {
        let opts = AdmmOptions {
            rho_x: self.rho_x,
            rho_y: self.rho_y,
            max_iters: self.iters,
            primal_tol: self.primal_tol,
            misfit_loss: self.loss_kind()?,
            inner: self.inner,
            workers,
            guard: ProjectionGuard::default(),
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn block_config(&self) -> Result<BlockConfig> {
        BlockConfig::new(self.block_points, self.block_cameras)
    }
}

/// Reprojection error reported in the solve summary. The CSV trace always
/// carries the mean norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMetric {
    #[default]
    Mean,
    Rms,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub metrics: Option<PathBuf>,
    pub solution: Option<PathBuf>,
    pub error_metric: ErrorMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub workers: usize,
    pub seed: Option<u64>,
    pub scene: SceneConfig,
    pub perturbation: InitPerturbation,
    pub admm: AdmmSection,
    pub lm: LmOptions,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Admm,
            workers: 1,
            seed: None,
            scene: SceneConfig::default(),
            perturbation: InitPerturbation::default(),
            admm: AdmmSection::default(),
            lm: LmOptions::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Seeds the scene with `seed` and the perturbation with `seed + 1`.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.scene.rng_seed = seed;
        self.perturbation.rng_seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.scene.validate().map_err(wrap)?;
        if !(self.perturbation.sigma_cam >= 0.0 && self.perturbation.sigma_point >= 0.0) {
            return Err(Error::Config("perturbation sigmas must be nonnegative".into()));
        }
        self.admm.options(self.workers).map_err(wrap)?;
        self.admm.block_config().map_err(wrap)?;
        self.lm.validate().map_err(wrap)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.admm.options(1).unwrap(), AdmmOptions::default());
    }

    #[test]
    fn full_config() {
        let text = r#"
            solver = "lm"
            workers = 3
            seed = 7
            [scene]
            n_cameras = 8
            n_points = 40
            visibility_window = 3
            [perturbation]
            sigma_point = 0.7
            [admm]
            rho_x = 10.0
            loss = "huber"
            delta = 2.0
            block_points = 4
            iters = 50
            primal_tol = 1e-5
            [admm.inner]
            max_iters = 20
            [lm]
            use_schur = false
            [output]
            metrics = "m.csv"
            error_metric = "rms"
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.solver, SolverKind::Lm);
        assert_eq!((cfg.scene.rng_seed, cfg.perturbation.rng_seed), (7, 8));
        assert_eq!(cfg.scene.n_points, 40);
        assert_eq!(cfg.perturbation.sigma_point, 0.7);
        let opts = cfg.admm.options(cfg.workers).unwrap();
        assert_eq!(opts.misfit_loss, LossKind::Huber { delta: 2.0 });
        assert_eq!(
            (opts.rho_x, opts.rho_y, opts.max_iters, opts.workers),
            (10.0, 1.0, 50, 3)
        );
        assert_eq!(opts.primal_tol, Some(1e-5));
        assert_eq!(opts.inner.max_iters, 20);
        assert_eq!(cfg.admm.block_config().unwrap(), BlockConfig::new(4, 1).unwrap());
        assert!(!cfg.lm.use_schur);
        assert_eq!(cfg.output.metrics, Some(PathBuf::from("m.csv")));
        assert_eq!(cfg.output.error_metric, ErrorMetric::Rms);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "colour = 1",
            "[admm]\nrho = 1.0",
            "[scene]\nfocus = 2.0",
            "solver = \"gd\"",
            "[admm]\nloss = \"cauchy\"",
            "[admm]\nrho_x = -1.0",
            "[admm]\nloss = \"huber\"\ndelta = 0.0",
            "[scene]\nvisibility_window = 1",
            "workers = 0",
            "[perturbation]\nsigma_cam = -0.1",
            "[output]\nerror_metric = \"median\"",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn serialized_config_reloads() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(3);
        cfg.admm.loss = LossName::Huber;
        cfg.admm.primal_tol = Some(1e-6);
        cfg.output.solution = Some("out.txt".into());
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
