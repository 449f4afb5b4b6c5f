//! Run configuration: one JSON document with grid / potential / noise /
//! solver / experiment blocks. Files are the reproducibility unit — the
//! manifest written by every run contains the fully resolved config (no
//! silent defaults) and is itself accepted as a config input.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::noise::{DiffusionOperator, Sigma, SpectralBasis, TimeProfile, WienerConfig};
use crate::potential::{self, Potential};
use crate::solver::{Scheme, SolverConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable honored (and recorded) as a seed override.
pub const SEED_ENV_VAR: &str = "DIVFLOW_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    PPower { p: f64 },
    Cosh,
    ExpSquare,
    Anisotropic { p: Vec<f64> },
    /// Resolved through the library registration hook.
    Registered {
        name: String,
        #[serde(default)]
        params: serde_json::Value,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConfig {
    IdentityClipped { cap: f64 },
    Tanh,
    Affine { gain: f64, offset: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfileConfig {
    Constant,
    ExpDecay { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(rename = "kind")]
    pub kind: NoiseKind,
    pub modes: Option<usize>,
    pub q_scale: f64,
    pub q_decay: Option<f64>,
    pub sigma: Option<SigmaConfig>,
    pub time_profile: Option<TimeProfileConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Additive,
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverBlock {
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub m: Option<usize>,
    pub tau: f64,
    pub t_final: f64,
    pub alpha: Option<f64>,
    pub picard_tol: Option<f64>,
    pub picard_max: Option<usize>,
    pub scheme: Option<Scheme>,
    pub cfl_c: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    Verify,
    Converge,
    PotentialTable,
}

/// Refinement ladders for the `converge` experiment; entries are the
/// values at each level, coarsest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ladders {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub paths: Option<usize>,
    pub seed: u64,
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladders: Option<Ladders>,
    /// Thresholds of the uniform-integrability tail report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ui_thresholds: Vec<f64>,
    /// Dump the first path's increments as a binary file with JSON header.
    pub dump_noise: Option<bool>,
}

/// Initial datum, expanded on the grid at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    Zero,
    /// Linear combination of (L²-normalized) sine eigenmodes.
    SineModes {
        modes: Vec<[usize; 2]>,
        amplitudes: Vec<f64>,
    },
    /// Explicit node values (node-major).
    Values { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub potential: PotentialConfig,
    pub noise: NoiseConfig,
    pub solver: SolverBlock,
    pub experiment: ExperimentConfig,
    pub initial: Option<InitialConfig>,
}

/// Manifest: resolved config plus provenance. Accepted anywhere a config
/// is, so a run is reproducible from its manifest alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    /// Seed actually used (after any override).
    pub seed: u64,
    pub seed_overridden: bool,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("config").is_some() {
            let manifest: Manifest = serde_json::from_value(value)?;
            Ok(manifest.config)
        } else {
            Ok(serde_json::from_value(value)?)
        }
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::Config(format!("config_not_found: {}", path.display())));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fills every defaulted field in place, so the emitted manifest shows
    /// the exact values the run used.
    pub fn resolve(mut self) -> Result<RunConfig> {
        let grid = self.build_grid()?;
        let max_modes = grid.len().min(16);
        let n = &mut self.noise;
        n.modes = Some(n.modes.unwrap_or(max_modes));
        n.q_decay = Some(n.q_decay.unwrap_or(1.1));
        match n.kind {
            NoiseKind::Additive => {
                n.time_profile = Some(n.time_profile.unwrap_or(TimeProfileConfig::Constant));
                n.sigma = None;
            }
            NoiseKind::Multiplicative => {
                n.sigma = Some(n.sigma.unwrap_or(SigmaConfig::Tanh));
                n.time_profile = None;
            }
        }
        let s = &mut self.solver;
        s.epsilon = Some(s.epsilon.unwrap_or(0.0));
        s.m = Some(s.m.unwrap_or(SolverConfig::default_m(&grid)));
        s.picard_tol = Some(s.picard_tol.unwrap_or(1e-8));
        s.picard_max = Some(s.picard_max.unwrap_or(50));
        s.scheme = Some(s.scheme.unwrap_or(Scheme::ExplicitDrift));
        s.cfl_c = Some(s.cfl_c.unwrap_or(0.25));
        let e = &mut self.experiment;
        e.paths = Some(e.paths.unwrap_or(1));
        e.workers = Some(e.workers.unwrap_or(0));
        e.dump_noise = Some(e.dump_noise.unwrap_or(false));
        if e.ui_thresholds.is_empty() {
            e.ui_thresholds = vec![0.5, 1.0, 2.0, 4.0, 8.0];
        }
        if self.initial.is_none() {
            self.initial = Some(InitialConfig::SineModes {
                modes: vec![[1, 1]],
                amplitudes: vec![1.0],
            });
        }
        // alpha = 0 means "use the default rule at solve time"; resolve it
        // now so it lands in the manifest
        if self.solver.alpha.is_none() || self.solver.alpha == Some(0.0) {
            let resolved = self.build_noise_operator(&grid)?;
            self.solver.alpha = Some(crate::solver::default_alpha(&resolved.1));
        }
        // validate numeric ranges up front
        let cfg = self.solver_config()?;
        cfg.validate(&grid)?;
        self.build_potential(&grid)?;
        Ok(self)
    }

    pub fn build_grid(&self) -> Result<Grid> {
        let g = &self.grid;
        match g.dim {
            1 => {
                if g.extent.len() != 1 || g.nodes.len() != 1 {
                    return Err(Error::Config(
                        "1d grid needs exactly one extent and one node count".into(),
                    ));
                }
                Grid::new_1d(g.nodes[0], g.extent[0])
            }
            2 => {
                if g.extent.len() != 2 || g.nodes.len() != 2 {
                    return Err(Error::Config(
                        "2d grid needs two extents and two node counts".into(),
                    ));
                }
                Grid::new_2d([g.nodes[0], g.nodes[1]], [g.extent[0], g.extent[1]])
            }
            d => Err(Error::Config(format!("grid dim must be 1 or 2, got {d}"))),
        }
    }

    pub fn build_potential(&self, grid: &Grid) -> Result<Potential> {
        let dim = grid.dim();
        match &self.potential {
            PotentialConfig::PPower { p } => Potential::p_power(dim, *p),
            PotentialConfig::Cosh => Ok(Potential::cosh(dim)),
            PotentialConfig::ExpSquare => Ok(Potential::exp_square(dim)),
            PotentialConfig::Anisotropic { p } => {
                if p.len() != dim {
                    return Err(Error::Config(format!(
                        "anisotropic potential has {} exponents for a {dim}d grid",
                        p.len()
                    )));
                }
                Potential::anisotropic(p)
            }
            PotentialConfig::Registered { name, params } => {
                let pot = potential::build_registered(name, params)?;
                if pot.dim() != dim {
                    return Err(Error::Config(format!(
                        "registered potential '{name}' has dim {} on a {dim}d grid",
                        pot.dim()
                    )));
                }
                Ok(pot)
            }
        }
    }

    /// Builds the Wiener config (seed from the experiment block) and the
    /// diffusion operator.
    pub fn build_noise_operator(&self, grid: &Grid) -> Result<(WienerConfig, DiffusionOperator)> {
        let modes = self.noise.modes.unwrap_or(grid.len().min(16));
        let basis = SpectralBasis::new(*grid, modes)?;
        let wiener = WienerConfig {
            modes,
            seed: self.experiment.seed,
            basis: basis.clone(),
        };
        let weights = DiffusionOperator::power_weights(
            modes,
            self.noise.q_scale,
            self.noise.q_decay.unwrap_or(1.1),
        );
        let op = match self.noise.kind {
            NoiseKind::Additive => {
                let profile = match self.noise.time_profile.unwrap_or(TimeProfileConfig::Constant) {
                    TimeProfileConfig::Constant => TimeProfile::Constant,
                    TimeProfileConfig::ExpDecay { rate } => TimeProfile::ExpDecay { rate },
                };
                DiffusionOperator::additive(basis, weights, profile)?
            }
            NoiseKind::Multiplicative => {
                let sigma = match self.noise.sigma.unwrap_or(SigmaConfig::Tanh) {
                    SigmaConfig::IdentityClipped { cap } => Sigma::IdentityClipped { cap },
                    SigmaConfig::Tanh => Sigma::Tanh,
                    SigmaConfig::Affine { gain, offset } => Sigma::Affine { gain, offset },
                };
                DiffusionOperator::multiplicative(basis, weights, sigma)?
            }
        };
        Ok((wiener, op))
    }

    pub fn build_initial(&self, grid: &Grid) -> Result<crate::grid::Field> {
        match self.initial.as_ref() {
            None | Some(InitialConfig::Zero) => Ok(grid.zeros()),
            Some(InitialConfig::SineModes { modes, amplitudes }) => {
                if modes.len() != amplitudes.len() {
                    return Err(Error::Config(
                        "initial sine_modes needs one amplitude per mode".into(),
                    ));
                }
                let mut f = grid.zeros();
                for (k, &a) in modes.iter().zip(amplitudes) {
                    f = f.axpy(a, &grid.sine_mode(*k));
                }
                Ok(f)
            }
            Some(InitialConfig::Values { values }) => crate::grid::Field::new(*grid, values.clone()),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        Ok(SolverConfig {
            lambda: s.lambda,
            epsilon: s.epsilon.unwrap_or(0.0),
            m: s.m.unwrap_or(1),
            tau: s.tau,
            t_final: s.t_final,
            alpha: s.alpha.unwrap_or(0.0),
            picard_tol: s.picard_tol.unwrap_or(1e-8),
            picard_max: s.picard_max.unwrap_or(50),
            scheme: s.scheme.unwrap_or(Scheme::ExplicitDrift),
            cfl_c: s.cfl_c.unwrap_or(0.25),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Manifest {
    pub fn new(config: RunConfig, seed: u64, seed_overridden: bool) -> Manifest {
        Manifest {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            seed_overridden,
            config,
        }
    }
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_config() -> RunConfig {
        RunConfig {
            grid: GridConfig {
                dim: 1,
                extent: vec![1.0],
                nodes: vec![16],
            },
            potential: PotentialConfig::PPower { p: 3.0 },
            noise: NoiseConfig {
                kind: NoiseKind::Multiplicative,
                modes: Some(6),
                q_scale: 0.1,
                q_decay: None,
                sigma: None,
                time_profile: None,
            },
            solver: SolverBlock {
                lambda: 0.2,
                epsilon: None,
                m: None,
                tau: 1e-4,
                t_final: 0.01,
                alpha: None,
                picard_tol: None,
                picard_max: None,
                scheme: None,
                cfl_c: None,
            },
            experiment: ExperimentConfig {
                kind: ExperimentKind::Solve,
                paths: Some(3),
                seed: 11,
                output_dir: "out".into(),
                snapshot_times: vec![],
                workers: None,
                ladders: None,
                ui_thresholds: vec![],
                dump_noise: None,
            },
            initial: None,
        }
    }

    #[test]
    fn resolve_fills_every_default() {
        let resolved = sample_config().resolve().unwrap();
        assert!(resolved.noise.q_decay.is_some());
        assert!(resolved.noise.sigma.is_some());
        assert!(resolved.solver.epsilon.is_some());
        assert!(resolved.solver.m.is_some());
        assert!(resolved.solver.alpha.is_some());
        assert!(resolved.solver.alpha.unwrap() > 0.0);
        assert!(resolved.solver.picard_tol.is_some());
        assert!(resolved.solver.scheme.is_some());
        assert!(resolved.solver.cfl_c.is_some());
        assert!(resolved.experiment.workers.is_some());
        assert!(resolved.experiment.dump_noise.is_some());
        assert!(!resolved.experiment.ui_thresholds.is_empty());
        assert!(resolved.initial.is_some());
    }

    #[test]
    fn resolved_config_roundtrips_identically() {
        let resolved = sample_config().resolve().unwrap();
        let text = resolved.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(resolved, back);
        let again = back.to_json().unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn manifest_is_a_valid_config_input() {
        let resolved = sample_config().resolve().unwrap();
        let manifest = Manifest::new(resolved.clone(), 11, false);
        let text = serde_json::to_string_pretty(&manifest).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(resolved, back);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut bad = sample_config();
        bad.solver.tau = 1.0; // exceeds both t_final and the CFL bound
        assert!(bad.resolve().is_err());

        let mut bad = sample_config();
        bad.grid.dim = 3;
        assert!(bad.resolve().is_err());

        let mut bad = sample_config();
        bad.potential = PotentialConfig::PPower { p: 0.5 };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn fmt_roundtrip_exact() {
        for x in [std::f64::consts::PI, 1.0 / 3.0, 1e-300, -2.5e17] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
