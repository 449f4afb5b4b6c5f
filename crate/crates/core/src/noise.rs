//! Truncated cylindrical Wiener process and Hilbert-Schmidt diffusion
//! operators.
//!
//! The noise is expanded in the first `M` discrete Dirichlet-Laplacian
//! eigenmodes, so the mollifier `(I − εΔ)^{-m}` acts diagonally on the
//! additive operator (mode `j` is rescaled by `(1 + ε μ_j)^{-m}`) and the
//! smoothing is exact instead of approximate. Increments are counter-based
//! (see [`crate::rng`]): a noise path is a pure function of
//! `(seed, step, mode)`.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::rng;
use std::sync::Arc;

/// The first `M` Dirichlet eigenmodes of a grid, ordered by eigenvalue,
/// together with the data the diffusion operators need.
#[derive(Debug)]
pub struct SpectralBasis {
    grid: Grid,
    modes: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    sup_norms: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(grid: Grid, m: usize) -> Result<Arc<Self>> {
        let max_modes = grid.len();
        if m == 0 || m > max_modes {
            return Err(Error::Config(format!(
                "mode count {m} outside 1..={max_modes} for this grid"
            )));
        }
        let mut indices: Vec<[usize; 2]> = Vec::new();
        if grid.dim() == 1 {
            for k in 1..=grid.nodes()[0] {
                indices.push([k, 1]);
            }
        } else {
            for ky in 1..=grid.nodes()[1] {
                for kx in 1..=grid.nodes()[0] {
                    indices.push([kx, ky]);
                }
            }
        }
        indices.sort_by(|a, b| {
            grid.sine_eigenvalue(*a)
                .partial_cmp(&grid.sine_eigenvalue(*b))
                .unwrap()
        });
        indices.truncate(m);
        let mut modes = Vec::with_capacity(m);
        let mut eigenvalues = Vec::with_capacity(m);
        let mut sup_norms = Vec::with_capacity(m);
        for k in indices {
            let f = grid.sine_mode(k);
            eigenvalues.push(grid.sine_eigenvalue(k));
            sup_norms.push(f.linf());
            modes.push(f.values);
        }
        Ok(Arc::new(SpectralBasis {
            grid,
            modes,
            eigenvalues,
            sup_norms,
        }))
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mode(&self, j: usize) -> &[f64] {
        &self.modes[j]
    }

    pub fn eigenvalue(&self, j: usize) -> f64 {
        self.eigenvalues[j]
    }

    pub fn sup_norm(&self, j: usize) -> f64 {
        self.sup_norms[j]
    }
}

/// Truncation level, seed, and basis of the driving Wiener process.
#[derive(Clone, Debug)]
pub struct WienerConfig {
    pub modes: usize,
    pub seed: u64,
    pub basis: Arc<SpectralBasis>,
}

impl WienerConfig {
    pub fn new(grid: Grid, modes: usize, seed: u64) -> Result<Self> {
        Ok(WienerConfig {
            modes,
            seed,
            basis: SpectralBasis::new(grid, modes)?,
        })
    }

    /// Same process, reseeded for ensemble path `k`.
    pub fn for_path(&self, path: u64) -> WienerConfig {
        WienerConfig {
            modes: self.modes,
            seed: rng::path_seed(self.seed, path),
            basis: self.basis.clone(),
        }
    }
}

/// Increments `ΔW_{n,j} ~ N(0, τ)`, row-major in (step, mode).
/// Reproducible bit-exactly from `(seed, modes, steps, tau)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub tau: f64,
    pub steps: usize,
    pub modes: usize,
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.increments[n * self.modes..(n + 1) * self.modes]
    }

    /// Sums consecutive blocks of `factor` increments: the same Brownian
    /// path seen on a grid coarsened by `factor`. This is the coupling
    /// used by every τ-refinement experiment.
    pub fn coarsen(&self, factor: usize) -> NoisePath {
        assert!(factor >= 1 && self.steps.is_multiple_of(factor));
        let steps = self.steps / factor;
        let mut increments = vec![0.0; steps * self.modes];
        for n in 0..steps {
            for k in 0..factor {
                let src = (n * factor + k) * self.modes;
                for j in 0..self.modes {
                    increments[n * self.modes + j] += self.increments[src + j];
                }
            }
        }
        NoisePath {
            seed: self.seed,
            tau: self.tau * factor as f64,
            steps,
            modes: self.modes,
            increments,
        }
    }
}

/// Draws a full increment table for one path. Entries are i.i.d.
/// `N(0, τ)` from the counter generator keyed by `(seed, step, mode)`;
/// identical arguments give an identical table.
pub fn sample_increments(cfg: &WienerConfig, steps: usize, tau: f64) -> NoisePath {
    debug_assert!(steps >= 1 && tau > 0.0);
    let sqrt_tau = tau.sqrt();
    let mut increments = vec![0.0; steps * cfg.modes];
    for n in 0..steps {
        for j in 0..cfg.modes {
            increments[n * cfg.modes + j] =
                sqrt_tau * rng::standard_normal(cfg.seed, n as u64, j as u64, 0);
        }
    }
    NoisePath {
        seed: cfg.seed,
        tau,
        steps,
        modes: cfg.modes,
        increments,
    }
}

/// Scalar nonlinearity `σ` of the multiplicative family
/// `(B(u)e_j)(x) = σ(u(x)) q_j e_j(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sigma {
    /// `σ(u) = clamp(u, -cap, cap)`; Lipschitz constant 1.
    IdentityClipped { cap: f64 },
    /// `σ(u) = tanh(u)`; Lipschitz constant 1.
    Tanh,
    /// `σ(u) = gain·u + offset`; Lipschitz constant |gain|.
    Affine { gain: f64, offset: f64 },
}

impl Sigma {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Sigma::IdentityClipped { cap } => u.clamp(-cap, *cap),
            Sigma::Tanh => u.tanh(),
            Sigma::Affine { gain, offset } => gain * u + offset,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Sigma::IdentityClipped { .. } | Sigma::Tanh => 1.0,
            Sigma::Affine { gain, .. } => gain.abs(),
        }
    }
}

/// Scalar time modulation of the additive operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile {
    Constant,
    /// `exp(-rate·t)`
    ExpDecay { rate: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::ExpDecay { rate } => (-rate * t).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffusionKind {
    Additive,
    Multiplicative,
}

/// Hilbert-Schmidt diffusion operator on the truncated basis, either
/// additive `G(t)` or Lipschitz-multiplicative `B(t, u)`.
///
/// Mollification by `(I − εΔ)^{-m}` folds into the mode weights exactly
/// in the additive case; in the multiplicative case the smoother is kept
/// and applied to the assembled increments.
#[derive(Clone, Debug)]
pub struct DiffusionOperator {
    kind: DiffusionKind,
    basis: Arc<SpectralBasis>,
    weights: Vec<f64>,
    sigma: Sigma,
    time_profile: TimeProfile,
    smoothing: Option<(f64, usize)>,
}

impl DiffusionOperator {
    pub fn additive(
        basis: Arc<SpectralBasis>,
        weights: Vec<f64>,
        time_profile: TimeProfile,
    ) -> Result<Self> {
        if weights.len() != basis.len() {
            return Err(Error::Config(format!(
                "{} mode weights for a basis of {} modes",
                weights.len(),
                basis.len()
            )));
        }
        Ok(DiffusionOperator {
            kind: DiffusionKind::Additive,
            basis,
            weights,
            sigma: Sigma::Affine { gain: 0.0, offset: 1.0 },
            time_profile,
            smoothing: None,
        })
    }

    pub fn multiplicative(basis: Arc<SpectralBasis>, weights: Vec<f64>, sigma: Sigma) -> Result<Self> {
        if weights.len() != basis.len() {
            return Err(Error::Config(format!(
                "{} mode weights for a basis of {} modes",
                weights.len(),
                basis.len()
            )));
        }
        Ok(DiffusionOperator {
            kind: DiffusionKind::Multiplicative,
            basis,
            weights,
            sigma,
            time_profile: TimeProfile::Constant,
            smoothing: None,
        })
    }

    /// Default square-summable weight family `q_j = scale · (j+1)^{-decay}`.
    pub fn power_weights(modes: usize, scale: f64, decay: f64) -> Vec<f64> {
        (0..modes)
            .map(|j| scale * ((j + 1) as f64).powf(-decay))
            .collect()
    }

    pub fn kind(&self) -> DiffusionKind {
        self.kind
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> Sigma {
        self.sigma
    }

    /// `√(Σ_j q_j² ‖e_j‖²_∞)` — the basis factor turning the scalar
    /// Lipschitz constant of σ into an HS-Lipschitz constant for `B`.
    pub fn basis_sup_factor(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, q)| (q * self.basis.sup_norm(j)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// HS-Lipschitz bound `‖B(u) − B(v)‖_HS ≤ L ‖u − v‖_{L²}`.
    pub fn hs_lipschitz(&self) -> f64 {
        match self.kind {
            DiffusionKind::Additive => 0.0,
            DiffusionKind::Multiplicative => self.sigma.lipschitz() * self.basis_sup_factor(),
        }
    }

    /// `Σ_j (B(t,u) e_j) ΔW_j` as a field. `dw` must hold one increment
    /// per mode.
    pub fn apply(&self, t: f64, u: &Field, dw: &[f64]) -> Result<Field> {
        assert_eq!(dw.len(), self.weights.len());
        let grid = self.basis.grid();
        let mut combined = vec![0.0; grid.len()];
        for (j, (&q, &dwj)) in self.weights.iter().zip(dw).enumerate() {
            let c = q * dwj;
            if c == 0.0 {
                continue;
            }
            for (o, &e) in combined.iter_mut().zip(self.basis.mode(j)) {
                *o += c * e;
            }
        }
        let mut out = Field::new(grid, combined)?;
        match self.kind {
            DiffusionKind::Additive => {
                let p = self.time_profile.eval(t);
                if p != 1.0 {
                    out = out.scaled(p);
                }
            }
            DiffusionKind::Multiplicative => {
                for (o, &uv) in out.values.iter_mut().zip(&u.values) {
                    *o *= self.sigma.eval(uv);
                }
            }
        }
        if let Some((eps, m)) = self.smoothing {
            out = grid.resolvent_smoother(&out, eps, m)?;
        }
        Ok(out)
    }

    /// Squared Hilbert-Schmidt norm `Σ_j ‖(B(t,u) e_j)‖²_{L²}`; the
    /// integrand of the Itô correction term.
    pub fn hs_norm_sq(&self, t: f64, u: &Field) -> Result<f64> {
        let grid = self.basis.grid();
        match self.kind {
            DiffusionKind::Additive => {
                let p = self.time_profile.eval(t);
                // modes are orthonormal in the discrete L² inner product
                Ok(p * p * self.weights.iter().map(|q| q * q).sum::<f64>())
            }
            DiffusionKind::Multiplicative => {
                let vol = grid.cell_volume();
                let sig_sq: Vec<f64> = u
                    .values
                    .iter()
                    .map(|&v| {
                        let s = self.sigma.eval(v);
                        s * s
                    })
                    .collect();
                let mut total = 0.0;
                for (j, &q) in self.weights.iter().enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    if let Some((eps, m)) = self.smoothing {
                        let mut comp = vec![0.0; grid.len()];
                        for ((c, &e), &uv) in comp.iter_mut().zip(self.basis.mode(j)).zip(&u.values) {
                            *c = q * self.sigma.eval(uv) * e;
                        }
                        let smoothed = grid.resolvent_smoother(&Field::new(grid, comp)?, eps, m)?;
                        total += smoothed.l2().powi(2);
                    } else {
                        let sum: f64 = self
                            .basis
                            .mode(j)
                            .iter()
                            .zip(&sig_sq)
                            .map(|(&e, &s)| s * e * e)
                            .sum();
                        total += q * q * sum * vol;
                    }
                }
                Ok(total)
            }
        }
    }

    /// `(I − εΔ)^{-m} B`. Contracts the HS norm; for the additive kind the
    /// rescaling of each eigenmode is exact and folded into the weights.
    pub fn mollify(&self, epsilon: f64, m: usize) -> Result<DiffusionOperator> {
        if epsilon <= 0.0 || epsilon.is_nan() || m == 0 {
            return Err(Error::Config(format!(
                "mollify needs epsilon > 0 and m >= 1, got ({epsilon}, {m})"
            )));
        }
        let mut out = self.clone();
        match self.kind {
            DiffusionKind::Additive => {
                for (j, w) in out.weights.iter_mut().enumerate() {
                    *w *= (1.0 + epsilon * self.basis.eigenvalue(j)).powi(-(m as i32));
                }
            }
            DiffusionKind::Multiplicative => {
                out.smoothing = Some((epsilon, m));
            }
        }
        Ok(out)
    }
}

/// Monte Carlo check of Itô's isometry for a frozen state `u`:
/// `E ‖Σ_n B(t_n, u) ΔW_n‖² = Σ_n τ ‖B(t_n, u)‖²_HS`.
#[derive(Clone, Copy, Debug)]
pub struct IsometryReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

pub fn ito_isometry_check(
    op: &DiffusionOperator,
    cfg: &WienerConfig,
    paths: usize,
    steps: usize,
    tau: f64,
    u: &Field,
) -> Result<IsometryReport> {
    let mut rhs = 0.0;
    for n in 0..steps {
        rhs += tau * op.hs_norm_sq(n as f64 * tau, u)?;
    }
    let mut lhs = 0.0;
    for p in 0..paths {
        let noise = sample_increments(&cfg.for_path(p as u64), steps, tau);
        let mut acc = op.basis().grid().zeros();
        for n in 0..steps {
            let g = op.apply(n as f64 * tau, u, noise.row(n))?;
            acc = acc.axpy(1.0, &g);
        }
        lhs += acc.l2().powi(2);
    }
    lhs /= paths as f64;
    let rel_err = if rhs == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (lhs - rhs).abs() / rhs
    };
    Ok(IsometryReport { lhs, rhs, rel_err })
}
