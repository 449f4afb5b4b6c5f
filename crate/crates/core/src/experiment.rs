//! Experiment execution behind the CLI: `solve`, `verify`, `converge`,
//! and `potential-table`, each consuming one resolved [`RunConfig`] and
//! emitting a manifest plus result files into the output directory.
//!
//! Ensembles run path-parallel, but aggregation always walks the results
//! in path order with compensated summation, so emitted CSV bytes are
//! identical across worker counts.

use crate::config::{fmt_f64, ExperimentKind, Manifest, NoiseKind, RunConfig, SEED_ENV_VAR};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::noise::{sample_increments, DiffusionOperator, NoisePath, WienerConfig};
use crate::potential::Potential;
use crate::rng;
use crate::solver::{
    effective_operator, kappa_diagnostics, run_ensemble, solve_additive, solve_multiplicative,
    KappaDiagnostics, SolutionPath, SolverConfig,
};
use crate::verify::{
    deterministic_energy_identity, energy_identity_residual, maximal_estimate_check, path_ui_sums,
    UiAccumulator,
};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

/// Machine-readable failure record; also written to `error.json` when the
/// output directory exists.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suggested_tau: Option<f64>,
}

impl ErrorRecord {
    pub fn from_error(err: &Error) -> ErrorRecord {
        let message = err.to_string();
        let kind = if message.starts_with("invalid configuration: config_not_found") {
            "config_not_found"
        } else {
            err.kind()
        };
        ErrorRecord {
            kind,
            message,
            suggested_tau: match err {
                Error::StabilityViolation { suggested_tau, .. } => Some(*suggested_tau),
                _ => None,
            },
        }
    }
}

/// Loads, resolves, and executes a config file. `seed_override` (CLI flag)
/// wins over the `DIVFLOW_SEED` environment variable, which wins over the
/// config; any override is recorded in the manifest.
pub fn run(
    config_path: &Path,
    output_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunOutcome> {
    run_as(config_path, output_override, seed_override, None)
}

/// Like [`run`], forcing the experiment kind (the `potential-table`
/// subcommand inspects any config's potential block).
pub fn run_as(
    config_path: &Path,
    output_override: Option<&Path>,
    seed_override: Option<u64>,
    kind_override: Option<ExperimentKind>,
) -> Result<RunOutcome> {
    let mut config = RunConfig::from_file(config_path)?;
    let env_seed = std::env::var(SEED_ENV_VAR)
        .ok()
        .and_then(|s| s.parse::<u64>().ok());
    let overridden = seed_override.or(env_seed);
    if let Some(seed) = overridden {
        config.experiment.seed = seed;
    }
    if let Some(dir) = output_override {
        config.experiment.output_dir = dir.to_string_lossy().into_owned();
    }
    if let Some(kind) = kind_override {
        config.experiment.kind = kind;
    }
    let out_dir = PathBuf::from(&config.experiment.output_dir);
    let result = (|| {
        let config = config.resolve()?;
        fs::create_dir_all(&out_dir)?;
        execute(&config, &out_dir, overridden.is_some())
    })();
    if let Err(ref err) = result {
        let record = ErrorRecord::from_error(err);
        if fs::create_dir_all(&out_dir).is_ok() {
            let _ = fs::write(
                out_dir.join("error.json"),
                serde_json::to_string_pretty(&record).unwrap_or_default(),
            );
        }
    }
    result
}

fn execute(config: &RunConfig, out_dir: &Path, seed_overridden: bool) -> Result<RunOutcome> {
    let manifest = Manifest::new(config.clone(), config.experiment.seed, seed_overridden);
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut files = vec!["manifest.json".to_string()];
    match config.experiment.kind {
        ExperimentKind::Solve => run_solve(config, out_dir, &mut files)?,
        ExperimentKind::Verify => run_verify(config, out_dir, &mut files)?,
        ExperimentKind::Converge => run_converge(config, out_dir, &mut files)?,
        ExperimentKind::PotentialTable => run_potential_table(config, out_dir, &mut files)?,
    }
    Ok(RunOutcome {
        output_dir: out_dir.to_path_buf(),
        files,
    })
}

/// Everything a single path solve needs, resolved once.
struct RunEnv {
    grid: Grid,
    potential: Potential,
    wiener: WienerConfig,
    op: DiffusionOperator,
    u0: Field,
    cfg: SolverConfig,
    kind: NoiseKind,
}

impl RunEnv {
    fn build(config: &RunConfig) -> Result<RunEnv> {
        let grid = config.build_grid()?;
        let potential = config.build_potential(&grid)?;
        let (wiener, op) = config.build_noise_operator(&grid)?;
        let u0 = config.build_initial(&grid)?;
        let cfg = config.solver_config()?;
        cfg.validate(&grid)?;
        Ok(RunEnv {
            grid,
            potential,
            wiener,
            op,
            u0,
            cfg,
            kind: config.noise.kind,
        })
    }

    fn noise_for_path(&self, path: usize, steps: usize, tau: f64) -> NoisePath {
        sample_increments(&self.wiener.for_path(path as u64), steps, tau)
    }

    fn solve_path(&self, noise: &NoisePath, cfg: &SolverConfig) -> Result<(SolutionPath, Option<PicardInfo>)> {
        match self.kind {
            NoiseKind::Additive => {
                let path = solve_additive(&self.potential, &self.grid, &self.op, &self.u0, cfg, noise)?;
                Ok((path, None))
            }
            NoiseKind::Multiplicative => {
                let solved =
                    solve_multiplicative(&self.potential, &self.grid, &self.op, &self.u0, cfg, noise)?;
                Ok((
                    solved.path,
                    Some(PicardInfo {
                        picard_iters: solved.picard_iters,
                        contraction_ratios: solved.contraction_ratios,
                    }),
                ))
            }
        }
    }

    /// Operator actually used inside the stepping (after mollification).
    fn stepped_operator(&self, cfg: &SolverConfig) -> Result<DiffusionOperator> {
        effective_operator(&self.op, cfg)
    }
}

#[derive(Clone, Debug, Serialize)]
struct PicardInfo {
    picard_iters: usize,
    contraction_ratios: Vec<f64>,
}

#[derive(Serialize)]
struct PathSummary {
    path: usize,
    seed: u64,
    final_l2: f64,
    kappa: KappaDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    picard: Option<PicardInfo>,
}

/// Neumaier compensated sum; aggregation stays order-defined and
/// insensitive to magnitude cancellation.
#[derive(Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn write_file(out_dir: &Path, name: &str, contents: &str, files: &mut Vec<String>) -> Result<()> {
    fs::write(out_dir.join(name), contents)?;
    files.push(name.to_string());
    Ok(())
}

fn run_solve(config: &RunConfig, out_dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let env = RunEnv::build(config)?;
    let paths = config.experiment.paths.unwrap_or(1);
    let workers = config.experiment.workers.filter(|&w| w > 0);
    let steps = env.cfg.steps();
    let snapshot_times = &config.experiment.snapshot_times;

    struct PathResult {
        summary: PathSummary,
        l2_series: Vec<f64>,
        snapshots: Vec<(f64, Field)>,
        noise: Option<NoisePath>,
    }

    let dump_noise = config.experiment.dump_noise == Some(true);
    let results = run_ensemble(paths, workers, |k| {
        let noise = env.noise_for_path(k, steps, env.cfg.tau);
        let (path, picard) = env.solve_path(&noise, &env.cfg)?;
        let kappa = kappa_diagnostics(&path, &env.potential)?;
        let l2_series: Vec<f64> = path.fields.iter().map(Field::l2).collect();
        let mut snapshots = Vec::new();
        if k == 0 {
            for &t in snapshot_times {
                let n = ((t / env.cfg.tau).round() as usize).min(steps);
                snapshots.push((path.times[n], path.fields[n].clone()));
            }
        }
        Ok(PathResult {
            summary: PathSummary {
                path: k,
                seed: rng::path_seed(env.wiener.seed, k as u64),
                final_l2: path.endpoint().l2(),
                kappa,
                picard,
            },
            l2_series,
            snapshots,
            noise: if k == 0 && dump_noise { Some(noise) } else { None },
        })
    })?;

    // ensemble.csv: time, mean L2, variance of L2 across paths
    let mut csv = String::from("time,mean_l2,var_l2\n");
    for n in 0..=steps {
        let mut s = Compensated::default();
        let mut s2 = Compensated::default();
        for r in &results {
            let x = r.l2_series[n];
            s.add(x);
            s2.add(x * x);
        }
        let mean = s.value() / paths as f64;
        let var = (s2.value() / paths as f64 - mean * mean).max(0.0);
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(n as f64 * env.cfg.tau),
            fmt_f64(mean),
            fmt_f64(var)
        ));
    }
    write_file(out_dir, "ensemble.csv", &csv, files)?;

    let summaries: Vec<&PathSummary> = results.iter().map(|r| &r.summary).collect();
    write_file(
        out_dir,
        "paths.json",
        &serde_json::to_string_pretty(&summaries)?,
        files,
    )?;

    for (i, (t, field)) in results[0].snapshots.iter().enumerate() {
        let snap = serde_json::json!({
            "grid": config.grid,
            "time": t,
            "values": field.values,
        });
        write_file(
            out_dir,
            &format!("snapshot_{i}.json"),
            &serde_json::to_string_pretty(&snap)?,
            files,
        )?;
        let mut field_csv = String::from("value\n");
        for v in &field.values {
            field_csv.push_str(&fmt_f64(*v));
            field_csv.push('\n');
        }
        write_file(out_dir, &format!("snapshot_{i}.csv"), &field_csv, files)?;
    }

    if let Some(noise) = results.first().and_then(|r| r.noise.as_ref()) {
        let header = serde_json::json!({
            "seed": noise.seed,
            "tau": noise.tau,
            "steps": noise.steps,
            "modes": noise.modes,
            "layout": "row-major (step, mode), little-endian f64",
        });
        write_file(
            out_dir,
            "noise_path0.json",
            &serde_json::to_string_pretty(&header)?,
            files,
        )?;
        let mut bin = fs::File::create(out_dir.join("noise_path0.bin"))?;
        for v in &noise.increments {
            bin.write_all(&v.to_le_bytes())?;
        }
        files.push("noise_path0.bin".to_string());
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnosticRow {
    check_name: String,
    lhs: f64,
    rhs: f64,
    slack: f64,
    pass: bool,
}

fn run_verify(config: &RunConfig, out_dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let env = RunEnv::build(config)?;
    let paths = config.experiment.paths.unwrap_or(1);
    let workers = config.experiment.workers.filter(|&w| w > 0);
    let base_tau = env.cfg.tau;
    let ladder: Vec<f64> = config
        .experiment
        .ladders
        .as_ref()
        .map(|l| l.tau.clone())
        .filter(|l| !l.is_empty())
        .unwrap_or_else(|| vec![base_tau, base_tau / 2.0, base_tau / 4.0]);
    let factors = tau_ladder_factors(&ladder)?;
    let fine_tau = *ladder.last().unwrap();
    let fine_steps = (env.cfg.t_final / fine_tau).round() as usize;

    struct PathVerify {
        residuals: Vec<f64>,
        det_residual: f64,
        kappa: KappaDiagnostics,
        ui: crate::verify::PathUiSums,
    }
    let thresholds = config.experiment.ui_thresholds.clone();
    let results = run_ensemble(paths, workers, |k| {
        let fine = env.noise_for_path(k, fine_steps, fine_tau);
        let mut residuals = Vec::with_capacity(ladder.len());
        let mut det_residual = 0.0;
        let mut kappa = KappaDiagnostics::default();
        let mut ui = None;
        for (li, &factor) in factors.iter().enumerate() {
            let noise = fine.coarsen(factor);
            let mut cfg = env.cfg;
            cfg.tau = noise.tau;
            let (path, _) = env.solve_path(&noise, &cfg)?;
            let op = env.stepped_operator(&cfg)?;
            let ledger = energy_identity_residual(&path, &op, 0.0)?;
            residuals.push(ledger.residual);
            if li + 1 == factors.len() {
                // finest level: deterministic identity + class diagnostics
                let mut forcing = vec![env.grid.zeros()];
                for n in 0..path.steps() {
                    let g = op.apply(path.times[n], &path.fields[n], path.noise.row(n))?;
                    forcing.push(forcing[n].axpy(1.0, &g));
                }
                let fluxes: Vec<_> = (0..path.steps()).map(|n| path.full_flux(n)).collect();
                det_residual =
                    deterministic_energy_identity(&path.fields, &fluxes, &forcing, cfg.tau)?;
                kappa = kappa_diagnostics(&path, &env.potential)?;
                ui = Some(path_ui_sums(&path, &env.potential, &thresholds)?);
            }
        }
        Ok(PathVerify {
            residuals,
            det_residual,
            kappa,
            ui: ui.unwrap(),
        })
    })?;

    let mut csv = String::from("tau,path,residual\n");
    for (k, r) in results.iter().enumerate() {
        for (li, res) in r.residuals.iter().enumerate() {
            csv.push_str(&format!("{},{k},{}\n", fmt_f64(ladder[li]), fmt_f64(*res)));
        }
    }
    write_file(out_dir, "residuals.csv", &csv, files)?;

    let mut rows = Vec::new();
    // energy residual refinement rate per adjacent ladder pair
    for li in 1..ladder.len() {
        let mut rates: Vec<f64> = results
            .iter()
            .filter(|r| r.residuals[li].abs() > 0.0)
            .map(|r| (r.residuals[li - 1].abs() / r.residuals[li].abs()).log2())
            .collect();
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if rates.is_empty() { 0.0 } else { rates[rates.len() / 2] };
        let expected = (ladder[li - 1] / ladder[li]).log2();
        rows.push(DiagnosticRow {
            check_name: format!("energy_residual_rate_level_{li}"),
            lhs: median,
            rhs: expected,
            slack: 1.0 - (median - expected).abs(),
            pass: (median - expected).abs() <= 1.0,
        });
    }
    let worst_det = results
        .iter()
        .map(|r| r.det_residual.abs())
        .fold(0.0f64, f64::max);
    rows.push(DiagnosticRow {
        check_name: "deterministic_energy_identity".into(),
        lhs: worst_det,
        rhs: 1e-10,
        slack: 1e-10 - worst_det,
        pass: worst_det <= 1e-10,
    });
    let kappa_max = results
        .iter()
        .map(|r| {
            r.kappa
                .sup_l2_sq
                .max(r.kappa.int_w11)
                .max(r.kappa.int_abs_gamma)
                .max(r.kappa.int_k_plus_kstar)
        })
        .fold(0.0f64, f64::max);
    rows.push(DiagnosticRow {
        check_name: "kappa_integrals_finite".into(),
        lhs: kappa_max,
        rhs: f64::MAX,
        slack: f64::MAX - kappa_max,
        pass: kappa_max.is_finite(),
    });

    let mut acc = UiAccumulator::new(&env.potential, &thresholds);
    for r in &results {
        acc.merge(r.ui.clone());
    }
    let ui_report = acc.finalize()?;
    for row in &ui_report.rows {
        rows.push(DiagnosticRow {
            check_name: format!("uniform_integrability_tail_r_{}", row.threshold),
            lhs: row.tail_mass,
            rhs: row.majorant,
            slack: row.majorant - row.tail_mass,
            pass: row.tail_mass <= row.majorant + 1e-12,
        });
    }

    // maximal estimate on the deterministic trajectory with an additive
    // operator carrying the configured weights
    let det_noise = NoisePath {
        seed: 0,
        tau: env.cfg.tau,
        steps: env.cfg.steps(),
        modes: env.wiener.modes,
        increments: vec![0.0; env.cfg.steps() * env.wiener.modes],
    };
    let zero_op = DiffusionOperator::additive(
        env.wiener.basis.clone(),
        vec![0.0; env.wiener.modes],
        crate::noise::TimeProfile::Constant,
    )?;
    let det_path = solve_additive(&env.potential, &env.grid, &zero_op, &env.u0, &env.cfg, &det_noise)?;
    let g_op = DiffusionOperator::additive(
        env.wiener.basis.clone(),
        DiffusionOperator::power_weights(
            env.wiener.modes,
            config.noise.q_scale,
            config.noise.q_decay.unwrap_or(1.1),
        ),
        crate::noise::TimeProfile::Constant,
    )?;
    let report = maximal_estimate_check(
        &det_path.fields[..det_path.steps()],
        &g_op,
        &env.wiener,
        paths.max(100),
        env.cfg.tau,
        &[0.1, 0.2, 0.4],
        None,
    )?;
    for r in &report.rows {
        rows.push(DiagnosticRow {
            check_name: format!("maximal_estimate_eps_{}", r.eps),
            lhs: r.lhs,
            rhs: r.rhs,
            slack: r.slack,
            pass: r.pass,
        });
    }

    write_file(
        out_dir,
        "diagnostics.json",
        &serde_json::to_string_pretty(&rows)?,
        files,
    )?;
    Ok(())
}

/// Coarsening factors (relative to the finest level) for a τ ladder given
/// coarsest-first; every level must be an integer multiple of the finest.
fn tau_ladder_factors(ladder: &[f64]) -> Result<Vec<usize>> {
    if ladder.is_empty() {
        return Err(Error::Config("tau ladder is empty".into()));
    }
    let fine = ladder.last().copied().unwrap();
    let mut factors = Vec::with_capacity(ladder.len());
    for &tau in ladder {
        let f = tau / fine;
        if (f - f.round()).abs() > 1e-9 || f < 1.0 {
            return Err(Error::Config(format!(
                "tau ladder entries must be integer multiples of the finest; {tau} vs {fine}"
            )));
        }
        factors.push(f.round() as usize);
    }
    Ok(factors)
}

fn run_converge(config: &RunConfig, out_dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let env = RunEnv::build(config)?;
    let paths = config.experiment.paths.unwrap_or(1);
    let workers = config.experiment.workers.filter(|&w| w > 0);
    let ladders = config
        .experiment
        .ladders
        .clone()
        .ok_or_else(|| Error::Config("converge experiment needs an experiment.ladders block".into()))?;
    let mut csv = String::from("ladder,level,param,metric,ratio\n");

    if !ladders.lambda.is_empty() {
        // common tau must satisfy the CFL bound of the smallest lambda
        let mut cfg = env.cfg;
        let lambda_min = ladders.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        cfg.lambda = lambda_min;
        cfg.validate(&env.grid)?;
        let steps = cfg.steps();
        // E max_n ‖u_λ − u_{λ'}‖² between adjacent levels, coupled noise
        let dists = run_ensemble(paths, workers, |k| {
            let noise = env.noise_for_path(k, steps, cfg.tau);
            let mut prev: Option<SolutionPath> = None;
            let mut dist = vec![0.0f64; ladders.lambda.len().saturating_sub(1)];
            for (li, &lambda) in ladders.lambda.iter().enumerate() {
                let mut c = cfg;
                c.lambda = lambda;
                let (path, _) = env.solve_path(&noise, &c)?;
                if let Some(p) = &prev {
                    let mut sup = 0.0f64;
                    for (a, b) in p.fields.iter().zip(&path.fields) {
                        sup = sup.max(a.axpy(-1.0, b).l2().powi(2));
                    }
                    dist[li - 1] = sup;
                }
                prev = Some(path);
            }
            Ok(dist)
        })?;
        if ladders.lambda.len() == 1 {
            push_singleton_row(&mut csv, "lambda", ladders.lambda[0]);
        } else {
            let means = mean_columns(&dists, ladders.lambda.len() - 1);
            push_ladder_rows(&mut csv, "lambda", &ladders.lambda[1..], &means);
        }
    }

    if !ladders.epsilon.is_empty() {
        if env.kind != NoiseKind::Additive {
            return Err(Error::Config(
                "epsilon ladder requires additive noise (the mollified equation)".into(),
            ));
        }
        let cfg = env.cfg;
        let steps = cfg.steps();
        let dists = run_ensemble(paths, workers, |k| {
            let noise = env.noise_for_path(k, steps, cfg.tau);
            let mut prev: Option<SolutionPath> = None;
            let mut dist = vec![0.0f64; ladders.epsilon.len().saturating_sub(1)];
            for (li, &eps) in ladders.epsilon.iter().enumerate() {
                let mut c = cfg;
                c.epsilon = eps;
                let (path, _) = env.solve_path(&noise, &c)?;
                if let Some(p) = &prev {
                    let mut sup = 0.0f64;
                    for (a, b) in p.fields.iter().zip(&path.fields) {
                        sup = sup.max(a.axpy(-1.0, b).l2().powi(2));
                    }
                    dist[li - 1] = sup;
                }
                prev = Some(path);
            }
            Ok(dist)
        })?;
        if ladders.epsilon.len() == 1 {
            push_singleton_row(&mut csv, "epsilon", ladders.epsilon[0]);
        } else {
            let means = mean_columns(&dists, ladders.epsilon.len() - 1);
            push_ladder_rows(&mut csv, "epsilon", &ladders.epsilon[1..], &means);
        }
    }

    if !ladders.tau.is_empty() {
        let factors = tau_ladder_factors(&ladders.tau)?;
        let fine_tau = *ladders.tau.last().unwrap();
        let fine_steps = (env.cfg.t_final / fine_tau).round() as usize;
        let residuals = run_ensemble(paths, workers, |k| {
            let fine = env.noise_for_path(k, fine_steps, fine_tau);
            let mut out = Vec::with_capacity(factors.len());
            for &factor in &factors {
                let noise = fine.coarsen(factor);
                let mut cfg = env.cfg;
                cfg.tau = noise.tau;
                let (path, _) = env.solve_path(&noise, &cfg)?;
                let op = env.stepped_operator(&cfg)?;
                out.push(energy_identity_residual(&path, &op, 0.0)?.residual.abs());
            }
            Ok(out)
        })?;
        let medians: Vec<f64> = (0..factors.len())
            .map(|li| {
                let mut col: Vec<f64> = residuals.iter().map(|r| r[li]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                col[col.len() / 2]
            })
            .collect();
        push_ladder_rows(&mut csv, "tau", &ladders.tau, &medians);
    }

    write_file(out_dir, "converge.csv", &csv, files)?;
    Ok(())
}

fn mean_columns(rows: &[Vec<f64>], cols: usize) -> Vec<f64> {
    let mut means = vec![0.0; cols];
    for li in 0..cols {
        let mut acc = Compensated::default();
        for r in rows {
            acc.add(r[li]);
        }
        means[li] = acc.value() / rows.len().max(1) as f64;
    }
    means
}

fn push_ladder_rows(csv: &mut String, name: &str, params: &[f64], metrics: &[f64]) {
    for (li, (&param, &metric)) in params.iter().zip(metrics).enumerate() {
        let ratio = if li == 0 {
            String::new()
        } else {
            fmt_f64(metric / metrics[li - 1])
        };
        csv.push_str(&format!(
            "{name},{li},{},{},{ratio}\n",
            fmt_f64(param),
            fmt_f64(metric)
        ));
    }
}

/// A one-level ladder has nothing to compare; it still gets its row.
fn push_singleton_row(csv: &mut String, name: &str, param: f64) {
    csv.push_str(&format!("{name},0,{},,\n", fmt_f64(param)));
}

fn run_potential_table(config: &RunConfig, out_dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let env = RunEnv::build(config)?;
    let p = &env.potential;
    let lambda = env.cfg.lambda;
    let dim = p.dim();
    let mut csv =
        String::from("s,k,gamma,gamma_lambda,moreau,conjugate_at_gamma,fy_gap,pluto_residual\n");
    let s_max = 2.0;
    let n = 101;
    for i in 0..n {
        let s = -s_max + 2.0 * s_max * i as f64 / (n - 1) as f64;
        let mut x = vec![0.0; dim];
        x[0] = s;
        let k = p.k(&x);
        let g = p.gamma(&x);
        let gl = p.yosida(lambda, &x)?;
        let m = p.moreau(lambda, &x)?;
        let conj = p.conjugate(&g)?;
        let gap = p.fenchel_young_gap(&x, &g)?;
        let pluto = p.pluto_identity_residual(lambda, &x)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_f64(s),
            fmt_f64(k),
            fmt_f64(g[0]),
            fmt_f64(gl[0]),
            fmt_f64(m),
            fmt_f64(conj),
            fmt_f64(gap),
            fmt_f64(pluto)
        ));
    }
    write_file(out_dir, "potential_table.csv", &csv, files)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        ExperimentConfig, GridConfig, InitialConfig, Ladders, NoiseConfig, PotentialConfig,
        SolverBlock,
    };
    use tempfile::TempDir;

    fn base_config(kind: ExperimentKind, out: &Path) -> RunConfig {
        RunConfig {
            grid: GridConfig {
                dim: 1,
                extent: vec![1.0],
                nodes: vec![12],
            },
            potential: PotentialConfig::PPower { p: 2.0 },
            noise: NoiseConfig {
                kind: NoiseKind::Additive,
                modes: Some(4),
                q_scale: 0.05,
                q_decay: None,
                sigma: None,
                time_profile: None,
            },
            solver: SolverBlock {
                lambda: 0.2,
                epsilon: None,
                m: None,
                tau: 2e-4,
                t_final: 0.01,
                alpha: None,
                picard_tol: None,
                picard_max: None,
                scheme: None,
                cfl_c: None,
            },
            experiment: ExperimentConfig {
                kind,
                paths: Some(4),
                seed: 7,
                output_dir: out.to_string_lossy().into_owned(),
                snapshot_times: vec![0.005],
                workers: Some(2),
                ladders: None,
                ui_thresholds: vec![],
                dump_noise: Some(true),
            },
            initial: Some(InitialConfig::SineModes {
                modes: vec![[1, 1]],
                amplitudes: vec![0.5],
            }),
        }
    }

    fn write_config(cfg: &RunConfig, dir: &Path) -> PathBuf {
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        path
    }

    #[test]
    fn solve_experiment_emits_expected_files() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let cfg = base_config(ExperimentKind::Solve, &out);
        let cfg_path = write_config(&cfg, tmp.path());
        let outcome = run(&cfg_path, None, None).unwrap();
        for f in ["manifest.json", "ensemble.csv", "paths.json", "snapshot_0.json", "noise_path0.bin"] {
            assert!(outcome.files.iter().any(|x| x == f), "missing {f}");
            assert!(out.join(f).exists());
        }
        let csv = std::fs::read_to_string(out.join("ensemble.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 50 + 1); // header + steps + initial
    }

    #[test]
    fn rerun_from_manifest_reproduces_csv_bytes() {
        let tmp = TempDir::new().unwrap();
        let out1 = tmp.path().join("a");
        let cfg = base_config(ExperimentKind::Solve, &out1);
        let cfg_path = write_config(&cfg, tmp.path());
        run(&cfg_path, None, None).unwrap();
        let out2 = tmp.path().join("b");
        run(&out1.join("manifest.json"), Some(&out2), None).unwrap();
        let a = std::fs::read(out1.join("ensemble.csv")).unwrap();
        let b = std::fs::read(out2.join("ensemble.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let tmp = TempDir::new().unwrap();
        let out1 = tmp.path().join("w1");
        let mut cfg = base_config(ExperimentKind::Solve, &out1);
        cfg.experiment.workers = Some(1);
        let p1 = tmp.path().join("config1.json");
        std::fs::write(&p1, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        run(&p1, None, None).unwrap();

        let out2 = tmp.path().join("w4");
        cfg.experiment.workers = Some(4);
        cfg.experiment.output_dir = out2.to_string_lossy().into_owned();
        let p2 = tmp.path().join("config4.json");
        std::fs::write(&p2, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        run(&p2, None, None).unwrap();

        let a = std::fs::read(out1.join("ensemble.csv")).unwrap();
        let b = std::fs::read(out2.join("ensemble.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn converge_ladders_emit_rows() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = base_config(ExperimentKind::Converge, &out);
        cfg.solver.lambda = 0.2;
        cfg.solver.tau = 5e-5;
        cfg.solver.t_final = 2e-3;
        cfg.experiment.ladders = Some(Ladders {
            lambda: vec![0.2, 0.1, 0.05],
            epsilon: vec![0.2, 0.1],
            tau: vec![2e-4, 1e-4, 5e-5],
        });
        let cfg_path = write_config(&cfg, tmp.path());
        run(&cfg_path, None, None).unwrap();
        let csv = std::fs::read_to_string(out.join("converge.csv")).unwrap();
        let lambda_rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("lambda,")).collect();
        let eps_rows = csv.lines().filter(|l| l.starts_with("epsilon,")).count();
        let tau_rows = csv.lines().filter(|l| l.starts_with("tau,")).count();
        assert_eq!((lambda_rows.len(), eps_rows, tau_rows), (2, 1, 3));
        // second λ row carries a contraction ratio below 1
        let ratio: f64 = lambda_rows[1].rsplit(',').next().unwrap().parse().unwrap();
        assert!(ratio > 0.0 && ratio < 1.0, "λ-ladder ratio {ratio}");
    }

    #[test]
    fn converge_singleton_ladder_single_row_no_ratio() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = base_config(ExperimentKind::Converge, &out);
        cfg.solver.tau = 5e-5;
        cfg.solver.t_final = 1e-3;
        cfg.experiment.paths = Some(1);
        cfg.experiment.ladders = Some(Ladders {
            lambda: vec![0.2],
            epsilon: vec![],
            tau: vec![],
        });
        let cfg_path = write_config(&cfg, tmp.path());
        run(&cfg_path, None, None).unwrap();
        let csv = std::fs::read_to_string(out.join("converge.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("lambda,")).collect();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].ends_with(",,"), "row should carry no metric or ratio: {}", rows[0]);
    }

    #[test]
    fn verify_emits_diagnostics() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = base_config(ExperimentKind::Verify, &out);
        cfg.experiment.paths = Some(6);
        cfg.solver.tau = 1e-4;
        cfg.solver.t_final = 4e-3;
        let cfg_path = write_config(&cfg, tmp.path());
        run(&cfg_path, None, None).unwrap();
        let text = std::fs::read_to_string(out.join("diagnostics.json")).unwrap();
        let rows: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
        assert!(rows.iter().any(|r| r["check_name"] == "deterministic_energy_identity"
            && r["pass"] == true));
        assert!(out.join("residuals.csv").exists());
    }

    #[test]
    fn potential_table_runs() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = base_config(ExperimentKind::PotentialTable, &out);
        cfg.potential = PotentialConfig::Cosh;
        let cfg_path = write_config(&cfg, tmp.path());
        run(&cfg_path, None, None).unwrap();
        let csv = std::fs::read_to_string(out.join("potential_table.csv")).unwrap();
        assert_eq!(csv.lines().count(), 102);
    }

    #[test]
    fn missing_config_is_config_not_found() {
        let err = run(Path::new("/nonexistent/config.json"), None, None).unwrap_err();
        let rec = ErrorRecord::from_error(&err);
        assert_eq!(rec.kind, "config_not_found");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cfl_violation_writes_error_record() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = base_config(ExperimentKind::Solve, &out);
        cfg.solver.tau = 1e-3; // far beyond 0.25·λ·h²
        let cfg_path = write_config(&cfg, tmp.path());
        let err = run(&cfg_path, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let rec = ErrorRecord::from_error(&err);
        assert_eq!(rec.kind, "stability_violation");
        assert!(rec.suggested_tau.unwrap() > 0.0);
    }

    #[test]
    fn seed_override_recorded_in_manifest() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("out");
        let cfg = base_config(ExperimentKind::Solve, &out);
        let cfg_path = write_config(&cfg, tmp.path());
        run(&cfg_path, None, Some(12345)).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.seed, 12345);
        assert!(manifest.seed_overridden);
        assert_eq!(manifest.config.experiment.seed, 12345);
    }
}
