use std::sync::Arc;
use std::time::Instant;

use qsdlab::acceptance::{negative_control, run_all, run_criterion, Outcome, Scale, CRITERIA};
use qsdlab::ensemble::{pure_density, random_mixed_state, run_ensemble_with, EnsembleOptions, EnsembleResult};
use qsdlab::invariants::{analytic_solution_in, model_invariant};
use qsdlab::models::ModelSpec;
use qsdlab::noise::{
    noise_statistics, sample_mode_sum_ensemble, sample_mode_sum_path, sample_ou_ensemble, sample_ou_path,
    z_score, ModeSumSpec, NoisePath, NoiseSource,
};
use qsdlab::numerics::{ComplexMatrix, C64, ZERO};
use qsdlab::qsd::{frame_right_trajectory, EffectiveHamiltonianFrame, Method, TrajectoryRecord};

use crate::config::{CliError, MethodArg, RunConfig, SamplerArg};
use crate::output::{complex_columns, Csv};
use crate::plot::{line_chart, Series};

/// Largest number of half-grid samples `noise-stats` will correlate.
pub const MAX_STAT_SAMPLES: usize = 1001;

/// Cross-method deviation above which `fig1` reports failure.
pub const FIG1_TOLERANCE: f64 = 1e-5;

fn mode_sum_spec(cfg: &RunConfig) -> Result<Arc<ModeSumSpec>, CliError> {
    Ok(Arc::new(ModeSumSpec::lorentzian(&cfg.correlation()?, cfg.modes, cfg.window)?))
}

fn noise_path(cfg: &RunConfig, model: &ModelSpec) -> Result<NoisePath, CliError> {
    let grid = cfg.grid()?;
    Ok(match cfg.sampler {
        SamplerArg::Ou => sample_ou_path(&model.correlation, &grid, cfg.seed)?,
        SamplerArg::ModeSum => sample_mode_sum_path(&mode_sum_spec(cfg)?, &grid, cfg.seed)?,
    })
}

/// Runs one trajectory and writes `name`. Returns the cross-method deviation
/// when both methods ran.
pub fn trajectory(cfg: &RunConfig, name: &str) -> Result<Option<f64>, CliError> {
    let model = cfg.model_spec()?;
    let noise = noise_path(cfg, &model)?;
    let frame = EffectiveHamiltonianFrame::build(&model, &noise)?;
    let psi0 = cfg.initial_state();

    let numeric = || frame_right_trajectory(&frame, &psi0);
    let analytic = || -> Result<TrajectoryRecord, CliError> {
        let coeffs = model.solve_coefficients(&noise)?;
        let inv = model_invariant(&frame, &model, &noise, &coeffs.coefficients)?;
        Ok(analytic_solution_in(&frame, &inv, &psi0)?)
    };
    let runs: Vec<(&str, TrajectoryRecord)> = match cfg.method {
        MethodArg::Numeric => vec![("", numeric()?)],
        MethodArg::Analytic => vec![("", analytic()?)],
        MethodArg::Both => vec![("_num", numeric()?), ("_ana", analytic()?)],
    };

    let d = model.dim;
    let mut header = vec!["t".to_string()];
    for (suffix, _) in &runs {
        header.extend(complex_columns("psi", d, suffix));
        header.push(format!("norm{suffix}"));
    }
    let mut comments = cfg.echo(name.trim_end_matches(".csv"));
    comments.push(format!("noise seed = {}", noise.seed));
    let mut csv = Csv::new(&comments, &header);
    let grid = noise.grid;
    for k in 0..grid.node_count() {
        let mut row = vec![grid.time(k)];
        for (_, rec) in &runs {
            for z in rec.right_states.get(k) {
                row.push(z.re);
                row.push(z.im);
            }
            row.push(rec.norms[k]);
        }
        csv.row(&row);
    }
    let path = csv.write(&cfg.output, name)?;
    println!("wrote {}", path.display());

    let deviation = match runs.as_slice() {
        [(_, a), (_, b)] => {
            let dev = a.max_deviation(b)?;
            println!("max componentwise deviation numeric vs analytic: {dev:e}");
            Some(dev)
        }
        _ => None,
    };

    if cfg.plot {
        let t = grid.times();
        let mut series = Vec::new();
        for (suffix, rec) in &runs {
            for i in 0..d {
                let c = rec.right_states.component(i);
                series.push(Series { label: format!("Re psi_{i}{suffix}"), values: c.iter().map(|z| z.re).collect() });
                series.push(Series { label: format!("Im psi_{i}{suffix}"), values: c.iter().map(|z| z.im).collect() });
            }
        }
        let svg = line_chart(&cfg.output, &name.replace(".csv", ".svg"), model.name(), &t, &series)?;
        println!("wrote {}", svg.display());
    }
    Ok(deviation)
}

fn ensemble_method(cfg: &RunConfig) -> Result<Method, CliError> {
    if cfg.sampler != SamplerArg::Ou {
        return Err(CliError::Usage("ensembles are driven by the OU sampler only".into()));
    }
    match cfg.method {
        MethodArg::Numeric => Ok(Method::Numeric),
        MethodArg::Analytic => Ok(Method::Analytic),
        MethodArg::Both => Err(CliError::Usage("ensemble takes --method numeric or analytic".into())),
    }
}

fn run(cfg: &RunConfig, model: &ModelSpec, rho0: &ComplexMatrix, target: Option<Vec<C64>>) -> Result<EnsembleResult, CliError> {
    let method = ensemble_method(cfg)?;
    if cfg.n_paths < 2 {
        return Err(CliError::Usage(format!("n-paths must be at least 2, got {}", cfg.n_paths)));
    }
    let opts = EnsembleOptions { target, ..Default::default() };
    Ok(run_ensemble_with(model, rho0, cfg.n_paths, cfg.seed, &cfg.grid()?, method, &opts)?)
}

fn matrix_echo(label: &str, m: &ComplexMatrix) -> String {
    let d = m.dim();
    let cells: Vec<String> = (0..d * d)
        .map(|i| {
            let z = m[(i / d, i % d)];
            format!("[{:?}, {:?}]", z.re, z.im)
        })
        .collect();
    format!("{label} = [{}] (row-major)", cells.join(", "))
}

pub fn ensemble(cfg: &RunConfig) -> Result<(), CliError> {
    let model = cfg.model_spec()?;
    let rho0 = match &cfg.rho0 {
        Some(r) => r.clone(),
        None => pure_density(&cfg.initial_state()),
    };
    let target = cfg.target.clone().or_else(|| model.target_state());
    let res = run(cfg, &model, &rho0, target.clone())?;

    let d = model.dim;
    let mut header = vec!["t".to_string()];
    for i in 0..d {
        for j in 0..d {
            header.push(format!("re_rho_{i}{j}"));
            header.push(format!("im_rho_{i}{j}"));
        }
    }
    header.extend(["trace_re", "trace_im", "purity"].map(String::from));
    if res.fidelity.is_some() {
        header.extend(["fidelity", "stderr_fidelity"].map(String::from));
    }
    let mut comments = cfg.echo("ensemble");
    comments.push(matrix_echo("initial rho", &rho0));
    if let Some(t) = &target {
        let cells: Vec<String> = t.iter().map(|z| format!("[{:?}, {:?}]", z.re, z.im)).collect();
        comments.push(format!("fidelity target = [{}]", cells.join(", ")));
    }
    comments.push("path seeds = split_seed(seed, index)".into());
    comments.push("rho columns are the raw path average; purity and fidelity use rho / Tr rho".into());
    let mut csv = Csv::new(&comments, &header);
    for k in 0..res.grid.node_count() {
        let mut row = vec![res.grid.time(k)];
        for z in res.rho[k].as_slice() {
            row.push(z.re);
            row.push(z.im);
        }
        row.extend([res.trace[k].re, res.trace[k].im, res.purity[k]]);
        if let (Some(f), Some(se)) = (&res.fidelity, &res.fidelity_stderr) {
            row.extend([f[k], se[k]]);
        }
        csv.row(&row);
    }
    let path = csv.write(&cfg.output, "ensemble.csv")?;
    println!("wrote {}", path.display());
    let last = res.grid.node_count() - 1;
    print!("t = {:?}: purity {:.6}", res.grid.time(last), res.purity[last]);
    if let (Some(f), Some(se)) = (&res.fidelity, &res.fidelity_stderr) {
        print!(", fidelity {:.6} +- {:.2e}", f[last], se[last]);
    }
    println!();

    if cfg.plot {
        let mut series = vec![Series { label: "purity".into(), values: res.purity.clone() }];
        if let Some(f) = &res.fidelity {
            series.push(Series { label: "fidelity".into(), values: f.clone() });
        }
        let svg = line_chart(&cfg.output, "ensemble.svg", model.name(), &res.grid.times(), &series)?;
        println!("wrote {}", svg.display());
    }
    Ok(())
}

/// Runs the steering ensembles from the seeded mixed states and writes
/// `fig2.csv` with fidelity, its standard error and purity per state.
pub fn fig2(cfg: &RunConfig, state_seeds: &[u64]) -> Result<(), CliError> {
    let model = cfg.model_spec()?;
    let target = cfg
        .target
        .clone()
        .or_else(|| model.target_state())
        .ok_or_else(|| CliError::Usage(format!("fig2 needs a target state for model {}", model.name())))?;
    let mut results = Vec::new();
    for &s in state_seeds {
        let rho0 = random_mixed_state(model.dim, s);
        let start = Instant::now();
        let res = run(cfg, &model, &rho0, Some(target.clone()))?;
        let last = res.grid.node_count() - 1;
        let f = res.fidelity.as_ref().expect("target set");
        println!(
            "state seed {s}: fidelity {:.6} +- {:.1e}, purity {:.6}, largest fidelity drop {:.2} stderr ({:.1} s)",
            f[last],
            res.stderr()[last],
            res.purity[last],
            res.fidelity_decrease_in_stderr().unwrap_or(0.0),
            start.elapsed().as_secs_f64()
        );
        results.push((s, rho0, res));
    }

    let mut header = vec!["t".to_string()];
    for (s, _, _) in &results {
        header.extend([format!("fidelity_{s}"), format!("stderr_fidelity_{s}"), format!("purity_{s}")]);
    }
    let mut comments = cfg.echo("fig2");
    let cells: Vec<String> = target.iter().map(|z| format!("[{:?}, {:?}]", z.re, z.im)).collect();
    comments.push(format!("fidelity target = [{}]", cells.join(", ")));
    for (s, rho0, _) in &results {
        comments.push(matrix_echo(&format!("initial rho (state seed {s})"), rho0));
    }
    comments.push("path seeds = split_seed(seed, index), shared by every state".into());
    let mut csv = Csv::new(&comments, &header);
    let grid = results[0].2.grid;
    for k in 0..grid.node_count() {
        let mut row = vec![grid.time(k)];
        for (_, _, res) in &results {
            row.extend([res.fidelity.as_ref().unwrap()[k], res.stderr()[k], res.purity[k]]);
        }
        csv.row(&row);
    }
    let path = csv.write(&cfg.output, "fig2.csv")?;
    println!("wrote {}", path.display());

    if cfg.plot {
        let mut series = Vec::new();
        for (s, _, res) in &results {
            series.push(Series { label: format!("fidelity {s}"), values: res.fidelity.clone().unwrap() });
            series.push(Series { label: format!("purity {s}"), values: res.purity.clone() });
        }
        let svg = line_chart(&cfg.output, "fig2.svg", "steering to the target state", &grid.times(), &series)?;
        println!("wrote {}", svg.display());
    }
    Ok(())
}

/// Sample statistics of the noise: `noise_mean.csv` and the two-time
/// `noise_covariance.csv`, plus `noise_path.csv` for the first path when
/// `dump_path` is set.
pub fn noise_stats(cfg: &RunConfig, dump_path: bool) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    if grid.sample_count() > MAX_STAT_SAMPLES {
        return Err(CliError::Usage(format!(
            "grid has {} half-step samples, more than the {MAX_STAT_SAMPLES} noise-stats correlates; use a coarser dt",
            grid.sample_count()
        )));
    }
    if cfg.n_paths < 2 {
        return Err(CliError::Usage(format!("n-paths must be at least 2, got {}", cfg.n_paths)));
    }
    let spec = cfg.correlation()?;
    let paths = match cfg.sampler {
        SamplerArg::Ou => sample_ou_ensemble(&spec, &grid, cfg.seed, cfg.n_paths)?,
        SamplerArg::ModeSum => sample_mode_sum_ensemble(&mode_sum_spec(cfg)?, &grid, cfg.seed, cfg.n_paths)?,
    };
    let r = noise_statistics(&paths)?;
    // reference correlation: the exact OU kernel, or what the finite mode sum
    // actually realises
    let reference = |a: usize, b: usize| -> C64 {
        match &paths[0].source {
            NoiseSource::ModeSum(m) => m.correlation(r.times[b] - r.times[a]),
            _ => C64::from(spec.alpha(r.times[a], r.times[b])),
        }
    };
    let mut comments = cfg.echo("noise-stats");
    comments.push("path seeds = split_seed(seed, index); samples on the half-step grid".into());
    comments.push("mean is M[z*_t]; cov is M[z_t z*_s]; pseudo is M[z_t z_s]; alpha is the reference correlation".into());

    let mut mean = Csv::new(&comments, &["t", "re_mean", "im_mean", "se_re_mean", "se_im_mean"].map(String::from));
    let mut worst_mean = 0.0f64;
    for a in 0..r.len() {
        mean.row(&[r.times[a], r.mean[a].re, r.mean[a].im, r.mean_se[a].0, r.mean_se[a].1]);
        worst_mean = worst_mean.max(z_score(r.mean[a], ZERO, r.mean_se[a]));
    }
    let header = [
        "t", "s", "re_cov", "im_cov", "se_re_cov", "se_im_cov", "re_pseudo", "im_pseudo", "se_re_pseudo",
        "se_im_pseudo", "re_alpha", "im_alpha",
    ]
    .map(String::from);
    let mut cov = Csv::new(&comments, &header);
    let (mut worst_cov, mut worst_pseudo) = (0.0f64, 0.0f64);
    for a in 0..r.len() {
        for b in 0..r.len() {
            let (c, cse, p, pse) = (r.cov(a, b), r.cov_se(a, b), r.pseudo(a, b), r.pseudo_se(a, b));
            let alpha = reference(a, b);
            cov.row(&[r.times[a], r.times[b], c.re, c.im, cse.0, cse.1, p.re, p.im, pse.0, pse.1, alpha.re, alpha.im]);
            worst_cov = worst_cov.max(z_score(c, alpha, cse));
            worst_pseudo = worst_pseudo.max(z_score(p, ZERO, pse));
        }
    }
    for (csv, name) in [(&mean, "noise_mean.csv"), (&cov, "noise_covariance.csv")] {
        println!("wrote {}", csv.write(&cfg.output, name)?.display());
    }
    println!(
        "{} paths: worst z-scores mean {worst_mean:.2}, covariance {worst_cov:.2}, pseudo-covariance {worst_pseudo:.2}",
        r.n_paths
    );

    if dump_path {
        let p = &paths[0];
        let mut comments = cfg.echo("noise-stats");
        comments.push(format!("path seed = {} (index 0); z is the conjugate of the sampled z*", p.seed));
        let mut csv = Csv::new(&comments, &["t", "re_z", "im_z"].map(String::from));
        for (j, zc) in p.samples.iter().enumerate() {
            csv.row(&[grid.half_time(j), zc.re, -zc.im]);
        }
        println!("wrote {}", csv.write(&cfg.output, "noise_path.csv")?.display());
    }
    Ok(())
}

pub fn validate_list() {
    for c in CRITERIA {
        println!("{} {} {}", c.id, c.key, c.title);
    }
}

/// Runs the acceptance criteria (all of them when `only` is empty) and
/// prints one table row per criterion.
pub fn validate(scale: Scale, only: &[u8]) -> Result<(), CliError> {
    for id in only {
        if !CRITERIA.iter().any(|c| c.id == *id) {
            return Err(CliError::Usage(format!("unknown criterion {id}; see validate --list")));
        }
    }
    let label = match scale {
        Scale::Full => "full",
        Scale::Reduced => "reduced",
    };
    println!("acceptance criteria at {label} size");
    let outcomes: Vec<Outcome> = if only.is_empty() {
        run_all(scale, |o| println!("{o}"))
    } else {
        only.iter()
            .filter_map(|&id| run_criterion(id, scale))
            .inspect(|o| println!("{o}"))
            .collect()
    };
    let failed: Vec<String> =
        outcomes.iter().filter(|o| !o.passed).map(|o| format!("{} ({})", o.criterion.id, o.criterion.key)).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::Failure(format!("failed criteria: {}", failed.join(", "))))
    }
}

/// Runs the cross-method check against the deliberately wrong Riccati
/// constant. Succeeds when the check detects it.
pub fn validate_negative_control(scale: Scale) -> Result<(), CliError> {
    let o = negative_control(scale);
    println!("{o}");
    if o.passed {
        Err(CliError::Failure("negative control passed: the cross-method check cannot detect a wrong Riccati constant".into()))
    } else {
        println!("negative control rejected as expected");
        Ok(())
    }
}
