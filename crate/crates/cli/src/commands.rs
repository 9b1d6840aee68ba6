use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use dart_core::benchmarks::benchmark_crossval;
use dart_core::diagnostics::central_interval;
use dart_core::fit::{fit_model, pair_crossval_observed, Fit};
use dart_core::ingest::{
    load_and_validate, read_draws, read_labeled_matrix, write_dictionary, write_draws, write_labeled_matrix,
    write_observations, DataConfig, DoseBins, Ingested, RunConfig,
};
use dart_core::model::{DartModel, Hyperparameters, LatentState};
use dart_core::postprocess::{activity_calls, match_align, median_pivot, prioritize, Baseline, THRESHOLDS};
use dart_core::simulate::simulate_dataset;

use crate::output::{hash_file, opt, sha256_hex, Manifest, OutDir};
use crate::{Cli, Command};

struct RunContext {
    config: RunConfig,
    config_hash: String,
    seed: Option<u64>,
    threads: Option<usize>,
    inputs: BTreeMap<String, String>,
}

impl RunContext {
    fn manifest(&self, command: &str) -> Manifest {
        Manifest {
            command: command.to_string(),
            seed: self.seed,
            threads: self.threads,
            config_sha256: self.config_hash.clone(),
            inputs: self.inputs.clone(),
            versions: BTreeMap::from([
                ("dart".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("draws_format".to_string(), dart_core::ingest::DRAWS_MAGIC.to_string()),
            ]),
        }
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, hash_file(path)?);
        Ok(())
    }

    fn load(&mut self) -> Result<Ingested> {
        let data = self.config.data()?.clone();
        for p in std::iter::once(&data.observations).chain(&data.w).chain(&data.z) {
            self.record_input(p)?;
        }
        let ingested = load_and_validate(&data, &self.config.dose_bins)?;
        for note in &ingested.report.notes {
            eprintln!("note: {note}");
        }
        Ok(ingested)
    }

    fn sampler(&self) -> dart_core::sampler::SamplerConfig {
        let mut s = self.config.sampler.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    /// Rebuild a fit from a draws file written by `fit`.
    fn fit_from_draws(&mut self, ingested: &Ingested, draws: &Path) -> Result<Fit> {
        self.record_input(draws)?;
        let (layout, raw) = read_draws(draws).with_context(|| format!("reading {}", draws.display()))?;
        let model = DartModel::new(layout.variant, &ingested.data, &ingested.covariates, &self.config.hyper)?;
        if *model.layout() != layout {
            bail!("{} was not produced from this configuration and data", draws.display());
        }
        if raw.is_empty() {
            bail!("{} holds no draws", draws.display());
        }
        let draws = raw.try_map(|x| LatentState::from_unconstrained(&layout, &x))?;
        Ok(Fit { model, draws })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (config, config_hash) = match &cli.config {
        Some(path) => (
            RunConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?,
            hash_file(path)?,
        ),
        None => {
            let config = RunConfig::default();
            let hash = sha256_hex(config.to_toml()?.as_bytes());
            (config, hash)
        }
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("dart-out"));
    let mut ctx = RunContext {
        config,
        config_hash,
        seed: cli.seed,
        threads: cli.threads,
        inputs: BTreeMap::new(),
    };
    let default_draws = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.join("draws.csv"));
    match &cli.command {
        Command::Simulate => simulate(&mut ctx, out),
        Command::Fit => fit(&mut ctx, out),
        Command::Predict { draws } => predict(&mut ctx, &default_draws(draws), out),
        Command::Crossval => crossval(&mut ctx, out),
        Command::Benchmark => benchmark(&mut ctx, out),
        Command::Diagnose { draws } => diagnose(&mut ctx, &default_draws(draws), out),
        Command::Report { draws, exposure } => report(&mut ctx, &default_draws(draws), exposure.as_deref(), out),
    }
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn simulate(ctx: &mut RunContext, out: PathBuf) -> Result<()> {
    let mut sim = ctx.config.simulation.clone();
    if let Some(seed) = ctx.seed {
        sim.seed = seed;
    }
    let hyper = Hyperparameters { k: sim.k, ..ctx.config.hyper.clone() };
    let ds = simulate_dataset(&sim, &hyper)?;
    let mut dir = OutDir::create(out)?;
    let centers = ds.data.grid().coords().to_vec();
    let bins = DoseBins {
        min_dose: DoseBins::default().min_dose.min(centers[0].exp()),
        max_dose: DoseBins::default().max_dose.max(centers[centers.len() - 1].exp()),
        centers,
    };
    let (chemicals, genes) = (ids("chem", sim.n), ids("gene", sim.m));
    write_observations(&dir.file("observations.csv"), &ds.data, &chemicals, &genes, &bins)?;
    let held = ds.full.without_cells(&ds.data.cells().map(|(k, _)| *k).collect());
    write_observations(&dir.file("held_out.csv"), &held, &chemicals, &genes, &bins)?;
    let mut data = DataConfig {
        observations: "observations.csv".into(),
        w: None,
        z: None,
        w_components: None,
    };
    if let Some(w) = ds.covariates.w.as_ref().filter(|w| w.ncols() > 0) {
        let names: Vec<String> = (1..=w.ncols()).map(|c| format!("w{c}")).collect();
        write_labeled_matrix(&dir.file("w.csv"), "chemical_id", &chemicals, &names, w)?;
        data.w = Some("w.csv".into());
    }
    if let Some(z) = ds.covariates.z.as_ref().filter(|z| z.ncols() > 0) {
        let names: Vec<String> = (1..=z.ncols()).map(|c| format!("pathway{c}")).collect();
        write_labeled_matrix(&dir.file("z.csv"), "gene_id", &genes, &names, z)?;
        data.z = Some("z.csv".into());
    }
    let mut truth = dir.csv("truth.csv")?;
    truth.write_record(["chemical_id", "gene_id", "dose_coord", "mean_effect"])?;
    let coords = ds.data.grid().coords();
    for i in 0..sim.n {
        for j in 0..sim.m {
            for (d, c) in coords.iter().enumerate() {
                truth.write_record([&chemicals[i], &genes[j], &c.to_string(), &ds.truth.get(i, j, d).to_string()])?;
            }
        }
    }
    truth.flush()?;
    let run = RunConfig {
        model: sim.variant,
        data: Some(data),
        dose_bins: bins,
        hyper,
        simulation: sim,
        output: None,
        ..ctx.config.clone()
    };
    std::fs::write(dir.file("run.toml"), run.to_toml()?)?;
    println!(
        "simulated {} observations in {} cells ({} held out) to {}",
        ds.data.n_observations(),
        ds.data.n_cells(),
        held.n_cells(),
        dir.path().display()
    );
    dir.finish(ctx.manifest("simulate"))
}

fn fit(ctx: &mut RunContext, out: PathBuf) -> Result<()> {
    let ingested = ctx.load()?;
    let sampler = ctx.sampler();
    let fit = fit_model(
        ctx.config.model,
        &ingested.data,
        &ingested.covariates,
        &ctx.config.hyper,
        &sampler,
        false,
    )?;
    let mut dir = OutDir::create(out)?;
    let raw = fit.draws.clone().try_map(|s| s.to_unconstrained())?;
    write_draws(&dir.file("draws.csv"), fit.model.layout(), &raw)?;
    write_dictionary(&dir.file("chemicals.csv"), "chemical_id", &ingested.chemicals)?;
    write_dictionary(&dir.file("genes.csv"), "gene_id", &ingested.genes)?;
    dir.json("ingest_report.json", &ingested.report)?;
    let mut chains = dir.csv("chains.csv")?;
    chains.write_record(["chain", "step_size", "mean_accept_stat", "mean_tree_depth", "n_leapfrog", "n_divergent"])?;
    for s in &fit.draws.stats {
        chains.write_record([
            s.chain.to_string(),
            s.step_size.to_string(),
            s.mean_accept_stat.to_string(),
            s.mean_tree_depth.to_string(),
            s.n_leapfrog.to_string(),
            s.n_divergent.to_string(),
        ])?;
    }
    chains.flush()?;
    for w in fit.draws.warnings() {
        eprintln!("warning: {w}");
    }
    println!(
        "{} draws from {} chain(s), {} divergent; wrote {}",
        fit.draws.len(),
        fit.draws.stats.len(),
        fit.draws.n_divergent(),
        dir.path().display()
    );
    dir.finish(ctx.manifest("fit"))
}

fn predict(ctx: &mut RunContext, draws: &Path, out: PathBuf) -> Result<()> {
    let ingested = ctx.load()?;
    let fit = ctx.fit_from_draws(&ingested, draws)?;
    let effects = fit.mean_effect_draws();
    let mut dir = OutDir::create(out)?;
    let mut w = dir.csv("predictions.csv")?;
    w.write_record(["chemical_id", "gene_id", "dose_coord", "mean", "lower95", "upper95", "observed_mean"])?;
    let coords = ingested.data.grid().coords();
    let mut column = vec![0.0; effects.len()];
    for (i, chem) in ingested.chemicals.iter().enumerate() {
        for (j, gene) in ingested.genes.iter().enumerate() {
            for (d, c) in coords.iter().enumerate() {
                for (v, e) in column.iter_mut().zip(&effects) {
                    *v = e.get(i, j, d);
                }
                let mean = column.iter().sum::<f64>() / column.len() as f64;
                let (lo, hi) = central_interval(&column, 0.95)?;
                w.write_record([
                    chem.clone(),
                    gene.clone(),
                    c.to_string(),
                    mean.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    opt(ingested.data.replicate_mean(&(i, j, d))),
                ])?;
            }
        }
    }
    w.flush()?;
    dir.finish(ctx.manifest("predict"))
}

fn crossval(ctx: &mut RunContext, out: PathBuf) -> Result<()> {
    let ingested = ctx.load()?;
    let sampler = ctx.sampler();
    let folds = pair_crossval_observed(
        ctx.config.model,
        &ingested.data,
        &ingested.covariates,
        &ctx.config.hyper,
        ctx.config.crossval.folds,
        ctx.config.crossval.seed,
        &sampler,
        false,
    )?;
    let mut dir = OutDir::create(out)?;
    let mut w = dir.csv("crossval.csv")?;
    w.write_record(["fold", "in_rmse", "in_r2", "out_rmse", "out_r2", "divergent"])?;
    for f in &folds {
        w.write_record([
            f.fold.to_string(),
            f.in_sample.0.to_string(),
            f.in_sample.1.to_string(),
            f.out_of_sample.0.to_string(),
            f.out_of_sample.1.to_string(),
            f.divergent.to_string(),
        ])?;
    }
    w.flush()?;
    let mean_r2 = folds.iter().map(|f| f.out_of_sample.1).sum::<f64>() / folds.len() as f64;
    println!("mean out-of-sample R² over {} folds: {mean_r2:.4}", folds.len());
    dir.finish(ctx.manifest("crossval"))
}

fn benchmark(ctx: &mut RunContext, out: PathBuf) -> Result<()> {
    let ingested = ctx.load()?;
    let b = &ctx.config.benchmark;
    let rows = benchmark_crossval(&ingested.data, &b.kinds, b.folds, b.restarts)?;
    let mut dir = OutDir::create(out)?;
    let mut w = dir.csv("benchmark.csv")?;
    w.write_record(["pair", "kind", "fold", "in_rmse", "out_rmse", "in_r2", "out_r2", "converged"])?;
    for r in &rows {
        let pair = match r.pair {
            Some((i, j)) => format!("{}:{}", ingested.chemicals[i], ingested.genes[j]),
            None => "all".to_string(),
        };
        w.write_record([
            pair,
            r.kind.to_string(),
            r.fold.to_string(),
            r.in_rmse.to_string(),
            r.out_rmse.to_string(),
            r.in_r2.to_string(),
            r.out_r2.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    dir.finish(ctx.manifest("benchmark"))
}

#[derive(serde::Serialize)]
struct Criteria {
    waic: Option<f64>,
    waic_se: Option<f64>,
    p_waic: Option<f64>,
    elpd_loo: Option<f64>,
    elpd_loo_se: Option<f64>,
    p_loo: Option<f64>,
    pareto_k_above_0_7: Option<usize>,
    mean_crps: f64,
    coverage95: Option<f64>,
    coverage95_by_quintile: Option<[f64; 5]>,
    rmse: f64,
    r2: f64,
    max_rhat: Option<f64>,
    min_ess_bulk: Option<f64>,
}

fn diagnose(ctx: &mut RunContext, draws: &Path, out: PathBuf) -> Result<()> {
    let ingested = ctx.load()?;
    let fit = ctx.fit_from_draws(&ingested, draws)?;
    let report = fit.evaluate(&ingested.data, |_| false)?;
    let mut dir = OutDir::create(out)?;
    let mut w = dir.csv("convergence.csv")?;
    w.write_record(["quantity", "rhat", "ess_bulk", "ess_tail"])?;
    for (name, d) in &report.scalars {
        w.write_record([name.clone(), d.rhat.to_string(), d.ess_bulk.to_string(), d.ess_tail.to_string()])?;
    }
    w.flush()?;
    let defined = report.scalars.iter().filter(|(_, d)| !d.undefined);
    let criteria = Criteria {
        waic: report.waic.as_ref().map(|x| x.waic),
        waic_se: report.waic.as_ref().map(|x| x.se),
        p_waic: report.waic.as_ref().map(|x| x.p_waic),
        elpd_loo: report.loo.as_ref().map(|x| x.elpd_loo),
        elpd_loo_se: report.loo.as_ref().map(|x| x.se),
        p_loo: report.loo.as_ref().map(|x| x.p_loo),
        pareto_k_above_0_7: report.loo.as_ref().map(|x| x.high_k().len()),
        mean_crps: report.mean_crps,
        coverage95: report.coverage.as_ref().map(|c| c.overall),
        coverage95_by_quintile: report.coverage.as_ref().map(|c| c.bins),
        rmse: report.in_sample.0,
        r2: report.in_sample.1,
        max_rhat: defined.clone().map(|(_, d)| d.rhat).reduce(f64::max),
        min_ess_bulk: defined.map(|(_, d)| d.ess_bulk).reduce(f64::min),
    };
    dir.json("criteria.json", &criteria)?;
    println!("{}", serde_json::to_string_pretty(&criteria)?);
    dir.finish(ctx.manifest("diagnose"))
}

fn report(ctx: &mut RunContext, draws: &Path, exposure: Option<&Path>, out: PathBuf) -> Result<()> {
    let ingested = ctx.load()?;
    let fit = ctx.fit_from_draws(&ingested, draws)?;
    let exposure = match exposure {
        None => None,
        Some(path) => {
            ctx.record_input(path)?;
            let table = read_labeled_matrix(path, "chemical_id")?;
            let row: BTreeMap<&str, usize> = table.ids.iter().enumerate().map(|(r, id)| (id.as_str(), r)).collect();
            Some(
                ingested
                    .chemicals
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| row.get(c.as_str()).map(|&r| (i, table.values[(r, 0)])))
                    .collect::<BTreeMap<usize, f64>>(),
            )
        }
    };
    let mut dir = OutDir::create(out)?;

    let pivot = median_pivot(&fit.draws.log_posterior)?;
    let aligned = match_align(&fit.draws.draws, pivot, fit.model.kernel())?;
    let k = aligned.dims.k;
    let mut w = dir.csv("factors.csv")?;
    w.write_record(["chemical_id", "factor", "mean", "lower95", "upper95"])?;
    for (i, chem) in ingested.chemicals.iter().enumerate() {
        for f in 0..k {
            let v: Vec<f64> = aligned.eta.iter().map(|e| e[(i, f)]).collect();
            let (lo, hi) = central_interval(&v, 0.95)?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            w.write_record([chem.clone(), (f + 1).to_string(), mean.to_string(), lo.to_string(), hi.to_string()])?;
        }
    }
    w.flush()?;

    let effect = fit.posterior_mean_effect();
    let calls = activity_calls(&effect, &ingested.data, Baseline::Control, &THRESHOLDS);
    let coords = ingested.data.grid().coords();
    let mut w = dir.csv("activity.csv")?;
    w.write_record(["chemical_id", "gene_id", "threshold", "min_active_dose", "observed_flag"])?;
    for c in &calls {
        w.write_record([
            ingested.chemicals[c.pair.0].clone(),
            ingested.genes[c.pair.1].clone(),
            c.threshold.to_string(),
            opt(c.minimum_active_dose.map(|d| coords[d])),
            c.observed.to_string(),
        ])?;
    }
    w.flush()?;

    let rows = prioritize(&calls, exposure.as_ref());
    let mut w = dir.csv("prioritization.csv")?;
    w.write_record(["chemical_id", "max_response_gene", "predicted_active", "predicted_highly_active", "exposure"])?;
    for r in &rows {
        w.write_record([
            ingested.chemicals[r.chemical].clone(),
            ingested.genes[r.max_response_gene].clone(),
            r.active.to_string(),
            r.highly_active.to_string(),
            opt(r.exposure),
        ])?;
    }
    w.flush()?;
    println!("{} chemical(s) with newly predicted activity", rows.len());
    dir.finish(ctx.manifest("report"))
}
