//! Subcommand implementations. Each command resolves its configuration,
//! does the work, writes its artifacts, and writes the config echo next to
//! the primary output.

use crate::config::RunConfig;
use anyhow::{anyhow, bail, Context, Result};
use std::io::Write;
use std::path::{Path, PathBuf};
use swing_pinn::dataset::{
    fmt_f64, generate_dataset, load_dataset_csv, partition, save_dataset_csv, Dataset,
};
use swing_pinn::dynamics::preset_system;
use swing_pinn::ensemble::{
    derive_member_configs, train_ensemble, EnsembleOptions, EnsembleReport,
};
use swing_pinn::pinn::{angle_mare, train, LossBreakdown, ModelDocument, PinnModel};

/// Single-model partition defaults: the ensemble draws fractions from
/// [0.25, 0.50]; a lone model uses the midpoint.
const SINGLE_MODEL_LABELED_FRACTION: f64 = 0.375;
const DEFAULT_COLLOCATION: usize = 9000;

fn preset(cfg: &RunConfig) -> Result<swing_pinn::BusSystem> {
    Ok(preset_system(&cfg.preset)?)
}

fn dataset_from_config(cfg: &RunConfig) -> Result<Dataset> {
    let system = preset(cfg)?;
    Ok(generate_dataset(
        &system,
        &cfg.preset,
        cfg.dataset.n_traj,
        cfg.dataset.n_steps,
        cfg.dataset.seed,
        &cfg.solver_config(),
    )?)
}

fn load_or_generate(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(path) => {
            let mut ds = load_dataset_csv(path)
                .with_context(|| format!("cannot load dataset {}", path.display()))?;
            let system = preset(cfg)?;
            if ds.n_gen != system.n_gen {
                bail!(
                    "dataset {} has {} generators, preset {} has {}",
                    path.display(),
                    ds.n_gen,
                    cfg.preset,
                    system.n_gen
                );
            }
            ds.system_id = cfg.preset.clone();
            Ok(ds)
        }
        None => dataset_from_config(cfg),
    }
}

fn out_path(cfg: &RunConfig, out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| cfg.output.dir.join(default_name))
}

pub fn generate(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = out_path(cfg, out, "dataset.csv");
    let ds = dataset_from_config(cfg)?;
    save_dataset_csv(&ds, &out)?;
    cfg.write_echo(&out)?;
    println!(
        "wrote {} ({} trajectories, {} samples)",
        out.display(),
        ds.trajectories.len(),
        ds.n_samples()
    );
    Ok(())
}

fn write_history_csv(history: &[LossBreakdown], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "data_term", "physics_term", "total"])?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(l.data_term),
            fmt_f64(l.physics_term),
            fmt_f64(l.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn train_single(cfg: &RunConfig, data: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let out = out_path(cfg, out, "model.json");
    let system = preset(cfg)?;
    let ds = load_or_generate(cfg, data)?;
    let n_col = DEFAULT_COLLOCATION.min(ds.n_samples());
    let part = partition(&ds, n_col, SINGLE_MODEL_LABELED_FRACTION, cfg.train.seed)?;
    log::info!(
        "training on N_u = {}, N_f = {} for {} iterations",
        part.n_u(),
        part.n_f(),
        cfg.train.iterations
    );

    let model = PinnModel::new(system, cfg.train.seed)?;
    let train_cfg = cfg.train_config();
    let (trained, history) = train(&model, &part, &train_cfg)?;

    ModelDocument::from_model(&trained, Some(train_cfg)).save_json(&out)?;
    let hist_path = out.with_extension("history.csv");
    write_history_csv(&history, &hist_path)?;
    cfg.write_echo(&out)?;

    let last = history.last().expect("nonempty history");
    println!(
        "wrote {} and {} (final L_u = {:.3e}, L_f = {:.3e})",
        out.display(),
        hist_path.display(),
        last.data_term,
        last.physics_term
    );
    Ok(())
}

pub fn ensemble(
    cfg: &RunConfig,
    data: Option<&Path>,
    out: Option<PathBuf>,
    skip_divergent: bool,
) -> Result<()> {
    let out = out_path(cfg, out, "report.json");
    let system = preset(cfg)?;
    let ds = load_or_generate(cfg, data)?;

    let configs = derive_member_configs(
        cfg.ensemble.n_members,
        &system,
        &cfg.train_config(),
        &cfg.ensemble.noise_palette,
        cfg.ensemble.master_seed,
    )?;
    let opts = EnsembleOptions {
        n_collocation: DEFAULT_COLLOCATION.min(ds.n_samples()),
        confidence_level: cfg.ensemble.confidence_level,
        skip_divergent,
        ..EnsembleOptions::default()
    };
    let (_, report) = train_ensemble(&system, &ds, &configs, &opts, cfg.ensemble.jobs)?;
    report.save_json(&out)?;
    cfg.write_echo(&out)?;
    println!(
        "wrote {} (n = {}, mu = {:.6}, sigma = {:.6}, {}% CI = [{:.6}, {:.6}])",
        out.display(),
        report.n,
        report.mu,
        report.sigma,
        report.ci.level * 100.0,
        report.ci.lo,
        report.ci.hi
    );
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    model_path: &Path,
    n_heldout: usize,
    holdout_seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let out = out_path(cfg, out, "evaluate.csv");
    let model = ModelDocument::load_json(model_path)
        .with_context(|| format!("cannot load model {}", model_path.display()))?
        .into_model()?;
    let seed = holdout_seed.unwrap_or(cfg.dataset.seed.wrapping_add(1));
    let held = generate_dataset(
        &model.system.clone(),
        &cfg.preset,
        n_heldout,
        cfg.dataset.n_steps,
        seed,
        &cfg.solver_config(),
    )?;

    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["traj", "P", "mare", "max_abs_err"])?;
    let mut total_mare = 0.0;
    for (i, traj) in held.trajectories.iter().enumerate() {
        let mare = angle_mare(&model, std::slice::from_ref(traj))?;
        let mut max_abs: f64 = 0.0;
        for (ti, &t) in traj.times.iter().enumerate() {
            let pred = model.predict_rotor_angle(t, traj.p_input)?;
            for (g, &exact) in traj.angles[ti].iter().enumerate() {
                max_abs = max_abs.max((pred.angles[g] - exact).abs());
            }
        }
        total_mare += mare;
        w.write_record([
            i.to_string(),
            fmt_f64(traj.p_input),
            fmt_f64(mare),
            fmt_f64(max_abs),
        ])?;
    }
    w.flush()?;
    cfg.write_echo(&out)?;
    println!(
        "wrote {} (mean MARE over {} held-out trajectories: {:.3e})",
        out.display(),
        held.trajectories.len(),
        total_mare / held.trajectories.len() as f64
    );
    Ok(())
}

/// Gaussian density curve of the reported posterior: 401 samples over
/// μ ± 4σ.
pub fn plot_gaussian(report_path: &Path, out: &Path) -> Result<()> {
    let report = EnsembleReport::load_json(report_path)
        .with_context(|| format!("cannot load report {}", report_path.display()))?;
    if !(report.sigma > 0.0) {
        bail!(
            "report {} has zero spread; the density curve is degenerate",
            report_path.display()
        );
    }
    let (mu, sigma) = (report.mu, report.sigma);
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["m", "density"])?;
    let n = 401;
    for i in 0..n {
        let x = mu - 4.0 * sigma + 8.0 * sigma * i as f64 / (n - 1) as f64;
        let z = (x - mu) / sigma;
        let density = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        w.write_record([fmt_f64(x), fmt_f64(density)])?;
    }
    w.flush()?;
    println!("wrote {out:?} (N({mu:.6}, {:.6e}) over mu +- 4 sigma)", sigma * sigma);
    Ok(())
}

/// Predicted-vs-exact angle curves for chosen trajectories of a dataset.
pub fn plot_angles(
    model_path: &Path,
    data_path: &Path,
    trajectories: &[usize],
    out: &Path,
) -> Result<()> {
    let model = ModelDocument::load_json(model_path)?.into_model()?;
    let ds = load_dataset_csv(data_path)?;
    let n_gen = ds.n_gen;

    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["traj".to_string(), "t".to_string(), "P".to_string()];
    header.extend((1..=n_gen).map(|g| format!("exact_{g}")));
    header.extend((1..=n_gen).map(|g| format!("pred_{g}")));
    w.write_record(header)?;

    for &ti in trajectories {
        let traj = ds
            .trajectories
            .get(ti)
            .ok_or_else(|| anyhow!("trajectory {ti} not in dataset (have {})", ds.trajectories.len()))?;
        for (si, &t) in traj.times.iter().enumerate() {
            let pred = model.predict_rotor_angle(t, traj.p_input)?;
            let mut rec = vec![ti.to_string(), fmt_f64(t), fmt_f64(traj.p_input)];
            rec.extend(traj.angles[si].iter().map(|a| fmt_f64(*a)));
            rec.extend(pred.angles.iter().map(|a| fmt_f64(*a)));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    println!("wrote {out:?} ({} trajectories)", trajectories.len());
    Ok(())
}

/// Print the fully resolved config to stdout (used with --dry-run).
pub fn echo_config(cfg: &RunConfig) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}
