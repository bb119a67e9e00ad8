//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{
    class_labels, evaluate_models, render_scatter, run_experiment, train_models, write_report, ExperimentReport, ModelBundle,
};
use crate::features::{fit_pca_with, project};
use crate::phantom::{generate_dataset, Experiment, LabeledDataset, Simulator, Split};
use crate::recon::{blob_centroid, render_heatmap, write_delta_csv, Reconstructor, BLOB_FRACTION};

/// Environment variable that overrides the default output directory.
pub const OUT_ENV: &str = "EITDIAG_OUT";

#[derive(Debug, Parser)]
#[command(name = "eitdiag", version, about = "EIT phantom simulation, imaging and learning pipeline")]
#[command(after_long_help = RunConfig::help())]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Per-reading noise sd as a fraction of the baseline RMS; 0 also
    /// switches off specimen jitter.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set knn.k=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Loc,
    Crack,
    Health,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Loc => Experiment::Loc,
            ExperimentArg::Crack => Experiment::Crack,
            ExperimentArg::Health => Experiment::Health,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentSel {
    Loc,
    Crack,
    Health,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the mesh and write nodes, elements and electrode edges.
    Mesh,
    /// Simulate a labelled dataset.
    Dataset { experiment: ExperimentArg },
    /// Reconstruct one frame of a dataset into a conductivity-change map.
    Reconstruct {
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Dataset directory (defaults to the output directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fit PCA on the training rows of a dataset and write the scores.
    Pca {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the experiment's networks on a dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate trained networks on a dataset.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model file (defaults to `models.json` in the output directory).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run experiments end to end.
    Experiment { which: ExperimentSel },
    /// Render heatmaps and a PCA scatter for a dataset.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Frame indices to render (defaults to an even sample of `plot.heatmaps` frames).
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
    },
}

/// Resolves the run configuration: defaults, then the snapshot found in the
/// dataset directory, then `--config`, then the environment, then flags.
pub fn resolve_config(global: &GlobalArgs, data_dir: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = data_dir {
        let snap = dir.join("config.resolved.txt");
        if snap.exists() {
            cfg.apply_file(&snap)?;
        }
    }
    if let Some(path) = &global.config {
        cfg.apply_file(path)?;
    }
    if let Ok(out) = std::env::var(OUT_ENV) {
        if !out.is_empty() {
            cfg.out = out;
        }
    }
    for kv in &global.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(noise) = global.noise {
        cfg.per_reading_sd = noise;
        if noise == 0.0 {
            cfg = cfg.noiseless();
        }
    }
    if let Some(out) = &global.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    if let Some(jobs) = global.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let data = dir.join("dataset.csv");
    if !data.exists() {
        return Err(Error::InvalidParameter(format!(
            "no dataset at {}; run `eitdiag dataset <experiment>` first",
            data.display()
        )));
    }
    LabeledDataset::from_csv(&data, &dir.join("baseline.csv"))
}

fn data_dir(global: &GlobalArgs, data: &Option<PathBuf>) -> PathBuf {
    data.clone()
        .or_else(|| global.out.clone())
        .or_else(|| std::env::var(OUT_ENV).ok().filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(RunConfig::default().out))
}

fn reconstructor(cfg: &RunConfig, mesh: &crate::mesh::Mesh) -> Result<Reconstructor> {
    Reconstructor::new(mesh, &cfg.protocol(), &cfg.recon(mesh)?)
}

fn write_summary(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run_command(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Mesh => {
            let cfg = resolve_config(g, None)?;
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let mesh = cfg.mesh()?;
            mesh.save(&out.join("mesh.json"))?;
            let mut w = csv::Writer::from_path(out.join("nodes.csv"))?;
            w.write_record(["node", "x", "y"])?;
            for (i, p) in mesh.nodes().iter().enumerate() {
                w.write_record([i.to_string(), p[0].to_string(), p[1].to_string()])?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_path(out.join("elements.csv"))?;
            w.write_record(["element", "n0", "n1", "n2"])?;
            for (i, t) in mesh.elements().iter().enumerate() {
                w.write_record([i.to_string(), t[0].to_string(), t[1].to_string(), t[2].to_string()])?;
            }
            w.flush()?;
            println!(
                "mesh: {} nodes, {} elements, {} electrodes -> {}",
                mesh.n_nodes(),
                mesh.n_elements(),
                mesh.electrode_edges().len(),
                out.display()
            );
        }
        Command::Dataset { experiment } => {
            let cfg = resolve_config(g, None)?;
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let mesh = cfg.mesh()?;
            let protocol = cfg.protocol();
            let sim = Simulator::new(&mesh, &protocol, cfg.contact_impedance, cfg.material(), cfg.noise())?;
            let ds = generate_dataset(&sim, &cfg.dataset((*experiment).into()))?;
            ds.to_csv(&out.join("dataset.csv"))?;
            ds.baseline_to_csv(&out.join("baseline.csv"))?;
            println!("dataset {}: {} frames -> {}", ds.experiment, ds.len(), out.display());
        }
        Command::Reconstruct { frame, data } => {
            let dir = data_dir(g, data);
            let cfg = resolve_config(g, Some(&dir))?;
            let ds = load_dataset(&dir)?;
            if *frame >= ds.len() {
                return Err(Error::InvalidParameter(format!(
                    "frame {frame} out of range (dataset has {} frames)",
                    ds.len()
                )));
            }
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let mesh = cfg.mesh()?;
            let ds_map = reconstructor(&cfg, &mesh)?.reconstruct(&ds.x[*frame])?;
            std::fs::write(out.join(format!("recon_{frame:03}.svg")), render_heatmap(&mesh, &ds_map)?)?;
            write_delta_csv(&out.join(format!("delta_sigma_{frame:03}.csv")), &ds_map)?;
            let c = blob_centroid(&mesh, &ds_map, BLOB_FRACTION)?;
            let meta = &ds.meta[*frame];
            let truth = meta.r_cm.zip(meta.theta_deg).map(|(r, t)| {
                let (s, co) = t.to_radians().sin_cos();
                [r / 100.0 * co, r / 100.0 * s]
            });
            let err_cm = truth.map(|t| 100.0 * ((c[0] - t[0]).powi(2) + (c[1] - t[1]).powi(2)).sqrt());
            write_summary(
                &out,
                &format!("recon_{frame:03}.json"),
                &serde_json::json!({
                    "frame": frame,
                    "centroid_m": [c[0], c[1]],
                    "true_center_m": truth,
                    "centroid_error_cm": err_cm,
                }),
            )?;
            match err_cm {
                Some(e) => println!("frame {frame}: centroid ({:.4}, {:.4}) m, error {e:.3} cm", c[0], c[1]),
                None => println!("frame {frame}: centroid ({:.4}, {:.4}) m", c[0], c[1]),
            }
        }
        Command::Pca { data } => {
            let dir = data_dir(g, data);
            let cfg = resolve_config(g, Some(&dir))?;
            let ds = load_dataset(&dir)?;
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let train: Vec<Vec<f64>> = ds.rows_in(Split::Train).iter().map(|&i| ds.x[i].clone()).collect();
            let pca = fit_pca_with(&train, cfg.selector(), cfg.standardize)?;
            pca.save(&out.join("pca.json"))?;
            let scores = project(&pca, &ds.x)?;
            let mut w = csv::Writer::from_path(out.join("pca_scores.csv"))?;
            let mut header = vec!["row".to_string(), "split".to_string()];
            header.extend((1..=pca.k).map(|i| format!("pc{i}")));
            w.write_record(&header)?;
            for (i, s) in scores.iter().enumerate() {
                let mut rec = vec![i.to_string(), ds.split[i].name().to_string()];
                rec.extend(s.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            println!(
                "pca: k = {}, cumulative explained ratio {:.4} -> {}",
                pca.k,
                pca.cumulative_ratio(),
                out.display()
            );
        }
        Command::Train { data } => {
            let dir = data_dir(g, data);
            let cfg = resolve_config(g, Some(&dir))?;
            let ds = load_dataset(&dir)?;
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let bundle = train_models(&cfg, &ds)?;
            bundle.save(&out.join("models.json"))?;
            for (name, t) in &bundle.training {
                println!("{name}: {} iterations, stop {}, train mse {:.3e}", t.iterations, t.stop_reason, t.final_train_mse);
            }
        }
        Command::Eval { data, model } => {
            let dir = data_dir(g, data);
            let cfg = resolve_config(g, Some(&dir))?;
            let ds = load_dataset(&dir)?;
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let path = model.clone().unwrap_or_else(|| out.join("models.json"));
            let bundle = ModelBundle::load(&path)?;
            let mut report = evaluate_models(&cfg, &bundle, &ds)?;
            write_report(&mut report, &out, "eval.json")?;
            print_metrics(&report);
        }
        Command::Experiment { which } => {
            let cfg = resolve_config(g, None)?;
            let out = PathBuf::from(&cfg.out);
            let list: Vec<Experiment> = match which {
                ExperimentSel::Loc => vec![Experiment::Loc],
                ExperimentSel::Crack => vec![Experiment::Crack],
                ExperimentSel::Health => vec![Experiment::Health],
                ExperimentSel::All => vec![Experiment::Loc, Experiment::Crack, Experiment::Health],
            };
            for e in list {
                let dir = out.join(e.tag().to_lowercase());
                let report = run_experiment(e, &cfg, Some(&dir))?;
                println!("== {} -> {}", report.experiment, dir.display());
                print_metrics(&report);
            }
        }
        Command::Plot { data, frames } => {
            let dir = data_dir(g, data);
            let cfg = resolve_config(g, Some(&dir))?;
            let ds = load_dataset(&dir)?;
            let out = PathBuf::from(&cfg.out);
            cfg.write_snapshot(&out)?;
            let mesh = cfg.mesh()?;
            let picks: Vec<usize> = if frames.is_empty() {
                let n = cfg.heatmaps.min(ds.len());
                (0..n).map(|s| s * ds.len() / n).collect()
            } else {
                frames.clone()
            };
            if let Some(&bad) = picks.iter().find(|&&i| i >= ds.len()) {
                return Err(Error::InvalidParameter(format!("frame {bad} out of range")));
            }
            if !picks.is_empty() {
                let rec = reconstructor(&cfg, &mesh)?;
                for &i in &picks {
                    let map = rec.reconstruct(&ds.x[i])?;
                    std::fs::write(out.join(format!("heatmap_{i:03}.svg")), render_heatmap(&mesh, &map)?)?;
                }
            }
            let train: Vec<Vec<f64>> = ds.rows_in(Split::Train).iter().map(|&i| ds.x[i].clone()).collect();
            let pca = fit_pca_with(&train, cfg.selector(), cfg.standardize)?;
            let scores = project(&pca, &ds.x)?;
            let (labels, names) = plot_labels(&ds)?;
            std::fs::write(out.join("pca_scatter.svg"), render_scatter(&scores, &labels, &names)?)?;
            println!("plot: {} heatmaps and pca_scatter.svg -> {}", picks.len(), out.display());
        }
    }
    Ok(())
}

fn plot_labels(ds: &LabeledDataset) -> Result<(Vec<usize>, Vec<String>)> {
    match ds.experiment {
        Experiment::Crack => {
            let bins: Vec<usize> = ds
                .meta
                .iter()
                .map(|m| ((m.crack_deg.unwrap_or(0.0) / 30.0).round() as i64).rem_euclid(12) as usize)
                .collect();
            Ok((bins, (0..12).map(|b| format!("{}deg", 30 * b)).collect()))
        }
        _ => class_labels(ds),
    }
}

fn print_metrics(report: &ExperimentReport) {
    for (k, v) in &report.metrics {
        println!("  {k} = {v:.4}");
    }
    for (k, v) in &report.checks {
        println!("  check {k}: {}", if *v { "pass" } else { "fail" });
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let jobs = match resolve_config(&cli.global, None) {
        Ok(c) => c.jobs,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| run_command(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
