//! End-to-end runs of the location, crack-orientation and health
//! experiments with metric and artifact emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{cluster_separation, fit_pca_with, project, PcaModel, Selector};
use crate::forward::DriveProtocol;
use crate::learners::angle::{circular_error, circular_mae, circular_rmse, decode, encode};
use crate::learners::{
    train_classifier, train_gpr, train_mlp, HyperPolicy, KnnModel, LinearSvm, MlpModel, Task, TrainReport,
};
use crate::mesh::Mesh;
use crate::phantom::{
    generate_dataset, mean_conductivity_change, Condition, Experiment, LabeledDataset, Simulator, Split,
};
use crate::recon::{render_heatmap, Reconstructor};
use crate::rng;

pub const SPLITS: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub model: String,
    pub split: String,
    pub classes: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        model: &str,
        split: &str,
        classes: &[String],
        predicted: &[usize],
        truth: &[usize],
    ) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::dims("predictions", truth.len(), predicted.len()));
        }
        let n = classes.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= n || t >= n {
                return Err(Error::InvalidParameter(format!("class index out of range ({p}, {t})")));
            }
            counts[t][p] += 1;
        }
        Ok(Self {
            model: model.to_string(),
            split: split.to_string(),
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / total as f64
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["truth\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let mut rec = vec![c.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
}

/// Plain or circular (degrees) error statistics.
pub fn regression_metrics(predicted: &[f64], truth: &[f64], circular: bool) -> Result<RegressionMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::dims("predictions", truth.len(), predicted.len()));
    }
    let n = truth.len();
    if circular {
        return Ok(RegressionMetrics {
            n,
            rmse: circular_rmse(predicted, truth),
            mae: circular_mae(predicted, truth),
        });
    }
    if n == 0 {
        return Ok(RegressionMetrics { n, rmse: 0.0, mae: 0.0 });
    }
    let e: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| p - t).collect();
    Ok(RegressionMetrics {
        n,
        rmse: (e.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt(),
        mae: e.iter().map(|v| v.abs()).sum::<f64>() / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub stop_reason: String,
    pub strictly_decreasing: bool,
    pub final_train_mse: f64,
    pub restart: usize,
}

impl From<&TrainReport> for TrainSummary {
    fn from(r: &TrainReport) -> Self {
        Self {
            iterations: r.iterations,
            stop_reason: serde_json::to_value(r.stop_reason)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            strictly_decreasing: r.strictly_decreasing(),
            final_train_mse: *r.train_loss.last().unwrap_or(&f64::NAN),
            restart: r.restart,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub split_mode: String,
    pub config: BTreeMap<String, String>,
    pub rows: BTreeMap<String, usize>,
    pub pca_explained_ratio: Vec<f64>,
    pub confusion: Vec<ConfusionMatrix>,
    pub metrics: BTreeMap<String, f64>,
    pub training: BTreeMap<String, TrainSummary>,
    pub checks: BTreeMap<String, bool>,
    /// Paths relative to the experiment output directory.
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    fn new(experiment: Experiment, cfg: &RunConfig, ds: &LabeledDataset) -> Self {
        let rows = SPLITS
            .iter()
            .map(|s| (s.name().to_string(), ds.rows_in(*s).len()))
            .collect();
        Self {
            experiment: experiment.tag().to_string(),
            split_mode: ds.split_mode.to_string(),
            config: cfg
                .result_entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            rows,
            pca_explained_ratio: Vec::new(),
            confusion: Vec::new(),
            metrics: BTreeMap::new(),
            training: BTreeMap::new(),
            checks: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn confusion_for(&self, model: &str, split: &str) -> Option<&ConfusionMatrix> {
        self.confusion.iter().find(|c| c.model == model && c.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn add_confusion(&mut self, model: &str, classes: &[String], pred: &[usize], truth: &[usize], rows: &[Vec<usize>; 3]) -> Result<()> {
        for (split, idx) in SPLITS.iter().zip(rows) {
            let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
            let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
            let cm = ConfusionMatrix::from_predictions(model, split.name(), classes, &p, &t)?;
            self.metrics
                .insert(format!("{model}.{}.accuracy", split.name()), cm.accuracy());
            self.confusion.push(cm);
        }
        Ok(())
    }

    fn add_angles(&mut self, model: &str, pred: &[f64], truth: &[f64], rows: &[Vec<usize>; 3]) -> Result<()> {
        for (split, idx) in SPLITS.iter().zip(rows) {
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
            let m = regression_metrics(&p, &t, true)?;
            self.metrics
                .insert(format!("{model}.{}.circular_rmse_deg", split.name()), m.rmse);
            self.metrics
                .insert(format!("{model}.{}.circular_mae_deg", split.name()), m.mae);
        }
        Ok(())
    }
}

/// Shared setup of one run: mesh, protocol and a simulator.
struct Bench {
    mesh: Mesh,
    protocol: DriveProtocol,
}

impl Bench {
    fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mesh: cfg.mesh()?,
            protocol: cfg.protocol(),
        })
    }

    fn dataset(&self, cfg: &RunConfig, experiment: Experiment) -> Result<LabeledDataset> {
        let sim = Simulator::new(
            &self.mesh,
            &self.protocol,
            cfg.contact_impedance,
            cfg.material(),
            cfg.noise(),
        )?;
        generate_dataset(&sim, &cfg.dataset(experiment))
    }

    fn reconstructor(&self, cfg: &RunConfig) -> Result<Reconstructor> {
        Reconstructor::new(&self.mesh, &self.protocol, &cfg.recon(&self.mesh)?)
    }
}

fn split_rows(ds: &LabeledDataset, keep: impl Fn(usize) -> bool) -> [Vec<usize>; 3] {
    SPLITS.map(|s| ds.rows_in(s).into_iter().filter(|&i| keep(i)).collect())
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// PCA fitted on the training rows; returns features for every row.
fn features(cfg: &RunConfig, ds: &LabeledDataset, train: &[usize]) -> Result<(Option<PcaModel>, Vec<Vec<f64>>)> {
    if !cfg.use_pca {
        return Ok((None, ds.x.clone()));
    }
    let pca = fit_pca_with(&pick(&ds.x, train), cfg.selector(), cfg.standardize)?;
    let scores = project(&pca, &ds.x)?;
    Ok((Some(pca), scores))
}

/// KNN fitted on the given rows, optionally on z-scored inputs.
struct ScaledKnn {
    shift: Vec<f64>,
    scale: Vec<f64>,
    model: KnnModel,
}

impl ScaledKnn {
    fn fit(cfg: &RunConfig, x: &[Vec<f64>], labels: &[usize], rows: &[usize]) -> Result<Self> {
        let tx = pick(x, rows);
        let d = tx.first().map_or(0, Vec::len);
        let (mut shift, mut scale) = (vec![0.0; d], vec![1.0; d]);
        if cfg.knn_standardize && tx.len() > 1 {
            let n = tx.len() as f64;
            for j in 0..d {
                let m = tx.iter().map(|r| r[j]).sum::<f64>() / n;
                let v = tx.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
                shift[j] = m;
                if v > 0.0 {
                    scale[j] = v.sqrt();
                }
            }
        }
        let mut s = Self { shift, scale, model: KnnModel::fit(&tx, &pick(labels, rows), cfg.knn_k)? };
        s.model.x = s.transform(&tx);
        Ok(s)
    }

    fn transform(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| r.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect()
    }

    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        self.model.predict(&self.transform(x))
    }
}

fn angle_targets(deg: &[f64]) -> Vec<Vec<f64>> {
    deg.iter()
        .map(|&a| {
            let (s, c) = encode(a);
            vec![s, c]
        })
        .collect()
}

fn decode_rows(y: &[Vec<f64>]) -> Result<Vec<f64>> {
    y.iter().map(|r| decode(r[0], r[1])).collect()
}

fn train_angle_mlp(
    cfg: &RunConfig,
    hidden: usize,
    purpose: &str,
    x: &[Vec<f64>],
    angles: &[f64],
    train: &[usize],
    val: &[usize],
) -> Result<(MlpModel, TrainReport)> {
    let t = angle_targets(angles);
    let (vx, vt) = (pick(x, val), pick(&t, val));
    train_mlp(
        &pick(x, train),
        &pick(&t, train),
        Task::Regression,
        &cfg.mlp(hidden, purpose),
        (!val.is_empty()).then_some((vx.as_slice(), vt.as_slice())),
    )
}

fn train_class_mlp(
    cfg: &RunConfig,
    hidden: usize,
    purpose: &str,
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    val: &[usize],
) -> Result<(MlpModel, TrainReport)> {
    let (vx, vl) = (pick(x, val), pick(labels, val));
    train_classifier(
        &pick(x, train),
        &pick(labels, train),
        n_classes,
        &cfg.mlp(hidden, purpose),
        (!val.is_empty()).then_some((vx.as_slice(), vl.as_slice())),
    )
}

fn bin30(angle: f64) -> usize {
    ((angle / 30.0).round() as i64).rem_euclid(12) as usize
}

/// Output files written for one experiment.
struct Emitter<'a> {
    dir: Option<&'a Path>,
}

impl Emitter<'_> {
    fn path(&self, report: &mut ExperimentReport, name: &str) -> Option<PathBuf> {
        self.dir.map(|d| {
            report.artifacts.push(name.to_string());
            d.join(name)
        })
    }
}

fn emit_common(
    emit: &Emitter<'_>,
    report: &mut ExperimentReport,
    cfg: &RunConfig,
    bench: &Bench,
    ds: &LabeledDataset,
    pca: Option<&PcaModel>,
) -> Result<()> {
    let Some(dir) = emit.dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    cfg.write_snapshot(dir)?;
    report.artifacts.push("config.resolved.txt".into());
    if let Some(p) = emit.path(report, "dataset.csv") {
        ds.to_csv(&p)?;
    }
    if let Some(p) = emit.path(report, "baseline.csv") {
        ds.baseline_to_csv(&p)?;
    }
    if let (Some(pca), Some(p)) = (pca, emit.path(report, "pca.json")) {
        pca.save(&p)?;
    }
    let confusion = report.confusion.clone();
    for cm in &confusion {
        if let Some(p) = emit.path(report, &format!("confusion_{}_{}.csv", cm.model, cm.split)) {
            cm.to_csv(&p)?;
        }
    }
    if cfg.heatmaps > 0 && !ds.is_empty() {
        let rec = bench.reconstructor(cfg)?;
        let n = cfg.heatmaps.min(ds.len());
        for s in 0..n {
            let i = s * ds.len() / n;
            let map = rec.reconstruct(&ds.x[i])?;
            if let Some(p) = emit.path(report, &format!("heatmap_{i:03}.svg")) {
                std::fs::write(p, render_heatmap(&bench.mesh, &map)?)?;
            }
        }
    }
    Ok(())
}

fn finish(emit: &Emitter<'_>, report: &mut ExperimentReport) -> Result<()> {
    if let Some(dir) = emit.dir {
        report.artifacts.push("report.json".into());
        report.artifacts.sort();
        std::fs::write(dir.join("report.json"), report.to_json()?)?;
    }
    Ok(())
}

fn write_scores_csv(path: &Path, ds: &LabeledDataset, scores: &[Vec<f64>], label: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "split", "specimen_id", "label", "load_N", "pc1", "pc2"])?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record([
            i.to_string(),
            ds.split[i].name().to_string(),
            ds.meta[i].specimen_id.to_string(),
            label[i].clone(),
            ds.meta[i].load_n.to_string(),
            s.first().map_or(String::new(), |v| v.to_string()),
            s.get(1).map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Radial classification and angular regression of specimen position.
pub fn run_location(cfg: &RunConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let bench = Bench::new(cfg)?;
    let ds = bench.dataset(cfg, Experiment::Loc)?;
    let mut report = ExperimentReport::new(Experiment::Loc, cfg, &ds);
    let all = split_rows(&ds, |_| true);
    let (pca, x) = features(cfg, &ds, &all[0])?;
    if let Some(p) = &pca {
        report.pca_explained_ratio = p.explained_ratio.clone();
    }

    let (radial, classes) = class_labels(&ds)?;
    let n_classes = classes.len();
    let (mlp, rep) = train_class_mlp(cfg, cfg.hidden_loc, "loc-radial", &x, &radial, n_classes, &all[0], &all[1])?;
    report.training.insert("radial_mlp".into(), (&rep).into());
    report.add_confusion("radial_mlp", &classes, &mlp.predict_class(&x)?, &radial, &all)?;

    let knn = ScaledKnn::fit(cfg, &x, &radial, &all[0])?;
    report.add_confusion("radial_knn", &classes, &knn.predict(&x)?, &radial, &all)?;
    let svm = LinearSvm::fit(&pick(&x, &all[0]), &pick(&radial, &all[0]), cfg.svm_c, cfg.svm_epochs)?;
    report.add_confusion("radial_svm", &classes, &svm.predict(&x)?, &radial, &all)?;

    // the polar angle is undefined at the centre
    let off = split_rows(&ds, |i| ds.meta[i].r_cm.unwrap_or(0.0) > 0.0);
    let theta: Vec<f64> = ds.meta.iter().map(|m| m.theta_deg.unwrap_or(0.0)).collect();
    let (amlp, arep) = train_angle_mlp(cfg, cfg.hidden_loc, "loc-angle", &x, &theta, &off[0], &off[1])?;
    report.training.insert("angle_mlp".into(), (&arep).into());
    let pred = decode_rows(&amlp.predict(&x)?)?;
    report.add_angles("angle_mlp", &pred, &theta, &off)?;

    report.checks.insert(
        "accepted_steps_strictly_decreasing".into(),
        rep.strictly_decreasing() && arep.strictly_decreasing(),
    );
    let emit = Emitter { dir: out };
    emit_common(&emit, &mut report, cfg, &bench, &ds, pca.as_ref())?;
    if let Some(p) = emit.path(&mut report, "pca_scatter.csv") {
        let labels: Vec<String> = radial.iter().map(|&c| classes[c].clone()).collect();
        write_scores_csv(&p, &ds, &x, &labels)?;
    }
    finish(&emit, &mut report)?;
    Ok(report)
}

/// Crack-orientation regression with a reconstruction-map baseline.
pub fn run_crack(cfg: &RunConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let bench = Bench::new(cfg)?;
    let ds = bench.dataset(cfg, Experiment::Crack)?;
    let mut report = ExperimentReport::new(Experiment::Crack, cfg, &ds);
    let all = split_rows(&ds, |_| true);
    let (pca, x) = features(cfg, &ds, &all[0])?;
    if let Some(p) = &pca {
        report.pca_explained_ratio = p.explained_ratio.clone();
    }
    let angle: Vec<f64> = ds.meta.iter().map(|m| m.crack_deg.unwrap_or(0.0)).collect();

    let (mlp, rep) = train_angle_mlp(cfg, cfg.hidden_crack, "crack-angle", &x, &angle, &all[0], &all[1])?;
    report.training.insert("crack_mlp".into(), (&rep).into());
    let mlp_pred = decode_rows(&mlp.predict(&x)?)?;
    report.add_angles("crack_mlp", &mlp_pred, &angle, &all)?;

    let t = angle_targets(&angle);
    let tx = pick(&x, &all[0]);
    let gs = train_gpr(&tx, &pick(&t, &all[0]).iter().map(|r| r[0]).collect::<Vec<_>>(), HyperPolicy::Median)?;
    let gc = train_gpr(&tx, &pick(&t, &all[0]).iter().map(|r| r[1]).collect::<Vec<_>>(), HyperPolicy::Median)?;
    let (ps, pc) = (gs.predict(&x)?, gc.predict(&x)?);
    let gpr_pred: Vec<f64> = ps
        .iter()
        .zip(&pc)
        .map(|(s, c)| decode(s.0, c.0))
        .collect::<Result<_>>()?;
    report.add_angles("crack_gpr", &gpr_pred, &angle, &all)?;
    let g_train = report.metric("crack_gpr.train.circular_rmse_deg").unwrap_or(f64::NAN);
    let g_test = report.metric("crack_gpr.test.circular_rmse_deg").unwrap_or(f64::NAN);
    report.metrics.insert("crack_gpr.test_over_train_rmse".into(), g_test / g_train);
    report
        .checks
        .insert("gpr_test_within_3x_train".into(), g_test <= 3.0 * g_train);

    // nearest class centroid on reconstructed maps, fitted on train + validation
    let rec = bench.reconstructor(cfg)?;
    let maps: Vec<Vec<f64>> = ds.x.iter().map(|dv| rec.reconstruct(dv)).collect::<Result<_>>()?;
    let bins: Vec<usize> = angle.iter().map(|&a| bin30(a)).collect();
    let fit_rows: Vec<usize> = all[0].iter().chain(&all[1]).copied().collect();
    let n_el = bench.mesh.n_elements();
    let mut centroid = vec![vec![0.0; n_el]; 12];
    let mut count = vec![0usize; 12];
    for &i in &fit_rows {
        count[bins[i]] += 1;
        for (c, v) in centroid[bins[i]].iter_mut().zip(&maps[i]) {
            *c += v;
        }
    }
    for (c, &n) in centroid.iter_mut().zip(&count) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let recon_pred: Vec<usize> = maps
        .iter()
        .map(|m| {
            let mut best = (f64::INFINITY, 0);
            for (b, c) in centroid.iter().enumerate().filter(|(b, _)| count[*b] > 0) {
                let d: f64 = m.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.0 {
                    best = (d, b);
                }
            }
            best.1
        })
        .collect();
    let classes: Vec<String> = (0..12).map(|b| format!("{}deg", 30 * b)).collect();
    report.add_confusion("crack_recon_centroid", &classes, &recon_pred, &bins, &all)?;
    let mlp_bins: Vec<usize> = mlp_pred.iter().map(|&a| bin30(a)).collect();
    report.add_confusion("crack_mlp_binned", &classes, &mlp_bins, &bins, &all)?;
    let recon_acc = report.metric("crack_recon_centroid.test.accuracy").unwrap_or(0.0);
    let mlp_acc = report.metric("crack_mlp_binned.test.accuracy").unwrap_or(0.0);
    report
        .checks
        .insert("mlp_beats_recon_baseline".into(), mlp_acc > recon_acc);
    report
        .checks
        .insert("accepted_steps_strictly_decreasing".into(), rep.strictly_decreasing());
    let max_err = mlp_pred
        .iter()
        .zip(&angle)
        .map(|(p, t)| circular_error(*p, *t))
        .fold(0.0, f64::max);
    report.metrics.insert("crack_mlp.all.max_circular_error_deg".into(), max_err);

    let emit = Emitter { dir: out };
    emit_common(&emit, &mut report, cfg, &bench, &ds, pca.as_ref())?;
    if let Some(p) = emit.path(&mut report, "pca_scatter.csv") {
        let labels: Vec<String> = angle.iter().map(|a| a.to_string()).collect();
        write_scores_csv(&p, &ds, &x, &labels)?;
    }
    finish(&emit, &mut report)?;
    Ok(report)
}

/// Deterministic k-fold assignment of `n` rows.
fn folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "cv-folds", 0));
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Four-way health classification under load.
pub fn run_health(cfg: &RunConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let bench = Bench::new(cfg)?;
    let ds = bench.dataset(cfg, Experiment::Health)?;
    let mut report = ExperimentReport::new(Experiment::Health, cfg, &ds);
    let all = split_rows(&ds, |_| true);
    let (pca, x) = features(cfg, &ds, &all[0])?;
    if let Some(p) = &pca {
        report.pca_explained_ratio = p.explained_ratio.clone();
    }
    let train_x = pick(&ds.x, &all[0]);
    for k in [4, 7] {
        if k <= train_x[0].len() {
            let p = fit_pca_with(&train_x, Selector::Fixed(k), cfg.standardize)?;
            report.metrics.insert(format!("pca.cumulative_ratio_{k}"), p.cumulative_ratio());
        }
    }
    if let (Some(r4), Some(r7)) = (report.metric("pca.cumulative_ratio_4"), report.metric("pca.cumulative_ratio_7")) {
        report.checks.insert("pca_ratio_4_below_7".into(), r4 < r7);
    }

    let (labels, classes) = class_labels(&ds)?;

    let knn = ScaledKnn::fit(cfg, &x, &labels, &all[0])?;
    report.add_confusion("health_knn", &classes, &knn.predict(&x)?, &labels, &all)?;
    let fold = folds(all[0].len(), cfg.cv_folds, rng::derive_seed(cfg.seed, "cv", 0));
    let mut correct = 0;
    for f in 0..cfg.cv_folds {
        let fit: Vec<usize> = all[0].iter().enumerate().filter(|(p, _)| fold[*p] != f).map(|(_, &i)| i).collect();
        let held: Vec<usize> = all[0].iter().enumerate().filter(|(p, _)| fold[*p] == f).map(|(_, &i)| i).collect();
        if fit.is_empty() || held.is_empty() {
            continue;
        }
        let m = ScaledKnn::fit(cfg, &x, &labels, &fit)?;
        let p = m.predict(&pick(&x, &held))?;
        correct += p.iter().zip(&held).filter(|(a, &i)| **a == labels[i]).count();
    }
    report
        .metrics
        .insert("health_knn.cv.accuracy".into(), correct as f64 / all[0].len() as f64);

    let (mlp, rep) = train_class_mlp(cfg, cfg.hidden_health, "health", &x, &labels, 4, &all[0], &all[1])?;
    report.training.insert("health_mlp".into(), (&rep).into());
    report.add_confusion("health_mlp", &classes, &mlp.predict_class(&x)?, &labels, &all)?;
    report
        .checks
        .insert("accepted_steps_strictly_decreasing".into(), rep.strictly_decreasing());

    let two: Vec<Vec<f64>> = x.iter().map(|r| r.iter().take(2).copied().collect()).collect();
    let sep = cluster_separation(&two, &labels)?;
    let n_sep = sep.iter().filter(|&&s| s).count();
    report.metrics.insert("pca.separated_classes".into(), n_sep as f64);
    report.checks.insert("pca_clusters_separated_3_of_4".into(), n_sep >= 3);

    let material = cfg.material();
    let mut ordered = true;
    for load in cfg.dataset(Experiment::Health).loads() {
        let d: Vec<f64> = [Condition::Healthy, Condition::Loose, Condition::VerticalCrack, Condition::HorizontalCrack]
            .iter()
            .map(|&c| mean_conductivity_change(&bench.mesh, &material, c, load))
            .collect::<Result<_>>()?;
        ordered &= d[0] > d[1] && d[1] > d[2] && d[2] > d[3];
    }
    report.checks.insert("conductivity_change_ordering".into(), ordered);

    let emit = Emitter { dir: out };
    emit_common(&emit, &mut report, cfg, &bench, &ds, pca.as_ref())?;
    if let Some(p) = emit.path(&mut report, "pca_scatter.csv") {
        let names: Vec<String> = labels.iter().map(|&c| classes[c].clone()).collect();
        write_scores_csv(&p, &ds, &x, &names)?;
    }
    finish(&emit, &mut report)?;
    Ok(report)
}

pub fn run_experiment(experiment: Experiment, cfg: &RunConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    match experiment {
        Experiment::Loc => run_location(cfg, out),
        Experiment::Crack => run_crack(cfg, out),
        Experiment::Health => run_health(cfg, out),
    }
}

/// Networks trained by the `train` subcommand, applied by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub experiment: Experiment,
    pub pca: Option<PcaModel>,
    pub classes: Vec<String>,
    pub models: BTreeMap<String, MlpModel>,
    pub training: BTreeMap<String, TrainSummary>,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn features(&self, ds: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
        match &self.pca {
            Some(p) => project(p, &ds.x),
            None => Ok(ds.x.clone()),
        }
    }
}

/// Class indices and names: conditions for HEALTH, radial classes otherwise.
pub fn class_labels(ds: &LabeledDataset) -> Result<(Vec<usize>, Vec<String>)> {
    match ds.experiment {
        Experiment::Health => Ok((
            ds.conditions()?,
            Condition::ALL.iter().map(|c| c.name().to_string()).collect(),
        )),
        _ => {
            let mut radii: Vec<f64> = ds.meta.iter().map(|m| m.r_cm.unwrap_or(0.0)).collect();
            radii.sort_by(f64::total_cmp);
            radii.dedup();
            Ok((ds.radial_classes(), radii.iter().map(|r| format!("r{r}cm")).collect()))
        }
    }
}

fn angle_labels(ds: &LabeledDataset) -> Vec<f64> {
    ds.meta
        .iter()
        .map(|m| match ds.experiment {
            Experiment::Crack => m.crack_deg.unwrap_or(0.0),
            _ => m.theta_deg.unwrap_or(0.0),
        })
        .collect()
}

/// Fits PCA and the experiment's networks on the dataset's training rows.
pub fn train_models(cfg: &RunConfig, ds: &LabeledDataset) -> Result<ModelBundle> {
    let all = split_rows(ds, |_| true);
    let (pca, x) = features(cfg, ds, &all[0])?;
    let mut models = BTreeMap::new();
    let mut training = BTreeMap::new();
    let mut classes = Vec::new();
    match ds.experiment {
        Experiment::Loc | Experiment::Health => {
            let (labels, names) = class_labels(ds)?;
            let (hidden, name) = match ds.experiment {
                Experiment::Loc => (cfg.hidden_loc, "radial"),
                _ => (cfg.hidden_health, "condition"),
            };
            let purpose = if name == "radial" { "loc-radial" } else { "health" };
            let (m, r) = train_class_mlp(cfg, hidden, purpose, &x, &labels, names.len(), &all[0], &all[1])?;
            models.insert(name.to_string(), m);
            training.insert(name.to_string(), (&r).into());
            classes = names;
        }
        Experiment::Crack => {}
    }
    if ds.experiment != Experiment::Health {
        let angles = angle_labels(ds);
        let rows = split_rows(ds, |i| ds.experiment == Experiment::Crack || ds.meta[i].r_cm.unwrap_or(0.0) > 0.0);
        let (hidden, purpose) = match ds.experiment {
            Experiment::Crack => (cfg.hidden_crack, "crack-angle"),
            _ => (cfg.hidden_loc, "loc-angle"),
        };
        let (m, r) = train_angle_mlp(cfg, hidden, purpose, &x, &angles, &rows[0], &rows[1])?;
        models.insert("angle".to_string(), m);
        training.insert("angle".to_string(), (&r).into());
    }
    Ok(ModelBundle {
        experiment: ds.experiment,
        pca,
        classes,
        models,
        training,
    })
}

/// Per-split metrics of a trained bundle on a dataset.
pub fn evaluate_models(cfg: &RunConfig, bundle: &ModelBundle, ds: &LabeledDataset) -> Result<ExperimentReport> {
    if bundle.experiment != ds.experiment {
        return Err(Error::InvalidParameter(format!(
            "models were trained for {} but the dataset is {}",
            bundle.experiment, ds.experiment
        )));
    }
    let mut report = ExperimentReport::new(ds.experiment, cfg, ds);
    report.training = bundle.training.clone();
    if let Some(p) = &bundle.pca {
        report.pca_explained_ratio = p.explained_ratio.clone();
    }
    let x = bundle.features(ds)?;
    let all = split_rows(ds, |_| true);
    for name in ["radial", "condition"] {
        if let Some(m) = bundle.models.get(name) {
            let (labels, _) = class_labels(ds)?;
            report.add_confusion(name, &bundle.classes, &m.predict_class(&x)?, &labels, &all)?;
        }
    }
    if let Some(m) = bundle.models.get("angle") {
        let rows = split_rows(ds, |i| ds.experiment == Experiment::Crack || ds.meta[i].r_cm.unwrap_or(0.0) > 0.0);
        let pred = decode_rows(&m.predict(&x)?)?;
        report.add_angles("angle", &pred, &angle_labels(ds), &rows)?;
    }
    Ok(report)
}

/// Writes a report's JSON and confusion CSVs into `dir`.
pub fn write_report(report: &mut ExperimentReport, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let confusion = report.confusion.clone();
    for cm in &confusion {
        let file = format!("confusion_{}_{}.csv", cm.model, cm.split);
        cm.to_csv(&dir.join(&file))?;
        report.artifacts.push(file);
    }
    report.artifacts.push(name.to_string());
    report.artifacts.sort();
    std::fs::write(dir.join(name), report.to_json()?)?;
    Ok(())
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

/// SVG scatter of the first two coordinates of `points`, one colour per label.
pub fn render_scatter(points: &[Vec<f64>], labels: &[usize], names: &[String]) -> Result<String> {
    if points.len() != labels.len() {
        return Err(Error::dims("labels", points.len(), labels.len()));
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.first().copied().unwrap_or(0.0), p.get(1).copied().unwrap_or(0.0)))
        .collect();
    let (size, pad) = (400.0, 30.0);
    let lo_x = xy.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi_x = xy.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let lo_y = xy.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi_y = xy.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(lo_x, hi_x), span(lo_y, hi_y));
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
        w = size + 120.0,
        h = size
    );
    for ((x, y), &l) in xy.iter().zip(labels) {
        let px = pad + (x - lo_x) / sx * (size - 2.0 * pad);
        let py = size - pad - (y - lo_y) / sy * (size - 2.0 * pad);
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{}\"/>\n",
            PALETTE[l % PALETTE.len()]
        ));
    }
    for (i, n) in names.iter().enumerate() {
        let y = pad + 16.0 * i as f64;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{n}</text>\n",
            size + 5.0,
            PALETTE[i % PALETTE.len()],
            size + 13.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">PC1</text><text x=\"4\" y=\"14\" font-size=\"11\">PC2</text>\n</svg>\n",
        size / 2.0,
        size - 8.0
    ));
    Ok(svg)
}
