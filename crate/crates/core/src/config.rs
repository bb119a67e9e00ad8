//! Flat `key = value` run configuration with typed defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::Selector;
use crate::forward::DriveProtocol;
use crate::learners::MlpConfig;
use crate::mesh::{build_mesh, Mesh};
use crate::phantom::{DatasetConfig, Experiment, MaterialParams, NoiseModel, SplitMode};
use crate::forward::ConductivityField;
use crate::recon::{Prior, ReconConfig};
use crate::rng::derive_seed;

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prior::Identity => "identity",
            Prior::SensitivityWeighted => "sensitivity-weighted",
        })
    }
}

macro_rules! run_config {
    ($($key:literal => $field:ident : $ty:ty = $default:expr, $help:literal;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$(($key, $help),)*];

            /// Sets one key from its textual value; unknown keys are rejected.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = value.trim().parse::<$ty>().map_err(|_| {
                            Error::Config(format!("invalid value '{}' for key '{}'", value.trim(), key))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
                }
                Ok(())
            }

            /// Every key with its current value, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$field.to_string()),)*]
            }
        }
    };
}

run_config! {
    "seed" => seed: u64 = 0, "root seed; every random stream is derived from it";
    "out" => out: String = "runs/default".to_string(), "output directory";
    "jobs" => jobs: usize = 0, "worker threads for frame simulation (0 = all cores)";
    "mesh.radius" => mesh_radius: f64 = 0.075, "tank radius in metres";
    "mesh.refinement" => mesh_refinement: u32 = 1, "mesh refinement level";
    "mesh.electrode_coverage" => electrode_coverage: f64 = 0.5, "fraction of each 1/16 arc covered by its electrode";
    "protocol.current" => current: f64 = 1e-3, "drive current amplitude in amperes";
    "protocol.contact_impedance" => contact_impedance: f64 = 1e-3, "electrode contact impedance in ohm m^2";
    "material.sigma_water" => sigma_water: f64 = 2e-4, "background conductivity in S/m";
    "material.sigma_specimen" => sigma_specimen: f64 = 1e-3, "unloaded specimen conductivity in S/m";
    "material.alpha_healthy" => alpha_healthy: f64 = 0.60, "load gain, healthy";
    "material.alpha_loose" => alpha_loose: f64 = 0.40, "load gain, loose";
    "material.alpha_vcrack" => alpha_vcrack: f64 = 0.25, "load gain, vertical crack";
    "material.alpha_hcrack" => alpha_hcrack: f64 = 0.10, "load gain, horizontal crack";
    "material.horizontal_derating" => horizontal_derating: f64 = 0.5, "conductivity factor of a horizontally cracked specimen";
    "material.gap_width" => gap_width: f64 = 0.001, "loose-interface water gap in metres";
    "material.slit_width" => slit_width: f64 = 0.001, "crack width in metres";
    "material.slit_length" => slit_length: f64 = 0.02, "crack length in metres";
    "material.specimen_radius" => specimen_radius: f64 = 0.02, "specimen radius in metres";
    "material.interface_radius" => interface_radius: f64 = 0.01, "radius of the loose interface in metres";
    "noise.per_reading_sd" => per_reading_sd: f64 = 4e-3, "per-reading noise sd as a fraction of the baseline RMS";
    "noise.readings" => readings: u32 = 100, "readings averaged per measurement";
    "noise.sigma_jitter" => sigma_jitter: f64 = 0.02, "lognormal sd of the per-specimen conductivity";
    "noise.position_jitter" => position_jitter: f64 = 0.0, "per-specimen placement sd in metres";
    "noise.angle_jitter" => angle_jitter: f64 = 1.0, "per-specimen crack angle sd in degrees";
    "dataset.split" => split: SplitMode = SplitMode::SpecimenHoldout, "split mode: specimen-holdout or random";
    "dataset.loc_specimens" => loc_specimens: u32 = 4, "LOC specimens";
    "dataset.crack_specimens" => crack_specimens: u32 = 4, "CRACK specimens";
    "dataset.health_specimens" => health_specimens: u32 = 3, "HEALTH specimens per condition";
    "dataset.load_steps" => load_steps: u32 = 20, "HEALTH load steps";
    "dataset.load_min" => load_min: f64 = 300.0, "HEALTH minimum load in N";
    "dataset.load_max" => load_max: f64 = 2200.0, "HEALTH maximum load in N";
    "dataset.fixed_load" => fixed_load: f64 = 0.0, "load applied in LOC and CRACK in N";
    "features.pca" => use_pca: bool = true, "train on PCA scores instead of raw frames";
    "features.k" => pca_k: usize = 4, "PCA components";
    "features.standardize" => standardize: bool = false, "scale channels to unit variance before PCA";
    "mlp.hidden_loc" => hidden_loc: usize = 5, "hidden units, LOC networks";
    "mlp.hidden_crack" => hidden_crack: usize = 5, "hidden units, CRACK network";
    "mlp.hidden_health" => hidden_health: usize = 3, "hidden units, HEALTH network";
    "mlp.max_iter" => mlp_max_iter: usize = 200, "Levenberg-Marquardt iteration cap";
    "mlp.restarts" => mlp_restarts: usize = 5, "random initializations per network";
    "knn.k" => knn_k: usize = 5, "neighbours for KNN";
    "knn.standardize" => knn_standardize: bool = true, "z-score KNN inputs with training-row statistics";
    "svm.c" => svm_c: f64 = 1.0, "SVM regularization constant";
    "svm.epochs" => svm_epochs: usize = 1000, "SVM sub-gradient epochs";
    "cv.folds" => cv_folds: usize = 5, "KNN cross-validation folds";
    "recon.lambda" => recon_lambda: f64 = 0.05, "Tikhonov weight";
    "recon.prior" => recon_prior: Prior = Prior::SensitivityWeighted, "prior: identity or sensitivity-weighted";
    "plot.heatmaps" => heatmaps: usize = 4, "reconstruction heatmaps written per experiment";
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// `key = value` text that reproduces this configuration.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Entries that affect results (everything except output location and
    /// thread count).
    pub fn result_entries(&self) -> Vec<(&'static str, String)> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| *k != "out" && *k != "jobs")
            .collect()
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.txt");
        std::fs::write(&path, self.snapshot())?;
        Ok(path)
    }

    /// Zero measurement noise and zero specimen jitter.
    pub fn noiseless(mut self) -> Self {
        self.per_reading_sd = 0.0;
        self.sigma_jitter = 0.0;
        self.position_jitter = 0.0;
        self.angle_jitter = 0.0;
        self
    }

    pub fn mesh(&self) -> Result<Mesh> {
        build_mesh(self.mesh_radius, self.mesh_refinement, self.electrode_coverage)
    }

    pub fn protocol(&self) -> DriveProtocol {
        DriveProtocol::adjacent(self.current)
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams {
            sigma_water: self.sigma_water,
            sigma_specimen: self.sigma_specimen,
            alpha_healthy: self.alpha_healthy,
            alpha_loose: self.alpha_loose,
            alpha_vcrack: self.alpha_vcrack,
            alpha_hcrack: self.alpha_hcrack,
            horizontal_derating: self.horizontal_derating,
            gap_width: self.gap_width,
            slit_width: self.slit_width,
            slit_length: self.slit_length,
            specimen_radius: self.specimen_radius,
            interface_radius: self.interface_radius,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            per_reading_sd: self.per_reading_sd,
            readings_per_measurement: self.readings,
            specimen_sigma_jitter: self.sigma_jitter,
            position_jitter: self.position_jitter,
            angle_jitter: self.angle_jitter,
            seed: derive_seed(self.seed, "noise", 0),
        }
    }

    pub fn dataset(&self, experiment: Experiment) -> DatasetConfig {
        let mut d = DatasetConfig::default_for(experiment);
        d.specimens = match experiment {
            Experiment::Loc => self.loc_specimens,
            Experiment::Crack => self.crack_specimens,
            Experiment::Health => self.health_specimens,
        };
        d.load_steps = self.load_steps;
        d.load_min_n = self.load_min;
        d.load_max_n = self.load_max;
        d.fixed_load_n = self.fixed_load;
        d.split = self.split;
        d.split_seed = derive_seed(self.seed, "split", 0);
        d
    }

    /// Reconstruction settings linearized about homogeneous water.
    pub fn recon(&self, mesh: &Mesh) -> Result<ReconConfig> {
        Ok(ReconConfig {
            lambda: self.recon_lambda,
            prior: self.recon_prior,
            reference_field: ConductivityField::uniform(mesh.n_elements(), self.sigma_water)?,
            contact_impedance: self.contact_impedance,
        })
    }

    pub fn selector(&self) -> Selector {
        Selector::Fixed(self.pca_k)
    }

    pub fn mlp(&self, hidden: usize, purpose: &str) -> MlpConfig {
        let mut c = MlpConfig::new(hidden, derive_seed(self.seed, purpose, 0));
        c.max_iter = self.mlp_max_iter;
        c.restarts = self.mlp_restarts;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.material().validate()?;
        self.noise().validate()?;
        for e in [Experiment::Loc, Experiment::Crack, Experiment::Health] {
            self.dataset(e).validate()?;
        }
        if self.pca_k == 0 || self.knn_k == 0 || self.cv_folds < 2 {
            return Err(Error::Config("features.k, knn.k must be >= 1 and cv.folds >= 2".into()));
        }
        if !(self.recon_lambda > 0.0) {
            return Err(Error::Config("recon.lambda must be > 0".into()));
        }
        if !(self.contact_impedance > 0.0 && self.current > 0.0) {
            return Err(Error::Config("contact impedance and current must be > 0".into()));
        }
        Ok(())
    }

    /// Help text listing every key with its default.
    pub fn help() -> String {
        let d = RunConfig::default();
        let values = d.entries();
        let mut s = String::from("config keys (key = default: description):\n");
        for ((k, help), (_, v)) in Self::KEYS.iter().zip(values) {
            s.push_str(&format!("  {k} = {v}: {help}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let mut c = RunConfig::default();
        c.set("seed", "7").unwrap();
        c.set("dataset.split", "random").unwrap();
        c.set("recon.prior", "identity").unwrap();
        c.set("noise.per_reading_sd", "0.0031").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.snapshot()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        assert!(c.set("seed", "x").is_err());
        assert!(c.apply_text("seed 3").is_err());
        c.apply_text("# comment\n\nseed = 3 # trailing\n").unwrap();
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert!(RunConfig::help().contains("knn.k = 5"));
    }
}
