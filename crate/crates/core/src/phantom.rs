//! Tank phantom scenarios: specimen placement, defects, load response,
//! measurement noise and labeled dataset assembly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{measure, ConductivityField, DriveProtocol, FrameMeta, MeasurementFrame};
use crate::mesh::{Mesh, Region};
use crate::rng;

/// Load at which the load-gain coefficients are referenced.
pub const REFERENCE_LOAD_N: f64 = 2200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    Loc,
    Crack,
    Health,
}

impl Experiment {
    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::Loc => "LOC",
            Experiment::Crack => "CRACK",
            Experiment::Health => "HEALTH",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loc" => Ok(Experiment::Loc),
            "crack" => Ok(Experiment::Crack),
            "health" => Ok(Experiment::Health),
            _ => Err(Error::InvalidParameter(format!("unknown experiment '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Healthy,
    VerticalCrack,
    HorizontalCrack,
    Loose,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Healthy,
        Condition::VerticalCrack,
        Condition::HorizontalCrack,
        Condition::Loose,
    ];

    pub fn index(&self) -> usize {
        match self {
            Condition::Healthy => 0,
            Condition::VerticalCrack => 1,
            Condition::HorizontalCrack => 2,
            Condition::Loose => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Healthy => "healthy",
            Condition::VerticalCrack => "vertical_crack",
            Condition::HorizontalCrack => "horizontal_crack",
            Condition::Loose => "loose",
        }
    }
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown condition '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: Experiment,
    /// Specimen centre, radial distance in metres.
    pub r: f64,
    /// Specimen centre, polar angle in degrees.
    pub theta_deg: f64,
    pub crack_angle_deg: Option<f64>,
    pub condition: Condition,
    pub load_n: f64,
    pub specimen_id: u32,
}

impl Scenario {
    pub fn center(&self) -> [f64; 2] {
        let (s, c) = self.theta_deg.to_radians().sin_cos();
        [self.r * c, self.r * s]
    }

    pub fn validate(&self, tank_radius: f64, specimen_radius: f64) -> Result<()> {
        if !(self.r >= 0.0) || !(self.load_n >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scenario needs r >= 0 and load >= 0 (r = {}, load = {})",
                self.r, self.load_n
            )));
        }
        if !(0.0..360.0).contains(&self.theta_deg) {
            return Err(Error::InvalidParameter(format!(
                "theta must lie in [0, 360), got {}",
                self.theta_deg
            )));
        }
        if self.r + specimen_radius > tank_radius + 1e-12 {
            return Err(Error::Geometry(format!(
                "specimen at r = {} m with radius {} m protrudes outside the {} m tank",
                self.r, specimen_radius, tank_radius
            )));
        }
        Ok(())
    }

    fn meta(&self) -> FrameMeta {
        FrameMeta {
            scenario: self.kind.tag().to_string(),
            specimen_id: self.specimen_id,
            r_cm: Some(self.r * 100.0),
            theta_deg: Some(self.theta_deg),
            crack_deg: (self.kind == Experiment::Crack).then_some(self.crack_angle_deg).flatten(),
            condition: (self.kind == Experiment::Health).then(|| self.condition.name().to_string()),
            load_n: self.load_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub sigma_water: f64,
    pub sigma_specimen: f64,
    /// Load gains for healthy, loose, vertical crack, horizontal crack.
    pub alpha_healthy: f64,
    pub alpha_loose: f64,
    pub alpha_vcrack: f64,
    pub alpha_hcrack: f64,
    pub horizontal_derating: f64,
    pub gap_width: f64,
    pub slit_width: f64,
    pub slit_length: f64,
    pub specimen_radius: f64,
    /// Radius of the male/cement interface where a loose specimen separates.
    pub interface_radius: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            sigma_water: 2e-4,
            sigma_specimen: 1e-3,
            alpha_healthy: 0.60,
            alpha_loose: 0.40,
            alpha_vcrack: 0.25,
            alpha_hcrack: 0.10,
            horizontal_derating: 0.5,
            gap_width: 0.001,
            slit_width: 0.001,
            slit_length: 0.02,
            specimen_radius: 0.02,
            interface_radius: 0.01,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_water", self.sigma_water),
            ("sigma_specimen", self.sigma_specimen),
            ("gap_width", self.gap_width),
            ("slit_width", self.slit_width),
            ("slit_length", self.slit_length),
            ("specimen_radius", self.specimen_radius),
            ("interface_radius", self.interface_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha_healthy > self.alpha_loose
            && self.alpha_loose > self.alpha_vcrack
            && self.alpha_vcrack > self.alpha_hcrack
            && self.alpha_hcrack > 0.0)
        {
            return Err(Error::InvalidParameter(
                "load gains must satisfy healthy > loose > vcrack > hcrack > 0".into(),
            ));
        }
        if !(self.horizontal_derating > 0.0 && self.horizontal_derating <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "horizontal_derating must lie in (0, 1], got {}",
                self.horizontal_derating
            )));
        }
        if self.interface_radius >= self.specimen_radius {
            return Err(Error::InvalidParameter(
                "interface_radius must be smaller than specimen_radius".into(),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self, c: Condition) -> f64 {
        match c {
            Condition::Healthy => self.alpha_healthy,
            Condition::Loose => self.alpha_loose,
            Condition::VerticalCrack => self.alpha_vcrack,
            Condition::HorizontalCrack => self.alpha_hcrack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-reading noise sd as a fraction of the baseline frame RMS.
    pub per_reading_sd: f64,
    pub readings_per_measurement: u32,
    /// Lognormal sd of the per-specimen conductivity factor.
    pub specimen_sigma_jitter: f64,
    /// Per-specimen placement error (m, sd per axis).
    pub position_jitter: f64,
    /// Per-specimen crack angle error (deg, sd).
    pub angle_jitter: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            per_reading_sd: 4e-3,
            readings_per_measurement: 100,
            specimen_sigma_jitter: 0.02,
            position_jitter: 0.0,
            angle_jitter: 1.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            per_reading_sd: 0.0,
            readings_per_measurement: 1,
            specimen_sigma_jitter: 0.0,
            position_jitter: 0.0,
            angle_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("per_reading_sd", self.per_reading_sd),
            ("specimen_sigma_jitter", self.specimen_sigma_jitter),
            ("position_jitter", self.position_jitter),
            ("angle_jitter", self.angle_jitter),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.readings_per_measurement < 1 {
            return Err(Error::InvalidParameter("readings_per_measurement must be >= 1".into()));
        }
        Ok(())
    }

    /// Standard deviation of the averaged frame noise, in volts.
    pub fn effective_sd(&self, baseline_rms: f64) -> f64 {
        self.per_reading_sd * baseline_rms / (self.readings_per_measurement as f64).sqrt()
    }
}

/// Per-specimen manufacturing and placement deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecimenJitter {
    pub sigma_factor: f64,
    pub offset: [f64; 2],
    pub angle_deg: f64,
}

impl SpecimenJitter {
    pub fn none() -> Self {
        Self {
            sigma_factor: 1.0,
            offset: [0.0, 0.0],
            angle_deg: 0.0,
        }
    }

    /// Draws the jitter for `specimen_id` from its own seeded stream.
    pub fn draw(noise: &NoiseModel, experiment: Experiment, specimen_id: u32) -> Self {
        let mut r = rng::stream(noise.seed, &format!("specimen/{}", experiment.tag()), specimen_id as u64);
        let std = Normal::new(0.0, 1.0).unwrap();
        let a: f64 = std.sample(&mut r);
        let b: f64 = std.sample(&mut r);
        let c: f64 = std.sample(&mut r);
        let d: f64 = std.sample(&mut r);
        Self {
            sigma_factor: (noise.specimen_sigma_jitter * a).exp(),
            offset: [noise.position_jitter * b, noise.position_jitter * c],
            angle_deg: noise.angle_jitter * d,
        }
    }
}

/// Renders the conductivity field of a scenario.
pub fn render_field(mesh: &Mesh, scenario: &Scenario, params: &MaterialParams) -> Result<ConductivityField> {
    render_field_jittered(mesh, scenario, params, &SpecimenJitter::none())
}

pub fn render_field_jittered(
    mesh: &Mesh,
    scenario: &Scenario,
    params: &MaterialParams,
    jitter: &SpecimenJitter,
) -> Result<ConductivityField> {
    params.validate()?;
    scenario.validate(mesh.tank_radius(), params.specimen_radius)?;
    let nominal = scenario.center();
    let center = [nominal[0] + jitter.offset[0], nominal[1] + jitter.offset[1]];
    let dist = (center[0].powi(2) + center[1].powi(2)).sqrt();
    if dist + params.specimen_radius > mesh.tank_radius() + 1e-12 {
        return Err(Error::Geometry("jittered specimen protrudes outside the tank".into()));
    }
    let condition = match scenario.kind {
        Experiment::Loc => Condition::Healthy,
        Experiment::Crack => Condition::VerticalCrack,
        Experiment::Health => scenario.condition,
    };
    let mut sigma_spec = params.sigma_specimen
        * jitter.sigma_factor
        * (1.0 + params.alpha(condition) * scenario.load_n / REFERENCE_LOAD_N);
    if condition == Condition::HorizontalCrack {
        sigma_spec *= params.horizontal_derating;
    }
    let angle = scenario.crack_angle_deg.unwrap_or(0.0) + jitter.angle_deg;
    let fractions = specimen_fractions(mesh, center, condition, angle, params);
    let sigma = fractions
        .iter()
        .map(|&f| mixed_conductivity(f, sigma_spec, params.sigma_water))
        .collect();
    ConductivityField::new(sigma)
}

/// Sub-triangle centroids per element edge subdivision.
pub const SUBDIVISION: usize = 8;

/// Barycentric sample points at the centroids of the `s * s` congruent
/// sub-triangles of a uniform edge subdivision.
fn sample_points(s: usize) -> Vec<[f64; 3]> {
    let sf = s as f64;
    let mut out = Vec::with_capacity(s * s);
    for i in 0..s {
        for j in 0..s - i {
            let k = s - 1 - i - j;
            out.push([
                (i as f64 + 1.0 / 3.0) / sf,
                (j as f64 + 1.0 / 3.0) / sf,
                (k as f64 + 1.0 / 3.0) / sf,
            ]);
            if i + j + 2 <= s {
                let k = s - 2 - i - j;
                out.push([
                    (i as f64 + 2.0 / 3.0) / sf,
                    (j as f64 + 2.0 / 3.0) / sf,
                    (k as f64 + 2.0 / 3.0) / sf,
                ]);
            }
        }
    }
    out
}

/// Fraction of each element's area occupied by intact specimen material
/// (inside the disc and outside any defect region).
pub fn specimen_fractions(
    mesh: &Mesh,
    center: [f64; 2],
    condition: Condition,
    crack_angle_deg: f64,
    params: &MaterialParams,
) -> Vec<f64> {
    let disc = Region::Disc {
        center,
        radius: params.specimen_radius,
    };
    let defect = match condition {
        Condition::VerticalCrack => Some(Region::Slit {
            center,
            angle_deg: crack_angle_deg,
            length: params.slit_length,
            width: params.slit_width,
        }),
        Condition::Loose => Some(Region::Annulus {
            center,
            r_in: params.interface_radius - 0.5 * params.gap_width,
            r_out: params.interface_radius + 0.5 * params.gap_width,
        }),
        _ => None,
    };
    let samples = sample_points(SUBDIVISION);
    let nodes = mesh.nodes();
    mesh.elements()
        .iter()
        .map(|tri| {
            let p = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            let dist = |q: &[f64; 2]| ((q[0] - center[0]).powi(2) + (q[1] - center[1]).powi(2)).sqrt();
            let far = p.iter().map(dist).fold(0.0f64, f64::max);
            let near = p.iter().map(dist).fold(f64::INFINITY, f64::min);
            if near - triangle_diameter(&p) > params.specimen_radius {
                return 0.0;
            }
            if far < params.specimen_radius && defect.is_none() {
                return 1.0;
            }
            let inside = samples
                .iter()
                .filter(|b| {
                    let x = [
                        b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                        b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
                    ];
                    disc.contains(x) && !defect.as_ref().is_some_and(|d| d.contains(x))
                })
                .count();
            inside as f64 / samples.len() as f64
        })
        .collect()
}

fn triangle_diameter(p: &[[f64; 2]; 3]) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[0], p[2]))
}

/// Effective conductivity of an element holding a fraction `f` of material
/// `a` in background `b`: geometric mean of the series and parallel bounds.
pub fn mixed_conductivity(f: f64, a: f64, b: f64) -> f64 {
    if f <= 0.0 {
        return b;
    }
    if f >= 1.0 {
        return a;
    }
    let parallel = f * a + (1.0 - f) * b;
    let series = 1.0 / (f / a + (1.0 - f) / b);
    (parallel * series).sqrt()
}

/// Everything needed to turn scenarios into noisy frames.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    pub mesh: &'a Mesh,
    pub protocol: &'a DriveProtocol,
    pub contact_impedance: f64,
    pub params: MaterialParams,
    pub noise: NoiseModel,
    baseline: Vec<f64>,
    baseline_rms: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        mesh: &'a Mesh,
        protocol: &'a DriveProtocol,
        contact_impedance: f64,
        params: MaterialParams,
        noise: NoiseModel,
    ) -> Result<Self> {
        params.validate()?;
        noise.validate()?;
        let water = ConductivityField::uniform(mesh.n_elements(), params.sigma_water)?;
        let baseline = measure(mesh, &water, protocol, contact_impedance)?.v;
        let baseline_rms = rms(&baseline);
        Ok(Self {
            mesh,
            protocol,
            contact_impedance,
            params,
            noise,
            baseline,
            baseline_rms,
        })
    }

    /// Noiseless homogeneous-water reference frame.
    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn baseline_rms(&self) -> f64 {
        self.baseline_rms
    }

    /// One averaged measurement. `frame_index` keys the noise stream, the
    /// specimen jitter is keyed by the scenario's specimen id.
    pub fn simulate(&self, scenario: &Scenario, frame_index: u64) -> Result<MeasurementFrame> {
        let jitter = SpecimenJitter::draw(&self.noise, scenario.kind, scenario.specimen_id);
        let field = render_field_jittered(self.mesh, scenario, &self.params, &jitter)?;
        let mut frame = measure(self.mesh, &field, self.protocol, self.contact_impedance)?;
        self.add_noise(&mut frame.v, frame_index)?;
        frame.meta = scenario.meta();
        Ok(frame)
    }

    /// Adds the averaged measurement noise of frame `frame_index` in place.
    pub fn add_noise(&self, v: &mut [f64], frame_index: u64) -> Result<()> {
        let sd = self.noise.effective_sd(self.baseline_rms);
        if sd > 0.0 {
            let mut r = rng::stream(self.noise.seed, "frame-noise", frame_index);
            let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for x in v.iter_mut() {
                *x += normal.sample(&mut r);
            }
        }
        Ok(())
    }
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Free-function form of [`Simulator::simulate`].
pub fn simulate_frame(
    mesh: &Mesh,
    scenario: &Scenario,
    params: &MaterialParams,
    noise: &NoiseModel,
    protocol: &DriveProtocol,
    contact_impedance: f64,
    frame_index: u64,
) -> Result<MeasurementFrame> {
    Simulator::new(mesh, protocol, contact_impedance, params.clone(), noise.clone())?
        .simulate(scenario, frame_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    Random,
    SpecimenHoldout,
}

impl FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "specimen-holdout" => Ok(SplitMode::SpecimenHoldout),
            _ => Err(Error::InvalidParameter(format!("unknown split mode '{s}'"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Random => "random",
            SplitMode::SpecimenHoldout => "specimen-holdout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidParameter(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub experiment: Experiment,
    pub specimens: u32,
    pub radii_cm: Vec<f64>,
    pub angles_deg: Vec<f64>,
    pub load_steps: u32,
    pub load_min_n: f64,
    pub load_max_n: f64,
    /// Load applied during LOC and CRACK recordings.
    pub fixed_load_n: f64,
    pub split: SplitMode,
    pub split_seed: u64,
}

impl DatasetConfig {
    pub fn default_for(experiment: Experiment) -> Self {
        let angles: Vec<f64> = (0..12).map(|i| 30.0 * i as f64).collect();
        Self {
            experiment,
            specimens: match experiment {
                Experiment::Health => 3,
                _ => 4,
            },
            radii_cm: vec![0.0, 2.0, 4.0],
            angles_deg: angles,
            load_steps: 20,
            load_min_n: 300.0,
            load_max_n: 2200.0,
            fixed_load_n: 0.0,
            split: SplitMode::SpecimenHoldout,
            split_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.specimens < 2 {
            return Err(Error::Config("at least two specimens are required".into()));
        }
        if self.angles_deg.is_empty() || self.angles_deg.iter().any(|a| !(0.0..360.0).contains(a)) {
            return Err(Error::Config("angles must be non-empty and lie in [0, 360)".into()));
        }
        if self.experiment == Experiment::Loc && self.radii_cm.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("radii must be non-negative".into()));
        }
        if self.experiment == Experiment::Health {
            if self.load_steps < 1 {
                return Err(Error::Config("load_steps must be >= 1".into()));
            }
            if !(self.load_min_n >= 0.0 && self.load_max_n >= self.load_min_n) {
                return Err(Error::Config("load range must satisfy 0 <= min <= max".into()));
            }
        }
        Ok(())
    }

    pub fn loads(&self) -> Vec<f64> {
        if self.load_steps == 1 {
            return vec![self.load_min_n];
        }
        (0..self.load_steps)
            .map(|i| {
                self.load_min_n
                    + (self.load_max_n - self.load_min_n) * i as f64 / (self.load_steps - 1) as f64
            })
            .collect()
    }

    /// All scenarios in dataset row order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for specimen in 1..=self.specimens {
            match self.experiment {
                Experiment::Loc => {
                    for &r in &self.radii_cm {
                        let angles: &[f64] = if r == 0.0 { &[0.0] } else { &self.angles_deg };
                        for &theta in angles {
                            out.push(Scenario {
                                kind: Experiment::Loc,
                                r: r / 100.0,
                                theta_deg: theta,
                                crack_angle_deg: None,
                                condition: Condition::Healthy,
                                load_n: self.fixed_load_n,
                                specimen_id: specimen,
                            });
                        }
                    }
                }
                Experiment::Crack => {
                    for &a in &self.angles_deg {
                        out.push(Scenario {
                            kind: Experiment::Crack,
                            r: 0.0,
                            theta_deg: 0.0,
                            crack_angle_deg: Some(a),
                            condition: Condition::VerticalCrack,
                            load_n: self.fixed_load_n,
                            specimen_id: specimen,
                        });
                    }
                }
                Experiment::Health => {
                    for c in Condition::ALL {
                        for load in self.loads() {
                            out.push(Scenario {
                                kind: Experiment::Health,
                                r: 0.0,
                                theta_deg: 0.0,
                                crack_angle_deg: (c == Condition::VerticalCrack).then_some(0.0),
                                condition: c,
                                load_n: load,
                                specimen_id: specimen,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Frames stored as differences from the baseline, with labels and splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub experiment: Experiment,
    pub split_mode: SplitMode,
    pub x: Vec<Vec<f64>>,
    pub meta: Vec<FrameMeta>,
    pub split: Vec<Split>,
    pub baseline: Vec<f64>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Radial class 0/1/2 for r = 0/2/4 cm (index into the sorted distinct radii).
    pub fn radial_classes(&self) -> Vec<usize> {
        let mut radii: Vec<i64> = self
            .meta
            .iter()
            .map(|m| (m.r_cm.unwrap_or(0.0) * 1000.0).round() as i64)
            .collect();
        radii.sort_unstable();
        radii.dedup();
        self.meta
            .iter()
            .map(|m| {
                let key = (m.r_cm.unwrap_or(0.0) * 1000.0).round() as i64;
                radii.binary_search(&key).unwrap()
            })
            .collect()
    }

    pub fn conditions(&self) -> Result<Vec<usize>> {
        self.meta
            .iter()
            .map(|m| {
                m.condition
                    .as_deref()
                    .ok_or_else(|| Error::InvalidParameter("frame has no condition label".into()))
                    .and_then(Condition::from_str)
                    .map(|c| c.index())
            })
            .collect()
    }

    /// Stratification label used when assigning splits.
    fn strata(&self) -> Vec<i64> {
        match self.experiment {
            Experiment::Loc => self.radial_classes().into_iter().map(|c| c as i64).collect(),
            Experiment::Crack => self
                .meta
                .iter()
                .map(|m| m.crack_deg.unwrap_or(0.0).round() as i64)
                .collect(),
            Experiment::Health => self
                .conditions()
                .unwrap_or_default()
                .into_iter()
                .map(|c| c as i64)
                .collect(),
        }
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = [
            "scenario",
            "specimen_id",
            "r_cm",
            "theta_deg",
            "crack_deg",
            "condition",
            "load_N",
            "split",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let width = self.baseline.len();
        header.extend((0..width).map(|i| format!("v_{i:03}")));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for ((row, meta), split) in self.x.iter().zip(&self.meta).zip(&self.split) {
            let mut rec = vec![
                meta.scenario.clone(),
                meta.specimen_id.to_string(),
                opt(meta.r_cm),
                opt(meta.theta_deg),
                opt(meta.crack_deg),
                meta.condition.clone().unwrap_or_default(),
                meta.load_n.to_string(),
                split.name().to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn baseline_to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.baseline.len()).map(|i| format!("v_{i:03}")))?;
        w.write_record(self.baseline.iter().map(|v| v.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path, baseline_path: &Path) -> Result<Self> {
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad number '{s}' in dataset")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse(s).map(Some)
            }
        };
        let mut r = csv::Reader::from_path(path)?;
        let mut x = Vec::new();
        let mut meta = Vec::new();
        let mut split = Vec::new();
        let mut experiment = None;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 9 {
                return Err(Error::InvalidParameter("dataset row too short".into()));
            }
            let exp = Experiment::from_str(&rec[0])?;
            experiment.get_or_insert(exp);
            meta.push(FrameMeta {
                scenario: rec[0].to_string(),
                specimen_id: rec[1]
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad specimen id '{}'", &rec[1])))?,
                r_cm: opt(&rec[2])?,
                theta_deg: opt(&rec[3])?,
                crack_deg: opt(&rec[4])?,
                condition: (!rec[5].is_empty()).then(|| rec[5].to_string()),
                load_n: parse(&rec[6])?,
            });
            split.push(Split::from_str(&rec[7])?);
            x.push(rec.iter().skip(8).map(parse).collect::<Result<Vec<f64>>>()?);
        }
        let mut b = csv::Reader::from_path(baseline_path)?;
        let baseline = match b.records().next() {
            Some(rec) => rec?.iter().map(parse).collect::<Result<Vec<f64>>>()?,
            None => return Err(Error::InvalidParameter("empty baseline file".into())),
        };
        if let Some(bad) = x.iter().find(|row| row.len() != baseline.len()) {
            return Err(Error::dims("dataset row", baseline.len(), bad.len()));
        }
        let experiment = experiment.ok_or_else(|| Error::InvalidParameter("empty dataset".into()))?;
        let holdout = split.contains(&Split::Test)
            && meta
                .iter()
                .zip(&split)
                .filter(|(_, s)| **s == Split::Test)
                .map(|(m, _)| m.specimen_id)
                .all(|id| id == meta.iter().map(|m| m.specimen_id).max().unwrap_or(0));
        Ok(Self {
            experiment,
            split_mode: if holdout {
                SplitMode::SpecimenHoldout
            } else {
                SplitMode::Random
            },
            x,
            meta,
            split,
            baseline,
        })
    }
}

/// Assigns train/validation/test labels to every row.
pub fn assign_splits(dataset: &mut LabeledDataset, mode: SplitMode, seed: u64) {
    let strata = dataset.strata();
    let n = dataset.len();
    let mut split = vec![Split::Train; n];
    let last = dataset.meta.iter().map(|m| m.specimen_id).max().unwrap_or(0);
    let mut keys: Vec<i64> = strata.clone();
    keys.sort_unstable();
    keys.dedup();
    let mut r = rng::stream(seed, "splits", 0);
    for key in keys {
        let mut rows: Vec<usize> = (0..n)
            .filter(|&i| strata[i] == key)
            .filter(|&i| mode == SplitMode::Random || dataset.meta[i].specimen_id != last)
            .collect();
        rows.shuffle(&mut r);
        let m = rows.len();
        let (n_val, n_test) = match mode {
            SplitMode::Random => {
                let n_test = (0.25 * m as f64).round() as usize;
                let n_val = (0.15 * m as f64).round() as usize;
                (n_val, n_test)
            }
            SplitMode::SpecimenHoldout => ((0.2 * m as f64).round() as usize, 0),
        };
        for (j, &i) in rows.iter().enumerate() {
            split[i] = if j < n_test {
                Split::Test
            } else if j < n_test + n_val {
                Split::Validation
            } else {
                Split::Train
            };
        }
    }
    if mode == SplitMode::SpecimenHoldout {
        for (i, m) in dataset.meta.iter().enumerate() {
            if m.specimen_id == last {
                split[i] = Split::Test;
            }
        }
    }
    dataset.split = split;
    dataset.split_mode = mode;
}

/// Simulates every scenario of `config` and packages the difference frames.
pub fn generate_dataset(sim: &Simulator<'_>, config: &DatasetConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let scenarios = config.scenarios();
    let frames: Vec<MeasurementFrame> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| sim.simulate(s, i as u64))
        .collect::<Result<_>>()?;
    let baseline = sim.baseline().to_vec();
    let x = frames
        .iter()
        .map(|f| f.v.iter().zip(&baseline).map(|(v, b)| v - b).collect())
        .collect();
    let meta = frames.into_iter().map(|f| f.meta).collect();
    let mut ds = LabeledDataset {
        experiment: config.experiment,
        split_mode: config.split,
        x,
        meta,
        split: Vec::new(),
        baseline,
    };
    assign_splits(&mut ds, config.split, config.split_seed);
    Ok(ds)
}

/// Mean |Δσ| over the specimen disc between a loaded and an unloaded
/// specimen of the given condition.
pub fn mean_conductivity_change(
    mesh: &Mesh,
    params: &MaterialParams,
    condition: Condition,
    load_n: f64,
) -> Result<f64> {
    let scenario = |load| Scenario {
        kind: Experiment::Health,
        r: 0.0,
        theta_deg: 0.0,
        crack_angle_deg: Some(0.0),
        condition,
        load_n: load,
        specimen_id: 1,
    };
    let loaded = render_field(mesh, &scenario(load_n), params)?;
    let unloaded = render_field(mesh, &scenario(0.0), params)?;
    let disc = mesh.elements_in_region(&Region::Disc {
        center: [0.0, 0.0],
        radius: params.specimen_radius,
    });
    let total: f64 = disc
        .iter()
        .map(|&k| (loaded.values()[k] - unloaded.values()[k]).abs())
        .sum();
    Ok(total / disc.len() as f64)
}
