//! One-step linearized difference imaging and SVG heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{jacobian, ConductivityField, DriveProtocol, DEFAULT_CONTACT_IMPEDANCE};
use crate::mesh::Mesh;

pub const DEFAULT_LAMBDA: f64 = 0.05;
/// Share of elements, by |Δσ|, that make up the localized blob.
pub const BLOB_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prior {
    Identity,
    SensitivityWeighted,
}

impl std::str::FromStr for Prior {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Prior::Identity),
            "sensitivity-weighted" | "sensitivity" => Ok(Prior::SensitivityWeighted),
            _ => Err(Error::InvalidParameter(format!("unknown prior '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub lambda: f64,
    pub prior: Prior,
    pub reference_field: ConductivityField,
    pub contact_impedance: f64,
}

impl ReconConfig {
    /// Default settings linearized about a homogeneous background.
    pub fn homogeneous(mesh: &Mesh, sigma: f64) -> Result<Self> {
        Ok(Self {
            lambda: DEFAULT_LAMBDA,
            prior: Prior::SensitivityWeighted,
            reference_field: ConductivityField::uniform(mesh.n_elements(), sigma)?,
            contact_impedance: DEFAULT_CONTACT_IMPEDANCE,
        })
    }
}

/// Precomputed linear map from a difference frame to Δσ.
///
/// Uses the identity `(JᵀJ + λ²P)⁻¹Jᵀ = P⁻¹Jᵀ(JP⁻¹Jᵀ + λ²I)⁻¹`, so only a
/// channel-sized system is factored.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    operator: DMatrix<f64>,
}

impl Reconstructor {
    pub fn new(mesh: &Mesh, protocol: &DriveProtocol, config: &ReconConfig) -> Result<Self> {
        if config.reference_field.len() != mesh.n_elements() {
            return Err(Error::dims(
                "reference field",
                mesh.n_elements(),
                config.reference_field.len(),
            ));
        }
        let j = jacobian(mesh, &config.reference_field, protocol, config.contact_impedance)?;
        Self::from_jacobian(&j, config.lambda, config.prior)
    }

    pub fn from_jacobian(j: &DMatrix<f64>, lambda: f64, prior: Prior) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        let n = j.ncols();
        let p: Vec<f64> = match prior {
            Prior::Identity => vec![1.0; n],
            Prior::SensitivityWeighted => j.column_iter().map(|c| c.norm_squared()).collect(),
        };
        if let Some(k) = p.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Singular(format!("element {k} has zero sensitivity")));
        }
        // P⁻¹Jᵀ
        let mut pjt = j.transpose();
        for (k, mut row) in pjt.row_iter_mut().enumerate() {
            row /= p[k];
        }
        let mut k = j * &pjt;
        let scale = (0..k.nrows()).map(|i| k[(i, i)]).fold(0.0, f64::max);
        for i in 0..k.nrows() {
            k[(i, i)] += lambda * lambda;
        }
        let chol = k
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("regularized normal equations not positive definite".into()))?;
        let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
        if min_pivot < 1e-13 * scale {
            return Err(Error::Singular(format!(
                "normal equations are rank deficient (pivot {min_pivot:e}, scale {scale:e})"
            )));
        }
        // operator = P⁻¹Jᵀ K⁻¹ = (K⁻¹ J P⁻¹)ᵀ
        let op = chol.solve(&pjt.transpose()).transpose();
        Ok(Self { operator: op })
    }

    pub fn n_elements(&self) -> usize {
        self.operator.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.operator.ncols()
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    pub fn reconstruct(&self, delta_v: &[f64]) -> Result<Vec<f64>> {
        if delta_v.len() != self.n_channels() {
            return Err(Error::dims("difference frame", self.n_channels(), delta_v.len()));
        }
        let x = &self.operator * DVector::from_column_slice(delta_v);
        Ok(x.as_slice().to_vec())
    }
}

/// Convenience wrapper building a fresh [`Reconstructor`].
pub fn reconstruct(
    mesh: &Mesh,
    protocol: &DriveProtocol,
    config: &ReconConfig,
    delta_v: &[f64],
) -> Result<Vec<f64>> {
    Reconstructor::new(mesh, protocol, config)?.reconstruct(delta_v)
}

/// Area-weighted centroid of the elements holding the largest `fraction`
/// of |Δσ| values.
pub fn blob_centroid(mesh: &Mesh, delta_sigma: &[f64], fraction: f64) -> Result<[f64; 2]> {
    if delta_sigma.len() != mesh.n_elements() {
        return Err(Error::dims("conductivity change", mesh.n_elements(), delta_sigma.len()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let mut order: Vec<usize> = (0..delta_sigma.len()).collect();
    order.sort_by(|&a, &b| delta_sigma[b].abs().total_cmp(&delta_sigma[a].abs()).then(a.cmp(&b)));
    let take = ((fraction * order.len() as f64).ceil() as usize).max(1);
    let geo = mesh.geometry();
    let (mut x, mut y, mut w) = (0.0, 0.0, 0.0);
    for &k in &order[..take] {
        let g = &geo[k];
        x += g.area * g.centroid[0];
        y += g.area * g.centroid[1];
        w += g.area;
    }
    Ok([x / w, y / w])
}

/// Diverging blue-white-red colour for `t` in [-1, 1].
pub fn diverging_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |u: f64| (255.0 * (1.0 - u.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(t), fade(t), 255]
    }
}

/// Filled-triangle SVG of an element field with a colour scale symmetric
/// about zero, tank outline and electrodes.
pub fn render_heatmap(mesh: &Mesh, delta_sigma: &[f64]) -> Result<String> {
    if delta_sigma.len() != mesh.n_elements() {
        return Err(Error::dims("conductivity change", mesh.n_elements(), delta_sigma.len()));
    }
    const SIZE: f64 = 400.0;
    const PAD: f64 = 12.0;
    let r = mesh.tank_radius();
    let s = (SIZE - 2.0 * PAD) / (2.0 * r);
    let px = |p: [f64; 2]| (PAD + (p[0] + r) * s, PAD + (r - p[1]) * s);
    let vmax = delta_sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nodes = mesh.nodes();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<g stroke="none">"#);
    for (tri, v) in mesh.elements().iter().zip(delta_sigma) {
        let t = if vmax > 0.0 { v / vmax } else { 0.0 };
        let [cr, cg, cb] = diverging_color(t);
        let pts: Vec<String> = tri
            .iter()
            .map(|&i| {
                let (x, y) = px(nodes[i]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#{cr:02x}{cg:02x}{cb:02x}"/>"##,
            pts.join(" ")
        );
    }
    let _ = writeln!(out, "</g>");
    let (cx, cy) = px([0.0, 0.0]);
    let _ = writeln!(
        out,
        r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
        r * s
    );
    for (e, edges) in mesh.electrode_edges().iter().enumerate() {
        let mut d = String::new();
        for (i, edge) in edges.iter().enumerate() {
            let (x0, y0) = px(nodes[edge[0]]);
            let (x1, y1) = px(nodes[edge[1]]);
            if i == 0 {
                let _ = write!(d, "M{x0:.2},{y0:.2}");
            }
            let _ = write!(d, " L{x1:.2},{y1:.2}");
        }
        let _ = writeln!(
            out,
            r#"<path id="e{e}" d="{d}" fill="none" stroke="black" stroke-width="4"/>"#
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{:.2}" font-size="10" font-family="monospace">max |dsigma| = {vmax:.3e}</text>"#,
        SIZE - 2.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_delta_csv(path: &Path, delta_sigma: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["element", "delta_sigma"])?;
    for (k, v) in delta_sigma.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn dual_form_matches_primal_normal_equations() {
        let j = random_matrix(12, 40, 3);
        let dv = DVector::from_fn(12, |i, _| (i as f64 * 0.37).cos());
        for prior in [Prior::Identity, Prior::SensitivityWeighted] {
            let rec = Reconstructor::from_jacobian(&j, 0.3, prior).unwrap();
            let x = rec.reconstruct(dv.as_slice()).unwrap();
            let mut a = j.transpose() * &j;
            let diag: Vec<f64> = (0..40).map(|k| a[(k, k)]).collect();
            for k in 0..40 {
                a[(k, k)] += 0.09 * if prior == Prior::Identity { 1.0 } else { diag[k] };
            }
            let xp = a.lu().solve(&(j.transpose() * &dv)).unwrap();
            for k in 0..40 {
                assert!((x[k] - xp[k]).abs() < 1e-10 * xp.amax(), "{prior:?} {k}");
            }
        }
    }

    #[test]
    fn zero_lambda_rank_deficient_is_reported() {
        // rank 3 with 6 channels
        let j = random_matrix(6, 3, 5) * random_matrix(3, 20, 6);
        assert!(matches!(
            Reconstructor::from_jacobian(&j, 0.0, Prior::SensitivityWeighted),
            Err(Error::Singular(_))
        ));
        assert!(Reconstructor::from_jacobian(&j, -1.0, Prior::Identity).is_err());
    }

    #[test]
    fn linear_in_delta_v() {
        let j = random_matrix(10, 30, 9);
        let rec = Reconstructor::from_jacobian(&j, 0.05, Prior::SensitivityWeighted).unwrap();
        assert!(rec.reconstruct(&[0.0; 10]).unwrap().iter().all(|&v| v == 0.0));
        let a: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).cos()).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let (ra, rb, rm) = (
            rec.reconstruct(&a).unwrap(),
            rec.reconstruct(&b).unwrap(),
            rec.reconstruct(&mix).unwrap(),
        );
        for k in 0..30 {
            assert!((rm[k] - (2.0 * ra[k] - 0.5 * rb[k])).abs() < 1e-10);
        }
        assert!(rec.reconstruct(&[0.0; 3]).is_err());
    }

    #[test]
    fn colormap_symmetry() {
        assert_eq!(diverging_color(0.0), [255, 255, 255]);
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let [r, g, b] = diverging_color(t);
            assert_eq!(diverging_color(-t), [b, g, r]);
        }
    }

    #[test]
    fn heatmap_zero_field_is_midpoint() {
        let m = build_mesh(0.075, 1, 0.5).unwrap();
        let svg = render_heatmap(&m, &vec![0.0; m.n_elements()]).unwrap();
        assert_eq!(svg.matches("<polygon").count(), m.n_elements());
        assert_eq!(svg.matches(r##"fill="#ffffff""##).count(), m.n_elements());
        assert_eq!(svg.matches("<path id=\"e").count(), 16);
        assert_eq!(svg, render_heatmap(&m, &vec![0.0; m.n_elements()]).unwrap());
    }

    #[test]
    fn heatmap_sign_flip_mirrors_colours() {
        let m = build_mesh(0.075, 1, 0.5).unwrap();
        let v: Vec<f64> = (0..m.n_elements()).map(|k| (k as f64 * 0.01).sin()).collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let a = render_heatmap(&m, &v).unwrap();
        let b = render_heatmap(&m, &neg).unwrap();
        let fills = |s: &str| -> Vec<String> {
            s.split("fill=\"#").skip(1).map(|t| t[..6].to_string()).collect()
        };
        for (x, y) in fills(&a).iter().zip(fills(&b)) {
            assert_eq!(&x[0..2], &y[4..6]);
            assert_eq!(&x[2..4], &y[2..4]);
            assert_eq!(&x[4..6], &y[0..2]);
        }
    }
}
