//! Complete electrode model (CEM) forward solver.
//!
//! Piecewise-linear potentials on the mesh, element-wise constant
//! conductivity, and 16 electrode potentials coupled through a uniform
//! contact impedance. The singular CEM matrix is grounded by adding the
//! rank-one term `c·g·gᵀ`, where `g` selects the electrode unknowns. Because
//! injected currents sum to zero this enforces `Σ U_l = 0` while keeping
//! the system symmetric positive definite.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SkylineCholesky, SkylineMatrix};
use crate::mesh::{Mesh, N_ELECTRODES};

pub const N_CHANNELS: usize = 208;
pub const DEFAULT_CURRENT: f64 = 1e-3;
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 1e-3;

/// Per-element conductivity (S/m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductivityField(Vec<f64>);

impl ConductivityField {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some((k, s)) = sigma
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(Error::Singular(format!(
                "conductivity of element {k} is {s}; must be positive and finite"
            )));
        }
        Ok(Self(sigma))
    }

    pub fn uniform(n: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![sigma; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Current-injection patterns and the electrode pairs read out for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProtocol {
    pub patterns: Vec<(usize, usize)>,
    pub current_amplitude: f64,
    pub measurement_pairs: Vec<Vec<(usize, usize)>>,
}

impl DriveProtocol {
    /// Adjacent drive, adjacent measurement, skipping any pair that touches a
    /// driven electrode: 16 × 13 = 208 channels.
    pub fn adjacent(current_amplitude: f64) -> Self {
        let n = N_ELECTRODES;
        let patterns: Vec<(usize, usize)> = (0..n).map(|p| (p, (p + 1) % n)).collect();
        let measurement_pairs = patterns
            .iter()
            .map(|&(a, b)| {
                (0..n)
                    .map(|m| (m, (m + 1) % n))
                    .filter(|&(c, d)| c != a && c != b && d != a && d != b)
                    .collect()
            })
            .collect();
        Self {
            patterns,
            current_amplitude,
            measurement_pairs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.current_amplitude > 0.0 && self.current_amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "current amplitude must be positive, got {}",
                self.current_amplitude
            )));
        }
        if self.patterns.len() != self.measurement_pairs.len() {
            return Err(Error::dims(
                "measurement pair lists",
                self.patterns.len(),
                self.measurement_pairs.len(),
            ));
        }
        let all = self
            .patterns
            .iter()
            .chain(self.measurement_pairs.iter().flatten());
        for &(a, b) in all {
            if a >= N_ELECTRODES || b >= N_ELECTRODES || a == b {
                return Err(Error::InvalidParameter(format!(
                    "invalid electrode pair ({a}, {b})"
                )));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.measurement_pairs.iter().map(Vec::len).sum()
    }

    /// `(pattern, (+, −))` for every channel in frame order.
    pub fn channels(&self) -> impl Iterator<Item = (usize, (usize, usize))> + '_ {
        self.measurement_pairs
            .iter()
            .enumerate()
            .flat_map(|(p, pairs)| pairs.iter().map(move |&pair| (p, pair)))
    }
}

impl Default for DriveProtocol {
    fn default() -> Self {
        Self::adjacent(DEFAULT_CURRENT)
    }
}

/// Labels attached to a simulated frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub scenario: String,
    pub specimen_id: u32,
    pub r_cm: Option<f64>,
    pub theta_deg: Option<f64>,
    pub crack_deg: Option<f64>,
    pub condition: Option<String>,
    pub load_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub v: Vec<f64>,
    pub meta: FrameMeta,
}

#[derive(Debug, Clone)]
pub struct CemSolution {
    pub nodal: Vec<f64>,
    pub electrode: Vec<f64>,
    pub contact_impedance: f64,
    /// Relative residual `‖A x − b‖ / ‖b‖` of the grounded system.
    pub residual: f64,
}

/// Assembled and factored CEM system for one conductivity field.
#[derive(Debug, Clone)]
pub struct CemSystem {
    n_nodes: usize,
    matrix: SkylineMatrix,
    factor: SkylineCholesky,
    contact_impedance: f64,
}

impl CemSystem {
    pub fn assemble(mesh: &Mesh, field: &ConductivityField, contact_impedance: f64) -> Result<Self> {
        if field.len() != mesh.n_elements() {
            return Err(Error::dims("conductivity field", mesh.n_elements(), field.len()));
        }
        if !(contact_impedance > 0.0 && contact_impedance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "contact impedance must be positive, got {contact_impedance}"
            )));
        }
        let n_nodes = mesh.n_nodes();
        let n = n_nodes + N_ELECTRODES;
        let elements = mesh.elements();
        let electrode_edges = mesh.electrode_edges();

        let pattern = elements
            .iter()
            .flat_map(|el| [(el[0], el[1]), (el[1], el[2]), (el[2], el[0])])
            .chain(electrode_edges.iter().enumerate().flat_map(|(l, edges)| {
                edges
                    .iter()
                    .flat_map(move |e| [(e[0], e[1]), (n_nodes + l, e[0]), (n_nodes + l, e[1])])
            }))
            .chain((0..N_ELECTRODES).flat_map(|a| (0..a).map(move |b| (n_nodes + a, n_nodes + b))));
        let mut a = SkylineMatrix::with_pattern(n, pattern);

        for ((el, g), &s) in elements.iter().zip(mesh.geometry()).zip(field.values()) {
            for p in 0..3 {
                for q in 0..=p {
                    let v = s * g.area * dot(g.gradients[p], g.gradients[q]);
                    a.add(el[p], el[q], v);
                }
            }
        }
        let zinv = 1.0 / contact_impedance;
        let mut ground = 0.0;
        for (l, edges) in electrode_edges.iter().enumerate() {
            let el = n_nodes + l;
            let mut len = 0.0;
            for &[i, j] in edges {
                let h = mesh.edge_length([i, j]);
                len += h;
                a.add(i, i, zinv * h / 3.0);
                a.add(j, j, zinv * h / 3.0);
                a.add(i, j, zinv * h / 6.0);
                a.add(el, i, -zinv * h / 2.0);
                a.add(el, j, -zinv * h / 2.0);
            }
            a.add(el, el, zinv * len);
            ground += zinv * len;
        }
        ground /= N_ELECTRODES as f64;
        for p in 0..N_ELECTRODES {
            for q in 0..=p {
                a.add(n_nodes + p, n_nodes + q, ground);
            }
        }
        let factor = a.clone().cholesky()?;
        Ok(Self {
            n_nodes,
            matrix: a,
            factor,
            contact_impedance,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Potentials for `amplitude` amperes injected at `source` and drawn
    /// at `sink`.
    pub fn solve(&self, source: usize, sink: usize, amplitude: f64) -> CemSolution {
        let mut rhs = vec![0.0; self.n_nodes + N_ELECTRODES];
        rhs[self.n_nodes + source] += amplitude;
        rhs[self.n_nodes + sink] -= amplitude;
        let mut x = self.factor.solve(&rhs);
        // The contact-impedance block dwarfs the stiffness block; refining
        // against an extra-precise residual recovers the digits lost to that.
        for _ in 0..2 {
            let dx = self.factor.solve(&self.matrix.residual(&x, &rhs));
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
        }
        let num: f64 = self.matrix.residual(&x, &rhs).iter().map(|r| r * r).sum();
        let den: f64 = rhs.iter().map(|q| q * q).sum();
        let residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        let electrode = x[self.n_nodes..].to_vec();
        let mut nodal = x;
        nodal.truncate(self.n_nodes);
        CemSolution {
            nodal,
            electrode,
            contact_impedance: self.contact_impedance,
            residual,
        }
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn check_amplitude(amplitude: f64) -> Result<()> {
    if amplitude > 0.0 && amplitude.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "current amplitude must be positive, got {amplitude}"
        )))
    }
}

/// Solves a single drive pattern.
pub fn assemble_and_solve(
    mesh: &Mesh,
    field: &ConductivityField,
    pattern: (usize, usize),
    amplitude: f64,
    contact_impedance: f64,
) -> Result<CemSolution> {
    check_amplitude(amplitude)?;
    let (a, b) = pattern;
    if a >= N_ELECTRODES || b >= N_ELECTRODES || a == b {
        return Err(Error::InvalidParameter(format!("invalid drive pair ({a}, {b})")));
    }
    let system = CemSystem::assemble(mesh, field, contact_impedance)?;
    let sol = system.solve(a, b, amplitude);
    if !(sol.residual <= 1e-10) {
        return Err(Error::Numerical(format!(
            "linear solve residual {:e} exceeds 1e-10",
            sol.residual
        )));
    }
    Ok(sol)
}

fn frame_from_solutions(protocol: &DriveProtocol, solutions: &[CemSolution]) -> Vec<f64> {
    protocol
        .channels()
        .map(|(p, (c, d))| solutions[p].electrode[c] - solutions[p].electrode[d])
        .collect()
}

/// Noiseless boundary voltages for every channel of `protocol`.
pub fn measure(
    mesh: &Mesh,
    field: &ConductivityField,
    protocol: &DriveProtocol,
    contact_impedance: f64,
) -> Result<MeasurementFrame> {
    protocol.validate()?;
    let system = CemSystem::assemble(mesh, field, contact_impedance)?;
    let solutions: Vec<CemSolution> = protocol
        .patterns
        .iter()
        .map(|&(a, b)| system.solve(a, b, protocol.current_amplitude))
        .collect();
    Ok(MeasurementFrame {
        v: frame_from_solutions(protocol, &solutions),
        meta: FrameMeta::default(),
    })
}

fn element_gradients(mesh: &Mesh, nodal: &[f64]) -> Vec<[f64; 2]> {
    mesh.elements()
        .iter()
        .zip(mesh.geometry())
        .map(|(el, g)| {
            let mut grad = [0.0; 2];
            for a in 0..3 {
                grad[0] += nodal[el[a]] * g.gradients[a][0];
                grad[1] += nodal[el[a]] * g.gradients[a][1];
            }
            grad
        })
        .collect()
}

/// Sensitivity of every channel to every element conductivity,
/// `J[m, k] = ∂v_m / ∂σ_k`, via the adjoint (reciprocity) formula
/// `−∫_k ∇u_drive · ∇u_meas / I_meas`.
pub fn jacobian(
    mesh: &Mesh,
    field: &ConductivityField,
    protocol: &DriveProtocol,
    contact_impedance: f64,
) -> Result<DMatrix<f64>> {
    Ok(jacobian_and_frame(mesh, field, protocol, contact_impedance)?.0)
}

/// Jacobian plus the frame at the linearization point, sharing one
/// factorization.
pub fn jacobian_and_frame(
    mesh: &Mesh,
    field: &ConductivityField,
    protocol: &DriveProtocol,
    contact_impedance: f64,
) -> Result<(DMatrix<f64>, MeasurementFrame)> {
    protocol.validate()?;
    let system = CemSystem::assemble(mesh, field, contact_impedance)?;
    let amp = protocol.current_amplitude;
    let solutions: Vec<CemSolution> = protocol
        .patterns
        .iter()
        .map(|&(a, b)| system.solve(a, b, amp))
        .collect();
    let mut cache: Vec<((usize, usize), Vec<[f64; 2]>)> = protocol
        .patterns
        .iter()
        .zip(&solutions)
        .map(|(&p, s)| (p, element_gradients(mesh, &s.nodal)))
        .collect();
    let n_drive = cache.len();
    // measurement fields not already available as drive fields
    for (_, pair) in protocol.channels() {
        if !cache.iter().any(|(p, _)| *p == pair) {
            let s = system.solve(pair.0, pair.1, amp);
            cache.push((pair, element_gradients(mesh, &s.nodal)));
        }
    }
    let areas: Vec<f64> = mesh.geometry().iter().map(|g| g.area).collect();
    let n_el = mesh.n_elements();
    let mut jac = DMatrix::<f64>::zeros(protocol.n_channels(), n_el);
    for (row, (p, pair)) in protocol.channels().enumerate() {
        let drive = &cache[p].1;
        debug_assert!(p < n_drive);
        let meas = &cache.iter().find(|(q, _)| *q == pair).unwrap().1;
        for k in 0..n_el {
            jac[(row, k)] = -areas[k] * dot(drive[k], meas[k]) / amp;
        }
    }
    let frame = MeasurementFrame {
        v: frame_from_solutions(protocol, &solutions),
        meta: FrameMeta::default(),
    };
    Ok((jac, frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    fn setup() -> (Mesh, ConductivityField) {
        let mesh = build_mesh(0.075, 1, 0.5).unwrap();
        let field = ConductivityField::uniform(mesh.n_elements(), 2e-4).unwrap();
        (mesh, field)
    }

    #[test]
    fn adjacent_protocol_shape() {
        let p = DriveProtocol::adjacent(1e-3);
        assert_eq!(p.patterns.len(), 16);
        assert!(p.measurement_pairs.iter().all(|m| m.len() == 13));
        assert_eq!(p.n_channels(), N_CHANNELS);
        assert_eq!(p.patterns[15], (15, 0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mesh, field) = setup();
        assert!(matches!(
            ConductivityField::new(vec![1.0, 0.0]),
            Err(Error::Singular(_))
        ));
        let short = ConductivityField::uniform(3, 1.0).unwrap();
        assert!(matches!(
            assemble_and_solve(&mesh, &short, (0, 1), 1e-3, 1e-3),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(assemble_and_solve(&mesh, &field, (0, 1), 0.0, 1e-3).is_err());
        assert!(assemble_and_solve(&mesh, &field, (0, 1), 1e-3, 0.0).is_err());
        assert!(assemble_and_solve(&mesh, &field, (3, 3), 1e-3, 1e-3).is_err());
    }

    #[test]
    fn grounding_and_current_balance() {
        let (mesh, field) = setup();
        let z = 1e-3;
        let sol = assemble_and_solve(&mesh, &field, (0, 1), 1e-3, z).unwrap();
        assert!(sol.residual <= 1e-10);
        let sum: f64 = sol.electrode.iter().sum();
        let scale = sol.electrode.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sum.abs() <= 1e-12 * scale);
        // current through each electrode: ∫ (U_l − u)/z ds
        for (l, edges) in mesh.electrode_edges().iter().enumerate() {
            let mut current = 0.0;
            for &[i, j] in edges {
                let h = mesh.edge_length([i, j]);
                current += h * (sol.electrode[l] - 0.5 * (sol.nodal[i] + sol.nodal[j])) / z;
            }
            let expected = match l {
                0 => 1e-3,
                1 => -1e-3,
                _ => 0.0,
            };
            assert!((current - expected).abs() < 1e-9, "electrode {l}: {current}");
        }
    }

    #[test]
    fn antisymmetric_under_source_sink_swap() {
        let (mesh, field) = setup();
        let a = assemble_and_solve(&mesh, &field, (3, 4), 1e-3, 1e-3).unwrap();
        let b = assemble_and_solve(&mesh, &field, (4, 3), 1e-3, 1e-3).unwrap();
        for (x, y) in a.electrode.iter().zip(&b.electrode) {
            assert!((x + y).abs() < 1e-12);
        }
    }

    #[test]
    fn pattern_rotation_symmetry() {
        let (mesh, field) = setup();
        let base = assemble_and_solve(&mesh, &field, (0, 1), 1e-3, 1e-3).unwrap();
        let scale = base.electrode.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for p in 1..16 {
            let s = assemble_and_solve(&mesh, &field, (p, (p + 1) % 16), 1e-3, 1e-3).unwrap();
            for l in 0..16 {
                let d = s.electrode[(l + p) % 16] - base.electrode[l];
                assert!(d.abs() <= 1e-9 * scale, "pattern {p} electrode {l}: {d}");
            }
        }
    }

    #[test]
    fn scaling_sigma_and_contact_impedance() {
        let (mesh, field) = setup();
        let doubled =
            ConductivityField::new(field.values().iter().map(|s| 2.0 * s).collect()).unwrap();
        let a = assemble_and_solve(&mesh, &field, (2, 3), 1e-3, 1e-3).unwrap();
        let b = assemble_and_solve(&mesh, &doubled, (2, 3), 1e-3, 0.5e-3).unwrap();
        for (x, y) in a.electrode.iter().zip(&b.electrode) {
            assert!((0.5 * x - y).abs() < 1e-10 * x.abs().max(1.0), "{x} {y}");
        }
        for (x, y) in a.nodal.iter().zip(&b.nodal) {
            assert!((0.5 * x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_and_frame_agree_with_measure() {
        let (mesh, field) = setup();
        let p = DriveProtocol::default();
        let (_, frame) = jacobian_and_frame(&mesh, &field, &p, 1e-3).unwrap();
        let direct = measure(&mesh, &field, &p, 1e-3).unwrap();
        assert_eq!(frame.v, direct.v);
    }

    #[test]
    fn non_adjacent_rows_are_sums_of_adjacent_rows() {
        let (mesh, _) = setup();
        let sigma: Vec<f64> = (0..mesh.n_elements())
            .map(|k| 2e-4 * (1.0 + 0.3 * ((k as f64) * 0.37).sin()))
            .collect();
        let field = ConductivityField::new(sigma).unwrap();
        let wide = DriveProtocol {
            patterns: vec![(0, 8)],
            current_amplitude: 1e-3,
            measurement_pairs: vec![vec![(2, 5), (11, 13)]],
        };
        let narrow = DriveProtocol {
            patterns: vec![(0, 8)],
            current_amplitude: 1e-3,
            measurement_pairs: vec![vec![(2, 3), (3, 4), (4, 5), (11, 12), (12, 13)]],
        };
        let jw = jacobian(&mesh, &field, &wide, 1e-3).unwrap();
        let jn = jacobian(&mesh, &field, &narrow, 1e-3).unwrap();
        let scale = jn.amax();
        for k in 0..mesh.n_elements() {
            let a = jn[(0, k)] + jn[(1, k)] + jn[(2, k)];
            let b = jn[(3, k)] + jn[(4, k)];
            assert!((jw[(0, k)] - a).abs() <= 1e-9 * scale);
            assert!((jw[(1, k)] - b).abs() <= 1e-9 * scale);
        }
    }
}
