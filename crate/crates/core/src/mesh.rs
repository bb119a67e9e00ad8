//! Concentric-ring triangulation of the circular tank cross-section.
//!
//! Every ring carries a multiple of 16 nodes, so the whole mesh (nodes,
//! elements and electrode patches) is invariant under rotation by one
//! electrode pitch. Ring-to-ring stitching is decided with exact integer
//! arithmetic, which keeps that symmetry bit-exact.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ELECTRODES: usize = 16;

pub const DEFAULT_TANK_RADIUS: f64 = 0.075;
pub const DEFAULT_REFINEMENT: u32 = 1;
pub const DEFAULT_ELECTRODE_COVERAGE: f64 = 0.5;

pub type Point = [f64; 2];

/// Per-element constant geometry of a linear triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry {
    pub centroid: Point,
    pub area: f64,
    /// Gradients of the three barycentric shape functions.
    pub gradients: [Point; 3],
}

impl ElementGeometry {
    fn from_vertices(p: [Point; 3]) -> Self {
        let [a, b, c] = p;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let area = 0.5 * det;
        let grad = |q: Point, r: Point| [(q[1] - r[1]) / det, (r[0] - q[0]) / det];
        Self {
            centroid: [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0],
            area,
            gradients: [grad(b, c), grad(c, a), grad(a, b)],
        }
    }
}

/// Description of a single ring of nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ring {
    first_node: usize,
    /// Nodes per electrode sector.
    per_sector: usize,
    /// Doubled angular offset in units of the ring's node spacing (0 or 1).
    offset2: usize,
}

impl Ring {
    fn len(&self) -> usize {
        self.per_sector * N_ELECTRODES
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    electrode_edges: Vec<Vec<[usize; 2]>>,
    boundary_edges: Vec<[usize; 2]>,
    tank_radius: f64,
    refinement_level: u32,
    geometry: Vec<ElementGeometry>,
}

/// Region predicates over element centroids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Disc {
        center: Point,
        radius: f64,
    },
    Annulus {
        center: Point,
        r_in: f64,
        r_out: f64,
    },
    /// Rectangle starting at `center`, running `length` along `angle_deg`,
    /// with total `width` across.
    Slit {
        center: Point,
        angle_deg: f64,
        length: f64,
        width: f64,
    },
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Region::Disc { center, radius } => dist(p, center) < radius,
            Region::Annulus {
                center,
                r_in,
                r_out,
            } => {
                let d = dist(p, center);
                d >= r_in && d < r_out
            }
            Region::Slit {
                center,
                angle_deg,
                length,
                width,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let along = dx * c + dy * s;
                let across = -dx * s + dy * c;
                (0.0..=length).contains(&along) && across.abs() <= 0.5 * width
            }
        }
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Target element size relative to the tank radius at refinement 1: fine
/// where specimens sit, coarser mid-tank, fine again under the electrodes.
fn relative_size(rho: f64) -> f64 {
    const H_IN: f64 = 0.034;
    const H_MID: f64 = 0.10;
    const H_BND: f64 = 0.02;
    if rho <= 0.35 {
        H_IN
    } else if rho <= 0.6 {
        H_IN + (H_MID - H_IN) * (rho - 0.35) / 0.25
    } else if rho <= 0.8 {
        H_MID
    } else {
        H_MID + (H_BND - H_MID) * ((rho - 0.8) / 0.2).min(1.0)
    }
}

/// Builds the tank mesh.
///
/// `electrode_coverage` is the fraction of each electrode's 1/16 arc sector
/// covered by the electrode. The realised coverage is snapped to a whole
/// number of boundary edges (at least two).
pub fn build_mesh(tank_radius: f64, refinement_level: u32, electrode_coverage: f64) -> Result<Mesh> {
    if !(tank_radius.is_finite() && tank_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tank_radius must be positive, got {tank_radius}"
        )));
    }
    if refinement_level < 1 || refinement_level > 16 {
        return Err(Error::InvalidParameter(format!(
            "refinement_level must be in 1..=16, got {refinement_level}"
        )));
    }
    if !(electrode_coverage > 0.0 && electrode_coverage < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "electrode_coverage must lie in (0, 1), got {electrode_coverage}"
        )));
    }
    let level = refinement_level as f64;

    // March ring radii outward, then stretch so the last ring hits 1 exactly.
    let mut radii = vec![0.0];
    let mut rho = 0.0;
    while rho < 1.0 - 1e-9 {
        rho += relative_size(rho) / level;
        radii.push(rho);
    }
    // Drop a sliver ring if the last step overshot by a lot.
    if radii.len() > 2 {
        let n = radii.len();
        let last_step = radii[n - 1] - radii[n - 2];
        if radii[n - 1] - 1.0 > 0.5 * last_step {
            radii.pop();
        }
    }
    let scale = *radii.last().unwrap();
    for r in radii.iter_mut() {
        *r /= scale;
    }
    let n_rings = radii.len() - 1;

    let mut per_sector: Vec<usize> = (1..=n_rings)
        .map(|k| {
            let r = radii[k];
            let h = relative_size(r) / level;
            ((2.0 * PI * r / (N_ELECTRODES as f64 * h)).round() as usize).max(1)
        })
        .collect();
    // Boundary: an even number of edges per sector, electrodes snapped to
    // whole edges and always leaving a gap.
    let mut m_bnd = *per_sector.last().unwrap();
    m_bnd = m_bnd.max(4);
    if m_bnd % 2 == 1 {
        m_bnd += 1;
    }
    *per_sector.last_mut().unwrap() = m_bnd;
    let n_e = ((electrode_coverage * m_bnd as f64).round() as usize)
        .max(2)
        .min(m_bnd - 1);
    // Odd edge counts centre the electrode on an edge midpoint, which needs
    // the boundary nodes shifted by half a spacing.
    let bnd_offset2 = n_e % 2;

    let mut nodes: Vec<Point> = vec![[0.0, 0.0]];
    let mut rings = Vec::with_capacity(n_rings);
    for (k, &m) in per_sector.iter().enumerate() {
        let offset2 = if k + 1 == n_rings { bnd_offset2 } else { 0 };
        let ring = Ring {
            first_node: nodes.len(),
            per_sector: m,
            offset2,
        };
        let n = ring.len();
        let r = radii[k + 1] * tank_radius;
        for j in 0..n {
            let t = 2.0 * PI * (2 * j + offset2) as f64 / (2 * n) as f64;
            let (s, c) = t.sin_cos();
            nodes.push([r * c, r * s]);
        }
        rings.push(ring);
    }

    let mut elements = Vec::new();
    let first = rings[0];
    for j in 0..first.len() {
        let b0 = first.first_node + j;
        let b1 = first.first_node + (j + 1) % first.len();
        elements.push([0, b0, b1]);
    }
    for pair in rings.windows(2) {
        stitch(pair[0], pair[1], &mut elements);
    }

    let bnd = *rings.last().unwrap();
    let n_b = bnd.len();
    let boundary_edges: Vec<[usize; 2]> = (0..n_b)
        .map(|j| [bnd.first_node + j, bnd.first_node + (j + 1) % n_b])
        .collect();
    let mut electrode_edges = vec![Vec::new(); N_ELECTRODES];
    let half = (n_e as i64 - 1) as f64 / 2.0;
    for (e, edges) in electrode_edges.iter_mut().enumerate() {
        let center = (e * m_bnd) as f64;
        let nb = n_b as f64;
        let mut hits: Vec<(i64, [usize; 2])> = Vec::new();
        for (j, edge) in boundary_edges.iter().enumerate() {
            // edge midpoint position in units of boundary spacing
            let mid = j as f64 + bnd_offset2 as f64 * 0.5 + 0.5;
            let mut d = mid - center;
            d -= nb * (d / nb).round();
            if d.abs() <= half + 1e-9 {
                hits.push(((2.0 * d).round() as i64, *edge));
            }
        }
        // counterclockwise order across the patch
        hits.sort_by_key(|h| h.0);
        *edges = hits.into_iter().map(|h| h.1).collect();
    }

    Mesh::from_parts(
        nodes,
        elements,
        electrode_edges,
        boundary_edges,
        tank_radius,
        refinement_level,
    )
}

/// Triangulates the band between an inner and an outer ring.
fn stitch(inner: Ring, outer: Ring, elements: &mut Vec<[usize; 3]>) {
    let na = inner.len();
    let nb = outer.len();
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let a = inner.first_node + i % na;
        let b = outer.first_node + j % nb;
        // Compare angles of the next candidate nodes exactly:
        // (2(i+1)+oa)/(2na) vs (2(j+1)+ob)/(2nb).
        let advance_inner = if i == na {
            false
        } else if j == nb {
            true
        } else {
            let lhs = (2 * (i + 1) + inner.offset2) * nb;
            let rhs = (2 * (j + 1) + outer.offset2) * na;
            lhs <= rhs
        };
        if advance_inner {
            let a1 = inner.first_node + (i + 1) % na;
            elements.push([a, b, a1]);
            i += 1;
        } else {
            let b1 = outer.first_node + (j + 1) % nb;
            elements.push([a, b, b1]);
            j += 1;
        }
    }
}

impl Mesh {
    fn from_parts(
        nodes: Vec<Point>,
        elements: Vec<[usize; 3]>,
        electrode_edges: Vec<Vec<[usize; 2]>>,
        boundary_edges: Vec<[usize; 2]>,
        tank_radius: f64,
        refinement_level: u32,
    ) -> Result<Self> {
        let mut geometry = Vec::with_capacity(elements.len());
        for (k, el) in elements.iter().enumerate() {
            for &n in el {
                if n >= nodes.len() {
                    return Err(Error::Geometry(format!(
                        "element {k} references missing node {n}"
                    )));
                }
            }
            let g = ElementGeometry::from_vertices([nodes[el[0]], nodes[el[1]], nodes[el[2]]]);
            if !(g.area > 0.0) {
                return Err(Error::Geometry(format!(
                    "element {k} has non-positive signed area {}",
                    g.area
                )));
            }
            geometry.push(g);
        }
        if electrode_edges.len() != N_ELECTRODES {
            return Err(Error::dims("electrode patches", N_ELECTRODES, electrode_edges.len()));
        }
        Ok(Self {
            nodes,
            elements,
            electrode_edges,
            boundary_edges,
            tank_radius,
            refinement_level,
            geometry,
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn electrode_edges(&self) -> &[Vec<[usize; 2]>] {
        &self.electrode_edges
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn tank_radius(&self) -> f64 {
        self.tank_radius
    }

    pub fn refinement_level(&self) -> u32 {
        self.refinement_level
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn edge_length(&self, edge: [usize; 2]) -> f64 {
        dist(self.nodes[edge[0]], self.nodes[edge[1]])
    }

    /// Arc length covered by electrode `e`.
    pub fn electrode_length(&self, e: usize) -> f64 {
        self.electrode_edges[e]
            .iter()
            .map(|&edge| self.edge_length(edge))
            .sum()
    }

    pub fn elements_in_region(&self, region: &Region) -> Vec<usize> {
        self.geometry
            .iter()
            .enumerate()
            .filter(|(_, g)| region.contains(g.centroid))
            .map(|(k, _)| k)
            .collect()
    }

    /// Node permutation induced by rotating the mesh `sectors` electrode
    /// pitches counterclockwise: node `i` lands on node `perm[i]`.
    pub fn node_rotation(&self, sectors: usize) -> Vec<usize> {
        let mut perm = vec![0usize; self.nodes.len()];
        // Rings are stored contiguously with 16·m nodes each; recover them
        // from the radii.
        let mut start = 1;
        while start < self.nodes.len() {
            let r0 = norm(self.nodes[start]);
            let mut end = start + 1;
            while end < self.nodes.len() && (norm(self.nodes[end]) - r0).abs() <= 1e-9 * self.tank_radius {
                end += 1;
            }
            let n = end - start;
            let shift = sectors * n / N_ELECTRODES;
            for j in 0..n {
                perm[start + j] = start + (j + shift) % n;
            }
            start = end;
        }
        perm
    }

    /// Element permutation induced by the same rotation as [`Mesh::node_rotation`].
    pub fn element_rotation(&self, sectors: usize) -> Vec<usize> {
        let nodes = self.node_rotation(sectors);
        let key = |el: [usize; 3]| {
            let mut k = el;
            k.sort_unstable();
            k
        };
        let lookup: HashMap<[usize; 3], usize> = self
            .elements
            .iter()
            .enumerate()
            .map(|(k, &el)| (key(el), k))
            .collect();
        self.elements
            .iter()
            .map(|el| lookup[&key([nodes[el[0]], nodes[el[1]], nodes[el[2]]])])
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MeshFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text)?;
        Mesh::from_parts(
            file.nodes,
            file.elements,
            file.electrode_edges,
            file.boundary_edges,
            file.tank_radius,
            file.refinement_level,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn norm(p: Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    tank_radius: f64,
    refinement_level: u32,
    nodes: Vec<Point>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    electrode_edges: Vec<Vec<[usize; 2]>>,
}

impl From<&Mesh> for MeshFile {
    fn from(m: &Mesh) -> Self {
        Self {
            tank_radius: m.tank_radius,
            refinement_level: m.refinement_level,
            nodes: m.nodes.clone(),
            elements: m.elements.clone(),
            boundary_edges: m.boundary_edges.clone(),
            electrode_edges: m.electrode_edges.clone(),
        }
    }
}
