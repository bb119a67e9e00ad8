//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing in here calls into the forward solver: the CEM system is
//! re-assembled from raw node coordinates and solved with a dense
//! factorization refined in double-double arithmetic.

#![allow(dead_code)]

use eitdiag::mesh::Mesh;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Unevaluated sum `hi + lo` carrying ~32 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        quick_two_sum(s, e + self.lo + o.lo)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p);
        quick_two_sum(p, e + self.lo * b)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Sparse symmetric matrix stored as full (both triangles) triplets.
struct Sparse {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        match self.rows[i].iter_mut().find(|(c, _)| *c == j) {
            Some(e) => e.1 += v,
            None => self.rows[i].push((j, v)),
        }
    }

    fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.add(i, j, v);
        if i != j {
            self.add(j, i, v);
        }
    }

    fn mul_dd(&self, x: &[Dd]) -> Vec<Dd> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .fold(Dd::default(), |acc, &(j, a)| acc.add(x[j].mul_f64(a)))
            })
            .collect()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }
}

fn local_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    k
}

/// Dense-factored CEM system with an exactly separable element.
pub struct CemOracle {
    n_nodes: usize,
    base: Sparse,
    special: usize,
    special_k: [[f64; 3]; 3],
    special_nodes: [usize; 3],
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl CemOracle {
    /// Assembles everything except element `special`, whose stiffness is
    /// applied separately so its conductivity can be perturbed exactly.
    pub fn new(mesh: &Mesh, sigma: &[f64], z: f64, special: usize) -> Self {
        let n_nodes = mesh.n_nodes();
        let n = n_nodes + 16;
        let mut base = Sparse::new(n);
        let mut full = Sparse::new(n);
        let nodes = mesh.nodes();
        let mut special_k = [[0.0; 3]; 3];
        for (e, el) in mesh.elements().iter().enumerate() {
            let k = local_stiffness([nodes[el[0]], nodes[el[1]], nodes[el[2]]]);
            for i in 0..3 {
                for j in 0..3 {
                    full.add(el[i], el[j], sigma[e] * k[i][j]);
                    if e != special {
                        base.add(el[i], el[j], sigma[e] * k[i][j]);
                    }
                }
            }
            if e == special {
                special_k = k;
            }
        }
        let mut total = 0.0;
        for (l, edges) in mesh.electrode_edges().iter().enumerate() {
            let el = n_nodes + l;
            for &[i, j] in edges {
                let (a, b) = (nodes[i], nodes[j]);
                let h = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                total += h / z;
                for m in [&mut base, &mut full] {
                    m.add_sym(i, i, h / (3.0 * z));
                    m.add_sym(j, j, h / (3.0 * z));
                    m.add_sym(i, j, h / (6.0 * z));
                    m.add_sym(el, i, -h / (2.0 * z));
                    m.add_sym(el, j, -h / (2.0 * z));
                    m.add_sym(el, el, h / z);
                }
            }
        }
        let ground = total / 16.0;
        for p in 0..16 {
            for q in 0..16 {
                base.add(n_nodes + p, n_nodes + q, ground);
                full.add(n_nodes + p, n_nodes + q, ground);
            }
        }
        let chol = full.to_dense().cholesky().expect("oracle matrix not SPD");
        let el = mesh.elements()[special];
        Self {
            n_nodes,
            base,
            special,
            special_k,
            special_nodes: el,
            chol,
        }
    }

    /// Electrode potentials for conductivity `sigma_special` on the special
    /// element, refined to double-double accuracy.
    pub fn electrode_potentials(&self, sigma_special: f64, source: usize, sink: usize, amp: f64) -> Vec<Dd> {
        let n = self.n_nodes + 16;
        let mut b = vec![Dd::default(); n];
        b[self.n_nodes + source] = Dd::from(amp);
        b[self.n_nodes + sink] = Dd::from(-amp);
        let mut x = vec![Dd::default(); n];
        for _ in 0..8 {
            let mut ax = self.base.mul_dd(&x);
            for i in 0..3 {
                let mut acc = Dd::default();
                for j in 0..3 {
                    acc = acc.add(x[self.special_nodes[j]].mul_f64(self.special_k[i][j]));
                }
                let gi = self.special_nodes[i];
                ax[gi] = ax[gi].add(acc.mul_f64(sigma_special));
            }
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi.sub(*ai).to_f64()).collect();
            let d = self.chol.solve(&DVector::from_vec(r));
            let mut change = 0.0f64;
            for (xi, di) in x.iter_mut().zip(d.iter()) {
                *xi = xi.add(Dd::from(*di));
                change = change.max(di.abs());
            }
            if change == 0.0 {
                break;
            }
        }
        x[self.n_nodes..].to_vec()
    }
}

/// Adjacent-protocol channels in frame order.
pub fn adjacent_channels() -> Vec<((usize, usize), (usize, usize))> {
    let mut out = Vec::new();
    for p in 0..16 {
        let (a, b) = (p, (p + 1) % 16);
        for m in 0..16 {
            let (c, d) = (m, (m + 1) % 16);
            if c != a && c != b && d != a && d != b {
                out.push(((a, b), (c, d)));
            }
        }
    }
    out
}

/// Central finite difference of all 208 channels with respect to the
/// conductivity of element `k`, using step `rel_eps · σ_k`.
pub fn fd_column(mesh: &Mesh, sigma: &[f64], z: f64, amp: f64, k: usize, rel_eps: f64) -> Vec<f64> {
    let oracle = CemOracle::new(mesh, sigma, z, k);
    let sp = sigma[k] + rel_eps * sigma[k];
    let sm = sigma[k] - rel_eps * sigma[k];
    let step = sp - sm;
    let plus: Vec<Vec<Dd>> = (0..16)
        .map(|p| oracle.electrode_potentials(sp, p, (p + 1) % 16, amp))
        .collect();
    let minus: Vec<Vec<Dd>> = (0..16)
        .map(|p| oracle.electrode_potentials(sm, p, (p + 1) % 16, amp))
        .collect();
    adjacent_channels()
        .into_iter()
        .map(|((a, _), (c, d))| {
            let vp = plus[a][c].sub(plus[a][d]);
            let vm = minus[a][c].sub(minus[a][d]);
            vp.sub(vm).to_f64() / step
        })
        .collect()
}

/// Neumann-to-Dirichlet multiplier of Fourier mode `n` on the boundary of
/// a disc of radius `r_tank` (conductivity `s_out`) holding a concentric
/// disc of radius `a` (conductivity `s_in`).
pub fn layered_nd_multiplier(n: usize, r_tank: f64, a: f64, s_in: f64, s_out: f64) -> f64 {
    let mu = (s_out - s_in) / (s_out + s_in);
    let q = (a / r_tank).powi(2 * n as i32);
    let nf = n as f64;
    r_tank / (nf * s_out) * (1.0 + mu * q) / (1.0 - mu * q)
}

/// Boundary voltages for the concentric two-layer disc under the gap
/// (continuum electrode) model: uniform current density on the driven
/// electrodes, voltages read as electrode averages.
pub fn gap_model_frame(r_tank: f64, a: f64, s_in: f64, s_out: f64, half_width: f64, amp: f64) -> Vec<f64> {
    let centers: Vec<f64> = (0..16).map(|l| 2.0 * PI * l as f64 / 16.0).collect();
    let n_terms = 200_000;
    let potential = |m: usize, src: usize, snk: usize| -> f64 {
        let mut s = 0.0;
        for n in 1..=n_terms {
            let nf = n as f64;
            let z = layered_nd_multiplier(n, r_tank, a, s_in, s_out);
            let w = (nf * half_width).sin().powi(2) / (nf * half_width);
            let geo = (nf * (centers[m] - centers[src])).cos() - (nf * (centers[m] - centers[snk])).cos();
            s += z * w * geo / (PI * r_tank * half_width * nf) * amp;
        }
        s
    };
    adjacent_channels()
        .into_iter()
        .map(|((a_, b_), (c, d))| potential(c, a_, b_) - potential(d, a_, b_))
        .collect()
}

/// Boundary voltages for the concentric two-layer disc with the full
/// electrode model on the boundary: contact impedance `z`, electrode
/// current density solved by collocation on `panels` panels per electrode,
/// and the interior represented exactly by its Fourier multipliers.
pub fn cem_series_frame(
    r_tank: f64,
    a: f64,
    s_in: f64,
    s_out: f64,
    half_width: f64,
    z: f64,
    amp: f64,
    panels: usize,
    n_terms: usize,
) -> Vec<f64> {
    let p = panels;
    let delta = 2.0 * half_width / p as f64;
    // kernel as a function of (electrode gap, panel index gap)
    let multipliers: Vec<f64> = (1..=n_terms)
        .map(|n| {
            let nf = n as f64;
            layered_nd_multiplier(n, r_tank, a, s_in, s_out) * 2.0 * (nf * delta / 2.0).sin() / (PI * nf)
        })
        .collect();
    let kernel = |angle: f64| -> f64 {
        multipliers
            .iter()
            .enumerate()
            .map(|(i, m)| m * (((i + 1) as f64) * angle).cos())
            .sum()
    };
    let mut table = vec![vec![0.0; 2 * p - 1]; 16];
    for (dl, row) in table.iter_mut().enumerate() {
        for (dp, v) in row.iter_mut().enumerate() {
            let ang = 2.0 * PI * dl as f64 / 16.0 + (dp as f64 - (p as f64 - 1.0)) * delta;
            *v = kernel(ang);
        }
    }
    let g = |l: usize, i: usize, lp: usize, ip: usize| -> f64 {
        let dl = (l + 16 - lp) % 16;
        table[dl][i + p - 1 - ip]
    };
    let n_j = 16 * p;
    let n = n_j + 16 + 1;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    for l in 0..16 {
        for i in 0..p {
            let row = l * p + i;
            mat[(row, row)] += z;
            for lp in 0..16 {
                for ip in 0..p {
                    mat[(row, lp * p + ip)] += g(l, i, lp, ip);
                }
            }
            mat[(row, n_j + l)] = -1.0;
            mat[(row, n - 1)] = 1.0;
        }
        for i in 0..p {
            mat[(n_j + l, l * p + i)] = r_tank * delta;
        }
        mat[(n - 1, n_j + l)] = 1.0;
    }
    let lu = mat.lu();
    let mut frames = Vec::new();
    let mut electrode = vec![vec![0.0; 16]; 16];
    for drive in 0..16 {
        let mut rhs = DVector::zeros(n);
        rhs[n_j + drive] = amp;
        rhs[n_j + (drive + 1) % 16] = -amp;
        let x = lu.solve(&rhs).expect("series system singular");
        for l in 0..16 {
            electrode[drive][l] = x[n_j + l];
        }
    }
    for ((a_, _), (c, d)) in adjacent_channels() {
        frames.push(electrode[a_][c] - electrode[a_][d]);
    }
    frames
}

/// Sample covariance (divisor n - 1) of the rows of `x`.
pub fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in x {
        for i in 0..d {
            let a = r[i] - mean[i];
            for j in i..d {
                c[i][j] += a * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            c[i][j] /= (n - 1) as f64;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with unit eigenvectors as rows.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn sign_normalize(v: &mut [f64]) {
    let mut big = 0.0f64;
    for &x in v.iter() {
        if x.abs() > big.abs() {
            big = x;
        }
    }
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
