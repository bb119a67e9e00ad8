mod support;

use std::collections::HashMap;
use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use eitdiag::forward::{jacobian_and_frame, measure, ConductivityField, DriveProtocol, N_CHANNELS};
use eitdiag::mesh::{build_mesh, Mesh, Region};
use eitdiag::rng;

use support::{adjacent_channels, cem_series_frame, fd_column};

fn mesh() -> Mesh {
    build_mesh(0.075, 1, 0.5).unwrap()
}

fn field(n: usize, seed: u64, spread: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, "forward-test", 0);
    (0..n).map(|_| 2e-4 * 10f64.powf(r.random_range(-spread..spread))).collect()
}

fn frame(m: &Mesh, sigma: Vec<f64>) -> Vec<f64> {
    measure(m, &ConductivityField::new(sigma).unwrap(), &DriveProtocol::adjacent(1e-3), 1e-3)
        .unwrap()
        .v
}

fn channel_index() -> HashMap<((usize, usize), (usize, usize)), usize> {
    adjacent_channels().into_iter().enumerate().map(|(i, c)| (c, i)).collect()
}

#[test]
fn low_contrast_inclusion_matches_series_oracle() {
    let m = mesh();
    let (s_in, s_out) = (5e-5, 2e-4);
    let inside = m.elements_in_region(&Region::Disc { center: [0.0, 0.0], radius: 0.03 });
    let mut sigma = vec![s_out; m.n_elements()];
    let mut area = 0.0;
    for &k in &inside {
        sigma[k] = s_in;
        area += m.geometry()[k].area;
    }
    let v = frame(&m, sigma);
    let beta = PI * m.electrode_edges()[0].len() as f64 / m.boundary_edges().len() as f64;
    let series = cem_series_frame(0.075, (area / PI).sqrt(), s_in, s_out, beta, 1e-3, 1e-3, 60, 30_000);
    let mut order: Vec<usize> = (0..N_CHANNELS).collect();
    order.sort_by(|&i, &j| series[j].abs().total_cmp(&series[i].abs()));
    for &i in &order[..21] {
        let rel = (v[i] - series[i]).abs() / series[i].abs();
        assert!(rel <= 0.02, "channel {i}: fem {} series {} ({rel})", v[i], series[i]);
    }
}

#[test]
fn jacobian_matches_double_double_differences() {
    let m = mesh();
    let sigma = field(m.n_elements(), 3, 1.0);
    let (j, _) = jacobian_and_frame(
        &m,
        &ConductivityField::new(sigma.clone()).unwrap(),
        &DriveProtocol::adjacent(1e-3),
        1e-3,
    )
    .unwrap();
    // one column in the specimen zone, one near an electrode, one in between
    let near = |p: [f64; 2]| {
        (0..m.n_elements())
            .min_by(|&a, &b| {
                let d = |k: usize| {
                    let c = m.geometry()[k].centroid;
                    (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap()
    };
    for k in [near([0.0, 0.0]), near([0.074, 0.0]), near([0.0, -0.05])] {
        let fd = fd_column(&m, &sigma, 1e-3, 1e-3, k, 1e-6);
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (row, v) in fd.iter().enumerate() {
            assert!((j[(row, k)] - v).abs() <= 1e-4 * scale, "element {k} channel {row}");
        }
    }
}

#[test]
fn uniform_perturbation_is_first_order() {
    let m = mesh();
    let sigma = field(m.n_elements(), 5, 0.3);
    let protocol = DriveProtocol::adjacent(1e-3);
    let (j, f0) = jacobian_and_frame(&m, &ConductivityField::new(sigma.clone()).unwrap(), &protocol, 1e-3).unwrap();
    let delta = 1e-4;
    let f1 = frame(&m, sigma.iter().map(|s| s * (1.0 + delta)).collect());
    let ds: Vec<f64> = sigma.iter().map(|s| s * delta).collect();
    let lin = &j * nalgebra::DVector::from_vec(ds);
    let dv: Vec<f64> = f1.iter().zip(&f0.v).map(|(a, b)| a - b).collect();
    let norm = dv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let err = dv.iter().zip(lin.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    // the remainder is second order in delta
    assert!(err <= 10.0 * delta * norm, "{err:e} vs {norm:e}");
}

#[test]
fn vanishing_conductivity_is_reported() {
    let m = mesh();
    let sigma = vec![1e-300; m.n_elements()];
    let r = measure(&m, &ConductivityField::new(sigma).unwrap(), &DriveProtocol::adjacent(1e-3), 1e-3);
    assert!(r.is_err());
    assert!(ConductivityField::new(vec![0.0; m.n_elements()]).is_err());
    assert!(measure(&m, &ConductivityField::uniform(3, 1.0).unwrap(), &DriveProtocol::adjacent(1e-3), 1e-3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reciprocity_on_random_fields(seed in 0u64..10_000, spread in 0.1f64..1.5) {
        let m = mesh();
        let v = frame(&m, field(m.n_elements(), seed, spread));
        let index = channel_index();
        for (i, &(drive, meas)) in adjacent_channels().iter().enumerate() {
            let j = index[&(meas, drive)];
            prop_assert!((v[i] - v[j]).abs() <= 1e-8 * v[i].abs().max(v[j].abs()));
        }
    }

    #[test]
    fn rotating_the_field_rotates_the_frame(seed in 0u64..10_000, sectors in 1usize..16) {
        let m = mesh();
        let sigma = field(m.n_elements(), seed, 0.5);
        let perm = m.element_rotation(sectors);
        let mut rotated = vec![0.0; sigma.len()];
        for (k, &to) in perm.iter().enumerate() {
            rotated[to] = sigma[k];
        }
        let (v, w) = (frame(&m, sigma), frame(&m, rotated));
        let index = channel_index();
        let sh = |e: usize| (e + sectors) % 16;
        let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for (i, &((a, b), (c, d))) in adjacent_channels().iter().enumerate() {
            let j = index[&((sh(a), sh(b)), (sh(c), sh(d)))];
            prop_assert!((v[i] - w[j]).abs() <= 1e-9 * scale, "channel {} vs {}", i, j);
        }
    }
}
