//! Map conversions, the functional map solve and the Dirichlet energy on
//! the octahedron against brute-force dense computations.

mod common;

use common::{brute_force_dirichlet, dense_basis, dense_fmap, jittered_octahedron, octahedron_setup, random, random_soft_map, to_dense};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specmatch::autodiff::Tape;
use specmatch::evaluation::geodesic_error;
use specmatch::fmap::{solve_fmap, MaskKind, SolverConfig};
use specmatch::linalg::Matrix;
use specmatch::losses::{coupling_loss, dirichlet_loss};
use specmatch::mesh::{compute_laplacian, primitives};
use specmatch::pointwise::{pmap_to_fmap, spectral_filtered_pmap, HardCorrespondence};
use specmatch::spectral::{eigendecompose, SpectralBasis};

#[test]
fn pmap_to_fmap_matches_dense_product() {
    let (_, lap) = octahedron_setup();
    let lap_n = compute_laplacian(&jittered_octahedron()).unwrap();
    let (bm, bn) = (dense_basis(&lap, 4), dense_basis(&lap_n, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pi = random_soft_map(6, 6, &mut rng);
    let ours = to_dense(&pmap_to_fmap(&pi, &bm, &bn).unwrap());
    assert!((ours - dense_fmap(&pi, &bm, &bn)).amax() < 1e-12);
}

#[test]
fn unregularized_solve_matches_normal_equations() {
    let (_, lap_m) = octahedron_setup();
    let lap_n = compute_laplacian(&jittered_octahedron()).unwrap();
    let bm = eigendecompose(&lap_m, 5).unwrap();
    let bn = eigendecompose(&lap_n, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f_m = random(6, 7, &mut rng);
    let f_n = random(6, 7, &mut rng);
    let cfg = SolverConfig {
        lambda: 0.0,
        mask_kind: MaskKind::Resolvent,
        resolvent_gamma: 0.5,
    };
    let c = to_dense(&solve_fmap(&bm, &bn, &f_m, &f_n, &cfg).unwrap());

    let project = |b: &SpectralBasis<f64>, f: &Matrix<f64>| {
        let mass = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(b.mass().to_vec()));
        to_dense(b.eigenfunctions()).transpose() * mass * to_dense(f)
    };
    let a = project(&bm, &f_m);
    let b = project(&bn, &f_n);
    let expected = &b * a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
    assert!((c - expected).amax() < 1e-8);
}

#[test]
fn dirichlet_energy_matches_cotangent_sum() {
    let mesh_m = primitives::octahedron::<f64>();
    let mesh_n = jittered_octahedron();
    let lap_n = compute_laplacian(&mesh_n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pi = random_soft_map(6, 6, &mut rng);
    let x = mesh_m.positions();
    let mut tape = Tape::new();
    let p = tape.constant(pi.clone());
    let e = dirichlet_loss(&mut tape, p, &x, &lap_n.stiffness).unwrap();
    let y = to_dense(&pi) * to_dense(&x);
    let expected = brute_force_dirichlet(&mesh_n, &y);
    assert!((tape.scalar(e) - expected).abs() < 1e-8 * expected.max(1.0), "{} vs {expected}", tape.scalar(e));
}

#[test]
fn collapsed_map_has_zero_dirichlet_energy() {
    let mesh_m = primitives::octahedron::<f64>();
    let lap_n = compute_laplacian(&jittered_octahedron()).unwrap();
    let collapse = HardCorrespondence::new(vec![3; 6], 6).unwrap().to_matrix::<f64>();
    let mut tape = Tape::new();
    let p = tape.constant(collapse);
    let e = dirichlet_loss(&mut tape, p, &mesh_m.positions(), &lap_n.stiffness).unwrap();
    assert!(tape.scalar(e).abs() <= 1e-12);
}

#[test]
fn coupling_vanishes_on_induced_maps() {
    let (_, lap) = octahedron_setup();
    let lap_n = compute_laplacian(&jittered_octahedron()).unwrap();
    let bm = eigendecompose(&lap, 5).unwrap();
    let bn = eigendecompose(&lap_n, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let pi = random_soft_map(6, 6, &mut rng);
        let mut tape = Tape::new();
        let c = tape.constant(pmap_to_fmap(&pi, &bm, &bn).unwrap());
        let p = tape.constant(pi);
        let l = coupling_loss(&mut tape, c, p, &bm, &bn).unwrap();
        assert!(tape.scalar(l).abs() <= 1e-12);
    }
}

#[test]
fn full_basis_spectral_filter_recovers_hard_maps() {
    let (_, lap) = octahedron_setup();
    let lap_n = compute_laplacian(&jittered_octahedron()).unwrap();
    let (bm, bn) = (dense_basis(&lap, 6), dense_basis(&lap_n, 6));
    let map = HardCorrespondence::new(vec![4, 0, 5, 1, 1, 2], 6).unwrap();
    let got = spectral_filtered_pmap(&map.to_matrix(), &bm, &bn).unwrap();

    // nearest rows of Φ_N C among rows of Φ_M, brute force
    let emb = to_dense(bn.eigenfunctions()) * dense_fmap(&map.to_matrix(), &bm, &bn);
    let phi_m = to_dense(bm.eigenfunctions());
    let brute: Vec<usize> = (0..6)
        .map(|i| {
            (0..6)
                .min_by(|&a, &b| {
                    let da = (emb.row(i) - phi_m.row(a)).norm_squared();
                    let db = (emb.row(i) - phi_m.row(b)).norm_squared();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
        })
        .collect();
    assert_eq!(got.targets(), brute.as_slice());
    assert_eq!(got, map);
}

#[test]
fn geodesic_error_matches_floyd_warshall() {
    let mesh = primitives::radial_bumps(&primitives::icosphere::<f64>(1), 0.2, 3, 2);
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (i, j) in mesh.edges() {
        let len = (0..3).map(|c| (v[i][c] - v[j][c]).powi(2)).sum::<f64>().sqrt();
        d[i][j] = len;
        d[j][i] = len;
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][m] + d[m][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pred = HardCorrespondence::new((0..30).map(|_| rng.gen_range(0..n)).collect(), n).unwrap();
    let gt = HardCorrespondence::new((0..30).map(|_| rng.gen_range(0..n)).collect(), n).unwrap();
    let errors = geodesic_error(&pred, &gt, &mesh).unwrap();
    let sqrt_area = mesh.total_area().sqrt();
    for (s, e) in errors.iter().enumerate() {
        let expected = d[pred.targets()[s]][gt.targets()[s]] / sqrt_area;
        assert!((e - expected).abs() < 1e-12, "vertex {s}: {e} vs {expected}");
    }
}
