//! Shared fixtures and dense reference computations for integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specmatch::autodiff::{Tape, Var};
use specmatch::linalg::Matrix;
use specmatch::mesh::{compute_laplacian, primitives, LaplacianPair, TriangleMesh};
use specmatch::spectral::SpectralBasis;

pub fn octahedron_setup() -> (TriangleMesh<f64>, LaplacianPair<f64>) {
    let mesh = primitives::octahedron::<f64>();
    let lap = compute_laplacian(&mesh).unwrap();
    (mesh, lap)
}

pub fn dense_stiffness(lap: &LaplacianPair<f64>) -> DMatrix<f64> {
    let n = lap.num_vertices();
    DMatrix::from_fn(n, n, |i, j| lap.stiffness.get(i, j))
}

/// Full generalized eigendecomposition via `A^{-1/2} W A^{-1/2}` with
/// nalgebra, eigenvectors `A`-orthonormal and ascending.
pub fn dense_generalized_eigen(lap: &LaplacianPair<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let w = dense_stiffness(lap);
    let inv_sqrt = DVector::from_iterator(lap.mass.len(), lap.mass.iter().map(|m| 1.0 / m.sqrt()));
    let d = DMatrix::from_diagonal(&inv_sqrt);
    let sym = &d * w * &d;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(lap.mass.len(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, d * vecs)
}

pub const H: f64 = 1e-6;
pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Worst relative discrepancy over all inputs, each measured as
/// `‖analytic − numeric‖∞ / ‖numeric‖∞`.
pub fn max_relative_error(inputs: &[Matrix<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars);
    assert_eq!(tape.shape(out), (1, 1));
    tape.backward(out).unwrap();
    let analytic: Vec<Matrix<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().clone()).collect();

    let eval = |inputs: &[Matrix<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| t.param(m.clone())).collect();
        let out = f(&mut t, &vars);
        t.scalar(out)
    };
    let mut worst: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.as_slice().len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut shifted = inputs.to_vec();
            shifted[i].as_mut_slice()[j] += H;
            let plus = eval(&shifted);
            shifted[i].as_mut_slice()[j] -= 2.0 * H;
            let minus = eval(&shifted);
            *slot = (plus - minus) / (2.0 * H);
        }
        let scale = numeric.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-8);
        let diff = numeric
            .iter()
            .zip(grad.as_slice())
            .fold(0.0f64, |a, (n, g)| a.max((n - g).abs()));
        worst = worst.max(diff / scale);
    }
    worst
}

/// `Σ R ⊙ X` for a fixed random `R`, so every Jacobian entry is exercised.
pub fn probe(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let weights = tape.constant(random(r, c, &mut ChaCha8Rng::seed_from_u64(seed)));
    let y = tape.mul(x, weights).unwrap();
    tape.sum(y)
}

pub fn to_dense(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn dense_basis(lap: &LaplacianPair<f64>, k: usize) -> SpectralBasis<f64> {
    let (values, vectors) = dense_generalized_eigen(lap);
    let n = lap.num_vertices();
    let phi = Matrix::from_fn(n, k, |i, j| vectors[(i, j)]);
    SpectralBasis::new(values[..k].to_vec(), phi, lap.mass.clone()).unwrap()
}

pub fn random_soft_map(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let mut pi = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0f64).powi(3));
    for i in 0..rows {
        let s: f64 = pi.row(i).iter().sum();
        pi.row_mut(i).iter_mut().for_each(|x| *x /= s);
    }
    pi
}

pub fn jittered_octahedron() -> TriangleMesh<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = primitives::octahedron::<f64>();
    let vertices = base.vertices().iter().map(|v| v.map(|x| x + rng.gen_range(-0.15..0.15))).collect();
    TriangleMesh::new(vertices, base.faces().to_vec(), "jittered").unwrap()
}

pub fn dense_fmap(pi: &Matrix<f64>, basis_m: &SpectralBasis<f64>, basis_n: &SpectralBasis<f64>) -> DMatrix<f64> {
    let mass_n = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(basis_n.mass().to_vec()));
    to_dense(basis_n.eigenfunctions()).transpose() * mass_n * to_dense(pi) * to_dense(basis_m.eigenfunctions())
}

/// `Σ_faces Σ_corners ½ cot(θ) ‖y_i − y_j‖²` over the edge opposite each
/// corner, straight from the triangle angles.
pub fn brute_force_dirichlet(mesh: &TriangleMesh<f64>, y: &DMatrix<f64>) -> f64 {
    let v = mesh.vertices();
    let mut energy = 0.0;
    for f in mesh.faces() {
        for c in 0..3 {
            let (k, i, j) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
            let e1: Vec<f64> = (0..3).map(|d| v[i][d] - v[k][d]).collect();
            let e2: Vec<f64> = (0..3).map(|d| v[j][d] - v[k][d]).collect();
            let dot: f64 = e1.iter().zip(&e2).map(|(a, b)| a * b).sum();
            let cross = [
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ];
            let cot = dot / cross.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = (y.row(i) - y.row(j)).norm_squared();
            energy += 0.5 * cot * diff;
        }
    }
    energy
}
