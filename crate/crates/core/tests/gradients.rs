//! Central finite differences against reverse-mode gradients.

mod common;

use common::{max_relative_error, probe, random};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specmatch::autodiff::{FeatureNet, NetConfig, Tape, Var};
use specmatch::fmap::{commutativity_mask, solve_projected, MaskKind};
use specmatch::linalg::Matrix;
use specmatch::losses::LossWeights;
use specmatch::mesh::{compute_laplacian, primitives, TriangleMesh};
use specmatch::pipeline::{pair_forward, MatchConfig, MatchMode, Shape, ShapePair};
use specmatch::spectral::eigendecompose;

const TOLERANCE: f64 = 1e-4;

fn assert_grad(name: &str, inputs: &[Matrix<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let err = max_relative_error(inputs, f);
    assert!(err <= TOLERANCE, "{name}: relative error {err:.3e}");
}

#[test]
fn primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);
    let c = random(3, 4, &mut rng);
    let row = random(1, 4, &mut rng);

    assert_grad("matmul", &[a.clone(), b.clone()], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        probe(t, y, 10)
    });
    for (ta, tb) in [(true, false), (false, true), (true, true)] {
        let (x, y) = match (ta, tb) {
            (true, false) => (a.transpose(), b.clone()),
            (false, true) => (a.clone(), b.transpose()),
            _ => (a.transpose(), b.transpose()),
        };
        assert_grad("matmul_t", &[x, y], |t, v| {
            let y = t.matmul_t(v[0], ta, v[1], tb).unwrap();
            probe(t, y, 11)
        });
    }
    assert_grad("add/sub/mul", &[a.clone(), c.clone()], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(v[0], v[1]).unwrap();
        let p = t.mul(s, d).unwrap();
        probe(t, p, 12)
    });
    assert_grad("scale/transpose", &[a.clone()], |t, v| {
        let s = t.scale(v[0], -2.5);
        let y = t.transpose(s);
        probe(t, y, 13)
    });
    assert_grad("add_row", &[a.clone(), row.clone()], |t, v| {
        let y = t.add_row(v[0], v[1]).unwrap();
        probe(t, y, 14)
    });
    assert_grad("softmax_rows", &[a.scale(3.0)], |t, v| {
        let y = t.softmax_rows(v[0]).unwrap();
        probe(t, y, 15)
    });
    // keep inputs away from the kink at zero
    let away = Matrix::from_fn(3, 4, |i, j| {
        let x = a[(i, j)];
        x + 0.2 * x.signum()
    });
    assert_grad("leaky_relu", &[away], |t, v| {
        let y = t.leaky_relu(v[0], 0.01);
        probe(t, y, 16)
    });
    assert_grad("exp", &[a.clone()], |t, v| {
        let y = t.exp(v[0]);
        probe(t, y, 17)
    });
    assert_grad("squared_norm", &[a.clone()], |t, v| t.squared_norm(v[0]));
    assert_grad("pad_columns", &[a.clone()], |t, v| {
        let y = t.pad_columns(v[0], 6).unwrap();
        probe(t, y, 18)
    });
}

#[test]
fn per_row_solve_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = 4;
    let ev = [0.0, 0.8, 1.9, 3.1];
    let ev_n = [0.0, 0.9, 2.0, 2.7];
    for kind in [MaskKind::Resolvent, MaskKind::Commutativity] {
        let mask = commutativity_mask(&ev, &ev_n, kind, 0.5).unwrap();
        for lambda in [0.0, 100.0, 0.3] {
            let a = random(k, 6, &mut rng);
            let b = random(k, 6, &mut rng);
            assert_grad("row solve", &[a, b], |t, v| {
                let c = solve_projected(t, v[0], v[1], &mask, lambda).unwrap();
                probe(t, c, 20)
            });
        }
    }
}

fn tiny_net() -> (NetConfig, FeatureNet<f64>) {
    let cfg = NetConfig {
        input_dim: 4,
        width: 6,
        blocks: 2,
        leaky_slope: 0.01,
    };
    (cfg, FeatureNet::new(cfg, 0.3, 5).unwrap())
}

fn shape(mesh: TriangleMesh<f64>, k: usize, seed: u64) -> Shape<f64> {
    let lap = compute_laplacian(&mesh).unwrap();
    let basis = eigendecompose(&lap, k).unwrap();
    let wks = random(mesh.num_vertices(), 4, &mut ChaCha8Rng::seed_from_u64(seed));
    Shape::from_parts(mesh, basis, wks).unwrap()
}

fn jittered_octahedron(scale: f64) -> TriangleMesh<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = primitives::octahedron::<f64>();
    let vertices = base
        .vertices()
        .iter()
        .map(|v| v.map(|x| scale * (x + rng.gen_range(-0.1..0.1))))
        .collect();
    TriangleMesh::new(vertices, base.faces().to_vec(), "jittered").unwrap()
}

#[test]
fn network_matches_finite_differences() {
    let (_, net) = tiny_net();
    let s = shape(primitives::octahedron(), 4, 7);
    let params: Vec<Matrix<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    assert_grad("network sum", &params, |t, v| {
        let f = net.forward(t, v, &s.basis, &s.wks).unwrap();
        t.sum(f)
    });
}

/// Each loss term, differentiated with respect to every network parameter
/// through features, both functional map solves and both soft maps.
#[test]
fn losses_match_finite_differences_through_the_pipeline() {
    let (_, net) = tiny_net();
    let m = shape(primitives::octahedron(), 4, 7);
    let n = shape(jittered_octahedron(1.0), 4, 8);
    let small = shape(jittered_octahedron(0.8), 4, 9);
    let params: Vec<Matrix<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    let weights = LossWeights {
        dirichlet: 5.0,
        ..LossWeights::default()
    };
    let cases = [
        (ShapePair::new(&m, &n).unwrap(), MatchMode::NonIsometric),
        (ShapePair::new(&m, &small).unwrap(), MatchMode::Partial),
    ];
    for (pair, mode) in cases {
        let cfg = MatchConfig {
            k: 4,
            mode,
            tau: 0.5,
            ..MatchConfig::default()
        };
        type Pick = fn(&specmatch::pipeline::PairForward) -> Var;
        let picks: [(&str, Pick); 5] = [
            ("bijectivity", |f| f.terms.bij),
            ("orthogonality", |f| f.terms.orth),
            ("coupling", |f| f.terms.couple),
            ("dirichlet", |f| f.terms.dirichlet.unwrap()),
            ("total", |f| f.total),
        ];
        for (name, pick) in picks {
            let err = max_relative_error(&params, |t, v| {
                let fwd = pair_forward(t, &net, v, &pair, &cfg, &weights).unwrap();
                pick(&fwd)
            });
            assert!(err <= TOLERANCE, "{name} ({mode}): relative error {err:.3e}");
        }
    }
}

/// Two triangles sharing an edge, matched against a sheared copy.
#[test]
fn composite_loss_on_two_triangles() {
    let quad = |shear: f64| {
        TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0 + shear, 1.0, 0.1], [shear, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            "quad",
        )
        .unwrap()
    };
    let m = shape(quad(0.0), 3, 11);
    let n = shape(quad(0.2), 3, 12);
    let (_, net) = tiny_net();
    let params: Vec<Matrix<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    let pair = ShapePair::new(&m, &n).unwrap();
    let cfg = MatchConfig {
        k: 3,
        tau: 0.5,
        ..MatchConfig::default()
    };
    let weights = LossWeights::default();
    assert_grad("two-triangle total", &params, |t, v| pair_forward(t, &net, v, &pair, &cfg, &weights).unwrap().total);
}
