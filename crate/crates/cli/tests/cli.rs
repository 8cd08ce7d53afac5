use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specmatch::autodiff::load_checkpoint;
use specmatch::cache::{cache_path, SpectralCacheEntry};
use specmatch::evaluation::EvalReport;
use specmatch::mesh::{primitives, write_off};
use specmatch::pointwise::HardCorrespondence;

fn specmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specmatch"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_mesh(dir: &Path, name: &str, mesh: &specmatch::Mesh) -> PathBuf {
    let path = dir.join(format!("{name}.off"));
    std::fs::write(&path, write_off(mesh)).unwrap();
    path
}

fn bumpy() -> specmatch::Mesh {
    primitives::radial_bumps(&primitives::icosphere(1), 0.15, 4, 3)
}

const SMALL_RUN: &str = r#"
[data]
meshes = ["bumpy.off"]
cache_dir = "cache"

[output]
checkpoint = "net.smnet"
loss_csv = "loss.csv"

[matching]
k = 20
epochs = 500
wks = { num_energies = 16, sigma_factor = 2.0 }
net = { input_dim = 16, width = 32, blocks = 2 }
"#;

/// Small self-pair setup: mesh, config and a filled cache.
fn small_run(dir: &Path) -> PathBuf {
    write_mesh(dir, "bumpy", &bumpy());
    let config = dir.join("run.toml");
    std::fs::write(&config, SMALL_RUN).unwrap();
    let out = specmatch(&["preprocess", "--config", p(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    config
}

#[test]
fn preprocess_is_idempotent_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write_mesh(dir.path(), "bumpy", &bumpy());
    let cache = dir.path().join("cache");
    let args = ["preprocess", "--cache-dir", p(&cache), "--k", "20", p(&mesh)];

    let first = specmatch(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let file = cache_path(&cache, &mesh);
    let bytes = std::fs::read(&file).unwrap();
    let modified = std::fs::metadata(&file).unwrap().modified().unwrap();

    let second = specmatch(&args);
    assert!(second.status.success());
    assert!(stderr(&second).contains("up to date"), "{}", stderr(&second));
    assert_eq!(std::fs::read(&file).unwrap(), bytes);
    assert_eq!(std::fs::metadata(&file).unwrap().modified().unwrap(), modified);

    let entry = SpectralCacheEntry::load(&file).unwrap();
    assert_eq!(entry.k(), 20);
    let basis = entry.basis::<f64>().unwrap();
    assert!(basis.orthonormality_error() <= 1e-8);
}

#[test]
fn preprocess_reports_k_too_large_per_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let small = write_mesh(dir.path(), "octa", &primitives::octahedron());
    let big = write_mesh(dir.path(), "bumpy", &bumpy());
    let cache = dir.path().join("cache");
    let out = specmatch(&["preprocess", "--cache-dir", p(&cache), "--k", "6", p(&small), p(&big)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("octa.off") && err.contains("requested 6 eigenpairs"), "{err}");
    // the other mesh is still processed
    assert!(cache_path(&cache, &big).exists());
}

#[test]
fn train_is_deterministic_and_matches_self_pair() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_run(dir.path());
    let out = specmatch(&["train", p(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let ckpt = dir.path().join("net.smnet");
    let first = std::fs::read(&ckpt).unwrap();
    let saved = load_checkpoint::<f64>(&ckpt).unwrap();
    assert_eq!(saved.optimizer.map(|a| a.steps()), Some(500));
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,pair,loss_total,loss_bij,loss_orth,loss_couple,loss_dirichlet\n"));
    assert_eq!(csv.lines().count(), 501);

    let again = specmatch(&["train", p(&config)]);
    assert!(again.status.success());
    assert_eq!(std::fs::read(&ckpt).unwrap(), first);

    let mesh = dir.path().join("bumpy.off");
    let cache = dir.path().join("cache");
    let mut outputs = Vec::new();
    for flag in ["--tta", "--no-tta"] {
        let corr = dir.path().join(format!("corr{flag}.txt"));
        let out = specmatch(&[
            "match",
            "--checkpoint",
            p(&ckpt),
            "--source",
            p(&mesh),
            "--target",
            p(&mesh),
            "--cache-dir",
            p(&cache),
            flag,
            "-o",
            p(&corr),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        outputs.push(HardCorrespondence::load(&corr).unwrap());
    }
    let n = bumpy().num_vertices();
    assert_eq!(outputs[0], HardCorrespondence::identity(n));
    assert_eq!(outputs[1], outputs[0]);

    let adapted = dir.path().join("adapted.smnet");
    let traj = dir.path().join("tta.csv");
    let out = specmatch(&[
        "adapt",
        "--checkpoint",
        p(&ckpt),
        "--source",
        p(&mesh),
        "--target",
        p(&mesh),
        "-o",
        p(&adapted),
        "--loss-csv",
        p(&traj),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(load_checkpoint::<f64>(&adapted).unwrap().optimizer.is_none());
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 17);
}

#[test]
fn train_names_the_mesh_without_cache() {
    let dir = tempfile::tempdir().unwrap();
    write_mesh(dir.path(), "bumpy", &bumpy());
    let config = dir.path().join("run.toml");
    std::fs::write(&config, SMALL_RUN).unwrap();
    let out = specmatch(&["train", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bumpy.off"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    let out = specmatch(&["match", "--checkpoint", "x", "--source", "a.off", "--target", "b.off", "--mode", "sideways", "-o", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(specmatch(&["frobnicate"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("run.toml");
    std::fs::write(&bad, "[matching]\nk = \"many\"\n").unwrap();
    assert_eq!(specmatch(&["train", p(&bad)]).status.code(), Some(2));
}

fn eval_octahedron(dir: &Path, pred: &HardCorrespondence) -> (Output, PathBuf, PathBuf) {
    let mesh = write_mesh(dir, "octa", &primitives::octahedron());
    let pred_path = dir.join("pred.txt");
    let gt_path = dir.join("gt.txt");
    pred.save(&pred_path).unwrap();
    HardCorrespondence::identity(6).save(&gt_path).unwrap();
    let report = dir.join("report.json");
    let pck = dir.join("pck.csv");
    let out = specmatch(&[
        "eval",
        "--pred",
        p(&pred_path),
        "--gt",
        p(&gt_path),
        "--mesh",
        p(&mesh),
        "--report",
        p(&report),
        "--pck",
        p(&pck),
    ]);
    (out, report, pck)
}

#[test]
fn eval_perfect_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report, pck) = eval_octahedron(dir.path(), &HardCorrespondence::identity(6));
    assert!(out.status.success(), "{}", stderr(&out));
    let r = EvalReport::from_json(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r.mean_geo_error_x100, 0.0);
    assert_eq!(r.auc, 1.0);
    assert_eq!(std::fs::read_to_string(pck).unwrap().lines().count(), 21);
}

#[test]
fn eval_one_flipped_vertex() {
    let dir = tempfile::tempdir().unwrap();
    // +x sent to its neighbour +y: one edge of length √2 on area 4√3
    let pred = HardCorrespondence::new(vec![2, 1, 2, 3, 4, 5], 6).unwrap();
    let (out, report, _) = eval_octahedron(dir.path(), &pred);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = EvalReport::from_json(&std::fs::read_to_string(report).unwrap()).unwrap();
    let expected = 2f64.sqrt() / (4.0 * 3f64.sqrt()).sqrt();
    assert!((r.per_vertex_errors[0] - expected).abs() < 1e-12);
    assert!(r.per_vertex_errors[1..].iter().all(|&e| e == 0.0));
    assert!((r.mean_geo_error_x100 - 100.0 * expected / 6.0).abs() < 1e-10);
}

#[test]
fn eval_rejects_malformed_header() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write_mesh(dir.path(), "octa", &primitives::octahedron());
    let pred = dir.path().join("pred.txt");
    std::fs::write(&pred, "0\n1\n2\n3\n4\n5\n").unwrap();
    let out = specmatch(&["eval", "--pred", p(&pred), "--gt", p(&pred), "--mesh", p(&mesh)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("header"));
}

#[test]
fn plot_pck_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _, pck) = eval_octahedron(dir.path(), &HardCorrespondence::identity(6));
    assert!(out.status.success());
    let svg = dir.path().join("pck.svg");
    let out = specmatch(&["plot-pck", p(&pck), "-o", p(&svg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("pck (1.000)"));
}
