mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Vector3;
use stereomag::dataset::{write_points, write_sequence, Frame, PosedSequence};
use stereomag::geometry::make_depth_planes;
use stereomag::io::{read_image, save_mpi, write_image};
use stereomag::oracle::{aligned_scene, default_planes, frustum_mask, masked_psnr, oracle_render, reference_camera, scene_to_mpi};
use stereomag::{Camera, MultiplaneImage};
use tempfile::TempDir;

use common::walking_sequence;

fn stereomag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereomag"))
        .args(args)
        .env("MPI_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_cameras(path: &Path, cams: &[Camera]) {
    let seq = PosedSequence::new(
        cams.iter()
            .enumerate()
            .map(|(i, c)| Frame {
                id: i as u64,
                camera: *c,
            })
            .collect(),
    );
    std::fs::write(path, write_sequence(&seq).unwrap()).unwrap();
}

struct Fixture {
    dir: TempDir,
    c1: Camera,
    c2: Camera,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// An oracle stereo pair of built-in scene 0 at 64×36.
fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    let scene = aligned_scene(0, &default_planes(16));
    let c1 = reference_camera(64, 36);
    let c2 = c1.with_center(Vector3::new(0.05, 0.0, 0.0));
    write_image(&dir.path().join("left.png"), &oracle_render(&scene, &c1), true).unwrap();
    write_image(&dir.path().join("right.png"), &oracle_render(&scene, &c2), true).unwrap();
    write_cameras(&dir.path().join("cams.txt"), &[c1, c2]);
    Fixture { dir, c1, c2 }
}

fn pair_args(f: &Fixture) -> Vec<String> {
    ["--left", "left.png", "--right", "right.png", "--cameras", "cams.txt"]
        .iter()
        .enumerate()
        .map(|(i, a)| if i % 2 == 1 { s(&f.path(a)).to_string() } else { a.to_string() })
        .collect()
}

fn run_with(f: &Fixture, head: &[&str], tail: &[&str]) -> Output {
    let pair = pair_args(f);
    let mut args: Vec<&str> = head.to_vec();
    args.extend(pair.iter().map(String::as_str));
    args.extend(tail);
    stereomag(&args)
}

#[test]
fn fit_writes_mpi_and_reports() {
    let f = fixture();
    let out_dir = f.path("fit");
    let out = run_with(&f, &["fit"], &["--planes", "16", "--steps", "150", "--seed", "3", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["meta.txt", "plane_000.png", "plane_015.png", "report.json", "report.txt", "config.txt"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["loss_curve"].as_array().unwrap().len(), 150);
    let views = report["views"].as_array().unwrap();
    assert_eq!(views.len(), 2);
    let self_view = views[0]["psnr"].as_f64().unwrap_or(f64::INFINITY);
    assert!(self_view > 35.0, "reference view {self_view}");

    // the saved MPI renders the second view back
    write_cameras(&f.path("render_cams.txt"), &[f.c2]);
    let rendered = f.path("rendered");
    let out = stereomag(&["render", "--mpi", s(&out_dir), "--cameras", s(&f.path("render_cams.txt")), "--out", s(&rendered)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(rendered.join("frame_000.png").exists());
}

#[test]
fn variant_all_writes_one_directory_per_variant() {
    let f = fixture();
    let out_dir = f.path("all");
    let out = run_with(&f, &["fit"], &["--variant", "all", "--planes", "4", "--steps", "3", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for v in ["none", "single-image", "bg-blend", "fg-bg-blend", "all-images"] {
        assert!(out_dir.join(v).join("meta.txt").exists(), "missing {v}");
    }
}

#[test]
fn input_errors_exit_2() {
    let f = fixture();
    let missing = f.path("nowhere.txt");
    let out = stereomag(&[
        "fit", "--left", s(&f.path("left.png")), "--right", s(&f.path("right.png")),
        "--cameras", s(&missing), "--out", s(&f.path("o")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.txt"), "{}", stderr(&out));

    let out = run_with(&f, &["fit"], &["--variant", "rainbow", "--out", s(&f.path("o"))]);
    assert_eq!(code(&out), 2);
    let out = run_with(&f, &["fit"], &["--near", "5", "--far", "2", "--out", s(&f.path("o"))]);
    assert_eq!(code(&out), 2);
    let out = run_with(&f, &["magnify"], &["--factor", "-1", "--out", s(&f.path("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn render_through_a_plane_exits_3() {
    let f = fixture();
    let dp = make_depth_planes(1.0, 100.0, 2).unwrap();
    let mpi = MultiplaneImage::<f32>::transparent(dp.clone(), f.c1);
    save_mpi(&f.path("mpi"), &mpi).unwrap();
    // a camera sitting exactly on the near plane (depth 1 survives the
    // camera file's 9-digit rounding)
    assert_eq!(dp.depth(1), 1.0);
    write_cameras(&f.path("on_plane.txt"), &[f.c1.with_center(Vector3::new(0.0, 0.0, 1.0))]);
    let out = stereomag(&["render", "--mpi", s(&f.path("mpi")), "--cameras", s(&f.path("on_plane.txt")), "--out", s(&f.path("r"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn sweeps() {
    let f = fixture();
    let dp = default_planes(16);
    let scene = aligned_scene(0, &dp);
    save_mpi(&f.path("mpi"), &scene_to_mpi(&scene, &dp, &f.c1).unwrap()).unwrap();

    let out = stereomag(&["sweep", "--mpi", s(&f.path("mpi")), "--path=-0.1,0,0:0.15,0,0:30", "--out", s(&f.path("sw"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for i in [0, 17, 29] {
        assert!(f.path("sw").join(format!("frame_{i:03}.png")).exists());
    }

    // two frames at the endpoints of the input pair reproduce the inputs
    let out = stereomag(&["sweep", "--mpi", s(&f.path("mpi")), "--path", "0,0,0:0.05,0,0:2", "--out", s(&f.path("ends"))]);
    assert_eq!(code(&out), 0);
    let first = read_image(&f.path("ends").join("frame_000.png")).unwrap();
    let left = read_image(&f.path("left.png")).unwrap();
    assert!(first.mean_abs_diff(&left).unwrap() < 2e-3);

    let out = stereomag(&["sweep", "--mpi", s(&f.path("mpi")), "--path", "0,0,0:1,0:5", "--out", s(&f.path("bad"))]);
    assert_eq!(code(&out), 2);

    let empty = MultiplaneImage::<f32>::transparent(dp, f.c1);
    save_mpi(&f.path("empty"), &empty).unwrap();
    let out = stereomag(&["sweep", "--mpi", s(&f.path("empty")), "--path", "0,0,0:0.1,0,0:3", "--out", s(&f.path("dark"))]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("accumulated alpha"), "{}", stderr(&out));
    let frame = read_image(&f.path("dark").join("frame_001.png")).unwrap();
    assert!(frame.data().iter().all(|&v| v == 0.0));
}

#[test]
fn magnify_at_unit_factor_reproduces_the_pair() {
    let f = fixture();
    let dp = default_planes(16);
    let scene = aligned_scene(0, &dp);
    save_mpi(&f.path("mpi"), &scene_to_mpi(&scene, &dp, &f.c1).unwrap()).unwrap();
    let out = run_with(&f, &["magnify"], &["--factor", "1.0", "--mpi", s(&f.path("mpi")), "--out", s(&f.path("mag"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let right = read_image(&f.path("mag").join("right.png")).unwrap();
    let truth = read_image(&f.path("right.png")).unwrap();
    let p = masked_psnr(&right, &truth, &frustum_mask(&scene, &f.c1, &f.c2)).unwrap();
    assert!(p > 30.0, "{p}");
    let ana = read_image(&f.path("mag").join("anaglyph.png")).unwrap();
    assert_eq!((ana.width(), ana.height()), (64, 36));
    // green and blue carry the same luma
    assert_eq!(ana.channel(1), ana.channel(2));
}

#[test]
fn eval_compares_directories() {
    let f = fixture();
    let (a, b, c, empty) = (f.path("a"), f.path("b"), f.path("c"), f.path("empty"));
    for d in [&a, &b, &c, &empty] {
        std::fs::create_dir(d).unwrap();
    }
    for d in [&a, &b] {
        std::fs::copy(f.path("left.png"), d.join("v0.png")).unwrap();
    }
    std::fs::copy(f.path("left.png"), c.join("other.png")).unwrap();

    let out = stereomag(&["eval", "--rendered", s(&a), "--truth", s(&b)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["rows"][0]["ssim"], 1.0);
    assert_eq!(json["rows"][0]["psnr"], "inf");

    assert_eq!(code(&stereomag(&["eval", "--rendered", s(&a), "--truth", s(&c)])), 2);
    assert_eq!(code(&stereomag(&["eval", "--rendered", s(&empty), "--truth", s(&empty)])), 2);
}

#[test]
fn dataset_commands() {
    let dir = TempDir::new().unwrap();
    let seq = walking_sequence(60, 4);
    let (seq_path, pts_path) = (dir.path().join("seq.txt"), dir.path().join("pts.txt"));
    std::fs::write(&seq_path, write_sequence(&seq).unwrap()).unwrap();
    std::fs::write(&pts_path, write_points(&seq.points)).unwrap();

    let norm = dir.path().join("norm.txt");
    let out = stereomag(&["dataset-normalize", "--sequence", s(&seq_path), "--points", s(&pts_path), "--out", s(&norm), "--out-points", s(&dir.path().join("np.txt"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let again = dir.path().join("again.txt");
    let out = stereomag(&["dataset-normalize", "--sequence", s(&norm), "--points", s(&dir.path().join("np.txt")), "--out", s(&again)]);
    assert_eq!(code(&out), 0);
    let factor: f64 = String::from_utf8_lossy(&out.stdout).trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((factor - 1.0).abs() < 1e-6, "{factor}");

    let out = stereomag(&["dataset-filter", "--sequence", s(&seq_path), "--out", s(&dir.path().join("clip.txt"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = stereomag(&["dataset-sample", "--sequence", s(&seq_path), "--count", "3", "--seed", "5"]);
    assert_eq!(code(&out), 0);
    let again = stereomag(&["dataset-sample", "--sequence", s(&seq_path), "--count", "3", "--seed", "5"]);
    assert_eq!(out.stdout, again.stdout);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let short = dir.path().join("short.txt");
    std::fs::write(&short, write_sequence(&walking_sequence(5, 1)).unwrap()).unwrap();
    assert_eq!(code(&stereomag(&["dataset-sample", "--sequence", s(&short)])), 2);
}

#[test]
fn selfcheck_passes() {
    let out = stereomag(&["selfcheck"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 3);
}
