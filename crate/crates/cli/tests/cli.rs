use std::path::{Path, PathBuf};
use std::process::Command as Process;

use asgfit::io::{load_env, save_env, ParamsFile};
use asgfit::metrics::weighted_l1;
use asgfit::render::temporal_variation;
use asgfit::synth::{frame_towards, render_mixture, SkyScene};
use asgfit::{AsgMixture, AsgParams, EnvMap, GridDims, RgbImage, SampleGrid, Vec3};
use asgfit_cli::commands::{fit, fit_config, metrics};
use asgfit_cli::manifest::RunManifest;
use asgfit_cli::{exit_code, run, Cli, Command};
use clap::Parser;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn parse(args: &[&str]) -> Command {
    Cli::try_parse_from(std::iter::once("asgfit").chain(args.iter().copied()))
        .unwrap()
        .command
}

fn exec(args: &[&str]) -> asgfit::Result<()> {
    run(&parse(args))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_frames(dir: &Path, frames: &[EnvMap]) -> String {
    for (i, f) in frames.iter().enumerate() {
        save_env(&dir.join(format!("frame_{i:03}.pfm")), f).unwrap();
    }
    format!("{}/frame_*.pfm", dir.display())
}

fn decode_png(path: &Path) -> (usize, usize, Vec<u8>) {
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width as usize, info.height as usize, buf)
}

fn binary(args: &[&str]) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_asgfit"))
        .arg("-q")
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn one_lobe() -> AsgMixture {
    let (u, n) = frame_towards(&Vec3::new(0.3, -0.5, 0.8), 0.7);
    AsgMixture::new(vec![AsgParams::from_realized(
        30.0,
        8.0,
        u,
        n,
        Vec3::new(5.0, 3.0, 1.0),
    )])
}

#[test]
fn fit_defaults_match_reference_settings() {
    let Command::Fit(args) = parse(&["fit", "--input", "x.hdr", "--out", "p.json"]) else {
        unreachable!()
    };
    let cfg = fit_config(&args).unwrap();
    assert_eq!(
        (cfg.weights.alpha, cfg.weights.beta, cfg.weights.gamma),
        (1.0, 1.0, 0.5)
    );
    assert_eq!((cfg.grid_dims().width, cfg.grid_dims().height), (512, 256));
    assert_eq!((cfg.epochs_first, cfg.epochs_rest), (24000, 6000));
    assert_eq!(cfg.num_asgs, 15);
    assert_eq!(cfg.learning_rate, 0.01);
}

#[test]
fn manifest_echoes_config_and_inputs() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("env.pfm");
    save_env(
        &input,
        &SkyScene::studio().render(GridDims::with_height(16), 1).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("params.json");
    let cmd = parse(&[
        "fit",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--num-asgs",
        "2",
        "--grid-height",
        "16",
        "--epochs-first",
        "20",
    ]);
    let Command::Fit(args) = &cmd else { unreachable!() };
    let outcome = fit(args, &cmd).unwrap();
    let manifest = RunManifest::load(&dir.path().join("params.manifest.json")).unwrap();
    let cfg = manifest.config.unwrap();
    assert_eq!(cfg["weights"]["alpha"], 1.0);
    assert_eq!(cfg["weights"]["beta"], 1.0);
    assert_eq!(cfg["weights"]["gamma"], 0.5);
    assert_eq!(cfg["grid_height"], 16);
    assert_eq!(cfg["epochs_first"], 20);
    assert_eq!(cfg["epochs_rest"], 6000);
    assert_eq!(manifest.status, "ok");
    assert_eq!(manifest.inputs.len(), 1);
    assert_eq!(
        manifest.inputs[0].sha256,
        hex::encode(Sha256::digest(std::fs::read(&input).unwrap()))
    );
    assert_eq!(manifest.frames.len(), 1);
    assert_eq!(manifest.frames[0], outcome.manifest.frames[0]);
    assert!(manifest.outputs.contains(&out));
    assert_eq!(ParamsFile::load(&out).unwrap(), outcome.params);

    let csv = std::fs::read_to_string(dir.path().join("params.loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("frame,epoch,total,recon,diffuse,temporal"));
    assert_eq!(lines.count(), 20);
}

#[test]
fn gamma_zero_reports_no_temporal_loss() {
    let dir = TempDir::new().unwrap();
    let frames = SkyScene::studio()
        .rotating_sequence(GridDims::with_height(16), 3, 0.03)
        .unwrap();
    let glob = write_frames(dir.path(), &frames);
    let out = dir.path().join("params.json");
    exec(&[
        "fit",
        "--input",
        &glob,
        "--out",
        s(&out),
        "--preset",
        "desk",
        "--num-asgs",
        "2",
        "--grid-height",
        "16",
        "--epochs-first",
        "30",
        "--epochs-rest",
        "10",
        "--gamma",
        "0",
    ])
    .unwrap();
    let manifest = RunManifest::load(&dir.path().join("params.manifest.json")).unwrap();
    assert_eq!(manifest.frames.len(), 3);
    assert!(manifest.frames.iter().all(|f| f.temporal == 0.0));
    assert_eq!(ParamsFile::load(&out).unwrap().frames.len(), 3);
}

#[test]
fn no_diffuse_conflicts_with_beta() {
    let e = exec(&[
        "fit",
        "--input",
        "x.hdr",
        "--out",
        "p.json",
        "--no-diffuse",
        "--beta",
        "0.5",
    ])
    .unwrap_err();
    assert_eq!(exit_code(&e), 2);
}

#[test]
fn reconstruct_honors_width() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("p.json");
    std::fs::write(
        &params,
        ParamsFile::from_mixtures(&[one_lobe()], None)
            .unwrap()
            .to_json()
            .unwrap(),
    )
    .unwrap();
    let out = dir.path().join("r.hdr");
    exec(&["reconstruct", s(&params), "--out", s(&out), "--width", "1024"]).unwrap();
    let env = load_env(&out).unwrap();
    assert_eq!((env.width(), env.height()), (1024, 512));
    assert!(dir.path().join("r.manifest.json").is_file());

    let e = exec(&["reconstruct", s(&params), "--out", s(&out), "--frame", "1"]).unwrap_err();
    assert_eq!(exit_code(&e), 2);
    let e = exec(&["reconstruct", s(&params), "--out", s(&out), "--width", "33"]).unwrap_err();
    assert_eq!(exit_code(&e), 2);
}

#[test]
fn reconstructed_constant_environment_is_near_constant() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("gray.pfm");
    save_env(
        &input,
        &EnvMap::new(RgbImage::filled(GridDims::with_height(32), [1.0; 3])).unwrap(),
    )
    .unwrap();
    let params = dir.path().join("p.json");
    exec(&[
        "fit",
        "--input",
        s(&input),
        "--out",
        s(&params),
        "--preset",
        "desk",
        "--num-asgs",
        "3",
        "--grid-height",
        "32",
    ])
    .unwrap();
    let out = dir.path().join("r.pfm");
    exec(&["reconstruct", s(&params), "--out", s(&out), "--width", "64"]).unwrap();
    let env = load_env(&out).unwrap();
    for p in env.pixels() {
        for v in p {
            assert!((v - 1.0).abs() < 0.1, "{v}");
        }
    }
}

#[test]
fn reconstruct_of_fit_matches_synthetic_source() {
    let dir = TempDir::new().unwrap();
    let dims = GridDims::with_height(64);
    let truth = render_mixture(&one_lobe(), dims).unwrap();
    let input = dir.path().join("lobe.pfm");
    save_env(&input, &truth).unwrap();
    let params = dir.path().join("p.json");
    exec(&[
        "fit",
        "--input",
        s(&input),
        "--out",
        s(&params),
        "--preset",
        "desk",
        "--num-asgs",
        "1",
    ])
    .unwrap();
    let out = dir.path().join("r.pfm");
    exec(&["reconstruct", s(&params), "--out", s(&out), "--width", "128"]).unwrap();
    let grid = SampleGrid::new(dims).unwrap();
    let got = load_env(&out).unwrap();
    let err = weighted_l1(got.image(), truth.image(), &grid).unwrap();
    let scale = weighted_l1(&RgbImage::zeros(dims), truth.image(), &grid).unwrap();
    assert!(err < 0.01 * scale, "weighted L1 {err} vs signal {scale}");
}

#[test]
fn metrics_of_exact_params_are_zero() {
    let dir = TempDir::new().unwrap();
    let m = one_lobe();
    let dims = GridDims::with_height(32);
    let glob = write_frames(
        dir.path(),
        &[render_mixture(&m, dims).unwrap(), render_mixture(&m, dims).unwrap()],
    );
    let params = dir.path().join("p.json");
    std::fs::write(
        &params,
        ParamsFile::from_mixtures(&[m.clone(), m], None)
            .unwrap()
            .to_json()
            .unwrap(),
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let cmd = parse(&[
        "metrics",
        s(&params),
        "--input",
        &glob,
        "--report",
        s(&report),
        "--grid-height",
        "32",
    ]);
    let Command::Metrics(args) = &cmd else { unreachable!() };
    metrics(args, &cmd).unwrap();

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let frames = json["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 2);
    for f in frames {
        for key in ["weighted_l1", "weighted_l2", "diffuse_l1"] {
            assert!(f[key].as_f64().unwrap() < 1e-6, "{key} = {}", f[key]);
        }
        assert!((f["energy_ratio"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    }
    assert_eq!(json["jitter"], 0.0);
}

#[test]
fn metrics_rejects_mismatched_frame_counts() {
    let dir = TempDir::new().unwrap();
    let glob = write_frames(
        dir.path(),
        &[render_mixture(&one_lobe(), GridDims::with_height(16)).unwrap()],
    );
    let params = dir.path().join("p.json");
    let m = one_lobe();
    std::fs::write(
        &params,
        ParamsFile::from_mixtures(&[m.clone(), m], None)
            .unwrap()
            .to_json()
            .unwrap(),
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let e = exec(&["metrics", s(&params), "--input", &glob, "--report", s(&report)]).unwrap_err();
    assert_eq!(exit_code(&e), 3);
}

#[test]
fn render_balls_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let env = dir.path().join("env.pfm");
    save_env(&env, &SkyScene::studio().render(GridDims::with_height(32), 1).unwrap()).unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    for out in [&a, &b] {
        exec(&[
            "render-balls",
            s(&env),
            "--roughness",
            "0.1,0.6,1",
            "--size",
            "24",
            "--samples",
            "32",
            "--out",
            s(out),
        ])
        .unwrap();
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (w, h, _) = decode_png(&a);
    assert_eq!((w, h), (72, 24));
    let manifest = RunManifest::load(&dir.path().join("a.manifest.json")).unwrap();
    assert_eq!(manifest.exposure, Some(1.0));

    let params = dir.path().join("p.json");
    std::fs::write(
        &params,
        ParamsFile::from_mixtures(&[one_lobe()], None)
            .unwrap()
            .to_json()
            .unwrap(),
    )
    .unwrap();
    exec(&[
        "render-balls",
        s(&params),
        "--roughness",
        "0.5",
        "--size",
        "16",
        "--samples",
        "16",
        "--out",
        s(&a),
    ])
    .unwrap();
    assert_eq!(decode_png(&a).0, 16);

    for bad in ["0", "1.5", "-0.2", "nan"] {
        let e = exec(&["render-balls", s(&env), &format!("--roughness={bad}"), "--out", s(&a)]).unwrap_err();
        assert_eq!(exit_code(&e), 2, "roughness {bad}");
    }
}

#[test]
fn stacked_rows_of_constant_sequence_are_uniform() {
    let dir = TempDir::new().unwrap();
    let env = SkyScene::studio().render(GridDims::with_height(16), 1).unwrap();
    let glob = write_frames(dir.path(), &[env.clone(), env.clone(), env]);
    let out = dir.path().join("stack.png");
    exec(&["stack-rows", "--input", &glob, "--row", "5", "--out", s(&out)]).unwrap();
    let (w, h, bytes) = decode_png(&out);
    assert_eq!((w, h), (32, 3));
    let row = &bytes[..w * 3];
    assert!(bytes.chunks(w * 3).all(|r| r == row));

    let e = exec(&["stack-rows", "--input", &glob, "--row", "16", "--out", s(&out)]).unwrap_err();
    assert_eq!(exit_code(&e), 2);
}

#[test]
fn stacked_rows_of_single_frame_is_one_row() {
    let dir = TempDir::new().unwrap();
    let params = dir.path().join("p.json");
    std::fs::write(
        &params,
        ParamsFile::from_mixtures(&[one_lobe()], None)
            .unwrap()
            .to_json()
            .unwrap(),
    )
    .unwrap();
    let out = dir.path().join("stack.png");
    exec(&[
        "stack-rows",
        "--input",
        s(&params),
        "--row",
        "10",
        "--width",
        "64",
        "--out",
        s(&out),
    ])
    .unwrap();
    assert_eq!(decode_png(&out).0, 64);
    assert_eq!(decode_png(&out).1, 1);
}

#[test]
fn temporal_term_steadies_stacked_rows() {
    let dir = TempDir::new().unwrap();
    let frames = SkyScene::studio()
        .rotating_sequence(GridDims::with_height(32), 4, 2f64.to_radians())
        .unwrap();
    let glob = write_frames(dir.path(), &frames);
    let variation = |gamma: &str| {
        let params = dir.path().join(format!("p{gamma}.json"));
        exec(&[
            "fit",
            "--input",
            &glob,
            "--out",
            s(&params),
            "--preset",
            "desk",
            "--num-asgs",
            "5",
            "--grid-height",
            "32",
            "--epochs-first",
            "1000",
            "--epochs-rest",
            "250",
            "--gamma",
            gamma,
        ])
        .unwrap();
        let stack = ParamsFile::load(&params)
            .unwrap()
            .mixtures()
            .iter()
            .map(|m| render_mixture(m, GridDims::with_height(64)).unwrap().into_image())
            .collect::<Vec<_>>();
        temporal_variation(&asgfit::render::stack_rows(&stack, 20).unwrap())
    };
    let (free, anchored) = (variation("0"), variation("0.5"));
    assert!(anchored < free, "γ=0.5 {anchored} vs γ=0 {free}");
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("env.pfm");
    save_env(&input, &SkyScene::sunny().render(GridDims::with_height(16), 1).unwrap()).unwrap();
    let out = dir.path().join("params.json");
    exec(&[
        "fit",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--num-asgs",
        "2",
        "--grid-height",
        "16",
        "--epochs-first",
        "40",
        "--deterministic",
    ])
    .unwrap();
    let first = std::fs::read(&out).unwrap();
    std::fs::remove_file(&out).unwrap();
    let manifest = dir.path().join("params.manifest.json");
    let replay_manifest = dir.path().join("replay.json");
    exec(&["replay", s(&manifest)]).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), first);

    let synth_out = dir.path().join("s.hdr");
    exec(&["synth", "--height", "8", "--out", s(&synth_out)]).unwrap();
    let bytes = std::fs::read(&synth_out).unwrap();
    std::fs::remove_file(&synth_out).unwrap();
    exec(&["replay", s(&dir.path().join("s.manifest.json"))]).unwrap();
    assert_eq!(std::fs::read(&synth_out).unwrap(), bytes);
    assert!(!replay_manifest.exists());
}

#[test]
fn synth_numbers_sequence_frames() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("seq.pfm");
    exec(&[
        "synth",
        "--scene",
        "studio",
        "--height",
        "8",
        "--frames",
        "3",
        "--out",
        s(&out),
    ])
    .unwrap();
    let names: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("seq_{i:03}.pfm"))).collect();
    assert!(names.iter().all(|p| p.is_file()));
    assert_ne!(
        load_env(&names[0]).unwrap().pixels(),
        load_env(&names[1]).unwrap().pixels()
    );
}

#[test]
fn bundled_asset_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("studio.hdr");
    exec(&["synth", "--scene", "studio", "--height", "256", "--out", s(&out)]).unwrap();
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/studio.hdr");
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(bundled).unwrap());
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.json");
    let garbage = dir.path().join("bad.hdr");
    std::fs::write(&garbage, b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 4 +X nope\n").unwrap();
    assert_eq!(binary(&["fit", "--input", s(&garbage), "--out", s(&out)]), 3);
    assert_eq!(
        binary(&[
            "fit",
            "--input",
            &format!("{}/*.hdr", dir.path().join("none").display()),
            "--out",
            s(&out)
        ]),
        2
    );
    assert_eq!(binary(&["fit", "--bogus"]), 2);

    let good = dir.path().join("env.pfm");
    save_env(&good, &SkyScene::studio().render(GridDims::with_height(16), 1).unwrap()).unwrap();
    let code = binary(&[
        "fit",
        "--input",
        s(&good),
        "--out",
        s(&out),
        "--num-asgs",
        "2",
        "--grid-height",
        "16",
        "--epochs-first",
        "50",
        "--learning-rate",
        "1e300",
    ]);
    assert_eq!(code, 4);
    let manifest = RunManifest::load(&dir.path().join("p.manifest.json")).unwrap();
    assert!(manifest.status.starts_with("failed"), "{}", manifest.status);
    assert_eq!(
        binary(&["synth", "--height", "8", "--out", s(&dir.path().join("ok.hdr"))]),
        0
    );
}

#[test]
fn documented_params_example_loads() {
    let doc = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/format.md")).unwrap();
    let start = doc.find("```json\n").unwrap() + "```json\n".len();
    let end = start + doc[start..].find("```").unwrap();
    let params = ParamsFile::from_json(&doc[start..end]).unwrap();
    let lobe = &params.mixture(0).unwrap().lobes[0];
    assert!((lobe.mu() - 30.0).abs() < 1e-12 && (lobe.lambda() - 8.0).abs() < 1e-12);
    assert_eq!(params.frames[0].lobes[0].mu, 30.0);
    assert_eq!(params.config.unwrap().grid_height, 64);
}
