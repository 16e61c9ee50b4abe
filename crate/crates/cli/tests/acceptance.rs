use std::path::{Path, PathBuf};
use std::time::Instant;

use asgfit::asg::RAW_PER_LOBE;
use asgfit::io::hdr::{decode_rgbe, encode_rgbe, read_hdr, rgb_to_rgbe, rgbe_to_rgb, write_hdr};
use asgfit::io::load_env;
use asgfit::loss::{LossWeights, Objective, ReconstructionNorm};
use asgfit::metrics::{energy_ratio, jitter, weighted_l1};
use asgfit::optim::{fit_frame, fit_sequence, init_mixture, prepare_frame, FitConfig};
use asgfit::sh::DiffuseOperator;
use asgfit::synth::{frame_towards, render_mixture, SkyScene};
use asgfit::{AsgMixture, AsgParams, EnvMap, GridDims, RgbImage, SampleGrid, Vec3};
use asgfit_cli::commands::fit;
use asgfit_cli::{Cli, Command};
use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Check = fn() -> Result<String, String>;

struct Gate {
    failures: usize,
}

impl Gate {
    fn record(&mut self, id: &str, name: &str, start: Instant, outcome: Result<String, String>) {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL [{id}] {name}: {detail} ({secs:.1}s)");
            }
        }
    }
}

fn verdict(pass: bool, detail: String) -> Result<String, String> {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_mixture(lobes: usize, rng: &mut ChaCha8Rng) -> AsgMixture {
    AsgMixture::new(
        (0..lobes)
            .map(|_| {
                let (u, n) = frame_towards(&random_unit(rng), rng.gen_range(0.0..std::f64::consts::TAU));
                AsgParams::from_realized(
                    rng.gen_range(1.0..40.0),
                    rng.gen_range(1.0..40.0),
                    u,
                    n,
                    Vec3::new(
                        rng.gen_range(0.2..5.0),
                        rng.gen_range(0.2..5.0),
                        rng.gen_range(0.2..5.0),
                    ),
                )
            })
            .collect(),
    )
}

fn fitted(env: &EnvMap, cfg: &FitConfig) -> (AsgMixture, EnvMap) {
    let gt = prepare_frame(env, cfg).unwrap();
    let init = init_mixture(cfg, &gt).unwrap();
    (fit_frame(&gt, &init, None, cfg).unwrap().mixture, gt)
}

fn grid_of(cfg: &FitConfig) -> SampleGrid {
    SampleGrid::new(cfg.grid_dims()).unwrap()
}

struct GradientStats {
    worst_block: f64,
    worst_block_name: &'static str,
    worst_vector: f64,
    median_vector: f64,
    configs_over: usize,
}

fn gradient_stats(weights: LossWeights, norm: ReconstructionNorm) -> GradientStats {
    const BLOCKS: [(&str, std::ops::Range<usize>); 5] = [
        ("log_mu", 0..1),
        ("log_lambda", 1..2),
        ("u_raw", 2..5),
        ("n_raw", 5..8),
        ("log_c", 8..11),
    ];
    let grid = SampleGrid::new(GridDims::new(64, 32)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-4;
    let mut stats = GradientStats {
        worst_block: 0.0,
        worst_block_name: "",
        worst_vector: 0.0,
        median_vector: 0.0,
        configs_over: 0,
    };
    let mut vector_errors = Vec::new();
    for _ in 0..50 {
        let target = EnvMap::new(
            render_mixture(&random_mixture(4, &mut rng), grid.dims())
                .unwrap()
                .into_image(),
        )
        .unwrap();
        let objective = Objective::new(&target, &grid, weights, norm).unwrap();
        let prev = random_mixture(3, &mut rng);
        let m = random_mixture(3, &mut rng);
        let (_, grads) = objective.evaluate(&m, Some(&prev)).unwrap();
        let mut analytic = vec![0.0; m.raw_len()];
        for (g, chunk) in grads.iter().zip(analytic.chunks_exact_mut(RAW_PER_LOBE)) {
            g.write_raw(chunk);
        }
        let raw = m.to_raw();
        let total = |r: &[f64]| {
            objective
                .breakdown(&AsgMixture::from_raw(r), Some(&prev))
                .unwrap()
                .total
        };
        let numeric: Vec<f64> = (0..raw.len())
            .map(|k| {
                let (mut plus, mut minus) = (raw.clone(), raw.clone());
                plus[k] += h;
                minus[k] -= h;
                (total(&plus) - total(&minus)) / (2.0 * h)
            })
            .collect();
        let relative = |indices: &mut dyn Iterator<Item = usize>| {
            let (mut diff, mut norm) = (0.0, 0.0);
            for i in indices {
                diff += (analytic[i] - numeric[i]).powi(2);
                norm += numeric[i].powi(2);
            }
            diff.sqrt() / norm.sqrt().max(1e-12)
        };
        let vector = relative(&mut (0..raw.len()));
        vector_errors.push(vector);
        let mut over = vector >= 1e-3;
        for (name, range) in BLOCKS.iter() {
            let rel = relative(&mut (0..m.len()).flat_map(|l| range.clone().map(move |k| l * RAW_PER_LOBE + k)));
            over |= rel >= 1e-3;
            if rel > stats.worst_block {
                stats.worst_block = rel;
                stats.worst_block_name = name;
            }
        }
        stats.configs_over += usize::from(over);
    }
    vector_errors.sort_by(f64::total_cmp);
    stats.worst_vector = *vector_errors.last().unwrap();
    stats.median_vector = vector_errors[vector_errors.len() / 2];
    stats
}

fn gradient_check() -> Result<String, String> {
    let s = gradient_stats(LossWeights::default(), ReconstructionNorm::L1);
    let smooth = gradient_stats(
        LossWeights {
            beta: 0.0,
            ..LossWeights::default()
        },
        ReconstructionNorm::L2,
    );
    verdict(
        s.configs_over == 0,
        format!(
            "default loss: {} of 50 configs at or above 1e-3, worst block {:.2e} ({}), worst full vector {:.2e}, \
             median {:.2e}; smooth terms only (L2, β=0): worst block {:.2e}",
            s.configs_over, s.worst_block, s.worst_block_name, s.worst_vector, s.median_vector, smooth.worst_block
        ),
    )
}

fn quadrature() -> Result<String, String> {
    let grid = SampleGrid::with_height(256).unwrap();
    let four_pi = 4.0 * std::f64::consts::PI;
    let area = (grid.total_solid_angle() - four_pi).abs() / four_pi;
    let irr = DiffuseOperator::new(&grid)
        .irradiance(&RgbImage::filled(grid.dims(), [1.0; 3]))
        .unwrap();
    let worst = irr
        .data
        .iter()
        .flat_map(|p| p.iter())
        .map(|v| (v - std::f64::consts::PI).abs())
        .fold(0.0, f64::max);
    verdict(
        area < 1e-10 && worst < 1e-3,
        format!("solid angle rel error {area:.2e} (tol 1e-10), max |E - π| {worst:.2e} (tol 1e-3)"),
    )
}

fn synthetic_recovery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = FitConfig::desk(1);
    let grid = grid_of(&cfg);
    let c = Vec3::new(5.0, 3.0, 1.0);
    let (mut angle_max, mut peak_max, mut ratio_max) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..3 {
        let (u, n) = frame_towards(&random_unit(&mut rng), rng.gen_range(0.0..std::f64::consts::TAU));
        let truth = AsgMixture::new(vec![AsgParams::from_realized(30.0, 8.0, u, n, c)]);
        let env = render_mixture(&truth, cfg.grid_dims()).unwrap();
        let init = init_mixture(&cfg, &env).unwrap();
        let got = fit_frame(&env, &init, None, &cfg).unwrap().mixture;
        let lobe = &got.lobes[0];
        let axis = lobe.frame().unwrap().n;
        angle_max = angle_max.max(axis.dot(&n).abs().min(1.0).acos().to_degrees());
        for ch in 0..3 {
            peak_max = peak_max.max((lobe.c()[ch] - c[ch]).abs() / c[ch]);
        }
        let initial = weighted_l1(&init.realize().unwrap().eval_grid(&grid), env.image(), &grid).unwrap();
        let last = weighted_l1(&got.realize().unwrap().eval_grid(&grid), env.image(), &grid).unwrap();
        ratio_max = ratio_max.max(last / initial);
    }
    verdict(
        angle_max < 1.0 && peak_max < 0.02 && ratio_max < 0.01,
        format!(
            "worst of 3: axis {angle_max:.3}° (tol 1°), peak {:.3}% (tol 2%), final/initial wL1 {:.3}% (tol 1%)",
            peak_max * 100.0,
            ratio_max * 100.0
        ),
    )
}

fn count_sweep() -> Result<String, String> {
    let env = load_env(&asset("studio.hdr")).unwrap();
    let errors: Vec<f64> = [3, 7, 15]
        .iter()
        .map(|&n| {
            let cfg = FitConfig {
                grid_height: 128,
                epochs_first: 4000,
                ..FitConfig::desk(n)
            };
            let grid = grid_of(&cfg);
            let (m, gt) = fitted(&env, &cfg);
            weighted_l1(&m.realize().unwrap().eval_grid(&grid), gt.image(), &grid).unwrap()
        })
        .collect();
    verdict(
        errors.windows(2).all(|w| w[1] <= w[0]),
        format!(
            "wL1 N=3 {:.4}, N=7 {:.4}, N=15 {:.4}; non-increasing",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn ablation_energy() -> Result<String, String> {
    let env = load_env(&asset("studio.hdr")).unwrap();
    let ratio = |beta: f64| {
        let cfg = FitConfig {
            weights: LossWeights {
                beta,
                ..LossWeights::default()
            },
            ..FitConfig::desk(15)
        };
        let grid = grid_of(&cfg);
        let (m, gt) = fitted(&env, &cfg);
        energy_ratio(&m.realize().unwrap().eval_grid(&grid), gt.image(), &grid).unwrap()
    };
    let (full, no_diffuse) = (ratio(1.0), ratio(0.0));
    verdict(
        (0.9..=1.1).contains(&full) && (no_diffuse - 1.0).abs() > (full - 1.0).abs(),
        format!("energy ratio default {full:.4} (in [0.9, 1.1]), β=0 {no_diffuse:.4} (further from 1)"),
    )
}

fn ablation_norm() -> Result<String, String> {
    let env = SkyScene::sunny().render(GridDims::with_height(128), 4).unwrap();
    let error = |loss: ReconstructionNorm| {
        let cfg = FitConfig {
            loss,
            ..FitConfig::desk(15)
        };
        let grid = grid_of(&cfg);
        let (m, gt) = fitted(&env, &cfg);
        weighted_l1(&m.realize().unwrap().eval_grid(&grid), gt.image(), &grid).unwrap()
    };
    let (l1, l2) = (error(ReconstructionNorm::L1), error(ReconstructionNorm::L2));
    verdict(
        l2 > l1,
        format!("sunny sky wL1: L1 fit {l1:.4}, L2 fit {l2:.4} (L2 must be higher)"),
    )
}

fn temporal_consistency() -> Result<String, String> {
    let frames = SkyScene::studio()
        .rotating_sequence(GridDims::with_height(64), 5, 2f64.to_radians())
        .unwrap();
    let run = |gamma: f64| {
        let cfg = FitConfig {
            weights: LossWeights {
                gamma,
                ..LossWeights::default()
            },
            ..FitConfig::desk(7)
        };
        let grid = grid_of(&cfg);
        let fits = fit_sequence(&frames, &cfg).unwrap().into_result().unwrap();
        let mixtures: Vec<AsgMixture> = fits.into_iter().map(|f| f.mixture).collect();
        let errors: Vec<f64> = mixtures
            .iter()
            .zip(&frames)
            .map(|(m, f)| {
                let gt = prepare_frame(f, &cfg).unwrap();
                weighted_l1(&m.realize().unwrap().eval_grid(&grid), gt.image(), &grid).unwrap()
            })
            .collect();
        (jitter(&mixtures).unwrap(), errors)
    };
    let (j_free, e_free) = run(0.0);
    let (j_anchored, e_anchored) = run(0.5);
    let growth = e_anchored
        .iter()
        .zip(&e_free)
        .map(|(a, f)| a / f - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        j_anchored < j_free && growth < 0.2,
        format!(
            "J γ=0.5 {j_anchored:.4} < γ=0 {j_free:.4}; worst per-frame wL1 growth {:.2}% (tol 20%)",
            growth * 100.0
        ),
    )
}

fn rgbe_codec() -> Result<String, String> {
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_12x3.hdr")).unwrap();
    let (dims, data) = decode_rgbe(&golden).unwrap();
    let expected_row0: Vec<[u8; 4]> = (0..12u8)
        .map(|x| [200, if x < 4 { x + 1 } else { 9 }, x, 130])
        .collect();
    let decoded_ok = dims == GridDims::new(12, 3) && data[..12] == expected_row0[..] && data[35] == [150, 0, 7, 128];
    let raw_exact = encode_rgbe(dims, &data).unwrap() == golden;
    let float_exact = write_hdr(&read_hdr(&golden).unwrap()) == golden;
    let bundled = std::fs::read(asset("studio.hdr")).unwrap();
    let bundled_exact = write_hdr(&read_hdr(&bundled).unwrap()) == bundled;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let scale = 10f64.powf(rng.gen_range(-20.0..20.0));
        let px = [
            rng.gen::<f64>() * scale,
            rng.gen::<f64>() * scale,
            rng.gen::<f64>() * scale,
        ];
        let back = rgbe_to_rgb(rgb_to_rgbe(px));
        let k = (0..3).max_by(|&a, &b| px[a].total_cmp(&px[b])).unwrap();
        worst = worst.max((back[k] - px[k]).abs() / px[k]);
    }
    verdict(
        decoded_ok && raw_exact && float_exact && bundled_exact && worst <= 1.0 / 128.0,
        format!(
            "golden decode {decoded_ok}, re-encode raw {raw_exact} / float {float_exact}, bundled {bundled_exact}; \
             worst dominant-channel error {worst:.2e} (tol {:.2e})",
            1.0 / 128.0
        ),
    )
}

fn determinism() -> Result<String, String> {
    let dir = TempDir::new().unwrap();
    let input = asset("studio.hdr");
    let outputs: Vec<Vec<u8>> = ["a.json", "b.json"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let cli = Cli::try_parse_from([
                "asgfit",
                "fit",
                "--input",
                input.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--preset",
                "desk",
                "--seed",
                "11",
                "--deterministic",
            ])
            .unwrap();
            let Command::Fit(args) = &cli.command else {
                unreachable!()
            };
            fit(args, &cli.command).unwrap();
            std::fs::read(&out).unwrap()
        })
        .collect();
    verdict(
        outputs[0] == outputs[1],
        format!(
            "two desk fits, {} bytes each, identical: {}",
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn main() {
    let checks: [(&str, &str, Check); 9] = [
        ("1", "gradient correctness", gradient_check),
        ("2", "sphere quadrature", quadrature),
        ("3", "synthetic recovery", synthetic_recovery),
        ("4", "lobe-count sweep", count_sweep),
        ("5a", "diffuse term keeps energy", ablation_energy),
        ("5b", "L1 beats L2 on a sunny sky", ablation_norm),
        ("6", "temporal consistency", temporal_consistency),
        ("7", "RGBE codec", rgbe_codec),
        ("8", "determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut gate = Gate { failures: 0 };
    for (id, name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        gate.record(id, name, start, outcome);
    }
    if gate.failures > 0 {
        println!("{} acceptance check(s) failed", gate.failures);
        std::process::exit(1);
    }
}
