//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! The run trains every network at full size, so expect tens of minutes on a
//! single core. Set `LCAPA_ACCEPTANCE_STRICT=1` to exit non-zero when any
//! criterion fails; by default failures are reported and the run succeeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lcapa_cli::cli::{grad_check_all, replay, GRAD_TOLERANCE, REPLAY_TOLERANCE};
use lcapa_cli::config::{ExperimentConfig, ExperimentKind, Method};
use lcapa_cli::experiment::{run_experiment, save_trained, train_surrogates, ExperimentOutput, TrainedModel};
use lcapa_cli::output::write_output;
use lcapa_core::gnn::checkpoint::load_checkpoint_as;
use lcapa_core::gnn::nets::{equivariance_defect, NetKind, Network, Normalization};
use lcapa_core::linalg::rel_diff;
use lcapa_core::objective::{appendix_improvement_check, scene_gram};
use lcapa_core::par::{self, Execution};
use lcapa_core::quadrature::{build_grid, direct_integral_check, integral_couplings, integral_power, WeightMatrix};
use lcapa_core::scene::{sample_scene, Scene, SceneParams};
use lcapa_core::train::dataset::{gen_supervised_dataset, DatasetMode, DatasetSpec};
use lcapa_core::wmmse::{discretize_channels, wmmse_precoding, WmmseOptions, WmmseSolver};
use lcapa_core::{seeds, CMat, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;

const EXEC: Execution = Execution::Parallel;
const BASE_SEED: u64 = 7_000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn scene(i: usize, params: &SceneParams) -> Scene {
    sample_scene(seeds::derive(BASE_SEED, seeds::stream::SCENE, i as u64), params).unwrap()
}

fn random_weights(i: usize, k: usize) -> WeightMatrix {
    let mut rng = seeds::rng(BASE_SEED, seeds::stream::WEIGHTS, i as u64);
    WeightMatrix(CMat::from_fn(k, k, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }))
}

fn mean_se(out: &ExperimentOutput, value: f64, method: Method) -> f64 {
    out.summary
        .iter()
        .find(|r| r.method == method && r.value == value)
        .unwrap_or_else(|| panic!("no {} row at {value}", method.name()))
        .mean_se
}

fn quadrature_oracle() -> Verdict {
    let params = SceneParams::default();
    let worst = par::map_indexed(100, EXEC, |i| {
        let s = scene(i, &params);
        let a = random_weights(i, 4);
        let grid = build_grid(&s.aperture, 256).unwrap();
        let gram = scene_gram(&s, 256, Default::default(), Execution::Sequential).unwrap();
        let p = integral_power(&a, &gram.c).unwrap();
        let g = integral_couplings(&a, &gram.b).unwrap();
        let (p_ref, g_ref) = direct_integral_check(&s, &grid, &a, Default::default()).unwrap();
        let p_err = p.0.iter().zip(&p_ref.0).map(|(x, y)| (x - y).abs() / y.abs()).fold(0.0, f64::max);
        p_err.max(rel_diff(&g.0, &g_ref.0))
    })
    .into_iter()
    .fold(0.0, f64::max);
    verdict(worst <= 1e-10, format!("worst relative gap {worst:.2e} over 100 draws"))
}

fn equivariance(trained: &[Network]) -> Verdict {
    let params = SceneParams::default();
    let proj_data = gen_supervised_dataset(&DatasetSpec::new(BASE_SEED, 5, 64, DatasetMode::Proj, params), EXEC).unwrap();
    let norm = proj_data.normalization();
    let mut nets: Vec<(String, Network)> = [NetKind::Policy, NetKind::Proj, NetKind::Value]
        .into_iter()
        .map(|kind| {
            let n = match kind {
                NetKind::Policy => Normalization {
                    output_scale: norm.input_scale,
                    ..Normalization::default()
                },
                _ => norm,
            };
            (format!("untrained {}", kind.name()), Network::new(kind, kind.spec(4, 64), n, 11).unwrap())
        })
        .collect();
    nets.extend(trained.iter().map(|n| (format!("trained {}", n.kind.name()), n.clone())));
    let mut worst = 0.0f64;
    for (_, net) in &nets {
        for s in &proj_data.samples {
            let a = (net.kind != NetKind::Policy).then_some(&s.weights);
            worst = worst.max(equivariance_defect(net, &s.scene.positions, a).unwrap());
        }
    }
    verdict(
        worst <= 1e-9 && trained.len() == 3,
        format!("worst defect {worst:.2e} over 24 permutations, {} networks", nets.len()),
    )
}

fn gradients() -> Verdict {
    let reports = grad_check_all(&ExperimentConfig::default(), 200, 1, [None, None, None], EXEC).unwrap();
    let pass = reports.iter().all(|(_, r)| r.passes(GRAD_TOLERANCE) && r.probes >= 200);
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} {:.1e}/{}", r.max_rel_error, r.probes))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, detail)
}

fn subspace_optimality() -> Verdict {
    let params = SceneParams::default();
    let wins = par::map_indexed(100, EXEC, |i| {
        let s = scene(100 + i, &params);
        let grid = build_grid(&s.aperture, 256).unwrap();
        let a = random_weights(100 + i, 4);
        let out = appendix_improvement_check(&s, &grid, &a, BASE_SEED + i as u64, 0.5, Default::default()).unwrap();
        out.r1 > out.r0
    })
    .into_iter()
    .filter(|&w| w)
    .count();
    verdict(wins == 100, format!("R1 > R0 on {wins}/100 draws"))
}

fn wmmse_correctness() -> Verdict {
    let single = SceneParams {
        num_users: 1,
        ..SceneParams::default()
    };
    let mrt_gap = par::map_indexed(10, EXEC, |i| {
        let s = scene(300 + i, &single);
        let eff = discretize_channels(&s, &build_grid(&s.aperture, 256).unwrap(), Execution::Sequential).unwrap();
        let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
        let se = eff.se(&sol.precoder.v).unwrap().sum;
        let gain: f64 = eff.channels.h.iter().map(|z| z.norm_sqr()).sum::<f64>() * eff.channels.cell_area;
        let closed = (1.0 + eff.areas[0] * gain * eff.p_max / eff.noise[0]).log2();
        (se - closed).abs() / closed
    })
    .into_iter()
    .fold(0.0, f64::max);
    let params = SceneParams::default();
    let worst_drop = par::map_indexed(100, EXEC, |i| {
        let s = scene(400 + i, &params);
        let eff = discretize_channels(&s, &build_grid(&s.aperture, 256).unwrap(), Execution::Sequential).unwrap();
        let sol = wmmse_precoding(&eff, &WmmseOptions::default()).unwrap();
        sol.trace.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        mrt_gap <= 1e-8 && worst_drop <= 1e-8,
        format!("MRT gap {mrt_gap:.1e}; largest trace decrease {worst_drop:.1e} over 100 scenes"),
    )
}

fn save(models: &[TrainedModel], dir: &Path) -> Vec<PathBuf> {
    save_trained(
        &ExperimentOutput {
            trained: models.to_vec(),
            ..ExperimentOutput::default()
        },
        dir,
    )
    .unwrap()
}

fn main() {
    let strict = std::env::var_os("LCAPA_ACCEPTANCE_STRICT").is_some();
    let work = tempfile::tempdir().unwrap();
    let ckpt = work.path().join("checkpoints");
    let mut results: Vec<(u8, &str, Verdict, f64)> = Vec::new();
    let mut record = |id: u8, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {id:>2} {}: {name}: {} ({secs:.0} s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((id, name, v, secs));
    };

    record(1, "quadrature oracle equivalence", &mut quadrature_oracle);
    record(3, "finite-difference gradients", &mut gradients);
    record(4, "channel-subspace optimality", &mut subspace_optimality);
    record(5, "WMMSE correctness", &mut wmmse_correctness);

    let base = ExperimentConfig::default();
    let params = base.scene_params(&base.points().unwrap()[0]).unwrap();
    let mut trained = Vec::new();
    let surrogate = train_surrogates(&base, &params, EXEC, &mut trained).unwrap();
    let paths = save(&trained, &ckpt);
    record(6, "surrogate fidelity", &mut || {
        verdict(
            surrogate.proj_nmse <= 1e-2 && surrogate.value_nmse <= 1e-2,
            format!(
                "held-out NMSE proj {:.3e}, value {:.3e} (500 samples)",
                surrogate.proj_nmse, surrogate.value_nmse
            ),
        )
    });

    let mut cfg = base.clone();
    cfg.checkpoints.proj = Some(paths[0].clone());
    cfg.checkpoints.value = Some(paths[1].clone());
    let mut single = None;
    record(7, "end-to-end SE vs WMMSE(M=256)", &mut || {
        let out = run_experiment(&cfg, EXEC).unwrap();
        write_output(&work.path().join("single"), &cfg, &out).unwrap();
        let m = cfg.m as f64;
        let (gnn, analytic, wmmse) = (
            mean_se(&out, m, Method::LcapaGnn),
            mean_se(&out, m, Method::LcapaAnalytic),
            mean_se(&out, m, Method::Wmmse),
        );
        let v = verdict(
            gnn >= 0.90 * wmmse && analytic >= 0.95 * wmmse,
            format!(
                "mean SE gnn {gnn:.4} ({:.3}x), analytic {analytic:.4} ({:.3}x), wmmse {wmmse:.4}",
                gnn / wmmse,
                analytic / wmmse
            ),
        );
        single = Some(out);
        v
    });
    let single = single.unwrap();
    let policy_paths = save(&single.trained, &ckpt);
    let policy_gnn = policy_paths
        .iter()
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("policy-surrogate"))
        .unwrap()
        .clone();

    record(2, "permutation equivariance", &mut || {
        let nets = vec![
            load_checkpoint_as(&policy_gnn, NetKind::Policy, None).unwrap(),
            surrogate.proj.clone(),
            surrogate.value.clone(),
        ];
        equivariance(&nets)
    });

    record(8, "WMMSE saturation in M", &mut || {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::SweepM,
            sweep: vec![64.0, 256.0, 1024.0],
            methods: vec![Method::Wmmse],
            wmmse: WmmseOptions {
                solver: WmmseSolver::Reduced,
                ..WmmseOptions::default()
            },
            ..base.clone()
        };
        let out = run_experiment(&cfg, EXEC).unwrap();
        let [a, b, c] = [64.0, 256.0, 1024.0].map(|m| mean_se(&out, m, Method::Wmmse));
        verdict(
            c >= a && (c - b) < (b - a),
            format!("mean SE M=64 {a:.4}, M=256 {b:.4}, M=1024 {c:.4}"),
        )
    });

    record(9, "inference timing vs WMMSE", &mut || {
        let mut cfg = ExperimentConfig {
            kind: ExperimentKind::Timing,
            ..base.clone()
        };
        cfg.checkpoints.proj = Some(paths[0].clone());
        cfg.checkpoints.policy_gnn = Some(policy_gnn.clone());
        let out = run_experiment(&cfg, EXEC).unwrap();
        let row = |m: &str| out.timing_summary.iter().find(|t| t.method == m).unwrap().clone();
        let (l, w) = (row(Method::LcapaGnn.name()), row("wmmse"));
        let cv = out.timing_summary.iter().map(|t| t.cv).fold(0.0, f64::max);
        verdict(
            l.ratio_to_wmmse <= 0.1,
            format!(
                "median {:.3e} s vs {:.3e} s, ratio {:.2e}; worst cv {cv:.3} over {} runs",
                l.median_s, w.median_s, l.ratio_to_wmmse, cfg.timing.runs
            ),
        )
    });

    record(10, "replay reproduces a sweep", &mut || {
        let dir = work.path().join("replay-src");
        std::fs::create_dir_all(&dir).unwrap();
        let config = dir.join("snr.json");
        std::fs::write(
            &config,
            r#"{"kind":"sweep-snr","sweep":[1e5,1e6],"n_test":6,"m":64,"m_eval":64,
               "surrogate":{"n_train":32,"n_validation":8,"n_holdout":8,"grid_m":16,"epochs":3,"hidden":16},
               "policy":{"n_train":16,"n_validation":4,"grid_m":16,"epochs":3,"hidden":16}}"#,
        )
        .unwrap();
        let out_dir = dir.join("out");
        let args = ["lcapa", "experiment", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        let code = lcapa_cli::run(args);
        // replaying the summary compares every table of the run
        let diffs = replay(&out_dir.join("sweep-snr.csv"), Some(&dir.join("again")), EXEC).unwrap();
        verdict(
            code == 0 && diffs.is_empty(),
            format!("{} cells beyond {REPLAY_TOLERANCE:e} relative across 3 tables", diffs.len()),
        )
    });

    results.sort_by_key(|r| r.0);
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!();
    for (id, name, v, secs) in &results {
        println!(
            "criterion {id:>2} {}: {name}: {} ({secs:.0} s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
