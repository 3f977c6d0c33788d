//! Experiment runner: trains or loads the networks for each point, evaluates
//! every method on one paired set of test scenes, and builds result tables.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use lcapa_core::gnn::checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
use lcapa_core::gnn::nets::{NetKind, Network};
use lcapa_core::objective::{exact_sum_se, project_weights, SeReport};
use lcapa_core::par::{self, Execution};
use lcapa_core::quadrature::{integral_couplings, integral_power};
use lcapa_core::scene::SceneParams;
use lcapa_core::train::dataset::{gen_supervised_dataset, Dataset, DatasetMode, DatasetSpec};
use lcapa_core::train::policy::{scenes_with_grams, stream_scene, ChainSample, Surrogates};
use lcapa_core::train::supervised::{normalized_mse, train_supervised};
use lcapa_core::train::{train_policy, ChainMode, PolicySetup, TrainHyper, TrainReport};
use lcapa_core::wmmse::{baseline_on_gram, baseline_weights, WmmseOptions, WmmseSolver};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, Method, Point};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneRow {
    pub value: f64,
    pub method: Method,
    pub scene_id: u64,
    pub sum_se: f64,
    pub per_user: Vec<f64>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub value: f64,
    pub method: Method,
    pub mean_se: f64,
    pub std_se: f64,
    pub n_scenes: usize,
}

/// Surrogate fidelity at one point; NaN where a quantity was not computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub value: f64,
    /// Held-out NMSE on the supervised sampling distribution.
    pub proj_nmse: f64,
    pub value_nmse: f64,
    /// NMSE of the surrogates on the trained policy's outputs over the test scenes.
    pub proj_nmse_on_policy: f64,
    pub value_nmse_on_policy: f64,
    /// Mean estimated-to-exact total power of the trained policy (validation scenes).
    pub power_ratio: f64,
    /// Mean SE of the surrogate-trained policy minus that of the analytic-chain policy.
    pub surrogate_analytic_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub run: usize,
    pub method: String,
    pub median_s: f64,
    pub mean_s: f64,
    pub n_scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub method: String,
    /// Median over runs of the per-run medians.
    pub median_s: f64,
    /// Coefficient of variation of the per-run medians.
    pub cv: f64,
    pub ratio_to_wmmse: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub summary: Vec<SummaryRow>,
    pub scenes: Vec<SceneRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub timing: Vec<TimingRow>,
    pub timing_summary: Vec<TimingSummary>,
    pub trained: Vec<TrainedModel>,
}

/// A network trained during the run, with the label its checkpoint is saved under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub label: String,
    pub network: Network,
    pub report: TrainReport,
}

fn point_tag(params: &SceneParams) -> String {
    format!("zeta{}-area{}", params.zeta, params.aperture.area())
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub proj: Network,
    pub value: Network,
    pub proj_nmse: f64,
    pub value_nmse: f64,
}

fn dataset_spec(cfg: &ExperimentConfig, params: &SceneParams, mode: DatasetMode, seed: u64, n: usize) -> DatasetSpec {
    let mut d = DatasetSpec::new(seed, n, cfg.surrogate.grid_m, mode, *params);
    d.basis = cfg.basis;
    d
}

/// Training and epoch-selection sets for one surrogate.
pub fn surrogate_datasets(
    cfg: &ExperimentConfig,
    params: &SceneParams,
    mode: DatasetMode,
    exec: Execution,
) -> anyhow::Result<(Dataset, Dataset)> {
    let s = &cfg.surrogate;
    let train = gen_supervised_dataset(&dataset_spec(cfg, params, mode, cfg.seeds.data, s.n_train), exec)?;
    let validation = gen_supervised_dataset(
        &dataset_spec(cfg, params, mode, cfg.seeds.data_validation, s.n_validation),
        exec,
    )?;
    Ok((train, validation))
}

/// Samples never seen during training or selection.
pub fn holdout_dataset(
    cfg: &ExperimentConfig,
    params: &SceneParams,
    mode: DatasetMode,
    exec: Execution,
) -> anyhow::Result<Dataset> {
    let spec = dataset_spec(cfg, params, mode, cfg.seeds.data_test, cfg.surrogate.n_holdout);
    Ok(gen_supervised_dataset(&spec, exec)?)
}

pub fn surrogate_hyper(cfg: &ExperimentConfig) -> TrainHyper {
    let s = &cfg.surrogate;
    TrainHyper {
        learning_rate: s.learning_rate,
        schedule: s.schedule,
        phase_augment: s.phase_augment,
        batch_size: s.batch_size,
        epochs: s.epochs,
        grid_m: s.grid_m,
        n_train: s.n_train,
        shuffle_seed: cfg.seeds.shuffle,
        ..TrainHyper::supervised()
    }
}

fn load_or_train_surrogate(
    cfg: &ExperimentConfig,
    params: &SceneParams,
    mode: DatasetMode,
    exec: Execution,
    reports: &mut Vec<TrainedModel>,
) -> anyhow::Result<(Network, f64)> {
    let kind = mode.net_kind();
    let path = match mode {
        DatasetMode::Proj => cfg.checkpoints.proj.as_ref(),
        DatasetMode::Value => cfg.checkpoints.value.as_ref(),
    };
    let held_out = holdout_dataset(cfg, params, mode, exec)?;
    if let Some(path) = path {
        let net = load_checkpoint_as(path, kind, None).with_context(|| {
            format!(
                "loading {} checkpoint {} (create it with `lcapa train-{}`)",
                kind.name(),
                path.display(),
                kind.name()
            )
        })?;
        let nmse = normalized_mse(&net, &held_out.samples, exec)?;
        return Ok((net, nmse));
    }
    let (train, validation) = surrogate_datasets(cfg, params, mode, exec)?;
    let s = &cfg.surrogate;
    let net = Network::new(kind, kind.spec(s.levels, s.hidden), train.normalization(), cfg.seeds.init)?;
    log::info!("training {} on {} samples for {} epochs", kind.name(), train.len(), s.epochs);
    let (net, report) = train_supervised(net, &train, &validation, &surrogate_hyper(cfg), exec)?;
    let nmse = normalized_mse(&net, &held_out.samples, exec)?;
    log::info!("{}: held-out NMSE {nmse:.4e} (best epoch {})", kind.name(), report.best_epoch);
    reports.push(TrainedModel {
        label: format!("{}-{}", kind.name(), point_tag(params)),
        network: net.clone(),
        report,
    });
    Ok((net, nmse))
}

pub fn train_surrogates(
    cfg: &ExperimentConfig,
    params: &SceneParams,
    exec: Execution,
    reports: &mut Vec<TrainedModel>,
) -> anyhow::Result<Surrogate> {
    let (proj, proj_nmse) = load_or_train_surrogate(cfg, params, DatasetMode::Proj, exec, reports)?;
    let (value, value_nmse) = load_or_train_surrogate(cfg, params, DatasetMode::Value, exec, reports)?;
    Ok(Surrogate {
        proj,
        value,
        proj_nmse,
        value_nmse,
    })
}

pub fn policy_setup(cfg: &ExperimentConfig, params: &SceneParams, mode: ChainMode) -> PolicySetup {
    PolicySetup {
        mode,
        scene: *params,
        train_seed: cfg.seeds.policy_scenes,
        validation_seed: cfg.seeds.validation_scenes,
        n_validation: cfg.policy.n_validation,
        m_eval: cfg.m_eval,
        basis: cfg.basis,
        levels: cfg.policy.levels,
        hidden: cfg.policy.hidden,
        init_seed: cfg.seeds.init,
        output_scale: None,
    }
}

pub fn policy_hyper(cfg: &ExperimentConfig, n_tr: usize) -> TrainHyper {
    let p = &cfg.policy;
    TrainHyper {
        learning_rate: p.learning_rate,
        schedule: p.schedule,
        batch_size: p.batch_size,
        epochs: p.epochs,
        grid_m: p.grid_m,
        n_train: n_tr,
        shuffle_seed: cfg.seeds.shuffle,
        ..TrainHyper::policy()
    }
}

fn load_or_train_policy(
    cfg: &ExperimentConfig,
    params: &SceneParams,
    n_tr: usize,
    mode: ChainMode,
    surrogate: Option<&Surrogate>,
    exec: Execution,
    reports: &mut Vec<TrainedModel>,
) -> anyhow::Result<(Network, f64)> {
    let path = match mode {
        ChainMode::Surrogate => cfg.checkpoints.policy_gnn.as_ref(),
        ChainMode::Analytic => cfg.checkpoints.policy_analytic.as_ref(),
    };
    if let Some(path) = path {
        let (net, ckpt) = load_checkpoint(path).with_context(|| {
            format!(
                "loading policy checkpoint {} (create it with `lcapa train-policy`)",
                path.display()
            )
        })?;
        if net.kind != NetKind::Policy {
            bail!("{} holds a {} network, expected a policy", path.display(), net.kind.name());
        }
        let ratio = ckpt
            .report
            .as_ref()
            .and_then(|r| r.pointer("/extra/power_ratio"))
            .and_then(|v| v.as_f64())
            .unwrap_or(f64::NAN);
        return Ok((net, ratio));
    }
    let surrogates = surrogate.map(|s| Surrogates {
        proj: &s.proj,
        value: &s.value,
    });
    log::info!("training {} policy on {n_tr} scenes for {} epochs", mode_name(mode), cfg.policy.epochs);
    let (net, report) = train_policy(&policy_setup(cfg, params, mode), surrogates, &policy_hyper(cfg, n_tr), exec)?;
    log::info!(
        "{} policy: best validation SE {:.4} at epoch {}",
        mode_name(mode),
        report.best_validation,
        report.best_epoch
    );
    let ratio = report.extra.get("power_ratio").copied().unwrap_or(f64::NAN);
    reports.push(TrainedModel {
        label: format!("{}-{}-ntr{n_tr}", report.network, point_tag(params)),
        network: net.clone(),
        report,
    });
    Ok((net, ratio))
}

fn mode_name(mode: ChainMode) -> &'static str {
    match mode {
        ChainMode::Surrogate => "surrogate",
        ChainMode::Analytic => "analytic",
    }
}

pub fn test_scenes(cfg: &ExperimentConfig, params: &SceneParams, exec: Execution) -> anyhow::Result<Vec<ChainSample>> {
    Ok(scenes_with_grams(
        cfg.seeds.test_scenes,
        cfg.n_test,
        params,
        cfg.m_eval,
        cfg.basis,
        exec,
    )?)
}

pub fn learned_rows(
    value: f64,
    method: Method,
    policy: &Network,
    scenes: &[ChainSample],
    exec: Execution,
) -> anyhow::Result<Vec<SceneRow>> {
    let reports = par::try_map_indexed(scenes.len(), exec, |i| {
        let s = &scenes[i];
        let start = Instant::now();
        let a = policy.policy_infer(&s.scene.positions)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let gram = s.gram.as_ref().expect("test scenes carry Grams");
        Ok::<_, lcapa_core::Error>((exact_sum_se(&s.scene, gram, &a)?.1, runtime_s))
    })?;
    Ok(reports
        .into_iter()
        .enumerate()
        .map(|(i, (r, t))| scene_row(value, method, i as u64, &r, t))
        .collect())
}

fn scene_row(value: f64, method: Method, scene_id: u64, r: &SeReport, runtime_s: f64) -> SceneRow {
    SceneRow {
        value,
        method,
        scene_id,
        sum_se: r.sum,
        per_user: r.per_user.clone(),
        runtime_s,
    }
}

pub fn baseline_rows(
    cfg: &ExperimentConfig,
    value: f64,
    m: usize,
    scenes: &[ChainSample],
    exec: Execution,
) -> anyhow::Result<Vec<SceneRow>> {
    let outcomes = par::try_map_indexed(scenes.len(), exec, |i| {
        let s = &scenes[i];
        let gram = s.gram.as_ref().expect("test scenes carry Grams");
        baseline_on_gram(&s.scene, m, cfg.m_eval, gram, &cfg.wmmse, Execution::Sequential)
    })?;
    Ok(outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| scene_row(value, Method::Wmmse, i as u64, &o.report, o.runtime_s))
        .collect())
}

/// Surrogate NMSE on the policy's own outputs: p̂ vs `a_kᴴCa_k`, Ĝ vs `B·Ā`.
fn fidelity_on_policy(
    policy: &Network,
    surrogate: &Surrogate,
    scenes: &[ChainSample],
    exec: Execution,
) -> anyhow::Result<(f64, f64)> {
    let parts = par::try_map_indexed(scenes.len(), exec, |i| {
        let s = &scenes[i];
        let gram = s.gram.as_ref().expect("test scenes carry Grams");
        let pos = &s.scene.positions;
        let a = policy.policy_infer(pos)?;
        let p = integral_power(&a, &gram.c)?;
        let p_hat = surrogate.proj.proj_infer(pos, &a)?;
        let a_bar = project_weights(&a, &p, s.scene.p_max)?;
        let g = integral_couplings(&a_bar, &gram.b)?.0;
        let g_hat = surrogate.value.value_infer(pos, &a_bar)?;
        let pe: f64 = p.0.iter().zip(&p_hat.0).map(|(x, y)| (x - y).powi(2)).sum();
        let pn: f64 = p.0.iter().map(|x| x * x).sum();
        let ge: f64 = (&g - &g_hat).iter().map(|z| z.norm_sqr()).sum();
        let gn: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        Ok::<_, lcapa_core::Error>([pe, pn, ge, gn])
    })?;
    let t = parts.iter().fold([0.0; 4], |mut acc, x| {
        for i in 0..4 {
            acc[i] += x[i];
        }
        acc
    });
    Ok((t[0] / t[1], t[2] / t[3]))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(rows: &[SceneRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, Method), (f64, Vec<f64>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = (r.value.to_bits(), r.method);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_insert((r.value, Vec::new())).1.push(r.sum_se);
    }
    order
        .into_iter()
        .map(|key| {
            let (value, ses) = &groups[&key];
            let (mean_se, std_se) = mean_std(ses);
            SummaryRow {
                value: *value,
                method: key.1,
                mean_se,
                std_se,
                n_scenes: ses.len(),
            }
        })
        .collect()
}

#[derive(Default)]
struct ModelCache {
    surrogates: BTreeMap<(u64, u64), Surrogate>,
    policies: BTreeMap<(u64, u64, usize, bool), (Network, f64)>,
}

fn scene_key(p: &Point) -> (u64, u64) {
    (p.zeta.to_bits(), p.aperture_area.to_bits())
}

impl ModelCache {
    fn surrogate(
        &mut self,
        cfg: &ExperimentConfig,
        p: &Point,
        exec: Execution,
        reports: &mut Vec<TrainedModel>,
    ) -> anyhow::Result<&Surrogate> {
        let key = scene_key(p);
        if let std::collections::btree_map::Entry::Vacant(e) = self.surrogates.entry(key) {
            let s = train_surrogates(cfg, &cfg.scene_params(p)?, exec, reports)?;
            e.insert(s);
        }
        Ok(&self.surrogates[&key])
    }

    fn policy(
        &mut self,
        cfg: &ExperimentConfig,
        p: &Point,
        mode: ChainMode,
        exec: Execution,
        reports: &mut Vec<TrainedModel>,
    ) -> anyhow::Result<(Network, f64)> {
        let (z, a) = scene_key(p);
        let key = (z, a, p.n_tr, mode == ChainMode::Surrogate);
        if !self.policies.contains_key(&key) {
            let params = cfg.scene_params(p)?;
            let trained = match mode {
                ChainMode::Surrogate => {
                    let s = self.surrogate(cfg, p, exec, reports)?.clone();
                    load_or_train_policy(cfg, &params, p.n_tr, mode, Some(&s), exec, reports)?
                }
                ChainMode::Analytic => load_or_train_policy(cfg, &params, p.n_tr, mode, None, exec, reports)?,
            };
            self.policies.insert(key, trained);
        }
        Ok(self.policies[&key].clone())
    }
}

/// Runs a non-timing experiment.
fn run_se_experiment(cfg: &ExperimentConfig, exec: Execution) -> anyhow::Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let mut cache = ModelCache::default();
    let mut baselines: BTreeMap<(u64, u64, usize), Vec<SceneRow>> = BTreeMap::new();
    for p in cfg.points()? {
        let params = cfg.scene_params(&p)?;
        log::info!("{} = {}", cfg.kind.axis(), p.value);
        let scenes = test_scenes(cfg, &params, exec)?;
        let mut gnn_mean = f64::NAN;
        let mut analytic_mean = f64::NAN;
        let mut diag = DiagnosticsRow {
            value: p.value,
            proj_nmse: f64::NAN,
            value_nmse: f64::NAN,
            proj_nmse_on_policy: f64::NAN,
            value_nmse_on_policy: f64::NAN,
            power_ratio: f64::NAN,
            surrogate_analytic_gap: f64::NAN,
        };
        for method in [Method::LcapaGnn, Method::LcapaAnalytic, Method::Wmmse] {
            if !cfg.has(method) {
                continue;
            }
            let rows = match method {
                Method::LcapaGnn => {
                    let (policy, ratio) = cache.policy(cfg, &p, ChainMode::Surrogate, exec, &mut out.trained)?;
                    let s = cache.surrogate(cfg, &p, exec, &mut out.trained)?;
                    let (pf, vf) = fidelity_on_policy(&policy, s, &scenes, exec)?;
                    diag.proj_nmse = s.proj_nmse;
                    diag.value_nmse = s.value_nmse;
                    diag.proj_nmse_on_policy = pf;
                    diag.value_nmse_on_policy = vf;
                    diag.power_ratio = ratio;
                    let rows = learned_rows(p.value, method, &policy, &scenes, exec)?;
                    gnn_mean = mean_std(&rows.iter().map(|r| r.sum_se).collect::<Vec<_>>()).0;
                    rows
                }
                Method::LcapaAnalytic => {
                    let (policy, _) = cache.policy(cfg, &p, ChainMode::Analytic, exec, &mut out.trained)?;
                    let rows = learned_rows(p.value, method, &policy, &scenes, exec)?;
                    analytic_mean = mean_std(&rows.iter().map(|r| r.sum_se).collect::<Vec<_>>()).0;
                    rows
                }
                Method::Wmmse => {
                    let (z, a) = scene_key(&p);
                    let key = (z, a, p.m);
                    if let std::collections::btree_map::Entry::Vacant(e) = baselines.entry(key) {
                        log::info!("WMMSE baseline at M = {} on {} scenes", p.m, scenes.len());
                        e.insert(baseline_rows(cfg, p.value, p.m, &scenes, exec)?);
                    }
                    baselines[&key].iter().map(|r| SceneRow { value: p.value, ..r.clone() }).collect()
                }
            };
            out.scenes.extend(rows);
        }
        diag.surrogate_analytic_gap = gnn_mean - analytic_mean;
        out.diagnostics.push(diag);
    }
    out.summary = summarize(&out.scenes);
    Ok(out)
}

/// Wall-clock of the learned inference path and of the baseline, strictly sequential.
fn run_timing(cfg: &ExperimentConfig, exec: Execution) -> anyhow::Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let mut cache = ModelCache::default();
    let p = cfg.points()?[0];
    let params = cfg.scene_params(&p)?;
    let (policy, _) = cache.policy(cfg, &p, ChainMode::Surrogate, exec, &mut out.trained)?;
    let proj = cache.surrogate(cfg, &p, exec, &mut out.trained)?.proj.clone();
    let scenes = (0..cfg.timing.n_scenes)
        .map(|i| stream_scene(cfg.seeds.test_scenes, i, &params))
        .collect::<Result<Vec<_>, _>>()?;
    let alternate = match cfg.wmmse.solver {
        WmmseSolver::Direct => WmmseSolver::Reduced,
        WmmseSolver::Reduced => WmmseSolver::Direct,
    };
    let solvers = [(cfg.wmmse.clone(), "wmmse".to_string()), (
        WmmseOptions {
            solver: alternate,
            ..cfg.wmmse.clone()
        },
        format!("wmmse-{}", solver_name(alternate)),
    )];
    let mut per_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in 0..cfg.timing.runs.max(1) {
        let mut lcapa = Vec::with_capacity(scenes.len());
        for s in &scenes {
            let start = Instant::now();
            let a = policy.policy_infer(&s.positions)?;
            let p_hat = proj.proj_infer(&s.positions, &a)?;
            let a_bar = project_weights(&a, &p_hat, s.p_max)?;
            lcapa.push(start.elapsed().as_secs_f64());
            std::hint::black_box(a_bar);
        }
        push_timing(&mut out, &mut per_method, run, Method::LcapaGnn.name(), &lcapa);
        for (opts, name) in &solvers {
            let mut times = Vec::with_capacity(scenes.len());
            for s in &scenes {
                let start = Instant::now();
                let r = baseline_weights(s, p.m, opts, cfg.basis, Execution::Sequential)?;
                times.push(start.elapsed().as_secs_f64());
                std::hint::black_box(r);
            }
            push_timing(&mut out, &mut per_method, run, name, &times);
        }
    }
    let reference = median(&per_method["wmmse"]);
    for (method, medians) in &per_method {
        let (mean, std) = mean_std(medians);
        let m = median(medians);
        out.timing_summary.push(TimingSummary {
            method: method.clone(),
            median_s: m,
            cv: if mean > 0.0 { std / mean } else { 0.0 },
            ratio_to_wmmse: m / reference,
        });
    }
    Ok(out)
}

fn solver_name(s: WmmseSolver) -> &'static str {
    match s {
        WmmseSolver::Direct => "direct",
        WmmseSolver::Reduced => "reduced",
    }
}

fn push_timing(
    out: &mut ExperimentOutput,
    per_method: &mut BTreeMap<String, Vec<f64>>,
    run: usize,
    method: &str,
    times: &[f64],
) {
    let med = median(times);
    out.timing.push(TimingRow {
        run,
        method: method.to_string(),
        median_s: med,
        mean_s: mean_std(times).0,
        n_scenes: times.len(),
    });
    per_method.entry(method.to_string()).or_default().push(med);
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> anyhow::Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Timing => {
            if !cfg.has(Method::LcapaGnn) {
                bail!("timing measures the lcapa-gnn inference path; add it to `methods`");
            }
            run_timing(cfg, exec)
        }
        _ => run_se_experiment(cfg, exec),
    }
}

/// Writes a checkpoint (with its training report) for every network trained in the run.
pub fn save_trained(out: &ExperimentOutput, dir: &Path) -> anyhow::Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for t in &out.trained {
        let path = dir.join(format!("{}.json", t.label));
        write_checkpoint(&t.network, &t.report, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_checkpoint(net: &Network, report: &TrainReport, path: &Path) -> anyhow::Result<()> {
    save_checkpoint(net, report.seeds.clone(), Some(serde_json::to_value(report)?), path)
        .with_context(|| format!("writing checkpoint {}", path.display()))
}
