//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lcapa_core::gnn::checkpoint::load_checkpoint_as;
use lcapa_core::gnn::nets::{NetKind, Network, Normalization};
use lcapa_core::par::Execution;
use lcapa_core::scene::{PhysicalConstants, SceneParams, DEFAULT_WAVELENGTH, FREE_SPACE_IMPEDANCE};
use lcapa_core::train::dataset::{gen_supervised_dataset, Dataset, DatasetMode, DatasetSpec};
use lcapa_core::train::gradcheck::{chain_grad_check, network_grad_check, GradCheckReport};
use lcapa_core::train::policy::{scenes_with_grams, Surrogates};
use lcapa_core::train::supervised::{normalized_mse, train_supervised};
use lcapa_core::train::{train_policy, ChainMode};

use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::experiment::{
    self, holdout_dataset, policy_hyper, policy_setup, run_experiment, save_trained, surrogate_datasets,
    surrogate_hyper, write_checkpoint, ExperimentOutput, SceneRow,
};
use crate::output::{self, compare_tables, read_table, write_output};

/// Gradient checks pass at or below this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Replayed numeric columns must agree to this relative tolerance.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "lcapa", version, about = "Learned current distributions for continuous-aperture arrays")]
struct Cli {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $LCAPA_OUT, then ./results).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    num_users: Option<usize>,
    #[arg(long, global = true)]
    zeta: Option<f64>,
    /// Aperture area in m².
    #[arg(long, global = true)]
    aperture_area: Option<f64>,
    /// WMMSE grid size.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    m_eval: Option<usize>,
    #[arg(long, global = true)]
    n_test: Option<usize>,
    /// Policy training scenes.
    #[arg(long, global = true)]
    n_tr: Option<usize>,
    #[arg(long, global = true)]
    surrogate_epochs: Option<usize>,
    #[arg(long, global = true)]
    policy_epochs: Option<usize>,
    #[arg(long, global = true)]
    test_seed: Option<u64>,
    #[arg(long, global = true)]
    init_seed: Option<u64>,
    #[arg(long, global = true)]
    data_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataMode {
    Proj,
    Value,
}

impl From<DataMode> for DatasetMode {
    fn from(m: DataMode) -> Self {
        match m {
            DataMode::Proj => DatasetMode::Proj,
            DataMode::Value => DatasetMode::Value,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChainArg {
    Surrogate,
    Analytic,
}

impl From<ChainArg> for ChainMode {
    fn from(m: ChainArg) -> Self {
        match m {
            ChainArg::Surrogate => ChainMode::Surrogate,
            ChainArg::Analytic => ChainMode::Analytic,
        }
    }
}

#[derive(Debug, Args)]
struct SupervisedArgs {
    /// JSONL training set from `gen-data` (generated from the config seeds if absent).
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long, requires = "train_data")]
    validation_data: Option<PathBuf>,
    /// Checkpoint path (default: <out>/checkpoints/<net>.json).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generates a supervised dataset as JSONL.
    GenData {
        #[arg(long, value_enum)]
        mode: DataMode,
        /// Number of samples (default: surrogate.n_train).
        #[arg(long)]
        n: Option<usize>,
        /// Dataset seed (default: seeds.data).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Trains the power network.
    TrainProj(SupervisedArgs),
    /// Trains the coupling network.
    TrainValue(SupervisedArgs),
    /// Trains the policy through the surrogates or through the exact Gram chain.
    TrainPolicy {
        #[arg(long, value_enum, default_value = "surrogate")]
        mode: ChainArg,
        #[arg(long, required_if_eq("mode", "surrogate"))]
        proj: Option<PathBuf>,
        #[arg(long, required_if_eq("mode", "surrogate"))]
        value: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact SE of a trained policy on the test scenes.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// Method label written to the table.
        #[arg(long, value_enum, default_value = "lcapa-gnn")]
        method: Method,
    },
    /// WMMSE baseline on the test scenes.
    Baseline,
    /// Runs a sweep, a single point or the timing comparison.
    Experiment {
        #[arg(long, value_enum)]
        kind: Option<ExperimentKind>,
        /// Values of the swept quantity, comma separated.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Re-runs the config embedded in a result file and compares every numeric column.
        #[arg(long, conflicts_with_all = ["kind", "sweep", "methods"])]
        replay: Option<PathBuf>,
    },
    /// Finite-difference check of every network and of both training chains.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        proj: Option<PathBuf>,
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Version, build settings and default physical constants.
    Info,
}

/// Parses `argv` and runs it: 0 on success, 1 on usage errors, 2 on runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let o = &cli.overrides;
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag {
                cfg.$($field)+ = v;
            }
        };
    }
    set!(o.num_users => num_users);
    set!(o.zeta => zeta);
    set!(o.aperture_area => aperture_area);
    set!(o.m => m);
    set!(o.m_eval => m_eval);
    set!(o.n_test => n_test);
    set!(o.n_tr => policy.n_train);
    set!(o.surrogate_epochs => surrogate.epochs);
    set!(o.policy_epochs => policy.epochs);
    set!(o.test_seed => seeds.test_scenes);
    set!(o.init_seed => seeds.init);
    set!(o.data_seed => seeds.data);
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn base_params(cfg: &ExperimentConfig) -> anyhow::Result<SceneParams> {
    let point = cfg.points()?[0];
    cfg.scene_params(&point)
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let mut cfg = resolve_config(&cli)?;
    let out_dir = cfg.resolved_out_dir();
    match cli.command {
        Command::Info => {
            print_info();
            Ok(0)
        }
        Command::GenData { mode, n, seed, output } => {
            let params = base_params(&cfg)?;
            let mut spec = DatasetSpec::new(
                seed.unwrap_or(cfg.seeds.data),
                n.unwrap_or(cfg.surrogate.n_train),
                cfg.surrogate.grid_m,
                mode.into(),
                params,
            );
            spec.basis = cfg.basis;
            let ds = gen_supervised_dataset(&spec, exec)?;
            ds.save_jsonl(&output)?;
            println!("wrote {} samples to {}", ds.len(), output.display());
            Ok(0)
        }
        Command::TrainProj(args) => train_surrogate_cmd(&cfg, DatasetMode::Proj, args, &out_dir, exec),
        Command::TrainValue(args) => train_surrogate_cmd(&cfg, DatasetMode::Value, args, &out_dir, exec),
        Command::TrainPolicy {
            mode,
            proj,
            value,
            output,
        } => {
            let params = base_params(&cfg)?;
            let mode: ChainMode = mode.into();
            let nets = match (proj, value) {
                (Some(p), Some(v)) => Some((load_net(&p, NetKind::Proj)?, load_net(&v, NetKind::Value)?)),
                _ => None,
            };
            let surrogates = nets.as_ref().map(|(p, v)| Surrogates { proj: p, value: v });
            let n_tr = cfg.policy.n_train;
            let (net, report) = train_policy(
                &policy_setup(&cfg, &params, mode),
                surrogates,
                &policy_hyper(&cfg, n_tr),
                exec,
            )?;
            let path = output.unwrap_or_else(|| out_dir.join("checkpoints").join(format!("{}.json", report.network)));
            write_checkpoint(&net, &report, &path)?;
            println!(
                "{}: best validation SE {:.6} bit/s/Hz at epoch {} ({:.1} s); saved {}",
                report.network,
                report.best_validation,
                report.best_epoch,
                report.wall_clock_s,
                path.display()
            );
            Ok(0)
        }
        Command::Eval { policy, method } => {
            let net = load_net(&policy, NetKind::Policy)?;
            let params = base_params(&cfg)?;
            let scenes = experiment::test_scenes(&cfg, &params, exec)?;
            let rows = experiment::learned_rows(cfg.m as f64, method, &net, &scenes, exec)?;
            finish_table(&mut cfg, &out_dir, "eval", rows)
        }
        Command::Baseline => {
            let params = base_params(&cfg)?;
            let scenes = experiment::test_scenes(&cfg, &params, exec)?;
            let rows = experiment::baseline_rows(&cfg, cfg.m as f64, cfg.m, &scenes, exec)?;
            finish_table(&mut cfg, &out_dir, "baseline", rows)
        }
        Command::Experiment {
            kind,
            sweep,
            methods,
            replay,
        } => {
            if let Some(file) = replay {
                return replay_cmd(&file, cli.out.as_deref(), exec);
            }
            if let Some(kind) = kind {
                cfg.kind = kind;
            }
            if let Some(sweep) = sweep {
                cfg.sweep = sweep;
            }
            if let Some(methods) = methods {
                cfg.methods = methods;
            }
            cfg.out_dir = Some(out_dir.clone());
            let out = run_experiment(&cfg, exec)?;
            let written = write_output(&out_dir, &cfg, &out)?;
            let checkpoints = save_trained(&out, &out_dir.join("checkpoints"))?;
            print_summary(&cfg, &out);
            for p in written.iter().chain(&checkpoints) {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::GradCheck {
            probes,
            seed,
            proj,
            value,
            policy,
        } => grad_check_cmd(&cfg, probes, seed, [proj, value, policy], exec),
    }
}

fn load_net(path: &Path, kind: NetKind) -> anyhow::Result<Network> {
    load_checkpoint_as(path, kind, None).with_context(|| {
        let cmd = match kind {
            NetKind::Policy => "train-policy",
            NetKind::Proj => "train-proj",
            NetKind::Value => "train-value",
        };
        format!("loading {} checkpoint {} (create it with `lcapa {cmd}`)", kind.name(), path.display())
    })
}

fn train_surrogate_cmd(
    cfg: &ExperimentConfig,
    mode: DatasetMode,
    args: SupervisedArgs,
    out_dir: &Path,
    exec: Execution,
) -> anyhow::Result<i32> {
    let params = base_params(cfg)?;
    let (train, validation) = match &args.train_data {
        Some(path) => {
            let train = Dataset::load_jsonl(path)?;
            let validation = match &args.validation_data {
                Some(v) => Dataset::load_jsonl(v)?,
                None => surrogate_datasets(cfg, &params, mode, exec)?.1,
            };
            (train, validation)
        }
        None => surrogate_datasets(cfg, &params, mode, exec)?,
    };
    if train.spec.mode != mode {
        bail!("{} holds {:?} samples", args.train_data.unwrap_or_default().display(), train.spec.mode);
    }
    let kind = mode.net_kind();
    let s = &cfg.surrogate;
    let net = Network::new(kind, kind.spec(s.levels, s.hidden), train.normalization(), cfg.seeds.init)?;
    let (net, report) = train_supervised(net, &train, &validation, &surrogate_hyper(cfg), exec)?;
    let held_out = normalized_mse(&net, &holdout_dataset(cfg, &params, mode, exec)?.samples, exec)?;
    let path = args
        .output
        .unwrap_or_else(|| out_dir.join("checkpoints").join(format!("{}.json", kind.name())));
    write_checkpoint(&net, &report, &path)?;
    println!(
        "{}: held-out NMSE {:.4e} (best validation {:.4e} at epoch {}, {:.1} s); saved {}",
        kind.name(),
        held_out,
        report.best_validation,
        report.best_epoch,
        report.wall_clock_s,
        path.display()
    );
    Ok(0)
}

fn finish_table(cfg: &mut ExperimentConfig, out_dir: &Path, name: &str, rows: Vec<SceneRow>) -> anyhow::Result<i32> {
    cfg.out_dir = Some(out_dir.to_path_buf());
    let out = ExperimentOutput {
        summary: experiment::summarize(&rows),
        scenes: rows,
        ..ExperimentOutput::default()
    };
    let path = out_dir.join(format!("{name}.csv"));
    output::write_table(&path, cfg, &output::scenes_table("m", cfg.num_users, &out))?;
    for s in &out.summary {
        println!("{}: mean SE {:.6} ± {:.6} over {} scenes", s.method.name(), s.mean_se, s.std_se, s.n_scenes);
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn print_summary(cfg: &ExperimentConfig, out: &ExperimentOutput) {
    for s in &out.summary {
        println!(
            "{} = {}: {:<15} mean SE {:.6} ± {:.6} ({} scenes)",
            cfg.kind.axis(),
            s.value,
            s.method.name(),
            s.mean_se,
            s.std_se,
            s.n_scenes
        );
    }
    for t in &out.timing_summary {
        println!(
            "{:<15} median {:.3e} s, cv {:.3}, ratio to wmmse {:.3e}",
            t.method, t.median_s, t.cv, t.ratio_to_wmmse
        );
    }
}

/// Re-runs the embedded config of `file` and compares every table of the run that exists beside it.
pub fn replay(file: &Path, out: Option<&Path>, exec: Execution) -> anyhow::Result<Vec<String>> {
    let (mut cfg, _) = read_table(file)?;
    let dir = file.parent().unwrap_or(Path::new("."));
    let replay_dir = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("replay"));
    cfg.out_dir = Some(replay_dir.clone());
    let result = run_experiment(&cfg, exec)?;
    write_output(&replay_dir, &cfg, &result)?;
    let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let tables = output::tables_for(&cfg, &result);
    if !tables.iter().any(|(n, _)| n == name) {
        bail!("{} is not a table produced by a {} run", file.display(), cfg.kind.name());
    }
    let mut diffs = Vec::new();
    for (n, table) in tables {
        let original = dir.join(&n);
        if !original.exists() {
            continue;
        }
        let (_, orig) = read_table(&original)?;
        diffs.extend(
            compare_tables(&orig, &table, REPLAY_TOLERANCE)
                .into_iter()
                .map(|d| format!("{n}: {d}")),
        );
    }
    Ok(diffs)
}

fn replay_cmd(file: &Path, out: Option<&Path>, exec: Execution) -> anyhow::Result<i32> {
    let diffs = replay(file, out, exec)?;
    if diffs.is_empty() {
        println!("replay of {} reproduces every numeric column", file.display());
        return Ok(0);
    }
    for d in &diffs {
        println!("mismatch {d}");
    }
    bail!("{} cells differ beyond {REPLAY_TOLERANCE:e} relative", diffs.len())
}

/// Named finite-difference reports for the three networks and both chains.
pub fn grad_check_all(
    cfg: &ExperimentConfig,
    probes: usize,
    seed: u64,
    checkpoints: [Option<PathBuf>; 3],
    exec: Execution,
) -> anyhow::Result<Vec<(String, GradCheckReport)>> {
    let params = base_params(cfg)?;
    let small = |mode: DatasetMode| -> anyhow::Result<Dataset> {
        let mut spec = DatasetSpec::new(seed, 4, cfg.surrogate.grid_m, mode, params);
        spec.basis = cfg.basis;
        Ok(gen_supervised_dataset(&spec, exec)?)
    };
    let proj_data = small(DatasetMode::Proj)?;
    let value_data = small(DatasetMode::Value)?;
    let [proj_ck, value_ck, policy_ck] = checkpoints;
    let s = &cfg.surrogate;
    let fresh = |kind: NetKind, norm: Normalization, levels, hidden| Network::new(kind, kind.spec(levels, hidden), norm, cfg.seeds.init);
    let proj = match proj_ck {
        Some(p) => load_net(&p, NetKind::Proj)?,
        None => fresh(NetKind::Proj, proj_data.normalization(), s.levels, s.hidden)?,
    };
    let value = match value_ck {
        Some(p) => load_net(&p, NetKind::Value)?,
        None => fresh(NetKind::Value, value_data.normalization(), s.levels, s.hidden)?,
    };
    let policy = match policy_ck {
        Some(p) => load_net(&p, NetKind::Policy)?,
        None => {
            let norm = Normalization {
                output_scale: proj.norm.input_scale,
                ..Normalization::default()
            };
            fresh(NetKind::Policy, norm, cfg.policy.levels, cfg.policy.hidden)?
        }
    };
    let sample = &proj_data.samples[0];
    let chain_scene = scenes_with_grams(seed, 1, &params, cfg.policy.grid_m, cfg.basis, exec)?.remove(0);
    let surrogates = Surrogates {
        proj: &proj,
        value: &value,
    };
    let positions = &sample.scene.positions;
    Ok(vec![
        ("policy".into(), network_grad_check(&policy, positions, &sample.weights, seed, probes)?),
        ("proj".into(), network_grad_check(&proj, positions, &sample.weights, seed + 1, probes)?),
        ("value".into(), network_grad_check(&value, positions, &sample.weights, seed + 2, probes)?),
        (
            "chain-surrogate".into(),
            chain_grad_check(&policy, ChainMode::Surrogate, Some(surrogates), &chain_scene, seed + 3, probes)?,
        ),
        (
            "chain-analytic".into(),
            chain_grad_check(&policy, ChainMode::Analytic, None, &chain_scene, seed + 4, probes)?,
        ),
    ])
}

fn grad_check_cmd(
    cfg: &ExperimentConfig,
    probes: usize,
    seed: u64,
    checkpoints: [Option<PathBuf>; 3],
    exec: Execution,
) -> anyhow::Result<i32> {
    let reports = grad_check_all(cfg, probes, seed, checkpoints, exec)?;
    let mut ok = true;
    for (name, r) in &reports {
        let pass = r.passes(GRAD_TOLERANCE) && r.probes >= probes;
        ok &= pass;
        println!(
            "{name:<16} max rel error {:.3e} over {} probes ({} kinks, {} below resolution) {}",
            r.max_rel_error,
            r.probes,
            r.skipped_kinks,
            r.below_resolution,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(if ok { 0 } else { 2 })
}

fn print_info() {
    let params = SceneParams::default();
    let constants = PhysicalConstants::new(DEFAULT_WAVELENGTH).expect("default wavelength is valid");
    println!("lcapa {}", env!("CARGO_PKG_VERSION"));
    println!(
        "build: {} profile, parallel feature {}",
        if cfg!(debug_assertions) { "debug" } else { "release" },
        if cfg!(feature = "parallel") { "on" } else { "off" }
    );
    println!("wavelength λ = {DEFAULT_WAVELENGTH} m");
    println!("impedance η = 120π = {FREE_SPACE_IMPEDANCE} Ω");
    println!("user aperture |A_k| = λ²/4π = {:e} m²", constants.isotropic_area());
    println!("aperture normal e_r = {:?}", params.aperture.normal);
    println!(
        "defaults: K = {}, ζ = {:e}, |A| = {} m², P_max = {}",
        params.num_users,
        params.zeta,
        params.aperture.area(),
        params.p_max
    );
}
