//! Command-line surface: train, eval, ablate, export-plots and the asset
//! generators. Every command writes deterministic artifacts plus a
//! `manifest.json` that holds the only timestamps.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::scripted_agent;
use crate::config::RunConfig;
use crate::env::{
    generate_scenarios, Cell, DistanceField, EpisodeSpec, GridMap, MapCache, Pose, ScenarioSet, SoundLibrary,
    VisualConfig, DEFAULT_BINS,
};
use crate::error::{Error, Result};
use crate::fusion::FusionVariant;
use crate::metrics::{evaluate, evaluate_conditions, Agent, EpisodeResult, Evaluation, MetricsReport, TrajectoryPoint};
use crate::policy::{Policy, PolicyAgent};
use crate::ppo::{export_beta_curve, PeriodicEval, Trainer};

pub const ABLATION_HEADER: &str = "variant,beta_init,seed,sr,spl,sna";
pub const SPL_HEADER: &str = "scenario_id,success,geodesic_len,path_len,action_count,spl";

#[derive(Debug, Parser)]
#[command(name = "crfn", version, about = "Audio-visual grid navigation with cross-modal residual fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a scripted agent or a checkpoint on a scenario file.
    Eval(EvalArgs),
    /// Train every ablation cell and tabulate held-out metrics.
    Ablate(TrainArgs),
    /// Turn a run directory into plot-ready CSV and JSON.
    ExportPlots(ExportArgs),
    /// Write a reproducible sound library.
    GenLibrary(GenLibraryArgs),
    /// Write a reproducible scenario file.
    GenScenarios(GenScenariosArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scenario file; the heard condition when `--unheard` is also given.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Scenario file of the unheard condition.
    #[arg(long)]
    pub unheard: Option<PathBuf>,
    /// random, direction_follower, frontier, optimal, policy or policy:<checkpoint>.
    #[arg(long, default_value = "policy")]
    pub agent: String,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory written by train or eval.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/plots`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenLibraryArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub train: usize,
    #[arg(long, default_value_t = 2)]
    pub val: usize,
    #[arg(long, default_value_t = 4)]
    pub test: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenScenariosArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub maps: Vec<PathBuf>,
    #[arg(long)]
    pub library: PathBuf,
    /// Library split to draw sounds from: train, val or test.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Use only the first k sounds of the split; 0 means all.
    #[arg(long, default_value_t = 0)]
    pub sounds: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_distance: u32,
    #[arg(long, default_value_t = crate::env::DEFAULT_NOISE_STD)]
    pub noise_std: f64,
    #[arg(long, default_value_t = crate::env::DEFAULT_MAX_STEPS)]
    pub max_steps: u32,
    #[arg(long, default_value = "s")]
    pub prefix: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::ExportPlots(a) => cmd_export_plots(&a),
        Command::GenLibrary(a) => cmd_gen_library(&a),
        Command::GenScenarios(a) => cmd_gen_scenarios(&a),
    }
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes") + "\n"
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<String>,
}

fn write_manifest(dir: &Path, command: &str, started: f64, files: &[&str]) -> Result<()> {
    let m = Manifest {
        command: command.into(),
        started_unix: started,
        finished_unix: now_unix(),
        files: files.iter().map(|s| s.to_string()).collect(),
    };
    write(&dir.join("manifest.json"), &to_json(&m))
}

/// Metrics as percentages rounded to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    pub sna: f64,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(r: &MetricsReport) -> Self {
        let (sr, spl, sna) = r.percentages();
        MetricsJson { n: r.n, sr, spl, sna }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub agent: String,
    #[serde(flatten)]
    pub overall: MetricsJson,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub heard: Option<MetricsJson>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unheard: Option<MetricsJson>,
}

/// One evaluated episode with everything needed to redraw it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub scenario_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub condition: Option<String>,
    pub map: String,
    pub grid: Vec<String>,
    pub start: Pose,
    pub goal: Cell,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, Serialize)]
struct RecordLine<'a> {
    #[serde(flatten)]
    record: &'a crate::metrics::EpisodeRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn trajectory_entries(
    scenarios: &[(String, EpisodeSpec)],
    episodes: &[EpisodeResult],
    condition: Option<&str>,
) -> Vec<TrajectoryEntry> {
    scenarios
        .iter()
        .zip(episodes)
        .map(|((id, spec), ep)| TrajectoryEntry {
            scenario_id: id.clone(),
            condition: condition.map(str::to_string),
            map: spec.map.name().to_string(),
            grid: spec.map.to_ascii().lines().map(str::to_string).collect(),
            start: spec.start,
            goal: spec.goal,
            points: ep.trajectory.clone(),
        })
        .collect()
}

fn records_jsonl(episodes: &[EpisodeResult], condition: Option<&str>, out: &mut String) {
    for ep in episodes {
        let line = RecordLine {
            record: &ep.record,
            condition,
            error: ep.error.as_deref(),
        };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
}

/// Writes metrics.json, records.jsonl and trajectories.json for one or two
/// evaluated conditions.
fn write_eval_artifacts(
    dir: &Path,
    agent: &str,
    parts: &[(Option<&str>, &[(String, EpisodeSpec)], &Evaluation)],
) -> Result<EvalMetrics> {
    let mut records = String::new();
    let mut trajectories = Vec::new();
    let mut all = Vec::new();
    for (cond, scenarios, ev) in parts {
        records_jsonl(&ev.episodes, *cond, &mut records);
        trajectories.extend(trajectory_entries(scenarios, &ev.episodes, *cond));
        all.extend(ev.records());
    }
    let overall = MetricsReport::from_records(&all)?;
    let by = |name: &str| {
        parts
            .iter()
            .find(|(c, ..)| *c == Some(name))
            .map(|(.., ev)| MetricsJson::from(&ev.report))
    };
    let metrics = EvalMetrics {
        agent: agent.to_string(),
        overall: MetricsJson::from(&overall),
        heard: by("heard"),
        unheard: by("unheard"),
    };
    write(&dir.join("metrics.json"), &to_json(&metrics))?;
    write(&dir.join("records.jsonl"), &records)?;
    write(&dir.join("trajectories.json"), &to_json(&trajectories))?;
    Ok(metrics)
}

pub fn checkpoint_name(update: usize, seed: u64) -> String {
    format!("policy-u{update:05}-s{seed}.json")
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub held_out: Vec<(String, EpisodeSpec)>,
    /// Greedy evaluation of the final policy on `held_out`.
    pub eval: Evaluation,
}

/// Trains one policy from a resolved config into `out`: logs, beta curve
/// and checkpoints.
pub fn train_run(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let prep = cfg.prepare()?;
    let policy = Policy::new(prep.policy)?;
    let mut trainer = Trainer::new(policy, prep.task.clone(), cfg.ppo, cfg.visual)?;
    if cfg.eval.every_k_updates > 0 {
        trainer = trainer.with_eval(PeriodicEval {
            scenarios: prep.held_out.clone(),
            every: cfg.eval.every_k_updates,
        });
    }
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let seed = cfg.ppo.seed;
    while trainer.updates_done() < cfg.ppo.num_updates {
        trainer.step_update()?;
        let k = cfg.checkpoint.every_k_updates;
        if k > 0 && trainer.updates_done() % k == 0 && trainer.updates_done() < cfg.ppo.num_updates {
            trainer
                .policy()
                .save(&ckpt_dir.join(checkpoint_name(trainer.updates_done(), seed)))?;
        }
    }
    trainer
        .policy()
        .save(&ckpt_dir.join(checkpoint_name(trainer.updates_done(), seed)))?;
    write(&out.join("train_log.jsonl"), &trainer.log().to_jsonl())?;
    write(&out.join("beta_curve.csv"), &export_beta_curve(trainer.log()))?;
    let policy = trainer.into_policy();
    let mut agent = PolicyAgent::greedy(policy.clone());
    let eval = evaluate(&mut agent, &prep.held_out, &cfg.visual)?;
    Ok(TrainOutcome {
        policy,
        held_out: prep.held_out,
        eval,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = now_unix();
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg = cfg.with_seed(s);
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("config.json"), &to_json(&cfg))?;
    let run = train_run(&cfg, &out)?;
    let metrics = write_eval_artifacts(&out, "policy", &[(None, &run.held_out, &run.eval)])?;
    write_manifest(
        &out,
        "train",
        started,
        &[
            "config.json",
            "train_log.jsonl",
            "beta_curve.csv",
            "checkpoints",
            "metrics.json",
            "records.jsonl",
            "trajectories.json",
        ],
    )?;
    println!(
        "trained {} updates: SR {:.1} SPL {:.1} SNA {:.1} on {} held-out episodes",
        cfg.ppo.num_updates, metrics.overall.sr, metrics.overall.spl, metrics.overall.sna, metrics.overall.n
    );
    Ok(())
}

fn load_scenarios(path: &Path) -> Result<(Vec<(String, EpisodeSpec)>, SoundLibrary)> {
    let (set, base) = ScenarioSet::load(path)?;
    let lib_path = base.join(&set.library);
    let text = std::fs::read_to_string(&lib_path).map_err(|e| Error::io(&lib_path, e))?;
    let library = SoundLibrary::from_json_str(&text)?;
    Ok((set.resolve(&base)?, library))
}

fn build_agent(args: &EvalArgs, visual: VisualConfig) -> Result<Box<dyn Agent>> {
    let (kind, inline) = match args.agent.split_once(':') {
        Some((k, p)) => (k, Some(PathBuf::from(p))),
        None => (args.agent.as_str(), None),
    };
    if kind == "policy" {
        let path = inline
            .or_else(|| args.checkpoint.clone())
            .ok_or_else(|| Error::Config("the policy agent needs --checkpoint".into()))?;
        return Ok(Box::new(PolicyAgent::greedy(Policy::load(&path)?)));
    }
    scripted_agent(kind, args.seed, visual)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let started = now_unix();
    let visual = VisualConfig::default();
    let mut agent = build_agent(args, visual)?;
    let (heard, library) = load_scenarios(&args.scenarios)?;
    let metrics = match &args.unheard {
        None => {
            let ev = evaluate(agent.as_mut(), &heard, &visual)?;
            write_eval_artifacts(&args.out, &agent.name(), &[(None, &heard, &ev)])?
        }
        Some(path) => {
            let (unheard, _) = load_scenarios(path)?;
            let training: HashSet<String> = library.train.iter().map(|s| s.id().to_string()).collect();
            let res = evaluate_conditions(agent.as_mut(), &heard, &unheard, &training, &visual)?;
            write_eval_artifacts(
                &args.out,
                &agent.name(),
                &[
                    (Some("heard"), &heard, &res.heard),
                    (Some("unheard"), &unheard, &res.unheard),
                ],
            )?
        }
    };
    write_manifest(&args.out, "eval", started, &["metrics.json", "records.jsonl", "trajectories.json"])?;
    println!(
        "{}: SR {:.1} SPL {:.1} SNA {:.1} over {} episodes",
        metrics.agent, metrics.overall.sr, metrics.overall.spl, metrics.overall.sna, metrics.overall.n
    );
    Ok(())
}

/// One row of ablation.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: FusionVariant,
    /// Empty for variants without fusion weights.
    pub beta_init: Option<f64>,
    pub seed: u64,
    pub report: MetricsReport,
}

impl AblationRow {
    pub fn csv_line(&self) -> String {
        let (sr, spl, sna) = self.report.percentages();
        let beta = self.beta_init.map(|b| b.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.variant, beta, self.seed, sr, spl, sna)
    }
}

/// Cells of the ablation grid in a fixed order.
pub fn ablation_cells(cfg: &RunConfig) -> Vec<(FusionVariant, Option<f64>, u64)> {
    let mut cells = Vec::new();
    for &v in &cfg.ablation.variants {
        let betas: Vec<Option<f64>> = if v == FusionVariant::Crfn {
            cfg.ablation.beta_inits.iter().map(|&b| Some(b)).collect()
        } else {
            vec![None]
        };
        for b in betas {
            for &s in &cfg.ablation.seeds {
                cells.push((v, b, s));
            }
        }
    }
    cells
}

pub fn run_ablation(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (variant, beta, seed) in ablation_cells(cfg) {
        let mut c = cfg.clone().with_seed(seed);
        c.fusion.variant = variant;
        if let Some(b) = beta {
            c.fusion.beta_init = b;
        }
        let tag = match beta {
            Some(b) => format!("{variant}-b{b}-s{seed}"),
            None => format!("{variant}-s{seed}"),
        };
        let run = train_run(&c, &out.join("runs").join(tag))?;
        rows.push(AblationRow {
            variant,
            beta_init: beta,
            seed,
            report: run.eval.report,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn cmd_ablate(args: &TrainArgs) -> Result<()> {
    let started = now_unix();
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.ablation.seeds = vec![s];
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("config.json"), &to_json(&cfg))?;
    let rows = run_ablation(&cfg, &out)?;
    write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
    write_manifest(&out, "ablate", started, &["config.json", "ablation.csv", "runs"])?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}

/// Trajectory overlay: agent path next to the geodesic shortest path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub scenario_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub condition: Option<String>,
    pub map: String,
    pub grid: Vec<String>,
    pub agent_path: Vec<Cell>,
    pub geodesic_path: Vec<Cell>,
    pub geodesic_len: usize,
    pub success: bool,
    pub spl: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RecordIn {
    success: bool,
    geodesic_len: f64,
    path_len: f64,
    action_count: u32,
    scenario_id: String,
    #[serde(default)]
    condition: Option<String>,
}

fn spl_term(r: &RecordIn) -> f64 {
    if !r.success {
        return 0.0;
    }
    let denom = r.path_len.max(r.geodesic_len);
    if denom == 0.0 {
        1.0
    } else {
        r.geodesic_len / denom
    }
}

pub fn cmd_export_plots(args: &ExportArgs) -> Result<()> {
    let started = now_unix();
    let run = &args.run;
    let beta = run.join("beta_curve.csv");
    let traj = run.join("trajectories.json");
    let recs = run.join("records.jsonl");
    let has_beta = beta.is_file();
    let has_eval = traj.is_file() && recs.is_file();
    if !has_beta && !has_eval {
        let missing: Vec<String> = [&beta, &traj, &recs]
            .iter()
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        return Err(Error::Data(format!("run directory is missing: {}", missing.join(", "))));
    }
    let out = args.out.clone().unwrap_or_else(|| run.join("plots"));
    let mut files = Vec::new();
    if has_beta {
        let text = std::fs::read_to_string(&beta).map_err(|e| Error::io(&beta, e))?;
        if text.lines().next() != Some(crate::ppo::BETA_CURVE_HEADER) {
            return Err(Error::Data(format!("{} has an unexpected header", beta.display())));
        }
        write(&out.join("beta_curve.csv"), &text)?;
        files.push("beta_curve.csv");
    }
    if has_eval {
        let text = std::fs::read_to_string(&traj).map_err(|e| Error::io(&traj, e))?;
        let entries: Vec<TrajectoryEntry> = serde_json::from_str(&text)?;
        let text = std::fs::read_to_string(&recs).map_err(|e| Error::io(&recs, e))?;
        let records: Vec<RecordIn> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        if records.len() != entries.len() {
            return Err(Error::Data(format!(
                "{} records but {} trajectories",
                records.len(),
                entries.len()
            )));
        }
        let mut overlays = Vec::new();
        let mut spl_csv = String::from(SPL_HEADER);
        spl_csv.push('\n');
        for (e, r) in entries.iter().zip(&records) {
            if e.scenario_id != r.scenario_id || e.condition != r.condition {
                return Err(Error::Data(format!(
                    "record `{}` does not match trajectory `{}`",
                    r.scenario_id, e.scenario_id
                )));
            }
            let map = GridMap::parse(&e.map, &e.grid.join("\n"))?.map;
            let field = DistanceField::new(&map, e.goal)?;
            let geodesic_path = field
                .path_from(e.start.cell())
                .ok_or_else(|| Error::Data(format!("goal unreachable in `{}`", e.scenario_id)))?;
            let spl = spl_term(r);
            let _ = writeln!(
                spl_csv,
                "{},{},{},{},{},{}",
                r.scenario_id, r.success as u8, r.geodesic_len, r.path_len, r.action_count, spl
            );
            overlays.push(Overlay {
                scenario_id: e.scenario_id.clone(),
                condition: e.condition.clone(),
                map: e.map.clone(),
                grid: e.grid.clone(),
                agent_path: e.points.iter().map(|p| Cell::new(p.x, p.y)).collect(),
                geodesic_len: geodesic_path.len() - 1,
                geodesic_path,
                success: r.success,
                spl,
            });
        }
        write(&out.join("overlays.json"), &to_json(&overlays))?;
        write(&out.join("spl_annotations.csv"), &spl_csv)?;
        files.extend(["overlays.json", "spl_annotations.csv"]);
    }
    write_manifest(&out, "export-plots", started, &files)?;
    println!("wrote {} to {}", files.join(", "), out.display());
    Ok(())
}

pub fn cmd_gen_library(args: &GenLibraryArgs) -> Result<()> {
    let lib = SoundLibrary::generate(args.seed, (args.train, args.val, args.test), args.bins)?;
    write(&args.out, &to_json(&lib))
}

/// `target` relative to directory `from`, when both share a root.
fn relative_to(target: &Path, from: &Path) -> PathBuf {
    let abs = |p: &Path| {
        std::path::absolute(p)
            .unwrap_or_else(|_| p.to_path_buf())
            .components()
            .filter(|c| *c != Component::CurDir)
            .map(|c| c.as_os_str().to_os_string())
            .collect::<Vec<_>>()
    };
    let (t, f) = (abs(target), abs(from));
    let common = t.iter().zip(&f).take_while(|(a, b)| a == b).count();
    if common == 0 {
        return target.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..f.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

pub fn cmd_gen_scenarios(args: &GenScenariosArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.library).map_err(|e| Error::io(&args.library, e))?;
    let library = SoundLibrary::from_json_str(&text)?;
    let split = match args.split.as_str() {
        "train" => &library.train,
        "val" => &library.val,
        "test" => &library.test,
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    let k = if args.sounds == 0 { split.len() } else { args.sounds.min(split.len()) };
    let out_dir = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cache = MapCache::new(Path::new(""));
    let maps: Vec<(String, Arc<GridMap>)> = args
        .maps
        .iter()
        .map(|p| {
            let map = cache.get(&p.to_string_lossy())?;
            Ok((relative_to(p, &out_dir).to_string_lossy().into_owned(), map))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let scenarios = generate_scenarios(
        &maps,
        &split[..k],
        args.n,
        args.min_distance,
        args.noise_std,
        args.max_steps,
        &args.prefix,
        &mut rng,
    )?;
    let set = ScenarioSet {
        library: relative_to(&args.library, &out_dir).to_string_lossy().into_owned(),
        scenarios,
    };
    write(&args.out, &to_json(&set))
}
