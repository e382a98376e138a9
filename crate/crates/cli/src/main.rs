use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualnav_core::dataset::{build_corpus, read_dataset, write_dataset, Corpus};
use dualnav_core::evaluation::{
    ablation_rows, compute_metrics, evaluate_policy, render_prediction, run_benchmark, write_ablation_csv,
    BenchmarkData, ModelPolicy, NavTask, RandomWaypointPolicy,
};
use dualnav_core::model::{Ablation, NavModel};
use dualnav_core::numcore::Checkpoint;
use dualnav_core::simworld::io::write_json;
use dualnav_core::simworld::{generate_episode_set, generate_world, Episode};
use dualnav_core::training::{mix_seed, train, TrainConfig, Trainer};
use dualnav_core::RunConfig;
use serde_json::{json, Value};

const CORPUS_INDEX: &str = "corpus.jsonl";
const CORPUS_FRAMES: &str = "corpus.nfds";

#[derive(Parser)]
#[command(name = "dualnav", version, about = "Dual-horizon world-model navigation agent: data, training, evaluation")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file with [world] [episode] [dataset] [model] [train] [eval] [bench] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.lr=1e-4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run everything on one thread
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one procedural world as JSON
    GenWorld {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate episodes and build the training corpus
    GenDataset {
        /// First episode seed; also seeds class balancing
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Episode count (default: bench.train_episodes)
        #[arg(long)]
        episodes: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a corpus, writing checkpoints and metrics.csv
    Train {
        /// Corpus directory written by gen-dataset
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total steps (default: train.steps)
        #[arg(long)]
        steps: Option<u64>,
        /// Training and initialization seed (default: train.seed)
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by train
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop evaluation of a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate on the training episodes of this corpus instead of unseen worlds
        #[arg(long)]
        data: Option<PathBuf>,
        /// Episode count (default: bench.eval_episodes)
        #[arg(long)]
        episodes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every ablation variant over several seeds
    Ablate {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated variants (default: bench.variants)
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Comma-separated seeds (default: bench.seeds)
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Training steps per run (default: train.steps)
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump predicted and true depth/class strips for one corpus frame
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Frame index within the episode (default: first frame with a sample)
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration as TOML
    Config {
        #[command(flatten)]
        common: Common,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Failure {
            kind,
            message: message.to_string(),
        }
    }
}

macro_rules! failure_from {
    ($($t:ty => $kind:literal),* $(,)?) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new($kind, e)
            }
        })*
    };
}

failure_from! {
    dualnav_core::ConfigError => "config",
    dualnav_core::simworld::SimError => "sim",
    dualnav_core::dataset::DatasetError => "dataset",
    dualnav_core::model::ModelError => "model",
    dualnav_core::training::TrainError => "train",
    dualnav_core::evaluation::EvalError => "eval",
    dualnav_core::numcore::CheckpointError => "checkpoint",
    std::io::Error => "io",
    serde_json::Error => "json",
}

type Outcome = Result<(), Failure>;

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    if common.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| Failure::new("runtime", e))?;
    }
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    log::info!("resolved config: {}", cfg.to_json());
    Ok(cfg)
}

fn header(command: &str, seed: Option<u64>, cfg: &RunConfig, extra: Value) -> Value {
    json!({ "command": command, "seed": seed, "config": cfg.to_json(), "args": extra })
}

fn mkdir(p: &Path) -> Outcome {
    std::fs::create_dir_all(p).map_err(|e| Failure::new("io", format!("{}: {e}", p.display())))
}

fn load_corpus(dir: &Path) -> Result<Corpus, Failure> {
    Ok(read_dataset(&dir.join(CORPUS_INDEX), &dir.join(CORPUS_FRAMES))?)
}

fn load_model(path: &Path) -> Result<(NavModel, Ablation, Value), Failure> {
    let ck = Checkpoint::load(path).map_err(|e| Failure::new("checkpoint", format!("{}: {e}", path.display())))?;
    let head: Value = serde_json::from_str(&ck.config)?;
    let variant = head["train"]["ablation"].as_str().unwrap_or("full").to_string();
    let ablation = Ablation::from_name(&variant)
        .ok_or_else(|| Failure::new("checkpoint", format!("unknown ablation variant {variant}")))?;
    Ok((NavModel::from_checkpoint(&ck)?, ablation, head))
}

fn check_compatible(model: &NavModel, cfg: &RunConfig) -> Outcome {
    let m = &model.cfg;
    if m.n_rays != cfg.episode.n_rays || m.feat_dim != cfg.world.feat_dim {
        return Err(Failure::new(
            "config",
            format!(
                "episode.n_rays={} world.feat_dim={} do not match the checkpoint (R={}, F={})",
                cfg.episode.n_rays, cfg.world.feat_dim, m.n_rays, m.feat_dim
            ),
        ));
    }
    Ok(())
}

fn gen_world(seed: u64, out: &Path, common: &Common) -> Outcome {
    let cfg = resolve(common)?;
    let world = generate_world(seed, &cfg.world)?;
    let doc = json!({ "header": header("gen-world", Some(seed), &cfg, json!({})), "world": world });
    write_json(out, &doc)?;
    println!("{}", out.display());
    Ok(())
}

fn gen_dataset(seed: u64, episodes: Option<usize>, out: &Path, common: &Common) -> Outcome {
    let cfg = resolve(common)?;
    let n = episodes.unwrap_or(cfg.bench.train_episodes);
    let pairs = generate_episode_set(seed, n, &cfg.world, &cfg.episode)?;
    let eps: Vec<Episode> = pairs.into_iter().map(|(_, e)| e).collect();
    let (mut corpus, stats) = build_corpus(&eps, &cfg.dataset, seed);
    corpus.header = header("gen-dataset", Some(seed), &cfg, json!({ "episodes": n })).to_string();
    mkdir(out)?;
    write_dataset(&out.join(CORPUS_INDEX), &out.join(CORPUS_FRAMES), &corpus)?;
    log::info!("build stats: {stats:?}");
    println!(
        "{} episodes, {} samples, {} frames -> {}",
        corpus.episodes.len(),
        corpus.samples.len(),
        corpus.frames.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(data: &Path, out: &Path, steps: Option<u64>, seed: Option<u64>, resume: Option<&Path>, common: &Common) -> Outcome {
    let mut cfg = resolve(common)?;
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    let corpus = load_corpus(data)?;
    mkdir(out)?;
    let run = header(
        "train",
        Some(cfg.train.seed),
        &cfg,
        json!({ "data": data, "resume": resume }),
    );
    let trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| Failure::new("checkpoint", format!("{}: {e}", path.display())))?;
            let head: Value = serde_json::from_str(&ck.config)?;
            let mut tcfg: TrainConfig = serde_json::from_value(head["train"].clone())?;
            if let Some(s) = steps {
                tcfg.steps = s;
            }
            Trainer::resume(&corpus, &ck, Some(tcfg))?
        }
        None => Trainer::new(&corpus, NavModel::new(cfg.model.clone())?, cfg.train.clone())?,
    };
    let outcome = train(trainer, Some(out), &run)?;
    println!(
        "{} steps, probe loss {:.4} -> {:.4}, checkpoints in {}",
        outcome.logs.len(),
        outcome.probe_initial,
        outcome.probe_final,
        out.display()
    );
    Ok(())
}

fn eval_cmd(checkpoint: &Path, out: &Path, data: Option<&Path>, episodes: Option<usize>, common: &Common) -> Outcome {
    let cfg = resolve(common)?;
    let (model, ablation, ck_head) = load_model(checkpoint)?;
    check_compatible(&model, &cfg)?;
    let n = episodes.unwrap_or(cfg.bench.eval_episodes);
    let tasks: Vec<NavTask> = match data {
        Some(dir) => {
            let corpus = load_corpus(dir)?;
            corpus
                .episodes
                .iter()
                .take(n)
                .map(|rec| Ok(NavTask::from_record(generate_world(rec.world_seed, &cfg.world)?, rec)))
                .collect::<Result<_, Failure>>()?
        }
        None => generate_episode_set(cfg.bench.unseen_seed_base, n, &cfg.world, &cfg.episode)?
            .into_iter()
            .map(|(w, e)| NavTask::from_episode(w, &e))
            .collect(),
    };
    if tasks.is_empty() {
        return Err(Failure::new("eval", "no evaluation episodes"));
    }
    let results = evaluate_policy(|| ModelPolicy::new(&model, ablation), &tasks, &cfg.episode, &cfg.eval)?;
    let report = compute_metrics(&results, cfg.eval.success_radius)?;
    let mean_steps = tasks.iter().map(|t| t.gt_steps as f64).sum::<f64>() / tasks.len() as f64;
    let random = evaluate_policy(
        || {
            RandomWaypointPolicy::new(
                mix_seed(cfg.eval.seed, 0xBA5E),
                model.cfg.n_waypoints,
                cfg.episode.max_step_dist,
                mean_steps,
            )
        },
        &tasks,
        &cfg.episode,
        &cfg.eval,
    )?;
    let random = compute_metrics(&random, cfg.eval.success_radius)?;
    let head = header(
        "eval",
        Some(cfg.eval.seed),
        &cfg,
        json!({ "checkpoint": checkpoint, "data": data, "episodes": n, "checkpoint_header": ck_head["run"] }),
    );
    mkdir(out)?;
    let csv = format!("# config: {}\n{}", head, report.to_csv());
    std::fs::write(out.join("metrics.csv"), csv)?;
    let mut summary = report.summary_json(&head);
    summary["random_baseline"] = random.summary_json(&Value::Null);
    summary["random_baseline"].as_object_mut().map(|o| o.remove("config"));
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "SR {:.3} OSR {:.3} NE {:.3} SPL {:.3} over {} episodes (random baseline SR {:.3})",
        report.sr, report.osr, report.ne, report.spl, report.n_episodes, random.sr
    );
    Ok(())
}

fn ablate_cmd(out: &Path, variants: Option<Vec<String>>, seeds: Option<Vec<u64>>, steps: Option<u64>, common: &Common) -> Outcome {
    let mut cfg = resolve(common)?;
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    let variants = variants.unwrap_or_else(|| cfg.bench.variants.clone());
    let seeds = seeds.unwrap_or_else(|| cfg.bench.seeds.clone());
    if let Some(v) = variants.iter().find(|v| Ablation::from_name(v).is_none()) {
        return Err(Failure::new("config", format!("variants={v} is not a known variant")));
    }
    mkdir(out)?;
    let head = header("ablate", None, &cfg, json!({ "variants": variants, "seeds": seeds }));
    let data = BenchmarkData::build(&cfg.bench, &cfg.world, &cfg.episode, &cfg.dataset)?;
    let mut runs = Vec::new();
    for v in &variants {
        for &seed in &seeds {
            let dir = out.join(format!("{v}_seed{seed}"));
            mkdir(&dir)?;
            let run = run_benchmark(&data, &cfg.model, &cfg.train, &cfg.episode, &cfg.eval, v, seed, Some(&dir))?;
            log::info!(
                "{v} seed {seed}: unseen SR {:.3}, seen SR {:.3}, loss drop {:.3}",
                run.unseen.sr,
                run.seen.sr,
                run.loss_drop
            );
            std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")?;
            runs.push(run);
        }
    }
    let rows = ablation_rows(&runs, &variants);
    write_ablation_csv(&out.join("ablation.csv"), &rows, &head)?;
    for r in &rows {
        println!("{:<10} SR {:.3} OSR {:.3} NE {:.3} SPL {:.3}", r.variant, r.sr, r.osr, r.ne, r.spl);
    }
    Ok(())
}

fn predict_cmd(checkpoint: &Path, data: &Path, episode: usize, t: Option<usize>, out: &Path, common: &Common) -> Outcome {
    let cfg = resolve(common)?;
    let (model, _, _) = load_model(checkpoint)?;
    check_compatible(&model, &cfg)?;
    let corpus = load_corpus(data)?;
    let t = match t {
        Some(t) => t,
        None => corpus
            .samples
            .iter()
            .find(|s| s.episode == episode && s.kind == dualnav_core::dataset::SampleKind::WorldModel)
            .map(|s| s.t)
            .ok_or_else(|| Failure::new("predict", format!("episode {episode} has no world-model samples")))?,
    };
    let summary = render_prediction(
        &model,
        &corpus,
        episode,
        t,
        cfg.world.max_range,
        cfg.world.embedding_seed,
        out,
    )?;
    for f in &summary.files {
        println!("{}", f.display());
    }
    println!(
        "class accuracy {:.3}, depth abs-rel {:.3}",
        summary.class_accuracy, summary.depth_abs_rel
    );
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenWorld { seed, out, common } => gen_world(seed, &out, &common),
        Command::GenDataset {
            seed,
            episodes,
            out,
            common,
        } => gen_dataset(seed, episodes, &out, &common),
        Command::Train {
            data,
            out,
            steps,
            seed,
            resume,
            common,
        } => train_cmd(&data, &out, steps, seed, resume.as_deref(), &common),
        Command::Eval {
            checkpoint,
            out,
            data,
            episodes,
            common,
        } => eval_cmd(&checkpoint, &out, data.as_deref(), episodes, &common),
        Command::Ablate {
            out,
            variants,
            seeds,
            steps,
            common,
        } => ablate_cmd(&out, variants, seeds, steps, &common),
        Command::Predict {
            checkpoint,
            data,
            episode,
            t,
            out,
            common,
        } => predict_cmd(&checkpoint, &data, episode, t, &out, &common),
        Command::Config { common } => {
            print!("{}", resolve(&common)?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let keys = format!("Config keys (section.key = default):\n{}", RunConfig::key_listing());
    let cmd = <Cli as clap::CommandFactory>::command()
        .after_long_help(keys.clone())
        .mut_subcommands(|s| s.after_long_help(keys.clone()));
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
