use std::fs;
use std::io::{stdin, stdout};
use std::ops::Range;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridmind::agents::{run_sweep_agent, AgentSpec, DEFAULT_TIMEOUT_SECS};
use gridmind::analysis::correlate;
use gridmind::benchmark::{gains_csv, load_records, run_benchmark, BenchmarkConfig, ResultsTable};
use gridmind::episode::{mean, regrade, EpisodeConfig, Mode};
use gridmind::session;
use gridmind_core::proxies::ProxyKind;
use gridmind_core::scenegen::{generate_scene, SceneConfig};

#[derive(Parser)]
#[command(name = "gridmind", about = "Text-world spatial exploration benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write one scene JSON per seed.
    Generate {
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run (or resume) episodes into a run directory.
    Run(RunArgs),
    /// Grade the persisted answers again and check them against the record.
    Grade {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write CSV tables, gain curves and correlations for a run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// A minimal stdio agent that sweeps in place and then stops.
    Agent,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, default_value_t = 3)]
    rooms: u32,
    #[arg(long, default_value_t = 4)]
    objects_per_room: u32,
}

impl SceneArgs {
    fn config(&self) -> SceneConfig {
        SceneConfig { room_count: self.rooms, objects_per_room: self.objects_per_room, ..SceneConfig::default() }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProxyArg {
    Scout,
    Strategist,
    Oracle,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "active")]
    mode: Mode,
    /// Shorthand for `--mode false-belief`.
    #[arg(long)]
    false_belief: bool,
    #[arg(long, value_parser = parse_seeds, default_value = "0..100")]
    seeds: Range<u64>,
    /// Built-in agent; ignored when a command follows `--`.
    #[arg(long, value_enum, default_value = "oracle")]
    proxy: ProxyArg,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long, default_value_t = 1)]
    probe_every: u32,
    #[arg(long, default_value_t = 3)]
    per_task: usize,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECS)]
    timeout: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    out: PathBuf,
    /// External agent command speaking the framed JSON protocol.
    #[arg(last = true)]
    command: Vec<String>,
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = |_| format!("bad seed range {s}");
    match s.split_once("..") {
        Some((a, b)) => Ok(a.parse().map_err(bad)?..b.parse().map_err(bad)?),
        None => {
            let a: u64 = s.parse().map_err(bad)?;
            Ok(a..a + 1)
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate { seeds, scene, out } => {
            fs::create_dir_all(&out)?;
            for seed in seeds {
                let s = generate_scene(&SceneConfig { seed, ..scene.config() })?;
                fs::write(out.join(format!("scene-{seed:06}.json")), serde_json::to_vec_pretty(&s)?)?;
            }
        }
        Cmd::Run(a) => {
            let mode = if a.false_belief { Mode::FalseBelief } else { a.mode };
            let agent = if !a.command.is_empty() {
                AgentSpec::External { command: a.command.clone(), timeout_secs: a.timeout }
            } else {
                match a.proxy {
                    ProxyArg::Scout => AgentSpec::Proxy { proxy: ProxyKind::Scout },
                    ProxyArg::Strategist => AgentSpec::Proxy { proxy: ProxyKind::Strategist },
                    ProxyArg::Oracle => AgentSpec::Oracle,
                }
            };
            let cfg = BenchmarkConfig {
                scene: a.scene.config(),
                seeds: a.seeds.clone(),
                episode: EpisodeConfig {
                    mode,
                    per_task: a.per_task,
                    probe_every: a.probe_every,
                    budget: a.budget,
                    k: a.k,
                },
                agent,
            };
            let t = run_benchmark(&cfg, &a.out, a.workers)?;
            print_averages(&t);
        }
        Cmd::Grade { run } => {
            let table: ResultsTable =
                serde_json::from_slice(&fs::read(run.join("summary.json")).context("reading summary.json")?)?;
            let mut mismatches = 0;
            let mut all = Vec::new();
            for rec in load_records(&run)? {
                let scene = generate_scene(&SceneConfig { seed: rec.seed, ..table.config.scene.clone() })?;
                let fresh = regrade(&scene, &rec, table.config.episode.per_task)?;
                if fresh != rec.answers {
                    mismatches += 1;
                    eprintln!("seed {}: stored grades differ", rec.seed);
                }
                all.extend(fresh.into_iter().map(|a| a.score.value));
            }
            println!("questions {} mean {:.4}", all.len(), mean(all.into_iter()).unwrap_or(0.0));
            if mismatches > 0 {
                bail!("{mismatches} episodes graded differently");
            }
        }
        Cmd::Report { run } => {
            let records = load_records(&run)?;
            let table: ResultsTable =
                serde_json::from_slice(&fs::read(run.join("summary.json")).context("reading summary.json")?)?;
            fs::write(run.join("table.csv"), table.to_csv()?)?;
            fs::write(run.join("gains.csv"), gains_csv(&records)?)?;
            let mut w = csv::Writer::from_path(run.join("correlations.csv"))?;
            w.write_record(["x", "y", "n", "r", "p"])?;
            let pairs = |f: &dyn Fn(&gridmind::episode::EpisodeSummary) -> Option<(f64, f64)>| -> Vec<(f64, f64)> {
                records.iter().filter_map(|r| f(&r.summary)).collect()
            };
            let sets = [
                ("map_correctness", "overall", pairs(&|s| Some((s.final_correctness?.overall, s.overall?)))),
                ("final_gain", "overall", pairs(&|s| Some((*s.gains.last()?, s.overall?)))),
                ("final_gain", "map_correctness", pairs(&|s| Some((*s.gains.last()?, s.final_correctness?.overall)))),
            ];
            for (x, y, ps) in sets {
                match correlate(&ps) {
                    Ok(c) => {
                        w.write_record([x, y, &c.n.to_string(), &format!("{:.6}", c.r), &format!("{:.6}", c.p)])?
                    }
                    Err(e) => eprintln!("{x} vs {y}: {e}"),
                }
            }
            w.flush()?;
            print_averages(&table);
        }
        Cmd::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                session::serve(listener).await
            })?;
        }
        Cmd::Agent => run_sweep_agent(stdin().lock(), stdout().lock())?,
    }
    Ok(())
}

fn print_averages(t: &ResultsTable) {
    let a = &t.averages;
    let f = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!("config {}", t.config_hash);
    println!("episodes {} failed {} questions {}", a.episodes, a.failed, a.questions);
    println!("steps {} gain {} map {} overall {}", f(a.avg_steps), f(a.final_gain), f(a.correctness), f(a.overall));
    for (k, v) in &a.tasks {
        println!("  {:<12} {v:.4}", k.as_str());
    }
}
