//! `vcd`: replay, latency, windowing, evaluation and the viewer gateway.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vcd_core::eval::{
    build_timeline, icc_two_way_random, mean_squares, precision_recall, ConfusionCounts, RatingMatrix,
};
use vcd_core::fixtures::synthetic_clip;
use vcd_core::hud::HudConfig;
use vcd_core::perception::{VideoFixture, VideoManifest};
use vcd_core::replay::{
    check_reaction_budget, cut_windows, load_reports, run_replay, total_latency, LatencyProfile, ReplayConfig,
    RunManifest,
};
use vcd_core::risk::{CompletionService, HttpService, MockService, RuleService, ServiceConfig};
use vcd_gateway::Gateway;

#[derive(Debug, Parser)]
#[command(name = "vcd", version, about = "Pedestrian risk co-driver pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay fixture videos window by window and write run directories.
    Replay(ReplayArgs),
    /// End-to-end latency of a stage profile and its reaction budget.
    Latency(LatencyArgs),
    /// Print the causal windows of a video manifest.
    Windows(WindowsArgs),
    /// Evaluation arithmetic.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve run directories to the viewer over websockets.
    Serve(ServeArgs),
    /// Write the synthetic 10 s fixture and its canned responses.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// A fixture directory or a directory of fixtures.
    #[arg(long)]
    fixtures: PathBuf,
    /// Built-in profile name or profile JSON file.
    #[arg(long, default_value = "upgraded-2025")]
    profile: String,
    /// Canned responses keyed `<video_id>/window_NNNN`.
    #[arg(long, conflicts_with_all = ["endpoint", "rules"])]
    mock: Option<PathBuf>,
    /// Chat-completion endpoint URL.
    #[arg(long, conflicts_with = "rules")]
    endpoint: Option<String>,
    /// Service settings file for --endpoint; `VCD_*` variables override it.
    #[arg(long, requires = "endpoint")]
    service_config: Option<PathBuf>,
    /// Answer with the built-in rule heuristic instead of a model.
    #[arg(long)]
    rules: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    window_s: f64,
    #[arg(long, default_value_t = 2.0)]
    sample_hz: f64,
    #[arg(long, default_value_t = 1.5)]
    ttc_floor: f64,
}

#[derive(Debug, Args)]
struct LatencyArgs {
    /// Built-in profile name (paper-2023, upgraded-2025) or profile JSON file.
    #[arg(long)]
    profile: String,
    #[arg(long, default_value_t = 1.5)]
    ttc_floor: f64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct WindowsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    window_s: f64,
    #[arg(long, default_value_t = 2.0)]
    sample_hz: f64,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Precision and recall from confusion cells (percentages unless --raw).
    Confusion {
        #[arg(long)]
        tp: f64,
        #[arg(long)]
        fp: f64,
        #[arg(long = "fn")]
        fn_: f64,
        #[arg(long)]
        tn: Option<f64>,
        /// Cells are counts rather than percentages.
        #[arg(long)]
        raw: bool,
    },
    /// ICC(2,1) of a ratings CSV, one row per rater.
    Icc {
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Per-second set of risky ids from a run directory.
    Timeline {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        fps: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Directory holding run directories (a replay --out).
    #[arg(long)]
    runs: PathBuf,
    #[arg(long, env = "VCD_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Write mask and depth maps for every n-th frame.
    #[arg(long, default_value_t = 15)]
    image_stride: u32,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Replay(a) => replay(a),
        Command::Latency(a) => latency(a),
        Command::Windows(a) => windows(a),
        Command::Eval(c) => eval(c),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    }
}

fn replay(a: ReplayArgs) -> Result<()> {
    let service: Box<dyn CompletionService> = match (&a.mock, &a.endpoint, a.rules) {
        (Some(path), _, _) => Box::new(MockService::from_file(path)?),
        (None, Some(url), _) => {
            let base = match &a.service_config {
                Some(p) => ServiceConfig::load(p)?,
                None => ServiceConfig::default(),
            };
            let mut cfg = base.with_env()?;
            cfg.endpoint = url.clone();
            Box::new(HttpService::new(cfg))
        }
        (None, None, true) => Box::new(RuleService::default()),
        (None, None, false) => bail!("one of --mock, --endpoint or --rules is required"),
    };
    let cfg = ReplayConfig {
        window_s: a.window_s,
        sample_hz: a.sample_hz,
        ttc_floor_s: a.ttc_floor,
        profile: LatencyProfile::resolve(&a.profile)?,
        ..ReplayConfig::default()
    };
    let fixtures = VideoFixture::discover(&a.fixtures)?;
    if fixtures.is_empty() {
        bail!("no fixtures under {}", a.fixtures.display());
    }
    let summary = run_replay(&fixtures, service.as_ref(), &cfg, &a.out)?;
    for v in &summary.videos {
        match &v.error {
            Some(e) => println!("{}: failed: {e}", v.video_id),
            None => {
                let failed = v.windows.iter().filter(|w| w.error.is_some()).count();
                println!("{}: {} windows, {} reports, {failed} failed -> {}", v.video_id, v.windows.len(), v.reports.len(), v.dir.display());
            }
        }
    }
    Ok(())
}

fn latency(a: LatencyArgs) -> Result<()> {
    let profile = LatencyProfile::resolve(&a.profile)?;
    let total = total_latency(&profile)?;
    let budget = check_reaction_budget(total, a.ttc_floor)?;
    if a.json {
        let v = serde_json::json!({ "profile": profile, "total_s": total, "budget": budget });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("profile {}", profile.label);
    for s in &profile.stages {
        println!("  {:<14} {:>7.3} s  group {}", s.stage.as_str(), s.seconds, s.parallel_group);
    }
    println!("total {total:.2} s");
    println!(
        "budget {}: margin {:.2} s (horizon {} s, ttc floor {} s)",
        serde_json::to_value(budget.verdict)?.as_str().unwrap_or_default(),
        budget.margin_s,
        budget.horizon_s,
        budget.ttc_floor_s
    );
    Ok(())
}

fn windows(a: WindowsArgs) -> Result<()> {
    let manifest = VideoManifest::load(&a.manifest)?;
    let windows = cut_windows(&manifest, a.window_s, a.sample_hz)?;
    println!("{}", serde_json::to_string_pretty(&windows)?);
    Ok(())
}

fn eval(c: EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Confusion { tp, fp, fn_, tn, raw } => {
            let mut counts = if raw { ConfusionCounts::raw(tp, fp, fn_) } else { ConfusionCounts::percent(tp, fp, fn_) };
            counts.tn = tn;
            let (p, r) = precision_recall(&counts)?;
            println!("precision {:.1}%", p * 100.0);
            println!("recall {:.1}%", r * 100.0);
        }
        EvalCommand::Icc { matrix } => {
            let text = fs::read_to_string(&matrix).with_context(|| matrix.display().to_string())?;
            let m = RatingMatrix::parse_csv(&text)?;
            let ms = mean_squares(&m);
            println!("raters {} items {}", m.raters(), m.items());
            println!("msr {:.6} msc {:.6} mse {:.6}", ms.msr, ms.msc, ms.mse);
            println!("icc(2,1) {:.4}", icc_two_way_random(&m)?);
        }
        EvalCommand::Timeline { run, fps } => {
            let fps = match fps {
                Some(f) => f,
                None => run_fps(&run)?,
            };
            let reports = load_reports(&run)?;
            let timeline = build_timeline(&reports, fps)?;
            println!("{}", serde_json::to_string_pretty(&timeline)?);
        }
    }
    Ok(())
}

fn run_fps(run: &Path) -> Result<f64> {
    Ok(RunManifest::load(run)?.fps)
}

fn serve(a: ServeArgs) -> Result<()> {
    let gateway = Arc::new(Gateway::new(&a.runs, HudConfig::default()));
    let listed = gateway.videos()?;
    log::info!("{} videos under {}", listed.len(), a.runs.display());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen)
            .await
            .with_context(|| format!("binding {}", a.listen))?;
        log::info!("listening on {}", listener.local_addr()?);
        vcd_gateway::serve(listener, gateway).await?;
        Ok(())
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let clip = synthetic_clip();
    let dir = clip.write(&a.out, a.image_stride)?;
    let responses = a.out.join("responses.json");
    fs::write(&responses, clip.responses_json()).with_context(|| responses.display().to_string())?;
    println!("fixture {}", dir.display());
    println!("responses {}", responses.display());
    Ok(())
}
