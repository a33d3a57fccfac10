use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use splat4d_core::foveation::{FoveationConfig, HttpImportanceProvider, ImportanceProvider};
use splat4d_core::imaging::RgbImage;
use splat4d_core::metrics_eval::{
    benchmark_foveation, clip_consistency, clip_score, foveated_speedup, measure_render_loop,
    EvalReport, HttpEmbeddingProvider, EMBEDDING_PROVIDER_ENV,
};
use splat4d_core::rasterizer::{render_tiled, RenderConfig};
use splat4d_core::splat_model::{Scene, SplatCloud};
use splat4d_core::synthetic::{reference_camera, reference_scene};
use splat4d_core::trajectory::{CameraPose, Trajectory};
use splat4d_core::video_export::{
    run_export, EncoderSink, ExportJob, ExternalEncoderSink, ImageSequenceSink,
};
use splat4d_server::app::{serve, AppState};
use splat4d_server::registry::Registry;
use splat4d_server::scene_store::{load_scene_path, SceneStore};
use splat4d_server::session::{default_camera, SessionConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "splat4d",
    version,
    about = "Real-time 4D Gaussian splat renderer"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the session server.
    Serve(ServeArgs),
    /// Render a camera trajectory to images or video.
    Render(RenderArgs),
    /// Measure foveated rendering cost across thresholds.
    Bench(BenchArgs),
    /// Score renders with an embedding provider.
    Eval(EvalArgs),
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080, env = "PORT")]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value = "./scenes")]
    scenes_dir: PathBuf,
    #[arg(long, default_value = "./exports")]
    exports_dir: PathBuf,
    /// Seconds a disconnected session stays resumable.
    #[arg(long, default_value_t = 60)]
    grace_secs: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SinkKind {
    Images,
    Ffmpeg,
    Encoder,
}

#[derive(clap::Args)]
struct RenderArgs {
    /// A .ply file, a manifest, or a directory holding manifest.json.
    #[arg(long)]
    scene: PathBuf,
    /// Trajectory JSON.
    #[arg(long)]
    trajectory: PathBuf,
    /// Output directory for images, output file otherwise.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 1280)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    #[arg(long, value_enum, default_value_t = SinkKind::Images)]
    sink: SinkKind,
    /// Command template with {width} {height} {fps} {output} placeholders.
    #[arg(long)]
    encoder_template: Option<String>,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    no_foveation: bool,
    /// Pose smoothing weight on the newest sample, in (0, 1].
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long, default_value = "")]
    prompt: String,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Scene path, or `synthetic:N` for N random splats.
    #[arg(long, default_value = "synthetic:100000")]
    scene: String,
    #[arg(long, default_value_t = 1280)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    taus: Vec<f32>,
    /// Repetitions per threshold, warm-up included.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Leading repetitions left out of the median.
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Also run the live render loop this many seconds.
    #[arg(long, default_value_t = 0.0)]
    fps_seconds: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 360)]
    height: u32,
    #[arg(long, default_value_t = 5.0)]
    fps_seconds: f64,
}

#[tokio::main]
async fn main() -> Result<()> {
    let filter = EnvFilter::try_from_env("LOG_LEVEL").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Cmd::Serve(args) => run_serve(args).await,
        Cmd::Render(args) => tokio::task::spawn_blocking(move || run_render(args)).await?,
        Cmd::Bench(args) => tokio::task::spawn_blocking(move || run_bench(args)).await?,
        Cmd::Eval(args) => tokio::task::spawn_blocking(move || run_eval(args)).await?,
    }
}

fn importance_provider() -> Option<Arc<dyn ImportanceProvider>> {
    HttpImportanceProvider::from_env().map(|p| Arc::new(p) as Arc<dyn ImportanceProvider>)
}

async fn run_serve(args: ServeArgs) -> Result<()> {
    let store = SceneStore::open(&args.scenes_dir)
        .with_context(|| format!("opening {}", args.scenes_dir.display()))?;
    std::fs::create_dir_all(&args.exports_dir)
        .with_context(|| format!("creating {}", args.exports_dir.display()))?;
    let mut session = SessionConfig::new(&args.exports_dir);
    session.importance = importance_provider();
    if session.importance.is_none() {
        tracing::info!("no importance provider configured; using the heuristic");
    }
    let state = AppState::new(
        Arc::new(store),
        Arc::new(Registry::new(Duration::from_secs(args.grace_secs))),
        session,
    );
    let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port))
        .await
        .with_context(|| format!("binding {}:{}", args.bind, args.port))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Trajectory::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run_render(args: RenderArgs) -> Result<()> {
    let scene = load_scene_path(&args.scene)
        .with_context(|| format!("loading {}", args.scene.display()))?;
    let trajectory = load_trajectory(&args.trajectory)?;
    let mut job = ExportJob::new(trajectory, scene, args.width, args.height, args.fps);
    if let Some(t) = args.threshold {
        job.foveation.threshold = t;
    }
    job.foveation.enabled = !args.no_foveation;
    if let Some(a) = args.smoothing {
        job.smoothing_alpha = a;
    }
    job.prompt = args.prompt;
    job.importance = importance_provider();

    let mut sink: Box<dyn EncoderSink> = match (args.sink, args.encoder_template) {
        (SinkKind::Images, _) => Box::new(ImageSequenceSink::new(&args.out)),
        (SinkKind::Ffmpeg, _) => Box::new(ExternalEncoderSink::ffmpeg(&args.out)),
        (SinkKind::Encoder, Some(template)) => {
            Box::new(ExternalEncoderSink::new(template, &args.out))
        }
        (SinkKind::Encoder, None) => bail!("--sink encoder needs --encoder-template"),
    };
    let result = run_export(&job, sink.as_mut(), |done, total| {
        if done % 10 == 0 || done == total {
            tracing::info!(done, total, "rendering");
        }
    })?;
    println!(
        "{} frames -> {}",
        result.frame_count,
        result.output.display()
    );
    Ok(())
}

fn bench_scene(spec: &str) -> Result<(SplatCloud, CameraPose)> {
    if let Some(n) = spec.strip_prefix("synthetic:") {
        let n: usize = n
            .parse()
            .with_context(|| format!("bad splat count in `{spec}`"))?;
        return Ok((reference_scene(n), reference_camera()));
    }
    let scene = load_scene_path(Path::new(spec)).with_context(|| format!("loading {spec}"))?;
    let cloud = Arc::unwrap_or_clone(scene.frames[0].clone());
    let pose = default_camera(&cloud);
    Ok((cloud, pose))
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let (cloud, pose) = bench_scene(&args.scene)?;
    let cfg = RenderConfig::new(args.width, args.height);
    let base = FoveationConfig::default();
    anyhow::ensure!(args.reps > args.warmup, "--reps must exceed --warmup");
    let rows = benchmark_foveation(
        &cloud,
        &pose,
        &cfg,
        &base,
        &args.taus,
        args.reps - args.warmup,
        args.warmup,
    )?;
    let mut report = serde_json::json!({
        "splats": cloud.len(),
        "width": args.width,
        "height": args.height,
        "rows": rows,
        "speedup_at_0.2": foveated_speedup(&rows, 0.2),
    });
    if args.fps_seconds > 0.0 {
        let run = measure_render_loop(
            &cloud,
            &pose,
            &cfg,
            &base,
            Duration::from_secs_f64(args.fps_seconds),
        )?;
        report["fps"] = serde_json::to_value(run)?;
    }
    let text = serde_json::to_string_pretty(&report)?;
    match args.out {
        Some(path) => {
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let provider = HttpEmbeddingProvider::from_env()
        .with_context(|| format!("{EMBEDDING_PROVIDER_ENV} is not set"))?;
    let scene: Scene = load_scene_path(&args.scene)
        .with_context(|| format!("loading {}", args.scene.display()))?;
    let trajectory = load_trajectory(&args.trajectory)?;
    let cfg = RenderConfig::new(args.width, args.height);
    let cloud = &scene.frames[0];
    let views = args.views.max(2);
    let render = |t: f64| -> Result<RgbImage> {
        Ok(RgbImage::from_framebuffer(&render_tiled(
            cloud,
            &trajectory.interpolate(t),
            &cfg,
        )?))
    };
    let images = (0..views)
        .map(|i| render(trajectory.start() + trajectory.duration() * i as f64 / (views - 1) as f64))
        .collect::<Result<Vec<_>>>()?;
    let center = render(trajectory.start() + 0.5 * trajectory.duration())?;
    let cc = clip_consistency(&images, &center, &provider)?;
    let cs = clip_score(&args.prompt, &center, &provider)?;

    let pose = trajectory.interpolate(trajectory.start());
    let base = FoveationConfig::default();
    let run = measure_render_loop(
        cloud,
        &pose,
        &cfg,
        &base,
        Duration::from_secs_f64(args.fps_seconds),
    )?;
    let rows = benchmark_foveation(
        cloud,
        &pose,
        &cfg,
        &base,
        &[0.0, 0.25, 0.5, 0.75, 1.0],
        3,
        1,
    )?;
    let speedup = foveated_speedup(&rows, 0.2).unwrap_or(f64::NAN);
    println!(
        "{}",
        serde_json::to_string_pretty(&EvalReport::new(cc, cs, &run, speedup))?
    );
    Ok(())
}
