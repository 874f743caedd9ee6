use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use d4gs::camera::{load_cameras, CameraModel};
use d4gs::dataset::Dataset;
use d4gs::image_io;
use d4gs::oracle;
use d4gs::ply;
use d4gs::render::{self, RenderOptions};
use d4gs::synthetic::{generate, RecipeId, SceneRecipe};
use d4gs::train::{fit, TrainConfig};
use d4gs::{ProjectionCache, ProjectionMode, Scene4D};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

/// Exact-mode difference above which `compare` fails.
const COMPARE_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "d4gs", version, about = "Dynamic scenes as disentangled 4D Gaussians")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render frames of a scene.
    Render(RenderArgs),
    /// Compare the projection-first renderer against the slicing-first reference.
    Compare(CompareArgs),
    /// Time both pipelines on a fixed camera over a range of timestamps.
    Bench(BenchArgs),
    /// Optimize a scene against a dataset directory.
    Train(TrainArgs),
    /// Generate a synthetic dataset with its ground-truth scene.
    MakeScene(MakeSceneArgs),
    /// Serve a scene over HTTP and WebSocket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RenderArgs {
    scene: PathBuf,
    cameras: PathBuf,
    /// Single timestamp in [0, 1].
    #[arg(long, conflicts_with = "time_range")]
    time: Option<f64>,
    /// `start:end:count`, inclusive of both ends.
    #[arg(long)]
    time_range: Option<String>,
    #[arg(long, default_value = "exact")]
    mode: ProjectionMode,
    #[arg(long)]
    out: PathBuf,
    /// Also write screen-space flow as .flo.
    #[arg(long)]
    flow: bool,
    /// Also write depth as .pfm.
    #[arg(long)]
    depth: bool,
}

#[derive(Args)]
struct CompareArgs {
    scene: PathBuf,
    cameras: PathBuf,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value = "exact")]
    mode: ProjectionMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also time both pipelines.
    #[arg(long)]
    bench: bool,
}

#[derive(Args)]
struct BenchArgs {
    scene: PathBuf,
    cameras: PathBuf,
    /// Number of evenly spaced timestamps in [0, 1].
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value = "exact")]
    mode: ProjectionMode,
}

#[derive(Args)]
struct TrainArgs {
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakeSceneArgs {
    /// orbiting-blobs, moving-edge, abrupt-appearance or random-cloud-<N>.
    #[arg(long)]
    recipe: RecipeId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Write only the scene and cameras, no rendered targets.
    #[arg(long)]
    scene_only: bool,
}

#[derive(Args)]
struct ServeArgs {
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 1024)]
    max_size: u32,
    /// Directory of static viewer files served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Acceptance(String),
}

impl From<d4gs::Error> for Failure {
    fn from(e: d4gs::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ply::PlyError> for Failure {
    fn from(e: ply::PlyError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool configured once");
    }
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::MakeScene(a) => cmd_make_scene(a),
        Command::Serve(a) => cmd_serve(a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Acceptance(m)) => {
            eprintln!("FAIL: {m}");
            ExitCode::from(EXIT_ACCEPTANCE)
        }
    }
}

fn load_scene_and_cameras(scene: &Path, cameras: &Path) -> Result<(Scene4D, Vec<(CameraModel, f64)>), Failure> {
    let scene = ply::load_scene(scene)?;
    scene.validate()?;
    let cams = load_cameras(cameras)?
        .iter()
        .map(|r| Ok((r.camera()?, r.time)))
        .collect::<d4gs::Result<Vec<_>>>()?;
    if cams.is_empty() {
        return Err(Failure::Data(format!("{}: no cameras", cameras.display())));
    }
    Ok((scene, cams))
}

fn parse_time_range(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::Usage(format!("--time-range expects start:end:count, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok(evenly_spaced(a, b, n))
}

fn evenly_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

fn check_time(t: f64) -> Result<(), Failure> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Failure::Usage(format!("time {t} outside [0, 1]")))
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn cmd_render(a: RenderArgs) -> Result<(), Failure> {
    let times = match (&a.time, &a.time_range) {
        (Some(t), None) => vec![*t],
        (None, Some(r)) => parse_time_range(r)?,
        (None, None) => return Err(Failure::Usage("one of --time or --time-range is required".into())),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    for &t in &times {
        check_time(t)?;
    }
    let (scene, cams) = load_scene_and_cameras(&a.scene, &a.cameras)?;
    create_dir(&a.out)?;
    let opts = RenderOptions::with_mode(a.mode);
    let mut frame = 0usize;
    let mut total_ms = 0.0;
    for (cam, _) in &cams {
        let mut cache = ProjectionCache::new();
        for &t in &times {
            let start = Instant::now();
            let pass = render::render_cached(&scene, cam, t, &mut cache, &opts)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            total_ms += ms;
            let fb = &pass.buffers;
            let stem = a.out.join(format!("frame_{frame:05}"));
            image_io::save_png(&stem.with_extension("png"), fb.width, fb.height, &fb.color)?;
            if a.flow {
                image_io::save_flo(&stem.with_extension("flo"), fb.width, fb.height, &fb.flow)?;
            }
            if a.depth {
                image_io::save_pfm(&stem.with_extension("pfm"), fb.width, fb.height, &fb.depth)?;
            }
            println!(
                "frame {frame:05} t={t:.6} {ms:.3} ms visible={} cache_hit={}",
                pass.num_visible(),
                pass.cache_hit
            );
            frame += 1;
        }
    }
    let mean = total_ms / frame as f64;
    println!("frames={frame} mean_ms={mean:.3} fps={:.2}", 1e3 / mean);
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    if a.samples == 0 {
        return Err(Failure::Usage("--samples must be positive".into()));
    }
    let (scene, cams) = load_scene_and_cameras(&a.scene, &a.cameras)?;
    let opts = RenderOptions::with_mode(a.mode);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut max_diff = 0.0f64;
    let mut sq = 0.0;
    let mut count = 0usize;
    let (mut ms_proj, mut ms_slice) = (0.0, 0.0);
    for _ in 0..a.samples {
        let cam = &cams[rng.random_range(0..cams.len())].0;
        let t0: f64 = rng.random_range(0.0..=1.0);
        let start = Instant::now();
        let ours = render::render(&scene, cam, t0, &opts)?;
        ms_proj += start.elapsed().as_secs_f64() * 1e3;
        let start = Instant::now();
        let reference = oracle::render_slicing_first(&scene, cam, t0, &RenderOptions::default())?;
        ms_slice += start.elapsed().as_secs_f64() * 1e3;
        for (x, y) in ours.color.iter().zip(&reference.color) {
            let d = (x - y).abs();
            max_diff = max_diff.max(d);
            sq += d * d;
        }
        count += ours.color.len();
    }
    let mse = sq / count as f64;
    let psnr = if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() };
    println!("samples={} mode={} max_abs_diff={max_diff:e} psnr={psnr:.2}", a.samples, a.mode);
    if a.bench {
        let n = a.samples as f64;
        println!(
            "projection_first_ms={:.3} slicing_first_ms={:.3} ratio={:.3}",
            ms_proj / n,
            ms_slice / n,
            ms_proj / ms_slice
        );
    }
    if a.mode == ProjectionMode::Exact && max_diff > COMPARE_TOLERANCE {
        return Err(Failure::Acceptance(format!(
            "exact-mode difference {max_diff:e} exceeds {COMPARE_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.frames == 0 {
        return Err(Failure::Usage("--frames must be positive".into()));
    }
    let (scene, cams) = load_scene_and_cameras(&a.scene, &a.cameras)?;
    let cam = &cams[0].0;
    let times = evenly_spaced(0.0, 1.0, a.frames);
    let opts = RenderOptions::with_mode(a.mode);
    let mut cache = ProjectionCache::new();
    let start = Instant::now();
    for &t in &times {
        render::render_cached(&scene, cam, t, &mut cache, &opts)?;
    }
    let proj = start.elapsed().as_secs_f64() * 1e3 / a.frames as f64;
    let start = Instant::now();
    for &t in &times {
        oracle::render_slicing_first(&scene, cam, t, &opts)?;
    }
    let slice = start.elapsed().as_secs_f64() * 1e3 / a.frames as f64;
    println!(
        "gaussians={} frames={} projection_first_ms={proj:.3} slicing_first_ms={slice:.3} reduction={:.1}%",
        scene.len(),
        a.frames,
        100.0 * (1.0 - proj / slice)
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let dataset = Dataset::load(&a.dataset)?;
    create_dir(&a.out)?;
    let log_path = a.out.join("metrics.ndjson");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Failure::Data(format!("{}: {e}", log_path.display())))?;
    let result = fit(&dataset, cfg, Some(&mut log))?;
    ply::save_scene(&result.scene, &a.out.join("scene.ply"))?;
    if let Some(last) = result.history.last() {
        println!(
            "iterations={} gaussians={} temporal_splits={} spatial_splits={}",
            last.iter, last.n_gaussians, last.n_temporal_splits, last.n_spatial_splits
        );
    }
    println!("final holdout PSNR {:.3} dB", result.final_psnr);
    Ok(())
}

fn cmd_make_scene(a: MakeSceneArgs) -> Result<(), Failure> {
    let mut recipe = SceneRecipe::new(a.recipe, a.seed);
    if let Some(n) = a.cameras {
        recipe.n_cameras = n;
    }
    if let Some(n) = a.timesteps {
        recipe.n_timesteps = n;
    }
    if let Some(w) = a.width {
        recipe.width = w;
    }
    if let Some(h) = a.height {
        recipe.height = h;
    }
    if recipe.n_cameras == 0 || recipe.n_timesteps == 0 || recipe.width == 0 || recipe.height == 0 {
        return Err(Failure::Usage("cameras, timesteps, width and height must be positive".into()));
    }
    create_dir(&a.out)?;
    if a.scene_only {
        let scene = d4gs::synthetic::build_scene(recipe.id, recipe.seed);
        ply::save_scene(&scene, &a.out.join("scene.ply"))?;
        let cams = d4gs::synthetic::ring_cameras(recipe.n_cameras, recipe.width, recipe.height);
        let records: Vec<_> = cams.iter().map(|c| d4gs::camera::CameraRecord::from_camera(c, 0.0)).collect();
        d4gs::camera::save_cameras(&a.out.join("cameras.json"), &records)?;
        println!("recipe={} gaussians={}", recipe.id, scene.len());
        return Ok(());
    }
    let (scene, dataset) = generate(&recipe)?;
    dataset.save(&a.out)?;
    ply::save_scene(&scene, &a.out.join("scene.ply"))?;
    println!(
        "recipe={} gaussians={} frames={} points={}",
        recipe.id,
        scene.len(),
        dataset.frames.len(),
        dataset.points.len()
    );
    Ok(())
}

fn cmd_serve(a: ServeArgs, threads: Option<usize>) -> Result<(), Failure> {
    let scene = match &a.scene {
        Some(p) => {
            let s = ply::load_scene(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            s.validate()?;
            Some(s)
        }
        None => None,
    };
    let config = d4gs_server::ServerConfig {
        max_width: a.max_size,
        max_height: a.max_size,
        workers: threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        static_dir: a.static_dir,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| Failure::Data(format!("bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| Failure::Data(e.to_string()))?;
        println!("listening on http://{addr}");
        d4gs_server::serve(listener, scene, config)
            .await
            .map_err(|e| Failure::Data(e.to_string()))
    })
}
