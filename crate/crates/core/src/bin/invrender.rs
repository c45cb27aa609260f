//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input or usage.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use invrender::geomesh::{decode_obj, write_obj, NoOccluder};
use invrender::image::psnr;
use invrender::manipulate::{scene_mesh, InsertionSpec, RenderError, Renderer};
use invrender::math::Mat4;
use invrender::nfield::{load_checkpoint, save_checkpoint, CheckpointError, Model};
use invrender::optim::{check_loss_gradients, StepReport, Trainer};
use invrender::sceneio::{read_pfm, save_hdr, save_ldr, Camera, Dataset, IoError, RenderConfig, SceneConfig, SynthSpec};
use invrender::shade::EnvMap;

#[derive(Parser)]
#[command(name = "invrender", version, about = "Inverse rendering of geometry, materials and sky lighting")]
struct Cli {
    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scale both training phases.
    #[arg(long, global = true)]
    iters_scale: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    device_threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ViewArgs {
    /// Render settings (the `[render]` table of a scene config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image size `WxH` for pose files without one.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    illum: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a scene config.
    Train {
        config: PathBuf,
        /// Also render the first held-out view every N iterations.
        #[arg(long, default_value_t = 0)]
        val_every: u64,
    },
    /// Render a pose with the standard pipeline.
    Render {
        checkpoint: PathBuf,
        pose: PathBuf,
        #[arg(short, long, default_value = "render.ppm")]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Dump G-buffers of poses, the exported skies and the mesh.
    Decompose {
        checkpoint: PathBuf,
        poses: Vec<PathBuf>,
        #[arg(short, long, default_value = "decomposition")]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Render a pose under a new sky.
    Relight {
        checkpoint: PathBuf,
        hdr: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(short, long, default_value = "relit.ppm")]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Composite a virtual object into a pose.
    Insert {
        checkpoint: PathBuf,
        obj: PathBuf,
        /// 16 numbers, row-major.
        transform: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, value_parser = parse_rgb, default_value = "0.8,0.8,0.8")]
        albedo: [f64; 3],
        #[arg(long, default_value_t = 0.0)]
        metallic: f64,
        #[arg(long, default_value_t = 0.5)]
        roughness: f64,
        #[arg(short, long, default_value = "inserted.ppm")]
        out: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// Render a synthetic dataset with ground truth.
    Synth {
        spec: PathBuf,
        #[arg(short, long, default_value = "synth")]
        out: PathBuf,
    },
    /// Finite-difference check of every loss term.
    CheckGrads {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        params: usize,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| "bad width")?;
    let h = h.parse().map_err(|_| "bad height")?;
    Ok((w, h))
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

/// Failure split by exit code.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<RenderError> for Failure {
    fn from(e: RenderError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn load_pose(path: &Path, size: Option<(usize, usize)>) -> Result<Camera, Failure> {
    Camera::parse(&read_text(path)?, size).map_err(|e| e.at(path).into())
}

fn render_config(view: &ViewArgs, seed: Option<u64>) -> Result<RenderConfig, Failure> {
    let mut cfg = match &view.config {
        Some(p) => SceneConfig::load(p)?.render,
        None => RenderConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.shading.seed = s;
    }
    Ok(cfg)
}

fn load_model(path: &Path, illum: usize) -> Result<Model, Failure> {
    let model = load_checkpoint(path)?;
    if illum >= model.n_illum() {
        return Err(Failure::Invalid(format!("--illum {illum} outside [0, {})", model.n_illum())));
    }
    Ok(model)
}

fn mkdir(p: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn train(cli: &Cli, config: &Path, val_every: u64) -> Result<(), Failure> {
    let mut cfg = SceneConfig::load(config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.fields.seed = s;
    }
    if let Some(k) = cli.iters_scale {
        cfg.train.iters_scale = k;
    }
    cfg.validate().map_err(Failure::Invalid)?;
    let data = Dataset::load(&cfg.dataset)?;
    let holdout = cfg.holdout.as_deref().map(Dataset::load).transpose()?;
    let model = Model::new(cfg.model_spec(data.n_illum, data.views.len()));
    let mut trainer = Trainer::new(model, &data, cfg.train.clone()).map_err(Failure::Invalid)?;
    mkdir(&cfg.output)?;
    let log_path = cfg.output.join("train_log.tsv");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?);
    writeln!(log, "{}", StepReport::log_header()).map_err(|e| io_err(&log_path, e))?;
    let total = trainer.schedule().total();
    info!("training {} views for {total} iterations", data.views.len());

    let validate = |model: &Model, tag: &str| -> Result<(), Failure> {
        let Some(h) = holdout.as_ref().and_then(|h| h.views.first()) else { return Ok(()) };
        let mesh = scene_mesh(model, &cfg.render);
        let r = Renderer::new(model, &mesh, cfg.render).render_novel_view(&h.camera, h.illum)?;
        let p = psnr(&r.ldr, &h.image, None);
        info!("validation {tag}: {} PSNR {p:.2} dB", h.name);
        save_ldr(&r.ldr, &cfg.output.join(format!("val_{tag}.ppm")))?;
        Ok(())
    };

    let mut failure = None;
    trainer.run(|r, model| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = writeln!(log, "{}", r.log_line()) {
            failure = Some(io_err(&log_path, e));
            return;
        }
        if r.iteration % 100 == 0 {
            info!("iteration {} loss {:.5}", r.iteration, r.total);
        }
        if val_every > 0 && r.iteration > 0 && r.iteration % val_every == 0 {
            if let Err(e) = validate(model, &format!("{:06}", r.iteration)) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    log.flush().map_err(|e| io_err(&log_path, e))?;
    let ckpt = cfg.output.join("model.ckpt");
    save_checkpoint(&trainer.model, &ckpt)?;
    validate(&trainer.model, "final")?;
    println!("{}", ckpt.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Train { config, val_every } => train(cli, config, *val_every),
        Cmd::Render { checkpoint, pose, out, view } => {
            let cfg = render_config(view, cli.seed)?;
            let model = load_model(checkpoint, view.illum)?;
            let cam = load_pose(pose, view.size)?;
            let mesh = scene_mesh(&model, &cfg);
            let r = Renderer::new(&model, &mesh, cfg).render_novel_view(&cam, view.illum)?;
            save_ldr(&r.ldr, out)?;
            Ok(())
        }
        Cmd::Decompose { checkpoint, poses, out, view } => {
            let cfg = render_config(view, cli.seed)?;
            let model = load_model(checkpoint, view.illum)?;
            mkdir(out)?;
            let mesh = scene_mesh(&model, &cfg);
            write_obj(&mesh.mesh, &out.join("mesh.obj"))?;
            let r = Renderer::new(&model, &mesh, cfg);
            for m in 0..model.n_illum() {
                save_hdr(&r.exported_sky(m)?.to_image(), &out.join(format!("sky_{m}.pfm")))?;
            }
            for pose in poses {
                let cam = load_pose(pose, view.size)?;
                let stem = pose.file_stem().and_then(|s| s.to_str()).unwrap_or("view");
                let g = r.render_novel_view(&cam, view.illum)?.gbuffer;
                save_hdr(&g.base_color, &out.join(format!("{stem}_albedo.pfm")))?;
                save_hdr(&g.normal, &out.join(format!("{stem}_normal.pfm")))?;
                save_hdr(&g.material, &out.join(format!("{stem}_material.pfm")))?;
                save_hdr(&g.depth, &out.join(format!("{stem}_depth.pfm")))?;
            }
            Ok(())
        }
        Cmd::Relight { checkpoint, hdr, pose, out, view } => {
            let cfg = render_config(view, cli.seed)?;
            let model = load_model(checkpoint, view.illum)?;
            let env = read_pfm(hdr)?.to_image();
            if env.channels != 3 {
                return Err(Failure::Invalid(format!("{}: environment map must be an RGB PFM", hdr.display())));
            }
            let cam = load_pose(pose, view.size)?;
            let mesh = scene_mesh(&model, &cfg);
            let r = Renderer::new(&model, &mesh, cfg).relight(&cam, &EnvMap::from_image(&env))?;
            save_ldr(&r.ldr, out)?;
            Ok(())
        }
        Cmd::Insert { checkpoint, obj, transform, pose, albedo, metallic, roughness, out, view } => {
            let cfg = render_config(view, cli.seed)?;
            let model = load_model(checkpoint, view.illum)?;
            let mesh_obj = decode_obj(&read_text(obj)?).map_err(|e| e.at(obj))?;
            let transform = parse_matrix(&read_text(transform)?).map_err(|e| Failure::Invalid(format!("{}: {e}", transform.display())))?;
            let camera = load_pose(pose, view.size)?;
            let spec = InsertionSpec {
                mesh: mesh_obj,
                transform,
                albedo: *albedo,
                metallic: *metallic,
                roughness: *roughness,
                camera,
                illum: view.illum,
            };
            let mesh = scene_mesh(&model, &cfg);
            let ins = Renderer::new(&model, &mesh, cfg).insert_object(&spec)?;
            save_ldr(&ins.composite, out)?;
            Ok(())
        }
        Cmd::Synth { spec, out } => {
            let mut s: SynthSpec = toml::from_str(&read_text(spec)?).map_err(|e| Failure::Invalid(format!("{}: {e}", spec.display())))?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            s.validate().map_err(|e| Failure::Invalid(format!("{}: {e}", spec.display())))?;
            let base = spec.parent().unwrap_or(Path::new("."));
            let o = invrender::sceneio::generate(&s, base)?;
            o.write(out)?;
            Ok(())
        }
        Cmd::CheckGrads { config, params } => {
            let cfg = SceneConfig::load(config)?;
            let data = Dataset::load(&cfg.dataset)?;
            let model = Model::new(cfg.model_spec(data.n_illum, data.views.len()));
            let checks = check_loss_gradients(&model, &data, &cfg.train, &NoOccluder, *params, 1e-6, 1e-3);
            let mut ok = true;
            for c in &checks {
                println!("{:<8} {:>3} params  max rel err {:.3e}  {}", c.name, c.report.n_valid(), c.report.max_rel_err(), if c.report.passed() { "ok" } else { "FAIL" });
                ok &= c.report.passed();
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Runtime("gradient check failed".into()))
            }
        }
    }
}

fn parse_matrix(text: &str) -> Result<Mat4, String> {
    let v: Vec<f64> = text.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number"))).collect::<Result<_, _>>()?;
    let a: [f64; 16] = v.try_into().map_err(|v: Vec<f64>| format!("expected 16 numbers, found {}", v.len()))?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err("transform entries must be finite".into());
    }
    Ok(Mat4(a))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.device_threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.device_threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
