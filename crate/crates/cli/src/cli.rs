//! Argument parsing and the subcommands.
//!
//! Exit codes: 0 on success, 2 for usage errors and unreadable or invalid
//! inputs, 1 for failed checks and runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use viewsplat_core::camera::farthest_point_sample;
use viewsplat_core::config::{MinibatchScheme, ModelConfig, ViewpointRes};
use viewsplat_core::cost::{cost_report, CostInput, CostReport};
use viewsplat_core::render::{project, rasterize_tiled, TargetConfig};
use viewsplat_core::train::{image_mse, psnr, reconstruct_scene, TrainConfig, Trainer};
use viewsplat_core::update::ViewInput;
use viewsplat_core::verify::suites::{self, CheckResult};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{io_err, Error, Result};
use crate::image::{write_png, write_raw_f32};
use crate::manifest::{load_scene, read_manifest};
use crate::ply::{read_ply, write_ply, SplatFile};
use crate::synth::{synth_scene, SynthOptions};

#[derive(Debug, Parser)]
#[command(name = "viewsplat", version, about = "Feed-forward Gaussian splat reconstruction from posed images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with known ground truth.
    Synth(SynthArgs),
    /// Train a model on one scene and write a checkpoint.
    Train(TrainArgs),
    /// Reconstruct Gaussians from a scene's views and export them.
    Infer(InferArgs),
    /// Render a splat file from a manifest camera.
    Render(RenderArgs),
    /// Report FLOPs, parameter counts, Gaussian counts and memory.
    Cost(CostArgs),
    /// Run the gradient, renderer, geometry and fidelity self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    /// Image resolution as HEIGHTxWIDTH.
    #[arg(long, default_value = "32x32", value_parser = parse_res)]
    pub res: (usize, usize),
    #[arg(long, default_value_t = 64)]
    pub gaussians: usize,
    /// Background color as R,G,B in [0, 1].
    #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
    pub background: [f64; 3],
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory or manifest.
    #[arg(long)]
    pub scene: PathBuf,
    /// JSON training configuration; the toy configuration when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the schedule length.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Log every n-th step.
    #[arg(long, default_value_t = 1)]
    pub log_every: u64,
    /// Also write the checkpoint every n steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResArg {
    #[value(name = "F", alias = "f")]
    F,
    #[value(name = "H", alias = "h")]
    H,
    #[value(name = "Q", alias = "q")]
    Q,
}

impl From<ResArg> for ViewpointRes {
    fn from(r: ResArg) -> Self {
        match r {
            ResArg::F => ViewpointRes::F,
            ResArg::H => ViewpointRes::H,
            ResArg::Q => ViewpointRes::Q,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MinibatchArg {
    Full,
    Half,
    Quarter,
    Random,
}

impl From<MinibatchArg> for MinibatchScheme {
    fn from(m: MinibatchArg) -> Self {
        match m {
            MinibatchArg::Full => MinibatchScheme::Full,
            MinibatchArg::Half => MinibatchScheme::Half,
            MinibatchArg::Quarter => MinibatchScheme::Quarter,
            MinibatchArg::Random => MinibatchScheme::Random,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Number of input views, picked by farthest point sampling.
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    #[arg(long, value_enum)]
    pub viewpoint_res: Option<ResArg>,
    #[arg(long, value_enum)]
    pub minibatch: Option<MinibatchArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_splat: PathBuf,
    /// Render every non-input view and report its PSNR.
    #[arg(long)]
    pub render_targets: bool,
    /// Directory for target renders; defaults to the splat file's directory.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub splat: PathBuf,
    /// Scene directory or manifest holding the camera.
    #[arg(long)]
    pub camera_from_manifest: PathBuf,
    /// Index of the manifest view.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the unquantized image as little-endian f32.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
    #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
    pub background: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// JSON with a `model` object (plus optional `views`, `height`, `width`),
    /// or a bare model configuration.
    #[arg(long, conflicts_with = "sweep")]
    pub config: Option<PathBuf>,
    /// Configurations to sweep, e.g. `layers=3,6,9,12;minibatch=full,half`.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long, value_parser = parse_res)]
    pub res: Option<(usize, usize)>,
    /// Output format; a table for one configuration, CSV for a sweep.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Also run the toy overfit, which takes minutes.
    #[arg(long)]
    pub toy: bool,
    #[arg(long, default_value_t = 2000)]
    pub toy_steps: u64,
    /// Scenes for the renderer comparison.
    #[arg(long, default_value_t = 100)]
    pub oracle_scenes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_res(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    if h == 0 || w == 0 {
        return Err(format!("resolution must be positive, got `{s}`"));
    }
    Ok((h, w))
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad color component in `{s}`")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(format!("expected R,G,B in [0, 1], got `{s}`")),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, A>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Infer(a) => infer(&a, out),
        Command::Render(a) => render(&a, out),
        Command::Cost(a) => cost(&a, out),
        Command::Check(a) => return check(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for problems with what the caller supplied, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    use viewsplat_core::Error as Core;
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Io { .. } => 1,
        Error::Json { .. } | Error::Format { .. } | Error::Image { .. } | Error::Invalid(_) => 2,
        Error::Core(Core::Validation(_) | Core::Config(_) | Core::ParamShape { .. } | Core::UnknownParam(_)) => 2,
        Error::Core(_) => 1,
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value).expect("report serializes");
    writeln!(out, "{line}").map_err(io_err("<stdout>"))
}

/// Creates the parent directory of an output file.
fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, path: &Path) -> Result<T> {
    serde_json::from_value(v).map_err(|source| Error::Json { path: path.into(), source })
}

fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let opts = SynthOptions {
        seed: a.seed,
        views: a.views,
        height: a.res.0,
        width: a.res.1,
        gaussians: a.gaussians,
        background: a.background,
    };
    let m = synth_scene(&opts, &a.out)?;
    emit(
        out,
        &json!({"scene": a.out, "name": m.name, "views": m.views.len(), "gaussians": a.gaussians, "near": m.near, "far": m.far}),
    )
}

/// Training configuration from JSON. Keys left out keep their toy values.
pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let mut base = serde_json::to_value(TrainConfig::toy()).expect("config serializes");
    merge(&mut base, read_json(path)?);
    from_value(base, path)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::toy(),
    };
    if let Some(steps) = a.steps {
        config.schedule = config.schedule.with_total(steps);
    }
    config.validate()?;
    let scene = load_scene::<f32>(&a.scene)?;
    ensure_parent(&a.out)?;
    let mut trainer = Trainer::<f32>::new(config, a.seed)?;
    let total = config.schedule.total_steps;
    for _ in 0..total {
        let r = trainer.step(&scene.views)?;
        if a.log_every > 0 && (r.step % a.log_every == 0 || r.step == 1 || r.step == total) {
            emit(out, &r)?;
        }
        if let Some(n) = a.checkpoint_every {
            if n > 0 && r.step % n == 0 && r.step < total {
                save_checkpoint(&a.out, &trainer.model)?;
            }
        }
    }
    save_checkpoint(&a.out, &trainer.model)
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = load_checkpoint(&a.ckpt, None)?;
    if let Some(r) = a.viewpoint_res {
        model.config.viewpoint_res = r.into();
    }
    if let Some(m) = a.minibatch {
        model.config.minibatch = m.into();
    }
    model.config.validate()?;
    let scene = load_scene::<f32>(&a.scene)?;
    let n = scene.views.len();
    if a.views == 0 || a.views > n {
        return Err(Error::Invalid(format!("--views {} is outside 1..={n}", a.views)));
    }
    let centers: Vec<_> = scene.views.iter().map(|v| v.camera.pose.center()).collect();
    let mut chosen = farthest_point_sample(&centers, a.views)?;
    chosen.sort_unstable();
    let inputs: Vec<ViewInput<f32>> = chosen.iter().map(|&i| scene.views[i].clone()).collect();

    let started = Instant::now();
    let (local, norm) = reconstruct_scene(&model, &inputs, a.seed)?;
    let world = local.to_world(&norm);
    let file = SplatFile::from_gaussians(&world);
    ensure_parent(&a.out_splat)?;
    write_ply(&a.out_splat, &file)?;
    emit(
        out,
        &json!({"splat": a.out_splat, "gaussians": file.len(), "inputs": chosen, "seconds": started.elapsed().as_secs_f64()}),
    )?;

    if a.render_targets {
        let dir = match &a.render_dir {
            Some(d) => d.clone(),
            None => a.out_splat.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let stem = a.out_splat.file_stem().and_then(|s| s.to_str()).unwrap_or("render");
        let set = world.cast::<f64>();
        for (i, view) in scene.views.iter().enumerate().filter(|(i, _)| !chosen.contains(i)) {
            let k = &view.camera.intrinsics;
            let target = TargetConfig::new(k.width, k.height);
            let img = rasterize_tiled(&project(&set, &view.camera), &target).image;
            let path = dir.join(format!("{stem}_view_{i:03}.png"));
            write_png(&path, &img)?;
            let p = psnr(image_mse(&img, &view.image.cast::<f64>()));
            emit(out, &json!({"view": i, "render": path, "psnr": p}))?;
        }
    }
    Ok(())
}

fn render(a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let set = read_ply(&a.splat)?.to_gaussians::<f64>();
    let manifest = read_manifest(&a.camera_from_manifest)?;
    let entry = manifest
        .views
        .get(a.view)
        .ok_or_else(|| Error::Invalid(format!("--view {} but the manifest has {} views", a.view, manifest.views.len())))?;
    let camera = entry.camera()?;
    let target = TargetConfig::new(entry.width, entry.height).with_background(a.background);
    let r = rasterize_tiled(&project(&set, &camera), &target);
    ensure_parent(&a.out)?;
    write_png(&a.out, &r.image)?;
    if let Some(raw) = &a.raw_out {
        ensure_parent(raw)?;
        write_raw_f32(raw, &r.image)?;
    }
    emit(
        out,
        &json!({"out": a.out, "width": entry.width, "height": entry.height, "splats": r.stats.splats, "non_psd": r.stats.non_psd}),
    )
}

/// Cost input from JSON: an object with `model` and optional problem size,
/// or the fields of a model configuration at top level.
pub fn read_cost_input(path: &Path) -> Result<CostInput> {
    let v = read_json(path)?;
    let mut base = serde_json::to_value(CostInput::default()).expect("input serializes");
    let model_keys = serde_json::to_value(ModelConfig::default()).expect("config serializes");
    let is_bare_model = v
        .as_object()
        .is_some_and(|o| !o.contains_key("model") && o.keys().any(|k| model_keys.get(k).is_some()));
    if is_bare_model {
        merge(&mut base["model"], v);
    } else {
        merge(&mut base, v);
    }
    from_value(base, path)
}

fn parse_scalar(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

/// Expands a sweep spec into the cartesian product of its axes.
pub fn expand_sweep(base: &CostInput, spec: &str) -> Result<Vec<(Vec<(String, String)>, CostInput)>> {
    let model_keys = serde_json::to_value(ModelConfig::default()).expect("config serializes");
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("sweep axis `{part}` is not KEY=V1,V2,...")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Invalid(format!("sweep axis `{key}` has no values")));
        }
        axes.push((key.trim().to_string(), values));
    }
    if axes.is_empty() {
        return Err(Error::Invalid("empty sweep".into()));
    }
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let base_value = serde_json::to_value(base).expect("input serializes");
    combos
        .into_iter()
        .map(|combo| {
            let mut v = base_value.clone();
            for (key, value) in &combo {
                let slot = if model_keys.get(key).is_some() {
                    &mut v["model"][key]
                } else if matches!(key.as_str(), "views" | "height" | "width") {
                    &mut v[key]
                } else {
                    return Err(Error::Invalid(format!("unknown sweep key `{key}`")));
                };
                *slot = parse_scalar(value);
            }
            let input: CostInput = serde_json::from_value(v).map_err(|e| Error::Invalid(format!("sweep point {combo:?}: {e}")))?;
            Ok((combo, input))
        })
        .collect()
}

fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Aligned text rendering of one report.
pub fn cost_table(r: &CostReport) -> String {
    let m = &r.input.model;
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let mut row = |a: &str, b: String, c: String| rows.push((a.to_string(), b, c));
    for s in &r.cross_attention {
        let name = format!(
            "cross-attention ({})",
            serde_json::to_value(s.scheme).expect("scheme").as_str().unwrap_or("?")
        );
        row(&name, group_digits(s.flops), format!("{:.2} GFLOPs", s.flops as f64 / 1e9));
    }
    let ratios = r.scheme_ratios.map(|x| format!("{x}")).join(" : ");
    row("scheme ratios", ratios, "full : decoupled : group : two-stage".into());
    row(
        "cross sublayers / layer",
        group_digits(r.layer.cross),
        format!("{:.2} GFLOPs", r.layer.cross as f64 / 1e9),
    );
    row(
        "self sublayer / layer",
        group_digits(r.layer.self_attention),
        format!("{:.2} GFLOPs", r.layer.self_attention as f64 / 1e9),
    );
    row(
        "tokenizer",
        group_digits(r.tokenizer_flops),
        format!("{:.2} GFLOPs", r.tokenizer_flops as f64 / 1e9),
    );
    row(
        "decoder",
        group_digits(r.decoder_flops),
        format!("{:.2} GFLOPs", r.decoder_flops as f64 / 1e9),
    );
    row("total", group_digits(r.total_flops), format!("{:.2} GFLOPs", r.total_flops as f64 / 1e9));
    row("parameters", group_digits(r.parameters), format!("{:.1} M", r.parameters as f64 / 1e6));
    row("gaussians", group_digits(r.gaussians), String::new());
    row(
        "activations",
        group_digits(r.activation_bytes),
        format!("{:.2} GiB", r.activation_bytes as f64 / (1u64 << 30) as f64),
    );

    let w0 = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
    let w1 = rows.iter().map(|r| r.1.chars().count()).max().unwrap_or(0);
    let mut out = format!(
        "model: {} layers, hidden {}, {} heads, patch {}, uplift {}, minibatch {:?}, viewpoint {:?}\n\
         input: {} views at {}x{}, {} image and {} viewpoint tokens per view\n",
        m.layers,
        m.hidden,
        m.heads,
        m.patch,
        m.effective_uplift(),
        m.minibatch,
        m.viewpoint_res,
        r.input.views,
        r.input.height,
        r.input.width,
        r.image_tokens,
        r.viewpoint_tokens
    );
    for (a, b, c) in rows {
        out.push_str(format!("{a:<w0$}  {b:>w1$}  {c}").trim_end());
        out.push('\n');
    }
    out
}

const CSV_COLUMNS: [&str; 12] = [
    "parameters",
    "gaussians",
    "image_tokens",
    "viewpoint_tokens",
    "cross_full_flops",
    "cross_half_flops",
    "cross_quarter_flops",
    "layer_cross_flops",
    "layer_self_flops",
    "total_flops",
    "activation_bytes",
    "two_stage_ratio",
];

fn csv_values(r: &CostReport) -> Vec<String> {
    let mut v: Vec<String> = [r.parameters, r.gaussians, r.image_tokens, r.viewpoint_tokens]
        .iter()
        .map(u64::to_string)
        .collect();
    v.extend(r.cross_attention.iter().map(|s| s.flops.to_string()));
    v.extend(
        [r.layer.cross, r.layer.self_attention, r.total_flops, r.activation_bytes]
            .iter()
            .map(u64::to_string),
    );
    v.push(r.scheme_ratios[3].to_string());
    v
}

fn cost(a: &CostArgs, out: &mut dyn Write) -> Result<()> {
    let mut base = match &a.config {
        Some(p) => read_cost_input(p)?,
        None => CostInput::default(),
    };
    if let Some(n) = a.views {
        base.views = n;
    }
    if let Some((h, w)) = a.res {
        base.height = h;
        base.width = w;
    }
    let text = match &a.sweep {
        None => {
            let r = cost_report(&base)?;
            match a.format.unwrap_or(Format::Table) {
                Format::Table => cost_table(&r),
                Format::Json => serde_json::to_string_pretty(&r).expect("report serializes") + "\n",
                Format::Csv => format!("{}\n{}\n", CSV_COLUMNS.join(","), csv_values(&r).join(",")),
            }
        }
        Some(spec) => {
            let points = expand_sweep(&base, spec)?;
            let reports = points
                .iter()
                .map(|(combo, input)| Ok((combo, cost_report(input)?)))
                .collect::<Result<Vec<_>>>()?;
            match a.format.unwrap_or(Format::Csv) {
                Format::Csv | Format::Table => {
                    let keys: Vec<&str> = points[0].0.iter().map(|(k, _)| k.as_str()).collect();
                    let mut s = format!("{},{}\n", keys.join(","), CSV_COLUMNS.join(","));
                    for (combo, r) in &reports {
                        let vals: Vec<&str> = combo.iter().map(|(_, v)| v.as_str()).collect();
                        s.push_str(&format!("{},{}\n", vals.join(","), csv_values(r).join(",")));
                    }
                    s
                }
                Format::Json => {
                    let all: Vec<&CostReport> = reports.iter().map(|(_, r)| r).collect();
                    serde_json::to_string_pretty(&all).expect("reports serialize") + "\n"
                }
            }
        }
    };
    match &a.out {
        Some(p) => {
            ensure_parent(p)?;
            std::fs::write(p, &text).map_err(io_err(p))
        }
        None => out.write_all(text.as_bytes()).map_err(io_err("<stdout>")),
    }
}

fn timed(f: impl FnOnce() -> CheckResult) -> (CheckResult, f64) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

/// The self-check suites in criterion order, each with its wall time.
pub fn run_suites(oracle_scenes: usize, seed: u64) -> Vec<(CheckResult, f64)> {
    vec![
        timed(suites::flops_fidelity),
        timed(suites::scheme_ratio_fidelity),
        timed(suites::parameter_count_fidelity),
        timed(suites::gaussian_count_fidelity),
        timed(suites::gradient_suite),
        timed(|| suites::renderer_oracle_suite(oracle_scenes, seed)),
        timed(|| suites::geometry_suite(seed)),
        timed(suites::minibatch_coverage_suite),
        timed(suites::ablation_degeneracy_suite),
    ]
}

fn check(a: &CheckArgs, out: &mut dyn Write) -> i32 {
    let mut results = run_suites(a.oracle_scenes, a.seed);
    if a.toy {
        results.push(timed(|| suites::toy_overfit_suite(a.toy_steps)));
    }
    let mut failed = 0;
    for (r, secs) in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!r.passed);
        let _ = writeln!(out, "{verdict} {:<20} {secs:>7.2}s  {}", r.name, r.detail);
    }
    let _ = writeln!(out, "{} of {} checks passed", results.len() - failed, results.len());
    i32::from(failed > 0)
}
