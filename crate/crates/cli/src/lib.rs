//! The `mxj` command line. Exit codes: 0 success, 1 invalid configuration
//! or failed check, 2 missing or unreadable files (and usage errors).

pub mod config;
pub mod viz;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mxj_core::checkpoint::{load_model, save_model};
use mxj_core::gradsuite::{run_suite, SUITE_TOL};
use mxj_core::loso::run_loso;
use mxj_core::trainer::{load_dataset, EpochLog};
use mxj_core::{evaluate, predict, train, Control, CoreError, Fusion, Model};
use mxj_data::{
    center_offset, crop, generate_synthetic, interior_mae, load_clip, warp_back, write_flo, write_landmarks,
    ClipSample, DataError, DatasetManifest, GenConfig, GrayImage,
};

use crate::config::{parse_fusion, Preset, RunConfig};

#[derive(Debug)]
pub enum Failure {
    /// Missing, unreadable or malformed input files.
    Path(String),
    /// Invalid settings or a failed check.
    Invalid(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Path(_) => 2,
            Failure::Invalid(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Path(s) | Failure::Invalid(s) => f.write_str(s),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Format { .. } => Failure::Path(e.to_string()),
            DataError::Config(_) | DataError::Tensor(_) => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Data(d) => d.into(),
            CoreError::Io { .. } | CoreError::Checkpoint { .. } => Failure::Path(e.to_string()),
            CoreError::Config(_) | CoreError::Tensor(_) => Failure::Invalid(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "mxj", version, about = "Micro-expression joint learning on synthetic clips")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with exact flow and landmark ground truth.
    GenData(GenArgs),
    /// Train one model on every clip of a manifest.
    Train(TrainArgs),
    /// Score a trained model on a manifest.
    Eval(EvalArgs),
    /// Leave-one-subject-out cross-validation.
    Loso(TrainArgs),
    /// Finite-difference check of every differentiable stage.
    Gradcheck(GradArgs),
    /// Predict class, flows and landmarks for one clip.
    Infer(InferArgs),
    /// Warp frames with a flow field and color-code the flow.
    WarpDemo(WarpArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; receives manifest.json and <subject>/<clip>/ folders.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub subjects: usize,
    /// Clips per subject.
    #[arg(long, default_value_t = 5)]
    pub clips: usize,
    /// 3 or 5.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Side of the square frames; training crops them to the model's frame size.
    #[arg(long, default_value_t = 144)]
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Without {
    /// Optical-flow head.
    Ofe,
    /// Landmark head.
    Fld,
    /// Circular convolutions inside F5C.
    Fcc,
    /// Channel correspondence convolution inside F5C.
    Ccc,
    /// The whole F5C block.
    F5c,
}

/// Training settings. Unset flags fall back to `--config`, then to the preset.
#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration JSON (see README).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest file or its directory [default: "manifest" in --config].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Layer widths [default: full].
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 5e-5].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Initialization and augmentation seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads per batch [default: 1].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Flow loss weight [default: 0.1].
    #[arg(long)]
    pub lambda_f: Option<f64>,
    /// Landmark loss weight [default: 68].
    #[arg(long)]
    pub lambda_m: Option<f64>,
    /// Random crops during training [default: true].
    #[arg(long)]
    pub augment: Option<bool>,
    /// Random horizontal flips when augmenting [default: true].
    #[arg(long)]
    pub flip: Option<bool>,
    /// concat, add, subtract, first-frames, last-frames or all-frames [default: concat].
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<Fusion>,
    /// Neighbours per channel in the correspondence graph [default: 4].
    #[arg(long)]
    pub k: Option<usize>,
    /// Ablation switch; repeatable.
    #[arg(long, value_enum)]
    pub without: Vec<Without>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest file or its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only score these subjects; repeatable [default: all].
    #[arg(long)]
    pub subject: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    /// Seed of the random inputs and parameters.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the per-stage table to <out>/gradcheck.txt [default: none].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Clip id from the manifest.
    #[arg(long)]
    pub clip: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Clip id from the manifest.
    #[arg(long)]
    pub clip: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Use this model's predicted flows instead of the ground truth [default: none].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Loso(a) => loso_cmd(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Infer(a) => infer_cmd(&a),
        Command::WarpDemo(a) => warp_demo(&a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Path(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn gen_data(a: &GenArgs) -> Result<()> {
    let cfg = GenConfig {
        seed: a.seed,
        subjects: a.subjects,
        clips_per_subject: a.clips,
        n_classes: a.classes,
        t: a.frames,
        frame_size: a.size,
        ..GenConfig::default()
    };
    cfg.validate()?;
    create_dir(&a.out)?;
    let manifest = generate_synthetic(&a.out, &cfg)?;
    println!("{} clips, {} subjects -> {}", manifest.clips.len(), a.subjects, a.out.display());
    Ok(())
}

/// Resolves the run configuration and loads its dataset.
fn prepare(a: &TrainArgs) -> Result<(RunConfig, Vec<ClipSample>)> {
    let mut rc = config::resolve(a)?;
    let (manifest, root) = DatasetManifest::load(&rc.manifest)?;
    rc.model.n_classes = manifest.n_classes;
    rc.model.t = manifest.t;
    rc.model.m = manifest.m;
    rc.model.validate()?;
    rc.train.validate()?;
    let clips = load_dataset(&manifest, &root)?;
    create_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&rc).expect("config serializes");
    write(&a.out.join("run_config.json"), json + "\n")?;
    Ok((rc, clips))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let (rc, clips) = prepare(a)?;
    let mut model = Model::new(rc.model.clone(), rc.train.seed)?;
    let mut log = EpochLog::create(&a.out.join("train_log.csv"))?;
    let mut log_err = None;
    let start = Instant::now();
    let report = train(&mut model, &clips, &rc.train, |st, _| {
        println!(
            "epoch {:>4}  L {:.5}  L_e {:.5}  L_f {:.5}  L_m {:.5}  {:.1}s",
            st.epoch,
            st.total,
            st.l_e,
            st.l_f,
            st.l_m,
            start.elapsed().as_secs_f64()
        );
        match log.append(st) {
            Ok(()) => Control::Continue,
            Err(e) => {
                log_err = Some(e);
                Control::Stop
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    save_model(&model, &a.out)?;
    let totals = evaluate(&model, &clips, rc.train.crop, rc.train.workers)?;
    let r = totals.report();
    write(&a.out.join("train_metrics.json"), r.to_json() + "\n")?;
    println!("{} epochs, {} steps; training set:", report.epochs.len(), report.steps);
    print!("{}", r.to_text());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let (manifest, root) = DatasetManifest::load(&a.manifest)?;
    let mut clips = load_dataset(&manifest, &root)?;
    if !a.subject.is_empty() {
        clips.retain(|c| a.subject.contains(&c.subject_id));
        if clips.is_empty() {
            return Err(Failure::Invalid(format!("no clips for subjects {:?}", a.subject)));
        }
    }
    let totals = evaluate(&model, &clips, model.cfg.frame_size, a.workers)?;
    let r = totals.report();
    create_dir(&a.out)?;
    write(&a.out.join("metrics.json"), r.to_json() + "\n")?;
    print!("{}", r.to_text());
    Ok(())
}

fn loso_cmd(a: &TrainArgs) -> Result<()> {
    let (rc, clips) = prepare(a)?;
    let report = run_loso(&rc.model, &rc.train, &clips)?;
    for f in &report.folds {
        let acc = f.report.acc.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        println!("fold {:<10} Acc {acc}", f.test_subject);
    }
    write(&a.out.join("metrics.json"), report.pooled.to_json() + "\n")?;
    let folds = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&a.out.join("loso.json"), folds + "\n")?;
    println!("pooled:");
    print!("{}", report.pooled.to_text());
    Ok(())
}

fn gradcheck_cmd(a: &GradArgs) -> Result<()> {
    let entries = run_suite(a.seed)?;
    let mut table = String::new();
    for e in &entries {
        table += &format!(
            "{:<18} {:.3e} checked {:>5} skipped {:>3} {}\n",
            e.name,
            e.report.max_rel_error,
            e.report.checked,
            e.report.skipped,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    let worst = entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
    table += &format!("max relative error {worst:.3e} (tolerance {SUITE_TOL:e})\n");
    print!("{table}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write(&out.join("gradcheck.txt"), &table)?;
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    if failed > 0 {
        return Err(Failure::Invalid(format!("{failed} stages above tolerance")));
    }
    Ok(())
}

fn find_clip(manifest_path: &Path, id: &str) -> Result<ClipSample> {
    let (manifest, root) = DatasetManifest::load(manifest_path)?;
    let record = manifest
        .clips
        .iter()
        .find(|c| c.clip_id == id)
        .ok_or_else(|| Failure::Invalid(format!("clip {id} is not in the manifest")))?;
    Ok(load_clip(&root, record, manifest.m)?)
}

fn center_crop(clip: &ClipSample, size: usize) -> Result<ClipSample> {
    let (h, w) = clip.size();
    if h < size || w < size {
        return Err(Failure::Invalid(format!("{h} x {w} frames are smaller than the {size} crop")));
    }
    Ok(crop(clip, [center_offset(w, size), center_offset(h, size)], size)?)
}

fn infer_cmd(a: &InferArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let clip = center_crop(&find_clip(&a.manifest, &a.clip)?, model.cfg.frame_size)?;
    let p = predict(&model, &clip.frames)?;
    create_dir(&a.out)?;
    if let (Some(class), Some(probs)) = (p.class, &p.probs) {
        println!("class {class}");
        for (i, q) in probs.iter().enumerate() {
            println!("p{i} {q:.6}");
        }
    }
    for (k, f) in p.flows.iter().enumerate() {
        write_flo(&a.out.join(format!("flow_{k:03}.flo")), f)?;
    }
    if !p.landmarks.is_empty() {
        // rows are frames 1..t, in center-crop pixel coordinates
        write_landmarks(&a.out.join("landmarks.csv"), &p.landmarks)?;
    }
    println!("{} flows, {} landmark rows -> {}", p.flows.len(), p.landmarks.len(), a.out.display());
    Ok(())
}

fn warp_demo(a: &WarpArgs) -> Result<()> {
    let clip = find_clip(&a.manifest, &a.clip)?;
    let (clip, flows) = match &a.checkpoint {
        Some(dir) => {
            let model = load_model(dir)?;
            if !model.cfg.flow_head {
                return Err(Failure::Invalid("the model's flow head is disabled".into()));
            }
            let clip = center_crop(&clip, model.cfg.frame_size)?;
            let flows = predict(&model, &clip.frames)?.flows;
            (clip, flows)
        }
        None => {
            let flows = clip.flows.clone();
            (clip, flows)
        }
    };
    create_dir(&a.out)?;
    for (k, flow) in flows.iter().enumerate() {
        let warped = warp_back(&clip.frames[k + 1], flow)?;
        GrayImage::from_tensor(&warped)?.write(&a.out.join(format!("warped_{k:03}.pgm")))?;
        viz::flow_image(flow).write(&a.out.join(format!("flow_{k:03}.ppm")))?;
        let mae = interior_mae(&warped, &clip.frames[k], 2) * 255.0;
        println!("pair {k}: interior MAE {mae:.3} / 255");
    }
    Ok(())
}
