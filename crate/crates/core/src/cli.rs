//! The `dit` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{chamfer, emd_approx, EmdOptions, PointCloud, Report, CHAMFER_REPORT_SCALE};
use crate::geometry::{
    read_sample_sets, sample_sdf, sphere_family, toy_dataset, write_sample_sets, Dataset, Mesh,
    Point3, SampleSet, SamplingOptions,
};
use crate::inference::{
    extract_mesh, extract_mesh_at_steps, extract_template_mesh, infer_latent, interpolate_codes,
    CanonicalPool, ExtractOptions, InferOptions,
};
use crate::model::{LatentCode, ModelConfig};
use crate::training::{train_with, TrainConfig, TrainOutputs, Trainer};

/// Environment variable naming the directory that holds default inputs
/// and outputs.
pub const DATA_DIR_ENV: &str = "DIT_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "data";

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const IO: u8 = 4;
    pub const MALFORMED: u8 = 5;
    pub const CHECKPOINT_MISMATCH: u8 = 6;
    pub const INVALID_INPUT: u8 = 7;
    pub const NON_FINITE: u8 = 8;
    pub const EMPTY_MESH: u8 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Chamfer,
    Emd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    /// Surface samples per cloud.
    pub points: usize,
    pub emd: EmdOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: vec![Metric::Chamfer, Metric::Emd],
            points: 30_000,
            emd: EmdOptions::default(),
        }
    }
}

/// Everything a command may need. Relative paths are resolved against the
/// working directory; missing paths default into the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Shape dataset JSON.
    pub dataset: Option<PathBuf>,
    /// Sample file written by `gen-data`.
    pub samples: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampling: SamplingOptions,
    pub extract: ExtractOptions,
    pub infer: InferOptions,
    pub eval: EvalOptions,
    /// Single seed for every command; replaces `train.seed`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            samples: None,
            checkpoint: None,
            model: ModelConfig::desk_scale(),
            train: TrainConfig::default(),
            sampling: SamplingOptions::default(),
            extract: ExtractOptions::default(),
            infer: InferOptions::default(),
            eval: EvalOptions::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    fn data_dir() -> PathBuf {
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| Self::data_dir().join("shapes.json"))
    }

    pub fn samples_path(&self) -> PathBuf {
        self.samples
            .clone()
            .unwrap_or_else(|| Self::data_dir().join("samples.dits"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| Self::data_dir().join("model.ditc"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dit",
    version,
    about = "Deep implicit templates: training, extraction, correspondence and metrics"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration JSON; built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for all randomness [default: config seed, 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Marching-cubes lattice samples per axis [default: config extract.resolution, 128]
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Output path; each command documents its default.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Four spheres, four boxes and four ellipsoids.
    Toy,
    /// Origin-centred spheres with radii 0.3 to 0.6.
    Spheres,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample SDF training data for every shape of a dataset [out: config samples path].
    GenData {
        /// Shape dataset JSON [default: config dataset path]
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Write a built-in dataset to the spec path first.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Train the template and warp networks [out: config checkpoint path].
    Train {
        /// Sample file [default: config samples path]
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Override train.iterations.
        #[arg(long)]
        iterations: Option<u64>,
        /// Continue from the checkpoint at the output path.
        #[arg(long)]
        resume: bool,
        /// Loss log [default: <out>.loss.csv]
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Suppress progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Extract a shape's mesh as OBJ [out: recon_<id>.obj].
    Reconstruct {
        /// Checkpoint [default: config checkpoint path]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training shape id, or the set to read from --samples.
        #[arg(long)]
        shape: Option<u32>,
        /// Fit a new code to this sample file instead of using a trained one.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Latent optimisation iterations [default: config infer.iterations, 800]
        #[arg(long)]
        iterations: Option<usize>,
        /// Warp steps to apply [default: all]
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Extract the template mesh as OBJ [out: template.obj].
    Template {
        /// Checkpoint [default: config checkpoint path]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Meshes along the line between two codes [out: directory interp].
    Interp {
        /// Checkpoint [default: config checkpoint path]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Shape id at t = 0.
        #[arg(long)]
        from: u32,
        /// Shape id at t = 1.
        #[arg(long)]
        to: u32,
        /// Number of meshes, endpoints included.
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Transfer points from one shape to another through the template [out: correspondence.csv].
    Correspond {
        /// Checkpoint [default: config checkpoint path]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Shape id the points come from.
        #[arg(long)]
        source: u32,
        /// Shape id whose mesh vertices form the candidate pool.
        #[arg(long)]
        target: u32,
        /// CSV of `label,x,y,z` rows on the source shape.
        #[arg(long, conflicts_with = "dense")]
        keypoints: Option<PathBuf>,
        /// Number of source mesh vertices to transfer.
        #[arg(long, default_value_t = 1000)]
        dense: usize,
    },
    /// Reconstruction metrics per shape as JSON plus CSV [out: eval.json].
    Eval {
        /// Checkpoint [default: config checkpoint path]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Shape dataset JSON with the ground truth [default: config dataset path]
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated metrics [default: config eval.metrics, chamfer,emd]
        #[arg(long, value_enum, value_delimiter = ',')]
        metrics: Option<Vec<Metric>>,
        /// Compare this OBJ against --gt-mesh instead of a checkpoint.
        #[arg(long, requires = "gt_mesh")]
        pred_mesh: Option<PathBuf>,
        /// Reference OBJ for --pred-mesh.
        #[arg(long, requires = "pred_mesh")]
        gt_mesh: Option<PathBuf>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            kind,
            message: message.into(),
        }
    }

    /// One JSON object on a single line.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind, "code": self.code, "message": self.message })
            .to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = e.class();
        CliError::new(code, kind, e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors are reported on stderr as one JSON line.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new(exit::USAGE, "usage", first).line());
            return ExitCode::from(exit::USAGE);
        }
    };
    std::panic::set_hook(Box::new(|_| {}));
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli)))
        .unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(CliError::new(exit::INTERNAL, "internal", msg))
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code)
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::new(
                exit::USAGE,
                "usage",
                "--threads must be positive",
            ));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut config = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    config.train.seed = config.seed;
    config.infer.seed = config.seed;
    config.eval.emd.seed = config.seed;
    if let Some(r) = cli.global.resolution {
        config.extract.resolution = r;
    }
    let out = cli.global.out.clone();
    match cli.command {
        Command::GenData { spec, preset } => gen_data(&config, spec, preset, out),
        Command::Train {
            samples,
            iterations,
            resume,
            loss_csv,
            quiet,
        } => {
            if let Some(n) = iterations {
                config.train.iterations = n;
            }
            train_cmd(&config, samples, resume, loss_csv, quiet, out)
        }
        Command::Reconstruct {
            checkpoint,
            shape,
            samples,
            iterations,
            steps,
        } => {
            if let Some(n) = iterations {
                config.infer.iterations = n;
            }
            reconstruct(&config, checkpoint, shape, samples, steps, out)
        }
        Command::Template { checkpoint } => {
            let ck = load_checkpoint(&config, checkpoint)?;
            let mesh = extract_template_mesh(&ck.model, &config.extract)?;
            write_mesh(&mesh, &out.unwrap_or_else(|| "template.obj".into()))
        }
        Command::Interp {
            checkpoint,
            from,
            to,
            count,
        } => interp(&config, checkpoint, from, to, count, out),
        Command::Correspond {
            checkpoint,
            source,
            target,
            keypoints,
            dense,
        } => correspond_cmd(&config, checkpoint, source, target, keypoints, dense, out),
        Command::Eval {
            checkpoint,
            dataset,
            metrics,
            pred_mesh,
            gt_mesh,
        } => {
            if let Some(m) = metrics {
                config.eval.metrics = m;
            }
            eval_cmd(&config, checkpoint, dataset, pred_mesh.zip(gt_mesh), out)
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn require_file(path: &Path) -> Result<()> {
    fs::metadata(path)
        .map(|_| ())
        .map_err(|e| Error::io(path, e))
}

fn gen_data(
    config: &RunConfig,
    spec: Option<PathBuf>,
    preset: Option<Preset>,
    out: Option<PathBuf>,
) -> CliResult {
    let spec_path = spec.unwrap_or_else(|| config.dataset_path());
    let out = out.unwrap_or_else(|| config.samples_path());
    let dataset = match preset {
        Some(p) => {
            let ds = match p {
                Preset::Toy => toy_dataset(),
                Preset::Spheres => sphere_family(&[0.3, 0.4, 0.5, 0.6])?,
            };
            ensure_parent(&spec_path)?;
            ds.save(&spec_path)?;
            ds
        }
        None => Dataset::load(&spec_path)?,
    };
    if dataset.shapes.is_empty() {
        return Err(Error::Empty("dataset shapes").into());
    }
    let sets = dataset
        .shapes
        .par_iter()
        .map(|e| {
            sample_sdf(
                e.id,
                &e.spec,
                &config.sampling,
                shape_seed(config.seed, e.id),
            )
        })
        .collect::<Result<Vec<SampleSet>>>()?;
    ensure_parent(&out)?;
    write_sample_sets(&out, &sets)?;
    println!("wrote {} sample sets to {}", sets.len(), out.display());
    Ok(())
}

/// Per-shape stream of the command seed.
fn shape_seed(seed: u64, id: u32) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(id as u64)
}

fn train_cmd(
    config: &RunConfig,
    samples: Option<PathBuf>,
    resume: bool,
    loss_csv: Option<PathBuf>,
    quiet: bool,
    out: Option<PathBuf>,
) -> CliResult {
    let samples = samples.unwrap_or_else(|| config.samples_path());
    let out = out.unwrap_or_else(|| config.checkpoint_path());
    config.model.validate()?;
    config.train.validate(&config.model)?;
    require_file(&samples)?;
    if resume {
        require_file(&out)?;
    }
    ensure_parent(&out)?;
    let sets = read_sample_sets(&samples)?;
    if sets.is_empty() {
        return Err(Error::Empty("training sample sets").into());
    }
    let mut trainer = if resume {
        Trainer::resume(Checkpoint::load(&out)?, config.train.clone())?
    } else {
        let ids: Vec<u32> = sets.iter().map(|s| s.shape_id).collect();
        Trainer::new(config.model.clone(), config.train.clone(), &ids)?
    };
    let loss_csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
    let outputs = TrainOutputs {
        checkpoint: Some(out.clone()),
        loss_csv: Some(loss_csv),
        verbose: !quiet,
    };
    train_with(&mut trainer, &sets, &outputs)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_checkpoint(config: &RunConfig, checkpoint: Option<PathBuf>) -> Result<Checkpoint> {
    Checkpoint::load(checkpoint.unwrap_or_else(|| config.checkpoint_path()))
}

fn trained_code(ck: &Checkpoint, id: u32) -> Result<LatentCode> {
    Ok(ck.latents.get(id)?.clone())
}

fn write_mesh(mesh: &Mesh, path: &Path) -> CliResult {
    ensure_parent(path)?;
    mesh.write_obj(path)?;
    if mesh.is_empty() {
        return Err(CliError::new(
            exit::EMPTY_MESH,
            "empty_mesh",
            format!(
                "{}: field has no zero crossing inside the bounds",
                path.display()
            ),
        ));
    }
    println!(
        "wrote {} ({} vertices, {} triangles)",
        path.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(())
}

fn reconstruct(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    shape: Option<u32>,
    samples: Option<PathBuf>,
    steps: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    if let Some(p) = &samples {
        require_file(p)?;
    }
    let ck = load_checkpoint(config, checkpoint)?;
    let code = match samples {
        Some(p) => {
            let sets = read_sample_sets(&p)?;
            let set = match shape {
                Some(id) => sets
                    .iter()
                    .find(|s| s.shape_id == id)
                    .ok_or(Error::UnknownShape(id as u64))?,
                None => sets.first().ok_or(Error::Empty("sample file"))?,
            };
            infer_latent(&ck.model, set, &config.infer)?
        }
        None => {
            let id = shape
                .ok_or_else(|| CliError::new(exit::USAGE, "usage", "give --shape or --samples"))?;
            trained_code(&ck, id)?
        }
    };
    let steps = steps.unwrap_or(ck.model.steps());
    let mesh = extract_mesh_at_steps(&ck.model, &code, steps, &config.extract)?;
    write_mesh(
        &mesh,
        &out.unwrap_or_else(|| format!("recon_{}.obj", code.shape_id).into()),
    )
}

fn interp(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    from: u32,
    to: u32,
    count: usize,
    out: Option<PathBuf>,
) -> CliResult {
    if count < 2 {
        return Err(CliError::new(
            exit::USAGE,
            "usage",
            "--count must be at least 2",
        ));
    }
    let ck = load_checkpoint(config, checkpoint)?;
    let (a, b) = (trained_code(&ck, from)?, trained_code(&ck, to)?);
    let dir = out.unwrap_or_else(|| "interp".into());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut empty = Vec::new();
    for i in 0..count {
        let t = i as f64 / (count - 1) as f64;
        let code = interpolate_codes(&a, &b, t)?;
        let mesh = extract_mesh(&ck.model, &code, &config.extract)?;
        let path = dir.join(format!("interp_{i:03}.obj"));
        mesh.write_obj(&path)?;
        if mesh.is_empty() {
            empty.push(path.display().to_string());
        }
    }
    if !empty.is_empty() {
        return Err(CliError::new(
            exit::EMPTY_MESH,
            "empty_mesh",
            format!("empty meshes: {}", empty.join(" ")),
        ));
    }
    println!("wrote {count} meshes to {}", dir.display());
    Ok(())
}

/// `label,x,y,z` rows; a header line is allowed.
fn read_keypoints(path: &Path) -> Result<Vec<(u32, Point3)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::format(path, format!("line {}: expected label,x,y,z", n + 1));
        if cells.len() != 4 {
            return Err(bad());
        }
        let label: u32 = cells[0].parse().map_err(|_| bad())?;
        let mut xyz = [0.0; 3];
        for k in 0..3 {
            xyz[k] = cells[k + 1].parse().map_err(|_| bad())?;
        }
        out.push((label, Point3::from(xyz)));
    }
    Ok(out)
}

fn correspond_cmd(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    source: u32,
    target: u32,
    keypoints: Option<PathBuf>,
    dense: usize,
    out: Option<PathBuf>,
) -> CliResult {
    let labelled = match &keypoints {
        Some(p) => Some(read_keypoints(p)?),
        None => None,
    };
    let ck = load_checkpoint(config, checkpoint)?;
    let (sc, tc) = (trained_code(&ck, source)?, trained_code(&ck, target)?);
    let target_mesh = extract_mesh(&ck.model, &tc, &config.extract)?;
    if target_mesh.is_empty() {
        return Err(CliError::new(
            exit::EMPTY_MESH,
            "empty_mesh",
            format!("target shape {target} has no surface"),
        ));
    }
    let pool = CanonicalPool::new(&ck.model, &tc, &target_mesh.vertices)?;
    let (labels, points): (Vec<Option<u32>>, Vec<Point3>) = match labelled {
        Some(k) => k.into_iter().map(|(l, p)| (Some(l), p)).unzip(),
        None => {
            let source_mesh = extract_mesh(&ck.model, &sc, &config.extract)?;
            if source_mesh.is_empty() {
                return Err(CliError::new(
                    exit::EMPTY_MESH,
                    "empty_mesh",
                    format!("source shape {source} has no surface"),
                ));
            }
            let n = dense.min(source_mesh.vertices.len());
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut idx = sample_indices(&mut rng, source_mesh.vertices.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter()
                .map(|i| (None, source_mesh.vertices[i]))
                .unzip()
        }
    };
    let matches = pool.correspond(&ck.model, &points, &sc)?;
    let with_labels = keypoints.is_some();
    let mut csv = String::from(if with_labels {
        "label,sx,sy,sz,tx,ty,tz,canonical_distance\n"
    } else {
        "sx,sy,sz,tx,ty,tz,canonical_distance\n"
    });
    for (label, m) in labels.iter().zip(&matches) {
        if let Some(l) = label {
            csv.push_str(&format!("{l},"));
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.source.x,
            m.source.y,
            m.source.z,
            m.target.x,
            m.target.y,
            m.target.z,
            m.canonical_distance
        ));
    }
    let out = out.unwrap_or_else(|| "correspondence.csv".into());
    ensure_parent(&out)?;
    fs::write(&out, csv).map_err(|e| Error::io(&out, e))?;
    println!(
        "wrote {} correspondences to {}",
        matches.len(),
        out.display()
    );
    Ok(())
}

fn metric_names(metrics: &[Metric]) -> Vec<&'static str> {
    metrics
        .iter()
        .map(|m| match m {
            Metric::Chamfer => "chamfer_x1e3",
            Metric::Emd => "emd",
        })
        .collect()
}

fn cloud_metrics(pred: &[Point3], gt: &[Point3], opts: &EvalOptions) -> Result<Vec<f64>> {
    opts.metrics
        .iter()
        .map(|m| match m {
            Metric::Chamfer => Ok(chamfer(pred, gt)? * CHAMFER_REPORT_SCALE),
            Metric::Emd => emd_approx(pred, gt, &opts.emd),
        })
        .collect()
}

fn eval_cmd(
    config: &RunConfig,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    meshes: Option<(PathBuf, PathBuf)>,
    out: Option<PathBuf>,
) -> CliResult {
    if config.eval.metrics.is_empty() {
        return Err(CliError::new(exit::USAGE, "usage", "no metrics requested"));
    }
    let opts = &config.eval;
    let mut report = Report::new(&metric_names(&opts.metrics));
    match meshes {
        Some((pred_path, gt_path)) => {
            let pred = Mesh::read_obj(&pred_path)?;
            let gt = Mesh::read_obj(&gt_path)?;
            let a = PointCloud::from_mesh("pred", &pred, opts.points, config.seed)?;
            let b = PointCloud::from_mesh("gt", &gt, opts.points, config.seed)?;
            report.push(0, cloud_metrics(&a.points, &b.points, opts)?)?;
        }
        None => {
            let dataset = Dataset::load(dataset.unwrap_or_else(|| config.dataset_path()))?;
            let ck = load_checkpoint(config, checkpoint)?;
            for entry in &dataset.shapes {
                let code = trained_code(&ck, entry.id)?;
                let mesh = extract_mesh(&ck.model, &code, &config.extract)?;
                let gt = PointCloud::from_shape(
                    "gt",
                    &entry.spec,
                    opts.points,
                    shape_seed(config.seed, entry.id),
                )?;
                let values = if mesh.is_empty() {
                    vec![f64::NAN; opts.metrics.len()]
                } else {
                    let pred = PointCloud::from_mesh(
                        "recon",
                        &mesh,
                        opts.points,
                        shape_seed(config.seed, entry.id),
                    )?;
                    cloud_metrics(&pred.points, &gt.points, opts)?
                };
                report.push(entry.id, values)?;
            }
        }
    }
    let json_path = out.unwrap_or_else(|| "eval.json".into());
    ensure_parent(&json_path)?;
    let csv_path = json_path.with_extension("csv");
    report.write(&csv_path, &json_path)?;
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}
