//! Command-line front end: dataset generation, training, evaluation,
//! heatmap export and gradient checking.
//!
//! Exit codes: 0 success, 2 usage errors, 3 I/O and file-format errors,
//! 4 validation errors, 5 failed checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use selar::error::Error;
use selar::io;
use selar::model::{Aggregation, AttributeMatrix, ProjectionModel, Space};
use selar::synth::{synth_generate, SynthConfig};
use selar::tensor::{Matrix, Tensor};
use selar::train::{grad_check, train, TrainConfig};
use selar::viz::{export_heatmaps, AttributeSelection, HeatmapExportConfig, Interpolation};
use selar::{evaluate_gzsl, evaluate_zsl, Sample};

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "selar",
    version,
    about = "Zero-shot learning over precomputed feature maps with per-location attribute scoring"
)]
struct Cli {
    /// Cap the worker thread pool (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Line-oriented machine-readable output
    #[arg(long, global = true)]
    porcelain: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a projection model on seen-class feature maps
    Train(TrainArgs),
    /// Evaluate a trained model under the zero-shot protocols
    Eval(EvalArgs),
    /// Export per-attribute heatmaps for chosen samples
    ExportMaps(ExportMapsArgs),
    /// Generate a planted synthetic dataset
    GenSynth(GenSynthArgs),
    /// Check analytic gradients against finite differences
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Gap,
    Gmp,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Aggregation {
        match a {
            AggregationArg::Gap => Aggregation::Gap,
            AggregationArg::Gmp => Aggregation::Gmp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Visual,
    Attribute,
    Class,
}

impl From<SpaceArg> for Space {
    fn from(s: SpaceArg) -> Space {
        match s {
            SpaceArg::Visual => Space::Visual,
            SpaceArg::Attribute => Space::Attribute,
            SpaceArg::Class => Space::Class,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training manifest (sample_id<TAB>path<TAB>class_id)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Class-attribute table (class_id,v1,v2,...)
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Split file with [seen] and [unseen] sections
    #[arg(long)]
    split: Option<PathBuf>,
    /// Output directory for the model, loss history and config echo
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    aggregation: Option<AggregationArg>,
    #[arg(long)]
    space: Option<SpaceArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_epoch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    weight_init_scale: Option<f64>,
    /// Learn a per-attribute bias alongside the projection
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    bias: Option<bool>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Zsl,
    Gzsl,
    Both,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Test manifest
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    attributes: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Gzsl)]
    mode: ModeArg,
    /// Also write report.txt and report.porcelain to this directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportMapsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the images and index files
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated sample ids (defaults to every sample in the manifest)
    #[arg(long)]
    samples: Option<String>,
    /// Integer output scale factor
    #[arg(long, default_value_t = 1)]
    upsample: usize,
    #[arg(long, value_enum, default_value_t = InterpolationArg::Nearest)]
    interpolation: InterpolationArg,
    /// 'all', 'top:K' or comma-separated attribute indices
    #[arg(long, default_value = "all")]
    select: String,
    /// Attribute table; required for top-k selection
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// File with one attribute name per line, used in the index files
    #[arg(long)]
    names: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpolationArg {
    Nearest,
    Bilinear,
}

impl From<InterpolationArg> for Interpolation {
    fn from(i: InterpolationArg) -> Interpolation {
        match i {
            InterpolationArg::Nearest => Interpolation::Nearest,
            InterpolationArg::Bilinear => Interpolation::Bilinear,
        }
    }
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output directory for the dataset
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    seen: usize,
    #[arg(long, default_value_t = 5)]
    unseen: usize,
    #[arg(long, default_value_t = 50)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 32)]
    attr_dim: usize,
    #[arg(long, default_value_t = 7)]
    grid: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct GradCheckArgs {
    /// 'all' or one of visual, attribute, class
    #[arg(long, default_value = "all")]
    space: String,
    /// 'all' or one of gap, gmp
    #[arg(long, default_value = "all")]
    aggregation: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Finite-difference step size
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 4)]
    grid: usize,
    #[arg(long, default_value_t = 6)]
    feat_dim: usize,
    #[arg(long, default_value_t = 5)]
    attr_dim: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Random instances per space/aggregation combination
    #[arg(long, default_value_t = 3)]
    instances: usize,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn check(message: impl Into<String>) -> Self {
        Failure {
            code: 5,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Failure {
        let code = match &err {
            Error::Shape(_) | Error::Contract(_) | Error::Eval(_) => 4,
            Error::Parse(_)
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::TruncatedPayload { .. }
            | Error::DimensionOverflow
            | Error::File { .. }
            | Error::Io(_) => 3,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = run(cli) {
        eprintln!("error: {}", failure.message.replace('\n', "; "));
        std::process::exit(failure.code);
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure {
                code: 4,
                message: format!("could not configure the thread pool: {e}"),
            })?;
    }
    let porcelain = cli.porcelain;
    match cli.command {
        Command::Train(args) => cmd_train(args, porcelain),
        Command::Eval(args) => cmd_eval(args, porcelain),
        Command::ExportMaps(args) => cmd_export_maps(args, porcelain),
        Command::GenSynth(args) => cmd_gen_synth(args, porcelain),
        Command::GradCheck(args) => cmd_grad_check(args, porcelain),
    }
}

/// Values read from a `--config` file. Flags always win over these.
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<FileConfig, Failure> {
        let Some(path) = path else {
            return Ok(FileConfig(BTreeMap::new()));
        };
        let map = io::load_key_values(path)?;
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Failure {
                    code: 3,
                    message: format!("config file {}: unknown key '{key}'", path.display()),
                });
            }
        }
        Ok(FileConfig(map))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| Failure {
                code: 3,
                message: format!("config key '{key}': invalid value '{raw}'"),
            }),
        }
    }
}

fn require<T>(value: Option<T>, name: &str) -> Result<T, Failure> {
    value.ok_or_else(|| {
        Failure::usage(format!(
            "missing required setting '{name}' (pass --{name} or set it in the config file)"
        ))
    })
}

fn manifest_root(manifest: &Path) -> &Path {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn create_out_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Error::file(path, e).into())
}

const TRAIN_CONFIG_KEYS: &[&str] = &[
    "manifest",
    "attributes",
    "split",
    "out",
    "aggregation",
    "space",
    "lr",
    "momentum",
    "decay_factor",
    "decay_epoch",
    "epochs",
    "batch_size",
    "seed",
    "weight_init_scale",
    "bias",
];

fn cmd_train(args: TrainArgs, porcelain: bool) -> CmdResult {
    let file = FileConfig::load(args.config.as_deref(), TRAIN_CONFIG_KEYS)?;
    let manifest = require(args.manifest.or(file.parse("manifest")?), "manifest")?;
    let attributes = require(args.attributes.or(file.parse("attributes")?), "attributes")?;
    let split_path = require(args.split.or(file.parse("split")?), "split")?;
    let out = require(args.out.or(file.parse("out")?), "out")?;
    let aggregation: Aggregation = args
        .aggregation
        .map(Into::into)
        .or(file.parse("aggregation")?)
        .unwrap_or(Aggregation::Gmp);
    let space: Space = args
        .space
        .map(Into::into)
        .or(file.parse("space")?)
        .unwrap_or(Space::Attribute);
    let with_bias = args.bias.or(file.parse("bias")?).unwrap_or(false);
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: args.lr.or(file.parse("lr")?).unwrap_or(defaults.learning_rate),
        momentum: args
            .momentum
            .or(file.parse("momentum")?)
            .unwrap_or(defaults.momentum),
        decay_factor: args
            .decay_factor
            .or(file.parse("decay_factor")?)
            .unwrap_or(defaults.decay_factor),
        decay_epoch: args
            .decay_epoch
            .or(file.parse("decay_epoch")?)
            .unwrap_or(defaults.decay_epoch),
        epochs: args.epochs.or(file.parse("epochs")?).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file.parse("batch_size")?)
            .unwrap_or(defaults.batch_size),
        seed: args.seed.or(file.parse("seed")?).unwrap_or(defaults.seed),
        weight_init_scale: args
            .weight_init_scale
            .or(file.parse("weight_init_scale")?)
            .unwrap_or(defaults.weight_init_scale),
    };

    let attrs = io::load_attribute_matrix(&attributes)?;
    let split = io::load_split(&split_path)?;
    let attrs_seen = attrs.select(split.seen_classes())?.normalize_rows()?;
    let entries = io::load_manifest(&manifest)?;
    let dataset = io::load_samples(&entries, manifest_root(&manifest))?;

    let (model, history) = train(
        &dataset.samples,
        &attrs_seen,
        aggregation,
        space,
        with_bias,
        &config,
    )?;

    create_out_dir(&out)?;
    let model_path = out.join("model.slrt");
    io::save_model(&model_path, &model, config.seed)?;

    let mut loss_text = String::from("# epoch\tmean_loss\n");
    for (i, loss) in history.iter().enumerate() {
        loss_text.push_str(&format!("{}\t{loss}\n", i + 1));
    }
    write_text(&out.join("loss_history.txt"), &loss_text)?;

    let echo = format!(
        "aggregation = {aggregation}\nspace = {space}\nlr = {}\nmomentum = {}\n\
         decay_factor = {}\ndecay_epoch = {}\nepochs = {}\nbatch_size = {}\nseed = {}\n\
         weight_init_scale = {}\nbias = {with_bias}\nmanifest = {}\nattributes = {}\n\
         split = {}\nout = {}\n",
        config.learning_rate,
        config.momentum,
        config.decay_factor,
        config.decay_epoch,
        config.epochs,
        config.batch_size,
        config.seed,
        config.weight_init_scale,
        manifest.display(),
        attributes.display(),
        split_path.display(),
        out.display(),
    );
    write_text(&out.join("config.txt"), &echo)?;

    let final_loss = *history.last().unwrap();
    if porcelain {
        print!(
            "final_loss {final_loss}\nepochs {}\nmodel {}\n",
            config.epochs,
            model_path.display()
        );
    } else {
        print!(
            "trained {space}/{aggregation} model: {} attributes x {} features\n\
             epochs={} final_loss={final_loss:.6}\nmodel: {}\n",
            model.attr_dim(),
            model.feat_dim(),
            config.epochs,
            model_path.display()
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, porcelain: bool) -> CmdResult {
    let loaded = io::load_model(&args.model)?;
    let attrs = io::load_attribute_matrix(&args.attributes)?;
    let split = io::load_split(&args.split)?;
    let entries = io::load_manifest(&args.manifest)?;
    let dataset = io::load_samples(&entries, manifest_root(&args.manifest))?;

    let mut human = String::new();
    let mut machine = String::new();
    if matches!(args.mode, ModeArg::Gzsl | ModeArg::Both) {
        let joint = attrs.select(&split.all_classes())?.normalize_rows()?;
        let report = evaluate_gzsl(&loaded.model, &dataset.samples, &joint, &split)?;
        human.push_str(&report.key_value_block());
        machine.push_str(&report.porcelain());
    }
    if matches!(args.mode, ModeArg::Zsl | ModeArg::Both) {
        let unseen = attrs.select(split.unseen_classes())?.normalize_rows()?;
        let samples: Vec<Sample> = match args.mode {
            ModeArg::Zsl => dataset.samples.clone(),
            _ => dataset
                .samples
                .iter()
                .filter(|s| split.is_unseen(&s.class_id))
                .cloned()
                .collect(),
        };
        let acc = evaluate_zsl(&loaded.model, &samples, &unseen)? * 100.0;
        human.push_str(&format!("zsl_acc={acc:.1}\n"));
        machine.push_str(&format!("zsl_acc {acc}\n"));
    }

    print!("{}", if porcelain { &machine } else { &human });
    if let Some(out) = &args.out {
        create_out_dir(out)?;
        write_text(&out.join("report.txt"), &human)?;
        write_text(&out.join("report.porcelain"), &machine)?;
    }
    Ok(())
}

enum SelectSpec {
    All,
    Top(usize),
    Explicit(Vec<usize>),
}

fn parse_select(raw: &str) -> Result<SelectSpec, Failure> {
    if raw == "all" {
        return Ok(SelectSpec::All);
    }
    if let Some(k) = raw.strip_prefix("top:") {
        let k: usize = k
            .parse()
            .map_err(|_| Failure::usage(format!("--select top:K needs an integer K, got '{k}'")))?;
        return Ok(SelectSpec::Top(k));
    }
    let indices: Result<Vec<usize>, _> = raw.split(',').map(|f| f.trim().parse::<usize>()).collect();
    match indices {
        Ok(list) if !list.is_empty() => Ok(SelectSpec::Explicit(list)),
        _ => Err(Failure::usage(format!(
            "--select must be 'all', 'top:K' or comma-separated indices, got '{raw}'"
        ))),
    }
}

fn cmd_export_maps(args: ExportMapsArgs, porcelain: bool) -> CmdResult {
    let spec = parse_select(&args.select)?;
    let loaded = io::load_model(&args.model)?;
    let entries = io::load_manifest(&args.manifest)?;
    let root = manifest_root(&args.manifest).to_path_buf();

    let chosen: Vec<io::ManifestEntry> = match &args.samples {
        None => entries.clone(),
        Some(ids) => {
            let mut picked = Vec::new();
            for id in ids.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let entry = entries
                    .iter()
                    .find(|e| e.sample_id == id)
                    .ok_or_else(|| Failure::from(Error::Contract(format!(
                        "sample id '{id}' not in manifest"
                    ))))?;
                picked.push(entry.clone());
            }
            if picked.is_empty() {
                return Err(Failure::usage("--samples lists no sample ids"));
            }
            picked
        }
    };

    let attrs = match &args.attributes {
        Some(path) => Some(io::load_attribute_matrix(path)?),
        None => None,
    };
    if matches!(spec, SelectSpec::Top(_)) && attrs.is_none() {
        return Err(Failure::usage("top-k selection needs --attributes"));
    }
    let names: Option<Vec<String>> = match &args.names {
        Some(path) => Some(
            fs::read_to_string(path)
                .map_err(|e| Failure::from(Error::file(path, e)))?
                .lines()
                .map(|l| l.trim().to_string())
                .collect(),
        ),
        None => None,
    };

    let mut total_maps = 0usize;
    let mut lines = String::new();
    for entry in &chosen {
        let featmap = io::read_tensor(&root.join(&entry.path))?;
        let selection = match &spec {
            SelectSpec::All => AttributeSelection::All,
            SelectSpec::Explicit(indices) => AttributeSelection::Explicit(indices.clone()),
            SelectSpec::Top(k) => {
                let attrs = attrs.as_ref().unwrap();
                let class = attrs.class_index(&entry.class_id).ok_or_else(|| {
                    Failure::from(Error::Contract(format!(
                        "class '{}' not in the attribute table",
                        entry.class_id
                    )))
                })?;
                AttributeSelection::TopK {
                    k: *k,
                    prototype: attrs.prototype(class).to_vec(),
                }
            }
        };
        let config = HeatmapExportConfig {
            upsample: args.upsample,
            interpolation: args.interpolation.into(),
            selection,
            attribute_names: names.clone(),
        };
        let written =
            export_heatmaps(&featmap, &loaded.model, &entry.sample_id, &config, &args.out)?;
        let maps = written.len() - 1;
        total_maps += maps;
        lines.push_str(&format!("sample {} {maps}\n", entry.sample_id));
    }

    if porcelain {
        println!("{lines}total {total_maps}");
    } else {
        println!(
            "wrote {total_maps} heatmaps for {} samples to {}",
            chosen.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs, porcelain: bool) -> CmdResult {
    let config = SynthConfig {
        seen_classes: args.seen,
        unseen_classes: args.unseen,
        samples_per_class: args.samples_per_class,
        attr_dim: args.attr_dim,
        grid: args.grid,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let output = synth_generate(&args.out, &config)?;
    let echo = format!(
        "seen = {}\nunseen = {}\nsamples_per_class = {}\nattr_dim = {}\ngrid = {}\n\
         noise_sigma = {}\nseed = {}\n",
        config.seen_classes,
        config.unseen_classes,
        config.samples_per_class,
        config.attr_dim,
        config.grid,
        config.noise_sigma,
        config.seed,
    );
    write_text(&args.out.join("config.txt"), &echo)?;

    let classes = config.seen_classes + config.unseen_classes;
    if porcelain {
        print!(
            "oracle_accuracy {}\nclasses {classes}\nsamples {}\n",
            output.oracle_accuracy, output.total_samples
        );
    } else {
        print!(
            "generated {classes} classes ({} seen, {} unseen), {} samples\n\
             oracle_accuracy={:.4}\ndataset: {}\n",
            config.seen_classes,
            config.unseen_classes,
            output.total_samples,
            output.oracle_accuracy,
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs, porcelain: bool) -> CmdResult {
    let spaces: Vec<Space> = if args.space == "all" {
        Space::ALL.to_vec()
    } else {
        vec![args
            .space
            .parse()
            .map_err(|_| Failure::usage(format!("--space must be 'all', 'visual', 'attribute' or 'class', got '{}'", args.space)))?]
    };
    let aggregations: Vec<Aggregation> = if args.aggregation == "all" {
        vec![Aggregation::Gap, Aggregation::Gmp]
    } else {
        vec![args
            .aggregation
            .parse()
            .map_err(|_| Failure::usage(format!("--aggregation must be 'all', 'gap' or 'gmp', got '{}'", args.aggregation)))?]
    };
    for (name, value) in [
        ("--grid", args.grid),
        ("--feat-dim", args.feat_dim),
        ("--attr-dim", args.attr_dim),
        ("--classes", args.classes),
        ("--instances", args.instances),
    ] {
        if value == 0 {
            return Err(Failure::usage(format!("{name} must be at least 1")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (m, d, l, classes) = (args.grid, args.feat_dim, args.attr_dim, args.classes);
    let mut failed = false;
    let mut out = String::new();
    for &space in &spaces {
        for &aggregation in &aggregations {
            let mut worst = 0.0f64;
            let mut kinks = 0usize;
            let mut entries = 0usize;
            for instance in 0..args.instances {
                let attr_data: Vec<f32> =
                    (0..classes * l).map(|_| rng.random_range(0.05f32..1.0)).collect();
                let ids = (0..classes).map(|i| format!("c{i}")).collect();
                let attrs = AttributeMatrix::new(ids, Matrix::new(classes, l, attr_data)?)
                    .map_err(Failure::from)?
                    .normalize_rows()?;
                let weights: Vec<f32> =
                    (0..l * d).map(|_| rng.random_range(-0.5f32..0.5)).collect();
                let bias = (instance % 2 == 1)
                    .then(|| (0..l).map(|_| rng.random_range(-0.1f32..0.1)).collect());
                let model =
                    ProjectionModel::new(Matrix::new(l, d, weights)?, bias, aggregation, space)?;
                let fm_data: Vec<f32> =
                    (0..m * m * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let featmap = Tensor::new(vec![m, m, d], fm_data)?;
                let label = rng.random_range(0..classes);
                let report = grad_check(&model, &featmap, label, &attrs, args.step)?;
                worst = worst.max(report.max_rel_error);
                kinks += report.flagged_kinks;
                entries += report.entries_checked;
            }
            if porcelain {
                out.push_str(&format!(
                    "combo {space} {aggregation} {worst} {kinks} {entries}\n"
                ));
            } else {
                out.push_str(&format!(
                    "space={space} aggregation={aggregation} max_rel_error={worst:.3e} \
                     flagged_kinks={kinks} entries={entries}\n"
                ));
            }
            if worst > GRAD_CHECK_TOLERANCE || entries == 0 {
                failed = true;
            }
        }
    }
    print!("{out}");
    if failed {
        return Err(Failure::check(format!(
            "gradient check failed: relative error above {GRAD_CHECK_TOLERANCE:e}"
        )));
    }
    if !porcelain {
        println!("gradient check passed (tolerance {GRAD_CHECK_TOLERANCE:e})");
    }
    Ok(())
}
