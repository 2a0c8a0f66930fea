use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kinenet::dataset::{build_dataset, AugmentationGrid, BuildOptions, Manifest, Split, SplitMode};
use kinenet::interpret::{class_activation_heatmap, intermediate_activations, maximize_filter, overlay, AscentConfig, CamSource};
use kinenet::nn::{load_checkpoint, AdamConfig, LayerSpec, Model};
use kinenet::trainer::{evaluate, Trainer, TrainConfig};
use kinenet::{builtin_catalog, classify_stability, parse_structure, render, serialize_structure, Catalog, RenderStyle, RgbImage, Structure};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(io::stdout(), $($arg)*)?
    };
}

/// Kinematic analysis of plane bar structures, by rank test and by a small CNN.
#[derive(Debug, Parser)]
#[command(name = "kinenet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify a structure file as stable, unstable or instantaneously unstable.
    Analyze {
        /// Structure JSON file.
        file: PathBuf,
        /// Print the full verdict as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write the built-in structures as JSON files.
    Catalog {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Which part of the catalog to write.
        #[arg(long, value_enum, default_value_t = Part::All)]
        part: Part,
        /// Also write a full-scale render of each structure.
        #[arg(long, value_enum, default_value_t = ImageFormat::None)]
        images: ImageFormat,
    },
    /// Render, augment and split a catalog into a PNG dataset with a manifest.
    GenDataset(GenArgs),
    /// Train the image classifier on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Write the feature maps of convolution layers for one input.
    VizActivations(ActivationArgs),
    /// Synthesize inputs that maximally excite convolution filters.
    VizFilter(FilterArgs),
    /// Write a class-activation heatmap overlay for one input.
    VizCam(CamArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    Training,
    Holdout,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImageFormat {
    None,
    Png,
    /// Uncompressed binary PPM, for debugging.
    Ppm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridChoice {
    /// 9 scales x 9 rotations x 9 offsets.
    Full,
    /// 3 x 3 x 3 subsample.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    ByImage,
    ByStructure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
    Holdout,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Val => Split::Val,
            SplitName::Test => Split::Test,
            SplitName::Holdout => Split::Holdout,
        }
    }
}

#[derive(Debug, Args)]
struct StyleArgs {
    /// Bar stroke width in pixels.
    #[arg(long, default_value_t = 3.0)]
    bar_width: f64,
    /// Hinge disk radius in pixels.
    #[arg(long, default_value_t = 5.0)]
    hinge_radius: f64,
    /// Blank margin on each side, as a fraction of the image size.
    #[arg(long, default_value_t = 0.12)]
    margin: f64,
}

impl StyleArgs {
    fn style(&self) -> RenderStyle {
        RenderStyle {
            bar_width: self.bar_width,
            hinge_radius: self.hinge_radius,
            margin_fraction: self.margin,
            ..RenderStyle::default()
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output directory (images and manifest.csv).
    #[arg(long)]
    out: PathBuf,
    /// Seed for the train/val/test shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GridChoice::Full)]
    grid: GridChoice,
    #[arg(long, value_enum, default_value_t = SplitChoice::ByImage)]
    split: SplitChoice,
    /// Catalog part to include.
    #[arg(long, value_enum, default_value_t = Part::All)]
    part: Part,
    /// Comma-separated structure names to keep (default: all in the part).
    #[arg(long, value_delimiter = ',')]
    structures: Vec<String>,
    /// Extra structure JSON files added to the training part.
    #[arg(long = "structure-file")]
    structure_files: Vec<PathBuf>,
    /// Rendering threads (output is identical for any value).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    style: StyleArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Directory for checkpoints and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: u32,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    /// Seed for weight init, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Continue from this checkpoint (epochs counts additional epochs).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write 0 in the seconds column so metrics are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    /// Evaluation threads (results are identical for any value).
    #[arg(long)]
    jobs: Option<usize>,
    /// Write per-sample predictions to this CSV file.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A 256x256 PNG, or a structure JSON file rendered at full scale.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ActivationArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Convolution layer indices (default: every convolution).
    #[arg(long, value_delimiter = ',')]
    layer: Vec<usize>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Convolution layer index.
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Filter indices (default: every filter of the layer).
    #[arg(long, value_delimiter = ',')]
    filter: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    steps: usize,
    #[arg(long, default_value_t = 10.0 / 255.0)]
    step_size: f64,
    /// Seed for the random starting image.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CamArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Use the pooled 4x4 map instead of the 8x8 convolution output.
    #[arg(long)]
    post_pool: bool,
    /// Name used in the output file (default: input file stem).
    #[arg(long)]
    name: Option<String>,
}

fn read_structure(path: &Path) -> Result<Structure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_structure(&text).with_context(|| format!("{}", path.display()))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint::<f32>(path)?.0)
}

fn load_input(path: &Path) -> Result<RgbImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let s = read_structure(path)?;
        Ok(render(&s, 1.0, &RenderStyle::default()).with_context(|| format!("rendering {}", path.display()))?)
    } else {
        Ok(RgbImage::read_png(path)?)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?.install(f)),
        None => Ok(f()),
    }
}

fn analyze(file: &Path, json: bool) -> Result<()> {
    let s = read_structure(file)?;
    let v = classify_stability(&s);
    if json {
        out!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    out!("{}", v.classification.as_str());
    out!("nullity_given: {}", v.nullity_given);
    out!("nullity_generic: {}", v.nullity_generic);
    out!("mechanism_dof: {}", v.mechanism_dof);
    out!("connected: {}", v.connected);
    out!("bodies: {}", v.bodies);
    out!("constraints: {}", v.constraints);
    let pendant = s.pendant_joints();
    if !pendant.is_empty() {
        let ids: Vec<String> = pendant.iter().map(u32::to_string).collect();
        out!("pendant joints: {}", ids.join(", "));
    }
    Ok(())
}

fn select_part(catalog: Catalog, part: Part) -> Catalog {
    match part {
        Part::All => catalog,
        Part::Training => Catalog {
            holdout_examples: Vec::new(),
            ..catalog
        },
        Part::Holdout => Catalog {
            training_examples: Vec::new(),
            ..catalog
        },
    }
}

fn write_catalog(out: &Path, part: Part, images: ImageFormat) -> Result<()> {
    create_dir(out)?;
    let catalog = select_part(builtin_catalog(), part);
    for e in catalog.all() {
        let path = out.join(format!("{}.json", e.name()));
        write_text(&path, &serialize_structure(&e.structure))?;
        if images != ImageFormat::None {
            let img = render(&e.structure, 1.0, &RenderStyle::default())?;
            match images {
                ImageFormat::Png => img.write_png(&out.join(format!("{}.png", e.name())))?,
                ImageFormat::Ppm => img.write_ppm(&out.join(format!("{}.ppm", e.name())))?,
                ImageFormat::None => {}
            }
        }
    }
    out!("wrote {} structures to {}", catalog.all().count(), out.display());
    Ok(())
}

fn gen_dataset(a: &GenArgs) -> Result<()> {
    let mut catalog = select_part(builtin_catalog(), a.part);
    if !a.structures.is_empty() {
        for name in &a.structures {
            if catalog.find(name).is_none() {
                bail!("unknown structure `{name}`");
            }
        }
        let keep = |v: Vec<kinenet::CatalogEntry>| v.into_iter().filter(|e| a.structures.iter().any(|n| n == e.name())).collect();
        catalog.training_examples = keep(catalog.training_examples);
        catalog.holdout_examples = keep(catalog.holdout_examples);
    }
    for path in &a.structure_files {
        let structure = read_structure(path)?;
        let verdict = classify_stability(&structure);
        catalog.training_examples.push(kinenet::CatalogEntry {
            intended_stable: kinenet::binary_label(&verdict) == 0,
            structure,
        });
    }
    let grid = match a.grid {
        GridChoice::Full => AugmentationGrid::full(),
        GridChoice::Desk => AugmentationGrid::desk(),
    };
    let options = BuildOptions {
        split_mode: match a.split {
            SplitChoice::ByImage => SplitMode::ByImage,
            SplitChoice::ByStructure => SplitMode::ByStructure,
        },
        jobs: a.jobs,
    };
    let m = build_dataset(&catalog, &grid, &a.style.style(), a.seed, &a.out, options)?;
    out!(
        "{} images: train {}, val {}, test {}, holdout {}",
        m.samples.len(),
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test),
        m.count(Split::Holdout)
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let manifest = Manifest::read(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size as usize,
        seed: a.seed,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        checkpoint_dir: Some(a.out.clone()),
        metrics_path: Some(a.out.join("metrics.csv")),
        record_timing: !a.no_timing,
    };
    let mut trainer = match &a.resume {
        Some(ck) => {
            let t = Trainer::resume(ck, &manifest, cfg)?;
            if !t.is_exact_resume() {
                eprintln!("warning: no optimizer state next to {}; Adam moments restart from zero", ck.display());
            }
            t
        }
        None => Trainer::new(Model::table1(a.seed), &manifest, cfg)?,
    };
    for _ in 0..a.epochs {
        let r = trainer.run_epoch()?;
        out!(
            "epoch {}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let manifest = Manifest::read(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    let split = Split::from(a.split);
    let ev = with_jobs(a.jobs, || evaluate(&model, &manifest, split, a.batch_size as usize))??;
    out!("{split}: {} samples, loss {:.6}, accuracy {:.4}", ev.predictions.len(), ev.loss, ev.accuracy);
    if let Some(path) = &a.predictions {
        let mut s = String::from("path,label,probability,predicted\n");
        for p in &ev.predictions {
            let _ = writeln!(s, "{},{},{},{}", p.path.display(), p.label, p.probability, p.predicted);
        }
        write_text(path, &s)?;
    }
    Ok(())
}

fn viz_activations(a: &ActivationArgs) -> Result<()> {
    let model = load_model(&a.io.checkpoint)?;
    let image = load_input(&a.io.input)?;
    create_dir(&a.io.out)?;
    let layers = if a.layer.is_empty() { model.architecture().conv_layers() } else { a.layer.clone() };
    let mut meta = String::new();
    for layer in layers {
        let sheet = intermediate_activations(&model, &image, layer)?;
        let name = format!("activations_L{layer}.png");
        sheet.stitched().write_png(&a.io.out.join(&name))?;
        let means: Vec<String> = sheet.channel_means.iter().map(|m| format!("{m}")).collect();
        let _ = writeln!(meta, "file={name} layer={layer} channels={} channel_means={}", sheet.channels(), means.join(";"));
    }
    write_text(&a.io.out.join("activations.txt"), &meta)
}

fn viz_filter(a: &FilterArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    create_dir(&a.out)?;
    let count = match model.layers().get(a.layer).map(|l| l.spec) {
        Some(LayerSpec::Conv2D { filters, .. }) => filters,
        _ => bail!("layer {} is not a convolution", a.layer),
    };
    let filters: Vec<usize> = if a.filter.is_empty() { (0..count).collect() } else { a.filter.clone() };
    let cfg = AscentConfig {
        steps: a.steps,
        step_size: a.step_size,
        seed: a.seed,
    };
    let mut meta = String::new();
    for f in filters {
        let p = maximize_filter(&model, a.layer, f, cfg)?;
        let name = format!("filter_L{}_F{f}.png", a.layer);
        p.image.write_png(&a.out.join(&name))?;
        let _ = writeln!(
            meta,
            "file={name} layer={} filter={f} steps={} step_size={} seed={} initial_score={} final_score={} dead={}",
            a.layer,
            a.steps,
            a.step_size,
            a.seed,
            p.initial_score(),
            p.final_score(),
            p.dead
        );
        if p.dead {
            eprintln!("filter {f} of layer {} has all-zero weights", a.layer);
        }
    }
    write_text(&a.out.join(format!("filters_L{}.txt", a.layer)), &meta)
}

fn viz_cam(a: &CamArgs) -> Result<()> {
    let model = load_model(&a.io.checkpoint)?;
    let image = load_input(&a.io.input)?;
    create_dir(&a.io.out)?;
    let source = if a.post_pool { CamSource::PostPool } else { CamSource::PrePool };
    let hm = class_activation_heatmap(&model, &image, source)?;
    let name = a.name.clone().unwrap_or_else(|| {
        a.io.input.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
    });
    let file = format!("cam_{name}.png");
    overlay(&image, &hm.upsampled)?.write_png(&a.io.out.join(&file))?;
    let grid: Vec<String> = hm.grid.iter().map(|v| format!("{v}")).collect();
    let meta = format!(
        "file={file} class={} probability={} source={} grid={}x{} grid_values={}\n",
        hm.class,
        hm.probability,
        if a.post_pool { "post-pool" } else { "pre-pool" },
        hm.grid_h,
        hm.grid_w,
        grid.join(";")
    );
    write_text(&a.io.out.join(format!("cam_{name}.txt")), &meta)?;
    out!("class {} (p = {:.4})", hm.class, hm.probability);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze { file, json } => analyze(&file, json),
        Command::Catalog { out, part, images } => write_catalog(&out, part, images),
        Command::GenDataset(a) => gen_dataset(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::VizActivations(a) => viz_activations(&a),
        Command::VizFilter(a) => viz_filter(&a),
        Command::VizCam(a) => viz_cam(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe))
}
