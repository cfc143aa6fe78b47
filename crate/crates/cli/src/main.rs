//! `shapeasm`: dataset generation, training, evaluation and rendering.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::FileConfig;
use shape_assembly::baselines::{BoConfig, SaConfig};
use shape_assembly::env::{read_rollout_log, replay, write_rollout_log};
use shape_assembly::eval::{evaluate, Method};
use shape_assembly::fan::Fan;
use shape_assembly::files::write_atomic;
use shape_assembly::fragmenter::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig, Episode, Scenario, Split, TargetShape};
use shape_assembly::geometry::CutMode;
use shape_assembly::metrics::{write_records, write_report, ReportRow};
use shape_assembly::ndnum::{read_checkpoint, write_checkpoint};
use shape_assembly::render;
use shape_assembly::train::{expand, train, write_history};

#[derive(Parser)]
#[command(name = "shapeasm", version, about = "Geometric shape assembly workbench")]
struct Cli {
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fragment target shapes into a dataset directory.
    Generate(GenerateArgs),
    /// Train the assembly network on a dataset.
    Train(TrainArgs),
    /// Assemble a dataset split with one or more methods and report metrics.
    Eval(EvalArgs),
    /// Render the frames of a logged rollout.
    Render(RenderArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Random,
    AxisAligned,
}

impl From<ModeArg> for CutMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Random => CutMode::Random,
            ModeArg::AxisAligned => CutMode::AxisAligned,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Fan,
    Sa,
    Bo,
    Oracle,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    shape: TargetShape,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated list of methods.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    method: Vec<MethodArg>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Grid stride of the greedy oracle, in pixels.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record zero wall time so reports are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Rollout log CSV written by `eval`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    episode: usize,
    #[arg(long)]
    out: PathBuf,
    /// Pixels per raster cell.
    #[arg(long, default_value_t = 8)]
    scale: usize,
    /// Also write PNG copies.
    #[arg(long)]
    png: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a, file),
        Cmd::Train(a) => cmd_train(a, file),
        Cmd::Eval(a) => cmd_eval(a, file),
        Cmd::Render(a) => cmd_render(a),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes `out/config.json` with the subcommand, its arguments and the
/// effective settings.
fn echo_config(out: &Path, command: &str, args: &impl Serialize, effective: &impl Serialize) -> Result<()> {
    let v = serde_json::json!({ "command": command, "args": args, "effective": effective });
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    write(&out.join("config.json"), text.as_bytes())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn cmd_generate(a: GenerateArgs, file: FileConfig) -> Result<()> {
    let g = &file.generate;
    let cfg = DatasetConfig {
        shape: a.shape,
        n_samples: a.n.unwrap_or(g.n),
        k: a.k.unwrap_or(g.k),
        num_bins: a.bins.unwrap_or(g.bins),
        mode: a.mode.map(CutMode::from).unwrap_or(a.shape.default_mode()),
        scenario: a.scenario.unwrap_or(g.scenario),
        resolution: a.resolution.unwrap_or(g.resolution),
        seed: a.seed.unwrap_or(g.seed),
    };
    let ds = generate_dataset(&cfg)?;
    mkdir(&a.out)?;
    write_dataset(&a.out, &ds).with_context(|| format!("writing dataset {}", a.out.display()))?;
    echo_config(&a.out, "generate", &a, &cfg)?;
    let count = |s| ds.split_ids(s).len();
    println!(
        "wrote {} episodes to {}: train {} / val {} / test {}",
        ds.episodes.len(),
        a.out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, file: FileConfig) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let mut fan_cfg = file.fan.clone();
    fan_cfg.resolution = ds.config.resolution;
    fan_cfg.num_bins = ds.config.num_bins;
    let mut tc = file.train.clone();
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if a.max_steps.is_some() {
        tc.max_steps = a.max_steps;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
        fan_cfg.seed = s;
    }
    let train_set = expand(ds.split(Split::Train), tc.seed)?;
    let val_set = expand(ds.split(Split::Val), tc.seed)?;
    if train_set.is_empty() && tc.epochs > 0 {
        bail!("dataset {} has no training episodes", a.dataset.display());
    }
    let model = Fan::new(fan_cfg.clone())?;
    let out = train(model, &train_set, &val_set, &tc)?;
    mkdir(&a.out)?;
    write_checkpoint(&a.out.join("checkpoint.bin"), &out.best.to_checkpoint()).context("writing checkpoint")?;
    write_checkpoint(&a.out.join("last.bin"), &out.last.to_checkpoint()).context("writing checkpoint")?;
    let mut log = Vec::new();
    write_history(&mut log, &out.history)?;
    write(&a.out.join("train_log.csv"), &log)?;
    echo_config(&a.out, "train", &a, &serde_json::json!({ "fan": fan_cfg, "train": tc }))?;
    match out.history.last() {
        Some(h) => println!(
            "trained {} steps over {} epochs; train loss {:.4}, val loss {:.4}, val selection accuracy {:.3}",
            out.steps, h.epoch, h.train_loss, h.val_loss, h.val_select_acc
        ),
        None => println!("wrote initial checkpoint (no training steps)"),
    }
    Ok(())
}

fn eval_split(ds: &Dataset, split: SplitArg) -> Vec<&Episode> {
    let pick = |s| ds.split(s).collect::<Vec<_>>();
    match split {
        SplitArg::Train => pick(Split::Train),
        SplitArg::Val => pick(Split::Val),
        SplitArg::Test => pick(Split::Test),
        SplitArg::All => ds.episodes.iter().collect(),
    }
}

fn cmd_eval(a: EvalArgs, file: FileConfig) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let split = a.split.unwrap_or(file.eval.split);
    let episodes = eval_split(&ds, split);
    if episodes.is_empty() {
        bail!("no episodes in the requested split");
    }
    let seed = a.seed.unwrap_or(file.eval.seed);
    let sa = SaConfig { seed, ..file.sa.clone() };
    let bo = BoConfig { seed, ..file.bo.clone() };
    let stride = a.stride.unwrap_or(file.eval.stride);
    let mut methods = Vec::new();
    for m in &a.method {
        methods.push(match m {
            MethodArg::Fan => {
                let path = a.checkpoint.as_ref().context("--checkpoint is required for the fan method")?;
                let model = Fan::from_checkpoint(read_checkpoint(path).with_context(|| format!("reading {}", path.display()))?)?;
                let (r, b) = (model.config.resolution, model.config.num_bins);
                if r != ds.config.resolution || b != ds.config.num_bins {
                    bail!("checkpoint is {r}x{r} with {b} bins but the dataset is {0}x{0} with {1} bins", ds.config.resolution, ds.config.num_bins);
                }
                Method::Fan(Box::new(model))
            }
            MethodArg::Sa => Method::Sa(sa.clone()),
            MethodArg::Bo => Method::Bo(bo.clone()),
            MethodArg::Oracle => Method::Oracle { stride },
            MethodArg::Random => Method::Random { seed },
        });
    }
    mkdir(&a.out)?;
    let mut rows = Vec::new();
    for m in &methods {
        let results = evaluate(m, &episodes, !a.no_timing)?;
        let records: Vec<_> = results.iter().map(|r| r.record.clone()).collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &records)?;
        write(&a.out.join(format!("records_{}.csv", m.name())), &buf)?;
        let dir = a.out.join("rollouts").join(m.name());
        mkdir(&dir)?;
        for r in &results {
            let mut buf = Vec::new();
            write_rollout_log(&mut buf, &r.log)?;
            write(&dir.join(format!("{:06}.csv", r.record.episode_id)), &buf)?;
        }
        rows.push(ReportRow::aggregate(m.name(), ds.config.shape.as_str(), &records)?);
    }
    let mut buf = Vec::new();
    write_report(&mut buf, &rows)?;
    write(&a.out.join("report.csv"), &buf)?;
    let effective = serde_json::json!({ "split": split, "seed": seed, "stride": stride, "sa": sa, "bo": bo });
    echo_config(&a.out, "eval", &a, &effective)?;
    print!("{}", String::from_utf8_lossy(&buf));
    if a.method.contains(&MethodArg::Sa) {
        println!("sa budget: {} iterations per fragment", sa.iters_per_fragment);
    }
    if a.method.contains(&MethodArg::Bo) {
        println!("bo budget: {} evaluations per fragment and bin", bo.evals);
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let ep = ds.episodes.iter().find(|e| e.id == a.episode).with_context(|| format!("episode {} not in dataset", a.episode))?;
    let log = read_rollout_log(fs::File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?)?;
    let states = replay(ep, &log)?;
    mkdir(&a.out)?;
    for (k, s) in states.iter().enumerate() {
        let (w, h, px) = render::frame(s, a.scale);
        write(&a.out.join(format!("frame_{k:03}.pgm")), &render::pgm(w, h, &px))?;
        if a.png {
            write(&a.out.join(format!("frame_{k:03}.png")), &png(w, h, image::ColorType::L8, &px)?)?;
        }
    }
    let (w, h, rgb) = render::composite(&states, a.scale);
    write(&a.out.join("composite.ppm"), &render::ppm(w, h, &rgb))?;
    if a.png {
        write(&a.out.join("composite.png"), &png(w, h, image::ColorType::Rgb8, &rgb)?)?;
    }
    println!("wrote {} frames to {}", states.len(), a.out.display());
    Ok(())
}

fn png(w: usize, h: usize, color: image::ColorType, px: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::ImageEncoder::write_image(image::codecs::png::PngEncoder::new(&mut out), px, w as u32, h as u32, color.into())?;
    Ok(out)
}
