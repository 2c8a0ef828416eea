//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::accounting::{count_added_params, resnet50_catalog};
use crate::error::{Error, Result};
use crate::harness::config::Settings;
use crate::harness::dataset::{self, Split};
use crate::harness::model::ToyNet;
use crate::harness::sweep::{all_cells, grid_csv, run_ablation, run_grid, summarize, GridSpec};
use crate::harness::train::{evaluate, train_one, DataBank, MetricRow, MetricsReport};
use crate::module::named_tensors;
use crate::numerics::checkpoint;
use crate::viz::{extract_prior_map, gaussian_filter, reds_colormap, write_ppm};

#[derive(Debug, Parser)]
#[command(name = "loasp", version, about = "Low-rank structural prior blocks: training, ablations, accounting and prior maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` and LOASP_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` overrides, applied after the config file.
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write every domain split as an LODG1 dataset file.
    GenData(Common),
    /// Train each held-out domain and seed; writes metrics, losses and checkpoints.
    Train(Common),
    /// Re-evaluate the checkpoints of a finished training run.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train all nine priors x fusion cells.
    Ablate(Common),
    /// One-at-a-time sweep of r, p and u.
    Grid {
        /// Comma-separated rank values.
        #[arg(long, default_value = "1,2,4,8,16")]
        r: String,
        /// Comma-separated spline degrees.
        #[arg(long, default_value = "0,1,2,3,4")]
        p: String,
        /// Comma-separated spline grid sizes.
        #[arg(long, default_value = "3,4,5,6,7")]
        u: String,
        #[command(flatten)]
        common: Common,
    },
    /// Parameter and FLOP accounting over the ResNet-50 block catalog.
    Count {
        /// Also write the table to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render the prior map of one block as a PPM image.
    Viz {
        /// Checkpoint to load; a freshly initialized model is used otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output image path.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn settings(common: &Common) -> Result<Settings> {
    Settings::load(common.config.as_deref(), &common.overrides)
}

/// `--out`, then the `out` key, then `LOASP_OUT`, then `runs`.
fn output_dir(common: &Common, s: &Settings) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| s.out.clone())
        .or_else(|| std::env::var_os("LOASP_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_values(flag: &str, list: &str) -> Result<Vec<usize>> {
    if list.trim().is_empty() {
        return Ok(Vec::new());
    }
    list.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--{flag}: invalid value `{v}`")))
        })
        .collect()
}

fn checkpoint_path(dir: &Path, pivot: &str, seed: u64) -> PathBuf {
    dir.join(format!("model-{pivot}-s{seed}.ckpt"))
}

fn print_summary(label: &str, report: &MetricsReport) {
    if let Some((acc, f1, auc)) = summarize(report) {
        println!("{label}: acc {acc:.4}  macro_f1 {f1:.4}  macro_auc {auc:.4}");
    }
}

fn cmd_train(common: &Common) -> Result<()> {
    let s = settings(common)?;
    s.run.validate()?;
    let dir = output_dir(common, &s);
    let bank = DataBank::generate(&s.run)?;
    let mut report = MetricsReport::default();
    for pivot in &s.run.pivots {
        for &seed in &s.run.seeds {
            let outcome = train_one(&s.run, &bank, pivot, seed)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            checkpoint::save(&checkpoint_path(&dir, pivot, seed), &named_tensors(&outcome.model, None))?;
            print_summary(&format!("{pivot} seed {seed}"), &outcome.report);
            report.extend(outcome.report);
        }
    }
    report.write(&dir)?;
    write(&dir.join("config.txt"), s.to_text().as_bytes())?;
    print_summary(&s.run.cell_name(), &report);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_eval(run: &Path, common: &Common) -> Result<()> {
    let cfg = run.join("config.txt");
    let mut s = Settings::load(Some(&cfg), &[])?;
    for o in &common.overrides {
        s.apply(o)?;
    }
    let bank = DataBank::generate(&s.run)?;
    let mut report = MetricsReport::default();
    let ids = s.run.domain_ids();
    for pivot in &s.run.pivots {
        let split = crate::harness::build_protocol(&ids, s.run.mode, pivot)?;
        for &seed in &s.run.seeds {
            let model = ToyNet::new(&s.run.model, seed)?;
            checkpoint::load_into(&checkpoint_path(run, pivot, seed), &named_tensors(&model, None))?;
            for d in &split.test {
                let e = evaluate(&model, bank.get(d, Split::Test)?, s.run.batch_size)?;
                report.metrics.push(MetricRow {
                    run_id: format!("{}-{}-{pivot}-s{seed}", s.run.cell_name(), s.run.mode),
                    seed,
                    protocol: s.run.mode,
                    held_out: pivot.clone(),
                    epoch: s.run.epochs,
                    split: format!("test:{d}"),
                    acc: e.acc,
                    macro_f1: e.macro_f1,
                    macro_auc: e.macro_auc,
                });
            }
        }
    }
    let dir = common.out.clone().unwrap_or_else(|| run.to_path_buf());
    write(&dir.join("eval.csv"), &report.metrics_csv()?)?;
    print_summary("eval", &report);
    Ok(())
}

fn cmd_gen_data(common: &Common) -> Result<()> {
    let s = settings(common)?;
    let dir = output_dir(common, &s).join("data");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, d) in s.run.domains.iter().enumerate() {
        for (split, n) in [(Split::Train, s.run.n_train), (Split::Test, s.run.n_test)] {
            let samples =
                dataset::generate_split(s.run.data_seed, d, i, split, n, s.run.model.image_size, s.run.threads)?;
            let path = dir.join(format!("{}-{}.lodg", d.id, split.name()));
            dataset::save(&path, &samples)?;
            println!("{} ({} samples)", path.display(), samples.len());
        }
    }
    Ok(())
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let s = settings(common)?;
    s.run.validate()?;
    let dir = output_dir(common, &s);
    let bank = DataBank::generate(&s.run)?;
    let mut failure = None;
    let report = run_ablation(&s.run, &bank, &all_cells(), &[], |(p, f), r| {
        print_summary(&format!("{p}+{f}"), r);
        if let Err(e) = r.write(&dir.join(format!("{p}-{f}"))) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    write(&dir.join("ablation.csv"), &report.summary_csv()?)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_grid(r: &str, p: &str, u: &str, common: &Common) -> Result<()> {
    let s = settings(common)?;
    s.run.validate()?;
    let spec = GridSpec {
        r: parse_values("r", r)?,
        p: parse_values("p", p)?,
        u: parse_values("u", u)?,
    };
    let bank = DataBank::generate(&s.run)?;
    let rows = run_grid(&s.run, &bank, &spec)?;
    let csv = grid_csv(&rows)?;
    write(&output_dir(common, &s).join("grid.csv"), &csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn cmd_count(csv: Option<&Path>, common: &Common) -> Result<()> {
    let s = settings(common)?;
    let report = count_added_params(&resnet50_catalog(), &s.run.model.block)?;
    let table = report.to_csv();
    print!("{table}");
    if let Some(path) = csv {
        write(path, table.as_bytes())?;
    }
    Ok(())
}

fn cmd_viz(ckpt: Option<&Path>, output: Option<&Path>, common: &Common) -> Result<()> {
    let s = settings(common)?;
    let seed = *s.run.seeds.first().ok_or_else(|| Error::Config("seeds must not be empty".into()))?;
    let model = ToyNet::new(&s.run.model, seed)?;
    if let Some(path) = ckpt {
        checkpoint::load_into(path, &named_tensors(&model, None))?;
    }
    let pivot = s.run.pivots.first().ok_or_else(|| Error::Config("held_out is empty".into()))?;
    let (index, domain) = s
        .run
        .domains
        .iter()
        .enumerate()
        .find(|(_, d)| &d.id == pivot)
        .ok_or_else(|| Error::Config(format!("unknown domain `{pivot}`")))?;
    let sample = dataset::generate_split(s.run.data_seed, domain, index, Split::Test, s.viz.image + 1, s.run.model.image_size, 1)?
        .pop()
        .expect("at least one sample");
    let image = crate::harness::train::batch_tensor(&[&sample])?;
    let map = extract_prior_map(&model, &image, s.viz.block)?;
    let map = gaussian_filter(&map, s.viz.sigma)?;
    let scale = (s.run.model.image_size / map.w.max(1)).max(1);
    let img = reds_colormap(&map.upscale(scale))?;
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| output_dir(common, &s).join(format!("prior-block{}.ppm", s.viz.block)));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_ppm(&img, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(c) => cmd_gen_data(c),
        Command::Train(c) => cmd_train(c),
        Command::Eval { run, common } => cmd_eval(run, common),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Grid { r, p, u, common } => cmd_grid(r, p, u, common),
        Command::Count { csv, common } => cmd_count(csv.as_deref(), common),
        Command::Viz {
            checkpoint,
            output,
            common,
        } => cmd_viz(checkpoint.as_deref(), output.as_deref(), common),
    }
}
