//! Command-line front end for the shift-network library.
//!
//! One verb per invocation: `describe`, `cost`, `rf`, `gradcheck`,
//! `shift-demo`, or `train`. Exit codes: 0 on success, 1 on runtime
//! failures (and on a failed gradient check), 2 on usage errors.
//! Machine-readable `key=value` lines keep a fixed key order so
//! scripts can parse them without a header.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shiftnet::cost::{block_receptive_field, count, CostOptions, CostReport};
use shiftnet::data::{load_manifest_dir, synthetic_dataset, Dataset};
use shiftnet::gradcheck::{gradcheck_spec, GradCheckOptions};
use shiftnet::graph::Network;
use shiftnet::netspec::config::load_config;
use shiftnet::netspec::{build, builtin_names, builtin_spec, NetworkSpec};
use shiftnet::shift::{build_plan, shift_forward, NeighborhoodKind};
use shiftnet::tensor::io::{load_tensor, save_tensor};
use shiftnet::train::{save_checkpoint, train_loop, write_history, TrainConfig};

#[derive(Parser)]
#[command(name = "shiftnet", version, about = "Shift-based residual networks: describe, count, check, and train them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the network description comes from: a built-in name or a
/// config file. Exactly one must be given.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct SpecSource {
    /// One of the built-in architectures; pass an unknown name to
    /// see the catalog.
    #[arg(long)]
    builtin: Option<String>,
    /// Path to a network config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl SpecSource {
    fn resolve(&self) -> Result<NetworkSpec> {
        match (&self.builtin, &self.config) {
            (Some(name), None) => Ok(builtin_spec(name)?),
            (None, Some(path)) => Ok(load_config(path)?),
            // The arg group guarantees exactly one is present.
            _ => unreachable!("clap enforces the builtin/config group"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the architecture as a table of blocks.
    Describe {
        /// One of the built-in architectures; pass an unknown name to
        /// see the catalog.
        #[arg(
            long,
            group = "describe-source",
            required_unless_present_any = ["config", "list"],
            conflicts_with = "list"
        )]
        builtin: Option<String>,
        /// Path to a network config file.
        #[arg(long, group = "describe-source", conflicts_with = "list")]
        config: Option<PathBuf>,
        /// List the built-in architecture names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Count parameters and multiply-accumulates.
    Cost {
        #[command(flatten)]
        source: SpecSource,
        /// Print only the machine-readable `key=value` lines.
        #[arg(long)]
        machine: bool,
        /// Override the input resolution.
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        resolution: Option<Vec<usize>>,
        /// Itemize batchnorm arithmetic in the FLOP totals.
        #[arg(long)]
        include_bn_flops: bool,
        /// Itemize pooling arithmetic in the FLOP totals.
        #[arg(long)]
        include_pool_flops: bool,
    },
    /// Draw the theoretical receptive field of one block.
    Rf {
        #[command(flatten)]
        source: SpecSource,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        source: SpecSource,
        /// Pass threshold for the worst relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Central difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Seeds the parameters, the probe input, and the sampled
        /// coordinates.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply one shift layer to a tensor file.
    #[command(name = "shift-demo")]
    ShiftDemo {
        /// Offset pattern: 8c, 4c, 8c-no, 4c-no, or none.
        #[arg(long)]
        neighborhood: String,
        /// Input tensor file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the shifted tensor.
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Train a network with momentum SGD.
    Train {
        #[command(flatten)]
        source: SpecSource,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        /// Initial learning rate.
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Weight decay on conv and fc weights.
        #[arg(long, default_value_t = 1e-4)]
        wd: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Batch size.
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Seeds parameters, shuffling, and synthetic data.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Epochs between tenfold learning-rate drops; 0 keeps the
        /// rate constant.
        #[arg(long, default_value_t = 0)]
        lr_step: usize,
        /// `synthetic` or a directory containing manifest.tsv.
        #[arg(long, default_value = "synthetic")]
        data: String,
        /// Samples per class when --data is synthetic.
        #[arg(long, default_value_t = 16)]
        samples_per_class: usize,
        /// Noise level of the synthetic data.
        #[arg(long, default_value_t = 0.25)]
        noise: f32,
        /// Apply random-resized-crop augmentation.
        #[arg(long)]
        augment: bool,
        /// Write the epoch history as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save the trained network when done.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, which turns `shiftnet ... |
    // head` into a panic on the first write after the pipe closes.
    // Restore the conventional quiet death.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Describe {
            builtin,
            config,
            list,
        } => {
            if list {
                for name in builtin_names() {
                    println!("{name}");
                }
                return Ok(ExitCode::SUCCESS);
            }
            describe(&SpecSource { builtin, config }.resolve()?)?;
        }
        Command::Cost {
            source,
            machine,
            resolution,
            include_bn_flops,
            include_pool_flops,
        } => {
            let mut spec = source.resolve()?;
            if let Some(res) = resolution {
                spec.input.height = res[0];
                spec.input.width = res[1];
            }
            let opts = CostOptions {
                include_bn_flops,
                include_pool_flops,
            };
            let report = count(&spec, &opts)?;
            if !machine {
                print_cost_table(&spec, &report);
            }
            println!("params={}", report.total_params);
            println!("flops={}", report.total_flops);
        }
        Command::Rf { source } => {
            let spec = source.resolve()?;
            let field = block_receptive_field(spec.kind, spec.neighborhood);
            println!(
                "block kind {}, neighborhood {}",
                spec.kind.token(),
                spec.neighborhood.token()
            );
            print!("{}", field.ascii_grid());
            println!("rf_size={}", field.len());
        }
        Command::Gradcheck {
            source,
            tol,
            step,
            seed,
        } => {
            let spec = source.resolve()?;
            let opts = GradCheckOptions {
                tolerance: tol,
                step,
                seed,
                ..GradCheckOptions::default()
            };
            let report = gradcheck_spec(&spec, &opts)?;
            println!(
                "{}: probed {} coordinates across every parameter buffer and the input",
                spec.name,
                report.samples.len()
            );
            if let Some(worst) = report.worst() {
                println!(
                    "worst coordinate {}[{}]: analytic {:e}, numeric {:e}",
                    worst.buffer, worst.index, worst.analytic, worst.numeric
                );
            }
            println!("max_rel_err={:e}", report.max_rel_err);
            println!("tolerance={:e}", report.tolerance);
            if !report.passed() {
                println!("result: fail");
                return Ok(ExitCode::FAILURE);
            }
            println!("result: pass");
        }
        Command::ShiftDemo {
            neighborhood,
            input,
            output,
        } => {
            let kind = NeighborhoodKind::parse_token(&neighborhood)?;
            let x = load_tensor(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let plan = build_plan(x.shape().c, kind)?;
            let y = shift_forward(&x, &plan)?;
            save_tensor(&output, &y)
                .with_context(|| format!("writing {}", output.display()))?;
            println!(
                "shifted {} channels over {}: {} -> {}",
                x.shape().c,
                kind.token(),
                input.display(),
                output.display()
            );
        }
        Command::Train {
            source,
            epochs,
            lr,
            wd,
            momentum,
            batch,
            seed,
            lr_step,
            data,
            samples_per_class,
            noise,
            augment,
            out,
            checkpoint,
        } => {
            let spec = source.resolve()?;
            let dataset = resolve_dataset(&data, &spec, samples_per_class, noise, seed)?;
            let mut net: Network<f32> = build(&spec, seed)?;
            let cfg = TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: lr,
                momentum,
                weight_decay: wd,
                lr_step_epochs: lr_step,
                seed,
                augment,
            };
            println!(
                "training {} on {} samples ({} classes)",
                spec.name,
                dataset.len(),
                dataset.classes()
            );
            let history = train_loop(&mut net, &dataset, &cfg, |stats| {
                println!(
                    "epoch {:>3}  loss {:.4}  accuracy {:.4}  lr {}",
                    stats.epoch, stats.loss, stats.accuracy, stats.lr
                );
            })?;
            if let Some(path) = out {
                write_history(&path, &history)?;
                println!("history written to {}", path.display());
            }
            if let Some(path) = checkpoint {
                save_checkpoint(&path, &spec, &net)?;
                println!("checkpoint written to {}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// `--data` is either the literal `synthetic` or a dataset directory.
fn resolve_dataset(
    data: &str,
    spec: &NetworkSpec,
    samples_per_class: usize,
    noise: f32,
    seed: u64,
) -> Result<Dataset> {
    if data == "synthetic" {
        let d = synthetic_dataset(
            spec.head.classes,
            samples_per_class,
            spec.input.channels,
            spec.input.height,
            spec.input.width,
            noise,
            seed,
        )?;
        return Ok(d);
    }
    let dir = PathBuf::from(data);
    if !dir.is_dir() {
        bail!("--data must be `synthetic` or a directory, got `{data}`");
    }
    let d = load_manifest_dir(&dir)?;
    let s = d.image_shape();
    if (s.c, s.h, s.w) != (spec.input.channels, spec.input.height, spec.input.width) {
        bail!(
            "dataset images are {}x{}x{} but the network expects {}x{}x{}",
            s.c,
            s.h,
            s.w,
            spec.input.channels,
            spec.input.height,
            spec.input.width
        );
    }
    Ok(d)
}

/// One row per block: kind, channel widths, and output shape.
fn describe(spec: &NetworkSpec) -> Result<()> {
    println!("name          {}", spec.name);
    println!("kind          {}", spec.kind.token());
    println!("neighborhood  {}", spec.neighborhood.token());
    println!("depth         {}", spec.depth());
    println!(
        "input         {}x{}x{}",
        spec.input.channels, spec.input.height, spec.input.width
    );
    println!("classes       {}", spec.head.classes);
    println!();

    // The cost pass already resolves every output extent; reuse it
    // rather than repeating the shape arithmetic here.
    let report = count(spec, &CostOptions::default())?;
    let shape_after = |prefix: &str| {
        report
            .per_layer
            .iter()
            .rfind(|row| row.name.starts_with(prefix))
            .map(|row| format!("{}x{}x{}", row.out_channels, row.out_h, row.out_w))
            .unwrap_or_default()
    };

    let mut rows: Vec<[String; 5]> = Vec::new();
    let mut in_c = spec.input.channels;
    if let Some(stem) = &spec.stem {
        rows.push([
            "stem".into(),
            "conv7x7/2+pool".into(),
            in_c.to_string(),
            stem.out_channels.to_string(),
            shape_after("stem."),
        ]);
        in_c = stem.out_channels;
    }
    for (label, block) in spec.block_specs() {
        rows.push([
            label.clone(),
            block.kind.token().into(),
            in_c.to_string(),
            block.out_channels.to_string(),
            shape_after(&format!("{label}.")),
        ]);
        in_c = block.out_channels;
    }
    rows.push([
        "head".into(),
        "gap+fc".into(),
        in_c.to_string(),
        spec.head.classes.to_string(),
        shape_after("head."),
    ]);

    let header = ["layer", "kind", "in", "out", "output"];
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let print_row = |cells: [&str; 5]| {
        println!(
            "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}  {}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            cells[4],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
        );
    };
    print_row(header);
    for row in &rows {
        print_row([&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    Ok(())
}

/// Per-layer table followed by the totals.
fn print_cost_table(spec: &NetworkSpec, report: &CostReport) {
    println!(
        "{} at {}x{}x{}",
        spec.name, spec.input.channels, spec.input.height, spec.input.width
    );
    let name_w = report
        .per_layer
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(5)
        .max("layer".len());
    println!(
        "{:<name_w$}  {:>12}  {:>12}  {:>14}",
        "layer", "output", "params", "flops"
    );
    for row in &report.per_layer {
        println!(
            "{:<name_w$}  {:>12}  {:>12}  {:>14}",
            row.name,
            format!("{}x{}x{}", row.out_channels, row.out_h, row.out_w),
            row.params,
            row.flops
        );
    }
    println!(
        "{:<name_w$}  {:>12}  {:>12}  {:>14}",
        "total", "", report.total_params, report.total_flops
    );
}
