use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use ttpoint_core::events::stream_to_clips;
use ttpoint_core::harness::{ablate, evaluate, train, AblationMode, EpochMetrics, SEED_MODEL_INIT, SEED_SAMPLING};
use ttpoint_core::model::{report_complexity, ComplexityReport, Model, REFERENCE_GFLOPS, REFERENCE_PARAMS};
use ttpoint_core::rng::{derive_seed, rng_from};
use ttpoint_core::synth::{stratified_split, synth_actions};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::clips_io::{read_archive, write_archive};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::events_io::{write_events, EventFormat};
use crate::manifest::{load_streams, write_manifest, ManifestRow, Split};

#[derive(Debug, Parser)]
#[command(name = "ttpoint", version, about = "Event-camera action recognition with tensor-train point networks")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `train.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Text,
    Binary,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labelled synthetic event streams and a train/test manifest.
    Synth {
        #[arg(long, value_enum, default_value = "binary")]
        format: FormatArg,
    },
    /// Cut the streams of a manifest into sampled clips.
    Preprocess {
        /// Directory holding `manifest.csv`.
        #[arg(long)]
        input: PathBuf,
        /// Start windowing this far into each stream (fraction of its span).
        #[arg(long)]
        start_fraction: Option<f64>,
    },
    /// Train on `<clips>/train`, evaluate on `<clips>/test`.
    Train {
        #[arg(long)]
        clips: PathBuf,
    },
    /// Evaluate a checkpoint on a clip archive.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clips: PathBuf,
    },
    /// Per-layer parameter and FLOP counts.
    Report {
        /// Report a trained checkpoint instead of the configured model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train several variants on the same data.
    Ablate {
        /// subwindow-sweep, rank-compare or extractor-compare.
        #[arg(long)]
        mode: String,
        /// Directory holding `manifest.csv`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { format } => synth(&cfg, &cli.out, *format),
        Command::Preprocess { input, start_fraction } => {
            let mut cfg = cfg.clone();
            if let Some(f) = start_fraction {
                cfg.window.start_fraction = *f;
                cfg.validate()?;
            }
            preprocess(&cfg, input, &cli.out)
        }
        Command::Train { clips } => train_cmd(&cfg, clips, &cli.out),
        Command::Eval { checkpoint, clips } => eval_cmd(checkpoint, clips),
        Command::Report { checkpoint, csv } => report_cmd(&cfg, checkpoint.as_deref(), csv.as_deref()),
        Command::Ablate { mode, input } => ablate_cmd(&cfg, mode, input, &cli.out),
    }
}

fn synth(cfg: &RunConfig, out: &Path, format: FormatArg) -> Result<()> {
    create_dir(out)?;
    let streams = synth_actions(&cfg.synth, cfg.train.seed)?;
    let labels: Vec<u32> = streams.iter().map(|s| s.label.unwrap_or(0)).collect();
    let (train_idx, _) = stratified_split(&labels, cfg.split.train_fraction, cfg.train.seed);
    let (fmt, ext) = match format {
        FormatArg::Text => (EventFormat::Text, "txt"),
        FormatArg::Binary => (EventFormat::Binary, "evt"),
    };
    let mut rows = Vec::with_capacity(streams.len());
    for (i, s) in streams.iter().enumerate() {
        let file = format!("stream{i:05}.{ext}");
        write_events(&out.join(&file), s, fmt)?;
        let split = if train_idx.binary_search(&i).is_ok() { Split::Train } else { Split::Test };
        rows.push(ManifestRow { file, label: s.label, split });
    }
    write_manifest(out, &rows)?;
    println!("wrote {} streams to {}", rows.len(), out.display());
    Ok(())
}

fn preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let seed = derive_seed(cfg.train.seed, &[SEED_SAMPLING]);
    let mut train_clips = Vec::new();
    let mut test_clips = Vec::new();
    for s in load_streams(input)? {
        let clips = stream_to_clips(&s.stream, s.index, &cfg.window, seed)?;
        if clips.is_empty() {
            log::warn!("{}: no window reached min_events", s.path.display());
        }
        match s.split {
            Split::Train => train_clips.extend(clips),
            Split::Test => test_clips.extend(clips),
        }
    }
    write_archive(&out.join("train"), &train_clips)?;
    write_archive(&out.join("test"), &test_clips)?;
    println!("wrote {} train and {} test clips to {}", train_clips.len(), test_clips.len(), out.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn train_cmd(cfg: &RunConfig, clips: &Path, out: &Path) -> Result<()> {
    let train_set = read_archive(&clips.join("train"))?;
    let test_set = read_archive(&clips.join("test"))?;
    create_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics = csv::Writer::from_path(&metrics_path).map_err(|e| Error::format(e.to_string()))?;
    metrics
        .write_record(["epoch", "lr", "loss", "window_acc", "voted_acc", "seconds"])
        .map_err(|e| Error::format(e.to_string()))?;
    let model = Model::<f32>::build(&cfg.model, &mut rng_from(cfg.train.seed, &[SEED_MODEL_INIT]))?;
    let start = Instant::now();
    let mut clock = move || start.elapsed().as_secs_f64();
    let mut write_err = None;
    let mut on_epoch = |m: &EpochMetrics| {
        let rec = [
            m.epoch.to_string(),
            format!("{}", m.lr),
            format!("{}", m.loss),
            opt(m.window_acc),
            opt(m.voted_acc),
            format!("{:.3}", m.seconds),
        ];
        if let Err(e) = metrics.write_record(&rec).and_then(|_| Ok(metrics.flush()?)) {
            write_err.get_or_insert(e);
        }
    };
    let outcome = train(model, &train_set, &test_set, &cfg.train, &mut clock, &mut on_epoch)?;
    if let Some(e) = write_err {
        return Err(Error::format(format!("{}: {e}", metrics_path.display())));
    }
    let best = Checkpoint::from_model(
        &outcome.best,
        cfg,
        TrainState { epoch: outcome.best_epoch, seed: cfg.train.seed },
        None,
    );
    best.save(&out.join("best.ttpt"))?;
    let last = Checkpoint::from_model(
        &outcome.last,
        cfg,
        TrainState { epoch: cfg.train.epochs, seed: cfg.train.seed },
        Some(&outcome.optimizer),
    );
    last.save(&out.join("last.ttpt"))?;
    println!(
        "best epoch {}: window accuracy {:.4}, voted accuracy {:.4}",
        outcome.best_epoch, outcome.best_metrics.window_acc, outcome.best_metrics.voted_acc
    );
    Ok(())
}

fn eval_cmd(checkpoint: &Path, clips: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut model = ck.to_model()?;
    let set = read_archive(clips)?;
    let m = evaluate(&mut model, &set, ck.config.train.batch_size)?;
    println!(
        "clips {} streams {} loss {:.4} window_acc {:.4} voted_acc {:.4}",
        m.clips, m.streams, m.loss, m.window_acc, m.voted_acc
    );
    Ok(())
}

pub fn render_report(r: &ComplexityReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<22} {:>9} {:>6} {:>10} {:>10} {:>14}\n",
        "layer", "kind", "rows", "params", "dense", "MACs"
    ));
    for l in &r.layers {
        s.push_str(&format!(
            "{:<22} {:>9} {:>6} {:>10} {:>10} {:>14}\n",
            l.name,
            l.kind.name(),
            l.rows,
            l.params,
            l.dense_params,
            l.macs
        ));
    }
    let (dp, df) = r.reference_delta();
    s.push_str(&format!(
        "params {} (rank-0 twin {}), compression ratio {:.3}, max layer ratio {:.2}\n",
        r.params_total,
        r.twin_params_total,
        r.compression_ratio(),
        r.max_layer_ratio()
    ));
    s.push_str(&format!(
        "forward MACs {} (twin {}), GFLOPs {:.4} at 1/MAC, {:.4} at 2/MAC\n",
        r.macs_forward,
        r.twin_macs_forward,
        r.flops_mac1() as f64 / 1e9,
        r.flops_mac2() as f64 / 1e9
    ));
    s.push_str(&format!(
        "vs published {:.3} M params / {:.3} GFLOPs: {:+.1}% params, {:+.1}% FLOPs (2/MAC)\n",
        REFERENCE_PARAMS / 1e6,
        REFERENCE_GFLOPS,
        100.0 * dp,
        100.0 * df
    ));
    s
}

pub fn write_report_csv(r: &ComplexityReport, path: &Path) -> Result<()> {
    let fail = |e: csv::Error| Error::format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(["layer", "kind", "in_dim", "out_dim", "rows", "params", "dense_params", "macs", "dense_macs"])
        .map_err(fail)?;
    for l in &r.layers {
        w.write_record([
            l.name.clone(),
            l.kind.name().to_owned(),
            l.in_dim.to_string(),
            l.out_dim.to_string(),
            l.rows.to_string(),
            l.params.to_string(),
            l.dense_params.to_string(),
            l.macs.to_string(),
            l.dense_macs.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn report_cmd(cfg: &RunConfig, checkpoint: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    let model = match checkpoint {
        Some(p) => Checkpoint::load(p)?.to_model()?,
        None => Model::<f32>::build(&cfg.model, &mut rng_from(cfg.train.seed, &[SEED_MODEL_INIT]))?,
    };
    let r = report_complexity(&model);
    print!("{}", render_report(&r));
    if let Some(path) = csv {
        write_report_csv(&r, path)?;
    }
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, mode: &str, input: &Path, out: &Path) -> Result<()> {
    let mode: AblationMode = mode.parse().map_err(|e: ttpoint_core::Error| Error::Config(e.to_string()))?;
    let mut train_streams = Vec::new();
    let mut test_streams = Vec::new();
    for s in load_streams(input)? {
        match s.split {
            Split::Train => train_streams.push(s.stream),
            Split::Test => test_streams.push(s.stream),
        }
    }
    let start = Instant::now();
    let mut clock = move || start.elapsed().as_secs_f64();
    let rows = ablate::<f32>(mode, &cfg.experiment(), &train_streams, &test_streams, &mut clock)?;
    create_dir(out)?;
    let path = out.join(format!("ablate-{}.csv", mode.name()));
    let fail = |e: csv::Error| Error::format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(fail)?;
    w.write_record(["setting", "params", "window_acc", "voted_acc"]).map_err(fail)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:<14} {:>10} {:>10} {:>10}", "setting", "params", "window", "voted").map_err(|e| Error::io("stdout", e))?;
    for r in &rows {
        w.write_record([r.setting.clone(), r.params.to_string(), r.window_acc.to_string(), r.voted_acc.to_string()])
            .map_err(fail)?;
        writeln!(stdout, "{:<14} {:>10} {:>10.4} {:>10.4}", r.setting, r.params, r.window_acc, r.voted_acc)
            .map_err(|e| Error::io("stdout", e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
