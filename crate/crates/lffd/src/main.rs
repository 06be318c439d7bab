use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lffd::bench::{self, BenchReport, DEFAULT_LADDER, DEFAULT_RUNS, DEFAULT_WARMUP};
use lffd::config::RunConfig;
use lffd::dataset::{load_dataset, write_dataset};
use lffd::detections::DetectionRecord;
use lffd::eval::evaluate;
use lffd::exec::{tune_allocator, Threads};
use lffd::image_io::{load_image, save_image};
use lffd::inspect;
use lffd::model_io::{encode_model, load_model};
use lffd::train_loop::{train_loop, LoopOptions, LOSS_LOG_HEADER};
use lffd_core::detect::{detect, DetectParams};
use lffd_core::net::{count_backbone_params, count_flops, count_params, FlopConvention, ModelWeights, NetworkConfig};
use lffd_core::optim::xavier_init;
use lffd_core::synth::synth_dataset;
use lffd_core::train::{Executor, Trainer};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "lffd", version, about = "Anchor-free multi-branch face detector")]
struct Cli {
    /// TOML run configuration; defaults to the reference network and schedule.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command's random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on a single worker.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Format {
    #[arg(long, conflicts_with = "json")]
    csv: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone, Copy)]
struct Thresholds {
    #[arg(long, default_value_t = DetectParams::default().score_thresh)]
    score_thresh: f32,
    #[arg(long, default_value_t = DetectParams::default().iou_thresh)]
    iou_thresh: f32,
}

impl Thresholds {
    fn params(self) -> Result<DetectParams> {
        if !(0.0..=1.0).contains(&self.score_thresh) || !(0.0..=1.0).contains(&self.iou_thresh) {
            bail!("thresholds must lie in [0, 1]");
        }
        Ok(DetectParams {
            score_thresh: self.score_thresh,
            iou_thresh: self.iou_thresh,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer strides, receptive fields and branch bands.
    Inspect {
        #[command(flatten)]
        format: Format,
    },
    /// Parameter count, FLOPs and model file size.
    Count {
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long)]
        json: bool,
    },
    /// Forward-pass latency over a resolution ladder.
    Bench {
        /// Weights to time; a seeded random init when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Resolutions as WIDTHxHEIGHT.
        #[arg(long = "res", value_delimiter = ',')]
        resolutions: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[command(flatten)]
        format: Format,
    },
    /// Detect faces and print one JSON line per image.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        thresholds: Thresholds,
        /// Directory for copies of the images with boxes drawn.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from scratch on an annotation file or on synthetic images.
    Train {
        /// Output directory for the model, checkpoints and loss log.
        #[arg(long)]
        out: PathBuf,
        /// Annotation file; synthetic images from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        log_every: Option<u64>,
        /// 0 disables intermediate checkpoints.
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Write a synthetic annotated image set.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Precision and recall against an annotation file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Matching threshold between detections and faces.
        #[arg(long, default_value_t = 0.5)]
        match_iou: f32,
        #[command(flatten)]
        thresholds: Thresholds,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    tune_allocator();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let net = config.network.build()?;
    let exec = if cli.deterministic {
        Threads::new(1)
    } else {
        Threads::from_env()
    };
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Inspect { format } => {
            let rows = inspect::inspect_rows(&net);
            if format.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?;
            } else if format.csv {
                write!(out, "{}", inspect::render_csv(&rows))?;
            } else {
                write!(out, "{}", inspect::render_table(&rows))?;
            }
        }
        Command::Count { width, height, json } => {
            let (pw, ph) = bench::check_representable(&net, width, height)?;
            let total = count_params(&net);
            let backbone = count_backbone_params(&net);
            let flops = count_flops(&net, pw, ph, FlopConvention::MacIsOne);
            let bytes = encode_model(&net, &ModelWeights::zeros(&net))?.len();
            if json {
                let v = serde_json::json!({
                    "params": total,
                    "backbone_params": backbone,
                    "head_params": total - backbone,
                    "width": pw,
                    "height": ph,
                    "flops": flops.total(),
                    "backbone_flops": flops.backbone,
                    "head_flops": flops.heads,
                    "model_bytes": bytes,
                });
                writeln!(out, "{v}")?;
            } else {
                writeln!(out, "params          {total}")?;
                writeln!(out, "  backbone      {backbone}")?;
                writeln!(out, "  heads         {}", total - backbone)?;
                writeln!(out, "flops @{pw}x{ph}  {} ({:.3} G)", flops.total(), flops.total() as f64 / 1e9)?;
                writeln!(out, "model file      {bytes} bytes ({:.2} MB)", bytes as f64 / 1e6)?;
            }
        }
        Command::Bench {
            model,
            resolutions,
            warmup,
            runs,
            format,
        } => {
            let weights = match &model {
                Some(p) => load_model(p, &net)?,
                None => xavier_init(&net, cli.seed.unwrap_or(0)),
            };
            let ladder = if resolutions.is_empty() {
                DEFAULT_LADDER.to_vec()
            } else {
                resolutions
                    .iter()
                    .map(|r| bench::parse_resolution(r))
                    .collect::<lffd::Result<_>>()?
            };
            for &(w, h) in &ladder {
                bench::check_representable(&net, w, h)?;
            }
            if format.csv {
                writeln!(out, "{}", bench::CSV_HEADER)?;
            } else if !format.json {
                writeln!(
                    out,
                    "{:>11} {:>11} {:>10} {:>10} {:>10} {:>10} {:>8}",
                    "resolution", "padded", "mean_ms", "median_ms", "p95_ms", "GFLOPs", "e_net"
                )?;
            }
            for (w, h) in ladder {
                let r: BenchReport = bench::bench_resolution(&net, &weights, w, h, warmup, runs)?;
                if format.json {
                    writeln!(out, "{}", serde_json::to_string(&r)?)?;
                } else if format.csv {
                    writeln!(out, "{}", r.to_csv())?;
                } else {
                    writeln!(
                        out,
                        "{:>11} {:>11} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>8.4}",
                        format!("{w}x{h}"),
                        format!("{}x{}", r.padded_width, r.padded_height),
                        r.mean_ms,
                        r.median_ms,
                        r.p95_ms,
                        r.flops as f64 / 1e9,
                        r.e_net
                    )?;
                }
                out.flush()?;
            }
        }
        Command::Detect {
            model,
            images,
            thresholds,
            out: out_dir,
        } => {
            let weights = load_model(&model, &net)?;
            let params = thresholds.params()?;
            if let Some(dir) = &out_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            for path in &images {
                let mut image = load_image(path)?;
                let dets = detect(&net, &weights, &image, &params)?;
                writeln!(out, "{}", DetectionRecord::new(&path.to_string_lossy(), &dets).to_json_line())?;
                if let Some(dir) = &out_dir {
                    for d in &dets {
                        image.draw_box(&d.bbox, [0, 255, 0]);
                    }
                    let stem = path.file_stem().unwrap_or(path.as_os_str());
                    save_image(&dir.join(stem).with_extension("ppm"), &image)?;
                }
            }
        }
        Command::Train {
            out: out_dir,
            data,
            iters,
            log_every,
            checkpoint_every,
        } => {
            let mut train = config.train.train_config();
            if let Some(s) = cli.seed {
                train.seed = s;
            }
            if let Some(n) = iters {
                train.total_iters = n;
            }
            let dataset = match &data {
                Some(ann) => load_dataset(ann)?.into_iter().map(|(_, s)| s).collect(),
                None => synth_dataset(&config.synth.spec()?, config.synth.seed, config.synth.count)?,
            };
            let weights = xavier_init(&net, train.seed);
            let mut trainer = Trainer::new(net.clone(), train, weights)?;
            let opts = LoopOptions {
                out_dir,
                log_every: log_every.unwrap_or(config.train.log_every),
                checkpoint_every: checkpoint_every.unwrap_or(config.train.checkpoint_every),
            };
            eprintln!(
                "training on {} images for {} iterations with {} worker(s)",
                dataset.len(),
                trainer.train.total_iters,
                exec.workers()
            );
            eprintln!("{LOSS_LOG_HEADER}");
            let summary = train_loop(&mut trainer, &dataset, &opts, &exec, |row| eprintln!("{}", row.to_csv()))?;
            writeln!(out, "model {}", summary.model_path.display())?;
            writeln!(out, "loss log {}", summary.log_path.display())?;
            writeln!(out, "sha256 {}", file_sha256(&summary.model_path)?)?;
        }
        Command::Synth { out: out_dir, count } => {
            let spec = config.synth.spec()?;
            let seed = cli.seed.unwrap_or(config.synth.seed);
            let samples = synth_dataset(&spec, seed, count.unwrap_or(config.synth.count))?;
            let ann = write_dataset(&out_dir, &samples)?;
            let faces: usize = samples.iter().map(|s| s.faces.len()).sum();
            writeln!(out, "wrote {} images with {faces} faces; annotations {}", samples.len(), ann.display())?;
        }
        Command::Eval {
            model,
            data,
            match_iou,
            thresholds,
            json,
        } => {
            let weights = load_model(&model, &net)?;
            let params = thresholds.params()?;
            let dataset = load_dataset(&data)?;
            let detections = exec.map(&dataset, &|(_, s)| detect(&net, &weights, &s.image, &params));
            let detections = detections.into_iter().collect::<lffd_core::Result<Vec<_>>>()?;
            let truth: Vec<_> = dataset.iter().map(|(_, s)| s.faces.clone()).collect();
            let report = evaluate(&detections, &truth, &bands(&net), match_iou);
            if json {
                writeln!(out, "{}", serde_json::to_string(&report)?)?;
            } else {
                writeln!(out, "images {}  iou {}", dataset.len(), report.iou)?;
                writeln!(out, "tp {}  fp {}  fn {}", report.tp, report.fp, report.fn_)?;
                writeln!(out, "precision {:.4}  recall {:.4}", report.precision, report.recall)?;
                for b in &report.bands {
                    let r = b.recall.map_or("-".to_string(), |r| format!("{r:.4}"));
                    writeln!(out, "band {:>3}-{:<3} faces {:>5}  found {:>5}  recall {r}", b.lo, b.hi, b.faces, b.found)?;
                }
            }
        }
    }
    Ok(())
}

fn bands(net: &NetworkConfig) -> Vec<(usize, usize)> {
    net.branches.iter().map(|b| (b.scale_lo, b.scale_hi)).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
