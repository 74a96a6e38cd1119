mod config;
mod inputs;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use drnet_core::augment::augment_sample;
use drnet_core::container::Container;
use drnet_core::dataset::{balanced_split, load_exclusions, load_manifest, Manifest};
use drnet_core::evaluation::{confusion, metrics};
use drnet_core::imageproc::{normalize, save_plane, Plane8};
use drnet_core::inference::{benchmark, infer_float, infer_int8, Prediction};
use drnet_core::network::Model;
use drnet_core::quantize::{calibrate, fold_model, quantize_model, QModel};
use drnet_core::training::{fit, load_model, save_checkpoint, save_model, LabeledSet};
use drnet_core::Tensor;
use rayon::prelude::*;
use serde_json::{json, Value};

use config::RunConfig;
use inputs::Input;

#[derive(Parser, Debug)]
#[command(name = "drnet", version, about = "Diabetic retinopathy grading: preprocessing, training, int8 quantization")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, env = "DRCNN_SEED")]
    seed: Option<u64>,
    /// Output directory (for `quantize`, a `.drcnn` path names the file).
    #[arg(long, global = true, env = "DRCNN_OUT")]
    out: Option<PathBuf>,
    /// TOML configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-image stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Green channel, resize, CLAHE and clarity boost; writes PNGs.
    Preprocess {
        /// Image directory, `path,label` manifest or single image.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Writes augmented variants of one image.
    AugmentPreview {
        /// A single image.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// The input is an unprocessed photograph.
        /// Inputs are unprocessed photographs; preprocess them first.
        #[arg(long)]
        raw: bool,
    },
    /// Class-balanced train/val/test split of a manifest.
    Split {
        /// `path,label` manifest to split.
        #[arg(long)]
        manifest: PathBuf,
        /// File listing paths to drop, one per line.
        #[arg(long)]
        exclude: Option<PathBuf>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Trains the float model.
    Train {
        /// Training manifest.
        #[arg(long)]
        train: PathBuf,
        /// Validation manifest, scored after every epoch.
        #[arg(long)]
        val: PathBuf,
        /// Inputs are unprocessed photographs; preprocess them first.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Adadelta learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Folds, calibrates and quantizes a float model to int8.
    Quantize {
        /// Model container (float or int8).
        #[arg(long)]
        model: PathBuf,
        /// Representative images: directory, manifest or single image.
        #[arg(long)]
        calib: PathBuf,
        /// Inputs are unprocessed photographs; preprocess them first.
        #[arg(long)]
        raw: bool,
        /// Use at most this many calibration images.
        #[arg(long)]
        calib_limit: Option<usize>,
    },
    /// Classifies images; prints one JSON object per image.
    Infer {
        /// Model container (float or int8).
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Inputs are unprocessed photographs; preprocess them first.
        #[arg(long)]
        raw: bool,
    },
    /// Confusion matrix and metrics over a labelled manifest.
    Eval {
        /// Model container (float or int8).
        #[arg(long)]
        model: PathBuf,
        /// Labelled `path,label` manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Inputs are unprocessed photographs; preprocess them first.
        #[arg(long)]
        raw: bool,
        /// Exit with status 1 if any stage 3/4 case is predicted as stage 0.
        #[arg(long)]
        strict_safety: bool,
    },
    /// Integer-path latency; prints JSON statistics.
    Bench {
        /// Model container (float or int8).
        #[arg(long)]
        model: PathBuf,
        /// Images to time: directory, manifest or single image.
        #[arg(long)]
        images: PathBuf,
        /// Inputs are unprocessed photographs; preprocess them first.
        #[arg(long)]
        raw: bool,
        /// Timed repetitions.
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = Some(o);
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    match &cli.command {
        Command::Split { train, val, test, .. } => {
            cfg.split.train = train.unwrap_or(cfg.split.train);
            cfg.split.val = val.unwrap_or(cfg.split.val);
            cfg.split.test = test.unwrap_or(cfg.split.test);
        }
        Command::Train { epochs, batch_size, lr, .. } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.learning_rate = lr.unwrap_or(cfg.train.learning_rate);
        }
        Command::Quantize { calib_limit, .. } => {
            if calib_limit.is_some() {
                cfg.quantize.calib_limit = *calib_limit;
            }
        }
        Command::Bench { reps, .. } => cfg.bench.repetitions = reps.unwrap_or(cfg.bench.repetitions),
        _ => {}
    }
    let cfg = cfg.finalize()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers()).build()?;
    let ctx = Ctx { cfg, pool };

    match cli.command {
        Command::Preprocess { input } => ctx.preprocess(&input),
        Command::AugmentPreview { input, count, raw } => ctx.augment_preview(&input, count, raw),
        Command::Split { manifest, exclude, .. } => ctx.split(&manifest, exclude.as_deref()),
        Command::Train { train, val, raw, .. } => ctx.train(&train, &val, raw),
        Command::Quantize { model, calib, raw, .. } => ctx.quantize(&model, &calib, raw),
        Command::Infer { model, images, raw } => ctx.infer(&model, &images, raw),
        Command::Eval {
            model,
            manifest,
            raw,
            strict_safety,
        } => ctx.eval(&model, &manifest, raw, strict_safety),
        Command::Bench { model, images, raw, .. } => ctx.bench(&model, &images, raw),
    }
}

enum Loaded {
    Float(Box<Model<f32>>),
    Int8(Box<QModel>),
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        let c = Container::load(path).with_context(|| format!("loading model {}", path.display()))?;
        Ok(if c.format == "int8" {
            Loaded::Int8(Box::new(QModel::from_container(&c)?))
        } else {
            Loaded::Float(Box::new(load_model(path)?))
        })
    }

    fn input_side(&self) -> usize {
        match self {
            Loaded::Float(m) => m.config().input_side,
            Loaded::Int8(q) => q.config.input_side,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Loaded::Float(_) => "float32",
            Loaded::Int8(_) => "int8",
        }
    }

    fn predict(&self, x: &Tensor<f32>) -> Result<Prediction> {
        Ok(match self {
            Loaded::Float(m) => infer_float(m, x)?,
            Loaded::Int8(q) => infer_int8(q, x)?,
        })
    }
}

struct Ctx {
    cfg: RunConfig,
    pool: rayon::ThreadPool,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf> {
        let d = self.cfg.out_dir();
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    /// Adds provenance to a report body.
    fn report(&self, command: &str, body: Value) -> Value {
        let mut v = json!({
            "tool": "drnet",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.cfg.hash(),
            "command": command,
        });
        if let (Value::Object(m), Value::Object(b)) = (&mut v, body) {
            m.extend(b);
        }
        v
    }

    fn write_json(&self, path: &Path, v: &Value) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn preprocess(&self, input: &Path) -> Result<ExitCode> {
        let items = inputs::collect(input)?;
        if items.is_empty() {
            bail!("no images found in {}", input.display());
        }
        let out = self.out_dir()?;
        let mut seen = HashSet::new();
        let names: Vec<String> = items
            .iter()
            .map(|i| {
                let stem = i.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let name = format!("{}.png", stem);
                if !seen.insert(name.clone()) {
                    bail!("two inputs map to output name {}", name);
                }
                Ok(name)
            })
            .collect::<Result<_>>()?;
        let pre = &self.cfg.preprocess;
        self.pool.install(|| {
            items.par_iter().zip(&names).try_for_each(|(i, name)| -> Result<()> {
                let p = inputs::load_plane(&i.path, true, pre)?;
                save_plane(&p, &out.join(name))?;
                Ok(())
            })
        })?;
        let labelled = items.iter().all(|i| i.label.is_some());
        if labelled {
            let recs = items
                .iter()
                .zip(&names)
                .map(|(i, n)| (PathBuf::from(n), i.label.unwrap_or_default()))
                .collect();
            Manifest::new(recs, "preprocessed")?.write_csv(&out.join("manifest.csv"))?;
        }
        let report = self.report(
            "preprocess",
            json!({ "images": items.len(), "manifest": labelled, "preprocess": pre }),
        );
        self.write_json(&out.join("preprocess_report.json"), &report)?;
        println!("preprocessed {} images into {}", items.len(), out.display());
        Ok(ExitCode::SUCCESS)
    }

    fn augment_preview(&self, input: &Path, count: usize, raw: bool) -> Result<ExitCode> {
        let plane = inputs::load_plane(input, raw, &self.cfg.preprocess)?;
        let t: Tensor<f32> = normalize(&plane);
        let out = self.out_dir()?;
        for i in 0..count {
            let a = augment_sample(&t, &self.cfg.augment, i as u64)?;
            let values = a.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
            let p = Plane8::new(plane.width(), plane.height(), values)?;
            save_plane(&p, &out.join(format!("augment_{:03}.png", i)))?;
        }
        let report = self.report("augment-preview", json!({ "count": count, "augment": self.cfg.augment }));
        self.write_json(&out.join("augment_report.json"), &report)?;
        println!("wrote {} augmented variants to {}", count, out.display());
        Ok(ExitCode::SUCCESS)
    }

    fn split(&self, manifest: &Path, exclude: Option<&Path>) -> Result<ExitCode> {
        let mut m = load_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
        let before = m.len();
        if let Some(e) = exclude {
            m = m.exclude(&load_exclusions(e).with_context(|| format!("reading exclusion list {}", e.display()))?);
        }
        let s = balanced_split(&m, &self.cfg.split)?;
        let out = self.out_dir()?;
        s.write_csvs(&out)?;
        let report = self.report(
            "split",
            json!({
                "records": before,
                "excluded": before - m.len(),
                "available_per_class": m.class_counts(),
                "train": s.train.len(),
                "val": s.val.len(),
                "test": s.test.len(),
                "split": self.cfg.split,
            }),
        );
        self.write_json(&out.join("split_report.json"), &report)?;
        println!("train {} / val {} / test {} written to {}", s.train.len(), s.val.len(), s.test.len(), out.display());
        Ok(ExitCode::SUCCESS)
    }

    fn labelled_set(&self, manifest: &Path, raw: bool, side: usize) -> Result<LabeledSet<f32>> {
        let items = inputs::collect(manifest)?;
        Ok(LabeledSet {
            labels: inputs::labels(&items)?,
            images: inputs::load_tensors(&self.pool, &items, raw, &self.cfg.preprocess, side)?,
        })
    }

    fn train(&self, train: &Path, val: &Path, raw: bool) -> Result<ExitCode> {
        let mc = self.cfg.model.build()?;
        let side = mc.input_side;
        let tr = self.labelled_set(train, raw, side)?;
        let va = self.labelled_set(val, raw, side)?;
        let model = Model::<f32>::he_uniform(mc, self.cfg.seed)?;
        log::info!("training {} parameters on {} images", model.param_count(), tr.len());
        let out = self.out_dir()?;
        let outcome = self.pool.install(|| {
            fit(model, &tr, &va, &self.cfg.train, |r| {
                log::info!(
                    "epoch {:>3} lr {:.4} loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
                    r.epoch,
                    r.lr,
                    r.train_loss,
                    r.train_acc,
                    r.val_loss,
                    r.val_acc
                )
            })
        })?;
        let best_bytes = save_checkpoint(&outcome.best, &outcome.best_optimizer, &out.join("model.drcnn"))?;
        save_model(&outcome.last, &out.join("last.drcnn"))?;
        outcome.history.write_csv(fs::File::create(out.join("history.csv"))?)?;
        let report = self.report(
            "train",
            json!({
                "train_images": tr.len(),
                "val_images": va.len(),
                "parameters": outcome.best.param_count(),
                "best_epoch": outcome.best_epoch,
                "best_accuracy": outcome.best_accuracy,
                "checkpoint_bytes": best_bytes,
                "model": self.cfg.model,
                "train": self.cfg.train,
            }),
        );
        self.write_json(&out.join("train_report.json"), &report)?;
        println!(
            "best monitored accuracy {:.4} at epoch {}; checkpoint {}",
            outcome.best_accuracy,
            outcome.best_epoch,
            out.join("model.drcnn").display()
        );
        Ok(ExitCode::SUCCESS)
    }

    fn quantize(&self, model: &Path, calib: &Path, raw: bool) -> Result<ExitCode> {
        let Loaded::Float(m) = Loaded::open(model)? else {
            bail!("{} is already quantized", model.display());
        };
        let mut items = inputs::collect(calib)?;
        if let Some(limit) = self.cfg.quantize.calib_limit {
            items.truncate(limit);
        }
        if items.is_empty() {
            bail!("no calibration images in {}", calib.display());
        }
        let samples = inputs::load_tensors(&self.pool, &items, raw, &self.cfg.preprocess, m.config().input_side)?;
        let folded = fold_model(&m)?;
        let ranges = self.pool.install(|| calibrate(&folded, &samples))?;
        let q = quantize_model(&folded, &ranges)?;
        let target = self.cfg.out_dir();
        let (file, report_dir) = if target.extension().is_some_and(|e| e == "drcnn") {
            let dir = target.parent().filter(|p| !p.as_os_str().is_empty()).map_or(PathBuf::from("."), Path::to_path_buf);
            fs::create_dir_all(&dir)?;
            (target.clone(), dir)
        } else {
            let dir = self.out_dir()?;
            (dir.join("model_int8.drcnn"), dir)
        };
        let bytes = q.save(&file)?;
        let float_bytes = fs::metadata(model)?.len();
        let report = self.report(
            "quantize",
            json!({
                "model": model,
                "output": file,
                "int8_bytes": bytes,
                "float_bytes": float_bytes,
                "size_ratio": float_bytes as f64 / bytes as f64,
                "calibration_images": samples.len(),
                "activation_ranges": ranges.ranges,
            }),
        );
        self.write_json(&report_dir.join("quantize_report.json"), &report)?;
        println!("int8 model: {} ({} bytes, {:.2} MB)", file.display(), bytes, bytes as f64 / 1e6);
        Ok(ExitCode::SUCCESS)
    }

    fn infer(&self, model: &Path, images: &[PathBuf], raw: bool) -> Result<ExitCode> {
        let m = Loaded::open(model)?;
        for path in images {
            let t0 = Instant::now();
            let x = &inputs::load_tensors(
                &self.pool,
                &[Input {
                    path: path.clone(),
                    label: None,
                }],
                raw,
                &self.cfg.preprocess,
                m.input_side(),
            )?[0];
            let t1 = Instant::now();
            let p = m.predict(x)?;
            let latency = t1.elapsed().as_secs_f64() * 1e3;
            let line = json!({
                "image": path,
                "model": m.kind(),
                "class": p.class,
                "probs": p.probs,
                "latency_ms": latency,
                "preprocess_ms": (t1 - t0).as_secs_f64() * 1e3,
            });
            println!("{}", serde_json::to_string(&line)?);
        }
        Ok(ExitCode::SUCCESS)
    }

    fn eval(&self, model: &Path, manifest: &Path, raw: bool, strict: bool) -> Result<ExitCode> {
        let m = Loaded::open(model)?;
        let set = self.labelled_set(manifest, raw, m.input_side())?;
        let preds: Vec<usize> = self.pool.install(|| {
            set.images
                .par_iter()
                .map(|x| m.predict(x).map(|p| p.class))
                .collect::<Result<_>>()
        })?;
        let r = metrics(&confusion(&preds, &set.labels)?)?;
        let out = self.out_dir()?;
        let report = self.report(
            "eval",
            json!({ "model": model, "model_kind": m.kind(), "manifest": manifest, "metrics": r }),
        );
        self.write_json(&out.join("eval_report.json"), &report)?;
        let text = format!(
            "drnet {} | config {} | {} model {}\n\n{}",
            env!("CARGO_PKG_VERSION"),
            &self.cfg.hash()[..12],
            m.kind(),
            model.display(),
            r.to_text()
        );
        fs::write(out.join("eval_report.txt"), &text)?;
        print!("{}", text);
        if strict && r.critical_misdiagnosis_count > 0 {
            eprintln!(
                "safety check failed: {} severe/proliferative case(s) predicted as no DR",
                r.critical_misdiagnosis_count
            );
            return Ok(ExitCode::FAILURE);
        }
        Ok(ExitCode::SUCCESS)
    }

    fn bench(&self, model: &Path, images: &Path, raw: bool) -> Result<ExitCode> {
        let Loaded::Int8(q) = Loaded::open(model)? else {
            bail!("bench measures the integer path; quantize {} first", model.display());
        };
        let items = inputs::collect(images)?;
        if items.is_empty() {
            bail!("no images in {}", images.display());
        }
        let t0 = Instant::now();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
        let xs = inputs::load_tensors(&single, &items, raw, &self.cfg.preprocess, q.config.input_side)?;
        let preprocess_ms = t0.elapsed().as_secs_f64() * 1e3 / items.len() as f64;
        let r = benchmark(&q, &xs, self.cfg.bench.repetitions)?;
        let v = self.report("bench", json!({ "stats": r, "load_ms_per_image": preprocess_ms, "raw_inputs": raw }));
        println!("{}", serde_json::to_string_pretty(&v)?);
        Ok(ExitCode::SUCCESS)
    }
}
