//! Command-line workflows for the detector: synthetic data, anchors,
//! training, detection, evaluation, feature visualization and parameter
//! counts.

mod config;
mod render;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avdnet::dataio::{letterbox, load_manifest, load_ppm, save_ppm, write_synthetic_dataset, LetterboxTransform, SynthConfig};
use avdnet::detection::{
    detect, kmeans_anchors, write_detections, AnchorSet, Detection, DEFAULT_CONF_THRESH, DEFAULT_NMS_IOU,
};
use avdnet::evaluation::{evaluate, ImageResult, DEFAULT_EVAL_IOU};
use avdnet::network::{load_weights, save_weights, LAYER_TAPS};
use avdnet::rfav::rfav_layer;
use avdnet::training::{train_loop, TrainConfig};
use avdnet::{Network, NetworkSpec};
use clap::{Args, Parser, Subcommand};

pub use config::{format_config, load_config, parse_config};

/// Confidence threshold used when scoring, low enough to trace the whole
/// precision-recall curve.
const EVAL_CONF_THRESH: f64 = 0.005;

#[derive(Parser, Debug)]
#[command(name = "avdnet", version, about = "Small-vehicle detection in aerial imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct NetArgs {
    /// Network config file (`key = value` lines)
    #[arg(long)]
    cfg: Option<PathBuf>,
    /// Override the number of classes
    #[arg(long)]
    classes: Option<usize>,
    /// Override the network input size
    #[arg(long)]
    input_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic aerial dataset with a manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 152)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        min_objects: usize,
        #[arg(long, default_value_t = 8)]
        max_objects: usize,
        #[arg(long, default_value_t = 0.5)]
        clutter: f64,
    },
    /// Cluster the dataset's box shapes into anchors
    Anchors {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Train from scratch and write weights
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30_000)]
        iters: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iteration of the tenfold learning-rate drop
        #[arg(long, default_value_t = 20_000)]
        lr_drop: usize,
        /// Save weights every N iterations (0: only at the end)
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Loss log CSV (default: next to the weights)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Detect vehicles in one image
    Detect {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Anchor file (default: the one saved next to the weights)
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = DEFAULT_CONF_THRESH)]
        thresh: f64,
        #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
        nms: f64,
        #[arg(long)]
        out_boxes: PathBuf,
        #[arg(long)]
        out_image: Option<PathBuf>,
    },
    /// Compute per-class AP and mAP over a dataset
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = DEFAULT_EVAL_IOU)]
        iou: f64,
        #[arg(long, default_value_t = EVAL_CONF_THRESH)]
        thresh: f64,
        #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
        nms: f64,
        #[arg(long)]
        out_report: PathBuf,
        /// Directory for per-class precision-recall CSVs
        #[arg(long)]
        pr_dir: Option<PathBuf>,
    },
    /// Render a layer's modal-intensity visualization as PGM
    Rfav {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        layer: String,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-layer parameter table and total
    Params {
        #[command(flatten)]
        net: NetArgs,
    },
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn sidecar(weights: &Path, ext: &str) -> PathBuf {
    weights.with_extension(ext)
}

/// Network spec from `--cfg` (or the config saved next to `weights`),
/// then flag overrides.
fn resolve_spec(net: &NetArgs, weights: Option<&Path>) -> Result<NetworkSpec> {
    let saved = weights.map(|w| sidecar(w, "cfg")).filter(|p| p.is_file());
    let mut spec = match net.cfg.as_ref().or(saved.as_ref()) {
        Some(path) => load_config(path)?,
        None => NetworkSpec::default(),
    };
    if let Some(c) = net.classes {
        spec.num_classes = c;
    }
    if let Some(s) = net.input_size {
        spec.input_size = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn echo(lines: &[(&str, String)]) {
    for (k, v) in lines {
        eprintln!("# {k} = {v}");
    }
}

fn echo_spec(spec: &NetworkSpec) {
    for line in format_config(spec).lines() {
        eprintln!("# {line}");
    }
}

fn load_anchors(path: Option<&PathBuf>, weights: &Path, spec: &NetworkSpec) -> Result<(AnchorSet, PathBuf)> {
    let path = path.cloned().unwrap_or_else(|| sidecar(weights, "anchors"));
    let anchors = AnchorSet::load(&path).with_context(|| format!("loading anchors {}", path.display()))?;
    if anchors.len() != spec.num_anchors {
        bail!(
            "{} has {} anchors, the network expects {}",
            path.display(),
            anchors.len(),
            spec.num_anchors
        );
    }
    Ok((anchors, path))
}

fn load_net(spec: &NetworkSpec, weights: &Path) -> Result<Network<f32>> {
    load_weights(spec, weights).with_context(|| format!("loading weights {}", weights.display()))
}

fn to_source(dets: Vec<Detection>, tr: &LetterboxTransform) -> Vec<Detection> {
    dets.into_iter()
        .map(|d| Detection {
            bbox: tr.box_to_source(&d.bbox),
            ..d
        })
        .collect()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            images,
            seed,
            size,
            classes,
            min_objects,
            max_objects,
            clutter,
        } => {
            let cfg = SynthConfig {
                image_size: size,
                min_objects,
                max_objects,
                num_classes: classes,
                clutter,
                seed,
                ..SynthConfig::default()
            };
            echo(&[
                ("out", out.display().to_string()),
                ("images", images.to_string()),
                ("seed", seed.to_string()),
                ("size", size.to_string()),
                ("classes", classes.to_string()),
                ("objects", format!("{min_objects}..={max_objects}")),
                ("object_px", format!("{}..={}", cfg.min_size_px, cfg.max_size_px)),
                ("clutter", clutter.to_string()),
            ]);
            let manifest = write_synthetic_dataset(&cfg, images, &out)?;
            println!("{}", manifest.display());
        }
        Command::Anchors { data, k, out, seed, net } => {
            let spec = resolve_spec(&net, None)?;
            echo(&[
                ("data", data.display().to_string()),
                ("k", k.to_string()),
                ("seed", seed.to_string()),
                ("out", out.display().to_string()),
                ("input_size", spec.input_size.to_string()),
            ]);
            let manifest = load_manifest(&data)?;
            let mut shapes = Vec::new();
            for (i, entry) in manifest.entries.iter().enumerate() {
                let image = load_ppm(&entry.image)?;
                let (_, _, h, w) = image.dims4()?;
                let tr = LetterboxTransform::new(w, h, spec.input_size);
                for g in manifest.load_annotations(i)? {
                    let b = tr.box_to_network(&g.bbox);
                    shapes.push((b.w, b.h));
                }
            }
            let anchors = kmeans_anchors(&shapes, k, seed)?;
            anchors.save(&out)?;
            print!("{}", anchors.to_text());
        }
        Command::Train {
            data,
            anchors,
            net,
            out,
            iters,
            lr,
            batch,
            seed,
            lr_drop,
            checkpoint_every,
            log,
        } => {
            let spec = resolve_spec(&net, None)?;
            let cfg = TrainConfig {
                batch_size: batch,
                initial_lr: lr,
                lr_drop_iteration: lr_drop,
                total_iterations: iters,
                seed,
                checkpoint_every,
                ..TrainConfig::default()
            };
            let log_path = log.unwrap_or_else(|| sidecar(&out, "loss.csv"));
            echo_spec(&spec);
            echo(&[
                ("data", data.display().to_string()),
                ("anchors", anchors.display().to_string()),
                ("out", out.display().to_string()),
                ("log", log_path.display().to_string()),
                ("iters", iters.to_string()),
                ("batch", batch.to_string()),
                ("lr", lr.to_string()),
                ("lr_drop", format!("{lr_drop} (factor {})", cfg.lr_drop_factor)),
                ("momentum", cfg.momentum.to_string()),
                ("weight_decay", cfg.weight_decay.to_string()),
                ("seed", seed.to_string()),
                ("checkpoint_every", checkpoint_every.to_string()),
            ]);
            cfg.validate()?;
            let anchor_set = AnchorSet::load(&anchors)
                .with_context(|| format!("loading anchors {}", anchors.display()))?;
            if anchor_set.len() != spec.num_anchors {
                bail!(
                    "{} has {} anchors, the network expects {}",
                    anchors.display(),
                    anchor_set.len(),
                    spec.num_anchors
                );
            }
            let manifest = load_manifest(&data)?;
            let samples = manifest.load_samples(spec.input_size)?;
            let mut network = Network::<f32>::new(&spec)?;
            network.init_weights(seed);
            let train_log = train_loop(&mut network, &samples, &anchor_set, &cfg, |it, n| {
                log::info!("iteration {it}: saving {}", out.display());
                save_weights(n, &out)
            })?;
            train_log.save(&log_path)?;
            anchor_set.save(sidecar(&out, "anchors"))?;
            let cfg_path = sidecar(&out, "cfg");
            std::fs::write(&cfg_path, format_config(&spec))
                .with_context(|| format!("writing {}", cfg_path.display()))?;
            if let Some(last) = train_log.entries.last() {
                println!("final loss {:.6}", last.loss);
            }
        }
        Command::Detect {
            weights,
            image,
            anchors,
            net,
            thresh,
            nms,
            out_boxes,
            out_image,
        } => {
            let spec = resolve_spec(&net, Some(&weights))?;
            let network = load_net(&spec, &weights)?;
            let (anchor_set, anchor_path) = load_anchors(anchors.as_ref(), &weights, &spec)?;
            echo_spec(&spec);
            echo(&[
                ("weights", weights.display().to_string()),
                ("anchors", anchor_path.display().to_string()),
                ("image", image.display().to_string()),
                ("thresh", thresh.to_string()),
                ("nms", nms.to_string()),
                ("out_boxes", out_boxes.display().to_string()),
            ]);
            let source = load_ppm(&image)?;
            let (input, tr) = letterbox(&source, spec.input_size)?;
            let dets = to_source(detect(&network, &input, &anchor_set, thresh, nms)?, &tr);
            write_detections(&dets, &out_boxes)?;
            if let Some(path) = out_image {
                save_ppm(&render::draw_boxes(&source, &dets)?, &path)?;
            }
            println!("{} detections", dets.len());
        }
        Command::Eval {
            weights,
            data,
            anchors,
            net,
            iou,
            thresh,
            nms,
            out_report,
            pr_dir,
        } => {
            let spec = resolve_spec(&net, Some(&weights))?;
            let network = load_net(&spec, &weights)?;
            let (anchor_set, anchor_path) = load_anchors(anchors.as_ref(), &weights, &spec)?;
            echo_spec(&spec);
            echo(&[
                ("weights", weights.display().to_string()),
                ("anchors", anchor_path.display().to_string()),
                ("data", data.display().to_string()),
                ("iou", iou.to_string()),
                ("thresh", thresh.to_string()),
                ("nms", nms.to_string()),
                ("out_report", out_report.display().to_string()),
            ]);
            let manifest = load_manifest(&data)?;
            let mut images = Vec::with_capacity(manifest.len());
            for i in 0..manifest.len() {
                let (sample, tr) = manifest.load_sample(i, spec.input_size)?;
                let image = sample.image;
                let dets = detect(&network, &image, &anchor_set, thresh, nms)?;
                images.push(ImageResult {
                    detections: to_source(dets, &tr),
                    ground_truth: manifest.load_annotations(i)?,
                });
            }
            let report = evaluate(&images, spec.num_classes, iou)?;
            report.save(&out_report)?;
            if let Some(dir) = pr_dir {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for c in &report.classes {
                    c.curve.save(dir.join(format!("pr_class{}.csv", c.class_id)))?;
                }
            }
            print!("{}", report.to_text());
        }
        Command::Rfav {
            weights,
            image,
            layer,
            net,
            out,
        } => {
            if !LAYER_TAPS.contains(&layer.as_str()) {
                bail!("unknown layer {layer:?}; expected one of {}", LAYER_TAPS.join(", "));
            }
            let spec = resolve_spec(&net, Some(&weights))?;
            echo_spec(&spec);
            echo(&[
                ("weights", weights.display().to_string()),
                ("image", image.display().to_string()),
                ("layer", layer.clone()),
                ("out", out.display().to_string()),
            ]);
            let network = load_net(&spec, &weights)?;
            let (input, _) = letterbox(&load_ppm(&image)?, spec.input_size)?;
            let vis = rfav_layer(&network, &input, &layer)?;
            vis.save(&out)?;
            println!("{}x{} {}", vis.width, vis.height, out.display());
        }
        Command::Params { net } => {
            let spec = resolve_spec(&net, None)?;
            echo_spec(&spec);
            let network = Network::<f32>::new(&spec)?;
            println!(
                "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10}",
                "layer", "kernel", "stride", "in", "out", "size", "params"
            );
            for l in network.layer_summary() {
                println!(
                    "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>10}",
                    l.name, l.kernel, l.stride, l.in_channels, l.out_channels, l.out_size, l.params
                );
            }
            println!("total {}", network.count_params());
        }
    }
    Ok(())
}
