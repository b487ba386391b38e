//! Command-line front end: field generation, vote aggregation, the
//! detection decode pipeline, vote-map rendering, dataset sampling,
//! evaluation, and loss reports.
//!
//! Data flows through files (binary tensors, field JSON, annotation
//! JSON, detection JSON lines, binary pixmaps); reports go to standard
//! output as JSON. Exit codes: 0 on success, 1 for unusable flags or
//! parameters, 2 for broken input data.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hvt::dataset::{sample_subset, CocoDataset};
use hvt::decoder::{
    decode_boxes, extract_peaks, soft_nms, write_detections_jsonl, DetectionRecord,
};
use hvt::error::{Error, Result};
use hvt::eval::{evaluate, EvalDetection};
use hvt::field::{build_field, mask_rings, MaskMode, VoteField, VoteFieldConfig};
use hvt::losses::{
    focal_loss, offset_loss, render_targets, size_loss, LossReport, DEFAULT_MIN_OVERLAP,
};
use hvt::render::{overlay_image, write_ppm};
use hvt::tensor::Tensor;
use hvt::voting::{
    aggregate_gather, aggregate_multiclass, aggregate_scatter, evidence_stack_from_tensor,
    presence_stack_from_tensor, presence_stack_to_tensor, vote_contributions, PairMap,
};
use hvt::DEFAULT_STRIDE;

#[derive(Parser)]
#[command(
    name = "hvt",
    version,
    about = "Log-polar voting detection toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VoteMode {
    Scatter,
    Gather,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vote field and write it as JSON.
    GenField {
        /// Sectors per annulus; must divide 360.
        #[arg(long)]
        angle_bins: usize,
        /// Ring diameters in pixels, comma separated, even and increasing.
        #[arg(long, value_delimiter = ',')]
        ring_extents: Vec<u32>,
        /// none, only_center, no_center, only_context, or region ids.
        #[arg(long, default_value = "none")]
        mask: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate evidence tensors into object-presence maps.
    Vote {
        /// C x H x W x R tensor file.
        #[arg(long)]
        evidence: PathBuf,
        /// Field JSON from gen-field.
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_enum, default_value_t = VoteMode::Gather)]
        mode: VoteMode,
        /// C x H x W tensor file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode presence and regression maps into detections.
    Detect {
        /// C x H x W presence tensor file.
        #[arg(long)]
        presence: PathBuf,
        /// H x W x 2 center-offset tensor file.
        #[arg(long)]
        offsets: PathBuf,
        /// H x W x 2 size tensor file.
        #[arg(long)]
        sizes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: u32,
        #[arg(long, default_value_t = 100)]
        topk: usize,
        #[arg(long, default_value_t = 0.5)]
        soft_nms_sigma: f64,
        #[arg(long, default_value_t = 0.001)]
        score_floor: f64,
        /// Image id stamped on every output record.
        #[arg(long, default_value_t = 0)]
        image_id: i64,
        /// Detections file to write, one JSON object per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render which source pixels vote into one output location.
    RenderVotes {
        /// C x H x W x R tensor file.
        #[arg(long)]
        evidence: PathBuf,
        /// Field JSON from gen-field.
        #[arg(long)]
        field: PathBuf,
        /// Output location as row,col,class.
        #[arg(long)]
        target: String,
        /// Binary pixmap to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw an image subset that preserves dataset composition.
    Sample {
        /// Annotation JSON file.
        #[arg(long)]
        annotations: PathBuf,
        /// Images to select.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 50)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Filtered annotation JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against ground truth.
    Eval {
        /// Detections file, one JSON object per line.
        #[arg(long)]
        detections: PathBuf,
        /// Annotation JSON file.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Report training losses for predicted maps against annotations.
    Loss {
        /// C x H x W predicted presence tensor file.
        #[arg(long)]
        heatmaps: PathBuf,
        /// H x W x 2 predicted center-offset tensor file.
        #[arg(long)]
        offsets: PathBuf,
        /// H x W x 2 predicted size tensor file.
        #[arg(long)]
        sizes: PathBuf,
        /// Annotation JSON file.
        #[arg(long)]
        annotations: PathBuf,
        /// Which image's annotations to render as targets.
        #[arg(long)]
        image_id: i64,
        #[arg(long, default_value_t = DEFAULT_STRIDE)]
        stride: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}

/// HVT_THREADS caps the worker pool; unset means one thread per core.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HVT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("HVT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenField {
            angle_bins,
            ring_extents,
            mask,
            out,
        } => gen_field(angle_bins, ring_extents, &mask, &out),
        Command::Vote {
            evidence,
            field,
            mode,
            out,
        } => vote(&evidence, &field, mode, &out),
        Command::Detect {
            presence,
            offsets,
            sizes,
            stride,
            topk,
            soft_nms_sigma,
            score_floor,
            image_id,
            out,
        } => detect(
            &presence,
            &offsets,
            &sizes,
            stride,
            topk,
            soft_nms_sigma,
            score_floor,
            image_id,
            &out,
        ),
        Command::RenderVotes {
            evidence,
            field,
            target,
            out,
        } => render_votes(&evidence, &field, &target, &out),
        Command::Sample {
            annotations,
            count,
            trials,
            seed,
            out,
        } => sample(&annotations, count, trials, seed, &out),
        Command::Eval { detections, gt } => eval(&detections, &gt),
        Command::Loss {
            heatmaps,
            offsets,
            sizes,
            annotations,
            image_id,
            stride,
        } => loss(&heatmaps, &offsets, &sizes, &annotations, image_id, stride),
    }
}

fn parse_mask(raw: &str) -> Result<Option<MaskMode>> {
    match raw {
        "none" => Ok(None),
        "only_center" => Ok(Some(MaskMode::OnlyCenter)),
        "no_center" => Ok(Some(MaskMode::NoCenter)),
        "only_context" => Ok(Some(MaskMode::OnlyContext)),
        ids => {
            let set: BTreeSet<usize> = ids
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        Error::config(format!(
                            "mask must be none, only_center, no_center, only_context, \
                             or comma-separated region ids; got {raw:?}"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Some(MaskMode::Custom(set)))
        }
    }
}

fn gen_field(angle_bins: usize, ring_extents: Vec<u32>, mask: &str, out: &Path) -> Result<()> {
    let config = VoteFieldConfig::new(angle_bins, ring_extents);
    let mut field = build_field(&config)?;
    if let Some(mode) = parse_mask(mask)? {
        field = mask_rings(&field, &mode)?;
    }
    fs::write(out, field.to_json())?;
    println!("R={} field={}", field.region_count(), field.field_size());
    Ok(())
}

fn load_field(path: &Path) -> Result<VoteField> {
    VoteField::from_json_str(&fs::read_to_string(path)?)
}

fn vote(evidence: &Path, field: &Path, mode: VoteMode, out: &Path) -> Result<()> {
    let field = load_field(field)?;
    let stack = evidence_stack_from_tensor(&Tensor::read_file(evidence)?)?;
    let maps = match mode {
        VoteMode::Gather => aggregate_multiclass(&stack, &field)?,
        VoteMode::Scatter => stack
            .iter()
            .map(|e| aggregate_scatter(e, &field))
            .collect::<Result<Vec<_>>>()?,
    };
    presence_stack_to_tensor(&maps)?.write_file(out)
}

#[allow(clippy::too_many_arguments)]
fn detect(
    presence: &Path,
    offsets: &Path,
    sizes: &Path,
    stride: u32,
    topk: usize,
    soft_nms_sigma: f64,
    score_floor: f64,
    image_id: i64,
    out: &Path,
) -> Result<()> {
    let maps = presence_stack_from_tensor(&Tensor::read_file(presence)?)?;
    let offsets = PairMap::from_tensor(&Tensor::read_file(offsets)?)?;
    let sizes = PairMap::from_tensor(&Tensor::read_file(sizes)?)?;
    let peaks = extract_peaks(&maps, topk)?;
    let decoded = decode_boxes(&peaks, &offsets, &sizes, stride)?;
    if decoded.clamped_sizes > 0 {
        eprintln!(
            "note: {} non-positive predicted sizes clamped to zero",
            decoded.clamped_sizes
        );
    }
    let kept = soft_nms(decoded.detections, soft_nms_sigma, score_floor);
    let records: Vec<DetectionRecord> = kept
        .iter()
        .map(|d| DetectionRecord::from_detection(d, image_id, d.class_id as i64))
        .collect();
    write_detections_jsonl(&mut BufWriter::new(File::create(out)?), &records)
}

fn parse_target(raw: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = raw.split(',').collect();
    let parsed: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match parsed.as_deref() {
        Some([row, col, class]) => Ok((*row, *col, *class)),
        _ => Err(Error::config(format!(
            "target must be row,col,class; got {raw:?}"
        ))),
    }
}

fn render_votes(evidence: &Path, field: &Path, target: &str, out: &Path) -> Result<()> {
    let (row, col, class) = parse_target(target)?;
    let field = load_field(field)?;
    let stack = evidence_stack_from_tensor(&Tensor::read_file(evidence)?)?;
    let e = stack.get(class).ok_or_else(|| {
        Error::validation(format!(
            "class {class} outside the {} planes of the evidence tensor",
            stack.len()
        ))
    })?;
    // Presence forms the grayscale base; the chosen cell's per-source
    // contributions tint it.
    let contributions = vote_contributions(e, &field, (row, col))?;
    let presence = aggregate_gather(e, &field)?;
    let rgb = overlay_image(presence.data(), &contributions)?;
    write_ppm(
        BufWriter::new(File::create(out)?),
        e.width(),
        e.height(),
        &rgb,
    )
}

fn sample(annotations: &Path, count: usize, trials: u64, seed: u64, out: &Path) -> Result<()> {
    let set = CocoDataset::from_reader(BufReader::new(File::open(annotations)?))?;
    let outcome = sample_subset(&set, count, trials, seed)?;
    let ids: BTreeSet<i64> = outcome.image_ids.iter().copied().collect();
    let filtered = set.subset(&ids);
    serde_json::to_writer(BufWriter::new(File::create(out)?), &filtered)
        .map_err(|e| Error::parse(format!("writing subset: {e}")))?;
    let report = serde_json::json!({
        "trial": outcome.trial,
        "divergence": outcome.divergence,
        "stats": outcome.stats,
        "full": {
            "image_count": set.images.len(),
            "object_count": set.annotations.len(),
        },
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn eval(detections: &Path, gt: &Path) -> Result<()> {
    let set = CocoDataset::from_reader(BufReader::new(File::open(gt)?))?;
    let gts = set.ground_truths();
    let records = hvt::decoder::read_detections_jsonl(BufReader::new(File::open(detections)?))?;
    let dets: Vec<EvalDetection> = records
        .iter()
        .map(|r| EvalDetection {
            image_id: r.image_id,
            category_id: r.category_id,
            bbox: r.to_bbox(),
            score: r.score,
        })
        .collect();
    let summary = evaluate(&gts, &dets);
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("serializable")
    );
    Ok(())
}

fn loss(
    heatmaps: &Path,
    offsets: &Path,
    sizes: &Path,
    annotations: &Path,
    image_id: i64,
    stride: u32,
) -> Result<()> {
    let pred_maps = presence_stack_from_tensor(&Tensor::read_file(heatmaps)?)?;
    let pred_offsets = PairMap::from_tensor(&Tensor::read_file(offsets)?)?;
    let pred_sizes = PairMap::from_tensor(&Tensor::read_file(sizes)?)?;
    let set = CocoDataset::from_reader(BufReader::new(File::open(annotations)?))?;
    if !set.images.iter().any(|i| i.id == image_id) {
        return Err(Error::validation(format!(
            "image {image_id} not in the annotation file"
        )));
    }
    let class_count = pred_maps.len();
    let (height, width) = (pred_maps[0].height(), pred_maps[0].width());
    let boxes = set.boxes_for_image(image_id, &set.category_index());
    let targets = render_targets(&boxes, class_count, height, width, stride, DEFAULT_MIN_OVERLAP)?;
    if targets.skipped > 0 {
        eprintln!("note: {} degenerate boxes skipped", targets.skipped);
    }
    let mut pred_flat = Vec::with_capacity(class_count * height * width);
    let mut target_flat = Vec::with_capacity(class_count * height * width);
    for (map, heat) in pred_maps.iter().zip(&targets.heatmaps) {
        pred_flat.extend_from_slice(map.data());
        target_flat.extend_from_slice(heat);
    }
    let focal = focal_loss(&pred_flat, &target_flat)?;
    let offset = offset_loss(&pred_offsets, &targets.regressions)?;
    let size = size_loss(&pred_sizes, &targets.regressions)?;
    let report = LossReport::new(focal.value, offset.value, size.value);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );
    Ok(())
}
