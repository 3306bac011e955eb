use std::fs;
use std::path::{Path, PathBuf};

use barkspace::audio_io::{write_wav, AudioClip};
use barkspace::config::RunConfig;
use barkspace::container::{self, NamedTensor};
use barkspace::corpus::{load_manifest, synth_corpus, write_manifest, ManifestEntry, Split, SynthConfig};
use barkspace::evaluation::{class_histograms, event_level_split, ClassHistograms, Dimension, HISTOGRAM_BINS};
use barkspace::features::{FeatureConfig, MelExtractor, MelSpectrogram};
use barkspace::models::{load_checkpoint, load_checkpoint_for, save_checkpoint, train, Checkpoint, ModelKind, ModelSetup};
use barkspace::pipeline::{evaluate, featurize_manifest, load_clip, load_event_frames, select_split, training_examples};
use barkspace::projection::{export_points, project_event, EmotionPoint, PointFormat};
use barkspace::segmentation::{detect_nonsilent_named, frame_segment, Frame, SegmentationConfig};
use serde::Serialize;

use crate::error::CliError;
use crate::{Cli, Command, GlobalOptions};

struct Ctx {
    config: RunConfig,
    seed: u64,
    verbose: bool,
}

impl Ctx {
    fn new(global: &GlobalOptions) -> Result<Self, CliError> {
        let config = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let seed = global.seed.unwrap_or(config.train.seed);
        Ok(Self {
            config,
            seed,
            verbose: global.verbose,
        })
    }

    fn log(&self, msg: impl FnOnce() -> String) {
        if self.verbose {
            eprintln!("{}", msg());
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Segment { input, out, top_db, frame_len, stride } => {
            let mut seg = ctx.config.segmentation.clone();
            seg.top_db = top_db.unwrap_or(seg.top_db);
            seg.target_len = frame_len.unwrap_or(seg.target_len);
            seg.stride = stride.unwrap_or(seg.stride);
            cmd_segment(&ctx, &input, &out, &seg)
        }
        Command::Synth { n_events, out } => cmd_synth(&ctx, n_events, &out),
        Command::Split { manifest, ratio, out } => cmd_split(&ctx, &manifest, ratio, &out),
        Command::Train { manifest, dim, model, epochs, lr, batch, pairs_per_epoch, out } => {
            let mut cfg = ctx.config.train.clone();
            cfg.dimension = parse_usage(&dim)?;
            cfg.seed = ctx.seed;
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.pairs_per_epoch = pairs_per_epoch.or(cfg.pairs_per_epoch);
            cmd_train(&ctx, &manifest, parse_usage(&model)?, &cfg, &out)
        }
        Command::Eval { model, manifest, split, report } => cmd_eval(&ctx, &model, &manifest, &split, &report),
        Command::Project { arousal_model, valence_model, input, out, format, hist } => {
            let format: PointFormat = format.parse().map_err(|e: barkspace::projection::ProjectionError| CliError::Usage(e.to_string()))?;
            cmd_project(&ctx, &arousal_model, &valence_model, &input, &out, format, hist.as_deref())
        }
        Command::Featurize { input, out, format } => cmd_featurize(&ctx, &input, &out, &format),
    }
}

fn parse_usage<T: std::str::FromStr>(s: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| CliError::Usage(e.to_string()))
}

fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(CliError::io(path))
}

fn wav_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(CliError::io(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct SegmentRecord {
    event_id: String,
    start_sample: usize,
    end_sample: usize,
    source_path: String,
}

fn cmd_segment(ctx: &Ctx, input: &Path, out: &Path, seg: &SegmentationConfig) -> Result<(), CliError> {
    seg.validate()?;
    create_dir(out)?;
    let rate = ctx.config.features.sample_rate_hz;
    let mut index = Vec::new();
    for path in wav_files(input)? {
        let clip = load_clip(&path, rate)?;
        if clip.is_empty() {
            ctx.log(|| format!("{}: empty, skipped", path.display()));
            continue;
        }
        let events = detect_nonsilent_named(&clip, seg, &stem(&path))?;
        ctx.log(|| format!("{}: {} events", path.display(), events.len()));
        for e in events {
            write_wav(out.join(format!("{}.wav", e.event_id)), &AudioClip::new(e.samples.clone(), rate)?)?;
            index.push(SegmentRecord {
                event_id: e.event_id,
                start_sample: e.start_sample,
                end_sample: e.end_sample,
                source_path: path.to_string_lossy().into_owned(),
            });
        }
    }
    write_json(&out.join("index.json"), &index)?;
    println!("{} events written to {}", index.len(), out.display());
    Ok(())
}

fn cmd_synth(ctx: &Ctx, n_events: usize, out: &Path) -> Result<(), CliError> {
    let cfg = SynthConfig { seed: ctx.seed, n_events, ..SynthConfig::default() };
    let entries = synth_corpus(&cfg, out)?;
    println!("{} events written to {}", entries.len(), out.display());
    Ok(())
}

fn cmd_split(ctx: &Ctx, manifest: &Path, ratio: f64, out: &Path) -> Result<(), CliError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CliError::Usage(format!("--ratio must lie strictly between 0 and 1, got {ratio}")));
    }
    let mut entries = load_manifest(manifest)?;
    let ids: Vec<String> = entries.iter().map(|e| e.event_id.clone()).collect();
    let (train_ids, _) = event_level_split(&ids, ratio, ctx.seed)?;
    let train_ids: std::collections::HashSet<String> = train_ids.into_iter().collect();
    for e in &mut entries {
        e.split = Some(if train_ids.contains(&e.event_id) { Split::Train } else { Split::Test });
    }
    // keep audio paths valid when the output lives elsewhere
    let src_dir = manifest_dir(manifest);
    let out_dir = manifest_dir(out);
    if src_dir != out_dir {
        for e in &mut entries {
            if e.path.is_relative() {
                e.path = fs::canonicalize(src_dir.join(&e.path)).unwrap_or_else(|_| src_dir.join(&e.path));
            }
        }
    }
    write_manifest(out, &entries)?;
    println!("{} train / {} test events", train_ids.len(), entries.len() - train_ids.len());
    Ok(())
}

fn training_entries(entries: Vec<ManifestEntry>) -> Vec<ManifestEntry> {
    if entries.iter().any(|e| e.split.is_some()) {
        entries.into_iter().filter(|e| e.split == Some(Split::Train)).collect()
    } else {
        entries
    }
}

fn cmd_train(
    ctx: &Ctx,
    manifest: &Path,
    kind: ModelKind,
    cfg: &barkspace::models::TrainConfig,
    out: &Path,
) -> Result<(), CliError> {
    let entries = training_entries(load_manifest(manifest)?);
    let setup = ModelSetup::new(ctx.config.features.clone(), ctx.config.segmentation.clone());
    let events = featurize_manifest(&entries, &manifest_dir(manifest), &setup.segmentation, &setup.features)?;
    let examples = training_examples(&events, cfg.dimension);
    ctx.log(|| format!("{} events, {} frames", events.len(), examples.len()));
    let model = train(kind, &examples, cfg, &setup, |epoch, loss| {
        ctx.log(|| format!("epoch {:>3}  loss {loss:.6}", epoch + 1));
    })?;
    save_checkpoint(&model.checkpoint, out)?;
    let b = model.checkpoint.boundaries()?;
    println!(
        "{kind} {} model saved to {} (boundaries {:.4} / {:.4})",
        cfg.dimension,
        out.display(),
        b.t_low,
        b.t_high
    );
    Ok(())
}

fn cmd_eval(ctx: &Ctx, model: &Path, manifest: &Path, split: &str, report: &Path) -> Result<(), CliError> {
    let split_filter = match split.to_ascii_lowercase().as_str() {
        "all" => None,
        s => Some(parse_usage::<Split>(s)?),
    };
    let ckpt = load_checkpoint(model)?;
    let entries = load_manifest(manifest)?;
    let selected: Vec<ManifestEntry> = entries
        .into_iter()
        .filter(|e| split_filter.is_none() || e.split == split_filter)
        .collect();
    if selected.is_empty() {
        return Err(barkspace::Error::Eval(barkspace::evaluation::EvalError::Empty).into());
    }
    let events = featurize_manifest(&selected, &manifest_dir(manifest), &ckpt.segmentation, &ckpt.features)?;
    let events = select_split(&events, None);
    let b = ckpt.boundaries()?;
    let r = evaluate(&ckpt, &events, &b, split)?;
    write_json(report, &r)?;
    ctx.log(|| format!("report written to {}", report.display()));
    let tap = |t: Option<f64>| t.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}%"));
    println!(
        "{} {} on {split}: event accuracy {:.4}, event TAP {}, frame accuracy {:.4}, frame TAP {}",
        r.model,
        r.dimension,
        r.event_accuracy,
        tap(r.event_tap_percent),
        r.frame_accuracy,
        tap(r.tap_percent)
    );
    Ok(())
}

/// Events to project: each manifest row, or each event detected in a WAV.
fn projection_inputs(input: &Path, ckpt: &Checkpoint) -> Result<Vec<(Vec<Frame>, Option<ManifestEntry>)>, CliError> {
    if is_manifest(input) {
        let dir = manifest_dir(input);
        load_manifest(input)?
            .into_iter()
            .map(|e| {
                let frames = load_event_frames(&e.resolved_path(&dir), &e.event_id, &ckpt.segmentation, &ckpt.features)?;
                Ok((frames, Some(e)))
            })
            .collect()
    } else {
        let clip = load_clip(input, ckpt.features.sample_rate_hz)?;
        if clip.is_empty() {
            return Ok(Vec::new());
        }
        detect_nonsilent_named(&clip, &ckpt.segmentation, &stem(input))?
            .iter()
            .map(|seg| Ok((frame_segment(seg, &ckpt.segmentation)?, None)))
            .collect()
    }
}

#[derive(Serialize)]
struct ProjectionHistograms {
    #[serde(skip_serializing_if = "Option::is_none")]
    arousal: Option<ClassHistograms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    valence: Option<ClassHistograms>,
}

fn cmd_project(
    ctx: &Ctx,
    arousal_model: &Path,
    valence_model: &Path,
    input: &Path,
    out: &Path,
    format: PointFormat,
    hist: Option<&Path>,
) -> Result<(), CliError> {
    let arousal = load_checkpoint_for(arousal_model, Dimension::Arousal)?;
    let valence = load_checkpoint_for(valence_model, Dimension::Valence)?;
    if arousal.segmentation != valence.segmentation {
        return Err(CliError::Usage("the two models were trained with different segmentation settings".into()));
    }
    let inputs = projection_inputs(input, &arousal)?;
    let mut points: Vec<EmotionPoint> = Vec::with_capacity(inputs.len());
    let mut classes: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (frames, entry) in &inputs {
        let p = project_event(&arousal, &valence, frames)?;
        ctx.log(|| format!("{}: ({:.4}, {:.4}) {}", p.event_id, p.valence, p.arousal, p.quadrant));
        for (slot, dim) in classes.iter_mut().zip([Dimension::Arousal, Dimension::Valence]) {
            slot.push(entry.as_ref().map_or_else(|| "unlabeled".to_string(), |e| e.label(dim).token(dim).to_string()));
        }
        points.push(p);
    }
    export_points(&points, out, format)?;
    if let Some(path) = hist {
        let hist_of = |values: Vec<f64>, labels: &[String]| -> Result<Option<ClassHistograms>, CliError> {
            if values.is_empty() {
                return Ok(None);
            }
            Ok(Some(class_histograms(&values, labels, HISTOGRAM_BINS)?))
        };
        let h = ProjectionHistograms {
            arousal: hist_of(points.iter().map(|p| p.arousal).collect(), &classes[0])?,
            valence: hist_of(points.iter().map(|p| p.valence).collect(), &classes[1])?,
        };
        write_json(path, &h)?;
    }
    println!("{} points written to {}", points.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct FeatureDumpMeta<'a> {
    features: &'a FeatureConfig,
    segmentation: &'a SegmentationConfig,
    events: Vec<FeatureDumpEvent>,
}

#[derive(Serialize)]
struct FeatureDumpEvent {
    event_id: String,
    n_frames: usize,
}

fn cmd_featurize(ctx: &Ctx, input: &Path, out: &Path, format: &str) -> Result<(), CliError> {
    let fcfg = &ctx.config.features;
    let seg = &ctx.config.segmentation;
    let events: Vec<(String, Vec<MelSpectrogram>)> = if is_manifest(input) {
        let entries = load_manifest(input)?;
        featurize_manifest(&entries, &manifest_dir(input), seg, fcfg)?
            .into_iter()
            .map(|e| (e.event_id, e.frames))
            .collect()
    } else {
        let extractor = MelExtractor::new(fcfg)?;
        let frames = load_event_frames(input, &stem(input), seg, fcfg)?;
        let mels = frames.iter().map(|f| extractor.log_mel(&f.samples)).collect::<Result<Vec<_>, _>>()?;
        vec![(stem(input), mels)]
    };
    match format.to_ascii_lowercase().as_str() {
        "bdn" => {
            let meta = FeatureDumpMeta {
                features: fcfg,
                segmentation: seg,
                events: events.iter().map(|(id, f)| FeatureDumpEvent { event_id: id.clone(), n_frames: f.len() }).collect(),
            };
            let tensors: Vec<NamedTensor> = events
                .iter()
                .flat_map(|(id, frames)| {
                    frames.iter().enumerate().map(move |(i, m)| NamedTensor {
                        name: format!("{id}/{i:04}"),
                        dims: vec![m.n_mels as u32, m.n_time as u32],
                        values: m.values.iter().map(|&v| v as f32).collect(),
                    })
                })
                .collect();
            let bytes = container::encode(&serde_json::to_string(&meta)?, &tensors);
            fs::write(out, bytes).map_err(CliError::io(out))?;
        }
        "csv" => {
            let mut text = String::new();
            let n_time = events.iter().flat_map(|(_, f)| f.first()).map(|m| m.n_time).next().unwrap_or(0);
            text.push_str("event_id,frame_index,mel_band");
            for t in 0..n_time {
                text.push_str(&format!(",t{t}"));
            }
            text.push('\n');
            for (id, frames) in &events {
                for (i, m) in frames.iter().enumerate() {
                    for b in 0..m.n_mels {
                        text.push_str(&format!("{},{i},{b}", csv_field(id)));
                        for t in 0..m.n_time {
                            text.push_str(&format!(",{:?}", m.at(b, t)));
                        }
                        text.push('\n');
                    }
                }
            }
            fs::write(out, text).map_err(CliError::io(out))?;
        }
        other => return Err(CliError::Usage(format!("unknown feature format {other:?} (expected bdn or csv)"))),
    }
    let n_frames: usize = events.iter().map(|(_, f)| f.len()).sum();
    println!("{} frames from {} events written to {}", n_frames, events.len(), out.display());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
