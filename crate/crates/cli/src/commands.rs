use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::json;

use repgars::corruptor::{corrupt as corrupt_tracks, derive_seed, ClipGeometry, CorruptionReport};
use repgars::gar_model::{
    build_model, load_checkpoint, save_checkpoint, CheckpointMeta, GroupActivityModel, InputSetting, ModelConfig,
    ModelSpec,
};
use repgars::poserender::{render_clip, save_preview, RenderConfig};
use repgars::synthgen::gen_dataset;
use repgars::trackpose_io::{
    build_tracklets, flatten_tracklets, load_dataset, load_manifest, parse_detections, save_manifest,
    write_detections, DatasetManifest, ManifestClip, Split,
};
use repgars::train_eval::{
    evaluate, robustness_sweep, run_ablation, save_confusion_heatmap, train_with_progress, Metrics, TrainConfig,
};
use repgars::Dataset;

use crate::config::RunConfig;
use crate::report;
use crate::runs::{write_json, RunDir, RunMetrics, SettingRow, CONFIG_FILE, METRICS_FILE};
use crate::{Common, Invalid, ModelChoice};

const HEATMAP_CELL: u32 = 32;

fn prepare(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed)?;
    Ok(cfg)
}

struct Splits {
    manifest: DatasetManifest,
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_splits(path: &Path, cfg: &RunConfig) -> anyhow::Result<Splits> {
    let manifest = load_manifest(path)?;
    let opts = cfg.load.options();
    let load = |split| load_dataset(&manifest, split, &opts);
    let (train, val, test) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    Ok(Splits { manifest, train, val, test })
}

fn non_empty(d: &Dataset) -> Option<&Dataset> {
    (!d.is_empty()).then_some(d)
}

fn class_names(d: &Dataset) -> Vec<String> {
    d.label_space.class_names().to_vec()
}

fn model_spec(choice: ModelChoice, cfg: &RunConfig) -> ModelSpec {
    match choice {
        ModelChoice::Rendered(setting) => ModelSpec::RenderedPose {
            model: ModelConfig { in_channels: setting.in_channels(), ..cfg.model.clone() },
            setting,
            render: cfg.render.clone(),
        },
        ModelChoice::EarlyFusion => ModelSpec::EarlyFusion { baseline: cfg.baseline.clone() },
        ModelChoice::LateFusion => ModelSpec::LateFusion { baseline: cfg.baseline.clone() },
    }
}

fn train_model(
    model: &mut dyn GroupActivityModel,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> anyhow::Result<repgars::train_eval::TrainOutcome> {
    let name = model.spec().name();
    Ok(train_with_progress(model, train, val, cfg, |r| {
        let val = r.val_accuracy.map_or_else(String::new, |a| format!(" val {:.1}%", 100.0 * a));
        eprintln!("[{name}] epoch {:>3} loss {:.4}{val} lr {:.1e}", r.epoch, r.train_loss, r.lr);
    })?)
}

fn checkpoint_meta(model: &dyn GroupActivityModel, data: &Dataset, outcome: &repgars::train_eval::TrainOutcome) -> CheckpointMeta {
    CheckpointMeta {
        spec: model.spec(),
        label_space: (*data.label_space).clone(),
        epoch: outcome.best_epoch,
        val_accuracy: outcome.best_val_accuracy,
    }
}

fn print_metrics(label: &str, m: &Metrics, names: &[String]) {
    println!("{label}: accuracy {:.1}% over {} clips", 100.0 * m.accuracy, m.total());
    print!("{}", m.to_table(names));
}

pub fn synth(out: &Path, clips_per_class: Option<usize>, common: &Common) -> anyhow::Result<()> {
    let mut cfg = prepare(common)?;
    if let Some(n) = clips_per_class {
        cfg.synth.clips_per_class = n;
    }
    cfg.synth.validate()?;
    let run = RunDir::create(out, "synth")?;
    run.write(CONFIG_FILE, &cfg)?;
    let manifest = gen_dataset(&cfg.synth, out)?;
    let count = |s| manifest.split(s).count();
    println!(
        "{} clips in {} (train {}, val {}, test {})",
        manifest.clips.len(),
        out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    run.finish()
}

pub fn ingest(manifest: &Path, out_dir: &Path, common: &Common) -> anyhow::Result<()> {
    let cfg = prepare(common)?;
    cfg.validate()?;
    let splits = load_splits(manifest, &cfg)?;
    let run = RunDir::create(out_dir, "ingest")?;
    run.write(CONFIG_FILE, &cfg)?;
    let classes = splits.manifest.label_space.len();
    let mut summary = serde_json::Map::new();
    for (split, data) in [(Split::Train, &splits.train), (Split::Val, &splits.val), (Split::Test, &splits.test)] {
        let mut per_class = vec![0usize; classes];
        for &l in &data.labels() {
            per_class[l] += 1;
        }
        let tracklets: usize = data.clips.iter().map(|c| c.tracklets.len()).sum();
        let detections: usize = data.clips.iter().flat_map(|c| &c.tracklets).map(|t| t.len()).sum();
        let shape = data.clips.first().map(|c| [c.num_frames(), c.height(), c.width()]);
        println!("{split}: {} clips, {tracklets} tracklets, {detections} detections", data.len());
        summary.insert(
            split.to_string(),
            json!({
                "clips": data.len(),
                "per_class": per_class,
                "tracklets": tracklets,
                "detections": detections,
                "frames_height_width": shape,
            }),
        );
    }
    let ingest = json!({ "classes": splits.manifest.label_space.class_names(), "splits": summary });
    run.write("ingest.json", &ingest)?;
    run.finish()
}

pub fn render_preview(manifest: &Path, clip: Option<&str>, out_dir: &Path, common: &Common) -> anyhow::Result<()> {
    let cfg = prepare(common)?;
    cfg.validate()?;
    let manifest = load_manifest(manifest)?;
    let entry = match clip {
        Some(id) => manifest.clips.iter().find(|c| c.id == id).ok_or_else(|| Invalid(format!("no clip {id:?} in manifest")))?,
        None => manifest.clips.first().ok_or_else(|| Invalid("manifest has no clips".into()))?,
    };
    let single = DatasetManifest { clips: vec![entry.clone()], ..manifest.clone() };
    let data = load_dataset(&single, entry.split, &cfg.load.options())?;
    let sample = &data.clips[0];
    let render = RenderConfig { height: sample.height(), width: sample.width(), ..cfg.render.clone() };
    let rendered = render_clip(sample, &render)?;
    let run = RunDir::create(out_dir, "render-preview")?;
    run.write(CONFIG_FILE, &cfg)?;
    save_preview(run.join("frames"), sample, &rendered)?;
    println!("{} frames of {} in {}", sample.num_frames(), sample.clip_id, run.join("frames").display());
    run.finish()
}

pub struct CorruptionFlags {
    pub fragmentation: Option<f64>,
    pub id_switch: Option<f64>,
    pub jitter: Option<f64>,
    pub drop: Option<f64>,
    pub spurious: Option<f64>,
}

fn count_frames(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    Ok(frames)
}

fn copy_file(from: &Path, to: &Path) -> anyhow::Result<()> {
    if std::fs::hard_link(from, to).is_err() {
        std::fs::copy(from, to).with_context(|| format!("copying {} to {}", from.display(), to.display()))?;
    }
    Ok(())
}

/// Clip `i` (manifest order) is corrupted with `derive_seed(seed, i)`;
/// frames and court files are copied unchanged.
pub fn corrupt(manifest: &Path, out_dir: &Path, flags: &CorruptionFlags, common: &Common) -> anyhow::Result<()> {
    let mut cfg = prepare(common)?;
    let c = &mut cfg.corruption;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut c.fragmentation_prob, flags.fragmentation);
    set(&mut c.id_switch_prob, flags.id_switch);
    set(&mut c.jitter_sigma, flags.jitter);
    set(&mut c.keypoint_drop_prob, flags.drop);
    set(&mut c.spurious_track_rate, flags.spurious);
    cfg.validate()?;
    let source = load_manifest(manifest)?;
    let run = RunDir::create(out_dir, "corrupt")?;
    run.write(CONFIG_FILE, &cfg)?;
    let mut reports: BTreeMap<String, CorruptionReport> = BTreeMap::new();
    let mut clips = Vec::new();
    for (i, entry) in source.clips.iter().enumerate() {
        let src = source.clip_dir(entry);
        let rel = PathBuf::from("clips").join(&entry.id);
        let dst = out_dir.join(&rel);
        std::fs::create_dir_all(dst.join("frames")).with_context(|| format!("creating {}", dst.display()))?;
        let frames = count_frames(&src.join("frames"))?;
        for f in &frames {
            copy_file(f, &dst.join("frames").join(f.file_name().expect("listed files have names")))?;
        }
        if src.join("court.json").exists() {
            copy_file(&src.join("court.json"), &dst.join("court.json"))?;
        }
        let det_path = src.join("detections.jsonl");
        let file = std::fs::File::open(&det_path).with_context(|| format!("opening {}", det_path.display()))?;
        let tracklets = build_tracklets(parse_detections(std::io::BufReader::new(file))?)?;
        let geometry = ClipGeometry { frames: frames.len(), width: entry.width, height: entry.height };
        let clip_cfg = repgars::corruptor::CorruptionConfig { seed: derive_seed(cfg.corruption.seed, i as u64), ..cfg.corruption.clone() };
        let (corrupted, report) = corrupt_tracks(&tracklets, &clip_cfg, geometry)?;
        let out_path = dst.join("detections.jsonl");
        let out = std::fs::File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?;
        let mut out = std::io::BufWriter::new(out);
        write_detections(&mut out, &flatten_tracklets(&corrupted))?;
        std::io::Write::flush(&mut out).with_context(|| format!("writing {}", out_path.display()))?;
        reports.insert(entry.id.clone(), report);
        clips.push(ManifestClip { path: rel, ..entry.clone() });
    }
    let out_manifest = DatasetManifest { label_space: source.label_space.clone(), clips, root: out_dir.to_path_buf() };
    save_manifest(out_dir.join("manifest.json"), &out_manifest)?;
    run.write("corruption.json", &reports)?;
    let total = |f: fn(&CorruptionReport) -> usize| reports.values().map(f).sum::<usize>();
    println!(
        "{} clips: {} fragmented, {} id switches, {} jittered, {} dropped, {} spurious tracks",
        reports.len(),
        total(|r| r.fragmented_tracks),
        total(|r| r.id_switches),
        total(|r| r.jittered_keypoints),
        total(|r| r.dropped_keypoints),
        total(|r| r.spurious_tracks)
    );
    run.finish()
}

pub fn train(
    manifest: &Path,
    choice: ModelChoice,
    pretrained: Option<PathBuf>,
    epochs: Option<usize>,
    out_dir: &Path,
    common: &Common,
) -> anyhow::Result<()> {
    let mut cfg = prepare(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if pretrained.is_some() {
        cfg.model.pretrained_weights = pretrained;
    }
    let splits = load_splits(manifest, &cfg)?;
    if splits.train.is_empty() {
        return Err(Invalid("manifest has no training clips".into()).into());
    }
    cfg.fit_to(&splits.train);
    if let ModelChoice::Rendered(setting) = choice {
        cfg.model.in_channels = setting.in_channels();
    }
    cfg.validate()?;
    let mut model = build_model(&model_spec(choice, &cfg))?;
    let run = RunDir::create(out_dir, "train")?;
    run.write(CONFIG_FILE, &cfg)?;

    let outcome = train_model(model.as_mut(), &splits.train, non_empty(&splits.val), &cfg.train)?;
    let batch = cfg.train.batch_size;
    let val = non_empty(&splits.val).map(|d| evaluate(model.as_mut(), d, batch)).transpose()?;
    let test = non_empty(&splits.test).map(|d| evaluate(model.as_mut(), d, batch)).transpose()?;
    let meta = checkpoint_meta(model.as_ref(), &splits.train, &outcome);
    save_checkpoint(run.join("checkpoint.safetensors"), model.as_mut(), &meta)?;
    run.write("history.json", &outcome)?;

    let names = class_names(&splits.train);
    if let Some(m) = &test {
        save_confusion_heatmap(m, run.join("confusion_test.png"), HEATMAP_CELL)?;
        print_metrics("test", m, &names);
    }
    let row = SettingRow { model: meta.spec.name().to_string(), val, test };
    run.write(METRICS_FILE, &RunMetrics::Train { class_names: names, best_epoch: outcome.best_epoch, row })?;
    run.finish()
}

pub fn eval(checkpoint: &Path, manifest: &Path, split: &str, out_dir: &Path, common: &Common) -> anyhow::Result<()> {
    let mut cfg = prepare(common)?;
    let split = Split::parse(split).ok_or_else(|| Invalid(format!("unknown split {split:?}: use train, val or test")))?;
    let (mut model, meta) = load_checkpoint(checkpoint)?;
    // Feed the network the clip geometry it was trained on.
    if let ModelSpec::RenderedPose { model: m, render, .. } = &meta.spec {
        let [t, h, w] = m.input_size;
        cfg.load.window = t;
        cfg.load.resize = Some([h, w]);
        cfg.render = render.clone();
    }
    cfg.validate()?;
    let manifest = load_manifest(manifest)?;
    if manifest.label_space.len() != meta.label_space.len() {
        return Err(Invalid(format!(
            "checkpoint predicts {} classes, manifest has {}",
            meta.label_space.len(),
            manifest.label_space.len()
        ))
        .into());
    }
    let data = load_dataset(&manifest, split, &cfg.load.options())?;
    if data.is_empty() {
        return Err(Invalid(format!("split {split} is empty")).into());
    }
    let run = RunDir::create(out_dir, "eval")?;
    run.write(CONFIG_FILE, &cfg)?;
    let metrics = evaluate(model.as_mut(), &data, cfg.train.batch_size)?;
    save_confusion_heatmap(&metrics, run.join(&format!("confusion_{split}.png")), HEATMAP_CELL)?;
    let names = class_names(&data);
    print_metrics(split.as_str(), &metrics, &names);
    let model_name = meta.spec.name().to_string();
    run.write(METRICS_FILE, &RunMetrics::Eval { class_names: names, split: split.to_string(), model: model_name, metrics })?;
    run.finish()
}

pub fn ablate(
    manifest: &Path,
    settings: &[InputSetting],
    epochs: Option<usize>,
    out_dir: &Path,
    common: &Common,
) -> anyhow::Result<()> {
    let mut cfg = prepare(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let settings = if settings.is_empty() { InputSetting::ALL.to_vec() } else { settings.to_vec() };
    let splits = load_splits(manifest, &cfg)?;
    if splits.train.is_empty() {
        return Err(Invalid("manifest has no training clips".into()).into());
    }
    cfg.fit_to(&splits.train);
    cfg.validate()?;
    let run = RunDir::create(out_dir, "ablate")?;
    run.write(CONFIG_FILE, &cfg)?;
    eprintln!("training {} settings", settings.len());
    let ablation = run_ablation(
        &settings,
        &cfg.model,
        &cfg.render,
        &splits.train,
        non_empty(&splits.val),
        non_empty(&splits.test),
        &cfg.train,
    )?;
    run.write("ablation.json", &ablation)?;
    let table = ablation.to_table();
    std::fs::write(run.join("table.txt"), &table).with_context(|| format!("writing table in {}", out_dir.display()))?;
    print!("{table}");
    let mut rows = Vec::new();
    for row in &ablation.rows {
        if let Some(m) = &row.test {
            save_confusion_heatmap(m, run.join(&format!("confusion_{}.png", row.setting.as_str())), HEATMAP_CELL)?;
        }
        rows.push(SettingRow { model: row.setting.as_str().to_string(), val: row.val.clone(), test: row.test.clone() });
    }
    run.write(METRICS_FILE, &RunMetrics::Ablation { class_names: class_names(&splits.train), rows })?;
    run.finish()
}

pub fn sweep(
    manifest: &Path,
    checkpoints: &[PathBuf],
    epochs: Option<usize>,
    out_dir: &Path,
    common: &Common,
) -> anyhow::Result<()> {
    let mut cfg = prepare(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if cfg.sweep.is_empty() {
        return Err(Invalid("sweep grid is empty".into()).into());
    }
    let splits = load_splits(manifest, &cfg)?;
    if splits.test.is_empty() {
        return Err(Invalid("manifest has no test clips".into()).into());
    }
    cfg.fit_to(&splits.test);
    cfg.model.in_channels = InputSetting::Fused.in_channels();
    cfg.validate()?;
    let run = RunDir::create(out_dir, "sweep")?;
    run.write(CONFIG_FILE, &cfg)?;

    let mut models: Vec<(String, Box<dyn GroupActivityModel>)> = Vec::new();
    if checkpoints.is_empty() {
        if splits.train.is_empty() {
            return Err(Invalid("manifest has no training clips and no checkpoints were given".into()).into());
        }
        let choices = [ModelChoice::Rendered(InputSetting::Fused), ModelChoice::LateFusion, ModelChoice::EarlyFusion];
        for choice in choices {
            let mut model = build_model(&model_spec(choice, &cfg))?;
            let outcome = train_model(model.as_mut(), &splits.train, non_empty(&splits.val), &cfg.train)?;
            let meta = checkpoint_meta(model.as_ref(), &splits.train, &outcome);
            let name = meta.spec.name().to_string();
            save_checkpoint(run.join(&format!("checkpoint_{name}.safetensors")), model.as_mut(), &meta)?;
            models.push((name, model));
        }
    } else {
        for path in checkpoints {
            let (model, meta) = load_checkpoint(path)?;
            let mut name = meta.spec.name().to_string();
            if models.iter().any(|(n, _)| *n == name) {
                name = format!("{name}#{}", models.len());
            }
            models.push((name, model));
        }
    }
    let report = robustness_sweep(&mut models, &splits.test, &cfg.sweep, cfg.train.batch_size)?;
    run.write("robustness.json", &report)?;
    let table = report.to_table();
    std::fs::write(run.join("table.txt"), &table).with_context(|| format!("writing table in {}", out_dir.display()))?;
    print!("{table}");
    run.write(METRICS_FILE, &RunMetrics::Sweep { class_names: class_names(&splits.test), report })?;
    run.finish()
}

pub fn report(runs: &[PathBuf], out_dir: &Path) -> anyhow::Result<()> {
    let collected = report::collect(runs)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let merged = report::build(&collected);
    let text = report::to_text(&merged);
    std::fs::write(out_dir.join("report.txt"), &text).with_context(|| format!("writing report in {}", out_dir.display()))?;
    write_json(out_dir.join("report.json"), &merged)?;
    let images = report::heatmaps(&collected, out_dir)?;
    print!("{text}");
    println!("{} confusion heatmaps in {}", images.len(), out_dir.display());
    Ok(())
}
