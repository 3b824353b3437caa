use std::fs;
use std::path::{Path, PathBuf};

use denseed::arch::{audit_table, reference_table, ModelConfig};
use denseed::dataset::{
    load_dataset, prepare, read_tiff_stack, split_by_fov, DatasetManifest, DatasetSplit, LoadOptions, Normalization,
    FRAMES_PER_FOV,
};
use denseed::eval::{
    dip_metric, evaluate, export_artifacts, line_profile, profile_csv, render_profile_plot, EvalOptions, ProfileRequest,
};
use denseed::kv::KvMap;
use denseed::scalar::Scalar;
use denseed::synth::{make_synth_dataset, write_synth_dataset, NoiseModel, SynthConfig};
use denseed::train::{run_config_text, Checkpoint, TrainConfig, TrainError, Trainer};

use crate::config::{get_or, layer, pair, read_config_file, resolve_seed};
use crate::manifest::RunManifest;
use crate::{AuditArgs, CliError, EvalArgs, ProfileArgs, SynthArgs, TrainArgs};

pub const RUN_MANIFEST: &str = "run.manifest";
pub const SPLIT_FILE: &str = "split.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn audit(args: &AuditArgs) -> Result<(), CliError> {
    let mut configs: Vec<ModelConfig> = Vec::new();
    if args.builtin || args.configs.is_empty() {
        configs.extend(reference_table().iter().map(|r| r.config));
    }
    for text in &args.configs {
        configs.push(ModelConfig::parse(text)?);
    }
    let report = audit_table(&configs)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(out) = &args.out {
        let mut manifest = RunManifest::new("audit");
        manifest.config.insert("builtin", args.builtin || args.configs.is_empty());
        for (i, c) in args.configs.iter().enumerate() {
            manifest.config.insert(format!("model.{i}"), c);
        }
        write_text(out, &csv)?;
        let base = out.parent().unwrap_or(Path::new(""));
        manifest.outputs.insert("csv".into(), display(out));
        manifest.add_artifact(base, out)?;
        manifest.summary.insert("rows".into(), report.rows.len().to_string());
        manifest.summary.insert("clean".into(), report.is_clean().to_string());
        manifest.write(&out.with_extension("manifest"))?;
    }
    if report.is_clean() {
        Ok(())
    } else {
        for line in report.diff() {
            eprintln!("{line}");
        }
        Err(CliError::AuditMismatch)
    }
}

const SYNTH_KEYS: [&str; 18] = [
    "preset",
    "fovs",
    "frames",
    "size",
    "height",
    "width",
    "fwhm_wide",
    "fwhm_narrow",
    "poisson_scale",
    "read_noise",
    "seed",
    "pairs",
    "singles",
    "separation",
    "amplitude",
    "filaments",
    "filament_intensity",
    "margin",
];

/// Resolves a synthetic-benchmark configuration from layered keys.
pub fn synth_config(kv: &KvMap) -> Result<SynthConfig, CliError> {
    let d = match kv.get("preset").unwrap_or("default") {
        "default" => SynthConfig::default(),
        "benchmark" => SynthConfig::benchmark(16, 0),
        other => return Err(CliError::Config(format!("preset must be default or benchmark, got {other:?}"))),
    };
    let size: usize = get_or(kv, "size", d.height)?;
    let p = &d.phantom;
    let mut phantom = p.clone();
    phantom.pairs = pair(kv, "pairs", p.pairs)?;
    phantom.singles = pair(kv, "singles", p.singles)?;
    phantom.separation = pair(kv, "separation", p.separation)?;
    phantom.amplitude = pair(kv, "amplitude", p.amplitude)?;
    phantom.filaments = pair(kv, "filaments", p.filaments)?;
    phantom.filament_intensity = pair(kv, "filament_intensity", p.filament_intensity)?;
    phantom.margin = get_or(kv, "margin", p.margin)?;
    Ok(SynthConfig {
        n_fovs: get_or(kv, "fovs", d.n_fovs)?,
        frames_per_fov: get_or(kv, "frames", d.frames_per_fov)?,
        height: get_or(kv, "height", size)?,
        width: get_or(kv, "width", size)?,
        phantom,
        fwhm_wide: get_or(kv, "fwhm_wide", d.fwhm_wide)?,
        fwhm_narrow: get_or(kv, "fwhm_narrow", d.fwhm_narrow)?,
        noise: NoiseModel {
            poisson_scale: get_or(kv, "poisson_scale", d.noise.poisson_scale)?,
            gaussian_sigma: get_or(kv, "read_noise", d.noise.gaussian_sigma)?,
        },
        seed: resolve_seed(kv)?,
    })
}

fn synth_config_kv(c: &SynthConfig) -> KvMap {
    let mut kv = KvMap::new();
    let p = &c.phantom;
    kv.insert("fovs", c.n_fovs);
    kv.insert("frames", c.frames_per_fov);
    kv.insert("height", c.height);
    kv.insert("width", c.width);
    kv.insert("fwhm_wide", c.fwhm_wide);
    kv.insert("fwhm_narrow", c.fwhm_narrow);
    kv.insert("poisson_scale", c.noise.poisson_scale);
    kv.insert("read_noise", c.noise.gaussian_sigma);
    kv.insert("seed", c.seed);
    kv.insert("pairs", format!("{},{}", p.pairs.0, p.pairs.1));
    kv.insert("singles", format!("{},{}", p.singles.0, p.singles.1));
    kv.insert("separation", format!("{},{}", p.separation.0, p.separation.1));
    kv.insert("amplitude", format!("{},{}", p.amplitude.0, p.amplitude.1));
    kv.insert("filaments", format!("{},{}", p.filaments.0, p.filaments.1));
    kv.insert("filament_intensity", format!("{},{}", p.filament_intensity.0, p.filament_intensity.1));
    kv.insert("margin", p.margin);
    kv
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("synth");
    let file = args.config.as_deref().map(read_config_file).transpose()?;
    let mut flags = KvMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.insert(k, v);
        }
    };
    put("preset", args.preset.clone());
    put("fovs", args.fovs.map(|v| v.to_string()));
    put("frames", args.frames.map(|v| v.to_string()));
    put("size", args.size.map(|v| v.to_string()));
    put("fwhm_wide", args.fwhm_wide.map(|v| v.to_string()));
    put("fwhm_narrow", args.fwhm_narrow.map(|v| v.to_string()));
    put("poisson_scale", args.poisson_scale.map(|v| v.to_string()));
    put("read_noise", args.read_noise.map(|v| v.to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    let kv = layer(file.as_ref(), &flags, &SYNTH_KEYS)?;
    let config = synth_config(&kv)?;
    let data = make_synth_dataset(&config)?;
    let files = write_synth_dataset(&args.out, &data)?;

    manifest.config = synth_config_kv(&config);
    manifest.seed = Some(config.seed);
    if let Some(c) = &args.config {
        manifest.inputs.insert("config".into(), display(c));
    }
    manifest.outputs.insert("dataset".into(), display(&args.out));
    let inputs: usize = data.records.iter().map(|r| r.frames.len()).sum();
    manifest.summary.insert("inputs".into(), inputs.to_string());
    manifest.summary.insert("targets".into(), data.records.len().to_string());
    for f in &files {
        manifest.add_artifact(&args.out, f)?;
    }
    manifest.write(&args.out.join(RUN_MANIFEST))?;
    println!("wrote {} FOVs, {inputs} inputs, {} targets to {}", data.records.len(), data.records.len(), args.out.display());
    Ok(())
}

const MODEL_KEYS: [&str; 9] = ModelConfig::KEYS;
const DATA_KEYS: [&str; 6] = ["train_fovs", "train_ids", "frames", "dtype", "checkpoint_every", "normalization"];

fn parse_normalization(text: &str) -> Result<Normalization, CliError> {
    let bad = || CliError::Config(format!("normalization must be minmax or percentile:LOW,HIGH, got {text:?}"));
    match text.split_once(':') {
        None if text == "minmax" => Ok(Normalization::MinMax),
        Some(("percentile", range)) => {
            let (low, high) = range.split_once(',').ok_or_else(bad)?;
            let low: f64 = low.trim().parse().map_err(|_| bad())?;
            let high: f64 = high.trim().parse().map_err(|_| bad())?;
            if !(0.0..high).contains(&low) || high > 100.0 {
                return Err(bad());
            }
            Ok(Normalization::Percentile { low, high })
        }
        _ => Err(bad()),
    }
}

fn render_normalization(n: Normalization) -> String {
    match n {
        Normalization::MinMax => "minmax".into(),
        Normalization::Percentile { low, high } => format!("percentile:{low},{high}"),
    }
}

fn ids(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// Frames expected per FOV: explicit value, else the dataset manifest,
/// else the default protocol value.
fn load_options(explicit: Option<usize>, manifest: Option<&DatasetManifest>) -> LoadOptions {
    let frames = explicit.or_else(|| manifest.and_then(|m| m.frames_per_fov)).unwrap_or(FRAMES_PER_FOV);
    LoadOptions { expected_frames: Some(frames) }
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("train");
    let file = args.config.as_deref().map(read_config_file).transpose()?;
    let mut flags = KvMap::new();
    if let Some(m) = &args.model {
        flags.merge(&KvMap::parse_inline(m).map_err(|e| CliError::Config(format!("--model: {e}")))?);
    }
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.insert(k, v);
        }
    };
    put("train_fovs", args.train_fovs.map(|v| v.to_string()));
    put("train_ids", args.train_ids.clone());
    put("epochs", args.epochs.map(|v| v.to_string()));
    put("learning_rate", args.lr.map(|v| v.to_string()));
    put("weight_decay", args.wd.map(|v| v.to_string()));
    put("batch_size", args.batch_size.map(|v| v.to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    put("eval_every", args.eval_every.map(|v| v.to_string()));
    put("frames", args.frames.map(|v| v.to_string()));
    put("dtype", args.dtype.clone());
    let allowed: Vec<&str> = MODEL_KEYS.iter().chain(&TrainConfig::KEYS).chain(&DATA_KEYS).copied().collect();
    let mut kv = layer(file.as_ref(), &flags, &allowed)?;
    let seed = resolve_seed(&kv)?;
    kv.insert("seed", seed);

    let dataset_manifest = DatasetManifest::read(&args.data)?;
    let frames = kv.get("frames").map(|v| v.parse::<usize>()).transpose().map_err(|e| CliError::Config(format!("frames: {e}")))?;
    let records = load_dataset(&args.data, &load_options(frames, dataset_manifest.as_ref()))?;
    let all: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let resumed_split = args.resume.as_deref().map(read_split).transpose()?.flatten();
    let train_ids = if let Some(list) = kv.get("train_ids") {
        ids(list)
    } else if let Some(n) = kv.get("train_fovs") {
        let n: usize = n.parse().map_err(|_| CliError::Config(format!("train_fovs must be a count, got {n:?}")))?;
        if n == 0 || n > all.len() {
            return Err(CliError::Config(format!("train_fovs = {n} but the dataset has {} FOVs", all.len())));
        }
        all[..n].to_vec()
    } else if let Some(t) = resumed_split.as_ref().and_then(|kv| kv.get("train")) {
        ids(t)
    } else if let Some(m) = dataset_manifest.as_ref().filter(|m| !m.train.is_empty()) {
        m.train.clone()
    } else {
        return Err(CliError::Config("no training split: pass --train-fovs or --train-ids".into()));
    };
    let split = split_by_fov(&records, &train_ids, false)?;
    let (train_images, test_images) = split.frame_counts(&records);
    let normalization = parse_normalization(
        kv.get("normalization").or_else(|| resumed_split.as_ref().and_then(|s| s.get("normalization"))).unwrap_or("minmax"),
    )?;

    let mut split_kv = KvMap::new();
    split_kv.insert("train", split.train.join(","));
    split_kv.insert("test", split.test.join(","));
    split_kv.insert("normalization", render_normalization(normalization));
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let split_path = write_text(&args.out.join(SPLIT_FILE), &split_kv.render())?;

    manifest.seed = Some(seed);
    manifest.inputs.insert("data".into(), display(&args.data));
    if let Some(c) = &args.config {
        manifest.inputs.insert("config".into(), display(c));
    }
    if let Some(r) = &args.resume {
        manifest.inputs.insert("resume".into(), display(r));
    }
    manifest.outputs.insert("dir".into(), display(&args.out));
    manifest.summary.insert("train_images".into(), train_images.to_string());
    manifest.summary.insert("test_images".into(), test_images.to_string());
    manifest.summary.insert("train_fov_ids".into(), split.train.join(","));
    manifest.summary.insert("test_fov_ids".into(), split.test.join(","));
    manifest.add_artifact(&args.out, &split_path)?;

    let ctx = TrainContext { args, kv: &kv, records: &records, split: &split, normalization };
    let result = match kv.get("dtype").unwrap_or("f32") {
        "f32" => train_typed::<f32>(&ctx, &mut manifest),
        "f64" => train_typed::<f64>(&ctx, &mut manifest),
        other => Err(CliError::Config(format!("dtype must be f32 or f64, got {other:?}"))),
    };
    if let Err(e) = &result {
        manifest.summary.insert("status".into(), format!("failed: {e}"));
    }
    manifest.write(&args.out.join(RUN_MANIFEST))?;
    result
}

struct TrainContext<'a> {
    args: &'a TrainArgs,
    kv: &'a KvMap,
    records: &'a [denseed::dataset::FovRecord],
    split: &'a DatasetSplit,
    normalization: Normalization,
}

fn save_checkpoint<T: Scalar>(trainer: &Trainer<T>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    Ok(trainer.checkpoint().save(&out.join(CHECKPOINT_DIR))?)
}

fn train_typed<T: Scalar>(ctx: &TrainContext<'_>, manifest: &mut RunManifest) -> Result<(), CliError> {
    let out = &ctx.args.out;
    let mut trainer = match &ctx.args.resume {
        Some(dir) => {
            let ckpt = Checkpoint::<T>::load(dir).map_err(|e| match e {
                TrainError::Io(m) => CliError::Io(m),
                other => CliError::Data(format!("cannot resume: {other}")),
            })?;
            let mut t = Trainer::from_checkpoint(ckpt)?;
            if let Some(e) = ctx.kv.get("epochs") {
                t.config.epochs = e.parse().map_err(|_| CliError::Config(format!("epochs must be a count, got {e:?}")))?;
            }
            t
        }
        None => {
            let model = ModelConfig::from_kv(&model_kv(ctx.kv))?;
            let config = TrainConfig::from_kv(ctx.kv, &TrainConfig::default())?;
            Trainer::<T>::new(&model, &config)?
        }
    };
    let checkpoint_every: usize = get_or(ctx.kv, "checkpoint_every", 1)?;
    if checkpoint_every == 0 {
        return Err(CliError::Config("checkpoint_every must be at least 1".into()));
    }
    let data = prepare::<T>(ctx.records, ctx.split, ctx.normalization)?;
    manifest.summary.insert("train_patches".into(), data.train.len().to_string());
    manifest.config = trainer.model.to_kv();
    manifest.config.merge(&trainer.config.to_kv());
    manifest.config.insert("dtype", T::DTYPE);
    manifest.config.insert("normalization", render_normalization(ctx.normalization));
    manifest.config.insert("train_ids", ctx.split.train.join(","));
    manifest.config.insert("checkpoint_every", checkpoint_every);
    if let Some(f) = ctx.kv.get("frames") {
        manifest.config.insert("frames", f);
    }

    let run_config = write_text(&out.join("run-config.txt"), &run_config_text(&trainer.model, &trainer.config))?;
    manifest.add_artifact(out, &run_config)?;
    let epochs = trainer.config.epochs;
    let outcome = trainer.run(&data, |t| {
        let r = t.log.records.last().expect("epoch just finished");
        match r.test_mse {
            Some(test) => eprintln!("epoch {:>4}/{epochs}  train_mse {:.6e}  test_mse {:.6e}", r.epoch, r.train_mse, test),
            None => eprintln!("epoch {:>4}/{epochs}  train_mse {:.6e}", r.epoch, r.train_mse),
        }
        if t.epoch % checkpoint_every == 0 && t.epoch < t.config.epochs {
            t.checkpoint().save(&out.join(CHECKPOINT_DIR))?;
        }
        Ok(())
    });
    // on divergence the trainer holds the last good epoch
    let saved = save_checkpoint(&trainer, out)?;
    for f in &saved {
        manifest.add_artifact(out, f)?;
    }
    let log_path = write_text(&out.join("loss.csv"), &trainer.log.to_csv())?;
    manifest.add_artifact(out, &log_path)?;
    manifest.summary.insert("epochs_completed".into(), trainer.epoch.to_string());
    if let Some(last) = trainer.log.records.last() {
        manifest.summary.insert("final_train_mse".into(), format!("{:e}", last.train_mse));
        if let Some(t) = last.test_mse {
            manifest.summary.insert("final_test_mse".into(), format!("{t:e}"));
        }
    }
    outcome?;
    manifest.summary.insert("status".into(), "ok".into());
    Ok(())
}

fn model_kv(kv: &KvMap) -> KvMap {
    let mut m = KvMap::new();
    for key in MODEL_KEYS {
        if let Some(v) = kv.get(key) {
            m.insert(key, v);
        }
    }
    m
}

fn parse_point(text: &str) -> Result<(f64, f64), CliError> {
    let v = denseed::kv::parse_list::<f64>("point", text).map_err(|e| CliError::Usage(e.to_string()))?;
    match v[..] {
        [x, y] => Ok((x, y)),
        _ => Err(CliError::Usage(format!("expected \"x,y\", got {text:?}"))),
    }
}

fn parse_segment(text: &str, samples: usize) -> Result<ProfileRequest, CliError> {
    let v = denseed::kv::parse_list::<f64>("profile", text).map_err(|e| CliError::Usage(e.to_string()))?;
    match v[..] {
        [x0, y0, x1, y1] => Ok(ProfileRequest { p0: (x0, y0), p1: (x1, y1), n_samples: samples }),
        _ => Err(CliError::Usage(format!("expected \"x0,y0,x1,y1\", got {text:?}"))),
    }
}

/// The `split.txt` written next to a checkpoint directory, if any.
fn read_split(checkpoint: &Path) -> Result<Option<KvMap>, CliError> {
    let Some(path) = checkpoint.parent().map(|p| p.join(SPLIT_FILE)).filter(|p| p.exists()) else {
        return Ok(None);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    KvMap::parse(&text).map(Some).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn checkpoint_dtype(dir: &Path) -> Result<String, CliError> {
    let index = dir.join("checkpoint.txt");
    let text = fs::read_to_string(&index).map_err(|e| CliError::io(&index, e))?;
    let kv = KvMap::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", index.display())))?;
    Ok(kv.get("dtype").unwrap_or("f32").to_string())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("eval");
    let dtype = checkpoint_dtype(&args.checkpoint)?;
    match dtype.as_str() {
        "f32" => eval_typed::<f32>(args, &mut manifest),
        "f64" => eval_typed::<f64>(args, &mut manifest),
        other => Err(CliError::Data(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

fn eval_typed<T: Scalar>(args: &EvalArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let ckpt = Checkpoint::<T>::load(&args.checkpoint).map_err(|e| match e {
        TrainError::Io(m) => CliError::Io(m),
        other => CliError::Data(other.to_string()),
    })?;
    let split_kv = read_split(&args.checkpoint)?;
    let dataset_manifest = DatasetManifest::read(&args.data)?;
    let test_ids = if let Some(t) = &args.test_fovs {
        ids(t)
    } else if let Some(t) = split_kv.as_ref().and_then(|kv| kv.get("test")).filter(|t| !t.is_empty()) {
        ids(t)
    } else if let Some(m) = dataset_manifest.as_ref().filter(|m| !m.test.is_empty()) {
        m.test.clone()
    } else {
        return Err(CliError::Config("no held-out FOVs: pass --test-fovs".into()));
    };
    let normalization = parse_normalization(split_kv.as_ref().and_then(|kv| kv.get("normalization")).unwrap_or("minmax"))?;
    let records = load_dataset(&args.data, &load_options(args.frames, dataset_manifest.as_ref()))?;
    let known: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if let Some(bad) = test_ids.iter().find(|id| !known.contains(&id.as_str())) {
        return Err(denseed::dataset::DatasetError::UnknownFov(bad.clone()).into());
    }
    let split = DatasetSplit { train: Vec::new(), test: test_ids.clone() };
    let data = prepare::<T>(&records, &split, normalization)?;
    let profiles = args.profiles.iter().map(|p| parse_segment(p, args.samples)).collect::<Result<Vec<_>, _>>()?;
    let options = EvalOptions { profiles, um_per_px: args.um_per_px, dip_threshold: args.dip_threshold };
    let graph = ckpt.model.build()?;
    let report = evaluate(&graph, &ckpt.params, &data.test, &options)?;
    let files = export_artifacts(&report, &ckpt.log, &args.out)?;

    manifest.config.insert("test_fovs", test_ids.join(","));
    manifest.config.insert("normalization", render_normalization(normalization));
    manifest.config.insert("samples", args.samples);
    manifest.config.insert("um_per_px", args.um_per_px);
    manifest.config.insert("dip_threshold", args.dip_threshold);
    for (i, p) in args.profiles.iter().enumerate() {
        manifest.config.insert(format!("profile.{i}"), p);
    }
    manifest.seed = Some(ckpt.config.seed);
    manifest.inputs.insert("checkpoint".into(), display(&args.checkpoint));
    manifest.inputs.insert("data".into(), display(&args.data));
    manifest.outputs.insert("dir".into(), display(&args.out));
    manifest.summary.insert("test_images".into(), report.images.len().to_string());
    manifest.summary.insert("mean_mse".into(), format!("{:e}", report.mean_mse));
    for f in &files {
        manifest.add_artifact(&args.out, f)?;
    }
    manifest.write(&args.out.join(RUN_MANIFEST))?;
    println!("mean_mse {:e} over {} images", report.mean_mse, report.images.len());
    Ok(())
}

pub fn profile(args: &ProfileArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("profile");
    let (p0, p1) = (parse_point(&args.from)?, parse_point(&args.to)?);
    let pages = read_tiff_stack(&args.image)?;
    let image = pages
        .get(args.page)
        .ok_or_else(|| CliError::Usage(format!("{} has {} pages, asked for page {}", args.image.display(), pages.len(), args.page)))?
        .mapv(f64::from);
    let length = (p1.0 - p0.0).hypot(p1.1 - p0.1);
    let samples = args.samples.unwrap_or(length.ceil() as usize + 1).max(2);
    let source = args.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let series = line_profile(&image, p0, p1, samples, args.um_per_px, &source)?;
    let dip = dip_metric(&series, args.dip_threshold);

    let csv = write_text(&args.out, &profile_csv(&series))?;
    let png = args.out.with_extension("png");
    render_profile_plot(&series).save(&png).map_err(|e| CliError::io(&png, e))?;
    let base = args.out.parent().unwrap_or(Path::new(""));
    manifest.config.insert("from", &args.from);
    manifest.config.insert("to", &args.to);
    manifest.config.insert("page", args.page);
    manifest.config.insert("samples", samples);
    manifest.config.insert("um_per_px", args.um_per_px);
    manifest.config.insert("dip_threshold", args.dip_threshold);
    manifest.inputs.insert("image".into(), display(&args.image));
    manifest.outputs.insert("csv".into(), display(&csv));
    manifest.outputs.insert("plot".into(), display(&png));
    manifest.summary.insert("resolved".into(), dip.resolved.to_string());
    manifest.summary.insert("dip_depth".into(), format!("{}", dip.dip_depth));
    manifest.summary.insert("flat".into(), series.flat.to_string());
    manifest.add_artifact(base, &csv)?;
    manifest.add_artifact(base, &png)?;
    manifest.write(&args.out.with_extension("manifest"))?;
    println!("resolved {} dip_depth {:.4} peaks {:?}", dip.resolved, dip.dip_depth, dip.peak_positions);
    Ok(())
}
