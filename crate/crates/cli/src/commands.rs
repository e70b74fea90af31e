use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fanet::data::{generate_synthetic, load_manifest, load_split, write_dataset, Image, Sample, Split};
use fanet::error::Error;
use fanet::experiment::{ablation_rows, evaluate_model, run_ablation, Evaluation};
use fanet::inference::{iterative_predict, InferenceOptions};
use fanet::mask_codec::BinaryMask;
use fanet::metrics::{report_csv, report_markdown, DatasetReport, ReportRow};
use fanet::model::{Ablation, Checkpoint, Fanet};
use fanet::training::{fit, write_log_csv, TrainEvent};

use crate::config::RunConfig;
use crate::{CliError, Common};

struct Data {
    name: String,
    train: Vec<Sample>,
    val: Option<Vec<Sample>>,
    test: Vec<Sample>,
}

fn load_config(common: &Common, extra: &[String]) -> Result<RunConfig, CliError> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    let mut cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    match common.dataset.as_deref() {
        Some("synthetic") => cfg.dataset.manifest = None,
        Some(path) => cfg.dataset.manifest = Some(PathBuf::from(path)),
        None => {}
    }
    Ok(cfg)
}

fn iteration_override(iterations: Option<usize>) -> Vec<String> {
    iterations.map(|n| format!("eval.iterations={n}")).into_iter().collect()
}

fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    match &cfg.dataset.manifest {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Config(format!("manifest {} does not exist", path.display())));
            }
            let manifest = load_manifest(path)?;
            let val = load_split(&manifest, Split::Val)?;
            Ok(Data {
                name: manifest.name.clone(),
                train: load_split(&manifest, Split::Train)?,
                val: (!val.is_empty()).then_some(val),
                test: load_split(&manifest, Split::Test)?,
            })
        }
        None => {
            let set = generate_synthetic(&cfg.dataset.synthetic)?;
            Ok(Data {
                name: "synthetic".into(),
                train: set.train,
                val: None,
                test: set.test,
            })
        }
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

/// Sample ids become file names; anything unusual is replaced.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.~".contains(c) { c } else { '_' })
        .collect()
}

pub fn train(common: &Common, ablation: Option<Ablation>, export_masks: bool) -> Result<(), CliError> {
    let mut cfg = load_config(common, &[])?;
    if let Some(a) = ablation {
        cfg.network = cfg.network.with_ablation(a);
    }
    let data = load_data(&cfg)?;
    create_dir(&common.out)?;
    write_text(&common.out.join("config.toml"), &cfg.to_toml())?;
    eprintln!(
        "training on {} ({} samples) for {} epochs",
        data.name,
        data.train.len(),
        cfg.train.epochs
    );
    let outcome = fit(&cfg.train, &cfg.network, &data.train, data.val.as_deref(), &mut |e| {
        if let TrainEvent::EpochEnd(r) = e {
            eprintln!(
                "epoch {:>3}  train {:.5}  val {}  lr {:e}  {:.1}s",
                r.epoch,
                r.train_loss,
                r.val_loss.map_or("-".into(), |v| format!("{v:.5}")),
                r.lr,
                r.epoch_time
            );
        }
    })?;
    outcome.best.save(&common.out.join("checkpoint_best.ckpt"))?;
    outcome.last.save(&common.out.join("checkpoint_last.ckpt"))?;
    write_log_csv(&outcome.state.history, &common.out.join("train_log.csv"))?;
    outcome.state.store.save(&common.out.join("mask_store.bin"))?;
    if export_masks {
        let dir = common.out.join("masks");
        create_dir(&dir)?;
        for (id, _) in outcome.state.store.iter() {
            let mask = outcome.state.store.get(id).expect("listed ids are present");
            mask.write_png(&dir.join(format!("{}.png", file_stem(id))))?;
        }
    }
    eprintln!(
        "best epoch {}; artifacts in {}",
        outcome.best_epoch,
        common.out.display()
    );
    Ok(())
}

pub struct InferFlags {
    pub iterations: Option<usize>,
    pub size: Option<usize>,
    pub save_iterations: bool,
    pub overlay: bool,
    pub early_stop: bool,
}

fn load_checkpoint(path: &Path) -> Result<Fanet<f32>, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?.to_model()?)
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Runtime(Error::io(p, e)))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(CliError::Config(format!("input {} does not exist", p.display())));
        }
    }
    if files.is_empty() {
        return Err(CliError::Config("no input images found".into()));
    }
    Ok(files)
}

/// Left: the image. Right: the image with predicted foreground tinted red.
fn overlay(image: &Image, mask: &BinaryMask) -> Result<Image, CliError> {
    let (h, w) = image.dims();
    let mut data = vec![0.0; 3 * h * 2 * w];
    for c in 0..3 {
        let plane = image.plane(c);
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                let row = (c * h + y) * 2 * w;
                data[row + x] = v;
                data[row + w + x] = if mask.get(y, x) {
                    if c == 0 { 0.5 + 0.5 * v } else { 0.5 * v }
                } else {
                    v
                };
            }
        }
    }
    Ok(Image::new(h, 2 * w, data)?)
}

pub fn infer(common: &Common, checkpoint: &Path, inputs: &[PathBuf], flags: InferFlags) -> Result<(), CliError> {
    let cfg = load_config(common, &iteration_override(flags.iterations))?;
    let mut model = load_checkpoint(checkpoint)?;
    let samples: Vec<(String, Image, Option<BinaryMask>)> = if inputs.is_empty() {
        load_data(&cfg)?
            .test
            .into_iter()
            .map(|s| (s.id, s.image, Some(s.mask)))
            .collect()
    } else {
        collect_images(inputs)?
            .into_iter()
            .map(|p| {
                let mut img = Image::read(&p)?;
                if let Some(s) = flags.size {
                    img = img.resize_bilinear(s, s);
                }
                let id = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                Ok((id, img, None))
            })
            .collect::<Result<_, CliError>>()?
    };
    let divisor = model.config().spatial_divisor();
    let masks_dir = common.out.join("masks");
    create_dir(&masks_dir)?;
    let options = InferenceOptions {
        iterations: cfg.eval.iterations,
        early_stop: flags.early_stop,
    };
    let mut csv = String::from("id,iteration,foreground,changed,f1,iou,precision,recall\n");
    for (i, (id, image, truth)) in samples.iter().enumerate() {
        let (h, w) = image.dims();
        if h % divisor != 0 || w % divisor != 0 {
            return Err(CliError::Config(format!(
                "{id}: {h}x{w} is not divisible by {divisor}; pass --size"
            )));
        }
        let trace = iterative_predict(&mut model, image, options, truth.as_ref())?;
        let stem = file_stem(id);
        for (t, mask) in trace.masks.iter().enumerate() {
            let changed = match t {
                0 => String::new(),
                _ => {
                    let prev = &trace.masks[t - 1];
                    let diff = mask.values().iter().zip(prev.values()).filter(|(a, b)| a != b).count();
                    diff.to_string()
                }
            };
            let _ = write!(csv, "{id},{t},{},{changed}", mask.count_ones());
            match trace.metrics.as_ref().map(|m| m[t]) {
                Some(m) => {
                    let _ = writeln!(csv, ",{:.6},{:.6},{:.6},{:.6}", m.f1, m.iou, m.precision, m.recall);
                }
                None => csv.push_str(",,,,\n"),
            }
        }
        trace.final_mask().write_png(&masks_dir.join(format!("{stem}.png")))?;
        if flags.save_iterations {
            let dir = common.out.join("iterations").join(&stem);
            create_dir(&dir)?;
            for (t, mask) in trace.masks.iter().enumerate() {
                mask.write_png(&dir.join(format!("iter_{t:02}.png")))?;
            }
        }
        if flags.overlay {
            let dir = common.out.join("overlays");
            create_dir(&dir)?;
            overlay(image, trace.final_mask())?.write_png(&dir.join(format!("{stem}.png")))?;
        }
        eprintln!("[{}/{}] {id}: {} iterations", i + 1, samples.len(), trace.masks.len() - 1);
    }
    write_text(&common.out.join("trace.csv"), &csv)
}

fn per_image_csv(report: &DatasetReport) -> String {
    let mut out = String::from("id,f1,iou,precision,recall,specificity,accuracy,f2,miou\n");
    for r in &report.per_image {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.id, m.f1, m.iou, m.precision, m.recall, m.specificity, m.accuracy, m.f2, r.miou
        );
    }
    out
}

fn iterations_csv(e: &Evaluation) -> String {
    let mut out = String::from("iteration,F1,mIoU,recall,precision,specificity,accuracy,F2\n");
    for (t, r) in e.per_iteration.iter().enumerate() {
        let m = &r.mean;
        let _ = writeln!(
            out,
            "{t},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.f1, r.miou, m.recall, m.precision, m.specificity, m.accuracy, m.f2
        );
    }
    out
}

pub fn eval(common: &Common, checkpoint: &Path, iterations: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(common, &iteration_override(iterations))?;
    let mut model = load_checkpoint(checkpoint)?;
    let data = load_data(&cfg)?;
    let e = evaluate_model(&mut model, &data.test, &cfg.eval)?;
    create_dir(&common.out)?;
    let method = model
        .config()
        .ablation()
        .map_or("FANet".to_string(), |a| format!("{a} ({})", a.description()));
    let rows = [ReportRow::new(method, e.report())];
    write_text(&common.out.join("report.csv"), &report_csv(&rows))?;
    write_text(&common.out.join("report.md"), &report_markdown(&rows))?;
    write_text(&common.out.join("per_image.csv"), &per_image_csv(e.report()))?;
    write_text(&common.out.join("iterations.csv"), &iterations_csv(&e))?;
    eprintln!(
        "{}: F1 {:.4}  mIoU {:.4} over {} images",
        data.name,
        e.report().mean.f1,
        e.report().miou,
        data.test.len()
    );
    Ok(())
}

pub fn ablate(common: &Common, ablations: &[Ablation], iterations: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(common, &iteration_override(iterations))?;
    let data = load_data(&cfg)?;
    let chosen = if ablations.is_empty() { Ablation::ALL.to_vec() } else { ablations.to_vec() };
    create_dir(&common.out)?;
    write_text(&common.out.join("config.toml"), &cfg.to_toml())?;
    let mut runs = run_ablation(
        &cfg.train,
        &cfg.network,
        &data.train,
        data.val.as_deref(),
        &data.test,
        &cfg.eval,
        &chosen,
        &mut |a, r| eprintln!("{a} epoch {:>3}  train {:.5}  lr {:e}  {:.1}s", r.epoch, r.train_loss, r.lr, r.epoch_time),
    )?;
    for run in &mut runs {
        let dir = common.out.join(run.ablation.to_string());
        create_dir(&dir)?;
        write_log_csv(&run.history, &dir.join("train_log.csv"))?;
        write_text(&dir.join("iterations.csv"), &iterations_csv(&run.evaluation))?;
        let meta = serde_json::json!({ "train": cfg.train, "ablation": run.ablation });
        Checkpoint::from_model(&mut run.model, meta).save(&dir.join("checkpoint.ckpt"))?;
    }
    let rows = ablation_rows(&runs);
    write_text(&common.out.join("ablation.csv"), &report_csv(&rows))?;
    write_text(&common.out.join("ablation.md"), &report_markdown(&rows))?;
    eprint!("{}", report_markdown(&rows));
    Ok(())
}

pub fn synth_gen(common: &Common) -> Result<(), CliError> {
    let mut cfg = load_config(common, &[])?;
    if let Some(seed) = common.seed {
        cfg.dataset.synthetic.seed = seed;
    }
    let set = generate_synthetic(&cfg.dataset.synthetic)?;
    create_dir(&common.out)?;
    let manifest = write_dataset(&set, &common.out, "synthetic-blobs")?;
    eprintln!(
        "wrote {} samples and {}",
        manifest.records.len(),
        common.out.join("manifest.txt").display()
    );
    Ok(())
}
