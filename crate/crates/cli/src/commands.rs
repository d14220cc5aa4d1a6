use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use stainreg::augment::augment_indexed;
use stainreg::dataset::{list_pngs, Dataset};
use stainreg::eval::experiment::{run_experiment, ExperimentSpec};
use stainreg::eval::{confusion, metrics, report_csv, Averaging, LabelMap, MetricsRow};
use stainreg::stain::{angle_deg, profile_image, StainProfile};
use stainreg::train::{
    gradient_check, prepare_batch, train, write_log_csv, Checkpoint, Sample, StainAugmenter,
};
use stainreg::{estimate_macenko, estimate_vahadane, normalize_to_target, RgbImage, StainMatrix};

use crate::config::{pick, require_exists, RunConfig};
use crate::error::CliError;
use crate::{AugmentArgs, EstimateArgs, EvalArgs, Method, NormalizeArgs, SynthArgs, TrainArgs};

/// Gradient checks must agree to this relative error.
const GRAD_TOLERANCE: f64 = 1e-4;

fn estimate_matrix(img: &RgbImage, method: Method, cfg: &RunConfig) -> Result<StainMatrix, CliError> {
    Ok(match method {
        Method::Macenko => {
            estimate_macenko(img, cfg.od_threshold, stainreg::stain::DEFAULT_ANGLE_PERCENTILE)?
        }
        Method::Vahadane => estimate_vahadane(img, &cfg.snmf, cfg.od_threshold)?.matrix,
    })
}

/// A single PNG, or every PNG directly inside a directory (sorted).
fn input_images(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    require_exists(input)?;
    if input.is_dir() {
        let files = list_pngs(input)?;
        if files.is_empty() {
            return Err(CliError::io(format!("no PNG files in {}", input.display())));
        }
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.set_seed(args.seed);
    if let Some(l) = args.lambda {
        cfg.snmf.sparsity_lambda = l;
    }
    if let Some(n) = args.max_iters {
        cfg.snmf.max_iters = n;
    }
    let input = pick(args.input, &cfg.paths.input, "input")?;
    let out = pick(args.out, &cfg.paths.output, "out")?;
    require_exists(&input)?;
    cfg.snmf.validate()?;

    let img = RgbImage::load(&input)?;
    let matrix = estimate_matrix(&img, args.method, &cfg)?;
    let profile = profile_image(&img, matrix, cfg.od_threshold);
    profile.save(&out)?;

    let [h, e] = matrix.stains();
    println!("method: {}", matrix.method());
    println!("hematoxylin: [{:.4}, {:.4}, {:.4}]", h[0], h[1], h[2]);
    println!("eosin:       [{:.4}, {:.4}, {:.4}]", e[0], e[1], e[2]);
    println!("angle between stains: {:.2} deg", angle_deg(&h, &e));
    let reference = StainMatrix::reference();
    println!(
        "angle to reference: H {:.2} deg, E {:.2} deg",
        angle_deg(&h, &reference.hematoxylin()),
        angle_deg(&e, &reference.eosin())
    );
    Ok(())
}

/// Manifest rows for one input: source, output, alphaH, alphaE, betaH, betaE.
type ManifestRows = Vec<[String; 6]>;

pub fn augment(args: AugmentArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.set_seed(args.seed);
    if let Some(n) = args.n {
        cfg.perturb.n_augment = n;
    }
    if let Some(s) = args.sigma1 {
        cfg.perturb.sigma1 = s;
    }
    if let Some(s) = args.sigma2 {
        cfg.perturb.sigma2 = s;
    }
    cfg.perturb.validate()?;
    let input = pick(args.input, &cfg.paths.input, "input")?;
    let out = pick(args.out, &cfg.paths.output, "out")?;
    let stains = args.stains.or(cfg.paths.stains.clone());
    let files = input_images(&input)?;
    let fixed = match &stains {
        Some(p) => {
            require_exists(p)?;
            Some(StainProfile::load(p)?.matrix)
        }
        None => None,
    };
    create_dir(&out)?;

    let results: Vec<Result<ManifestRows, CliError>> = files
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            let img = RgbImage::load(path)?;
            let w = match fixed {
                Some(w) => w,
                None => estimate_matrix(&img, args.method, &cfg)?,
            };
            let views = augment_indexed(&img, &w, &cfg.perturb, index as u64)?;
            let mut rows = Vec::with_capacity(views.len());
            for (k, view) in views.iter().enumerate() {
                let name = format!("{}_aug{}.png", stem(path), k + 1);
                let target = out.join(&name);
                view.image.save_png(&target)?;
                let d = view.draw;
                rows.push([
                    path.display().to_string(),
                    target.display().to_string(),
                    d.alpha[0].to_string(),
                    d.alpha[1].to_string(),
                    d.beta[0].to_string(),
                    d.beta[1].to_string(),
                ]);
            }
            Ok(rows)
        })
        .collect();

    let mut manifest = csv::Writer::from_path(out.join("manifest.csv"))?;
    manifest.write_record(["source", "output", "alphaH", "alphaE", "betaH", "betaE"])?;
    let mut written = 0;
    for rows in results {
        for row in rows? {
            manifest.write_record(&row)?;
            written += 1;
        }
    }
    manifest.flush()?;
    println!("wrote {written} augmented images for {} inputs to {}", files.len(), out.display());
    Ok(())
}

pub fn normalize(args: NormalizeArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.set_seed(args.seed);
    let input = pick(args.input, &cfg.paths.input, "input")?;
    let target = pick(args.target, &cfg.paths.target, "target")?;
    let out = pick(args.out, &cfg.paths.output, "out")?;
    let files = input_images(&input)?;
    require_exists(&target)?;
    let target = StainProfile::load(&target)?;
    create_dir(&out)?;

    files
        .par_iter()
        .map(|path| {
            let img = RgbImage::load(path)?;
            let w = estimate_matrix(&img, args.method, &cfg)?;
            let source = profile_image(&img, w, cfg.od_threshold);
            let normalized = normalize_to_target(&img, &source, &target)?;
            normalized.save_png(out.join(format!("{}.png", stem(path))))?;
            Ok(())
        })
        .collect::<Result<Vec<()>, CliError>>()?;
    println!("normalized {} images into {}", files.len(), out.display());
    Ok(())
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name(format!("{}_log.csv", stem(checkpoint)))
}

pub fn train_toy(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.set_seed(args.seed);
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.n {
        t.perturb.n_augment = v;
    }
    if args.no_consistency {
        t.use_consistency = false;
    }
    let train_cfg = *t;
    train_cfg.validate()?;
    let data = pick(args.data, &cfg.paths.data, "data")?;
    let out = pick(args.out, &cfg.paths.output, "out")?;
    let log_path = args.log.or(cfg.paths.log.clone()).unwrap_or_else(|| default_log_path(&out));
    require_exists(&data)?;
    let stains = args.stains.or(cfg.paths.stains.clone());
    if let Some(p) = &stains {
        require_exists(p)?;
    }

    let set = Dataset::load_class_folders(&data)?;
    if set.is_empty() {
        return Err(CliError::io(format!("no training images in {}", data.display())));
    }
    let side = train_cfg.input_side;
    let samples: Vec<Sample> =
        set.images.iter().zip(&set.labels).map(|(img, &y)| Sample::new(img, y, side)).collect();
    let augmenter = match &stains {
        Some(p) => StainAugmenter::fixed(StainProfile::load(p)?.matrix),
        None => {
            let inputs: Vec<RgbImage> = samples.iter().map(|s| s.x.clone()).collect();
            let (aug, fallbacks) = StainAugmenter::estimate(
                &inputs,
                &cfg.snmf,
                cfg.od_threshold,
                StainMatrix::reference(),
            )?;
            if fallbacks > 0 {
                eprintln!("{fallbacks} images used the reference stain matrix");
            }
            aug
        }
    };
    let classes = set.num_classes();

    if args.check_grads {
        let params = stainreg::ModelParams::init(
            stainreg::train::ModelDims::for_side(side, classes),
            train_cfg.seed,
        );
        let n = samples.len().min(train_cfg.batch_size.max(2));
        let indices: Vec<usize> = (0..n).collect();
        let batch = prepare_batch(&samples, &indices, 0, &augmenter, &train_cfg)?;
        let err = gradient_check(&params, &batch, train_cfg.reduction, 10, train_cfg.seed);
        println!("gradient check: max relative error {err:.3e}");
        if !(err < GRAD_TOLERANCE) {
            return Err(CliError::Verification(format!(
                "gradient check failed: max relative error {err:.3e} >= {GRAD_TOLERANCE:e}"
            )));
        }
    }

    let outcome = train(&samples, classes, &augmenter, &train_cfg)?;
    Checkpoint::new(&outcome.params, train_cfg.seed, train_cfg.epochs, set.class_names.clone())
        .save(&out)?;
    let mut log = Vec::new();
    write_log_csv(&outcome.log, &mut log)?;
    write_file(&log_path, log)?;
    if let Some(l) = outcome.final_loss() {
        println!("final loss: l_c {:.6} l_s {:.6} l_total {:.6}", l.l_c, l.l_s, l.l_total);
    }
    println!("checkpoint: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentSpec>(&text)
                .map_err(|e| CliError::io(format!("invalid spec {}: {e}", path.display())))?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(r) = args.repeats {
        spec.repeats = r;
    }
    if let Some(s) = args.seed {
        spec.train.seed = s;
    }
    create_dir(&args.out)?;

    if !args.no_images {
        let source = stainreg::eval::render_synthetic(&spec.source)?;
        let target = stainreg::eval::render_synthetic(&spec.target)?;
        source.write_class_folders(&args.out.join("source"))?;
        target.write_class_folders(&args.out.join("target"))?;
        println!("rendered {} source and {} target images", source.len(), target.len());
    }
    if args.render_only {
        return Ok(());
    }
    let report = run_experiment(&spec)?;
    let csv = report.to_csv();
    write_file(&args.out.join("report.csv"), &csv)?;
    print!("{}", report_csv(&report.mean_rows()));
    println!(
        "consistency better on {} of {} seeds",
        report.consistency_wins(),
        report.seeds.len()
    );
    Ok(())
}

/// Labels from a CSV whose last column is the label; a header row is
/// recognised by a `label` last column.
fn read_labels(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    require_exists(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let Some(label) = rec.get(rec.len().saturating_sub(1)) else { continue };
        if i == 0 && label.trim().eq_ignore_ascii_case("label") {
            continue;
        }
        let id = if rec.len() > 1 { rec[0].trim().to_string() } else { String::new() };
        out.push((id, label.trim().to_string()));
    }
    Ok(out)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let preds = read_labels(&args.pred)?;
    let truths = read_labels(&args.truth)?;
    if preds.len() != truths.len() {
        return Err(CliError::io(format!(
            "{} predictions but {} ground-truth labels",
            preds.len(),
            truths.len()
        )));
    }
    for (p, t) in preds.iter().zip(&truths) {
        if p.0 != t.0 {
            return Err(CliError::io(format!("row ids differ: {:?} vs {:?}", p.0, t.0)));
        }
    }
    let map = match args.label_map.as_deref() {
        None => None,
        Some("k19") => Some(LabelMap::k19()),
        Some("k16") => Some(LabelMap::k16()),
        Some(path) => Some(LabelMap::load(Path::new(path))?),
    };

    let (p_idx, t_idx, k) = match &map {
        Some(map) => {
            let mut p_idx = Vec::new();
            let mut t_idx = Vec::new();
            for (p, t) in preds.iter().zip(&truths) {
                if let Some(t) = map.lookup(&t.1)? {
                    // A prediction of a dropped class can never be correct.
                    let p = map.lookup(&p.1)?.unwrap_or(stainreg::eval::CANONICAL_CLASSES.len());
                    p_idx.push(p);
                    t_idx.push(t);
                }
            }
            (p_idx, t_idx, stainreg::eval::CANONICAL_CLASSES.len() + 1)
        }
        None => {
            let mut names: Vec<&str> =
                preds.iter().chain(&truths).map(|(_, l)| l.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            let index = |l: &str| names.binary_search(&l).expect("collected above");
            (
                preds.iter().map(|(_, l)| index(l)).collect(),
                truths.iter().map(|(_, l)| index(l)).collect(),
                names.len(),
            )
        }
    };
    let averaging = match args.averaging {
        crate::Avg::Weighted => Averaging::Weighted,
        crate::Avg::Macro => Averaging::Macro,
    };
    let m = metrics(&confusion(&p_idx, &t_idx, k)?, averaging)?;
    let csv = report_csv(&[MetricsRow::new(args.method, args.dataset, m)]);
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
