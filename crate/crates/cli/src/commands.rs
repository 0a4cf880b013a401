use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hazelight::fixtures;
use hazelight::image::{histogram, invert, load_image, save_image, Histogram, ImagePlane};
use hazelight::iqa::{fit_niqe_model, format_value, niqe, psnr, ssim_metric, NiqeModel};
use hazelight::network::{grad_check, load_checkpoint, CheckOptions, NetConfig};
use hazelight::seeds;
use hazelight::training::{
    load_dataset, run_semi_supervised, run_supervised, write_dataset, Sample, SemiSupervisedReport, TrainConfig,
};
use hazelight::Error;

use crate::{Command, Overrides};

pub const CONFIG: u8 = 2;
pub const DATASET: u8 = 3;
pub const CHECKPOINT: u8 = 4;
pub const MODEL: u8 = 5;
pub const GRADCHECK: u8 = 6;
const OTHER: u8 = 1;

#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Fail {
    Fail {
        code,
        message: message.into(),
    }
}

trait OrExit<T> {
    fn or_exit(self, code: u8, what: impl Display) -> Result<T, Fail>;
}

impl<T, E: Display> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8, what: impl Display) -> Result<T, Fail> {
        self.map_err(|e| fail(code, format!("{what}: {e}")))
    }
}

/// Exit code for errors raised while training.
fn classify(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => CONFIG,
        Error::Dataset(_) | Error::Insufficient(_) | Error::ImageTooSmall(_) | Error::NoPatches => DATASET,
        Error::Checkpoint(_) => CHECKPOINT,
        _ => OTHER,
    }
}

fn classified<T>(r: hazelight::Result<T>, what: &str) -> Result<T, Fail> {
    r.map_err(|e| fail(classify(&e), format!("{what}: {e}")))
}

pub fn run(command: Command) -> Result<(), Fail> {
    match command {
        Command::Train {
            config,
            data,
            out,
            overrides,
        } => train(&config, &data, &out, &overrides),
        Command::Curriculum {
            config,
            labeled,
            pool,
            out,
            tau,
            overrides,
        } => curriculum(&config, &labeled, &pool, &out, tau, &overrides),
        Command::Enhance {
            checkpoint,
            out,
            inputs,
        } => enhance(&checkpoint, &out, &inputs),
        Command::Evaluate {
            data,
            reference,
            model,
            out,
        } => evaluate(&data, reference.as_deref(), model.as_deref(), out.as_deref()),
        Command::FitNiqe { data, out, patch } => fit_niqe(&data, &out, patch),
        Command::Histcompare {
            first,
            second,
            bins,
            no_invert,
            out,
        } => histcompare(&first, &second, bins as usize, !no_invert, &out),
        Command::Gradcheck {
            loss,
            trials,
            precision,
            seed,
            out,
            corrupt,
        } => {
            let opts = CheckOptions {
                seed,
                corrupt,
                ..CheckOptions::default()
            };
            let report = grad_check(&NetConfig::default(), loss, trials as usize, precision, &opts)
                .or_exit(CONFIG, "gradcheck")?;
            let csv = report.to_csv();
            emit(out.as_deref(), &csv)?;
            match report.worst() {
                _ if report.passed() => {
                    eprintln!(
                        "gradcheck passed: {} {} trials, max relative error {:.3e} < {:e}",
                        loss,
                        trials,
                        report.max_rel_error(),
                        report.tolerance
                    );
                    Ok(())
                }
                Some(t) if t.rel_error >= report.tolerance => Err(fail(
                    GRADCHECK,
                    format!(
                        "gradcheck failed: worst tensor {} has relative error {:.3e} >= {:e} (max abs error {:.3e}, scale {:.3e})",
                        t.name, t.rel_error, report.tolerance, t.max_abs_error, t.scale
                    ),
                )),
                _ => Err(fail(GRADCHECK, "gradcheck failed: a tensor had no usable samples")),
            }
        }
        Command::Synth {
            out,
            count,
            size,
            gamma_min,
            gamma_max,
            noise,
            seed,
            hazy,
            prefix,
        } => synth(&out, count, size, (gamma_min, gamma_max), noise, seed, hazy, &prefix),
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<TrainConfig, Fail> {
    let mut cfg = TrainConfig::load(path).or_exit(CONFIG, format!("--config {}", path.display()))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = overrides.epochs {
        cfg.epochs = epochs;
    }
    if let Some(loss) = overrides.loss {
        cfg.objective = loss;
    }
    cfg.validate().or_exit(CONFIG, "config")?;
    Ok(cfg)
}

fn load_samples(flag: &str, dir: &Path) -> Result<Vec<Sample>, Fail> {
    let loaded = load_dataset(dir).or_exit(DATASET, format!("{flag} {}", dir.display()))?;
    for d in &loaded.diagnostics {
        eprintln!("warning: {flag}: {d}");
    }
    Ok(loaded.samples)
}

fn load_labeled(flag: &str, dir: &Path) -> Result<Vec<Sample>, Fail> {
    let samples = load_samples(flag, dir)?;
    let total = samples.len();
    let labeled: Vec<Sample> = samples.into_iter().filter(|s| s.target().is_some()).collect();
    if labeled.is_empty() {
        return Err(fail(DATASET, format!("{flag} {}: no paired samples", dir.display())));
    }
    if labeled.len() < total {
        eprintln!("warning: {flag}: {} images without a target ignored", total - labeled.len());
    }
    Ok(labeled)
}

fn write_file(path: &Path, text: &str) -> Result<(), Fail> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).or_exit(OTHER, dir.display())?;
    }
    std::fs::write(path, text).or_exit(OTHER, path.display())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summarize(report: &SemiSupervisedReport) {
    for r in &report.rounds {
        println!(
            "round {}: admitted {}, acting {}, pool {}",
            r.round, r.admitted, r.acting, r.pool
        );
    }
    let last = report.phases.last().unwrap_or(&report.pretrain);
    if let Some(v) = last.final_validation() {
        println!("validation: psnr {:.3} ssim {:.4}", v.psnr, v.ssim);
    }
    if let Some(p) = report.checkpoints.last() {
        println!("checkpoint: {}", p.display());
    }
}

fn train(config: &Path, data: &Path, out: &Path, overrides: &Overrides) -> Result<(), Fail> {
    let cfg = load_config(config, overrides)?;
    let labeled = load_labeled("--data", data)?;
    write_file(&out.join("config.json"), &(cfg.to_json().or_exit(OTHER, "config")? + "\n"))?;
    let report = classified(run_supervised(&labeled, &cfg, Some(out)), "training")?;
    println!(
        "trained on {} samples for {} epochs",
        labeled.len() - report.validation.len(),
        report.pretrain.epochs_run
    );
    summarize(&report);
    Ok(())
}

fn curriculum(
    config: &Path,
    labeled: &Path,
    pool: &Path,
    out: &Path,
    tau: Option<f64>,
    overrides: &Overrides,
) -> Result<(), Fail> {
    let mut cfg = load_config(config, overrides)?;
    if let Some(tau) = tau {
        cfg.tau = tau;
        cfg.validate().or_exit(CONFIG, "--tau")?;
    }
    let labeled = load_labeled("--labeled", labeled)?;
    let pool_samples = load_samples("--pool", pool)?;
    let with_targets = pool_samples.iter().filter(|s| s.target().is_some()).count();
    if with_targets > 0 {
        eprintln!("warning: --pool: targets of {with_targets} pool samples ignored");
    }
    let pool_samples: Vec<Sample> = pool_samples.iter().map(Sample::without_target).collect();
    write_file(&out.join("config.json"), &(cfg.to_json().or_exit(OTHER, "config")? + "\n"))?;
    let report = classified(
        run_semi_supervised(&labeled, &pool_samples, &cfg, Some(out)),
        "curriculum",
    )?;
    if let Some(n_a) = report.n_a {
        println!("labeled mean NIQE {n_a:.4}, tau {}", format_value(cfg.tau));
    }
    summarize(&report);
    Ok(())
}

/// PNG files directly inside `dir`, by file name.
fn png_files(dir: &Path) -> Result<Vec<PathBuf>, Fail> {
    let entries = std::fs::read_dir(dir).or_exit(DATASET, dir.display())?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.or_exit(DATASET, dir.display())?.path();
        let png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(fail(DATASET, format!("{}: no PNG images", dir.display())));
    }
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read(path: &Path) -> Result<ImagePlane, Fail> {
    load_image(path).or_exit(DATASET, "image")
}

fn enhance(checkpoint: &Path, out: &Path, inputs: &[PathBuf]) -> Result<(), Fail> {
    let (net, _) = load_checkpoint(checkpoint).or_exit(CHECKPOINT, format!("--checkpoint {}", checkpoint.display()))?;
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(png_files(input)?);
        } else {
            files.push(input.clone());
        }
    }
    let mut names = BTreeSet::new();
    for f in &files {
        let name = file_name(f);
        if !names.insert(name.clone()) {
            return Err(fail(CONFIG, format!("two inputs share the file name {name}")));
        }
        let target = out.join(&name);
        let same = match (f.canonicalize(), target.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if same {
            return Err(fail(CONFIG, format!("--out would overwrite input {}", f.display())));
        }
    }
    println!("image,height,width,ms");
    for f in &files {
        let low = read(f)?;
        let start = Instant::now();
        let enhanced = net.enhance(&low).or_exit(DATASET, f.display())?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        save_image(&enhanced, out.join(file_name(f))).or_exit(OTHER, "output")?;
        println!("{},{},{},{ms:.3}", file_name(f), low.height(), low.width());
    }
    Ok(())
}

fn evaluate(data: &Path, reference: Option<&Path>, model: Option<&Path>, out: Option<&Path>) -> Result<(), Fail> {
    if reference.is_none() && model.is_none() {
        return Err(fail(CONFIG, "nothing to compute: give --model and/or --reference"));
    }
    let model = model
        .map(|p| NiqeModel::load(p).or_exit(MODEL, format!("--model {}", p.display())))
        .transpose()?;
    let files = png_files(data)?;
    let mut columns = Vec::new();
    if model.is_some() {
        columns.push("niqe");
    }
    if reference.is_some() {
        columns.extend(["psnr", "ssim"]);
    }
    let mut csv = format!("image,{}\n", columns.join(","));
    let mut sums = vec![0.0; columns.len()];
    for f in &files {
        let img = read(f)?;
        let mut row = Vec::with_capacity(columns.len());
        if let Some(m) = &model {
            row.push(niqe(&img, m).or_exit(DATASET, f.display())?);
        }
        if let Some(dir) = reference {
            let r = read(&dir.join(file_name(f)))?;
            row.push(psnr(&img, &r).or_exit(DATASET, f.display())?.value);
            row.push(ssim_metric(&img, &r).or_exit(DATASET, f.display())?.value);
        }
        for (s, v) in sums.iter_mut().zip(&row) {
            *s += v;
        }
        let values: Vec<String> = row.into_iter().map(format_value).collect();
        csv.push_str(&format!("{},{}\n", file_name(f), values.join(",")));
    }
    let means: Vec<String> = sums.iter().map(|s| format_value(s / files.len() as f64)).collect();
    csv.push_str(&format!("mean,{}\n", means.join(",")));
    emit(out, &csv)
}

fn fit_niqe(data: &Path, out: &Path, patch: usize) -> Result<(), Fail> {
    let images = png_files(data)?.iter().map(|f| read(f)).collect::<Result<Vec<_>, _>>()?;
    let model = fit_niqe_model(&images, patch).or_exit(DATASET, "fit")?;
    write_file(out, &(model.to_json().or_exit(OTHER, "model")? + "\n"))?;
    println!("fitted on {} patches from {} images", model.patches, images.len());
    Ok(())
}

fn average_histogram(dir: &Path, bins: usize, inverted: bool) -> Result<Histogram, Fail> {
    let mut items = Vec::new();
    for f in png_files(dir)? {
        let img = read(&f)?;
        let img = if inverted { invert(&img) } else { img };
        items.push(histogram(&img, bins).or_exit(CONFIG, "--bins")?.normalized());
    }
    Histogram::average(&items).or_exit(DATASET, dir.display())
}

fn histcompare(first: &Path, second: &Path, bins: usize, inverted: bool, out: &Path) -> Result<(), Fail> {
    let a = average_histogram(first, bins, inverted)?;
    let b = average_histogram(second, bins, false)?;
    let r = a.correlation(&b).or_exit(DATASET, "correlation")?;
    write_file(&out.join("first.csv"), &a.to_csv())?;
    write_file(&out.join("second.csv"), &b.to_csv())?;
    let summary = format!("bins,inverted,correlation\n{bins},{inverted},{r}\n");
    write_file(&out.join("correlation.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    out: &Path,
    count: usize,
    size: usize,
    gamma: (f64, f64),
    noise: f64,
    seed: u64,
    hazy: bool,
    prefix: &str,
) -> Result<(), Fail> {
    if count == 0 || size == 0 {
        return Err(fail(CONFIG, "--count and --size must be positive"));
    }
    if !(gamma.0 <= gamma.1) {
        return Err(fail(CONFIG, "--gamma-min exceeds --gamma-max"));
    }
    let samples = fixtures::paired_set(count, size, gamma, noise, seed)
        .and_then(|set| {
            set.into_iter()
                .enumerate()
                .map(|(i, s)| {
                    let target = s.target().cloned().expect("paired fixtures carry targets");
                    Sample::labeled(format!("{prefix}-{i:04}"), s.low().clone(), target)
                })
                .collect::<hazelight::Result<Vec<_>>>()
        })
        .or_exit(CONFIG, "synth")?;
    write_dataset(out, &samples).or_exit(OTHER, out.display())?;
    if hazy {
        for (i, s) in samples.iter().enumerate() {
            let clean = s.target().expect("paired fixtures carry targets");
            let img = fixtures::hazy(clean, seeds::derive(seed, "haze", i as u64)).or_exit(OTHER, "haze")?;
            save_image(&img, out.join("hazy").join(format!("{}.png", s.id()))).or_exit(OTHER, "output")?;
        }
    }
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}
