//! Command implementations. Training runs in f32; every command writes a run
//! log with the resolved configuration, seed, and input fingerprints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use micrograin::checkpoint::{self, fnv1a64};
use micrograin::config::RunConfig;
use micrograin::error::{Error, Result};
use micrograin::image_io::{read_image, write_image, Image};
use micrograin::metrics::{self, ManifoldConfig, SsimConfig};
use micrograin::nn::LayerStack;
use micrograin::pipeline as pl;
use micrograin::registration;
use micrograin::srpsa::{self, CircleAnnotation, DetectorSample};
use micrograin::stats as pstats;
use micrograin::synth;

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn hash_path(path: &Path) -> Result<u64> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut acc = String::new();
        for n in names {
            let h = fnv1a64(&std::fs::read(&n)?);
            let _ = writeln!(acc, "{} {h:016x}", n.file_name().unwrap_or_default().to_string_lossy());
        }
        Ok(fnv1a64(acc.as_bytes()))
    } else {
        Ok(fnv1a64(&std::fs::read(path)?))
    }
}

/// Resolved config, seed and input hashes, written next to the output (or
/// inside it when the output is a directory).
fn write_run_log(command: &str, out: &Path, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
    let mut log = format!("command={command}\n");
    for p in inputs {
        match hash_path(p) {
            Ok(h) => {
                let _ = writeln!(log, "input={} fnv1a64={h:016x}", p.display());
            }
            Err(_) => {
                let _ = writeln!(log, "input={} fnv1a64=unavailable", p.display());
            }
        }
    }
    log.push_str(&cfg.to_lines());
    let log_path = if out.is_dir() {
        out.join("run.log")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".runlog");
        out.with_file_name(name)
    };
    std::fs::write(log_path, log)?;
    Ok(())
}

fn write_loss_curve(path: &Path, curve: &[(usize, f64, f64)]) -> Result<()> {
    let mut s = String::from("step,loss_g,loss_d\n");
    for (step, lg, ld) in curve {
        let _ = writeln!(s, "{step},{lg},{ld}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn curve_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push("_loss.csv");
    out.with_file_name(name)
}

// ---- corpus loading ------------------------------------------------------

struct CorpusPair {
    om: Image,
    sem: Image,
    annotations: Vec<CircleAnnotation>,
    split: String,
    stem: String,
}

fn load_corpus(dir: &Path) -> Result<Vec<CorpusPair>> {
    let manifest = synth::read_manifest(dir)?;
    let mut stems: Vec<(String, String)> = Vec::new();
    for (path, kind, split) in &manifest {
        if kind == "om" {
            let stem = path
                .strip_suffix("_om.pgm")
                .ok_or_else(|| Error::Format(format!("unexpected om path {path}")))?;
            stems.push((stem.to_string(), split.clone()));
        }
    }
    let mut out = Vec::with_capacity(stems.len());
    for (stem, split) in stems {
        let om = read_image(&dir.join(format!("{stem}_om.pgm")))?;
        let sem = read_image(&dir.join(format!("{stem}_sem.pgm")))?;
        let annotations = srpsa::read_annotations_csv(&dir.join(format!("{stem}_ann.csv")))?;
        out.push(CorpusPair { om, sem, annotations, split, stem });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no pairs found under {}", dir.display())));
    }
    Ok(out)
}

// ---- commands ------------------------------------------------------------

pub fn synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out)?;
    let fams = synth::default_families(
        cfg.synth_image_size,
        cfg.synth_image_size,
        cfg.synth_particle_count,
        cfg.synth_pairs_per_family,
        cfg.seed,
    );
    let manifest = synth::generate_dataset(out, &fams)?;
    write_run_log("synth", out, &cfg, &[])?;
    println!("wrote {} files under {}", manifest.len(), out.display());
    Ok(())
}

pub fn register(landmarks: &Path, input: &Path, out: &Path, size: Option<&str>) -> Result<()> {
    let set = registration::read_landmarks_csv(landmarks)?;
    let transform = registration::estimate_affine(&set)?;
    let img = read_image(input)?;
    let (w, h) = match size {
        Some(s) => {
            let (a, b) = s
                .split_once('x')
                .ok_or_else(|| Error::Format(format!("bad --size {s:?}, expected WxH")))?;
            (
                a.parse().map_err(|_| Error::Format(format!("bad width {a:?}")))?,
                b.parse().map_err(|_| Error::Format(format!("bad height {b:?}")))?,
            )
        }
        None => (img.w, img.h),
    };
    let warped = registration::warp_image(&img, &transform, w, h)?;
    write_image(out, &warped)?;
    write_run_log("register", out, &RunConfig::default(), &[landmarks, input])?;
    println!(
        "registered {} -> {} with affine [{:.4} {:.4} {:.2}; {:.4} {:.4} {:.2}]",
        input.display(),
        out.display(),
        transform.m[0],
        transform.m[1],
        transform.m[2],
        transform.m[3],
        transform.m[4],
        transform.m[5]
    );
    Ok(())
}

fn translator_patch_pairs(cfg: &RunConfig, corpus: &[CorpusPair], split: &str) -> Result<Vec<pl::ImagePair>> {
    let mut pairs = Vec::new();
    for c in corpus.iter().filter(|c| c.split == split) {
        let oms = pl::extract_patches(&c.om, cfg.patch_size.min(c.om.w).min(c.om.h), cfg.patch_stride);
        let sems = pl::extract_patches(&c.sem, cfg.patch_size.min(c.sem.w).min(c.sem.h), cfg.patch_stride);
        for ((po, off_o), (ps, off_s)) in oms.into_iter().zip(sems) {
            debug_assert_eq!(off_o, off_s);
            pairs.push(pl::ImagePair::new(po, ps)?);
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!("no {split}-split pairs in the corpus")));
    }
    Ok(pairs)
}

fn train_translator_stacks(cfg: &RunConfig, data: &Path) -> Result<pl::TrainedGan<f32>> {
    let corpus = load_corpus(data)?;
    let pairs = translator_patch_pairs(cfg, &corpus, "train")?;
    let tcfg = pl::TranslatorTrainConfig {
        epochs: cfg.translator_epochs,
        ttur: cfg.translator_ttur(),
        beta1: cfg.translator_beta1,
        beta2: cfg.translator_beta2,
        loss: cfg.gan_loss(),
        augment: cfg.translator_augment,
        seed: cfg.seed,
        gen_spec: cfg.translator_gen_spec(),
        disc_spec: cfg.translator_disc_spec(),
    };
    pl::train_translator::<f32>(&pairs, &tcfg, |step, lg, ld| {
        if step % 50 == 0 {
            println!("translator step {step}: loss_g {lg:.4} loss_d {ld:.4}");
        }
    })
}

pub fn train_translator(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let trained = train_translator_stacks(&cfg, data)?;
    checkpoint::save_gan_pair(out, &trained.gen, &trained.disc)?;
    write_loss_curve(&curve_path(out), &trained.curve)?;
    write_run_log("train-translator", out, &cfg, &[data])?;
    println!("saved translator checkpoint to {}", out.display());
    Ok(())
}

fn train_sr_stacks(
    cfg: &RunConfig,
    data: &Path,
    translator: Option<&Path>,
) -> Result<pl::TrainedGan<f32>> {
    let corpus = load_corpus(data)?;
    let translator_stack = match (cfg.sr_train_on_translator, translator) {
        (true, Some(p)) => Some(checkpoint::load_gan_side::<f32>(p, "gen.")?),
        (true, None) => {
            return Err(Error::InvalidInput(
                "sr.train_on_translator=true needs --translator CKPT".into(),
            ))
        }
        (false, _) => None,
    };
    let gen_spec = cfg.translator_gen_spec();
    let mut pairs: Vec<(Image, Image)> = Vec::new();
    for c in corpus.iter().filter(|c| c.split == "train") {
        let patch = cfg.patch_size.min(c.sem.w).min(c.sem.h);
        for (ps, off) in pl::extract_patches(&c.sem, patch, cfg.patch_stride) {
            let low = match &translator_stack {
                Some(t) => {
                    let (po, _) = pl::extract_patches(&c.om, patch, cfg.patch_stride)
                        .into_iter()
                        .find(|(_, o)| *o == off)
                        .expect("matching om patch");
                    pl::translate(&po, &gen_spec, t).box_downscale(4)
                }
                None => ps.box_downscale(4),
            };
            pairs.push((low, ps));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no train-split pairs in the corpus".into()));
    }
    let scfg = pl::SrTrainConfig {
        epochs: cfg.sr_epochs,
        ttur: cfg.sr_ttur(),
        beta1: cfg.sr_beta1,
        beta2: cfg.sr_beta2,
        loss: cfg.gan_loss(),
        batch: cfg.sr_batch,
        seed: cfg.seed,
        feat_seed: cfg.sr_feat_seed,
        feat_width: cfg.sr_feat_width,
        gen_spec: cfg.sr_gen_spec(),
        disc_spec: cfg.sr_disc_spec(),
    };
    pl::train_super_resolver::<f32>(&pairs, &scfg, |step, lg, ld| {
        if step % 50 == 0 {
            println!("sr step {step}: loss_g {lg:.4} loss_d {ld:.4}");
        }
    })
}

pub fn train_sr(config: Option<&Path>, data: &Path, out: &Path, translator: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let trained = train_sr_stacks(&cfg, data, translator)?;
    checkpoint::save_gan_pair(out, &trained.gen, &trained.disc)?;
    write_loss_curve(&curve_path(out), &trained.curve)?;
    write_run_log("train-sr", out, &cfg, &[data])?;
    println!("saved super-resolver checkpoint to {}", out.display());
    Ok(())
}

fn train_detector_stack(cfg: &RunConfig, data: &Path) -> Result<(LayerStack<f32>, Vec<(usize, f64, f64)>)> {
    let corpus = load_corpus(data)?;
    // the detector consumes electron-style (sharp) images, the same domain
    // the super-resolver is trained to produce
    let dataset: Vec<DetectorSample> = corpus
        .iter()
        .filter(|c| c.split == "train")
        .map(|c| DetectorSample { image: c.sem.clone(), annotations: c.annotations.clone() })
        .collect();
    if dataset.is_empty() {
        return Err(Error::InvalidInput("no train-split samples in the corpus".into()));
    }
    let spec = cfg.detector_spec();
    let mut stack = micrograin::nn::networks::build_network::<f32>(&spec, cfg.seed);
    let dcfg = cfg.detector_train();
    let mut curve = Vec::new();
    let best = srpsa::train_detector(&dataset, &spec, &mut stack, &dcfg, |step, loss| {
        curve.push((step, loss, 0.0));
        if step % 100 == 0 {
            println!("detector step {step}: loss {loss:.5}");
        }
    })?;
    Ok((best, curve))
}

pub fn train_detector(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let (stack, curve) = train_detector_stack(&cfg, data)?;
    checkpoint::save(out, &stack)?;
    write_loss_curve(&curve_path(out), &curve)?;
    write_run_log("train-detector", out, &cfg, &[data])?;
    println!("saved detector checkpoint to {}", out.display());
    Ok(())
}

pub fn super_resolve(
    config: Option<&Path>,
    translator: &Path,
    sr: &Path,
    input: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let gen = checkpoint::load_gan_side::<f32>(translator, "gen.")?;
    let sr_gen = checkpoint::load_gan_side::<f32>(sr, "gen.")?;
    let img = read_image(input)?;
    let gen_spec = cfg.translator_gen_spec();
    let min_in = gen_spec.min_input();
    let patch = cfg.patch_size.min(img.w).min(img.h);
    if patch < min_in {
        return Err(Error::InvalidInput(format!(
            "image {}x{} below the translator's minimum input {min_in}",
            img.w, img.h
        )));
    }
    let outimg = pl::super_resolve(&img, &gen_spec, &gen, &cfg.sr_gen_spec(), &sr_gen, patch, cfg.patch_stride.min(patch))?;
    write_image(out, &outimg)?;
    write_run_log("super-resolve", out, &cfg, &[translator, sr, input])?;
    println!("super-resolved {} -> {}", input.display(), out.display());
    Ok(())
}

pub fn detect(
    config: Option<&Path>,
    model: &Path,
    input: &Path,
    out: &Path,
    p_thresh: Option<f64>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let stack = checkpoint::load::<f32>(model)?;
    let img = read_image(input)?;
    let thr = p_thresh.unwrap_or(cfg.detector_p_thresh);
    let dets = srpsa::detect(&img, &cfg.detector_spec(), &stack, thr, cfg.detector_max_radius);
    srpsa::write_annotations_csv(out, &dets)?;
    write_run_log("detect", out, &cfg, &[model, input])?;
    println!("detected {} circles in {}", dets.len(), input.display());
    Ok(())
}

fn list_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("pgm") | Some("png"))
        })
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let name = p.file_name().unwrap_or_default().to_string_lossy().to_string();
        out.push((name, read_image(&p)?));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no images under {}", dir.display())));
    }
    Ok(out)
}

pub fn evaluate(config: Option<&Path>, real: &Path, fake: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let reals = list_images(real)?;
    let fakes = list_images(fake)?;

    // paired structural metrics over name-matched images
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let ssim_cfg = SsimConfig::default();
    for (name, r) in &reals {
        if let Some((_, f)) = fakes.iter().find(|(n, _)| n == name) {
            if (r.w, r.h) == (f.w, f.h) {
                psnrs.push(metrics::psnr(r, f, 1.0));
                ssims.push(metrics::ssim(r, f, &ssim_cfg));
            }
        }
    }
    if psnrs.is_empty() {
        return Err(Error::InvalidInput("no name-matched, equal-size pairs to compare".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let real_set = metrics::embed(
        &reals.iter().map(|(_, i)| i.clone()).collect::<Vec<_>>(),
        cfg.metrics_embed_seed,
        cfg.metrics_embed_dim,
    );
    let fake_set = metrics::embed(
        &fakes.iter().map(|(_, i)| i.clone()).collect::<Vec<_>>(),
        cfg.metrics_embed_seed,
        cfg.metrics_embed_dim,
    );
    let (density, coverage) =
        metrics::density_coverage(&real_set, &fake_set, &ManifoldConfig { k: cfg.metrics_k })?;

    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "psnr_mean,{}", mean(&psnrs));
    let _ = writeln!(s, "ssim_mean,{}", mean(&ssims));
    let _ = writeln!(s, "density,{density}");
    let _ = writeln!(s, "coverage,{coverage}");
    let _ = writeln!(s, "pairs,{}", psnrs.len());
    std::fs::write(out, &s)?;
    write_run_log("evaluate", out, &cfg, &[real, fake])?;
    print!("{s}");
    Ok(())
}

pub fn stats(annotations: &Path, out: &Path, kde_out: Option<&Path>) -> Result<()> {
    let anns = srpsa::read_annotations_csv(annotations)?;
    if anns.is_empty() {
        return Err(Error::InvalidInput("no annotations to summarize".into()));
    }
    let sample = pstats::SizeSample::new(anns.iter().map(|a| a.r).collect(), "px")?;
    let report = pstats::distribution_stats(&sample)?;
    write_stats_report(out, &report)?;

    let kde = pstats::kde_isj(&sample.values, 1024)?;
    let kde_path = match kde_out {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = out.file_stem().unwrap_or_default().to_os_string();
            name.push("_kde.csv");
            out.with_file_name(name)
        }
    };
    let mut s = String::from("x,density\n");
    for (x, d) in kde.grid.iter().zip(&kde.density) {
        let _ = writeln!(s, "{x},{d}");
    }
    std::fs::write(&kde_path, s)?;
    write_run_log("stats", out, &RunConfig::default(), &[annotations])?;
    println!(
        "mean {:.3} d50 {:.3} mode {:.3} stdev {:.3} cv {:.2}% over {} sizes (bandwidth {:.4}{})",
        report.mean,
        report.d50,
        report.mode,
        report.stdev,
        report.cv,
        report.count,
        kde.bandwidth,
        if kde.silverman_fallback { ", silverman fallback" } else { "" }
    );
    Ok(())
}

fn write_stats_report(path: &Path, r: &pstats::StatsReport) -> Result<()> {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "mean,{}", r.mean);
    let _ = writeln!(s, "d50,{}", r.d50);
    let _ = writeln!(s, "mode,{}", r.mode);
    let _ = writeln!(s, "stdev,{}", r.stdev);
    let _ = writeln!(s, "cv,{}", r.cv);
    let _ = writeln!(s, "count,{}", r.count);
    std::fs::write(path, s)?;
    Ok(())
}

pub fn pipeline(
    config: Option<&Path>,
    input: &Path,
    out: &Path,
    translator: Option<&Path>,
    sr: Option<&Path>,
    detector: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out)?;
    let corpus = load_corpus(input)?;

    // checkpoints: explicit flags, then files inside the corpus, then a
    // desk-scale training run
    let translator_stack = match resolve_ckpt(translator, input, "translator.ckpt") {
        Some(p) => checkpoint::load_gan_side::<f32>(&p, "gen.")?,
        None => {
            println!("no translator checkpoint found; training at desk scale");
            let trained = train_translator_stacks(&cfg, input)?;
            checkpoint::save_gan_pair(&out.join("translator.ckpt"), &trained.gen, &trained.disc)?;
            trained.gen
        }
    };
    let sr_stack = match resolve_ckpt(sr, input, "sr.ckpt") {
        Some(p) => checkpoint::load_gan_side::<f32>(&p, "gen.")?,
        None => {
            println!("no super-resolver checkpoint found; training at desk scale");
            let trained = train_sr_stacks(&cfg, input, None)?;
            checkpoint::save_gan_pair(&out.join("sr.ckpt"), &trained.gen, &trained.disc)?;
            trained.gen
        }
    };
    let detector_stack = match resolve_ckpt(detector, input, "detector.ckpt") {
        Some(p) => checkpoint::load::<f32>(&p)?,
        None => {
            println!("no detector checkpoint found; training at desk scale");
            let (stack, _) = train_detector_stack(&cfg, input)?;
            checkpoint::save(&out.join("detector.ckpt"), &stack)?;
            stack
        }
    };

    // optional registration stage driven by a landmark file in the corpus
    let landmarks = input.join("landmarks.csv");
    let transform = if landmarks.exists() {
        let set = registration::read_landmarks_csv(&landmarks)?;
        Some(registration::estimate_affine(&set)?)
    } else {
        None
    };

    let gen_spec = cfg.translator_gen_spec();
    let sr_spec = cfg.sr_gen_spec();
    let det_spec = cfg.detector_spec();
    let mut all_detections: Vec<CircleAnnotation> = Vec::new();
    let mut all_truth: Vec<CircleAnnotation> = Vec::new();
    let mut processed = 0usize;

    for c in corpus.iter().filter(|c| c.split == "val") {
        let om = match &transform {
            Some(t) => registration::warp_image(&c.om, t, c.sem.w, c.sem.h)?,
            None => c.om.clone(),
        };
        let patch = cfg.patch_size.min(om.w).min(om.h);
        if patch < gen_spec.min_input() {
            return Err(Error::InvalidInput(format!(
                "corpus images {}x{} below the translator's minimum input {}",
                om.w,
                om.h,
                gen_spec.min_input()
            )));
        }
        let enhanced = pl::super_resolve(
            &om,
            &gen_spec,
            &translator_stack,
            &sr_spec,
            &sr_stack,
            patch,
            cfg.patch_stride.min(patch),
        )?;
        let dets = srpsa::detect(&enhanced, &det_spec, &detector_stack, cfg.detector_p_thresh, cfg.detector_max_radius);

        let stem = c.stem.replace('/', "_");
        write_image(&out.join(format!("{stem}_enhanced.pgm")), &enhanced)?;
        srpsa::write_annotations_csv(&out.join(format!("{stem}_detections.csv")), &dets)?;
        all_detections.extend(dets);
        all_truth.extend(c.annotations.iter().copied());
        processed += 1;
    }
    if processed == 0 {
        return Err(Error::InvalidInput("no val-split pairs to process".into()));
    }

    // size statistics over all detections, with a ground-truth comparison
    if all_detections.is_empty() {
        return Err(Error::InvalidInput(
            "the detector produced no detections on the validation split".into(),
        ));
    }
    let det_sample = pstats::SizeSample::new(all_detections.iter().map(|a| a.r).collect(), "px")?;
    let det_report = pstats::distribution_stats(&det_sample)?;
    write_stats_report(&out.join("stats_detected.csv"), &det_report)?;
    let kde = pstats::kde_isj(&det_sample.values, 1024)?;
    let mut s = String::from("x,density\n");
    for (x, d) in kde.grid.iter().zip(&kde.density) {
        let _ = writeln!(s, "{x},{d}");
    }
    std::fs::write(out.join("kde_detected.csv"), s)?;

    let gt_sample = pstats::SizeSample::new(all_truth.iter().map(|a| a.r).collect(), "px")?;
    let gt_report = pstats::distribution_stats(&gt_sample)?;
    write_stats_report(&out.join("stats_ground_truth.csv"), &gt_report)?;
    let deltas = pstats::compare_reports(&gt_report, &det_report)?;
    let mut s = String::from("field,abs_delta,rel_delta\n");
    for (name, abs, rel) in &deltas.fields {
        let _ = writeln!(s, "{name},{abs},{rel}");
    }
    std::fs::write(out.join("stats_comparison.csv"), s)?;

    write_run_log("pipeline", out, &cfg, &[input])?;
    println!(
        "pipeline processed {processed} validation pairs: {} detections vs {} ground-truth particles",
        all_detections.len(),
        all_truth.len()
    );
    Ok(())
}

fn resolve_ckpt(flag: Option<&Path>, corpus: &Path, name: &str) -> Option<PathBuf> {
    if let Some(p) = flag {
        return Some(p.to_path_buf());
    }
    let candidate = corpus.join(name);
    candidate.exists().then_some(candidate)
}
