//! Command implementations. Each returns a summary for the caller to print;
//! none of them write to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use freqblend::blender::{augment, freq_blend, spatial_pseudo_fake, synth_corpus, BlendConfig, Normalized, TripleSource};
use freqblend::metrics::auc;
use freqblend::net::ParserModel;
use freqblend::objectives::{
    train_band_energy_scorer, AuthenticityScorer, BandEnergyScorer, LossTerms, LossWeights, SpectralIdentityFeatures,
};
use freqblend::partition::{parse_components, Band, PriorMasks};
use freqblend::spectrum::{
    accumulate_frequency, azimuthal_profile, default_bins, difference_heatmap, difference_profile, log_profile,
};
use freqblend::trainer::{
    grad_check_losses, load_checkpoint, save_checkpoint, train_from, EpochLog, Evaluation, GradCheckReport, GradScene,
    LossKind, TrainStatus, LOG_HEADER,
};
use freqblend::dct::dct2;
use freqblend::Tensor;
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::imageio::{read_rgb, write_gray, write_rgb};
use crate::tensorfile::TensorFile;

pub const MANIFEST: &str = "manifest.csv";
pub const REAL_CLASS: &str = "real";
pub const FAKE_CLASS: &str = "spfake";

/// `prefix` with `suffix` appended to its final component.
pub fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub filename: String,
    pub class: String,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CorpusSummary {
    pub images_per_class: usize,
    pub manifest: PathBuf,
}

/// Writes `real/` and `spfake/` PNGs and the manifest under `out_dir`.
pub fn cmd_corpus(cfg: &RunConfig, out_dir: &Path) -> CliResult<CorpusSummary> {
    let corpus = synth_corpus::<f64>(cfg.corpus.n, cfg.train.image_size, cfg.corpus.seed, &cfg.spatial)?;
    let mut rows = Vec::with_capacity(2 * corpus.real.len());
    for (class, images) in [(REAL_CLASS, &corpus.real), (FAKE_CLASS, &corpus.fake)] {
        create_dir(&out_dir.join(class))?;
        for (k, (img, &seed)) in images.iter().zip(&corpus.seeds).enumerate() {
            let filename = format!("{class}/{k:05}.png");
            write_rgb(&out_dir.join(&filename), img)?;
            rows.push(ManifestRow {
                filename,
                class: class.to_string(),
                seed,
            });
        }
    }
    let manifest = out_dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| CliError::io(&manifest, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::io(&manifest, e))?;
    }
    w.flush().map_err(|e| CliError::io(&manifest, e))?;
    Ok(CorpusSummary {
        images_per_class: corpus.real.len(),
        manifest,
    })
}

pub fn read_manifest(dir: &Path) -> CliResult<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<ManifestRow>, _>>()
        .map_err(|e| CliError::io(&path, e))?;
    if let Some(bad) = rows.iter().find(|r| r.class != REAL_CLASS && r.class != FAKE_CLASS) {
        return Err(CliError::io(&path, format!("unknown class {:?}", bad.class)));
    }
    Ok(rows)
}

/// Real and pseudo-fake images of a corpus directory, in manifest order.
pub struct LoadedCorpus {
    pub real: Vec<Tensor<f64>>,
    pub fake: Vec<Tensor<f64>>,
}

pub fn load_corpus(dir: &Path) -> CliResult<LoadedCorpus> {
    let rows = read_manifest(dir)?;
    let load = |class: &str| -> CliResult<Vec<Tensor<f64>>> {
        rows.par_iter()
            .filter(|r| r.class == class)
            .map(|r| read_rgb(&dir.join(&r.filename)))
            .collect()
    };
    let corpus = LoadedCorpus {
        real: load(REAL_CLASS)?,
        fake: load(FAKE_CLASS)?,
    };
    if corpus.real.is_empty() || corpus.fake.is_empty() {
        return Err(CliError::io(&dir.join(MANIFEST), "corpus needs both real and spfake images"));
    }
    Ok(corpus)
}

fn list_pngs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::io(dir, "no PNG images found"));
    }
    Ok(out)
}

fn load_dir(dir: &Path) -> CliResult<Vec<Tensor<f64>>> {
    let paths = list_pngs(dir)?;
    let images: Vec<Tensor<f64>> = paths.par_iter().map(|p| read_rgb(p)).collect::<CliResult<_>>()?;
    let (h, w) = (images[0].height(), images[0].width());
    if let Some((p, x)) = paths.iter().zip(&images).find(|(_, x)| x.height() != h || x.width() != w) {
        return Err(CliError::Usage(format!(
            "{}: image is {}x{}, expected {h}x{w} like the rest of {}",
            p.display(),
            x.height(),
            x.width(),
            dir.display()
        )));
    }
    Ok(images)
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub n_bins: usize,
    pub warning: Option<String>,
    /// Raw `fake − real` per bin.
    pub raw_difference: Vec<f64>,
    pub argmax_raw: usize,
    pub profiles_csv: PathBuf,
    pub heatmap_png: PathBuf,
    pub heatmap_tensor: PathBuf,
}

fn diverging(map: &Tensor<f64>) -> RgbImage {
    let signed = map.map(|d| d.signum() * d.abs().ln_1p() / std::f64::consts::LN_2);
    let m = signed.max_abs();
    let m = if m > 0.0 { m } else { 1.0 };
    RgbImage::from_fn(map.width() as u32, map.height() as u32, |j, i| {
        let t = signed.get(0, i as usize, j as usize) / m;
        let fade = (255.0 * (1.0 - t.abs())).round() as u8;
        if t >= 0.0 {
            image::Rgb([255, fade, fade])
        } else {
            image::Rgb([fade, fade, 255])
        }
    })
}

/// Azimuthal profiles of two image directories and their difference.
///
/// Writes `<prefix>_profiles.csv` (one row per bin), the signed `fake − real`
/// mean magnitude map as `<prefix>_heatmap.fqtn`, and a diverging rendering
/// of its signed log as `<prefix>_heatmap.png` (red where fake is larger).
pub fn cmd_spectrum(real_dir: &Path, fake_dir: &Path, n_bins: Option<usize>, out_prefix: &Path) -> CliResult<SpectrumReport> {
    let real = load_dir(real_dir)?;
    let fake = load_dir(fake_dir)?;
    if real[0].height() != fake[0].height() || real[0].width() != fake[0].width() {
        return Err(CliError::Usage(format!(
            "real images are {}x{} but fake images are {}x{}",
            real[0].height(),
            real[0].width(),
            fake[0].height(),
            fake[0].width()
        )));
    }
    let n_bins = n_bins.unwrap_or_else(|| default_bins(real[0].height(), real[0].width()));
    let agg_r = accumulate_frequency(&real)?;
    let agg_f = accumulate_frequency(&fake)?;
    let prof_r = azimuthal_profile(&agg_r.map, n_bins)?;
    let prof_f = azimuthal_profile(&agg_f.map, n_bins)?;
    let (pr, pf) = (&prof_r.profile, &prof_f.profile);
    let raw = difference_profile(pr, pf, false)?;
    let signed = difference_profile(pr, pf, true)?;
    let (lr, lf) = (log_profile(pr), log_profile(pf));

    create_parent(out_prefix)?;
    let profiles_csv = suffixed(out_prefix, "_profiles.csv");
    let mut w = csv::Writer::from_path(&profiles_csv).map_err(|e| CliError::io(&profiles_csv, e))?;
    let io = |e: csv::Error| CliError::io(&profiles_csv, e);
    w.write_record(["bin", "radius_lo", "radius_hi", "real_log2", "fake_log2", "diff_raw", "diff_signed_log2"])
        .map_err(io)?;
    for k in 0..pr.n_bins() {
        w.write_record([
            k.to_string(),
            pr.bin_edges[k].to_string(),
            pr.bin_edges[k + 1].to_string(),
            lr.values[k].to_string(),
            lf.values[k].to_string(),
            raw.values[k].to_string(),
            signed.values[k].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(&profiles_csv, e))?;

    let heat = difference_heatmap(&agg_f, &agg_r)?;
    let heatmap_tensor = suffixed(out_prefix, "_heatmap.fqtn");
    TensorFile::from_map(&heat).save(&heatmap_tensor)?;
    let heatmap_png = suffixed(out_prefix, "_heatmap.png");
    diverging(&heat).save(&heatmap_png).map_err(|e| CliError::io(&heatmap_png, e))?;

    Ok(SpectrumReport {
        n_bins: pr.n_bins(),
        warning: prof_r.warning,
        argmax_raw: raw.argmax_abs().unwrap_or(0),
        raw_difference: raw.values,
        profiles_csv,
        heatmap_png,
        heatmap_tensor,
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    pub status: TrainStatus,
    pub epochs_run: usize,
    pub scorer_train_auc: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// AUC of `d` with real images as the positive class.
pub fn scorer_auc(d: &dyn AuthenticityScorer<f64>, real: &[Tensor<f64>], fake: &[Tensor<f64>]) -> CliResult<f64> {
    let score = |set: &[Tensor<f64>]| -> CliResult<Vec<f64>> {
        set.par_iter().map(|x| Ok(d.score(x)?)).collect()
    };
    Ok(auc(&score(real)?, &score(fake)?)?)
}

fn obtain_scorer(
    cfg: &RunConfig,
    corpus: &LoadedCorpus,
    pretrained: Option<&Path>,
) -> CliResult<BandEnergyScorer<f64>> {
    match pretrained {
        Some(p) => load_checkpoint::<f64>(p)
            .map_err(|e| CliError::at(p, e))?
            .scorer
            .ok_or_else(|| CliError::io(p, "checkpoint holds no scorer")),
        None => Ok(train_band_energy_scorer(&corpus.real, &corpus.fake, &cfg.scorer.training())?),
    }
}

/// Trains the parser on a corpus directory. The log is written row by row;
/// if training aborts, the last good model is still saved and a numeric
/// error is returned.
pub fn cmd_train(
    cfg: &RunConfig,
    corpus_dir: &Path,
    out_checkpoint: &Path,
    log_path: Option<&Path>,
    pretrained_scorer: Option<&Path>,
) -> CliResult<TrainSummary> {
    let corpus = load_corpus(corpus_dir)?;
    let scorer = obtain_scorer(cfg, &corpus, pretrained_scorer)?;
    let scorer_train_auc = scorer_auc(&scorer, &corpus.real, &corpus.fake)?;
    let log = log_path.map_or_else(|| out_checkpoint.with_extension("csv"), Path::to_path_buf);
    create_parent(out_checkpoint)?;
    create_parent(&log)?;

    let mut file = fs::File::create(&log).map_err(|e| CliError::io(&log, e))?;
    writeln!(file, "{}", LOG_HEADER.join(",")).map_err(|e| CliError::io(&log, e))?;
    let mut write_err = None;
    let mut on_epoch = |row: &EpochLog| {
        if write_err.is_none() {
            if let Err(e) = writeln!(file, "{}", row.csv_row()).and_then(|_| file.flush()) {
                write_err = Some(e);
            }
        }
    };
    let model = ParserModel::init(cfg.train.base_width, cfg.train.seed)?;
    let f = SpectralIdentityFeatures::default();
    let outcome = train_from(&cfg.train, model, &corpus.real, &corpus.fake, &f, &scorer, &mut on_epoch)?;
    if let Some(e) = write_err {
        return Err(CliError::io(&log, e));
    }
    save_checkpoint(out_checkpoint, &outcome.model, Some(&scorer)).map_err(|e| CliError::at(out_checkpoint, e))?;
    if let TrainStatus::Aborted { epoch, reason } = &outcome.status {
        return Err(CliError::Numeric(format!(
            "training aborted in epoch {epoch}: {reason}; last good model saved to {}",
            out_checkpoint.display()
        )));
    }
    Ok(TrainSummary {
        initial: outcome.initial,
        final_eval: outcome.final_eval,
        epochs_run: outcome.log.len(),
        status: outcome.status,
        scorer_train_auc,
        checkpoint: out_checkpoint.to_path_buf(),
        log,
    })
}

#[derive(Clone, Debug)]
pub struct ParseReport {
    pub integrity_residual: f64,
    /// Mean of `p_sem + p_str + p_noi` over the grid.
    pub sum_mean: f64,
    pub files: Vec<PathBuf>,
}

/// Runs the parser on one image and writes, per band, the map as
/// `<prefix>_<band>.fqtn` and `.png` and the component rendering as
/// `<prefix>_<band>_component.png`, plus the map sum as `<prefix>_sum.fqtn`.
///
/// The semantic component is rendered as is; structural and noise components
/// are zero-centred, so they are shifted by 128.
pub fn cmd_parse(checkpoint: &Path, image: &Path, out_prefix: &Path) -> CliResult<ParseReport> {
    let ck = load_checkpoint::<f64>(checkpoint).map_err(|e| CliError::at(checkpoint, e))?;
    let x = read_rgb(image)?;
    let triple = ck.model.forward(&dct2(&x)?, false)?.triple;
    let components = parse_components(&x, &triple)?;
    create_parent(out_prefix)?;
    let mut files = Vec::new();
    for comp in &components {
        let name = comp.band.name();
        let map = triple.map(comp.band);
        let tf = suffixed(out_prefix, &format!("_{name}.fqtn"));
        TensorFile::from_map(map).save(&tf)?;
        let png = suffixed(out_prefix, &format!("_{name}.png"));
        write_gray(&png, map, 0.0, 1.0)?;
        let render = suffixed(out_prefix, &format!("_{name}_component.png"));
        if comp.band == Band::Semantic {
            write_rgb(&render, &comp.image)?;
        } else {
            write_rgb(&render, &comp.image.map(|v| v + 128.0))?;
        }
        files.extend([tf, png, render]);
    }
    let sum = triple.total();
    let sum_file = suffixed(out_prefix, "_sum.fqtn");
    TensorFile::from_map(&sum).save(&sum_file)?;
    files.push(sum_file);
    Ok(ParseReport {
        integrity_residual: triple.integrity_residual(),
        sum_mean: sum.mean(),
        files,
    })
}

/// Where the fake side of a blend comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum FakeInput {
    File(PathBuf),
    /// Self-blend the real image first.
    SpFake,
    /// Run the augmentation policy: always self-blend, frequency blend with
    /// probability `alpha`.
    Augment { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TripleChoice {
    Checkpoint(PathBuf),
    Priors,
}

#[derive(Clone, Debug)]
pub struct BlendRequest {
    pub real: PathBuf,
    pub fake: FakeInput,
    pub triples: TripleChoice,
    pub force_normalize: bool,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct BlendReport {
    pub frequency_blended: bool,
    pub height: usize,
    pub width: usize,
}

fn triple_source(
    cfg: &RunConfig,
    choice: &TripleChoice,
    h: usize,
    w: usize,
) -> CliResult<Box<dyn TripleSource<f64>>> {
    Ok(match choice {
        TripleChoice::Checkpoint(p) => Box::new(load_checkpoint::<f64>(p).map_err(|e| CliError::at(p, e))?.model),
        TripleChoice::Priors => Box::new(PriorMasks::<f64>::new(h, w, cfg.train.t1, cfg.train.t2)?),
    })
}

/// Frequency blend of a real image with a fake, written as an 8-bit PNG.
pub fn cmd_blend(cfg: &RunConfig, req: &BlendRequest) -> CliResult<BlendReport> {
    let x_r = read_rgb(&req.real)?;
    let (h, w) = (x_r.height(), x_r.width());
    let base = triple_source(cfg, &req.triples, h, w)?;
    let normalized = Normalized(base.as_ref());
    let source: &dyn TripleSource<f64> = if req.force_normalize { &normalized } else { base.as_ref() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.blend.seed);
    let (out, frequency_blended) = match &req.fake {
        FakeInput::File(p) => {
            let x_f = read_rgb(p)?;
            if x_f.shape() != x_r.shape() {
                return Err(CliError::Usage(format!(
                    "real image is {h}x{w} but {} is {}x{}",
                    p.display(),
                    x_f.height(),
                    x_f.width()
                )));
            }
            (freq_blend(&x_r, &x_f, source, cfg.blend.clamp_output)?, true)
        }
        FakeInput::SpFake => {
            let (sp, _) = spatial_pseudo_fake(&x_r, &cfg.spatial, &mut rng)?;
            (freq_blend(&x_r, &sp, source, cfg.blend.clamp_output)?, true)
        }
        FakeInput::Augment { alpha } => {
            let bc = BlendConfig {
                alpha: *alpha,
                ..cfg.blend.clone()
            };
            let a = augment(&x_r, source, &bc, &cfg.spatial, &mut rng)?;
            (a.image, a.frequency_blended)
        }
    };
    create_parent(&req.out)?;
    write_rgb(&req.out, &out)?;
    Ok(BlendReport {
        frequency_blended,
        height: h,
        width: w,
    })
}

/// Gradient check of every loss on a toy scene. `corrupt_group` perturbs
/// that group's analytic gradient, which must make the check fail.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt_group: Option<&str>) -> CliResult<GradCheckReport> {
    let g = &cfg.gradcheck;
    let model = ParserModel::<f64>::init(g.base_width, g.seed)?;
    let scene = GradScene::toy(g.image_size, g.seed)?;
    let mut opts = g.options();
    opts.corrupt_group = corrupt_group.map(str::to_string);
    Ok(grad_check_losses(&model, &scene, &LossKind::ALL, &cfg.train.weights, &opts)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    /// Loss weight sets `λ_ff,λ_ad,λ_qa,λ_pi`.
    Lambda,
    /// Augmentation probability.
    Alpha,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub terms: LossTerms<f64>,
    pub integrity_residual: f64,
    /// Scorer AUC on held-out real images against their augmentations.
    pub auc: f64,
    pub blended_fraction: f64,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "parameter",
    "value",
    "L_ff",
    "L_ad",
    "L_qa",
    "L_pi",
    "total",
    "integrity_residual",
    "held_out_auc",
    "blended_fraction",
];

enum SweepValue {
    Lambda(LossWeights),
    Alpha(f64),
}

fn parse_sweep_value(param: SweepParam, text: &str) -> CliResult<SweepValue> {
    let nums = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Usage(format!("bad sweep value {text:?}: {e}")))?;
    match (param, &nums[..]) {
        (SweepParam::Lambda, &[a, b, c, d]) => Ok(SweepValue::Lambda(LossWeights::new(a, b, c, d)?)),
        (SweepParam::Alpha, &[a]) if (0.0..=1.0).contains(&a) => Ok(SweepValue::Alpha(a)),
        (SweepParam::Lambda, _) => Err(CliError::Usage(format!("λ set {text:?} needs four comma-separated weights"))),
        (SweepParam::Alpha, _) => Err(CliError::Usage(format!("α value {text:?} must be one number in [0, 1]"))),
    }
}

/// Held-out scorer AUC and the fraction of augmentations that went through
/// the frequency blender.
pub fn held_out_auc(
    cfg: &RunConfig,
    model: &ParserModel<f64>,
    scorer: &dyn AuthenticityScorer<f64>,
    alpha: f64,
) -> CliResult<(f64, f64)> {
    let held = synth_corpus::<f64>(
        cfg.corpus.held_out,
        cfg.train.image_size,
        cfg.corpus.seed.wrapping_add(1),
        &cfg.spatial,
    )?;
    let bc = BlendConfig {
        alpha,
        ..cfg.blend.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.blend.seed);
    let mut fakes = Vec::with_capacity(held.real.len());
    let mut blended = 0usize;
    for x in &held.real {
        let a = augment(x, model, &bc, &cfg.spatial, &mut rng)?;
        blended += a.frequency_blended as usize;
        fakes.push(a.image);
    }
    Ok((
        scorer_auc(scorer, &held.real, &fakes)?,
        blended as f64 / held.real.len() as f64,
    ))
}

/// Retrains per λ set, or trains once and re-augments per α, and writes one
/// CSV row per value.
pub fn cmd_sweep(
    cfg: &RunConfig,
    corpus_dir: &Path,
    param: SweepParam,
    values: &[String],
    out_csv: &Path,
) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let parsed = values
        .iter()
        .map(|v| parse_sweep_value(param, v))
        .collect::<CliResult<Vec<_>>>()?;
    let corpus = load_corpus(corpus_dir)?;
    let scorer = train_band_energy_scorer(&corpus.real, &corpus.fake, &cfg.scorer.training())?;
    let f = SpectralIdentityFeatures::default();
    let run = |weights: LossWeights| -> CliResult<(ParserModel<f64>, Evaluation)> {
        let mut tc = cfg.train.clone();
        tc.weights = weights;
        let model = ParserModel::init(tc.base_width, tc.seed)?;
        let out = train_from(&tc, model, &corpus.real, &corpus.fake, &f, &scorer, &mut |_| {})?;
        if let TrainStatus::Aborted { epoch, reason } = out.status {
            return Err(CliError::Numeric(format!("training aborted in epoch {epoch}: {reason}")));
        }
        Ok((out.model, out.final_eval))
    };
    let mut shared = None;
    let mut rows = Vec::with_capacity(values.len());
    for (text, v) in values.iter().zip(parsed) {
        let (model, eval, alpha) = match v {
            SweepValue::Lambda(w) => {
                let (m, e) = run(w)?;
                (m, e, cfg.blend.alpha)
            }
            SweepValue::Alpha(a) => {
                if shared.is_none() {
                    shared = Some(run(cfg.train.weights)?);
                }
                let (m, e) = shared.clone().expect("trained above");
                (m, e, a)
            }
        };
        let (auc, blended_fraction) = held_out_auc(cfg, &model, &scorer, alpha)?;
        rows.push(SweepRow {
            value: text.clone(),
            terms: eval.terms,
            integrity_residual: eval.integrity_residual,
            auc,
            blended_fraction,
        });
    }

    create_parent(out_csv)?;
    let mut w = csv::Writer::from_path(out_csv).map_err(|e| CliError::io(out_csv, e))?;
    let io = |e: csv::Error| CliError::io(out_csv, e);
    w.write_record(SWEEP_HEADER).map_err(io)?;
    let name = match param {
        SweepParam::Lambda => "lambda",
        SweepParam::Alpha => "alpha",
    };
    for r in &rows {
        let t = &r.terms;
        w.write_record([
            name.to_string(),
            r.value.clone(),
            t.ff.to_string(),
            t.ad.to_string(),
            t.qa.to_string(),
            t.pi.to_string(),
            t.total.to_string(),
            r.integrity_residual.to_string(),
            r.auc.to_string(),
            r.blended_fraction.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(out_csv, e))?;
    Ok(rows)
}

/// Checks one artifact against its format and describes it.
pub fn cmd_validate(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(&crate::tensorfile::MAGIC) {
        let t = TensorFile::from_bytes(&bytes).map_err(|e| CliError::io(path, e))?;
        return Ok(format!("tensor file, dims {:?}", t.dims));
    }
    if bytes.starts_with(&freqblend::trainer::checkpoint::MAGIC) {
        let ck = freqblend::trainer::read_checkpoint::<f32>(&bytes).map_err(|e| CliError::at(path, e))?;
        let scorer = ck
            .scorer
            .map_or_else(|| "no scorer".to_string(), |s| format!("scorer with {} bins", s.bins));
        return Ok(format!(
            "checkpoint, base width {}, {} parameters, {scorer}",
            ck.model.base_width(),
            ck.model.params().num_parameters()
        ));
    }
    if bytes.starts_with(b"\x89PNG") {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| CliError::io(path, e))?;
        return Ok(format!("png, {}x{} {:?}", img.width(), img.height(), img.color()));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let text = String::from_utf8(bytes).map_err(|e| CliError::io(path, e))?;
            RunConfig::from_json(&text).map_err(|e| CliError::io(path, e))?;
            Ok("run config".into())
        }
        Some("csv") => validate_csv(path, &bytes),
        _ => Err(CliError::io(path, "unrecognised file format")),
    }
}

fn validate_csv(path: &Path, bytes: &[u8]) -> CliResult<String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let records = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::io(path, e))?;
    if header == LOG_HEADER {
        for (k, rec) in records.iter().enumerate() {
            if rec.iter().any(|v| v.parse::<f64>().is_err()) {
                return Err(CliError::io(path, format!("row {} is not numeric", k + 1)));
            }
        }
        return Ok(format!("training log, {} epochs", records.len()));
    }
    if header == ["filename", "class", "seed"] {
        let dir = path.parent().unwrap_or(Path::new("."));
        let rows = read_manifest(dir)?;
        return Ok(format!("corpus manifest, {} rows", rows.len()));
    }
    Err(CliError::io(path, format!("unrecognised CSV header {header:?}")))
}
