//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria 6 to 8 share one desk-scale
//! corpus and training run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use freqblend::blender::{augment, freq_blend_raw, synth_corpus, BlendConfig, Counting, Normalized, SpatialBlendParams};
use freqblend::dct::{dct2, idct2};
use freqblend::net::ParserModel;
use freqblend::objectives::{build_blend_sets, AuthenticityScorer, BandEnergyScorer};
use freqblend::partition::{make_prior_masks, Band, PriorMasks};
use freqblend::trainer::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
use freqblend::Tensor;
use freqblend_cli::{cmd_corpus, cmd_gradcheck, cmd_spectrum, cmd_train, held_out_auc, RunConfig, TensorFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = Result<Verdict, String>;

fn verdict(pass: bool, detail: String) -> Check {
    Ok(Verdict { pass, detail })
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..255.0))
}

fn transform_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rt, mut worst_parseval) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let (h, w) = if k == 0 {
            (512, 512)
        } else {
            (rng.random_range(1..=512), rng.random_range(1..=512))
        };
        let x = random_image(&mut rng, 3, h, w);
        let c = dct2(&x).map_err(|e| e.to_string())?;
        let back = idct2(&c).map_err(|e| e.to_string())?;
        worst_rt = worst_rt.max(back.max_abs_diff(&x));
        worst_parseval = worst_parseval.max((c.sum_sq() - x.sum_sq()).abs() / x.sum_sq());
    }
    verdict(
        worst_rt < 1e-9 && worst_parseval < 1e-10,
        format!("max roundtrip error {worst_rt:.2e}, max Parseval relative error {worst_parseval:.2e}"),
    )
}

fn prior_partition() -> Check {
    let (h, w) = (400usize, 400usize);
    let masks: PriorMasks<f64> = make_prior_masks(h, w, 1.0 / 16.0, 0.5).map_err(|e| e.to_string())?;
    let mut exactly_one = true;
    for i in 0..h {
        for j in 0..w {
            let active: f64 = Band::ALL.iter().map(|&b| masks.mask(b).get(0, i, j)).sum();
            exactly_one &= active == 1.0;
        }
    }
    // Brute force in integers: i/(h-1) + j/(w-1) ≤ 1/16.
    let mut brute = 0usize;
    for i in 0..h as u64 {
        for j in 0..w as u64 {
            if 16 * (i * (w as u64 - 1) + j * (h as u64 - 1)) <= (h as u64 - 1) * (w as u64 - 1) {
                brute += 1;
            }
        }
    }
    let count = masks.count(Band::Semantic);
    verdict(
        exactly_one && count == brute,
        format!("one active mask everywhere: {exactly_one}; semantic count {count}, enumeration {brute}"),
    )
}

fn gradient_correctness() -> Check {
    let cfg = RunConfig::default();
    let report = cmd_gradcheck(&cfg, None).map_err(|e| e.to_string())?;
    let worst = report
        .entries
        .iter()
        .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
        .ok_or("empty report")?;
    let size = cfg.gradcheck.image_size;
    verdict(
        report.passed(),
        format!(
            "{} loss/group pairs on {size}x{size} toys, worst {:.2e} ({} {})",
            report.entries.len(),
            worst.max_rel,
            worst.loss,
            worst.group
        ),
    )
}

fn blend_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let priors = PriorMasks::<f64>::new(64, 64, 1.0 / 16.0, 0.5).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..20 {
        let x = random_image(&mut rng, 3, 64, 64);
        let model = ParserModel::<f64>::init(8, k).map_err(|e| e.to_string())?;
        for out in [
            freq_blend_raw(&x, &x, &Normalized(&model)),
            freq_blend_raw(&x, &x, &Normalized(&priors)),
        ] {
            worst = worst.max(out.map_err(|e| e.to_string())?.max_abs_diff(&x));
        }
    }
    verdict(worst < 1e-6, format!("max |blend(x, x) - x| before clamping {worst:.2e}"))
}

fn band_selection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 64;
    let priors = PriorMasks::<f64>::new(n, n, 1.0 / 16.0, 0.5).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut ok = true;
    for _ in 0..5 {
        let x_r = random_image(&mut rng, 3, n, n);
        let c_r = dct2(&x_r).map_err(|e| e.to_string())?;
        for changed in Band::ALL {
            let m = priors.mask(changed);
            let delta = Tensor::from_fn(3, n, n, |_, i, j| m.get(0, i, j) * rng.random_range(-300.0..300.0));
            let x_f = idct2(&c_r.add(&delta)).map_err(|e| e.to_string())?;
            let c_f = dct2(&x_f).map_err(|e| e.to_string())?;
            let out = freq_blend_raw(&x_r, &x_f, &priors).map_err(|e| e.to_string())?;
            let c_o = dct2(&out).map_err(|e| e.to_string())?;
            let scale = c_r.max_abs().max(c_f.max_abs());
            for band in Band::ALL {
                let source = if band == Band::Structural { &c_f } else { &c_r };
                let mb = priors.mask(band);
                let mut err = 0.0f64;
                for c in 0..3 {
                    for i in 0..n {
                        for j in 0..n {
                            if mb.get(0, i, j) == 1.0 {
                                err = err.max((c_o.get(c, i, j) - source.get(c, i, j)).abs());
                            }
                        }
                    }
                }
                let rel = err / scale;
                worst = worst.max(rel);
                ok &= rel < 1e-12;
            }
        }
    }
    verdict(ok, format!("max band-wise spectrum deviation {worst:.2e} relative to max |C|"))
}

/// Desk corpus, two identically seeded training runs and their summaries.
struct DeskRun {
    dir: tempfile::TempDir,
    cfg: RunConfig,
    checkpoints: [PathBuf; 2],
    summaries: Vec<freqblend_cli::TrainSummary>,
    times: Vec<Duration>,
}

fn desk_run() -> Result<DeskRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let corpus = dir.path().join("corpus");
    cmd_corpus(&cfg, &corpus).map_err(|e| e.to_string())?;
    let checkpoints = [dir.path().join("a.fpnc"), dir.path().join("b.fpnc")];
    let mut summaries = Vec::new();
    let mut times = Vec::new();
    for ck in &checkpoints {
        let t = Instant::now();
        summaries.push(cmd_train(&cfg, &corpus, ck, None, None).map_err(|e| e.to_string())?);
        times.push(t.elapsed());
    }
    Ok(DeskRun {
        dir,
        cfg,
        checkpoints,
        summaries,
        times,
    })
}

fn training_descent(run: &DeskRun) -> Check {
    let s = &run.summaries[0];
    let a = fs::read(&run.checkpoints[0]).map_err(|e| e.to_string())?;
    let b = fs::read(&run.checkpoints[1]).map_err(|e| e.to_string())?;
    let identical = a == b && fs::read(&run.summaries[0].log).ok() == fs::read(&run.summaries[1].log).ok();
    let (init, fin) = (s.initial.terms.total, s.final_eval.terms.total);
    let residual = s.final_eval.integrity_residual;
    let slowest = run.times.iter().max().copied().unwrap_or_default();
    let descent = fin <= 0.5 * init;
    let integrity = residual < 0.05;
    let budget = slowest <= Duration::from_secs(30 * 60);
    verdict(
        descent && integrity && identical && budget,
        format!(
            "total {init:.4} -> {fin:.4} (ratio {:.3}, need <= 0.5: {descent}); integrity residual {residual:.4} (need < 0.05: {integrity}); bit-identical reruns: {identical}; slowest run {:.0} s",
            fin / init,
            slowest.as_secs_f64()
        ),
    )
}

fn trained(run: &DeskRun) -> Result<(ParserModel<f64>, BandEnergyScorer<f64>), String> {
    let ck: Checkpoint<f64> = load_checkpoint(&run.checkpoints[0]).map_err(|e| e.to_string())?;
    Ok((ck.model, ck.scorer.ok_or("checkpoint without scorer")?))
}

fn set_separation(run: &DeskRun) -> Check {
    let (model, scorer) = trained(run)?;
    let cfg = &run.cfg;
    let held = synth_corpus::<f64>(
        cfg.corpus.held_out,
        cfg.train.image_size,
        cfg.corpus.seed.wrapping_add(1),
        &cfg.spatial,
    )
    .map_err(|e| e.to_string())?;
    let (mut real_scores, mut fake_scores) = (Vec::new(), Vec::new());
    for (x_r, x_f) in held.real.iter().zip(&held.fake) {
        let t_r = model.forward(&dct2(x_r).map_err(|e| e.to_string())?, false).map_err(|e| e.to_string())?.triple;
        let t_f = model.forward(&dct2(x_f).map_err(|e| e.to_string())?, false).map_err(|e| e.to_string())?.triple;
        let sets = build_blend_sets(x_r, x_f, &t_r, &t_f).map_err(|e| e.to_string())?;
        for x in &sets.real {
            real_scores.push(scorer.score(x).map_err(|e| e.to_string())?);
        }
        for x in &sets.fake {
            fake_scores.push(scorer.score(x).map_err(|e| e.to_string())?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mf) = (mean(&real_scores), mean(&fake_scores));
    let (auc, blended) = held_out_auc(cfg, &model, &scorer, cfg.blend.alpha).map_err(|e| e.to_string())?;
    verdict(
        mf < mr && auc > 0.9,
        format!(
            "{} held-out pairs: mean score C_f {mf:.4} vs C_r {mr:.4}; AUC real vs augmented fake {auc:.4} ({:.0}% frequency blended)",
            held.real.len(),
            blended * 100.0
        ),
    )
}

fn spectrum_shape(run: &DeskRun) -> Check {
    let corpus = run.dir.path().join("corpus");
    let r = cmd_spectrum(&corpus.join("real"), &corpus.join("spfake"), None, &run.dir.path().join("spectrum"))
        .map_err(|e| e.to_string())?;
    let top_decile = (0.9 * r.n_bins as f64).floor() as usize;
    verdict(
        r.argmax_raw < top_decile,
        format!(
            "{} bins; largest |fake - real| in bin {} (top decile starts at bin {top_decile}); value {:.3}",
            r.n_bins, r.argmax_raw, r.raw_difference[r.argmax_raw]
        ),
    )
}

fn alpha_endpoints() -> Check {
    let model = ParserModel::<f64>::init(4, 9).map_err(|e| e.to_string())?;
    let params = SpatialBlendParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images: Vec<_> = (0..25).map(|_| random_image(&mut rng, 3, 32, 32)).collect();
    let mut calls = Vec::new();
    for alpha in [0.0, 1.0] {
        let source = Counting::new(&model);
        let cfg = BlendConfig {
            alpha,
            ..BlendConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for x in &images {
            augment(x, &source, &cfg, &params, &mut rng).map_err(|e| e.to_string())?;
        }
        calls.push(source.calls());
    }
    verdict(
        calls == [0, images.len()],
        format!("parser calls over {} samples: alpha=0 -> {}, alpha=1 -> {}", images.len(), calls[0], calls[1]),
    )
}

fn format_roundtrips(dir: &Path) -> Check {
    let model = ParserModel::<f64>::init(8, 3).map_err(|e| e.to_string())?;
    let scorer = BandEnergyScorer {
        bins: 4,
        weights: vec![0.7, -1.3, 2.1, 0.01],
        bias: -0.3,
        feature_mean: vec![1.0, 2.0, 3.0, 4.0],
        feature_scale: vec![0.5, 0.6, 0.7, 0.8],
    };
    let ck_path = dir.join("m.fpnc");
    save_checkpoint(&ck_path, &model, Some(&scorer)).map_err(|e| e.to_string())?;
    let back: Checkpoint<f64> = load_checkpoint(&ck_path).map_err(|e| e.to_string())?;
    let dims_ok = back.model.params().group_dims() == model.params().group_dims();
    let f32_close = |a: f64, b: f64| (a - b).abs() <= a.abs() * f32::EPSILON as f64;
    let params_ok = back
        .model
        .params()
        .groups()
        .iter()
        .zip(model.params().groups())
        .all(|((_, a), (_, b))| a.iter().zip(b).all(|(x, y)| f32_close(*y, *x)));
    let scorer_ok = back.scorer.as_ref().is_some_and(|s| {
        s.weights.iter().zip(&scorer.weights).all(|(a, b)| f32_close(*b, *a)) && f32_close(scorer.bias, s.bias)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = Tensor::from_fn(3, 17, 23, |_, _, _| rng.random_range(-1e3..1e3));
    let tf_path = dir.join("t.fqtn");
    TensorFile::from_tensor(&t).save(&tf_path).map_err(|e| e.to_string())?;
    let tf = TensorFile::load(&tf_path).map_err(|e| e.to_string())?;
    let t_back: Tensor<f64> = tf.to_tensor().map_err(|e| e.to_string())?;
    let tensor_ok = tf.dims == [3, 17, 23]
        && t_back.as_slice().iter().zip(t.as_slice()).all(|(a, b)| *a == (*b as f32) as f64);

    let mut bad_ck = fs::read(&ck_path).map_err(|e| e.to_string())?;
    bad_ck[0] ^= 0xff;
    let mut bad_tf = fs::read(&tf_path).map_err(|e| e.to_string())?;
    bad_tf[3] ^= 0xff;
    let rejects = read_checkpoint::<f64>(&bad_ck).is_err() && TensorFile::from_bytes(&bad_tf).is_err();
    verdict(
        dims_ok && params_ok && scorer_ok && tensor_ok && rejects,
        format!(
            "checkpoint dims {dims_ok}, values {params_ok}, scorer {scorer_ok}; tensor file {tensor_ok}; corrupted magic rejected {rejects}"
        ),
    )
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
}

fn report(results: &mut Vec<(usize, bool)>, c: Criterion, check: impl FnOnce() -> Check) {
    let t = Instant::now();
    let outcome = check();
    let elapsed = t.elapsed();
    let in_time = elapsed <= c.limit;
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass && in_time, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let timing = format!("{:.1} s of {} s", elapsed.as_secs_f64(), c.limit.as_secs());
    let timing = if in_time { timing } else { format!("{timing}, over budget") };
    println!(
        "{} [{}] {}: {detail} ({timing})",
        if pass { "PASS" } else { "FAIL" },
        c.id,
        c.name
    );
    results.push((c.id, pass));
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    let scratch = tempfile::tempdir().expect("temporary directory");

    report(&mut results, Criterion { id: 1, name: "transform exactness", limit: secs(60) }, transform_exactness);
    report(&mut results, Criterion { id: 2, name: "prior partition", limit: secs(1) }, prior_partition);
    report(&mut results, Criterion { id: 3, name: "gradient correctness", limit: secs(300) }, gradient_correctness);
    report(&mut results, Criterion { id: 4, name: "blend identity", limit: secs(30) }, blend_identity);
    report(&mut results, Criterion { id: 5, name: "band-selection exactness", limit: secs(30) }, band_selection);
    report(&mut results, Criterion { id: 9, name: "alpha-policy endpoints", limit: secs(60) }, alpha_endpoints);
    report(&mut results, Criterion { id: 10, name: "format roundtrips", limit: secs(10) }, || {
        format_roundtrips(scratch.path())
    });

    match desk_run() {
        Ok(run) => {
            // The 30 minute budget applies to each training run and is checked inside.
            let limit = secs(30 * 60);
            report(&mut results, Criterion { id: 6, name: "training descent", limit }, || training_descent(&run));
            report(&mut results, Criterion { id: 7, name: "set separation", limit: secs(300) }, || set_separation(&run));
            report(&mut results, Criterion { id: 8, name: "spectrum shape", limit: secs(120) }, || spectrum_shape(&run));
        }
        Err(e) => {
            for (id, name) in [(6, "training descent"), (7, "set separation"), (8, "spectrum shape")] {
                println!("FAIL [{id}] {name}: desk run failed: {e}");
                results.push((id, false));
            }
        }
    }

    results.sort();
    let passed = results.iter().filter(|r| r.1).count();
    let failed: Vec<String> = results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
