//! Finite-difference verification of the analytic parameter gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pair_step, LossContext};
use crate::blender::{synth_pair, synth_scene, SpatialBlendParams};
use crate::error::{Error, Result};
use crate::net::{ParamGrads, ParserModel, ParserParams};
use crate::objectives::{
    total_loss, train_band_energy_scorer, AuthenticityScorer, BandEnergyScorer, FeatureExtractor, LossWeights, ScorerTraining,
    SpectralIdentityFeatures, SpectralImage,
};
use crate::partition::{PriorMasks, SEMANTIC_EDGE, STRUCTURAL_EDGE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Fidelity,
    Authenticity,
    Quality,
    Prior,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Fidelity,
        LossKind::Authenticity,
        LossKind::Quality,
        LossKind::Prior,
        LossKind::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Fidelity => "L_ff",
            LossKind::Authenticity => "L_ad",
            LossKind::Quality => "L_qa",
            LossKind::Prior => "L_pi",
            LossKind::Total => "total",
        }
    }

    /// One-hot weights isolating a single term, or `total` for the sum.
    pub fn weights(self, total: &LossWeights) -> LossWeights {
        let one_hot = |k: usize| {
            let mut w = [0.0; 4];
            w[k] = 1.0;
            LossWeights::new(w[0], w[1], w[2], w[3]).expect("one-hot weights are valid")
        };
        match self {
            LossKind::Fidelity => one_hot(0),
            LossKind::Authenticity => one_hot(1),
            LossKind::Quality => one_hot(2),
            LossKind::Prior => one_hot(3),
            LossKind::Total => total.clone(),
        }
    }
}

/// A (real, fake) pair with the frozen surrogates used by the losses.
pub struct GradScene {
    pub x_r: SpectralImage<f64>,
    pub x_f: SpectralImage<f64>,
    pub priors: PriorMasks<f64>,
    pub f: Box<dyn FeatureExtractor<f64>>,
    pub d: Box<dyn AuthenticityScorer<f64>>,
}

impl GradScene {
    /// Synthetic scene of the given size with a band-energy scorer fitted on
    /// a handful of scenes of the same size.
    pub fn toy(size: usize, seed: u64) -> Result<Self> {
        let params = SpatialBlendParams::default();
        let pairs = (0..8)
            .map(|k| synth_pair::<f64>(size, seed.wrapping_add(100 + k), &params))
            .collect::<Result<Vec<_>>>()?;
        let (real, fake): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let opts = ScorerTraining {
            bins: 6,
            steps: 300,
            ..ScorerTraining::default()
        };
        let d: BandEnergyScorer<f64> = train_band_energy_scorer(&real, &fake, &opts)?;
        let (_, x_f) = synth_pair::<f64>(size, seed.wrapping_add(1), &params)?;
        Ok(GradScene {
            x_r: SpectralImage::new(synth_scene(size, seed))?,
            x_f: SpectralImage::new(x_f)?,
            priors: PriorMasks::new(size, size, SEMANTIC_EDGE, STRUCTURAL_EDGE)?,
            f: Box::new(SpectralIdentityFeatures::default()),
            d: Box::new(d),
        })
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub coords_per_group: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Denominators of the relative error are at least this fraction of
    /// `max(1, |loss|)`, which keeps round-off in the differences of tiny
    /// gradient entries from dominating.
    pub abs_floor: f64,
    /// Smallest step tried when shrinking around kinks.
    pub min_step: f64,
    /// Combine central differences at `step` and `step / 2` to cancel the
    /// leading truncation term.
    pub richardson: bool,
    /// Test hook: perturbs the analytic gradient of the named group.
    pub corrupt_group: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            coords_per_group: 50,
            seed: 0,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            min_step: 1e-8,
            richardson: true,
            corrupt_group: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub loss: String,
    pub group: String,
    pub checked: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupError> {
        self.entries.iter().filter(move |e| e.max_rel >= self.tolerance)
    }
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// A loss evaluation at one parameter point.
pub struct Probe {
    pub value: f64,
    /// Sides of every piecewise-linear kink; differences are only taken
    /// between points that agree with the base point.
    pub pattern: Vec<bool>,
}

/// Compares an analytic gradient with central differences on a random
/// subsample of every parameter group.
///
/// When a perturbation moves any activation across a kink the step is
/// divided by ten, down to `min_step`, so each difference is taken inside
/// one differentiable piece.
pub fn grad_check<F>(
    params: &ParserParams<f64>,
    analytic: &ParamGrads<f64>,
    probe: F,
    loss: &str,
    opts: &GradCheckOptions,
) -> Result<Vec<GroupError>>
where
    F: Fn(&ParserParams<f64>) -> Result<Probe>,
{
    let mut analytic = analytic.clone();
    if let Some(name) = &opts.corrupt_group {
        let (_, g) = analytic
            .groups_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter group {name}")))?;
        for v in g.iter_mut() {
            *v = *v * 1.1 + 1e-3;
        }
    }
    let base_probe = probe(params)?;
    let base = base_probe.pattern;
    let floor = opts.abs_floor * base_probe.value.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let analytic_groups = analytic.groups();
    let mut out = Vec::with_capacity(analytic_groups.len());
    for (gi, (name, grad)) in analytic_groups.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= opts.coords_per_group {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.coords_per_group).into_vec()
        };
        let mut max_rel = 0.0f64;
        let mut sum_rel = 0.0;
        for &k in &coords {
            let shifted = |delta: f64| -> Result<Probe> {
                let mut p = params.clone();
                p.groups_mut()[gi].1[k] += delta;
                probe(&p)
            };
            // Central difference and whether both points share the base pattern.
            let central = |h: f64| -> Result<(f64, bool)> {
                let (a, b) = (shifted(h)?, shifted(-h)?);
                Ok(((a.value - b.value) / (2.0 * h), a.pattern == base && b.pattern == base))
            };
            let mut h = opts.step;
            let numeric = loop {
                let (coarse, smooth) = central(h)?;
                let (value, smooth) = if opts.richardson {
                    let (fine, smooth_fine) = central(h / 2.0)?;
                    ((4.0 * fine - coarse) / 3.0, smooth && smooth_fine)
                } else {
                    (coarse, smooth)
                };
                if smooth || h / 10.0 < opts.min_step {
                    break value;
                }
                h /= 10.0;
            };
            let rel = relative_error(grad[k], numeric, floor);
            max_rel = max_rel.max(rel);
            sum_rel += rel;
        }
        out.push(GroupError {
            loss: loss.to_string(),
            group: name.clone(),
            checked: coords.len(),
            max_rel,
            mean_rel: sum_rel / coords.len().max(1) as f64,
        });
    }
    Ok(out)
}

/// Runs [`grad_check`] for each requested loss on `scene`.
pub fn grad_check_losses(
    model: &ParserModel<f64>,
    scene: &GradScene,
    losses: &[LossKind],
    total_weights: &LossWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut entries = Vec::new();
    for &kind in losses {
        let weights = kind.weights(total_weights);
        let ctx = LossContext {
            priors: &scene.priors,
            f: scene.f.as_ref(),
            d: scene.d.as_ref(),
            weights: &weights,
        };
        let analytic = pair_step(model, &scene.x_r, &scene.x_f, &ctx, true)?.grads;
        let probe = |p: &ParserParams<f64>| -> Result<Probe> {
            let m = ParserModel::from_params(model.base_width(), p.clone());
            let fr = m.forward(&scene.x_r.spectrum, true)?;
            let ff = m.forward(&scene.x_f.spectrum, true)?;
            let loss = total_loss(
                &scene.x_r,
                &scene.x_f,
                &fr.triple,
                &ff.triple,
                &scene.priors,
                ctx.f,
                ctx.d,
                ctx.weights,
            )?;
            let mut pattern = fr.cache()?.activation_pattern();
            pattern.extend(ff.cache()?.activation_pattern());
            Ok(Probe {
                value: loss.terms.total,
                pattern,
            })
        };
        entries.extend(grad_check(model.params(), &analytic, probe, kind.name(), opts)?);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        entries,
    })
}
