//! Adam optimisation of the parser against the total loss, gradient
//! verification and checkpoint IO.

pub mod checkpoint;
pub mod gradcheck;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ParamGrads, ParserModel, ParserParams, DOWNSAMPLE};
use crate::objectives::{total_loss, AuthenticityScorer, FeatureExtractor, LossTerms, LossWeights, SpectralImage};
use crate::partition::{PriorMasks, SEMANTIC_EDGE, STRUCTURAL_EDGE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, grad_check_losses, GradCheckOptions, GradCheckReport, GradScene, GroupError, LossKind, Probe};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators shaped like the parameters, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first: ParserParams<T>,
    pub second: ParserParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(base_width: usize, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            step: 0,
            first: ParserParams::zeros(base_width),
            second: ParserParams::zeros(base_width),
        }
    }
}

/// Bias-corrected Adam update of one slice, for step number `t ≥ 1`.
pub fn adam_update<T: Scalar>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, hp: &AdamHyper) {
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let one = T::one();
    let c1 = one - T::lit(hp.beta1.powi(t as i32));
    let c2 = one - T::lit(hp.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(hp.learning_rate), T::lit(hp.epsilon));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step on every parameter group. Non-finite gradients abort the
/// step before anything is modified.
pub fn adam_step<T: Scalar>(model: &mut ParserModel<T>, grads: &ParamGrads<T>, state: &mut AdamState<T>) -> Result<()> {
    if grads.num_parameters() != model.params().num_parameters() || state.first.num_parameters() != grads.num_parameters() {
        return Err(Error::shape(
            "adam gradients",
            &[model.params().num_parameters()],
            &[grads.num_parameters()],
        ));
    }
    for (name, g) in grads.groups() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step;
    let hp = state.hyper;
    let params = model.params_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params
        .groups_mut()
        .into_iter()
        .zip(grads.groups())
        .zip(state.first.groups_mut())
        .zip(state.second.groups_mut())
    {
        adam_update(p, g, m, v, t, &hp);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub image_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub base_width: usize,
    pub adam: AdamHyper,
    pub weights: LossWeights,
    /// Augmentation probability carried with the run; parser training itself
    /// does not augment.
    pub alpha: f64,
    pub t1: f64,
    pub t2: f64,
    /// Number of fixed (real, fake) pairs used to evaluate the loss before
    /// and after training.
    pub eval_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            image_size: 64,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            base_width: 8,
            adam: AdamHyper::default(),
            weights: LossWeights::default(),
            alpha: 0.2,
            t1: SEMANTIC_EDGE,
            t2: STRUCTURAL_EDGE,
            eval_pairs: 32,
        }
    }
}

impl TrainConfig {
    /// The full-scale setting: 400×400 inputs for 200 epochs.
    pub fn full_scale() -> Self {
        TrainConfig {
            image_size: 400,
            epochs: 200,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % DOWNSAMPLE != 0 {
            return Err(Error::NotDivisible {
                height: self.image_size,
                width: self.image_size,
                multiple: DOWNSAMPLE,
            });
        }
        if self.batch_size == 0 || self.base_width == 0 {
            return Err(Error::InvalidArgument("batch_size and base_width must be at least 1".into()));
        }
        let hp = &self.adam;
        if !(hp.learning_rate.is_finite() && hp.learning_rate >= 0.0)
            || !(0.0..1.0).contains(&hp.beta1)
            || !(0.0..1.0).contains(&hp.beta2)
            || !(hp.epsilon > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid Adam settings: {hp:?}")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.weights.validate()?;
        PriorMasks::<f64>::new(2, 2, self.t1, self.t2).map(|_| ())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub terms: LossTerms<f64>,
    /// Mean `|Σp − 1|` over the epoch's real and fake triples.
    pub integrity_residual: f64,
}

pub const LOG_HEADER: [&str; 7] = ["epoch", "L_ff", "L_ad", "L_qa", "L_pi", "total", "integrity_residual"];

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, t.ff, t.ad, t.qa, t.pi, t.total, self.integrity_residual
        )
    }
}

/// Loss of a model averaged over a fixed set of pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub terms: LossTerms<f64>,
    pub integrity_residual: f64,
}

impl Evaluation {
    /// Placeholder for a loss that could not be evaluated.
    pub fn nan() -> Self {
        let nan = f64::NAN;
        Evaluation {
            terms: LossTerms { ff: nan, ad: nan, qa: nan, pi: nan, total: nan },
            integrity_residual: nan,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// Stopped on a non-finite loss or gradient; the returned model is the
    /// last one with finite updates.
    Aborted { epoch: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: ParserModel<T>,
    pub log: Vec<EpochLog>,
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    pub status: TrainStatus,
}

pub(crate) struct PairResult<T> {
    pub(crate) terms: LossTerms<T>,
    pub(crate) integrity: T,
    pub(crate) grads: ParamGrads<T>,
}

/// Everything a single loss evaluation needs besides the model.
pub struct LossContext<'a, T: Scalar> {
    pub priors: &'a PriorMasks<T>,
    pub f: &'a dyn FeatureExtractor<T>,
    pub d: &'a dyn AuthenticityScorer<T>,
    pub weights: &'a LossWeights,
}

pub(crate) fn pair_step<T: Scalar>(
    model: &ParserModel<T>,
    x_r: &SpectralImage<T>,
    x_f: &SpectralImage<T>,
    ctx: &LossContext<T>,
    backward: bool,
) -> Result<PairResult<T>> {
    let fr = model.forward(&x_r.spectrum, backward)?;
    let ff = model.forward(&x_f.spectrum, backward)?;
    let loss = total_loss(x_r, x_f, &fr.triple, &ff.triple, ctx.priors, ctx.f, ctx.d, ctx.weights)?;
    let integrity = (fr.triple.integrity_residual() + ff.triple.integrity_residual()) * T::lit(0.5);
    let grads = if backward {
        let mut g = model.backward(fr.cache()?, &loss.grad_real)?;
        g.add_assign(&model.backward(ff.cache()?, &loss.grad_fake)?);
        g
    } else {
        ParserParams::zeros(model.base_width())
    };
    Ok(PairResult {
        terms: loss.terms,
        integrity,
        grads,
    })
}

fn terms_f64<T: Scalar>(t: &LossTerms<T>) -> LossTerms<f64> {
    LossTerms {
        ff: t.ff.as_f64(),
        ad: t.ad.as_f64(),
        qa: t.qa.as_f64(),
        pi: t.pi.as_f64(),
        total: t.total.as_f64(),
    }
}

/// Average loss and gradient over a batch of pairs. Pairs are processed in
/// parallel and reduced in order, so the result does not depend on the
/// thread count.
pub fn batch_loss<T: Scalar>(
    model: &ParserModel<T>,
    pairs: &[(&SpectralImage<T>, &SpectralImage<T>)],
    ctx: &LossContext<T>,
    backward: bool,
) -> Result<(LossTerms<T>, T, ParamGrads<T>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let results = pairs
        .par_iter()
        .map(|(r, f)| pair_step(model, r, f, ctx, backward))
        .collect::<Vec<_>>();
    let mut terms = LossTerms::default();
    let mut integrity = T::zero();
    let mut grads = ParserParams::zeros(model.base_width());
    for r in results {
        let r = r?;
        terms = terms.add(&r.terms);
        integrity += r.integrity;
        if backward {
            grads.add_assign(&r.grads);
        }
    }
    let inv = T::one() / T::from_usize_lossy(pairs.len());
    grads.scale(inv);
    Ok((terms.scale(inv), integrity * inv, grads))
}

/// Evaluates the loss of `model` on the given pairs without gradients.
pub fn evaluate<T: Scalar>(
    model: &ParserModel<T>,
    pairs: &[(&SpectralImage<T>, &SpectralImage<T>)],
    ctx: &LossContext<T>,
) -> Result<Evaluation> {
    let (terms, integrity, _) = batch_loss(model, pairs, ctx, false)?;
    Ok(Evaluation {
        terms: terms_f64(&terms),
        integrity_residual: integrity.as_f64(),
    })
}

/// Trains a freshly initialised parser.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    f: &dyn FeatureExtractor<T>,
    d: &dyn AuthenticityScorer<T>,
) -> Result<TrainOutcome<T>> {
    let model = ParserModel::init(config.base_width, config.seed)?;
    train_from(config, model, real, fake, f, d, &mut |_| {})
}

/// Trains `model` in place of a fresh initialisation, reporting each epoch.
///
/// One epoch is one pass over the shuffled real corpus; each real image is
/// paired with a fake drawn uniformly from an independent RNG stream.
pub fn train_from<T: Scalar>(
    config: &TrainConfig,
    mut model: ParserModel<T>,
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    f: &dyn FeatureExtractor<T>,
    d: &dyn AuthenticityScorer<T>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let s = config.image_size;
    if let Some(bad) = real.iter().chain(fake).find(|x| x.height() != s || x.width() != s || x.channels() != 3) {
        return Err(Error::shape("training image", &[3, s, s], &bad.shape()));
    }
    let priors = PriorMasks::new(s, s, config.t1, config.t2)?;
    let ctx = LossContext {
        priors: &priors,
        f,
        d,
        weights: &config.weights,
    };
    let to_spectral = |set: &[Tensor<T>]| -> Result<Vec<SpectralImage<T>>> {
        set.par_iter().map(|x| SpectralImage::new(x.clone())).collect()
    };
    let real_s = to_spectral(real)?;
    let fake_s = to_spectral(fake)?;

    let n_eval = config.eval_pairs.clamp(1, real_s.len().min(fake_s.len()));
    let eval_set: Vec<_> = (0..n_eval).map(|k| (&real_s[k], &fake_s[k])).collect();
    let initial = match evaluate(&model, &eval_set, &ctx) {
        Ok(e) => e,
        Err(Error::NonFinite(_)) => Evaluation::nan(),
        Err(e) => return Err(e),
    };

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fake_rng = ChaCha8Rng::seed_from_u64(config.seed);
    fake_rng.set_stream(1);
    let mut adam = AdamState::new(model.base_width(), config.adam);
    let mut log = Vec::with_capacity(config.epochs);
    let mut status = TrainStatus::Completed;
    let mut order: Vec<usize> = (0..real_s.len()).collect();

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = LossTerms::<f64>::default();
        let mut integrity = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&k| (&real_s[k], &fake_s[fake_rng.random_range(0..fake_s.len())]))
                .collect();
            let (terms, res, grads) = match batch_loss(&model, &batch, &ctx, true) {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    status = TrainStatus::Aborted {
                        epoch,
                        reason: format!("non-finite value in {what}"),
                    };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !terms.is_finite() {
                status = TrainStatus::Aborted {
                    epoch,
                    reason: format!("non-finite loss {:?}", terms_f64(&terms)),
                };
                break 'epochs;
            }
            if let Err(e) = adam_step(&mut model, &grads, &mut adam) {
                status = TrainStatus::Aborted {
                    epoch,
                    reason: e.to_string(),
                };
                break 'epochs;
            }
            let w = chunk.len() as f64;
            sum = sum.add(&terms_f64(&terms).scale(w));
            integrity += res.as_f64() * w;
            seen += chunk.len();
        }
        let inv = 1.0 / seen as f64;
        let row = EpochLog {
            epoch,
            terms: sum.scale(inv),
            integrity_residual: integrity * inv,
        };
        on_epoch(&row);
        log.push(row);
    }
    let final_eval = match status {
        TrainStatus::Completed => evaluate(&model, &eval_set, &ctx)?,
        TrainStatus::Aborted { .. } => evaluate(&model, &eval_set, &ctx).unwrap_or(initial),
    };
    Ok(TrainOutcome {
        model,
        log,
        initial,
        final_eval,
        status,
    })
}
