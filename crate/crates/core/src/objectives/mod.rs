//! Training objectives for the parsing network.
//!
//! All squared norms are reduced as per-element means. Each loss returns
//! its value together with the gradient with respect to the distribution
//! maps that produced it, ready for [`ParserModel::backward`](crate::net::ParserModel::backward).

pub mod surrogates;

use crate::dct::{dct2, idct2};
use crate::error::{Error, Result};
use crate::partition::{select_component, select_map_grad, DistributionTriple, PriorMasks};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use surrogates::{
    band_energy_features, train_band_energy_scorer, AuthenticityScorer, BandEnergyScorer, ConstantScorer,
    FeatureExtractor, ScorerTraining, SpectralIdentityFeatures,
};

/// Weights of the facial-fidelity, authenticity, quality-agnostic and
/// prior/integrity terms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub fidelity: f64,
    pub authenticity: f64,
    pub quality: f64,
    pub prior: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            fidelity: 1.0 / 12.0,
            authenticity: 1.0,
            quality: 1e-3,
            prior: 0.25,
        }
    }
}

impl LossWeights {
    pub fn new(fidelity: f64, authenticity: f64, quality: f64, prior: f64) -> Result<Self> {
        let w = LossWeights {
            fidelity,
            authenticity,
            quality,
            prior,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fidelity, self.authenticity, self.quality, self.prior];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.fidelity, self.authenticity, self.quality, self.prior]
    }
}

/// An image paired with its DCT spectrum.
#[derive(Clone, Debug)]
pub struct SpectralImage<T> {
    pub image: Tensor<T>,
    pub spectrum: Tensor<T>,
}

impl<T: Scalar> SpectralImage<T> {
    pub fn new(image: Tensor<T>) -> Result<Self> {
        let spectrum = dct2(&image)?;
        Ok(SpectralImage { image, spectrum })
    }
}

/// A scalar loss and its gradient with respect to one distribution triple.
#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: DistributionTriple<T>,
}

fn check_dims<T: Scalar>(x: &Tensor<T>, triple: &DistributionTriple<T>, context: &'static str) -> Result<()> {
    if x.height() != triple.height() || x.width() != triple.width() {
        return Err(Error::shape(
            context,
            &[x.height(), x.width()],
            &[triple.height(), triple.width()],
        ));
    }
    Ok(())
}

/// Facial fidelity: mean squared distance between the features of the
/// semantic rendering and of the image itself.
pub fn loss_ff_spectral<T: Scalar>(
    x: &SpectralImage<T>,
    triple: &DistributionTriple<T>,
    f: &dyn FeatureExtractor<T>,
) -> Result<LossValue<T>> {
    check_dims(&x.image, triple, "loss_ff")?;
    let rendering = idct2(&select_component(&x.spectrum, &triple.semantic)?)?;
    let fy = f.features(&rendering)?;
    let fx = f.features(&x.image)?;
    if fy.len() != fx.len() || fy.len() != f.dim() {
        return Err(Error::shape("feature dimension", &[f.dim()], &[fy.len(), fx.len()]));
    }
    let k = T::from_usize_lossy(fy.len());
    let diff: Vec<T> = fy.iter().zip(&fx).map(|(&a, &b)| a - b).collect();
    let value = diff.iter().map(|&d| d * d).sum::<T>() / k;
    let two = T::lit(2.0);
    let upstream: Vec<T> = diff.iter().map(|&d| two * d / k).collect();
    let g_img = f.vjp(&rendering, &upstream)?;
    let g_freq = dct2(&g_img)?;
    let mut grad = DistributionTriple::zeros(triple.height(), triple.width());
    grad.semantic = select_map_grad(&x.spectrum, &g_freq);
    Ok(LossValue { value, grad })
}

pub fn loss_ff<T: Scalar>(
    x: &Tensor<T>,
    triple: &DistributionTriple<T>,
    f: &dyn FeatureExtractor<T>,
) -> Result<LossValue<T>> {
    loss_ff_spectral(&SpectralImage::new(x.clone())?, triple, f)
}

/// Quality-agnostic loss: mean squared error between `x` and its
/// semantic + structural rendering.
pub fn loss_qa_spectral<T: Scalar>(x: &SpectralImage<T>, triple: &DistributionTriple<T>) -> Result<LossValue<T>> {
    check_dims(&x.image, triple, "loss_qa")?;
    let keep = triple.semantic.add(&triple.structural);
    let rendering = idct2(&select_component(&x.spectrum, &keep)?)?;
    let residual = rendering.sub(&x.image);
    let n = T::from_usize_lossy(residual.len());
    let value = residual.sum_sq() / n;
    let g_freq = dct2(&residual.scale(T::lit(2.0) / n))?;
    let g = select_map_grad(&x.spectrum, &g_freq);
    let mut grad = DistributionTriple::zeros(triple.height(), triple.width());
    grad.semantic = g.clone();
    grad.structural = g;
    Ok(LossValue { value, grad })
}

pub fn loss_qa<T: Scalar>(x: &Tensor<T>, triple: &DistributionTriple<T>) -> Result<LossValue<T>> {
    loss_qa_spectral(&SpectralImage::new(x.clone())?, triple)
}

/// Prior and integrity loss: mean squared deviation of each map from its
/// prior mask plus that of their sum from one.
pub fn loss_pi<T: Scalar>(triple: &DistributionTriple<T>, priors: &PriorMasks<T>) -> Result<LossValue<T>> {
    if triple.height() != priors.height() || triple.width() != priors.width() {
        return Err(Error::shape(
            "loss_pi",
            &[priors.height(), priors.width()],
            &[triple.height(), triple.width()],
        ));
    }
    let n = T::from_usize_lossy(triple.semantic.len());
    let two_n = T::lit(2.0) / n;
    let excess = triple.total().map(|s| s - T::one());
    let mut value = excess.sum_sq() / n;
    let mut grad = DistributionTriple::zeros(triple.height(), triple.width());
    for band in crate::partition::Band::ALL {
        let dev = triple.map(band).sub(priors.mask(band));
        value += dev.sum_sq() / n;
        *grad.map_mut(band) = dev.add(&excess).scale(two_n);
    }
    Ok(LossValue { value, grad })
}

/// Renderings that carry no fake structure (`real`) and that do (`fake`).
#[derive(Clone, Debug)]
pub struct BlendSets<T> {
    /// `[sem(x_r), sem(x_f), sem(x_r) + str(x_r)]`
    pub real: [Tensor<T>; 3],
    /// `[sem(x_f) + str(x_f), sem(x_r) + str(x_f)]`
    pub fake: [Tensor<T>; 2],
}

struct Selected<T> {
    sem_r: Tensor<T>,
    str_r: Tensor<T>,
    sem_f: Tensor<T>,
    str_f: Tensor<T>,
}

fn select_pair<T: Scalar>(
    x_r: &SpectralImage<T>,
    x_f: &SpectralImage<T>,
    triple_r: &DistributionTriple<T>,
    triple_f: &DistributionTriple<T>,
) -> Result<Selected<T>> {
    x_r.image.ensure_shape(&x_f.image, "blend sets")?;
    check_dims(&x_r.image, triple_r, "blend sets")?;
    check_dims(&x_f.image, triple_f, "blend sets")?;
    Ok(Selected {
        sem_r: select_component(&x_r.spectrum, &triple_r.semantic)?,
        str_r: select_component(&x_r.spectrum, &triple_r.structural)?,
        sem_f: select_component(&x_f.spectrum, &triple_f.semantic)?,
        str_f: select_component(&x_f.spectrum, &triple_f.structural)?,
    })
}

pub fn build_blend_sets_spectral<T: Scalar>(
    x_r: &SpectralImage<T>,
    x_f: &SpectralImage<T>,
    triple_r: &DistributionTriple<T>,
    triple_f: &DistributionTriple<T>,
) -> Result<BlendSets<T>> {
    let s = select_pair(x_r, x_f, triple_r, triple_f)?;
    Ok(BlendSets {
        real: [
            idct2(&s.sem_r)?,
            idct2(&s.sem_f)?,
            idct2(&s.sem_r.add(&s.str_r))?,
        ],
        fake: [idct2(&s.sem_f.add(&s.str_f))?, idct2(&s.sem_r.add(&s.str_f))?],
    })
}

/// Builds the real-labelled and fake-labelled blend sets, each component
/// selected with its own image's triple.
pub fn build_blend_sets<T: Scalar>(
    x_r: &Tensor<T>,
    x_f: &Tensor<T>,
    triple_r: &DistributionTriple<T>,
    triple_f: &DistributionTriple<T>,
) -> Result<BlendSets<T>> {
    build_blend_sets_spectral(
        &SpectralImage::new(x_r.clone())?,
        &SpectralImage::new(x_f.clone())?,
        triple_r,
        triple_f,
    )
}

/// Authenticity loss and its gradients with respect to every set member.
#[derive(Clone, Debug)]
pub struct AdLoss<T> {
    pub value: T,
    pub real_grads: [Tensor<T>; 3],
    pub fake_grads: [Tensor<T>; 2],
}

fn checked_score<T: Scalar>(d: &dyn AuthenticityScorer<T>, x: &Tensor<T>) -> Result<T> {
    let s = d.score(x)?;
    if !(s > T::zero() && s < T::one()) {
        return Err(Error::ScoreOutOfRange(s.as_f64()));
    }
    Ok(s)
}

/// `(1/3) Σ_real BCE(d(x), 1) + (1/2) Σ_fake BCE(d(x), 0)`.
pub fn loss_ad<T: Scalar>(sets: &BlendSets<T>, d: &dyn AuthenticityScorer<T>) -> Result<AdLoss<T>> {
    let nr = T::from_usize_lossy(sets.real.len());
    let nf = T::from_usize_lossy(sets.fake.len());
    let mut value = T::zero();
    let mut member = |x: &Tensor<T>, real: bool| -> Result<Tensor<T>> {
        let s = checked_score(d, x)?;
        let (loss, dloss) = if real {
            (-s.ln() / nr, -T::one() / (nr * s))
        } else {
            (-(T::one() - s).ln() / nf, T::one() / (nf * (T::one() - s)))
        };
        value += loss;
        d.score_vjp(x, dloss)
    };
    let real_grads = [
        member(&sets.real[0], true)?,
        member(&sets.real[1], true)?,
        member(&sets.real[2], true)?,
    ];
    let fake_grads = [member(&sets.fake[0], false)?, member(&sets.fake[1], false)?];
    Ok(AdLoss {
        value,
        real_grads,
        fake_grads,
    })
}

/// Authenticity loss with gradients chained back to both triples.
#[derive(Clone, Debug)]
pub struct PairLoss<T> {
    pub value: T,
    pub grad_real: DistributionTriple<T>,
    pub grad_fake: DistributionTriple<T>,
}

pub fn loss_ad_spectral<T: Scalar>(
    x_r: &SpectralImage<T>,
    x_f: &SpectralImage<T>,
    triple_r: &DistributionTriple<T>,
    triple_f: &DistributionTriple<T>,
    d: &dyn AuthenticityScorer<T>,
) -> Result<PairLoss<T>> {
    let sets = build_blend_sets_spectral(x_r, x_f, triple_r, triple_f)?;
    let ad = loss_ad(&sets, d)?;
    let g: Vec<Tensor<T>> = ad
        .real_grads
        .iter()
        .chain(&ad.fake_grads)
        .map(dct2)
        .collect::<Result<_>>()?;
    // Spectral gradient reaching each selected component.
    let g_sem_r = g[0].add(&g[2]).add(&g[4]);
    let g_str_r = g[2].clone();
    let g_sem_f = g[1].add(&g[3]);
    let g_str_f = g[3].add(&g[4]);
    let (h, w) = (triple_r.height(), triple_r.width());
    let mut grad_real = DistributionTriple::zeros(h, w);
    grad_real.semantic = select_map_grad(&x_r.spectrum, &g_sem_r);
    grad_real.structural = select_map_grad(&x_r.spectrum, &g_str_r);
    let mut grad_fake = DistributionTriple::zeros(h, w);
    grad_fake.semantic = select_map_grad(&x_f.spectrum, &g_sem_f);
    grad_fake.structural = select_map_grad(&x_f.spectrum, &g_str_f);
    Ok(PairLoss {
        value: ad.value,
        grad_real,
        grad_fake,
    })
}

/// Individual loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<T> {
    pub ff: T,
    pub ad: T,
    pub qa: T,
    pub pi: T,
    pub total: T,
}

impl<T: Scalar> LossTerms<T> {
    pub fn is_finite(&self) -> bool {
        [self.ff, self.ad, self.qa, self.pi, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn add(&self, o: &Self) -> Self {
        LossTerms {
            ff: self.ff + o.ff,
            ad: self.ad + o.ad,
            qa: self.qa + o.qa,
            pi: self.pi + o.pi,
            total: self.total + o.total,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        LossTerms {
            ff: self.ff * s,
            ad: self.ad * s,
            qa: self.qa * s,
            pi: self.pi * s,
            total: self.total * s,
        }
    }
}

/// Total loss with gradients for the real and fake triples.
#[derive(Clone, Debug)]
pub struct TotalLoss<T> {
    pub terms: LossTerms<T>,
    pub grad_real: DistributionTriple<T>,
    pub grad_fake: DistributionTriple<T>,
}

/// `λ1·L_ff + λ2·L_ad + λ3·L_qa + λ4·L_pi`, with `L_ff`, `L_qa` and `L_pi`
/// averaged over the real and fake inputs.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Scalar>(
    x_r: &SpectralImage<T>,
    x_f: &SpectralImage<T>,
    triple_r: &DistributionTriple<T>,
    triple_f: &DistributionTriple<T>,
    priors: &PriorMasks<T>,
    f: &dyn FeatureExtractor<T>,
    d: &dyn AuthenticityScorer<T>,
    weights: &LossWeights,
) -> Result<TotalLoss<T>> {
    weights.validate()?;
    let half = T::lit(0.5);
    let ff_r = loss_ff_spectral(x_r, triple_r, f)?;
    let ff_f = loss_ff_spectral(x_f, triple_f, f)?;
    let qa_r = loss_qa_spectral(x_r, triple_r)?;
    let qa_f = loss_qa_spectral(x_f, triple_f)?;
    let pi_r = loss_pi(triple_r, priors)?;
    let pi_f = loss_pi(triple_f, priors)?;
    let ad = loss_ad_spectral(x_r, x_f, triple_r, triple_f, d)?;

    let [l1, l2, l3, l4] = weights.as_array().map(T::lit);
    let ff = (ff_r.value + ff_f.value) * half;
    let qa = (qa_r.value + qa_f.value) * half;
    let pi = (pi_r.value + pi_f.value) * half;
    let terms = LossTerms {
        ff,
        ad: ad.value,
        qa,
        pi,
        total: l1 * ff + l2 * ad.value + l3 * qa + l4 * pi,
    };

    let combine = |ff: &LossValue<T>, qa: &LossValue<T>, pi: &LossValue<T>, adg: &DistributionTriple<T>| {
        let mut g = ff.grad.scale(l1 * half);
        g.add_assign(&qa.grad.scale(l3 * half));
        g.add_assign(&pi.grad.scale(l4 * half));
        g.add_assign(&adg.scale(l2));
        g
    };
    Ok(TotalLoss {
        terms,
        grad_real: combine(&ff_r, &qa_r, &pi_r, &ad.grad_real),
        grad_fake: combine(&ff_f, &qa_f, &pi_f, &ad.grad_fake),
    })
}

#[cfg(test)]
mod tests;
