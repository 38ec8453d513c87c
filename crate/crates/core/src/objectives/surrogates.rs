//! Differentiable stand-ins for the face-recognition feature extractor and
//! the real/fake detector used by the training losses.

use crate::dct::{dct2, idct2};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::spectrum::AnnulusLayout;
use crate::tensor::Tensor;

/// Image → fixed-length feature vector, with its vector-Jacobian product.
pub trait FeatureExtractor<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn features(&self, image: &Tensor<T>) -> Result<Vec<T>>;

    /// Gradient with respect to `image` of `⟨upstream, features(image)⟩`.
    fn vjp(&self, image: &Tensor<T>, upstream: &[T]) -> Result<Tensor<T>>;
}

/// Image → probability of being real (label 1 = real, 0 = fake).
pub trait AuthenticityScorer<T: Scalar>: Send + Sync {
    /// A value in the open interval `(0, 1)`.
    fn score(&self, image: &Tensor<T>) -> Result<T>;

    /// Gradient with respect to `image` of `upstream · score(image)`.
    fn score_vjp(&self, image: &Tensor<T>, upstream: T) -> Result<Tensor<T>>;
}

/// Low-frequency DCT signature: the top-left `block × block` coefficients of
/// every channel, flattened and L2-normalised.
#[derive(Clone, Debug)]
pub struct SpectralIdentityFeatures {
    pub block: usize,
    pub channels: usize,
    pub eps: f64,
}

impl Default for SpectralIdentityFeatures {
    fn default() -> Self {
        SpectralIdentityFeatures {
            block: 8,
            channels: 3,
            eps: 1e-8,
        }
    }
}

impl SpectralIdentityFeatures {
    fn check<T: Scalar>(&self, image: &Tensor<T>) -> Result<()> {
        if image.height() < self.block || image.width() < self.block {
            return Err(Error::InvalidArgument(format!(
                "identity features need at least {b}x{b} images, got {}x{}",
                image.height(),
                image.width(),
                b = self.block
            )));
        }
        if image.channels() != self.channels {
            return Err(Error::shape("identity features", &[self.channels], &[image.channels()]));
        }
        Ok(())
    }

    /// Unnormalised low-frequency block.
    pub fn raw<T: Scalar>(&self, image: &Tensor<T>) -> Result<Vec<T>> {
        self.check(image)?;
        let spectrum = dct2(image)?;
        let mut v = Vec::with_capacity(self.channels * self.block * self.block);
        for c in 0..self.channels {
            for i in 0..self.block {
                for j in 0..self.block {
                    v.push(spectrum.get(c, i, j));
                }
            }
        }
        Ok(v)
    }
}

impl<T: Scalar> FeatureExtractor<T> for SpectralIdentityFeatures {
    fn dim(&self) -> usize {
        self.channels * self.block * self.block
    }

    fn features(&self, image: &Tensor<T>) -> Result<Vec<T>> {
        let v = self.raw(image)?;
        let norm = v.iter().map(|&a| a * a).sum::<T>().sqrt() + T::lit(self.eps);
        Ok(v.into_iter().map(|a| a / norm).collect())
    }

    fn vjp(&self, image: &Tensor<T>, upstream: &[T]) -> Result<Tensor<T>> {
        let d = <Self as FeatureExtractor<T>>::dim(self);
        if upstream.len() != d {
            return Err(Error::shape("identity feature vjp", &[d], &[upstream.len()]));
        }
        let v = self.raw(image)?;
        let n = v.iter().map(|&a| a * a).sum::<T>().sqrt();
        let denom = n + T::lit(self.eps);
        // f = v / (|v| + eps);  J^T u = u/denom - v (v·u) / (denom² |v|)
        let vu: T = v.iter().zip(upstream).map(|(&a, &b)| a * b).sum();
        let radial = if n > T::zero() { vu / (denom * denom * n) } else { T::zero() };
        let mut g = Tensor::zeros(image.channels(), image.height(), image.width());
        let mut k = 0;
        for c in 0..self.channels {
            for i in 0..self.block {
                for j in 0..self.block {
                    g.set(c, i, j, upstream[k] / denom - v[k] * radial);
                    k += 1;
                }
            }
        }
        idct2(&g)
    }
}

/// Logistic regression on standardised `ln(1 + band energy)` features,
/// where band energies are annulus means of channel-averaged `|DCT|`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandEnergyScorer<T> {
    pub bins: usize,
    pub weights: Vec<T>,
    pub bias: T,
    pub feature_mean: Vec<T>,
    pub feature_scale: Vec<T>,
}

/// Options for [`train_band_energy_scorer`].
#[derive(Clone, Debug)]
pub struct ScorerTraining {
    pub bins: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights.
    pub l2: f64,
}

impl Default for ScorerTraining {
    fn default() -> Self {
        ScorerTraining {
            bins: 16,
            steps: 2000,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

/// Raw band energies `e_k` and the layout used to compute them.
fn band_energies<T: Scalar>(spectrum: &Tensor<T>, bins: usize) -> Result<(Vec<T>, AnnulusLayout)> {
    let layout = AnnulusLayout::new(spectrum.height(), spectrum.width(), bins)?;
    let mags = spectrum.map(|v| v.abs());
    Ok((layout.means(&mags), layout))
}

/// `ln(1 + e_k)` per band, the unstandardised scorer input.
pub fn band_energy_features<T: Scalar>(image: &Tensor<T>, bins: usize) -> Result<Vec<T>> {
    let (e, _) = band_energies(&dct2(image)?, bins)?;
    Ok(e.into_iter().map(|v| v.ln_1p()).collect())
}

impl<T: Scalar> BandEnergyScorer<T> {
    fn logit_from_features(&self, feats: &[T]) -> T {
        feats
            .iter()
            .zip(&self.weights)
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|((&f, &w), (&m, &s))| w * (f - m) / s)
            .sum::<T>()
            + self.bias
    }

    fn check_bins(&self, got: usize) -> Result<()> {
        if got != self.weights.len() {
            return Err(Error::shape("band scorer bins", &[self.weights.len()], &[got]));
        }
        Ok(())
    }

    /// Logit (log-odds of real) for an image.
    pub fn logit(&self, image: &Tensor<T>) -> Result<T> {
        let feats = band_energy_features(image, self.bins)?;
        self.check_bins(feats.len())?;
        Ok(self.logit_from_features(&feats))
    }

    pub fn cast<U: Scalar>(&self) -> BandEnergyScorer<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect::<Vec<U>>();
        BandEnergyScorer {
            bins: self.bins,
            weights: c(&self.weights),
            bias: U::lit(self.bias.as_f64()),
            feature_mean: c(&self.feature_mean),
            feature_scale: c(&self.feature_scale),
        }
    }
}

impl<T: Scalar> AuthenticityScorer<T> for BandEnergyScorer<T> {
    fn score(&self, image: &Tensor<T>) -> Result<T> {
        // Clamp away from {0, 1} so the open-interval contract holds in floating point.
        let eps = T::epsilon();
        Ok(sigmoid(self.logit(image)?).max(eps).min(T::one() - eps))
    }

    fn score_vjp(&self, image: &Tensor<T>, upstream: T) -> Result<Tensor<T>> {
        let spectrum = dct2(image)?;
        let (energies, layout) = band_energies(&spectrum, self.bins)?;
        self.check_bins(energies.len())?;
        let feats: Vec<T> = energies.iter().map(|v| v.ln_1p()).collect();
        let s = sigmoid(self.logit_from_features(&feats));
        let dlogit = upstream * s * (T::one() - s);
        let inv_c = T::one() / T::from_usize_lossy(image.channels());
        // d logit / d e_k, divided by the band population.
        let per_band: Vec<T> = (0..layout.n_bins)
            .map(|k| {
                dlogit * self.weights[k] / self.feature_scale[k] / (T::one() + energies[k]) * inv_c
                    / T::from_usize_lossy(layout.counts[k])
            })
            .collect();
        let mut g = Tensor::zeros(spectrum.channels(), spectrum.height(), spectrum.width());
        for c in 0..spectrum.channels() {
            for ((o, &v), &k) in g
                .channel_mut(c)
                .iter_mut()
                .zip(spectrum.channel(c))
                .zip(&layout.index)
            {
                // Subgradient 0 at exact zeros.
                *o = if v > T::zero() {
                    per_band[k]
                } else if v < T::zero() {
                    -per_band[k]
                } else {
                    T::zero()
                };
            }
        }
        idct2(&g)
    }
}

/// Fits a [`BandEnergyScorer`] by full-batch gradient descent on the mean
/// logistic loss (real = 1, fake = 0) over standardised features.
pub fn train_band_energy_scorer<T: Scalar>(
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    opts: &ScorerTraining,
) -> Result<BandEnergyScorer<T>> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidArgument(
            "scorer training needs at least one real and one fake image".into(),
        ));
    }
    let mut feats = Vec::with_capacity(real.len() + fake.len());
    let mut labels = Vec::with_capacity(real.len() + fake.len());
    for (set, label) in [(real, 1.0), (fake, 0.0)] {
        for im in set {
            feats.push(
                band_energy_features(im, opts.bins)?
                    .into_iter()
                    .map(|v| v.as_f64())
                    .collect::<Vec<f64>>(),
            );
            labels.push(label);
        }
    }
    let dim = feats[0].len();
    if feats.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidArgument("scorer training images differ in size".into()));
    }
    let n = feats.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|k| feats.iter().map(|f| f[k]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..dim)
        .map(|k| {
            let var = feats.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(1e-8)
        })
        .collect();
    let z: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| (0..dim).map(|k| (f[k] - mean[k]) / scale[k]).collect())
        .collect();

    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    for _ in 0..opts.steps {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (zi, &y) in z.iter().zip(&labels) {
            let logit: f64 = zi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let r = sigmoid(logit) - y;
            for (g, &a) in gw.iter_mut().zip(zi) {
                *g += r * a;
            }
            gb += r;
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= opts.learning_rate * (g / n + opts.l2 * *wk);
        }
        b -= opts.learning_rate * gb / n;
    }
    let to_t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    Ok(BandEnergyScorer {
        bins: dim,
        weights: to_t(&w),
        bias: T::lit(b),
        feature_mean: to_t(&mean),
        feature_scale: to_t(&scale),
    })
}

/// Scorer returning the same probability for every image.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl<T: Scalar> AuthenticityScorer<T> for ConstantScorer {
    fn score(&self, _image: &Tensor<T>) -> Result<T> {
        Ok(T::lit(self.0))
    }

    fn score_vjp(&self, image: &Tensor<T>, _upstream: T) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(image.channels(), image.height(), image.width()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, seed: u64, amp: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(c, h, w, |_, _, _| 128.0 + rng.random_range(-amp..amp))
    }

    fn directional_fd(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, v: &Tensor<f64>, h: f64) -> f64 {
        (f(&x.add(&v.scale(h))) - f(&x.sub(&v.scale(h)))) / (2.0 * h)
    }

    #[test]
    fn constant_image_features_are_dc_only() {
        let fx = SpectralIdentityFeatures::default();
        let raw = fx.raw(&Tensor::<f64>::filled(3, 16, 16, 10.0)).unwrap();
        for c in 0..3 {
            assert!(raw[c * 64].abs() > 1.0);
            assert!(raw[c * 64 + 1..(c + 1) * 64].iter().all(|v| v.abs() < 1e-9));
        }
        let x = random(3, 16, 16, 1, 50.0);
        let a = FeatureExtractor::<f64>::features(&fx, &x).unwrap();
        assert_eq!(a, FeatureExtractor::<f64>::features(&fx, &x.clone()).unwrap());
        assert!(FeatureExtractor::<f64>::features(&fx, &Tensor::zeros(3, 4, 16)).is_err());
    }

    #[test]
    fn identity_feature_vjp_matches_finite_differences() {
        let fx = SpectralIdentityFeatures::default();
        let x = random(3, 16, 16, 2, 60.0);
        let v = random(3, 16, 16, 3, 1.0).map(|a| a - 128.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |t: &Tensor<f64>| {
            FeatureExtractor::<f64>::features(&fx, t)
                .unwrap()
                .iter()
                .zip(&u)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let fd = directional_fd(f, &x, &v, 1e-3);
        let analytic = fx.vjp(&x, &u).unwrap().dot(&v);
        assert!((fd - analytic).abs() / analytic.abs() < 1e-6, "{fd} vs {analytic}");
    }

    #[test]
    fn scorer_separates_and_has_correct_vjp() {
        // Real: smooth images; fake: the same plus high-frequency noise.
        let smooth = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
            Tensor::from_fn(3, 16, 16, |c, i, j| 120.0 + 40.0 * ((a * i as f64 + b * j as f64 + c as f64).sin()))
        };
        let real: Vec<_> = (0..20).map(smooth).collect();
        let fake: Vec<_> = (0..20)
            .map(|s| smooth(s + 100).add(&random(3, 16, 16, s + 200, 8.0).map(|v| v - 128.0)))
            .collect();
        let opts = ScorerTraining { bins: 6, ..Default::default() };
        let scorer = train_band_energy_scorer(&real, &fake, &opts).unwrap();
        let correct = real.iter().filter(|x| scorer.score(x).unwrap() > 0.5).count()
            + fake.iter().filter(|x| scorer.score(x).unwrap() < 0.5).count();
        assert_eq!(correct, 40);
        let s1 = scorer.score(&real[0]).unwrap();
        assert_eq!(s1, scorer.score(&real[0]).unwrap());

        let x = fake[3].clone();
        let v = random(3, 16, 16, 9, 1.0).map(|a| a - 128.0);
        let f = |t: &Tensor<f64>| sigmoid(scorer.logit(t).unwrap());
        let fd = directional_fd(f, &x, &v, 1e-4);
        let analytic = scorer.score_vjp(&x, 1.0).unwrap().dot(&v);
        assert!((fd - analytic).abs() / analytic.abs().max(1e-12) < 1e-5, "{fd} vs {analytic}");
    }

    #[test]
    fn scorer_rejects_single_class() {
        let x = vec![Tensor::<f64>::filled(3, 16, 16, 1.0)];
        assert!(train_band_energy_scorer(&x, &[], &ScorerTraining::default()).is_err());
        assert!(train_band_energy_scorer(&[], &x, &ScorerTraining::default()).is_err());
    }
}
