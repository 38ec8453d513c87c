//! Frequency blending, the spatial self-blending pseudo-fake generator, the
//! α augmentation policy and the synthetic desk corpus.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dct::{dct2, idct2};
use crate::error::{Error, Result};
use crate::net::ParserModel;
use crate::partition::{normalize_triple, DistributionTriple, PriorMasks};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything that maps a frequency map to a distribution triple.
pub trait TripleSource<T: Scalar>: Sync {
    fn triple(&self, freq: &Tensor<T>) -> Result<DistributionTriple<T>>;
}

impl<T: Scalar> TripleSource<T> for ParserModel<T> {
    fn triple(&self, freq: &Tensor<T>) -> Result<DistributionTriple<T>> {
        Ok(self.forward(freq, false)?.triple)
    }
}

impl<T: Scalar> TripleSource<T> for PriorMasks<T> {
    fn triple(&self, freq: &Tensor<T>) -> Result<DistributionTriple<T>> {
        if freq.height() != self.height() || freq.width() != self.width() {
            return Err(Error::shape(
                "prior masks",
                &[self.height(), self.width()],
                &[freq.height(), freq.width()],
            ));
        }
        Ok(self.as_triple())
    }
}

impl<T: Scalar, S: TripleSource<T> + ?Sized> TripleSource<T> for &S {
    fn triple(&self, freq: &Tensor<T>) -> Result<DistributionTriple<T>> {
        (**self).triple(freq)
    }
}

/// Rescales the inner source's maps to sum to one at every position.
pub struct Normalized<S>(pub S);

impl<T: Scalar, S: TripleSource<T>> TripleSource<T> for Normalized<S> {
    fn triple(&self, freq: &Tensor<T>) -> Result<DistributionTriple<T>> {
        normalize_triple(&self.0.triple(freq)?)
    }
}

/// Counts how often the inner source is queried.
pub struct Counting<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S> Counting<S> {
    pub fn new(inner: S) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: Scalar, S: TripleSource<T>> TripleSource<T> for Counting<S> {
    fn triple(&self, freq: &Tensor<T>) -> Result<DistributionTriple<T>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.triple(freq)
    }
}

/// Frequency blend without range handling:
/// `idct2(φ(x_r)·p_sem + φ(x_f)·p_str + φ(x_r)·p_noi)` with all three maps
/// computed from `φ(x_f)`.
pub fn freq_blend_raw<T: Scalar>(x_r: &Tensor<T>, x_f: &Tensor<T>, source: &dyn TripleSource<T>) -> Result<Tensor<T>> {
    x_r.ensure_shape(x_f, "frequency blend")?;
    let c_r = dct2(x_r)?;
    let c_f = dct2(x_f)?;
    let triple = source.triple(&c_f)?;
    freq_blend_spectra(&c_r, &c_f, &triple)
}

/// Blend of two spectra under a given triple, returned in the spatial domain.
pub fn freq_blend_spectra<T: Scalar>(
    c_r: &Tensor<T>,
    c_f: &Tensor<T>,
    triple: &DistributionTriple<T>,
) -> Result<Tensor<T>> {
    c_r.ensure_shape(c_f, "frequency blend")?;
    if triple.height() != c_r.height() || triple.width() != c_r.width() {
        return Err(Error::shape(
            "blend triple",
            &[c_r.height(), c_r.width()],
            &[triple.height(), triple.width()],
        ));
    }
    let plane = c_r.plane_len();
    let (ps, pt, pn) = (
        triple.semantic.as_slice(),
        triple.structural.as_slice(),
        triple.noise.as_slice(),
    );
    let mut out = Tensor::zeros(c_r.channels(), c_r.height(), c_r.width());
    for ((o, (&r, &f)), k) in out
        .as_mut_slice()
        .iter_mut()
        .zip(c_r.as_slice().iter().zip(c_f.as_slice()))
        .zip((0..plane).cycle())
    {
        *o = r * ps[k] + f * pt[k] + r * pn[k];
    }
    idct2(&out)
}

/// Frequency blend, optionally clamped to `[0, 255]`.
pub fn freq_blend<T: Scalar>(
    x_r: &Tensor<T>,
    x_f: &Tensor<T>,
    source: &dyn TripleSource<T>,
    clamp_output: bool,
) -> Result<Tensor<T>> {
    let out = freq_blend_raw(x_r, x_f, source)?;
    Ok(if clamp_output {
        out.clamp(T::zero(), T::lit(255.0))
    } else {
        out
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendConfig {
    /// Probability that a spatial pseudo-fake is additionally frequency blended.
    pub alpha: f64,
    pub clamp_output: bool,
    pub seed: u64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig {
            alpha: 0.2,
            clamp_output: true,
            seed: 0,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Ellipse,
    Blob,
}

/// Ranges for the self-blending generator. Every jitter is drawn uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialBlendParams {
    pub mask: MaskKind,
    /// Maximum translation as a fraction of the image width.
    pub max_translate: f64,
    pub scale_range: [f64; 2],
    pub max_rotate_deg: f64,
    /// Maximum relative brightness change.
    pub max_brightness: f64,
    /// Maximum relative contrast change.
    pub max_contrast: f64,
    /// Range of the Gaussian boundary blur, in pixels.
    pub blur_sigma: [f64; 2],
}

impl Default for SpatialBlendParams {
    fn default() -> Self {
        SpatialBlendParams {
            mask: MaskKind::Blob,
            max_translate: 0.03,
            scale_range: [0.97, 1.03],
            max_rotate_deg: 2.0,
            max_brightness: 0.05,
            max_contrast: 0.05,
            blur_sigma: [0.5, 1.5],
        }
    }
}

impl SpatialBlendParams {
    /// No geometric or colour jitter and a hard mask.
    pub fn identity() -> Self {
        SpatialBlendParams {
            mask: MaskKind::Ellipse,
            max_translate: 0.0,
            scale_range: [1.0, 1.0],
            max_rotate_deg: 0.0,
            max_brightness: 0.0,
            max_contrast: 0.0,
            blur_sigma: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let range = |r: [f64; 2]| ok(r[0]) && ok(r[1]) && r[0] <= r[1];
        if !(ok(self.max_translate)
            && self.max_translate < 0.5
            && range(self.scale_range)
            && self.scale_range[0] > 0.0
            && ok(self.max_rotate_deg)
            && ok(self.max_brightness)
            && ok(self.max_contrast)
            && range(self.blur_sigma))
        {
            return Err(Error::InvalidArgument(format!("invalid spatial blend parameters: {self:?}")));
        }
        Ok(())
    }
}

fn uniform(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn symmetric(rng: &mut dyn RngCore, max: f64) -> f64 {
    uniform(rng, -max, max)
}

/// Hard 0/1 mask of an ellipse or a smooth star-convex blob near the centre.
pub fn hard_mask<T: Scalar>(h: usize, w: usize, kind: MaskKind, rng: &mut dyn RngCore) -> Tensor<T> {
    let (hf, wf) = (h as f64, w as f64);
    let cy = hf * uniform(rng, 0.4, 0.6);
    let cx = wf * uniform(rng, 0.4, 0.6);
    let ry = hf * uniform(rng, 0.22, 0.36);
    let rx = wf * uniform(rng, 0.22, 0.36);
    let tilt = symmetric(rng, std::f64::consts::FRAC_PI_4);
    let harmonics: Vec<(f64, f64)> = match kind {
        MaskKind::Ellipse => Vec::new(),
        MaskKind::Blob => (2..5)
            .map(|_| (uniform(rng, 0.0, 0.08), uniform(rng, 0.0, std::f64::consts::TAU)))
            .collect(),
    };
    let (s, c) = tilt.sin_cos();
    Tensor::from_fn(1, h, w, |_, i, j| {
        let dy = i as f64 + 0.5 - cy;
        let dx = j as f64 + 0.5 - cx;
        let u = (c * dx + s * dy) / rx;
        let v = (-s * dx + c * dy) / ry;
        let theta = v.atan2(u);
        let radius = 1.0
            + harmonics
                .iter()
                .enumerate()
                .map(|(k, &(a, phase))| a * ((k as f64 + 2.0) * theta + phase).cos())
                .sum::<f64>();
        if u * u + v * v <= radius * radius {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Radius of the truncated Gaussian kernel used for a given sigma.
pub fn blur_radius(sigma: f64) -> usize {
    if sigma <= 0.0 {
        0
    } else {
        (3.0 * sigma).ceil() as usize
    }
}

/// Separable truncated Gaussian blur with edge replication.
pub fn gaussian_blur<T: Scalar>(x: &Tensor<T>, sigma: f64) -> Tensor<T> {
    let r = blur_radius(sigma);
    if r == 0 {
        return x.clone();
    }
    let raw: Vec<f64> = (0..=2 * r)
        .map(|k| {
            let d = k as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm: f64 = raw.iter().sum();
    let kernel: Vec<T> = raw.iter().map(|&v| T::lit(v / norm)).collect();
    let (h, w) = (x.height(), x.width());
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Tensor::zeros(x.channels(), h, w);
    for c in 0..x.channels() {
        for i in 0..h {
            for j in 0..w {
                let mut acc = T::zero();
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * x.get(c, i, clampi(j as isize + k as isize - r as isize, w));
                }
                tmp.set(c, i, j, acc);
            }
        }
    }
    let mut out = Tensor::zeros(x.channels(), h, w);
    for c in 0..x.channels() {
        for i in 0..h {
            for j in 0..w {
                let mut acc = T::zero();
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp.get(c, clampi(i as isize + k as isize - r as isize, h), j);
                }
                out.set(c, i, j, acc);
            }
        }
    }
    out
}

/// Geometric and photometric jitter of a single image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub translate: [f64; 2],
    pub scale: f64,
    pub rotate_rad: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl Jitter {
    pub fn sample(params: &SpatialBlendParams, width: usize, rng: &mut dyn RngCore) -> Self {
        let t = params.max_translate * width as f64;
        Jitter {
            translate: [symmetric(rng, t), symmetric(rng, t)],
            scale: uniform(rng, params.scale_range[0], params.scale_range[1]),
            rotate_rad: symmetric(rng, params.max_rotate_deg).to_radians(),
            brightness: symmetric(rng, params.max_brightness),
            contrast: symmetric(rng, params.max_contrast),
        }
    }

    /// Affine resampling about the image centre with bilinear interpolation,
    /// then `v(1 + brightness) + contrast·(v − channel mean)`.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.height(), x.width());
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let (s, c) = self.rotate_rad.sin_cos();
        let mut out = Tensor::zeros(x.channels(), h, w);
        for i in 0..h {
            for j in 0..w {
                let dy = (i as f64 - cy - self.translate[0]) / self.scale;
                let dx = (j as f64 - cx - self.translate[1]) / self.scale;
                let sy = (c * dy - s * dx + cy).clamp(0.0, h as f64 - 1.0);
                let sx = (s * dy + c * dx + cx).clamp(0.0, w as f64 - 1.0);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (T::lit(sy - y0 as f64), T::lit(sx - x0 as f64));
                let one = T::one();
                for ch in 0..x.channels() {
                    let top = x.get(ch, y0, x0) * (one - fx) + x.get(ch, y0, x1) * fx;
                    let bottom = x.get(ch, y1, x0) * (one - fx) + x.get(ch, y1, x1) * fx;
                    out.set(ch, i, j, top * (one - fy) + bottom * fy);
                }
            }
        }
        let (b, k) = (T::lit(self.brightness), T::lit(self.contrast));
        for ch in 0..out.channels() {
            let plane = out.channel_mut(ch);
            let mean = plane.iter().copied().sum::<T>() / T::from_usize_lossy(plane.len());
            for v in plane.iter_mut() {
                *v = *v * (T::one() + b) + k * (*v - mean);
            }
        }
        out
    }
}

/// `x + m·(source − x)` with the single-channel mask broadcast over channels.
pub fn composite<T: Scalar>(x: &Tensor<T>, source: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_shape(source, "composite")?;
    if mask.channels() != 1 || mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::shape("composite mask", &[1, x.height(), x.width()], &mask.shape()));
    }
    let plane = x.plane_len();
    let m = mask.as_slice();
    let data = x
        .as_slice()
        .iter()
        .zip(source.as_slice())
        .enumerate()
        .map(|(k, (&a, &b))| a + m[k % plane] * (b - a))
        .collect();
    Tensor::from_vec(x.channels(), x.height(), x.width(), data)
}

/// Self-blended pseudo-fake: a jittered copy of `x` composited into `x`
/// through a blurred blob mask. Returns the clamped composite and the mask.
pub fn spatial_pseudo_fake<T: Scalar>(
    x: &Tensor<T>,
    params: &SpatialBlendParams,
    rng: &mut dyn RngCore,
) -> Result<(Tensor<T>, Tensor<T>)> {
    params.validate()?;
    let (h, w) = (x.height(), x.width());
    if h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!("image {h}x{w} too small for a blend mask")));
    }
    let hard = hard_mask(h, w, params.mask, rng);
    let sigma = uniform(rng, params.blur_sigma[0], params.blur_sigma[1]);
    let mask = gaussian_blur(&hard, sigma);
    let jitter = Jitter::sample(params, w, rng);
    let source = jitter.apply(x);
    let out = composite(x, &source, &mask)?.clamp(T::zero(), T::lit(255.0));
    Ok((out, mask))
}

/// Output of [`augment`]; always labelled fake.
#[derive(Clone, Debug)]
pub struct Augmented<T> {
    pub image: Tensor<T>,
    pub mask: Tensor<T>,
    pub frequency_blended: bool,
}

/// Always builds a spatial pseudo-fake, then with probability `α` passes it
/// through the frequency blender as the fake side. With `α = 0` the source is
/// never queried.
pub fn augment<T: Scalar>(
    x_r: &Tensor<T>,
    source: &dyn TripleSource<T>,
    cfg: &BlendConfig,
    params: &SpatialBlendParams,
    rng: &mut dyn RngCore,
) -> Result<Augmented<T>> {
    cfg.validate()?;
    let (sp, mask) = spatial_pseudo_fake(x_r, params, rng)?;
    let draw: f64 = rng.random();
    if draw < cfg.alpha {
        let image = freq_blend(x_r, &sp, source, cfg.clamp_output)?;
        Ok(Augmented {
            image,
            mask,
            frequency_blended: true,
        })
    } else {
        Ok(Augmented {
            image: sp,
            mask,
            frequency_blended: false,
        })
    }
}

/// Synthetic desk corpus: smooth random scenes and their self-blended fakes.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus<T> {
    pub real: Vec<Tensor<T>>,
    pub fake: Vec<Tensor<T>>,
    /// Per-image seeds; image `k` is reproducible from `seeds[k]` alone.
    pub seeds: Vec<u64>,
}

/// Per-image seeds derived from a corpus seed.
pub fn image_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// One random scene: per channel 3 to 8 Gaussian blobs plus a noise field
/// with power spectrum ∝ 1/f², min-max normalised to `[0, 255]`.
pub fn synth_scene<T: Scalar>(size: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let mut scene = Tensor::<f64>::zeros(3, size, size);
    for c in 0..3 {
        let blobs = rng.random_range(3..=8);
        for _ in 0..blobs {
            let amp = uniform(&mut rng, -1.0, 1.0);
            let cy = uniform(&mut rng, 0.0, n);
            let cx = uniform(&mut rng, 0.0, n);
            let sigma = n * uniform(&mut rng, 0.05, 0.3);
            let denom = 2.0 * sigma * sigma;
            for i in 0..size {
                for j in 0..size {
                    let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                    *scene.at_mut(c, i, j) += amp * (-d2 / denom).exp();
                }
            }
        }
    }
    let mut spectrum = Tensor::<f64>::zeros(3, size, size);
    let shared: Vec<f64> = (0..size * size).map(|_| StandardNormal.sample(&mut rng)).collect();
    for c in 0..3 {
        for i in 0..size {
            for j in 0..size {
                if i + j == 0 {
                    continue;
                }
                let own: f64 = StandardNormal.sample(&mut rng);
                let f = ((i * i + j * j) as f64).sqrt();
                spectrum.set(c, i, j, (0.8 * shared[i * size + j] + 0.6 * own) / f);
            }
        }
    }
    let noise = idct2(&spectrum).expect("finite noise spectrum");
    let noise_scale = 2.0 / noise.max_abs().max(1e-12);
    scene.axpy(noise_scale, &noise);
    let lo = scene.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scene.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    scene.map(|v| 255.0 * (v - lo) / span).cast()
}

/// Real scene and self-blended fake for one image seed. The fake uses an
/// independent stream derived from the same seed.
pub fn synth_pair<T: Scalar>(size: usize, seed: u64, params: &SpatialBlendParams) -> Result<(Tensor<T>, Tensor<T>)> {
    let real = synth_scene::<T>(size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (fake, _) = spatial_pseudo_fake(&real, params, &mut rng)?;
    Ok((real, fake))
}

/// Builds `n` real scenes and their spatial pseudo-fakes, in parallel over
/// images with per-image RNG streams.
pub fn synth_corpus<T: Scalar>(n: usize, size: usize, seed: u64, params: &SpatialBlendParams) -> Result<SynthCorpus<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("corpus needs at least 2 images, got {n}")));
    }
    if size == 0 || size % crate::net::DOWNSAMPLE != 0 {
        return Err(Error::NotDivisible {
            height: size,
            width: size,
            multiple: crate::net::DOWNSAMPLE,
        });
    }
    params.validate()?;
    let seeds = image_seeds(n, seed);
    let pairs = seeds
        .par_iter()
        .map(|&s| synth_pair::<T>(size, s, params))
        .collect::<Result<Vec<_>>>()?;
    let (real, fake) = pairs.into_iter().unzip();
    Ok(SynthCorpus { real, fake, seeds })
}
