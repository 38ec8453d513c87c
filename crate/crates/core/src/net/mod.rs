//! Frequency parsing network: a shared strided-conv encoder and three
//! sub-pixel decoders that map a DCT spectrum to semantic, structural and
//! noise probability maps.
//!
//! Encoder: four `conv3x3 s2 p1 → LeakyReLU(0.2)` layers with widths
//! `[c, 2c, 4c, 8c]`. Each decoder: four blocks of
//! `conv3x3 s1 p1 → depth_to_space ×2 → LeakyReLU(0.2)` producing
//! `[4c, 2c, c, 1]` channels, the last block ending in a sigmoid.

pub mod layers;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::partition::{Band, DistributionTriple};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

pub use layers::{depth_to_space, space_to_depth, ConvParams};
use layers::{leaky_relu, leaky_relu_backward};

/// Total spatial reduction of the encoder.
pub const DOWNSAMPLE: usize = 16;
pub const DEPTH: usize = 4;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Trainable parameters, also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ParserParams<T> {
    pub encoder: Vec<ConvParams<T>>,
    /// Indexed by [`Band`] order: semantic, structural, noise.
    pub decoders: [Vec<ConvParams<T>>; 3],
}

pub type ParamGrads<T> = ParserParams<T>;

fn decoder_index(band: Band) -> usize {
    match band {
        Band::Semantic => 0,
        Band::Structural => 1,
        Band::Noise => 2,
    }
}

impl<T: Scalar> ParserParams<T> {
    /// Zero parameters laid out for base width `c`.
    pub fn zeros(c: usize) -> Self {
        let widths = [3, c, 2 * c, 4 * c, 8 * c];
        let encoder = (0..DEPTH)
            .map(|l| ConvParams::zeros(widths[l], widths[l + 1], 2, 1))
            .collect();
        let dec_out = [4 * c, 2 * c, c, 1];
        let decoder = || -> Vec<ConvParams<T>> {
            let mut input = 8 * c;
            dec_out
                .iter()
                .map(|&out| {
                    let conv = ConvParams::zeros(input, 4 * out, 1, 1);
                    input = out;
                    conv
                })
                .collect()
        };
        ParserParams {
            encoder,
            decoders: [decoder(), decoder(), decoder()],
        }
    }

    pub fn decoder(&self, band: Band) -> &[ConvParams<T>] {
        &self.decoders[decoder_index(band)]
    }

    /// Named parameter groups in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (l, conv) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{l}.weight"), conv.weight.as_slice()));
            out.push((format!("encoder.{l}.bias"), conv.bias.as_slice()));
        }
        for band in Band::ALL {
            for (l, conv) in self.decoder(band).iter().enumerate() {
                out.push((format!("decoder.{}.{l}.weight", band.name()), conv.weight.as_slice()));
                out.push((format!("decoder.{}.{l}.bias", band.name()), conv.bias.as_slice()));
            }
        }
        out
    }

    /// Mutable counterpart of [`groups`](Self::groups), same order.
    pub fn groups_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::new();
        for (l, conv) in self.encoder.iter_mut().enumerate() {
            out.push((format!("encoder.{l}.weight"), conv.weight.as_mut_slice()));
            out.push((format!("encoder.{l}.bias"), conv.bias.as_mut_slice()));
        }
        for (band, dec) in Band::ALL.iter().zip(self.decoders.iter_mut()) {
            for (l, conv) in dec.iter_mut().enumerate() {
                out.push((format!("decoder.{}.{l}.weight", band.name()), conv.weight.as_mut_slice()));
                out.push((format!("decoder.{}.{l}.bias", band.name()), conv.bias.as_mut_slice()));
            }
        }
        out
    }

    /// Dimensions of each group, same order as [`groups`](Self::groups).
    pub fn group_dims(&self) -> Vec<Vec<usize>> {
        self.encoder
            .iter()
            .chain(self.decoders.iter().flatten())
            .flat_map(|c| [vec![c.out_channels, c.in_channels, layers::KERNEL, layers::KERNEL], vec![c.out_channels]])
            .collect()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, g) in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn max_abs(&self) -> T {
        self.groups()
            .iter()
            .flat_map(|(_, g)| g.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> ParserParams<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            stride: c.stride,
            padding: c.padding,
            weight: c.weight.iter().map(|&v| U::lit(v.as_f64())).collect(),
            bias: c.bias.iter().map(|&v| U::lit(v.as_f64())).collect(),
        };
        ParserParams {
            encoder: self.encoder.iter().map(conv).collect(),
            decoders: [
                self.decoders[0].iter().map(conv).collect(),
                self.decoders[1].iter().map(conv).collect(),
                self.decoders[2].iter().map(conv).collect(),
            ],
        }
    }
}

/// The frequency parsing network.
#[derive(Clone, Debug)]
pub struct ParserModel<T> {
    base_width: usize,
    params: ParserParams<T>,
    generation: u64,
}

impl<T: Scalar> PartialEq for ParserModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.base_width == other.base_width && self.params == other.params
    }
}

impl<T: Scalar> ParserModel<T> {
    /// He-initialised weights (std `√(2 / fan_in)`), zero biases, deterministic in `seed`.
    pub fn init(base_width: usize, seed: u64) -> Result<Self> {
        if base_width == 0 {
            return Err(Error::InvalidArgument("base width must be >= 1".into()));
        }
        let mut params = ParserParams::<T>::zeros(base_width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = params
            .encoder
            .iter_mut()
            .chain(params.decoders.iter_mut().flat_map(|d| d.iter_mut()));
        for conv in convs {
            let fan_in = (conv.in_channels * layers::KERNEL * layers::KERNEL) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for w in conv.weight.iter_mut() {
                *w = T::lit(normal.sample(&mut rng));
            }
        }
        Ok(Self::from_params(base_width, params))
    }

    /// Model with every weight and bias zero.
    pub fn zeroed(base_width: usize) -> Self {
        Self::from_params(base_width, ParserParams::zeros(base_width))
    }

    pub fn from_params(base_width: usize, params: ParserParams<T>) -> Self {
        ParserModel {
            base_width,
            params,
            generation: next_generation(),
        }
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn params(&self) -> &ParserParams<T> {
        &self.params
    }

    /// Mutable parameter access; invalidates forward caches taken before the call.
    pub fn params_mut(&mut self) -> &mut ParserParams<T> {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> ParserModel<U> {
        ParserModel::from_params(self.base_width, self.params.cast())
    }

    /// Runs the network on a raw DCT spectrum.
    ///
    /// The spectrum is conditioned with [`normalize_input`] first. With
    /// `record` set, the returned [`Forward`] carries a cache for
    /// [`backward`](Self::backward).
    pub fn forward(&self, freq: &Tensor<T>, record: bool) -> Result<Forward<T>> {
        let (h, w) = (freq.height(), freq.width());
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::NotDivisible {
                height: h,
                width: w,
                multiple: DOWNSAMPLE,
            });
        }
        if freq.channels() != 3 {
            return Err(Error::shape("parser input channels", &[3], &[freq.channels()]));
        }
        freq.check_finite("parser input")?;
        let input = normalize_input(freq);

        let mut enc_inputs = Vec::with_capacity(DEPTH);
        let mut enc_pre = Vec::with_capacity(DEPTH);
        let mut x = input;
        for conv in &self.params.encoder {
            let pre = conv.forward(&x);
            let post = leaky_relu(&pre);
            enc_inputs.push(x);
            enc_pre.push(pre);
            x = post;
        }
        let features = x;

        let mut maps = Vec::with_capacity(3);
        let mut dec_caches = Vec::with_capacity(3);
        for dec in &self.params.decoders {
            let mut conv_inputs = Vec::with_capacity(DEPTH);
            let mut shuffled = Vec::with_capacity(DEPTH);
            let mut y = features.clone();
            for (l, conv) in dec.iter().enumerate() {
                let s = depth_to_space(&conv.forward(&y));
                let next = if l + 1 == DEPTH { s.map(sigmoid) } else { leaky_relu(&s) };
                conv_inputs.push(y);
                shuffled.push(s);
                y = next;
            }
            maps.push(y.clone());
            dec_caches.push(DecoderCache {
                conv_inputs,
                shuffled,
                output: y,
            });
        }
        let noise = maps.pop().expect("three decoders");
        let structural = maps.pop().expect("three decoders");
        let semantic = maps.pop().expect("three decoders");
        let triple = DistributionTriple {
            semantic,
            structural,
            noise,
        };
        let cache = record.then(|| {
            let noi = dec_caches.pop().expect("three decoders");
            let stru = dec_caches.pop().expect("three decoders");
            let sem = dec_caches.pop().expect("three decoders");
            ForwardCache {
                generation: self.generation,
                height: h,
                width: w,
                enc_inputs,
                enc_pre,
                features,
                decoders: [sem, stru, noi],
            }
        });
        Ok(Forward { triple, cache })
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the three maps is `grad`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad: &DistributionTriple<T>) -> Result<ParamGrads<T>> {
        if cache.generation != self.generation {
            return Err(Error::Cache("cache was recorded with different parameters"));
        }
        if grad.height() != cache.height || grad.width() != cache.width {
            return Err(Error::shape(
                "backward map gradient",
                &[cache.height, cache.width],
                &[grad.height(), grad.width()],
            ));
        }
        let mut grads = ParserParams::zeros(self.base_width);
        let mut grad_features = Tensor::zeros(
            cache.features.channels(),
            cache.features.height(),
            cache.features.width(),
        );
        for (d, band) in Band::ALL.into_iter().enumerate() {
            let dc = &cache.decoders[d];
            let dec = &self.params.decoders[d];
            // Through the sigmoid: s' = s(1 - s).
            let mut g = dc
                .output
                .zip_map(grad.map(band), |s, g| g * s * (T::one() - s));
            for l in (0..DEPTH).rev() {
                if l + 1 != DEPTH {
                    g = leaky_relu_backward(&dc.shuffled[l], &g);
                }
                let g_conv = space_to_depth(&g);
                g = dec[l].backward(&dc.conv_inputs[l], &g_conv, &mut grads.decoders[d][l]);
            }
            grad_features.add_assign(&g);
        }
        let mut g = grad_features;
        for l in (0..DEPTH).rev() {
            g = leaky_relu_backward(&cache.enc_pre[l], &g);
            g = self.params.encoder[l].backward(&cache.enc_inputs[l], &g, &mut grads.encoder[l]);
        }
        Ok(grads)
    }
}

/// Output of [`ParserModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub triple: DistributionTriple<T>,
    pub cache: Option<ForwardCache<T>>,
}

impl<T> Forward<T> {
    pub fn cache(&self) -> Result<&ForwardCache<T>> {
        self.cache
            .as_ref()
            .ok_or(Error::Cache("forward ran without gradient recording"))
    }
}

#[derive(Clone, Debug)]
struct DecoderCache<T> {
    conv_inputs: Vec<Tensor<T>>,
    shuffled: Vec<Tensor<T>>,
    output: Tensor<T>,
}

/// Intermediate activations of a recording forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    generation: u64,
    height: usize,
    width: usize,
    /// `enc_inputs[0]` is the conditioned network input.
    enc_inputs: Vec<Tensor<T>>,
    enc_pre: Vec<Tensor<T>>,
    features: Tensor<T>,
    decoders: [DecoderCache<T>; 3],
}

impl<T: Scalar> ForwardCache<T> {
    pub fn normalized_input(&self) -> &Tensor<T> {
        &self.enc_inputs[0]
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    /// Which side of the LeakyReLU kink every pre-activation lies on.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let decoder_pre = self
            .decoders
            .iter()
            .flat_map(|d| d.shuffled[..DEPTH - 1].iter());
        self.enc_pre
            .iter()
            .chain(decoder_pre)
            .flat_map(|t| t.as_slice().iter().map(|&v| v > T::zero()))
            .collect()
    }
}

/// Signed log compression `sign(v)·log₁₀(1 + |v|)` applied to the network
/// input only.
pub fn normalize_input<T: Scalar>(freq: &Tensor<T>) -> Tensor<T> {
    freq.map(|v| {
        let m = (T::one() + v.abs()).log10();
        if v < T::zero() {
            -m
        } else {
            m
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_freq(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(3, h, w, |_, _, _| rng.random_range(-50.0..50.0))
    }

    #[test]
    fn normalize_input_examples() {
        let t = Tensor::<f64>::from_vec(1, 1, 4, vec![0.0, 9.0, -9.0, 99.0]).unwrap();
        let n = normalize_input(&t);
        let expect = [0.0, 1.0, -1.0, 2.0];
        for (a, b) in n.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ParserModel::<f64>::init(4, 7).unwrap();
        let b = ParserModel::<f64>::init(4, 7).unwrap();
        let c = ParserModel::<f64>::init(4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(ParserModel::<f64>::init(0, 1).is_err());
        assert!(a.params().groups().iter().filter(|(n, _)| n.ends_with("bias")).all(|(_, g)| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shapes_and_range_at_desk_size() {
        let model = ParserModel::<f64>::init(8, 1).unwrap();
        let fwd = model.forward(&random_freq(64, 64, 2), true).unwrap();
        let cache = fwd.cache().unwrap();
        assert_eq!(cache.features().shape(), [64, 4, 4]);
        for b in Band::ALL {
            assert_eq!(fwd.triple.map(b).shape(), [1, 64, 64]);
        }
        assert!(fwd
            .triple
            .semantic
            .as_slice()
            .iter()
            .chain(fwd.triple.structural.as_slice())
            .chain(fwd.triple.noise.as_slice())
            .all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rectangular_inputs_keep_shape() {
        let model = ParserModel::<f64>::init(2, 1).unwrap();
        let fwd = model.forward(&random_freq(32, 48, 3), false).unwrap();
        assert_eq!(fwd.triple.noise.shape(), [1, 32, 48]);
        assert!(fwd.cache().is_err());
    }

    #[test]
    fn rejects_indivisible_dims() {
        let model = ParserModel::<f64>::init(2, 1).unwrap();
        let err = model.forward(&random_freq(24, 32, 3), false).unwrap_err();
        assert!(matches!(err, Error::NotDivisible { multiple: 16, .. }));
    }

    #[test]
    fn zero_model_gives_half_everywhere() {
        let model = ParserModel::<f64>::zeroed(2);
        let fwd = model.forward(&Tensor::zeros(3, 16, 16), false).unwrap();
        assert!(fwd.triple.max_abs_diff(&DistributionTriple::uniform(16, 16, 0.5)) == 0.0);
    }

    #[test]
    fn forward_is_pure() {
        let model = ParserModel::<f64>::init(2, 3).unwrap();
        let f = random_freq(16, 16, 4);
        let a = model.forward(&f, false).unwrap().triple;
        let b = model.forward(&f, true).unwrap().triple;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let model = ParserModel::<f64>::init(2, 3).unwrap();
        let fwd = model.forward(&random_freq(16, 16, 5), true).unwrap();
        let g = model
            .backward(fwd.cache().unwrap(), &DistributionTriple::zeros(16, 16))
            .unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn other_decoders_get_no_gradient() {
        let model = ParserModel::<f64>::init(2, 3).unwrap();
        let fwd = model.forward(&random_freq(16, 16, 6), true).unwrap();
        let mut upstream = DistributionTriple::zeros(16, 16);
        upstream.structural = Tensor::filled(1, 16, 16, 1.0);
        let g = model.backward(fwd.cache().unwrap(), &upstream).unwrap();
        for (name, vals) in g.groups() {
            let touched = vals.iter().any(|&v| v != 0.0);
            if name.starts_with("decoder.sem") || name.starts_with("decoder.noi") {
                assert!(!touched, "{name} should be untouched");
            }
        }
        assert!(g.groups().iter().any(|(n, v)| n.starts_with("decoder.str") && v.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut model = ParserModel::<f64>::init(2, 3).unwrap();
        let fwd = model.forward(&random_freq(16, 16, 6), true).unwrap();
        model.params_mut().encoder[0].bias[0] += 0.1;
        let err = model
            .backward(fwd.cache().unwrap(), &DistributionTriple::zeros(16, 16))
            .unwrap_err();
        assert!(matches!(err, Error::Cache(_)));
    }

    /// Central differences of `sum(p_sem)` against the analytic gradient, for every group.
    #[test]
    fn semantic_sum_gradient_matches_finite_differences() {
        let model = ParserModel::<f64>::init(2, 9).unwrap();
        let freq = random_freq(16, 16, 10);
        let fwd = model.forward(&freq, true).unwrap();
        let mut upstream = DistributionTriple::zeros(16, 16);
        upstream.semantic = Tensor::filled(1, 16, 16, 1.0);
        let grads = model.backward(fwd.cache().unwrap(), &upstream).unwrap();
        let loss = |m: &ParserModel<f64>| m.forward(&freq, false).unwrap().triple.semantic.sum();
        let step = 1e-5;
        let names: Vec<String> = grads.groups().iter().map(|(n, _)| n.clone()).collect();
        for (gi, name) in names.iter().enumerate() {
            if !name.starts_with("encoder") && !name.starts_with("decoder.sem") {
                continue;
            }
            let analytic = grads.groups()[gi].1.to_vec();
            for k in (0..analytic.len()).step_by((analytic.len() / 6).max(1)) {
                let mut plus = model.clone();
                plus.params_mut().groups_mut()[gi].1[k] += step;
                let mut minus = model.clone();
                minus.params_mut().groups_mut()[gi].1[k] -= step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let a: f64 = analytic[k];
                let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-5, "{name}[{k}]: analytic {a} vs fd {fd}");
            }
        }
    }
}
