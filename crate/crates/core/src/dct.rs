//! Orthonormal separable 2D DCT-II and its inverse (DCT-III).
//!
//! Coefficient `(0, 0)` is the DC term. Per channel the forward transform is
//! `D_h · X · D_wᵀ` with `D[k, i] = s_k cos(π (2i + 1) k / 2n)`,
//! `s_0 = √(1/n)`, `s_k = √(2/n)`; the inverse is `D_hᵀ · C · D_w`.
//! Because the basis is orthonormal, the inverse is also the adjoint, which
//! is what backpropagation through the transform relies on.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major `n × n` DCT-II basis together with its transpose.
#[derive(Debug)]
pub struct DctBasis<T> {
    n: usize,
    forward: Vec<T>,
    transposed: Vec<T>,
}

impl<T: Scalar> DctBasis<T> {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        let mut forward = vec![T::zero(); n * n];
        for k in 0..n {
            let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                let angle = std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf);
                forward[k * n + i] = T::lit(s * angle.cos());
            }
        }
        let mut transposed = vec![T::zero(); n * n];
        for k in 0..n {
            for i in 0..n {
                transposed[i * n + k] = forward[k * n + i];
            }
        }
        DctBasis {
            n,
            forward,
            transposed,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `D[k, i]`
    pub fn entry(&self, k: usize, i: usize) -> T {
        self.forward[k * self.n + i]
    }
}

type BasisCache = Mutex<HashMap<(TypeId, usize), Arc<dyn Any + Send + Sync>>>;

fn cache() -> &'static BasisCache {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Shared, lazily built basis of size `n`.
pub fn basis<T: Scalar>(n: usize) -> Arc<DctBasis<T>> {
    let key = (TypeId::of::<T>(), n);
    let mut map = cache().lock().unwrap_or_else(|p| p.into_inner());
    let entry = map
        .entry(key)
        .or_insert_with(|| Arc::new(DctBasis::<T>::new(n)) as Arc<dyn Any + Send + Sync>)
        .clone();
    drop(map);
    entry
        .downcast::<DctBasis<T>>()
        .expect("cache keyed by scalar type")
}

/// `out = L · X · R` for one `h × w` plane, with `L` h×h and `R` w×w, both row-major.
fn sandwich<T: Scalar>(left: &[T], plane: &[T], right: &[T], h: usize, w: usize, out: &mut [T]) {
    let mut tmp = vec![T::zero(); h * w];
    for i in 0..h {
        let row_out = &mut tmp[i * w..(i + 1) * w];
        for j in 0..w {
            let x = plane[i * w + j];
            if x == T::zero() {
                continue;
            }
            let r = &right[j * w..(j + 1) * w];
            for (o, &rv) in row_out.iter_mut().zip(r) {
                *o += x * rv;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = T::zero());
    for k in 0..h {
        let row_out = &mut out[k * w..(k + 1) * w];
        for i in 0..h {
            let l = left[k * h + i];
            if l == T::zero() {
                continue;
            }
            let t = &tmp[i * w..(i + 1) * w];
            for (o, &tv) in row_out.iter_mut().zip(t) {
                *o += l * tv;
            }
        }
    }
}

fn transform<T: Scalar>(input: &Tensor<T>, inverse: bool) -> Tensor<T> {
    let (h, w) = (input.height(), input.width());
    let bh = basis::<T>(h);
    let bw = basis::<T>(w);
    let (left, right) = if inverse {
        (&bh.transposed, &bw.forward)
    } else {
        (&bh.forward, &bw.transposed)
    };
    let mut out = Tensor::zeros(input.channels(), h, w);
    for c in 0..input.channels() {
        sandwich(left, input.channel(c), right, h, w, out.channel_mut(c));
    }
    out
}

/// Forward orthonormal 2D DCT-II applied to every channel.
pub fn dct2<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    image.check_finite("dct2 input")?;
    Ok(transform(image, false))
}

/// Inverse transform (orthonormal DCT-III), the exact inverse of [`dct2`].
pub fn idct2<T: Scalar>(freq: &Tensor<T>) -> Result<Tensor<T>> {
    freq.check_finite("idct2 input")?;
    Ok(transform(freq, true))
}

/// Vector-Jacobian product of [`dct2`]: since the transform is orthonormal
/// and linear, pulling a gradient back through it is [`idct2`].
pub fn dct2_vjp<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    idct2(upstream)
}

/// Vector-Jacobian product of [`idct2`], which is [`dct2`].
pub fn idct2_vjp<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    dct2(upstream)
}

/// Checked variant of [`dct2_vjp`] for callers holding the forward-pass input.
pub fn dct2_vjp_at<T: Scalar>(point: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if !point.same_shape(upstream) {
        return Err(Error::shape("dct2 vjp", &point.shape(), &upstream.shape()));
    }
    dct2_vjp(upstream)
}
