//! Corpus-level spectrum statistics: mean DCT magnitude maps, azimuthal
//! profiles around the DC corner, and real-versus-fake differences.

use rayon::prelude::*;

use crate::dct::dct2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean over images of the channel-averaged `|dct2(image)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateFrequencyMap<T> {
    pub map: Tensor<T>,
    pub count: usize,
}

/// Channel-averaged DCT magnitude of one image.
pub fn magnitude_map<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let spectrum = dct2(image)?;
    let mut out = Tensor::grid(image.height(), image.width());
    let inv = T::one() / T::from_usize_lossy(image.channels());
    for c in 0..spectrum.channels() {
        for (o, &v) in out.as_mut_slice().iter_mut().zip(spectrum.channel(c)) {
            *o += v.abs() * inv;
        }
    }
    Ok(out)
}

/// Averages magnitude maps over `images`; magnitudes are computed in
/// parallel and summed in input order.
pub fn accumulate_frequency<T: Scalar>(images: &[Tensor<T>]) -> Result<AggregateFrequencyMap<T>> {
    let first = images.first().ok_or(Error::Empty("image sequence"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = images.iter().find(|im| im.height() != h || im.width() != w) {
        return Err(Error::shape(
            "accumulate_frequency",
            &[h, w],
            &[bad.height(), bad.width()],
        ));
    }
    let maps: Vec<Tensor<T>> = images.par_iter().map(magnitude_map).collect::<Result<_>>()?;
    let mut acc = Tensor::grid(h, w);
    for m in &maps {
        acc.add_assign(m);
    }
    let n = T::from_usize_lossy(images.len());
    Ok(AggregateFrequencyMap {
        map: acc.map(|v| v / n),
        count: images.len(),
    })
}

/// One-dimensional annulus-averaged spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumProfile<T> {
    pub values: Vec<T>,
    /// `n_bins + 1` radii in coefficient-index units.
    pub bin_edges: Vec<T>,
    /// Number of grid positions falling in each bin.
    pub counts: Vec<usize>,
}

impl<T: Scalar> SpectrumProfile<T> {
    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn bin_centers(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.bin_edges.windows(2).map(|e| (e[0] + e[1]) * half).collect()
    }
}

/// Result of [`azimuthal_profile`]; `requested_bins` differs from the
/// profile's bin count when empty annuli forced a reduction.
#[derive(Clone, Debug)]
pub struct ProfileResult<T> {
    pub profile: SpectrumProfile<T>,
    pub requested_bins: usize,
    pub warning: Option<String>,
}

/// Default bin count: 100 at 400 pixels, scaled with the larger side.
pub fn default_bins(h: usize, w: usize) -> usize {
    ((100.0 * h.max(w) as f64 / 400.0).round() as usize).max(2)
}

/// Bin index of squared radius `r2` among `n` equal-width annuli out to
/// `sqrt(r2_max)`; integer comparisons keep the edges exact.
fn bin_index(r2: u64, r2_max: u64, n: u64) -> usize {
    // Largest k with k² · r2_max ≤ n² · r2.
    let lhs = n * n * r2;
    let mut k = ((r2 as f64 / r2_max as f64).sqrt() * n as f64) as u64;
    while k > 0 && k * k * r2_max > lhs {
        k -= 1;
    }
    while (k + 1) * (k + 1) * r2_max <= lhs {
        k += 1;
    }
    k.min(n - 1) as usize
}

/// Assignment of every `(row, col)` of an `h × w` grid to an annulus.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnulusLayout {
    pub height: usize,
    pub width: usize,
    pub n_bins: usize,
    /// Row-major bin index per position.
    pub index: Vec<usize>,
    pub counts: Vec<usize>,
    pub r_max: f64,
}

impl AnnulusLayout {
    fn with_bins(h: usize, w: usize, n: usize) -> Self {
        let r2_max = ((h - 1) * (h - 1) + (w - 1) * (w - 1)) as u64;
        let mut counts = vec![0usize; n];
        let mut index = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let k = bin_index((i * i + j * j) as u64, r2_max, n as u64);
                counts[k] += 1;
                index.push(k);
            }
        }
        AnnulusLayout {
            height: h,
            width: w,
            n_bins: n,
            index,
            counts,
            r_max: (r2_max as f64).sqrt(),
        }
    }

    /// Layout with `n_bins` annuli, reduced until none is empty.
    pub fn new(h: usize, w: usize, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
        }
        if h == 0 || w == 0 || (h < 2 && w < 2) {
            return Err(Error::InvalidArgument("annuli need more than one grid position".into()));
        }
        let mut n = n_bins;
        let mut layout = Self::with_bins(h, w, n);
        while n > 1 && layout.counts.iter().any(|&c| c == 0) {
            n -= 1;
            layout = Self::with_bins(h, w, n);
        }
        Ok(layout)
    }

    pub fn bin_edges<T: Scalar>(&self) -> Vec<T> {
        (0..=self.n_bins)
            .map(|k| T::lit(k as f64 * self.r_max / self.n_bins as f64))
            .collect()
    }

    /// Mean of a channel-averaged map over each annulus.
    pub fn means<T: Scalar>(&self, map: &Tensor<T>) -> Vec<T> {
        let mut sums = vec![T::zero(); self.n_bins];
        let inv_c = T::one() / T::from_usize_lossy(map.channels());
        for c in 0..map.channels() {
            for (&k, &v) in self.index.iter().zip(map.channel(c)) {
                sums[k] += v * inv_c;
            }
        }
        sums.iter()
            .zip(&self.counts)
            .map(|(&s, &n)| s / T::from_usize_lossy(n))
            .collect()
    }
}

/// Averages `map` over annuli centred on the DC corner.
///
/// Bin `k` covers radii `[k·r_max/n, (k+1)·r_max/n)`, the last bin closed.
/// If any annulus contains no grid position, the bin count is reduced
/// until all are populated and a warning is recorded.
pub fn azimuthal_profile<T: Scalar>(map: &Tensor<T>, n_bins: usize) -> Result<ProfileResult<T>> {
    let (h, w) = (map.height(), map.width());
    let layout = AnnulusLayout::new(h, w, n_bins)?;
    let n = layout.n_bins;
    let warning = (n != n_bins).then(|| {
        let msg = format!("{n_bins} bins leave empty annuli on a {h}x{w} grid; using {n}");
        log::warn!("{msg}");
        msg
    });
    Ok(ProfileResult {
        profile: SpectrumProfile {
            values: layout.means(map),
            bin_edges: layout.bin_edges(),
            counts: layout.counts,
        },
        requested_bins: n_bins,
        warning,
    })
}

/// `log₂(1 + v)` per bin.
pub fn log_profile<T: Scalar>(profile: &SpectrumProfile<T>) -> SpectrumProfile<T> {
    SpectrumProfile {
        values: profile.values.iter().map(|&v| (T::one() + v).log2()).collect(),
        bin_edges: profile.bin_edges.clone(),
        counts: profile.counts.clone(),
    }
}

/// Signed per-bin difference `fake − real`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceProfile<T> {
    pub values: Vec<T>,
    pub bin_edges: Vec<T>,
}

impl<T: Scalar> DifferenceProfile<T> {
    /// Index of the bin with the largest `|difference|`.
    pub fn argmax_abs(&self) -> Option<usize> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
    }
}

/// `fake − real` per bin; with `log_scale`, `sign(d)·log₂(1 + |d|)`.
pub fn difference_profile<T: Scalar>(
    real: &SpectrumProfile<T>,
    fake: &SpectrumProfile<T>,
    log_scale: bool,
) -> Result<DifferenceProfile<T>> {
    if real.n_bins() != fake.n_bins() {
        return Err(Error::shape("difference_profile", &[real.n_bins()], &[fake.n_bins()]));
    }
    let values = real
        .values
        .iter()
        .zip(&fake.values)
        .map(|(&r, &f)| {
            let d = f - r;
            if log_scale && d != T::zero() {
                d.signum() * (T::one() + d.abs()).log2()
            } else {
                d
            }
        })
        .collect();
    Ok(DifferenceProfile {
        values,
        bin_edges: real.bin_edges.clone(),
    })
}

/// Elementwise `a − b` of two aggregate maps.
pub fn difference_heatmap<T: Scalar>(
    a: &AggregateFrequencyMap<T>,
    b: &AggregateFrequencyMap<T>,
) -> Result<Tensor<T>> {
    a.map.ensure_shape(&b.map, "difference_heatmap")?;
    Ok(a.map.sub(&b.map))
}
