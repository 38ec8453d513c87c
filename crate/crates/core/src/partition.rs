//! Three-band frequency partition: prior band masks, probability-map
//! triples and per-component selection.

use crate::dct::{dct2, idct2};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default upper edge of the semantic band in normalized `u + v` units.
pub const SEMANTIC_EDGE: f64 = 1.0 / 16.0;
/// Default upper edge of the structural band.
pub const STRUCTURAL_EDGE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    Semantic,
    Structural,
    Noise,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Semantic, Band::Structural, Band::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Band::Semantic => "sem",
            Band::Structural => "str",
            Band::Noise => "noi",
        }
    }
}

/// Band of position `(row, col)` on an `h × w` grid with normalized
/// coordinates `u = row/(h-1)`, `v = col/(w-1)`.
///
/// Semantic when `u + v ≤ t1`, structural when `t1 < u + v ≤ t2`, noise
/// otherwise. The comparison is carried out as
/// `row·(w-1) + col·(h-1) ≤ t·(h-1)(w-1)` so dyadic thresholds are exact.
pub fn band_of(row: usize, col: usize, h: usize, w: usize, t1: f64, t2: f64) -> Band {
    let lhs = (row * (w - 1) + col * (h - 1)) as f64;
    let area = ((h - 1) * (w - 1)) as f64;
    if lhs <= t1 * area {
        Band::Semantic
    } else if lhs <= t2 * area {
        Band::Structural
    } else {
        Band::Noise
    }
}

/// Binary band masks; exactly one is 1 at every position.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMasks<T> {
    pub semantic: Tensor<T>,
    pub structural: Tensor<T>,
    pub noise: Tensor<T>,
    pub t1: f64,
    pub t2: f64,
}

impl<T: Scalar> PriorMasks<T> {
    pub fn new(h: usize, w: usize, t1: f64, t2: f64) -> Result<Self> {
        if h < 2 || w < 2 {
            return Err(Error::InvalidArgument(format!(
                "prior masks need at least 2x2 positions, got {h}x{w}"
            )));
        }
        if !(t1 > 0.0 && t1 < t2 && t2 < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must satisfy 0 < t1 < t2 < 2, got t1={t1}, t2={t2}"
            )));
        }
        let mut semantic = Tensor::grid(h, w);
        let mut structural = Tensor::grid(h, w);
        let mut noise = Tensor::grid(h, w);
        for i in 0..h {
            for j in 0..w {
                let target = match band_of(i, j, h, w, t1, t2) {
                    Band::Semantic => &mut semantic,
                    Band::Structural => &mut structural,
                    Band::Noise => &mut noise,
                };
                target.set(0, i, j, T::one());
            }
        }
        Ok(PriorMasks {
            semantic,
            structural,
            noise,
            t1,
            t2,
        })
    }

    pub fn height(&self) -> usize {
        self.semantic.height()
    }

    pub fn width(&self) -> usize {
        self.semantic.width()
    }

    pub fn mask(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::Semantic => &self.semantic,
            Band::Structural => &self.structural,
            Band::Noise => &self.noise,
        }
    }

    pub fn count(&self, band: Band) -> usize {
        self.mask(band)
            .as_slice()
            .iter()
            .filter(|&&v| v == T::one())
            .count()
    }

    /// The masks viewed as an exact-integrity probability triple.
    pub fn as_triple(&self) -> DistributionTriple<T> {
        DistributionTriple {
            semantic: self.semantic.clone(),
            structural: self.structural.clone(),
            noise: self.noise.clone(),
        }
    }
}

/// Builds the three prior band masks.
pub fn make_prior_masks<T: Scalar>(h: usize, w: usize, t1: f64, t2: f64) -> Result<PriorMasks<T>> {
    PriorMasks::new(h, w, t1, t2)
}

/// Per-position probabilities of the semantic, structural and noise components.
///
/// Also used to carry gradients with respect to those maps.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTriple<T> {
    pub semantic: Tensor<T>,
    pub structural: Tensor<T>,
    pub noise: Tensor<T>,
}

impl<T: Scalar> DistributionTriple<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self::uniform(h, w, T::zero())
    }

    pub fn uniform(h: usize, w: usize, v: T) -> Self {
        DistributionTriple {
            semantic: Tensor::filled(1, h, w, v),
            structural: Tensor::filled(1, h, w, v),
            noise: Tensor::filled(1, h, w, v),
        }
    }

    pub fn from_maps(semantic: Tensor<T>, structural: Tensor<T>, noise: Tensor<T>) -> Result<Self> {
        let t = DistributionTriple {
            semantic,
            structural,
            noise,
        };
        t.validate_shape()?;
        Ok(t)
    }

    fn validate_shape(&self) -> Result<()> {
        for m in [&self.structural, &self.noise, &self.semantic] {
            if m.channels() != 1 {
                return Err(Error::shape("distribution map", &[1], &[m.channels()]));
            }
        }
        self.semantic.ensure_shape(&self.structural, "distribution triple")?;
        self.semantic.ensure_shape(&self.noise, "distribution triple")
    }

    pub fn height(&self) -> usize {
        self.semantic.height()
    }

    pub fn width(&self) -> usize {
        self.semantic.width()
    }

    pub fn map(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::Semantic => &self.semantic,
            Band::Structural => &self.structural,
            Band::Noise => &self.noise,
        }
    }

    pub fn map_mut(&mut self, band: Band) -> &mut Tensor<T> {
        match band {
            Band::Semantic => &mut self.semantic,
            Band::Structural => &mut self.structural,
            Band::Noise => &mut self.noise,
        }
    }

    /// `p_sem + p_str + p_noi`
    pub fn total(&self) -> Tensor<T> {
        self.semantic.add(&self.structural).add(&self.noise)
    }

    /// `mean |p_sem + p_str + p_noi − 1|`
    pub fn integrity_residual(&self) -> T {
        let total = self.total();
        let n = T::from_usize_lossy(total.len());
        total
            .as_slice()
            .iter()
            .map(|&s| (s - T::one()).abs())
            .sum::<T>()
            / n
    }

    pub fn in_unit_range(&self) -> bool {
        Band::ALL.iter().all(|&b| {
            self.map(b)
                .as_slice()
                .iter()
                .all(|&v| v >= T::zero() && v <= T::one())
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.semantic.add_assign(&other.semantic);
        self.structural.add_assign(&other.structural);
        self.noise.add_assign(&other.noise);
    }

    pub fn scale(&self, s: T) -> Self {
        DistributionTriple {
            semantic: self.semantic.scale(s),
            structural: self.structural.scale(s),
            noise: self.noise.scale(s),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        Band::ALL
            .iter()
            .map(|&b| self.map(b).max_abs_diff(other.map(b)))
            .fold(T::zero(), T::max)
    }
}

/// Multiplies every channel of `freq` by the single-channel `map`.
pub fn select_component<T: Scalar>(freq: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
    if map.channels() != 1 || map.height() != freq.height() || map.width() != freq.width() {
        return Err(Error::shape(
            "select_component",
            &[1, freq.height(), freq.width()],
            &map.shape(),
        ));
    }
    let mut out = freq.clone();
    let m = map.as_slice();
    for c in 0..out.channels() {
        for (v, &p) in out.channel_mut(c).iter_mut().zip(m) {
            *v *= p;
        }
    }
    Ok(out)
}

/// Gradient of `⟨G, select_component(freq, map)⟩` with respect to `map`:
/// `Σ_c freq[c] ⊙ G[c]`.
pub fn select_map_grad<T: Scalar>(freq: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::grid(freq.height(), freq.width());
    for c in 0..freq.channels() {
        for ((o, &f), &u) in g
            .as_mut_slice()
            .iter_mut()
            .zip(freq.channel(c))
            .zip(upstream.channel(c))
        {
            *o += f * u;
        }
    }
    g
}

/// One parsed component: its frequency coefficients and spatial rendering.
#[derive(Clone, Debug)]
pub struct Component<T> {
    pub band: Band,
    pub freq: Tensor<T>,
    pub image: Tensor<T>,
}

/// Splits `x` into its semantic, structural and noise components under `triple`.
pub fn parse_components<T: Scalar>(
    x: &Tensor<T>,
    triple: &DistributionTriple<T>,
) -> Result<[Component<T>; 3]> {
    if x.height() != triple.height() || x.width() != triple.width() {
        return Err(Error::shape(
            "parse_components",
            &[x.height(), x.width()],
            &[triple.height(), triple.width()],
        ));
    }
    let spectrum = dct2(x)?;
    let build = |band: Band| -> Result<Component<T>> {
        let freq = select_component(&spectrum, triple.map(band))?;
        let image = idct2(&freq)?;
        Ok(Component { band, freq, image })
    };
    Ok([
        build(Band::Semantic)?,
        build(Band::Structural)?,
        build(Band::Noise)?,
    ])
}

/// Rescales the three maps pointwise so they sum to exactly one.
pub fn normalize_triple<T: Scalar>(triple: &DistributionTriple<T>) -> Result<DistributionTriple<T>> {
    let total = triple.total();
    let w = triple.width();
    if let Some(pos) = total.as_slice().iter().position(|&s| !(s > T::zero())) {
        return Err(Error::ZeroSum {
            row: pos / w,
            col: pos % w,
        });
    }
    let norm = |m: &Tensor<T>| m.zip_map(&total, |v, s| v / s);
    Ok(DistributionTriple {
        semantic: norm(&triple.semantic),
        structural: norm(&triple.structural),
        noise: norm(&triple.noise),
    })
}
