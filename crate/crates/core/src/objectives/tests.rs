use super::*;
use crate::partition::{make_prior_masks, normalize_triple, Band, SEMANTIC_EDGE, STRUCTURAL_EDGE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Features equal to the raw pixels.
struct PixelFeatures(usize);

impl FeatureExtractor<f64> for PixelFeatures {
    fn dim(&self) -> usize {
        self.0
    }
    fn features(&self, image: &Tensor<f64>) -> Result<Vec<f64>> {
        Ok(image.as_slice().to_vec())
    }
    fn vjp(&self, image: &Tensor<f64>, upstream: &[f64]) -> Result<Tensor<f64>> {
        Tensor::from_vec(image.channels(), image.height(), image.width(), upstream.to_vec())
    }
}

/// Scores images it has been told are real near 1 and everything else near 0.
struct LookupScorer {
    real: Vec<Tensor<f64>>,
}

impl AuthenticityScorer<f64> for LookupScorer {
    fn score(&self, image: &Tensor<f64>) -> Result<f64> {
        let hit = self.real.iter().any(|r| r.max_abs_diff(image) < 1e-9);
        Ok(if hit { 1.0 - 1e-12 } else { 1e-12 })
    }
    fn score_vjp(&self, image: &Tensor<f64>, _u: f64) -> Result<Tensor<f64>> {
        Ok(Tensor::zeros(image.channels(), image.height(), image.width()))
    }
}

fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..255.0))
}

fn random_triple(seed: u64, h: usize, w: usize) -> DistributionTriple<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || Tensor::from_fn(1, h, w, |_, _, _| rng.random_range(0.05..0.95));
    DistributionTriple::from_maps(g(), g(), g()).unwrap()
}

fn untrained_scorer(bins: usize, seed: u64) -> BandEnergyScorer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BandEnergyScorer {
        bins,
        weights: (0..bins).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: 0.1,
        feature_mean: (0..bins).map(|_| rng.random_range(0.0..3.0)).collect(),
        feature_scale: (0..bins).map(|_| rng.random_range(0.5..2.0)).collect(),
    }
}

fn perturb(t: &DistributionTriple<f64>, dir: &DistributionTriple<f64>, h: f64) -> DistributionTriple<f64> {
    let mut out = t.clone();
    out.add_assign(&dir.scale(h));
    out
}

fn directional(grad: &DistributionTriple<f64>, dir: &DistributionTriple<f64>) -> f64 {
    Band::ALL.iter().map(|&b| grad.map(b).dot(dir.map(b))).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn ff_is_zero_for_identity_mask() {
    let x = image(1, 16, 16);
    let mut t = DistributionTriple::uniform(16, 16, 0.3);
    t.semantic = Tensor::filled(1, 16, 16, 1.0);
    let fx = SpectralIdentityFeatures::default();
    assert!(loss_ff(&x, &t, &fx).unwrap().value < 1e-20);
}

#[test]
fn ff_with_pixel_features_and_empty_mask() {
    // Rendering is all zero, so the loss is mean(x²) = (1 + 4 + 9 + 16) / 4.
    let x = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let t = DistributionTriple::zeros(2, 2);
    let l = loss_ff(&x, &t, &PixelFeatures(4)).unwrap();
    assert!((l.value - 7.5).abs() < 1e-12);
}

#[test]
fn ff_gradient_matches_finite_differences() {
    let x = image(2, 16, 16);
    let t = random_triple(3, 16, 16);
    let fx = SpectralIdentityFeatures::default();
    let dir = random_triple(4, 16, 16);
    let g = loss_ff(&x, &t, &fx).unwrap().grad;
    let h = 1e-5;
    let fd = (loss_ff(&x, &perturb(&t, &dir, h), &fx).unwrap().value
        - loss_ff(&x, &perturb(&t, &dir, -h), &fx).unwrap().value)
        / (2.0 * h);
    assert!(rel(fd, directional(&g, &dir)) < 1e-4);
}

#[test]
fn ff_rejects_feature_mismatch() {
    let x = image(2, 16, 16);
    let t = random_triple(3, 16, 16);
    assert!(loss_ff(&x, &t, &PixelFeatures(7)).is_err());
}

#[test]
fn qa_examples() {
    let x = image(5, 16, 16);
    let mut t = random_triple(6, 16, 16);
    t.structural = t.semantic.map(|v| 1.0 - v);
    assert!(loss_qa(&x, &t).unwrap().value < 1e-18);

    let z = DistributionTriple::zeros(16, 16);
    let mean_sq = x.sum_sq() / x.len() as f64;
    assert!(rel(loss_qa(&x, &z).unwrap().value, mean_sq) < 1e-12);

    let small = Tensor::from_vec(3, 2, 2, (0..12).map(|v| v as f64 * 10.0).collect()).unwrap();
    let half = DistributionTriple::uniform(2, 2, 0.25);
    let expect = 0.25 * small.sum_sq() / 12.0;
    assert!(rel(loss_qa(&small, &half).unwrap().value, expect) < 1e-12);
}

#[test]
fn qa_gradient_matches_parseval_route() {
    // By Parseval, L_qa = mean over coefficients of C² (p_sem + p_str - 1)².
    let x = image(7, 16, 16);
    let t = random_triple(8, 16, 16);
    let l = loss_qa(&x, &t).unwrap();
    let c = dct2(&x).unwrap();
    let n = c.len() as f64;
    let s = t.semantic.add(&t.structural);
    let mut value = 0.0;
    let mut grad = Tensor::grid(16, 16);
    for ch in 0..3 {
        for i in 0..16 {
            for j in 0..16 {
                let (cv, sv) = (c.get(ch, i, j), s.get(0, i, j));
                value += cv * cv * (sv - 1.0).powi(2) / n;
                *grad.at_mut(0, i, j) += 2.0 * cv * cv * (sv - 1.0) / n;
            }
        }
    }
    assert!(rel(l.value, value) < 1e-10);
    assert!(l.grad.semantic.max_abs_diff(&grad) < 1e-9 * grad.max_abs());
    assert_eq!(l.grad.semantic, l.grad.structural);
    assert_eq!(l.grad.noise.max_abs(), 0.0);
}

#[test]
fn pi_examples() {
    let priors = make_prior_masks::<f64>(4, 4, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
    assert_eq!(loss_pi(&priors.as_triple(), &priors).unwrap().value, 0.0);

    // All maps 1: each prior term is the fraction of positions outside its
    // band, summing to 3 - 1 = 2; the integrity term is (3 - 1)² = 4.
    let ones = DistributionTriple::uniform(4, 4, 1.0);
    assert!((loss_pi(&ones, &priors).unwrap().value - 6.0).abs() < 1e-12);

    // All maps 1/3: integrity 0, prior terms (2/3)² + 2·(1/3)² = 2/3 per position.
    let third = DistributionTriple::uniform(4, 4, 1.0 / 3.0);
    assert!((loss_pi(&third, &priors).unwrap().value - 2.0 / 3.0).abs() < 1e-12);
    assert!(loss_pi(&third, &make_prior_masks(5, 4, 0.1, 0.5).unwrap()).is_err());
}

#[test]
fn pi_gradient_matches_finite_differences() {
    let priors = make_prior_masks::<f64>(16, 16, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
    let t = random_triple(9, 16, 16);
    let dir = random_triple(10, 16, 16);
    let g = loss_pi(&t, &priors).unwrap().grad;
    let h = 1e-5;
    let fd = (loss_pi(&perturb(&t, &dir, h), &priors).unwrap().value
        - loss_pi(&perturb(&t, &dir, -h), &priors).unwrap().value)
        / (2.0 * h);
    assert!(rel(fd, directional(&g, &dir)) < 1e-8);
}

#[test]
fn blend_set_structure() {
    let x_r = image(11, 16, 16);
    let x_f = image(12, 16, 16);
    let tr = random_triple(13, 16, 16);
    let tf = random_triple(14, 16, 16);
    let sets = build_blend_sets(&x_r, &x_f, &tr, &tf).unwrap();
    assert_eq!(sets.real.len(), 3);
    assert_eq!(sets.fake.len(), 2);

    let same = build_blend_sets(&x_r, &x_r, &tr, &tr).unwrap();
    assert!(same.real[0].max_abs_diff(&same.real[1]) < 1e-12);
    assert!(same.fake[0].max_abs_diff(&same.fake[1]) < 1e-12);

    let mut complete = tf.clone();
    complete.structural = complete.semantic.map(|v| 1.0 - v);
    let sets = build_blend_sets(&x_r, &x_f, &tr, &complete).unwrap();
    assert!(sets.fake[0].max_abs_diff(&x_f) < 1e-9);
    assert!(build_blend_sets(&x_r, &image(1, 32, 16), &tr, &tf).is_err());
}

#[test]
fn ad_with_uninformative_scorer_is_two_ln2() {
    let x_r = image(15, 16, 16);
    let x_f = image(16, 16, 16);
    let sets = build_blend_sets(&x_r, &x_f, &random_triple(1, 16, 16), &random_triple(2, 16, 16)).unwrap();
    // Each of the two averaged terms contributes ln 2.
    let l = loss_ad(&sets, &ConstantScorer(0.5)).unwrap();
    assert!((l.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn ad_vanishes_for_perfect_scorer() {
    let x_r = image(17, 16, 16);
    let x_f = image(18, 16, 16);
    let sets = build_blend_sets(&x_r, &x_f, &random_triple(1, 16, 16), &random_triple(2, 16, 16)).unwrap();
    let scorer = LookupScorer {
        real: sets.real.to_vec(),
    };
    assert!(loss_ad(&sets, &scorer).unwrap().value < 1e-10);
}

#[test]
fn ad_rejects_out_of_range_scores() {
    let x = image(19, 16, 16);
    let t = random_triple(1, 16, 16);
    let sets = build_blend_sets(&x, &x, &t, &t).unwrap();
    assert!(matches!(
        loss_ad(&sets, &ConstantScorer(1.0)),
        Err(Error::ScoreOutOfRange(_))
    ));
}

#[test]
fn ad_gradient_matches_finite_differences() {
    let x_r = SpectralImage::new(image(20, 16, 16)).unwrap();
    let x_f = SpectralImage::new(image(21, 16, 16)).unwrap();
    let tr = random_triple(22, 16, 16);
    let tf = random_triple(23, 16, 16);
    let dr = random_triple(24, 16, 16);
    let df = random_triple(25, 16, 16);
    let d = untrained_scorer(6, 26);
    let l = loss_ad_spectral(&x_r, &x_f, &tr, &tf, &d).unwrap();
    let h = 1e-5;
    let eval = |s: f64| {
        loss_ad_spectral(&x_r, &x_f, &perturb(&tr, &dr, s), &perturb(&tf, &df, s), &d)
            .unwrap()
            .value
    };
    let fd = (eval(h) - eval(-h)) / (2.0 * h);
    let analytic = directional(&l.grad_real, &dr) + directional(&l.grad_fake, &df);
    assert!(rel(fd, analytic) < 1e-4, "{fd} vs {analytic}");
}

#[test]
fn total_loss_combines_terms_linearly() {
    let x_r = SpectralImage::new(image(30, 16, 16)).unwrap();
    let x_f = SpectralImage::new(image(31, 16, 16)).unwrap();
    let tr = random_triple(32, 16, 16);
    let tf = random_triple(33, 16, 16);
    let priors = make_prior_masks(16, 16, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
    let fx = SpectralIdentityFeatures::default();
    let d = untrained_scorer(6, 34);

    let zero = LossWeights::new(0.0, 0.0, 0.0, 0.0).unwrap();
    let z = total_loss(&x_r, &x_f, &tr, &tf, &priors, &fx, &d, &zero).unwrap();
    assert_eq!(z.terms.total, 0.0);
    assert_eq!(z.grad_real.max_abs_diff(&DistributionTriple::zeros(16, 16)), 0.0);
    assert_eq!(z.grad_fake.max_abs_diff(&DistributionTriple::zeros(16, 16)), 0.0);

    let w = LossWeights::default();
    assert_eq!(w.as_array(), [1.0 / 12.0, 1.0, 1e-3, 0.25]);
    let t = total_loss(&x_r, &x_f, &tr, &tf, &priors, &fx, &d, &w).unwrap();
    let ff = (loss_ff_spectral(&x_r, &tr, &fx).unwrap().value + loss_ff_spectral(&x_f, &tf, &fx).unwrap().value) / 2.0;
    let qa = (loss_qa_spectral(&x_r, &tr).unwrap().value + loss_qa_spectral(&x_f, &tf).unwrap().value) / 2.0;
    let pi = (loss_pi(&tr, &priors).unwrap().value + loss_pi(&tf, &priors).unwrap().value) / 2.0;
    let ad = loss_ad_spectral(&x_r, &x_f, &tr, &tf, &d).unwrap().value;
    assert_eq!(t.terms.ff, ff);
    assert_eq!(t.terms.qa, qa);
    assert_eq!(t.terms.pi, pi);
    assert_eq!(t.terms.ad, ad);
    assert_eq!(t.terms.total, w.fidelity * ff + w.authenticity * ad + w.quality * qa + w.prior * pi);

    for set in [[1.0, 1.0, 1.0, 1.0], [0.1, 1.0, 0.1, 0.5], [0.1, 1.0, 0.01, 0.5], [0.01, 1.0, 1e-4, 0.1]] {
        let w = LossWeights::new(set[0], set[1], set[2], set[3]).unwrap();
        assert!(total_loss(&x_r, &x_f, &tr, &tf, &priors, &fx, &d, &w).unwrap().terms.is_finite());
    }
    assert!(LossWeights::new(-1.0, 1.0, 1.0, 1.0).is_err());
    assert!(LossWeights::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let x_r = SpectralImage::new(image(40, 16, 16)).unwrap();
    let x_f = SpectralImage::new(image(41, 16, 16)).unwrap();
    let tr = random_triple(42, 16, 16);
    let tf = random_triple(43, 16, 16);
    let priors = make_prior_masks(16, 16, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
    let fx = SpectralIdentityFeatures::default();
    let d = untrained_scorer(6, 44);
    let w = LossWeights::new(1.0, 1.0, 1e-3, 1.0).unwrap();
    let l = total_loss(&x_r, &x_f, &tr, &tf, &priors, &fx, &d, &w).unwrap();
    let dr = random_triple(45, 16, 16);
    let df = random_triple(46, 16, 16);
    let h = 1e-5;
    let eval = |s: f64| {
        total_loss(&x_r, &x_f, &perturb(&tr, &dr, s), &perturb(&tf, &df, s), &priors, &fx, &d, &w)
            .unwrap()
            .terms
            .total
    };
    let fd = (eval(h) - eval(-h)) / (2.0 * h);
    let analytic = directional(&l.grad_real, &dr) + directional(&l.grad_fake, &df);
    assert!(rel(fd, analytic) < 1e-6, "{fd} vs {analytic}");
}

#[test]
fn losses_vanish_at_their_minimisers() {
    let x = image(50, 16, 16);
    let priors = make_prior_masks::<f64>(16, 16, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
    let exact = normalize_triple(&random_triple(51, 16, 16)).unwrap();
    let mut no_noise = exact.clone();
    no_noise.structural = no_noise.structural.add(&no_noise.noise);
    no_noise.noise = Tensor::grid(16, 16);
    assert!(loss_qa(&x, &no_noise).unwrap().value < 1e-18);
    assert_eq!(loss_pi(&priors.as_triple(), &priors).unwrap().value, 0.0);
}

proptest! {
    #[test]
    fn losses_are_non_negative(seed in 0u64..200) {
        let x = image(seed, 16, 16);
        let t = random_triple(seed + 1, 16, 16);
        let priors = make_prior_masks::<f64>(16, 16, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
        prop_assert!(loss_qa(&x, &t).unwrap().value >= 0.0);
        prop_assert!(loss_pi(&t, &priors).unwrap().value >= 0.0);
        prop_assert!(loss_ff(&x, &t, &SpectralIdentityFeatures::default()).unwrap().value >= 0.0);
    }

    #[test]
    fn pi_invariant_under_consistent_permutation(seed in 0u64..200, perm in 0usize..6) {
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let p = orders[perm];
        let priors = make_prior_masks::<f64>(16, 16, SEMANTIC_EDGE, STRUCTURAL_EDGE).unwrap();
        let t = random_triple(seed, 16, 16);
        let maps = [&t.semantic, &t.structural, &t.noise];
        let masks = [&priors.semantic, &priors.structural, &priors.noise];
        let permuted = DistributionTriple::from_maps(maps[p[0]].clone(), maps[p[1]].clone(), maps[p[2]].clone()).unwrap();
        let mut pm = priors.clone();
        pm.semantic = masks[p[0]].clone();
        pm.structural = masks[p[1]].clone();
        pm.noise = masks[p[2]].clone();
        let a = loss_pi(&t, &priors).unwrap().value;
        let b = loss_pi(&permuted, &pm).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
    }
}
