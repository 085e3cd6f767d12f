//! Test-time fine-tuning of the extractor tail with augmentative consistency.
//!
//! Each step, for one reference `(I, M)` and its augmentation `(I', M')`:
//!
//! 1. `p = MAP(F(I), M)`
//! 2. `S' = cos(F(I'), p)`, `L_aug = BCE(sigmoid(S'), M')`
//! 3. `p' = MAP(F(I'), M*)` where `M*` is the Otsu pseudo-label of `S'`
//!    (cyclic, ACC) or the augmented ground truth `M'` (bi-directional, ABC);
//!    `S = cos(F(I), p')`, `L_cyc = BCE(sigmoid(S), M)`
//! 4. Adam step on `L_aug + L_cyc` over the tunable tail only, with a
//!    cosine-annealed learning rate.
//!
//! The pseudo-label is a hard threshold and carries no gradient.

use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::extractor::FeatureExtractor;
use super::ops::{
    bce_with_grad, masked_average_pool, otsu_mask, similarity_map, FeatureMap, Prototype, SimilarityMap,
};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::image::{resize_mask, Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Augmentative cyclic consistency: the augmented prototype comes from the pseudo-label.
    Acc,
    /// Augmentative bi-directional consistency: it comes from the augmented ground truth.
    Abc,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" => Ok(Strategy::Acc),
            "abc" => Ok(Strategy::Abc),
            other => Err(Error::Config(format!("unknown strategy {other:?} (acc|abc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtgaConfig {
    pub strategy: Strategy,
    pub steps: usize,
    pub learning_rate: f64,
    /// Divides similarities before the sigmoid; 1 applies it to the raw cosine.
    pub temperature: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TtgaConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Acc,
            steps: 100,
            learning_rate: 1e-3,
            temperature: 1.0,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

/// One line of the per-episode adaptation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub reference: usize,
    pub l_aug: f64,
    pub l_cyc: f64,
    pub loss: f64,
    pub pseudo_fg_fraction: f64,
    pub cyc_skipped: bool,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct Adaptation<E> {
    pub extractor: E,
    /// Mean of the reference prototypes under the adapted extractor.
    pub prototype: Prototype,
    pub log: Vec<StepRecord>,
    /// Mean `L_aug + L_cyc` over references before and after adaptation.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Downsamples a mask to the feature grid by nearest neighbour, falling back
/// to "any pixel in the cell" when nearest sampling misses a small object.
pub fn mask_to_grid(mask: &Mask, grid: (usize, usize), stride: usize) -> Result<Mask> {
    let nearest = resize_mask(mask, grid)?;
    if !nearest.is_empty() || mask.is_empty() {
        return Ok(nearest);
    }
    let mut pooled = Mask::zeros(grid.0, grid.1);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                pooled.set((y / stride).min(grid.0 - 1), (x / stride).min(grid.1 - 1), true);
            }
        }
    }
    Ok(pooled)
}

pub(crate) struct PreparedPair<F> {
    ref_frozen: F,
    ref_mask: Mask,
    aug_frozen: F,
    aug_mask: Mask,
}

pub(crate) struct PairEval {
    pub l_aug: f64,
    pub l_cyc: f64,
    pub pseudo: Mask,
    pub cyc_skipped: bool,
    pub grad: Vec<f64>,
}

fn prepare<E: FeatureExtractor>(
    e: &E,
    image: &Image,
    mask: &Mask,
    seed: u64,
    cfg: &AugmentConfig,
) -> Result<PreparedPair<E::Frozen>> {
    let aug = augment(image, mask, seed, cfg)?;
    let ref_frozen = e.frozen_stage(image);
    let aug_frozen = e.frozen_stage(&aug.image);
    let grid = e.tail(&ref_frozen).dims();
    let ref_mask = mask_to_grid(mask, grid, e.stride())?;
    let aug_mask = mask_to_grid(&aug.mask, grid, e.stride())?;
    if ref_mask.is_empty() || aug_mask.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(PreparedPair { ref_frozen, ref_mask, aug_frozen, aug_mask })
}

/// `d cos(f, p)` accumulated into `df` (per pixel) and `dp`.
fn cosine_backward(f: &FeatureMap, p: &[f64], s: &SimilarityMap, upstream: &[f64], df: &mut [f64], dp: &mut [f64]) {
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = f.dim;
    for i in 0..f.height * f.width {
        let g = upstream[i];
        if g == 0.0 {
            continue;
        }
        let v = f.at(i);
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        let c = s.data[i];
        let inv = 1.0 / (vn * pn);
        for k in 0..d {
            df[i * d + k] += g * (p[k] * inv - c * v[k] / (vn * vn));
            dp[k] += g * (v[k] * inv - c * p[k] / (pn * pn));
        }
    }
}

fn map_backward(mask: &Mask, dp: &[f64], df: &mut [f64]) {
    let n = mask.count() as f64;
    let d = dp.len();
    for (i, &on) in mask.data().iter().enumerate() {
        if on {
            for k in 0..d {
                df[i * d + k] += dp[k] / n;
            }
        }
    }
}

pub(crate) fn evaluate_pair<E: FeatureExtractor>(
    e: &E,
    pair: &PreparedPair<E::Frozen>,
    strategy: Strategy,
    temperature: f64,
    pseudo_override: Option<&Mask>,
) -> Result<PairEval> {
    let fr = e.tail(&pair.ref_frozen);
    let fa = e.tail(&pair.aug_frozen);
    let d = fr.dim;

    let pr = masked_average_pool(&fr, &pair.ref_mask)?;
    let sa = similarity_map(&fa, &pr)?;
    let (l_aug, g_sa) = bce_with_grad(&sa, &pair.aug_mask, temperature)?;
    let pseudo = match pseudo_override {
        Some(m) => m.clone(),
        None => otsu_mask(&sa)?.unwrap_or_else(|| Mask::zeros(sa.height, sa.width)),
    };

    let mut dfr = vec![0.0; fr.data.len()];
    let mut dfa = vec![0.0; fa.data.len()];
    let mut dpr = vec![0.0; d];
    cosine_backward(&fa, &pr.vector, &sa, &g_sa, &mut dfa, &mut dpr);

    let proto_mask = match strategy {
        Strategy::Acc => &pseudo,
        Strategy::Abc => &pair.aug_mask,
    };
    let (l_cyc, cyc_skipped) = if proto_mask.is_empty() {
        (0.0, true)
    } else {
        let pa = masked_average_pool(&fa, proto_mask)?;
        let sr = similarity_map(&fr, &pa)?;
        let (l, g_sr) = bce_with_grad(&sr, &pair.ref_mask, temperature)?;
        let mut dpa = vec![0.0; d];
        cosine_backward(&fr, &pa.vector, &sr, &g_sr, &mut dfr, &mut dpa);
        map_backward(proto_mask, &dpa, &mut dfa);
        (l, false)
    };
    map_backward(&pair.ref_mask, &dpr, &mut dfr);

    let mut grad = vec![0.0; e.tunable().len()];
    if !grad.is_empty() {
        e.tail_backward(&pair.ref_frozen, &dfr, &mut grad);
        e.tail_backward(&pair.aug_frozen, &dfa, &mut grad);
    }
    Ok(PairEval { l_aug, l_cyc, pseudo, cyc_skipped, grad })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Cosine annealing from `lr` towards 0 over `steps`.
pub fn cosine_lr(lr: f64, step: usize, steps: usize) -> f64 {
    if steps == 0 {
        return lr;
    }
    0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos())
}

fn reference_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Prototype of every reference under the given extractor.
pub fn reference_prototypes<E: FeatureExtractor>(e: &E, episode: &Episode) -> Result<Vec<Prototype>> {
    episode
        .references
        .iter()
        .map(|r| {
            let f = e.encode(&r.image);
            let m = mask_to_grid(&r.mask, f.dims(), e.stride())?;
            masked_average_pool(&f, &m)
        })
        .collect()
}

/// Index of the reference whose prototype is most similar to all others.
pub fn medoid_reference(protos: &[Prototype]) -> usize {
    if protos.len() <= 1 {
        return 0;
    }
    let score = |i: usize| -> f64 {
        protos.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| protos[i].cosine(p)).sum()
    };
    (0..protos.len())
        .map(|i| (i, score(i)))
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best })
        .0
}

/// Runs the fine-tuning loop with `cfg.strategy`; references are visited round-robin.
pub fn finetune<E: FeatureExtractor>(episode: &Episode, mut extractor: E, cfg: &TtgaConfig) -> Result<Adaptation<E>> {
    episode.validate()?;
    let pairs = episode
        .references
        .iter()
        .enumerate()
        .map(|(k, r)| prepare(&extractor, &r.image, &r.mask, reference_seed(cfg.seed, k), &cfg.augment))
        .collect::<Result<Vec<_>>>()?;

    let mean_loss = |e: &E| -> Result<f64> {
        let mut total = 0.0;
        for p in &pairs {
            let ev = evaluate_pair(e, p, cfg.strategy, cfg.temperature, None)?;
            total += ev.l_aug + ev.l_cyc;
        }
        Ok(total / pairs.len() as f64)
    };
    let initial_loss = mean_loss(&extractor)?;

    let mut adam = Adam::new(extractor.tunable().len());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let k = step % pairs.len();
        let ev = evaluate_pair(&extractor, &pairs[k], cfg.strategy, cfg.temperature, None)?;
        let loss = ev.l_aug + ev.l_cyc;
        if !loss.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, l_aug: ev.l_aug, l_cyc: ev.l_cyc });
        }
        if ev.cyc_skipped {
            log::debug!("episode {} step {step}: empty pseudo-label, cyclic term skipped", episode.id);
        }
        let lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
        log.push(StepRecord {
            step,
            reference: k,
            l_aug: ev.l_aug,
            l_cyc: ev.l_cyc,
            loss,
            pseudo_fg_fraction: ev.pseudo.fraction(),
            cyc_skipped: ev.cyc_skipped,
            lr,
        });
        if !ev.grad.is_empty() {
            adam.step(extractor.tunable_mut(), &ev.grad, lr);
        }
    }

    let final_loss = if cfg.steps == 0 { initial_loss } else { mean_loss(&extractor)? };
    let prototype = Prototype::mean(&reference_prototypes(&extractor, episode)?)?;
    Ok(Adaptation { extractor, prototype, log, initial_loss, final_loss })
}

pub fn finetune_acc<E: FeatureExtractor>(episode: &Episode, extractor: E, cfg: &TtgaConfig) -> Result<Adaptation<E>> {
    finetune(episode, extractor, &TtgaConfig { strategy: Strategy::Acc, ..cfg.clone() })
}

pub fn finetune_abc<E: FeatureExtractor>(episode: &Episode, extractor: E, cfg: &TtgaConfig) -> Result<Adaptation<E>> {
    finetune(episode, extractor, &TtgaConfig { strategy: Strategy::Abc, ..cfg.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::Reference;
    use crate::ttga::extractor::ConvExtractor;

    fn separable_episode(seed: u64) -> Episode {
        let off = (seed % 5) as usize;
        let img = Image::from_fn(48, 48, 3, |y, x, c| {
            let inside = (12 + off..30 + off).contains(&y) && (14..32 + off).contains(&x);
            let tex = (((y * 7 + x * 13 + seed as usize) % 9) as f32) * 0.02;
            if inside {
                [0.85, 0.25, 0.2][c] + tex
            } else {
                [0.2, 0.45, 0.6][c] + tex
            }
        })
        .unwrap();
        let mask = Mask::from_fn(48, 48, |y, x| (12 + off..30 + off).contains(&y) && (14..32 + off).contains(&x));
        Episode::new("toy", vec![Reference { image: img.clone(), mask: mask.clone() }], img, Some(mask), "c", "d")
            .unwrap()
    }

    #[test]
    fn zero_steps_is_pure_extraction() {
        let ep = separable_episode(0);
        let e = ConvExtractor::new(4, 1);
        let cfg = TtgaConfig { steps: 0, ..TtgaConfig::default() };
        let a = finetune_acc(&ep, e.clone(), &cfg).unwrap();
        assert_eq!(a.extractor.params(), e.params());
        assert!(a.log.is_empty());
        let raw = reference_prototypes(&e, &ep).unwrap().remove(0);
        assert_eq!(a.prototype, raw);
        let b = finetune_abc(&ep, e, &cfg).unwrap();
        assert_eq!(b.prototype, a.prototype);
    }

    #[test]
    fn frozen_extractor_has_constant_loss() {
        let ep = separable_episode(1);
        let a = finetune_acc(&ep, ConvExtractor::new(4, 2).frozen(), &TtgaConfig { steps: 10, ..Default::default() })
            .unwrap();
        let first = a.log[0].loss;
        assert!(a.log.iter().all(|r| r.loss == first));
    }

    #[test]
    fn loss_decreases_on_separable_episode() {
        let ep = separable_episode(2);
        for strategy in [Strategy::Acc, Strategy::Abc] {
            let cfg = TtgaConfig { strategy, ..TtgaConfig::default() };
            let a = finetune(&ep, ConvExtractor::new(4, 3), &cfg).unwrap();
            assert_eq!(a.log.len(), 100);
            assert!(a.log.iter().all(|r| r.loss.is_finite()));
            assert!(a.final_loss < a.initial_loss, "{strategy:?}: {} -> {}", a.initial_loss, a.final_loss);
        }
    }

    #[test]
    fn perfect_pseudo_label_makes_strategies_coincide() {
        let ep = separable_episode(3);
        let e = ConvExtractor::new(4, 4);
        let r = &ep.references[0];
        let pair = prepare(&e, &r.image, &r.mask, 9, &AugmentConfig::default()).unwrap();
        let gt = pair.aug_mask.clone();
        let acc = evaluate_pair(&e, &pair, Strategy::Acc, 1.0, Some(&gt)).unwrap();
        let abc = evaluate_pair(&e, &pair, Strategy::Abc, 1.0, Some(&gt)).unwrap();
        assert_eq!(acc.l_aug + acc.l_cyc, abc.l_aug + abc.l_cyc);
        assert_eq!(acc.grad, abc.grad);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let ep = separable_episode(4);
        let mut e = ConvExtractor::new(4, 5);
        // move off the identity so every path carries gradient
        for (i, v) in e.tunable_mut().iter_mut().enumerate() {
            *v += ((i * 31 % 17) as f64 - 8.0) * 0.01;
        }
        let r = &ep.references[0];
        let pair = prepare(&e, &r.image, &r.mask, 11, &AugmentConfig::default()).unwrap();
        for strategy in [Strategy::Acc, Strategy::Abc] {
            let base = evaluate_pair(&e, &pair, strategy, 1.0, None).unwrap();
            let pseudo = base.pseudo.clone();
            for idx in [0usize, 7, 23, 44, 99, 105] {
                let orig = e.tunable()[idx];
                let h = 1e-6;
                e.tunable_mut()[idx] = orig + h;
                let lp = evaluate_pair(&e, &pair, strategy, 1.0, Some(&pseudo)).unwrap();
                e.tunable_mut()[idx] = orig - h;
                let lm = evaluate_pair(&e, &pair, strategy, 1.0, Some(&pseudo)).unwrap();
                e.tunable_mut()[idx] = orig;
                let fd = ((lp.l_aug + lp.l_cyc) - (lm.l_aug + lm.l_cyc)) / (2.0 * h);
                assert!(
                    (fd - base.grad[idx]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{strategy:?} param {idx}: fd {fd} vs analytic {}",
                    base.grad[idx]
                );
            }
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
        assert!((cosine_lr(1e-3, 50, 100) - 5e-4).abs() < 1e-15);
        assert!(cosine_lr(1e-3, 99, 100) < 1e-6);
    }

    #[test]
    fn medoid_picks_central_prototype() {
        let p = |v: [f64; 2]| Prototype { vector: v.to_vec() };
        let protos = [p([1.0, 0.0]), p([1.0, 1.0]), p([0.0, 1.0])];
        assert_eq!(medoid_reference(&protos), 1);
        assert_eq!(medoid_reference(&protos[..1]), 0);
    }
}
