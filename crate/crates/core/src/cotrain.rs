//! Two-view co-training for simile detection.
//!
//! Iteration 0 trains both view models on the like-view seed set. Each
//! following round samples a fraction of each view's unlabeled pool, lets the
//! like model pseudo-label be-view samples and the be model pseudo-label
//! like-view samples, balances the pseudo-labels and grows the labeled sets.
//! After `iterations` rounds the final models label the complete opposite-view
//! pools.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{check_both_labels, Label, LabeledExample, Learner, SimileScorer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotrainConfig {
    pub iterations: usize,
    pub sample_ratio_like: f64,
    pub sample_ratio_be: f64,
    pub threshold_like: f64,
    pub threshold_be: f64,
    pub seed: u64,
}

impl Default for CotrainConfig {
    fn default() -> Self {
        CotrainConfig {
            iterations: 5,
            sample_ratio_like: 0.001,
            sample_ratio_be: 0.0001,
            threshold_like: 0.9,
            threshold_be: 0.9,
            seed: 0,
        }
    }
}

impl CotrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("sample_ratio_like", self.sample_ratio_like),
            ("sample_ratio_be", self.sample_ratio_be),
        ] {
            check_ratio(a).map_err(|_| Error::invalid(format!("{name} = {a} must lie in (0, 1]")))?;
        }
        for (name, t) in [
            ("threshold_like", self.threshold_like),
            ("threshold_be", self.threshold_be),
        ] {
            if !(0.5..=1.0).contains(&t) {
                return Err(Error::invalid(format!("{name} = {t} must lie in [0.5, 1]")));
            }
        }
        Ok(())
    }
}

fn check_ratio(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sample ratio {alpha} must lie in (0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledSentence {
    pub id: String,
    pub text: String,
}

/// An unlabeled view with the bookkeeping for sampling without replacement.
#[derive(Debug, Clone)]
pub struct UnlabeledPool {
    consumed: Vec<bool>,
    remaining: usize,
}

fn derive_seed(seed: u64, iteration: usize, stream: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = seed
        .wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl UnlabeledPool {
    pub fn new(size: usize) -> Self {
        UnlabeledPool {
            consumed: vec![false; size],
            remaining: size,
        }
    }

    pub fn len(&self) -> usize {
        self.consumed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.consumed.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    /// Draw `floor(alpha * len)` unconsumed items (capped by what is left) and mark them consumed.
    /// Returned indices are sorted.
    pub fn sample(&mut self, alpha: f64, seed: u64, iteration: usize) -> Result<Vec<usize>> {
        let picked = self.peek_sample(alpha, seed, iteration)?;
        for &i in &picked {
            self.consumed[i] = true;
        }
        self.remaining -= picked.len();
        Ok(picked)
    }

    /// Same draw as [`sample`](Self::sample) without consuming anything.
    pub fn peek_sample(&self, alpha: f64, seed: u64, iteration: usize) -> Result<Vec<usize>> {
        check_ratio(alpha)?;
        let want = ((alpha * self.len() as f64) + 1e-9).floor() as usize;
        let n = want.min(self.remaining);
        let free: Vec<usize> = (0..self.len()).filter(|&i| !self.consumed[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, iteration, 0x5A));
        let mut picked: Vec<usize> = index::sample(&mut rng, free.len(), n)
            .into_iter()
            .map(|k| free[k])
            .collect();
        picked.sort_unstable();
        Ok(picked)
    }
}

/// One-shot sampling from a fresh pool of `size` items.
pub fn sample_unlabeled(size: usize, alpha: f64, seed: u64, iteration: usize) -> Result<Vec<usize>> {
    UnlabeledPool::new(size).peek_sample(alpha, seed, iteration)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PseudoLabels {
    /// (item index, label) in input order.
    pub labeled: Vec<(usize, Label)>,
    pub discarded: usize,
}

impl PseudoLabels {
    pub fn positives(&self) -> usize {
        self.labeled.iter().filter(|(_, l)| *l == Label::Simile).count()
    }

    pub fn negatives(&self) -> usize {
        self.labeled.len() - self.positives()
    }
}

/// Label `items` with `model`: simile when the simile probability is strictly above
/// `threshold`, literal when the prediction is literal, discarded in between.
pub fn pseudo_label<M: SimileScorer>(model: &M, items: &[(usize, &str)], threshold: f64) -> Result<PseudoLabels> {
    let decisions: Vec<Option<(usize, Label)>> = items
        .par_iter()
        .map(|&(idx, text)| {
            let p = model.simile_probability(text)?;
            Ok(if p > threshold {
                Some((idx, Label::Simile))
            } else if p > 0.5 {
                None
            } else {
                Some((idx, Label::Literal))
            })
        })
        .collect::<Result<_>>()?;
    let mut out = PseudoLabels::default();
    for d in decisions {
        match d {
            Some(x) => out.labeled.push(x),
            None => out.discarded += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Balanced {
    pub labeled: Vec<(usize, Label)>,
    /// Fewer negatives than positives; nothing was dropped.
    pub negatives_scarce: bool,
}

/// Down-sample negatives (seeded, uniform) to the number of positives. Order is preserved.
pub fn balance(labeled: &[(usize, Label)], seed: u64) -> Balanced {
    let pos = labeled.iter().filter(|(_, l)| *l == Label::Simile).count();
    let neg_positions: Vec<usize> = labeled
        .iter()
        .enumerate()
        .filter(|(_, (_, l))| *l == Label::Literal)
        .map(|(i, _)| i)
        .collect();
    if neg_positions.len() < pos {
        return Balanced {
            labeled: labeled.to_vec(),
            negatives_scarce: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0xBA));
    let mut keep = vec![false; labeled.len()];
    for k in index::sample(&mut rng, neg_positions.len(), pos) {
        keep[neg_positions[k]] = true;
    }
    let labeled = labeled
        .iter()
        .enumerate()
        .filter(|(i, (_, l))| *l == Label::Simile || keep[*i])
        .map(|(_, x)| *x)
        .collect();
    Balanced {
        labeled,
        negatives_scarce: false,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRound {
    pub sampled: usize,
    pub pseudo_pos: usize,
    pub pseudo_neg: usize,
    pub discarded: usize,
    pub balanced_pos: usize,
    pub balanced_neg: usize,
    pub negatives_scarce: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    /// Like-view samples, pseudo-labeled by the be model.
    pub like: ViewRound,
    /// Be-view samples, pseudo-labeled by the like model.
    pub be: ViewRound,
    /// The be-view labeled set lacked a class, so the previous be model was kept.
    pub be_model_reused: bool,
    pub labeled_like: usize,
    pub labeled_be: usize,
}

impl AuditEntry {
    pub const TSV_HEADER: &'static str = "iteration\tsampled_like\tpos_like\tneg_like\tdiscarded_like\tbalanced_pos_like\tbalanced_neg_like\tneg_scarce_like\tsampled_be\tpos_be\tneg_be\tdiscarded_be\tbalanced_pos_be\tbalanced_neg_be\tneg_scarce_be\tbe_model_reused\tlabeled_like\tlabeled_be";

    pub fn to_tsv(&self) -> String {
        let v = |r: &ViewRound| {
            format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.sampled, r.pseudo_pos, r.pseudo_neg, r.discarded, r.balanced_pos, r.balanced_neg, r.negatives_scarce
            )
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            v(&self.like),
            v(&self.be),
            self.be_model_reused,
            self.labeled_like,
            self.labeled_be
        )
    }
}

#[derive(Debug, Clone)]
pub struct CotrainResult<M> {
    pub simile_like: Vec<String>,
    pub simile_be: Vec<String>,
    pub model_like: M,
    pub model_be: M,
    pub audit: Vec<AuditEntry>,
}

fn check_inputs(labeled: &[LabeledExample], pools: &[(&str, &[UnlabeledSentence])]) -> Result<()> {
    check_both_labels(labeled).map_err(|e| Error::Cotraining {
        iteration: 0,
        message: e.to_string(),
    })?;
    for (name, pool) in pools {
        if pool.is_empty() {
            return Err(Error::invalid(format!("unlabeled {name} set is empty")));
        }
    }
    Ok(())
}

fn fit_at<L: Learner>(
    learner: &L,
    examples: &[LabeledExample],
    seed: u64,
    iteration: usize,
    stream: u64,
) -> Result<L::Model> {
    learner
        .fit(examples, derive_seed(seed, iteration, stream))
        .map_err(|e| Error::Cotraining {
            iteration,
            message: e.to_string(),
        })
}

/// Sample ratio and confidence threshold of one view.
#[derive(Debug, Clone, Copy)]
struct ViewSettings {
    alpha: f64,
    threshold: f64,
}

fn round<M: SimileScorer>(
    model: &M,
    view: &[UnlabeledSentence],
    pool: &mut UnlabeledPool,
    settings: ViewSettings,
    seed: u64,
    iteration: usize,
    stream: u64,
) -> Result<(ViewRound, Vec<LabeledExample>)> {
    let picked = pool.sample(settings.alpha, derive_seed(seed, iteration, stream), iteration)?;
    let items: Vec<(usize, &str)> = picked.iter().map(|&i| (i, view[i].text.as_str())).collect();
    let pseudo = pseudo_label(model, &items, settings.threshold)?;
    let balanced = balance(&pseudo.labeled, derive_seed(seed, iteration, stream + 1));
    let examples: Vec<LabeledExample> = balanced
        .labeled
        .iter()
        .map(|&(i, l)| LabeledExample::new(view[i].text.clone(), l))
        .collect();
    let bpos = examples.iter().filter(|e| e.label == Label::Simile).count();
    Ok((
        ViewRound {
            sampled: picked.len(),
            pseudo_pos: pseudo.positives(),
            pseudo_neg: pseudo.negatives(),
            discarded: pseudo.discarded,
            balanced_pos: bpos,
            balanced_neg: examples.len() - bpos,
            negatives_scarce: balanced.negatives_scarce,
        },
        examples,
    ))
}

/// Ids in `view` that `model` predicts as similes.
pub fn label_all<M: SimileScorer>(model: &M, view: &[UnlabeledSentence]) -> Result<Vec<String>> {
    let flags: Vec<bool> = view
        .par_iter()
        .map(|u| Ok(model.predict_proba(&u.text)?.label == Label::Simile))
        .collect::<Result<_>>()?;
    Ok(view
        .iter()
        .zip(flags)
        .filter(|(_, f)| *f)
        .map(|(u, _)| u.id.clone())
        .collect())
}

pub fn run_cotraining<L: Learner>(
    learner: &L,
    labeled_like: &[LabeledExample],
    unlabeled_like: &[UnlabeledSentence],
    unlabeled_be: &[UnlabeledSentence],
    cfg: &CotrainConfig,
) -> Result<CotrainResult<L::Model>> {
    cfg.validate()?;
    check_inputs(labeled_like, &[("like", unlabeled_like), ("be", unlabeled_be)])?;

    let mut l_like: Vec<LabeledExample> = labeled_like.to_vec();
    let mut l_be: Vec<LabeledExample> = Vec::new();
    let mut pool_like = UnlabeledPool::new(unlabeled_like.len());
    let mut pool_be = UnlabeledPool::new(unlabeled_be.len());
    let mut audit = Vec::new();

    let mut model_like = fit_at(learner, &l_like, cfg.seed, 0, 1)?;
    let mut model_be = fit_at(learner, &l_like, cfg.seed, 0, 2)?;
    let mut be_reused = false;

    for i in 0..cfg.iterations {
        if i > 0 {
            model_like = fit_at(learner, &l_like, cfg.seed, i, 1)?;
            be_reused = check_both_labels(&l_be).is_err();
            if !be_reused {
                model_be = fit_at(learner, &l_be, cfg.seed, i, 2)?;
            } else {
                log::warn!("iteration {i}: be-view labeled set lacks a class; keeping previous be model");
            }
        }
        let (be_round, be_new) = round(
            &model_like,
            unlabeled_be,
            &mut pool_be,
            ViewSettings {
                alpha: cfg.sample_ratio_be,
                threshold: cfg.threshold_be,
            },
            cfg.seed,
            i,
            10,
        )?;
        let (like_round, like_new) = round(
            &model_be,
            unlabeled_like,
            &mut pool_like,
            ViewSettings {
                alpha: cfg.sample_ratio_like,
                threshold: cfg.threshold_like,
            },
            cfg.seed,
            i,
            20,
        )?;
        if like_round.negatives_scarce || be_round.negatives_scarce {
            log::info!("iteration {i}: fewer pseudo-negatives than positives; all kept");
        }
        l_like.extend(like_new);
        l_be.extend(be_new);
        audit.push(AuditEntry {
            iteration: i,
            like: like_round,
            be: be_round,
            be_model_reused: be_reused,
            labeled_like: l_like.len(),
            labeled_be: l_be.len(),
        });
    }

    let t = cfg.iterations;
    if t > 0 {
        model_like = fit_at(learner, &l_like, cfg.seed, t, 1)?;
        if check_both_labels(&l_be).is_ok() {
            model_be = fit_at(learner, &l_be, cfg.seed, t, 2)?;
        } else {
            log::warn!("final round: be-view labeled set lacks a class; keeping previous be model");
        }
    }

    let simile_be = label_all(&model_like, unlabeled_be)?;
    let simile_like = label_all(&model_be, unlabeled_like)?;
    Ok(CotrainResult {
        simile_like,
        simile_be,
        model_like,
        model_be,
        audit,
    })
}

#[derive(Debug, Clone)]
pub struct SelfTrainResult<M> {
    pub simile_like: Vec<String>,
    pub model: M,
    pub audit: Vec<AuditEntry>,
}

/// Single-view baseline: the like model pseudo-labels its own view.
pub fn run_self_training<L: Learner>(
    learner: &L,
    labeled_like: &[LabeledExample],
    unlabeled_like: &[UnlabeledSentence],
    cfg: &CotrainConfig,
) -> Result<SelfTrainResult<L::Model>> {
    cfg.validate()?;
    check_inputs(labeled_like, &[("like", unlabeled_like)])?;
    let mut l_like = labeled_like.to_vec();
    let mut pool = UnlabeledPool::new(unlabeled_like.len());
    let mut audit = Vec::new();
    let mut model = fit_at(learner, &l_like, cfg.seed, 0, 1)?;
    for i in 0..cfg.iterations {
        if i > 0 {
            model = fit_at(learner, &l_like, cfg.seed, i, 1)?;
        }
        let (like_round, like_new) = round(
            &model,
            unlabeled_like,
            &mut pool,
            ViewSettings {
                alpha: cfg.sample_ratio_like,
                threshold: cfg.threshold_like,
            },
            cfg.seed,
            i,
            20,
        )?;
        l_like.extend(like_new);
        audit.push(AuditEntry {
            iteration: i,
            like: like_round,
            labeled_like: l_like.len(),
            ..Default::default()
        });
    }
    if cfg.iterations > 0 {
        model = fit_at(learner, &l_like, cfg.seed, cfg.iterations, 1)?;
    }
    let simile_like = label_all(&model, unlabeled_like)?;
    Ok(SelfTrainResult {
        simile_like,
        model,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::HashedLinearLearner;

    struct Fixed(Vec<f64>);

    impl SimileScorer for Fixed {
        fn simile_probability(&self, text: &str) -> Result<f64> {
            let i: usize = text.parse().unwrap();
            Ok(self.0[i])
        }
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_unlabeled(100, 0.1, 3, 0).unwrap().len(), 10);
        assert_eq!(sample_unlabeled(100, 1.0, 3, 0).unwrap().len(), 100);
        assert_eq!(sample_unlabeled(5000, 0.001, 3, 0).unwrap().len(), 5);
        assert_eq!(sample_unlabeled(5000, 0.0001, 3, 0).unwrap().len(), 0);
        assert!(sample_unlabeled(10, 0.0, 3, 0).is_err());
        assert!(sample_unlabeled(10, 1.5, 3, 0).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_without_replacement() {
        let a = sample_unlabeled(100, 0.1, 9, 2).unwrap();
        assert_eq!(a, sample_unlabeled(100, 0.1, 9, 2).unwrap());
        let mut pool = UnlabeledPool::new(100);
        let mut seen = std::collections::HashSet::new();
        for it in 0..10 {
            for i in pool.sample(0.1, 9, it).unwrap() {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(pool.remaining(), 0);
        assert!(pool.sample(1.0, 9, 11).unwrap().is_empty());
    }

    #[test]
    fn pseudo_label_rule() {
        let m = Fixed(vec![0.95, 0.8, 0.3]);
        let items = [(0, "0"), (1, "1"), (2, "2")];
        let out = pseudo_label(&m, &items, 0.9).unwrap();
        assert_eq!(out.labeled, vec![(0, Label::Simile), (2, Label::Literal)]);
        assert_eq!(out.discarded, 1);
        let out = pseudo_label(&m, &[], 0.9).unwrap();
        assert!(out.labeled.is_empty());
        let out = pseudo_label(&m, &items, 0.5).unwrap();
        assert_eq!(out.discarded, 0);
    }

    fn labels(pos: usize, neg: usize) -> Vec<(usize, Label)> {
        (0..pos)
            .map(|i| (i, Label::Simile))
            .chain((pos..pos + neg).map(|i| (i, Label::Literal)))
            .collect()
    }

    #[test]
    fn balance_rule() {
        let b = balance(&labels(10, 30), 1);
        assert_eq!(b.labeled.iter().filter(|x| x.1 == Label::Literal).count(), 10);
        assert_eq!(b.labeled.len(), 20);
        assert!(!b.negatives_scarce);
        assert_eq!(b, balance(&labels(10, 30), 1));

        assert!(balance(&labels(0, 7), 1).labeled.is_empty());

        let b = balance(&labels(5, 5), 1);
        assert_eq!(b.labeled, labels(5, 5));

        let b = balance(&labels(6, 2), 1);
        assert!(b.negatives_scarce);
        assert_eq!(b.labeled.len(), 8);
    }

    fn seeds() -> Vec<LabeledExample> {
        vec![
            LabeledExample::new("eyes like stars", Label::Simile),
            LabeledExample::new("eyes like his mother", Label::Literal),
        ]
    }

    fn pool(prefix: &str, n: usize) -> Vec<UnlabeledSentence> {
        (0..n)
            .map(|i| UnlabeledSentence {
                id: format!("{prefix}{i}"),
                text: if i % 2 == 0 {
                    "stars shine".into()
                } else {
                    "his mother".into()
                },
            })
            .collect()
    }

    #[test]
    fn zero_iterations_is_final_pass_only() {
        let r = run_cotraining(
            &HashedLinearLearner::default(),
            &seeds(),
            &pool("l", 10),
            &pool("b", 10),
            &CotrainConfig {
                iterations: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.audit.is_empty());
        assert!(r.simile_like.iter().all(|id| id.starts_with('l')));
    }

    #[test]
    fn unreachable_threshold_adds_no_positives() {
        let cfg = CotrainConfig {
            iterations: 3,
            sample_ratio_like: 0.2,
            sample_ratio_be: 0.2,
            threshold_like: 1.0,
            threshold_be: 1.0,
            seed: 4,
        };
        let r = run_cotraining(
            &HashedLinearLearner::default(),
            &seeds(),
            &pool("l", 20),
            &pool("b", 20),
            &cfg,
        )
        .unwrap();
        for a in &r.audit {
            assert_eq!(a.like.pseudo_pos, 0);
            assert_eq!(a.be.pseudo_pos, 0);
            // balancing against zero positives drops every negative
            assert_eq!(a.like.balanced_neg, 0);
        }
        assert_eq!(r.audit.last().unwrap().labeled_like, 2);
        assert_eq!(r.audit.last().unwrap().labeled_be, 0);
    }

    #[test]
    fn degenerate_seed_aborts_at_iteration_zero() {
        let seeds = vec![LabeledExample::new("a b", Label::Simile)];
        let err = run_cotraining(
            &HashedLinearLearner::default(),
            &seeds,
            &pool("l", 4),
            &pool("b", 4),
            &CotrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Cotraining { iteration: 0, .. }));
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(run_cotraining(
            &HashedLinearLearner::default(),
            &seeds(),
            &[],
            &pool("b", 4),
            &CotrainConfig::default()
        )
        .is_err());
    }

    #[test]
    fn labeled_sets_never_shrink() {
        let cfg = CotrainConfig {
            iterations: 4,
            sample_ratio_like: 0.25,
            sample_ratio_be: 0.25,
            threshold_like: 0.6,
            threshold_be: 0.6,
            seed: 11,
        };
        let r = run_cotraining(
            &HashedLinearLearner::default(),
            &seeds(),
            &pool("l", 40),
            &pool("b", 40),
            &cfg,
        )
        .unwrap();
        let mut prev = (2, 0);
        for a in &r.audit {
            assert!(a.labeled_like >= prev.0 && a.labeled_be >= prev.1);
            prev = (a.labeled_like, a.labeled_be);
        }
    }
}
