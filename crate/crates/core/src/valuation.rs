//! Value-to-cost ratios for every (instance, supervision level) pair.
//!
//! The value of a level is the expected accuracy gain per labeled instance,
//! measured by retraining on growing subsets of that level's pool; the
//! instance-specific part is a percentile-normalized uncertainty.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{InstanceId, LabeledSet, Level};
use crate::error::{Error, Result};
use crate::learner::{evaluate_accuracy, train_two_stage, TrainConfig, TwoHeadModel};

/// Floor applied to expected improvements before forming ratios.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMeasure {
    /// `1 - (p1 - p2)` for the two largest probabilities.
    #[default]
    Margin,
    /// `1 - max p`.
    MaxConf,
    /// `-sum p ln p`.
    Entropy,
}

impl std::str::FromStr for UncertaintyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin" => Ok(Self::Margin),
            "maxconf" => Ok(Self::MaxConf),
            "entropy" => Ok(Self::Entropy),
            other => Err(Error::Config(format!("unknown uncertainty measure `{other}`"))),
        }
    }
}

/// Uncertainty of a probability vector; larger means more uncertain.
pub fn uncertainty_of(probs: &[f64], measure: UncertaintyMeasure) -> Result<f64> {
    match measure {
        UncertaintyMeasure::Margin => {
            if probs.len() < 2 {
                return Err(Error::Measure(format!(
                    "margin needs at least 2 classes, head has {}",
                    probs.len()
                )));
            }
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in probs {
                if p > first {
                    second = first;
                    first = p;
                } else if p > second {
                    second = p;
                }
            }
            Ok(1.0 - (first - second))
        }
        UncertaintyMeasure::MaxConf => {
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Measure("empty probability vector".into()));
            }
            Ok(1.0 - max)
        }
        UncertaintyMeasure::Entropy => Ok(-probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()),
    }
}

/// Uncertainty of `model`'s prediction for `x` on the head for `level`.
pub fn uncertainty_raw(model: &TwoHeadModel, x: &[f64], level: Level, measure: UncertaintyMeasure) -> Result<f64> {
    uncertainty_of(&model.predict(x, level)?, measure)
}

/// Rank-based rescaling to `[0, 1]`: `score = rank / (N - 1)` with ascending
/// 0-based ranks, ties sharing their mean rank. A single value scores 0.5.
pub fn percentile_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    let n = raw.len();
    if n == 0 {
        return Err(Error::Input("cannot normalize an empty list".into()));
    }
    if raw.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("NaN uncertainty".into()));
    }
    if n == 1 {
        return Ok(vec![0.5]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut scores = vec![0.0; n];
    let denom = (n - 1) as f64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && raw[order[end]] == raw[order[start]] {
            end += 1;
        }
        let mean_rank = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            scores[i] = mean_rank / denom;
        }
        start = end;
    }
    Ok(scores)
}

/// `max(improvement, MIN_IMPROVEMENT) * u / cost` for each score.
pub fn compute_vcr(improvement: f64, scores: &[f64], cost: f64) -> Result<Vec<f64>> {
    if cost.is_nan() || cost <= 0.0 {
        return Err(Error::Input(format!("annotation cost {cost} must be positive")));
    }
    let value = clamp_improvement(improvement);
    Ok(scores.iter().map(|u| value * u / cost).collect())
}

pub fn clamp_improvement(m: f64) -> f64 {
    if m.is_nan() {
        MIN_IMPROVEMENT
    } else {
        m.max(MIN_IMPROVEMENT)
    }
}

/// Weighted mean of successive accuracy gains, step `k` weighted by `k`,
/// scaled to a per-instance gain by `K / pool_size`.
pub fn improvement_from_curve(curve: &[f64], pool_size: usize) -> Result<f64> {
    let k = curve.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 subsets, got {k}")));
    }
    if pool_size == 0 {
        return Err(Error::Estimation("empty pool".into()));
    }
    let mut weighted = 0.0;
    let mut weights = 0.0;
    for (step, pair) in curve.windows(2).enumerate() {
        let w = (step + 1) as f64;
        weighted += w * (pair[1] - pair[0]);
        weights += w;
    }
    Ok(weighted / weights * (k as f64 / pool_size as f64))
}

/// Splits `0..n` (already shuffled by the caller) into `k` contiguous parts;
/// the first `n % k` parts get one extra element.
pub fn subset_bounds(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    let mut bounds = Vec::with_capacity(k);
    let mut end = 0;
    for i in 0..k {
        end += base + usize::from(i < extra);
        bounds.push(end);
    }
    bounds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementEstimate {
    pub m_full: f64,
    pub m_weak: f64,
    /// `num_seeds` curves of `K` validation accuracies each.
    pub full_curves: Vec<Vec<f64>>,
    pub weak_curves: Vec<Vec<f64>>,
}

/// Validation data labeled at both levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationData {
    pub full: LabeledSet,
    pub weak: LabeledSet,
}

/// Inputs shared by the retraining runs of one improvement estimate.
pub struct ImprovementProblem<'a> {
    pub full_pool: &'a LabeledSet,
    pub weak_pool: &'a LabeledSet,
    pub validation: &'a ValidationData,
    pub num_classes: usize,
    pub num_superclasses: usize,
    pub k_subsets: usize,
    pub num_seeds: usize,
    pub train: &'a TrainConfig,
}

struct Job {
    seed_index: usize,
    level: Level,
    order: Vec<usize>,
    train_seed: u64,
}

/// Estimates the per-instance accuracy gain of each supervision level by
/// incrementally growing one pool (in `K` shuffled subsets) while the other
/// pool stays whole, averaged over `num_seeds` shuffles.
///
/// The exact-class curve is measured with the full head on exact labels, the
/// superclass curve with the weak head on superclass labels. All
/// `2 * K * num_seeds` trainings are independent and run in parallel.
pub fn estimate_improvement<R: Rng + ?Sized>(
    problem: &ImprovementProblem<'_>,
    rng: &mut R,
) -> Result<ImprovementEstimate> {
    let k = problem.k_subsets;
    if k < 2 {
        return Err(Error::Config(format!("K must be at least 2, got {k}")));
    }
    if problem.num_seeds == 0 {
        return Err(Error::Config("num_seeds must be positive".into()));
    }
    for (name, pool) in [("full", problem.full_pool), ("weak", problem.weak_pool)] {
        if pool.len() < k {
            return Err(Error::Estimation(format!(
                "{name} pool has {} instances, fewer than K = {k}",
                pool.len()
            )));
        }
    }
    if problem.validation.full.is_empty() || problem.validation.weak.is_empty() {
        return Err(Error::Estimation("validation set is empty".into()));
    }

    // All randomness is drawn up front, in (seed, level) order.
    let mut jobs = Vec::with_capacity(2 * problem.num_seeds);
    for seed_index in 0..problem.num_seeds {
        for (level, pool) in [(Level::Full, problem.full_pool), (Level::Weak, problem.weak_pool)] {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(rng);
            jobs.push(Job {
                seed_index,
                level,
                order,
                train_seed: rng.random(),
            });
        }
    }
    let tasks: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..k).map(move |step| (j, step)))
        .collect();
    let accuracies: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(j, step)| run_subset_training(problem, &jobs[j], step))
        .collect();

    let mut full_curves = vec![Vec::with_capacity(k); problem.num_seeds];
    let mut weak_curves = vec![Vec::with_capacity(k); problem.num_seeds];
    for (&(j, _), acc) in tasks.iter().zip(accuracies) {
        let job = &jobs[j];
        match job.level {
            Level::Full => full_curves[job.seed_index].push(acc?),
            Level::Weak => weak_curves[job.seed_index].push(acc?),
        }
    }
    let mean_improvement = |curves: &[Vec<f64>], pool: usize| -> Result<f64> {
        let mut total = 0.0;
        for c in curves {
            total += improvement_from_curve(c, pool)?;
        }
        Ok(total / curves.len() as f64)
    };
    Ok(ImprovementEstimate {
        m_full: mean_improvement(&full_curves, problem.full_pool.len())?,
        m_weak: mean_improvement(&weak_curves, problem.weak_pool.len())?,
        full_curves,
        weak_curves,
    })
}

fn run_subset_training(problem: &ImprovementProblem<'_>, job: &Job, step: usize) -> Result<f64> {
    let (pool, other) = match job.level {
        Level::Full => (problem.full_pool, problem.weak_pool),
        Level::Weak => (problem.weak_pool, problem.full_pool),
    };
    let bounds = subset_bounds(pool.len(), problem.k_subsets);
    let partial = pool.subset(&job.order[..bounds[step]]);
    let (full, weak) = match job.level {
        Level::Full => (&partial, other),
        Level::Weak => (other, &partial),
    };
    // Each (job, step) training gets its own stream derived from the job seed.
    let mut rng = ChaCha8Rng::seed_from_u64(job.train_seed);
    rng.set_stream(step as u64);
    let model = train_two_stage(
        problem.train,
        problem.num_classes,
        problem.num_superclasses,
        full,
        weak,
        &mut rng,
    )?;
    match job.level {
        Level::Full => evaluate_accuracy(&model, &problem.validation.full, Level::Full),
        Level::Weak => evaluate_accuracy(&model, &problem.validation.weak, Level::Weak),
    }
}

/// Per-instance uncertainties, scores and ratios for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationReport {
    pub ids: Vec<InstanceId>,
    pub u_full_raw: Vec<f64>,
    pub u_weak_raw: Vec<f64>,
    pub u_full: Vec<f64>,
    pub u_weak: Vec<f64>,
    pub v_full: Vec<f64>,
    pub v_weak: Vec<f64>,
    pub improvement: ImprovementEstimate,
}

/// Scores every candidate instance for both levels.
///
/// With `use_uncertainty == false` every score is forced to 1 so the ratio
/// depends only on the level's improvement and cost.
#[allow(clippy::too_many_arguments)]
pub fn value_instances(
    model: &TwoHeadModel,
    ids: &[InstanceId],
    features: impl Fn(InstanceId) -> Vec<f64>,
    improvement: ImprovementEstimate,
    measures: (UncertaintyMeasure, UncertaintyMeasure),
    costs: (f64, f64),
    use_uncertainty: bool,
) -> Result<ValuationReport> {
    let mut u_full_raw = Vec::with_capacity(ids.len());
    let mut u_weak_raw = Vec::with_capacity(ids.len());
    for &id in ids {
        let x = features(id);
        u_full_raw.push(uncertainty_raw(model, &x, Level::Full, measures.0)?);
        u_weak_raw.push(uncertainty_raw(model, &x, Level::Weak, measures.1)?);
    }
    let (u_full, u_weak) = if use_uncertainty {
        (percentile_normalize(&u_full_raw)?, percentile_normalize(&u_weak_raw)?)
    } else {
        (vec![1.0; ids.len()], vec![1.0; ids.len()])
    };
    let v_full = compute_vcr(improvement.m_full, &u_full, costs.0)?;
    let v_weak = compute_vcr(improvement.m_weak, &u_weak, costs.1)?;
    Ok(ValuationReport {
        ids: ids.to_vec(),
        u_full_raw,
        u_weak_raw,
        u_full,
        u_weak,
        v_full,
        v_weak,
        improvement,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ValuationRow {
    pub id: InstanceId,
    pub u_full_raw: f64,
    pub u_weak_raw: f64,
    pub u_full: f64,
    pub u_weak: f64,
    pub v_full: f64,
    pub v_weak: f64,
}

impl ValuationReport {
    pub fn rows(&self) -> impl Iterator<Item = ValuationRow> + '_ {
        (0..self.ids.len()).map(|i| ValuationRow {
            id: self.ids[i],
            u_full_raw: self.u_full_raw[i],
            u_weak_raw: self.u_weak_raw[i],
            u_full: self.u_full[i],
            u_weak: self.u_weak[i],
            v_full: self.v_full[i],
            v_weak: self.v_weak[i],
        })
    }

    /// Writes `id,u_full_raw,u_weak_raw,u_full,u_weak,v_full,v_weak`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for row in self.rows() {
            writer.serialize(row)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent percentile oracle: count strictly smaller and equal values.
    fn rank_oracle(raw: &[f64]) -> Vec<f64> {
        let n = raw.len();
        raw.iter()
            .map(|&x| {
                let less = raw.iter().filter(|&&y| y < x).count() as f64;
                let equal = raw.iter().filter(|&&y| y == x).count() as f64;
                (less + (equal - 1.0) / 2.0) / (n as f64 - 1.0)
            })
            .collect()
    }

    #[test]
    fn percentile_worked_example() {
        let s = percentile_normalize(&[0.9, 0.1, 0.5, 0.3, 0.7]).unwrap();
        assert_eq!(s, vec![1.0, 0.0, 0.5, 0.25, 0.75]);
    }

    #[test]
    fn percentile_degenerate_cases() {
        assert_eq!(percentile_normalize(&[3.0; 4]).unwrap(), vec![0.5; 4]);
        assert_eq!(percentile_normalize(&[42.0]).unwrap(), vec![0.5]);
        assert!(percentile_normalize(&[]).is_err());
        // Ten values above, one at the 10th percentile from the top.
        let raw: Vec<f64> = (0..11).map(f64::from).collect();
        let s = percentile_normalize(&raw).unwrap();
        assert_eq!(s[10], 1.0);
        assert_eq!(s[0], 0.0);
        assert!((s[9] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn margin_examples() {
        let u = uncertainty_of(&[0.6, 0.3, 0.1], UncertaintyMeasure::Margin).unwrap();
        assert!((u - 0.7).abs() < 1e-12);
        assert_eq!(uncertainty_of(&[0.25; 4], UncertaintyMeasure::Margin).unwrap(), 1.0);
        assert!(matches!(
            uncertainty_of(&[1.0], UncertaintyMeasure::Margin),
            Err(Error::Measure(_))
        ));
    }

    #[test]
    fn other_measures() {
        assert_eq!(
            uncertainty_of(&[0.0, 1.0, 0.0], UncertaintyMeasure::Entropy).unwrap(),
            0.0
        );
        let h = uncertainty_of(&[0.5, 0.5], UncertaintyMeasure::Entropy).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-15);
        assert!((uncertainty_of(&[0.6, 0.3, 0.1], UncertaintyMeasure::MaxConf).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn improvement_worked_example() {
        let curve = [0.20, 0.30, 0.35, 0.40, 0.42];
        let direct = (1.0 * (0.30 - 0.20) + 2.0 * (0.35 - 0.30) + 3.0 * (0.40 - 0.35) + 4.0 * (0.42 - 0.40))
            / (1.0 + 2.0 + 3.0 + 4.0)
            * (5.0 / 50.0);
        let m = improvement_from_curve(&curve, 50).unwrap();
        assert!((m - direct).abs() < 1e-12);
        assert!((m - 0.0043).abs() < 1e-12);
    }

    #[test]
    fn improvement_reductions() {
        assert_eq!(improvement_from_curve(&[0.4; 5], 100).unwrap(), 0.0);
        let curve: Vec<f64> = (0..5).map(|k| 0.1 + 0.03 * k as f64).collect();
        assert!((improvement_from_curve(&curve, 5).unwrap() - 0.03).abs() < 1e-12);
        assert!(matches!(improvement_from_curve(&[0.1], 5), Err(Error::Config(_))));
    }

    #[test]
    fn subset_bounds_spread_remainder() {
        assert_eq!(subset_bounds(12, 5), vec![3, 6, 8, 10, 12]);
        assert_eq!(subset_bounds(10, 5), vec![2, 4, 6, 8, 10]);
    }

    #[test]
    fn vcr_examples() {
        let v = compute_vcr(0.01, &[0.8], 0.5).unwrap();
        assert!((v[0] - 0.016).abs() < 1e-15);
        assert_eq!(compute_vcr(0.3, &[0.0], 2.0).unwrap(), vec![0.0]);
        assert_eq!(compute_vcr(-0.02, &[1.0], 1.0).unwrap(), vec![MIN_IMPROVEMENT]);
        assert!(compute_vcr(0.1, &[1.0], 0.0).is_err());
    }

    fn tiny_problem_sets() -> (LabeledSet, LabeledSet, ValidationData) {
        let mut full = LabeledSet::empty(2);
        let mut weak = LabeledSet::empty(2);
        let mut vf = LabeledSet::empty(2);
        let mut vw = LabeledSet::empty(2);
        for i in 0..24 {
            let c = i % 4;
            let x = [(c % 2) as f64 * 2.0 - 1.0 + 0.05 * i as f64, (c / 2) as f64 * 2.0 - 1.0];
            if i < 12 {
                full.push(&x, c);
            } else {
                weak.push(&x, c / 2);
            }
            vf.push(&x, c);
            vw.push(&x, c / 2);
        }
        (full, weak, ValidationData { full: vf, weak: vw })
    }

    #[test]
    fn estimate_is_reproducible_and_audited() {
        let (full, weak, validation) = tiny_problem_sets();
        let train = TrainConfig {
            epochs_per_stage: 3,
            batch_size: 4,
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        let problem = ImprovementProblem {
            full_pool: &full,
            weak_pool: &weak,
            validation: &validation,
            num_classes: 4,
            num_superclasses: 2,
            k_subsets: 3,
            num_seeds: 2,
            train: &train,
        };
        let a = estimate_improvement(&problem, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = estimate_improvement(&problem, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.m_full.to_bits(), b.m_full.to_bits());
        for curves in [&a.full_curves, &a.weak_curves] {
            assert_eq!(curves.len(), 2);
            assert!(curves
                .iter()
                .all(|c| c.len() == 3 && c.iter().all(|v| (0.0..=1.0).contains(v))));
        }
        let expected = (improvement_from_curve(&a.full_curves[0], 12).unwrap()
            + improvement_from_curve(&a.full_curves[1], 12).unwrap())
            / 2.0;
        assert_eq!(a.m_full, expected);
    }

    #[test]
    fn estimate_rejects_small_pools_and_bad_k() {
        let (full, weak, validation) = tiny_problem_sets();
        let train = TrainConfig::default();
        let small = full.subset(&[0, 1]);
        let mut problem = ImprovementProblem {
            full_pool: &small,
            weak_pool: &weak,
            validation: &validation,
            num_classes: 4,
            num_superclasses: 2,
            k_subsets: 3,
            num_seeds: 1,
            train: &train,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            estimate_improvement(&problem, &mut rng),
            Err(Error::Estimation(_))
        ));
        problem.full_pool = &full;
        problem.k_subsets = 1;
        assert!(matches!(
            estimate_improvement(&problem, &mut rng),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn percentile_matches_rank_oracle(raw in prop::collection::vec(0u8..20, 1..60)) {
            let raw: Vec<f64> = raw.into_iter().map(|v| f64::from(v) / 7.0).collect();
            let got = percentile_normalize(&raw).unwrap();
            if raw.len() > 1 {
                let want = rank_oracle(&raw);
                for (g, w) in got.iter().zip(&want) {
                    prop_assert!((g - w).abs() < 1e-12);
                }
            }
            prop_assert!(got.iter().all(|s| (0.0..=1.0).contains(s)));
        }

        #[test]
        fn percentile_rank_only(raw in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let transformed: Vec<f64> = raw.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(percentile_normalize(&raw).unwrap(), percentile_normalize(&transformed).unwrap());
        }

        #[test]
        fn distinct_values_hit_both_ends(mut raw in prop::collection::btree_set(-1000i32..1000, 2..50)
            .prop_map(|s| s.into_iter().map(f64::from).collect::<Vec<_>>())) {
            raw.reverse();
            let s = percentile_normalize(&raw).unwrap();
            prop_assert!(s.contains(&0.0) && s.contains(&1.0));
        }

        #[test]
        fn vcr_homogeneous_in_cost(m in 1e-5f64..1.0, scores in prop::collection::vec(0.0f64..1.0, 1..20), alpha in 0.1f64..10.0) {
            let base = compute_vcr(m, &scores, 1.0).unwrap();
            let scaled = compute_vcr(m, &scores, alpha).unwrap();
            for (b, s) in base.iter().zip(&scaled) {
                prop_assert!((b / alpha - s).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            let bigger = compute_vcr(m * 3.0, &scores, 1.0).unwrap();
            let mut idx_a: Vec<usize> = (0..scores.len()).collect();
            let mut idx_b = idx_a.clone();
            idx_a.sort_by(|&i, &j| base[j].total_cmp(&base[i]).then(i.cmp(&j)));
            idx_b.sort_by(|&i, &j| bigger[j].total_cmp(&bigger[i]).then(i.cmp(&j)));
            prop_assert_eq!(idx_a, idx_b);
        }
    }
}
