//! Budget-constrained batch selection.
//!
//! The main sampler draws (instance, level) candidates one at a time with
//! probability proportional to the squared distance from the candidate's
//! VCR-scaled embedding to the nearest vector picked so far, the k-means++
//! seeding rule. The first draw measures distance to the origin. Drawing a
//! candidate retires its sibling at the other level, and only candidates
//! still affordable under the remaining budget are eligible.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{sample_unlabeled, CostModel, Dataset, InstanceId, LabeledPools, Level, BUDGET_EPS};
use crate::error::{Error, Result};
use crate::learner::TwoHeadModel;
use crate::valuation::{uncertainty_raw, UncertaintyMeasure};

/// One (instance, supervision level) option.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub instance_id: InstanceId,
    pub level: Level,
    pub vcr: f64,
    /// `vcr` times the unit-norm embedding of the instance.
    pub vector: Vec<f64>,
    pub cost: f64,
}

impl Candidate {
    pub fn new(instance_id: InstanceId, level: Level, vcr: f64, embedding: &[f64], cost: f64) -> Self {
        Candidate {
            instance_id,
            level,
            vcr,
            vector: embedding.iter().map(|e| vcr * e).collect(),
            cost,
        }
    }
}

/// Two candidates (full first, then weak) for each instance.
pub fn build_candidates(
    ids: &[InstanceId],
    embeddings: &[Vec<f64>],
    v_full: &[f64],
    v_weak: &[f64],
    cost: &CostModel,
) -> Result<Vec<Candidate>> {
    let n = ids.len();
    for len in [embeddings.len(), v_full.len(), v_weak.len()] {
        if len != n {
            return Err(Error::Shape {
                expected: n,
                actual: len,
            });
        }
    }
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        out.push(Candidate::new(
            ids[i],
            Level::Full,
            v_full[i],
            &embeddings[i],
            cost.cost_full,
        ));
        out.push(Candidate::new(
            ids[i],
            Level::Weak,
            v_weak[i],
            &embeddings[i],
            cost.cost_weak,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub instance_id: InstanceId,
    pub level: Level,
    pub vcr: Option<f64>,
    pub probability: f64,
    pub remaining_budget: f64,
}

/// Ids chosen at each level in one round, with the spend and draw trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionBatch {
    pub full_ids: Vec<InstanceId>,
    pub weak_ids: Vec<InstanceId>,
    pub spent: f64,
    pub trace: Vec<TraceStep>,
}

impl SelectionBatch {
    fn push(&mut self, id: InstanceId, level: Level, cost: f64, vcr: Option<f64>, probability: f64, remaining: f64) {
        match level {
            Level::Full => self.full_ids.push(id),
            Level::Weak => self.weak_ids.push(id),
        }
        self.spent += cost;
        self.trace.push(TraceStep {
            step: self.trace.len(),
            instance_id: id,
            level,
            vcr,
            probability,
            remaining_budget: remaining,
        });
    }

    pub fn len(&self) -> usize {
        self.full_ids.len() + self.weak_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(instance, level)` pairs in selection order.
    pub fn picks(&self) -> Vec<(InstanceId, Level)> {
        self.trace.iter().map(|t| (t.instance_id, t.level)).collect()
    }

    /// Writes `step,instance_id,level,vcr,probability,remaining_budget`.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        if self.trace.is_empty() {
            writer.write_record(["step", "instance_id", "level", "vcr", "probability", "remaining_budget"])?;
        }
        for step in &self.trace {
            writer.serialize(step)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_candidates(candidates: &[Candidate]) -> Result<()> {
    let dim = candidates.first().map_or(0, |c| c.vector.len());
    for c in candidates {
        if c.vector.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: c.vector.len(),
            });
        }
        if c.vcr.is_nan() || c.vector.iter().any(|v| v.is_nan()) {
            return Err(Error::Input(format!("NaN in candidate for instance {}", c.instance_id)));
        }
        if c.cost.is_nan() || c.cost <= 0.0 {
            return Err(Error::Input(format!(
                "non-positive cost for instance {}",
                c.instance_id
            )));
        }
    }
    Ok(())
}

/// Diversity-aware sampler over VCR-scaled embeddings; runs until no
/// eligible candidate is affordable.
pub fn select_iso<R: Rng + ?Sized>(candidates: &[Candidate], budget: f64, rng: &mut R) -> Result<SelectionBatch> {
    check_candidates(candidates)?;
    let mut siblings: BTreeMap<InstanceId, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        siblings.entry(c.instance_id).or_default().push(i);
    }
    let mut alive = vec![true; candidates.len()];
    // Distance to the origin until the first pick.
    let mut nearest: Vec<f64> = candidates
        .iter()
        .map(|c| c.vector.iter().map(|v| v * v).sum())
        .collect();
    let mut first = true;
    let mut remaining = budget;
    let mut batch = SelectionBatch::default();
    let mut eligible = Vec::with_capacity(candidates.len());
    loop {
        eligible.clear();
        eligible.extend((0..candidates.len()).filter(|&i| alive[i] && candidates[i].cost <= remaining + BUDGET_EPS));
        if eligible.is_empty() {
            break;
        }
        let total: f64 = eligible.iter().map(|&i| nearest[i]).sum();
        let (chosen, probability) = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for &i in &eligible {
                if nearest[i] <= 0.0 {
                    continue;
                }
                acc += nearest[i];
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            let i = pick.expect("positive total implies a positive weight");
            (i, nearest[i] / total)
        } else {
            let i = eligible[rng.random_range(0..eligible.len())];
            (i, 1.0 / eligible.len() as f64)
        };

        let c = &candidates[chosen];
        remaining = (remaining - c.cost).max(0.0);
        batch.push(c.instance_id, c.level, c.cost, Some(c.vcr), probability, remaining);
        for &s in &siblings[&c.instance_id] {
            alive[s] = false;
        }
        for i in 0..candidates.len() {
            if !alive[i] {
                continue;
            }
            let d = squared_distance(&candidates[i].vector, &c.vector);
            nearest[i] = if first { d } else { nearest[i].min(d) };
        }
        first = false;
    }
    Ok(batch)
}

/// Greedy scan in descending VCR order (ties: lower id, then full before
/// weak), taking every affordable candidate whose instance is still free.
pub fn select_greedy_vcr(candidates: &[Candidate], budget: f64) -> Result<SelectionBatch> {
    check_candidates(candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.vcr
            .total_cmp(&ca.vcr)
            .then(ca.instance_id.cmp(&cb.instance_id))
            .then(ca.level.cmp(&cb.level))
    });
    let mut taken = BTreeSet::new();
    let mut remaining = budget;
    let mut batch = SelectionBatch::default();
    for i in order {
        let c = &candidates[i];
        if taken.contains(&c.instance_id) || c.cost > remaining + BUDGET_EPS {
            continue;
        }
        taken.insert(c.instance_id);
        remaining = (remaining - c.cost).max(0.0);
        batch.push(c.instance_id, c.level, c.cost, Some(c.vcr), 1.0, remaining);
    }
    Ok(batch)
}

/// Single-supervision strategies that annotate at the full level only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineStrategy {
    Random,
    Margin,
    MaxConf,
    Entropy,
    Coreset,
}

/// `n` ids with the largest scores; ties go to the smaller id.
fn top_n(scored: &[(InstanceId, f64)], n: usize) -> Vec<InstanceId> {
    let mut order: Vec<&(InstanceId, f64)> = scored.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(n).map(|(id, _)| *id).collect()
}

fn uncertainty_scores(
    model: &TwoHeadModel,
    dataset: &Dataset,
    ids: impl Iterator<Item = InstanceId>,
    level: Level,
    measure: UncertaintyMeasure,
) -> Result<Vec<(InstanceId, f64)>> {
    ids.map(|id| Ok((id, uncertainty_raw(model, dataset.features(id), level, measure)?)))
        .collect()
}

/// Farthest-first traversal: each step picks the unlabeled point whose
/// nearest labeled-or-picked point is farthest (ties: earlier entry).
pub fn farthest_first(labeled: &[Vec<f64>], unlabeled: &[(InstanceId, Vec<f64>)], n: usize) -> Vec<InstanceId> {
    let mut nearest: Vec<f64> = unlabeled
        .iter()
        .map(|(_, u)| {
            labeled
                .iter()
                .map(|l| squared_distance(u, l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut picked = vec![false; unlabeled.len()];
    let mut out = Vec::with_capacity(n.min(unlabeled.len()));
    for _ in 0..n.min(unlabeled.len()) {
        let mut best: Option<usize> = None;
        for i in 0..unlabeled.len() {
            if !picked[i] && best.map_or(true, |b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("fewer picks than candidates");
        picked[b] = true;
        out.push(unlabeled[b].0);
        for i in 0..unlabeled.len() {
            if !picked[i] {
                nearest[i] = nearest[i].min(squared_distance(&unlabeled[i].1, &unlabeled[b].1));
            }
        }
    }
    out
}

fn full_only_batch(
    ids: Vec<InstanceId>,
    budget: f64,
    cost: &CostModel,
    probability: impl Fn(usize) -> f64,
) -> SelectionBatch {
    let mut batch = SelectionBatch::default();
    let mut remaining = budget;
    for (step, id) in ids.into_iter().enumerate() {
        remaining = (remaining - cost.cost_full).max(0.0);
        batch.push(id, Level::Full, cost.cost_full, None, probability(step), remaining);
    }
    batch
}

/// Picks `floor(budget / C_f)` unlabeled instances for full annotation.
pub fn select_baseline<R: Rng + ?Sized>(
    strategy: BaselineStrategy,
    pools: &LabeledPools,
    dataset: &Dataset,
    model: &TwoHeadModel,
    budget: f64,
    cost: &CostModel,
    rng: &mut R,
) -> Result<SelectionBatch> {
    let n = CostModel::affordable(budget, cost.cost_full).min(pools.unlabeled.len());
    let unlabeled = pools.unlabeled.iter().copied();
    let ids = match strategy {
        BaselineStrategy::Random => {
            let ids = sample_unlabeled(pools, n, rng)?;
            let pool = pools.unlabeled.len();
            return Ok(full_only_batch(ids, budget, cost, |step| 1.0 / (pool - step) as f64));
        }
        BaselineStrategy::Margin => top_n(
            &uncertainty_scores(model, dataset, unlabeled, Level::Full, UncertaintyMeasure::Margin)?,
            n,
        ),
        BaselineStrategy::MaxConf => top_n(
            &uncertainty_scores(model, dataset, unlabeled, Level::Full, UncertaintyMeasure::MaxConf)?,
            n,
        ),
        BaselineStrategy::Entropy => top_n(
            &uncertainty_scores(model, dataset, unlabeled, Level::Full, UncertaintyMeasure::Entropy)?,
            n,
        ),
        BaselineStrategy::Coreset => {
            let labeled = pools
                .full
                .iter()
                .chain(&pools.weak)
                .map(|&id| model.embed(dataset.features(id)))
                .collect::<Result<Vec<_>>>()?;
            let candidates = unlabeled
                .map(|id| Ok((id, model.embed(dataset.features(id))?)))
                .collect::<Result<Vec<_>>>()?;
            farthest_first(&labeled, &candidates, n)
        }
    };
    Ok(full_only_batch(ids, budget, cost, |_| 1.0))
}

/// Fixed split of the budget: `full_fraction` of it buys top-margin full
/// annotations, the rest buys top-margin (superclass head) weak annotations
/// among the instances left over.
pub fn select_fixed_ratio(
    full_fraction: f64,
    pools: &LabeledPools,
    dataset: &Dataset,
    model: &TwoHeadModel,
    budget: f64,
    cost: &CostModel,
) -> Result<SelectionBatch> {
    if !(0.0..=1.0).contains(&full_fraction) {
        return Err(Error::Config(format!("full fraction {full_fraction} outside [0, 1]")));
    }
    let available = pools.unlabeled.len();
    let n_full = CostModel::affordable(full_fraction * budget, cost.cost_full).min(available);
    let full_scores = uncertainty_scores(
        model,
        dataset,
        pools.unlabeled.iter().copied(),
        Level::Full,
        UncertaintyMeasure::Margin,
    )?;
    let full_ids = top_n(&full_scores, n_full);

    let rest = budget - n_full as f64 * cost.cost_full;
    let n_weak = CostModel::affordable(rest, cost.cost_weak).min(available - n_full);
    let chosen: BTreeSet<InstanceId> = full_ids.iter().copied().collect();
    let weak_ids = if n_weak > 0 {
        let leftover = pools.unlabeled.iter().copied().filter(|id| !chosen.contains(id));
        top_n(
            &uncertainty_scores(model, dataset, leftover, Level::Weak, UncertaintyMeasure::Margin)?,
            n_weak,
        )
    } else {
        Vec::new()
    };

    let mut batch = SelectionBatch::default();
    let mut remaining = budget;
    for (ids, level) in [(full_ids, Level::Full), (weak_ids, Level::Weak)] {
        let c = cost.cost_of(level);
        for id in ids {
            remaining = (remaining - c).max(0.0);
            batch.push(id, level, c, None, 1.0, remaining);
        }
    }
    Ok(batch)
}
