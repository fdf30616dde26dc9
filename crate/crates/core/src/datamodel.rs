//! Datasets, the class hierarchy, annotation costs and the labeled/unlabeled
//! pool bookkeeping shared by every other module.
//!
//! Instance ids are dense integers `0..N` assigned at load time. Annotation is
//! simulated: a full annotation reveals the stored exact class, a weak one
//! reveals the superclass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type InstanceId = usize;

/// Supervision level of an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Exact class label.
    Full,
    /// Superclass label.
    Weak,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Full => f.write_str("full"),
            Level::Weak => f.write_str("weak"),
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Level::Full),
            "weak" => Ok(Level::Weak),
            other => Err(Error::Input(format!("unknown supervision level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: InstanceId,
    pub features: Vec<f64>,
    pub exact_class: usize,
    pub superclass: usize,
}

/// Surjective map from exact classes onto superclasses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHierarchy {
    parent: Vec<usize>,
    num_superclasses: usize,
}

impl ClassHierarchy {
    pub fn new(parent: Vec<usize>, num_superclasses: usize) -> Result<Self> {
        if parent.is_empty() || num_superclasses == 0 {
            return Err(Error::Dataset(
                "hierarchy needs at least one class and superclass".into(),
            ));
        }
        if num_superclasses > parent.len() {
            return Err(Error::Dataset(format!(
                "{num_superclasses} superclasses exceed {} classes",
                parent.len()
            )));
        }
        let mut children = vec![0usize; num_superclasses];
        for (class, &sup) in parent.iter().enumerate() {
            if sup >= num_superclasses {
                return Err(Error::Dataset(format!(
                    "class {class} maps to superclass {sup} outside [0, {num_superclasses})"
                )));
            }
            children[sup] += 1;
        }
        if let Some(empty) = children.iter().position(|&c| c == 0) {
            return Err(Error::Dataset(format!("superclass {empty} has no child class")));
        }
        Ok(ClassHierarchy {
            parent,
            num_superclasses,
        })
    }

    /// Hierarchy where superclass `s` owns classes `s*children .. (s+1)*children`.
    pub fn uniform(num_superclasses: usize, children: usize) -> Result<Self> {
        let parent = (0..num_superclasses * children).map(|c| c / children.max(1)).collect();
        Self::new(parent, num_superclasses)
    }

    pub fn num_classes(&self) -> usize {
        self.parent.len()
    }

    pub fn num_superclasses(&self) -> usize {
        self.num_superclasses
    }

    pub fn parent_of(&self, class: usize) -> Option<usize> {
        self.parent.get(class).copied()
    }
}

/// Instances indexed by id plus the hierarchy they obey.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub hierarchy: ClassHierarchy,
    pub dim: usize,
    instances: Vec<Instance>,
}

impl Dataset {
    /// Builds a dataset, checking dense ids, dimensions, finiteness and that
    /// every instance's superclass is the parent of its class.
    pub fn new(hierarchy: ClassHierarchy, mut instances: Vec<Instance>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Dataset("dataset has no instances".into()));
        }
        instances.sort_by_key(|i| i.id);
        let dim = instances[0].features.len();
        if dim == 0 {
            return Err(Error::Dataset("feature dimension is zero".into()));
        }
        for (pos, inst) in instances.iter().enumerate() {
            if inst.id != pos {
                return Err(Error::Dataset(format!(
                    "ids must be dense 0..{}; found {} at position {pos}",
                    instances.len(),
                    inst.id
                )));
            }
            if inst.features.len() != dim {
                return Err(Error::Dataset(format!(
                    "instance {} has {} features, expected {dim}",
                    inst.id,
                    inst.features.len()
                )));
            }
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("instance {} has a non-finite feature", inst.id)));
            }
            match hierarchy.parent_of(inst.exact_class) {
                Some(p) if p == inst.superclass => {}
                Some(p) => {
                    return Err(Error::Dataset(format!(
                        "instance {}: class {} belongs to superclass {p}, not {}",
                        inst.id, inst.exact_class, inst.superclass
                    )))
                }
                None => {
                    return Err(Error::Dataset(format!(
                        "instance {}: class {} outside hierarchy",
                        inst.id, inst.exact_class
                    )))
                }
            }
        }
        Ok(Dataset {
            hierarchy,
            dim,
            instances,
        })
    }

    /// Derives the hierarchy from the `(label, superclass)` pairs present.
    pub fn from_instances(instances: Vec<Instance>) -> Result<Self> {
        let mut parent_of: BTreeMap<usize, usize> = BTreeMap::new();
        for inst in &instances {
            if let Some(&prev) = parent_of.get(&inst.exact_class) {
                if prev != inst.superclass {
                    return Err(Error::Dataset(format!(
                        "class {} assigned to superclasses {prev} and {}",
                        inst.exact_class, inst.superclass
                    )));
                }
            } else {
                parent_of.insert(inst.exact_class, inst.superclass);
            }
        }
        let num_classes = parent_of.keys().next_back().map_or(0, |c| c + 1);
        if parent_of.len() != num_classes {
            return Err(Error::Dataset(format!(
                "class labels must cover 0..{num_classes}; only {} distinct present",
                parent_of.len()
            )));
        }
        let num_superclasses = parent_of.values().max().map_or(0, |s| s + 1);
        let hierarchy = ClassHierarchy::new(parent_of.into_values().collect(), num_superclasses)?;
        Self::new(hierarchy, instances)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.get(id)
    }

    pub fn features(&self, id: InstanceId) -> &[f64] {
        &self.instances[id].features
    }

    /// The label an annotator would reveal at `level`.
    pub fn annotate(&self, id: InstanceId, level: Level) -> usize {
        let inst = &self.instances[id];
        match level {
            Level::Full => inst.exact_class,
            Level::Weak => inst.superclass,
        }
    }

    /// Gathers features and labels of `ids` annotated at `level`.
    pub fn labeled_set<'a>(&self, ids: impl IntoIterator<Item = &'a InstanceId>, level: Level) -> LabeledSet {
        let mut set = LabeledSet::empty(self.dim);
        for &id in ids {
            set.push(&self.instances[id].features, self.annotate(id, level));
        }
        set
    }

    pub fn write_csv(&self, path: &Path, ids: &[InstanceId]) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.csv_bytes(ids).as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Renders `ids` in the dataset CSV format.
    pub fn csv_bytes(&self, ids: &[InstanceId]) -> String {
        let mut out = String::from("id,label,superclass");
        for f in 0..self.dim {
            out.push_str(&format!(",f{f}"));
        }
        out.push('\n');
        for &id in ids {
            let inst = &self.instances[id];
            out.push_str(&format!("{},{},{}", inst.id, inst.exact_class, inst.superclass));
            for v in &inst.features {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Reads instances from a dataset CSV (`id,label,superclass,f0,...`).
pub fn read_instances_csv(path: &Path) -> Result<Vec<Instance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers()?.clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "label" || &header[2] != "superclass" {
        return Err(Error::Dataset(format!(
            "{}: header must start with id,label,superclass,f0",
            path.display()
        )));
    }
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{k}") {
            return Err(Error::Dataset(format!(
                "{}: expected column f{k}, found {name}",
                path.display()
            )));
        }
    }
    let mut instances = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Dataset(format!("{} row {}: bad {what}", path.display(), row + 1));
        let id = record[0].parse().map_err(|_| bad("id"))?;
        let exact_class = record[1].parse().map_err(|_| bad("label"))?;
        let superclass = record[2].parse().map_err(|_| bad("superclass"))?;
        let features = record
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("feature"))?;
        instances.push(Instance {
            id,
            features,
            exact_class,
            superclass,
        });
    }
    Ok(instances)
}

/// Per-class shuffled split; every class contributes `round(n * test_fraction)`
/// instances to the test side.
pub fn stratified_split<R: Rng + ?Sized>(
    dataset: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<InstanceId>, Vec<InstanceId>)> {
    let mut by_class: Vec<Vec<InstanceId>> = vec![Vec::new(); dataset.hierarchy.num_classes()];
    for inst in dataset.instances() {
        by_class[inst.exact_class].push(inst.id);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test >= members.len() {
            return Err(Error::Dataset(format!(
                "class {class} with {} instances cannot be split at test fraction {test_fraction}",
                members.len()
            )));
        }
        let order = index::sample(rng, members.len(), members.len());
        for (pos, i) in order.iter().enumerate() {
            if pos < n_test {
                test.push(members[i]);
            } else {
                train.push(members[i]);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn empty(dim: usize) -> Self {
        LabeledSet {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::Shape {
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        Ok(LabeledSet { dim, features, labels })
    }

    pub fn push(&mut self, x: &[f64], label: usize) {
        debug_assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledSet {
        let mut out = LabeledSet::empty(self.dim);
        for &r in rows {
            out.push(self.row(r), self.labels[r]);
        }
        out
    }

    pub fn concat(&self, other: &LabeledSet) -> LabeledSet {
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out
    }
}

/// Annotation costs, per-round budget and round count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub cost_full: f64,
    pub cost_weak: f64,
    pub budget: f64,
    pub rounds: usize,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            cost_full: 1.0,
            cost_weak: 0.5,
            budget: 1000.0,
            rounds: 5,
        }
    }
}

/// Slack for floating-point budget comparisons.
pub(crate) const BUDGET_EPS: f64 = 1e-9;

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.cost_weak > 0.0 && self.cost_weak <= self.cost_full && self.cost_full.is_finite()) {
            return Err(Error::Config(format!(
                "costs must satisfy 0 < C_w <= C_f, got C_f={} C_w={}",
                self.cost_full, self.cost_weak
            )));
        }
        if !(self.budget >= self.cost_full && self.budget.is_finite()) {
            return Err(Error::Config(format!(
                "budget {} cannot afford one full annotation at {}",
                self.budget, self.cost_full
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("number of rounds must be positive".into()));
        }
        Ok(())
    }

    pub fn cost_of(&self, level: Level) -> f64 {
        match level {
            Level::Full => self.cost_full,
            Level::Weak => self.cost_weak,
        }
    }

    /// `floor(amount / cost)` tolerant to representation error.
    pub fn affordable(amount: f64, cost: f64) -> usize {
        ((amount / cost) + BUDGET_EPS).floor().max(0.0) as usize
    }
}

/// Deducts one annotation at `level` from `remaining`.
pub fn budget_charge(remaining: f64, level: Level, cost: &CostModel) -> Result<f64> {
    let c = cost.cost_of(level);
    if remaining + BUDGET_EPS < c {
        return Err(Error::BudgetExhausted { remaining, cost: c });
    }
    Ok((remaining - c).max(0.0))
}

/// Unlabeled, fully labeled, weakly labeled, validation and test id sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledPools {
    pub unlabeled: BTreeSet<InstanceId>,
    pub full: BTreeSet<InstanceId>,
    pub weak: BTreeSet<InstanceId>,
    pub validation: BTreeSet<InstanceId>,
    pub test: BTreeSet<InstanceId>,
}

impl LabeledPools {
    pub fn new(
        train: impl IntoIterator<Item = InstanceId>,
        test: impl IntoIterator<Item = InstanceId>,
    ) -> Result<Self> {
        let pools = LabeledPools {
            unlabeled: train.into_iter().collect(),
            test: test.into_iter().collect(),
            ..Default::default()
        };
        if let Some(id) = pools.unlabeled.intersection(&pools.test).next() {
            return Err(Error::PoolViolation(format!("id {id} is in both train and test")));
        }
        Ok(pools)
    }

    /// Moves `ids` out of the unlabeled pool into the pool for `level`.
    /// Rejects the whole request, leaving the pools untouched, if any id is
    /// not currently unlabeled.
    pub fn move_to_pool(&mut self, ids: &[InstanceId], level: Level) -> Result<()> {
        self.check_unlabeled(ids)?;
        let target = match level {
            Level::Full => &mut self.full,
            Level::Weak => &mut self.weak,
        };
        for &id in ids {
            self.unlabeled.remove(&id);
            target.insert(id);
        }
        Ok(())
    }

    /// Moves `ids` into the fully labeled validation set.
    pub fn move_to_validation(&mut self, ids: &[InstanceId]) -> Result<()> {
        self.check_unlabeled(ids)?;
        for &id in ids {
            self.unlabeled.remove(&id);
            self.validation.insert(id);
        }
        Ok(())
    }

    fn check_unlabeled(&self, ids: &[InstanceId]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &id in ids {
            if !self.unlabeled.contains(&id) {
                return Err(Error::PoolViolation(format!("id {id} is not in the unlabeled pool")));
            }
            if !seen.insert(id) {
                return Err(Error::PoolViolation(format!("id {id} requested twice")));
            }
        }
        Ok(())
    }

    /// Size of the training side: unlabeled + full + weak.
    pub fn train_total(&self) -> usize {
        self.unlabeled.len() + self.full.len() + self.weak.len()
    }

    /// True when the five pools are pairwise disjoint.
    pub fn is_disjoint(&self) -> bool {
        let sets = [&self.unlabeled, &self.full, &self.weak, &self.validation, &self.test];
        let total: usize = sets.iter().map(|s| s.len()).sum();
        let union: BTreeSet<_> = sets.iter().flat_map(|s| s.iter()).collect();
        union.len() == total
    }
}

/// Uniform sample of `count` ids from the unlabeled pool, in draw order.
pub fn sample_unlabeled<R: Rng + ?Sized>(pools: &LabeledPools, count: usize, rng: &mut R) -> Result<Vec<InstanceId>> {
    let available: Vec<InstanceId> = pools.unlabeled.iter().copied().collect();
    if count > available.len() {
        return Err(Error::Capacity {
            needed: count,
            available: available.len(),
        });
    }
    Ok(index::sample(rng, available.len(), count)
        .iter()
        .map(|i| available[i])
        .collect())
}

/// Round-one draw: `n = floor(B / (C_f + C_w))` instances for each level,
/// disjoint and uniformly sampled. Leftover budget is dropped.
pub fn initial_equal_sample<R: Rng + ?Sized>(
    pools: &LabeledPools,
    cost: &CostModel,
    rng: &mut R,
) -> Result<(Vec<InstanceId>, Vec<InstanceId>)> {
    let n = CostModel::affordable(cost.budget, cost.cost_full + cost.cost_weak);
    let mut drawn = sample_unlabeled(pools, 2 * n, rng)?;
    let weak = drawn.split_off(n);
    Ok((drawn, weak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pools_with(unlabeled: &[usize]) -> LabeledPools {
        LabeledPools::new(unlabeled.iter().copied(), std::iter::empty()).unwrap()
    }

    #[test]
    fn move_single_id() {
        let mut pools = pools_with(&[1, 2, 3]);
        pools.move_to_pool(&[2], Level::Full).unwrap();
        assert_eq!(pools.full, BTreeSet::from([2]));
        assert_eq!(pools.unlabeled, BTreeSet::from([1, 3]));
    }

    #[test]
    fn move_empty_is_noop() {
        let mut pools = pools_with(&[1, 2, 3]);
        let before = pools.clone();
        pools.move_to_pool(&[], Level::Weak).unwrap();
        assert_eq!(pools, before);
    }

    #[test]
    fn move_already_labeled_rejected_without_mutation() {
        let mut pools = pools_with(&[1, 2, 3]);
        pools.move_to_pool(&[2], Level::Full).unwrap();
        let before = pools.clone();
        let err = pools.move_to_pool(&[1, 2], Level::Weak).unwrap_err();
        assert!(matches!(err, Error::PoolViolation(_)));
        assert_eq!(pools, before);
    }

    #[test]
    fn initial_sample_counts() {
        let cost = CostModel {
            cost_full: 1.0,
            cost_weak: 0.5,
            budget: 1000.0,
            rounds: 5,
        };
        let pools = pools_with(&(0..2000).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (full, weak) = initial_equal_sample(&pools, &cost, &mut rng).unwrap();
        assert_eq!(full.len(), 666);
        assert_eq!(weak.len(), 666);
        let spend = full.len() as f64 * cost.cost_full + weak.len() as f64 * cost.cost_weak;
        assert_eq!(spend, 999.0);
        let f: BTreeSet<_> = full.iter().collect();
        assert!(weak.iter().all(|w| !f.contains(w)));

        let cost = CostModel {
            cost_full: 1.0,
            cost_weak: 1.0,
            budget: 3.0,
            rounds: 1,
        };
        let (full, weak) = initial_equal_sample(&pools, &cost, &mut rng).unwrap();
        assert_eq!((full.len(), weak.len()), (1, 1));
    }

    #[test]
    fn initial_sample_capacity_error() {
        let cost = CostModel {
            cost_full: 1.0,
            cost_weak: 0.5,
            budget: 1.5,
            rounds: 1,
        };
        let pools = pools_with(&[7]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            initial_equal_sample(&pools, &cost, &mut rng),
            Err(Error::Capacity {
                needed: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn charge_examples() {
        let cost = CostModel {
            cost_full: 1.0,
            cost_weak: 0.5,
            budget: 2.0,
            rounds: 1,
        };
        assert_eq!(budget_charge(2.0, Level::Full, &cost).unwrap(), 1.0);
        assert_eq!(budget_charge(0.5, Level::Weak, &cost).unwrap(), 0.0);
        assert!(matches!(
            budget_charge(0.4, Level::Weak, &cost),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn cost_model_validation() {
        let mut cost = CostModel::default();
        assert!(cost.validate().is_ok());
        cost.cost_weak = 2.0;
        assert!(cost.validate().is_err());
        cost.cost_weak = 0.5;
        cost.budget = 0.5;
        assert!(cost.validate().is_err());
    }

    #[test]
    fn hierarchy_rejects_childless_superclass() {
        assert!(ClassHierarchy::new(vec![0, 0, 2], 3).is_err());
        assert!(ClassHierarchy::new(vec![0, 1, 1], 2).is_ok());
    }

    #[test]
    fn dataset_rejects_inconsistent_superclass() {
        let inst = |id, c, s| Instance {
            id,
            features: vec![0.0, 1.0],
            exact_class: c,
            superclass: s,
        };
        assert!(Dataset::from_instances(vec![inst(0, 0, 0), inst(1, 1, 0)]).is_ok());
        assert!(Dataset::from_instances(vec![inst(0, 0, 0), inst(1, 0, 1)]).is_err());
        assert!(Dataset::from_instances(vec![inst(0, 0, 0), inst(2, 1, 0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let h = ClassHierarchy::uniform(2, 2).unwrap();
        let instances = (0..8)
            .map(|id| Instance {
                id,
                features: vec![id as f64 * 0.1, -1.0 / (id as f64 + 3.0)],
                exact_class: id % 4,
                superclass: (id % 4) / 2,
            })
            .collect();
        let ds = Dataset::new(h, instances).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ids: Vec<_> = (0..8).collect();
        ds.write_csv(&path, &ids).unwrap();
        let back = Dataset::from_instances(read_instances_csv(&path).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Move(Vec<usize>, bool),
        Validation(Vec<usize>),
    }

    fn op_strategy() -> impl Strategy<Value = Op> {
        prop_oneof![
            (prop::collection::vec(0usize..40, 0..6), any::<bool>()).prop_map(|(ids, f)| Op::Move(ids, f)),
            prop::collection::vec(0usize..40, 0..4).prop_map(Op::Validation),
        ]
    }

    proptest! {
        #[test]
        fn pools_stay_disjoint_and_conserved(ops in prop::collection::vec(op_strategy(), 0..30)) {
            let mut pools = LabeledPools::new(0..30, 30..40).unwrap();
            let mut train_total = pools.train_total() + pools.validation.len();
            let (mut n_full, mut n_weak) = (0, 0);
            for op in ops {
                let before = pools.clone();
                let res = match &op {
                    Op::Move(ids, full) => pools.move_to_pool(ids, if *full { Level::Full } else { Level::Weak }),
                    Op::Validation(ids) => pools.move_to_validation(ids),
                };
                if res.is_err() {
                    prop_assert_eq!(&pools, &before);
                }
                prop_assert!(pools.is_disjoint());
                prop_assert!(pools.full.len() >= n_full && pools.weak.len() >= n_weak);
                prop_assert!(before.full.is_subset(&pools.full) && before.weak.is_subset(&pools.weak));
                prop_assert!(pools.unlabeled.is_subset(&before.unlabeled));
                n_full = pools.full.len();
                n_weak = pools.weak.len();
                prop_assert_eq!(pools.train_total() + pools.validation.len(), train_total);
                train_total = pools.train_total() + pools.validation.len();
            }
        }

        #[test]
        fn charges_track_spend_exactly(levels in prop::collection::vec(any::<bool>(), 0..40)) {
            let cost = CostModel { cost_full: 1.0, cost_weak: 0.25, budget: 7.5, rounds: 1 };
            let mut remaining = cost.budget;
            let mut spent = 0.0;
            for full in levels {
                let level = if full { Level::Full } else { Level::Weak };
                match budget_charge(remaining, level, &cost) {
                    Ok(r) => { remaining = r; spent += cost.cost_of(level); }
                    Err(_) => prop_assert!(remaining < cost.cost_of(level)),
                }
                prop_assert!(remaining >= 0.0);
            }
            prop_assert!(spent <= cost.budget);
            prop_assert!((cost.budget - remaining - spent).abs() < 1e-12);
        }
    }
}
