//! The round loop: validation draw, initial sampling, valuation, selection,
//! pool update and retraining, repeated for every experiment seed.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datamodel::{
    initial_equal_sample, read_instances_csv, sample_unlabeled, stratified_split, CostModel, Dataset, InstanceId,
    LabeledPools, LabeledSet, Level,
};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetSpec, ExperimentConfig, Strategy};
use crate::harness::synthetic::{generate_synthetic, TEST_FRACTION};
use crate::learner::{evaluate_accuracy, train_two_stage, TwoHeadModel};
use crate::selection::{
    build_candidates, select_baseline, select_fixed_ratio, select_greedy_vcr, select_iso, SelectionBatch, TraceStep,
};
use crate::valuation::{
    estimate_improvement, value_instances, ImprovementEstimate, ImprovementProblem, ValidationData, ValuationReport,
    MIN_IMPROVEMENT,
};

/// A dataset with its train/test id split.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub train_ids: Vec<InstanceId>,
    pub test_ids: Vec<InstanceId>,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<LoadedData> {
    match spec {
        DatasetSpec::Synthetic { params, seed } => {
            let data = generate_synthetic(params, *seed)?;
            Ok(LoadedData {
                dataset: data.dataset,
                train_ids: data.train_ids,
                test_ids: data.test_ids,
            })
        }
        DatasetSpec::Csv { path, split_seed } => load_csv_dataset(path, *split_seed),
    }
}

/// Loads `dir/train.csv` + `dir/test.csv`, or one CSV split by class.
pub fn load_csv_dataset(path: &Path, split_seed: u64) -> Result<LoadedData> {
    if path.is_dir() {
        let train = read_instances_csv(&path.join("train.csv"))?;
        let test = read_instances_csv(&path.join("test.csv"))?;
        let train_ids: Vec<InstanceId> = train.iter().map(|i| i.id).collect();
        let test_ids: Vec<InstanceId> = test.iter().map(|i| i.id).collect();
        let dataset = Dataset::from_instances(train.into_iter().chain(test).collect())?;
        Ok(LoadedData {
            dataset,
            train_ids,
            test_ids,
        })
    } else {
        let dataset = Dataset::from_instances(read_instances_csv(path)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let (train_ids, test_ids) = stratified_split(&dataset, TEST_FRACTION, &mut rng)?;
        Ok(LoadedData {
            dataset,
            train_ids,
            test_ids,
        })
    }
}

/// Metrics for one round of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub validation_accuracy: f64,
    /// Cumulative pool sizes after this round's annotations.
    pub n_full: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub spent: f64,
    pub m_full: Option<f64>,
    pub m_weak: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    pub valuation: Option<ValuationReport>,
    pub batch: SelectionBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub artifacts: Vec<RoundArtifacts>,
    /// Set when a module error aborted this seed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    /// Final-round test accuracy of every seed that completed.
    pub fn final_accuracies(&self) -> Vec<(u64, f64)> {
        self.runs
            .iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| r.records.last().map(|rec| (r.seed, rec.test_accuracy)))
            .collect()
    }
}

/// Caps the global worker pool at `ISO_AL_THREADS` when set. Safe to call
/// more than once; only the first call takes effect.
pub fn configure_threads_from_env() {
    if let Some(n) = std::env::var("ISO_AL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    run_experiment_on(cfg, &data)
}

/// Runs every seed of `cfg` on already loaded data; seeds run in parallel
/// and results keep seed order.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &LoadedData) -> Result<ExperimentResult> {
    cfg.validate()?;
    let runs = cfg.seeds.par_iter().map(|&seed| run_seed(cfg, data, seed)).collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
    })
}

/// Runs all rounds for one seed. Errors end the seed early; the records
/// gathered so far are kept alongside the diagnostic.
pub fn run_seed(cfg: &ExperimentConfig, data: &LoadedData, seed: u64) -> SeedRun {
    let mut run = SeedRun {
        seed,
        records: Vec::new(),
        artifacts: Vec::new(),
        error: None,
    };
    if let Err(e) = drive_seed(cfg, data, seed, &mut run) {
        warn!("{} seed {seed}: aborted: {e}", cfg.strategy);
        run.error = Some(e.to_string());
    }
    run
}

struct SeedState<'a> {
    cfg: &'a ExperimentConfig,
    dataset: &'a Dataset,
    pools: LabeledPools,
    validation: ValidationData,
    test: LabeledSet,
    rng: ChaCha8Rng,
    model: Option<TwoHeadModel>,
}

fn drive_seed(cfg: &ExperimentConfig, data: &LoadedData, seed: u64, run: &mut SeedRun) -> Result<()> {
    let dataset = &data.dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = LabeledPools::new(data.train_ids.iter().copied(), data.test_ids.iter().copied())?;
    let n_val = cfg.validation_count().min(pools.unlabeled.len());
    let validation_ids = sample_unlabeled(&pools, n_val, &mut rng)?;
    pools.move_to_validation(&validation_ids)?;
    let validation = ValidationData {
        full: dataset.labeled_set(&pools.validation, Level::Full),
        weak: dataset.labeled_set(&pools.validation, Level::Weak),
    };
    let test = dataset.labeled_set(&pools.test, Level::Full);
    let mut state = SeedState {
        cfg,
        dataset,
        pools,
        validation,
        test,
        rng,
        model: None,
    };
    let train_total = state.pools.train_total();

    for round in 1..=cfg.cost.rounds {
        let started = Instant::now();
        let (batch, valuation) = state.select(round)?;
        if batch.spent > cfg.cost.budget + 1e-9 {
            return Err(Error::PoolViolation(format!(
                "round {round} spent {} over budget {}",
                batch.spent, cfg.cost.budget
            )));
        }
        state.pools.move_to_pool(&batch.full_ids, Level::Full)?;
        state.pools.move_to_pool(&batch.weak_ids, Level::Weak)?;
        debug_assert!(state.pools.is_disjoint());
        debug_assert_eq!(state.pools.train_total(), train_total);

        let full = dataset.labeled_set(&state.pools.full, Level::Full);
        let weak = dataset.labeled_set(&state.pools.weak, Level::Weak);
        let train_seed = state.rng.random::<u64>() ^ cfg.train.init_seed;
        let model = train_two_stage(
            &cfg.train,
            dataset.hierarchy.num_classes(),
            dataset.hierarchy.num_superclasses(),
            &full,
            &weak,
            &mut ChaCha8Rng::seed_from_u64(train_seed),
        )?;
        let test_accuracy = evaluate_accuracy(&model, &state.test, Level::Full)?;
        let validation_accuracy = if state.validation.full.is_empty() {
            f64::NAN
        } else {
            evaluate_accuracy(&model, &state.validation.full, Level::Full)?
        };
        state.model = Some(model);

        let record = RoundRecord {
            round,
            test_accuracy,
            validation_accuracy,
            n_full: state.pools.full.len(),
            n_weak: state.pools.weak.len(),
            n_unlabeled: state.pools.unlabeled.len(),
            spent: batch.spent,
            m_full: valuation.as_ref().map(|v| v.improvement.m_full),
            m_weak: valuation.as_ref().map(|v| v.improvement.m_weak),
            wall_time: started.elapsed().as_secs_f64(),
        };
        info!(
            "{} seed {seed} round {round}: test {:.4} val {:.4} |D_f| {} |D_w| {} spent {}",
            cfg.strategy, test_accuracy, validation_accuracy, record.n_full, record.n_weak, record.spent
        );
        run.records.push(record);
        run.artifacts.push(RoundArtifacts { valuation, batch });
    }
    Ok(())
}

impl SeedState<'_> {
    fn select(&mut self, round: usize) -> Result<(SelectionBatch, Option<ValuationReport>)> {
        let cost = &self.cfg.cost;
        if round == 1 {
            return Ok((self.first_round()?, None));
        }
        let model = self.model.as_ref().expect("model trained in an earlier round");
        match self.cfg.strategy {
            Strategy::Iso | Strategy::IsoNoUncertainty | Strategy::IsoNoDiversity => {
                let (batch, report) = self.select_iso_round()?;
                Ok((batch, Some(report)))
            }
            Strategy::Baseline(b) => Ok((
                select_baseline(b, &self.pools, self.dataset, model, cost.budget, cost, &mut self.rng)?,
                None,
            )),
            Strategy::FixedRatio { full_fraction } => Ok((
                select_fixed_ratio(full_fraction, &self.pools, self.dataset, model, cost.budget, cost)?,
                None,
            )),
        }
    }

    /// Round one: equal random full/weak split for the ISO family, random
    /// full-only draws for baselines, and a random draw split by the fixed
    /// budget fraction for fixed-ratio.
    fn first_round(&mut self) -> Result<SelectionBatch> {
        let cost = self.cfg.cost;
        let (full, weak) = match self.cfg.strategy {
            s if s.is_iso() => initial_equal_sample(&self.pools, &cost, &mut self.rng)?,
            Strategy::FixedRatio { full_fraction } => {
                let n_full = CostModel::affordable(full_fraction * cost.budget, cost.cost_full);
                let n_weak = CostModel::affordable(cost.budget - n_full as f64 * cost.cost_full, cost.cost_weak);
                let available = self.pools.unlabeled.len();
                let n_full = n_full.min(available);
                let n_weak = n_weak.min(available - n_full);
                let mut ids = sample_unlabeled(&self.pools, n_full + n_weak, &mut self.rng)?;
                let weak = ids.split_off(n_full);
                (ids, weak)
            }
            _ => {
                let n = CostModel::affordable(cost.budget, cost.cost_full).min(self.pools.unlabeled.len());
                (sample_unlabeled(&self.pools, n, &mut self.rng)?, Vec::new())
            }
        };
        let mut batch = SelectionBatch::default();
        let mut remaining = cost.budget;
        let available = self.pools.unlabeled.len();
        for (ids, level) in [(full, Level::Full), (weak, Level::Weak)] {
            for id in ids {
                remaining = (remaining - cost.cost_of(level)).max(0.0);
                let probability = 1.0 / (available - batch.len()) as f64;
                match level {
                    Level::Full => batch.full_ids.push(id),
                    Level::Weak => batch.weak_ids.push(id),
                }
                batch.spent += cost.cost_of(level);
                batch.trace.push(TraceStep {
                    step: batch.trace.len(),
                    instance_id: id,
                    level,
                    vcr: None,
                    probability,
                    remaining_budget: remaining,
                });
            }
        }
        Ok(batch)
    }

    fn select_iso_round(&mut self) -> Result<(SelectionBatch, ValuationReport)> {
        let cfg = self.cfg;
        let dataset = self.dataset;
        let model = self.model.as_ref().expect("model trained in an earlier round");
        let full = dataset.labeled_set(&self.pools.full, Level::Full);
        let weak = dataset.labeled_set(&self.pools.weak, Level::Weak);
        let problem = ImprovementProblem {
            full_pool: &full,
            weak_pool: &weak,
            validation: &self.validation,
            num_classes: dataset.hierarchy.num_classes(),
            num_superclasses: dataset.hierarchy.num_superclasses(),
            k_subsets: cfg.k_subsets,
            num_seeds: cfg.improvement_seeds,
            train: &cfg.train,
        };
        let improvement = match estimate_improvement(&problem, &mut self.rng) {
            Ok(est) => est,
            Err(e @ Error::Estimation(_)) => {
                warn!("improvement estimation failed ({e}); using the floor value for both levels");
                ImprovementEstimate {
                    m_full: MIN_IMPROVEMENT,
                    m_weak: MIN_IMPROVEMENT,
                    full_curves: Vec::new(),
                    weak_curves: Vec::new(),
                }
            }
            Err(e) => return Err(e),
        };
        let ids: Vec<InstanceId> = self.pools.unlabeled.iter().copied().collect();
        if ids.is_empty() {
            let report = ValuationReport {
                ids,
                u_full_raw: Vec::new(),
                u_weak_raw: Vec::new(),
                u_full: Vec::new(),
                u_weak: Vec::new(),
                v_full: Vec::new(),
                v_weak: Vec::new(),
                improvement,
            };
            return Ok((SelectionBatch::default(), report));
        }
        let report = value_instances(
            model,
            &ids,
            |id| dataset.features(id).to_vec(),
            improvement,
            (cfg.uncertainty_full, cfg.uncertainty_weak),
            (cfg.cost.cost_full, cfg.cost.cost_weak),
            cfg.strategy != Strategy::IsoNoUncertainty,
        )?;
        let embeddings = ids
            .iter()
            .map(|&id| model.embed(dataset.features(id)))
            .collect::<Result<Vec<_>>>()?;
        let candidates = build_candidates(&ids, &embeddings, &report.v_full, &report.v_weak, &cfg.cost)?;
        let batch = if cfg.strategy == Strategy::IsoNoDiversity {
            select_greedy_vcr(&candidates, cfg.cost.budget)?
        } else {
            select_iso(&candidates, cfg.cost.budget, &mut self.rng)?
        };
        Ok((batch, report))
    }
}
