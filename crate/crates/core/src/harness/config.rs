use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::CostModel;
use crate::error::{Error, Result};
use crate::harness::synthetic::SyntheticParams;
use crate::learner::TrainConfig;
use crate::selection::BaselineStrategy;
use crate::valuation::UncertaintyMeasure;

/// Selection strategy for a whole experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Iso,
    IsoNoUncertainty,
    IsoNoDiversity,
    Baseline(BaselineStrategy),
    FixedRatio { full_fraction: f64 },
}

impl Strategy {
    pub fn is_iso(&self) -> bool {
        matches!(
            self,
            Strategy::Iso | Strategy::IsoNoUncertainty | Strategy::IsoNoDiversity
        )
    }

    /// Every strategy the harness knows, with fixed-ratio at `full_fraction`.
    pub fn all(full_fraction: f64) -> Vec<Strategy> {
        vec![
            Strategy::Iso,
            Strategy::IsoNoUncertainty,
            Strategy::IsoNoDiversity,
            Strategy::Baseline(BaselineStrategy::Random),
            Strategy::Baseline(BaselineStrategy::Margin),
            Strategy::Baseline(BaselineStrategy::MaxConf),
            Strategy::Baseline(BaselineStrategy::Entropy),
            Strategy::Baseline(BaselineStrategy::Coreset),
            Strategy::FixedRatio { full_fraction },
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Iso => f.write_str("iso"),
            Strategy::IsoNoUncertainty => f.write_str("iso_no_uncertainty"),
            Strategy::IsoNoDiversity => f.write_str("iso_no_diversity"),
            Strategy::Baseline(BaselineStrategy::Random) => f.write_str("random"),
            Strategy::Baseline(BaselineStrategy::Margin) => f.write_str("margin"),
            Strategy::Baseline(BaselineStrategy::MaxConf) => f.write_str("maxconf"),
            Strategy::Baseline(BaselineStrategy::Entropy) => f.write_str("entropy"),
            Strategy::Baseline(BaselineStrategy::Coreset) => f.write_str("coreset"),
            Strategy::FixedRatio { full_fraction } => write!(f, "fixed_ratio:{full_fraction}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts the names printed by `Display`; a bare `fixed_ratio` means a
    /// fraction of 1 until overridden.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "iso" => Strategy::Iso,
            "iso_no_uncertainty" => Strategy::IsoNoUncertainty,
            "iso_no_diversity" => Strategy::IsoNoDiversity,
            "random" => Strategy::Baseline(BaselineStrategy::Random),
            "margin" => Strategy::Baseline(BaselineStrategy::Margin),
            "maxconf" => Strategy::Baseline(BaselineStrategy::MaxConf),
            "entropy" => Strategy::Baseline(BaselineStrategy::Entropy),
            "coreset" => Strategy::Baseline(BaselineStrategy::Coreset),
            "fixed_ratio" => Strategy::FixedRatio { full_fraction: 1.0 },
            other => match other.strip_prefix("fixed_ratio:") {
                Some(frac) => Strategy::FixedRatio {
                    full_fraction: frac
                        .parse()
                        .map_err(|_| Error::Config(format!("bad full fraction `{frac}`")))?,
                },
                None => return Err(Error::Config(format!("unknown strategy `{other}`"))),
            },
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default)]
        params: SyntheticParams,
        #[serde(default)]
        seed: u64,
    },
    /// A single dataset CSV (split 80/20 by class with `split_seed`) or a
    /// directory holding `train.csv` and `test.csv`.
    Csv {
        path: PathBuf,
        #[serde(default)]
        split_seed: u64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            params: SyntheticParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub cost: CostModel,
    pub k_subsets: usize,
    pub improvement_seeds: usize,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub uncertainty_full: UncertaintyMeasure,
    pub uncertainty_weak: UncertaintyMeasure,
    /// Validation set size; `floor(B / C_f)` when absent.
    pub validation_size: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: Strategy::Iso,
            cost: CostModel::default(),
            k_subsets: 5,
            improvement_seeds: 3,
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            seeds: vec![0, 1, 2],
            output_dir: None,
            uncertainty_full: UncertaintyMeasure::Margin,
            uncertainty_weak: UncertaintyMeasure::Margin,
            validation_size: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        self.train.validate()?;
        if self.k_subsets < 2 {
            return Err(Error::Config(format!(
                "k_subsets must be at least 2, got {}",
                self.k_subsets
            )));
        }
        if self.improvement_seeds == 0 {
            return Err(Error::Config("improvement_seeds must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one experiment seed is required".into()));
        }
        if let Strategy::FixedRatio { full_fraction } = self.strategy {
            if !(0.0..=1.0).contains(&full_fraction) {
                return Err(Error::Config(format!("full fraction {full_fraction} outside [0, 1]")));
            }
        }
        if let DatasetSpec::Synthetic { params, .. } = &self.dataset {
            params.validate()?;
        }
        Ok(())
    }

    pub fn validation_count(&self) -> usize {
        self.validation_size
            .unwrap_or_else(|| CostModel::affordable(self.cost.budget, self.cost.cost_full))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::all(0.6) {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("badge".parse::<Strategy>().is_err());
        assert!("fixed_ratio:x".parse::<Strategy>().is_err());
    }

    #[test]
    fn json_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"strategy": "fixed_ratio:0.4", "seeds": [7]}"#).unwrap();
        assert_eq!(cfg.strategy, Strategy::FixedRatio { full_fraction: 0.4 });
        assert_eq!(cfg.k_subsets, 5);
        assert_eq!(cfg.improvement_seeds, 3);
        assert_eq!(cfg.validation_count(), 1000);
        cfg.validate().unwrap();

        let bad = ExperimentConfig {
            strategy: Strategy::FixedRatio { full_fraction: 1.5 },
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            dataset: DatasetSpec::Csv {
                path: "data/train.csv".into(),
                split_seed: 3,
            },
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
