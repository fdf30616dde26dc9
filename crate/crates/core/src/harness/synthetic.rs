//! Gaussian class/superclass blobs standing in for an image dataset with a
//! two-level label hierarchy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{stratified_split, ClassHierarchy, Dataset, Instance, InstanceId};
use crate::error::{Error, Result};

/// Share of each class held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub superclasses: usize,
    pub children_per_superclass: usize,
    pub n_per_class: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of superclass centers.
    pub superclass_spread: f64,
    /// Per-coordinate standard deviation of class centers around their superclass center.
    pub class_spread: f64,
    /// Per-coordinate standard deviation of instances around their class center.
    pub noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            superclasses: 10,
            children_per_superclass: 4,
            n_per_class: 100,
            dim: 32,
            superclass_spread: 1.0,
            class_spread: 0.5,
            noise: 1.0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.superclasses == 0 || self.children_per_superclass == 0 || self.n_per_class == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if !(self.superclass_spread > 0.0 && self.class_spread > 0.0) {
            return Err(Error::Config("spreads must be positive".into()));
        }
        if self.class_spread >= self.superclass_spread {
            return Err(Error::Config(format!(
                "class spread {} must be below superclass spread {}",
                self.class_spread, self.superclass_spread
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be non-negative", self.noise)));
        }
        Ok(())
    }
}

/// A generated dataset with its stratified train/test split and the class
/// centers used to draw it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub train_ids: Vec<InstanceId>,
    pub test_ids: Vec<InstanceId>,
    pub class_centers: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Draws superclass centers, class centers around them, and instances
/// around the class centers; ids run class by class. Deterministic in `seed`.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<SyntheticData> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hierarchy = ClassHierarchy::uniform(params.superclasses, params.children_per_superclass)?;
    let mut class_centers = Vec::with_capacity(hierarchy.num_classes());
    for _ in 0..params.superclasses {
        let sup = gaussian(&mut rng, params.dim, params.superclass_spread);
        for _ in 0..params.children_per_superclass {
            let offset = gaussian(&mut rng, params.dim, params.class_spread);
            class_centers.push(sup.iter().zip(&offset).map(|(a, b)| a + b).collect::<Vec<f64>>());
        }
    }
    let mut instances = Vec::with_capacity(class_centers.len() * params.n_per_class);
    for (class, center) in class_centers.iter().enumerate() {
        for _ in 0..params.n_per_class {
            let noise = gaussian(&mut rng, params.dim, params.noise);
            instances.push(Instance {
                id: instances.len(),
                features: center.iter().zip(&noise).map(|(c, n)| c + n).collect(),
                exact_class: class,
                superclass: class / params.children_per_superclass,
            });
        }
    }
    let dataset = Dataset::new(hierarchy, instances)?;
    let (train_ids, test_ids) = stratified_split(&dataset, TEST_FRACTION, &mut rng)?;
    Ok(SyntheticData {
        dataset,
        train_ids,
        test_ids,
        class_centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squared(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn counts_and_split() {
        let params = SyntheticParams {
            superclasses: 5,
            children_per_superclass: 4,
            n_per_class: 60,
            dim: 16,
            ..SyntheticParams::default()
        };
        let data = generate_synthetic(&params, 3).unwrap();
        assert_eq!(data.dataset.hierarchy.num_classes(), 20);
        assert_eq!(data.dataset.len(), 1200);
        assert_eq!((data.train_ids.len(), data.test_ids.len()), (960, 240));
        for class in 0..20 {
            let in_test = data
                .test_ids
                .iter()
                .filter(|&&id| data.dataset.get(id).unwrap().exact_class == class)
                .count();
            assert_eq!(in_test, 12);
        }
    }

    #[test]
    fn noiseless_data_is_solved_by_nearest_centroid() {
        let params = SyntheticParams {
            superclasses: 3,
            children_per_superclass: 3,
            n_per_class: 10,
            dim: 4,
            noise: 0.0,
            ..SyntheticParams::default()
        };
        let data = generate_synthetic(&params, 8).unwrap();
        let ds = &data.dataset;
        let classes = ds.hierarchy.num_classes();
        let mut centroids = vec![vec![0.0; ds.dim]; classes];
        let mut counts = vec![0.0; classes];
        for &id in &data.train_ids {
            let inst = ds.get(id).unwrap();
            counts[inst.exact_class] += 1.0;
            for (c, x) in centroids[inst.exact_class].iter_mut().zip(&inst.features) {
                *c += x;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n);
        }
        let correct = data
            .test_ids
            .iter()
            .filter(|&&id| {
                let inst = ds.get(id).unwrap();
                let best = (0..classes)
                    .min_by(|&a, &b| {
                        squared(&inst.features, &centroids[a]).total_cmp(&squared(&inst.features, &centroids[b]))
                    })
                    .unwrap();
                best == inst.exact_class
            })
            .count();
        assert_eq!(correct, data.test_ids.len());
    }

    #[test]
    fn same_seed_same_bytes() {
        let params = SyntheticParams {
            n_per_class: 10,
            dim: 3,
            ..SyntheticParams::default()
        };
        let a = generate_synthetic(&params, 5).unwrap();
        let b = generate_synthetic(&params, 5).unwrap();
        assert_eq!(a.dataset.csv_bytes(&a.train_ids), b.dataset.csv_bytes(&b.train_ids));
        let c = generate_synthetic(&params, 6).unwrap();
        assert_ne!(a.dataset.csv_bytes(&a.train_ids), c.dataset.csv_bytes(&c.train_ids));
    }

    #[test]
    fn rejects_bad_params() {
        let flat = SyntheticParams {
            class_spread: 2.0,
            ..SyntheticParams::default()
        };
        assert!(generate_synthetic(&flat, 0).is_err());
        let tiny = SyntheticParams {
            n_per_class: 2,
            ..SyntheticParams::default()
        };
        assert!(matches!(generate_synthetic(&tiny, 0), Err(Error::Dataset(_))));
    }
}
