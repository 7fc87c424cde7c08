//! Train/validation/test splitting followed by division across nodes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{Dataset, RawCorpus};
use crate::error::{FlstError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Even division; node sizes differ by at most one.
    RandomUniform,
    /// Node fractions drawn from a flat Dirichlet.
    RandomSized,
    /// Per-class node proportions drawn from Dirichlet(alpha).
    LabelSkew { alpha: f64 },
    /// Each instance stays on the node portion it was generated for.
    ByOrigin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub node_count: usize,
    pub scheme: PartitionScheme,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(node_count: usize, scheme: PartitionScheme, seed: u64) -> Self {
        PartitionPlan {
            node_count,
            scheme,
            train_fraction: 0.6,
            validation_fraction: 0.2,
            test_fraction: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(FlstError::config("node_count must be at least 1"));
        }
        let fr = [
            self.train_fraction,
            self.validation_fraction,
            self.test_fraction,
        ];
        if fr.iter().any(|&f| !(0.0..=1.0).contains(&f))
            || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(FlstError::config(format!(
                "split fractions {:?} must be in [0, 1] and sum to 1",
                fr
            )));
        }
        if let PartitionScheme::LabelSkew { alpha } = self.scheme {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(FlstError::config(
                    "label_skew alpha must be a positive number",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeShards {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedSplit {
    pub nodes: Vec<NodeShards>,
    /// Union of all node test shards.
    pub test: Dataset,
}

impl FederatedSplit {
    /// Pooled training data of every node.
    pub fn pooled_train(&self) -> Result<Dataset> {
        Dataset::concat(&self.nodes.iter().map(|n| &n.train).collect::<Vec<_>>())
    }
}

/// Splits 60/20/20 (rounding residue to train), then divides each split across
/// nodes. Instance ids are corpus row positions.
pub fn partition_and_split(corpus: &RawCorpus, plan: &PartitionPlan) -> Result<FederatedSplit> {
    plan.validate()?;
    if corpus.is_empty() {
        return Err(FlstError::config("cannot partition an empty corpus"));
    }
    let n_nodes = plan.node_count;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    // per-node index lists for each of train/validation/test
    let mut assigned: [Vec<Vec<usize>>; 3] = std::array::from_fn(|_| vec![Vec::new(); n_nodes]);

    if let PartitionScheme::ByOrigin = plan.scheme {
        let origin = corpus.origin.as_ref().ok_or_else(|| {
            FlstError::config("by_origin partitioning needs a corpus with node origins")
        })?;
        if let Some(&bad) = origin.iter().find(|&&o| o >= n_nodes) {
            return Err(FlstError::config(format!(
                "corpus origin {} exceeds node_count {}",
                bad, n_nodes
            )));
        }
        for node in 0..n_nodes {
            let mut group: Vec<usize> = (0..corpus.len()).filter(|&i| origin[i] == node).collect();
            group.shuffle(&mut rng);
            for (s, part) in split_three(&group, plan).into_iter().enumerate() {
                assigned[s][node] = part;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..corpus.len()).collect();
        all.shuffle(&mut rng);
        let splits = split_three(&all, plan);
        match plan.scheme {
            PartitionScheme::RandomUniform => {
                let weights = vec![1.0 / n_nodes as f64; n_nodes];
                for (s, part) in splits.iter().enumerate() {
                    assigned[s] = divide(part, &weights);
                }
            }
            PartitionScheme::RandomSized => {
                let weights = dirichlet(&mut rng, 1.0, n_nodes)?;
                for (s, part) in splits.iter().enumerate() {
                    assigned[s] = divide(part, &weights);
                }
            }
            PartitionScheme::LabelSkew { alpha } => {
                let per_class: Vec<Vec<f64>> = (0..corpus.class_count)
                    .map(|_| dirichlet(&mut rng, alpha, n_nodes))
                    .collect::<Result<_>>()?;
                for (s, part) in splits.iter().enumerate() {
                    for (class, weights) in per_class.iter().enumerate() {
                        let members: Vec<usize> = part
                            .iter()
                            .copied()
                            .filter(|&i| corpus.labels[i] == class)
                            .collect();
                        for (node, chunk) in divide(&members, weights).into_iter().enumerate() {
                            assigned[s][node].extend(chunk);
                        }
                    }
                }
            }
            PartitionScheme::ByOrigin => unreachable!(),
        }
    }

    for (node, train) in assigned[0].iter().enumerate() {
        if train.len() < corpus.class_count {
            return Err(FlstError::config(format!(
                "node {} would receive {} training instances, fewer than {} classes",
                node,
                train.len(),
                corpus.class_count
            )));
        }
    }

    let data = corpus.as_dataset();
    let nodes: Vec<NodeShards> = (0..n_nodes)
        .map(|node| NodeShards {
            train: data.subset(&assigned[0][node]),
            validation: data.subset(&assigned[1][node]),
            test: data.subset(&assigned[2][node]),
        })
        .collect();
    let test = Dataset::concat(&nodes.iter().map(|n| &n.test).collect::<Vec<_>>())?;
    Ok(FederatedSplit { nodes, test })
}

fn split_three(indices: &[usize], plan: &PartitionPlan) -> [Vec<usize>; 3] {
    let n = indices.len();
    let n_val = (plan.validation_fraction * n as f64).floor() as usize;
    let n_test = (plan.test_fraction * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    [
        indices[..n_train].to_vec(),
        indices[n_train..n_train + n_val].to_vec(),
        indices[n_train + n_val..].to_vec(),
    ]
}

/// Contiguous division of `items` by `weights`, using largest remainders so the
/// counts add up exactly.
fn divide(items: &[usize], weights: &[f64]) -> Vec<Vec<usize>> {
    let n = items.len();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut remaining = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut start = 0;
    for c in counts {
        out.push(items[start..start + c].to_vec());
        start += c;
    }
    out
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| FlstError::config(e.to_string()))?;
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0) {
        // all-zero draws happen for tiny alpha; fall back to a single random winner
        let winner = (rand::Rng::random::<u64>(rng) % k as u64) as usize;
        draws = (0..k)
            .map(|i| if i == winner { 1.0 } else { 0.0 })
            .collect();
        return Ok(draws);
    }
    Ok(draws.into_iter().map(|d| d / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_synthetic_tabular, CorpusSource, SyntheticSpec};
    use crate::nn::Matrix;
    use std::collections::HashSet;

    fn corpus(n: usize, classes: usize) -> RawCorpus {
        RawCorpus {
            features: Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            labels: (0..n).map(|i| i % classes).collect(),
            class_count: classes,
            source: CorpusSource::SyntheticTabular,
            origin: None,
        }
    }

    fn all_ids(split: &FederatedSplit) -> Vec<u64> {
        split
            .nodes
            .iter()
            .flat_map(|n| [&n.train, &n.validation, &n.test])
            .flat_map(|d| d.ids.iter().copied())
            .collect()
    }

    #[test]
    fn single_node_gets_60_20_20() {
        let split = partition_and_split(
            &corpus(1000, 2),
            &PartitionPlan::new(1, PartitionScheme::RandomUniform, 3),
        )
        .unwrap();
        let n = &split.nodes[0];
        assert_eq!(
            (n.train.len(), n.validation.len(), n.test.len()),
            (600, 200, 200)
        );
    }

    #[test]
    fn uniform_division_is_even() {
        let split = partition_and_split(
            &corpus(13_334, 10),
            &PartitionPlan::new(4, PartitionScheme::RandomUniform, 3),
        )
        .unwrap();
        let total: usize = split.nodes.iter().map(|n| n.train.len()).sum();
        assert_eq!(total, 8002);
        let sizes: Vec<usize> = split.nodes.iter().map(|n| n.train.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let exact = partition_and_split(
            &corpus(13_332, 10),
            &PartitionPlan::new(4, PartitionScheme::RandomUniform, 3),
        )
        .unwrap();
        assert!(exact.nodes.iter().all(|n| n.train.len() == 2000));
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint_for_every_scheme() {
        let mut c = corpus(997, 3);
        c.origin = Some((0..997).map(|i| i % 3).collect());
        for scheme in [
            PartitionScheme::RandomUniform,
            PartitionScheme::RandomSized,
            PartitionScheme::LabelSkew { alpha: 0.5 },
            PartitionScheme::ByOrigin,
        ] {
            for seed in 0..5 {
                let split = match partition_and_split(&c, &PartitionPlan::new(3, scheme, seed)) {
                    Ok(s) => s,
                    Err(FlstError::Config(_)) => continue,
                    Err(e) => panic!("{e}"),
                };
                let ids = all_ids(&split);
                let set: HashSet<u64> = ids.iter().copied().collect();
                assert_eq!(ids.len(), 997, "{scheme:?}");
                assert_eq!(set.len(), 997, "{scheme:?}");
                assert_eq!(
                    split.test.len(),
                    split.nodes.iter().map(|n| n.test.len()).sum::<usize>()
                );
            }
        }
    }

    #[test]
    fn test_set_independent_of_node_count() {
        let c = corpus(500, 2);
        let ids = |n| {
            let mut v = partition_and_split(
                &c,
                &PartitionPlan::new(n, PartitionScheme::RandomUniform, 9),
            )
            .unwrap()
            .test
            .ids;
            v.sort();
            v
        };
        assert_eq!(ids(1), ids(4));
    }

    #[test]
    fn starving_a_node_is_a_config_error() {
        let err = partition_and_split(
            &corpus(50, 10),
            &PartitionPlan::new(8, PartitionScheme::RandomUniform, 1),
        )
        .unwrap_err();
        assert!(matches!(err, FlstError::Config(_)));
    }

    #[test]
    fn pure_function_of_inputs() {
        let c = corpus(300, 3);
        let plan = PartitionPlan::new(3, PartitionScheme::RandomSized, 4);
        assert_eq!(
            partition_and_split(&c, &plan).unwrap(),
            partition_and_split(&c, &plan).unwrap()
        );
    }

    fn mean_chi_square(split: &FederatedSplit) -> f64 {
        let classes = split.nodes[0].train.class_count;
        let total: Vec<f64> = {
            let mut h = vec![0.0; classes];
            for n in &split.nodes {
                for (c, k) in n.train.class_histogram().into_iter().enumerate() {
                    h[c] += k as f64;
                }
            }
            let s: f64 = h.iter().sum();
            h.into_iter().map(|v| v / s).collect()
        };
        split
            .nodes
            .iter()
            .map(|n| {
                let h = n.train.class_histogram();
                let s = h.iter().sum::<usize>() as f64;
                h.iter()
                    .zip(&total)
                    .map(|(&k, &q)| (k as f64 / s - q).powi(2) / q)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / split.nodes.len() as f64
    }

    #[test]
    fn label_skew_approaches_uniform_as_alpha_grows() {
        let c = gen_synthetic_tabular(&SyntheticSpec {
            class_count: 5,
            feature_dim: 2,
            instances: 20_000,
            node_shift: 0.0,
            node_count: 1,
            separation: 1.0,
            seed: 1,
        })
        .unwrap();
        let chi = |alpha| {
            let splits: Vec<f64> = (0..5)
                .map(|seed| {
                    partition_and_split(
                        &c,
                        &PartitionPlan::new(4, PartitionScheme::LabelSkew { alpha }, seed),
                    )
                    .map(|s| mean_chi_square(&s))
                    .unwrap_or(f64::INFINITY)
                })
                .collect();
            splits.iter().sum::<f64>() / splits.len() as f64
        };
        let uniform = mean_chi_square(
            &partition_and_split(
                &c,
                &PartitionPlan::new(4, PartitionScheme::RandomUniform, 0),
            )
            .unwrap(),
        );
        let (a, b, d) = (chi(0.1), chi(1.0), chi(100.0));
        assert!(a > b && b > d, "{a} {b} {d}");
        assert!(d < 0.01 && uniform < 0.01);
    }
}
