use std::collections::HashSet;

use flst::curriculum::{fit_ranking, Metric};
use flst::datasets::{partition_and_split, CorpusSource, Dataset, PartitionPlan, PartitionScheme, RawCorpus};
use flst::nn::Matrix;
use flst::FlstError;
use proptest::prelude::*;

fn corpus(n: usize, classes: usize, nodes: usize) -> RawCorpus {
    RawCorpus {
        features: Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
        labels: (0..n).map(|i| (i * 7 + i / 3) % classes).collect(),
        class_count: classes,
        source: CorpusSource::SyntheticTabular,
        origin: Some((0..n).map(|i| i % nodes).collect()),
    }
}

fn scheme() -> impl Strategy<Value = PartitionScheme> {
    prop_oneof![
        Just(PartitionScheme::RandomUniform),
        Just(PartitionScheme::RandomSized),
        (0.1f64..5.0).prop_map(|alpha| PartitionScheme::LabelSkew { alpha }),
        Just(PartitionScheme::ByOrigin),
    ]
}

fn points(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), (d + 2)..40)
}

fn dataset(rows: &[Vec<f64>]) -> Dataset {
    let n = rows.len();
    Dataset::new(Matrix::from_rows(rows).unwrap(), vec![0; n], (0..n as u64).collect(), 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_covers_every_instance_once(
        n in 40usize..400,
        nodes in 1usize..6,
        classes in 2usize..6,
        scheme in scheme(),
        seed in any::<u64>(),
    ) {
        let split = match partition_and_split(&corpus(n, classes, nodes), &PartitionPlan::new(nodes, scheme, seed)) {
            Ok(s) => s,
            Err(FlstError::Config(_)) if matches!(scheme, PartitionScheme::RandomSized | PartitionScheme::LabelSkew { .. }) => {
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(split.nodes.len(), nodes);
        let ids: Vec<u64> = split
            .nodes
            .iter()
            .flat_map(|s| [&s.train, &s.validation, &s.test])
            .flat_map(|d| d.ids.iter().copied())
            .collect();
        let unique: HashSet<u64> = ids.iter().copied().collect();
        prop_assert_eq!(unique.len(), ids.len());
        prop_assert_eq!(unique, (0..n as u64).collect::<HashSet<_>>());
        prop_assert_eq!(split.test.len(), split.nodes.iter().map(|s| s.test.len()).sum::<usize>());
        if scheme == PartitionScheme::RandomUniform {
            let sizes: Vec<usize> = split.nodes.iter().map(|s| s.train.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{:?}", sizes);
        }
    }

    #[test]
    fn partition_is_seed_deterministic(n in 40usize..200, nodes in 1usize..5, scheme in scheme(), seed in any::<u64>()) {
        let c = corpus(n, 3, nodes);
        let plan = PartitionPlan::new(nodes, scheme, seed);
        prop_assert_eq!(partition_and_split(&c, &plan).ok(), partition_and_split(&c, &plan).ok());
    }

    #[test]
    fn mahalanobis_scores_are_translation_and_scale_invariant(
        rows in points(3),
        x in prop::collection::vec(-5.0f64..5.0, 3),
        shift in prop::collection::vec(-10.0f64..10.0, 3),
        scale in 0.1f64..10.0,
    ) {
        let Ok(base) = fit_ranking(&dataset(&rows), Metric::Mahalanobis) else {
            return Ok(());
        };
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&shift).map(|(v, s)| scale * v + s).collect())
            .collect();
        let other = fit_ranking(&dataset(&moved), Metric::Mahalanobis).unwrap();
        let y: Vec<f64> = x.iter().zip(&shift).map(|(v, s)| scale * v + s).collect();
        let (a, b) = (base.score(&x).unwrap(), other.score(&y).unwrap());
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a), "{} vs {}", a, b);
        prop_assert!(base.score(base.mean()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cosine_difficulty_ignores_positive_rescaling(
        rows in points(4),
        x in prop::collection::vec(-5.0f64..5.0, 4),
        scale in 0.1f64..10.0,
    ) {
        let Ok(model) = fit_ranking(&dataset(&rows), Metric::Cosine) else {
            return Ok(());
        };
        let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let (a, b) = (model.difficulty(&x).unwrap(), model.difficulty(&scaled).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&a));
    }
}
