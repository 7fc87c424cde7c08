use flst::agents::{Scheduler, SchedulerConfig, Teacher, TeacherConfig};
use flst::curriculum::Metric;
use flst::datasets::{gen_synthetic_tabular, Dataset, SyntheticSpec};
use flst::federation::{CurriculumSpec, FederationState, Node, RankSpace, Selection};
use flst::nn::{Activation, Mlp, OptimizerState};

fn base_shards(seed: u64) -> (Dataset, Dataset) {
    let corpus = gen_synthetic_tabular(&SyntheticSpec {
        class_count: 7,
        feature_dim: 12,
        instances: 700,
        node_shift: 0.0,
        node_count: 1,
        separation: 1.0,
        seed,
    })
    .unwrap();
    let all = corpus.as_dataset();
    let idx: Vec<usize> = (0..all.len()).collect();
    (all.subset(&idx[..420]), all.subset(&idx[420..560]))
}

fn relabel(mut d: Dataset, offset: u64) -> Dataset {
    d.ids.iter_mut().for_each(|i| *i += offset);
    d
}

/// Four nodes with byte-identical shards and identically initialized teachers.
fn mirrored_federation(seed: u64, scheduler: SchedulerConfig) -> FederationState {
    let (train, val) = base_shards(seed);
    let spec = CurriculumSpec {
        metric: Metric::Mahalanobis,
        batch_count: 10,
        window_max: 1,
        rank_space: RankSpace::Raw,
    };
    let nodes: Vec<Node> = (0..4u64)
        .map(|i| {
            let teacher = Teacher::new(200, TeacherConfig::default(), seed + 11).unwrap();
            Node::new(
                i as usize,
                relabel(train.clone(), i << 32),
                relabel(val.clone(), i << 32),
                spec.clone(),
                None,
                Some(teacher),
                OptimizerState::new(0.1, 0.9).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let student = Mlp::new(
        &[12, 50, 50, 7],
        &[Activation::Relu, Activation::Relu, Activation::Softmax],
        seed + 3,
    )
    .unwrap();
    let sc = Scheduler::new(200, 4, scheduler, seed + 5).unwrap();
    FederationState::new(
        nodes,
        student,
        OptimizerState::new(0.1, 0.9).unwrap(),
        sc,
        Selection::OneHot,
        seed + 7,
    )
    .unwrap()
}

#[test]
fn mirrored_clean_nodes_stay_near_uniform() {
    for seed in [1u64, 2, 3] {
        let mut fs = mirrored_federation(seed, SchedulerConfig::default());
        let mut counts = [0usize; 4];
        for t in 0..2000 {
            let row = fs.run_outer_iteration().unwrap();
            if t >= 1500 {
                counts[row.selected[0]] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 500.0;
            assert!((f - 0.25).abs() <= 0.15, "seed {seed}: counts {counts:?}");
        }
    }
}

#[test]
fn outer_iterations_are_deterministic() {
    let trace = |seed| {
        let mut fs = mirrored_federation(seed, SchedulerConfig::default());
        (0..40)
            .map(|_| {
                let row = fs.run_outer_iteration().unwrap();
                (row.selected.clone(), row.meta_loss.map(f64::to_bits))
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(trace(4), trace(4));
    assert_ne!(trace(4), trace(5));
}
