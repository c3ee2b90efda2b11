use std::collections::BTreeSet;

use casseqgcn::data::*;
use casseqgcn::diffusion::{
    generate_dataset, simulate_ic, simulate_lt, DiffusionModel, GenerationConfig, IcParams, LtParams,
};
use casseqgcn::graph::{ba_generate, StaticGraph};
use casseqgcn::seed;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn arb_graph(max_nodes: usize) -> impl Strategy<Value = StaticGraph> {
    (1..=max_nodes).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..n * n).prop_map(move |pairs| {
            let edges: BTreeSet<_> = pairs.into_iter().filter(|(u, v)| u != v).collect();
            StaticGraph::new(n, edges).unwrap()
        })
    })
}

fn eigenvalues(m: &ndarray::Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    dm.symmetric_eigen().eigenvalues.iter().copied().collect()
}

proptest! {
    #[test]
    fn laplacian_is_symmetric_with_spectrum_in_0_2(g in arb_graph(10)) {
        let l = g.symmetric_normalized_laplacian();
        let adj = g.symmetric_adjacency();
        for i in 0..g.node_count() {
            for j in 0..g.node_count() {
                prop_assert!((l[[i, j]] - l[[j, i]]).abs() < 1e-15);
            }
            let isolated = adj.row(i).sum() == 0.0;
            prop_assert!((l[[i, i]] - 1.0).abs() < 1e-15, "diagonal {} (isolated {isolated})", l[[i, i]]);
        }
        for ev in eigenvalues(&l) {
            prop_assert!((-1e-9..=2.0 + 1e-9).contains(&ev), "eigenvalue {ev}");
        }
    }

    #[test]
    fn degree_profile_sums_to_edge_count(g in arb_graph(12)) {
        let d = g.degrees();
        prop_assert_eq!(d.in_degree.iter().sum::<usize>(), g.edge_count());
        prop_assert_eq!(d.out_degree.iter().sum::<usize>(), g.edge_count());
    }

    #[test]
    fn induced_subgraph_keeps_exactly_inner_edges(g in arb_graph(12), mask in proptest::collection::vec(any::<bool>(), 12)) {
        let nodes: Vec<usize> = (0..g.node_count()).filter(|&i| mask[i]).collect();
        let sub = g.induced_subgraph(&nodes).unwrap();
        let expected: BTreeSet<(usize, usize)> = g
            .edges()
            .iter()
            .filter(|(u, v)| nodes.contains(u) && nodes.contains(v))
            .copied()
            .collect();
        let mapped: BTreeSet<(usize, usize)> = sub
            .graph
            .edges()
            .iter()
            .map(|&(u, v)| (sub.nodes[u], sub.nodes[v]))
            .collect();
        prop_assert_eq!(mapped, expected);
    }

    #[test]
    fn ba_graphs_are_simple_and_symmetric(n in 3usize..60, m in 1usize..3, s in any::<u64>()) {
        prop_assume!(n > m);
        let g = ba_generate(n, m, s).unwrap();
        prop_assert_eq!(g.node_count(), n);
        for &(u, v) in g.edges() {
            prop_assert!(u != v);
            prop_assert!(g.has_edge(v, u));
        }
        prop_assert_eq!(g.undirected_edges().len(), (n - m) * m);
        prop_assert_eq!(g.largest_connected_component().unwrap().graph.node_count(), n);
    }

    #[test]
    fn snapshot_count_matches_formula(n in 1usize..400, q in 1usize..50) {
        let g = StaticGraph::empty(n);
        let cascade = Cascade {
            id: "c".into(),
            label: None,
            activations: (0..n).map(|i| (i, i as f64)).collect(),
        };
        let seq = sample_snapshots(build_cascade_graph(&cascade, &g).unwrap(), Sampling::Increment(q)).unwrap();
        prop_assert_eq!(seq.len(), 1 + (n - 1).div_ceil(q));
        prop_assert_eq!(seq.len(), snapshot_count(n, q));
        prop_assert_eq!(seq.active_counts[0], 1);
        prop_assert_eq!(*seq.active_counts.last().unwrap(), n);
        prop_assert!(seq.active_counts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn states_are_monotone_prefixes(times in proptest::collection::vec(0u8..6, 1..30)) {
        let mut times: Vec<f64> = times.into_iter().map(f64::from).collect();
        times.sort_by(f64::total_cmp);
        let n = times.len();
        let cascade = Cascade {
            id: "c".into(),
            label: None,
            activations: times.iter().enumerate().map(|(i, &t)| (i, t)).collect(),
        };
        let seq = sample_snapshots(build_cascade_graph(&cascade, &StaticGraph::empty(n)).unwrap(), Sampling::PerTimestamp)
            .unwrap();
        let distinct = times.windows(2).filter(|w| w[0] != w[1]).count() + 1;
        prop_assert_eq!(seq.len(), distinct);
        let mut prev = vec![0.0; n];
        for k in 0..seq.len() {
            let state = seq.state(k);
            prop_assert!(state.iter().zip(&prev).all(|(s, p)| s >= p));
            let active = state.iter().filter(|&&s| s == 1.0).count();
            prop_assert!(state[..active].iter().all(|&s| s == 1.0));
            // every node of one timestamp switches on together
            prop_assert!(active == n || times[active] != times[active - 1]);
            prev = state;
        }
        prop_assert!(prev.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn trailing_split_partitions_the_cascade(times in proptest::collection::vec(0u8..10, 1..40), tp in 1u8..4) {
        let mut times: Vec<f64> = times.into_iter().map(f64::from).collect();
        times.sort_by(f64::total_cmp);
        let cascade = Cascade {
            id: "c".into(),
            label: None,
            activations: times.iter().enumerate().map(|(i, &t)| (i, t)).collect(),
        };
        let out = split_observation(&cascade, ObservationMode::Trailing { horizon: f64::from(tp) }, 1).unwrap();
        prop_assert_eq!(out.observed.len() + out.growth, cascade.len());
        let last = *times.last().unwrap();
        let cutoff = (last - f64::from(tp)).max(times[0]);
        prop_assert!(out.observed.activations.iter().all(|a| a.1 <= cutoff));
        prop_assert!(cascade.activations[out.observed.len()..].iter().all(|a| a.1 > cutoff));
    }

    #[test]
    fn split_indices_partition(n in 0usize..300, s in any::<u64>()) {
        let idx = split_indices(n, DEFAULT_SPLIT, s).unwrap();
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(idx.train.len(), (n as f64 * 0.7).round() as usize);
    }
}

#[test]
fn ten_nodes_with_q3_give_four_snapshots() {
    let g = StaticGraph::empty(10);
    let cascade = Cascade {
        id: "c".into(),
        label: None,
        activations: (0..10).map(|i| (i, i as f64)).collect(),
    };
    let seq = sample_snapshots(build_cascade_graph(&cascade, &g).unwrap(), Sampling::Increment(3)).unwrap();
    assert_eq!(seq.active_counts, vec![1, 4, 7, 10]);
}

#[test]
fn simulated_cascades_respect_graph_and_time() {
    let g = ba_generate(200, 2, 3).unwrap();
    let mut rng = seed::rng(5);
    for model in [DiffusionModel::IndependentCascade, DiffusionModel::LinearThreshold] {
        let records = generate_dataset(&g, model, 30, GenerationConfig::default(), &mut rng).unwrap();
        for r in &records {
            assert_eq!(r.model, model);
            assert!(r.len() >= 10 && r.step_count() >= 3);
            assert_eq!(r.activations[0].1, 0);
            let mut seen = BTreeSet::new();
            for (i, &(v, t)) in r.activations.iter().enumerate() {
                assert!(seen.insert(v), "node {v} activated twice");
                if i > 0 {
                    assert!(t >= r.activations[i - 1].1);
                    // every later activation has an earlier-activated neighbor
                    let parents = g.in_neighbors(v);
                    assert!(r.activations[..i].iter().any(|&(u, tu)| tu < t && parents.contains(&u)));
                }
            }
        }
    }
}

#[test]
fn lt_with_zero_weights_never_spreads_and_ic_with_certain_edges_floods() {
    let g = ba_generate(50, 2, 1).unwrap();
    let lt = LtParams {
        edge_weight: vec![0.0; g.edge_count()],
        node_threshold: vec![0.5; g.node_count()],
    };
    assert_eq!(simulate_lt(&g, &lt, 0).unwrap().len(), 1);
    let ic = IcParams::uniform(&g, 1.0);
    let record = simulate_ic(&g, &ic, 0, &mut seed::rng(0)).unwrap();
    assert_eq!(record.len(), 50);
}

#[test]
fn examples_from_generated_cascades() {
    let g = ba_generate(300, 2, 9).unwrap();
    let records = generate_dataset(
        &g,
        DiffusionModel::IndependentCascade,
        40,
        GenerationConfig::default(),
        &mut seed::rng(2),
    )
    .unwrap();
    let cascades: Vec<Cascade> = records
        .iter()
        .enumerate()
        .map(|(i, r)| Cascade::from_record(i.to_string(), r))
        .collect();
    let config = DatasetConfig {
        mode: ObservationMode::Trailing { horizon: 2.0 },
        sampling: Sampling::PerTimestamp,
        min_observed: 10,
    };
    let (examples, audit) = build_examples(&cascades, &g, &config).unwrap();
    assert_eq!(audit.kept + audit.no_observation + audit.too_small, cascades.len());
    assert_eq!(examples.len(), audit.kept);
    for e in &examples {
        let source = cascades.iter().find(|c| c.id == e.id).unwrap();
        assert_eq!(e.sequence.cascade.node_count() + e.growth, source.len());
        assert!(e.sequence.cascade.node_count() >= 10);
        assert_eq!(e.log_target(), (e.growth as f64 + 1.0).log2());
    }
}
