use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use radgraph_core::chestkg::{
    Adjacency, CategorySpec, ChestGraph, GraphSpec, PropagationKind, PropagationMatrix,
};

fn eigenvalues(m: &PropagationMatrix) -> Vec<f64> {
    let n = m.len();
    let dense = DMatrix::from_row_slice(n, n, m.values());
    let mut ev: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn random_adjacency() -> impl Strategy<Value = Adjacency> {
    (2usize..12).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..(n * n)).prop_map(move |pairs| {
            Adjacency::from_edges(n, pairs.into_iter().filter(|(a, b)| a != b))
        })
    })
}

#[test]
fn default_matrix_matches_eigen_oracle() {
    let g = ChestGraph::default_graph();
    assert_eq!(g.node_count(), 21);
    let m = PropagationMatrix::from_adjacency(g.adjacency(), PropagationKind::Renormalized);
    assert!(m.max_asymmetry() < 1e-12);
    let ev = eigenvalues(&m);
    let top = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!((top - 1.0).abs() < 1e-9, "largest |λ| = {top}");
    assert!(ev[0] > -1.0 + 1e-9);
    let power = m.spectral_radius(10_000, 1e-14);
    assert!((power - top).abs() < 1e-6);
}

#[test]
fn default_laplacian_spectrum_in_range() {
    let g = ChestGraph::default_graph();
    let m = PropagationMatrix::from_adjacency(g.adjacency(), PropagationKind::Laplacian);
    let ev = eigenvalues(&m);
    assert!(ev[0].abs() < 1e-9, "connected graph has a zero eigenvalue");
    assert!(ev[1] > 1e-6, "only one connected component");
    assert!(*ev.last().unwrap() <= 2.0 + 1e-9);
}

#[test]
fn default_graph_round_trips_through_toml() {
    let g = ChestGraph::default_graph();
    let text = g.to_spec().to_toml().unwrap();
    let back = ChestGraph::from_toml(&text).unwrap();
    assert_eq!(back.categories(), g.categories());
    assert_eq!(back.adjacency(), g.adjacency());
    assert_eq!(back.to_spec(), g.to_spec());
}

proptest! {
    #[test]
    fn renormalized_invariants(adj in random_adjacency()) {
        let m = PropagationMatrix::from_adjacency(&adj, PropagationKind::Renormalized);
        prop_assert!(m.max_asymmetry() < 1e-12);
        let ev = eigenvalues(&m);
        prop_assert!(ev.iter().all(|v| v.abs() <= 1.0 + 1e-9));
        // D̃^{1/2}·1 is the eigenvector for eigenvalue one
        let x: Vec<f64> = (0..adj.len()).map(|i| ((adj.degree(i) + 1) as f64).sqrt()).collect();
        let y = m.mul_vec(&x);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let top = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!((m.spectral_radius(20_000, 1e-15) - top).abs() < 1e-5);
    }

    #[test]
    fn laplacian_invariants(adj in random_adjacency()) {
        let m = PropagationMatrix::from_adjacency(&adj, PropagationKind::Laplacian);
        prop_assert!(m.max_asymmetry() < 1e-12);
        let ev = eigenvalues(&m);
        prop_assert!(ev[0] > -1e-9);
        prop_assert!(*ev.last().unwrap() <= 2.0 + 1e-9);
    }

    #[test]
    fn regular_graph_keeps_constant_vector(n in 3usize..15, k in 1usize..4) {
        // circulant graph: node i connects to i±1..=k
        let k = k.min((n - 1) / 2);
        prop_assume!(k >= 1);
        let edges = (0..n).flat_map(|i| (1..=k).map(move |d| (i, (i + d) % n)));
        let adj = Adjacency::from_edges(n, edges);
        let m = PropagationMatrix::from_adjacency(&adj, PropagationKind::Renormalized);
        for v in m.mul_vec(&vec![1.0; n]) {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_round_trip(groups in proptest::collection::vec(proptest::option::of(0usize..3), 1..12)) {
        let names = ["a", "b", "c"];
        let spec = GraphSpec {
            groups: Some(names.iter().map(|s| s.to_string()).collect()),
            extra_edges: vec![],
            categories: groups
                .iter()
                .enumerate()
                .map(|(i, g)| CategorySpec {
                    name: format!("finding {i}"),
                    group: g.map(|g| names[g].to_string()),
                })
                .collect(),
        };
        let g = ChestGraph::from_spec(&spec).unwrap();
        let back = ChestGraph::from_toml(&g.to_spec().to_toml().unwrap()).unwrap();
        prop_assert_eq!(back.adjacency(), g.adjacency());
        prop_assert_eq!(back.global_node(), groups.len());
        // every category reaches the global node
        for i in 0..groups.len() {
            prop_assert!(g.adjacency().contains(i, g.global_node()));
        }
        // same group ⇔ edge between categories
        for i in 0..groups.len() {
            for j in 0..groups.len() {
                if i != j {
                    let same = groups[i].is_some() && groups[i] == groups[j];
                    prop_assert_eq!(g.adjacency().contains(i, j), same);
                }
            }
        }
    }
}
