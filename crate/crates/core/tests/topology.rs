use distdpo::dec_runtime::{self, NodeStates};
use distdpo::linalg;
use distdpo::topology::{self, MixingMatrix, TopologyKind, WeightScheme};
use proptest::prelude::*;

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn jacobi_rho(m: &MixingMatrix) -> f64 {
    let n = m.n();
    let centered: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m.weight(i, j) - 1.0 / n as f64).collect()).collect();
    jacobi_eigenvalues(centered).into_iter().fold(0.0, |r, v| r.max(v.abs()))
}

fn matrices() -> Vec<(TopologyKind, usize, MixingMatrix)> {
    let mut out = Vec::new();
    for n in 3..10 {
        for kind in TopologyKind::ALL {
            out.push((kind, n, topology::default_mixing(kind, n).unwrap()));
            if kind != TopologyKind::Complete {
                let g = topology::build_graph(kind, n).unwrap();
                out.push((kind, n, topology::build_mixing(&g, WeightScheme::Metropolis).unwrap()));
            }
        }
    }
    out
}

#[test]
fn rho_matches_jacobi_oracle() {
    for (kind, n, m) in matrices() {
        let oracle = jacobi_rho(&m);
        assert!((m.rho() - oracle).abs() < 1e-10, "{kind} n={n}: {} vs {oracle}", m.rho());
        assert!(m.respects(&topology::build_graph(kind, n).unwrap()));
    }
}

#[test]
fn rho_ordering_at_five_nodes() {
    let rho = |k| topology::default_mixing(k, 5).unwrap().rho();
    assert!(rho(TopologyKind::Complete) < rho(TopologyKind::Ring));
    assert!(rho(TopologyKind::Ring) < rho(TopologyKind::Path));
    assert!((rho(TopologyKind::Ring) - 0.5394).abs() < 1e-3);
}

#[test]
fn uniform_weights_need_a_regular_graph() {
    let g = topology::build_graph(TopologyKind::Star, 5).unwrap();
    assert!(topology::build_mixing(&g, WeightScheme::UniformNeighbor).is_err());
}

#[test]
fn non_contracting_matrix_is_degenerate() {
    let e = MixingMatrix::from_weights(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap_err();
    assert!(matches!(e, distdpo::Error::DegenerateTopology(_)));
}

fn stacked(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n)
}

fn kind() -> impl Strategy<Value = TopologyKind> {
    prop::sample::select(TopologyKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mixing_preserves_the_average(k in kind(), x in stacked(5, 3)) {
        let m = topology::default_mixing(k, 5).unwrap();
        let before = linalg::mean_of(&x);
        let after = linalg::mean_of(&m.apply(&x));
        prop_assert!(linalg::dist_sq(&before, &after).sqrt() <= 1e-12);
    }

    #[test]
    fn mixing_contracts_zero_mean_deviations(k in kind(), x in stacked(5, 3)) {
        let m = topology::default_mixing(k, 5).unwrap();
        let mean = linalg::mean_of(&x);
        let dev: Vec<Vec<f64>> = x.iter().map(|v| linalg::sub(v, &mean)).collect();
        let norm = |s: &[Vec<f64>]| s.iter().map(|v| linalg::norm_sq(v)).sum::<f64>().sqrt();
        prop_assert!(norm(&m.apply(&dev)) <= m.rho() * norm(&dev) + 1e-10);
    }

    #[test]
    fn consensus_error_shrinks_by_rho_squared(k in kind(), x in stacked(5, 4)) {
        let m = topology::default_mixing(k, 5).unwrap();
        let s = NodeStates { thetas: x, round: 0 };
        let before = dec_runtime::consensus_error(&s);
        let after = dec_runtime::consensus_error(&dec_runtime::mix(&s, &m).unwrap());
        prop_assert!(after <= m.rho() * m.rho() * before + 1e-10);
    }

    #[test]
    fn json_round_trip_keeps_rho(k in kind(), n in 3usize..9) {
        let m = topology::default_mixing(k, n).unwrap();
        let back = MixingMatrix::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }
}
