//! Activation-region enumeration against pointwise network evaluation.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roa_core::geometry::Polytope;
use roa_core::matrix::Matrix;
use roa_core::relu::{enumerate_regions, ReluNetwork, DEFAULT_REGION_CAP};

fn random_net(rng: &mut impl Rng, hidden: usize) -> ReluNetwork {
    let mut u = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
    ReluNetwork::new(
        Matrix::new(hidden, 2, u(2 * hidden)),
        u(hidden),
        Matrix::new(2, hidden, u(2 * hidden)),
        u(2),
    )
    .unwrap()
}

/// Affine map of the region containing `x`, computed by hand from the
/// weights: unit `j` contributes `W2[:, j] (W1[j] · x + b1[j])` when active.
fn local_affine(net: &ReluNetwork, x: &[f64]) -> ([[f64; 2]; 2], [f64; 2]) {
    let (w1, b1, w2, b2) = (net.w1(), net.b1(), net.w2(), net.b2());
    let mut a = [[0.0; 2]; 2];
    let mut off = [b2[0], b2[1]];
    for j in 0..net.hidden() {
        let z = w1.get(j, 0) * x[0] + w1.get(j, 1) * x[1] + b1[j];
        if z > 0.0 {
            for r in 0..2 {
                for c in 0..2 {
                    a[r][c] += w2.get(r, j) * w1.get(j, c);
                }
                off[r] += w2.get(r, j) * b1[j];
            }
        }
    }
    (a, off)
}

fn domain() -> Polytope {
    Polytope::from_box(&[-2.0, -2.0], &[2.0, 2.0]).unwrap()
}

#[test]
fn eight_neuron_regions_match_sign_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let net = random_net(&mut rng, 8);
        let p = enumerate_regions(&net, &domain(), DEFAULT_REGION_CAP).unwrap();
        assert!(p.num_cells() <= 1 + 8 + 8 * 7 / 2, "{} regions", p.num_cells());
        for cell in p.cells() {
            let (c, r) = cell.region.chebyshev_center();
            assert!(r > 0.0);
            let (a, off) = local_affine(&net, &c);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((cell.flow_matrix.get(i, j) - a[i][j]).abs() <= 1e-12);
                }
                assert!((cell.flow_offset[i] - off[i]).abs() <= 1e-12);
            }
        }
        assert!(p.dynamics_discontinuity() <= 1e-9);
    }
}

#[test]
fn pwa_form_equals_network_on_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = random_net(&mut rng, 8);
    let p = enumerate_regions(&net, &domain(), DEFAULT_REGION_CAP).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let y = net.eval(&x);
        let f = p.flow(&x).expect("sample inside the domain");
        worst = worst.max((y[0] - f[0]).abs()).max((y[1] - f[1]).abs());
    }
    assert!(worst <= 1e-9, "worst deviation {worst:e}");
}

#[test]
fn single_neuron_hand_values() {
    let net = ReluNetwork::new(
        Matrix::new(1, 2, vec![1.0, 0.0]),
        vec![0.0],
        Matrix::new(2, 1, vec![2.0, -1.0]),
        vec![0.5, 0.25],
    )
    .unwrap();
    assert_eq!(net.eval(&[0.0, 0.0]), vec![0.5, 0.25]);
    assert_eq!(net.eval(&[0.5, 0.0]), vec![1.5, -0.25]);
    let p = enumerate_regions(&net, &Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(), 10).unwrap();
    assert_eq!(p.num_cells(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_point_matches_some_incident_cell(seed in any::<u64>(), hidden in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, hidden);
        let p = enumerate_regions(&net, &domain(), DEFAULT_REGION_CAP).unwrap();
        prop_assert!(p.num_cells() <= 1 + hidden + hidden * (hidden - 1) / 2);
        prop_assert!(p.dynamics_discontinuity() <= 1e-9);
        for _ in 0..200 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let y = net.eval(&x);
            let ok = p.locate(&x).into_iter().any(|i| {
                let f = p.cell(i).flow(&x);
                (y[0] - f[0]).abs() <= 1e-9 && (y[1] - f[1]).abs() <= 1e-9
            });
            prop_assert!(ok, "no incident cell reproduces the network at {:?}", x);
        }
    }
}
