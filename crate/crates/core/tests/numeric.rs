mod common;

use common::{naive_matmul, precise_norm};
use hkr::linalg::l2_norm;
use hkr::{Matrix, Rng};
use proptest::prelude::*;

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::new(rows, cols, rng.normal_vec(rows * cols)).unwrap()
}

#[test]
fn identity_times_a() {
    let a = Matrix::from_rows(&[&[1.5, -2.0], &[0.25, 7.0]]);
    assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
}

#[test]
fn hand_product() {
    let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
    assert_eq!(a.matmul(&b).unwrap().as_slice(), &[2.0, 4.0]);
}

#[test]
fn product_matches_triple_loop() {
    let mut rng = Rng::new(3);
    for _ in 0..20 {
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for i in 0..3 {
            for j in 0..2 {
                assert!((got.row(i)[j] - want[i][j]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn mismatched_product_is_an_error() {
    assert!(Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).is_err());
    assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
}

#[test]
fn norm_examples() {
    assert_eq!(l2_norm(&[0.0, 0.0, 0.0]), 0.0);
    assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
}

#[test]
fn norm_matches_extended_precision() {
    let mut rng = Rng::new(11);
    for len in [1, 2, 7, 64, 1000] {
        for scale in [1e-150, 1e-3, 1.0, 1e5, 1e150] {
            let v: Vec<f64> = rng.normal_vec::<f64>(len).into_iter().map(|x| x * scale).collect();
            let (got, want) = (l2_norm(&v), precise_norm(&v));
            assert!((got - want).abs() <= 4.0 * f64::EPSILON * want, "{got} vs {want}");
        }
    }
}

#[test]
fn equal_seeds_give_equal_streams() {
    let (mut a, mut b) = (Rng::new(2024), Rng::new(2024));
    for _ in 0..10_000 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let mut c = Rng::new(2025);
    assert_ne!(Rng::new(2024).next_u64(), c.next_u64());
}

#[test]
fn frozen_stream_prefix() {
    // ChaCha8 seeded from the u64; changing it breaks saved experiments
    let mut r = Rng::new(0);
    let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
    assert_eq!(first, [13080132717333068652, 8594738769458413623, 12896916468484187878]);
    assert_eq!(Rng::new(7).uniform(), 0.15779609702061936);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn associativity(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, m in 1usize..6, p in 1usize..6) {
        let mut rng = Rng::new(seed);
        let (a, b, c) = (random(n, k, &mut rng), random(k, m, &mut rng), random(m, p, &mut rng));
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1.0);
        prop_assert!(left.sub(&right).unwrap().max_abs() <= 1e-10 * scale);
    }

    #[test]
    fn triangle_inequality(x in prop::collection::vec(-1e6f64..1e6, 1..20), seed in any::<u64>()) {
        let y: Vec<f64> = Rng::new(seed).normal_vec::<f64>(x.len()).into_iter().map(|v| v * 1e3).collect();
        let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        prop_assert!(l2_norm(&s) <= (l2_norm(&x) + l2_norm(&y)) * (1.0 + 1e-15));
    }

    #[test]
    fn transpose_product_rule(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, m in 1usize..5) {
        let mut rng = Rng::new(seed);
        let (a, b) = (random(n, k, &mut rng), random(k, m, &mut rng));
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }
}
