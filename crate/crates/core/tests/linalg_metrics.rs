use fusebench_core::matrix::{matmul, set_max_threads};
use fusebench_core::metrics::{mean_f1, Averaging};
use fusebench_core::{Matrix, RngState};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    RngState::new(seed).normal_matrix(rows, cols, 0.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_is_neutral(m in 1usize..=64, n in 1usize..=64, seed in any::<u64>()) {
        let a = matrix(m, n, seed);
        prop_assert_eq!(matmul(&a, &Matrix::identity(n)).unwrap(), a.clone());
        prop_assert_eq!(matmul(&Matrix::identity(m), &a).unwrap(), a);
    }

    #[test]
    fn transpose_reverses_products(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed in any::<u64>()) {
        let a = matrix(m, k, seed);
        let b = matrix(k, n, seed ^ 0x5555);
        prop_assert_eq!(matmul(&a, &b).unwrap().transpose(), matmul(&b.transpose(), &a.transpose()).unwrap());
    }
}

#[test]
fn large_products_do_not_depend_on_thread_count() {
    let a = matrix(301, 257, 1);
    let b = matrix(257, 190, 2);
    set_max_threads(1);
    let one = matmul(&a, &b).unwrap();
    set_max_threads(4);
    let four = matmul(&a, &b).unwrap();
    set_max_threads(1);
    assert_eq!(one, four);
}

fn random_set(rng: &mut RngState, k: usize) -> Vec<usize> {
    // About one in six sets is empty.
    (0..k).filter(|_| rng.uniform() < 0.15).collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Brute force: membership tests over every (sample, class) cell.
fn oracle(preds: &[Vec<usize>], truths: &[Vec<usize>], k: usize, avg: Averaging) -> f64 {
    let cell = |i: usize, c: usize| (preds[i].contains(&c), truths[i].contains(&c));
    let n = preds.len();
    let count = |cells: &mut dyn Iterator<Item = (bool, bool)>| {
        cells.fold((0, 0, 0), |(tp, fp, fn_), (p, t)| {
            (
                tp + (p && t) as usize,
                fp + (p && !t) as usize,
                fn_ + (!p && t) as usize,
            )
        })
    };
    match avg {
        Averaging::Samples => {
            (0..n)
                .map(|i| {
                    let (a, b, c) = count(&mut (0..k).map(|c| cell(i, c)));
                    f1(a, b, c)
                })
                .sum::<f64>()
                / n as f64
        }
        Averaging::Macro => {
            (0..k)
                .map(|c| {
                    let (a, b, d) = count(&mut (0..n).map(|i| cell(i, c)));
                    f1(a, b, d)
                })
                .sum::<f64>()
                / k as f64
        }
        Averaging::Micro => {
            let (a, b, c) = count(
                &mut (0..n)
                    .flat_map(|i| (0..k).map(move |c| (i, c)))
                    .map(|(i, c)| cell(i, c)),
            );
            f1(a, b, c)
        }
    }
}

#[test]
fn mean_f1_matches_counting_oracle() {
    let k = 18;
    let mut rng = RngState::new(99);
    let preds: Vec<_> = (0..1000).map(|_| random_set(&mut rng, k)).collect();
    let truths: Vec<_> = (0..1000).map(|_| random_set(&mut rng, k)).collect();
    assert!(preds.iter().chain(&truths).any(|s| s.is_empty()));
    for avg in [Averaging::Samples, Averaging::Macro, Averaging::Micro] {
        let got = mean_f1(&preds, &truths, k, avg).unwrap();
        let want = oracle(&preds, &truths, k, avg);
        assert!((got - want).abs() <= 1e-12, "{avg:?}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn f1_is_bounded_and_one_only_on_equal_sets(
        pred in prop::collection::btree_set(0usize..6, 0..6),
        truth in prop::collection::btree_set(0usize..6, 0..6),
    ) {
        let p: Vec<usize> = pred.iter().copied().collect();
        let t: Vec<usize> = truth.iter().copied().collect();
        let f = mean_f1(std::slice::from_ref(&p), std::slice::from_ref(&t), 6, Averaging::Samples).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f == 1.0, p == t);
    }
}
