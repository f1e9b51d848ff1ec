mod common;

use common::{gaussian, random_spd, rel_err};
use icl_core::numerics::{stream_id, sym_eig, Matrix, MeanVar, RngStream, SpdMatrix};
use icl_core::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inv_sqrt_round_trip(seed in any::<u64>(), d in 1usize..7) {
        let a = random_spd(&mut RngStream::new(seed, 0), d, 0.1);
        let r = a.inv_sqrt().unwrap();
        let back = r.matmul(a.matrix()).unwrap().matmul(&r).unwrap();
        prop_assert!(rel_err(&back, &Matrix::identity(d)) < 1e-10);
        let s = a.sqrt();
        prop_assert!(rel_err(&s.matmul(&s).unwrap(), a.matrix()) < 1e-12);
        prop_assert!(s.max_asymmetry() < 1e-12);
    }

    #[test]
    fn eig_round_trip(seed in any::<u64>(), d in 1usize..7) {
        let g = gaussian(&mut RngStream::new(seed, 1), d, d);
        let a = g.add(&g.transpose()).unwrap();
        let (vals, vecs) = sym_eig(&a).unwrap();
        prop_assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let back = vecs.matmul(&Matrix::from_diag(&vals)).unwrap().matmul(&vecs.transpose()).unwrap();
        prop_assert!(rel_err(&back, &a) < 1e-12);
        let gram = vecs.transpose().matmul(&vecs).unwrap();
        prop_assert!(rel_err(&gram, &Matrix::identity(d)) < 1e-12);
    }

    #[test]
    fn spd_eigenvalues_nonnegative_and_trace(seed in any::<u64>(), d in 1usize..7) {
        let a = random_spd(&mut RngStream::new(seed, 2), d, 0.0);
        prop_assert!(a.eigenvalues().iter().all(|&l| l >= 0.0));
        let sum: f64 = a.eigenvalues().iter().sum();
        prop_assert!((sum - a.matrix().trace()).abs() < 1e-10 * sum.max(1.0));
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), r in 1usize..5, k in 1usize..5, c in 1usize..5) {
        let mut rng = RngStream::new(seed, 3);
        let (a, b, x) = (gaussian(&mut rng, r, k), gaussian(&mut rng, k, c), gaussian(&mut rng, c, 2));
        let left = a.matmul(&b).unwrap().matmul(&x).unwrap();
        let right = a.matmul(&b.matmul(&x).unwrap()).unwrap();
        prop_assert!(rel_err(&left, &right) < 1e-12);
    }

    #[test]
    fn merged_stats_match_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
        let split = split.min(xs.len());
        let mut whole = MeanVar::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (MeanVar::default(), MeanVar::default());
        xs[..split].iter().for_each(|&x| a.push(x));
        xs[split..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert!((a.mean - whole.mean).abs() <= 1e-9 * (1.0 + whole.mean.abs()));
        prop_assert!((a.variance() - whole.variance()).abs() <= 1e-9 * (1.0 + whole.variance()));
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), id in any::<u64>()) {
        let (mut a, mut b) = (RngStream::new(seed, id), RngStream::new(seed, id));
        prop_assert_eq!(a.normal_vec(16), b.normal_vec(16));
        let (mut c, mut e) = (RngStream::new(seed, id).derive(3), RngStream::new(seed, id).derive(3));
        prop_assert_eq!(c.normal_vec(4), e.normal_vec(4));
    }
}

#[test]
fn sibling_streams_differ() {
    let root = RngStream::new(7, 0);
    let draws: Vec<Vec<f64>> = (0..8).map(|i| root.derive(i).normal_vec(4)).collect();
    for i in 0..draws.len() {
        for j in 0..i {
            assert_ne!(draws[i], draws[j]);
        }
    }
    assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
}

#[test]
fn indefinite_input_rejected() {
    let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -0.5]]).unwrap();
    assert!(matches!(SpdMatrix::new(m), Err(Error::NotPsd(_))));
    let m = Matrix::from_rows(&[vec![1.0, 0.3], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(SpdMatrix::new(m), Err(Error::Asymmetric(_))));
    let singular = SpdMatrix::diagonal(&[1.0, 0.0]).unwrap();
    assert!(matches!(singular.inv_sqrt(), Err(Error::Singular(_))));
    assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
    assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
}
