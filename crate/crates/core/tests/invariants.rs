use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spd_gbw::batchnorm::{gbwbn_forward, scale_from_identity, GbwbnConfig, GbwbnState};
use spd_gbw::frechet::{frechet_variance, two_point_mean};
use spd_gbw::linalg::random::{random_spd, random_stiefel, random_symmetric};
use spd_gbw::linalg::{condition_number, rel_frobenius};
use spd_gbw::metrics::{bw_distance, bw_exp, bw_log, bw_manifold_transport};
use spd_gbw::network::{bimap_forward, logeig_vectorize, reeig_forward, vectorize_adjoint, vectorize_symmetric};
use spd_gbw::{SpdMatrix, SymmetricMatrix};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spd_pair(seed: u64, d: usize, log_kappa: f64) -> (SpdMatrix, SpdMatrix) {
    let mut r = rng(seed);
    let k = 10f64.powf(log_kappa);
    (random_spd(&mut r, d, k), random_spd(&mut r, d, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_metric(seed: u64, d in 2usize..7, lk in 0.0f64..3.0) {
        let mut r = rng(seed);
        let k = 10f64.powf(lk);
        let (x, y, z) = (random_spd(&mut r, d, k), random_spd(&mut r, d, k), random_spd(&mut r, d, k));
        let (dxy, dyx) = (bw_distance(&x, &y).unwrap(), bw_distance(&y, &x).unwrap());
        prop_assert!((dxy - dyx).abs() <= 1e-10 * (1.0 + dxy));
        prop_assert!(bw_distance(&x, &x).unwrap() <= 1e-6);
        let (dxz, dzy) = (bw_distance(&x, &z).unwrap(), bw_distance(&z, &y).unwrap());
        prop_assert!(dxy <= dxz + dzy + 1e-9);
    }

    #[test]
    fn exp_inverts_log(seed: u64, d in 2usize..9, lk in 0.0f64..4.0) {
        let (x, y) = spd_pair(seed, d, lk);
        let back = bw_exp(&x, &bw_log(&x, &y).unwrap()).unwrap();
        prop_assert!(rel_frobenius(back.as_matrix(), y.as_matrix()) <= 1e-8);
    }

    #[test]
    fn two_point_midpoint_halves_the_distance(seed: u64, d in 2usize..7, lk in 0.0f64..3.0) {
        let (x, y) = spd_pair(seed, d, lk);
        let m = two_point_mean(&x, &y, 0.5).unwrap();
        let full = bw_distance(&x, &y).unwrap();
        prop_assert!((bw_distance(&x, &m).unwrap() - 0.5 * full).abs() <= 1e-7 * (1.0 + full));
        prop_assert!((bw_distance(&m, &y).unwrap() - 0.5 * full).abs() <= 1e-7 * (1.0 + full));
    }

    #[test]
    fn scaling_toward_identity_stays_spd(seed: u64, d in 2usize..9, lk in 0.0f64..6.0, s in 0.05f64..1.0) {
        let mut r = rng(seed);
        let x = random_spd(&mut r, d, 10f64.powf(lk));
        let id = SpdMatrix::identity(d);
        let y = scale_from_identity(&x, s).unwrap();
        let (before, after) = (bw_distance(&x, &id).unwrap(), bw_distance(&y, &id).unwrap());
        prop_assert!((after - s * before).abs() <= 1e-9 * (1.0 + before));
    }

    #[test]
    fn transport_between_commuting_points_preserves_spd(seed: u64, d in 2usize..7) {
        let mut r = rng(seed);
        let diag = |r: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..d).map(|_| r.random_range(0.2..5.0)).collect();
            SpdMatrix::from_diagonal(&v).unwrap()
        };
        let (a, b) = (diag(&mut r), diag(&mut r));
        let p = random_spd(&mut r, d, 3.0);
        // Stay inside the geodesic domain: p close to a.
        let p = two_point_mean(&a, &p, 0.2).unwrap();
        match bw_manifold_transport(&a, &b, &p) {
            Ok(m) => {
                prop_assert!(m.eig().min_value() > 0.0);
                let back = bw_manifold_transport(&b, &a, &m).unwrap();
                prop_assert!(rel_frobenius(back.as_matrix(), p.as_matrix()) <= 1e-8);
            }
            Err(e) => prop_assert!(e.is_numerical(), "{}", e),
        }
    }

    #[test]
    fn variance_is_nonnegative_and_vanishes_on_repeats(seed: u64, d in 2usize..6, n in 1usize..6) {
        let mut r = rng(seed);
        let batch: Vec<SpdMatrix> = (0..n).map(|_| random_spd(&mut r, d, 50.0)).collect();
        let m = batch[0].clone();
        prop_assert!(frechet_variance(&batch, &m, 1.0).unwrap() >= 0.0);
        let same = vec![m.clone(); n];
        prop_assert!(frechet_variance(&same, &m, 1.0).unwrap() <= 1e-10);
    }

    #[test]
    fn bn_outputs_are_spd(seed: u64, d in 2usize..7, n in 2usize..9, theta in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0])) {
        let mut r = rng(seed);
        let batch: Vec<SpdMatrix> = (0..n).map(|_| random_spd(&mut r, d, 1e3)).collect();
        let mut st = GbwbnState::new(d, GbwbnConfig { theta, ..GbwbnConfig::default() }).unwrap();
        // Domain exits are typed errors, never invalid matrices.
        match gbwbn_forward(&batch, &mut st) {
            Ok(out) => {
                prop_assert_eq!(out.len(), n);
                for y in out {
                    prop_assert!(y.eig().min_value() > 0.0);
                }
            }
            Err(e) => prop_assert!(e.is_numerical(), "{}", e),
        }
    }

    #[test]
    fn bimap_and_reeig_preserve_spd(seed: u64, d in 2usize..9, k in 1usize..9, lk in 0.0f64..8.0) {
        let k = k.min(d);
        let mut r = rng(seed);
        let x = random_spd(&mut r, d, 10f64.powf(lk));
        let w = random_stiefel(&mut r, d, k);
        let y = bimap_forward(&w, &x).unwrap();
        prop_assert_eq!(y.dim(), k);
        let z = reeig_forward(&y, 1e-4);
        prop_assert!(z.eig().min_value() >= 1e-4 * (1.0 - 1e-12));
        prop_assert!(condition_number(&z) <= z.eig().max_value() / 1e-4 * (1.0 + 1e-12));
        let again = reeig_forward(&z, 1e-4);
        prop_assert!(rel_frobenius(again.as_matrix(), z.as_matrix()) <= 1e-12);
    }

    #[test]
    fn logeig_vector_norm_is_the_log_norm(seed: u64, d in 1usize..9, lk in 0.0f64..8.0) {
        let mut r = rng(seed);
        let x = random_spd(&mut r, d, 10f64.powf(lk));
        let v = logeig_vectorize(&x);
        prop_assert_eq!(v.len(), d * (d + 1) / 2);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let expect = x.log().frobenius_norm();
        prop_assert!((norm - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn vectorize_adjoint_is_the_adjoint(seed: u64, d in 1usize..8) {
        let mut r = rng(seed);
        let a = random_symmetric(&mut r, d);
        let g: Vec<f64> = vectorize_symmetric(random_symmetric(&mut r, d).as_matrix());
        let lhs: f64 = vectorize_symmetric(a.as_matrix()).iter().zip(&g).map(|(p, q)| p * q).sum();
        let rhs = a.as_matrix().dot(&vectorize_adjoint(&g, d));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn matrices_round_trip_through_json(seed: u64, d in 1usize..6) {
        let mut r = rng(seed);
        let s = random_symmetric(&mut r, d);
        let back: SymmetricMatrix = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(back.as_matrix(), s.as_matrix());
        let x = random_spd(&mut r, d, 1e6);
        let back: SpdMatrix = serde_json::from_str(&serde_json::to_string(&x).unwrap()).unwrap();
        prop_assert_eq!(back.as_matrix(), x.as_matrix());
    }
}
