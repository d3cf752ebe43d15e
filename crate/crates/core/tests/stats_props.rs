use fexkit::stats::{isc, regress, t_two_sided_p, ttest_ind, IscAxis};
use nalgebra::DMatrix;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Correlation from the covariance and standard deviations, two passes.
fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sa * sb)
}

fn samples() -> impl Strategy<Value = Vec<f64>> {
    vec(-5.0..5.0f64, 2..30)
}

proptest! {
    #[test]
    fn ttest_shift_and_scale_invariance(a in samples(), b in samples(), c in -10.0..10.0f64, k in 0.1..10.0f64) {
        let Ok(base) = ttest_ind(&a, &b) else { return Ok(()) };
        prop_assume!(base.t.is_finite());
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let scale = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        let shifted = ttest_ind(&shift(&a), &shift(&b)).unwrap();
        let scaled = ttest_ind(&scale(&a), &scale(&b)).unwrap();
        let tol = 1e-12 * (1.0 + base.t.abs());
        prop_assert!((shifted.t - base.t).abs() <= tol, "{} vs {}", shifted.t, base.t);
        prop_assert!((scaled.t.abs() - base.t.abs()).abs() <= tol, "{} vs {}", scaled.t, base.t);
        prop_assert_eq!(ttest_ind(&b, &a).unwrap().t, -base.t);
        prop_assert_eq!(base.df, (a.len() + b.len() - 2) as f64);
    }

    #[test]
    fn p_value_decreases_with_abs_t(t1 in 0.0..50.0f64, t2 in 0.0..50.0f64, df in 1.0..200.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (p_lo, p_hi) = (t_two_sided_p(lo, df), t_two_sided_p(hi, df));
        prop_assert!(p_hi <= p_lo);
        prop_assert!((0.0..=1.0).contains(&p_lo));
        prop_assert_eq!(t_two_sided_p(-lo, df), p_lo);
    }

    #[test]
    fn regress_matches_normal_equations(seed in any::<u64>(), n in 8usize..40, k in 1usize..5, m in 1usize..3) {
        let mut x = gaussian(n, k, seed);
        x.column_mut(0).fill(1.0);
        let y = gaussian(n, m, seed ^ 0x9e37);
        let r = regress(&x, &y).unwrap();
        let xtx = x.transpose() * &x;
        let oracle = xtx.lu().solve(&(x.transpose() * &y)).unwrap();
        prop_assert!((&r.beta - &oracle).abs().max() <= 1e-8);
        // residuals orthogonal to every design column
        prop_assert!((x.transpose() * &r.residuals).abs().max() <= 1e-8);
        prop_assert_eq!(r.df, n - k);

        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        if perm.iter().collect::<std::collections::BTreeSet<_>>().len() == n {
            let px = DMatrix::from_fn(n, k, |i, j| x[(perm[i], j)]);
            let py = DMatrix::from_fn(n, m, |i, j| y[(perm[i], j)]);
            let rp = regress(&px, &py).unwrap();
            prop_assert!((&rp.beta - &r.beta).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn isc_matches_direct_pearson(seed in any::<u64>(), s in 2usize..6, t in 3usize..20, f in 2usize..6, by_time in any::<bool>()) {
        let subjects: Vec<DMatrix<f64>> = (0..s).map(|i| gaussian(t, f, seed.wrapping_add(i as u64))).collect();
        let axis = if by_time { IscAxis::Time } else { IscAxis::Features };
        let r = isc(&subjects, axis).unwrap();
        let series: Vec<Vec<f64>> = subjects
            .iter()
            .map(|m| if by_time {
                m.row_iter().map(|row| row.mean()).collect()
            } else {
                m.column_iter().map(|col| col.mean()).collect()
            })
            .collect();
        for i in 0..s {
            prop_assert_eq!(r.matrix[(i, i)], 1.0);
            for j in 0..s {
                let v = r.matrix[(i, j)];
                prop_assert_eq!(v, r.matrix[(j, i)]);
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert!((v - pearson_oracle(&series[i], &series[j])).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn isc_against_negated_copy_is_minus_one() {
    let a = gaussian(12, 4, 8);
    let r = isc(&[a.clone(), -a], IscAxis::Time).unwrap();
    assert!((r.matrix[(0, 1)] + 1.0).abs() <= 1e-12);
}
