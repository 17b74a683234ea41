use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;

use boxavg::averaging::{
    batch_indicator_counts, discrete_box_average, exact_from_f64, indicator_count, ContinuousMethod, DEFAULT_BUDGET,
};
use boxavg::cone::{cross_section, cross_section_prefix, orthant_split, BoxEntry, BoxFamily, Mode, Rational};
use boxavg::exact::ExactScalar;
use boxavg::submanifold::{reduction_check, FlatPiece};
use boxavg::systems::{standard_suspension, IndicatorSet, Observable, TorusSet, TorusSystem};
use boxavg::towers::{rotation_tower, verify_tower, Tower};

fn family_1d() -> impl Strategy<Value = BoxFamily> {
    prop::collection::vec((-40i64..=40, 1i64..=20), 1..=20).prop_map(|v| {
        let entries = v.iter().map(|&(c, l)| BoxEntry::from_ints(&[c], &[l])).collect();
        BoxFamily::explicit(Mode::Discrete, entries).unwrap()
    })
}

fn alpha() -> impl Strategy<Value = Rational> {
    (1i128..=8, 1i128..=4).prop_map(|(n, d)| Rational::new(n, d))
}

fn brute_count(family: &BoxFamily, alpha: Rational, lambda: Rational) -> i128 {
    let mut count = 0;
    for x in -500i128..=500 {
        let xr = Rational::from_integer(x);
        if family
            .entries()
            .iter()
            .any(|e| e.lengths[0] <= lambda && (xr - e.corner[0]).abs() <= alpha * (lambda - e.lengths[0]))
        {
            count += 1;
        }
    }
    count
}

fn scalar() -> impl Strategy<Value = ExactScalar> {
    (-6i64..=6, 1i64..=5, -4i64..=4, -4i64..=4).prop_map(|(a, d, b, c)| {
        let r2 = ExactScalar::sqrt_int(2);
        let r5 = ExactScalar::sqrt_int(5);
        &(&ExactScalar::from_ratio(a, d) + &(&ExactScalar::from_integer(b) * &r2))
            + &(&ExactScalar::from_ratio(c, 3) * &r5)
    })
}

fn eighths() -> impl Strategy<Value = ExactScalar> {
    (0i64..8).prop_map(|n| ExactScalar::from_ratio(n, 8))
}

fn set_2d() -> impl Strategy<Value = TorusSet> {
    (eighths(), eighths(), 1i64..8, 1i64..8).prop_map(|(a, b, l, m)| {
        TorusSet::wrapped_box(&[a, b], &[ExactScalar::from_ratio(l, 8), ExactScalar::from_ratio(m, 8)])
    })
}

fn golden() -> TorusSystem {
    TorusSystem::rotation(vec![vec![ExactScalar::golden()]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_section_matches_brute_force(fam in family_1d(), a in alpha(), l in 1i128..=40) {
        let lam = Rational::from_integer(l);
        prop_assert_eq!(cross_section(&fam, 0, a, lam).size, Rational::from_integer(brute_count(&fam, a, lam)));
    }

    #[test]
    fn cross_section_is_monotone(fam in family_1d(), a in alpha(), l in 1i128..=40, k in 1usize..=20) {
        let lam = Rational::from_integer(l);
        let base = cross_section(&fam, 0, a, lam);
        let wider = cross_section(&fam, 0, a * Rational::from_integer(2), lam);
        let longer = cross_section(&fam, 0, a, lam + Rational::from_integer(3));
        for x in base.lattice_points() {
            let xr = Rational::from_integer(x as i128);
            prop_assert!(wider.contains(xr));
            prop_assert!(longer.contains(xr));
        }
        let k = k.min(fam.len());
        let prefix = cross_section_prefix(&fam, 0, a, lam, k);
        prop_assert!(prefix.size <= base.size);
    }

    #[test]
    fn orthant_split_preserves_lattice_points(
        boxes in prop::collection::vec(((-6i64..=6, -6i64..=6), (1i64..=6, 1i64..=6)), 1..=4)
    ) {
        let entries = boxes.iter().map(|&((a, b), (l, m))| BoxEntry::from_ints(&[a, b], &[l, m])).collect();
        let fam = BoxFamily::explicit(Mode::Discrete, entries).unwrap();
        let split = orthant_split(&fam);
        for p in &split.pieces {
            prop_assert!(p.entry.corner.iter().all(|c| !c.is_negative()));
        }
        for (idx, &((a, b), (l, m))) in boxes.iter().enumerate() {
            for i in a..a + l {
                for j in b..b + m {
                    let pt = [i, j];
                    let hits = split
                        .pieces
                        .iter()
                        .filter(|p| p.source == idx)
                        .filter(|p| {
                            (0..2).all(|ax| {
                                let v = if pt[ax] < 0 { -1 - pt[ax] } else { pt[ax] };
                                let vr = Rational::from_integer(v as i128);
                                let c = p.entry.corner[ax];
                                p.flips[ax] == (pt[ax] < 0) && c <= vr && vr < c + p.entry.lengths[ax]
                            })
                        })
                        .count();
                    prop_assert_eq!(hits, 1);
                }
            }
        }
    }

    #[test]
    fn exact_field_laws(a in scalar(), b in scalar(), c in scalar()) {
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&a - &a, ExactScalar::zero());
        if let Some(inv) = a.inverse() {
            prop_assert_eq!(&a * &inv, ExactScalar::one());
        } else {
            prop_assert_eq!(a, ExactScalar::zero());
        }
    }

    #[test]
    fn exact_order_matches_floats(a in scalar(), b in scalar()) {
        if (a.to_f64() - b.to_f64()).abs() > 1e-9 {
            prop_assert_eq!(a < b, a.to_f64() < b.to_f64());
        }
    }

    #[test]
    fn set_measure_inclusion_exclusion(a in set_2d(), b in set_2d()) {
        let one = ExactScalar::one();
        prop_assert_eq!(
            &a.union(&b).measure() + &a.intersection(&b).measure(),
            &a.measure() + &b.measure()
        );
        prop_assert_eq!(&a.complement().measure() + &a.measure(), one);
        prop_assert_eq!(&a.difference(&b).measure() + &a.intersection(&b).measure(), a.measure());
        prop_assert!(a.intersection(&a.complement()).measure() == ExactScalar::zero());
    }

    #[test]
    fn batch_counts_equal_direct(
        boxes in prop::collection::vec((-30i64..=30, 1i64..=40), 1..=10),
        x in 0.0f64..1.0,
        s in eighths(),
        len in 1i64..8,
    ) {
        let sys = golden();
        let entries = boxes.iter().map(|&(c, l)| BoxEntry::from_ints(&[c], &[l])).collect();
        let fam = BoxFamily::explicit(Mode::Discrete, entries).unwrap();
        let ind = IndicatorSet::new(TorusSet::wrapped_box(&[s], &[ExactScalar::from_ratio(len, 8)]));
        let counts = batch_indicator_counts(&sys, &ind, &[x], &fam, DEFAULT_BUDGET).unwrap();
        for (&(c, l), got) in boxes.iter().zip(counts) {
            prop_assert_eq!(indicator_count(&sys, &ind, &[x], &[c], &[l]).unwrap(), got);
        }
    }

    #[test]
    fn averages_are_bounded_normalized_and_monotone(
        c in -30i64..=30, l in 1i64..=60, x in 0.0f64..1.0,
        s in eighths(), len in 1i64..7, k in 0.0f64..5.0,
    ) {
        let sys = golden();
        let small = TorusSet::wrapped_box(std::slice::from_ref(&s), &[ExactScalar::from_ratio(len, 8)]);
        let big = TorusSet::wrapped_box(&[s], &[ExactScalar::from_ratio(len + 1, 8)]);
        let a = discrete_box_average(&sys, &Observable::indicator(small), &[x], &[c], &[l]).unwrap();
        let b = discrete_box_average(&sys, &Observable::indicator(big), &[x], &[c], &[l]).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.re) && a.im == 0.0);
        prop_assert!(a.re <= b.re);
        let constant = discrete_box_average(&sys, &Observable::constant(1, k), &[x], &[c], &[l]).unwrap();
        prop_assert!((constant.re - k).abs() < 1e-12);
    }

    #[test]
    fn tower_levels_are_disjoint(n in 1u64..=12, which in 0usize..3) {
        let theta = [ExactScalar::golden(), ExactScalar::sqrt_int(2).fract(), ExactScalar::sqrt_int(3).fract()][which].clone();
        if let Ok(t) = rotation_tower(&theta, n, 0.5) {
            let v = verify_tower(&Tower::Discrete(t), 0);
            prop_assert!(v.disjoint, "{:?}", v.witness);
            prop_assert_eq!(v.pairs_checked, n * (n - 1) / 2);
        }
    }
}

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flat_reduction_is_exact_for_indicators(
        u in prop::collection::vec((-3i64..=3, 1i64..=2), 2),
        v in prop::collection::vec((-3i64..=3, 1i64..=2), 2),
        t in 1i64..=24,
        x in prop::collection::vec(0.0f64..1.0, 3),
        s in prop::collection::vec(eighths(), 3),
        len in prop::collection::vec(1i64..8, 3),
    ) {
        let piece = match FlatPiece::new(
            u.iter().map(|&(n, d)| rational(n, d)).collect(),
            vec![v.iter().map(|&(n, d)| rational(n, d)).collect()],
            None,
        ) {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        let sys = standard_suspension(2, ExactScalar::from_ratio(1, 4)).unwrap();
        let x: Vec<ExactScalar> = x.into_iter().map(exact_from_f64).collect();
        let len: Vec<ExactScalar> = len.into_iter().map(|l| ExactScalar::from_ratio(l, 8)).collect();
        let set = TorusSet::wrapped_box(&s, &len);
        let r = reduction_check(
            &sys,
            &Observable::indicator(set),
            &x,
            &piece,
            &ExactScalar::from_ratio(t, 4),
            ContinuousMethod::ExactIndicator,
        )
        .unwrap();
        prop_assert_eq!(r.exact_equal, Some(true));
    }
}
