//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test --release --test acceptance`.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use boxavg::averaging::quadrature::MidpointRule;
use boxavg::averaging::{
    batch_box_averages, batch_indicator_counts, composition_defect, convergence_experiment, discrete_box_average,
    exact_from_f64, indicator_count, ContinuousMethod, DEFAULT_BUDGET,
};
use boxavg::cone::{
    condition_verdict, cross_section, family_from_str, BoxEntry, BoxFamily, Mode, Rational, Verdict,
    VerdictThresholds,
};
use boxavg::exact::ExactScalar;
use boxavg::submanifold::{
    character_flat_closed_form, genericity_failure_experiment, jacobian_check, reduction_check, FlatPiece,
    GenericityConfig,
};
use boxavg::sweepout::{continuous_pipeline, default_lambda_grid, discrete_pipeline, oscillation_scan, RatioConfig};
use boxavg::systems::{standard_suspension, IndicatorSet, Observable, TorusSet, TorusSystem};
use boxavg::towers::{rotation_tower, verify_tower, Tower};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn q(n: i128, d: i128) -> Rational {
    Rational::new(n, d)
}

fn brute_count(family: &BoxFamily, alpha: Rational, lambda: Rational) -> i64 {
    let r = alpha * lambda;
    let lo = family.entries().iter().map(|e| e.corner[0]).min().unwrap() - r;
    let hi = family.entries().iter().map(|e| e.corner[0]).max().unwrap() + r;
    let mut count = 0;
    let mut x = lo.ceil().to_integer();
    while Rational::from_integer(x) <= hi {
        let xr = Rational::from_integer(x);
        if family
            .entries()
            .iter()
            .any(|e| e.lengths[0] <= lambda && (xr - e.corner[0]).abs() <= alpha * (lambda - e.lengths[0]))
        {
            count += 1;
        }
        x += 1;
    }
    count
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let alphas = [q(1, 2), q(1, 1), q(2, 1)];
    let mut compared = 0;
    for _ in 0..200 {
        let k = rng.gen_range(1..=50);
        let entries = (0..k)
            .map(|_| BoxEntry::from_ints(&[rng.gen_range(-60..=60)], &[rng.gen_range(1..=30)]))
            .collect();
        let fam = BoxFamily::explicit(Mode::Discrete, entries).unwrap();
        for &a in &alphas {
            for l in 1..=50 {
                let lam = Rational::from_integer(l);
                let fast = cross_section(&fam, 0, a, lam).size;
                let slow = brute_count(&fam, a, lam);
                if fast != Rational::from_integer(slow as i128) {
                    return outcome(false, format!("mismatch at alpha={a}, lambda={l}: {fast} vs {slow}"));
                }
                compared += 1;
            }
        }
    }
    outcome(true, format!("{compared} cross-sections equal brute force"))
}

fn criterion_2() -> Outcome {
    let one = [Rational::from_integer(1)];
    let lambdas: Vec<Rational> = [10, 20, 40, 80, 160, 320, 500].iter().map(|&l| Rational::from_integer(l)).collect();
    let mut notes = Vec::new();
    for r in 1..=3 {
        let fam = family_from_str(&format!("linear:r={r}"), 2000).unwrap();
        let v = condition_verdict(&fam, 0, &one, &lambdas, VerdictThresholds::default()).unwrap();
        let worst = v.rows.iter().map(|row| row.ratio).fold(0.0, f64::max);
        if v.verdict != Verdict::Holds || worst > 4.0 || v.witness_a.is_none_or(|a| a > 4.0) {
            return outcome(false, format!("(k,{r}k): {:?}, max ratio {worst}", v.verdict));
        }
        notes.push(format!("r={r} max ratio {worst:.3}"));
    }
    let fam = family_from_str("sqrt", 10_000).unwrap();
    let grid: Vec<Rational> = [10, 20, 40, 80, 100].iter().map(|&l| Rational::from_integer(l)).collect();
    let v = condition_verdict(&fam, 0, &one, &grid, VerdictThresholds::default()).unwrap();
    let ok = v.verdict == Verdict::FailsEmpirically && v.growth_exponent >= 1.5;
    notes.push(format!("sqrt: {:?}, exponent {:.3}", v.verdict, v.growth_exponent));
    outcome(ok, notes.join("; "))
}

fn golden_rotation() -> TorusSystem {
    TorusSystem::rotation(vec![vec![ExactScalar::golden()]]).unwrap()
}

fn half_interval() -> Observable {
    Observable::indicator(TorusSet::interval(ExactScalar::zero(), ExactScalar::from_ratio(1, 2)))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let sys = golden_rotation();
    let fam = family_from_str("diagonal", 10_000).unwrap();
    let r = convergence_experiment(&sys, &half_interval(), &fam, 100, 3, false, DEFAULT_BUDGET).unwrap();
    let elapsed = start.elapsed();
    outcome(
        r.final_deviation <= 0.05 && elapsed < Duration::from_secs(30),
        format!("deviation {:.2e} at k = 10^4 in {elapsed:.2?}", r.final_deviation),
    )
}

fn random_rotation(d: usize) -> TorusSystem {
    let thetas = [ExactScalar::golden(), ExactScalar::sqrt_int(2), ExactScalar::sqrt_int(3)];
    let gens = (0..d)
        .map(|i| {
            let mut g = vec![ExactScalar::zero(); d];
            g[i] = thetas[i].fract();
            g
        })
        .collect();
    TorusSystem::rotation(gens).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for d in 1..=3usize {
        let sys = random_rotation(d);
        let max_len = [40, 12, 6][d - 1];
        let set = TorusSet::wrapped_box(
            &vec![ExactScalar::from_ratio(1, 5); d],
            &vec![ExactScalar::from_ratio(1, 2); d],
        );
        let ind = IndicatorSet::new(set.clone());
        for _ in 0..50 {
            let k = rng.gen_range(1..=8);
            let entries: Vec<BoxEntry> = (0..k)
                .map(|_| {
                    let c: Vec<i64> = (0..d).map(|_| rng.gen_range(-30..=30)).collect();
                    let l: Vec<i64> = (0..d).map(|_| rng.gen_range(1..=max_len)).collect();
                    BoxEntry::from_ints(&c, &l)
                })
                .collect();
            let fam = BoxFamily::explicit(Mode::Discrete, entries).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let freq: Vec<i64> = (0..d).map(|_| rng.gen_range(-3..=3)).collect();
            let chi = Observable::character(freq);
            let batch = batch_box_averages(&sys, &chi, &x, &fam, DEFAULT_BUDGET).unwrap();
            let counts = batch_indicator_counts(&sys, &ind, &x, &fam, DEFAULT_BUDGET).unwrap();
            for ((e, b), c) in fam.entries().iter().zip(&batch).zip(&counts) {
                let naive = discrete_box_average(&sys, &chi, &x, &e.int_corner(), &e.int_lengths()).unwrap();
                worst = worst.max((naive - b).norm());
                let direct = indicator_count(&sys, &ind, &x, &e.int_corner(), &e.int_lengths()).unwrap();
                if direct != *c {
                    return outcome(false, format!("count mismatch in d={d}: {direct} vs {c}"));
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max character difference {worst:.1e}; counts exact"))
}

fn criterion_5() -> Outcome {
    let sys = golden_rotation();
    let chi = Observable::character(vec![1]);
    let constant = Observable::constant(1, 2.5);
    let (nh, lh) = ([3i64], [7i64]);
    let mut sup = 0.0f64;
    let mut constant_c = 0.0;
    for x in [0.1, 0.37, 0.8] {
        for k in 1..=1000i64 {
            let r = composition_defect(&sys, &chi, &[x], (&[k], &[k]), (&nh, &lh)).unwrap();
            if !r.within_bound {
                return outcome(false, format!("k = {k}: defect {} above bound {}", r.defect, r.bound));
            }
            sup = sup.max(r.defect * k as f64);
            constant_c = r.constant;
            let c = composition_defect(&sys, &constant, &[x], (&[k], &[k]), (&nh, &lh)).unwrap();
            if c.defect != 0.0 {
                return outcome(false, format!("constant defect {} at k = {k}", c.defect));
            }
        }
    }
    outcome(
        sup <= constant_c,
        format!("sup defect*l_k = {sup:.4} <= C = {constant_c}; constants exact"),
    )
}

fn criterion_6() -> Outcome {
    let theta = ExactScalar::golden();
    let tower = rotation_tower(&theta, 5, 0.5).unwrap();
    let expected = &ExactScalar::from_integer(5) * &(&theta * &ExactScalar::from_integer(3)).dist_to_int();
    let v = verify_tower(&Tower::Discrete(tower.clone()), 1);
    let ok = tower.coverage() == expected && v.disjoint && v.pairs_checked == 10;
    let b = tower.base().measure();
    let bad = tower.with_base(TorusSet::interval(ExactScalar::zero(), &b + &b));
    let bv = verify_tower(&Tower::Discrete(bad), 1);
    outcome(
        ok && !bv.disjoint && bv.witness.is_some(),
        format!(
            "coverage {} = {:.5}, {} pairs disjoint; corrupted witness {:?}",
            tower.coverage(),
            tower.coverage().to_f64(),
            v.pairs_checked,
            bv.witness
        ),
    )
}

fn criterion_7() -> Outcome {
    let fam = family_from_str("squares_unit", 400).unwrap();
    let grid = default_lambda_grid(32);
    let mut notes = Vec::new();
    let mut ok = true;
    for p in 1..=3u64 {
        let start = Instant::now();
        let cfg = RatioConfig {
            samples: 2000,
            seed: p,
            ..RatioConfig::default()
        };
        let o = discrete_pipeline(&fam, 0, p, true, &grid, &[ExactScalar::golden()], cfg).unwrap();
        let sys = match &o.tower {
            Tower::Discrete(t) => t.system().clone(),
            Tower::Suspension(_) => unreachable!(),
        };
        let inside = oscillation_scan(&sys, &o.sets.h, &fam, 1, o.plan.k_p, 1000, 0.05, p, DEFAULT_BUDGET).unwrap();
        let outside =
            oscillation_scan(&sys, &o.sets.h, &fam, o.plan.k_p + 1, fam.len(), 1000, 0.05, p, DEFAULT_BUDGET).unwrap();
        let elapsed = start.elapsed();
        let r = &o.ratio;
        let this = r.ratio >= ExactScalar::from_integer(p as i64)
            && o.sets.formula_holds
            && r.translates_disjoint
            && r.containment_holds
            && r.sampled.as_ref().is_some_and(|s| s.consistent)
            && r.witness.as_ref().is_some_and(|w| w.value == ExactScalar::one())
            && inside.samples_hitting_one > 0
            && outside.fraction_min_low > 0.0
            && elapsed < Duration::from_secs(10);
        ok &= this;
        notes.push(format!(
            "p={p}: ratio {} ({} hits, min<=eps {:.2}, {elapsed:.2?})",
            r.ratio, inside.samples_hitting_one, outside.fraction_min_low
        ));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (m, p) in [(1usize, 1u64), (1, 2), (1, 3)] {
        let fam = family_from_str(&format!("flat_piece:m={m}"), 128).unwrap();
        let o = continuous_pipeline(&fam, 0, p, &default_lambda_grid(16), None, 8).unwrap();
        let Tower::Suspension(t) = &o.tower else { unreachable!() };
        let fits = t.sides().iter().all(|l| (t.gamma() * l) <= ExactScalar::one());
        let this = fits && o.sets.formula_holds && o.verification.spot_failures == 0;
        ok &= this;
        notes.push(format!("m={m} p={p}: mu(H) = {}", o.sets.h_measure));
    }
    outcome(ok, notes.join("; "))
}

fn rational_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<BigRational> {
    (0..d)
        .map(|_| BigRational::new(BigInt::from(rng.gen_range(-4i64..=4)), BigInt::from(rng.gen_range(1i64..=3))))
        .collect()
}

fn random_piece(rng: &mut ChaCha8Rng, d: usize, m: usize) -> FlatPiece {
    loop {
        let u = rational_vec(rng, d);
        let v = (0..m).map(|_| rational_vec(rng, d)).collect();
        if let Ok(p) = FlatPiece::new(u, v, None) {
            return p;
        }
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst_char = 0.0f64;
    let mut exact = 0;
    let mut jac = 0;
    let total = 100;
    for i in 0..total {
        let (d, m) = [(2, 1), (3, 1), (3, 2)][i % 3];
        let piece = random_piece(&mut rng, d, m);
        let sys = standard_suspension(d, ExactScalar::from_ratio(1, rng.gen_range(3..=9))).unwrap();
        let x: Vec<ExactScalar> = (0..=d).map(|_| exact_from_f64(rng.gen::<f64>())).collect();
        let t = ExactScalar::from_ratio(rng.gen_range(5..=60), 8);
        let start: Vec<ExactScalar> = (0..=d).map(|_| ExactScalar::from_ratio(rng.gen_range(0..8), 8)).collect();
        let len: Vec<ExactScalar> = (0..=d).map(|_| ExactScalar::from_ratio(rng.gen_range(1..8), 8)).collect();
        let set = TorusSet::wrapped_box(&start, &len);
        let r = reduction_check(&sys, &Observable::indicator(set), &x, &piece, &t, ContinuousMethod::ExactIndicator)
            .unwrap();
        exact += (r.exact_equal == Some(true)) as usize;
        let freq: Vec<i64> = (0..=d).map(|_| rng.gen_range(-2..=2)).collect();
        let closed = character_flat_closed_form(&sys, &freq, &x, &piece, &t).unwrap();
        let rule = MidpointRule {
            tolerance: 1e-11,
            max_evaluations: 1 << 22,
            ..MidpointRule::default()
        };
        let rc = reduction_check(
            &sys,
            &Observable::character(freq),
            &x,
            &piece,
            &t,
            ContinuousMethod::TensorMidpoint(rule),
        )
        .unwrap();
        let dev: f64 = [(rc.flat.value - closed).norm(), (rc.boxed.value - closed).norm(), rc.difference]
            .into_iter()
            .fold(0.0, f64::max);
        worst_char = worst_char.max(dev);
        jac += jacobian_check(&piece, &t).unwrap().holds as usize;
    }
    outcome(
        exact == total && jac == total && worst_char <= 1e-8,
        format!("indicator exact {exact}/{total}, jacobian exact {jac}/{total}, character error {worst_char:.1e}"),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let piece = FlatPiece::new(
        vec![BigRational::from_integer(1.into()), BigRational::from_integer(0.into())],
        vec![vec![BigRational::from_integer(0.into()), BigRational::from_integer(1.into())]],
        None,
    )
    .unwrap();
    let r = genericity_failure_experiment(&piece, &GenericityConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let max = r.best.iter().map(|b| b.value).fold(0.0, f64::max);
    outcome(
        r.set_measure_value <= 0.1 && max >= 0.95 && r.gap >= 0.5 && elapsed < Duration::from_secs(120),
        format!(
            "mu(E) = {} = {:.4}, best flat average {max}, gap {:.3}, {elapsed:.2?}",
            r.set_measure, r.set_measure_value, r.gap
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("cone oracle equivalence", criterion_1),
        ("dichotomy examples", criterion_2),
        ("convergence under the cone condition", criterion_3),
        ("batch kernel equals direct sums", criterion_4),
        ("composition defect bound", criterion_5),
        ("tower exactness", criterion_6),
        ("sweepout ratio", criterion_7),
        ("continuous tower measure", criterion_8),
        ("flat-piece reduction", criterion_9),
        ("genericity failure", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        println!(
            "criterion {:>2} {} {name}: {} [{:.2?}]",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed()
        );
        failed += (!o.passed) as usize;
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
