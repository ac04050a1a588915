use proptest::prelude::*;

use ridegym::dual::{
    assign_all, brute_force_oracle, dual_value, instance_hash, optimal_coupon, solve_lambda, write_oracle_csv,
    AllocationProblem, OracleRecord,
};

fn problem() -> impl Strategy<Value = AllocationProblem> {
    (1usize..=5, 1usize..=3).prop_flat_map(|(n, h)| {
        (
            prop::collection::vec(prop::collection::vec(0.01f64..0.99, h), n),
            prop::collection::vec(5.0f64..40.0, n),
            prop::collection::vec(0.01f64..0.1, h - 1),
            0.0f64..0.15,
        )
            .prop_map(|(z, g, steps, b)| {
                let mut coupons = vec![0.0];
                for s in steps {
                    coupons.push(coupons.last().unwrap() + s);
                }
                AllocationProblem::new(z, g, coupons, b).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dual_bounds_the_exhaustive_optimum(p in problem(), l in 0.0f64..3.0) {
        let best = brute_force_oracle(&p).unwrap();
        prop_assert!(dual_value(&p, l) <= -best.completions + 1e-9);
        let star = solve_lambda(&p).unwrap();
        prop_assert!(dual_value(&p, star) <= -best.completions + 1e-9);
    }

    #[test]
    fn solved_multiplier_beats_every_probe(p in problem(), probes in prop::collection::vec(0.0f64..1.0, 8)) {
        let (lb, ub) = p.default_lambda_bounds();
        let star = solve_lambda(&p).unwrap();
        prop_assert!((lb..=ub).contains(&star));
        let q = dual_value(&p, star);
        for u in probes {
            prop_assert!(dual_value(&p, lb + u * (ub - lb)) <= q + 1e-7);
        }
    }

    #[test]
    fn dual_is_concave(p in problem(), a in 0.0f64..2.0, b in 0.0f64..2.0, w in 0.0f64..1.0) {
        let mid = (1.0 - w) * a + w * b;
        let chord = (1.0 - w) * dual_value(&p, a) + w * dual_value(&p, b);
        prop_assert!(dual_value(&p, mid) >= chord - 1e-9);
    }

    #[test]
    fn zero_multiplier_takes_the_most_likely_coupon(p in problem()) {
        for (i, row) in p.z.iter().enumerate() {
            let j = optimal_coupon(&p, i, 0.0);
            prop_assert!(row.iter().all(|&v| v <= row[j]));
        }
    }

    #[test]
    fn larger_multiplier_never_raises_spend_rate(p in problem(), a in 0.0f64..2.0, d in 0.0f64..2.0) {
        let lo = p.evaluate(&assign_all(&p, a)).slack(p.budget_rate);
        let hi = p.evaluate(&assign_all(&p, a + d)).slack(p.budget_rate);
        prop_assert!(hi <= lo + 1e-9);
    }
}

#[test]
fn oracle_records_dump_to_csv() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut records = Vec::new();
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let z = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.05..0.95)).collect()).collect();
        let g = (0..n).map(|_| rng.random_range(5.0..40.0)).collect();
        let p = AllocationProblem::new(z, g, vec![0.0, 0.05, 0.1], 0.05).unwrap();
        let lambda = solve_lambda(&p).unwrap();
        records.push(OracleRecord {
            instance_hash: instance_hash(&p),
            lambda,
            primal: brute_force_oracle(&p).unwrap().completions,
            dual: -dual_value(&p, lambda),
        });
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.csv");
    write_oracle_csv(&records, std::fs::File::create(&path).unwrap()).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 20);
    for r in rows {
        let primal: f64 = r[2].parse().unwrap();
        let dual: f64 = r[3].parse().unwrap();
        assert!(primal <= dual + 1e-6, "primal {primal} above dual bound {dual}");
    }
}
