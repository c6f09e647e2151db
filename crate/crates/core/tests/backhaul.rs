use ndarray::Array2;
use proptest::prelude::*;
use secure_hetnet::backhaul::{allocate_backhaul, round_subcarriers, solve_backhaul, solve_backhaul_power, BackhaulOutcome};
use secure_hetnet::{generate_instance, NetworkInstance, ScenarioParams};

fn instance(seed: u64) -> NetworkInstance {
    generate_instance(&ScenarioParams::default(), seed).unwrap()
}

/// Water-filling sum rate over parallel channels with gains `a` and budget `p`.
fn water_filling(a: &[f64], p: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = p + a.iter().map(|g| 1.0 / g).fold(0.0, f64::max);
    for _ in 0..200 {
        let level = 0.5 * (lo + hi);
        let used: f64 = a.iter().map(|g| (level - 1.0 / g).max(0.0)).sum();
        if used > p {
            hi = level;
        } else {
            lo = level;
        }
    }
    a.iter().map(|g| (1.0 + g * (lo - 1.0 / g).max(0.0)).log2()).sum()
}

#[test]
fn fixed_occupancy_power_is_water_filling() {
    for seed in 0..10 {
        let inst = instance(seed);
        let (nb, nn, nf) = (inst.num_bs(), inst.num_subcarriers(), inst.num_frames());
        let owner = Array2::from_shape_fn((nb, nn), |(b, n)| if n % nb == b { 1.0 } else { 0.0 });
        let zero = Array2::zeros((nb, nf));
        let sol = solve_backhaul_power(&inst, &zero, &owner, false).unwrap().solved().unwrap();
        let mut oracle = 0.0;
        for t in 0..nf {
            let gains: Vec<f64> = (0..nn)
                .map(|n| {
                    let b = n % nb;
                    inst.channels.backhaul_gain[[b, n, t]] / inst.channels.noise_bs[[b, n]]
                })
                .collect();
            oracle += water_filling(&gains, inst.backhaul_budget_w[t]);
        }
        assert!((sol.capacity - oracle).abs() <= 1e-6 * oracle, "seed {seed}: {} vs {oracle}", sol.capacity);
        for t in 0..nf {
            let total: f64 = sol.power.index_axis(ndarray::Axis(2), t).sum();
            assert!(total <= inst.backhaul_budget_w[t] * (1.0 + 1e-9));
        }
    }
}

#[test]
fn rounding_is_exclusive_with_thresholds() {
    let relaxed = Array2::from_shape_vec((2, 4), vec![0.9, 0.5, 0.4, 0.5, 0.1, 0.5, 0.6, 0.5]).unwrap();
    let rounded = round_subcarriers(&relaxed);
    assert_eq!(rounded, Array2::from_shape_vec((2, 4), vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
}

#[test]
fn unreachable_traffic_is_infeasible() {
    let inst = instance(2);
    let required = Array2::from_elem((inst.num_bs(), inst.num_frames()), 1e4);
    assert!(matches!(solve_backhaul(&inst, &required, true).unwrap(), BackhaulOutcome::Infeasible { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn allocation_meets_modest_traffic(seed in 0u64..200, share in 0.01f64..0.2) {
        let inst = instance(seed);
        let (nb, nf) = (inst.num_bs(), inst.num_frames());
        let free = solve_backhaul(&inst, &Array2::zeros((nb, nf)), false).unwrap().solved().unwrap();
        let per_link = share * free.capacity / (nb * nf) as f64;
        let required = Array2::from_elem((nb, nf), per_link);
        if let BackhaulOutcome::Solved(sol) = allocate_backhaul(&inst, &required, true).unwrap() {
            for n in 0..inst.num_subcarriers() {
                prop_assert!((0..nb).map(|b| sol.subcarrier[[b, n]]).sum::<f64>() <= 1.0);
                prop_assert!((0..nb).all(|b| sol.subcarrier[[b, n]] == 0.0 || sol.subcarrier[[b, n]] == 1.0));
            }
            for b in 0..nb {
                for t in 0..nf {
                    let cap: f64 = (0..inst.num_subcarriers())
                        .map(|n| sol.subcarrier[[b, n]] * (1.0 + sol.power[[b, n, t]] * inst.channels.backhaul_gain[[b, n, t]] / inst.channels.noise_bs[[b, n]]).log2())
                        .sum();
                    prop_assert!(cap >= per_link * (1.0 - 1e-6));
                }
            }
        }
    }
}
