use proptest::prelude::*;
use secure_hetnet::access::{candidate_power, split_files};
use secure_hetnet::rates::secrecy_rate;
use secure_hetnet::worstcase::assemble_worst_case;
use secure_hetnet::{generate_instance, AllocationState, LinkKey, NetworkInstance, Scenario, ScenarioParams};

fn instance(seed: u64) -> NetworkInstance {
    generate_instance(&ScenarioParams::default(), seed).unwrap()
}

#[test]
fn candidate_power_delivers_the_demand_in_isolation() {
    let mut checked = 0;
    for seed in 0..6 {
        let inst = instance(seed);
        let c = inst.mbits_per_rate();
        for b in 0..inst.num_bs() {
            for u in 0..inst.num_users() {
                for m in [0, 9, 17] {
                    let link = LinkKey::new(b, u, m, 0);
                    let mut alloc = AllocationState::empty(&inst);
                    let Some(cand) = candidate_power(&inst, &alloc, Scenario::Sfcd, &link) else {
                        continue;
                    };
                    let demand: f64 = inst.catalog.user_files(b, u).map(|k| inst.catalog.sizes_mbits[k]).sum();
                    if demand == 0.0 {
                        assert_eq!(cand.power, 0.0);
                        continue;
                    }
                    alloc.codebook[link.idx()] = 1.0;
                    alloc.access_power[link.idx()] = cand.power;
                    alloc.worst_case = assemble_worst_case(&inst, &alloc).unwrap();
                    let delivered = c * secrecy_rate(&inst, &alloc, b, u, m, 0).unwrap();
                    assert!(delivered >= demand * (1.0 - 1e-9), "seed {seed} {link:?}: {delivered} < {demand}");
                    assert!((cand.secrecy * c - demand).abs() <= 1e-12 * demand);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 20, "only {checked} links had a finite candidate power");
}

#[test]
fn candidate_power_is_tight_for_some_constraint() {
    let inst = instance(1);
    let c = inst.mbits_per_rate();
    for b in 0..inst.num_bs() {
        for u in 0..inst.num_users() {
            let link = LinkKey::new(b, u, 3, 0);
            let mut alloc = AllocationState::empty(&inst);
            let Some(cand) = candidate_power(&inst, &alloc, Scenario::Sfcd, &link) else {
                continue;
            };
            if cand.power == 0.0 {
                continue;
            }
            alloc.codebook[link.idx()] = 1.0;
            alloc.access_power[link.idx()] = 0.99 * cand.power;
            alloc.worst_case = assemble_worst_case(&inst, &alloc).unwrap();
            let demand: f64 = inst.catalog.user_files(b, u).map(|k| inst.catalog.sizes_mbits[k]).sum();
            assert!(c * secrecy_rate(&inst, &alloc, b, u, 3, 0).unwrap() < demand);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn split_parts_cover_each_file(seed in 0u64..500) {
        let inst = instance(seed);
        let alloc = AllocationState::empty(&inst);
        let split = split_files(&inst, &alloc).unwrap();
        prop_assert_eq!(split.dim(), (inst.num_files(), inst.num_frames()));
        for k in 0..inst.num_files() {
            let row = split.row(k);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let size = inst.catalog.sizes_mbits[k];
            prop_assert!((row.sum() - size).abs() <= 1e-9 * size);
        }
    }
}
