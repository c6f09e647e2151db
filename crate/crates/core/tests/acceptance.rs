//! Acceptance suite: one PASS/FAIL line per criterion at desk scale.

use std::f64::consts::LN_2;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secure_hetnet::access::{dc_outer_loop, AccessConfig, AccessOutcome};
use secure_hetnet::caching::{baseline_placement, placement_traffic, CachingStrategy};
use secure_hetnet::constraints::{battery_trace, check_all, ConstraintId};
use secure_hetnet::experiments::{evaluate_metrics, set_param, MetricsReport};
use secure_hetnet::orchestrator::{solve, Mode, SolveOutput, SolverConfig};
use secure_hetnet::rates::{dc_split_eve, eve_rate, eve_rate_gradient, nominal_eve_channels, secrecy_rate, access_rate};
use secure_hetnet::worstcase::{assemble_worst_case, worst_case_lp};
use secure_hetnet::{generate_instance, AllocationState, LinkKey, NetworkInstance, Scenario, ScenarioParams};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Run {
    inst: NetworkInstance,
    scenario: Scenario,
    out: SolveOutput,
}

/// Every solver output produced by the suite, re-checked by the invariant criteria.
#[derive(Default)]
struct Pool {
    runs: Vec<Run>,
}

impl Pool {
    fn solve(&mut self, params: &ScenarioParams, seed: u64, scenario: Scenario, mode: Mode, cfg: &SolverConfig) -> MetricsReport {
        let inst = generate_instance(params, seed).expect("valid params");
        let out = solve(&inst, scenario, mode, cfg).expect("solver run");
        let metrics = evaluate_metrics(&inst, scenario, &out);
        self.runs.push(Run { inst, scenario, out });
        metrics
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / LN_2
}

/// `Σ_n η_nm f(n)` and the η-weighted mean noise, straight from the instance arrays.
fn codebook_sum(inst: &NetworkInstance, m: usize, f: impl Fn(usize) -> f64) -> f64 {
    (0..inst.num_subcarriers())
        .filter(|&n| inst.codebooks.incidence[[n, m]])
        .map(|n| inst.codebooks.proportion[[n, m]] * f(n))
        .sum()
}

fn codebook_noise(inst: &NetworkInstance, m: usize, f: impl Fn(usize) -> f64) -> f64 {
    let w = codebook_sum(inst, m, |_| 1.0);
    codebook_sum(inst, m, f) / w
}

/// Largest backhaul rate (bits/s/Hz) one BS owning every subcarrier can reach in frame `t`, by water-filling.
fn water_filling_capacity(inst: &NetworkInstance, b: usize, t: usize) -> f64 {
    let budget = inst.backhaul_budget_w[t];
    let inv: Vec<f64> = (0..inst.num_subcarriers())
        .map(|n| inst.channels.noise_bs[[b, n]] / inst.channels.backhaul_gain[[b, n, t]])
        .collect();
    let (mut lo, mut hi) = (0.0, budget + inv.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let level = 0.5 * (lo + hi);
        let used: f64 = inv.iter().map(|&v| (level - v).max(0.0)).sum();
        if used > budget {
            hi = level;
        } else {
            lo = level;
        }
    }
    inv.iter().map(|&v| log2_1p((lo - v).max(0.0) / v)).sum()
}

fn single_link_params() -> ScenarioParams {
    ScenarioParams {
        num_macro: 1,
        num_small: 0,
        users_per_bs: 1,
        num_eves: 1,
        num_subcarriers: 2,
        num_codebooks: 1,
        codebook_degree: 2,
        num_frames: 1,
        num_files: 2,
        initial_battery_j: 1e-5,
        ..ScenarioParams::default()
    }
}

fn grid_oracle(inst: &NetworkInstance, points: usize) -> f64 {
    let (b, u, m, t, q) = (0, 0, 0, 0, 0);
    let c = inst.mbits_per_rate();
    let a = codebook_sum(inst, m, |n| inst.channels.access_gain[[b, b, u, n, t]]);
    let sigma_u = codebook_noise(inst, m, |n| inst.channels.noise_user[[b, u, n]]);
    let e = codebook_sum(inst, m, |n| inst.channels.eve_upper(b, q, n, t));
    let sigma_e = codebook_noise(inst, m, |n| inst.channels.noise_eve[[q, n]]);
    let files: Vec<usize> = (0..inst.num_files()).filter(|&k| inst.catalog.requests[[b, u, k]]).collect();
    let demand: f64 = files.iter().map(|&k| inst.catalog.sizes_mbits[k]).sum();
    // best possible placement: cache requested files while they fit
    let mut room = inst.cache_capacity_mbits[b];
    let mut uncached = 0.0;
    for &k in &files {
        let size = inst.catalog.sizes_mbits[k];
        if size <= room {
            room -= size;
        } else {
            uncached += size;
        }
    }
    if uncached > c * water_filling_capacity(inst, b, t) {
        return 0.0;
    }
    let energy = inst.energy.initial_battery_j[b] + inst.energy.harvested_j[[b, t]];
    let emax = inst.energy.battery_capacity_j[b];
    let p_max = energy / inst.frame_duration();
    if p_max <= 0.0 {
        return 0.0;
    }
    let p_min = p_max * 1e-9;
    let mut best: f64 = 0.0;
    for i in 0..=points {
        let p = p_min * (p_max / p_min).powf(i as f64 / points as f64);
        let rs = (log2_1p(p * a / sigma_u) - log2_1p(p * e / sigma_e)).max(0.0);
        let spent = p * inst.frame_duration();
        let feasible = rs * c >= demand && spent <= energy && energy - spent <= emax;
        if feasible {
            best = best.max(rs / p);
        }
    }
    best
}

fn criterion_1(pool: &mut Pool) -> Verdict {
    let params = single_link_params();
    let cfg = SolverConfig::default();
    let mut worst_gap: f64 = 0.0;
    let mut worst_refine: f64 = 0.0;
    let mut nonzero = 0;
    let mut ok = true;
    for seed in 0..20 {
        let ee = pool.solve(&params, seed, Scenario::Sfcd, Mode::Joint, &cfg).energy_efficiency;
        let inst = &pool.runs.last().unwrap().inst;
        let coarse = grid_oracle(inst, 20_000);
        let fine = grid_oracle(inst, 40_000);
        let refine = if fine > 0.0 { (fine - coarse).abs() / fine } else { 0.0 };
        let gap = if fine > 0.0 { (ee - fine).abs() / fine } else { ee.abs() };
        if fine > 0.0 {
            nonzero += 1;
        }
        worst_gap = worst_gap.max(gap);
        worst_refine = worst_refine.max(refine);
        ok &= gap <= 0.05 && refine < 0.01;
    }
    verdict(
        ok && nonzero > 0,
        format!("20 seeds ({nonzero} with a feasible link): max |EE - oracle|/oracle = {worst_gap:.2e}, grid refinement change {worst_refine:.2e}"),
    )
}

fn two_by_two_params(epsilon: f64) -> ScenarioParams {
    ScenarioParams {
        num_macro: 1,
        num_small: 1,
        users_per_bs: 1,
        num_eves: 1,
        num_subcarriers: 2,
        num_codebooks: 1,
        codebook_degree: 2,
        num_frames: 1,
        num_files: 2,
        eve_uncertainty: epsilon,
        ..ScenarioParams::default()
    }
}

fn active_pair(inst: &NetworkInstance, rng: &mut ChaCha8Rng) -> AllocationState {
    let mut alloc = AllocationState::empty(inst);
    for b in 0..inst.num_bs() {
        alloc.codebook[[b, 0, 0, 0]] = 1.0;
        alloc.access_power[[b, 0, 0, 0]] = 10f64.powf(rng.gen_range(-7.0..-3.0));
    }
    alloc
}

fn corner_oracle(inst: &NetworkInstance, alloc: &AllocationState, b: usize) -> f64 {
    let (nb, nn, m, q, t) = (inst.num_bs(), inst.num_subcarriers(), 0, 0, 0);
    let noise = codebook_noise(inst, m, |n| inst.channels.noise_eve[[q, n]]);
    let mut best: f64 = 0.0;
    for mask in 0..(1u32 << (nb * nn)) {
        let h = |b2: usize, n: usize| {
            if mask >> (b2 * nn + n) & 1 == 1 {
                inst.channels.eve_upper(b2, q, n, t)
            } else {
                inst.channels.eve_lower(b2, q, n, t)
            }
        };
        let signal = alloc.access_power[[b, 0, m, t]] * codebook_sum(inst, m, |n| h(b, n));
        let interference: f64 = (0..nb)
            .filter(|&b2| b2 != b)
            .map(|b2| alloc.access_power[[b2, 0, m, t]] * codebook_sum(inst, m, |n| h(b2, n)))
            .sum();
        best = best.max(signal / (interference + noise));
    }
    best
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let inst = generate_instance(&two_by_two_params(0.5), 1000 + seed).unwrap();
        let alloc = active_pair(&inst, &mut rng);
        for b in 0..2 {
            let sol = worst_case_lp(&inst, &alloc, b, 0, 0, 0, 0).unwrap();
            let oracle = corner_oracle(&inst, &alloc, b);
            worst = worst.max((log2_1p(sol.sinr) - log2_1p(oracle)).abs());
        }
    }
    let mut exact = true;
    for seed in 0..100 {
        let inst = generate_instance(&two_by_two_params(0.0), 2000 + seed).unwrap();
        let mut alloc = active_pair(&inst, &mut rng);
        alloc.worst_case = assemble_worst_case(&inst, &alloc).unwrap();
        let nominal = nominal_eve_channels(&inst, 0, 0);
        for b in 0..2 {
            let expected = (access_rate(&inst, &alloc, b, 0, 0, 0).unwrap() - eve_rate(&inst, &alloc, b, 0, 0, 0, 0, nominal.view()).unwrap()).max(0.0);
            exact &= secrecy_rate(&inst, &alloc, b, 0, 0, 0).unwrap().to_bits() == expected.to_bits();
        }
    }
    verdict(
        worst <= 1e-8 && exact,
        format!("max |rate(LP) - rate(corners)| = {worst:.2e} over 200 links; zero-uncertainty secrecy bit-exact: {exact}"),
    )
}

/// Scheduled states taken from the pool, re-optimized from scratch.
fn dc_states(pool: &Pool, count: usize) -> Vec<(&NetworkInstance, &AllocationState, Scenario)> {
    pool.runs
        .iter()
        .filter(|r| !r.out.state.scheduled_links().is_empty())
        .take(count)
        .map(|r| (&r.inst, &r.out.state, r.scenario))
        .collect()
}

fn criterion_3(pool: &Pool) -> Verdict {
    let cfg = AccessConfig::default();
    let states = dc_states(pool, 100);
    let mut traces = 0;
    let mut monotone = true;
    let mut worst_gap: f64 = 0.0;
    let mut unconverged = 0;
    for (inst, state, scenario) in &states {
        if let AccessOutcome::Solved(sol) = dc_outer_loop(inst, state, *scenario, None, &cfg).unwrap() {
            for dk in &sol.trace.dinkelbach {
                traces += 1;
                monotone &= dk.chi.windows(2).all(|w| w[1] > w[0]);
                worst_gap = worst_gap.max(dk.gap.abs());
                if !dk.converged {
                    unconverged += 1;
                }
            }
        }
    }
    verdict(
        states.len() == 100 && monotone && worst_gap <= 1e-6,
        format!("{} instances, {traces} Dinkelbach runs: strictly increasing {monotone}, max final gap {worst_gap:.2e}, unconverged {unconverged}", states.len()),
    )
}

fn criterion_4(pool: &Pool) -> Verdict {
    let cfg = AccessConfig::default();
    let states = dc_states(pool, 100);
    let mut nonincreasing = 0;
    let mut worst_violation: f64 = f64::NEG_INFINITY;
    let mut solved = 0;
    for (inst, state, scenario) in &states {
        if let AccessOutcome::Solved(sol) = dc_outer_loop(inst, state, *scenario, None, &cfg).unwrap() {
            solved += 1;
            let total = sol.trace.total_eve_rate();
            if total.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)) {
                nonincreasing += 1;
            }
            let report = check_all(inst, &sol.state, *scenario, 1e-6).unwrap();
            worst_violation = worst_violation.max(report.worst_of(ConstraintId::DownlinkTraffic));
        }
    }
    verdict(
        solved == 100 && nonincreasing == solved && worst_violation <= 1e-6,
        format!("{nonincreasing}/{solved} eavesdropper-rate traces nonincreasing; worst final secrecy-demand residual {worst_violation:.2e} Mbit"),
    )
}

fn criterion_5() -> Verdict {
    let params = ScenarioParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let mut seed = 0;
    while points < 100 {
        let inst = generate_instance(&params, 3000 + seed).unwrap();
        seed += 1;
        let mut alloc = AllocationState::empty(&inst);
        for b in 0..inst.num_bs() {
            for t in 0..inst.num_frames() {
                let u = rng.gen_range(0..inst.num_users());
                let m = rng.gen_range(0..inst.num_codebooks());
                alloc.codebook[[b, u, m, t]] = 1.0;
                alloc.access_power[[b, u, m, t]] = 10f64.powf(rng.gen_range(-7.0..-3.0));
            }
        }
        alloc.worst_case = assemble_worst_case(&inst, &alloc).unwrap();
        for link in alloc.scheduled_links() {
            let LinkKey { b, u, m, t } = link;
            let analytic = eve_rate_gradient(&inst, &alloc, b, u, 0, m, t).unwrap();
            let p = alloc.access_power[link.idx()];
            let h = 1e-4 * p;
            let at = |x: f64| {
                let mut probe = alloc.clone();
                probe.access_power[link.idx()] = x;
                dc_split_eve(&inst, &probe, b, u, 0, m, t).unwrap().0
            };
            let numeric = (at(p + h) - at(p - h)) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(f64::MIN_POSITIVE));
            points += 1;
        }
    }
    verdict(worst <= 1e-5, format!("{points} points: max relative error {worst:.2e}"))
}

/// Independent evaluation of the constraint residuals that do not need the worst-case machinery.
fn oracle_residuals(inst: &NetworkInstance, a: &AllocationState, scenario: Scenario) -> Vec<(ConstraintId, f64)> {
    let (nb, nu, nm, nf) = inst.link_dims();
    let (nn, nk) = (inst.num_subcarriers(), inst.num_files());
    let c = inst.mbits_per_rate();
    let mut out = Vec::new();
    let mut worst = |id: ConstraintId, v: f64| out.push((id, v));
    let part = |k: usize, t: usize| match scenario {
        Scenario::Sfcd => inst.catalog.sizes_mbits[k],
        Scenario::Mfcd => a.split[[k, t]],
    };
    for b in 0..nb {
        let cached: f64 = (0..nk).map(|k| a.cache[[b, k]] * inst.catalog.sizes_mbits[k]).sum();
        worst(ConstraintId::CacheCapacity, cached - inst.cache_capacity_mbits[b]);
        let (mut spent, mut got) = (0.0, inst.energy.initial_battery_j[b]);
        for t in 0..nf {
            let power: f64 = (0..nu).flat_map(|u| (0..nm).map(move |m| (u, m))).map(|(u, m)| a.codebook[[b, u, m, t]] * a.access_power[[b, u, m, t]]).sum();
            spent += power * inst.frame_duration();
            got += inst.energy.harvested_j[[b, t]];
            worst(ConstraintId::EnergyCausality, spent - got);
            worst(ConstraintId::BatteryOverflow, got - spent - inst.energy.battery_capacity_j[b]);
            let links: f64 = (0..nu).flat_map(|u| (0..nm).map(move |m| (u, m))).map(|(u, m)| a.codebook[[b, u, m, t]]).sum();
            let need: f64 = (0..nk)
                .filter(|&k| (0..nu).any(|u| inst.catalog.requests[[b, u, k]]))
                .map(|k| (1.0 - a.cache[[b, k]]) * part(k, t))
                .sum();
            let capacity: f64 = (0..nn)
                .map(|n| a.backhaul_subcarrier[[b, n]] * log2_1p(a.backhaul_power[[b, n, t]] * inst.channels.backhaul_gain[[b, n, t]] / inst.channels.noise_bs[[b, n]]))
                .sum();
            worst(ConstraintId::BackhaulTraffic, if links == 0.0 { 0.0 } else { links * need } - c * capacity);
            for u in 0..nu {
                let demand: f64 = (0..nk).filter(|&k| inst.catalog.requests[[b, u, k]]).map(|k| part(k, t)).sum();
                for m in 0..nm {
                    let s = a.codebook[[b, u, m, t]];
                    if s <= 0.0 {
                        worst(ConstraintId::DownlinkTraffic, 0.0);
                        continue;
                    }
                    let tx = |b2: usize| (0..nu).map(|u2| a.codebook[[b2, u2, m, t]] * a.access_power[[b2, u2, m, t]]).sum::<f64>();
                    let signal = s * a.access_power[[b, u, m, t]] * codebook_sum(inst, m, |n| inst.channels.access_gain[[b, b, u, n, t]]);
                    let interference: f64 = (0..nb).filter(|&x| x != b).map(|b2| tx(b2) * codebook_sum(inst, m, |n| inst.channels.access_gain[[b2, b, u, n, t]])).sum();
                    let rd = log2_1p(signal / (interference + codebook_noise(inst, m, |n| inst.channels.noise_user[[b, u, n]])));
                    let mut re: f64 = 0.0;
                    for q in 0..inst.num_eves() {
                        let h = |b2: usize, n: usize| inst.channels.eve_gain_est[[b2, q, n, t]];
                        let es = s * a.access_power[[b, u, m, t]] * codebook_sum(inst, m, |n| h(b, n));
                        let ei: f64 = (0..nb).filter(|&x| x != b).map(|b2| tx(b2) * codebook_sum(inst, m, |n| h(b2, n))).sum();
                        re = re.max(log2_1p(es / (ei + codebook_noise(inst, m, |n| inst.channels.noise_eve[[q, n]]))));
                    }
                    worst(ConstraintId::DownlinkTraffic, s * (demand - c * (rd - re).max(0.0)));
                }
            }
        }
    }
    for n in 0..nn {
        for t in 0..nf {
            let count: f64 = (0..nm)
                .filter(|&m| inst.codebooks.incidence[[n, m]])
                .flat_map(|m| (0..nb).flat_map(move |b| (0..nu).map(move |u| (b, u, m))))
                .map(|(b, u, m)| a.codebook[[b, u, m, t]])
                .sum();
            worst(ConstraintId::SubcarrierReuse, count - inst.reuse_cap as f64);
        }
        let owners: f64 = (0..nb).map(|b| a.backhaul_subcarrier[[b, n]]).sum();
        worst(ConstraintId::BackhaulExclusivity, owners - 1.0);
    }
    for b in 0..nb {
        match scenario {
            Scenario::Sfcd => {
                worst(ConstraintId::CodebookExclusivity, a.codebook.index_axis(ndarray::Axis(0), b).sum() - 1.0);
            }
            Scenario::Mfcd => {
                for t in 0..nf {
                    let total: f64 = (0..nu).flat_map(|u| (0..nm).map(move |m| (u, m))).map(|(u, m)| a.codebook[[b, u, m, t]]).sum();
                    worst(ConstraintId::CodebookExclusivity, total - 1.0);
                }
            }
        }
    }
    for t in 0..nf {
        let used: f64 = (0..nb).flat_map(|b| (0..nn).map(move |n| (b, n))).map(|(b, n)| a.backhaul_subcarrier[[b, n]] * a.backhaul_power[[b, n, t]]).sum();
        worst(ConstraintId::BackhaulPowerBudget, used - inst.backhaul_budget_w[t]);
    }
    if scenario == Scenario::Mfcd {
        for k in 0..nk {
            let total: f64 = (0..nf).map(|t| a.split[[k, t]]).sum();
            worst(ConstraintId::SplitCompleteness, (total - inst.catalog.sizes_mbits[k]).abs());
        }
    }
    out
}

fn random_allocation(inst: &NetworkInstance, rng: &mut ChaCha8Rng) -> AllocationState {
    let (nb, nu, nm, nf) = inst.link_dims();
    let (nn, nk) = (inst.num_subcarriers(), inst.num_files());
    let mut a = AllocationState::empty(inst);
    let density = rng.gen_range(0.0..0.3);
    a.codebook = Array4::from_shape_fn((nb, nu, nm, nf), |_| if rng.gen_bool(density) { 1.0 } else { 0.0 });
    let scale = 10f64.powf(rng.gen_range(-8.0..-3.0));
    a.access_power = Array4::from_shape_fn((nb, nu, nm, nf), |_| scale * rng.gen_range(0.0..2.0));
    a.cache = Array2::from_shape_fn((nb, nk), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    a.backhaul_subcarrier = Array2::from_shape_fn((nb, nn), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let bscale = inst.backhaul_budget_w[0] * rng.gen_range(0.05..0.5);
    a.backhaul_power = Array3::from_shape_fn((nb, nn, nf), |_| bscale * rng.gen_range(0.0..1.0));
    for k in 0..nk {
        let w: f64 = rng.gen_range(0.0..1.0);
        let size = inst.catalog.sizes_mbits[k];
        a.split[[k, 0]] = w * size;
        a.split[[k, nf - 1]] += (1.0 - w) * size;
    }
    a
}

const CHECKED: [ConstraintId; 11] = [
    ConstraintId::CacheCapacity,
    ConstraintId::EnergyCausality,
    ConstraintId::BatteryOverflow,
    ConstraintId::BackhaulTraffic,
    ConstraintId::DownlinkTraffic,
    ConstraintId::SubcarrierReuse,
    ConstraintId::BackhaulExclusivity,
    ConstraintId::CodebookExclusivity,
    ConstraintId::BackhaulPowerBudget,
    ConstraintId::SplitCompleteness,
    ConstraintId::CodebookDomain,
];

fn criterion_6(pool: &Pool) -> Verdict {
    let mut infeasible = 0;
    let mut battery_bad = 0;
    for run in &pool.runs {
        let report = check_all(&run.inst, &run.out.state, run.scenario, 1e-6).unwrap();
        if !report.feasible {
            infeasible += 1;
        }
        let trace = battery_trace(&run.inst, &run.out.state);
        let emax = run.inst.energy.battery_capacity_j[0];
        if trace.iter().any(|&e| e < -1e-12 || e > emax + 1e-12) {
            battery_bad += 1;
        }
    }
    let params: ScenarioParams = serde_json::from_str(include_str!("../../../configs/tiny.json")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut disagreements = 0;
    let mut flag_mismatch = 0;
    let mut feasible_count = 0;
    let instances: Vec<NetworkInstance> = (0..20).map(|s| generate_instance(&params, 4000 + s).unwrap()).collect();
    for i in 0..10_000 {
        let inst = &instances[i % instances.len()];
        let scenario = if i % 2 == 0 { Scenario::Sfcd } else { Scenario::Mfcd };
        let alloc = random_allocation(inst, &mut rng);
        let report = check_all(inst, &alloc, scenario, 1e-6).unwrap();
        let oracle = oracle_residuals(inst, &alloc, scenario);
        let mut oracle_feasible = true;
        for id in CHECKED.iter().copied().filter(|&id| id != ConstraintId::CodebookDomain) {
            let expect = oracle.iter().filter(|(o, _)| *o == id).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
            let got = report.worst_of(id);
            if expect.is_finite() || got.is_finite() {
                if (expect - got).abs() > 1e-9 * expect.abs().max(1e-9) {
                    disagreements += 1;
                }
                oracle_feasible &= expect <= 1e-6;
            }
        }
        let lib_feasible = CHECKED
            .iter()
            .filter(|&&id| id != ConstraintId::CodebookDomain)
            .all(|&id| report.worst_of(id) <= 1e-6);
        if lib_feasible != oracle_feasible {
            flag_mismatch += 1;
        }
        if oracle_feasible {
            feasible_count += 1;
        }
    }
    verdict(
        infeasible == 0 && battery_bad == 0 && disagreements == 0 && flag_mismatch == 0,
        format!(
            "{} solver outputs: {infeasible} infeasible, {battery_bad} battery excursions; 10000 random allocations ({feasible_count} feasible): {disagreements} residual and {flag_mismatch} verdict disagreements",
            pool.runs.len()
        ),
    )
}

fn criterion_7() -> Verdict {
    let params = ScenarioParams::default();
    let mut ordered = 0;
    let (mut lp_sum, mut none_sum) = (0.0, 0.0);
    for seed in 0..50 {
        let inst = generate_instance(&params, seed).unwrap();
        let traffic = |s: CachingStrategy| placement_traffic(&inst, &baseline_placement(&inst, s, inst.rng_seed).unwrap());
        let (lp, popular, random, none) = (
            traffic(CachingStrategy::Lp),
            traffic(CachingStrategy::Popular),
            traffic(CachingStrategy::Random),
            traffic(CachingStrategy::None),
        );
        if lp <= popular + 1e-12 && popular <= random + 1e-12 && random <= none + 1e-12 {
            ordered += 1;
        }
        lp_sum += lp;
        none_sum += none;
    }
    verdict(
        ordered >= 45 && lp_sum < none_sum,
        format!("ordering LP <= popular <= random <= none on {ordered}/50 seeds; mean traffic LP {:.4} vs none {:.4} Mbit", lp_sum / 50.0, none_sum / 50.0),
    )
}

const RHO_VALUES: [f64; 3] = [2e-7, 5e-7, 2e-6];

fn criterion_8(pool: &mut Pool, seeds: u64) -> Verdict {
    let base = ScenarioParams::default();
    let optimized = SolverConfig::default();
    let uniform = SolverConfig {
        optimize_split: false,
        ..SolverConfig::default()
    };
    let mut ok = true;
    let mut lines = Vec::new();
    for &rho in &RHO_VALUES {
        let params = set_param(&base, "rho", rho).unwrap();
        let (mut opt, mut uni, mut sfcd) = (Vec::new(), Vec::new(), Vec::new());
        for seed in 0..seeds {
            opt.push(pool.solve(&params, seed, Scenario::Mfcd, Mode::Joint, &optimized).energy_efficiency);
            uni.push(pool.solve(&params, seed, Scenario::Mfcd, Mode::Joint, &uniform).energy_efficiency);
            sfcd.push(pool.solve(&params, seed, Scenario::Sfcd, Mode::Joint, &optimized).energy_efficiency);
        }
        let (o, u, s) = (mean(&opt), mean(&uni), mean(&sfcd));
        ok &= o >= u && u >= s;
        lines.push(format!("rho={rho:e}: {o:.3e} >= {u:.3e} >= {s:.3e}"));
    }
    verdict(ok, format!("{seeds} paired seeds, mean EE MFCD-opt/uniform/SFCD: {}", lines.join("; ")))
}

fn criterion_9(pool: &mut Pool, seeds: u64) -> Verdict {
    let params = set_param(&ScenarioParams::default(), "rho", RHO_VALUES[1]).unwrap();
    let cfg = SolverConfig::default();
    let mut every = true;
    let (mut ee_j, mut ee_d, mut bh_j, mut bh_d) = (0.0, 0.0, 0.0, 0.0);
    for scenario in [Scenario::Sfcd, Scenario::Mfcd] {
        for seed in 0..seeds {
            let joint = pool.solve(&params, seed, scenario, Mode::Joint, &cfg);
            let disjoint = pool.solve(&params, seed, scenario, Mode::Disjoint, &cfg);
            every &= joint.energy_efficiency >= disjoint.energy_efficiency && joint.backhaul_rate >= disjoint.backhaul_rate;
            ee_j += joint.energy_efficiency;
            ee_d += disjoint.energy_efficiency;
            bh_j += joint.backhaul_rate;
            bh_d += disjoint.backhaul_rate;
        }
    }
    let n = 2.0 * seeds as f64;
    verdict(
        every && ee_j > ee_d && bh_j > bh_d,
        format!(
            "{} paired runs, joint >= disjoint on every run: {every}; mean EE {:.3e} vs {:.3e}, mean backhaul rate {:.3} vs {:.3}",
            2 * seeds,
            ee_j / n,
            ee_d / n,
            bh_j / n,
            bh_d / n
        ),
    )
}

fn criterion_10(pool: &mut Pool, seeds: u64) -> Verdict {
    let base = ScenarioParams::default();
    let cfg = SolverConfig::default();
    let sweep = |pool: &mut Pool, axis: &str, values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let params = set_param(&base, axis, v).unwrap();
                let rates: Vec<f64> = (0..seeds)
                    .map(|seed| pool.solve(&params, seed, Scenario::Sfcd, Mode::Joint, &cfg).sum_secrecy_rate)
                    .collect();
                mean(&rates)
            })
            .collect()
    };
    let eps = [0.0, 0.25, 0.5, 0.75];
    let eps_means = sweep(pool, "epsilon", &eps);
    let qs = [1.0, 2.0];
    let q_means = sweep(pool, "q", &qs);
    let rho_eps = spearman(&eps, &eps_means);
    let rho_q = spearman(&qs, &q_means);
    let nonincreasing = |m: &[f64]| m.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        nonincreasing(&eps_means) && nonincreasing(&q_means) && rho_eps <= 0.0 && rho_q <= 0.0,
        format!(
            "{seeds} seeds; epsilon means {:?} (Spearman {rho_eps:.2}); Q means {:?} (Spearman {rho_q:.2})",
            eps_means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            q_means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

const ALPHA_VALUES: [f64; 5] = [0.001, 0.002, 0.004, 0.008, 0.016];

fn criterion_11(pool: &mut Pool, seeds: u64) -> Verdict {
    let base = ScenarioParams::default();
    let cfg = SolverConfig::default();
    let mut outage = |scenario: Scenario| -> Vec<f64> {
        ALPHA_VALUES
            .iter()
            .map(|&alpha| {
                let params = set_param(&base, "alpha", alpha).unwrap();
                let o: Vec<f64> = (0..seeds)
                    .map(|seed| pool.solve(&params, seed, scenario, Mode::Joint, &cfg).outage_probability)
                    .collect();
                mean(&o)
            })
            .collect()
    };
    let sfcd = outage(Scenario::Sfcd);
    let mfcd = outage(Scenario::Mfcd);
    let monotone = sfcd.windows(2).all(|w| w[1] >= w[0]) && mfcd.windows(2).all(|w| w[1] >= w[0]);
    // smallest index from which SFCD outage is never below MFCD
    let crossover = (0..ALPHA_VALUES.len()).find(|&i| (i..ALPHA_VALUES.len()).all(|j| sfcd[j] >= mfcd[j]));
    let strict_above = crossover.map_or(false, |i| (i..ALPHA_VALUES.len()).any(|j| sfcd[j] > mfcd[j]));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    verdict(
        monotone && strict_above,
        format!(
            "{seeds} seeds; alpha {:?} Mbit; outage SFCD [{}], MFCD [{}]; crossover at {}",
            ALPHA_VALUES,
            fmt(&sfcd),
            fmt(&mfcd),
            crossover.map_or("none".to_string(), |i| format!("{} Mbit", ALPHA_VALUES[i]))
        ),
    )
}

fn criterion_12(pool: &Pool) -> Verdict {
    let traces: Vec<Vec<f64>> = pool.runs.iter().map(|r| r.out.trace.theta()).collect();
    let up = traces.iter().all(|t| t.windows(2).all(|w| w[1] >= w[0]));
    let down = traces.iter().all(|t| t.windows(2).all(|w| w[1] <= w[0]));
    let direction = match (up, down) {
        (true, true) => "constant",
        (true, false) => "nondecreasing",
        (false, true) => "nonincreasing",
        _ => "mixed",
    };
    let converged = pool
        .runs
        .iter()
        .filter(|r| r.out.trace.converged && r.out.trace.records.len() <= 1000)
        .count();
    let share = converged as f64 / pool.runs.len() as f64;
    let longest = pool.runs.iter().map(|r| r.out.trace.records.len()).max().unwrap_or(0);
    verdict(
        (up || down) && share >= 0.95,
        format!(
            "{} traces: direction {direction}; converged within 1000 sweeps on {:.1}% (longest trace {longest} records)",
            traces.len(),
            100.0 * share
        ),
    )
}

fn main() {
    let seeds: u64 = std::env::var("ACCEPTANCE_SEEDS").ok().and_then(|s| s.parse().ok()).unwrap_or(8);
    let started = Instant::now();
    let mut pool = Pool::default();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut step = |n: usize, name: &'static str, f: &mut dyn FnMut(&mut Pool) -> Verdict, pool: &mut Pool| {
        let t = Instant::now();
        let v = f(pool);
        eprintln!("criterion {n} evaluated in {:.1}s", t.elapsed().as_secs_f64());
        results.push((n, name, v));
    };
    step(1, "single-link optimality", &mut |p| criterion_1(p), &mut pool);
    step(2, "worst-case LP vs corners", &mut |_| criterion_2(), &mut pool);
    step(5, "eavesdropper-rate gradient", &mut |_| criterion_5(), &mut pool);
    step(7, "caching traffic ordering", &mut |_| criterion_7(), &mut pool);
    step(8, "delivery-scheme ordering", &mut |p| criterion_8(p, seeds), &mut pool);
    step(9, "joint vs disjoint", &mut |p| criterion_9(p, seeds), &mut pool);
    step(10, "secrecy vs uncertainty and eavesdroppers", &mut |p| criterion_10(p, seeds), &mut pool);
    step(11, "outage vs file size", &mut |p| criterion_11(p, seeds), &mut pool);
    step(3, "Dinkelbach monotonicity", &mut |p| criterion_3(p), &mut pool);
    step(4, "DC eavesdropper-rate descent", &mut |p| criterion_4(p), &mut pool);
    step(6, "feasibility invariants", &mut |p| criterion_6(p), &mut pool);
    step(12, "sweep trace monotonicity", &mut |p| criterion_12(p), &mut pool);
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, v) in &results {
        println!("criterion {n:>2} {:<4} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

