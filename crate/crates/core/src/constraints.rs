//! Residual evaluation of every feasibility constraint (`≤ 0` means
//! satisfied) and the battery recursion.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::RateError;
use crate::model::NetworkInstance;
use crate::rates::{backhaul_capacity, secrecy_rate, AllocationState, Scenario};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    /// Cached bits fit in the BS storage. Index `[b]`.
    CacheCapacity,
    /// File parts add up to the whole file (MFCD). Index `[k]`.
    SplitCompleteness,
    /// Uncached requested bits fit in the backhaul capacity. Index `[b, t]`.
    BackhaulTraffic,
    /// Scheduled links deliver their users' demand at the worst-case secrecy rate. Index `[b, u, m, t]`.
    DownlinkTraffic,
    AccessPowerNonneg,
    BackhaulPowerNonneg,
    /// Backhaul transmit power within the per-frame budget. Index `[t]`.
    BackhaulPowerBudget,
    /// Energy spent up to frame `f` never exceeds energy available. Index `[b, f]`.
    EnergyCausality,
    /// Stored energy never exceeds battery capacity. Index `[b, f]`.
    BatteryOverflow,
    /// At most `D` active codebooks share a subcarrier. Index `[n, t]`.
    SubcarrierReuse,
    /// One codebook per BS per super frame (SFCD, `[b]`) or per frame (MFCD, `[b, t]`).
    CodebookExclusivity,
    /// Each backhaul subcarrier serves at most one BS. Index `[n]`.
    BackhaulExclusivity,
    CodebookDomain,
    CacheDomain,
    BackhaulSubcarrierDomain,
    /// Worst-case channels lie in the uncertainty box. Index `[b, u, m, t, q, b', n]`.
    ChannelBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: ConstraintId,
    pub index: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub residuals: Vec<Residual>,
    pub feasible: bool,
    pub worst_violation: f64,
    pub tolerance: f64,
}

impl ConstraintReport {
    pub fn violations(&self) -> impl Iterator<Item = &Residual> {
        self.residuals.iter().filter(move |r| r.value > self.tolerance)
    }

    pub fn of(&self, id: ConstraintId) -> impl Iterator<Item = &Residual> {
        self.residuals.iter().filter(move |r| r.id == id)
    }

    pub fn worst_of(&self, id: ConstraintId) -> f64 {
        self.of(id).map(|r| r.value).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Demand in Mbits that user `(b, u)` needs delivered in frame `t`.
pub fn user_demand(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, b: usize, u: usize, t: usize) -> f64 {
    inst.catalog
        .user_files(b, u)
        .map(|k| match scenario {
            Scenario::Sfcd => inst.catalog.sizes_mbits[k],
            Scenario::Mfcd => alloc.split[[k, t]],
        })
        .sum()
}

/// Mbits BS `b` must fetch over the backhaul in frame `t`.
pub fn backhaul_load(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, b: usize, t: usize) -> f64 {
    let links: f64 = (0..inst.num_users())
        .flat_map(|u| (0..inst.num_codebooks()).map(move |m| (u, m)))
        .map(|(u, m)| alloc.codebook[[b, u, m, t]])
        .sum();
    if links == 0.0 {
        return 0.0;
    }
    links * uncached_bits(inst, alloc, scenario, b, t)
}

/// Requested, uncached bits at BS `b` relevant to frame `t`.
pub fn uncached_bits(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, b: usize, t: usize) -> f64 {
    (0..inst.num_files())
        .filter(|&k| inst.catalog.requested_at(b, k))
        .map(|k| {
            let size = match scenario {
                Scenario::Sfcd => inst.catalog.sizes_mbits[k],
                Scenario::Mfcd => alloc.split[[k, t]],
            };
            (1.0 - alloc.cache[[b, k]]) * size
        })
        .sum()
}

/// Energy spent by BS `b` in frame `t`, in J.
pub fn frame_energy(inst: &NetworkInstance, alloc: &AllocationState, b: usize, t: usize) -> f64 {
    inst.frame_duration() * alloc.bs_frame_power(b, t)
}

fn domain_residual(x: f64, relaxed: bool) -> f64 {
    if relaxed {
        (-x).max(x - 1.0)
    } else {
        x.abs().min((1.0 - x).abs())
    }
}

/// Evaluates every constraint of the chosen scenario.
pub fn check_all(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, tol: f64) -> Result<ConstraintReport, RateError> {
    alloc.check_dims(inst)?;
    let (nb, nu, nm, nf) = inst.link_dims();
    let nn = inst.num_subcarriers();
    let nk = inst.num_files();
    let c = inst.mbits_per_rate();
    let mut out = Vec::new();
    let mut push = |id, index: Vec<usize>, value: f64| out.push(Residual { id, index, value });

    for b in 0..nb {
        let cached: f64 = (0..nk).map(|k| alloc.cache[[b, k]] * inst.catalog.sizes_mbits[k]).sum();
        push(ConstraintId::CacheCapacity, vec![b], cached - inst.cache_capacity_mbits[b]);
    }
    if scenario == Scenario::Mfcd {
        for k in 0..nk {
            let total: f64 = (0..nf).map(|t| alloc.split[[k, t]]).sum();
            push(ConstraintId::SplitCompleteness, vec![k], (total - inst.catalog.sizes_mbits[k]).abs());
        }
    }
    for b in 0..nb {
        for t in 0..nf {
            let load = backhaul_load(inst, alloc, scenario, b, t);
            push(ConstraintId::BackhaulTraffic, vec![b, t], load - c * backhaul_capacity(inst, alloc, b, t));
        }
    }
    for b in 0..nb {
        for u in 0..nu {
            for m in 0..nm {
                for t in 0..nf {
                    let s = alloc.codebook[[b, u, m, t]];
                    let value = if s > 0.0 {
                        let demand = user_demand(inst, alloc, scenario, b, u, t);
                        s * (demand - c * secrecy_rate(inst, alloc, b, u, m, t)?)
                    } else {
                        0.0
                    };
                    push(ConstraintId::DownlinkTraffic, vec![b, u, m, t], value);
                }
            }
        }
    }
    for ((b, u, m, t), &p) in alloc.access_power.indexed_iter() {
        push(ConstraintId::AccessPowerNonneg, vec![b, u, m, t], -p);
    }
    for ((b, n, t), &p) in alloc.backhaul_power.indexed_iter() {
        push(ConstraintId::BackhaulPowerNonneg, vec![b, n, t], -p);
    }
    for t in 0..nf {
        let used: f64 = (0..nb)
            .flat_map(|b| (0..nn).map(move |n| (b, n)))
            .map(|(b, n)| alloc.backhaul_subcarrier[[b, n]] * alloc.backhaul_power[[b, n, t]])
            .sum();
        push(ConstraintId::BackhaulPowerBudget, vec![t], used - inst.backhaul_budget_w[t]);
    }
    for b in 0..nb {
        let e0 = inst.energy.initial_battery_j[b];
        let emax = inst.energy.battery_capacity_j[b];
        let mut spent = 0.0;
        let mut harvested = 0.0;
        for f in 0..nf {
            spent += frame_energy(inst, alloc, b, f);
            harvested += inst.energy.harvested_j[[b, f]];
            push(ConstraintId::EnergyCausality, vec![b, f], spent - (e0 + harvested));
            push(ConstraintId::BatteryOverflow, vec![b, f], e0 + harvested - spent - emax);
        }
    }
    for n in 0..nn {
        for t in 0..nf {
            let mut count = 0.0;
            for m in (0..nm).filter(|&m| inst.codebooks.incidence[[n, m]]) {
                for b in 0..nb {
                    for u in 0..nu {
                        count += alloc.codebook[[b, u, m, t]];
                    }
                }
            }
            push(ConstraintId::SubcarrierReuse, vec![n, t], count - inst.reuse_cap as f64);
        }
    }
    match scenario {
        Scenario::Sfcd => {
            for b in 0..nb {
                let total: f64 = alloc.codebook.index_axis(ndarray::Axis(0), b).sum();
                push(ConstraintId::CodebookExclusivity, vec![b], total - 1.0);
            }
        }
        Scenario::Mfcd => {
            for b in 0..nb {
                for t in 0..nf {
                    let mut total = 0.0;
                    for u in 0..nu {
                        for m in 0..nm {
                            total += alloc.codebook[[b, u, m, t]];
                        }
                    }
                    push(ConstraintId::CodebookExclusivity, vec![b, t], total - 1.0);
                }
            }
        }
    }
    for n in 0..nn {
        let total: f64 = (0..nb).map(|b| alloc.backhaul_subcarrier[[b, n]]).sum();
        push(ConstraintId::BackhaulExclusivity, vec![n], total - 1.0);
    }
    for ((b, u, m, t), &s) in alloc.codebook.indexed_iter() {
        push(ConstraintId::CodebookDomain, vec![b, u, m, t], domain_residual(s, alloc.relaxed.codebook));
    }
    for ((b, k), &x) in alloc.cache.indexed_iter() {
        push(ConstraintId::CacheDomain, vec![b, k], domain_residual(x, alloc.relaxed.cache));
    }
    for ((b, n), &x) in alloc.backhaul_subcarrier.indexed_iter() {
        push(
            ConstraintId::BackhaulSubcarrierDomain,
            vec![b, n],
            domain_residual(x, alloc.relaxed.backhaul_subcarrier),
        );
    }
    for (link, channels) in alloc.worst_case.iter() {
        for ((q, b2, n), &h) in channels.indexed_iter() {
            let lo = inst.channels.eve_lower(b2, q, n, link.t);
            let hi = inst.channels.eve_upper(b2, q, n, link.t);
            push(
                ConstraintId::ChannelBox,
                vec![link.b, link.u, link.m, link.t, q, b2, n],
                (h - hi).max(lo - h),
            );
        }
    }

    let worst_violation = out.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    let feasible = out.iter().all(|r| r.value <= tol);
    Ok(ConstraintReport {
        residuals: out,
        feasible,
        worst_violation,
        tolerance: tol,
    })
}

/// Battery levels `[b, t]` for `t = 0..=F`, column 0 being the initial state.
pub fn battery_trace(inst: &NetworkInstance, alloc: &AllocationState) -> Array2<f64> {
    let (nb, _, _, nf) = inst.link_dims();
    let mut e = Array2::zeros((nb, nf + 1));
    for b in 0..nb {
        e[[b, 0]] = inst.energy.initial_battery_j[b];
        for t in 0..nf {
            let next = e[[b, t]] - frame_energy(inst, alloc, b, t) + inst.energy.harvested_j[[b, t]];
            e[[b, t + 1]] = next.min(inst.energy.battery_capacity_j[b]);
        }
    }
    e
}
