//! Alternating optimization over worst-case channels, placement, backhaul,
//! codebooks, access power and file splitting, in joint and disjoint form.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::access::{
    codebook_assign, idle_bs, optimize_access, split_files, AccessConfig, AccessRateCap,
};
use crate::backhaul::{allocate_backhaul, required_rates, BackhaulOutcome};
use crate::caching::{baseline_placement, placement_lp, placement_traffic, CachingStrategy};
use crate::constraints::{check_all, uncached_bits, ConstraintId, ConstraintReport, Residual};
use crate::error::{KernelError, SolveError};
use crate::model::NetworkInstance;
use crate::rates::{backhaul_capacity, secrecy_rate, AllocationState, LinkKey, Scenario};
use crate::worstcase::assemble_worst_case;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Backhaul and access are optimized together, coupled by the traffic constraints.
    Joint,
    /// Backhaul is sized once for capacity and frozen; access follows.
    Disjoint,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Mode::Joint),
            "disjoint" => Ok(Mode::Disjoint),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Joint => "joint",
            Mode::Disjoint => "disjoint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Sweeps stop once the relative change of the objective is at most this.
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub access: AccessConfig,
    pub strategy: CachingStrategy,
    /// Optimize the per-frame file split (MFCD); otherwise files are split evenly.
    pub optimize_split: bool,
    /// Residual tolerance under which a BS counts as served.
    pub feasibility_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            sweep_tol: 1e-4,
            max_sweeps: 20,
            access: AccessConfig::default(),
            strategy: CachingStrategy::Lp,
            optimize_split: true,
            feasibility_tol: 1e-7,
        }
    }
}

/// Per-BS service status and the energy efficiency of an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// BSs with at least one requested file.
    pub requesting: Vec<bool>,
    /// Requesting BSs whose schedule is complete and meets every per-BS constraint.
    pub served: Vec<bool>,
    /// Secrecy rate over access power of the served links, bits/s/Hz/W.
    pub raw_efficiency: f64,
    /// `raw_efficiency` when every requesting BS is served, zero otherwise.
    pub efficiency: f64,
    /// Sum worst-case secrecy rate of the served links, bits/s/Hz.
    pub secrecy_sum: f64,
    /// Access power of the served links, W.
    pub power_w: f64,
}

impl Evaluation {
    pub fn served_count(&self) -> usize {
        self.served.iter().filter(|&&s| s).count()
    }

    pub fn requesting_count(&self) -> usize {
        self.requesting.iter().filter(|&&s| s).count()
    }

    pub fn all_served(&self) -> bool {
        self.requesting.iter().zip(&self.served).all(|(&r, &s)| !r || s)
    }

    /// Fraction of requesting BSs left unserved.
    pub fn outage(&self) -> f64 {
        let requesting = self.requesting_count();
        if requesting == 0 {
            0.0
        } else {
            1.0 - self.served_count() as f64 / requesting as f64
        }
    }

    /// Serves every BS that `other` serves.
    pub fn covers(&self, other: &Evaluation) -> bool {
        self.served.iter().zip(&other.served).all(|(&a, &b)| a || !b)
    }

    /// Acceptance rule of the sweeps: never lose a served BS, and either
    /// serve more or raise the efficiency.
    pub fn improves_on(&self, other: &Evaluation) -> bool {
        if !self.covers(other) {
            return false;
        }
        self.served_count() > other.served_count()
            || self.raw_efficiency > other.raw_efficiency + 1e-12 * other.raw_efficiency.abs().max(1.0)
    }
}

fn bs_of(r: &Residual) -> Option<usize> {
    match r.id {
        ConstraintId::DownlinkTraffic
        | ConstraintId::BackhaulTraffic
        | ConstraintId::EnergyCausality
        | ConstraintId::BatteryOverflow => r.index.first().copied(),
        _ => None,
    }
}

/// Whether BS `b` holds a complete schedule: one link per super frame
/// (SFCD) or the same user in every frame (MFCD).
fn complete_schedule(inst: &NetworkInstance, links: &[LinkKey], scenario: Scenario, b: usize) -> bool {
    let own: Vec<&LinkKey> = links.iter().filter(|l| l.b == b).collect();
    match scenario {
        Scenario::Sfcd => own.len() == 1,
        Scenario::Mfcd => {
            own.len() == inst.num_frames()
                && (0..inst.num_frames()).all(|t| own.iter().filter(|l| l.t == t).count() == 1)
                && own.iter().all(|l| l.u == own[0].u)
        }
    }
}

/// Service status from a constraint report already computed at `tol`.
pub fn evaluate_with(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    scenario: Scenario,
    report: &ConstraintReport,
) -> Result<Evaluation, SolveError> {
    let nb = inst.num_bs();
    let links = alloc.scheduled_links();
    let requesting: Vec<bool> = (0..nb).map(|b| inst.catalog.bs_has_requests(b)).collect();
    let globally_ok = report.violations().all(|r| bs_of(r).is_some());
    let mut served = vec![false; nb];
    for b in 0..nb {
        served[b] = globally_ok
            && requesting[b]
            && complete_schedule(inst, &links, scenario, b)
            && report.violations().all(|r| bs_of(r) != Some(b));
    }
    let mut secrecy_sum = 0.0;
    let mut power_w = 0.0;
    for l in links.iter().filter(|l| served[l.b]) {
        secrecy_sum += secrecy_rate(inst, alloc, l.b, l.u, l.m, l.t)?;
        power_w += alloc.access_power[l.idx()];
    }
    let raw_efficiency = if power_w > 0.0 { secrecy_sum / power_w } else { 0.0 };
    let all = requesting.iter().zip(&served).all(|(&r, &s)| !r || s);
    Ok(Evaluation {
        requesting,
        served,
        raw_efficiency,
        efficiency: if all { raw_efficiency } else { 0.0 },
        secrecy_sum,
        power_w,
    })
}

pub fn evaluate(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, tol: f64) -> Result<Evaluation, SolveError> {
    let report = check_all(inst, alloc, scenario, tol)?;
    evaluate_with(inst, alloc, scenario, &report)
}

/// Why a requesting BS is not served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageExplanation {
    pub b: usize,
    pub scheduled_links: usize,
    /// Violated per-BS constraints with their residuals.
    pub violations: Vec<Residual>,
    /// Requested uncached Mbits per frame against the backhaul capacity in Mbits.
    pub backhaul_need_mbits: Vec<f64>,
    pub backhaul_capacity_mbits: Vec<f64>,
}

pub fn explain_outage(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    scenario: Scenario,
    tol: f64,
) -> Result<Vec<OutageExplanation>, SolveError> {
    let report = check_all(inst, alloc, scenario, tol)?;
    let eval = evaluate_with(inst, alloc, scenario, &report)?;
    let links = alloc.scheduled_links();
    let c = inst.mbits_per_rate();
    let nf = inst.num_frames();
    Ok((0..inst.num_bs())
        .filter(|&b| eval.requesting[b] && !eval.served[b])
        .map(|b| OutageExplanation {
            b,
            scheduled_links: links.iter().filter(|l| l.b == b).count(),
            violations: report.violations().filter(|r| bs_of(r) == Some(b)).cloned().collect(),
            backhaul_need_mbits: (0..nf).map(|t| uncached_bits(inst, alloc, scenario, b, t)).collect(),
            backhaul_capacity_mbits: (0..nf).map(|t| c * backhaul_capacity(inst, alloc, b, t)).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub mode: Mode,
    pub sweep: usize,
    /// Efficiency of the incumbent after this sweep (zero while any BS is in outage).
    pub theta: f64,
    pub raw_theta: f64,
    pub served: usize,
    pub accepted: bool,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<SweepRecord>,
    pub converged: bool,
}

impl SolveTrace {
    pub fn theta(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.theta).collect()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub state: AllocationState,
    pub evaluation: Evaluation,
    pub trace: SolveTrace,
    /// Backhaul traffic (Mbits) of the rounded placement.
    pub placement_traffic: f64,
    /// Backhaul traffic (Mbits) of the relaxed placement, when the LP strategy is used.
    pub relaxed_placement_traffic: Option<f64>,
}

struct Incumbent {
    state: AllocationState,
    eval: Evaluation,
}

struct Context<'a> {
    inst: &'a NetworkInstance,
    scenario: Scenario,
    cfg: &'a SolverConfig,
}

impl Context<'_> {
    fn evaluate(&self, alloc: &AllocationState) -> Result<Evaluation, SolveError> {
        evaluate(self.inst, alloc, self.scenario, self.cfg.feasibility_tol)
    }

    /// Re-optimizes access power and idles BSs that stay unserved until
    /// every remaining scheduled BS is served.
    fn settle(&self, mut alloc: AllocationState, cap: Option<&AccessRateCap>) -> Result<Incumbent, SolveError> {
        alloc.worst_case = assemble_worst_case(self.inst, &alloc)?;
        alloc = optimize_access(self.inst, &alloc, self.scenario, cap, &self.cfg.access)?.solution.state;
        for _ in 0..=self.inst.num_bs() {
            let eval = self.evaluate(&alloc)?;
            let links = alloc.scheduled_links();
            let stray: Vec<usize> = (0..self.inst.num_bs())
                .filter(|&b| !eval.served[b] && links.iter().any(|l| l.b == b))
                .collect();
            if stray.is_empty() {
                return Ok(Incumbent { state: alloc, eval });
            }
            for b in stray {
                idle_bs(&mut alloc, b);
            }
            alloc = optimize_access(self.inst, &alloc, self.scenario, cap, &self.cfg.access)?.solution.state;
        }
        Err(KernelError::Numerical("access repair did not settle".into()).into())
    }

    /// New codebooks (BSs in `keep` hold theirs), then power control. With
    /// split optimization, an energy-paced split is also tried ahead of the
    /// assignment.
    fn reassign(&self, alloc: &AllocationState, keep: &[usize], cap: Option<&AccessRateCap>) -> Result<Incumbent, SolveError> {
        let current = self.assign(alloc, keep, cap)?;
        if !self.splits() {
            return Ok(current);
        }
        let mut paced = alloc.clone();
        paced.worst_case = assemble_worst_case(self.inst, &paced)?;
        paced.split = split_files(self.inst, &paced)?;
        if paced.split == alloc.split {
            return Ok(current);
        }
        Ok(pick(current, Some(self.assign(&paced, keep, cap)?)))
    }

    fn splits(&self) -> bool {
        self.scenario == Scenario::Mfcd && self.cfg.optimize_split && self.inst.num_frames() >= 2
    }

    fn assign(&self, alloc: &AllocationState, keep: &[usize], cap: Option<&AccessRateCap>) -> Result<Incumbent, SolveError> {
        let mut next = alloc.clone();
        next.worst_case = assemble_worst_case(self.inst, &next)?;
        let assignment = codebook_assign(self.inst, &next, self.scenario, keep, &self.cfg.access)?;
        next.codebook = assignment.codebook;
        next.access_power = assignment.power;
        next.eve_bound.fill(0.0);
        next.secrecy_aux.fill(0.0);
        self.settle(next, cap)
    }

    /// Re-splits files across frames and re-optimizes power; `None` when
    /// splitting does not apply.
    fn resplit(&self, current: &Incumbent, cap: Option<&AccessRateCap>) -> Result<Option<Incumbent>, SolveError> {
        if !self.splits() {
            return Ok(None);
        }
        let mut next = current.state.clone();
        next.split = split_files(self.inst, &next)?;
        Ok(Some(self.settle(next, cap)?))
    }

    /// Backhaul sized for the current schedule plus the traffic unserved
    /// BSs would add. Falls back to the schedule alone, then idles BSs
    /// whose traffic cannot be carried.
    fn backhaul_step(&self, alloc: &mut AllocationState, served: &[bool]) -> Result<(), SolveError> {
        let inst = self.inst;
        let c = inst.mbits_per_rate();
        let nf = inst.num_frames();
        let mut prospective = required_rates(inst, alloc, self.scenario);
        for b in (0..inst.num_bs()).filter(|&b| inst.catalog.bs_has_requests(b) && !served[b]) {
            let frames: Vec<usize> = match self.scenario {
                Scenario::Sfcd => vec![nf - 1],
                Scenario::Mfcd => (0..nf).collect(),
            };
            for t in frames {
                let need = uncached_bits(inst, alloc, self.scenario, b, t) / c;
                prospective[[b, t]] = prospective[[b, t]].max(need);
            }
        }
        if let BackhaulOutcome::Solved(sol) = allocate_backhaul(inst, &prospective, true)? {
            alloc.backhaul_power = sol.power;
            alloc.backhaul_subcarrier = sol.subcarrier;
            return Ok(());
        }
        for _ in 0..=inst.num_bs() {
            let required = required_rates(inst, alloc, self.scenario);
            match allocate_backhaul(inst, &required, true)? {
                BackhaulOutcome::Solved(sol) => {
                    alloc.backhaul_power = sol.power;
                    alloc.backhaul_subcarrier = sol.subcarrier;
                    return Ok(());
                }
                BackhaulOutcome::Infeasible { b, .. } => {
                    if required.row(b).iter().all(|&r| r <= 0.0) {
                        break;
                    }
                    idle_bs(alloc, b);
                }
            }
        }
        Err(KernelError::Numerical("backhaul stays infeasible with an empty schedule".into()).into())
    }
}

fn placement(inst: &NetworkInstance, cfg: &SolverConfig) -> Result<(Array2<f64>, Option<f64>), SolveError> {
    let theta = baseline_placement(inst, cfg.strategy, inst.rng_seed)?;
    let relaxed = match cfg.strategy {
        CachingStrategy::Lp => Some(placement_lp(inst)?.relaxed_traffic),
        _ => None,
    };
    Ok((theta, relaxed))
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / old.abs().max(1.0)
}

fn record(trace: &mut SolveTrace, mode: Mode, sweep: usize, inc: &Incumbent, accepted: bool, previous: f64) {
    trace.records.push(SweepRecord {
        mode,
        sweep,
        theta: inc.eval.efficiency,
        raw_theta: inc.eval.raw_efficiency,
        served: inc.eval.served_count(),
        accepted,
        delta: inc.eval.efficiency - previous,
    });
}

/// Keeps whichever of `a` and `b` the acceptance rule prefers (`a` on ties).
fn pick(a: Incumbent, b: Option<Incumbent>) -> Incumbent {
    match b {
        Some(b) if b.eval.improves_on(&a.eval) => b,
        _ => a,
    }
}

/// Alternating sweeps from a given start until no sweep improves the
/// incumbent or the relative change drops to `sweep_tol`.
fn iterate<F>(
    ctx: &Context<'_>,
    mode: Mode,
    start: Incumbent,
    trace: &mut SolveTrace,
    mut sweep_fn: F,
) -> Result<Incumbent, SolveError>
where
    F: FnMut(usize, &Incumbent) -> Result<Incumbent, SolveError>,
{
    let mut current = start;
    record(trace, mode, 0, &current, true, current.eval.efficiency);
    trace.converged = ctx.cfg.max_sweeps == 0;
    for sweep in 1..=ctx.cfg.max_sweeps {
        let candidate = sweep_fn(sweep, &current)?;
        let accepted = candidate.eval.improves_on(&current.eval);
        let previous = current.eval.efficiency;
        let previous_raw = current.eval.raw_efficiency;
        let more_served = candidate.eval.served_count() > current.eval.served_count();
        if accepted {
            current = candidate;
        }
        record(trace, mode, sweep, &current, accepted, previous);
        if !accepted || (!more_served && relative_change(current.eval.raw_efficiency, previous_raw) <= ctx.cfg.sweep_tol) {
            trace.converged = true;
            break;
        }
    }
    Ok(current)
}

/// Backhaul sized for capacity alone and frozen; the access side is then
/// optimized under the resulting per-BS rate caps.
pub fn solve_disjoint(inst: &NetworkInstance, scenario: Scenario, cfg: &SolverConfig) -> Result<SolveOutput, SolveError> {
    let ctx = Context { inst, scenario, cfg };
    let (theta, relaxed) = placement(inst, cfg).map_err(|e| e.at(0, "placement"))?;
    let mut state = AllocationState::empty(inst);
    state.cache = theta;
    let zero = Array2::zeros((inst.num_bs(), inst.num_frames()));
    let sol = allocate_backhaul(inst, &zero, false)
        .map_err(|e| SolveError::from(e).at(0, "backhaul"))?
        .solved()
        .ok_or_else(|| SolveError::from(KernelError::Numerical("unconstrained backhaul reported infeasible".into())).at(0, "backhaul"))?;
    state.backhaul_power = sol.power;
    state.backhaul_subcarrier = sol.subcarrier;
    let cap: AccessRateCap = Array2::from_shape_fn((inst.num_bs(), inst.num_frames()), |(b, t)| backhaul_capacity(inst, &state, b, t));
    let eval = ctx.evaluate(&state)?;
    let mut trace = SolveTrace::default();
    let best = iterate(&ctx, Mode::Disjoint, Incumbent { state, eval }, &mut trace, |sweep, current| {
        let base = ctx.reassign(&current.state, &[], Some(&cap)).map_err(|e| e.at(sweep, "codebook"))?;
        let split = ctx.resplit(&base, Some(&cap)).map_err(|e| e.at(sweep, "split"))?;
        Ok(pick(base, split))
    })?;
    Ok(SolveOutput {
        placement_traffic: placement_traffic(inst, &best.state.cache),
        relaxed_placement_traffic: relaxed,
        state: best.state,
        evaluation: best.eval,
        trace,
    })
}

/// Joint sweeps started from the disjoint solution, with backhaul sized
/// for the traffic of the schedule.
pub fn solve_joint(inst: &NetworkInstance, scenario: Scenario, cfg: &SolverConfig) -> Result<SolveOutput, SolveError> {
    let init = solve_disjoint(inst, scenario, cfg)?;
    let ctx = Context { inst, scenario, cfg };
    let mut trace = init.trace.clone();
    let start = Incumbent {
        state: init.state,
        eval: init.evaluation,
    };
    let best = iterate(&ctx, Mode::Joint, start, &mut trace, |sweep, current| {
        let mut state = current.state.clone();
        state.worst_case = assemble_worst_case(inst, &state).map_err(|e| SolveError::from(e).at(sweep, "worst_case"))?;
        ctx.backhaul_step(&mut state, &current.eval.served).map_err(|e| e.at(sweep, "backhaul"))?;
        let served: Vec<usize> = (0..inst.num_bs()).filter(|&b| current.eval.served[b]).collect();
        let full = ctx.reassign(&state, &[], None).map_err(|e| e.at(sweep, "codebook"))?;
        let kept = if served.is_empty() {
            None
        } else {
            Some(ctx.reassign(&state, &served, None).map_err(|e| e.at(sweep, "codebook"))?)
        };
        let base = pick(full, kept);
        let split = ctx.resplit(&base, None).map_err(|e| e.at(sweep, "split"))?;
        Ok(pick(base, split))
    })?;
    Ok(SolveOutput {
        placement_traffic: placement_traffic(inst, &best.state.cache),
        relaxed_placement_traffic: init.relaxed_placement_traffic,
        state: best.state,
        evaluation: best.eval,
        trace,
    })
}

pub fn solve(inst: &NetworkInstance, scenario: Scenario, mode: Mode, cfg: &SolverConfig) -> Result<SolveOutput, SolveError> {
    match mode {
        Mode::Joint => solve_joint(inst, scenario, cfg),
        Mode::Disjoint => solve_disjoint(inst, scenario, cfg),
    }
}
