//! Access-side optimization: transmit power via successive convex
//! approximation with Dinkelbach fractional programming, codebook
//! assignment, and per-frame file splitting.

use std::f64::consts::LN_2;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::constraints::{uncached_bits, user_demand};
use crate::error::{KernelError, SolveError};
use crate::kernel::{solve_convex, solve_lp, ConvexOutcome, ConvexProgram, LinearProgram, LpOutcome};
use crate::model::NetworkInstance;
use crate::rates::{
    access_terms, backhaul_capacity, codebook_gain, dc_split_access, eve_noise, max_eve_rate, user_noise,
    AllocationState, LinkKey, Scenario,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccessConfig {
    /// Dinkelbach stops once `Num − χ·Den ≤ dinkelbach_tol`.
    pub dinkelbach_tol: f64,
    pub dinkelbach_max_iter: usize,
    /// Relative change of the power vector that ends the convexification loop.
    pub dc_tol: f64,
    pub dc_max_iter: usize,
    pub barrier_tol: f64,
}

impl Default for AccessConfig {
    fn default() -> Self {
        AccessConfig {
            dinkelbach_tol: 1e-6,
            dinkelbach_max_iter: 60,
            dc_tol: 1e-6,
            dc_max_iter: 40,
            barrier_tol: 1e-10,
        }
    }
}

/// Epigraph view of one link's secrecy term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpigraphTerms {
    pub r1: f64,
    pub r2: f64,
    /// Bound on the strongest eavesdropper rate.
    pub eve_bound: f64,
    /// `max(−R2 − φ, −R1)`.
    pub delta: f64,
    /// `δ + R1 = max(R^D − φ, 0)`.
    pub numerator: f64,
}

/// Epigraph variables set to their tightest values for `link`.
pub fn epigraph_terms(inst: &NetworkInstance, alloc: &AllocationState, link: &LinkKey) -> Result<EpigraphTerms, SolveError> {
    let LinkKey { b, u, m, t } = *link;
    let (r1, r2) = dc_split_access(inst, alloc, b, u, m, t)?;
    let eve_bound = max_eve_rate(inst, alloc, b, u, m, t)?;
    Ok(epigraph_from(r1, r2, eve_bound))
}

/// Epigraph terms for given `R1`, `R2` and eavesdropper bound `φ`.
pub fn epigraph_from(r1: f64, r2: f64, eve_bound: f64) -> EpigraphTerms {
    let delta = (-r2 - eve_bound).max(-r1);
    EpigraphTerms {
        r1,
        r2,
        eve_bound,
        delta,
        numerator: delta + r1,
    }
}

// ---------------------------------------------------------------------------
// link model in normalized power units

/// `log2(1 + Σ w_j x_j)`.
#[derive(Debug, Clone, Default)]
struct LogTerm {
    terms: Vec<(usize, f64)>,
}

impl LogTerm {
    fn inner(&self, x: &[f64]) -> f64 {
        1.0 + self.terms.iter().map(|&(j, w)| w * x[j]).sum::<f64>()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner(x).ln() / LN_2
    }

    fn add_gradient(&self, x: &[f64], factor: f64, g: &mut [f64]) {
        let d = self.inner(x) * LN_2;
        for &(j, w) in &self.terms {
            g[j] += factor * w / d;
        }
    }

    fn linearize(&self, x: &[f64]) -> Affine {
        let d = self.inner(x) * LN_2;
        let terms: Vec<(usize, f64)> = self.terms.iter().map(|&(j, w)| (j, w / d)).collect();
        let constant = self.value(x) - terms.iter().map(|&(j, w)| w * x[j]).sum::<f64>();
        Affine { constant, terms }
    }
}

#[derive(Debug, Clone)]
struct Affine {
    constant: f64,
    terms: Vec<(usize, f64)>,
}

impl Affine {
    fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, w)| w * x[j]).sum::<f64>()
    }

    fn add_gradient(&self, factor: f64, g: &mut [f64]) {
        for &(j, w) in &self.terms {
            g[j] += factor * w;
        }
    }
}

/// Rates of the scheduled links as functions of `x = p / scale`.
struct LinkModel {
    links: Vec<LinkKey>,
    scale: f64,
    num_eves: usize,
    /// Required secrecy rate per link, bits/s/Hz.
    demand: Vec<f64>,
    r1d: Vec<LogTerm>,
    r2d: Vec<LogTerm>,
    r1e: Vec<Vec<LogTerm>>,
    r2e: Vec<Vec<LogTerm>>,
    x_max: Vec<f64>,
    /// `(owner bs, coefficients over x, rhs)`.
    energy_rows: Vec<(usize, Vec<f64>, f64)>,
}

fn available_energy(inst: &NetworkInstance, b: usize, f: usize) -> f64 {
    inst.energy.initial_battery_j[b] + (0..=f).map(|t| inst.energy.harvested_j[[b, t]]).sum::<f64>()
}

impl LinkModel {
    fn build(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, links: Vec<LinkKey>) -> Self {
        let nb = inst.num_bs();
        let nf = inst.num_frames();
        let nq = inst.num_eves();
        let period = inst.frame_duration();
        let c = inst.mbits_per_rate();
        let g = &inst.channels.access_gain;
        let scale = (0..nb)
            .map(|b| available_energy(inst, b, nf - 1) / period)
            .fold(0.0, f64::max);
        let scale = if scale > 0.0 { scale } else { 1.0 };

        let mut model = LinkModel {
            links: links.clone(),
            scale,
            num_eves: nq,
            demand: Vec::new(),
            r1d: Vec::new(),
            r2d: Vec::new(),
            r1e: Vec::new(),
            r2e: Vec::new(),
            x_max: Vec::new(),
            energy_rows: Vec::new(),
        };
        for (i, link) in links.iter().enumerate() {
            let LinkKey { b, u, m, t } = *link;
            let sigma = user_noise(inst, b, u, m);
            let own = codebook_gain(inst, m, |n| g[[b, b, u, n, t]]) / sigma * scale;
            let rivals: Vec<usize> = (0..links.len())
                .filter(|&j| links[j].m == m && links[j].t == t && links[j].b != b)
                .collect();
            let cross: Vec<(usize, f64)> = rivals
                .iter()
                .map(|&j| (j, codebook_gain(inst, m, |n| g[[links[j].b, b, u, n, t]]) / sigma * scale))
                .collect();
            let mut r1 = cross.clone();
            r1.push((i, own));
            model.r1d.push(LogTerm { terms: r1 });
            model.r2d.push(LogTerm { terms: cross });

            let mut r1e = Vec::with_capacity(nq);
            let mut r2e = Vec::with_capacity(nq);
            for q in 0..nq {
                let ch = alloc.worst_case.for_link(inst, link, q);
                let sq = eve_noise(inst, q, m);
                let cross_e: Vec<(usize, f64)> = rivals
                    .iter()
                    .map(|&j| (j, codebook_gain(inst, m, |n| ch[[links[j].b, n]]) / sq * scale))
                    .collect();
                let mut full = cross_e.clone();
                full.push((i, codebook_gain(inst, m, |n| ch[[b, n]]) / sq * scale));
                r1e.push(LogTerm { terms: full });
                r2e.push(LogTerm { terms: cross_e });
            }
            model.r1e.push(r1e);
            model.r2e.push(r2e);
            model.demand.push(user_demand(inst, alloc, scenario, b, u, t) / c);
            model.x_max.push(available_energy(inst, b, t) / (period * scale));
        }
        let norm = period * scale;
        for b in 0..nb {
            for f in 0..nf {
                let members: Vec<usize> = (0..links.len()).filter(|&i| links[i].b == b && links[i].t <= f).collect();
                if members.is_empty() {
                    continue;
                }
                let avail = available_energy(inst, b, f);
                let mut row = vec![0.0; links.len()];
                for &i in &members {
                    row[i] = 1.0;
                }
                model.energy_rows.push((b, row.clone(), avail / norm));
                let emax = inst.energy.battery_capacity_j[b];
                if avail > emax {
                    let neg: Vec<f64> = row.iter().map(|v| -v).collect();
                    model.energy_rows.push((b, neg, (emax - avail) / norm));
                }
            }
        }
        model
    }

    fn len(&self) -> usize {
        self.links.len()
    }

    fn eve_rate(&self, i: usize, x: &[f64]) -> f64 {
        (0..self.num_eves)
            .map(|q| self.r1e[i][q].value(x) - self.r2e[i][q].value(x))
            .fold(0.0, f64::max)
    }

    fn secrecy(&self, i: usize, x: &[f64]) -> f64 {
        self.r1d[i].value(x) - self.r2d[i].value(x) - self.eve_rate(i, x)
    }

    fn power_watts(&self, x: &[f64]) -> f64 {
        self.scale * x.iter().sum::<f64>()
    }

    /// High-power start: each BS spends energy as it arrives, shared evenly
    /// by the links of each frame and carried over frames without links,
    /// shrunk so every causality prefix holds strictly.
    fn start_point(&self, inst: &NetworkInstance) -> Vec<f64> {
        let nf = inst.num_frames();
        let norm = inst.frame_duration() * self.scale;
        let mut x = vec![0.0; self.len()];
        for b in 0..inst.num_bs() {
            let mut carry = inst.energy.initial_battery_j[b];
            for t in 0..nf {
                carry += inst.energy.harvested_j[[b, t]];
                let members: Vec<usize> = (0..self.len())
                    .filter(|&i| self.links[i].b == b && self.links[i].t == t)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let spend = carry.min(inst.energy.battery_capacity_j[b]);
                for &i in &members {
                    x[i] = (spend / (norm * members.len() as f64)).min(self.x_max[i]) * (1.0 - 1e-6);
                }
                carry -= spend;
            }
        }
        x
    }
}

/// First-order expansion of the nonconcave parts around `x_r`.
struct Surrogate {
    r2d_lin: Vec<Affine>,
    r1d_lin: Vec<Affine>,
    r1e_lin: Vec<Vec<Affine>>,
}

impl Surrogate {
    fn at(model: &LinkModel, xr: &[f64]) -> Self {
        Surrogate {
            r2d_lin: model.r2d.iter().map(|t| t.linearize(xr)).collect(),
            r1d_lin: model.r1d.iter().map(|t| t.linearize(xr)).collect(),
            r1e_lin: model
                .r1e
                .iter()
                .map(|per_q| per_q.iter().map(|t| t.linearize(xr)).collect())
                .collect(),
        }
    }

    /// Tight epigraph value of the linearized eavesdropper rate.
    fn eve_bound(&self, model: &LinkModel, i: usize, x: &[f64]) -> f64 {
        (0..model.num_eves)
            .map(|q| self.r1e_lin[i][q].value(x) - model.r2e[i][q].value(x))
            .fold(0.0, f64::max)
    }

    fn secrecy(&self, model: &LinkModel, i: usize, x: &[f64]) -> f64 {
        model.r1d[i].value(x) - self.r2d_lin[i].value(x) - self.eve_bound(model, i, x)
    }

    fn numerator(&self, model: &LinkModel, x: &[f64]) -> f64 {
        (0..model.len()).map(|i| self.secrecy(model, i, x)).sum()
    }
}

/// Per-(b, t) cap on the access rate, bits/s/Hz (disjoint design only).
pub type AccessRateCap = Array2<f64>;

struct Parametric<'a> {
    program: ConvexProgram<'a>,
    /// Owning BS for every linear row and convex constraint, in kernel order.
    owners: Vec<usize>,
}

fn parametric<'a>(model: &'a LinkModel, sur: &'a Surrogate, chi: f64, cap: Option<&'a AccessRateCap>) -> Parametric<'a> {
    let nl = model.len();
    let with_phi = model.num_eves > 0;
    let dim = if with_phi { 2 * nl } else { nl };
    let objective = Box::new(move |z: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut num = 0.0;
        for i in 0..nl {
            num += model.r1d[i].value(z) - sur.r2d_lin[i].value(z);
            model.r1d[i].add_gradient(z, -1.0, g);
            sur.r2d_lin[i].add_gradient(1.0, g);
            if with_phi {
                num -= z[nl + i];
                g[nl + i] += 1.0;
            }
        }
        let den: f64 = z[..nl].iter().sum();
        for gi in g.iter_mut().take(nl) {
            *gi += chi * model.scale;
        }
        -(num - chi * model.scale * den)
    });
    let mut lower = vec![0.0; dim];
    let mut upper = model.x_max.clone();
    if with_phi {
        lower[nl..].iter_mut().for_each(|v| *v = -1.0);
        upper.extend(std::iter::repeat(1e3).take(nl));
    }
    let mut program = ConvexProgram::new(dim, objective).with_bounds(lower, upper);
    let mut owners = Vec::new();
    for (b, row, rhs) in &model.energy_rows {
        let mut full = row.clone();
        full.resize(dim, 0.0);
        program.add_le(full, *rhs);
        owners.push(*b);
    }
    for i in 0..nl {
        let d = model.demand[i];
        if d <= 0.0 {
            continue;
        }
        program.add_convex_le(Box::new(move |z: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            model.r1d[i].add_gradient(z, -1.0, g);
            sur.r2d_lin[i].add_gradient(1.0, g);
            let mut value = d - model.r1d[i].value(z) + sur.r2d_lin[i].value(z);
            if with_phi {
                value += z[nl + i];
                g[nl + i] += 1.0;
            }
            value
        }));
        owners.push(model.links[i].b);
    }
    if with_phi {
        for i in 0..nl {
            for q in 0..model.num_eves {
                program.add_convex_le(Box::new(move |z: &[f64], g: &mut [f64]| {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    sur.r1e_lin[i][q].add_gradient(1.0, g);
                    model.r2e[i][q].add_gradient(z, -1.0, g);
                    g[nl + i] -= 1.0;
                    sur.r1e_lin[i][q].value(z) - model.r2e[i][q].value(z) - z[nl + i]
                }));
                owners.push(model.links[i].b);
            }
        }
    }
    if let Some(cap) = cap {
        let (nb, nf) = cap.dim();
        for b in 0..nb {
            for t in 0..nf {
                let members: Vec<usize> = (0..nl).filter(|&i| model.links[i].b == b && model.links[i].t == t).collect();
                if members.is_empty() {
                    continue;
                }
                let limit = cap[[b, t]];
                program.add_convex_le(Box::new(move |z: &[f64], g: &mut [f64]| {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    let mut value = -limit;
                    for &i in &members {
                        value += sur.r1d_lin[i].value(z) - model.r2d[i].value(z);
                        sur.r1d_lin[i].add_gradient(1.0, g);
                        model.r2d[i].add_gradient(z, -1.0, g);
                    }
                    value
                }));
                owners.push(b);
            }
        }
    }
    // bounds follow, one entry per finite bound of every free variable
    for j in 0..dim {
        let i = j % nl.max(1);
        let (lo, hi) = (program.lower[j], program.upper[j]);
        if lo < hi {
            if lo.is_finite() {
                owners.push(model.links[i].b);
            }
            if hi.is_finite() {
                owners.push(model.links[i].b);
            }
        }
    }
    Parametric { program, owners }
}

fn barrier_start(model: &LinkModel, sur: &Surrogate, x: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    if model.num_eves > 0 {
        for i in 0..model.len() {
            z.push(sur.eve_bound(model, i, x) + 1e-9);
        }
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachTrace {
    /// Energy-efficiency parameter after every strict improvement.
    pub chi: Vec<f64>,
    /// `Num − χ·Den` at termination.
    pub gap: f64,
    pub converged: bool,
}

enum DinkelbachRun {
    Solved { x: Vec<f64>, trace: DinkelbachTrace },
    Infeasible { b: usize },
}

fn run_dinkelbach(
    model: &LinkModel,
    sur: &Surrogate,
    chi0: f64,
    start: &[f64],
    cap: Option<&AccessRateCap>,
    cfg: &AccessConfig,
) -> Result<DinkelbachRun, KernelError> {
    let mut chi = chi0.max(0.0);
    let mut trace = DinkelbachTrace {
        chi: vec![chi],
        gap: f64::INFINITY,
        converged: false,
    };
    let mut best_x = start.to_vec();
    let mut warm = start.to_vec();
    for _ in 0..cfg.dinkelbach_max_iter {
        let problem = parametric(model, sur, chi, cap);
        let z0 = barrier_start(model, sur, &warm);
        let sol = match solve_convex(&problem.program, &z0, cfg.barrier_tol)? {
            ConvexOutcome::Solved(s) => s,
            ConvexOutcome::Infeasible { constraint, .. } => {
                let b = problem.owners.get(constraint).copied().unwrap_or(model.links[0].b);
                return Ok(DinkelbachRun::Infeasible { b });
            }
        };
        let mut x: Vec<f64> = sol.x[..model.len()].to_vec();
        let mut num = sur.numerator(model, &x);
        let mut den = model.power_watts(&x);
        if num - chi * den < 0.0 && trace.chi.len() > 1 {
            // the solve fell short of the point that defined χ
            x = warm.clone();
            num = sur.numerator(model, &x);
            den = model.power_watts(&x);
        }
        let gap = num - chi * den;
        trace.gap = gap;
        best_x = x.clone();
        if den <= 0.0 {
            trace.converged = true;
            break;
        }
        if gap <= cfg.dinkelbach_tol {
            trace.converged = true;
            break;
        }
        let next = num / den;
        if next > chi {
            chi = next;
            trace.chi.push(chi);
            warm = x;
        } else {
            // no representable improvement left
            trace.converged = gap <= cfg.dinkelbach_tol.sqrt();
            break;
        }
    }
    Ok(DinkelbachRun::Solved { x: best_x, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcTrace {
    pub links: Vec<LinkKey>,
    /// Strongest eavesdropper rate per link at every iterate (start point first).
    pub eve_rates: Vec<Vec<f64>>,
    /// True energy efficiency at every iterate.
    pub energy_efficiency: Vec<f64>,
    pub dinkelbach: Vec<DinkelbachTrace>,
    pub converged: bool,
}

impl DcTrace {
    /// Sum over links of the strongest eavesdropper rate, per iterate.
    pub fn total_eve_rate(&self) -> Vec<f64> {
        self.eve_rates.iter().map(|r| r.iter().sum()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AccessSolution {
    pub state: AllocationState,
    pub energy_efficiency: f64,
    pub trace: DcTrace,
}

#[derive(Debug, Clone)]
pub enum AccessOutcome {
    Solved(AccessSolution),
    /// The scheduled links of BS `b` cannot meet their demand.
    Infeasible { b: usize },
}

fn true_efficiency(model: &LinkModel, x: &[f64]) -> f64 {
    let den = model.power_watts(x);
    if den <= 0.0 {
        return 0.0;
    }
    (0..model.len()).map(|i| model.secrecy(i, x).max(0.0)).sum::<f64>() / den
}

fn write_back(inst: &NetworkInstance, model: &LinkModel, alloc: &AllocationState, x: &[f64]) -> Result<AllocationState, SolveError> {
    let mut state = alloc.clone();
    for (i, link) in model.links.iter().enumerate() {
        state.access_power[link.idx()] = model.scale * x[i].max(0.0);
    }
    for link in &model.links {
        let terms = epigraph_terms(inst, &state, link)?;
        state.eve_bound[link.idx()] = terms.eve_bound;
        state.secrecy_aux[link.idx()] = terms.delta;
    }
    Ok(state)
}

/// Scheduled links that carry demand; the others hold their codebook at zero power.
fn scheduled_model(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario) -> LinkModel {
    let links = alloc
        .scheduled_links()
        .into_iter()
        .filter(|l| user_demand(inst, alloc, scenario, l.b, l.u, l.t) > 0.0)
        .collect();
    LinkModel::build(inst, alloc, scenario, links)
}

/// One Dinkelbach solve of the surrogate linearized at the current powers.
pub fn dinkelbach_access(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    scenario: Scenario,
    chi0: f64,
    cfg: &AccessConfig,
) -> Result<(AccessOutcome, DinkelbachTrace), SolveError> {
    let model = scheduled_model(inst, alloc, scenario);
    let empty_trace = DinkelbachTrace {
        chi: vec![0.0],
        gap: 0.0,
        converged: true,
    };
    if model.len() == 0 {
        let solution = AccessSolution {
            state: alloc.clone(),
            energy_efficiency: 0.0,
            trace: DcTrace {
                links: Vec::new(),
                eve_rates: Vec::new(),
                energy_efficiency: Vec::new(),
                dinkelbach: vec![empty_trace.clone()],
                converged: true,
            },
        };
        return Ok((AccessOutcome::Solved(solution), empty_trace));
    }
    let xr: Vec<f64> = model.links.iter().map(|l| alloc.access_power[l.idx()] / model.scale).collect();
    let sur = Surrogate::at(&model, &xr);
    match run_dinkelbach(&model, &sur, chi0, &xr, None, cfg)? {
        DinkelbachRun::Infeasible { b } => Ok((AccessOutcome::Infeasible { b }, empty_trace)),
        DinkelbachRun::Solved { x, trace, .. } => {
            let state = write_back(inst, &model, alloc, &x)?;
            let solution = AccessSolution {
                energy_efficiency: true_efficiency(&model, &x),
                state,
                trace: DcTrace {
                    links: model.links.clone(),
                    eve_rates: vec![(0..model.len()).map(|i| model.eve_rate(i, &x)).collect()],
                    energy_efficiency: vec![true_efficiency(&model, &x)],
                    dinkelbach: vec![trace.clone()],
                    converged: true,
                },
            };
            Ok((AccessOutcome::Solved(solution), trace))
        }
    }
}

/// Successive convexification of the secrecy constraints; each step solves
/// the surrogate with Dinkelbach's method. Starts from the uniform
/// high-power point.
pub fn dc_outer_loop(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    scenario: Scenario,
    cap: Option<&AccessRateCap>,
    cfg: &AccessConfig,
) -> Result<AccessOutcome, SolveError> {
    let model = scheduled_model(inst, alloc, scenario);
    let mut trace = DcTrace {
        links: model.links.clone(),
        eve_rates: Vec::new(),
        energy_efficiency: Vec::new(),
        dinkelbach: Vec::new(),
        converged: true,
    };
    if model.len() == 0 {
        let mut state = alloc.clone();
        state.access_power.fill(0.0);
        return Ok(AccessOutcome::Solved(AccessSolution {
            state,
            energy_efficiency: 0.0,
            trace,
        }));
    }
    let mut xr = model.start_point(inst);
    trace.eve_rates.push((0..model.len()).map(|i| model.eve_rate(i, &xr)).collect());
    trace.energy_efficiency.push(true_efficiency(&model, &xr));
    let mut chi0 = 0.0;
    trace.converged = false;
    for _ in 0..cfg.dc_max_iter {
        let sur = Surrogate::at(&model, &xr);
        let (x, dk) = match run_dinkelbach(&model, &sur, chi0, &xr, cap, cfg)? {
            DinkelbachRun::Infeasible { b } => return Ok(AccessOutcome::Infeasible { b }),
            DinkelbachRun::Solved { x, trace } => (x, trace),
        };
        let efficiency = true_efficiency(&model, &x);
        if trace.dinkelbach.len() > 0 && efficiency < *trace.energy_efficiency.last().unwrap() {
            // past convergence: the step only reflects solver noise
            trace.converged = true;
            break;
        }
        trace.dinkelbach.push(dk);
        trace.eve_rates.push((0..model.len()).map(|i| model.eve_rate(i, &x)).collect());
        trace.energy_efficiency.push(efficiency);
        let change = x.iter().zip(&xr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = x.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
        xr = x;
        let den = model.power_watts(&xr);
        chi0 = if den > 0.0 {
            (0..model.len()).map(|i| model.secrecy(i, &xr)).sum::<f64>() / den
        } else {
            0.0
        };
        if change <= cfg.dc_tol * size {
            trace.converged = true;
            break;
        }
    }
    let state = write_back(inst, &model, alloc, &xr)?;
    Ok(AccessOutcome::Solved(AccessSolution {
        energy_efficiency: true_efficiency(&model, &xr),
        state,
        trace,
    }))
}

/// Removes every link of BS `b` from the schedule.
pub fn idle_bs(alloc: &mut AllocationState, b: usize) {
    let links: Vec<LinkKey> = alloc.active_links().into_iter().filter(|l| l.b == b).collect();
    for link in links {
        alloc.codebook[link.idx()] = 0.0;
        alloc.access_power[link.idx()] = 0.0;
        alloc.eve_bound[link.idx()] = 0.0;
        alloc.secrecy_aux[link.idx()] = 0.0;
        alloc.worst_case.remove(&link);
    }
}

#[derive(Debug, Clone)]
pub struct AccessReport {
    pub solution: AccessSolution,
    /// BSs idled because their demand could not be met.
    pub dropped: Vec<usize>,
}

/// [`dc_outer_loop`], idling BSs whose links are infeasible until the rest solve.
pub fn optimize_access(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    scenario: Scenario,
    cap: Option<&AccessRateCap>,
    cfg: &AccessConfig,
) -> Result<AccessReport, SolveError> {
    let mut current = alloc.clone();
    let mut dropped = Vec::new();
    loop {
        match dc_outer_loop(inst, &current, scenario, cap, cfg)? {
            AccessOutcome::Solved(solution) => return Ok(AccessReport { solution, dropped }),
            AccessOutcome::Infeasible { b } => {
                if dropped.contains(&b) {
                    return Err(KernelError::Numerical(format!("access problem stays infeasible after idling bs {b}")).into());
                }
                idle_bs(&mut current, b);
                dropped.push(b);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// codebook assignment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub link: LinkKey,
    /// Smallest power meeting the demand against the worst-case eavesdroppers, W.
    pub power: f64,
    /// Secrecy rate delivered at that power, bits/s/Hz.
    pub secrecy: f64,
}

/// Worst-case minimal power for `link`, with other BSs' transmissions fixed.
pub fn candidate_power(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario, link: &LinkKey) -> Option<Candidate> {
    let LinkKey { b, u, m, t } = *link;
    let c = inst.mbits_per_rate();
    let demand = user_demand(inst, alloc, scenario, b, u, t) / c;
    if demand <= 0.0 {
        return Some(Candidate {
            link: *link,
            power: 0.0,
            secrecy: 0.0,
        });
    }
    let g = &inst.channels.access_gain;
    let others = |b2: usize| -> f64 {
        (0..inst.num_users())
            .map(|u2| alloc.codebook[[b2, u2, m, t]] * alloc.access_power[[b2, u2, m, t]])
            .sum()
    };
    // inter-cell only, so independent of this BS's own schedule
    let (_, interference) = access_terms(inst, alloc, b, u, m, t);
    let gain = codebook_gain(inst, m, |n| g[[b, b, u, n, t]]) / (interference + user_noise(inst, b, u, m));
    let target = demand.exp2();
    let mut power = (target - 1.0) / gain;
    for q in 0..inst.num_eves() {
        let own = codebook_gain(inst, m, |n| inst.channels.eve_upper(b, q, n, t));
        let jam: f64 = (0..inst.num_bs())
            .filter(|&b2| b2 != b)
            .map(|b2| others(b2) * codebook_gain(inst, m, |n| inst.channels.eve_lower(b2, q, n, t)))
            .sum();
        let eve_gain = own / (jam + eve_noise(inst, q, m));
        let margin = gain - target * eve_gain;
        if !(margin > 0.0) {
            return None;
        }
        power = power.max((target - 1.0) / margin);
    }
    if !power.is_finite() {
        return None;
    }
    Some(Candidate {
        link: *link,
        power,
        secrecy: demand,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookAssignment {
    /// Binary assignment `[b, u, m, t]`.
    pub codebook: Array4<f64>,
    /// Relaxed assignment before rounding.
    pub relaxed: Array4<f64>,
    /// Minimal powers of the chosen candidates, a starting point for power control.
    pub power: Array4<f64>,
    pub chi_trace: Vec<f64>,
}

struct CandidateLp {
    candidates: Vec<Candidate>,
    /// MFCD user selectors `(b, u)`, placed after the candidates.
    selectors: Vec<(usize, usize)>,
    /// Codebook reuse `[n, t]` already taken by kept links.
    preload: Array2<usize>,
}

impl CandidateLp {
    fn dim(&self) -> usize {
        self.candidates.len() + self.selectors.len()
    }

    fn base(&self, inst: &NetworkInstance, scenario: Scenario) -> LinearProgram {
        let nc = self.candidates.len();
        let dim = self.dim();
        let mut lp = LinearProgram::new(dim);
        let nb = inst.num_bs();
        let nf = inst.num_frames();
        match scenario {
            Scenario::Sfcd => {
                for b in 0..nb {
                    let mut row = vec![0.0; dim];
                    let mut any = false;
                    for (j, c) in self.candidates.iter().enumerate() {
                        if c.link.b == b {
                            row[j] = 1.0;
                            any = true;
                        }
                    }
                    if any {
                        lp.add_le(row, 1.0);
                    }
                }
            }
            Scenario::Mfcd => {
                for (si, &(b, u)) in self.selectors.iter().enumerate() {
                    for t in 0..nf {
                        let mut row = vec![0.0; dim];
                        for (j, c) in self.candidates.iter().enumerate() {
                            if c.link.b == b && c.link.u == u && c.link.t == t {
                                row[j] = 1.0;
                            }
                        }
                        row[nc + si] = -1.0;
                        lp.add_eq(row, 0.0);
                    }
                }
                for b in 0..nb {
                    let mut row = vec![0.0; dim];
                    let mut any = false;
                    for (si, &(b2, _)) in self.selectors.iter().enumerate() {
                        if b2 == b {
                            row[nc + si] = 1.0;
                            any = true;
                        }
                    }
                    if any {
                        lp.add_le(row, 1.0);
                    }
                }
            }
        }
        for n in 0..inst.num_subcarriers() {
            for t in 0..nf {
                let mut row = vec![0.0; dim];
                let mut any = false;
                for (j, c) in self.candidates.iter().enumerate() {
                    if c.link.t == t && inst.codebooks.incidence[[n, c.link.m]] {
                        row[j] = 1.0;
                        any = true;
                    }
                }
                if any {
                    lp.add_le(row, inst.reuse_cap.saturating_sub(self.preload[[n, t]]) as f64);
                }
            }
        }
        let period = inst.frame_duration();
        for b in 0..nb {
            for f in 0..nf {
                let avail = available_energy(inst, b, f);
                let mut row = vec![0.0; dim];
                let mut any = false;
                for (j, c) in self.candidates.iter().enumerate() {
                    if c.link.b == b && c.link.t <= f && c.power > 0.0 {
                        row[j] = period * c.power / avail.max(f64::MIN_POSITIVE);
                        any = true;
                    }
                }
                if any {
                    lp.add_le(row, 1.0);
                }
            }
        }
        lp
    }

    fn service_row(&self, scenario: Scenario) -> Vec<f64> {
        let nc = self.candidates.len();
        let mut row = vec![0.0; self.dim()];
        match scenario {
            Scenario::Sfcd => row[..nc].iter_mut().for_each(|v| *v = 1.0),
            Scenario::Mfcd => row[nc..].iter_mut().for_each(|v| *v = 1.0),
        }
        row
    }
}

const CODEBOOK_LP_TOL: f64 = 1e-9;
/// Relative service level stage B may give up against stage A.
const SERVICE_SLACK: f64 = 1e-4;

fn lp_optimum(lp: &LinearProgram) -> Result<Option<Vec<f64>>, KernelError> {
    match solve_lp(lp, CODEBOOK_LP_TOL)? {
        LpOutcome::Optimal(s) => Ok(Some(s.x)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(KernelError::Numerical("codebook LP is unbounded".into())),
    }
}

/// Relaxed codebook selection by Dinkelbach over linear programs, followed
/// by greedy rounding that keeps the reuse cap and energy budgets. The
/// current links of the BSs in `keep` stay as they are.
pub fn codebook_assign(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    scenario: Scenario,
    keep: &[usize],
    cfg: &AccessConfig,
) -> Result<CodebookAssignment, SolveError> {
    let (nb, nu, nm, nf) = inst.link_dims();
    let kept: Vec<LinkKey> = alloc.scheduled_links().into_iter().filter(|l| keep.contains(&l.b)).collect();
    let mut preload = Array2::<usize>::zeros((inst.num_subcarriers(), nf));
    for l in &kept {
        for n in inst.codebooks.subcarriers(l.m) {
            preload[[n, l.t]] += 1;
        }
    }
    let c = inst.mbits_per_rate();
    let period = inst.frame_duration();
    let carries = |b: usize, t: usize| uncached_bits(inst, alloc, scenario, b, t) <= c * backhaul_capacity(inst, alloc, b, t) + 1e-12;

    let mut candidates = Vec::new();
    for b in 0..nb {
        if keep.contains(&b) || (scenario == Scenario::Mfcd && !(0..nf).all(|t| carries(b, t))) {
            continue;
        }
        for u in 0..nu {
            if inst.catalog.user_files(b, u).next().is_none() {
                continue;
            }
            for t in 0..nf {
                if !carries(b, t) {
                    continue;
                }
                for m in 0..nm {
                    let link = LinkKey::new(b, u, m, t);
                    if let Some(cand) = candidate_power(inst, alloc, scenario, &link) {
                        if period * cand.power <= available_energy(inst, b, t) {
                            candidates.push(cand);
                        }
                    }
                }
            }
        }
    }
    let mut selectors = Vec::new();
    if scenario == Scenario::Mfcd {
        for b in 0..nb {
            for u in 0..nu {
                let complete = (0..nf).all(|t| candidates.iter().any(|c| c.link.b == b && c.link.u == u && c.link.t == t));
                if complete {
                    selectors.push((b, u));
                }
            }
        }
        candidates.retain(|c| selectors.contains(&(c.link.b, c.link.u)));
    }
    let problem = CandidateLp {
        candidates,
        selectors,
        preload,
    };
    let nc = problem.candidates.len();
    let mut relaxed = Array4::zeros((nb, nu, nm, nf));
    let mut chi_trace = vec![0.0];
    if nc > 0 {
        // stage A: serve as many BSs as possible
        let service = problem.service_row(scenario);
        let stage_a = problem.base(inst, scenario).maximize(service.clone());
        let stage_a_x = lp_optimum(&stage_a)?;
        let served = match &stage_a_x {
            Some(x) => service.iter().zip(x).map(|(a, v)| a * v).sum::<f64>(),
            None => 0.0,
        };
        // stage B: Dinkelbach on Σ s·R / Σ s·p at that service level
        let mut chi = 0.0;
        let mut best = stage_a_x;
        for _ in 0..cfg.dinkelbach_max_iter {
            let weights: Vec<f64> = (0..problem.dim())
                .map(|j| {
                    if j < nc {
                        let cand = &problem.candidates[j];
                        cand.secrecy - chi * cand.power
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut lp = problem.base(inst, scenario).maximize(weights);
            lp.add_ge(service.clone(), served * (1.0 - SERVICE_SLACK));
            // the service face is thin; a stalled solve keeps the last iterate
            let Ok(Some(x)) = lp_optimum(&lp) else { break };
            let num: f64 = (0..nc).map(|j| x[j] * problem.candidates[j].secrecy).sum();
            let den: f64 = (0..nc).map(|j| x[j] * problem.candidates[j].power).sum();
            best = Some(x);
            if den <= 0.0 || num - chi * den <= cfg.dinkelbach_tol * (1.0 + num.abs()) {
                break;
            }
            let next = num / den;
            if next <= chi {
                break;
            }
            chi = next;
            chi_trace.push(chi);
        }
        if let Some(x) = best {
            for (j, cand) in problem.candidates.iter().enumerate() {
                relaxed[cand.link.idx()] = x[j].clamp(0.0, 1.0);
            }
        }
    }
    let (mut codebook, mut power) = round_codebook(inst, scenario, &problem.candidates, &relaxed, &problem.preload);
    for l in &kept {
        codebook[l.idx()] = 1.0;
        power[l.idx()] = alloc.access_power[l.idx()];
    }
    Ok(CodebookAssignment {
        codebook,
        relaxed,
        power,
        chi_trace,
    })
}

/// Greedy rounding: BSs in order of their strongest relaxed entry pick the
/// best candidate (largest relaxed value, then cheapest) that keeps the
/// reuse cap and the energy budget.
fn round_codebook(
    inst: &NetworkInstance,
    scenario: Scenario,
    candidates: &[Candidate],
    relaxed: &Array4<f64>,
    preload: &Array2<usize>,
) -> (Array4<f64>, Array4<f64>) {
    let (nb, nu, nm, nf) = inst.link_dims();
    let mut codebook = Array4::zeros((nb, nu, nm, nf));
    let mut power = Array4::zeros((nb, nu, nm, nf));
    let mut load = preload.clone();
    let period = inst.frame_duration();
    let value = |c: &Candidate| relaxed[c.link.idx()];
    let order_key = |a: &&Candidate, b: &&Candidate| {
        value(b)
            .total_cmp(&value(a))
            .then(a.power.total_cmp(&b.power))
            .then(a.link.cmp(&b.link))
    };
    let strongest = |b: usize| candidates.iter().filter(|c| c.link.b == b).map(value).fold(0.0, f64::max);
    let mut bs_order: Vec<usize> = (0..nb).collect();
    bs_order.sort_by(|&x, &y| strongest(y).total_cmp(&strongest(x)).then(x.cmp(&y)));

    let fits = |load: &Array2<usize>, m: usize, t: usize| {
        inst.codebooks.subcarriers(m).all(|n| load[[n, t]] < inst.reuse_cap)
    };
    let energy_ok = |b: usize, picks: &[&Candidate]| {
        (0..nf).all(|f| {
            let spent: f64 = picks.iter().filter(|c| c.link.t <= f).map(|c| period * c.power).sum();
            spent <= available_energy(inst, b, f) * (1.0 + 1e-12)
        })
    };
    for b in bs_order {
        let mut own: Vec<&Candidate> = candidates.iter().filter(|c| c.link.b == b).collect();
        own.sort_by(order_key);
        let chosen: Option<Vec<&Candidate>> = match scenario {
            Scenario::Sfcd => own
                .iter()
                .find(|c| fits(&load, c.link.m, c.link.t) && energy_ok(b, &[**c]))
                .map(|c| vec![*c]),
            Scenario::Mfcd => {
                let mut users: Vec<usize> = (0..nu).filter(|&u| own.iter().any(|c| c.link.u == u)).collect();
                let user_value = |u: usize| own.iter().filter(|c| c.link.u == u).map(|c| value(c)).fold(0.0, f64::max);
                users.sort_by(|&x, &y| user_value(y).total_cmp(&user_value(x)).then(x.cmp(&y)));
                let mut found = None;
                for u in users {
                    let mut picks: Vec<&Candidate> = Vec::new();
                    let mut trial = load.clone();
                    let mut complete = true;
                    for t in 0..nf {
                        let pick = own
                            .iter()
                            .filter(|c| c.link.u == u && c.link.t == t)
                            .find(|c| fits(&trial, c.link.m, t) && {
                                let mut with = picks.clone();
                                with.push(c);
                                energy_ok(b, &with)
                            });
                        match pick {
                            Some(c) => {
                                for n in inst.codebooks.subcarriers(c.link.m) {
                                    trial[[n, t]] += 1;
                                }
                                picks.push(c);
                            }
                            None => {
                                complete = false;
                                break;
                            }
                        }
                    }
                    if complete {
                        found = Some(picks);
                        break;
                    }
                }
                found
            }
        };
        if let Some(picks) = chosen {
            for c in picks {
                codebook[c.link.idx()] = 1.0;
                power[c.link.idx()] = c.power;
                for n in inst.codebooks.subcarriers(c.link.m) {
                    load[[n, c.link.t]] += 1;
                }
            }
        }
    }
    (codebook, power)
}

// ---------------------------------------------------------------------------
// file splitting

/// Parts below this fraction of the file are dropped.
const SPLIT_SNAP: f64 = 1e-6;
const SPLIT_LP_TOL: f64 = 1e-10;

/// Worst-case secrecy rate of `link` at `power`, other BSs' transmissions fixed.
fn paced_secrecy(inst: &NetworkInstance, alloc: &AllocationState, link: &LinkKey, power: f64) -> f64 {
    let LinkKey { b, u, m, t } = *link;
    if power <= 0.0 {
        return 0.0;
    }
    let g = &inst.channels.access_gain;
    let others = |b2: usize| -> f64 {
        (0..inst.num_users())
            .map(|u2| alloc.codebook[[b2, u2, m, t]] * alloc.access_power[[b2, u2, m, t]])
            .sum()
    };
    let (_, interference) = access_terms(inst, alloc, b, u, m, t);
    let rd = (power * codebook_gain(inst, m, |n| g[[b, b, u, n, t]]) / (interference + user_noise(inst, b, u, m))).ln_1p();
    let mut re: f64 = 0.0;
    for q in 0..inst.num_eves() {
        let own = codebook_gain(inst, m, |n| inst.channels.eve_upper(b, q, n, t));
        let jam: f64 = (0..inst.num_bs())
            .filter(|&b2| b2 != b)
            .map(|b2| others(b2) * codebook_gain(inst, m, |n| inst.channels.eve_lower(b2, q, n, t)))
            .sum();
        re = re.max((power * own / (jam + eve_noise(inst, q, m))).ln_1p());
    }
    ((rd - re) / LN_2).max(0.0)
}

/// Per-frame file parts `[k, t]` maximizing the smallest slack of the
/// downlink and backhaul traffic constraints. Each BS is paced to spend
/// its energy as it arrives; BSs without a schedule are represented by the
/// user and codebooks with the most paced capacity. Returns the current
/// split when the parts cannot satisfy every schedule.
pub fn split_files(inst: &NetworkInstance, alloc: &AllocationState) -> Result<Array2<f64>, SolveError> {
    let nb = inst.num_bs();
    let nf = inst.num_frames();
    let nk = inst.num_files();
    let c = inst.mbits_per_rate();
    let sizes = &inst.catalog.sizes_mbits;
    if nf == 1 {
        return Ok(Array2::from_shape_fn((nk, 1), |(k, _)| sizes[k]));
    }
    let period = inst.frame_duration();
    let paced = |b: usize, t: usize| {
        let arriving = inst.energy.harvested_j[[b, t]] + if t == 0 { inst.energy.initial_battery_j[b] } else { 0.0 };
        arriving / period
    };
    let links = alloc.scheduled_links();
    // (b, u, per-frame capacity in Mbits)
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for b in (0..nb).filter(|&b| inst.catalog.bs_has_requests(b)) {
        let own: Vec<&LinkKey> = links.iter().filter(|l| l.b == b).collect();
        if let Some(first) = own.first() {
            let caps = (0..nf)
                .map(|t| match own.iter().find(|l| l.t == t && l.u == first.u) {
                    Some(l) => c * paced_secrecy(inst, alloc, l, paced(b, t)),
                    None => 0.0,
                })
                .collect();
            rows.push((b, first.u, caps));
            continue;
        }
        let best = (0..inst.num_users())
            .filter(|&u| inst.catalog.user_files(b, u).next().is_some())
            .map(|u| {
                let caps: Vec<f64> = (0..nf)
                    .map(|t| {
                        (0..inst.num_codebooks())
                            .map(|m| c * paced_secrecy(inst, alloc, &LinkKey::new(b, u, m, t), paced(b, t)))
                            .fold(0.0, f64::max)
                    })
                    .collect();
                (u, caps)
            })
            .max_by(|x, y| x.1.iter().sum::<f64>().total_cmp(&y.1.iter().sum::<f64>()));
        if let Some((u, caps)) = best {
            rows.push((b, u, caps));
        }
    }
    let mut relevant = vec![false; nk];
    for (b, u, _) in &rows {
        for k in inst.catalog.user_files(*b, *u) {
            relevant[k] = true;
        }
        for (k, r) in relevant.iter_mut().enumerate() {
            if inst.catalog.requested_at(*b, k) && alloc.cache[[*b, k]] < 1.0 {
                *r = true;
            }
        }
    }
    if !relevant.iter().any(|&r| r) {
        return Ok(alloc.split.clone());
    }
    let var = |k: usize, t: usize| k * nf + t;
    let z = nk * nf;
    let mut lp = LinearProgram::new(z + 1).maximize({
        let mut obj = vec![0.0; z + 1];
        obj[z] = 1.0;
        obj
    });
    lp.set_bounds(z, f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..nk {
        if relevant[k] {
            let mut row = vec![0.0; z + 1];
            for t in 0..nf {
                row[var(k, t)] = 1.0;
            }
            lp.add_eq(row, sizes[k]);
        } else {
            for t in 0..nf {
                lp.set_bounds(var(k, t), alloc.split[[k, t]], alloc.split[[k, t]]);
            }
        }
    }
    for (b, u, caps) in &rows {
        for t in 0..nf {
            let mut row = vec![0.0; z + 1];
            for k in inst.catalog.user_files(*b, *u) {
                row[var(k, t)] += 1.0;
            }
            row[z] = 1.0;
            lp.add_le(row, caps[t]);
        }
        let has_backhaul = (0..inst.num_subcarriers()).any(|n| alloc.backhaul_subcarrier[[*b, n]] > 0.5);
        if !has_backhaul {
            continue;
        }
        for t in 0..nf {
            let mut row = vec![0.0; z + 1];
            let mut any = false;
            for k in 0..nk {
                if inst.catalog.requested_at(*b, k) {
                    let w = 1.0 - alloc.cache[[*b, k]];
                    if w > 0.0 {
                        row[var(k, t)] = w;
                        any = true;
                    }
                }
            }
            if any {
                row[z] = 1.0;
                lp.add_le(row, c * backhaul_capacity(inst, alloc, *b, t));
            }
        }
    }
    match solve_lp(&lp, SPLIT_LP_TOL)? {
        LpOutcome::Optimal(sol) => {
            let mut split = Array2::from_shape_fn((nk, nf), |(k, t)| {
                if relevant[k] {
                    sol.x[var(k, t)].max(0.0)
                } else {
                    alloc.split[[k, t]]
                }
            });
            for k in (0..nk).filter(|&k| relevant[k]) {
                let mut row = split.row_mut(k);
                row.mapv_inplace(|v| if v < SPLIT_SNAP * sizes[k] { 0.0 } else { v });
                let total = row.sum();
                if total > 0.0 {
                    row.mapv_inplace(|v| v * sizes[k] / total);
                }
            }
            Ok(split)
        }
        LpOutcome::Infeasible => Ok(alloc.split.clone()),
        other => Err(KernelError::Numerical(format!("split LP returned {}", other.status())).into()),
    }
}
