//! Backhaul power and subcarrier allocation under the time-sharing
//! relaxation, followed by rounding and a power-only repair.

use std::f64::consts::LN_2;

use ndarray::{Array2, Array3};

use crate::constraints::backhaul_load;
use crate::error::KernelError;
use crate::kernel::{solve_convex, ConvexOutcome, ConvexProgram};
use crate::model::NetworkInstance;
use crate::rates::{AllocationState, Scenario};

const TOLERANCE: f64 = 1e-9;
/// Occupancies below this are treated as unused when recovering power.
const OCCUPANCY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BackhaulSolution {
    /// Transmit power `[b, n, t]` in W.
    pub power: Array3<f64>,
    /// Subcarrier occupancy `[b, n]`, relaxed or binary.
    pub subcarrier: Array2<f64>,
    /// `Σ ζ·R̃` over BSs, subcarriers and frames, in bits/s/Hz.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackhaulOutcome {
    Solved(BackhaulSolution),
    /// The traffic of BS `b` in frame `t` cannot be carried.
    Infeasible { b: usize, t: usize },
}

impl BackhaulOutcome {
    pub fn solved(self) -> Option<BackhaulSolution> {
        match self {
            BackhaulOutcome::Solved(s) => Some(s),
            BackhaulOutcome::Infeasible { .. } => None,
        }
    }
}

/// Required backhaul rate (bits/s/Hz) per `(b, t)`.
pub fn required_rates(inst: &NetworkInstance, alloc: &AllocationState, scenario: Scenario) -> Array2<f64> {
    let c = inst.mbits_per_rate();
    Array2::from_shape_fn((inst.num_bs(), inst.num_frames()), |(b, t)| backhaul_load(inst, alloc, scenario, b, t) / c)
}

struct Layout {
    nb: usize,
    nn: usize,
    nf: usize,
    /// When set, occupancies are fixed and only powers are variables.
    fixed: Option<Array2<f64>>,
}

impl Layout {
    fn zeta_vars(&self) -> usize {
        if self.fixed.is_some() {
            0
        } else {
            self.nb * self.nn
        }
    }
    fn dim(&self) -> usize {
        self.zeta_vars() + self.nb * self.nn * self.nf
    }
    fn x(&self, b: usize, n: usize, t: usize) -> usize {
        self.zeta_vars() + (b * self.nn + n) * self.nf + t
    }
    fn zeta(&self, b: usize, n: usize) -> Option<usize> {
        if self.fixed.is_some() {
            None
        } else {
            Some(b * self.nn + n)
        }
    }
    fn zeta_value(&self, v: &[f64], b: usize, n: usize) -> f64 {
        match &self.fixed {
            Some(z) => z[[b, n]],
            None => v[b * self.nn + n],
        }
    }
}

/// `ζ log2(1 + x a / ζ)` and its partial derivatives in `(ζ, x)`.
fn perspective(zeta: f64, x: f64, a: f64) -> (f64, f64, f64) {
    if zeta <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let r = x * a / zeta;
    let value = zeta * r.ln_1p() / LN_2;
    let d_x = a / ((1.0 + r) * LN_2);
    let d_zeta = r.ln_1p() / LN_2 - r / ((1.0 + r) * LN_2);
    (value, d_zeta, d_x)
}

fn solve_program(
    inst: &NetworkInstance,
    required: &Array2<f64>,
    layout: Layout,
    with_traffic: bool,
) -> Result<BackhaulOutcome, KernelError> {
    let (nb, nn, nf) = (layout.nb, layout.nn, layout.nf);
    let dim = layout.dim();
    // powers are expressed as fractions of the frame budget
    let budget = |t: usize| inst.backhaul_budget_w[t];
    let gain = |b: usize, n: usize, t: usize| budget(t) * inst.channels.backhaul_gain[[b, n, t]] / inst.channels.noise_bs[[b, n]];
    let layout_ref = &layout;

    let objective = Box::new(move |v: &[f64], g: &mut [f64]| {
        g.iter_mut().for_each(|x| *x = 0.0);
        let mut total = 0.0;
        for b in 0..nb {
            for n in 0..nn {
                let zeta = layout_ref.zeta_value(v, b, n);
                for t in 0..nf {
                    let xi = layout_ref.x(b, n, t);
                    let (val, dz, dx) = perspective(zeta, v[xi].max(0.0), gain(b, n, t));
                    total += val;
                    g[xi] -= dx;
                    if let Some(zi) = layout_ref.zeta(b, n) {
                        g[zi] -= dz;
                    }
                }
            }
        }
        -total
    });
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    for b in 0..nb {
        for n in 0..nn {
            if let Some(zi) = layout.zeta(b, n) {
                upper[zi] = 1.0;
            }
            for t in 0..nf {
                let usable = layout.zeta_value(&vec![1.0; dim], b, n) > 0.0 || layout.fixed.is_none();
                upper[layout.x(b, n, t)] = if usable && budget(t) > 0.0 { 1.0 } else { 0.0 };
                lower[layout.x(b, n, t)] = 0.0;
            }
        }
    }
    let mut cp = ConvexProgram::new(dim, objective).with_bounds(lower.clone(), upper.clone());
    for t in 0..nf {
        let mut row = vec![0.0; dim];
        for b in 0..nb {
            for n in 0..nn {
                row[layout.x(b, n, t)] = 1.0;
            }
        }
        cp.add_le(row, 1.0);
    }
    if layout.fixed.is_none() {
        for n in 0..nn {
            let mut row = vec![0.0; dim];
            for b in 0..nb {
                row[layout.zeta(b, n).unwrap()] = 1.0;
            }
            cp.add_le(row, 1.0);
        }
    }
    let mut traffic_index = Vec::new();
    if with_traffic {
        for b in 0..nb {
            for t in 0..nf {
                let need = required[[b, t]];
                let norm = need.max(1.0);
                if need <= 0.0 {
                    continue;
                }
                traffic_index.push((b, t));
                let layout_ref = &layout;
                cp.add_convex_le(Box::new(move |v: &[f64], g: &mut [f64]| {
                    g.iter_mut().for_each(|x| *x = 0.0);
                    let mut cap = 0.0;
                    for n in 0..nn {
                        let zeta = layout_ref.zeta_value(v, b, n);
                        let xi = layout_ref.x(b, n, t);
                        let (val, dz, dx) = perspective(zeta, v[xi].max(0.0), gain(b, n, t));
                        cap += val;
                        g[xi] = -dx / norm;
                        if let Some(zi) = layout_ref.zeta(b, n) {
                            g[zi] = -dz / norm;
                        }
                    }
                    (need - cap) / norm
                }));
            }
        }
    }

    // interior start: equal occupancy and an even power split
    let mut start = vec![0.0; dim];
    for b in 0..nb {
        for n in 0..nn {
            if let Some(zi) = layout.zeta(b, n) {
                start[zi] = 0.9 / nb as f64;
            }
            for t in 0..nf {
                let xi = layout.x(b, n, t);
                start[xi] = 0.5 * upper[xi] / (nb * nn) as f64;
            }
        }
    }
    let outcome = solve_convex(&cp, &start, TOLERANCE)?;
    let sol = match outcome {
        ConvexOutcome::Solved(s) => s,
        ConvexOutcome::Infeasible { constraint, .. } => {
            let linear = cp.le_rows.len();
            let (b, t) = constraint
                .checked_sub(linear)
                .and_then(|i| traffic_index.get(i).copied())
                .or_else(|| traffic_index.first().copied())
                .unwrap_or((0, 0));
            return Ok(BackhaulOutcome::Infeasible { b, t });
        }
    };
    let v = sol.x;
    let mut subcarrier = Array2::zeros((nb, nn));
    let mut power = Array3::zeros((nb, nn, nf));
    for b in 0..nb {
        for n in 0..nn {
            let zeta = layout.zeta_value(&v, b, n).clamp(0.0, 1.0);
            subcarrier[[b, n]] = zeta;
            for t in 0..nf {
                let x = v[layout.x(b, n, t)].max(0.0) * budget(t);
                power[[b, n, t]] = if zeta > OCCUPANCY_FLOOR { x / zeta } else { 0.0 };
            }
        }
    }
    let capacity = -sol.objective;
    Ok(BackhaulOutcome::Solved(BackhaulSolution {
        power,
        subcarrier,
        capacity,
    }))
}

/// Relaxed joint power/occupancy problem. With `with_traffic`, every
/// `(b, t)` must carry its required backhaul rate.
pub fn solve_backhaul(inst: &NetworkInstance, required: &Array2<f64>, with_traffic: bool) -> Result<BackhaulOutcome, KernelError> {
    let layout = Layout {
        nb: inst.num_bs(),
        nn: inst.num_subcarriers(),
        nf: inst.num_frames(),
        fixed: None,
    };
    solve_program(inst, required, layout, with_traffic)
}

/// Power-only problem for fixed binary occupancies.
pub fn solve_backhaul_power(
    inst: &NetworkInstance,
    required: &Array2<f64>,
    subcarrier: &Array2<f64>,
    with_traffic: bool,
) -> Result<BackhaulOutcome, KernelError> {
    let layout = Layout {
        nb: inst.num_bs(),
        nn: inst.num_subcarriers(),
        nf: inst.num_frames(),
        fixed: Some(subcarrier.clone()),
    };
    solve_program(inst, required, layout, with_traffic)
}

/// Threshold rounding at 0.5 (ties assigned); if two BSs tie on one
/// subcarrier, the smaller index keeps it.
pub fn round_subcarriers(relaxed: &Array2<f64>) -> Array2<f64> {
    let (nb, nn) = relaxed.dim();
    let mut out = Array2::zeros((nb, nn));
    for n in 0..nn {
        let mut best: Option<usize> = None;
        for b in 0..nb {
            if relaxed[[b, n]] >= 0.5 && best.map_or(true, |k| relaxed[[b, n]] > relaxed[[k, n]]) {
                best = Some(b);
            }
        }
        if let Some(b) = best {
            out[[b, n]] = 1.0;
        }
    }
    out
}

/// Gives every subcarrier nobody holds to the BS with the largest relaxed occupancy.
fn fill_unassigned(relaxed: &Array2<f64>, binary: &Array2<f64>) -> Array2<f64> {
    let (nb, nn) = relaxed.dim();
    let mut out = binary.clone();
    for n in 0..nn {
        if (0..nb).any(|b| out[[b, n]] > 0.5) {
            continue;
        }
        let mut best = 0;
        for b in 1..nb {
            if relaxed[[b, n]] > relaxed[[best, n]] {
                best = b;
            }
        }
        if relaxed[[best, n]] > 0.0 {
            out[[best, n]] = 1.0;
        }
    }
    out
}

/// Relaxed solve, rounding, and power-only repair. Returns a binary-occupancy solution.
pub fn allocate_backhaul(inst: &NetworkInstance, required: &Array2<f64>, with_traffic: bool) -> Result<BackhaulOutcome, KernelError> {
    let relaxed = match solve_backhaul(inst, required, with_traffic)? {
        BackhaulOutcome::Solved(s) => s,
        infeasible => return Ok(infeasible),
    };
    let rounded = round_subcarriers(&relaxed.subcarrier);
    let first = solve_backhaul_power(inst, required, &rounded, with_traffic)?;
    if let BackhaulOutcome::Solved(_) = first {
        return Ok(first);
    }
    let filled = fill_unassigned(&relaxed.subcarrier, &rounded);
    if filled != rounded {
        let second = solve_backhaul_power(inst, required, &filled, with_traffic)?;
        if let BackhaulOutcome::Solved(_) = second {
            return Ok(second);
        }
    }
    Ok(first)
}
