//! Content placement: the relaxed placement LP with greedy rounding, and the
//! no-caching, random and most-popular baselines.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::kernel::{solve_lp, LinearProgram, LpOutcome};
use crate::model::{stream_rng, NetworkInstance};

const LP_TOLERANCE: f64 = 1e-10;
/// Secondary weight on request multiplicity, used only to break ties
/// between placements that move the same number of backhaul bits.
const MULTIPLICITY_WEIGHT: f64 = 1e-3;
const RANDOM_PLACEMENT_STREAM: u64 = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachingStrategy {
    Lp,
    #[serde(alias = "most_popular")]
    Popular,
    Random,
    None,
}

impl std::str::FromStr for CachingStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lp" => Ok(CachingStrategy::Lp),
            "popular" | "most_popular" => Ok(CachingStrategy::Popular),
            "random" => Ok(CachingStrategy::Random),
            "none" => Ok(CachingStrategy::None),
            other => Err(format!("unknown caching strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for CachingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CachingStrategy::Lp => "lp",
            CachingStrategy::Popular => "popular",
            CachingStrategy::Random => "random",
            CachingStrategy::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Relaxed placement `[b, k]` in `[0, 1]`.
    pub relaxed: Array2<f64>,
    /// Backhaul traffic (Mbits) of the relaxed placement.
    pub relaxed_traffic: f64,
}

fn request_count(inst: &NetworkInstance, b: usize, k: usize) -> usize {
    (0..inst.num_users()).filter(|&u| inst.catalog.requests[[b, u, k]]).count()
}

/// Backhaul bits each BS must fetch for its requested, uncached files.
pub fn placement_traffic(inst: &NetworkInstance, theta: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for b in 0..inst.num_bs() {
        for k in 0..inst.num_files() {
            if inst.catalog.requested_at(b, k) {
                total += (1.0 - theta[[b, k]]) * inst.catalog.sizes_mbits[k];
            }
        }
    }
    total
}

/// Relaxed placement minimizing backhaul traffic subject to cache capacity.
pub fn placement_lp(inst: &NetworkInstance) -> Result<Placement, KernelError> {
    let (nb, nk) = (inst.num_bs(), inst.num_files());
    let sizes = &inst.catalog.sizes_mbits;
    let mut relaxed = Array2::zeros((nb, nk));
    for b in 0..nb {
        let files: Vec<usize> = (0..nk).filter(|&k| request_count(inst, b, k) > 0).collect();
        if files.is_empty() {
            continue;
        }
        let weights: Vec<f64> = files
            .iter()
            .map(|&k| sizes[k] * (1.0 + MULTIPLICITY_WEIGHT * request_count(inst, b, k) as f64))
            .collect();
        let mut lp = LinearProgram::new(files.len()).maximize(weights);
        for j in 0..files.len() {
            lp.set_bounds(j, 0.0, 1.0);
        }
        lp.add_le(files.iter().map(|&k| sizes[k]).collect(), inst.cache_capacity_mbits[b]);
        match solve_lp(&lp, LP_TOLERANCE)? {
            LpOutcome::Optimal(sol) => {
                for (j, &k) in files.iter().enumerate() {
                    relaxed[[b, k]] = sol.x[j].clamp(0.0, 1.0);
                }
            }
            other => {
                return Err(KernelError::Numerical(format!("placement LP for bs {b} returned {}", other.status())));
            }
        }
    }
    let relaxed_traffic = placement_traffic(inst, &relaxed);
    Ok(Placement { relaxed, relaxed_traffic })
}

/// Greedy rounding: files in descending relaxed value (ties to the smaller
/// index) are cached whenever they still fit.
pub fn round_placement(relaxed: &Array2<f64>, inst: &NetworkInstance) -> Array2<f64> {
    let (nb, nk) = relaxed.dim();
    let mut theta = Array2::zeros((nb, nk));
    for b in 0..nb {
        let mut order: Vec<usize> = (0..nk).collect();
        let key = |k: usize| (relaxed[[b, k]] * 1e6).round() as i64;
        order.sort_by(|&i, &j| key(j).cmp(&key(i)).then(i.cmp(&j)));
        fill_in_order(inst, b, &order, &mut theta);
    }
    theta
}

fn fill_in_order(inst: &NetworkInstance, b: usize, order: &[usize], theta: &mut Array2<f64>) {
    let capacity = inst.cache_capacity_mbits[b];
    let mut used = 0.0;
    for &k in order {
        let size = inst.catalog.sizes_mbits[k];
        if used + size <= capacity {
            theta[[b, k]] = 1.0;
            used += size;
        }
    }
}

/// Binary placement from one of the reference strategies. `Lp` solves and
/// rounds the placement LP.
pub fn baseline_placement(inst: &NetworkInstance, strategy: CachingStrategy, seed: u64) -> Result<Array2<f64>, KernelError> {
    let (nb, nk) = (inst.num_bs(), inst.num_files());
    let mut theta = Array2::zeros((nb, nk));
    match strategy {
        CachingStrategy::None => {}
        CachingStrategy::Lp => {
            let placement = placement_lp(inst)?;
            theta = round_placement(&placement.relaxed, inst);
        }
        CachingStrategy::Popular => {
            let mut order: Vec<usize> = (0..nk).collect();
            let pop = &inst.catalog.popularity;
            order.sort_by(|&i, &j| pop[j].total_cmp(&pop[i]).then(i.cmp(&j)));
            for b in 0..nb {
                fill_in_order(inst, b, &order, &mut theta);
            }
        }
        CachingStrategy::Random => {
            for b in 0..nb {
                let mut rng = stream_rng(seed, RANDOM_PLACEMENT_STREAM, b as u64);
                let mut order: Vec<usize> = (0..nk).collect();
                order.shuffle(&mut rng);
                fill_in_order(inst, b, &order, &mut theta);
            }
        }
    }
    Ok(theta)
}
