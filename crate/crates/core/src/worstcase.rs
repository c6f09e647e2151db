//! Worst-case eavesdropper channels inside the uncertainty box, found with
//! the Charnes-Cooper linear program.

use ndarray::{Array2, Array3};

use crate::error::WorstCaseError;
use crate::kernel::{solve_lp, LinearProgram, LpOutcome};
use crate::model::NetworkInstance;
use crate::rates::{eve_noise, eve_sinr, AllocationState, LinkKey, WorstCaseChannels};

const LP_TOLERANCE: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseSolution {
    /// Adversarial gains `[b', n]` in the link's frame.
    pub channels: Array2<f64>,
    /// Optimal eavesdropper SINR.
    pub sinr: f64,
}

/// Coefficients of the eavesdropper SINR as a linear-fractional function of
/// the gains `h[b', n]`: signal `Σ c̄·h` over `Σ ĉ·h + σ²`.
fn sinr_coefficients(inst: &NetworkInstance, alloc: &AllocationState, link: &LinkKey) -> (Array2<f64>, Array2<f64>) {
    let (nb, nn) = (inst.num_bs(), inst.num_subcarriers());
    let LinkKey { b, u, m, t } = *link;
    let cb = &inst.codebooks;
    let mut signal = Array2::zeros((nb, nn));
    let mut interference = Array2::zeros((nb, nn));
    let own = alloc.codebook[[b, u, m, t]] * alloc.access_power[[b, u, m, t]];
    for n in cb.subcarriers(m) {
        let eta = cb.proportion[[n, m]];
        signal[[b, n]] = eta * own;
        for b2 in (0..nb).filter(|&x| x != b) {
            let total: f64 = (0..inst.num_users())
                .map(|u2| alloc.codebook[[b2, u2, m, t]] * alloc.access_power[[b2, u2, m, t]])
                .sum();
            interference[[b2, n]] = eta * total;
        }
    }
    (signal, interference)
}

/// Evaluates the SINR for gains `h` given the coefficient tensors.
fn sinr_at(signal: &Array2<f64>, interference: &Array2<f64>, h: &Array2<f64>, noise: f64) -> f64 {
    let num: f64 = (signal * h).sum();
    let den: f64 = (interference * h).sum() + noise;
    num / den
}

/// Maximizes eavesdropper `q`'s SINR on `link` over the uncertainty box.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_lp(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    b: usize,
    u: usize,
    q: usize,
    m: usize,
    t: usize,
) -> Result<WorstCaseSolution, WorstCaseError> {
    alloc.check_dims(inst)?;
    let link = LinkKey::new(b, u, m, t);
    let (nb, nn) = (inst.num_bs(), inst.num_subcarriers());
    let noise = eve_noise(inst, q, m);
    let nominal = Array2::from_shape_fn((nb, nn), |(b2, n)| inst.channels.eve_gain_est[[b2, q, n, t]]);
    let (signal, interference) = sinr_coefficients(inst, alloc, &link);

    if signal.iter().all(|&c| c == 0.0) {
        return Ok(WorstCaseSolution {
            sinr: 0.0,
            channels: nominal,
        });
    }
    // coordinates that influence the objective
    let coords: Vec<(usize, usize)> = (0..nb)
        .flat_map(|b2| (0..nn).map(move |n| (b2, n)))
        .filter(|&(b2, n)| signal[[b2, n]] != 0.0 || interference[[b2, n]] != 0.0)
        .collect();
    let lo = |(b2, n): (usize, usize)| inst.channels.eve_lower(b2, q, n, t);
    let hi = |(b2, n): (usize, usize)| inst.channels.eve_upper(b2, q, n, t);
    if coords.iter().all(|&c| lo(c) == hi(c)) {
        return Ok(WorstCaseSolution {
            sinr: eve_sinr(inst, alloc, b, u, q, m, t, nominal.view())?,
            channels: nominal,
        });
    }

    // Box-normalized gains h = lo + (hi − lo)·y with y ∈ [0, 1]. Charnes-Cooper
    // with τ = d0 / (d0 + Σ d·y) and w = τ·y: maximize (a0·τ + Σ a·w) / d0
    // subject to τ + Σ (d / d0)·w = 1 and 0 ≤ w ≤ τ.
    let k = coords.len();
    let tau = k;
    let width = |c: (usize, usize)| hi(c) - lo(c);
    let a0: f64 = coords.iter().map(|&c| signal[[c.0, c.1]] * lo(c)).sum();
    let d0: f64 = noise + coords.iter().map(|&c| interference[[c.0, c.1]] * lo(c)).sum::<f64>();
    let objective: Vec<f64> = coords
        .iter()
        .map(|&c| signal[[c.0, c.1]] * width(c) / d0)
        .chain(std::iter::once(a0 / d0))
        .collect();
    let mut lp = LinearProgram::new(k + 1).maximize(objective);
    let mut norm_row: Vec<f64> = coords.iter().map(|&c| interference[[c.0, c.1]] * width(c) / d0).collect();
    norm_row.push(1.0);
    lp.add_eq(norm_row, 1.0);
    for i in 0..k {
        let mut row = vec![0.0; k + 1];
        row[i] = 1.0;
        row[tau] = -1.0;
        lp.add_le(row, 0.0);
    }
    let solution = match solve_lp(&lp, LP_TOLERANCE)? {
        LpOutcome::Optimal(s) => s,
        other => return Err(WorstCaseError::UnexpectedStatus(other.status())),
    };
    let scale = solution.x[tau];
    if !(scale > 1e-14) {
        return Err(WorstCaseError::DegenerateDenominator { mu: scale });
    }
    let mut relaxed = nominal.clone();
    let mut corner = nominal.clone();
    for (i, &c) in coords.iter().enumerate() {
        let y = (solution.x[i] / scale).clamp(0.0, 1.0);
        relaxed[[c.0, c.1]] = lo(c) + width(c) * y;
        // snap to the nearer face of the box
        corner[[c.0, c.1]] = if y >= 0.5 { hi(c) } else { lo(c) };
    }
    let relaxed_sinr = sinr_at(&signal, &interference, &relaxed, noise);
    let corner_sinr = sinr_at(&signal, &interference, &corner, noise);
    if corner_sinr >= relaxed_sinr * (1.0 - 1e-9) {
        Ok(WorstCaseSolution {
            channels: corner,
            sinr: corner_sinr,
        })
    } else {
        Ok(WorstCaseSolution {
            channels: relaxed,
            sinr: relaxed_sinr,
        })
    }
}

/// Worst-case channels for one link against every eavesdropper, `[q, b', n]`.
pub fn worst_case_for_link(inst: &NetworkInstance, alloc: &AllocationState, link: &LinkKey) -> Result<Array3<f64>, WorstCaseError> {
    let (nq, nb, nn) = (inst.num_eves(), inst.num_bs(), inst.num_subcarriers());
    let mut out = Array3::zeros((nq, nb, nn));
    for q in 0..nq {
        let sol = worst_case_lp(inst, alloc, link.b, link.u, q, link.m, link.t)?;
        out.index_axis_mut(ndarray::Axis(0), q).assign(&sol.channels);
    }
    Ok(out)
}

/// Worst-case channels for every active link; inactive links fall back to the nominal estimate.
pub fn assemble_worst_case(inst: &NetworkInstance, alloc: &AllocationState) -> Result<WorstCaseChannels, WorstCaseError> {
    let mut store = WorstCaseChannels::default();
    if inst.num_eves() == 0 {
        return Ok(store);
    }
    for link in alloc.active_links() {
        store.insert(link, worst_case_for_link(inst, alloc, &link)?);
    }
    Ok(store)
}
