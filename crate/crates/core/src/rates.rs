//! Rate expressions: access and eavesdropper SINR, secrecy rate, backhaul
//! rate, and the difference-of-logs splits used by the DC machinery.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use ndarray::{Array2, Array3, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::RateError;
use crate::model::NetworkInstance;

/// Content delivery scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Every requested file is delivered within a single frame.
    Sfcd,
    /// Files are split across the frames of the super frame.
    Mfcd,
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sfcd" => Ok(Scenario::Sfcd),
            "mfcd" => Ok(Scenario::Mfcd),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Sfcd => "sfcd",
            Scenario::Mfcd => "mfcd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey {
    pub b: usize,
    pub u: usize,
    pub m: usize,
    pub t: usize,
}

impl LinkKey {
    pub fn new(b: usize, u: usize, m: usize, t: usize) -> Self {
        LinkKey { b, u, m, t }
    }
    pub fn idx(&self) -> [usize; 4] {
        [self.b, self.u, self.m, self.t]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorstCaseEntry {
    link: LinkKey,
    /// `[q, b', n]` gains seen by each eavesdropper in the link's frame.
    channels: Array3<f64>,
}

/// Adversarial eavesdropper channels per active link. Links without an
/// entry see the nominal estimate.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<WorstCaseEntry>", into = "Vec<WorstCaseEntry>")]
pub struct WorstCaseChannels {
    entries: BTreeMap<LinkKey, Array3<f64>>,
}

impl From<Vec<WorstCaseEntry>> for WorstCaseChannels {
    fn from(v: Vec<WorstCaseEntry>) -> Self {
        WorstCaseChannels {
            entries: v.into_iter().map(|e| (e.link, e.channels)).collect(),
        }
    }
}

impl From<WorstCaseChannels> for Vec<WorstCaseEntry> {
    fn from(w: WorstCaseChannels) -> Self {
        w.entries
            .into_iter()
            .map(|(link, channels)| WorstCaseEntry { link, channels })
            .collect()
    }
}

impl WorstCaseChannels {
    pub fn insert(&mut self, link: LinkKey, channels: Array3<f64>) {
        self.entries.insert(link, channels);
    }

    pub fn get(&self, link: &LinkKey) -> Option<&Array3<f64>> {
        self.entries.get(link)
    }

    pub fn remove(&mut self, link: &LinkKey) {
        self.entries.remove(link);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LinkKey, &Array3<f64>)> {
        self.entries.iter()
    }

    /// Gains `[b', n]` seen by eavesdropper `q` for `link`.
    pub fn for_link(&self, inst: &NetworkInstance, link: &LinkKey, q: usize) -> Array2<f64> {
        match self.entries.get(link) {
            Some(ch) => ch.index_axis(ndarray::Axis(0), q).to_owned(),
            None => nominal_eve_channels(inst, q, link.t),
        }
    }
}

/// Nominal eavesdropper gains `[b', n]` for eavesdropper `q` in frame `t`.
pub fn nominal_eve_channels(inst: &NetworkInstance, q: usize, t: usize) -> Array2<f64> {
    let (b_count, n_count) = (inst.num_bs(), inst.num_subcarriers());
    Array2::from_shape_fn((b_count, n_count), |(b, n)| inst.channels.eve_gain_est[[b, q, n, t]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RelaxedFlags {
    pub codebook: bool,
    pub cache: bool,
    pub backhaul_subcarrier: bool,
}

/// Every decision variable of the joint problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationState {
    /// Access power in W, `[b, u, m, t]`.
    pub access_power: Array4<f64>,
    /// Backhaul power in W, `[b, n, t]`.
    pub backhaul_power: Array3<f64>,
    /// Codebook assignment, `[b, u, m, t]`.
    pub codebook: Array4<f64>,
    /// Cache placement, `[b, k]`.
    pub cache: Array2<f64>,
    /// Backhaul subcarrier assignment, `[b, n]`.
    pub backhaul_subcarrier: Array2<f64>,
    /// Per-frame file parts in Mbits, `[k, t]`.
    pub split: Array2<f64>,
    /// Epigraph bound on the strongest eavesdropper rate, `[b, u, m, t]`.
    pub eve_bound: Array4<f64>,
    /// Epigraph auxiliary of the secrecy term, `[b, u, m, t]`.
    pub secrecy_aux: Array4<f64>,
    pub worst_case: WorstCaseChannels,
    pub relaxed: RelaxedFlags,
}

impl AllocationState {
    /// All-zero allocation with files split uniformly across frames.
    pub fn empty(inst: &NetworkInstance) -> Self {
        let (b, u, m, f) = inst.link_dims();
        let n = inst.num_subcarriers();
        let k = inst.num_files();
        let split = Array2::from_shape_fn((k, f), |(kk, _)| inst.catalog.sizes_mbits[kk] / f as f64);
        AllocationState {
            access_power: Array4::zeros((b, u, m, f)),
            backhaul_power: Array3::zeros((b, n, f)),
            codebook: Array4::zeros((b, u, m, f)),
            cache: Array2::zeros((b, k)),
            backhaul_subcarrier: Array2::zeros((b, n)),
            split,
            eve_bound: Array4::zeros((b, u, m, f)),
            secrecy_aux: Array4::zeros((b, u, m, f)),
            worst_case: WorstCaseChannels::default(),
            relaxed: RelaxedFlags::default(),
        }
    }

    pub fn check_dims(&self, inst: &NetworkInstance) -> Result<(), RateError> {
        let (b, u, m, f) = inst.link_dims();
        let n = inst.num_subcarriers();
        let k = inst.num_files();
        let checks: [(&str, &[usize], Vec<usize>); 8] = [
            ("access_power", self.access_power.shape(), vec![b, u, m, f]),
            ("codebook", self.codebook.shape(), vec![b, u, m, f]),
            ("eve_bound", self.eve_bound.shape(), vec![b, u, m, f]),
            ("secrecy_aux", self.secrecy_aux.shape(), vec![b, u, m, f]),
            ("backhaul_power", self.backhaul_power.shape(), vec![b, n, f]),
            ("cache", self.cache.shape(), vec![b, k]),
            ("backhaul_subcarrier", self.backhaul_subcarrier.shape(), vec![b, n]),
            ("split", self.split.shape(), vec![k, f]),
        ];
        for (name, got, want) in checks {
            if got != want.as_slice() {
                return Err(RateError::DimensionMismatch(format!("{name}: {got:?} vs {want:?}")));
            }
        }
        Ok(())
    }

    /// Links whose assignment indicator is positive.
    pub fn active_links(&self) -> Vec<LinkKey> {
        self.codebook
            .indexed_iter()
            .filter(|(_, &s)| s > 0.0)
            .map(|((b, u, m, t), _)| LinkKey::new(b, u, m, t))
            .collect()
    }

    /// Links with a binary-rounded assignment (`s ≥ 0.5`).
    pub fn scheduled_links(&self) -> Vec<LinkKey> {
        self.codebook
            .indexed_iter()
            .filter(|(_, &s)| s >= 0.5)
            .map(|((b, u, m, t), _)| LinkKey::new(b, u, m, t))
            .collect()
    }

    /// Total access power of BS `b` in frame `t` (`Σ_{u,m} s·p`).
    pub fn bs_frame_power(&self, b: usize, t: usize) -> f64 {
        let shape = self.codebook.shape();
        let mut total = 0.0;
        for u in 0..shape[1] {
            for m in 0..shape[2] {
                total += self.codebook[[b, u, m, t]] * self.access_power[[b, u, m, t]];
            }
        }
        total
    }
}

fn check_index(name: &'static str, index: usize, size: usize) -> Result<(), RateError> {
    if index >= size {
        Err(RateError::IndexOutOfRange { name, index, size })
    } else {
        Ok(())
    }
}

fn check_link(inst: &NetworkInstance, b: usize, u: usize, m: usize, t: usize) -> Result<(), RateError> {
    check_index("b", b, inst.num_bs())?;
    check_index("u", u, inst.num_users())?;
    check_index("m", m, inst.num_codebooks())?;
    check_index("t", t, inst.num_frames())
}

/// Noise seen on codebook `m` given per-subcarrier noise, weighted by the
/// codebook's power proportions.
pub(crate) fn codebook_noise(inst: &NetworkInstance, m: usize, noise: impl Fn(usize) -> f64) -> f64 {
    let cb = &inst.codebooks;
    let mut num = 0.0;
    let mut den = 0.0;
    for n in cb.subcarriers(m) {
        num += cb.proportion[[n, m]] * noise(n);
        den += cb.proportion[[n, m]];
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub(crate) fn user_noise(inst: &NetworkInstance, b: usize, u: usize, m: usize) -> f64 {
    codebook_noise(inst, m, |n| inst.channels.noise_user[[b, u, n]])
}

pub(crate) fn eve_noise(inst: &NetworkInstance, q: usize, m: usize) -> f64 {
    codebook_noise(inst, m, |n| inst.channels.noise_eve[[q, n]])
}

/// `Σ_n η_nm · gain(n)`.
pub(crate) fn codebook_gain(inst: &NetworkInstance, m: usize, gain: impl Fn(usize) -> f64) -> f64 {
    let cb = &inst.codebooks;
    cb.subcarriers(m).map(|n| cb.proportion[[n, m]] * gain(n)).sum()
}

/// Received signal and inter-cell interference (W) at user `u` of BS `b`.
pub(crate) fn access_terms(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, m: usize, t: usize) -> (f64, f64) {
    let g = &inst.channels.access_gain;
    let own = alloc.codebook[[b, u, m, t]] * alloc.access_power[[b, u, m, t]];
    let signal = own * codebook_gain(inst, m, |n| g[[b, b, u, n, t]]);
    let mut interference = 0.0;
    for b2 in (0..inst.num_bs()).filter(|&x| x != b) {
        let gain = codebook_gain(inst, m, |n| g[[b2, b, u, n, t]]);
        if gain == 0.0 {
            continue;
        }
        for u2 in 0..inst.num_users() {
            interference += alloc.codebook[[b2, u2, m, t]] * alloc.access_power[[b2, u2, m, t]] * gain;
        }
    }
    (signal, interference)
}

/// Received signal and interference (W) at eavesdropper `q` for the given gains `[b', n]`.
pub(crate) fn eve_terms(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    b: usize,
    u: usize,
    m: usize,
    t: usize,
    channels: ArrayView2<f64>,
) -> (f64, f64) {
    let own = alloc.codebook[[b, u, m, t]] * alloc.access_power[[b, u, m, t]];
    let signal = own * codebook_gain(inst, m, |n| channels[[b, n]]);
    let mut interference = 0.0;
    for b2 in (0..inst.num_bs()).filter(|&x| x != b) {
        let gain = codebook_gain(inst, m, |n| channels[[b2, n]]);
        if gain == 0.0 {
            continue;
        }
        for u2 in 0..inst.num_users() {
            interference += alloc.codebook[[b2, u2, m, t]] * alloc.access_power[[b2, u2, m, t]] * gain;
        }
    }
    (signal, interference)
}

pub fn access_sinr(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, m: usize, t: usize) -> Result<f64, RateError> {
    check_link(inst, b, u, m, t)?;
    let (signal, interference) = access_terms(inst, alloc, b, u, m, t);
    Ok(signal / (interference + user_noise(inst, b, u, m)))
}

pub fn access_rate(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, m: usize, t: usize) -> Result<f64, RateError> {
    Ok(access_sinr(inst, alloc, b, u, m, t)?.ln_1p() / LN_2)
}

fn check_box(inst: &NetworkInstance, q: usize, t: usize, channels: ArrayView2<f64>) -> Result<(), RateError> {
    if channels.shape() != [inst.num_bs(), inst.num_subcarriers()] {
        return Err(RateError::DimensionMismatch(format!(
            "eavesdropper channels {:?}, expected [{}, {}]",
            channels.shape(),
            inst.num_bs(),
            inst.num_subcarriers()
        )));
    }
    for ((b, n), &h) in channels.indexed_iter() {
        let lo = inst.channels.eve_lower(b, q, n, t);
        let hi = inst.channels.eve_upper(b, q, n, t);
        let slack = 1e-12 * hi.abs().max(f64::MIN_POSITIVE);
        if !(h >= lo - slack && h <= hi + slack) {
            return Err(RateError::ChannelOutsideBox { b, n });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eve_sinr(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    b: usize,
    u: usize,
    q: usize,
    m: usize,
    t: usize,
    channels: ArrayView2<f64>,
) -> Result<f64, RateError> {
    check_link(inst, b, u, m, t)?;
    check_index("q", q, inst.num_eves())?;
    check_box(inst, q, t, channels)?;
    let (signal, interference) = eve_terms(inst, alloc, b, u, m, t, channels);
    Ok(signal / (interference + eve_noise(inst, q, m)))
}

#[allow(clippy::too_many_arguments)]
pub fn eve_rate(
    inst: &NetworkInstance,
    alloc: &AllocationState,
    b: usize,
    u: usize,
    q: usize,
    m: usize,
    t: usize,
    channels: ArrayView2<f64>,
) -> Result<f64, RateError> {
    Ok(eve_sinr(inst, alloc, b, u, q, m, t, channels)?.ln_1p() / LN_2)
}

/// Strongest eavesdropper rate against the stored worst-case channels
/// (zero when there are no eavesdroppers).
pub fn max_eve_rate(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, m: usize, t: usize) -> Result<f64, RateError> {
    check_link(inst, b, u, m, t)?;
    let link = LinkKey::new(b, u, m, t);
    let mut worst: f64 = 0.0;
    for q in 0..inst.num_eves() {
        let ch = alloc.worst_case.for_link(inst, &link, q);
        let (signal, interference) = eve_terms(inst, alloc, b, u, m, t, ch.view());
        let rate = (signal / (interference + eve_noise(inst, q, m))).ln_1p() / LN_2;
        worst = worst.max(rate);
    }
    Ok(worst)
}

pub fn secrecy_rate(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, m: usize, t: usize) -> Result<f64, RateError> {
    let rd = access_rate(inst, alloc, b, u, m, t)?;
    let re = max_eve_rate(inst, alloc, b, u, m, t)?;
    Ok((rd - re).max(0.0))
}

pub fn backhaul_rate(inst: &NetworkInstance, alloc: &AllocationState, b: usize, n: usize, t: usize) -> Result<f64, RateError> {
    check_index("b", b, inst.num_bs())?;
    check_index("n", n, inst.num_subcarriers())?;
    check_index("t", t, inst.num_frames())?;
    let snr = alloc.backhaul_power[[b, n, t]] * inst.channels.backhaul_gain[[b, n, t]] / inst.channels.noise_bs[[b, n]];
    Ok(snr.ln_1p() / LN_2)
}

/// Backhaul capacity of BS `b` in frame `t`: `Σ_n ζ_bn · R̃_bnt`.
pub fn backhaul_capacity(inst: &NetworkInstance, alloc: &AllocationState, b: usize, t: usize) -> f64 {
    (0..inst.num_subcarriers())
        .map(|n| alloc.backhaul_subcarrier[[b, n]] * backhaul_rate(inst, alloc, b, n, t).unwrap_or(0.0))
        .sum()
}

/// `(R1, R2)` with `R1 = log2(signal + interference + noise)` and
/// `R2 = log2(interference + noise)`, so `R^D = R1 − R2`.
pub fn dc_split_access(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, m: usize, t: usize) -> Result<(f64, f64), RateError> {
    check_link(inst, b, u, m, t)?;
    let (signal, interference) = access_terms(inst, alloc, b, u, m, t);
    let noise = user_noise(inst, b, u, m);
    Ok(((signal + interference + noise).log2(), (interference + noise).log2()))
}

/// Eavesdropper counterpart of [`dc_split_access`] at the stored worst-case channels.
pub fn dc_split_eve(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, q: usize, m: usize, t: usize) -> Result<(f64, f64), RateError> {
    check_link(inst, b, u, m, t)?;
    check_index("q", q, inst.num_eves())?;
    let ch = alloc.worst_case.for_link(inst, &LinkKey::new(b, u, m, t), q);
    let (signal, interference) = eve_terms(inst, alloc, b, u, m, t, ch.view());
    let noise = eve_noise(inst, q, m);
    Ok(((signal + interference + noise).log2(), (interference + noise).log2()))
}

/// Derivative of the eavesdropper's `R1` term with respect to the link's own power.
pub fn eve_rate_gradient(inst: &NetworkInstance, alloc: &AllocationState, b: usize, u: usize, q: usize, m: usize, t: usize) -> Result<f64, RateError> {
    check_link(inst, b, u, m, t)?;
    check_index("q", q, inst.num_eves())?;
    let s = alloc.codebook[[b, u, m, t]];
    if s == 0.0 {
        return Ok(0.0);
    }
    let ch = alloc.worst_case.for_link(inst, &LinkKey::new(b, u, m, t), q);
    let (signal, interference) = eve_terms(inst, alloc, b, u, m, t, ch.view());
    let own_gain = codebook_gain(inst, m, |n| ch[[b, n]]);
    Ok(s * own_gain / (LN_2 * (signal + interference + eve_noise(inst, q, m))))
}
