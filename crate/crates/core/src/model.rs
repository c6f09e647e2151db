//! Network, content, channel and energy domain objects plus the random
//! instance generator.

use ndarray::{Array1, Array2, Array3, Array4, Array5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Distances below this are clamped before evaluating path loss.
const MIN_DISTANCE_KM: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsTier {
    Macro,
    Small,
}

/// Path loss in dB for the given tier, distance in km and shadowing term.
///
/// Macro cells use `128.1 + 37.6 log10(d_km)`; small cells use
/// `38 + 30 log10(d_m)` with the distance expressed in meters.
pub fn path_loss_db(tier: BsTier, distance_km: f64, shadowing_db: f64) -> f64 {
    let d = distance_km.max(MIN_DISTANCE_KM);
    match tier {
        BsTier::Macro => 128.1 + 37.6 * d.log10() + shadowing_db,
        BsTier::Small => 38.0 + 30.0 * (d * 1000.0).log10() + shadowing_db,
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Zipf popularity `p_k ∝ k^(-exponent)` for ranks `1..=num_files`.
pub fn zipf_popularity(num_files: usize, exponent: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..=num_files)
        .map(|k| (k as f64).powf(-exponent))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FileSizeModel {
    /// `scale * exp(mu + kappa * Z)` clamped to `[min_mbits, max_mbits]`.
    LogNormal {
        mu: f64,
        kappa: f64,
        scale_mbits: f64,
        min_mbits: f64,
        max_mbits: f64,
    },
    Fixed {
        mbits: f64,
    },
}

/// User-facing configuration of a scenario. All counts are per network
/// unless stated otherwise; physical units are in the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub num_macro: usize,
    pub num_small: usize,
    pub users_per_bs: usize,
    pub num_eves: usize,
    pub num_subcarriers: usize,
    pub num_codebooks: usize,
    pub codebook_degree: usize,
    pub num_frames: usize,
    pub frame_duration_s: f64,
    pub subcarrier_bandwidth_hz: f64,
    pub cell_radius_km: f64,
    pub inter_site_distance_km: f64,
    pub noise_dbm: f64,
    pub shadowing_std_db: f64,
    pub reuse_cap: usize,
    /// Relative half-width of the eavesdropper channel box: `ε = eve_uncertainty · h̃`.
    pub eve_uncertainty: f64,
    pub num_files: usize,
    pub file_size: FileSizeModel,
    pub zipf_exponent: f64,
    pub requests_per_user: usize,
    pub arrival_rate_hz: f64,
    pub unit_energy_j: f64,
    pub battery_capacity_j: f64,
    pub initial_battery_j: f64,
    pub cache_capacity_mbits: f64,
    pub backhaul_power_budget_w: f64,
    pub backhaul_distance_macro_km: f64,
    pub backhaul_distance_small_km: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            num_macro: 1,
            num_small: 1,
            users_per_bs: 4,
            num_eves: 1,
            num_subcarriers: 8,
            num_codebooks: 28,
            codebook_degree: 2,
            num_frames: 2,
            frame_duration_s: 0.01,
            subcarrier_bandwidth_hz: 180e3,
            cell_radius_km: 1.0,
            inter_site_distance_km: 1.0,
            noise_dbm: -125.0,
            shadowing_std_db: 8.0,
            reuse_cap: 2,
            eve_uncertainty: 0.5,
            num_files: 6,
            file_size: FileSizeModel::LogNormal {
                mu: 0.0,
                kappa: 0.5,
                scale_mbits: 0.004,
                min_mbits: 0.0005,
                max_mbits: 0.05,
            },
            zipf_exponent: 0.8,
            requests_per_user: 1,
            arrival_rate_hz: 400.0,
            unit_energy_j: 1e-6,
            battery_capacity_j: 1e-3,
            initial_battery_j: 0.0,
            cache_capacity_mbits: 0.01,
            backhaul_power_budget_w: 1e-3,
            backhaul_distance_macro_km: 0.3,
            backhaul_distance_small_km: 0.6,
        }
    }
}

impl ScenarioParams {
    pub fn num_bs(&self) -> usize {
        self.num_macro + self.num_small
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        fn positive(field: &'static str, v: usize) -> Result<(), ModelError> {
            if v == 0 {
                Err(ModelError::invalid(field, "must be at least 1"))
            } else {
                Ok(())
            }
        }
        fn finite_pos(field: &'static str, v: f64) -> Result<(), ModelError> {
            if !(v.is_finite() && v > 0.0) {
                Err(ModelError::invalid(field, format!("must be finite and > 0, got {v}")))
            } else {
                Ok(())
            }
        }
        fn finite_nonneg(field: &'static str, v: f64) -> Result<(), ModelError> {
            if !(v.is_finite() && v >= 0.0) {
                Err(ModelError::invalid(field, format!("must be finite and >= 0, got {v}")))
            } else {
                Ok(())
            }
        }
        if self.num_bs() == 0 {
            return Err(ModelError::invalid("num_macro", "num_macro + num_small must be at least 1"));
        }
        positive("users_per_bs", self.users_per_bs)?;
        positive("num_subcarriers", self.num_subcarriers)?;
        positive("num_codebooks", self.num_codebooks)?;
        positive("num_frames", self.num_frames)?;
        positive("num_files", self.num_files)?;
        positive("reuse_cap", self.reuse_cap)?;
        positive("requests_per_user", self.requests_per_user)?;
        if self.codebook_degree < 2 || self.codebook_degree > self.num_subcarriers {
            return Err(ModelError::invalid(
                "codebook_degree",
                format!("must lie in [2, num_subcarriers={}]", self.num_subcarriers),
            ));
        }
        let available = binomial(self.num_subcarriers, self.codebook_degree);
        if self.num_codebooks > available {
            return Err(ModelError::invalid(
                "num_codebooks",
                format!("at most C(N, degree) = {available} distinct codebooks exist"),
            ));
        }
        if self.requests_per_user > self.num_files {
            return Err(ModelError::invalid("requests_per_user", "cannot exceed num_files"));
        }
        finite_pos("frame_duration_s", self.frame_duration_s)?;
        finite_pos("subcarrier_bandwidth_hz", self.subcarrier_bandwidth_hz)?;
        finite_pos("cell_radius_km", self.cell_radius_km)?;
        finite_nonneg("inter_site_distance_km", self.inter_site_distance_km)?;
        if !self.noise_dbm.is_finite() {
            return Err(ModelError::invalid("noise_dbm", "must be finite"));
        }
        finite_nonneg("shadowing_std_db", self.shadowing_std_db)?;
        finite_nonneg("eve_uncertainty", self.eve_uncertainty)?;
        if self.eve_uncertainty > 1.0 {
            return Err(ModelError::invalid(
                "eve_uncertainty",
                "relative uncertainty above 1 would allow negative channel gains (ε > h̃)",
            ));
        }
        finite_nonneg("zipf_exponent", self.zipf_exponent)?;
        finite_nonneg("arrival_rate_hz", self.arrival_rate_hz)?;
        finite_nonneg("unit_energy_j", self.unit_energy_j)?;
        finite_nonneg("battery_capacity_j", self.battery_capacity_j)?;
        finite_nonneg("initial_battery_j", self.initial_battery_j)?;
        if self.initial_battery_j > self.battery_capacity_j {
            return Err(ModelError::invalid("initial_battery_j", "exceeds battery_capacity_j"));
        }
        finite_nonneg("cache_capacity_mbits", self.cache_capacity_mbits)?;
        finite_nonneg("backhaul_power_budget_w", self.backhaul_power_budget_w)?;
        finite_pos("backhaul_distance_macro_km", self.backhaul_distance_macro_km)?;
        finite_pos("backhaul_distance_small_km", self.backhaul_distance_small_km)?;
        match &self.file_size {
            FileSizeModel::LogNormal {
                kappa,
                scale_mbits,
                min_mbits,
                max_mbits,
                mu,
            } => {
                if !mu.is_finite() {
                    return Err(ModelError::invalid("file_size.mu", "must be finite"));
                }
                finite_nonneg("file_size.kappa", *kappa)?;
                finite_pos("file_size.scale_mbits", *scale_mbits)?;
                finite_pos("file_size.min_mbits", *min_mbits)?;
                if !(max_mbits.is_finite() && max_mbits >= min_mbits) {
                    return Err(ModelError::invalid("file_size.max_mbits", "must be finite and >= min_mbits"));
                }
            }
            FileSizeModel::Fixed { mbits } => finite_pos("file_size.mbits", *mbits)?,
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(usize::MAX as u128) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub num_macro: usize,
    pub num_small: usize,
    pub users_per_bs: usize,
    pub num_eves: usize,
    pub num_subcarriers: usize,
    pub num_codebooks: usize,
    pub num_frames: usize,
    pub frame_duration_s: f64,
    pub subcarrier_bandwidth_hz: f64,
    pub cell_radius_km: f64,
    pub bs_positions: Vec<Point>,
    /// Indexed `[b][u]`; user `u` of BS `b` is permanently associated with `b`.
    pub user_positions: Vec<Vec<Point>>,
    pub eve_positions: Vec<Point>,
}

impl NetworkTopology {
    pub fn num_bs(&self) -> usize {
        self.num_macro + self.num_small
    }

    pub fn tier(&self, b: usize) -> BsTier {
        if b < self.num_macro {
            BsTier::Macro
        } else {
            BsTier::Small
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookStructure {
    /// Incidence `[n, m]`.
    pub incidence: Array2<bool>,
    /// Power proportions `[n, m]`, zero off the incidence pattern.
    pub proportion: Array2<f64>,
}

impl CodebookStructure {
    /// The first `num_codebooks` subsets of `degree` subcarriers in
    /// lexicographic order, each with equal power split.
    pub fn regular(num_subcarriers: usize, num_codebooks: usize, degree: usize) -> Self {
        let mut incidence = Array2::from_elem((num_subcarriers, num_codebooks), false);
        let mut proportion = Array2::zeros((num_subcarriers, num_codebooks));
        let mut combo: Vec<usize> = (0..degree).collect();
        for m in 0..num_codebooks {
            for &n in &combo {
                incidence[[n, m]] = true;
                proportion[[n, m]] = 1.0 / degree as f64;
            }
            // advance to the next combination
            let mut i = degree;
            while i > 0 {
                i -= 1;
                if combo[i] < num_subcarriers - degree + i {
                    combo[i] += 1;
                    for j in i + 1..degree {
                        combo[j] = combo[j - 1] + 1;
                    }
                    break;
                }
            }
        }
        CodebookStructure { incidence, proportion }
    }

    pub fn num_subcarriers(&self) -> usize {
        self.incidence.nrows()
    }

    pub fn num_codebooks(&self) -> usize {
        self.incidence.ncols()
    }

    pub fn subcarriers(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_subcarriers()).filter(move |&n| self.incidence[[n, m]])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSet {
    /// Gain from transmitting BS to user `u` of serving BS: `[b_tx, b_serving, u, n, t]`.
    pub access_gain: Array5<f64>,
    /// Nominal eavesdropper gain estimate `[b, q, n, t]`.
    pub eve_gain_est: Array4<f64>,
    /// Half-width of the uncertainty box `[b, q, n, t]`.
    pub eve_uncertainty: Array4<f64>,
    /// Core-to-BS backhaul gain `[b, n, t]`.
    pub backhaul_gain: Array3<f64>,
    /// Noise power in W at users `[b, u, n]`.
    pub noise_user: Array3<f64>,
    /// Noise power in W at eavesdroppers `[q, n]`.
    pub noise_eve: Array2<f64>,
    /// Noise power in W at BS backhaul receivers `[b, n]`.
    pub noise_bs: Array2<f64>,
    /// Shadowing draws in dB, `[b_tx, b_serving, u]` for users.
    pub user_shadowing_db: Array3<f64>,
}

impl ChannelSet {
    pub fn eve_lower(&self, b: usize, q: usize, n: usize, t: usize) -> f64 {
        self.eve_gain_est[[b, q, n, t]] - self.eve_uncertainty[[b, q, n, t]]
    }

    pub fn eve_upper(&self, b: usize, q: usize, n: usize, t: usize) -> f64 {
        self.eve_gain_est[[b, q, n, t]] + self.eve_uncertainty[[b, q, n, t]]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentCatalog {
    pub sizes_mbits: Vec<f64>,
    pub popularity: Vec<f64>,
    /// `requests[[b, u, k]]` is true when user `u` of BS `b` requests file `k`.
    pub requests: Array3<bool>,
}

impl ContentCatalog {
    pub fn num_files(&self) -> usize {
        self.sizes_mbits.len()
    }

    /// Whether any user of BS `b` requests file `k`.
    pub fn requested_at(&self, b: usize, k: usize) -> bool {
        (0..self.requests.shape()[1]).any(|u| self.requests[[b, u, k]])
    }

    pub fn user_files(&self, b: usize, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_files()).filter(move |&k| self.requests[[b, u, k]])
    }

    pub fn bs_has_requests(&self, b: usize) -> bool {
        (0..self.num_files()).any(|k| self.requested_at(b, k))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyModel {
    pub arrival_rate_hz: Vec<f64>,
    pub unit_energy_j: Vec<f64>,
    pub battery_capacity_j: Vec<f64>,
    pub initial_battery_j: Vec<f64>,
    /// Arrival counts `[b, t]`.
    pub arrivals: Array2<u64>,
    /// Harvested energy `[b, t]` in J.
    pub harvested_j: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub topology: NetworkTopology,
    pub codebooks: CodebookStructure,
    pub channels: ChannelSet,
    pub catalog: ContentCatalog,
    pub energy: EnergyModel,
    pub cache_capacity_mbits: Vec<f64>,
    /// Backhaul power budget per frame in W.
    pub backhaul_budget_w: Vec<f64>,
    pub reuse_cap: usize,
    pub rng_seed: u64,
}

impl NetworkInstance {
    pub fn num_bs(&self) -> usize {
        self.topology.num_bs()
    }
    pub fn num_users(&self) -> usize {
        self.topology.users_per_bs
    }
    pub fn num_eves(&self) -> usize {
        self.topology.num_eves
    }
    pub fn num_subcarriers(&self) -> usize {
        self.topology.num_subcarriers
    }
    pub fn num_codebooks(&self) -> usize {
        self.topology.num_codebooks
    }
    pub fn num_frames(&self) -> usize {
        self.topology.num_frames
    }
    pub fn num_files(&self) -> usize {
        self.catalog.num_files()
    }
    pub fn frame_duration(&self) -> f64 {
        self.topology.frame_duration_s
    }

    /// Mbits delivered in one frame per bit/s/Hz of rate: `T · BW_n / 10^6`.
    pub fn mbits_per_rate(&self) -> f64 {
        self.topology.frame_duration_s * self.topology.subcarrier_bandwidth_hz / 1e6
    }

    /// Dimensions `(B, U, M, F)` of per-link tensors.
    pub fn link_dims(&self) -> (usize, usize, usize, usize) {
        (self.num_bs(), self.num_users(), self.num_codebooks(), self.num_frames())
    }
}

/// Purposes of independent random streams; each entity draws from its own
/// stream so that changing one count leaves the other draws untouched.
#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    UserPosition = 1,
    EvePosition = 2,
    UserShadowing = 3,
    UserFading = 4,
    EveShadowing = 5,
    EveFading = 6,
    Backhaul = 7,
    Energy = 8,
    FileSizes = 9,
    Requests = 10,
}

pub(crate) fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    // SplitMix64 finalizer over the combined key
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(purpose.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

fn sample_in_disc<R: Rng>(rng: &mut R, center: Point, radius: f64) -> Point {
    let r = radius * rng.gen::<f64>().sqrt();
    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
    Point {
        x: center.x + r * angle.cos(),
        y: center.y + r * angle.sin(),
    }
}

fn bs_positions(params: &ScenarioParams) -> Vec<Point> {
    (0..params.num_bs())
        .map(|b| Point {
            x: b as f64 * params.inter_site_distance_km,
            y: 0.0,
        })
        .collect()
}

/// Draws one network realization. Deterministic in `(params, seed)`.
pub fn generate_instance(params: &ScenarioParams, seed: u64) -> Result<NetworkInstance, ModelError> {
    params.validate()?;
    let num_bs = params.num_bs();
    let users = params.users_per_bs;
    let eves = params.num_eves;
    let subcarriers = params.num_subcarriers;
    let frames = params.num_frames;
    let tier = |b: usize| if b < params.num_macro { BsTier::Macro } else { BsTier::Small };
    let shadow = Normal::new(0.0, params.shadowing_std_db).expect("validated std");

    let bs_pos = bs_positions(params);
    let user_pos: Vec<Vec<Point>> = (0..num_bs)
        .map(|b| {
            (0..users)
                .map(|u| {
                    let mut rng = stream_rng(seed, Stream::UserPosition as u64, (b * 1_000 + u) as u64);
                    sample_in_disc(&mut rng, bs_pos[b], params.cell_radius_km)
                })
                .collect()
        })
        .collect();
    let eve_pos: Vec<Point> = (0..eves)
        .map(|q| {
            let mut rng = stream_rng(seed, Stream::EvePosition as u64, q as u64);
            sample_in_disc(&mut rng, bs_pos[q % num_bs], params.cell_radius_km)
        })
        .collect();

    let mut access_gain = Array5::zeros((num_bs, num_bs, users, subcarriers, frames));
    let mut user_shadowing_db = Array3::zeros((num_bs, num_bs, users));
    for tx in 0..num_bs {
        for b in 0..num_bs {
            for u in 0..users {
                let key = ((tx * 1_000 + b) * 1_000 + u) as u64;
                let mut srng = stream_rng(seed, Stream::UserShadowing as u64, key);
                let x = shadow.sample(&mut srng);
                user_shadowing_db[[tx, b, u]] = x;
                let d = bs_pos[tx].distance(&user_pos[b][u]);
                let large_scale = db_to_linear(-path_loss_db(tier(tx), d, x));
                let mut frng = stream_rng(seed, Stream::UserFading as u64, key);
                for t in 0..frames {
                    for n in 0..subcarriers {
                        let fading: f64 = Exp1.sample(&mut frng);
                        access_gain[[tx, b, u, n, t]] = large_scale * fading;
                    }
                }
            }
        }
    }

    let mut eve_gain_est = Array4::zeros((num_bs, eves, subcarriers, frames));
    for b in 0..num_bs {
        for q in 0..eves {
            let key = (b * 1_000 + q) as u64;
            let mut srng = stream_rng(seed, Stream::EveShadowing as u64, key);
            let x = shadow.sample(&mut srng);
            let d = bs_pos[b].distance(&eve_pos[q]);
            let large_scale = db_to_linear(-path_loss_db(tier(b), d, x));
            let mut frng = stream_rng(seed, Stream::EveFading as u64, key);
            for t in 0..frames {
                for n in 0..subcarriers {
                    let fading: f64 = Exp1.sample(&mut frng);
                    eve_gain_est[[b, q, n, t]] = large_scale * fading;
                }
            }
        }
    }
    let eve_uncertainty = eve_gain_est.mapv(|h| h * params.eve_uncertainty);

    let mut backhaul_gain = Array3::zeros((num_bs, subcarriers, frames));
    for b in 0..num_bs {
        let mut rng = stream_rng(seed, Stream::Backhaul as u64, b as u64);
        let x = shadow.sample(&mut rng);
        let d = match tier(b) {
            BsTier::Macro => params.backhaul_distance_macro_km,
            BsTier::Small => params.backhaul_distance_small_km,
        };
        let large_scale = db_to_linear(-path_loss_db(BsTier::Macro, d, x));
        for t in 0..frames {
            for n in 0..subcarriers {
                let fading: f64 = Exp1.sample(&mut rng);
                backhaul_gain[[b, n, t]] = large_scale * fading;
            }
        }
    }

    let noise = dbm_to_watts(params.noise_dbm);
    let channels = ChannelSet {
        access_gain,
        eve_gain_est,
        eve_uncertainty,
        backhaul_gain,
        noise_user: Array3::from_elem((num_bs, users, subcarriers), noise),
        noise_eve: Array2::from_elem((eves, subcarriers), noise),
        noise_bs: Array2::from_elem((num_bs, subcarriers), noise),
        user_shadowing_db,
    };

    let num_files = params.num_files;
    let mut size_rng = stream_rng(seed, Stream::FileSizes as u64, 0);
    let sizes_mbits: Vec<f64> = (0..num_files)
        .map(|_| match &params.file_size {
            FileSizeModel::LogNormal {
                mu,
                kappa,
                scale_mbits,
                min_mbits,
                max_mbits,
            } => {
                let z: f64 = size_rng.sample(rand_distr::StandardNormal);
                (scale_mbits * (mu + kappa * z).exp()).clamp(*min_mbits, *max_mbits)
            }
            FileSizeModel::Fixed { mbits } => *mbits,
        })
        .collect();
    let popularity = zipf_popularity(num_files, params.zipf_exponent);
    let mut requests = Array3::from_elem((num_bs, users, num_files), false);
    let files: Vec<usize> = (0..num_files).collect();
    for b in 0..num_bs {
        for u in 0..users {
            let mut rng = stream_rng(seed, Stream::Requests as u64, (b * 1_000 + u) as u64);
            let chosen = files
                .choose_multiple_weighted(&mut rng, params.requests_per_user, |&k| popularity[k])
                .expect("popularity weights are positive");
            for &k in chosen {
                requests[[b, u, k]] = true;
            }
        }
    }
    let catalog = ContentCatalog {
        sizes_mbits,
        popularity,
        requests,
    };

    let mean_arrivals = params.arrival_rate_hz * params.frame_duration_s;
    let mut arrivals = Array2::zeros((num_bs, frames));
    if mean_arrivals > 0.0 {
        let poisson = Poisson::new(mean_arrivals).expect("validated rate");
        for b in 0..num_bs {
            let mut rng = stream_rng(seed, Stream::Energy as u64, b as u64);
            for t in 0..frames {
                let draw: f64 = poisson.sample(&mut rng);
                arrivals[[b, t]] = draw as u64;
            }
        }
    }
    let harvested_j = arrivals.mapv(|a| a as f64 * params.unit_energy_j);
    let energy = EnergyModel {
        arrival_rate_hz: vec![params.arrival_rate_hz; num_bs],
        unit_energy_j: vec![params.unit_energy_j; num_bs],
        battery_capacity_j: vec![params.battery_capacity_j; num_bs],
        initial_battery_j: vec![params.initial_battery_j; num_bs],
        arrivals,
        harvested_j,
    };

    let topology = NetworkTopology {
        num_macro: params.num_macro,
        num_small: params.num_small,
        users_per_bs: users,
        num_eves: eves,
        num_subcarriers: subcarriers,
        num_codebooks: params.num_codebooks,
        num_frames: frames,
        frame_duration_s: params.frame_duration_s,
        subcarrier_bandwidth_hz: params.subcarrier_bandwidth_hz,
        cell_radius_km: params.cell_radius_km,
        bs_positions: bs_pos,
        user_positions: user_pos,
        eve_positions: eve_pos,
    };

    Ok(NetworkInstance {
        topology,
        codebooks: CodebookStructure::regular(subcarriers, params.num_codebooks, params.codebook_degree),
        channels,
        catalog,
        energy,
        cache_capacity_mbits: vec![params.cache_capacity_mbits; num_bs],
        backhaul_budget_w: vec![params.backhaul_power_budget_w; frames],
        reuse_cap: params.reuse_cap,
        rng_seed: seed,
    })
}

/// Popularity-weighted expected file size, handy for sizing caches.
pub fn mean_file_size(catalog: &ContentCatalog) -> f64 {
    let sizes = Array1::from(catalog.sizes_mbits.clone());
    let pop = Array1::from(catalog.popularity.clone());
    sizes.dot(&pop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_path_loss_at_one_km() {
        assert!((path_loss_db(BsTier::Macro, 1.0, 0.0) - 128.1).abs() < 1e-12);
    }

    #[test]
    fn small_cell_path_loss_uses_meters() {
        assert!((path_loss_db(BsTier::Small, 0.1, 0.0) - 98.0).abs() < 1e-12);
    }

    #[test]
    fn zipf_limits() {
        let u = zipf_popularity(3, 0.0);
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let z = zipf_popularity(2, 1.0);
        assert!((z[0] - 2.0 / 3.0).abs() < 1e-15 && (z[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regular_codebooks_cover_all_pairs() {
        let cb = CodebookStructure::regular(8, 28, 2);
        let mut seen = std::collections::BTreeSet::new();
        for m in 0..28 {
            let subs: Vec<usize> = cb.subcarriers(m).collect();
            assert_eq!(subs.len(), 2);
            assert!(seen.insert(subs));
            let total: f64 = (0..8).map(|n| cb.proportion[[n, m]]).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_arrival_rate_means_no_energy() {
        let params = ScenarioParams {
            arrival_rate_hz: 0.0,
            ..ScenarioParams::default()
        };
        let inst = generate_instance(&params, 3).unwrap();
        assert!(inst.energy.harvested_j.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn rejects_oversized_uncertainty() {
        let params = ScenarioParams {
            eve_uncertainty: 1.5,
            ..ScenarioParams::default()
        };
        match generate_instance(&params, 0) {
            Err(ModelError::InvalidParam { field, .. }) => assert_eq!(field, "eve_uncertainty"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
