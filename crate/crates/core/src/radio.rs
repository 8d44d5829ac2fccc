//! Slow-fading channel coefficients, zero-forcing cooperative beamforming and
//! hop capacity.
//!
//! Coefficients follow the physical convention: a group transmitting with
//! weights `w` produces amplitude `sum_m coeff(m, r) * w_m` at receiver `r`
//! and `sum_m coeff_pu(m, p) * w_m` at primary user `p`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelId, NetworkState, NodeId, PuId, SimConfig};

/// A projected signal component below this fraction of the original signal
/// norm counts as no remaining signal dimension.
const FEASIBILITY_TOL: f64 = 1e-6;
/// Constraint vectors whose residual after orthogonalisation falls below this
/// fraction of their norm are linearly dependent on earlier ones.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    num_sus: usize,
    num_pus: usize,
    num_channels: usize,
    su_su: Vec<Complex64>,
    su_pu: Vec<Complex64>,
    /// W/Hz.
    pub noise_density: f64,
    /// Hz.
    pub bandwidth: f64,
}

impl ChannelModel {
    pub fn zeros(
        num_sus: usize,
        num_pus: usize,
        num_channels: usize,
        noise_density: f64,
        bandwidth: f64,
    ) -> Self {
        Self {
            num_sus,
            num_pus,
            num_channels,
            su_su: vec![Complex64::new(0.0, 0.0); num_sus * num_sus * num_channels],
            su_pu: vec![Complex64::new(0.0, 0.0); num_sus * num_pus * num_channels],
            noise_density,
            bandwidth,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    fn su_index(&self, a: NodeId, b: NodeId, k: ChannelId) -> usize {
        (a.index() * self.num_sus + b.index()) * self.num_channels + k.index()
    }

    fn pu_index(&self, su: NodeId, pu: PuId, k: ChannelId) -> usize {
        (su.index() * self.num_pus + pu.index()) * self.num_channels + k.index()
    }

    pub fn coeff(&self, a: NodeId, b: NodeId, k: ChannelId) -> Complex64 {
        self.su_su[self.su_index(a, b, k)]
    }

    pub fn coeff_pu(&self, su: NodeId, pu: PuId, k: ChannelId) -> Complex64 {
        self.su_pu[self.pu_index(su, pu, k)]
    }

    /// Sets the reciprocal SU pair coefficient.
    pub fn set_coeff(&mut self, a: NodeId, b: NodeId, k: ChannelId, value: Complex64) {
        let i = self.su_index(a, b, k);
        let j = self.su_index(b, a, k);
        self.su_su[i] = value;
        self.su_su[j] = value;
    }

    pub fn set_coeff_pu(&mut self, su: NodeId, pu: PuId, k: ChannelId, value: Complex64) {
        let i = self.pu_index(su, pu, k);
        self.su_pu[i] = value;
    }
}

/// Noise density that gives a single-node link at `snr_ref_distance` the
/// mean SNR `snr_ref_db` at full power.
pub fn reference_noise_density(config: &SimConfig) -> f64 {
    let mean_gain = config.snr_ref_distance.powf(-config.path_loss_exponent);
    let snr = 10f64.powf(config.snr_ref_db / 10.0);
    config.max_power * mean_gain / (snr * config.bandwidth)
}

/// One circularly-symmetric complex Gaussian gain with mean-square value
/// `max(d, 1)^-exponent`.
pub fn fading_sample<R: Rng + ?Sized>(distance: f64, exponent: f64, rng: &mut R) -> Complex64 {
    let mean_square = distance.max(1.0).powf(-exponent);
    let sigma = (mean_square / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sigma, im * sigma)
}

/// Draws every in-range SU-SU and SU-PU coefficient, independently per channel.
pub fn sample_coefficients<R: Rng + ?Sized>(state: &NetworkState, rng: &mut R) -> ChannelModel {
    let cfg = &state.config;
    let n = state.sus.len();
    let k = state.num_channels();
    let mut model = ChannelModel::zeros(
        n,
        state.pus.len(),
        k,
        reference_noise_density(cfg),
        cfg.bandwidth,
    );
    for a in 0..n {
        for b in a + 1..n {
            let (na, nb) = (NodeId(a as u32), NodeId(b as u32));
            if !state.in_range(na, nb) {
                continue;
            }
            let d = state.distance(na, nb);
            for c in cfg.channels() {
                let h = fading_sample(d, cfg.path_loss_exponent, rng);
                model.set_coeff(na, nb, c, h);
            }
        }
    }
    for su in 0..n {
        for pu in &state.pus {
            let s = NodeId(su as u32);
            if !state.pu_in_range(s, pu.id) {
                continue;
            }
            let d = state.pu_distance(s, pu.id);
            for c in cfg.channels() {
                let g = fading_sample(d, cfg.path_loss_exponent, rng);
                model.set_coeff_pu(s, pu.id, c, g);
            }
        }
    }
    model
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingResult {
    pub weights: Vec<Complex64>,
    pub effective_gain: f64,
    pub feasible: bool,
}

fn dot(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    // u^H v
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn remove_components(v: &mut [Complex64], basis: &[Vec<Complex64>]) {
    // Two passes of modified Gram-Schmidt keep the residual at rounding level.
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            for (x, qi) in v.iter_mut().zip(q) {
                *x -= qi * c;
            }
        }
    }
}

/// Unit-power weights maximising `|signal . w|` subject to `constraint . w = 0`
/// for every constraint, where `.` is the plain (unconjugated) product.
pub fn zero_forcing(signal: &[Complex64], constraints: &[Vec<Complex64>]) -> BeamformingResult {
    let n = signal.len();
    // In the conjugated space the constraints become orthogonality to conj(g).
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(constraints.len());
    for g in constraints {
        let mut v: Vec<Complex64> = g.iter().map(|x| x.conj()).collect();
        let original = norm(&v);
        if original == 0.0 {
            continue;
        }
        remove_components(&mut v, &basis);
        let r = norm(&v);
        if r > RANK_TOL * original {
            v.iter_mut().for_each(|x| *x /= r);
            basis.push(v);
        }
    }

    let target: Vec<Complex64> = signal.iter().map(|x| x.conj()).collect();
    let target_norm = norm(&target);
    let mut w = target;
    remove_components(&mut w, &basis);
    let projected = norm(&w);
    if target_norm == 0.0 || projected <= FEASIBILITY_TOL * target_norm {
        return BeamformingResult {
            weights: vec![Complex64::new(0.0, 0.0); n],
            effective_gain: 0.0,
            feasible: false,
        };
    }
    w.iter_mut().for_each(|x| *x /= projected);
    remove_components(&mut w, &basis);
    let scale = norm(&w);
    w.iter_mut().for_each(|x| *x /= scale);

    let amplitude: Complex64 = signal.iter().zip(&w).map(|(h, x)| h * x).sum();
    BeamformingResult {
        weights: w,
        effective_gain: amplitude.norm_sqr(),
        feasible: true,
    }
}

/// Beamforms `group` toward `receiver` on `channel` while nulling every PU in
/// `nulled_pus`.
pub fn beamform(
    group: &[NodeId],
    receiver: NodeId,
    nulled_pus: &[PuId],
    channel: ChannelId,
    model: &ChannelModel,
) -> Result<BeamformingResult> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    if group.contains(&receiver) {
        return Err(Error::ReceiverInGroup(receiver));
    }
    let signal: Vec<Complex64> = group
        .iter()
        .map(|&m| model.coeff(m, receiver, channel))
        .collect();
    let constraints: Vec<Vec<Complex64>> = nulled_pus
        .iter()
        .map(|&p| {
            group
                .iter()
                .map(|&m| model.coeff_pu(m, p, channel))
                .collect()
        })
        .collect();
    Ok(zero_forcing(&signal, &constraints))
}

pub fn shannon_capacity(bandwidth: f64, snr: f64) -> f64 {
    bandwidth * (1.0 + snr).log2()
}

/// Bits per second a group achieves toward `receiver` with every PU in
/// `nulled_pus` nulled; 0 when nulling leaves no signal dimension.
pub fn achievable_capacity(
    group: &[NodeId],
    receiver: NodeId,
    channel: ChannelId,
    model: &ChannelModel,
    nulled_pus: &[PuId],
    max_power: f64,
) -> f64 {
    match beamform(group, receiver, nulled_pus, channel, model) {
        Ok(bf) if bf.feasible => {
            let snr = max_power * bf.effective_gain / (model.noise_density * model.bandwidth);
            shannon_capacity(model.bandwidth, snr)
        }
        _ => 0.0,
    }
}
