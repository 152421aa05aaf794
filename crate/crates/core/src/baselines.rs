//! Reference schemes: point-to-point signal alignment (P2PSA) and
//! round-robin time-sharing.
//!
//! P2PSA is the alignment pipeline run with every antenna as its own block,
//! so `H⁻¹GP` and `HᴴWH` become fully diagonal. Each stream gets an equal
//! share `P/K_m` of its user's budgets.
//!
//! Time-sharing serves one user per two-slot round. Within the round the BS
//! aligns onto `H_m` (`P = G⁻¹H_m D`) and the relay amplifies on the range of
//! `H_m`. A user needs `M` rounds to complete an exchange, so its outage
//! threshold is `2·M·K_m·R` and its throughput is divided by `M`.

use std::fmt;
use std::str::FromStr;

use crate::linalg::{hermitian_evd, hstack, identity, inv_sqrt_psd, trace};
use crate::precoding::{
    bs_mutual_information, compute_geometry, end_to_end_user_link, mutual_information, PrecoderState,
};
use crate::system::{ChannelSet, SystemConfig};
use crate::{CMatrix, Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    P2psa,
    TimeSharing,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::P2psa, BaselineKind::TimeSharing];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::P2psa => "p2psa",
            BaselineKind::TimeSharing => "time-sharing",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown baseline `{s}`")))
    }
}

/// P2PSA precoders: the per-stream state plus the blocks regrouped by user.
#[derive(Clone, Debug)]
pub struct P2psaPrecoders<T: Real> {
    /// Alignment state on the singleton (one block per antenna) partition.
    pub streams: PrecoderState<T>,
    /// BS precoder columns of each user.
    pub p_blocks: Vec<CMatrix<T>>,
    /// Relay precoder of each user (sum of its streams' relay blocks).
    pub w_blocks: Vec<CMatrix<T>>,
    pub p: CMatrix<T>,
    pub w: CMatrix<T>,
}

/// Channel set with every user antenna split into its own block.
pub fn singleton_channels<T: Real>(ch: &ChannelSet<T>) -> Result<ChannelSet<T>> {
    let columns = ch.h_blocks.iter().flat_map(|b| b.column_iter().map(|c| CMatrix::from_columns(&[c]))).collect();
    ChannelSet::from_blocks(ch.g.clone(), columns)
}

/// Configuration on the singleton partition with per-stream budgets `P/K_m`.
pub fn singleton_config<T: Real>(config: &SystemConfig<T>) -> SystemConfig<T> {
    let mut out = SystemConfig::uniform(config.n, vec![1; config.n], config.sigma_r);
    out.sigma_bs = config.sigma_bs;
    out.rate = config.rate;
    out.bs_power.clear();
    out.relay_power.clear();
    out.sigma_user.clear();
    for (m, &k) in config.k.iter().enumerate() {
        let share = T::from_count(k);
        for _ in 0..k {
            out.bs_power.push(config.bs_power[m] / share);
            out.relay_power.push(config.relay_power[m] / share);
            out.sigma_user.push(config.sigma_user[m]);
        }
    }
    out
}

pub fn p2psa_precoders<T: Real>(ch: &ChannelSet<T>, config: &SystemConfig<T>) -> Result<P2psaPrecoders<T>> {
    if config.k.iter().sum::<usize>() != config.n {
        return Err(Error::InvalidConfig("P2PSA requires N = K".into()));
    }
    let single_ch = singleton_channels(ch)?;
    let single_cfg = singleton_config(config);
    let geoms = compute_geometry(&single_ch)?;
    let streams = PrecoderState::deterministic(&geoms, &single_cfg)?;
    let n = config.n;
    let mut p_blocks = Vec::with_capacity(config.users());
    let mut w_blocks = Vec::with_capacity(config.users());
    for m in 0..config.users() {
        let range = config.offset(m)..config.offset(m) + config.k[m];
        p_blocks.push(hstack(&streams.p_blocks[range.clone()])?);
        let mut w = CMatrix::zeros(n, n);
        for wj in &streams.w_blocks[range] {
            w += wj;
        }
        w_blocks.push(w);
    }
    let p = streams.p.clone();
    let w = streams.w.clone();
    Ok(P2psaPrecoders { streams, p_blocks, w_blocks, p, w })
}

/// One user's two-slot exchange while all other users are silent.
#[derive(Clone, Debug)]
pub struct TimeSharingRound<T: Real> {
    /// BS precoder `G⁻¹H_m D`.
    pub p: CMatrix<T>,
    /// Relay precoder `γ U_m U_mᴴ`.
    pub w: CMatrix<T>,
    /// Downlink mutual information at the user (bits).
    pub user_mi: T,
    /// Uplink mutual information at the BS (bits).
    pub bs_mi: T,
}

pub fn time_sharing_round<T: Real>(
    ch: &ChannelSet<T>,
    config: &SystemConfig<T>,
    m: usize,
) -> Result<TimeSharingRound<T>> {
    let hm = &ch.h_blocks[m];
    let k = hm.ncols();
    let g_lu = ch.g.clone().lu();
    let x = g_lu.solve(hm).ok_or_else(|| Error::Singular("BS-relay channel G".into()))?;
    let coeff = (config.bs_power[m] / T::from_count(k)).sqrt();
    let d = inv_sqrt_psd(&(x.adjoint() * &x))
        .map_err(|_| Error::Singular("user channel Gram".into()))?
        .scale(coeff);
    let p = &x * &d;

    let u = hermitian_evd(&(hm * hm.adjoint()))?.rank_basis(k);
    let projected = u.adjoint() * hm;
    let cov = &projected * (&d * d.adjoint() + identity::<T>(k)) * projected.adjoint();
    let gamma = (config.relay_power[m] / trace(&cov).re).sqrt();
    let w = (&u * u.adjoint()).scale(gamma);

    let solo = ChannelSet::from_blocks(ch.g.clone(), vec![hm.clone()])?;
    let link = end_to_end_user_link(&solo, std::slice::from_ref(&p), &w, 0, config.sigma_r, config.sigma_user[m]);
    let user_mi = mutual_information(&link)?;
    let bs_mi = bs_mutual_information(&solo, &w, config.sigma_r, config.sigma_bs)?;
    Ok(TimeSharingRound { p, w, user_mi, bs_mi })
}

/// Outage threshold of user `m` under time-sharing: `2·M·K_m·R`.
pub fn time_sharing_threshold<T: Real>(config: &SystemConfig<T>, m: usize) -> T {
    config.outage_threshold(m) * T::from_count(config.users())
}
