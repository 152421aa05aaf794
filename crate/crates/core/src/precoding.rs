//! Block signal alignment precoders at the BS and the relay.
//!
//! With `G' = H⁻¹G` split into per-user row blocks `G'_m`, the BS precoder
//! block `P_m = Q_m G'_mᴴ D_m` makes `H⁻¹GP` block diagonal with blocks
//! `A_m = T_m D_m`. The relay block `W_m = U_m1 D'_m U_m1ᴴ` makes `HᴴWH` block
//! diagonal with blocks `B_m = T̄_mᴴ D'_m T̄_m`. After self-interference
//! cancellation user `m` sees `y = B_m A_m s_m + ñ_m`.

use crate::linalg::{
    condition_number, frobenius, frobenius_sq, hermitian_evd, hstack, identity, inv_sqrt_psd,
    log2_det_hpd, null_projector, trace, vstack, ProjectorSide,
};
use crate::system::{ChannelSet, SystemConfig};
use crate::{CMatrix, Error, Real, Result};

/// Upper bound on the condition number of `T_m`, `T̄_m` and `𝕋_m`.
pub const MAX_LINK_CONDITION: f64 = 1e10;

/// Per-user matrices derived once per channel realisation.
#[derive(Clone, Debug)]
pub struct UserLinkGeometry<T: Real> {
    /// Number of antennas of this user (`K_m`).
    pub k: usize,
    /// Offset of this user's block in the stacked stream index.
    pub offset: usize,
    /// `G'_m`, rows of `H⁻¹G` belonging to this user (K_m×N).
    pub gp: CMatrix<T>,
    /// Projector onto the complement of the other users' rows of `G'`.
    pub q: CMatrix<T>,
    /// `T_m = G'_m Q_m G'_mᴴ`.
    pub t: CMatrix<T>,
    /// Projector onto the complement of the other users' columns of `H`.
    pub qp: CMatrix<T>,
    /// Dominant rank basis of `qp` (N×K_m).
    pub u1: CMatrix<T>,
    /// `T̄_m = U_m1ᴴ H_m`.
    pub tbar: CMatrix<T>,
    /// Dominant rank basis of `q` (N×K_m), for the extended BS structure.
    pub ubar1: CMatrix<T>,
    /// `𝕋_m = G'_m Ū_m1`.
    pub tbb: CMatrix<T>,
}

fn full_rank<T: Real>(m: &CMatrix<T>, what: &str) -> Result<()> {
    if condition_number(m) > T::lit(MAX_LINK_CONDITION) {
        return Err(Error::Singular(format!("{what} is rank deficient")));
    }
    Ok(())
}

/// Builds the alignment geometry of every user.
pub fn compute_geometry<T: Real>(ch: &ChannelSet<T>) -> Result<Vec<UserLinkGeometry<T>>> {
    let h_lu = ch.h.clone().lu();
    let g_prime = h_lu
        .solve(&ch.g)
        .ok_or_else(|| Error::Singular("user-relay channel H".into()))?;
    full_rank(&g_prime, "H⁻¹G")?;
    let sizes: Vec<usize> = ch.h_blocks.iter().map(|b| b.ncols()).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &k| {
            let at = *acc;
            *acc += k;
            Some(at)
        })
        .collect();
    let row_block = |m: usize| g_prime.rows(offsets[m], sizes[m]).into_owned();

    let mut out = Vec::with_capacity(sizes.len());
    for m in 0..sizes.len() {
        let k = sizes[m];
        let gp = row_block(m);
        let others: Vec<CMatrix<T>> = (0..sizes.len()).filter(|&j| j != m).map(row_block).collect();
        let g_tilde = if others.is_empty() {
            CMatrix::zeros(0, g_prime.ncols())
        } else {
            vstack(&others)?
        };
        let q = null_projector(&g_tilde, ProjectorSide::RowSpace)?;
        // Gram of the precoder direction Q G'ᴴ, so tr(PPᴴ) = tr(DᴴTD) to rounding
        let dir = &q * gp.adjoint();
        let t = dir.adjoint() * &dir;
        let t = (&t + t.adjoint()).scale(T::lit(0.5));
        full_rank(&t, "T_m")?;

        let qp = null_projector(&ch.h_without(m)?, ProjectorSide::ColumnSpace)?;
        let u1 = hermitian_evd(&qp)?.rank_basis(k);
        let tbar = u1.adjoint() * &ch.h_blocks[m];
        full_rank(&tbar, "T̄_m")?;

        let ubar1 = hermitian_evd(&q)?.rank_basis(k);
        let tbb = &gp * &ubar1;
        full_rank(&tbb, "𝕋_m")?;

        out.push(UserLinkGeometry { k, offset: offsets[m], gp, q, t, qp, u1, tbar, ubar1, tbb });
    }
    Ok(out)
}

/// BS precoder structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// `P_m = Q_m G'_mᴴ D_m`.
    Classic,
    /// `P̄_m = Ū_m1 D̄_m Ū_m1ᴴ G'_mᴴ`.
    Extended,
}

impl<T: Real> UserLinkGeometry<T> {
    /// Aligned BS gain `A_m`: `T_m D_m` or `𝕋_m D̄_m 𝕋_mᴴ`.
    pub fn aligned_gain(&self, d: &CMatrix<T>, variant: Variant) -> CMatrix<T> {
        match variant {
            Variant::Classic => &self.t * d,
            Variant::Extended => &self.tbb * d * self.tbb.adjoint(),
        }
    }

    /// Relay gain `B_m = T̄_mᴴ D'_m T̄_m`.
    pub fn relay_gain(&self, dp: &CMatrix<T>) -> CMatrix<T> {
        self.tbar.adjoint() * dp * &self.tbar
    }

    pub fn bs_component(&self, d: &CMatrix<T>, variant: Variant) -> CMatrix<T> {
        match variant {
            Variant::Classic => &self.q * self.gp.adjoint() * d,
            Variant::Extended => &self.ubar1 * d * self.ubar1.adjoint() * self.gp.adjoint(),
        }
    }

    pub fn relay_component(&self, dp: &CMatrix<T>) -> CMatrix<T> {
        &self.u1 * dp * self.u1.adjoint()
    }

    /// `T̄_m (A Aᴴ + I) T̄_mᴴ`, the high-SNR covariance seen by `D'_m`.
    pub fn relay_input_covariance(&self, a: &CMatrix<T>) -> CMatrix<T> {
        &self.tbar * (a * a.adjoint() + identity::<T>(self.k)) * self.tbar.adjoint()
    }

    /// High-SNR relay power `tr(D'ᴴ D' T̄(AAᴴ + I)T̄ᴴ)` for aligned gain `a`.
    pub fn relay_power(&self, a: &CMatrix<T>, dp: &CMatrix<T>) -> T {
        trace(&(dp.adjoint() * dp * self.relay_input_covariance(a))).re
    }

    /// BS power `tr(P_m P_mᴴ)`.
    pub fn bs_power(&self, d: &CMatrix<T>, variant: Variant) -> T {
        frobenius_sq(&self.bs_component(d, variant))
    }
}

/// `D_m = √(P/K_m) · T_m^(-1/2)` so that `tr(T_m D_m D_mᴴ) = P`.
pub fn deterministic_bs_scaling<T: Real>(geom: &UserLinkGeometry<T>, power: T) -> Result<CMatrix<T>> {
    let coeff = (power / T::from_count(geom.k)).sqrt();
    Ok(inv_sqrt_psd(&geom.t)?.scale(coeff))
}

/// `D̄_m = √(P/K_m) · (𝕋ᴴ𝕋)^(-1/2)` so that `tr(D̄ᴴD̄ 𝕋ᴴ𝕋) = P`.
pub fn deterministic_extended_bs_scaling<T: Real>(
    geom: &UserLinkGeometry<T>,
    power: T,
) -> Result<CMatrix<T>> {
    let coeff = (power / T::from_count(geom.k)).sqrt();
    Ok(inv_sqrt_psd(&(geom.tbb.adjoint() * &geom.tbb))?.scale(coeff))
}

/// `D'_m = √(P_R/K_m) · (T̄(AAᴴ + I)T̄ᴴ)^(-1/2)` for aligned gain `a`.
pub fn deterministic_relay_scaling<T: Real>(
    geom: &UserLinkGeometry<T>,
    a: &CMatrix<T>,
    power: T,
) -> Result<CMatrix<T>> {
    let coeff = (power / T::from_count(geom.k)).sqrt();
    Ok(inv_sqrt_psd(&geom.relay_input_covariance(a))?.scale(coeff))
}

/// Deterministic BS scalings and precoder blocks for every user.
pub fn bs_precoder_deterministic<T: Real>(
    geoms: &[UserLinkGeometry<T>],
    config: &SystemConfig<T>,
) -> Result<(Vec<CMatrix<T>>, Vec<CMatrix<T>>)> {
    let mut ds = Vec::with_capacity(geoms.len());
    let mut ps = Vec::with_capacity(geoms.len());
    for (m, geom) in geoms.iter().enumerate() {
        let d = deterministic_bs_scaling(geom, config.bs_power[m])?;
        ps.push(geom.bs_component(&d, Variant::Classic));
        ds.push(d);
    }
    Ok((ds, ps))
}

/// Deterministic relay scalings and precoder blocks given the classic `D_m`.
pub fn relay_precoder_deterministic<T: Real>(
    geoms: &[UserLinkGeometry<T>],
    ds: &[CMatrix<T>],
    config: &SystemConfig<T>,
) -> Result<(Vec<CMatrix<T>>, Vec<CMatrix<T>>)> {
    if ds.len() != geoms.len() {
        return Err(Error::DimensionMismatch(format!("{} scalings for {} users", ds.len(), geoms.len())));
    }
    let mut dps = Vec::with_capacity(geoms.len());
    let mut ws = Vec::with_capacity(geoms.len());
    for (m, (geom, d)) in geoms.iter().zip(ds).enumerate() {
        let a = geom.aligned_gain(d, Variant::Classic);
        let dp = deterministic_relay_scaling(geom, &a, config.relay_power[m])?;
        ws.push(geom.relay_component(&dp));
        dps.push(dp);
    }
    Ok((dps, ws))
}

/// `P = [P_1 ⋯ P_M]` and `W = Σ W_m`.
pub fn assemble_network_precoders<T: Real>(
    p_blocks: &[CMatrix<T>],
    w_blocks: &[CMatrix<T>],
) -> Result<(CMatrix<T>, CMatrix<T>)> {
    let p = hstack(p_blocks)?;
    let n = p.nrows();
    let mut w = CMatrix::zeros(n, n);
    for wm in w_blocks {
        if wm.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "relay block {}x{} for N = {n}",
                wm.nrows(),
                wm.ncols()
            )));
        }
        w += wm;
    }
    Ok((p, w))
}

/// Per-user scalings plus the assembled network precoders.
#[derive(Clone, Debug)]
pub struct PrecoderState<T: Real> {
    pub variant: Variant,
    /// `D_m` (classic) or `D̄_m` (extended).
    pub d: Vec<CMatrix<T>>,
    /// `D'_m`.
    pub dp: Vec<CMatrix<T>>,
    pub p_blocks: Vec<CMatrix<T>>,
    pub w_blocks: Vec<CMatrix<T>>,
    pub p: CMatrix<T>,
    pub w: CMatrix<T>,
}

impl<T: Real> PrecoderState<T> {
    pub fn assemble(
        geoms: &[UserLinkGeometry<T>],
        variant: Variant,
        d: Vec<CMatrix<T>>,
        dp: Vec<CMatrix<T>>,
    ) -> Result<Self> {
        if d.len() != geoms.len() || dp.len() != geoms.len() {
            return Err(Error::DimensionMismatch("one scaling pair per user required".into()));
        }
        let p_blocks: Vec<CMatrix<T>> = geoms.iter().zip(&d).map(|(g, dm)| g.bs_component(dm, variant)).collect();
        let w_blocks: Vec<CMatrix<T>> = geoms.iter().zip(&dp).map(|(g, dpm)| g.relay_component(dpm)).collect();
        let (p, w) = assemble_network_precoders(&p_blocks, &w_blocks)?;
        Ok(Self { variant, d, dp, p_blocks, w_blocks, p, w })
    }

    /// Closed-form precoders with Hermitian scalings.
    pub fn deterministic(geoms: &[UserLinkGeometry<T>], config: &SystemConfig<T>) -> Result<Self> {
        let (d, _) = bs_precoder_deterministic(geoms, config)?;
        let (dp, _) = relay_precoder_deterministic(geoms, &d, config)?;
        Self::assemble(geoms, Variant::Classic, d, dp)
    }

    /// Closed-form precoders using the extended BS structure.
    pub fn deterministic_extended(geoms: &[UserLinkGeometry<T>], config: &SystemConfig<T>) -> Result<Self> {
        let mut d = Vec::with_capacity(geoms.len());
        let mut dp = Vec::with_capacity(geoms.len());
        for (m, geom) in geoms.iter().enumerate() {
            let dm = deterministic_extended_bs_scaling(geom, config.bs_power[m])?;
            let a = geom.aligned_gain(&dm, Variant::Extended);
            dp.push(deterministic_relay_scaling(geom, &a, config.relay_power[m])?);
            d.push(dm);
        }
        Self::assemble(geoms, Variant::Extended, d, dp)
    }

    /// Effective links of every user under this state.
    pub fn links(&self, geoms: &[UserLinkGeometry<T>], config: &SystemConfig<T>) -> Vec<EffectiveLink<T>> {
        geoms
            .iter()
            .enumerate()
            .map(|(m, g)| effective_link(g, &self.d[m], &self.dp[m], self.variant, config.sigma_r, config.sigma_user[m]))
            .collect()
    }
}

/// Desired-signal channel and noise covariance seen by one user after SI removal.
#[derive(Clone, Debug)]
pub struct EffectiveLink<T: Real> {
    pub f: CMatrix<T>,
    pub rn: CMatrix<T>,
}

/// `F_m = B_m A_m` and `R̃_m = T̄ᴴ D' D'ᴴ T̄ σ_r² + σ_m² I`.
pub fn effective_link<T: Real>(
    geom: &UserLinkGeometry<T>,
    d: &CMatrix<T>,
    dp: &CMatrix<T>,
    variant: Variant,
    sigma_r: T,
    sigma_m: T,
) -> EffectiveLink<T> {
    let f = geom.relay_gain(dp) * geom.aligned_gain(d, variant);
    let rn = effective_noise(geom, dp, sigma_r, sigma_m);
    EffectiveLink { f, rn }
}

pub fn effective_noise<T: Real>(geom: &UserLinkGeometry<T>, dp: &CMatrix<T>, sigma_r: T, sigma_m: T) -> CMatrix<T> {
    let amp = geom.tbar.adjoint() * dp;
    (&amp * amp.adjoint()).scale(sigma_r * sigma_r) + identity::<T>(geom.k).scale(sigma_m * sigma_m)
}

/// `log₂ det(I + F Fᴴ R⁻¹)` in bits.
pub fn mutual_information<T: Real>(link: &EffectiveLink<T>) -> Result<T> {
    gaussian_mi(&link.f, &link.rn)
}

/// `log₂ det(I + F Fᴴ R⁻¹) = log₂ det(R + F Fᴴ) − log₂ det(R)`.
pub fn gaussian_mi<T: Real>(f: &CMatrix<T>, r: &CMatrix<T>) -> Result<T> {
    let with_signal = r + f * f.adjoint();
    let mi = log2_det_hpd(&with_signal)? - log2_det_hpd(r)?;
    Ok(mi.max(T::zero()))
}

/// Relative off-block Frobenius mass of a square matrix partitioned by `sizes`.
pub fn off_block_ratio<T: Real>(m: &CMatrix<T>, sizes: &[usize]) -> T {
    let mut block_of = Vec::with_capacity(m.nrows());
    for (b, &k) in sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat_n(b, k));
    }
    let (mut on, mut off) = (T::zero(), T::zero());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let e = m[(i, j)].norm_sqr();
            if block_of[i] == block_of[j] {
                on += e;
            } else {
                off += e;
            }
        }
    }
    if off == T::zero() {
        T::zero()
    } else {
        (off / on).sqrt()
    }
}

/// Raw and relative interference measures for one precoder set.
#[derive(Clone, Debug)]
pub struct LeakageReport<T: Real> {
    /// Relative off-block mass of `H⁻¹GP`.
    pub bs_alignment: T,
    /// Relative off-block mass of `HᴴWH`.
    pub relay_alignment: T,
    /// `max_{i≠j} ‖W_i H_j‖_F`.
    pub relay_forward: T,
    /// `max_{i≠j} ‖H_iᴴ W_j‖_F`.
    pub relay_backward: T,
    /// Largest of the four, each cross term divided by its on-block norm.
    pub relative_max: T,
}

/// Interference diagnostics for BS blocks `p_blocks` and relay blocks `w_blocks`
/// under the user partition of `ch`.
pub fn leakage_report<T: Real>(
    ch: &ChannelSet<T>,
    p_blocks: &[CMatrix<T>],
    w_blocks: &[CMatrix<T>],
) -> Result<LeakageReport<T>> {
    let sizes: Vec<usize> = ch.h_blocks.iter().map(|b| b.ncols()).collect();
    let (p, w) = assemble_network_precoders(p_blocks, w_blocks)?;
    let hinv_gp = ch
        .h
        .clone()
        .lu()
        .solve(&(&ch.g * &p))
        .ok_or_else(|| Error::Singular("user-relay channel H".into()))?;
    let bs_alignment = off_block_ratio(&hinv_gp, &sizes);
    let relay_alignment = off_block_ratio(&(ch.h.adjoint() * &w * &ch.h), &sizes);
    let (mut fwd, mut bwd, mut rel) = (T::zero(), T::zero(), T::zero());
    for (i, wi) in w_blocks.iter().enumerate() {
        let f_on = frobenius(&(wi * &ch.h_blocks[i]));
        let b_on = frobenius(&(ch.h_blocks[i].adjoint() * wi));
        for (j, hj) in ch.h_blocks.iter().enumerate() {
            if i == j {
                continue;
            }
            let f = frobenius(&(wi * hj));
            let b = frobenius(&(hj.adjoint() * wi));
            fwd = fwd.max(f);
            bwd = bwd.max(b);
            if f_on > T::zero() {
                rel = rel.max(f / f_on);
            }
            if b_on > T::zero() {
                rel = rel.max(b / b_on);
            }
        }
    }
    let relative_max = rel.max(bs_alignment).max(relay_alignment);
    Ok(LeakageReport { bs_alignment, relay_alignment, relay_forward: fwd, relay_backward: bwd, relative_max })
}

/// Largest relative inter-user leakage; zero for a single user.
pub fn interference_leakage<T: Real>(
    ch: &ChannelSet<T>,
    p_blocks: &[CMatrix<T>],
    w_blocks: &[CMatrix<T>],
) -> Result<T> {
    Ok(leakage_report(ch, p_blocks, w_blocks)?.relative_max)
}

/// Per-user link obtained by direct evaluation of the received signal
/// `y_m = H_mᴴ W (G P s + H s' + n_R) + n_m` after removing the user's own
/// uplink message. Residual cross-user terms are counted as noise.
pub fn end_to_end_user_link<T: Real>(
    ch: &ChannelSet<T>,
    p_blocks: &[CMatrix<T>],
    w: &CMatrix<T>,
    m: usize,
    sigma_r: T,
    sigma_m: T,
) -> EffectiveLink<T> {
    let hm_w = ch.h_blocks[m].adjoint() * w;
    let to_user = &hm_w * &ch.g;
    let f = &to_user * &p_blocks[m];
    let k = ch.h_blocks[m].ncols();
    let mut rn = (&hm_w * hm_w.adjoint()).scale(sigma_r * sigma_r) + identity::<T>(k).scale(sigma_m * sigma_m);
    for (j, (pj, hj)) in p_blocks.iter().zip(&ch.h_blocks).enumerate() {
        if j == m {
            continue;
        }
        let x = &to_user * pj;
        let u = &hm_w * hj;
        rn += &x * x.adjoint() + &u * u.adjoint();
    }
    EffectiveLink { f, rn }
}

/// Joint BS-side mutual information after removing the BS's own signal:
/// `log₂ det(I + H_eff H_effᴴ R_BS⁻¹)` with `H_eff = GᴴWH` and
/// `R_BS = σ_r² GᴴWWᴴG + σ_BS² I`.
pub fn bs_mutual_information<T: Real>(ch: &ChannelSet<T>, w: &CMatrix<T>, sigma_r: T, sigma_bs: T) -> Result<T> {
    let gw = ch.g.adjoint() * w;
    let h_eff = &gw * &ch.h;
    let n = ch.g.nrows();
    let r = (&gw * gw.adjoint()).scale(sigma_r * sigma_r) + identity::<T>(n).scale(sigma_bs * sigma_bs);
    gaussian_mi(&h_eff, &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_evd, inv_psd, real_matrix};
    use crate::system::{draw_channels, RngSpec};

    fn reference_channel(seed: u64) -> (SystemConfig<f64>, ChannelSet<f64>, Vec<UserLinkGeometry<f64>>) {
        let cfg = SystemConfig::default_layout().with_snr_db(20.0);
        let ch = draw_channels(&cfg, RngSpec::new(seed, 0)).unwrap();
        let geoms = compute_geometry(&ch).unwrap();
        (cfg, ch, geoms)
    }

    #[test]
    fn single_precision_pipeline() {
        let cfg = SystemConfig::<f32>::default_layout().with_snr_db(20.0);
        let ch = draw_channels(&cfg, RngSpec::new(8, 0)).unwrap();
        let geoms = compute_geometry(&ch).unwrap();
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        assert!(interference_leakage(&ch, &state.p_blocks, &state.w_blocks).unwrap() < 1e-3);
        for (m, g) in geoms.iter().enumerate() {
            assert!((g.bs_power(&state.d[m], Variant::Classic) - 1.0).abs() < 1e-4);
        }
        let mi: Vec<f32> = state.links(&geoms, &cfg).iter().map(|l| mutual_information(l).unwrap()).collect();
        assert!(mi.iter().all(|&x| x > 0.0 && x.is_finite()));
    }

    #[test]
    fn single_user_geometry_is_trivial() {
        let cfg = SystemConfig::<f64>::uniform(2, vec![2], 1.0);
        let ch = draw_channels(&cfg, RngSpec::new(1, 0)).unwrap();
        let geoms = compute_geometry(&ch).unwrap();
        assert_eq!(geoms[0].q, identity(2));
        assert_eq!(geoms[0].qp, identity(2));
    }

    #[test]
    fn cross_user_annihilation() {
        for seed in 0..20 {
            let (_, ch, geoms) = reference_channel(seed);
            for i in 0..2 {
                for j in 0..2 {
                    if i == j {
                        continue;
                    }
                    assert!(frobenius(&(&geoms[i].gp * &geoms[j].q)) < 1e-10);
                    assert!(frobenius(&(geoms[i].u1.adjoint() * &ch.h_blocks[j])) < 1e-10);
                    assert!(frobenius(&(&geoms[i].gp * &geoms[j].ubar1)) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rank_bases_have_user_dimension() {
        let (_, _, geoms) = reference_channel(42);
        for g in &geoms {
            assert_eq!(g.u1.shape(), (4, 2));
            let evd = hermitian_evd(&g.qp).unwrap();
            assert_eq!(evd.eigenvalues.iter().filter(|&&l| l > 0.5).count(), 2);
        }
    }

    #[test]
    fn deterministic_bs_power_and_identity_case() {
        let (cfg, _, geoms) = reference_channel(42);
        let (ds, ps) = bs_precoder_deterministic(&geoms, &cfg).unwrap();
        for (g, (d, p)) in geoms.iter().zip(ds.iter().zip(&ps)) {
            let tr = trace(&(&g.t * d * d.adjoint())).re;
            assert!((tr - 1.0).abs() < 1e-9);
            assert!((frobenius_sq(p) - 1.0).abs() < 1e-9);
        }
        let mut g = geoms[0].clone();
        g.t = identity(2);
        let d = deterministic_bs_scaling(&g, 1.0).unwrap();
        let want = identity::<f64>(2).scale(std::f64::consts::FRAC_1_SQRT_2);
        assert!(frobenius(&(d - want)) < 1e-14);
    }

    #[test]
    fn non_unit_power_budget_is_met() {
        let (mut cfg, ch, _) = reference_channel(5);
        cfg.bs_power = vec![2.5, 0.3];
        cfg.relay_power = vec![4.0, 0.7];
        let geoms = compute_geometry(&ch).unwrap();
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        for (m, g) in geoms.iter().enumerate() {
            assert!((g.bs_power(&state.d[m], Variant::Classic) - cfg.bs_power[m]).abs() < 1e-9);
            let a = g.aligned_gain(&state.d[m], Variant::Classic);
            assert!((g.relay_power(&a, &state.dp[m]) - cfg.relay_power[m]).abs() < 1e-9);
        }
    }

    #[test]
    fn bs_block_diagonalisation_and_blocks() {
        let (cfg, ch, geoms) = reference_channel(42);
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        let hinv_gp = inv_psd(&(ch.h.adjoint() * &ch.h)).unwrap() * ch.h.adjoint() * &ch.g * &state.p;
        assert!(off_block_ratio(&hinv_gp, &[2, 2]) < 1e-9);
        for (m, g) in geoms.iter().enumerate() {
            let block = hinv_gp.view((g.offset, g.offset), (2, 2)).into_owned();
            let want = g.aligned_gain(&state.d[m], Variant::Classic);
            assert!(frobenius(&(block - &want)) < 1e-9 * frobenius(&want).max(1.0));
        }
        assert_eq!(state.p.shape(), (4, 4));
    }

    #[test]
    fn relay_block_diagonalisation_and_power() {
        let (cfg, ch, geoms) = reference_channel(42);
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        let hwh = ch.h.adjoint() * &state.w * &ch.h;
        assert!(off_block_ratio(&hwh, &[2, 2]) < 1e-9);
        for (m, g) in geoms.iter().enumerate() {
            let block = hwh.view((g.offset, g.offset), (2, 2)).into_owned();
            let want = g.relay_gain(&state.dp[m]);
            assert!(frobenius(&(block - &want)) < 1e-9 * frobenius(&want).max(1.0));
            let a = g.aligned_gain(&state.d[m], Variant::Classic);
            assert!((g.relay_power(&a, &state.dp[m]) - 1.0).abs() < 1e-9);
        }
        let report = leakage_report(&ch, &state.p_blocks, &state.w_blocks).unwrap();
        assert!(report.relay_forward < 1e-10 && report.relay_backward < 1e-10);
    }

    #[test]
    fn noise_only_relay_scaling() {
        let (_, _, geoms) = reference_channel(1);
        let mut g = geoms[0].clone();
        g.tbar = identity(2);
        let dp = deterministic_relay_scaling(&g, &CMatrix::zeros(2, 2), 1.0).unwrap();
        let want = identity::<f64>(2).scale(std::f64::consts::FRAC_1_SQRT_2);
        assert!(frobenius(&(dp - want)) < 1e-14);
    }

    #[test]
    fn single_block_assembly() {
        let p1 = real_matrix::<f64>(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let w1 = real_matrix::<f64>(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let (p, w) = assemble_network_precoders(&[p1.clone()], &[w1.clone()]).unwrap();
        assert_eq!(p, p1);
        assert_eq!(w, w1);
        let bad = CMatrix::<f64>::zeros(3, 3);
        assert!(assemble_network_precoders(&[p1], &[bad]).is_err());
    }

    #[test]
    fn effective_link_trivial_cases() {
        let (_, _, geoms) = reference_channel(3);
        let mut g = geoms[0].clone();
        g.t = identity(2);
        g.tbar = identity(2);
        let id = identity::<f64>(2);
        let link = effective_link(&g, &id, &id, Variant::Classic, 0.0, 0.5);
        assert!(frobenius(&(&link.f - &id)) < 1e-15);
        assert!(frobenius(&(&link.rn - id.scale(0.25))) < 1e-15);
        let link = effective_link(&geoms[0], &id, &id, Variant::Classic, 0.0, 1.0);
        assert!(frobenius(&(&link.rn - &id)) < 1e-15);
    }

    #[test]
    fn factorised_link_matches_end_to_end() {
        for variant in [Variant::Classic, Variant::Extended] {
            let (cfg, ch, geoms) = reference_channel(42);
            let state = match variant {
                Variant::Classic => PrecoderState::deterministic(&geoms, &cfg).unwrap(),
                Variant::Extended => PrecoderState::deterministic_extended(&geoms, &cfg).unwrap(),
            };
            for (m, link) in state.links(&geoms, &cfg).iter().enumerate() {
                let direct = end_to_end_user_link(&ch, &state.p_blocks, &state.w, m, cfg.sigma_r, cfg.sigma_user[m]);
                assert!(frobenius(&(&link.f - &direct.f)) < 1e-9 * frobenius(&direct.f));
                assert!(frobenius(&(&link.rn - &direct.rn)) < 1e-9 * frobenius(&direct.rn));
            }
        }
    }

    #[test]
    fn mutual_information_closed_forms() {
        let id = identity::<f64>(2);
        let zero = EffectiveLink { f: CMatrix::zeros(2, 2), rn: id.clone() };
        assert_eq!(mutual_information(&zero).unwrap(), 0.0);
        let unit = EffectiveLink { f: id.clone(), rn: id.clone() };
        assert!((mutual_information(&unit).unwrap() - 2.0).abs() < 1e-14);
        let bad = EffectiveLink { f: id.clone(), rn: id.scale(-1.0) };
        assert!(mutual_information(&bad).is_err());
    }

    #[test]
    fn mutual_information_matches_spectral_sum() {
        let (cfg, _, geoms) = reference_channel(42);
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        for link in state.links(&geoms, &cfg) {
            let mi = mutual_information(&link).unwrap();
            let r_half = crate::linalg::inv_sqrt_psd(&link.rn).unwrap();
            let whitened = &r_half * &link.f * link.f.adjoint() * &r_half;
            let spectral: f64 = hermitian_evd(&whitened)
                .unwrap()
                .eigenvalues
                .iter()
                .map(|l| (1.0 + l).log2())
                .sum();
            assert!((mi - spectral).abs() < 1e-9, "{mi} vs {spectral}");
        }
    }

    #[test]
    fn leakage_negative_control_and_single_user() {
        let (cfg, ch, geoms) = reference_channel(42);
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        assert!(interference_leakage(&ch, &state.p_blocks, &state.w_blocks).unwrap() < 1e-9);
        let unstructured_p = vec![real_matrix::<f64>(4, 2, &[1.0; 8]); 2];
        let unstructured_w = vec![real_matrix::<f64>(4, 4, &[1.0, 0.5, 0.0, 2.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0, 1.0]); 2];
        assert!(interference_leakage(&ch, &unstructured_p, &unstructured_w).unwrap() > 0.1);

        let single = SystemConfig::<f64>::uniform(2, vec![2], 0.1);
        let ch = draw_channels(&single, RngSpec::new(1, 0)).unwrap();
        let geoms = compute_geometry(&ch).unwrap();
        let state = PrecoderState::deterministic(&geoms, &single).unwrap();
        assert_eq!(interference_leakage(&ch, &state.p_blocks, &state.w_blocks).unwrap(), 0.0);
    }

    #[test]
    fn singular_channel_is_rejected() {
        let g = identity::<f64>(2);
        let h = vec![real_matrix::<f64>(2, 1, &[1.0, 1.0]), real_matrix::<f64>(2, 1, &[2.0, 2.0])];
        let ch = ChannelSet::from_blocks(g, h).unwrap();
        assert!(compute_geometry(&ch).is_err());
    }

    #[test]
    fn bs_side_mi_is_positive() {
        let (cfg, ch, geoms) = reference_channel(42);
        let state = PrecoderState::deterministic(&geoms, &cfg).unwrap();
        let mi = bs_mutual_information(&ch, &state.w, cfg.sigma_r, cfg.sigma_bs).unwrap();
        assert!(mi > 0.0);
        let zero = bs_mutual_information(&ch, &CMatrix::zeros(4, 4), cfg.sigma_r, cfg.sigma_bs).unwrap();
        assert_eq!(zero, 0.0);
    }
}
