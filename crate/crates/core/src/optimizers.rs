//! Alternating per-user outage optimisers for the BS and relay scalings.
//!
//! Algorithm 1 alternates an MMSE transmit filter at the BS with an ANOMAX
//! (algebraic norm-maximising) relay scaling. Algorithm 2 uses the extended
//! BS structure `Ū D̄ Ūᴴ G'ᴴ`, maximises the effective channel gain under the
//! exact quadratic power constraint (ANMwoN) and updates the relay with the
//! effective-channel-gain to effective-noise-gain ratio (ECG2ENGR). Both
//! constrained problems are homogeneous quotients, so their maximisers are
//! dominant generalised eigenvectors and any rescaling keeps optimality.
//!
//! Mutual information is not assumed to be monotone across iterations; only
//! the change between consecutive sweeps is used as a stopping rule.

use crate::linalg::{
    dominant_generalized_eigenvector, dominant_right_singular_vector, frobenius_sq, identity, inv_psd,
    kron, trace, unvec, GeneralizedEigenpair,
};
use crate::precoding::{
    deterministic_bs_scaling, deterministic_extended_bs_scaling, deterministic_relay_scaling,
    effective_link, effective_noise, mutual_information, PrecoderState, UserLinkGeometry, Variant,
};
use crate::system::SystemConfig;
use crate::{CMatrix, Error, Real, Result};

/// Power budgets and noise levels relevant to one user.
#[derive(Clone, Copy, Debug)]
pub struct UserBudget<T: Real> {
    pub bs_power: T,
    pub relay_power: T,
    pub sigma_r: T,
    pub sigma_m: T,
}

impl<T: Real> UserBudget<T> {
    pub fn from_config(config: &SystemConfig<T>, m: usize) -> Self {
        Self {
            bs_power: config.bs_power[m],
            relay_power: config.relay_power[m],
            sigma_r: config.sigma_r,
            sigma_m: config.sigma_user[m],
        }
    }
}

/// How a generalised eigenvector is rescaled onto its quadratic constraint
/// `dᴴ R d = P`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// `d = √(P / d̃ᴴR d̃) · d̃`; the constraint holds with equality.
    #[default]
    SquareRoot,
    /// `d = d̃ / (d̃ᴴR d̃)` applied to the unit-norm eigenvector. Kept only to
    /// reproduce the unnormalised form; the constraint is generally violated.
    Printed,
}

impl Normalization {
    fn apply<T: Real>(self, v: &crate::CVector<T>, metric: &CMatrix<T>, power: T) -> crate::CVector<T> {
        let q = (v.adjoint() * metric * v)[(0, 0)].re;
        match self {
            Normalization::SquareRoot => v.scale((power / q).sqrt()),
            Normalization::Printed => v.unscale(q),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerSettings<T: Real> {
    /// Stop once `|I_k − I_{k−1}|` drops below this many bits.
    pub tol: T,
    pub max_iter: usize,
    pub normalization: Normalization,
}

impl<T: Real> Default for OptimizerSettings<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-6), max_iter: 50, normalization: Normalization::SquareRoot }
    }
}

/// `F̃ = T̄ᴴD'T̄T`, `C = (F̃ᴴF̃ + tr(R̃)I)⁻¹F̃ᴴ`, `D = √γ C` with
/// `γ = P / tr(T C Cᴴ)`.
pub fn mmse_bs_update<T: Real>(geom: &UserLinkGeometry<T>, dp: &CMatrix<T>, budget: &UserBudget<T>) -> Result<CMatrix<T>> {
    let f = geom.relay_gain(dp) * &geom.t;
    let rn = effective_noise(geom, dp, budget.sigma_r, budget.sigma_m);
    let normal = f.adjoint() * &f + identity::<T>(geom.k).scale(trace(&rn).re);
    let c = inv_psd(&normal).map_err(|_| Error::Singular("MMSE normal matrix".into()))? * f.adjoint();
    let used = trace(&(&geom.t * &c * c.adjoint())).re;
    if !(used > T::zero()) {
        return Err(Error::Singular("MMSE filter carries no power".into()));
    }
    Ok(c.scale((budget.bs_power / used).sqrt()))
}

/// Result of an ANOMAX relay update.
#[derive(Clone, Debug)]
pub struct AnomaxSolution<T: Real> {
    /// `D' = √γ' C'`.
    pub dp: CMatrix<T>,
    /// Unit-Frobenius direction `C'`.
    pub direction: CMatrix<T>,
    pub gamma: T,
    /// Largest singular value of `(T̄A)ᵀ ⊗ T̄ᴴ`.
    pub sigma_max: T,
}

/// ANOMAX Kronecker operator `(T̄ A)ᵀ ⊗ T̄ᴴ`, so that
/// `vec(T̄ᴴ C T̄ A) = K vec(C)`.
pub fn anomax_operator<T: Real>(geom: &UserLinkGeometry<T>, a: &CMatrix<T>) -> CMatrix<T> {
    kron(&(&geom.tbar * a).transpose(), &geom.tbar.adjoint())
}

/// Relay scaling maximising `‖T̄ᴴ D' T̄ A‖²_F` on the unit-Frobenius sphere,
/// then rescaled so the high-SNR relay power equals the budget.
pub fn anomax_relay_update<T: Real>(
    geom: &UserLinkGeometry<T>,
    a: &CMatrix<T>,
    budget: &UserBudget<T>,
) -> Result<AnomaxSolution<T>> {
    let op = anomax_operator(geom, a);
    let (u, sigma_max) = dominant_right_singular_vector(&op)?;
    let direction = unvec(&u, geom.k, geom.k)?;
    let cov = geom.relay_input_covariance(a);
    let used = trace(&(&direction * cov * direction.adjoint())).re;
    let gamma = budget.relay_power / used;
    Ok(AnomaxSolution { dp: direction.scale(gamma.sqrt()), direction, gamma, sigma_max })
}

/// Result of a quotient-maximising update.
#[derive(Clone, Debug)]
pub struct QuotientSolution<T: Real> {
    /// The updated `D̄` or `D'`.
    pub matrix: CMatrix<T>,
    /// Unit-norm dominant generalised eigenvector and its quotient.
    pub pair: GeneralizedEigenpair<T>,
    /// Numerator Gram `KᴴK`.
    pub numerator: CMatrix<T>,
    /// Denominator metric of the quotient.
    pub denominator: CMatrix<T>,
    /// Power metric `R` such that the constraint reads `dᴴ R d = P`.
    pub power_metric: CMatrix<T>,
}

/// ANMwoN operators: `K̄ = (𝕋ᴴ)ᵀ ⊗ (T̄ᴴD'T̄𝕋)` and `R̄ = (𝕋ᴴ𝕋)ᵀ ⊗ I`.
pub fn anmwon_operators<T: Real>(geom: &UserLinkGeometry<T>, dp: &CMatrix<T>) -> (CMatrix<T>, CMatrix<T>) {
    let left = geom.relay_gain(dp) * &geom.tbb;
    let k_bar = kron(&geom.tbb.adjoint().transpose(), &left);
    let r_bar = kron(&(geom.tbb.adjoint() * &geom.tbb).transpose(), &identity::<T>(geom.k));
    (k_bar, r_bar)
}

/// Extended BS scaling `D̄` maximising `‖T̄ᴴD'T̄ 𝕋 D̄ 𝕋ᴴ‖²_F` subject to
/// `tr(D̄ᴴD̄𝕋ᴴ𝕋) = P`.
pub fn anmwon_bs_update<T: Real>(
    geom: &UserLinkGeometry<T>,
    dp: &CMatrix<T>,
    budget: &UserBudget<T>,
    normalization: Normalization,
) -> Result<QuotientSolution<T>> {
    let (k_bar, r_bar) = anmwon_operators(geom, dp);
    let numerator = k_bar.adjoint() * &k_bar;
    let pair = dominant_generalized_eigenvector(&numerator, &r_bar)?;
    let d = normalization.apply(&pair.vector, &r_bar, budget.bs_power);
    let matrix = unvec(&d, geom.k, geom.k)?;
    Ok(QuotientSolution { matrix, pair, numerator, denominator: r_bar.clone(), power_metric: r_bar })
}

/// ECG2ENGR operators `(𝕂, R̄', K̃)`:
/// `𝕂 = (T̄𝕋D̄𝕋ᴴ)ᵀ ⊗ T̄ᴴ`, `R̄' = (T̄(AAᴴ + I)T̄ᴴ)ᵀ ⊗ I` with `A = 𝕋D̄𝕋ᴴ`,
/// and `K̃ = σ_r²(I ⊗ T̄T̄ᴴ) + σ_m² R̄'`.
pub fn ecg2engr_operators<T: Real>(
    geom: &UserLinkGeometry<T>,
    dbar: &CMatrix<T>,
    budget: &UserBudget<T>,
) -> (CMatrix<T>, CMatrix<T>, CMatrix<T>) {
    let a = geom.aligned_gain(dbar, Variant::Extended);
    let k_gain = anomax_operator(geom, &a);
    let r_prime = kron(&geom.relay_input_covariance(&a).transpose(), &identity::<T>(geom.k));
    let noise = kron(&identity::<T>(geom.k), &(&geom.tbar * geom.tbar.adjoint()));
    let k_tilde = noise.scale(budget.sigma_r * budget.sigma_r) + r_prime.scale(budget.sigma_m * budget.sigma_m);
    (k_gain, r_prime, k_tilde)
}

/// Relay scaling maximising the relaxed gain-to-noise quotient
/// `d'ᴴ𝕂ᴴ𝕂d' / d'ᴴK̃d'`, rescaled onto the relay power constraint.
pub fn ecg2engr_relay_update<T: Real>(
    geom: &UserLinkGeometry<T>,
    dbar: &CMatrix<T>,
    budget: &UserBudget<T>,
    normalization: Normalization,
) -> Result<QuotientSolution<T>> {
    let (k_gain, r_prime, k_tilde) = ecg2engr_operators(geom, dbar, budget);
    let numerator = k_gain.adjoint() * &k_gain;
    let pair = dominant_generalized_eigenvector(&numerator, &k_tilde)?;
    let d = normalization.apply(&pair.vector, &r_prime, budget.relay_power);
    let matrix = unvec(&d, geom.k, geom.k)?;
    Ok(QuotientSolution { matrix, pair, numerator, denominator: k_tilde, power_metric: r_prime })
}

/// Gain-to-noise ratio with the literal trace denominator:
/// `‖T̄ᴴD'T̄A‖² / tr(σ_r² T̄ᴴD'D'ᴴT̄ + σ_m² I)`.
pub fn ecg2engr_ratio<T: Real>(
    geom: &UserLinkGeometry<T>,
    dbar: &CMatrix<T>,
    dp: &CMatrix<T>,
    budget: &UserBudget<T>,
) -> T {
    let a = geom.aligned_gain(dbar, Variant::Extended);
    let gain = frobenius_sq(&(geom.relay_gain(dp) * a));
    gain / trace(&effective_noise(geom, dp, budget.sigma_r, budget.sigma_m)).re
}

/// The `(D or D̄, D')` pair reached by an optimiser plus its history.
#[derive(Clone, Debug)]
pub struct IterationTrace<T: Real> {
    pub variant: Variant,
    pub iterations: usize,
    /// Mutual information (bits) after each iteration.
    pub mi_history: Vec<T>,
    /// Mutual information of the closed-form starting point.
    pub initial_mi: T,
    pub converged: bool,
    pub d: CMatrix<T>,
    pub dp: CMatrix<T>,
}

impl<T: Real> IterationTrace<T> {
    pub fn final_mi(&self) -> T {
        self.mi_history.last().copied().unwrap_or(self.initial_mi)
    }
}

fn user_mi<T: Real>(
    geom: &UserLinkGeometry<T>,
    d: &CMatrix<T>,
    dp: &CMatrix<T>,
    variant: Variant,
    budget: &UserBudget<T>,
) -> Result<T> {
    mutual_information(&effective_link(geom, d, dp, variant, budget.sigma_r, budget.sigma_m))
}

fn iterate<T: Real>(
    variant: Variant,
    mut d: CMatrix<T>,
    mut dp: CMatrix<T>,
    geom: &UserLinkGeometry<T>,
    budget: &UserBudget<T>,
    settings: &OptimizerSettings<T>,
    mut sweep: impl FnMut(&CMatrix<T>) -> Result<(CMatrix<T>, CMatrix<T>)>,
) -> Result<IterationTrace<T>> {
    let initial_mi = user_mi(geom, &d, &dp, variant, budget)?;
    let mut previous = initial_mi;
    let mut mi_history = Vec::new();
    let mut converged = false;
    while mi_history.len() < settings.max_iter {
        (d, dp) = sweep(&d)?;
        let mi = user_mi(geom, &d, &dp, variant, budget)?;
        mi_history.push(mi);
        if (mi - previous).abs() < settings.tol {
            converged = true;
            break;
        }
        previous = mi;
    }
    Ok(IterationTrace { variant, iterations: mi_history.len(), mi_history, initial_mi, converged, d, dp })
}

/// MMSE + ANOMAX alternation started from the closed-form scalings.
pub fn algorithm1<T: Real>(
    geom: &UserLinkGeometry<T>,
    budget: &UserBudget<T>,
    settings: &OptimizerSettings<T>,
) -> Result<IterationTrace<T>> {
    let d0 = deterministic_bs_scaling(geom, budget.bs_power)?;
    let dp0 = deterministic_relay_scaling(geom, &geom.aligned_gain(&d0, Variant::Classic), budget.relay_power)?;
    iterate(Variant::Classic, d0, dp0, geom, budget, settings, |d| {
        let dp = anomax_relay_update(geom, &geom.aligned_gain(d, Variant::Classic), budget)?.dp;
        let d = mmse_bs_update(geom, &dp, budget)?;
        let dp = anomax_relay_update(geom, &geom.aligned_gain(&d, Variant::Classic), budget)?.dp;
        Ok((d, dp))
    })
}

/// ANMwoN + ECG2ENGR alternation on the extended BS structure.
pub fn algorithm2<T: Real>(
    geom: &UserLinkGeometry<T>,
    budget: &UserBudget<T>,
    settings: &OptimizerSettings<T>,
) -> Result<IterationTrace<T>> {
    let d0 = deterministic_extended_bs_scaling(geom, budget.bs_power)?;
    let dp0 = deterministic_relay_scaling(geom, &geom.aligned_gain(&d0, Variant::Extended), budget.relay_power)?;
    let norm = settings.normalization;
    iterate(Variant::Extended, d0, dp0, geom, budget, settings, |dbar| {
        let dp = ecg2engr_relay_update(geom, dbar, budget, norm)?.matrix;
        let dbar = anmwon_bs_update(geom, &dp, budget, norm)?.matrix;
        let dp = ecg2engr_relay_update(geom, &dbar, budget, norm)?.matrix;
        Ok((dbar, dp))
    })
}

/// Extended-structure basis, `𝕋_m` and the closed-form `D̄_m` starting point.
pub fn extended_bs_geometry<T: Real>(
    geom: &UserLinkGeometry<T>,
    budget: &UserBudget<T>,
) -> Result<(CMatrix<T>, CMatrix<T>, CMatrix<T>)> {
    let d0 = deterministic_extended_bs_scaling(geom, budget.bs_power)?;
    Ok((geom.ubar1.clone(), geom.tbb.clone(), d0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    MmseAnomax,
    AnmwonEcg2engr,
}

/// Runs one optimiser independently for every user and assembles the result.
pub fn optimize_all<T: Real>(
    geoms: &[UserLinkGeometry<T>],
    config: &SystemConfig<T>,
    algorithm: Algorithm,
    settings: &OptimizerSettings<T>,
) -> Result<(PrecoderState<T>, Vec<IterationTrace<T>>)> {
    let traces = geoms
        .iter()
        .enumerate()
        .map(|(m, g)| {
            let budget = UserBudget::from_config(config, m);
            match algorithm {
                Algorithm::MmseAnomax => algorithm1(g, &budget, settings),
                Algorithm::AnmwonEcg2engr => algorithm2(g, &budget, settings),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let variant = match algorithm {
        Algorithm::MmseAnomax => Variant::Classic,
        Algorithm::AnmwonEcg2engr => Variant::Extended,
    };
    let d = traces.iter().map(|t| t.d.clone()).collect();
    let dp = traces.iter().map(|t| t.dp.clone()).collect();
    Ok((PrecoderState::assemble(geoms, variant, d, dp)?, traces))
}
