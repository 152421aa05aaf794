//! Invariant suite run by `bsa-relay verify`.
//!
//! Each trial draws one channel of the configured layout and checks
//! interference leakage, power equalities, eigen-optimality against random
//! probes and the factorised/end-to-end model agreement. Convergence is
//! checked as a rate over all trials.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::{p2psa_precoders, singleton_channels, time_sharing_round};
use crate::linalg::{frobenius, hermitian_evd, identity, rayleigh_quotient, vec};
use crate::optimizers::{
    anmwon_bs_update, anomax_operator, anomax_relay_update, ecg2engr_relay_update, optimize_all, Algorithm,
    OptimizerSettings, UserBudget,
};
use crate::precoding::{
    compute_geometry, end_to_end_user_link, leakage_report, mutual_information, PrecoderState, UserLinkGeometry,
    Variant,
};
use crate::system::{draw_channels, ChannelSet, RngSpec, SystemConfig};
use crate::{CMatrix, CVector, Error, Result, C};

pub const ALIGNMENT_TOLERANCE: f64 = 1e-9;
pub const CROSS_TERM_TOLERANCE: f64 = 1e-10;
pub const POWER_TOLERANCE: f64 = 1e-9;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Allowed relative excess of a probe over the returned optimum (rounding).
pub const PROBE_SLACK: f64 = 1e-12;
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;
pub const MIN_CONVERGED_FRACTION: f64 = 0.95;

#[derive(Clone, Debug)]
pub struct VerifySettings {
    pub trials: u64,
    pub seed: u64,
    pub probes: usize,
    pub snr_db: f64,
    pub config: SystemConfig<f64>,
    pub optimizer: OptimizerSettings<f64>,
}

impl VerifySettings {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            trials,
            seed,
            probes: 10_000,
            snr_db: 20.0,
            config: SystemConfig::default_layout(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

/// One invariant and the worst value observed across all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub limit: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.limit
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub trials: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Worst values of one trial, in the order of [`CHECK_NAMES`].
#[derive(Clone, Debug, Default)]
struct TrialMetrics {
    values: [f64; 9],
    converged: [bool; 2],
}

const CHECK_NAMES: [(&str, f64); 9] = [
    ("alignment-relative", ALIGNMENT_TOLERANCE),
    ("cross-terms", CROSS_TERM_TOLERANCE),
    ("bs-power", POWER_TOLERANCE),
    ("relay-power", POWER_TOLERANCE),
    ("anomax-probe-excess", PROBE_SLACK),
    ("quotient-probe-excess", PROBE_SLACK),
    ("singular-residual", RESIDUAL_TOLERANCE),
    ("eigen-residual", RESIDUAL_TOLERANCE),
    ("end-to-end-mismatch", EQUIVALENCE_TOLERANCE),
];

pub fn run_verify(settings: &VerifySettings, workers: usize) -> Result<VerifyReport> {
    if settings.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let metrics: Vec<TrialMetrics> =
        pool.install(|| (0..settings.trials).into_par_iter().map(|t| verify_trial(settings, t)).collect::<Result<_>>())?;

    let mut checks: Vec<Check> = CHECK_NAMES.iter().map(|&(name, limit)| Check { name, worst: 0.0, limit }).collect();
    for m in &metrics {
        for (check, &v) in checks.iter_mut().zip(&m.values) {
            // NaN must fail, so it is propagated explicitly
            check.worst = if v.is_nan() || check.worst.is_nan() { f64::NAN } else { check.worst.max(v) };
        }
    }
    let n = metrics.len() as f64;
    for (i, name) in ["alg1-nonconverged-fraction", "alg2-nonconverged-fraction"].into_iter().enumerate() {
        let missed = metrics.iter().filter(|m| !m.converged[i]).count() as f64;
        checks.push(Check { name, worst: missed / n, limit: 1.0 - MIN_CONVERGED_FRACTION });
    }
    Ok(VerifyReport { trials: settings.trials, checks })
}

fn probe_rng(seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x05ee_d0f9_a0b5);
    rng.set_stream(trial);
    rng
}

pub fn random_probe(rng: &mut impl Rng, n: usize) -> CVector<f64> {
    CVector::from_fn(n, |_, _| C::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

/// Largest relative excess of a probe quotient over `best`.
fn probe_excess(rng: &mut impl Rng, probes: usize, best: f64, quotient: impl Fn(&CVector<f64>) -> f64, n: usize) -> f64 {
    (0..probes).map(|_| (quotient(&random_probe(rng, n)) - best) / best).fold(f64::NEG_INFINITY, f64::max).max(0.0)
}

/// Relative misalignment of a single-user time-sharing round: energy of
/// `G P` and `W` outside the range of `H_m`.
fn time_sharing_alignment(ch: &ChannelSet<f64>, p: &CMatrix<f64>, w: &CMatrix<f64>, m: usize) -> Result<f64> {
    let hm = &ch.h_blocks[m];
    let u = hermitian_evd(&(hm * hm.adjoint()))?.rank_basis(hm.ncols());
    let outside = identity::<f64>(u.nrows()) - &u * u.adjoint();
    let gp = &ch.g * p;
    let bs = frobenius(&(&outside * &gp)) / frobenius(&gp);
    let relay = frobenius(&(&outside * w)).max(frobenius(&(w * &outside))) / frobenius(w);
    Ok(bs.max(relay))
}

fn verify_trial(settings: &VerifySettings, trial: u64) -> Result<TrialMetrics> {
    let cfg = settings.config.with_snr_db(settings.snr_db);
    let ch = draw_channels(&cfg, RngSpec::new(settings.seed, trial))?;
    let geoms = compute_geometry(&ch)?;
    let mut out = TrialMetrics::default();
    let v = &mut out.values;

    let det = PrecoderState::deterministic(&geoms, &cfg)?;
    let (alg1, traces1) = optimize_all(&geoms, &cfg, Algorithm::MmseAnomax, &settings.optimizer)?;
    let (alg2, traces2) = optimize_all(&geoms, &cfg, Algorithm::AnmwonEcg2engr, &settings.optimizer)?;
    out.converged = [traces1.iter().all(|t| t.converged), traces2.iter().all(|t| t.converged)];

    // leakage of every scheme
    let p2p = p2psa_precoders(&ch, &cfg)?;
    let mut reports = Vec::new();
    for state in [&det, &alg1, &alg2] {
        reports.push(leakage_report(&ch, &state.p_blocks, &state.w_blocks)?);
    }
    reports.push(leakage_report(&singleton_channels(&ch)?, &p2p.streams.p_blocks, &p2p.streams.w_blocks)?);
    for r in &reports {
        v[0] = v[0].max(r.bs_alignment).max(r.relay_alignment);
        v[1] = v[1].max(r.relay_forward).max(r.relay_backward);
    }
    for m in 0..cfg.users() {
        let round = time_sharing_round(&ch, &cfg, m)?;
        v[0] = v[0].max(time_sharing_alignment(&ch, &round.p, &round.w, m)?);
    }

    // power equalities
    for state in [&det, &alg1, &alg2] {
        for (m, g) in geoms.iter().enumerate() {
            v[2] = v[2].max(rel(g.bs_power(&state.d[m], state.variant), cfg.bs_power[m]));
            let a = g.aligned_gain(&state.d[m], state.variant);
            v[3] = v[3].max(rel(g.relay_power(&a, &state.dp[m]), cfg.relay_power[m]));
        }
    }

    // optimality probes around the closed-form starting points
    let mut rng = probe_rng(settings.seed, trial);
    let ext = PrecoderState::deterministic_extended(&geoms, &cfg)?;
    for (m, g) in geoms.iter().enumerate() {
        let budget = UserBudget::from_config(&cfg, m);
        probe_user(g, &det, &ext, m, &budget, settings, &mut rng, v)?;
    }

    // factorised vs end-to-end
    for state in [&det, &alg1, &alg2] {
        for (m, link) in state.links(&geoms, &cfg).iter().enumerate() {
            let factorised = mutual_information(link)?;
            let direct = mutual_information(&end_to_end_user_link(
                &ch,
                &state.p_blocks,
                &state.w,
                m,
                cfg.sigma_r,
                cfg.sigma_user[m],
            ))?;
            v[8] = v[8].max((factorised - direct).abs());
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn probe_user(
    g: &UserLinkGeometry<f64>,
    det: &PrecoderState<f64>,
    ext: &PrecoderState<f64>,
    m: usize,
    budget: &UserBudget<f64>,
    settings: &VerifySettings,
    rng: &mut ChaCha20Rng,
    v: &mut [f64; 9],
) -> Result<()> {
    let a = g.aligned_gain(&det.d[m], Variant::Classic);
    let op = anomax_operator(g, &a);
    let sol = anomax_relay_update(g, &a, budget)?;
    let dir = vec(&sol.direction);
    let best = (&op * &dir).norm_squared();
    let n = dir.len();
    v[4] = v[4].max(probe_excess(rng, settings.probes, best, |p| (&op * p).norm_squared() / p.norm_squared(), n));
    let gram = op.adjoint() * &op;
    let s2 = sol.sigma_max * sol.sigma_max;
    v[6] = v[6].max((&gram * &dir - dir.scale(s2)).norm() / s2);

    let bs = anmwon_bs_update(g, &ext.dp[m], budget, settings.optimizer.normalization)?;
    let relay = ecg2engr_relay_update(g, &ext.d[m], budget, settings.optimizer.normalization)?;
    for q in [&bs, &relay] {
        let (num, den, pair) = (&q.numerator, &q.denominator, &q.pair);
        let n = pair.vector.len();
        v[5] = v[5].max(probe_excess(rng, settings.probes, pair.value, |p| rayleigh_quotient(num, den, p), n));
        let nv = num * &pair.vector;
        v[7] = v[7].max((&nv - (den * &pair.vector).scale(pair.value)).norm() / nv.norm());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let mut settings = VerifySettings::new(6, 11);
        settings.probes = 200;
        let report = run_verify(&settings, 2).unwrap();
        assert_eq!(report.checks.len(), 11);
        for c in &report.checks {
            assert!(c.passed(), "{} = {} > {}", c.name, c.worst, c.limit);
        }
    }

    #[test]
    fn report_is_worker_independent() {
        let mut settings = VerifySettings::new(4, 3);
        settings.probes = 50;
        assert_eq!(run_verify(&settings, 1).unwrap(), run_verify(&settings, 4).unwrap());
    }

    #[test]
    fn nan_fails_a_check() {
        let c = Check { name: "x", worst: f64::NAN, limit: 1.0 };
        assert!(!c.passed());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_verify(&VerifySettings::new(0, 1), 1).is_err());
    }
}
