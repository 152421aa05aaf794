//! Monte Carlo sweeps over SNR for every precoding scheme.
//!
//! Every trial index maps to one channel draw that is shared by all schemes
//! and SNR points (paired comparison). Trials run on a rayon pool; results
//! are gathered in trial order and reduced sequentially, so the output is
//! bit-identical for any worker count.

mod output;
pub mod verify;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{p2psa_precoders, time_sharing_round, time_sharing_threshold};
use crate::optimizers::{optimize_all, Algorithm, OptimizerSettings};
use crate::precoding::{
    bs_mutual_information, compute_geometry, end_to_end_user_link, mutual_information, PrecoderState,
};
use crate::system::{draw_channels, ChannelSet, RngSpec, SystemConfig};
use crate::{Error, Real, Result};

pub use output::{emit_results, read_csv, read_json, OutputFormat, CSV_HEADER, JSON_SCHEMA_ID};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "BSA_RELAY_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    BsaDeterministic,
    BsaAlg1,
    BsaAlg2,
    P2psa,
    TimeSharing,
}

impl Scheme {
    pub const ALL: [Scheme; 5] =
        [Scheme::BsaDeterministic, Scheme::BsaAlg1, Scheme::BsaAlg2, Scheme::P2psa, Scheme::TimeSharing];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::BsaDeterministic => "bsa-deterministic",
            Scheme::BsaAlg1 => "bsa-alg1",
            Scheme::BsaAlg2 => "bsa-alg2",
            Scheme::P2psa => "p2psa",
            Scheme::TimeSharing => "time-sharing",
        }
    }

    /// Parses a comma-separated list such as `bsa-alg1,p2psa`.
    pub fn parse_list(list: &str) -> Result<Vec<Scheme>> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme `{s}`")))
    }
}

/// Per-trial metrics of one scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome<T: Real> {
    /// Downlink mutual information of each user (bits).
    pub user_mi: Vec<T>,
    /// Outage threshold applied to each user (bits).
    pub thresholds: Vec<T>,
    /// System throughput in bits per channel use.
    pub sum_rate: T,
}

impl<T: Real> TrialOutcome<T> {
    pub fn in_outage(&self, m: usize) -> bool {
        self.user_mi[m] < self.thresholds[m]
    }
}

fn two_phase_rate<T: Real>(user_mi: &[T], bs_mi: T) -> T {
    let total = user_mi.iter().fold(bs_mi, |acc, &x| acc + x);
    total * T::lit(0.5)
}

/// Evaluates one scheme on one channel draw. `config` carries the noise
/// levels of the SNR point.
///
/// Sum rate is `(Σ_m I_m + I_BS)/2`: both directions over the two phases.
/// Time-sharing averages its `M` rounds instead.
pub fn evaluate_trial<T: Real>(
    ch: &ChannelSet<T>,
    scheme: Scheme,
    config: &SystemConfig<T>,
    settings: &OptimizerSettings<T>,
) -> Result<TrialOutcome<T>> {
    let thresholds: Vec<T> = (0..config.users()).map(|m| config.outage_threshold(m)).collect();
    let aligned = |state: &PrecoderState<T>, geoms: &[_]| -> Result<TrialOutcome<T>> {
        let user_mi = state.links(geoms, config).iter().map(mutual_information).collect::<Result<Vec<T>>>()?;
        let bs_mi = bs_mutual_information(ch, &state.w, config.sigma_r, config.sigma_bs)?;
        Ok(TrialOutcome { sum_rate: two_phase_rate(&user_mi, bs_mi), user_mi, thresholds: thresholds.clone() })
    };
    match scheme {
        Scheme::BsaDeterministic => {
            let geoms = compute_geometry(ch)?;
            aligned(&PrecoderState::deterministic(&geoms, config)?, &geoms)
        }
        Scheme::BsaAlg1 | Scheme::BsaAlg2 => {
            let geoms = compute_geometry(ch)?;
            let algorithm = if scheme == Scheme::BsaAlg1 { Algorithm::MmseAnomax } else { Algorithm::AnmwonEcg2engr };
            let (state, _) = optimize_all(&geoms, config, algorithm, settings)?;
            aligned(&state, &geoms)
        }
        Scheme::P2psa => {
            let pre = p2psa_precoders(ch, config)?;
            let user_mi = (0..config.users())
                .map(|m| {
                    mutual_information(&end_to_end_user_link(ch, &pre.p_blocks, &pre.w, m, config.sigma_r, config.sigma_user[m]))
                })
                .collect::<Result<Vec<T>>>()?;
            let bs_mi = bs_mutual_information(ch, &pre.w, config.sigma_r, config.sigma_bs)?;
            Ok(TrialOutcome { sum_rate: two_phase_rate(&user_mi, bs_mi), user_mi, thresholds })
        }
        Scheme::TimeSharing => {
            let users = config.users();
            let mut user_mi = Vec::with_capacity(users);
            let mut rate = T::zero();
            for m in 0..users {
                let round = time_sharing_round(ch, config, m)?;
                rate += two_phase_rate(&[round.user_mi], round.bs_mi);
                user_mi.push(round.user_mi);
            }
            let thresholds = (0..users).map(|m| time_sharing_threshold(config, m)).collect();
            Ok(TrialOutcome { user_mi, thresholds, sum_rate: rate / T::from_count(users) })
        }
    }
}

/// Everything that determines a sweep's output.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub config: SystemConfig<f64>,
    pub schemes: Vec<Scheme>,
    pub snr_grid_db: Vec<f64>,
    pub trials: u64,
    pub master_seed: u64,
    pub settings: OptimizerSettings<f64>,
}

impl SweepSpec {
    pub fn new(config: SystemConfig<f64>, schemes: Vec<Scheme>, snr_grid_db: Vec<f64>, trials: u64, master_seed: u64) -> Self {
        Self { config, schemes, snr_grid_db, trials, master_seed, settings: OptimizerSettings::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("SNR grid must be nonempty and finite".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("at least one scheme is required".into()));
        }
        Ok(())
    }
}

/// Inclusive SNR grid `start, start + step, …, ≤ stop`.
pub fn snr_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || stop < start {
        return Err(Error::InvalidConfig(format!("bad SNR range {start}..{stop} step {step}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// One aggregated output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub snr_db: f64,
    /// 1-based user index.
    pub user: usize,
    pub outage_prob: f64,
    /// Binomial standard error `√(p(1−p)/trials)` of `outage_prob`.
    pub outage_stderr: f64,
    pub mean_mi_bits: f64,
    /// Mean system throughput of the scheme at this SNR (same for every user row).
    pub ergodic_capacity_bits: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, scheme: Scheme, snr_db: f64, user: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.snr_db == snr_db && r.user == user)
    }

    /// Outage averaged over users for a scheme/SNR cell.
    pub fn mean_outage(&self, scheme: Scheme, snr_db: f64) -> Option<f64> {
        let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.scheme == scheme && r.snr_db == snr_db).collect();
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.outage_prob).sum::<f64>() / rows.len() as f64)
    }

    pub fn capacity(&self, scheme: Scheme, snr_db: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.scheme == scheme && r.snr_db == snr_db).map(|r| r.ergodic_capacity_bits)
    }
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

type TrialGrid = Vec<Vec<TrialOutcome<f64>>>;

fn run_trial(spec: &SweepSpec, configs: &[SystemConfig<f64>], trial: u64) -> Result<TrialGrid> {
    let ch = draw_channels(&spec.config, RngSpec::new(spec.master_seed, trial))?;
    configs
        .iter()
        .map(|cfg| spec.schemes.iter().map(|&s| evaluate_trial(&ch, s, cfg, &spec.settings)).collect())
        .collect()
}

/// Runs the sweep on `workers` threads.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepResult> {
    spec.validate()?;
    let configs: Vec<SystemConfig<f64>> = spec.snr_grid_db.iter().map(|&s| spec.config.with_snr_db(s)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_trial: Vec<TrialGrid> =
        pool.install(|| (0..spec.trials).into_par_iter().map(|t| run_trial(spec, &configs, t)).collect::<Result<_>>())?;

    let users = spec.config.users();
    let n = spec.trials as f64;
    let mut rows = Vec::new();
    for (si, &scheme) in spec.schemes.iter().enumerate() {
        for (pi, &snr_db) in spec.snr_grid_db.iter().enumerate() {
            let mut outages = vec![0u64; users];
            let mut mi = vec![0.0; users];
            let mut rate = 0.0;
            for trial in &per_trial {
                let outcome = &trial[pi][si];
                for m in 0..users {
                    outages[m] += u64::from(outcome.in_outage(m));
                    mi[m] += outcome.user_mi[m];
                }
                rate += outcome.sum_rate;
            }
            for m in 0..users {
                let p = outages[m] as f64 / n;
                rows.push(SweepRow {
                    scheme,
                    snr_db,
                    user: m + 1,
                    outage_prob: p,
                    outage_stderr: (p * (1.0 - p) / n).sqrt(),
                    mean_mi_bits: mi[m] / n,
                    ergodic_capacity_bits: rate / n,
                    trials: spec.trials,
                    seed: spec.master_seed,
                });
            }
        }
    }
    Ok(SweepResult { rows })
}
