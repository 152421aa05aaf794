//! Experiment configuration and Rayleigh channel generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{condition_number, hstack};
use crate::{CMatrix, Error, Real, Result, C};

/// Draws whose BS→relay or user→relay matrix exceeds this condition number
/// are discarded and redrawn.
pub const MAX_CHANNEL_CONDITION: f64 = 1e12;

/// Antenna layout, power budgets, noise levels and target rate.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig<T: Real> {
    /// Antennas at the BS and at the relay.
    pub n: usize,
    /// Antennas per user; the user count is `k.len()`.
    pub k: Vec<usize>,
    pub bs_power: Vec<T>,
    pub relay_power: Vec<T>,
    pub sigma_r: T,
    pub sigma_bs: T,
    pub sigma_user: Vec<T>,
    /// Target rate in bits per channel use.
    pub rate: T,
}

impl<T: Real> SystemConfig<T> {
    /// N = 4 antennas, two users with two antennas each, unit powers, unit
    /// noise and R = 1 bit per channel use.
    pub fn default_layout() -> Self {
        Self::uniform(4, vec![2, 2], T::one())
    }

    /// Unit powers, equal noise `sigma` everywhere and `R = 1`.
    pub fn uniform(n: usize, k: Vec<usize>, sigma: T) -> Self {
        let m = k.len();
        Self {
            n,
            k,
            bs_power: vec![T::one(); m],
            relay_power: vec![T::one(); m],
            sigma_r: sigma,
            sigma_bs: sigma,
            sigma_user: vec![sigma; m],
            rate: T::one(),
        }
    }

    pub fn users(&self) -> usize {
        self.k.len()
    }

    /// Column offset of user `m`'s block inside `H` (and row offset in `H⁻¹G`).
    pub fn offset(&self, m: usize) -> usize {
        self.k[..m].iter().sum()
    }

    /// Copy with every noise standard deviation set to `sigma`.
    pub fn with_sigma(&self, sigma: T) -> Self {
        let mut out = self.clone();
        out.sigma_r = sigma;
        out.sigma_bs = sigma;
        out.sigma_user = vec![sigma; self.users()];
        out
    }

    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        self.with_sigma(T::lit(snr_to_sigma(snr_db)))
    }

    /// Outage threshold `2·K_m·R` in bits for user `m`.
    pub fn outage_threshold(&self, m: usize) -> T {
        T::lit(2.0) * T::from_count(self.k[m]) * self.rate
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.users();
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 || m == 0 {
            return bad("need at least one antenna and one user".into());
        }
        if self.k.contains(&0) {
            return bad("every user needs at least one antenna".into());
        }
        let total: usize = self.k.iter().sum();
        if total != self.n {
            return bad(format!("sum of user antennas {total} must equal N = {}", self.n));
        }
        for (name, len) in [
            ("bs_power", self.bs_power.len()),
            ("relay_power", self.relay_power.len()),
            ("sigma_user", self.sigma_user.len()),
        ] {
            if len != m {
                return bad(format!("{name} has {len} entries for {m} users"));
            }
        }
        let positive = |x: &T| *x > T::zero() && x.is_finite();
        if !self.bs_power.iter().all(positive) || !self.relay_power.iter().all(positive) {
            return bad("powers must be strictly positive".into());
        }
        if !positive(&self.sigma_r) || !positive(&self.sigma_bs) || !self.sigma_user.iter().all(positive) {
            return bad("noise levels must be strictly positive".into());
        }
        if !positive(&self.rate) {
            return bad("rate must be strictly positive".into());
        }
        Ok(())
    }
}

/// On-disk configuration; missing fields take the default layout's values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    /// User count; must agree with `k` when both are given.
    pub m: Option<usize>,
    pub k: Option<Vec<usize>>,
    pub bs_power: Option<Vec<f64>>,
    pub relay_power: Option<Vec<f64>>,
    pub rate: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Resolves into a validated configuration with unit noise.
    pub fn resolve(&self) -> Result<SystemConfig<f64>> {
        let k = match (&self.k, self.m, self.n) {
            (Some(k), _, _) => k.clone(),
            // equal split when only N and M are given
            (None, Some(m), Some(n)) if m > 0 && n % m == 0 => vec![n / m; m],
            (None, Some(m), None) => vec![2; m],
            (None, None, Some(n)) if n % 2 == 0 => vec![2; n / 2],
            (None, None, None) => vec![2, 2],
            _ => return Err(Error::InvalidConfig("cannot infer per-user antennas".into())),
        };
        if let Some(m) = self.m {
            if m != k.len() {
                return Err(Error::InvalidConfig(format!("m = {m} but k lists {} users", k.len())));
            }
        }
        let n = self.n.unwrap_or_else(|| k.iter().sum());
        let mut cfg = SystemConfig::uniform(n, k, 1.0);
        let users = cfg.users();
        if let Some(p) = &self.bs_power {
            cfg.bs_power = p.clone();
        }
        if let Some(p) = &self.relay_power {
            cfg.relay_power = p.clone();
        }
        if let Some(r) = self.rate {
            cfg.rate = r;
        }
        cfg.sigma_user = vec![1.0; users];
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Noise standard deviation for a given SNR, with `SNR = 1/σ²`.
pub fn snr_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Identifies one reproducible channel draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
    pub trial_index: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64, trial_index: u64) -> Self {
        Self { master_seed, trial_index }
    }

    /// Independent ChaCha stream per trial: key from the master seed, stream
    /// id from the trial index.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.trial_index);
        rng
    }
}

/// One realisation of the BS→relay channel `G` and the user→relay blocks `H_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet<T: Real> {
    pub g: CMatrix<T>,
    pub h_blocks: Vec<CMatrix<T>>,
    pub h: CMatrix<T>,
    /// Draws rejected by the conditioning guard before this one.
    pub resamples: u32,
}

impl<T: Real> ChannelSet<T> {
    /// Assembles a channel set from explicit matrices.
    pub fn from_blocks(g: CMatrix<T>, h_blocks: Vec<CMatrix<T>>) -> Result<Self> {
        let h = hstack(&h_blocks)?;
        if g.nrows() != g.ncols() || h.nrows() != g.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "G is {}x{}, H is {}x{}",
                g.nrows(),
                g.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { g, h_blocks, h, resamples: 0 })
    }

    pub fn users(&self) -> usize {
        self.h_blocks.len()
    }

    /// `H̃_m`: every user block except `m`, concatenated in order.
    pub fn h_without(&self, m: usize) -> Result<CMatrix<T>> {
        let others: Vec<CMatrix<T>> = self
            .h_blocks
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != m)
            .map(|(_, b)| b.clone())
            .collect();
        if others.is_empty() {
            return Ok(CMatrix::zeros(self.h.nrows(), 0));
        }
        hstack(&others)
    }
}

fn cn_entry<T: Real>(rng: &mut impl Rng) -> C<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C::new(T::lit(re * std::f64::consts::FRAC_1_SQRT_2), T::lit(im * std::f64::consts::FRAC_1_SQRT_2))
}

fn cn_matrix<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix<T> {
    let mut m = CMatrix::zeros(rows, cols);
    // fill column-major so the stream layout matches vec(M)
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = cn_entry(rng);
        }
    }
    m
}

/// Draws i.i.d. CN(0, 1) channels for one trial.
pub fn draw_channels<T: Real>(config: &SystemConfig<T>, spec: RngSpec) -> Result<ChannelSet<T>> {
    config.validate()?;
    let mut rng = spec.rng();
    let limit = T::lit(MAX_CHANNEL_CONDITION);
    let mut resamples = 0;
    loop {
        let g = cn_matrix::<T>(&mut rng, config.n, config.n);
        let blocks: Vec<CMatrix<T>> = config.k.iter().map(|&k| cn_matrix(&mut rng, config.n, k)).collect();
        let mut set = ChannelSet::from_blocks(g, blocks)?;
        if condition_number(&set.g) <= limit && condition_number(&set.h) <= limit {
            set.resamples = resamples;
            return Ok(set);
        }
        resamples += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_sigma(0.0), 1.0);
        assert!((snr_to_sigma(20.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma(10.0) - 0.316_227_766_016_837_94).abs() < 1e-12);
    }

    #[test]
    fn default_config_shapes() {
        let cfg = SystemConfig::<f64>::default_layout();
        cfg.validate().unwrap();
        let ch = draw_channels(&cfg, RngSpec::new(42, 0)).unwrap();
        assert_eq!(ch.g.shape(), (4, 4));
        assert_eq!(ch.h.shape(), (4, 4));
        assert_eq!(ch.h_blocks.len(), 2);
        assert_eq!(cfg.outage_threshold(0), 4.0);
    }

    #[test]
    fn draws_are_deterministic() {
        let cfg = SystemConfig::<f64>::default_layout();
        let a = draw_channels(&cfg, RngSpec::new(42, 0)).unwrap();
        let b = draw_channels(&cfg, RngSpec::new(42, 0)).unwrap();
        assert_eq!(a, b);
        let c = draw_channels(&cfg, RngSpec::new(42, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unit_variance_entries() {
        let cfg = SystemConfig::<f64>::default_layout();
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in 0..62_500 {
            let ch = draw_channels(&cfg, RngSpec::new(7, t)).unwrap();
            for z in ch.g.iter() {
                sum += z.norm_sqr();
                count += 1;
            }
        }
        assert_eq!(count, 1_000_000);
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean |h|^2 = {mean}");
    }

    #[test]
    fn distinct_trials_are_uncorrelated() {
        let cfg = SystemConfig::<f64>::default_layout();
        let n = 100_000u64;
        let first: Vec<f64> = (0..=n)
            .map(|t| draw_channels(&cfg, RngSpec::new(99, t)).unwrap().g[(0, 0)].re)
            .collect();
        let (x, y) = (&first[..n as usize], &first[1..]);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(x), mean(y));
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let rho = cov / (vx * vy).sqrt();
        assert!(rho.abs() < 0.01, "rho = {rho}");
    }

    #[test]
    fn h_without_reassembles() {
        let cfg = SystemConfig::<f64>::uniform(6, vec![2, 1, 3], 1.0);
        let ch = draw_channels(&cfg, RngSpec::new(3, 0)).unwrap();
        let ht = ch.h_without(1).unwrap();
        assert_eq!(ht.ncols(), 5);
        assert_eq!(ht.columns(0, 2).into_owned(), ch.h_blocks[0]);
        assert_eq!(ht.columns(2, 3).into_owned(), ch.h_blocks[2]);
        let single = SystemConfig::<f64>::uniform(2, vec![2], 1.0);
        let ch = draw_channels(&single, RngSpec::new(3, 0)).unwrap();
        assert_eq!(ch.h_without(0).unwrap().ncols(), 0);
    }

    #[test]
    fn validation_errors() {
        let mut cfg = SystemConfig::<f64>::default_layout();
        cfg.k = vec![2, 1];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = SystemConfig::<f64>::default_layout();
        cfg.rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::<f64>::default_layout();
        cfg.bs_power = vec![1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_file_defaults() {
        let file: ConfigFile = serde_json::from_str("{}").unwrap();
        assert_eq!(file.resolve().unwrap(), SystemConfig::default_layout());
        let file: ConfigFile = serde_json::from_str(r#"{"n": 6, "m": 3, "rate": 2.0}"#).unwrap();
        let cfg = file.resolve().unwrap();
        assert_eq!(cfg.k, vec![2, 2, 2]);
        assert_eq!(cfg.rate, 2.0);
        let file: ConfigFile = serde_json::from_str(r#"{"n": 4, "k": [3, 3]}"#).unwrap();
        assert!(file.resolve().is_err());
        assert!(serde_json::from_str::<ConfigFile>(r#"{"bogus": 1}"#).is_err());
    }
}
