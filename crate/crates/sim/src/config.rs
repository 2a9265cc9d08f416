//! Simulation configuration: a flat `key = value` text format, CLI
//! overrides and validation.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use tlmp_core::bigamp::{PlantInputs, VarianceSharing};
use tlmp_core::channel::{GmParams, VirtualBasis};
use tlmp_core::engine::{EngineConfig, InitMode};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    GmIid,
    OneRing,
}

/// How the users' block indices relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionMode {
    /// Independent uniform messages.
    Natural,
    /// Two users share one block index.
    Forced,
    /// No two users share an index in any block.
    Forbidden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    /// Physical antennas. One-ring channels occupy `2m` real dimensions.
    pub m: usize,
    pub k: usize,
    pub b: usize,
    pub l: usize,
    pub snr_db: f64,
    pub channel: ChannelKind,
    pub gm_weights: Vec<f64>,
    pub gm_precisions: Vec<f64>,
    pub azimuth_spread_deg: f64,
    pub azimuth_seed: u64,
    pub virtual_basis: VirtualBasis,
    pub trials: usize,
    pub seed: u64,
    pub collision: CollisionMode,
    /// Decoder settings; `sigma2` is overwritten from `snr_db` at run time.
    pub engine: EngineConfig<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 768,
            m: 64,
            k: 16,
            b: 48,
            l: 6,
            snr_db: 20.0,
            channel: ChannelKind::GmIid,
            gm_weights: vec![0.2, 0.8],
            gm_precisions: vec![0.2, 20.0],
            azimuth_spread_deg: 10.0,
            azimuth_seed: 0,
            virtual_basis: VirtualBasis::Eigen,
            trials: 10,
            seed: 1,
            collision: CollisionMode::Natural,
            engine: EngineConfig {
                init_mode: InitMode::NoisyOracle,
                init_snr_db: 0.0,
                ..EngineConfig::default()
            },
        }
    }
}

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| SimError::Config(format!("bad value {value:?} for key {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(SimError::Config(format!("bad boolean {other:?} for key {key}"))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl SimConfig {
    /// Parses the flat text format: one `key = value` per line, `#` starts a
    /// comment. Keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets one key. Used by the file parser and by `--set` overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.engine;
        match key {
            "n" => self.n = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "b" => self.b = parse_num(key, value)?,
            "l" => self.l = parse_num(key, value)?,
            "snr_db" => self.snr_db = parse_num(key, value)?,
            "channel" => {
                self.channel = match value {
                    "gm_iid" => ChannelKind::GmIid,
                    "one_ring" => ChannelKind::OneRing,
                    _ => return Err(SimError::Config(format!("unknown channel {value:?}"))),
                }
            }
            "gm_weights" => self.gm_weights = parse_list(key, value)?,
            "gm_precisions" => self.gm_precisions = parse_list(key, value)?,
            "azimuth_spread_deg" => self.azimuth_spread_deg = parse_num(key, value)?,
            "azimuth_seed" => self.azimuth_seed = parse_num(key, value)?,
            "virtual_basis" => {
                self.virtual_basis = match value {
                    "eigen" => VirtualBasis::Eigen,
                    "dft" => VirtualBasis::Dft,
                    _ => return Err(SimError::Config(format!("unknown virtual basis {value:?}"))),
                }
            }
            "trials" => self.trials = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "collision" => {
                self.collision = match value {
                    "natural" => CollisionMode::Natural,
                    "forced" => CollisionMode::Forced,
                    "forbidden" => CollisionMode::Forbidden,
                    _ => return Err(SimError::Config(format!("unknown collision mode {value:?}"))),
                }
            }
            "theta1" => e.theta1 = parse_num(key, value)?,
            "theta2" => e.theta2 = parse_num(key, value)?,
            "t_max" => e.t_max = parse_num(key, value)?,
            "eps" => e.eps = parse_num(key, value)?,
            "channel_eps" => e.channel_eps = parse_num(key, value)?,
            "adaptive_damping" => e.adaptive_damping = parse_bool(key, value)?,
            "init_mode" => {
                e.init_mode = match value {
                    "random" => InitMode::Random,
                    "noisy_oracle" => InitMode::NoisyOracle,
                    _ => return Err(SimError::Config(format!("unknown init mode {value:?}"))),
                }
            }
            "init_snr_db" => e.init_snr_db = parse_num(key, value)?,
            "channel_warmup" => e.channel_warmup = parse_num(key, value)?,
            "plant_inputs" => {
                e.plant_inputs = match value {
                    "damped" => PlantInputs::Damped,
                    "posterior" => PlantInputs::Posterior,
                    _ => return Err(SimError::Config(format!("unknown plant inputs {value:?}"))),
                }
            }
            "variance_sharing" => {
                e.sharing = match value {
                    "per_user" => VarianceSharing::PerUser,
                    "pooled" => VarianceSharing::Pooled,
                    _ => return Err(SimError::Config(format!("unknown variance sharing {value:?}"))),
                }
            }
            "dp_alpha" => e.dp_hyper.alpha = parse_num(key, value)?,
            "dp_a" => e.dp_hyper.a = parse_num(key, value)?,
            "dp_b" => e.dp_hyper.b = parse_num(key, value)?,
            "dp_g_init" => e.dp_hyper.g_init = parse_num(key, value)?,
            "prune_threshold" => e.prune_threshold = parse_num(key, value)?,
            "merge_after" => e.merges.after = parse_num(key, value)?,
            "merge_every" => e.merges.every = parse_num(key, value)?,
            _ => return Err(SimError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serialises every key in the format [`SimConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let e = &self.engine;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("n", self.n.to_string());
        put("m", self.m.to_string());
        put("k", self.k.to_string());
        put("b", self.b.to_string());
        put("l", self.l.to_string());
        put("snr_db", self.snr_db.to_string());
        put(
            "channel",
            match self.channel {
                ChannelKind::GmIid => "gm_iid",
                ChannelKind::OneRing => "one_ring",
            }
            .into(),
        );
        put("gm_weights", join(&self.gm_weights));
        put("gm_precisions", join(&self.gm_precisions));
        put("azimuth_spread_deg", self.azimuth_spread_deg.to_string());
        put("azimuth_seed", self.azimuth_seed.to_string());
        put(
            "virtual_basis",
            match self.virtual_basis {
                VirtualBasis::Eigen => "eigen",
                VirtualBasis::Dft => "dft",
            }
            .into(),
        );
        put("trials", self.trials.to_string());
        put("seed", self.seed.to_string());
        put(
            "collision",
            match self.collision {
                CollisionMode::Natural => "natural",
                CollisionMode::Forced => "forced",
                CollisionMode::Forbidden => "forbidden",
            }
            .into(),
        );
        put("theta1", e.theta1.to_string());
        put("theta2", e.theta2.to_string());
        put("t_max", e.t_max.to_string());
        put("eps", e.eps.to_string());
        put("channel_eps", e.channel_eps.to_string());
        put("adaptive_damping", e.adaptive_damping.to_string());
        put(
            "init_mode",
            match e.init_mode {
                InitMode::Random => "random",
                InitMode::NoisyOracle => "noisy_oracle",
            }
            .into(),
        );
        put("init_snr_db", e.init_snr_db.to_string());
        put("channel_warmup", e.channel_warmup.to_string());
        put(
            "plant_inputs",
            match e.plant_inputs {
                PlantInputs::Damped => "damped",
                PlantInputs::Posterior => "posterior",
            }
            .into(),
        );
        put(
            "variance_sharing",
            match e.sharing {
                VarianceSharing::PerUser => "per_user",
                VarianceSharing::Pooled => "pooled",
            }
            .into(),
        );
        put("dp_alpha", e.dp_hyper.alpha.to_string());
        put("dp_a", e.dp_hyper.a.to_string());
        put("dp_b", e.dp_hyper.b.to_string());
        put("dp_g_init", e.dp_hyper.g_init.to_string());
        put("prune_threshold", e.prune_threshold.to_string());
        put("merge_after", e.merges.after.to_string());
        put("merge_every", e.merges.every.to_string());
        s
    }

    pub fn j_blocks(&self) -> usize {
        self.b / self.l.max(1)
    }

    /// σ² = 10^(−snr_db/10) for unit signal power.
    pub fn sigma2(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    /// Real channel dimension seen by the decoder.
    pub fn real_antennas(&self) -> usize {
        match self.channel {
            ChannelKind::GmIid => self.m,
            ChannelKind::OneRing => 2 * self.m,
        }
    }

    pub fn gm_params(&self) -> Result<GmParams<f64>> {
        Ok(GmParams::new(self.gm_weights.clone(), self.gm_precisions.clone())?)
    }

    /// Decoder settings with the noise variance filled in.
    pub fn engine_config(&self) -> EngineConfig<f64> {
        EngineConfig {
            sigma2: self.sigma2(),
            ..self.engine.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return fail(format!("n, m, k must be >= 1 (got {}, {}, {})", self.n, self.m, self.k));
        }
        if self.l == 0 || self.l > 24 {
            return fail(format!("l must lie in 1..=24, got {}", self.l));
        }
        if self.b == 0 || !self.b.is_multiple_of(self.l) {
            return fail(format!("b = {} must be a positive multiple of l = {}", self.b, self.l));
        }
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if !self.snr_db.is_finite() {
            return fail(format!("snr_db must be finite, got {}", self.snr_db));
        }
        match self.channel {
            ChannelKind::GmIid => {
                self.gm_params()?;
            }
            ChannelKind::OneRing => {
                if !(self.azimuth_spread_deg > 0.0 && self.azimuth_spread_deg <= 180.0) {
                    return fail(format!("azimuth spread must lie in (0, 180], got {}", self.azimuth_spread_deg));
                }
            }
        }
        match self.collision {
            CollisionMode::Forced if self.k < 2 => return fail("forced collisions need k >= 2".into()),
            CollisionMode::Forbidden if self.k > 1 << self.l => {
                return fail(format!("cannot keep {} users collision-free with 2^{} indices", self.k, self.l));
            }
            _ => {}
        }
        self.engine_config().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_examples() {
        let cfg = SimConfig::parse(
            "# scaled experiment\n n = 512\nk=8 # users\n\nsnr_db = 15.5\ncollision = forbidden\ngm_weights = 0.5, 0.5\ngm_precisions = 1,100\nadaptive_damping = true\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 512);
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.snr_db, 15.5);
        assert_eq!(cfg.collision, CollisionMode::Forbidden);
        assert_eq!(cfg.gm_precisions, vec![1.0, 100.0]);
        assert!(cfg.engine.adaptive_damping);
        assert_eq!(cfg.m, SimConfig::default().m);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(SimConfig::parse("n 5"), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::parse("bogus = 1"), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::parse("n = -3"), Err(SimError::Config(_))));
        assert!(matches!(SimConfig::parse("channel = rayleigh"), Err(SimError::Config(_))));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = SimConfig::default();
        cfg.set("snr_db", "0.1").unwrap();
        cfg.set("channel", "one_ring").unwrap();
        cfg.set("init_mode", "random").unwrap();
        cfg.set("variance_sharing", "pooled").unwrap();
        cfg.set("dp_alpha", "0.03").unwrap();
        assert_eq!(SimConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let bad = |k: &str, v: &str| {
            let mut c = SimConfig::default();
            c.set(k, v).unwrap();
            c.validate().is_err()
        };
        assert!(bad("b", "50"));
        assert!(bad("trials", "0"));
        assert!(bad("snr_db", "inf"));
        assert!(bad("theta1", "0"));
        assert!(bad("gm_weights", "0.3,0.3"));
        let mut c = SimConfig::default();
        c.set("l", "3").unwrap();
        c.set("b", "48").unwrap();
        c.set("collision", "forbidden").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn snr_convention() {
        let mut c = SimConfig {
            snr_db: 20.0,
            ..SimConfig::default()
        };
        assert!((c.sigma2() - 0.01).abs() < 1e-15);
        assert_eq!(c.engine_config().sigma2, c.sigma2());
        c.channel = ChannelKind::OneRing;
        assert_eq!(c.real_antennas(), 2 * c.m);
    }
}
