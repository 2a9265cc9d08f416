//! A single Monte-Carlo trial: draw messages, channel and noise, decode,
//! score.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use tlmp_core::channel::{sample_gm_channel, synthesize_observation, OneRingScene};
use tlmp_core::engine::decode;
use tlmp_core::sparc::{
    assemble_message, embed_users, per_user_error, split_message, BlockIndices, Codebook, MessageBits, SparcParams,
};

use crate::config::{ChannelKind, CollisionMode, SimConfig};
use crate::error::Result;

/// RNG streams derived from a trial seed. The codebook takes stream 0.
const DECODER_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;

/// User azimuths for one-ring channels are drawn in ±60°.
const AZIMUTH_RANGE_DEG: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub pe: f64,
    pub iterations: usize,
    /// Matched channel NMSE in dB.
    pub nmse_db: f64,
    /// Wall-clock decode time. Not reproducible; excluded from determinism
    /// checks.
    pub runtime_ms: f64,
    pub final_g: usize,
    pub converged: bool,
    pub diverged: bool,
    pub cost_trace: Vec<f64>,
}

/// Seed of trial `index`: the `index`-th output of a SplitMix64 stream
/// started at `global`.
pub fn trial_seed(global: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    SplitMix64::seed_from_u64(global.wrapping_add(index.wrapping_mul(GOLDEN))).next_u64()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-user block indices under the configured collision mode.
pub fn sample_indices<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Vec<BlockIndices>> {
    let (k, j, l) = (cfg.k, cfg.j_blocks(), cfg.l);
    let mut users = match cfg.collision {
        CollisionMode::Forbidden => {
            let mut users = vec![Vec::with_capacity(j); k];
            for _ in 0..j {
                for (u, idx) in users.iter_mut().zip(sample(rng, 1 << l, k)) {
                    u.push(idx);
                }
            }
            users.into_iter().map(BlockIndices).collect()
        }
        _ => (0..k)
            .map(|_| split_message(&MessageBits::random(cfg.b, rng), j, l))
            .collect::<tlmp_core::Result<Vec<_>>>()?,
    };
    if cfg.collision == CollisionMode::Forced {
        let block = rng.random_range(0..j);
        users[1].0[block] = users[0].0[block];
    }
    Ok(users)
}

/// Channel matrix `K × real_antennas`.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Array2<f64>> {
    Ok(match cfg.channel {
        ChannelKind::GmIid => sample_gm_channel(&cfg.gm_params()?, cfg.k, cfg.m, rng),
        ChannelKind::OneRing => one_ring_scene(cfg)?.sample(rng),
    })
}

/// Scene with user azimuths drawn from `azimuth_seed`, shared by all trials.
pub fn one_ring_scene(cfg: &SimConfig) -> Result<OneRingScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.azimuth_seed);
    let range = AZIMUTH_RANGE_DEG.to_radians();
    let azimuths: Vec<f64> = (0..cfg.k).map(|_| rng.random_range(-range..=range)).collect();
    Ok(OneRingScene::new(
        cfg.m,
        &azimuths,
        cfg.azimuth_spread_deg.to_radians(),
        cfg.virtual_basis,
    )?)
}

/// Runs one trial. `seed` drives the codebook, data and decoder RNGs.
pub fn run_trial(cfg: &SimConfig, seed: u64) -> Result<TrialResult> {
    let params = SparcParams::new(cfg.n, cfg.j_blocks(), cfg.l)?;
    let cb = Codebook::<f64>::build(seed, params);
    let mut data = stream_rng(seed, DATA_STREAM);

    let users = sample_indices(cfg, &mut data)?;
    let sent = users
        .iter()
        .map(|u| assemble_message(u, cfg.l))
        .collect::<tlmp_core::Result<Vec<_>>>()?;
    let x = embed_users::<f64>(&users, &params)?;
    let h = sample_channel(cfg, &mut data)?;
    let obs = synthesize_observation(&cb, &x, &h, cfg.sigma2(), &mut data)?;

    let engine = cfg.engine_config();
    let mut dec_rng = stream_rng(seed, DECODER_STREAM);
    let start = Instant::now();
    let (decoded, diag) = decode(&obs.y, &cb, cfg.k, &engine, &mut dec_rng, Some(&h))?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;

    let pe = per_user_error(&sent, &decoded);
    let nmse_db = diag.channel_nmse.map_or(f64::NAN, |v| 10.0 * v.max(1e-300).log10());
    log::debug!(
        "trial seed {seed}: pe {pe:.4} iters {} nmse {nmse_db:.1} dB {runtime_ms:.1} ms",
        diag.iterations_used
    );
    Ok(TrialResult {
        seed,
        pe,
        iterations: diag.iterations_used,
        nmse_db,
        runtime_ms,
        final_g: diag.final_g,
        converged: diag.converged,
        diverged: diag.diverged,
        cost_trace: diag.cost_trace,
    })
}
