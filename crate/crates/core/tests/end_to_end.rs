use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tlmp_core::bigamp::VarianceSharing;
use tlmp_core::channel::{sample_gm_channel, synthesize_observation, GmParams, OneRingScene, VirtualBasis};
use tlmp_core::engine::{decode, EngineConfig, InitMode};
use tlmp_core::sparc::{embed_users, per_user_error, split_message, Codebook, MessageBits, SparcParams};
use tlmp_core::{Codebook64, EngineConfig64, Real};

struct Setup<T: Real> {
    cb: Codebook<T>,
    y: Array2<T>,
    h: Array2<T>,
    sent: Vec<MessageBits>,
}

fn setup<T: Real>(seed: u64, n: usize, k: usize, j: usize, l: usize, h: Array2<T>, sigma2: T) -> Setup<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let params = SparcParams::new(n, j, l).unwrap();
    let cb = Codebook::<T>::build(seed, params);
    let sent: Vec<MessageBits> = (0..k).map(|_| MessageBits::random(j * l, &mut rng)).collect();
    let idx: Vec<_> = sent.iter().map(|m| split_message(m, j, l).unwrap()).collect();
    let x = embed_users::<T>(&idx, &params).unwrap();
    let y = synthesize_observation(&cb, &x, &h, sigma2, &mut rng).unwrap().y;
    Setup { cb, y, h, sent }
}

fn gm_channel<T: Real>(seed: u64, k: usize, m: usize) -> Array2<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gm = GmParams::new(vec![T::lit(0.2), T::lit(0.8)], vec![T::lit(0.2), T::lit(20.0)]).unwrap();
    sample_gm_channel(&gm, k, m, &mut rng)
}

fn genie_cfg<T: Real>(sigma2: f64) -> EngineConfig<T> {
    EngineConfig {
        sigma2: T::lit(sigma2),
        init_mode: InitMode::NoisyOracle,
        init_snr_db: T::lit(40.0),
        ..EngineConfig::default()
    }
}

#[test]
fn genie_decode_f64() {
    for seed in 0..5 {
        let s = setup::<f64>(seed, 256, 4, 4, 4, gm_channel(100 + seed, 4, 16), 1e-6);
        let cfg: EngineConfig64 = genie_cfg(1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (decoded, diag) = decode(&s.y, &s.cb, 4, &cfg, &mut rng, Some(&s.h)).unwrap();
        assert_eq!(decoded.len(), 4);
        assert_eq!(per_user_error(&s.sent, &decoded), 0.0, "seed {seed}");
        assert!(diag.converged && !diag.diverged);
        assert!(diag.channel_nmse.unwrap() < 1e-3);
    }
}

#[test]
fn genie_decode_f32() {
    for seed in 0..3 {
        let s = setup::<f32>(seed, 256, 4, 4, 4, gm_channel(100 + seed, 4, 16), 1e-4);
        let cfg: EngineConfig<f32> = genie_cfg(1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (decoded, diag) = decode(&s.y, &s.cb, 4, &cfg, &mut rng, Some(&s.h)).unwrap();
        assert_eq!(per_user_error(&s.sent, &decoded), 0.0, "seed {seed}");
        assert!(!diag.diverged);
    }
}

#[test]
fn pooled_variances_still_run() {
    let s = setup::<f64>(7, 256, 4, 4, 4, gm_channel(7, 4, 16), 1e-4);
    let cfg = EngineConfig {
        sharing: VarianceSharing::Pooled,
        ..genie_cfg::<f64>(1e-4)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (decoded, diag) = decode(&s.y, &s.cb, 4, &cfg, &mut rng, Some(&s.h)).unwrap();
    assert_eq!(decoded.len(), 4);
    assert!(diag.iterations_used >= 1);
    assert!(diag.cost_trace.iter().all(|c| c.is_finite()));
}

#[test]
fn one_ring_channel_decodes() {
    let scene = OneRingScene::new(8, &[-0.6, -0.1, 0.3, 0.8], 15f64.to_radians(), VirtualBasis::Eigen).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0.0;
    for seed in 0..4 {
        let h: Array2<f64> = scene.sample(&mut rng);
        assert_eq!(h.dim(), (4, 16));
        let s = setup(seed, 256, 4, 4, 4, h, 1e-4);
        let cfg: EngineConfig64 = genie_cfg(1e-4);
        let mut drng = ChaCha8Rng::seed_from_u64(seed);
        let (decoded, _) = decode(&s.y, &s.cb, 4, &cfg, &mut drng, Some(&s.h)).unwrap();
        failures += per_user_error(&s.sent, &decoded);
    }
    assert!(failures / 4.0 <= 0.25, "mean Pe {}", failures / 4.0);
}

#[test]
fn random_init_needs_no_truth() {
    let s = setup::<f64>(9, 192, 3, 3, 4, gm_channel(9, 3, 16), 1e-2);
    let cfg = EngineConfig64 {
        sigma2: 1e-2,
        t_max: 30,
        ..EngineConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (decoded, diag) = decode(&s.y, &s.cb, 3, &cfg, &mut rng, None).unwrap();
    assert_eq!(decoded.len(), 3);
    assert!(diag.channel_nmse.is_none());
    let missing = EngineConfig64 {
        init_mode: InitMode::NoisyOracle,
        ..cfg
    };
    assert!(decode(&s.y, &s.cb, 3, &missing, &mut rng, None).is_err());
}

#[test]
fn codebook_alias_matches_generic() {
    let a = Codebook64::build(5, SparcParams::new(32, 2, 3).unwrap());
    let b = Codebook::<f64>::build(5, SparcParams::new(32, 2, 3).unwrap());
    assert_eq!(a.matrix(), b.matrix());
}
