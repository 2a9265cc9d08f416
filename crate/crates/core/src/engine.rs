//! Full TLMP decode: initialization, the per-iteration schedule
//! (equalizer → decoder → channel prior), damping control, the KL cost and
//! termination.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bigamp::{column_energy, row_energy, EqualizerState, PlantInputs, VarianceSharing};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparc::{assemble_message, hard_decision_columns, Codebook, MessageBits};
use crate::vegamp::DecoderState;
use crate::vmp::{merge_components, second_moment_rows, DpHyper, GmPosterior, MergeSchedule};

/// How the channel estimate is seeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    /// i.i.d. N(0, 1) entries.
    Random,
    /// Truth plus white Gaussian noise at the configured SNR.
    NoisyOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig<T: Real> {
    pub theta1: T,
    pub theta2: T,
    pub t_max: usize,
    pub eps: T,
    /// Relative change of `Ĥ` that must also be reached before stopping.
    pub channel_eps: T,
    pub adaptive_damping: bool,
    pub init_mode: InitMode,
    pub init_snr_db: T,
    pub dp_hyper: DpHyper<T>,
    /// Components below `prune_threshold·K·M` responsibility mass are
    /// removed.
    pub prune_threshold: T,
    pub merges: MergeSchedule,
    pub plant_inputs: PlantInputs,
    pub sharing: VarianceSharing,
    /// Iterations during which the channel estimate is held at its initial
    /// value while the decoder locks on.
    pub channel_warmup: usize,
    pub sigma2: T,
}

impl<T: Real> Default for EngineConfig<T> {
    fn default() -> Self {
        Self {
            theta1: T::lit(0.5),
            theta2: T::lit(0.5),
            t_max: 200,
            eps: T::lit(1e-4),
            channel_eps: T::lit(1e-3),
            adaptive_damping: false,
            init_mode: InitMode::Random,
            init_snr_db: T::zero(),
            dp_hyper: DpHyper::default(),
            prune_threshold: T::lit(1e-3),
            merges: MergeSchedule::default(),
            plant_inputs: PlantInputs::default(),
            sharing: VarianceSharing::default(),
            channel_warmup: 10,
            sigma2: T::lit(1e-2),
        }
    }
}

impl<T: Real> EngineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v > T::zero() && v <= T::one();
        if !unit(self.theta1) || !unit(self.theta2) {
            return Err(Error::Config(format!(
                "damping factors must lie in (0, 1], got {} and {}",
                self.theta1, self.theta2
            )));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if !(self.eps >= T::zero()) || !(self.channel_eps >= T::zero()) {
            return Err(Error::Config(format!(
                "stop thresholds must be >= 0, got {} and {}",
                self.eps, self.channel_eps
            )));
        }
        if !(self.sigma2 > T::zero()) {
            return Err(Error::Config(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(self.prune_threshold >= T::zero()) {
            return Err(Error::Config("prune threshold must be >= 0".into()));
        }
        if !self.init_snr_db.is_finite() {
            return Err(Error::Config("init_snr_db must be finite".into()));
        }
        self.dp_hyper.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeDiagnostics {
    /// KL cost after each accepted iteration.
    pub cost_trace: Vec<f64>,
    pub iterations_used: usize,
    /// Σ‖x̂(t)−x̂(t−1)‖² / Σ‖x̂(t−1)‖² after each accepted iteration.
    pub x_change_trace: Vec<f64>,
    pub final_g: usize,
    /// ‖Ĥ − H‖²/‖H‖² after greedy row matching, when the truth is known.
    pub channel_nmse: Option<f64>,
    pub rollbacks: usize,
    pub converged: bool,
    /// The last iteration produced non-finite values and was discarded.
    pub diverged: bool,
}

/// Everything a decode carries between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TlmpState<T: Real> {
    pub eq: EqualizerState<T>,
    pub dec: DecoderState<T>,
    pub gm: GmPosterior<T>,
    /// Completed iterations.
    pub t: usize,
}

fn random_one_hot<T: Real, R: Rng + ?Sized>(cb: &Codebook<T>, k: usize, rng: &mut R) -> Array2<T> {
    let p = cb.params();
    let section = p.section();
    let mut x = Array2::zeros((p.width(), k));
    for user in 0..k {
        for j in 0..p.j_blocks {
            x[[j * section + rng.random_range(0..section), user]] = T::one();
        }
    }
    x
}

/// Builds the iteration-0 state.
pub fn initialize<T: Real, R: Rng + ?Sized>(
    cfg: &EngineConfig<T>,
    cb: &Codebook<T>,
    y: &Array2<T>,
    k: usize,
    h_truth: Option<&Array2<T>>,
    rng: &mut R,
) -> Result<TlmpState<T>> {
    cfg.validate()?;
    let p = cb.params();
    if y.nrows() != p.n {
        return Err(Error::Dimension {
            context: "initialize (rows of Y)",
            expected: p.n,
            actual: y.nrows(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidParam("at least one user is required".into()));
    }
    let m = y.ncols();
    let n = T::count(p.n);
    let ten = T::lit(10.0);
    let x0 = random_one_hot(cb, k, rng);
    let r0 = cb.encode_matrix(&x0)?;
    let (h0, v_h0) = match cfg.init_mode {
        InitMode::Random => (
            Array2::from_shape_simple_fn((k, m), || T::lit(StandardNormal.sample(rng))),
            ten,
        ),
        InitMode::NoisyOracle => {
            let h = h_truth.ok_or_else(|| Error::Config("noisy-oracle init needs the true channel".into()))?;
            if h.dim() != (k, m) {
                return Err(Error::Dimension {
                    context: "initialize (true channel)",
                    expected: k * m,
                    actual: h.len(),
                });
            }
            let power = h.iter().map(|&v| v * v).sum::<T>() / T::count(k * m);
            let err_var = power * ten.powf(-cfg.init_snr_db / ten);
            let std = err_var.sqrt();
            (h.mapv(|v| v + std * T::lit(StandardNormal.sample(rng))), err_var)
        }
    };
    let eq = EqualizerState::new(r0, h0, ten / n, v_h0)?.with_sharing(cfg.sharing);
    let inv_s = T::one() / T::count(p.section());
    let mut dec = DecoderState::new(cb, x0, ten * inv_s * (T::one() - inv_s), T::one() / n)?.with_sharing(cfg.sharing);
    dec.q_hat.fill(T::zero());
    let gm = GmPosterior::initial(k, m, &cfg.dp_hyper, ten, rng);
    Ok(TlmpState { eq, dec, gm, t: 0 })
}

/// One full iteration with the given damping factors.
pub fn iterate_once<T: Real>(
    state: &mut TlmpState<T>,
    y: &Array2<T>,
    cb: &Codebook<T>,
    cfg: &EngineConfig<T>,
    theta1: T,
    theta2: T,
) -> Result<()> {
    let TlmpState { eq, dec, gm, t } = state;
    eq.plant_update(y, cfg.sigma2, theta1, cfg.plant_inputs)?;
    eq.r_extrinsic()?;
    let channel_live = *t >= cfg.channel_warmup;
    if channel_live {
        eq.h_extrinsic()?;
    }
    eq.update_r(&dec.q_hat, &dec.v_q, theta1)?;
    if channel_live {
        eq.update_h(&gm.gamma_bar, theta1)?;
    }

    dec.pseudo_prior(cb, theta2)?;
    eq.refresh_r(&dec.q_hat, &dec.v_q)?;
    dec.residual_update(&eq.u_hat, &eq.v_u, theta2)?;
    dec.denoiser_input(cb)?;
    dec.denoise(cb.params().l_bits, theta2)?;

    let h2 = second_moment_rows(&eq.h_hat, &eq.v_h)?;
    gm.step_moments(&h2, &cfg.dp_hyper, cfg.prune_threshold)?;
    if cfg.merges.due(*t) {
        merge_components(gm, &h2, &cfg.dp_hyper)?;
    }
    *t += 1;
    Ok(())
}

/// KL divergence of `N(m, v)` from `N(0, prior_var)`.
pub fn gaussian_kl(m: f64, v: f64, prior_var: f64) -> f64 {
    0.5 * ((prior_var / v).ln() + (v + m * m) / prior_var - 1.0)
}

/// KL of the section posteriors from the uniform one-hot prior,
/// Σ x̂ ln(x̂·2^L) with 0 ln 0 = 0.
pub fn categorical_kl<T: Real>(x_hat: &Array2<T>, l_bits: usize) -> f64 {
    let s = (1usize << l_bits) as f64;
    x_hat
        .iter()
        .map(|&x| {
            let x = x.as_f64();
            if x > 0.0 {
                x * (x * s).ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// KL cost up to an additive constant: channel KL, section KL, the VMP
/// factors' KLs, minus the expected log-likelihood under a Gaussian
/// surrogate for `Z = R H` built from the current estimates.
pub fn kl_cost<T: Real>(state: &TlmpState<T>, y: &Array2<T>, cb: &Codebook<T>, cfg: &EngineConfig<T>) -> f64 {
    let eq = &state.eq;
    let (n, k, m) = eq.dims();
    let mut channel = 0.0;
    for ((h_row, g_row), &v_h) in eq.h_hat.rows().into_iter().zip(state.gm.gamma_bar.rows()).zip(&eq.v_h) {
        let v_h = v_h.as_f64().max(1e-300);
        channel += h_row
            .iter()
            .zip(&g_row)
            .map(|(&h, &g)| gaussian_kl(h.as_f64(), v_h, 1.0 / g.as_f64()))
            .sum::<f64>();
    }
    let sections = categorical_kl(&state.dec.x_hat, cb.params().l_bits);
    let vmp = state.gm.kl_to_prior(&cfg.dp_hyper).as_f64();

    let (hn, rn) = (row_energy(&eq.h_hat), column_energy(&eq.r_hat));
    let v_z: f64 = (0..k)
        .map(|i| {
            let (v_r, v_h) = (eq.v_r[i].as_f64(), eq.v_h[i].as_f64());
            v_r * hn[i].as_f64() / m as f64 + v_h * rn[i].as_f64() / n as f64 + v_r * v_h
        })
        .sum();
    let z = eq.r_hat.dot(&eq.h_hat);
    let sigma2 = cfg.sigma2.as_f64();
    let half_log = 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
    let loglik: f64 = y
        .iter()
        .zip(&z)
        .map(|(&yv, &zv)| -half_log - ((yv.as_f64() - zv.as_f64()).powi(2) + v_z) / (2.0 * sigma2))
        .sum();
    channel + sections + vmp - loglik
}

/// Result of one damping decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingStep<T> {
    /// Keep the new iterate; continue with these factors.
    Accept(T, T),
    /// Restore the previous iterate and retry with these factors.
    Rollback(T, T),
    /// The cost still rose at the floor damping; restore and stop.
    Exhausted,
}

pub const DAMPING_FLOOR: f64 = 0.05;
const DAMPING_SHRINK: f64 = 0.8;
const DAMPING_GROW: f64 = 1.05;

/// Cost-monitoring damping rule. Looks at the newest two entries of
/// `costs`; the caps are the configured factors.
pub fn adapt_damping<T: Real>(costs: &[f64], theta1: T, theta2: T, cfg: &EngineConfig<T>) -> DampingStep<T> {
    if !cfg.adaptive_damping || costs.len() < 2 {
        return DampingStep::Accept(theta1, theta2);
    }
    let (prev, new) = (costs[costs.len() - 2], costs[costs.len() - 1]);
    let floor = T::lit(DAMPING_FLOOR);
    if new > prev {
        if theta1 <= floor && theta2 <= floor {
            return DampingStep::Exhausted;
        }
        let shrink = |t: T| (t * T::lit(DAMPING_SHRINK)).max(floor);
        DampingStep::Rollback(shrink(theta1), shrink(theta2))
    } else {
        let grow = |t: T, cap: T| (t * T::lit(DAMPING_GROW)).min(cap);
        DampingStep::Accept(grow(theta1, cfg.theta1), grow(theta2, cfg.theta2))
    }
}

/// Relative squared change Σ‖x_now − x_prev‖² / Σ‖x_prev‖².
pub fn relative_change<T: Real>(x_now: &Array2<T>, x_prev: &Array2<T>) -> f64 {
    let num: f64 = x_now.iter().zip(x_prev).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
    let den: f64 = x_prev.iter().map(|&b| b.as_f64().powi(2)).sum();
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Stop once the relative change is at most `eps` or `t ≥ t_max`.
pub fn check_stop<T: Real>(x_now: &Array2<T>, x_prev: &Array2<T>, eps: f64, t: usize, t_max: usize) -> bool {
    t >= t_max || relative_change(x_now, x_prev) <= eps
}

/// `‖Ĥ − H‖²/‖H‖²` after greedily pairing estimated rows with true rows
/// (users come out of the decoder in arbitrary order).
pub fn matched_channel_nmse<T: Real>(h_est: &Array2<T>, h_true: &Array2<T>) -> Result<f64> {
    if h_est.dim() != h_true.dim() {
        return Err(Error::Dimension {
            context: "matched_channel_nmse",
            expected: h_true.len(),
            actual: h_est.len(),
        });
    }
    let k = h_true.nrows();
    let mut cost = Vec::with_capacity(k * k);
    for (i, est) in h_est.axis_iter(Axis(0)).enumerate() {
        for (j, tru) in h_true.axis_iter(Axis(0)).enumerate() {
            let d: f64 = est.iter().zip(tru).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
            cost.push((d, i, j));
        }
    }
    cost.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut used_est, mut used_true) = (vec![false; k], vec![false; k]);
    let mut err = 0.0;
    for (d, i, j) in cost {
        if !used_est[i] && !used_true[j] {
            used_est[i] = true;
            used_true[j] = true;
            err += d;
        }
    }
    let power: f64 = h_true.iter().map(|&v| v.as_f64().powi(2)).sum();
    Ok(err / power.max(f64::MIN_POSITIVE))
}

/// Decoded messages from the current section estimates, one per user.
pub fn decoded_messages<T: Real>(state: &TlmpState<T>, cb: &Codebook<T>) -> Result<Vec<MessageBits>> {
    let l = cb.params().l_bits;
    hard_decision_columns(state.dec.x_hat.view(), l)?
        .iter()
        .map(|idx| assemble_message(idx, l))
        .collect()
}

/// Runs a full decode for `k` users and returns exactly `k` messages.
pub fn decode<T: Real, R: Rng + ?Sized>(
    y: &Array2<T>,
    cb: &Codebook<T>,
    k: usize,
    cfg: &EngineConfig<T>,
    rng: &mut R,
    h_truth: Option<&Array2<T>>,
) -> Result<(Vec<MessageBits>, DecodeDiagnostics)> {
    let mut state = initialize(cfg, cb, y, k, h_truth, rng)?;
    let diag = run(&mut state, y, cb, cfg, h_truth)?;
    Ok((decoded_messages(&state, cb)?, diag))
}

/// Iterates an initialized state to termination.
pub fn run<T: Real>(
    state: &mut TlmpState<T>,
    y: &Array2<T>,
    cb: &Codebook<T>,
    cfg: &EngineConfig<T>,
    h_truth: Option<&Array2<T>>,
) -> Result<DecodeDiagnostics> {
    let mut diag = DecodeDiagnostics::default();
    let (mut theta1, mut theta2) = (cfg.theta1, cfg.theta2);
    let mut last_cost = kl_cost(state, y, cb, cfg);
    let (eps, channel_eps) = (cfg.eps.as_f64(), cfg.channel_eps.as_f64());
    let mut attempts = 0;
    while attempts < cfg.t_max {
        attempts += 1;
        let saved = state.clone();
        let x_prev = state.dec.x_hat.clone();
        let h_prev = state.eq.h_hat.clone();
        let stepped = match iterate_once(state, y, cb, cfg, theta1, theta2) {
            Ok(()) => state_is_finite(state),
            Err(Error::Degenerate(_) | Error::InvalidParam(_)) => false,
            Err(e) => return Err(e),
        };
        let cost = kl_cost(state, y, cb, cfg);
        if !stepped || !cost.is_finite() {
            *state = saved;
            diag.diverged = true;
            break;
        }
        match adapt_damping(&[last_cost, cost], theta1, theta2, cfg) {
            DampingStep::Accept(t1, t2) => {
                theta1 = t1;
                theta2 = t2;
            }
            DampingStep::Rollback(t1, t2) => {
                *state = saved;
                theta1 = t1;
                theta2 = t2;
                diag.rollbacks += 1;
                continue;
            }
            DampingStep::Exhausted => {
                *state = saved;
                diag.rollbacks += 1;
                break;
            }
        }
        last_cost = cost;
        diag.cost_trace.push(cost);
        let change = relative_change(&state.dec.x_hat, &x_prev);
        diag.x_change_trace.push(change);
        diag.iterations_used += 1;
        let h_change = relative_change(&state.eq.h_hat, &h_prev);
        if change <= eps && h_change <= channel_eps && state.t > cfg.channel_warmup {
            diag.converged = true;
            break;
        }
    }
    diag.final_g = state.gm.components();
    if let Some(h) = h_truth {
        diag.channel_nmse = Some(matched_channel_nmse(&state.eq.h_hat, h)?);
    }
    Ok(diag)
}

fn state_is_finite<T: Real>(state: &TlmpState<T>) -> bool {
    let (eq, dec) = (&state.eq, &state.dec);
    let finite = |v: &T| v.is_finite();
    eq.v_s.is_finite()
        && eq.v_p.is_finite()
        && [&eq.v_r, &eq.v_h, &eq.v_u, &eq.v_w, &dec.v_x, &dec.v_q, &dec.v_t, &dec.v_d]
            .iter()
            .all(|v| v.iter().all(finite))
        && eq.h_hat.iter().all(finite)
        && eq.r_hat.iter().all(finite)
        && dec.x_hat.iter().all(finite)
}

/// Spectral efficiency `B·K/(N + N₀)` in bits per channel use.
pub fn spectral_efficiency(payload_bits: usize, users: usize, n: usize, n0: usize) -> f64 {
    (payload_bits * users) as f64 / (n + n0) as f64
}
