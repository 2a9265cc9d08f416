//! Variational updates for the Dirichlet-process Gaussian-mixture channel
//! prior.
//!
//! Each virtual channel coefficient `h_km` carries a responsibility fiber
//! over `G` zero-mean components. Component weights come from a truncated
//! stick-breaking construction with Beta(1, α) sticks and the precisions
//! have Gamma(a, b) priors. Everything here is closed-form conjugate
//! coordinate ascent; responsibilities are normalised in the log domain.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;
use crate::special::{digamma, softmax_in_place};

/// Hyperparameters of the DP-GM prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpHyper<T: Real> {
    /// DP concentration α.
    pub alpha: T,
    /// Gamma prior shape.
    pub a: T,
    /// Gamma prior rate.
    pub b: T,
    /// Initial number of mixture components.
    pub g_init: usize,
}

impl<T: Real> Default for DpHyper<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(1e-2),
            a: T::lit(1e-6),
            b: T::lit(1e-6),
            g_init: 10,
        }
    }
}

impl<T: Real> DpHyper<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero() && self.a > T::zero() && self.b > T::zero()) || self.g_init == 0 {
            return Err(Error::InvalidParam(format!(
                "DP hyperparameters must be positive (alpha={}, a={}, b={}, G={})",
                self.alpha, self.a, self.b, self.g_init
            )));
        }
        Ok(())
    }
}

/// Beta posterior of the stick-breaking fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaStats<T: Real> {
    pub tau: Array1<T>,
    pub tau_tilde: Array1<T>,
    /// ⟨ln β_g⟩
    pub ln_beta: Array1<T>,
    /// ⟨ln(1 − β_g)⟩
    pub ln_one_minus_beta: Array1<T>,
    /// ⟨ln π_g⟩ = ⟨ln β_g⟩ + Σ_{p<g} ⟨ln(1 − β_p)⟩
    pub ln_pi: Array1<T>,
}

/// Gamma posterior of the component precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaStats<T: Real> {
    pub a_tilde: Array1<T>,
    pub b_tilde: Array1<T>,
    /// ⟨γ_g⟩
    pub mean: Array1<T>,
    /// ⟨ln γ_g⟩
    pub ln_mean: Array1<T>,
}

impl<T: Real> GammaStats<T> {
    /// Statistics of the prior Gamma(a, b) replicated over `g` components.
    pub fn prior(g: usize, a: T, b: T) -> Self {
        let a_tilde = Array1::from_elem(g, a);
        let b_tilde = Array1::from_elem(g, b);
        Self::from_params(a_tilde, b_tilde)
    }

    fn from_params(a_tilde: Array1<T>, b_tilde: Array1<T>) -> Self {
        let mean = Zip::from(&a_tilde).and(&b_tilde).map_collect(|&a, &b| a / b);
        let ln_mean = Zip::from(&a_tilde)
            .and(&b_tilde)
            .map_collect(|&a, &b| digamma(a) - b.ln());
        Self {
            a_tilde,
            b_tilde,
            mean,
            ln_mean,
        }
    }
}

/// Variational posterior of the channel prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GmPosterior<T: Real> {
    /// ⟨ω_kmg⟩, shape `K×M×G`.
    pub resp: Array3<T>,
    pub beta: BetaStats<T>,
    pub gamma: GammaStats<T>,
    /// γ̄_km = Σ_g ⟨ω_kmg⟩⟨γ_g⟩
    pub gamma_bar: Array2<T>,
}

/// ⟨|h_km|²⟩ = ĥ²_km + V^h.
pub fn second_moment<T: Real>(h_hat: &Array2<T>, v_h: T) -> Result<Array2<T>> {
    if !(v_h >= T::zero()) {
        return Err(Error::InvalidParam(format!("channel variance must be >= 0, got {v_h}")));
    }
    Ok(h_hat.mapv(|h| h * h + v_h))
}

/// ⟨|h_km|²⟩ = ĥ²_km + V^h_k with one variance per row.
pub fn second_moment_rows<T: Real>(h_hat: &Array2<T>, v_h: &Array1<T>) -> Result<Array2<T>> {
    check_dim("second_moment_rows", h_hat.nrows(), v_h.len())?;
    if let Some(bad) = v_h.iter().find(|&&v| !(v >= T::zero())) {
        return Err(Error::InvalidParam(format!("channel variance must be >= 0, got {bad}")));
    }
    let mut h2 = h_hat.mapv(|h| h * h);
    for (mut row, &v) in h2.axis_iter_mut(Axis(0)).zip(v_h) {
        row += v;
    }
    Ok(h2)
}

/// Responsibility mass Σ_km ⟨ω_kmg⟩ per component.
pub fn component_mass<T: Real>(resp: ArrayView3<'_, T>) -> Array1<T> {
    let g = resp.len_of(Axis(2));
    let mut mass = Array1::zeros(g);
    for fiber in resp.lanes(Axis(2)) {
        mass += &fiber;
    }
    mass
}

/// Stick-breaking Beta posteriors from the current responsibilities.
pub fn update_beta<T: Real>(resp: ArrayView3<'_, T>, alpha: T) -> BetaStats<T> {
    let mass = component_mass(resp);
    let g = mass.len();
    let mut tau = Array1::zeros(g);
    let mut tau_tilde = Array1::zeros(g);
    let mut tail = T::zero();
    for i in (0..g).rev() {
        tau[i] = mass[i] + T::one();
        tau_tilde[i] = tail + alpha;
        tail += mass[i];
    }
    beta_from_params(tau, tau_tilde)
}

fn beta_from_params<T: Real>(tau: Array1<T>, tau_tilde: Array1<T>) -> BetaStats<T> {
    let g = tau.len();
    let mut ln_beta = Array1::zeros(g);
    let mut ln_one_minus_beta = Array1::zeros(g);
    let mut ln_pi = Array1::zeros(g);
    let mut prefix = T::zero();
    for i in 0..g {
        let total = digamma(tau[i] + tau_tilde[i]);
        ln_beta[i] = digamma(tau[i]) - total;
        ln_one_minus_beta[i] = digamma(tau_tilde[i]) - total;
        ln_pi[i] = ln_beta[i] + prefix;
        prefix += ln_one_minus_beta[i];
    }
    BetaStats {
        tau,
        tau_tilde,
        ln_beta,
        ln_one_minus_beta,
        ln_pi,
    }
}

/// Gamma posteriors of the precisions.
pub fn update_gamma<T: Real>(resp: ArrayView3<'_, T>, h_second_moment: &Array2<T>, a: T, b: T) -> Result<GammaStats<T>> {
    let (k, m, g) = resp.dim();
    if h_second_moment.dim() != (k, m) {
        return Err(Error::Dimension {
            context: "update_gamma",
            expected: k * m,
            actual: h_second_moment.len(),
        });
    }
    let half = T::lit(0.5);
    let mut a_tilde = Array1::from_elem(g, a);
    let mut b_tilde = Array1::from_elem(g, b);
    for ((i, j), &h2) in h_second_moment.indexed_iter() {
        for c in 0..g {
            let w = resp[[i, j, c]];
            a_tilde[c] += half * w;
            b_tilde[c] += half * w * h2;
        }
    }
    Ok(GammaStats::from_params(a_tilde, b_tilde))
}

/// Responsibilities ⟨ω_kmg⟩ ∝ ζ_kmg, normalised with log-sum-exp.
pub fn update_omega<T: Real>(gamma: &GammaStats<T>, h_second_moment: &Array2<T>, beta: &BetaStats<T>) -> Array3<T> {
    let (k, m) = h_second_moment.dim();
    let g = gamma.mean.len();
    let half = T::lit(0.5);
    let mut resp = Array3::zeros((k, m, g));
    let mut logits = vec![T::zero(); g];
    for ((i, j), &h2) in h_second_moment.indexed_iter() {
        for (c, l) in logits.iter_mut().enumerate() {
            *l = half * gamma.ln_mean[c] - half * gamma.mean[c] * h2 + beta.ln_pi[c];
        }
        softmax_in_place(&mut logits);
        for (c, &p) in logits.iter().enumerate() {
            resp[[i, j, c]] = p;
        }
    }
    resp
}

/// γ̄_km = Σ_g ⟨ω_kmg⟩⟨γ_g⟩.
pub fn effective_precision<T: Real>(resp: ArrayView3<'_, T>, gamma_mean: &Array1<T>) -> Array2<T> {
    let (k, m, _) = resp.dim();
    let mut out = Array2::zeros((k, m));
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = resp
            .slice(ndarray::s![i, j, ..])
            .iter()
            .zip(gamma_mean)
            .map(|(&w, &g)| w * g)
            .sum();
    }
    out
}

impl<T: Real> GmPosterior<T> {
    /// Starting point for a decode: responsibility fibers drawn uniformly
    /// from the simplex, prior Gamma statistics, and a flat effective
    /// precision `1/initial_prior_var`.
    pub fn initial<R: Rng + ?Sized>(
        k: usize,
        m: usize,
        hyper: &DpHyper<T>,
        initial_prior_var: T,
        rng: &mut R,
    ) -> Self {
        let g = hyper.g_init;
        let mut resp = Array3::zeros((k, m, g));
        let mut fiber = vec![0.0f64; g];
        for mut lane in resp.lanes_mut(Axis(2)) {
            // Flat Dirichlet via normalised exponentials.
            for f in fiber.iter_mut() {
                *f = Exp1.sample(rng);
            }
            let s: f64 = fiber.iter().sum();
            for (dst, f) in lane.iter_mut().zip(&fiber) {
                *dst = T::lit(f / s);
            }
        }
        Self::from_resp(resp, hyper, Array2::from_elem((k, m), T::one() / initial_prior_var))
    }

    /// Builds a posterior around explicit responsibilities with prior Gamma
    /// statistics.
    pub fn from_resp(resp: Array3<T>, hyper: &DpHyper<T>, gamma_bar: Array2<T>) -> Self {
        let beta = update_beta(resp.view(), hyper.alpha);
        let gamma = GammaStats::prior(resp.len_of(Axis(2)), hyper.a, hyper.b);
        Self {
            resp,
            beta,
            gamma,
            gamma_bar,
        }
    }

    pub fn components(&self) -> usize {
        self.resp.len_of(Axis(2))
    }

    /// Responsibility mass per component divided by `K·M`.
    pub fn weights(&self) -> Array1<T> {
        let (k, m, _) = self.resp.dim();
        component_mass(self.resp.view()) / T::count(k * m)
    }

    /// Relabels components in decreasing order of responsibility mass.
    /// The stick-breaking bound is never lower in this order.
    pub fn sort_by_mass(&mut self) {
        let mass = component_mass(self.resp.view());
        let mut order: Vec<usize> = (0..mass.len()).collect();
        order.sort_by(|&a, &b| mass[b].partial_cmp(&mass[a]).unwrap_or(std::cmp::Ordering::Equal));
        if order.iter().enumerate().all(|(i, &c)| i == c) {
            return;
        }
        self.permute(&order);
    }

    /// Applies `order` to the component axis of every per-component array.
    pub fn permute(&mut self, order: &[usize]) {
        let pick = |v: &Array1<T>| v.select(Axis(0), order);
        self.resp = self.resp.select(Axis(2), order);
        self.beta = BetaStats {
            tau: pick(&self.beta.tau),
            tau_tilde: pick(&self.beta.tau_tilde),
            ln_beta: pick(&self.beta.ln_beta),
            ln_one_minus_beta: pick(&self.beta.ln_one_minus_beta),
            ln_pi: pick(&self.beta.ln_pi),
        };
        self.gamma = GammaStats {
            a_tilde: pick(&self.gamma.a_tilde),
            b_tilde: pick(&self.gamma.b_tilde),
            mean: pick(&self.gamma.mean),
            ln_mean: pick(&self.gamma.ln_mean),
        };
    }

    /// One VMP sweep with frozen channel statistics, in the order
    /// sort → β → prune → γ → ω → γ̄. Returns the number of pruned components.
    pub fn step(&mut self, h_hat: &Array2<T>, v_h: T, hyper: &DpHyper<T>, prune_threshold: T) -> Result<usize> {
        let h2 = second_moment(h_hat, v_h)?;
        self.step_moments(&h2, hyper, prune_threshold)
    }

    /// [`GmPosterior::step`] from precomputed second moments `⟨|h_km|²⟩`.
    pub fn step_moments(&mut self, h2: &Array2<T>, hyper: &DpHyper<T>, prune_threshold: T) -> Result<usize> {
        self.sort_by_mass();
        self.beta = update_beta(self.resp.view(), hyper.alpha);
        let removed = prune_components(self, prune_threshold);
        if removed > 0 {
            self.beta = update_beta(self.resp.view(), hyper.alpha);
        }
        self.gamma = update_gamma(self.resp.view(), h2, hyper.a, hyper.b)?;
        self.resp = update_omega(&self.gamma, h2, &self.beta);
        self.gamma_bar = effective_precision(self.resp.view(), &self.gamma.mean);
        Ok(removed)
    }

    /// Recomputes the β and γ statistics from the current responsibilities.
    pub fn refresh(&mut self, h_second_moment: &Array2<T>, hyper: &DpHyper<T>) -> Result<()> {
        self.beta = update_beta(self.resp.view(), hyper.alpha);
        self.gamma = update_gamma(self.resp.view(), h_second_moment, hyper.a, hyper.b)?;
        Ok(())
    }

    /// Evidence lower bound of the channel coefficients under the current
    /// factors, up to the constant −½KM ln 2π.
    pub fn bound(&self, h_second_moment: &Array2<T>, hyper: &DpHyper<T>) -> T {
        let half = T::lit(0.5);
        let mut fit = T::zero();
        for ((i, j), &h2) in h_second_moment.indexed_iter() {
            for c in 0..self.components() {
                let w = self.resp[[i, j, c]];
                fit += w * (half * self.gamma.ln_mean[c] - half * self.gamma.mean[c] * h2);
            }
        }
        fit - self.kl_to_prior(hyper)
    }

    /// Closed-form KL of the VMP factors against their priors: Beta sticks,
    /// Gamma precisions, and the expected multinomial term
    /// Σ ⟨ω⟩(ln⟨ω⟩ − ⟨ln π⟩).
    pub fn kl_to_prior(&self, hyper: &DpHyper<T>) -> T {
        let alpha = hyper.alpha.as_f64();
        let (a0, b0) = (hyper.a.as_f64(), hyper.b.as_f64());
        let mut kl = 0.0;
        for c in 0..self.components() {
            let (t1, t2) = (self.beta.tau[c].as_f64(), self.beta.tau_tilde[c].as_f64());
            kl += kl_beta(t1, t2, 1.0, alpha);
            let (a1, b1) = (self.gamma.a_tilde[c].as_f64(), self.gamma.b_tilde[c].as_f64());
            kl += kl_gamma(a1, b1, a0, b0);
        }
        for fiber in self.resp.lanes(Axis(2)) {
            for (c, &w) in fiber.iter().enumerate() {
                let w = w.as_f64();
                if w > 0.0 {
                    kl += w * (w.ln() - self.beta.ln_pi[c].as_f64());
                }
            }
        }
        T::lit(kl)
    }
}

/// Removes components whose responsibility mass is below
/// `threshold·K·M`, renormalising the surviving fibers. The heaviest
/// component always survives. Returns the number removed.
pub fn prune_components<T: Real>(post: &mut GmPosterior<T>, threshold: T) -> usize {
    let (k, m, g) = post.resp.dim();
    if g <= 1 {
        return 0;
    }
    let mass = component_mass(post.resp.view());
    let cut = threshold * T::count(k * m);
    let mut keep: Vec<usize> = (0..g).filter(|&c| mass[c] >= cut).collect();
    if keep.is_empty() {
        let best = (0..g).fold(0, |b, c| if mass[c] > mass[b] { c } else { b });
        keep.push(best);
    }
    if keep.len() == g {
        return 0;
    }
    post.permute(&keep);
    for mut fiber in post.resp.lanes_mut(Axis(2)) {
        let s: T = fiber.sum();
        if s > T::zero() {
            fiber.mapv_inplace(|w| w / s);
        } else {
            fiber.fill(T::one() / T::count(keep.len()));
        }
    }
    g - keep.len()
}

/// When merge moves run inside an iterative fit. Merging from the first
/// sweep collapses every component while they are still near-identical,
/// so a warm-up is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeSchedule {
    /// First sweep at which merges are attempted.
    pub after: usize,
    /// Attempt period in sweeps; 0 disables merging.
    pub every: usize,
}

impl Default for MergeSchedule {
    fn default() -> Self {
        Self { after: 10, every: 10 }
    }
}

impl MergeSchedule {
    pub fn disabled() -> Self {
        Self { after: 0, every: 0 }
    }

    pub fn due(&self, sweep: usize) -> bool {
        self.every > 0 && sweep >= self.after && (sweep - self.after).is_multiple_of(self.every)
    }
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub sweeps: usize,
    pub converged: bool,
}

/// Runs VMP sweeps on fixed channel statistics until the component count
/// is unchanged and weights and precisions move by less than `tol`
/// (relative), or `max_sweeps` is reached.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Real>(
    post: &mut GmPosterior<T>,
    h_hat: &Array2<T>,
    v_h: T,
    hyper: &DpHyper<T>,
    prune_threshold: T,
    merges: MergeSchedule,
    tol: T,
    max_sweeps: usize,
) -> Result<FitReport> {
    let h2 = second_moment(h_hat, v_h)?;
    for sweep in 0..max_sweeps {
        let before = (post.components(), post.weights(), post.gamma.mean.clone());
        post.step(h_hat, v_h, hyper, prune_threshold)?;
        if merges.due(sweep) {
            merge_components(post, &h2, hyper)?;
        }
        if post.components() == before.0 && sweep > merges.after {
            let rel = |a: &Array1<T>, b: &Array1<T>| {
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| ((x - y) / y.abs().max(T::min_positive_value())).abs())
                    .fold(T::zero(), T::max)
            };
            if rel(&post.weights(), &before.1) < tol && rel(&post.gamma.mean, &before.2) < tol {
                return Ok(FitReport {
                    sweeps: sweep + 1,
                    converged: true,
                });
            }
        }
    }
    Ok(FitReport {
        sweeps: max_sweeps,
        converged: false,
    })
}

/// Greedily merges pairs of components that are neighbours in precision
/// whenever the merge does not lower [`GmPosterior::bound`]. Leaves the β
/// and γ statistics refreshed and returns the number of merges.
pub fn merge_components<T: Real>(post: &mut GmPosterior<T>, h_second_moment: &Array2<T>, hyper: &DpHyper<T>) -> Result<usize> {
    let mut merged = 0;
    post.refresh(h_second_moment, hyper)?;
    loop {
        let g = post.components();
        if g <= 1 {
            break;
        }
        let current = post.bound(h_second_moment, hyper);
        let mut by_precision: Vec<usize> = (0..g).collect();
        by_precision.sort_by(|&a, &b| post.gamma.mean[a].partial_cmp(&post.gamma.mean[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut best: Option<(T, GmPosterior<T>)> = None;
        for pair in by_precision.windows(2) {
            let (keep, drop) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            let mut cand = post.clone();
            let moved = cand.resp.index_axis(Axis(2), drop).to_owned();
            let mut target = cand.resp.index_axis_mut(Axis(2), keep);
            target += &moved;
            let rest: Vec<usize> = (0..g).filter(|&c| c != drop).collect();
            cand.permute(&rest);
            cand.refresh(h_second_moment, hyper)?;
            let value = cand.bound(h_second_moment, hyper);
            if value >= current && best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, cand));
            }
        }
        match best {
            Some((_, cand)) => {
                *post = cand;
                merged += 1;
            }
            None => break,
        }
    }
    if merged > 0 {
        post.gamma_bar = effective_precision(post.resp.view(), &post.gamma.mean);
    }
    Ok(merged)
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// KL(Beta(a1, b1) ‖ Beta(a2, b2)).
pub fn kl_beta(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    ln_beta_fn(a2, b2) - ln_beta_fn(a1, b1)
        + (a1 - a2) * digamma(a1)
        + (b1 - b2) * digamma(b1)
        + (a2 - a1 + b2 - b1) * digamma(a1 + b1)
}

/// KL(Gamma(a1, rate b1) ‖ Gamma(a2, rate b2)).
pub fn kl_gamma(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    (a1 - a2) * digamma(a1) - ln_gamma(a1) + ln_gamma(a2) + a2 * (b1.ln() - b2.ln()) + a1 * (b2 - b1) / b1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::channel::{sample_gm_channel, GmParams};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn resp_from(fibers: &[&[f64]], k: usize, m: usize) -> Array3<f64> {
        let g = fibers[0].len();
        Array::from_shape_vec((k, m, g), fibers.iter().flat_map(|f| f.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment(&array![[3.0]], 1.0).unwrap()[[0, 0]], 10.0);
        assert_eq!(second_moment(&array![[0.0]], 0.0).unwrap()[[0, 0]], 0.0);
        assert!(second_moment(&array![[0.0]], -1.0).is_err());
    }

    #[test]
    fn second_moment_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mean, var) = (0.7f64, 0.3f64);
        let n = 1_000_000;
        let mc = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (mean + var.sqrt() * z).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let exact = second_moment(&array![[mean]], var).unwrap()[[0, 0]];
        assert!((mc / exact - 1.0).abs() < 0.01);
    }

    #[test]
    fn beta_examples() {
        let resp = resp_from(&[&[0.5, 0.5]], 1, 1);
        let b = update_beta(resp.view(), 1.0);
        assert_eq!(b.tau, array![1.5, 1.5]);
        assert_eq!(b.tau_tilde, array![1.5, 1.0]);
        // ψ(1.5) − ψ(3) by the recurrence ψ(x+1) = ψ(x) + 1/x:
        // ψ(1.5) = 2 − γ_E − 2ln2, ψ(3) = 1.5 − γ_E.
        let oracle = (2.0 - 2.0 * 2f64.ln()) - 1.5;
        assert_abs_diff_eq!(b.ln_beta[0], oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(b.ln_beta[0], -0.8863, epsilon = 1e-4);

        let (k, m) = (3, 4);
        let mut resp = Array3::zeros((k, m, 2));
        resp.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let b = update_beta(resp.view(), 0.1);
        assert_eq!(b.tau, array![13.0, 1.0]);
        assert_eq!(b.tau_tilde, array![0.1, 0.1]);
    }

    #[test]
    fn gamma_examples() {
        let resp = resp_from(&[&[1.0]], 1, 1);
        let g = update_gamma(resp.view(), &array![[2.0]], 1e-6, 1e-6).unwrap();
        assert_abs_diff_eq!(g.a_tilde[0], 0.5, epsilon = 1e-5);
        assert_abs_diff_eq!(g.b_tilde[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(g.mean[0], 0.5, epsilon = 1e-5);

        let resp = Array3::<f64>::zeros((2, 2, 3));
        let g = update_gamma(resp.view(), &Array2::ones((2, 2)), 2.0, 4.0).unwrap();
        assert!(g.a_tilde.iter().all(|&v| v == 2.0));
        assert!(g.b_tilde.iter().all(|&v| v == 4.0));
        assert!(g.mean.iter().all(|&v| v == 0.5));

        assert!(update_gamma(resp.view(), &Array2::ones((3, 2)), 2.0, 4.0).is_err());
    }

    #[test]
    fn gamma_recovers_true_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma_true: f64 = 4.0;
        let h = Array2::from_shape_simple_fn((100, 100), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / gamma_true.sqrt()
        });
        let resp = Array3::ones((100, 100, 1));
        let h2 = second_moment(&h, 0.0).unwrap();
        let g = update_gamma(resp.view(), &h2, 1e-6, 1e-6).unwrap();
        assert!((g.mean[0] / gamma_true - 1.0).abs() < 0.1);
    }

    #[test]
    fn omega_examples() {
        let h2 = array![[0.7, 2.0]];
        let one = GammaStats::prior(1, 2.0, 3.0);
        let beta = update_beta(Array3::<f64>::ones((1, 2, 1)).view(), 1.0);
        let r = update_omega(&one, &h2, &beta);
        assert!(r.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let two = GammaStats::prior(2, 2.0, 3.0);
        let mut beta = update_beta(Array3::<f64>::from_elem((1, 2, 2), 0.5).view(), 1.0);
        beta.ln_pi.fill(-0.3);
        let r = update_omega(&two, &h2, &beta);
        assert!(r.iter().all(|&v| (v - 0.5).abs() < 1e-15));

        // ⟨ln γ⟩ = ln γ exactly here, so ζ ∝ √γ when ⟨|h|²⟩ = 0.
        let mut g = GammaStats::prior(2, 1.0, 1.0);
        g.mean = array![1.0, 100.0];
        g.ln_mean = array![0.0, 100f64.ln()];
        let r = update_omega(&g, &array![[0.0]], &beta);
        assert_abs_diff_eq!(r[[0, 0, 0]], 1.0 / 11.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r[[0, 0, 1]], 10.0 / 11.0, epsilon = 1e-14);
    }

    #[test]
    fn omega_survives_extreme_logits() {
        let mut g = GammaStats::prior(2, 1.0, 1.0);
        g.mean = array![1e-3, 1e6];
        g.ln_mean = array![-7.0, 14.0];
        let beta = update_beta(Array3::<f64>::from_elem((1, 1, 2), 0.5).view(), 1.0);
        let r = update_omega(&g, &array![[1e4]], &beta);
        assert!(r.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(r.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn effective_precision_examples() {
        let resp = resp_from(&[&[0.25, 0.75]], 1, 1);
        let gb = effective_precision(resp.view(), &array![4.0, 8.0]);
        assert_eq!(gb[[0, 0]], 7.0);
        let resp = Array3::<f64>::ones((2, 3, 1));
        let gb = effective_precision(resp.view(), &array![2.5]);
        assert!(gb.iter().all(|&v| v == 2.5));
    }

    fn posterior_with(resp: Array3<f64>) -> GmPosterior<f64> {
        let hyper = DpHyper::default();
        let (k, m, _) = resp.dim();
        GmPosterior::from_resp(resp, &hyper, Array2::ones((k, m)))
    }

    #[test]
    fn prune_threshold_zero_is_identity() {
        let resp = resp_from(&[&[0.2, 0.8], &[0.6, 0.4]], 1, 2);
        let mut post = posterior_with(resp);
        let before = post.clone();
        assert_eq!(prune_components(&mut post, 0.0), 0);
        assert_eq!(post, before);
    }

    #[test]
    fn prune_removes_empty_component() {
        let resp = resp_from(&[&[1.0, 0.0], &[1.0, 0.0]], 1, 2);
        let mut post = posterior_with(resp);
        assert_eq!(prune_components(&mut post, 1e-3), 1);
        assert_eq!(post.components(), 1);
        assert!(post.resp.iter().all(|&v| v == 1.0));
        assert_eq!(post.gamma.mean.len(), 1);
    }

    #[test]
    fn prune_never_removes_last_component() {
        let resp = resp_from(&[&[0.3, 0.7]], 1, 1);
        let mut post = posterior_with(resp);
        prune_components(&mut post, 2.0);
        assert_eq!(post.components(), 1);
        assert_abs_diff_eq!(post.resp[[0, 0, 0]], 1.0);
    }

    fn run_to_fixed_point(post: &mut GmPosterior<f64>, h: &Array2<f64>, hyper: &DpHyper<f64>, iters: usize) {
        for _ in 0..iters {
            post.step(h, 0.0, hyper, 1e-3).unwrap();
        }
    }

    #[test]
    fn fits_two_component_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = GmParams::new(vec![0.5, 0.5], vec![1.0, 100.0]).unwrap();
        let h: Array2<f64> = sample_gm_channel(&truth, 100, 100, &mut rng);
        let hyper = DpHyper {
            g_init: 8,
            ..DpHyper::default()
        };
        let mut post = GmPosterior::initial(100, 100, &hyper, 10.0, &mut rng);
        let report = fit(&mut post, &h, 0.0, &hyper, 1e-3, MergeSchedule::default(), 1e-8, 5000).unwrap();
        assert!(report.converged);
        assert_eq!(post.components(), 2);
        let mut fitted: Vec<(f64, f64)> = post.weights().iter().copied().zip(post.gamma.mean.iter().copied()).collect();
        fitted.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert!((fitted[0].0 - 0.5).abs() < 0.05 && (fitted[1].0 - 0.5).abs() < 0.05, "{fitted:?}");
        assert!((fitted[0].1 / 1.0 - 1.0).abs() < 0.2 && (fitted[1].1 / 100.0 - 1.0).abs() < 0.2, "{fitted:?}");
    }

    #[test]
    fn fixed_point_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = GmParams::new(vec![0.3, 0.7], vec![0.5, 20.0]).unwrap();
        let h: Array2<f64> = sample_gm_channel(&truth, 40, 50, &mut rng);
        let hyper = DpHyper {
            g_init: 4,
            ..DpHyper::default()
        };
        let mut post = GmPosterior::initial(40, 50, &hyper, 10.0, &mut rng);
        run_to_fixed_point(&mut post, &h, &hyper, 3000);
        let before = post.clone();
        post.step(&h, 0.0, &hyper, 1e-3).unwrap();
        let rel = |a: &Array1<f64>, b: &Array1<f64>| {
            a.iter().zip(b).map(|(x, y)| ((x - y) / y.abs().max(1e-300)).abs()).fold(0.0, f64::max)
        };
        assert_eq!(post.components(), before.components());
        assert!(rel(&post.beta.tau, &before.beta.tau) < 1e-8);
        assert!(rel(&post.beta.tau_tilde, &before.beta.tau_tilde) < 1e-8);
        assert!(rel(&post.gamma.a_tilde, &before.gamma.a_tilde) < 1e-8);
        assert!(rel(&post.gamma.b_tilde, &before.gamma.b_tilde) < 1e-8);
    }

    #[test]
    fn single_component_scale_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = Array2::from_shape_simple_fn((30, 30), || StandardNormal.sample(&mut rng));
        let hyper = DpHyper {
            g_init: 1,
            ..DpHyper::default()
        };
        let fit = |scale: f64| {
            let hs = h.mapv(|v: f64| v * scale.sqrt());
            let mut post = posterior_with(Array3::ones((30, 30, 1)));
            run_to_fixed_point(&mut post, &hs, &hyper, 5);
            post.gamma.mean[0]
        };
        let base = fit(1.0);
        for c in [0.1, 3.0, 50.0] {
            assert!((fit(c) * c / base - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn merge_keeps_distinct_components() {
        // Two well-separated groups with hard responsibilities: merging
        // them would lower the bound.
        let k = 50;
        let mut h = Array2::zeros((k, 2));
        let mut resp = Array3::zeros((k, 2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..k {
            let z: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            h[[i, 0]] = z;
            h[[i, 1]] = 0.01 * z2;
            resp[[i, 0, 0]] = 1.0;
            resp[[i, 1, 1]] = 1.0;
        }
        let hyper = DpHyper::default();
        let h2 = second_moment(&h, 0.0).unwrap();
        let mut post = posterior_with(resp);
        assert_eq!(merge_components(&mut post, &h2, &hyper).unwrap(), 0);
        assert_eq!(post.components(), 2);
    }

    #[test]
    fn merge_collapses_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Array2::from_shape_simple_fn((20, 20), || StandardNormal.sample(&mut rng));
        let h2 = second_moment(&h, 0.0).unwrap();
        let hyper = DpHyper::default();
        let mut post = posterior_with(Array3::from_elem((20, 20, 3), 1.0 / 3.0));
        let before = {
            let mut p = post.clone();
            p.refresh(&h2, &hyper).unwrap();
            p.bound(&h2, &hyper)
        };
        assert_eq!(merge_components(&mut post, &h2, &hyper).unwrap(), 2);
        assert!(post.bound(&h2, &hyper) >= before);
    }

    #[test]
    fn merge_schedule() {
        let s = MergeSchedule { after: 5, every: 3 };
        let due: Vec<usize> = (0..12).filter(|&t| s.due(t)).collect();
        assert_eq!(due, vec![5, 8, 11]);
        assert!(!(0..100).any(|t| MergeSchedule::disabled().due(t)));
    }

    #[test]
    fn kl_of_prior_factors_vanishes() {
        assert_abs_diff_eq!(kl_beta(1.0, 0.3, 1.0, 0.3), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_gamma(2.0, 0.5, 2.0, 0.5), 0.0, epsilon = 1e-12);
        assert!(kl_beta(3.0, 2.0, 1.0, 0.3) > 0.0);
        assert!(kl_gamma(3.0, 2.0, 1.0, 0.3) > 0.0);
    }

    proptest! {
        #[test]
        fn omega_fibers_sum_to_one(seed in any::<u64>(), g in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hyper = DpHyper { g_init: g, ..DpHyper::default() };
            let mut post = GmPosterior::initial(4, 5, &hyper, 10.0, &mut rng);
            let h = Array2::from_shape_simple_fn((4, 5), || { let z: f64 = StandardNormal.sample(&mut rng); 3.0 * z });
            post.step(&h, 0.1, &hyper, 1e-3).unwrap();
            for fiber in post.resp.lanes(Axis(2)) {
                prop_assert!((fiber.sum() - 1.0).abs() < 1e-9);
            }
            prop_assert!(post.gamma_bar.iter().all(|&v| v > 0.0));
            prop_assert!(post.beta.tau.iter().all(|&v| v >= 1.0));
            prop_assert!(post.beta.tau_tilde.iter().all(|&v| v >= hyper.alpha));
            prop_assert!(post.gamma.a_tilde.iter().all(|&v| v >= hyper.a));
            prop_assert!(post.gamma.b_tilde.iter().all(|&v| v >= hyper.b));
        }

        #[test]
        fn beta_and_gamma_monotone_in_mass(seed in any::<u64>(), extra in 0.01f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let resp = Array3::from_shape_simple_fn((2, 3, 3), || rng.random::<f64>());
            let h2 = Array2::from_elem((2, 3), 1.5);
            let mut heavier = resp.clone();
            heavier[[1, 2, 1]] += extra;
            let (b0, b1) = (update_beta(resp.view(), 0.1), update_beta(heavier.view(), 0.1));
            prop_assert!(b1.tau[1] > b0.tau[1]);
            prop_assert!(b1.tau_tilde[0] > b0.tau_tilde[0]);
            let g0 = update_gamma(resp.view(), &h2, 1e-6, 1e-6).unwrap();
            let g1 = update_gamma(heavier.view(), &h2, 1e-6, 1e-6).unwrap();
            prop_assert!(g1.a_tilde[1] > g0.a_tilde[1]);
            prop_assert!(g1.b_tilde[1] > g0.b_tilde[1]);
        }
    }
}
