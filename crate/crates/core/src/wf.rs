//! Wright-Fisher simplicial diffusion: exact and Gaussian-approximate
//! ancestral sampling, forward marginal sampling, score functions, the
//! simplicial ELBO, and the low-tau loss bound.
//!
//! The forward marginal is a Dirichlet mixture: sample the number of
//! surviving ancestral lineages `m ~ A(psi, tau)`, then
//! `x_t ~ Dirichlet(psi pi + m delta_{x0})`. Exact sampling of m inverts the
//! alternating-series CDF through a shrinking [S-, S+] envelope; below
//! `tau = 0.05` the Gaussian (Griffiths) approximation takes over.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use statrs::function::gamma::ln_gamma;

use crate::bigfloat::{BigF, Scalar};
use crate::error::{Error, Result};
use crate::series::{self, CoeffStream, SeriesResult, DEFAULT_KMAX, ESCALATION_THRESHOLD, TAU_SERIES_MIN};
use crate::simplex::SimplexPoint;

/// Parent-independent mutation specification: intensity psi and stationary
/// distribution pi.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WfParams {
    pub psi: f64,
    pub pi: SimplexPoint,
}

impl WfParams {
    pub fn new(psi: f64, pi: SimplexPoint) -> Result<Self> {
        if !(psi > 0.0) || !psi.is_finite() {
            return Err(Error::InvalidPsi(psi));
        }
        if !pi.is_strictly_positive() {
            return Err(Error::InvalidPi);
        }
        Ok(WfParams { psi, pi })
    }

    pub fn dim(&self) -> usize {
        self.pi.dim()
    }
}

/// Per-coordinate gradient of the log transition density on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

const ENVELOPE_BUDGET: usize = 1_000_000;
const SCAN_CAP: usize = 100_000;
/// Components of Dirichlet draws are clamped into [1e-300, 1].
const INTERIOR_CLAMP: f64 = 1e-300;

enum EnvelopeOutcome {
    Sample(u64),
    Escalate,
    Stall,
}

struct EnvState<T: Scalar> {
    lower: T,
    stream: CoeffStream<T>, // positioned at the next upper term
}

impl<T: Scalar> EnvState<T> {
    /// Initial bracket for one m: sum terms until the coefficients have
    /// decreased three times in a row, end the partial sum on a negative
    /// term, and leave the stream at the following (positive) term.
    fn setup(m: u64, psi: f64, tau: f64, advances: &mut usize, abs_acc: &mut f64) -> Option<Self> {
        let mut stream = CoeffStream::<T>::new(m, psi, tau);
        let mut terms: Vec<T> = Vec::new();
        let mut decreases = 0usize;
        loop {
            terms.push(stream.value.clone());
            *abs_acc += stream.value.to_f64().abs();
            let prev = stream.value.clone();
            stream.advance();
            *advances += 1;
            if stream.value.lt(&prev) {
                decreases += 1;
                if decreases >= 3 && terms.len() >= 2 {
                    break;
                }
            } else {
                decreases = 0;
            }
            if terms.len() > SCAN_CAP {
                return None;
            }
        }
        if terms.len() % 2 != 0 {
            terms.push(stream.value.clone());
            *abs_acc += stream.value.to_f64().abs();
            stream.advance();
            *advances += 1;
        }
        let mut lower = T::zero();
        let mut sign = 1.0;
        for t in &terms {
            lower = lower.add(&t.mul(&T::from_f64(sign)));
            sign = -sign;
        }
        Some(EnvState { lower, stream })
    }

    /// Tighten by two terms: lower += c_{K+1} - c_{K+2}.
    fn refine(&mut self, advances: &mut usize, abs_acc: &mut f64) {
        let c1 = self.stream.value.clone();
        self.stream.advance();
        let c2 = self.stream.value.clone();
        self.stream.advance();
        *advances += 2;
        *abs_acc += c1.to_f64().abs() + c2.to_f64().abs();
        self.lower = self.lower.add(&c1).sub(&c2);
    }
}

fn envelope_sample<T: Scalar>(psi: f64, tau: f64, u: f64) -> EnvelopeOutcome {
    let escalation_active = T::rel_epsilon() > 1e-20;
    let u_t = T::from_f64(u);
    let mut states: Vec<EnvState<T>> = Vec::new();
    let mut advances = 0usize;
    let mut abs_acc = 0.0f64;

    for m in 0u64.. {
        let st = match EnvState::<T>::setup(m, psi, tau, &mut advances, &mut abs_acc) {
            Some(s) => s,
            None => return EnvelopeOutcome::Stall,
        };
        states.push(st);
        loop {
            if advances > ENVELOPE_BUDGET {
                return EnvelopeOutcome::Stall;
            }
            let mut s_lower = T::zero();
            let mut s_next = T::zero();
            for st in &states {
                s_lower = s_lower.add(&st.lower);
                s_next = s_next.add(&st.stream.value);
            }
            let s_upper = s_lower.add(&s_next);
            if u_t.lt(&s_lower) {
                return EnvelopeOutcome::Sample(m);
            }
            if s_upper.lt(&u_t) {
                break;
            }
            if escalation_active {
                let gap = s_upper.sub(&s_lower).to_f64();
                let noise = abs_acc * f64::EPSILON;
                let eta = abs_acc / s_lower.to_f64().abs().max(f64::MIN_POSITIVE);
                if !gap.is_finite() || gap < 64.0 * noise || eta > ESCALATION_THRESHOLD {
                    return EnvelopeOutcome::Escalate;
                }
            }
            for st in states.iter_mut() {
                st.refine(&mut advances, &mut abs_acc);
            }
        }
    }
    unreachable!()
}

/// Draw from the ancestral process A(psi, tau) by alternating-series
/// envelope inversion. Deterministic given the RNG stream; escalates the
/// envelope sums to extended precision when f64 cannot resolve the bracket.
pub fn sample_ancestral_exact<R: Rng + ?Sized>(psi: f64, tau: f64, rng: &mut R) -> Result<u64> {
    if !(psi > 0.0) {
        return Err(Error::InvalidPsi(psi));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be > 0, got {tau}")));
    }
    let u: f64 = rng.gen();
    match envelope_sample::<f64>(psi, tau, u) {
        EnvelopeOutcome::Sample(m) => Ok(m),
        EnvelopeOutcome::Stall => Err(Error::EnvelopeStall),
        EnvelopeOutcome::Escalate => match envelope_sample::<BigF>(psi, tau, u) {
            EnvelopeOutcome::Sample(m) => Ok(m),
            _ => Err(Error::EnvelopeStall),
        },
    }
}

/// Gaussian (Griffiths) parameters (mu, sigma^2) for A(psi, tau) at low tau.
pub fn griffiths_params(psi: f64, tau: f64) -> (f64, f64) {
    let beta = 0.5 * (psi - 1.0) * tau;
    if beta.abs() < 1e-8 {
        (2.0 / tau, 2.0 / (3.0 * tau))
    } else {
        let eta = beta / (beta.exp() - 1.0);
        let mu = 2.0 * eta / tau;
        let sigma2 = mu * (eta + beta).powi(2) * (1.0 + eta / (eta + beta) - 2.0 * eta) / (beta * beta);
        (mu, sigma2)
    }
}

/// Low-tau approximate draw: round a Normal(mu, sigma^2) to the nearest
/// nonnegative integer.
pub fn sample_ancestral_griffiths<R: Rng + ?Sized>(psi: f64, tau: f64, rng: &mut R) -> u64 {
    let (mu, sigma2) = griffiths_params(psi, tau);
    let z = Normal::new(mu, sigma2.sqrt()).expect("valid normal").sample(rng);
    (z + 0.5).floor().max(0.0) as u64
}

/// Forward marginal sample: ancestral draw (exact for tau >= 0.05, Griffiths
/// below) followed by Dirichlet(psi pi + m delta_{x0}); strictly interior.
pub fn sample_forward_wf<R: Rng + ?Sized>(p: &WfParams, tau: f64, x0: usize, rng: &mut R) -> Result<SimplexPoint> {
    let m = if tau >= TAU_SERIES_MIN {
        sample_ancestral_exact(p.psi, tau, rng)?
    } else {
        sample_ancestral_griffiths(p.psi, tau, rng)
    };
    Ok(sample_dirichlet_posterior(p, m, x0, rng))
}

/// Dirichlet(psi pi + m delta_{x0}) with interior clamping.
pub fn sample_dirichlet_posterior<R: Rng + ?Sized>(p: &WfParams, m: u64, x0: usize, rng: &mut R) -> SimplexPoint {
    let b = p.dim();
    let mut draws = vec![0.0; b];
    let mut total = 0.0;
    for (i, d) in draws.iter_mut().enumerate() {
        let alpha = p.psi * p.pi.weights()[i] + if i == x0 { m as f64 } else { 0.0 };
        let g = Gamma::new(alpha, 1.0).expect("positive shape").sample(rng);
        *d = g.max(INTERIOR_CLAMP);
        total += *d;
    }
    for d in draws.iter_mut() {
        *d = (*d / total).clamp(INTERIOR_CLAMP, 1.0);
    }
    let total: f64 = draws.iter().sum();
    SimplexPoint::new(draws.iter().map(|d| d / total).collect()).expect("normalized")
}

fn series_g_retry(psi: f64, pi_b: f64, x: f64, tau: f64) -> Result<SeriesResult> {
    match series::series_g(psi, pi_b, x, tau, DEFAULT_KMAX) {
        Err(Error::Unconverged) => series::series_g(psi, pi_b, x, tau, 8 * DEFAULT_KMAX),
        other => other,
    }
}

fn series_f_retry(psi: f64, pi_b: f64, x: f64, tau: f64) -> Result<SeriesResult> {
    match series::series_f(psi, pi_b, x, tau, DEFAULT_KMAX) {
        Err(Error::Unconverged) => series::series_f(psi, pi_b, x, tau, 8 * DEFAULT_KMAX),
        other => other,
    }
}

/// log p(x_t = v | x0, t) = log Dirichlet(psi pi)(v) + log G_psi(tau, x0, v).
pub fn wf_log_density(p: &WfParams, tau: f64, x0: usize, v: &SimplexPoint) -> Result<f64> {
    let g = series_g_retry(p.psi, p.pi.weights()[x0], v.weights()[x0], tau)?;
    if g.value <= 0.0 {
        return Err(Error::NonPositiveG);
    }
    Ok(dirichlet_log_pdf(p, v) + g.value.ln())
}

pub fn dirichlet_log_pdf(p: &WfParams, v: &SimplexPoint) -> f64 {
    let mut out = ln_gamma(p.psi);
    for (pi_b, v_b) in p.pi.weights().iter().zip(v.weights()) {
        let a = p.psi * pi_b;
        out -= ln_gamma(a);
        out += (a - 1.0) * v_b.ln();
    }
    out
}

/// Posterior pull weight w(x0, v) = e^{-psi tau/2}(psi+1)/pi_{x0} * F/G.
pub fn posterior_weight(p: &WfParams, tau: f64, x0: usize, v: &SimplexPoint) -> Result<f64> {
    let pi_b = p.pi.weights()[x0];
    let x = v.weights()[x0];
    let g = series_g_retry(p.psi, pi_b, x, tau)?;
    if g.value <= 0.0 {
        return Err(Error::NonPositiveG);
    }
    let f = series_f_retry(p.psi, pi_b, x, tau)?;
    Ok((-p.psi * tau / 2.0).exp() * (p.psi + 1.0) / pi_b * f.value / g.value)
}

/// Gradient of log Dirichlet(psi pi): c(v) = (psi pi - 1) / v.
pub fn stationary_score(p: &WfParams, v: &SimplexPoint) -> Vec<f64> {
    p.pi.weights()
        .iter()
        .zip(v.weights())
        .map(|(pi_b, v_b)| (p.psi * pi_b - 1.0) / v_b)
        .collect()
}

/// s(v | x0, t) = c(v) + delta_{x0} w(x0, v).
pub fn score_given_x0(p: &WfParams, tau: f64, x0: usize, v: &SimplexPoint) -> Result<ScoreVector> {
    let mut s = stationary_score(p, v);
    s[x0] += posterior_weight(p, tau, x0, v)?;
    Ok(ScoreVector(s))
}

/// Score under a soft prediction. With `hollow = false` this is the convex
/// combination sum_b x~0_b s(v|b); with `hollow = true` it is the score of
/// the predictive mixture,
/// `c(v)_b + (e^{-psi tau/2}(psi+1)/pi_b) x~0_b F(b) / sum_b' x~0_b' G(b')`,
/// with the per-token pi_b inside each weight. The two coincide when the
/// hollow form is fed the base prediction and the convex form its
/// evidence-weighted posterior.
pub fn score_given_prediction(
    p: &WfParams,
    tau: f64,
    pred: &SimplexPoint,
    v: &SimplexPoint,
    hollow: bool,
) -> Result<ScoreVector> {
    let b = p.dim();
    let mut s = stationary_score(p, v);
    if hollow {
        let decay = (-p.psi * tau / 2.0).exp() * (p.psi + 1.0);
        let mut denom = 0.0;
        let mut nums = vec![0.0; b];
        for tok in 0..b {
            let pi_b = p.pi.weights()[tok];
            let x = v.weights()[tok];
            let g = series_g_retry(p.psi, pi_b, x, tau)?;
            if g.value <= 0.0 {
                return Err(Error::NonPositiveG);
            }
            denom += pred.weights()[tok] * g.value;
            let f = series_f_retry(p.psi, pi_b, x, tau)?;
            nums[tok] = pred.weights()[tok] * decay / pi_b * f.value;
        }
        if denom <= 0.0 {
            return Err(Error::NonPositiveG);
        }
        for tok in 0..b {
            s[tok] += nums[tok] / denom;
        }
    } else {
        for tok in 0..b {
            let w = pred.weights()[tok];
            if w > 0.0 {
                s[tok] += w * posterior_weight(p, tau, tok, v)?;
            }
        }
    }
    Ok(ScoreVector(s))
}

/// Simplicial ELBO term:
/// (tau_dot / 2) ||s_true - s_pred||^2 under the metric diag(v) - v v^T.
/// The all-ones direction is in the metric kernel, so constant shifts of
/// either score are immaterial.
pub fn elbo_wf(tau_dot: f64, v: &SimplexPoint, s_true: &ScoreVector, s_pred: &ScoreVector) -> f64 {
    let diff: Vec<f64> = s_true.0.iter().zip(&s_pred.0).map(|(a, b)| a - b).collect();
    let vd = v.weights();
    let dot_v: f64 = diff.iter().zip(vd).map(|(d, w)| d * w).sum();
    let quad: f64 = diff.iter().zip(vd).map(|(d, w)| d * d * w).sum::<f64>() - dot_v * dot_v;
    (tau_dot / 2.0) * quad.max(0.0)
}

/// Upper bound on the loss for tau < 0.05 with the prediction pinned to
/// delta_{b*}: L <= 2 tau_dot v_{x0}^{-1} (E~ m)^2, with the weighted mean
/// E~ m from a saddle-point approximation on top of the Griffiths law.
pub fn elbo_wf_low_t(p: &WfParams, tau: f64, tau_dot: f64, v: &SimplexPoint, x0: usize) -> f64 {
    let b_star = v.argmax();
    let p_min = p.pi.weights()[x0].min(p.pi.weights()[b_star]);
    let m_mean = saddle_point_mean(p.psi, tau, p_min);
    2.0 * tau_dot * m_mean * m_mean / v.weights()[x0]
}

/// E~_{1,p} m from the saddle point of the Griffiths likelihood:
/// ((mu - (psi-1)) + sqrt((mu + (psi-1))^2 + 4 (1-p) psi sigma^2)) / 2.
pub fn saddle_point_mean(psi: f64, tau: f64, p_min: f64) -> f64 {
    let (mu, sigma2) = griffiths_params(psi, tau);
    let shift = psi - 1.0;
    ((mu - shift) + ((mu + shift).powi(2) + 4.0 * (1.0 - p_min) * psi * sigma2).sqrt()) / 2.0
}

/// Mean and variance of A(psi, tau) from the pmf, truncated once the tail
/// bound drops below 1e-12. Test oracle for both samplers.
pub fn ancestral_moments(psi: f64, tau: f64) -> Result<(f64, f64)> {
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut m = 0u64;
    loop {
        let p = series::ancestral_pmf(psi, tau, m, DEFAULT_KMAX)?.value.max(0.0);
        mean += m as f64 * p;
        second += (m as f64) * (m as f64) * p;
        if series::ancestral_tail_bound(psi, tau, m) < 1e-12 && m > 2 {
            break;
        }
        m += 1;
        if m > 100_000 {
            return Err(Error::Unconverged);
        }
    }
    Ok((mean, second - mean * mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform2() -> WfParams {
        WfParams::new(2.0, SimplexPoint::uniform(2)).unwrap()
    }

    #[test]
    fn griffiths_beta_zero_branch() {
        let (mu, sigma2) = griffiths_params(1.0, 0.01);
        assert!((mu - 200.0).abs() < 1e-12);
        assert!((sigma2 - 200.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn griffiths_empirical_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_ancestral_griffiths(1.0, 0.01, &mut rng) as f64;
        }
        let mean = sum / n as f64;
        let se = (200.0f64 / 3.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 200.0).abs() < 3.0 * se + 0.5, "mean = {mean}");
    }

    #[test]
    fn exact_sampler_large_tau_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            assert_eq!(sample_ancestral_exact(1.0, 50.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn exact_sampler_matches_pmf_smoke() {
        let (psi, tau) = (1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 20_000usize;
        let mut counts = vec![0u64; 32];
        for _ in 0..n {
            let m = sample_ancestral_exact(psi, tau, &mut rng).unwrap() as usize;
            counts[m.min(31)] += 1;
        }
        let mut chi2 = 0.0;
        let mut dof = 0i32;
        let mut tail_p = 1.0;
        let mut tail_obs = n as f64;
        for m in 0..20u64 {
            let p = series::ancestral_pmf(psi, tau, m, DEFAULT_KMAX).unwrap().value;
            let e = p * n as f64;
            if e < 8.0 {
                break;
            }
            let o = counts[m as usize] as f64;
            chi2 += (o - e) * (o - e) / e;
            dof += 1;
            tail_p -= p;
            tail_obs -= o;
        }
        // Lumped tail bin.
        let e_tail = tail_p * n as f64;
        if e_tail > 1.0 {
            chi2 += (tail_obs - e_tail) * (tail_obs - e_tail) / e_tail;
        }
        // alpha = 0.001 critical value for dof around 5-8 is < 27.
        assert!(dof >= 3);
        assert!(chi2 < 30.0, "chi2 = {chi2} at dof = {dof}");
    }

    #[test]
    fn exact_sampler_mean_at_regime_boundary() {
        let (psi, tau) = (1.0, 0.05);
        let (mean, var) = ancestral_moments(psi, tau).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_ancestral_exact(psi, tau, &mut rng).unwrap() as f64;
        }
        let got = sum / n as f64;
        let se = var.sqrt() / (n as f64).sqrt();
        assert!((got - mean).abs() < 3.0 * se, "{got} vs {mean} +- {se}");
    }

    #[test]
    fn forward_sample_matches_stationary_at_large_tau() {
        let p = WfParams::new(3.0, SimplexPoint::new(vec![0.25, 0.4, 0.35]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut mean = vec![0.0; 3];
        for _ in 0..n {
            let v = sample_forward_wf(&p, 50.0, 0, &mut rng).unwrap();
            for (m, w) in mean.iter_mut().zip(v.weights()) {
                *m += w;
            }
        }
        for (m, pi_b) in mean.iter().zip(p.pi.weights()) {
            let got = m / n as f64;
            // Var of Dirichlet(psi pi) component is pi(1-pi)/(psi+1).
            let se = (pi_b * (1.0 - pi_b) / (p.psi + 1.0)).sqrt() / (n as f64).sqrt();
            assert!((got - pi_b).abs() < 4.0 * se, "{got} vs {pi_b}");
        }
    }

    #[test]
    fn forward_sample_concentrates_at_low_tau() {
        let p = uniform2();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut mean0 = 0.0;
        for _ in 0..n {
            mean0 += sample_forward_wf(&p, 0.01, 0, &mut rng).unwrap().weights()[0];
        }
        assert!(mean0 / n as f64 > 0.95);
    }

    #[test]
    fn log_density_reduces_to_dirichlet_at_large_tau() {
        let p = uniform2();
        let v = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let ld = wf_log_density(&p, 50.0, 0, &v).unwrap();
        assert!((ld - dirichlet_log_pdf(&p, &v)).abs() < 1e-10);
    }

    #[test]
    fn log_density_normalizes_by_quadrature() {
        // B=2: integrate exp(log p) over v = (x, 1-x) by trapezoid.
        let p = uniform2();
        let (tau, x0) = (0.3, 0);
        let n = 10_000;
        let mut integral = 0.0;
        for i in 1..n {
            let x = i as f64 / n as f64;
            let v = SimplexPoint::new(vec![x, 1.0 - x]).unwrap();
            integral += wf_log_density(&p, tau, x0, &v).unwrap().exp() / n as f64;
        }
        assert!((integral - 1.0).abs() < 1e-4, "integral = {integral}");
    }

    #[test]
    fn score_reduces_to_stationary_at_large_tau() {
        let p = WfParams::new(1.5, SimplexPoint::new(vec![0.2, 0.8]).unwrap()).unwrap();
        let v = SimplexPoint::new(vec![0.45, 0.55]).unwrap();
        let s = score_given_x0(&p, 50.0, 0, &v).unwrap();
        let c = stationary_score(&p, &v);
        for (a, b) in s.0.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
        let sp = score_given_prediction(&p, 50.0, &SimplexPoint::new(vec![0.6, 0.4]).unwrap(), &v, true).unwrap();
        for (a, b) in sp.0.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn score_matches_tangent_finite_differences() {
        let p = uniform2();
        let (tau, x0) = (0.2, 0usize);
        let v = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let s = score_given_x0(&p, tau, x0, &v).unwrap();
        // Tangent direction (1, -1): u . s vs central differences.
        let h = 1e-6;
        let vp = SimplexPoint::new(vec![0.3 + h, 0.7 - h]).unwrap();
        let vm = SimplexPoint::new(vec![0.3 - h, 0.7 + h]).unwrap();
        let fd = (wf_log_density(&p, tau, x0, &vp).unwrap() - wf_log_density(&p, tau, x0, &vm).unwrap()) / (2.0 * h);
        let directional = s.0[0] - s.0[1];
        assert!((directional - fd).abs() / fd.abs() < 1e-5, "{directional} vs {fd}");
    }

    #[test]
    fn posterior_weight_positive_on_grid() {
        let p = WfParams::new(2.0, SimplexPoint::new(vec![0.3, 0.7]).unwrap()).unwrap();
        for tau in [0.05, 0.2, 1.0, 5.0] {
            for x in [0.1, 0.5, 0.9] {
                let v = SimplexPoint::new(vec![x, 1.0 - x]).unwrap();
                for tok in 0..2 {
                    assert!(posterior_weight(&p, tau, tok, &v).unwrap() > 0.0);
                }
            }
        }
    }

    #[test]
    fn prediction_score_modes_agree_on_delta() {
        let p = WfParams::new(2.5, SimplexPoint::new(vec![0.4, 0.6]).unwrap()).unwrap();
        let v = SimplexPoint::new(vec![0.35, 0.65]).unwrap();
        let tau = 0.4;
        let s_direct = score_given_x0(&p, tau, 1, &v).unwrap();
        let delta = SimplexPoint::delta(2, 1);
        for hollow in [false, true] {
            let s = score_given_prediction(&p, tau, &delta, &v, hollow).unwrap();
            for (a, b) in s.0.iter().zip(&s_direct.0) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hollow_mode_is_posterior_averaged_convex_mode() {
        // hollow(q) == convex(normalize(q * G)) for any base prediction q.
        let p = WfParams::new(1.7, SimplexPoint::new(vec![0.3, 0.7]).unwrap()).unwrap();
        let v = SimplexPoint::new(vec![0.55, 0.45]).unwrap();
        let tau = 0.3;
        let q = SimplexPoint::new(vec![0.8, 0.2]).unwrap();
        let hollow = score_given_prediction(&p, tau, &q, &v, true).unwrap();
        let mut post = vec![0.0; 2];
        for tok in 0..2 {
            let g = series::series_g(p.psi, p.pi.weights()[tok], v.weights()[tok], tau, DEFAULT_KMAX).unwrap();
            post[tok] = q.weights()[tok] * g.value;
        }
        let post = SimplexPoint::normalized(post).unwrap();
        let convex = score_given_prediction(&p, tau, &post, &v, false).unwrap();
        for (a, b) in hollow.0.iter().zip(&convex.0) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn hollow_score_matches_marginal_score_oracle() {
        // With the base prediction equal to the true prior, the hollow score
        // is the gradient of log sum_b p0_b p(v|b), checked by finite
        // differences of the enumerated mixture density.
        let p = uniform2();
        let tau = 0.2;
        let prior = SimplexPoint::new(vec![0.7, 0.3]).unwrap();
        let v = SimplexPoint::new(vec![0.4, 0.6]).unwrap();
        let s = score_given_prediction(&p, tau, &prior, &v, true).unwrap();
        let mix_logp = |v: &SimplexPoint| -> f64 {
            let mut total = 0.0;
            for tok in 0..2 {
                total += prior.weights()[tok] * wf_log_density(&p, tau, tok, v).unwrap().exp();
            }
            total.ln()
        };
        let h = 1e-6;
        let vp = SimplexPoint::new(vec![0.4 + h, 0.6 - h]).unwrap();
        let vm = SimplexPoint::new(vec![0.4 - h, 0.6 + h]).unwrap();
        let fd = (mix_logp(&vp) - mix_logp(&vm)) / (2.0 * h);
        let directional = s.0[0] - s.0[1];
        assert!((directional - fd).abs() / fd.abs() < 1e-5, "{directional} vs {fd}");
    }

    #[test]
    fn elbo_wf_worked_example() {
        let v = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let s_true = ScoreVector(vec![1.0, 0.0]);
        let s_pred = ScoreVector(vec![0.0, 1.0]);
        let l = elbo_wf(2.0, &v, &s_true, &s_pred);
        assert!((l - 0.84).abs() < 1e-12, "l = {l}");
    }

    #[test]
    fn elbo_wf_kernel_and_zero() {
        let v = SimplexPoint::new(vec![0.25, 0.35, 0.4]).unwrap();
        let s = ScoreVector(vec![0.3, -1.2, 2.0]);
        assert_eq!(elbo_wf(1.0, &v, &s, &s), 0.0);
        let shifted = ScoreVector(s.0.iter().map(|x| x + 5.5).collect());
        assert!(elbo_wf(1.0, &v, &s, &shifted).abs() < 1e-12);
    }

    #[test]
    fn low_t_saddle_mean_example() {
        // psi=1, tau=0.01: mu=200, sigma^2=66.67;
        // saddle mean = (200 + sqrt(200^2 + 4 (1-p) 66.67)) / 2.
        for p_min in [0.1, 0.5, 0.9] {
            let got = saddle_point_mean(1.0, 0.01, p_min);
            let expect = (200.0 + (200.0f64.powi(2) + 4.0 * (1.0 - p_min) * 200.0 / 3.0).sqrt()) / 2.0;
            assert!((got - expect).abs() < 1e-10);
            assert!((got - (200.0 + (1.0 - p_min) / 3.0)).abs() < 0.01);
        }
    }

    #[test]
    fn low_t_bound_monotone_in_tau() {
        let p = uniform2();
        let v = SimplexPoint::new(vec![0.8, 0.2]).unwrap();
        let b1 = elbo_wf_low_t(&p, 0.001, 1.0, &v, 0);
        let b2 = elbo_wf_low_t(&p, 0.01, 1.0, &v, 0);
        assert!(b1 > b2);
    }

    #[test]
    fn low_t_bound_dominates_series_loss_near_boundary() {
        let p = uniform2();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tau = TAU_SERIES_MIN;
        let tau_dot = 1.0;
        for _ in 0..100 {
            let x0 = rng.gen_range(0..2);
            let v = sample_dirichlet_posterior(&p, 40, x0, &mut rng);
            let s_true = score_given_x0(&p, tau, x0, &v).unwrap();
            // Exact Bayes prediction for a uniform prior.
            let mut post = vec![0.0; 2];
            for tok in 0..2 {
                post[tok] = wf_log_density(&p, tau, tok, &v).unwrap().exp();
            }
            let post = SimplexPoint::normalized(post).unwrap();
            let s_pred = score_given_prediction(&p, tau, &post, &v, false).unwrap();
            let loss = elbo_wf(tau_dot, &v, &s_true, &s_pred);
            let bound = elbo_wf_low_t(&p, 0.049, tau_dot, &v, x0);
            assert!(loss <= bound, "loss {loss} exceeds bound {bound}");
        }
    }

    #[test]
    fn envelope_deterministic_given_seed() {
        let draws: Vec<u64> = (0..2)
            .map(|_| {
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                (0..50).map(|_| sample_ancestral_exact(0.5, 0.3, &mut rng).unwrap()).collect::<Vec<_>>()
            })
            .fold(Vec::new(), |acc, v: Vec<u64>| {
                if acc.is_empty() {
                    v
                } else {
                    assert_eq!(acc, v);
                    acc
                }
            });
        assert_eq!(draws.len(), 50);
    }
}
