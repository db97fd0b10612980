//! Hypergeometric series behind the Wright-Fisher transition density: the
//! terminating 2F1, the alternating series G and F, the ancestral-process
//! pmf, and condition-number-driven escalation to extended precision.
//!
//! All three series share the pattern `sum_k (-1)^k (coefficient decaying
//! like e^{-k(k+psi+-1) tau/2}) * 2F1(-k, ...; x)`. At small tau the terms
//! grow by orders of magnitude before decaying and cancel to an O(1)
//! residual, so every evaluation tracks the condition number
//! `eta = sum |a_k| / |sum a_k|` over all atomic addends and recomputes in
//! extended precision once eta crosses `1e-6 * 2^52`.
//!
//! Evaluations are generic over [`Scalar`]; every term is assembled from the
//! exact f64 inputs (psi, pi, x, tau, small integers) inside the target
//! scalar type, so the extended pass is not polluted by f64 roundoff.

use statrs::function::gamma::ln_gamma;

use crate::bigfloat::{BigF, Scalar};
use crate::error::{Error, Result};

/// Term budget for the fast path (adequate for tau >= 0.05).
pub const DEFAULT_KMAX: usize = 80;
/// Term budget of the extended-precision reference oracle.
pub const REFERENCE_KMAX: usize = 1000;
/// Escalate when eta exceeds desired error / f64 precision = 1e-6 * 2^52.
pub const ESCALATION_THRESHOLD: f64 = 1e-6 * 4_503_599_627_370_496.0;
/// Series regime boundary: below this tau callers use the low-t path.
pub const TAU_SERIES_MIN: f64 = 0.05;

const CONVERGENCE_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Standard,
    Extended,
}

#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub value: f64,
    pub condition_number: f64,
    pub precision_used: Precision,
    pub terms_used: usize,
}

/// `eta = sum |a_m| / max(|sum a_m|, tiny)`, clamped to >= 1. An exactly
/// zero sum maps to a huge eta, which always escalates.
pub fn condition_estimate(terms: &[f64]) -> f64 {
    assert!(!terms.is_empty(), "condition_estimate needs at least one term");
    let abs: f64 = terms.iter().map(|t| t.abs()).sum();
    let sum: f64 = terms.iter().sum();
    (abs / sum.abs().max(f64::MIN_POSITIVE)).max(1.0)
}

/// Terminating hypergeometric 2F1(-k, b; c; x) as an exact finite sum.
pub fn hypergeom_terminating(k: u32, b: f64, c: f64, x: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidC(c));
    }
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for j in 0..k as i64 {
        let jf = j as f64;
        term *= (jf - k as f64) * (b + jf) / ((c + jf) * (jf + 1.0)) * x;
        sum += term;
        if term == 0.0 {
            break;
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy)]
pub enum SeriesKind {
    /// G_psi: 1 + sum (-1)^k a_k, a_k with exponent k(k+psi-1) and
    /// 2F1(-k, psi+k-1; psi pi; x).
    G,
    /// F_psi: 1 + sum (-1)^k b_k, b_k with exponent k(k+psi+1) and
    /// 2F1(-k, psi+k+1; psi pi + 1; x).
    F,
    /// Ancestral pmf p(A(psi, tau) = m), series over k >= m.
    Pmf(u64),
}

pub(crate) struct Eval<T> {
    pub value: T,
    pub abs_sum: T,
    pub terms_used: usize,
    pub converged: bool,
}

/// Stream of envelope coefficients c_{k,m} for fixed m, advancing in k.
/// Shared by the pmf summation and the exact ancestral sampler.
pub(crate) struct CoeffStream<T: Scalar> {
    pub m: u64,
    pub k: u64,
    pub value: T,
    psi: T,
    e_half_psi: T, // e^{-psi tau / 2}
    e_tau: T,      // e^{-tau}
    e_k: T,        // e^{-k tau} at the current k
}

impl<T: Scalar> CoeffStream<T> {
    pub fn new(m: u64, psi: f64, tau: f64) -> Self {
        let psi_t = T::from_f64(psi);
        let tau_t = T::from_f64(tau);
        let neg_half = T::from_f64(-0.5);
        let e_half_psi = psi_t.mul(&tau_t).mul(&neg_half).exp();
        let e_tau = tau_t.mul(&T::from_f64(-1.0)).exp();
        let value = if m == 0 {
            T::one()
        } else {
            // c_{mm} = e^{-m(m+psi-1) tau/2} (2m+psi-1) (psi+m)_{(m-1)} / m!
            let m_t = T::from_f64(m as f64);
            let expo = m_t
                .mul(&psi_t.add(&T::from_f64((m as f64) - 1.0)))
                .mul(&tau_t)
                .mul(&neg_half)
                .exp();
            let mut poly = psi_t.add(&T::from_f64(2.0 * m as f64 - 1.0));
            for i in 0..m.saturating_sub(1) {
                poly = poly.mul(&psi_t.add(&T::from_f64((m + i) as f64)));
            }
            for i in 1..=m {
                poly = poly.div(&T::from_f64(i as f64));
            }
            expo.mul(&poly)
        };
        let e_k = tau_t.mul(&T::from_f64(-(m as f64))).exp();
        CoeffStream { m, k: m, value, psi: psi_t, e_half_psi, e_tau, e_k }
    }

    /// Advance k by one: c_{k+1,m} from c_{k,m} via
    /// e^{-(2k+psi) tau/2} (2k+psi+1)(psi+m+k-1) / ((2k+psi-1)(k+1-m)).
    pub fn advance(&mut self) {
        let poly = if self.k == 0 && self.m == 0 {
            // Removable (psi-1)/(psi-1) at k=m=0.
            self.psi.add(&T::one())
        } else {
            let k = self.k as f64;
            let m = self.m as f64;
            let num = self
                .psi
                .add(&T::from_f64(2.0 * k + 1.0))
                .mul(&self.psi.add(&T::from_f64(m + k - 1.0)));
            let den = self
                .psi
                .add(&T::from_f64(2.0 * k - 1.0))
                .mul(&T::from_f64(k + 1.0 - m));
            num.div(&den)
        };
        self.value = self.value.mul(&self.e_half_psi).mul(&self.e_k).mul(&poly);
        self.e_k = self.e_k.mul(&self.e_tau);
        self.k += 1;
    }
}

/// One pass of the alternating series at scalar type T.
pub(crate) fn eval_series<T: Scalar>(
    kind: SeriesKind,
    psi: f64,
    pi_x0: f64,
    x: f64,
    tau: f64,
    kmax: usize,
) -> Eval<T> {
    match kind {
        SeriesKind::Pmf(m) => eval_pmf::<T>(m, psi, tau, kmax),
        SeriesKind::G => eval_gf::<T>(0.0, psi, pi_x0, x, tau, kmax),
        SeriesKind::F => eval_gf::<T>(2.0, psi, pi_x0, x, tau, kmax),
    }
}

/// Shared G/F evaluator; `shift` is 0 for G and 2 for F.
fn eval_gf<T: Scalar>(shift: f64, psi: f64, pi_x0: f64, x: f64, tau: f64, kmax: usize) -> Eval<T> {
    let eps = T::from_f64(T::rel_epsilon() * 0.1);
    let tiny = T::from_f64(f64::MIN_POSITIVE);
    let psi_t = T::from_f64(psi);
    let tau_t = T::from_f64(tau);
    let x_t = T::from_f64(x);
    let neg_half = T::from_f64(-0.5);
    let c_t = match shift {
        s if s == 0.0 => psi_t.mul(&T::from_f64(pi_x0)),
        _ => psi_t.mul(&T::from_f64(pi_x0)).add(&T::one()),
    };

    // A_1 = e^{-(psi+shift) tau/2} (psi+1+shift); per-k ratio
    // e^{-(2k+psi+shift) tau/2} (2k+psi+1+shift)(psi+k-1+shift)
    //   / ((2k+psi-1+shift)(k+1)).
    let e_shift = psi_t.add(&T::from_f64(shift)).mul(&tau_t).mul(&neg_half).exp();
    let e_tau = tau_t.mul(&T::from_f64(-1.0)).exp();
    let mut e_k = e_tau.clone(); // e^{-k tau} at k=1
    let mut coeff = e_shift.mul(&psi_t.add(&T::from_f64(1.0 + shift)));

    let mut value = T::one();
    let mut abs_sum = T::one();
    let mut sign = -1.0; // (-1)^k at k=1
    let mut quiet = 0usize;
    let mut terms_used = 0usize;
    let mut converged = false;
    let mut last_bound = f64::INFINITY;

    for k in 1..=kmax {
        let kf = k as f64;
        // Inner terminating 2F1(-k, psi+k-1+shift; c; x).
        let a_t = psi_t.add(&T::from_f64(kf - 1.0 + shift));
        let mut t_j = T::one();
        let mut f1 = T::one();
        let mut f1_abs = T::one();
        if x != 0.0 {
            for j in 0..k {
                let jf = j as f64;
                t_j = t_j
                    .mul(&T::from_f64(jf - kf))
                    .mul(&a_t.add(&T::from_f64(jf)))
                    .div(&c_t.add(&T::from_f64(jf)).mul(&T::from_f64(jf + 1.0)))
                    .mul(&x_t);
                f1 = f1.add(&t_j);
                f1_abs = f1_abs.add(&t_j.abs());
            }
        }
        let bound = coeff.mul(&f1_abs);
        value = value.add(&coeff.mul(&f1).mul(&T::from_f64(sign)));
        abs_sum = abs_sum.add(&bound);
        terms_used = k;
        last_bound = bound.to_f64();

        if bound.lt(&eps.mul(&value.abs().add(&tiny))) {
            quiet += 1;
            if quiet >= 2 {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }

        let num = psi_t
            .add(&T::from_f64(2.0 * kf + 1.0 + shift))
            .mul(&psi_t.add(&T::from_f64(kf - 1.0 + shift)));
        let den = psi_t
            .add(&T::from_f64(2.0 * kf - 1.0 + shift))
            .mul(&T::from_f64(kf + 1.0));
        coeff = coeff.mul(&e_shift).mul(&e_k).mul(&num).div(&den);
        e_k = e_k.mul(&e_tau);
        sign = -sign;
    }
    if !converged {
        converged = last_bound <= CONVERGENCE_REL * value.to_f64().abs().max(f64::MIN_POSITIVE);
    }
    Eval { value, abs_sum, terms_used, converged }
}

fn eval_pmf<T: Scalar>(m: u64, psi: f64, tau: f64, kmax: usize) -> Eval<T> {
    let eps = T::from_f64(T::rel_epsilon() * 0.1);
    let tiny = T::from_f64(f64::MIN_POSITIVE);
    let mut stream = CoeffStream::<T>::new(m, psi, tau);
    let mut value = T::zero();
    let mut abs_sum = T::zero();
    let mut sign = 1.0; // (-1)^{k-m} at k=m
    let mut quiet = 0usize;
    let mut terms_used = 0usize;
    let mut converged = false;
    let mut last_bound = f64::INFINITY;
    for i in 0..kmax {
        let c = stream.value.clone();
        value = value.add(&c.mul(&T::from_f64(sign)));
        abs_sum = abs_sum.add(&c.abs());
        terms_used = i + 1;
        last_bound = c.to_f64().abs();
        if i > 2 && c.abs().lt(&eps.mul(&value.abs().add(&tiny))) {
            quiet += 1;
            if quiet >= 2 {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
        stream.advance();
        sign = -sign;
    }
    if !converged {
        converged = last_bound <= CONVERGENCE_REL * value.to_f64().abs().max(f64::MIN_POSITIVE);
    }
    Eval { value, abs_sum, terms_used, converged }
}

fn evaluate(kind: SeriesKind, psi: f64, pi_x0: f64, x: f64, tau: f64, kmax: usize) -> Result<SeriesResult> {
    validate(kind, psi, pi_x0, x, tau)?;
    let std = eval_series::<f64>(kind, psi, pi_x0, x, tau, kmax);
    let eta = (std.abs_sum / std.value.abs().max(f64::MIN_POSITIVE)).max(1.0);
    if std.converged && std.value.is_finite() && eta <= ESCALATION_THRESHOLD {
        return Ok(SeriesResult {
            value: std.value,
            condition_number: eta,
            precision_used: Precision::Standard,
            terms_used: std.terms_used,
        });
    }
    let ext = eval_series::<BigF>(kind, psi, pi_x0, x, tau, kmax);
    if !ext.converged {
        return Err(Error::Unconverged);
    }
    let value = ext.value.to_f64();
    if !value.is_finite() {
        return Err(Error::Unconverged);
    }
    Ok(SeriesResult {
        value,
        condition_number: eta,
        precision_used: Precision::Extended,
        terms_used: ext.terms_used,
    })
}

fn validate(kind: SeriesKind, psi: f64, pi_x0: f64, x: f64, tau: f64) -> Result<()> {
    if !(psi > 0.0) {
        return Err(Error::InvalidPsi(psi));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("tau must be >= 0, got {tau}")));
    }
    if matches!(kind, SeriesKind::G | SeriesKind::F) {
        if !(pi_x0 > 0.0 && pi_x0 <= 1.0) {
            return Err(Error::InvalidPi);
        }
        if !(0.0..1.0).contains(&x) {
            return Err(Error::InvalidInput(format!("x must lie in [0,1), got {x}")));
        }
    }
    Ok(())
}

/// G_psi(tau, x0, x) with x = the x0 component of the simplex point.
/// Escalates to extended precision when the condition number crosses the
/// threshold; the reported condition number is always the standard-precision
/// estimate that triggered (or cleared) escalation.
pub fn series_g(psi: f64, pi_x0: f64, x: f64, tau: f64, kmax: usize) -> Result<SeriesResult> {
    evaluate(SeriesKind::G, psi, pi_x0, x, tau, kmax)
}

/// F_psi(tau, x0, x); see [`series_g`].
pub fn series_f(psi: f64, pi_x0: f64, x: f64, tau: f64, kmax: usize) -> Result<SeriesResult> {
    evaluate(SeriesKind::F, psi, pi_x0, x, tau, kmax)
}

/// p(A(psi, tau) = m): probability that m ancestral lineages survive to
/// depth tau.
pub fn ancestral_pmf(psi: f64, tau: f64, m: u64, kmax: usize) -> Result<SeriesResult> {
    evaluate(SeriesKind::Pmf(m), psi, 1.0, 0.0, tau, kmax)
}

/// Standard-precision evaluation with no escalation, for diagnostic sweeps.
pub fn series_standard_raw(
    kind: SeriesKind,
    psi: f64,
    pi_x0: f64,
    x: f64,
    tau: f64,
    kmax: usize,
) -> Result<SeriesResult> {
    validate(kind, psi, pi_x0, x, tau)?;
    let std = eval_series::<f64>(kind, psi, pi_x0, x, tau, kmax);
    let eta = (std.abs_sum / std.value.abs().max(f64::MIN_POSITIVE)).max(1.0);
    Ok(SeriesResult {
        value: std.value,
        condition_number: eta,
        precision_used: Precision::Standard,
        terms_used: std.terms_used,
    })
}

/// Extended-precision reference value at the 1000-term budget.
pub fn reference_value(kind: SeriesKind, psi: f64, pi_x0: f64, x: f64, tau: f64) -> Result<f64> {
    validate(kind, psi, pi_x0, x, tau)?;
    let ext = eval_series::<BigF>(kind, psi, pi_x0, x, tau, REFERENCE_KMAX);
    if !ext.converged {
        return Err(Error::Unconverged);
    }
    Ok(ext.value.to_f64())
}

/// Upper bound on the ancestral pmf tail `sum_{m > m0} p(m)`, built from
/// certified alternating-series brackets: each p(m) is at most its upper
/// bracket, and the brackets decay like the leading e^{-m(m+psi-1) tau/2}
/// coefficient.
pub fn ancestral_tail_bound(psi: f64, tau: f64, m0: u64) -> f64 {
    let mut total = 0.0;
    for m in (m0 + 1)..(m0 + 400) {
        let (_, hi) = pmf_bracket(psi, tau, m);
        total += hi.max(0.0);
        if hi < 1e-18 {
            break;
        }
    }
    total
}

/// Certified alternating-series bracket [lo, hi] around p(m) in f64. Scans
/// until the coefficients decrease three times in a row, then aligns the
/// truncation parity so the partial sum ends on a negative term.
pub(crate) fn pmf_bracket(psi: f64, tau: f64, m: u64) -> (f64, f64) {
    let mut stream = CoeffStream::<f64>::new(m, psi, tau);
    let mut terms = vec![stream.value];
    let mut decreases = 0;
    loop {
        let prev = stream.value;
        stream.advance();
        terms.push(stream.value);
        if stream.value < prev {
            decreases += 1;
            if decreases >= 3 {
                break;
            }
        } else {
            decreases = 0;
        }
        if terms.len() > 100_000 {
            break;
        }
    }
    if (terms.len() - 1) % 2 == 0 {
        stream.advance();
        terms.push(stream.value);
    }
    let mut lo = 0.0;
    let mut sign = 1.0;
    for t in &terms {
        lo += sign * t;
        sign = -sign;
    }
    stream.advance();
    let hi = lo + stream.value;
    (lo, hi)
}

/// Leading pmf coefficient c_{mm} via log-gamma, as an independent route to
/// the stream initialization.
pub fn pmf_leading_coeff(psi: f64, tau: f64, m: u64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let mf = m as f64;
    let ln = -mf * (mf + psi - 1.0) * tau / 2.0 + (2.0 * mf + psi - 1.0).ln()
        + ln_gamma(psi + 2.0 * mf - 1.0)
        - ln_gamma(psi + mf)
        - ln_gamma(mf + 1.0);
    ln.exp()
}
