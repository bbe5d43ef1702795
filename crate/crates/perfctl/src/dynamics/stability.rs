use serde::{Deserialize, Serialize};

use super::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_sqrt_pair, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    CertifiedStronglyStable,
    /// Not refuted, but no factorization meeting the declared `(κ, γ)` was
    /// found; the caller's declaration is taken on trust.
    DeclaredOnly,
    NotCertified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub verdict: Verdict,
    pub q: Option<Mat>,
    pub l: Option<Mat>,
    /// `‖Ã − Q L Q⁻¹‖`.
    pub residual: f64,
    pub norm_k: f64,
    pub norm_l: f64,
    pub norm_q: f64,
    pub norm_q_inv: f64,
}

const RESIDUAL_TOL: f64 = 1e-8;

/// Tries to exhibit `Ã = A − BK = Q L Q⁻¹` with `‖L‖ ≤ 1 − γ` and `‖K‖, ‖Q‖,
/// ‖Q⁻¹‖ ≤ κ`. Without a supplied factorization, candidates are the trivial
/// one, an orthogonal eigenbasis for symmetric `Ã`, and a Lyapunov-weighted
/// basis `Q = P^{-1/2}` where `P` solves `ÃᵀPÃ/(1−γ)² − P = −I`.
pub fn check_strong_stability(cfg: &SystemConfig, factors: Option<(&Mat, &Mat)>) -> Result<StabilityCertificate> {
    let closed = cfg.closed_loop();
    let norm_k = spectral_norm(&cfg.k);
    if let Some((q, l)) = factors {
        let q_inv = q.clone().try_inverse().ok_or(Error::SingularFactor)?;
        let cert = assess(cfg, &closed, norm_k, q.clone(), q_inv, l.clone());
        return Ok(cert);
    }
    let dx = cfg.d_x();
    let mut candidates = vec![(Mat::identity(dx, dx), Mat::identity(dx, dx), closed.clone())];
    if (&closed - closed.transpose()).amax() <= 1e-14 * closed.amax().max(1.0) {
        let eig = closed.clone().symmetric_eigen();
        let q = eig.eigenvectors.clone();
        candidates.push((q.clone(), q.transpose(), Mat::from_diagonal(&eig.eigenvalues)));
    }
    if let Some(c) = lyapunov_factors(&closed, 1.0 - cfg.gamma) {
        candidates.push(c);
    }
    let mut best: Option<StabilityCertificate> = None;
    for (q, q_inv, l) in candidates {
        let cert = assess(cfg, &closed, norm_k, q, q_inv, l);
        if cert.verdict == Verdict::CertifiedStronglyStable {
            return Ok(cert);
        }
        if best.as_ref().is_none_or(|b| cert.norm_l < b.norm_l) {
            best = Some(cert);
        }
    }
    let mut cert = best.expect("at least the trivial candidate");
    let radius = closed.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    cert.verdict = if radius > 1.0 - cfg.gamma || norm_k > cfg.kappa {
        Verdict::NotCertified
    } else {
        Verdict::DeclaredOnly
    };
    Ok(cert)
}

fn assess(cfg: &SystemConfig, closed: &Mat, norm_k: f64, q: Mat, q_inv: Mat, l: Mat) -> StabilityCertificate {
    let residual = spectral_norm(&(closed - &q * &l * &q_inv));
    let (norm_l, norm_q, norm_q_inv) = (spectral_norm(&l), spectral_norm(&q), spectral_norm(&q_inv));
    let slack = 1e-12;
    let ok = norm_k <= cfg.kappa + slack
        && norm_l <= 1.0 - cfg.gamma + slack
        && norm_q <= cfg.kappa + slack
        && norm_q_inv <= cfg.kappa + slack
        && residual <= RESIDUAL_TOL;
    StabilityCertificate {
        verdict: if ok { Verdict::CertifiedStronglyStable } else { Verdict::NotCertified },
        q: Some(q),
        l: Some(l),
        residual,
        norm_k,
        norm_l,
        norm_q,
        norm_q_inv,
    }
}

/// Balanced `(Q, Q⁻¹, L)` from the discrete Lyapunov series of `Ã/ρ`.
fn lyapunov_factors(closed: &Mat, rho: f64) -> Option<(Mat, Mat, Mat)> {
    let n = closed.nrows();
    let scaled = closed / rho;
    let mut term = Mat::identity(n, n);
    let mut p = Mat::identity(n, n);
    for _ in 0..100_000 {
        term = scaled.transpose() * term * &scaled;
        p += &term;
        if !p.iter().all(|v| v.is_finite()) || p.amax() > 1e12 {
            return None;
        }
        if term.amax() <= 1e-17 * p.amax() {
            let (root, inv_root) = sym_sqrt_pair(&p)?;
            // Q = P^{-1/2} c with c chosen so that ‖Q‖ = ‖Q⁻¹‖.
            let c = (spectral_norm(&root) / spectral_norm(&inv_root)).sqrt();
            let q = &inv_root * c;
            let q_inv = &root / c;
            let l = &q_inv * closed * &q;
            return Some((q, q_inv, l));
        }
    }
    None
}

/// `(α_t, β_t)` with `α_t = Π_{i<t} ζ_i`, `β_{t+1} = ζ_t β_t + 1`, where
/// `ζ_i = 1 − γ + κ²ξ_i`.
pub fn alpha_beta(gamma: f64, kappa: f64, xi: &[f64], t: usize) -> (f64, f64) {
    let (mut alpha, mut beta) = (1.0, 0.0);
    for &x in &xi[..t] {
        let zeta = 1.0 - gamma + kappa * kappa * x;
        alpha *= zeta;
        beta = beta * zeta + 1.0;
    }
    (alpha, beta)
}

/// `x₀κ²α_t + κ²W(‖B‖HM̄ + 1)β_t`.
pub fn state_norm_bound(cfg: &SystemConfig, radius: f64, xi: &[f64], t: usize) -> f64 {
    let (alpha, beta) = alpha_beta(cfg.gamma, cfg.kappa, xi, t);
    let k2 = cfg.kappa * cfg.kappa;
    let b = spectral_norm(&cfg.b);
    cfg.x0_bound * k2 * alpha + k2 * cfg.noise_bound * (b * cfg.memory as f64 * radius + 1.0) * beta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(a: Mat, kappa: f64, gamma: f64) -> SystemConfig {
        let n = a.nrows();
        SystemConfig {
            a,
            b: Mat::identity(n, n),
            k: Mat::zeros(n, n),
            horizon: 4,
            memory: 1,
            noise_bound: 1.0,
            x0_bound: 1.0,
            sigma2: 0.1,
            kappa,
            gamma,
        }
    }

    #[test]
    fn supplied_factorization_is_certified() {
        let c = cfg(Mat::identity(2, 2) * 0.5, 1.0, 0.5);
        let q = Mat::identity(2, 2);
        let l = Mat::identity(2, 2) * 0.5;
        let cert = check_strong_stability(&c, Some((&q, &l))).unwrap();
        assert_eq!(cert.verdict, Verdict::CertifiedStronglyStable);
    }

    #[test]
    fn identity_dynamics_are_never_certified() {
        for gamma in [0.01, 0.3, 0.9] {
            let cert = check_strong_stability(&cfg(Mat::identity(3, 3), 5.0, gamma), None).unwrap();
            assert_eq!(cert.verdict, Verdict::NotCertified);
        }
    }

    #[test]
    fn singular_factor_is_an_error() {
        let c = cfg(Mat::identity(2, 2) * 0.5, 1.0, 0.5);
        let q = Mat::zeros(2, 2);
        assert!(check_strong_stability(&c, Some((&q, &q))).is_err());
    }

    #[test]
    fn non_normal_stable_matrix_gets_lyapunov_certificate() {
        // Jordan-like block: defective, spectral radius 0.3, norm > 1.
        let a = Mat::from_row_slice(2, 2, &[0.3, 1.5, 0.0, 0.3]);
        let cert = check_strong_stability(&cfg(a, 10.0, 0.5), None).unwrap();
        assert_eq!(cert.verdict, Verdict::CertifiedStronglyStable);
        assert!(cert.residual <= 1e-8);
        assert!(cert.norm_l <= 0.5 + 1e-12);
    }

    #[test]
    fn tight_kappa_degrades_to_declared_only() {
        let a = Mat::from_row_slice(2, 2, &[0.3, 1.5, 0.0, 0.3]);
        let cert = check_strong_stability(&cfg(a, 1.0, 0.5), None).unwrap();
        assert_eq!(cert.verdict, Verdict::DeclaredOnly);
    }

    #[test]
    fn alpha_beta_conventions() {
        assert_eq!(alpha_beta(0.5, 1.0, &[0.0; 4], 0), (1.0, 0.0));
        assert_eq!(alpha_beta(0.5, 1.0, &[0.0; 4], 3), (0.125, 1.75));
    }

    #[test]
    fn state_bound_at_first_steps() {
        let c = cfg(Mat::identity(1, 1) * 0.5, 2.0, 0.5);
        assert_eq!(state_norm_bound(&c, 0.7, &[0.1; 4], 0), 4.0);
        let mut c0 = c.clone();
        c0.x0_bound = 0.0;
        assert!((state_norm_bound(&c0, 0.7, &[0.1; 4], 1) - 4.0 * (0.7 + 1.0)).abs() < 1e-12);
    }
}
