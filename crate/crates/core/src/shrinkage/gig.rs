//! Generalized inverse Gaussian variates.
//!
//! Density `f(x) ∝ x^(p-1) exp(-(psi x + chi / x) / 2)` on `x > 0`.
//!
//! The general case is reduced to the two-parameter form
//! `g(y) ∝ y^(lambda-1) exp(-omega (y + 1/y) / 2)` with `lambda = |p|`,
//! `omega = sqrt(chi psi)`, `x = sqrt(chi / psi) * y` (or its reciprocal for
//! `p < 0`), then sampled by one of three exact rejection schemes depending on
//! `(lambda, omega)`: ratio-of-uniforms with mode shift, ratio-of-uniforms
//! without shift, and a three-piece hat for the non-log-concave corner.
//! When `omega^2` is small against `lambda - 1` the draw is a Gamma proposal
//! accepted with probability `exp(-chi / 2x)`, which stays accurate where the
//! rectangle bounds lose precision.

use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GigParams {
    pub order: f64,
    /// Coefficient of `1/x`.
    pub chi: f64,
    /// Coefficient of `x`.
    pub psi: f64,
}

impl GigParams {
    pub fn new(order: f64, chi: f64, psi: f64) -> Result<Self> {
        let ok = order.is_finite()
            && chi.is_finite()
            && psi.is_finite()
            && chi >= 0.0
            && psi >= 0.0
            && ((chi > 0.0 && psi > 0.0)
                || (chi == 0.0 && psi > 0.0 && order > 0.0)
                || (psi == 0.0 && chi > 0.0 && order < 0.0));
        if ok {
            Ok(GigParams { order, chi, psi })
        } else {
            Err(Error::Parameter(format!(
                "invalid GIG parameters (p = {order}, chi = {chi}, psi = {psi})"
            )))
        }
    }
}

impl Distribution<f64> for GigParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let GigParams { order, chi, psi } = *self;
        if chi == 0.0 {
            return Gamma::new(order, 2.0 / psi).unwrap().sample(rng);
        }
        if psi == 0.0 {
            return 1.0 / Gamma::new(-order, 2.0 / chi).unwrap().sample(rng);
        }
        if order == -0.5 {
            return InverseGaussian::new((chi / psi).sqrt(), chi).unwrap().sample(rng);
        }
        let lambda = order.abs();
        let omega = (chi * psi).sqrt();
        if lambda > 1.5 && omega * omega < 0.1 * (lambda - 1.0) {
            // nearly Gamma: Gamma hat, accept with exp(-c / 2x)
            let (c, rate) = if order > 0.0 { (chi, psi) } else { (psi, chi) };
            let hat = Gamma::new(lambda, 2.0 / rate).unwrap();
            loop {
                let x = hat.sample(rng);
                if x > 0.0 && rng.random::<f64>().ln() <= -c / (2.0 * x) {
                    return if order > 0.0 { x } else { 1.0 / x };
                }
            }
        }
        let alpha = (chi / psi).sqrt();
        let y = if lambda > 2.0 || omega > 3.0 {
            rou_shift(lambda, omega, rng)
        } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
            rou_noshift(lambda, omega, rng)
        } else {
            concave_hat(lambda, omega, rng)
        };
        if order < 0.0 {
            alpha / y
        } else {
            alpha * y
        }
    }
}

/// One draw from `GIG(p, chi, psi)`.
pub fn sample_gig<R: Rng + ?Sized>(params: &GigParams, rng: &mut R) -> f64 {
    params.sample(rng)
}

fn mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        ((lambda - 1.0).hypot(omega) + (lambda - 1.0)) / omega
    } else {
        omega / ((1.0 - lambda).hypot(omega) + (1.0 - lambda))
    }
}

fn rou_shift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);

    // bounding rectangle from the roots of a depressed cubic
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - a / 3.0;
    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();

    loop {
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v: f64 = rng.random();
        let x = u / v + xm;
        if x <= 0.0 {
            continue;
        }
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

fn rou_noshift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + (lambda + 1.0).hypot(omega)) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();

    loop {
        let u = um * rng.random::<f64>();
        let v: f64 = rng.random();
        let x = u / v;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// `0 <= lambda < 1`, small `omega`: constant hat on `(0, x0)`, power hat on
/// `(x0, 2/omega)` and exponential hat beyond.
fn concave_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        a1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        a1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    let total = a0 + a1 + a2;

    loop {
        let mut v = total * rng.random::<f64>();
        let (x, hx);
        if v <= a0 {
            x = x0 * v / a0;
            hx = k0;
        } else {
            v -= a0;
            if v <= a1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= a1;
                let a = x0.max(2.0 / omega);
                x = -2.0 / omega * ((-omega / 2.0 * a).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        if !(x > 0.0 && x.is_finite()) {
            continue;
        }
        let u = rng.random::<f64>() * hx;
        if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}
