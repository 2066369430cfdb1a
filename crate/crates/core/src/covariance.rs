//! Spatial correlation families and the covariance specification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::bessel::ln_bessel_k;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("distance must be finite and non-negative, got {0}")]
    InvalidDistance(f64),
    #[error("unknown covariance model `{0}` (expected exponential, matern, gaussian or spherical)")]
    UnknownFamily(String),
    #[error("parameter {name} = {value} is outside its support")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Correlation family, named exactly as in the `cov_model` config key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovFamily {
    #[default]
    Exponential,
    Matern,
    Gaussian,
    Spherical,
}

impl CovFamily {
    pub fn name(self) -> &'static str {
        match self {
            CovFamily::Exponential => "exponential",
            CovFamily::Matern => "matern",
            CovFamily::Gaussian => "gaussian",
            CovFamily::Spherical => "spherical",
        }
    }

    /// Whether the smoothness `nu` is a free parameter.
    pub fn uses_nu(self) -> bool {
        self == CovFamily::Matern
    }
}

impl fmt::Display for CovFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovFamily {
    type Err = CovarianceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" => Ok(CovFamily::Exponential),
            "matern" => Ok(CovFamily::Matern),
            "gaussian" => Ok(CovFamily::Gaussian),
            "spherical" => Ok(CovFamily::Spherical),
            other => Err(CovarianceError::UnknownFamily(other.to_string())),
        }
    }
}

/// Correlation at distance `d`, no argument checking.
#[inline]
pub fn correlation_unchecked<T: Scalar>(family: CovFamily, phi: T, nu: T, d: T) -> T {
    if d <= T::zero() {
        return T::one();
    }
    let x = phi * d;
    match family {
        CovFamily::Exponential => (-x).exp(),
        CovFamily::Gaussian => (-(x * x)).exp(),
        CovFamily::Spherical => {
            if x >= T::one() {
                T::zero()
            } else {
                T::one() - T::of(1.5) * x + T::of(0.5) * x * x * x
            }
        }
        CovFamily::Matern => T::of(matern(nu.as_f64(), x.as_f64())),
    }
}

/// Matern correlation `2^{1-nu}/Gamma(nu) x^nu K_nu(x)` at `x = phi * d > 0`.
fn matern(nu: f64, x: f64) -> f64 {
    if nu == 0.5 {
        (-x).exp()
    } else if nu == 1.5 {
        (1.0 + x) * (-x).exp()
    } else if nu == 2.5 {
        (1.0 + x + x * x / 3.0) * (-x).exp()
    } else {
        let ln = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() + ln_bessel_k(nu, x);
        ln.exp().min(1.0)
    }
}

/// Correlation `rho(d)` for the given family. `nu` is ignored unless Matern.
pub fn correlation<T: Scalar>(family: CovFamily, phi: T, nu: T, d: T) -> Result<T, CovarianceError> {
    if !d.is_finite() || d < T::zero() {
        return Err(CovarianceError::InvalidDistance(d.as_f64()));
    }
    if !(phi > T::zero()) || !phi.is_finite() {
        return Err(CovarianceError::InvalidParameter { name: "phi", value: phi.as_f64() });
    }
    if family.uses_nu() && (!(nu > T::zero()) || !nu.is_finite()) {
        return Err(CovarianceError::InvalidParameter { name: "nu", value: nu.as_f64() });
    }
    Ok(correlation_unchecked(family, phi, nu, d))
}

/// Distance at which the exponential correlation drops to 0.05.
pub fn effective_range<T: Scalar>(phi: T) -> T {
    -T::of(0.05f64.ln()) / phi
}

/// Covariance function parameters. `tau_sq` is the nugget; the conjugate
/// model instead reads `alpha = tau_sq / sigma_sq` via [`CovarianceSpec::alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec<T> {
    pub family: CovFamily,
    pub sigma_sq: T,
    pub phi: T,
    pub nu: T,
    pub tau_sq: T,
}

impl<T: Scalar> CovarianceSpec<T> {
    pub fn new(family: CovFamily, sigma_sq: T, phi: T, tau_sq: T) -> Self {
        Self { family, sigma_sq, phi, nu: T::of(0.5), tau_sq }
    }

    pub fn with_nu(mut self, nu: T) -> Self {
        self.nu = nu;
        self
    }

    /// Conjugate parameterization: unit variance with nugget ratio `alpha`.
    pub fn from_alpha(family: CovFamily, phi: T, alpha: T) -> Self {
        Self { family, sigma_sq: T::one(), phi, nu: T::of(0.5), tau_sq: alpha }
    }

    pub fn alpha(&self) -> T {
        self.tau_sq / self.sigma_sq
    }

    pub fn validate(&self) -> Result<(), CovarianceError> {
        let check = |name: &'static str, v: T, strict: bool| {
            let ok = v.is_finite() && if strict { v > T::zero() } else { v >= T::zero() };
            if ok {
                Ok(())
            } else {
                Err(CovarianceError::InvalidParameter { name, value: v.as_f64() })
            }
        };
        check("sigma_sq", self.sigma_sq, true)?;
        check("phi", self.phi, true)?;
        check("tau_sq", self.tau_sq, false)?;
        if self.family.uses_nu() {
            check("nu", self.nu, true)?;
        }
        Ok(())
    }

    pub fn correlation(&self, d: T) -> T {
        correlation_unchecked(self.family, self.phi, self.nu, d)
    }

    /// `sigma^2 rho(d) + tau^2 [same_site]`. The nugget is a Kronecker delta on
    /// observation identity, so distinct sites at distance zero do not get it.
    pub fn covariance(&self, d: T, same_site: bool) -> T {
        let c = self.sigma_sq * self.correlation(d);
        if same_site {
            c + self.tau_sq
        } else {
            c
        }
    }
}
