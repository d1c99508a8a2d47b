//! Plant description and stabilizability classification.
//!
//! The plant couples a rightward wave `u` (speed `lambda`) and a leftward
//! wave `v` (speed `mu`) on `[0,1]` through the in-domain profiles
//! `sigma_pm`, `sigma_mp` and the boundary reflections `q` (unactuated end)
//! and `rho` (actuated end). The product `rho * q` is the open-loop gain of
//! the reflection loop; its magnitude against the thresholds 1/2 and 1
//! decides how robustly the system can be stabilized when the actuation path
//! carries a small delay.

use crate::scalar::Real;
use crate::{Error, Result};

/// Spatially varying coefficient on `[0,1]`.
///
/// Either a constant or a uniformly sampled table with linear interpolation
/// between samples. Interpolation is exact at the sample points.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile<R: Real> {
    Constant(R),
    Tabulated(Vec<R>),
}

impl<R: Real> Profile<R> {
    /// Builds a tabulated profile, rejecting tables with fewer than two
    /// samples or non-finite entries.
    pub fn tabulated(samples: Vec<R>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidProfile(format!(
                "tabulated profile needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidProfile(
                "tabulated profile contains a non-finite sample".into(),
            ));
        }
        Ok(Profile::Tabulated(samples))
    }

    /// Value at `x in [0,1]` (clamped outside).
    pub fn eval(&self, x: R) -> R {
        match self {
            Profile::Constant(c) => *c,
            Profile::Tabulated(samples) => {
                let m = samples.len() - 1;
                let pos = (x.max(R::zero()).min(R::one())) * R::of_usize(m);
                let cell = pos.floor().to_usize().unwrap_or(0).min(m - 1);
                let frac = pos - R::of_usize(cell);
                samples[cell] + (samples[cell + 1] - samples[cell]) * frac
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Profile::Constant(c) => c.is_finite(),
            Profile::Tabulated(samples) => samples.iter().all(|s| s.is_finite()),
        }
    }

    /// True when the profile is identically zero.
    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Constant(c) => c.is_zero(),
            Profile::Tabulated(samples) => samples.iter().all(|s| s.is_zero()),
        }
    }
}

/// Physical parameters of the plant. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PlantConfig<R: Real> {
    lambda: R,
    mu: R,
    q: R,
    rho: R,
    sigma_pm: Profile<R>,
    sigma_mp: Profile<R>,
}

impl<R: Real> PlantConfig<R> {
    /// Validates `lambda > 0`, `mu > 0`, `q != 0` and finite profiles.
    pub fn new(
        lambda: R,
        mu: R,
        q: R,
        rho: R,
        sigma_pm: Profile<R>,
        sigma_mp: Profile<R>,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > R::zero()) {
            return Err(Error::InvalidPlant(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(mu.is_finite() && mu > R::zero()) {
            return Err(Error::InvalidPlant(format!("mu must be positive, got {mu}")));
        }
        if !q.is_finite() || q.is_zero() {
            return Err(Error::InvalidPlant(format!(
                "distal reflection q must be nonzero, got {q}"
            )));
        }
        if !rho.is_finite() {
            return Err(Error::InvalidPlant("rho must be finite".into()));
        }
        if !sigma_pm.is_finite() || !sigma_mp.is_finite() {
            return Err(Error::InvalidPlant("coupling profiles must be finite".into()));
        }
        Ok(Self {
            lambda,
            mu,
            q,
            rho,
            sigma_pm,
            sigma_mp,
        })
    }

    /// Uncoupled plant (`sigma_pm = sigma_mp = 0`): two transport equations
    /// interacting only through the boundary reflections.
    pub fn transport(lambda: R, mu: R, q: R, rho: R) -> Result<Self> {
        Self::new(
            lambda,
            mu,
            q,
            rho,
            Profile::Constant(R::zero()),
            Profile::Constant(R::zero()),
        )
    }

    pub fn lambda(&self) -> R {
        self.lambda
    }

    pub fn mu(&self) -> R {
        self.mu
    }

    pub fn q(&self) -> R {
        self.q
    }

    pub fn rho(&self) -> R {
        self.rho
    }

    pub fn sigma_pm(&self) -> &Profile<R> {
        &self.sigma_pm
    }

    pub fn sigma_mp(&self) -> &Profile<R> {
        &self.sigma_mp
    }

    /// Open-loop gain `rho * q`.
    pub fn open_loop_gain(&self) -> R {
        self.rho * self.q
    }

    /// True when both coupling profiles vanish identically.
    pub fn is_uncoupled(&self) -> bool {
        self.sigma_pm.is_zero() && self.sigma_mp.is_zero()
    }
}

/// Delay-robust stabilizability of the plant, decided by `|rho q|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilizabilityClass {
    /// `|rho q| > 1`: no feedback has a positive delay margin.
    NotDelayRobustlyStabilizable,
    /// `1/2 < |rho q| < 1`: delay-robust feedback exists but finite-time
    /// convergence has to be given up.
    NoFiniteTimeDelayRobust,
    /// `|rho q| < 1/2`: finite-time convergence and delay-robustness are
    /// compatible.
    FiniteTimeDelayRobust,
    /// `|rho q|` exactly 1/2 or 1. The classification is left open on these
    /// boundaries; comparisons are exact, callers wanting a margin must
    /// perturb the inputs themselves.
    CriticalBoundary,
}

/// Round-trip transport time `tau = 1/lambda + 1/mu`.
pub fn characteristic_time<R: Real>(plant: &PlantConfig<R>) -> R {
    plant.lambda.recip() + plant.mu.recip()
}

/// Classifies `|rho q|` against the 1/2 and 1 thresholds.
pub fn classify_open_loop_gain<R: Real>(rho: R, q: R) -> Result<StabilizabilityClass> {
    if q.is_zero() || !q.is_finite() || !rho.is_finite() {
        return Err(Error::Precondition(
            "classification needs a finite, nonzero distal reflection q".into(),
        ));
    }
    let gain = (rho * q).abs();
    let half = R::of(0.5);
    Ok(if gain == half || gain == R::one() {
        StabilizabilityClass::CriticalBoundary
    } else if gain > R::one() {
        StabilizabilityClass::NotDelayRobustlyStabilizable
    } else if gain > half {
        StabilizabilityClass::NoFiniteTimeDelayRobust
    } else {
        StabilizabilityClass::FiniteTimeDelayRobust
    })
}

/// Gain bound for the partially cancelling law: `|K| < (1 - |rho q|)/|q|`.
pub fn check_gain_bound<R: Real>(k: R, rho: R, q: R) -> Result<bool> {
    if q.is_zero() {
        return Err(Error::Precondition("gain bound needs q != 0".into()));
    }
    let gain = (rho * q).abs();
    if gain >= R::one() {
        return Err(Error::Precondition(format!(
            "gain bound needs |rho q| < 1, got {gain}"
        )));
    }
    Ok(k.abs() < (R::one() - gain) / q.abs())
}

/// Conditions on the first-order filter coefficients:
/// `a/b < (1 - |rho q|)/|rho q|` and `a < (1 - |rho q|)/|rho q|`.
pub fn check_filter_conditions<R: Real>(a: R, b: R, rho: R, q: R) -> Result<bool> {
    if b <= R::zero() {
        return Err(Error::Precondition(format!(
            "filter conditions need b > 0, got {b}"
        )));
    }
    let gain = (rho * q).abs();
    if gain.is_zero() {
        return Err(Error::Precondition("filter conditions need rho q != 0".into()));
    }
    if gain >= R::one() {
        return Err(Error::Precondition(format!(
            "filter conditions need |rho q| < 1, got {gain}"
        )));
    }
    let bound = (R::one() - gain) / gain;
    Ok(a / b < bound && a < bound)
}
