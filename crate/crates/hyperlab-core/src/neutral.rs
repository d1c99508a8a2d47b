//! Reduction of the closed loop to a scalar neutral delay equation.
//!
//! Through the backstepping transform and the method of characteristics, the
//! boundary trace `beta(t,1)` of the plant satisfies
//!
//! ```text
//! beta(t) = q rho beta(t - tau) + U0(t) - int_0^tau ntilde(nu) beta(t - nu) dnu
//! ```
//!
//! and substituting each control law (applied with delay `delta`) yields an
//! autonomous recursion in `beta` alone. This module builds those recursions
//! and marches them forward; the result is an independent oracle for the PDE
//! simulation and the time-domain counterpart of the spectral analysis.
//!
//! Terms originating from the control law carry an `onset` equal to the
//! actuation delay: the actuator is at rest before the loop closes
//! (`U = 0` for `t < delta`), so those terms switch on at `t = onset`,
//! matching the simulator's delay-line pre-history. With the gating, a
//! history covering `[-tau, 0]` always suffices.

use crate::kernel::FeedbackGains;
use crate::model::{characteristic_time, PlantConfig};
use crate::scalar::Real;
use crate::sim::ControlLaw;
use crate::{Error, Result};

/// `coeff * beta(t - delay)`, active for `t >= onset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerm<R: Real> {
    pub coeff: R,
    pub delay: R,
    pub onset: R,
}

/// One shifted copy of the distributed kernel:
/// `- weight * int_0^tau ntilde(nu) beta(t - nu - shift) dnu`, active for
/// `t >= onset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedTerm<R: Real> {
    pub weight: R,
    pub shift: R,
    pub onset: R,
}

/// Shared distributed kernel samples on a uniform `[0, tau]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedKernel<R: Real> {
    pub samples: Vec<R>,
    pub dnu: R,
    pub tau: R,
}

/// Scalar neutral recursion
/// `beta(t) = sum_i c_i beta(t - tau_i)
///           - sum_j w_j int_0^tau ntilde(nu) beta(t - nu - d_j) dnu`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeutralSpec<R: Real> {
    point_terms: Vec<PointTerm<R>>,
    kernel: Option<DistributedKernel<R>>,
    distributed_terms: Vec<DistributedTerm<R>>,
    description: String,
}

impl<R: Real> NeutralSpec<R> {
    /// Builds a spec from raw terms; point terms are sorted by delay and the
    /// kernel is checked for finiteness.
    pub fn new(
        mut point_terms: Vec<PointTerm<R>>,
        kernel: Option<DistributedKernel<R>>,
        distributed_terms: Vec<DistributedTerm<R>>,
        description: impl Into<String>,
    ) -> Result<Self> {
        point_terms.sort_by(|a, b| a.delay.partial_cmp(&b.delay).unwrap_or(std::cmp::Ordering::Equal));
        for term in &point_terms {
            if !(term.coeff.is_finite() && term.delay.is_finite() && term.delay >= R::zero()) {
                return Err(Error::Precondition(
                    "point terms need finite coefficients and nonnegative delays".into(),
                ));
            }
        }
        if let Some(k) = &kernel {
            if !k.tau.is_finite() || k.tau <= R::zero() || k.samples.len() < 2 {
                return Err(Error::Precondition(
                    "distributed kernel needs tau > 0 and at least 2 samples".into(),
                ));
            }
            if k.samples.iter().any(|s| !s.is_finite()) {
                return Err(Error::Precondition(
                    "distributed kernel samples must be finite".into(),
                ));
            }
        } else if !distributed_terms.is_empty() {
            return Err(Error::Precondition(
                "distributed terms given without a kernel".into(),
            ));
        }
        Ok(Self {
            point_terms,
            kernel,
            distributed_terms,
            description: description.into(),
        })
    }

    /// Point terms only, no distributed part.
    pub fn from_points(terms: &[(R, R)]) -> Result<Self> {
        Self::new(
            terms
                .iter()
                .map(|&(coeff, delay)| PointTerm {
                    coeff,
                    delay,
                    onset: R::zero(),
                })
                .collect(),
            None,
            Vec::new(),
            "point terms",
        )
    }

    pub fn point_terms(&self) -> &[PointTerm<R>] {
        &self.point_terms
    }

    pub fn kernel(&self) -> Option<&DistributedKernel<R>> {
        self.kernel.as_ref()
    }

    pub fn distributed_terms(&self) -> &[DistributedTerm<R>] {
        &self.distributed_terms
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Largest lookback any term performs relative to its onset; histories
    /// must reach at least this far into the past.
    pub fn history_span(&self) -> R {
        let mut span = R::zero();
        for t in &self.point_terms {
            span = span.max(t.delay - t.onset);
        }
        if let Some(k) = &self.kernel {
            for d in &self.distributed_terms {
                span = span.max(k.tau + d.shift - d.onset);
            }
        }
        span
    }
}

/// Samples of `beta(., 1)` on `[start, 0]` at the marching step.
#[derive(Debug, Clone)]
pub struct History<R: Real> {
    start: R,
    dt: R,
    values: Vec<R>,
}

impl<R: Real> History<R> {
    /// Constant history over `[-span, 0]`.
    pub fn constant(value: R, span: R, dt: R) -> Result<Self> {
        if !(span > R::zero() && dt > R::zero()) {
            return Err(Error::Precondition("history span and dt must be positive".into()));
        }
        let steps = (span / dt).ceil().to_usize().unwrap_or(1).max(1);
        Ok(Self {
            start: -dt * R::of_usize(steps),
            dt,
            values: vec![value; steps + 1],
        })
    }

    /// History induced by a transformed initial state of the plant: the
    /// characteristics give
    ///
    /// ```text
    /// beta(s, 1) = beta0(1 + mu s)                 for s in [-1/mu, 0]
    /// beta(s, 1) = alpha0(-lambda (s + 1/mu)) / q  for s in [-tau, -1/mu)
    /// ```
    ///
    /// Initial data with `u0(0) = q v0(0)` makes the two branches agree at
    /// the switch; the sample at `s = -1/mu` takes the `beta0` branch.
    pub fn from_initial_state(
        alpha0: &[R],
        beta0: &[R],
        plant: &PlantConfig<R>,
        dt: R,
    ) -> Result<Self> {
        if alpha0.len() != beta0.len() || alpha0.len() < 2 {
            return Err(Error::GridMismatch(
                "transformed initial state arrays must match".into(),
            ));
        }
        let tau = characteristic_time(plant);
        let steps = (tau / dt).round().to_usize().unwrap_or(0);
        let tol = R::of(1e-9);
        if steps == 0 || (tau / dt - R::of_usize(steps)).abs() > tol * (tau / dt) {
            return Err(Error::Commensurability {
                quantity: "characteristic time tau",
                value: tau.to_f64().unwrap_or(f64::NAN),
                dt: dt.to_f64().unwrap_or(f64::NAN),
                suggested_n: None,
            });
        }
        let (lambda, mu, q) = (plant.lambda(), plant.mu(), plant.q());
        let split = -mu.recip();
        let values = (0..=steps)
            .map(|k| {
                let s = -tau + dt * R::of_usize(k);
                if s >= split - dt * R::of(1e-9) {
                    crate::kernel::interp_uniform(beta0, R::zero(), R::one(), R::one() + mu * s)
                } else {
                    crate::kernel::interp_uniform(
                        alpha0,
                        R::zero(),
                        R::one(),
                        -lambda * (s + mu.recip()),
                    ) / q
                }
            })
            .collect();
        Ok(Self {
            start: -tau,
            dt,
            values,
        })
    }

    pub fn start(&self) -> R {
        self.start
    }

    /// Linear interpolation at `t in [start, 0]`.
    pub fn sample(&self, t: R) -> R {
        crate::kernel::interp_uniform(&self.values, self.start, R::zero(), t)
    }

    /// Exact sample at step index `step <= 0` (clamped at the far end).
    fn at_step(&self, step: isize) -> R {
        let start_step = (self.start / self.dt)
            .round()
            .to_isize()
            .unwrap_or(isize::MIN / 2);
        let idx = (step - start_step).max(0) as usize;
        self.values[idx.min(self.values.len() - 1)]
    }
}

/// Builds the closed-loop recursion for `beta(t,1)` under the given law and
/// actuation delay.
///
/// * open loop: `beta(t) = q rho beta(t-tau) - int ntilde beta(t-nu)`;
/// * full cancellation: subtracts the same structure re-delayed by `delta`
///   with coefficient `rho q`;
/// * partial cancellation: the re-delayed point coefficient is `q K`;
/// * static boundary gain (uncoupled plant only):
///   `beta(t) = rho q beta(t-tau) - K q beta(t-tau-delta)`.
///
/// The filtered law closes to a first-order neutral equation and is not
/// reduced here; its characteristic function lives in the spectral module.
pub fn reduce_closed_loop<R: Real>(
    plant: &PlantConfig<R>,
    gains: Option<&FeedbackGains<R>>,
    law: &ControlLaw<R>,
    delta: R,
) -> Result<NeutralSpec<R>> {
    if delta < R::zero() || !delta.is_finite() {
        return Err(Error::Precondition("delay must be finite and >= 0".into()));
    }
    let tau = characteristic_time(plant);
    let q = plant.q();
    let rho = plant.rho();

    let kernel = match gains {
        Some(g) => {
            if (g.tau() - tau).abs() > R::of(1e-9) * tau {
                return Err(Error::GridMismatch(format!(
                    "gains built for tau = {} but plant has tau = {tau}",
                    g.tau()
                )));
            }
            let all_zero = g.ntilde().iter().all(|x| x.is_zero());
            (!all_zero).then(|| DistributedKernel {
                samples: g.ntilde().to_vec(),
                dnu: g.dnu(),
                tau: g.tau(),
            })
        }
        None => {
            if !plant.is_uncoupled() {
                return Err(Error::Precondition(
                    "reduction of a coupled plant needs the feedback gains".into(),
                ));
            }
            None
        }
    };
    let has_kernel = kernel.is_some();
    let dist = |with_delta: bool| -> Vec<DistributedTerm<R>> {
        if !has_kernel {
            return Vec::new();
        }
        let mut terms = vec![DistributedTerm {
            weight: R::one(),
            shift: R::zero(),
            onset: R::zero(),
        }];
        if with_delta {
            terms.push(DistributedTerm {
                weight: -R::one(),
                shift: delta,
                onset: delta,
            });
        }
        terms
    };
    let plant_term = PointTerm {
        coeff: q * rho,
        delay: tau,
        onset: R::zero(),
    };

    match law {
        ControlLaw::OpenLoop => NeutralSpec::new(
            vec![plant_term],
            kernel,
            dist(false),
            "open loop",
        ),
        ControlLaw::FullCancellation => NeutralSpec::new(
            vec![
                plant_term,
                PointTerm {
                    coeff: -rho * q,
                    delay: tau + delta,
                    onset: delta,
                },
            ],
            kernel,
            dist(true),
            "full cancellation",
        ),
        ControlLaw::PartialCancellation { k } => NeutralSpec::new(
            vec![
                plant_term,
                PointTerm {
                    coeff: -q * *k,
                    delay: tau + delta,
                    onset: delta,
                },
            ],
            kernel,
            dist(true),
            "partial cancellation",
        ),
        ControlLaw::StaticBoundary { k } => {
            if !plant.is_uncoupled() {
                return Err(Error::Unsupported(
                    "static boundary gain reduces to a pure point recursion only for an \
                     uncoupled plant (sigma = 0)"
                        .into(),
                ));
            }
            NeutralSpec::new(
                vec![
                    plant_term,
                    PointTerm {
                        coeff: -*k * q,
                        delay: tau + delta,
                        onset: delta,
                    },
                ],
                None,
                Vec::new(),
                "static boundary gain",
            )
        }
        ControlLaw::Filtered { .. } => Err(Error::Unsupported(
            "the filtered law closes to a first-order neutral equation; it is represented \
             spectrally, not reduced for time marching"
                .into(),
        )),
    }
}

/// Time series produced by [`simulate_neutral`].
#[derive(Debug, Clone)]
pub struct NeutralTrace<R: Real> {
    pub t: Vec<R>,
    pub beta: Vec<R>,
}

impl<R: Real> NeutralTrace<R> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Largest `|beta|` over samples with `t` in `[lo, hi]`.
    pub fn max_abs_on(&self, lo: R, hi: R) -> R {
        self.t
            .iter()
            .zip(&self.beta)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .fold(R::zero(), |acc, (_, b)| acc.max(b.abs()))
    }
}

/// Marches the recursion to `horizon` with step `dt`.
///
/// Every point delay, distributed shift and onset must be an integer
/// multiple of `dt`: neutral equations are sensitive to delay perturbations,
/// so incommensurate reads are rejected instead of silently rounded. The
/// distributed integral is a trapezoid on the kernel grid with the past
/// trajectory interpolated linearly at the quadrature nodes; quadrature
/// reads that touch the still-unknown current sample (the `nu = 0` endpoint)
/// stay on the left-hand side and the resulting scalar linear equation is
/// solved exactly.
pub fn simulate_neutral<R: Real>(
    spec: &NeutralSpec<R>,
    history: &History<R>,
    horizon: R,
    dt: R,
) -> Result<NeutralTrace<R>> {
    if !(dt > R::zero() && horizon > R::zero()) {
        return Err(Error::Precondition("horizon and dt must be positive".into()));
    }
    let tol = R::of(1e-9);
    let commensurate = |value: R, what: &'static str| -> Result<()> {
        let ratio = value / dt;
        if (ratio - ratio.round()).abs() > tol * ratio.max(R::one()) {
            return Err(Error::Commensurability {
                quantity: what,
                value: value.to_f64().unwrap_or(f64::NAN),
                dt: dt.to_f64().unwrap_or(f64::NAN),
                suggested_n: None,
            });
        }
        Ok(())
    };
    for term in &spec.point_terms {
        commensurate(term.delay, "point-term delay")?;
        commensurate(term.onset, "point-term onset")?;
    }
    for term in &spec.distributed_terms {
        commensurate(term.shift, "distributed-term shift")?;
        commensurate(term.onset, "distributed-term onset")?;
    }
    if history.start > -spec.history_span() + dt * tol {
        return Err(Error::Precondition(format!(
            "history covers [{}, 0] but the spec looks back {}",
            history.start,
            spec.history_span()
        )));
    }

    let steps = (horizon / dt + R::of(1e-9)).floor().to_usize().unwrap_or(0);
    let mut t_series = Vec::with_capacity(steps + 1);
    let mut beta: Vec<R> = Vec::with_capacity(steps + 1);
    t_series.push(R::zero());
    beta.push(history.sample(R::zero()));

    let as_steps = |value: R| -> isize { (value / dt).round().to_isize().unwrap_or(0) };
    let point_steps: Vec<(isize, isize)> = spec
        .point_terms
        .iter()
        .map(|t| (as_steps(t.delay), as_steps(t.onset)))
        .collect();
    let dist_steps: Vec<(isize, isize)> = spec
        .distributed_terms
        .iter()
        .map(|t| (as_steps(t.shift), as_steps(t.onset)))
        .collect();
    // When the kernel grid matches the marching step, quadrature nodes land
    // exactly on computed samples and reads are index lookups.
    let kernel_on_grid = spec
        .kernel
        .as_ref()
        .map(|k| ((k.dnu / dt) - R::one()).abs() <= tol)
        .unwrap_or(false);

    // Read at integer step index, splitting off any dependence on the
    // current unknown sample: returns (explicit part, coefficient on it).
    let read_step = |beta: &[R], k: usize, idx: isize| -> (R, R) {
        if idx < 0 {
            (history.at_step(idx), R::zero())
        } else if (idx as usize) >= k {
            (R::zero(), R::one())
        } else {
            (beta[idx as usize], R::zero())
        }
    };
    // Interpolated read at time s for off-grid quadrature nodes.
    let read_time = |beta: &[R], k: usize, s: R| -> (R, R) {
        if s < R::zero() {
            (history.sample(s), R::zero())
        } else {
            let pos = s / dt;
            let snapped = pos.round();
            let pos = if (pos - snapped).abs() <= tol * pos.max(R::one()) {
                snapped
            } else {
                pos
            };
            let cell = pos.floor().to_usize().unwrap_or(0);
            let frac = pos - R::of_usize(cell);
            if cell >= k {
                (R::zero(), R::one())
            } else if cell + 1 >= k && frac > R::zero() {
                (beta[cell] * (R::one() - frac), frac)
            } else {
                let hi = if frac > R::zero() { beta[cell + 1] } else { beta[cell] };
                (beta[cell] + (hi - beta[cell]) * frac, R::zero())
            }
        }
    };

    let half = R::of(0.5);
    for k in 1..=steps {
        let t = dt * R::of_usize(k);
        let ki = k as isize;
        let mut rhs = R::zero();
        let mut implicit = R::zero();
        for (term, &(delay_steps, onset_steps)) in spec.point_terms.iter().zip(&point_steps) {
            if ki < onset_steps {
                continue;
            }
            let (value, on_current) = read_step(&beta, k, ki - delay_steps);
            rhs += term.coeff * value;
            implicit += term.coeff * on_current;
        }
        if let Some(kernel) = &spec.kernel {
            let m = kernel.samples.len() - 1;
            for (term, &(shift_steps, onset_steps)) in
                spec.distributed_terms.iter().zip(&dist_steps)
            {
                if ki < onset_steps {
                    continue;
                }
                let mut quad = R::zero();
                let mut quad_implicit = R::zero();
                for (idx, &sample) in kernel.samples.iter().enumerate() {
                    let w = if idx == 0 || idx == m { half } else { R::one() };
                    let (value, on_current) = if kernel_on_grid {
                        read_step(&beta, k, ki - idx as isize - shift_steps)
                    } else {
                        let nu = kernel.dnu * R::of_usize(idx);
                        read_time(&beta, k, t - nu - term.shift)
                    };
                    quad += w * sample * value;
                    quad_implicit += w * sample * on_current;
                }
                rhs -= term.weight * kernel.dnu * quad;
                implicit -= term.weight * kernel.dnu * quad_implicit;
            }
        }
        let denom = R::one() - implicit;
        let value = rhs / denom;
        if !value.is_finite() {
            return Err(Error::NonFiniteState {
                t: t.to_f64().unwrap_or(f64::NAN),
            });
        }
        t_series.push(t);
        beta.push(value);
    }

    Ok(NeutralTrace { t: t_series, beta })
}
