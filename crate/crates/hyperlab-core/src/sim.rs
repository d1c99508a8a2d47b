//! Semi-Lagrangian time-domain simulation of the closed loop.
//!
//! Each step traces the characteristics backward (`u` rightward by
//! `lambda dt`, `v` leftward by `mu dt`) with linear interpolation at the
//! foot, integrates the coupling source along the foot-to-head segment with
//! the trapezoidal rule on the previous step's opposite-family values, and
//! then applies the boundary conditions `u(t,0) = q v(t,0)` and
//! `v(t,1) = rho u(t,1) + U(t - delta)`.
//!
//! The time step is `dt = dx / max(lambda, mu)`, so the faster family moves
//! exactly one cell per step and pure transport is reproduced without
//! numerical diffusion. The delay and both boundary transit times must be
//! integer multiples of `dt`; incommensurate configurations are rejected at
//! construction (with a suggested resolution) rather than silently rounding
//! the delay, since the instability phenomena under study are sensitive to
//! exactly such perturbations.
//!
//! When `delta = 0` the commanded control applies instantaneously and the
//! boundary value `v(t,1)` appears on both sides (the kernel quadrature of a
//! backstepping law reads `v(t,1)` with trapezoid weight `h/2`); the step
//! resolves that scalar linear equation exactly instead of lagging the
//! quadrature by one step.


use crate::kernel::KernelSet;
use crate::model::{PlantConfig, Profile};
use crate::scalar::Real;
use crate::{Error, Result};

/// Boundary feedback laws available to the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlLaw<R: Real> {
    /// `U = 0`.
    OpenLoop,
    /// Backstepping law cancelling the proximal reflection and the in-domain
    /// couplings: `U = -rho u(t,1) + int Kvu(1,xi) u + Kvv(1,xi) v dxi`.
    FullCancellation,
    /// Backstepping law keeping `rho - K` of the proximal reflection:
    /// `U = -K u(t,1) - (rho - K) int Kuu(1,xi) u + Kuv(1,xi) v dxi
    ///      + int Kvu(1,xi) u + Kvv(1,xi) v dxi`.
    PartialCancellation { k: R },
    /// Plain boundary gain `U = -K u(t,1)`.
    StaticBoundary { k: R },
    /// First-order filtered reflection cancellation,
    /// `U1(s) = -(1 + a s)/(1 + b s) rho u(1, s)`.
    Filtered { a: R, b: R },
}

impl<R: Real> ControlLaw<R> {
    /// True for the kernel-based laws.
    pub fn needs_kernels(&self) -> bool {
        matches!(
            self,
            ControlLaw::FullCancellation | ControlLaw::PartialCancellation { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlLaw::PartialCancellation { k } | ControlLaw::StaticBoundary { k } => {
                if !k.is_finite() {
                    return Err(Error::Precondition("control gain K must be finite".into()));
                }
            }
            ControlLaw::Filtered { a, b }
                if (!a.is_finite() || !b.is_finite() || *b <= R::zero()) => {
                    return Err(Error::Precondition(
                        "filtered law needs finite a and b > 0".into(),
                    ));
                }
            _ => {}
        }
        Ok(())
    }
}

/// State of the plant at one time level.
#[derive(Debug, Clone)]
pub struct PdeState<R: Real> {
    pub u: Vec<R>,
    pub v: Vec<R>,
    pub t: R,
}

impl<R: Real> PdeState<R> {
    pub fn new(u: Vec<R>, v: Vec<R>, t: R) -> Result<Self> {
        if u.len() != v.len() || u.len() < 2 {
            return Err(Error::GridMismatch(format!(
                "state arrays must have equal length >= 2, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { u, v, t })
    }

    /// Samples the initial profiles on an `n + 1` node grid.
    pub fn from_profiles(u0: &Profile<R>, v0: &Profile<R>, n: usize, t: R) -> Self {
        let h = R::of_usize(n).recip();
        let sample = |p: &Profile<R>| (0..=n).map(|i| p.eval(R::of_usize(i) * h)).collect();
        Self {
            u: sample(u0),
            v: sample(v0),
            t,
        }
    }

    pub fn n(&self) -> usize {
        self.u.len() - 1
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Trapezoidal `L2` norm of the state, `sqrt(int_0^1 u^2 + v^2 dx)`.
pub fn l2_norm<R: Real>(state: &PdeState<R>) -> R {
    let n = state.n();
    let h = R::of_usize(n).recip();
    let half = R::of(0.5);
    let mut acc = R::zero();
    for i in 0..=n {
        let w = if i == 0 || i == n { half } else { R::one() };
        acc += w * (state.u[i] * state.u[i] + state.v[i] * state.v[i]);
    }
    (acc * h).sqrt()
}

/// Ring buffer of past control samples implementing the actuation delay.
#[derive(Debug, Clone)]
pub struct DelayLine<R: Real> {
    delta: R,
    steps: usize,
    prehistory: R,
    buf: std::collections::VecDeque<R>,
}

impl<R: Real> DelayLine<R> {
    /// `delta` must be an exact integer multiple of `dt` (to relative
    /// roundoff); reads before the buffer fills return `prehistory`.
    pub fn new(delta: R, dt: R, prehistory: R) -> Result<Self> {
        if delta < R::zero() {
            return Err(Error::Precondition("delay must be nonnegative".into()));
        }
        let ratio = delta / dt;
        let steps_r = ratio.round();
        let tol = R::of(1e-9) * ratio.max(R::one());
        if (ratio - steps_r).abs() > tol {
            return Err(Error::Commensurability {
                quantity: "actuation delay delta",
                value: delta.to_f64().unwrap_or(f64::NAN),
                dt: dt.to_f64().unwrap_or(f64::NAN),
                suggested_n: None,
            });
        }
        let steps = steps_r.to_usize().unwrap_or(0);
        Ok(Self {
            delta,
            steps,
            prehistory,
            buf: std::collections::VecDeque::with_capacity(steps + 1),
        })
    }

    pub fn delta(&self) -> R {
        self.delta
    }

    /// Delay expressed in simulator steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Oldest buffered command, or the pre-history value while filling.
    /// Only meaningful for `steps > 0`; the zero-delay path short-circuits in
    /// the stepper.
    pub fn read(&mut self) -> R {
        if self.buf.len() == self.steps {
            self.buf.pop_front().unwrap_or(self.prehistory)
        } else {
            self.prehistory
        }
    }

    pub fn push(&mut self, command: R) {
        if self.steps > 0 {
            self.buf.push_back(command);
        }
    }
}

/// Internal state of the first-order control filter.
#[derive(Debug, Clone, Copy, Default)]
pub struct FilterState<R: Real> {
    value: R,
    u1_prev: Option<R>,
}

impl<R: Real> FilterState<R> {
    pub fn new() -> Self {
        Self {
            value: R::zero(),
            u1_prev: None,
        }
    }

    /// Backward-Euler update of `b U1' + U1 = -rho (u1 + a u1')` with a
    /// backward difference for `u1'` (zero on the first sample).
    fn advance(&mut self, a: R, b: R, rho: R, u1: R, dt: R) -> R {
        let du = match self.u1_prev {
            Some(prev) => (u1 - prev) / dt,
            None => R::zero(),
        };
        let c = b / dt;
        self.value = (c * self.value - rho * (u1 + a * du)) / (c + R::one());
        self.u1_prev = Some(u1);
        self.value
    }
}

/// Sampled time series of a run.
#[derive(Debug, Clone)]
pub struct TraceRecord<R: Real> {
    pub t: Vec<R>,
    pub l2: Vec<R>,
    pub u1: Vec<R>,
    pub v1: Vec<R>,
    pub u_cmd: Vec<R>,
    pub u_applied: Vec<R>,
    /// `beta(t, 1)` through the backstepping transform; present when kernels
    /// were supplied.
    pub beta1: Option<Vec<R>>,
}

impl<R: Real> TraceRecord<R> {
    fn with_capacity(rows: usize, with_beta: bool) -> Self {
        Self {
            t: Vec::with_capacity(rows),
            l2: Vec::with_capacity(rows),
            u1: Vec::with_capacity(rows),
            v1: Vec::with_capacity(rows),
            u_cmd: Vec::with_capacity(rows),
            u_applied: Vec::with_capacity(rows),
            beta1: with_beta.then(|| Vec::with_capacity(rows)),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `L2` value at the last sample with `t <= time` (clamped to the start).
    pub fn l2_at(&self, time: R) -> R {
        let mut out = self.l2[0];
        for (t, l2) in self.t.iter().zip(&self.l2) {
            if *t <= time {
                out = *l2;
            } else {
                break;
            }
        }
        out
    }

    pub fn max_l2(&self) -> R {
        self.l2.iter().fold(R::zero(), |acc, x| acc.max(*x))
    }
}

/// Control evaluation split as `U = offset + v1_weight * v(t,1)`, isolating
/// the boundary sample so the zero-delay boundary equation can be solved
/// exactly.
struct ControlSplit<R: Real> {
    offset: R,
    v1_weight: R,
}

/// Trapezoid over the top kernel row against a state array, with the last
/// node optionally excluded (weight moved into the implicit split).
fn top_row_quadrature<R: Real>(
    kernels: &KernelSet<R>,
    row: impl Fn(&KernelSet<R>, usize) -> R,
    values: &[R],
    skip_last: bool,
) -> R {
    let n = kernels.n();
    let h: R = kernels.grid().spacing();
    let half = R::of(0.5);
    let mut acc = R::zero();
    for (j, &val) in values.iter().enumerate() {
        if j == n && skip_last {
            continue;
        }
        let w = if j == 0 || j == n { half } else { R::one() };
        acc += w * row(kernels, j) * val;
    }
    acc * h
}

fn control_split<R: Real>(
    law: &ControlLaw<R>,
    u: &[R],
    v: &[R],
    plant: &PlantConfig<R>,
    kernels: Option<&KernelSet<R>>,
    filter: &mut FilterState<R>,
    dt: R,
) -> Result<ControlSplit<R>> {
    let n = u.len() - 1;
    let rho = plant.rho();
    fn need<R: Real>(kernels: Option<&KernelSet<R>>) -> Result<&KernelSet<R>> {
        kernels.ok_or_else(|| {
            Error::Precondition("kernel-based control law requires a solved KernelSet".into())
        })
    }
    Ok(match law {
        ControlLaw::OpenLoop => ControlSplit {
            offset: R::zero(),
            v1_weight: R::zero(),
        },
        ControlLaw::FullCancellation => {
            let k = need(kernels)?;
            if k.n() != n {
                return Err(Error::GridMismatch(format!(
                    "kernels on n = {} but state on n = {n}",
                    k.n()
                )));
            }
            let h: R = k.grid().spacing();
            let qu = top_row_quadrature(k, |k, j| k.kvu().get(n, j), u, false);
            let qv = top_row_quadrature(k, |k, j| k.kvv().get(n, j), v, true);
            ControlSplit {
                offset: -rho * u[n] + qu + qv,
                v1_weight: h * R::of(0.5) * k.kvv().get(n, n),
            }
        }
        ControlLaw::PartialCancellation { k: gain } => {
            let k = need(kernels)?;
            if k.n() != n {
                return Err(Error::GridMismatch(format!(
                    "kernels on n = {} but state on n = {n}",
                    k.n()
                )));
            }
            let h: R = k.grid().spacing();
            let rest = rho - *gain;
            let quu = top_row_quadrature(k, |k, j| k.kuu().get(n, j), u, false);
            let quv = top_row_quadrature(k, |k, j| k.kuv().get(n, j), v, true);
            let qvu = top_row_quadrature(k, |k, j| k.kvu().get(n, j), u, false);
            let qvv = top_row_quadrature(k, |k, j| k.kvv().get(n, j), v, true);
            ControlSplit {
                offset: -*gain * u[n] - rest * (quu + quv) + qvu + qvv,
                v1_weight: h * R::of(0.5) * (k.kvv().get(n, n) - rest * k.kuv().get(n, n)),
            }
        }
        ControlLaw::StaticBoundary { k } => ControlSplit {
            offset: -*k * u[n],
            v1_weight: R::zero(),
        },
        ControlLaw::Filtered { a, b } => ControlSplit {
            offset: filter.advance(*a, *b, rho, u[n], dt),
            v1_weight: R::zero(),
        },
    })
}

/// Commanded control value `U(t)` for the given state.
///
/// Kernel integrals are evaluated with the trapezoidal rule on the state
/// grid. For the filtered law this advances the one-dimensional filter state
/// by one sample.
pub fn eval_control<R: Real>(
    law: &ControlLaw<R>,
    state: &PdeState<R>,
    plant: &PlantConfig<R>,
    kernels: Option<&KernelSet<R>>,
    filter: &mut FilterState<R>,
    dt: R,
) -> Result<R> {
    let split = control_split(law, &state.u, &state.v, plant, kernels, filter, dt)?;
    Ok(split.offset + split.v1_weight * state.v[state.n()])
}

/// Backstepping transform of a state: returns the `(alpha, beta)` arrays,
/// `alpha(x) = u(x) - int_0^x Kuu u + Kuv v`, `beta` analogously, with
/// trapezoidal quadrature on the shared grid.
pub fn transform_state<R: Real>(
    state: &PdeState<R>,
    kernels: &KernelSet<R>,
) -> Result<(Vec<R>, Vec<R>)> {
    let n = state.n();
    if kernels.n() != n {
        return Err(Error::GridMismatch(format!(
            "kernels on n = {} but state on n = {n}",
            kernels.n()
        )));
    }
    let h: R = kernels.grid().spacing();
    let half = R::of(0.5);
    let mut alpha = vec![R::zero(); n + 1];
    let mut beta = vec![R::zero(); n + 1];
    for i in 0..=n {
        let mut au = R::zero();
        let mut bv = R::zero();
        if i > 0 {
            for j in 0..=i {
                let w = if j == 0 || j == i { half } else { R::one() };
                au += w
                    * (kernels.kuu().get(i, j) * state.u[j] + kernels.kuv().get(i, j) * state.v[j]);
                bv += w
                    * (kernels.kvu().get(i, j) * state.u[j] + kernels.kvv().get(i, j) * state.v[j]);
            }
        }
        alpha[i] = state.u[i] - h * au;
        beta[i] = state.v[i] - h * bv;
    }
    Ok((alpha, beta))
}

/// Inverse transform: reconstructs `(u, v)` from `(alpha, beta)` through the
/// inverse kernels, `u(x) = alpha(x) + int_0^x Laa alpha + Lab beta`.
pub fn inverse_transform_state<R: Real>(
    alpha: &[R],
    beta: &[R],
    inverse: &crate::kernel::InverseKernelSet<R>,
) -> Result<(Vec<R>, Vec<R>)> {
    let n = alpha.len() - 1;
    if inverse.grid().n() != n || beta.len() != alpha.len() {
        return Err(Error::GridMismatch(
            "inverse kernels and transformed state must share the grid".into(),
        ));
    }
    let h: R = inverse.grid().spacing();
    let half = R::of(0.5);
    let mut u = vec![R::zero(); n + 1];
    let mut v = vec![R::zero(); n + 1];
    for i in 0..=n {
        let mut su = R::zero();
        let mut sv = R::zero();
        if i > 0 {
            for j in 0..=i {
                let w = if j == 0 || j == i { half } else { R::one() };
                su += w * (inverse.laa().get(i, j) * alpha[j] + inverse.lab().get(i, j) * beta[j]);
                sv += w * (inverse.lba().get(i, j) * alpha[j] + inverse.lbb().get(i, j) * beta[j]);
            }
        }
        u[i] = alpha[i] + h * su;
        v[i] = beta[i] + h * sv;
    }
    Ok((u, v))
}

/// `beta(t, 1)` of a state: the transform evaluated on the top row only.
pub fn beta_at_one<R: Real>(state: &PdeState<R>, kernels: &KernelSet<R>) -> Result<R> {
    let n = state.n();
    if kernels.n() != n {
        return Err(Error::GridMismatch(format!(
            "kernels on n = {} but state on n = {n}",
            kernels.n()
        )));
    }
    let qu = top_row_quadrature(kernels, |k, j| k.kvu().get(n, j), &state.u, false);
    let qv = top_row_quadrature(kernels, |k, j| k.kvv().get(n, j), &state.v, false);
    Ok(state.v[n] - qu - qv)
}

/// Grid/time-step bundle with the commensurability checks applied.
#[derive(Debug, Clone, Copy)]
pub struct SimGrid<R: Real> {
    pub n: usize,
    pub dt: R,
    pub delay_steps: usize,
}

impl<R: Real> SimGrid<R> {
    /// `dt = dx / max(lambda, mu)`; requires `1/lambda`, `1/mu` and `delta`
    /// to be integer multiples of `dt`. On failure the error carries the
    /// nearest larger `n` that would satisfy all three.
    pub fn new(plant: &PlantConfig<R>, n: usize, delta: R) -> Result<Self> {
        if n < 2 {
            return Err(Error::Precondition(format!("simulation needs n >= 2, got {n}")));
        }
        if !(delta.is_finite() && delta >= R::zero()) {
            return Err(Error::Precondition("delay must be finite and >= 0".into()));
        }
        match Self::try_build(plant, n, delta) {
            Ok(grid) => Ok(grid),
            Err((quantity, value, dt)) => {
                let suggested_n = (n + 1..=n.saturating_mul(64))
                    .find(|&cand| Self::try_build(plant, cand, delta).is_ok());
                Err(Error::Commensurability {
                    quantity,
                    value: value.to_f64().unwrap_or(f64::NAN),
                    dt: dt.to_f64().unwrap_or(f64::NAN),
                    suggested_n,
                })
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn try_build(plant: &PlantConfig<R>, n: usize, delta: R) -> std::result::Result<Self, (&'static str, R, R)> {
        let h = R::of_usize(n).recip();
        let dt = h / plant.lambda().max(plant.mu());
        let tol = R::of(1e-9);
        let check = |value: R, what: &'static str| -> std::result::Result<R, (&'static str, R, R)> {
            let ratio = value / dt;
            let rounded = ratio.round();
            if (ratio - rounded).abs() > tol * ratio.max(R::one()) {
                Err((what, value, dt))
            } else {
                Ok(rounded)
            }
        };
        check(plant.lambda().recip(), "transit time 1/lambda")?;
        check(plant.mu().recip(), "transit time 1/mu")?;
        let delay_steps = check(delta, "actuation delay delta")?;
        Ok(Self {
            n,
            dt,
            delay_steps: delay_steps.to_usize().unwrap_or(0),
        })
    }
}

/// Incremental simulator; [`simulate`] drives it to a horizon and collects
/// the trace.
pub struct Simulator<'a, R: Real> {
    plant: &'a PlantConfig<R>,
    law: ControlLaw<R>,
    kernels: Option<&'a KernelSet<R>>,
    grid: SimGrid<R>,
    delay: DelayLine<R>,
    filter: FilterState<R>,
    state: PdeState<R>,
    step_index: usize,
    // Node samples of the profiles at heads and characteristic feet.
    sp_node: Vec<R>,
    sm_node: Vec<R>,
    sp_foot: Vec<R>,
    sm_foot: Vec<R>,
    cu: R,
    cv: R,
    last_cmd: R,
    last_applied: R,
}

impl<'a, R: Real> Simulator<'a, R> {
    pub fn new(
        plant: &'a PlantConfig<R>,
        law: ControlLaw<R>,
        kernels: Option<&'a KernelSet<R>>,
        delta: R,
        initial: PdeState<R>,
        n: usize,
    ) -> Result<Self> {
        law.validate()?;
        if law.needs_kernels() && kernels.is_none() {
            return Err(Error::Precondition(
                "kernel-based control law requires a solved KernelSet".into(),
            ));
        }
        if let Some(k) = kernels {
            if k.n() != n {
                return Err(Error::GridMismatch(format!(
                    "kernels on n = {} but simulation on n = {n}",
                    k.n()
                )));
            }
        }
        if initial.n() != n {
            return Err(Error::GridMismatch(format!(
                "initial state on n = {} but simulation on n = {n}",
                initial.n()
            )));
        }
        if !initial.is_finite() {
            return Err(Error::Precondition("initial state must be finite".into()));
        }
        let grid = SimGrid::new(plant, n, delta)?;
        let mut delay = DelayLine::new(delta, grid.dt, R::zero())?;

        let h = R::of_usize(n).recip();
        let cu = plant.lambda() * grid.dt / h;
        let cv = plant.mu() * grid.dt / h;
        let coord = |i: usize| R::of_usize(i) * h;
        let sp_node: Vec<R> = (0..=n).map(|i| plant.sigma_pm().eval(coord(i))).collect();
        let sm_node: Vec<R> = (0..=n).map(|i| plant.sigma_mp().eval(coord(i))).collect();
        let sp_foot: Vec<R> = (0..=n)
            .map(|i| plant.sigma_pm().eval(coord(i) - cu * h))
            .collect();
        let sm_foot: Vec<R> = (0..=n)
            .map(|i| plant.sigma_mp().eval(coord(i) + cv * h))
            .collect();

        let mut filter = FilterState::new();
        // Command at t = 0, from the initial data; it is what a delayed
        // actuator will receive delta seconds in.
        let split = control_split(
            &law,
            &initial.u,
            &initial.v,
            plant,
            kernels,
            &mut filter,
            grid.dt,
        )?;
        let cmd0 = split.offset + split.v1_weight * initial.v[n];
        delay.push(cmd0);
        let applied0 = if grid.delay_steps == 0 { cmd0 } else { R::zero() };

        Ok(Self {
            plant,
            law,
            kernels,
            grid,
            delay,
            filter,
            state: initial,
            step_index: 0,
            sp_node,
            sm_node,
            sp_foot,
            sm_foot,
            cu,
            cv,
            last_cmd: cmd0,
            last_applied: applied0,
        })
    }

    pub fn state(&self) -> &PdeState<R> {
        &self.state
    }

    pub fn dt(&self) -> R {
        self.grid.dt
    }

    pub fn last_command(&self) -> R {
        self.last_cmd
    }

    pub fn last_applied(&self) -> R {
        self.last_applied
    }

    /// Advances one time step.
    pub fn step(&mut self) -> Result<()> {
        let n = self.grid.n;
        let dt = self.grid.dt;
        let half = R::of(0.5);
        let (u, v) = (&self.state.u, &self.state.v);

        let mut u_next = vec![R::zero(); n + 1];
        let mut v_next = vec![R::zero(); n + 1];

        // Transport with linear interpolation at the foot plus trapezoidal
        // source integration using the previous step's opposite family.
        let cu = self.cu;
        let cv = self.cv;
        for i in 1..=n {
            let u_foot = u[i - 1] * cu + u[i] * (R::one() - cu);
            let v_at_foot = v[i - 1] * cu + v[i] * (R::one() - cu);
            let src =
                dt * half * (self.sp_foot[i] * v_at_foot + self.sp_node[i] * v[i]);
            u_next[i] = u_foot + src;
        }
        for i in 0..n {
            let v_foot = v[i + 1] * cv + v[i] * (R::one() - cv);
            let u_at_foot = u[i + 1] * cv + u[i] * (R::one() - cv);
            let src =
                dt * half * (self.sm_foot[i] * u_at_foot + self.sm_node[i] * u[i]);
            v_next[i] = v_foot + src;
        }

        u_next[0] = self.plant.q() * v_next[0];

        // Close the actuated boundary.
        let split = control_split(
            &self.law,
            &u_next,
            &v_next,
            self.plant,
            self.kernels,
            &mut self.filter,
            dt,
        )?;
        let (cmd, applied);
        if self.grid.delay_steps == 0 {
            // v(t,1) = rho u(t,1) + U(t) with U reading v(t,1) through the
            // quadrature: a scalar linear equation.
            let denom = R::one() - split.v1_weight;
            let v1 = (self.plant.rho() * u_next[n] + split.offset) / denom;
            v_next[n] = v1;
            cmd = split.offset + split.v1_weight * v1;
            applied = cmd;
        } else {
            applied = self.delay.read();
            v_next[n] = self.plant.rho() * u_next[n] + applied;
            cmd = split.offset + split.v1_weight * v_next[n];
            self.delay.push(cmd);
        }

        self.step_index += 1;
        self.state.u = u_next;
        self.state.v = v_next;
        self.state.t = R::of_usize(self.step_index) * dt;
        self.last_cmd = cmd;
        self.last_applied = applied;

        if !(self.state.u[n].is_finite() && self.state.v[n].is_finite()) {
            return Err(Error::NonFiniteState {
                t: self.state.t.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

/// One semi-Lagrangian update as a free function: builds a transient stepper
/// around the supplied delay line and filter state.
///
/// The caller owns the delay line across calls; the command evaluated at the
/// end of this step is pushed into it. For a delayed loop started from
/// scratch, pre-load the line with the command for the initial state (as
/// [`Simulator::new`] does) so the actuation timeline stays aligned.
pub fn step<R: Real>(
    state: &PdeState<R>,
    plant: &PlantConfig<R>,
    law: &ControlLaw<R>,
    kernels: Option<&KernelSet<R>>,
    delay: &mut DelayLine<R>,
    filter: &mut FilterState<R>,
    dt: R,
) -> Result<PdeState<R>> {
    let n = state.n();
    let grid = SimGrid::new(plant, n, delay.delta())?;
    let ratio = (dt / grid.dt - R::one()).abs();
    if ratio > R::of(1e-9) {
        return Err(Error::Precondition(format!(
            "step expects dt = dx / max(lambda, mu) = {}, got {dt}",
            grid.dt
        )));
    }
    let mut sim = Simulator::new(plant, *law, kernels, delay.delta(), state.clone(), n)?;
    sim.delay = delay.clone();
    sim.filter = *filter;
    sim.step()?;
    *delay = sim.delay.clone();
    *filter = sim.filter;
    Ok(sim.state.clone())
}

/// Runs the closed loop to `horizon` and records every step.
///
/// `beta1` is traced when kernels are supplied. The trace holds
/// `floor(horizon / dt) + 1` rows including `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Real>(
    plant: &PlantConfig<R>,
    law: ControlLaw<R>,
    kernels: Option<&KernelSet<R>>,
    delta: R,
    u0: &Profile<R>,
    v0: &Profile<R>,
    horizon: R,
    n: usize,
) -> Result<TraceRecord<R>> {
    if !(horizon.is_finite() && horizon > R::zero()) {
        return Err(Error::Precondition("horizon must be positive".into()));
    }
    let initial = PdeState::from_profiles(u0, v0, n, R::zero());
    let mut sim = Simulator::new(plant, law, kernels, delta, initial, n)?;
    let steps = (horizon / sim.dt() + R::of(1e-9))
        .floor()
        .to_usize()
        .ok_or_else(|| Error::Precondition("horizon too large for step count".into()))?;

    let mut trace = TraceRecord::with_capacity(steps + 1, kernels.is_some());
    let record = |sim: &Simulator<R>, trace: &mut TraceRecord<R>| -> Result<()> {
        let s = sim.state();
        let l2 = l2_norm(s);
        if !l2.is_finite() {
            return Err(Error::NonFiniteState {
                t: s.t.to_f64().unwrap_or(f64::NAN),
            });
        }
        trace.t.push(s.t);
        trace.l2.push(l2);
        trace.u1.push(s.u[s.n()]);
        trace.v1.push(s.v[s.n()]);
        trace.u_cmd.push(sim.last_command());
        trace.u_applied.push(sim.last_applied());
        if let (Some(beta), Some(k)) = (trace.beta1.as_mut(), sim.kernels) {
            beta.push(beta_at_one(s, k)?);
        }
        Ok(())
    };

    record(&sim, &mut trace)?;
    for _ in 0..steps {
        sim.step()?;
        record(&sim, &mut trace)?;
    }
    Ok(trace)
}
