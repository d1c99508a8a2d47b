//! Characteristic functions of the closed loops and right-half-plane root
//! counting via the argument principle.
//!
//! A characteristic function here is the entire function
//!
//! ```text
//! F(s) = c0 + sum_i (a_i + r_i s) e^(-tau_i s)
//!         + sum_j w_j e^(-d_j s) int_0^tau ntilde(nu) e^(-nu s) dnu
//! ```
//!
//! i.e. a quasipolynomial plus shifted Laplace transforms of the distributed
//! kernel. The sign convention is fixed once and for all as the Laplace
//! symbol of the marching recursion in [`crate::neutral`]: a recursion
//! `beta(t) = sum c_i beta(t - tau_i) - sum w_j int ntilde beta(t - nu - d_j)`
//! has `F(s) = 1 - sum c_i e^(-tau_i s) + sum w_j e^(-d_j s) J(s)`, so
//! time-domain growth corresponds exactly to scanner-reported RHP roots.
//!
//! The distributed transform `J(s) = int_0^tau ntilde(nu) e^(-nu s) dnu` is
//! integrated exactly for the piecewise-linear interpolant of the kernel
//! samples (a Filon-type rule on the same grid). At `s = 0` this reduces to
//! the plain trapezoid; at high frequency it avoids the aliasing a sampled
//! trapezoid would suffer once `|Im s|` approaches the grid Nyquist rate,
//! which matters for scans up to caps of a few thousand.

use num_complex::Complex;

use crate::kernel::FeedbackGains;
use crate::model::{characteristic_time, PlantConfig};
use crate::neutral::NeutralSpec;
use crate::scalar::Real;
use crate::sim::ControlLaw;
use crate::{Error, Result};

/// `(coeff + ramp * s) e^(-delay * s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerm<R: Real> {
    pub coeff: R,
    pub ramp: R,
    pub delay: R,
}

/// Distributed part: shared kernel samples plus `(weight, shift)` copies.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedPart<R: Real> {
    pub samples: Vec<R>,
    pub dnu: R,
    pub shifts: Vec<(R, R)>,
}

/// Entire characteristic function; evaluable anywhere in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicFunction<R: Real> {
    constant: R,
    points: Vec<PointTerm<R>>,
    distributed: Option<DistributedPart<R>>,
}

/// `phi0(z) = (1 - e^-z)/z`, `phi1(z) = (1 - e^-z (1+z))/z^2` and
/// `phi2(z) = -phi1'(z)`, stable near `z = 0` through their power series.
fn phi_functions<R: Real>(z: Complex<R>) -> (Complex<R>, Complex<R>, Complex<R>) {
    let one = Complex::new(R::one(), R::zero());
    if z.norm() < R::of(0.5) {
        let mut phi0 = Complex::new(R::zero(), R::zero());
        let mut phi1 = phi0;
        let mut phi2 = phi0;
        let mut zk = one;
        for k in 0..24u32 {
            let kf = R::of(f64::from(k));
            // 1/(k+1)!, (k+1)/(k+2)!, (k+2)(k+1)/(k+3)! over (-z)^k.
            let f1 = factorial_recip::<R>(k + 1);
            let f2 = factorial_recip::<R>(k + 2) * (kf + R::one());
            let f3 = factorial_recip::<R>(k + 3) * (kf + R::one()) * (kf + R::of(2.0));
            phi0 += zk * f1;
            phi1 += zk * f2;
            phi2 += zk * f3;
            zk = -zk * z;
        }
        (phi0, phi1, phi2)
    } else {
        let e = (-z).exp();
        let phi0 = (one - e) / z;
        let phi1 = (one - e * (one + z)) / (z * z);
        let phi2 = (phi1 * R::of(2.0) - e) / z;
        (phi0, phi1, phi2)
    }
}

fn factorial_recip<R: Real>(k: u32) -> R {
    let mut acc = R::one();
    for i in 1..=k {
        acc /= R::of(f64::from(i));
    }
    acc
}

impl<R: Real> CharacteristicFunction<R> {
    pub fn constant(value: R) -> Self {
        Self {
            constant: value,
            points: Vec::new(),
            distributed: None,
        }
    }

    pub fn with_point(mut self, coeff: R, delay: R) -> Self {
        self.points.push(PointTerm {
            coeff,
            ramp: R::zero(),
            delay,
        });
        self
    }

    pub fn with_ramp_point(mut self, coeff: R, ramp: R, delay: R) -> Self {
        self.points.push(PointTerm { coeff, ramp, delay });
        self
    }

    pub fn with_distributed(mut self, samples: Vec<R>, dnu: R, shifts: Vec<(R, R)>) -> Self {
        self.distributed = Some(DistributedPart {
            samples,
            dnu,
            shifts,
        });
        self
    }

    pub fn points(&self) -> &[PointTerm<R>] {
        &self.points
    }

    pub fn distributed(&self) -> Option<&DistributedPart<R>> {
        self.distributed.as_ref()
    }

    /// Laplace symbol of a neutral recursion (terms move across the equals
    /// sign, so point coefficients negate and distributed weights keep their
    /// sign).
    pub fn from_neutral(spec: &NeutralSpec<R>) -> Self {
        let mut f = Self::constant(R::one());
        for term in spec.point_terms() {
            f = f.with_point(-term.coeff, term.delay);
        }
        if let Some(kernel) = spec.kernel() {
            f = f.with_distributed(
                kernel.samples.clone(),
                kernel.dnu,
                spec.distributed_terms()
                    .iter()
                    .map(|t| (t.weight, t.shift))
                    .collect(),
            );
        }
        f
    }

    /// Crude magnitude scale of the coefficients, used for relative guards.
    pub fn coefficient_scale(&self) -> R {
        let mut scale = self.constant.abs();
        for p in &self.points {
            scale += p.coeff.abs() + p.ramp.abs();
        }
        if let Some(d) = &self.distributed {
            let l1 = d.samples.iter().fold(R::zero(), |a, s| a + s.abs()) * d.dnu;
            for (w, _) in &d.shifts {
                scale += w.abs() * l1;
            }
        }
        scale.max(R::one())
    }

    /// Largest delay appearing in the function (sets the oscillation scale
    /// along the imaginary direction).
    pub fn max_delay(&self) -> R {
        let mut m = R::zero();
        for p in &self.points {
            m = m.max(p.delay);
        }
        if let Some(d) = &self.distributed {
            let tau = d.dnu * R::of_usize(d.samples.len() - 1);
            for (_, shift) in &d.shifts {
                m = m.max(tau + *shift);
            }
        }
        m
    }

    /// `J(s) = int_0^tau ntilde e^(-nu s) dnu` and its `s`-derivative,
    /// exact for the piecewise-linear interpolant of the samples.
    fn distributed_base(&self, s: Complex<R>) -> (Complex<R>, Complex<R>) {
        let d = match &self.distributed {
            Some(d) => d,
            None => return (Complex::new(R::zero(), R::zero()), Complex::new(R::zero(), R::zero())),
        };
        let dnu = d.dnu;
        let z = s * dnu;
        let (phi0, phi1, phi2) = phi_functions(z);
        let step = (-z).exp();
        let mut e = Complex::new(R::one(), R::zero());
        let mut s0 = Complex::new(R::zero(), R::zero());
        let mut s1 = s0;
        let mut t0 = s0;
        let mut t1 = s0;
        for k in 0..d.samples.len() - 1 {
            let n0 = d.samples[k];
            let dn = d.samples[k + 1] - n0;
            let nu_k = dnu * R::of_usize(k);
            s0 += e * n0;
            s1 += e * dn;
            t0 += e * (n0 * nu_k);
            t1 += e * (dn * nu_k);
            e *= step;
        }
        let value = (phi0 * s0 + phi1 * s1) * dnu;
        let deriv = ((phi0 * t0 + phi1 * t1) + (phi1 * s0 + phi2 * s1) * dnu) * (-dnu);
        (value, deriv)
    }

    /// Evaluates `F(s)`.
    pub fn eval(&self, s: Complex<R>) -> Complex<R> {
        self.eval_with_deriv(s).0
    }

    /// Evaluates `(F(s), F'(s))` with the derivative taken term by term.
    pub fn eval_with_deriv(&self, s: Complex<R>) -> (Complex<R>, Complex<R>) {
        let mut f = Complex::new(self.constant, R::zero());
        let mut df = Complex::new(R::zero(), R::zero());
        for p in &self.points {
            let e = (-s * p.delay).exp();
            let poly = Complex::new(p.coeff, R::zero()) + s * p.ramp;
            f += poly * e;
            df += (Complex::new(p.ramp, R::zero()) - poly * p.delay) * e;
        }
        if let Some(d) = &self.distributed {
            let (j, dj) = self.distributed_base(s);
            for &(w, shift) in &d.shifts {
                let e = (-s * shift).exp();
                f += e * j * w;
                df += e * (dj - j * shift) * w;
            }
        }
        (f, df)
    }

    /// Magnitude of the distributed part alone at `s`.
    pub fn distributed_magnitude(&self, s: Complex<R>) -> R {
        let d = match &self.distributed {
            Some(d) => d,
            None => return R::zero(),
        };
        let (j, _) = self.distributed_base(s);
        let mut acc = Complex::new(R::zero(), R::zero());
        for &(w, shift) in &d.shifts {
            acc += (-s * shift).exp() * j * w;
        }
        acc.norm()
    }

    /// Sup of the distributed part over a sampled closed-RHP grid:
    /// real parts `{0, 0.01, ..., 1}`, imaginary parts `0..cap`.
    pub fn distributed_sup_rhp(&self, cap: R) -> R {
        if self.distributed.is_none() {
            return R::zero();
        }
        let im_step = R::of(0.05).max(cap / R::of(4000.0));
        let mut sup = R::zero();
        let mut re = R::zero();
        while re <= R::one() + R::of(1e-12) {
            let mut im = R::zero();
            while im <= cap {
                sup = sup.max(self.distributed_magnitude(Complex::new(re, im)));
                im += im_step;
            }
            re += R::of(0.01);
        }
        sup
    }
}

/// Rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<R: Real> {
    pub re_min: R,
    pub re_max: R,
    pub im_min: R,
    pub im_max: R,
}

impl<R: Real> Rect<R> {
    pub fn new(re_min: R, re_max: R, im_min: R, im_max: R) -> Result<Self> {
        if !(re_min < re_max && im_min < im_max) {
            return Err(Error::Precondition(format!(
                "degenerate scan region [{re_min}, {re_max}] x [{im_min}, {im_max}]"
            )));
        }
        Ok(Self {
            re_min,
            re_max,
            im_min,
            im_max,
        })
    }

    pub fn width(&self) -> R {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> R {
        self.im_max - self.im_min
    }

    fn center(&self) -> Complex<R> {
        Complex::new(
            (self.re_min + self.re_max) * R::of(0.5),
            (self.im_min + self.im_max) * R::of(0.5),
        )
    }

    fn contains(&self, s: Complex<R>, slack: R) -> bool {
        s.re >= self.re_min - slack
            && s.re <= self.re_max + slack
            && s.im >= self.im_min - slack
            && s.im <= self.im_max + slack
    }
}

/// One located zero.
#[derive(Debug, Clone, Copy)]
pub struct Root<R: Real> {
    pub location: Complex<R>,
    pub residual: R,
}

/// Outcome of a scan: winding count over the region, refined roots, and the
/// rightmost real part found.
#[derive(Debug, Clone)]
pub struct RootScanResult<R: Real> {
    pub region: Rect<R>,
    pub count: usize,
    pub roots: Vec<Root<R>>,
    pub rightmost_re: Option<R>,
    /// False when only the winding count was computed (root list empty), as
    /// happens above [`ScanOptions::isolate_limit`].
    pub refined: bool,
}

/// Scan tuning knobs.
#[derive(Debug, Clone, Copy)]
pub struct ScanOptions<R: Real> {
    /// Initial contour samples per unit length (scaled internally by the
    /// largest delay). Doubled until the winding integer stabilizes.
    pub base_density: R,
    /// Relative floor on `|F|` along a contour before the region is declared
    /// too close to a root.
    pub guard: R,
    /// Residual target for Newton polish.
    pub newton_tol: R,
    /// Skip root refinement when the winding count exceeds this (dense
    /// high-frequency chains); the scan then reports the count only.
    pub isolate_limit: usize,
}

impl<R: Real> Default for ScanOptions<R> {
    fn default() -> Self {
        Self {
            base_density: R::of(2.0),
            guard: R::of(1e-9),
            newton_tol: R::of(1e-11),
            isolate_limit: 128,
        }
    }
}

/// Phase increment along one contour edge, refined adaptively.
///
/// The edge starts from a density proportional to the largest delay (so the
/// natural oscillation of the quasipolynomial is resolved) and every segment
/// whose phase increment exceeds pi/2 is bisected; the winding integral then
/// accumulates exactly one branch of `arg F` per segment. Segments shrink
/// toward any root close to the contour, tripping the `|F|` guard instead of
/// silently miscounting.
fn edge_phase<R: Real>(
    f: &CharacteristicFunction<R>,
    a: Complex<R>,
    b: Complex<R>,
    density: R,
    guard_abs: R,
) -> std::result::Result<R, R> {
    let len = (b - a).norm();
    let m = (len * density).ceil().to_usize().unwrap_or(8).clamp(8, 1 << 22);
    let dz = (b - a) / R::of_usize(m);
    let quarter_turn = R::FRAC_PI_2();
    let mut total = R::zero();
    let mut min_abs = R::infinity();

    let eval = |s: Complex<R>| f.eval(s);
    let mut start = a;
    let mut f_start = eval(start);
    min_abs = min_abs.min(f_start.norm());
    for k in 1..=m {
        let end = if k == m { b } else { a + dz * R::of_usize(k) };
        let f_end = eval(end);
        min_abs = min_abs.min(f_end.norm());
        // Stack of pending sub-segments, refined until each phase step is
        // below a quarter turn.
        let mut stack = vec![(start, f_start, end, f_end, 0u32)];
        while let Some((s0, f0, s1, f1, depth)) = stack.pop() {
            if f0.norm() < guard_abs || f1.norm() < guard_abs {
                return Err(min_abs);
            }
            let darg = (f1 / f0).arg();
            if darg.abs() <= quarter_turn {
                total += darg;
            } else {
                if depth >= 48 {
                    return Err(min_abs);
                }
                let mid = (s0 + s1) * R::of(0.5);
                let f_mid = eval(mid);
                min_abs = min_abs.min(f_mid.norm());
                stack.push((mid, f_mid, s1, f1, depth + 1));
                stack.push((s0, f0, mid, f_mid, depth + 1));
            }
        }
        start = end;
        f_start = f_end;
    }
    Ok(total)
}

/// Winding number of `F` around the rectangle by adaptive argument
/// continuation (the argument-principle count of enclosed zeros).
fn winding_number<R: Real>(
    f: &CharacteristicFunction<R>,
    rect: &Rect<R>,
    options: &ScanOptions<R>,
) -> Result<isize> {
    let scale = f.coefficient_scale();
    let guard_abs = options.guard * scale;
    let density = options.base_density * (R::one() + f.max_delay());
    let corners = [
        Complex::new(rect.re_min, rect.im_min),
        Complex::new(rect.re_max, rect.im_min),
        Complex::new(rect.re_max, rect.im_max),
        Complex::new(rect.re_min, rect.im_max),
    ];
    let mut total = R::zero();
    for e in 0..4 {
        match edge_phase(f, corners[e], corners[(e + 1) % 4], density, guard_abs) {
            Ok(phase) => total += phase,
            Err(min_abs) => {
                return Err(Error::ContourTooClose {
                    min_abs: min_abs.to_f64().unwrap_or(f64::NAN),
                    retries: 0,
                })
            }
        }
    }
    let w = total / (R::of(2.0) * R::PI());
    let nearest = w.round();
    if (w - nearest).abs() > R::of(0.1) {
        return Err(Error::RootIsolation(format!(
            "winding {w} is not close to an integer over [{}, {}] x [{}, {}]",
            rect.re_min, rect.re_max, rect.im_min, rect.im_max
        )));
    }
    Ok(nearest.to_isize().unwrap_or(0))
}

/// Winding number with the guard-band retry: on a too-close contour the
/// region is inflated by half a contour cell and retried, up to 3 times.
/// Returns the count together with the region actually scanned.
fn winding_with_retry<R: Real>(
    f: &CharacteristicFunction<R>,
    rect: &Rect<R>,
    options: &ScanOptions<R>,
) -> Result<(isize, Rect<R>)> {
    let mut region = *rect;
    let cell = (options.base_density * (R::one() + f.max_delay())).recip();
    for retry in 0..=3 {
        match winding_number(f, &region, options) {
            Ok(count) => return Ok((count, region)),
            Err(Error::ContourTooClose { min_abs, .. }) => {
                if retry == 3 {
                    return Err(Error::ContourTooClose {
                        min_abs,
                        retries: retry,
                    });
                }
                let bump = cell * R::of(0.5);
                region = Rect {
                    re_min: (region.re_min - bump).max(region.re_min * R::of(0.5)),
                    re_max: region.re_max + bump,
                    im_min: region.im_min - bump,
                    im_max: region.im_max + bump,
                };
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("retry loop returns");
}

fn newton_polish<R: Real>(
    f: &CharacteristicFunction<R>,
    start: Complex<R>,
    tol_abs: R,
) -> Option<(Complex<R>, R)> {
    let mut s = start;
    for _ in 0..80 {
        let (v, d) = f.eval_with_deriv(s);
        let res = v.norm();
        if res <= tol_abs {
            return Some((s, res));
        }
        if d.norm() == R::zero() {
            return None;
        }
        let step = v / d;
        s -= step;
        if step.norm() <= R::of(1e-16) * (R::one() + s.norm()) {
            let res = f.eval(s).norm();
            return (res <= tol_abs).then_some((s, res));
        }
    }
    let res = f.eval(s).norm();
    (res <= tol_abs).then_some((s, res))
}

fn isolate<R: Real>(
    f: &CharacteristicFunction<R>,
    rect: Rect<R>,
    count: isize,
    options: &ScanOptions<R>,
    depth: usize,
    roots: &mut Vec<Root<R>>,
) -> Result<()> {
    if count <= 0 {
        return Ok(());
    }
    let scale = f.coefficient_scale();
    let slack = (rect.width().max(rect.height())) * R::of(0.05);
    if count == 1 {
        if let Some((root, residual)) = newton_polish(f, rect.center(), options.newton_tol * scale)
        {
            if rect.contains(root, slack) {
                roots.push(Root {
                    location: root,
                    residual,
                });
                return Ok(());
            }
        }
    }
    if depth > 60 || rect.width().min(rect.height()) < R::of(1e-9) {
        return Err(Error::RootIsolation(format!(
            "could not isolate {count} root(s) in [{}, {}] x [{}, {}] (possible multiple root)",
            rect.re_min, rect.re_max, rect.im_min, rect.im_max
        )));
    }

    let split_vertical = rect.height() >= rect.width();
    for &frac in &[0.5, 0.55, 0.45, 0.6, 0.4] {
        let fr = R::of(frac);
        let (a, b) = if split_vertical {
            let cut = rect.im_min + rect.height() * fr;
            (
                Rect { im_max: cut, ..rect },
                Rect { im_min: cut, ..rect },
            )
        } else {
            let cut = rect.re_min + rect.width() * fr;
            (
                Rect { re_max: cut, ..rect },
                Rect { re_min: cut, ..rect },
            )
        };
        let ca = match winding_number(f, &a, options) {
            Ok(c) => c,
            Err(Error::ContourTooClose { .. }) | Err(Error::RootIsolation(_)) => continue,
            Err(e) => return Err(e),
        };
        let cb = match winding_number(f, &b, options) {
            Ok(c) => c,
            Err(Error::ContourTooClose { .. }) | Err(Error::RootIsolation(_)) => continue,
            Err(e) => return Err(e),
        };
        if ca + cb != count {
            continue;
        }
        isolate(f, a, ca, options, depth + 1, roots)?;
        isolate(f, b, cb, options, depth + 1, roots)?;
        return Ok(());
    }
    Err(Error::RootIsolation(
        "no admissible split line found (roots hugging every candidate contour)".into(),
    ))
}

/// Counts the zeros of `F` inside the rectangle by the argument principle
/// and refines each one by bisection plus Newton polish.
///
/// The rectangle should sit in the open right half plane (`re_min > 0`). If
/// the contour runs too close to a root, the region is inflated by half a
/// contour cell and retried (three times) before giving up; the returned
/// result reports the region actually scanned.
pub fn count_rhp_roots<R: Real>(
    f: &CharacteristicFunction<R>,
    rect: &Rect<R>,
    options: &ScanOptions<R>,
) -> Result<RootScanResult<R>> {
    let (count, region) = winding_with_retry(f, rect, options)?;
    if count < 0 {
        return Err(Error::RootIsolation(format!(
            "negative winding count {count}: F is expected to be analytic (no poles)"
        )));
    }
    if count as usize > options.isolate_limit {
        return Ok(RootScanResult {
            region,
            count: count as usize,
            roots: Vec::new(),
            rightmost_re: None,
            refined: false,
        });
    }
    let mut roots = Vec::with_capacity(count as usize);
    isolate(f, region, count, options, 0, &mut roots)?;
    if roots.len() != count as usize {
        return Err(Error::RootIsolation(format!(
            "refined {} roots but the winding count is {count}",
            roots.len()
        )));
    }
    roots.sort_by(|a, b| {
        a.location
            .im
            .partial_cmp(&b.location.im)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let rightmost_re = roots
        .iter()
        .map(|r| r.location.re)
        .fold(None, |acc: Option<R>, re| {
            Some(acc.map_or(re, |m| m.max(re)))
        });
    Ok(RootScanResult {
        region,
        count: count as usize,
        roots,
        rightmost_re,
        refined: true,
    })
}

/// Winding count only (no refinement): the argument-principle zero count of
/// `F` over the rectangle, with the guard-band retry. Returns the count and
/// the region actually scanned.
pub fn winding_count<R: Real>(
    f: &CharacteristicFunction<R>,
    rect: &Rect<R>,
    options: &ScanOptions<R>,
) -> Result<(usize, Rect<R>)> {
    let (count, region) = winding_with_retry(f, rect, options)?;
    Ok((count.max(0) as usize, region))
}

/// Bisects the abscissa `x` in `[lo, hi]` such that the strip
/// `[x, hi] x [-cap, cap]` holds no root, to within `1e-3`.
///
/// Returns `None` when the full strip from `lo` is already root-free below
/// the cap.
pub fn rightmost_root_estimate<R: Real>(
    f: &CharacteristicFunction<R>,
    lo: R,
    hi: R,
    cap: R,
    options: &ScanOptions<R>,
) -> Result<Option<R>> {
    if !(lo > R::zero() && hi > lo && cap > R::zero()) {
        return Err(Error::Precondition(
            "rightmost-root bracket needs 0 < lo < hi and cap > 0".into(),
        ));
    }
    // Counts the strip to the right of x; if the left edge lands on a root,
    // nudge it by a fraction of the bisection tolerance (harmless to the
    // bracket) instead of inflating the whole strip.
    let strip_count = |x: R| -> Result<(isize, R)> {
        let mut err = None;
        for nudge in [0.0, 2e-4, -2e-4, 4e-4] {
            let x_used = x + R::of(nudge);
            let rect = Rect::new(x_used, hi, -cap, cap)?;
            match winding_number(f, &rect, options) {
                Ok(c) => return Ok((c, x_used)),
                Err(e @ Error::ContourTooClose { .. }) | Err(e @ Error::RootIsolation(_)) => {
                    err = Some(e)
                }
                Err(e) => return Err(e),
            }
        }
        Err(err.unwrap())
    };
    if strip_count(lo)?.0 == 0 {
        return Ok(None);
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > R::of(1e-3) {
        let mid = (lo + hi) * R::of(0.5);
        let (count, x_used) = strip_count(mid)?;
        if count > 0 {
            lo = x_used;
        } else {
            hi = x_used;
        }
    }
    Ok(Some((lo + hi) * R::of(0.5)))
}

/// Builds the characteristic function of the configured closed loop.
///
/// * open loop: `1 - rho q e^(-tau s) + J(s)` (the denominator of the
///   open-loop transfer function);
/// * full cancellation under delay `delta`:
///   `1 - rho q e^(-tau s) + rho q e^(-(tau+delta) s) + J(s) - e^(-delta s) J(s)`;
/// * partial cancellation: the re-delayed point coefficient is `K q`;
/// * static boundary gain (uncoupled plant):
///   `1 - rho q e^(-tau s) + K q e^(-(tau+delta) s)`;
/// * filtered law (uncoupled plant):
///   `(1 + b s)(1 - rho q e^(-tau s)) + (1 + a s) rho q e^(-(tau+delta) s)`.
pub fn build_characteristic<R: Real>(
    plant: &PlantConfig<R>,
    gains: Option<&FeedbackGains<R>>,
    law: &ControlLaw<R>,
    delta: R,
) -> Result<CharacteristicFunction<R>> {
    match law {
        ControlLaw::Filtered { a, b } => {
            if !plant.is_uncoupled() {
                return Err(Error::Unsupported(
                    "the filtered-law characteristic is available for the uncoupled plant only"
                        .into(),
                ));
            }
            if !b.is_finite() || *b <= R::zero() {
                return Err(Error::Precondition("filtered law needs b > 0".into()));
            }
            let tau = characteristic_time(plant);
            let rq = plant.open_loop_gain();
            Ok(CharacteristicFunction::constant(R::one())
                .with_ramp_point(R::zero(), *b, R::zero())
                .with_ramp_point(-rq, -*b * rq, tau)
                .with_ramp_point(rq, *a * rq, tau + delta))
        }
        _ => {
            let spec = crate::neutral::reduce_closed_loop(plant, gains, law, delta)?;
            Ok(CharacteristicFunction::from_neutral(&spec))
        }
    }
}

/// Certificate margin of the partially cancelling law:
/// `1 - |q rho| - |K q|` against the sup of the distributed part on the
/// sampled closed RHP up to `cap`. A strictly positive gap proves the
/// scanned strip root-free.
pub fn theorem_certificate<R: Real>(
    f: &CharacteristicFunction<R>,
    plant: &PlantConfig<R>,
    k: R,
    cap: R,
) -> (R, R) {
    let margin = R::one() - plant.open_loop_gain().abs() - (k * plant.q()).abs();
    (margin, f.distributed_sup_rhp(cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{compute_feedback_gains, solve_inverse_kernels, solve_kernels};
    use crate::model::Profile;
    use crate::neutral::{simulate_neutral, History};

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    /// Poles of `1 - g e^(-tau s)`: `ln(g)/tau + 2k pi i/tau` for `g > 0`,
    /// `ln|g|/tau + (2k+1) pi i/tau` for `g < 0`.
    fn transport_pole_count(gain: f64, tau: f64, rect: &Rect<f64>) -> usize {
        let re = gain.abs().ln() / tau;
        if re < rect.re_min || re > rect.re_max {
            return 0;
        }
        let mut count = 0;
        for k in -1000i64..=1000 {
            let im = if gain > 0.0 {
                2.0 * k as f64 * std::f64::consts::PI / tau
            } else {
                (2.0 * k as f64 + 1.0) * std::f64::consts::PI / tau
            };
            if im >= rect.im_min && im <= rect.im_max {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn point_evaluation_matches_closed_forms() {
        let f = CharacteristicFunction::constant(1.0).with_point(-0.85, 2.0);
        assert!((f.eval(c(0.0, 0.0)) - c(0.15, 0.0)).norm() < 1e-15);
        let root = 0.85f64.ln() / 2.0;
        assert!(f.eval(c(root, 0.0)).norm() < 1e-15);

        // Analytic derivative against a central difference.
        let s = c(0.3, 1.7);
        let (_, df) = f.eval_with_deriv(s);
        let h = 1e-6;
        let fd = (f.eval(s + c(h, 0.0)) - f.eval(s - c(h, 0.0))) / c(2.0 * h, 0.0);
        assert!((df - fd).norm() < 1e-8);
    }

    #[test]
    fn derivative_matches_finite_differences_for_all_term_kinds() {
        let m = 30;
        let dnu = 2.0 / m as f64;
        let samples: Vec<f64> = (0..=m).map(|k| 0.3 + (k as f64 * dnu).cos()).collect();
        let f = CharacteristicFunction::constant(1.0)
            .with_point(-0.85, 2.0)
            .with_ramp_point(0.2, -0.5, 1.3)
            .with_distributed(samples, dnu, vec![(1.0, 0.0), (-1.0, 0.1)]);
        let h = 1e-6;
        for &s in &[c(0.05, 0.3), c(0.8, -4.0), c(0.2, 25.0)] {
            let (_, df) = f.eval_with_deriv(s);
            let fd_re = (f.eval(s + c(h, 0.0)) - f.eval(s - c(h, 0.0))) / c(2.0 * h, 0.0);
            let fd_im = (f.eval(s + c(0.0, h)) - f.eval(s - c(0.0, h))) / c(0.0, 2.0 * h);
            assert!((df - fd_re).norm() < 1e-6 * (1.0 + df.norm()), "s = {s}");
            assert!((df - fd_im).norm() < 1e-6 * (1.0 + df.norm()), "s = {s}");
        }
    }

    #[test]
    fn distributed_evaluation_reduces_to_trapezoid_at_zero() {
        // ntilde = 0.5 on [0, 2]: F(0) = 1 + int = 2 with the plus sign.
        let m = 40;
        let f = CharacteristicFunction::constant(1.0).with_distributed(
            vec![0.5; m + 1],
            2.0 / m as f64,
            vec![(1.0, 0.0)],
        );
        assert!((f.eval(c(0.0, 0.0)) - c(2.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn distributed_quadrature_is_exact_for_the_linear_interpolant() {
        // The panel rule integrates the piecewise-linear interpolant of the
        // samples exactly, so resampling that interpolant on a 16x finer
        // grid must not change the value at any frequency.
        let m = 50;
        let dnu = 2.0 / m as f64;
        let samples: Vec<f64> = (0..=m).map(|k| (k as f64 * dnu).sin()).collect();
        let refine = 16usize;
        let fine_dnu = dnu / refine as f64;
        let fine: Vec<f64> = (0..=m * refine)
            .map(|k| {
                let pos = k as f64 / refine as f64;
                let cell = (pos.floor() as usize).min(m - 1);
                let frac = pos - cell as f64;
                samples[cell] + (samples[cell + 1] - samples[cell]) * frac
            })
            .collect();
        let coarse = CharacteristicFunction::constant(0.0).with_distributed(
            samples.clone(),
            dnu,
            vec![(1.0, 0.0)],
        );
        let refined = CharacteristicFunction::constant(0.0).with_distributed(
            fine,
            fine_dnu,
            vec![(1.0, 0.0)],
        );
        for &s in &[c(0.0, 0.0), c(1.0, 3.0), c(0.2, 40.0), c(0.0, 900.0)] {
            let a = coarse.eval(s);
            let b = refined.eval(s);
            assert!(
                (a - b).norm() < 1e-12,
                "s = {s}: {a} vs {b} ({:e})",
                (a - b).norm()
            );
        }
        // And the transform genuinely decays at high frequency instead of
        // aliasing back to O(1).
        assert!(coarse.eval(c(0.0, 900.0)).norm() < 5e-3);
    }

    #[test]
    fn neutral_spec_and_characteristic_share_the_sign_convention() {
        let spec = crate::neutral::NeutralSpec::<f64>::from_points(&[(0.85, 2.0)]).unwrap();
        let f = CharacteristicFunction::from_neutral(&spec);
        for &s in &[c(0.0, 0.0), c(0.1, 2.0), c(0.5, -7.0)] {
            let direct = c(1.0, 0.0) - c(0.85, 0.0) * (-s * 2.0).exp();
            assert!((f.eval(s) - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn winding_counts_match_the_closed_form_pole_sets() {
        let rect = Rect::new(0.01, 1.0, -10.0, 10.0).unwrap();
        let options = ScanOptions::default();
        for gain in [1.1, 1.5, 2.0, -1.1, -1.5] {
            let f = CharacteristicFunction::constant(1.0).with_point(-gain, 2.0);
            let scan = count_rhp_roots(&f, &rect, &options).unwrap();
            let expected = transport_pole_count(gain, 2.0, &rect);
            assert_eq!(scan.count, expected, "gain {gain}");
            for root in &scan.roots {
                assert!(root.residual <= 1e-9);
                assert!((root.location.re - gain.abs().ln() / 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stable_open_loop_has_no_rhp_roots() {
        let f = CharacteristicFunction::constant(1.0).with_point(-0.85, 2.0);
        let rect = Rect::new(0.01, 1.0, -10.0, 10.0).unwrap();
        let scan = count_rhp_roots(&f, &rect, &ScanOptions::default()).unwrap();
        assert_eq!(scan.count, 0);
        assert!(scan.rightmost_re.is_none());
    }

    #[test]
    fn conjugate_symmetry_of_scanned_roots() {
        let f = CharacteristicFunction::<f64>::constant(1.0)
            .with_point(-0.85, 2.0)
            .with_point(0.85, 2.1);
        let rect = Rect::new(0.01, 0.5, -40.0, 40.0).unwrap();
        let scan = count_rhp_roots(&f, &rect, &ScanOptions::default()).unwrap();
        assert!(scan.count > 0, "expected the delay-perturbed loop to have RHP roots");
        for root in &scan.roots {
            if root.location.im.abs() > 1e-9 {
                let partner = scan
                    .roots
                    .iter()
                    .find(|r| (r.location - root.location.conj()).norm() < 1e-7);
                assert!(partner.is_some(), "no conjugate for {}", root.location);
            }
        }
    }

    #[test]
    fn rightmost_root_bisection() {
        let f = CharacteristicFunction::constant(1.0).with_point(-1.2, 2.0);
        let est = rightmost_root_estimate(&f, 0.01, 1.0, 10.0, &ScanOptions::default())
            .unwrap()
            .expect("there are RHP roots");
        assert!((est - 1.2f64.ln() / 2.0).abs() <= 1e-3, "estimate {est}");

        let g = CharacteristicFunction::constant(1.0).with_point(-0.85, 2.0);
        assert!(rightmost_root_estimate(&g, 0.01, 1.0, 10.0, &ScanOptions::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn growth_in_time_domain_matches_rhp_roots() {
        // Full cancellation residue: roots present and the recursion grows.
        let unstable = crate::neutral::NeutralSpec::<f64>::from_points(&[(0.85, 2.0), (-0.85, 2.1)])
            .unwrap();
        let f = CharacteristicFunction::from_neutral(&unstable);
        let rect = Rect::new(0.01, 0.5, 0.0, 100.0).unwrap();
        let roots = count_rhp_roots(&f, &rect, &ScanOptions::default()).unwrap();
        assert!(roots.count > 0);
        let history = History::constant(1.0, 2.1, 0.01).unwrap();
        let trace = simulate_neutral(&unstable, &history, 60.0, 0.01).unwrap();
        assert!(trace.max_abs_on(50.0, 60.0) > 5.0 * trace.max_abs_on(5.0, 15.0));

        // Partial cancellation within the gain bound: no roots, decay.
        let stable = crate::neutral::NeutralSpec::<f64>::from_points(&[(0.85, 2.0), (-0.1, 2.1)])
            .unwrap();
        let g = CharacteristicFunction::from_neutral(&stable);
        let scan = count_rhp_roots(&g, &rect, &ScanOptions::default()).unwrap();
        assert_eq!(scan.count, 0);
        let trace = simulate_neutral(&stable, &history, 60.0, 0.01).unwrap();
        assert!(trace.max_abs_on(50.0, 60.0) < trace.max_abs_on(0.0, 10.0));
    }

    #[test]
    fn build_characteristic_all_laws() {
        let transport = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();

        let f = build_characteristic(&transport, None, &ControlLaw::OpenLoop, 0.0).unwrap();
        assert_eq!(f.points().len(), 1);
        assert_eq!(f.points()[0].coeff, -0.85);
        assert_eq!(f.points()[0].delay, 2.0);
        assert!(f.distributed().is_none());

        let f =
            build_characteristic(&transport, None, &ControlLaw::FullCancellation, 0.01).unwrap();
        let coeffs: Vec<(f64, f64)> = f.points().iter().map(|p| (p.coeff, p.delay)).collect();
        assert_eq!(coeffs, vec![(-0.85, 2.0), (0.85, 2.01)]);

        let f = build_characteristic(
            &transport,
            None,
            &ControlLaw::StaticBoundary { k: 0.1 },
            0.1,
        )
        .unwrap();
        let coeffs: Vec<(f64, f64)> = f.points().iter().map(|p| (p.coeff, p.delay)).collect();
        assert_eq!(coeffs, vec![(-0.85, 2.0), (0.1, 2.1)]);

        // Filtered law against the product form at a handful of points.
        let (a, b, delta) = (0.1, 1.0, 0.05);
        let f = build_characteristic(&transport, None, &ControlLaw::Filtered { a, b }, delta)
            .unwrap();
        for &s in &[c(0.0, 0.0), c(0.2, 3.0), c(1.0, -11.0)] {
            let rq = 0.85;
            let want = (c(1.0, 0.0) + s * b) * (c(1.0, 0.0) - (-s * 2.0).exp() * rq)
                + (c(1.0, 0.0) + s * a) * (-s * (2.0 + delta)).exp() * rq;
            assert!((f.eval(s) - want).norm() < 1e-12, "s = {s}");
        }

        let coupled = PlantConfig::new(
            1.0,
            1.0,
            1.0,
            0.85,
            Profile::Constant(1.0),
            Profile::Constant(1.0),
        )
        .unwrap();
        assert!(matches!(
            build_characteristic(&coupled, None, &ControlLaw::Filtered { a, b }, delta),
            Err(crate::Error::Unsupported(_))
        ));
    }

    #[test]
    fn characteristic_with_distributed_part_from_solved_gains() {
        let plant = PlantConfig::new(
            1.0,
            1.0,
            1.0,
            0.85,
            Profile::Constant(1.0),
            Profile::Constant(1.0),
        )
        .unwrap();
        let k = solve_kernels(&plant, 32).unwrap();
        let l = solve_inverse_kernels(&k).unwrap();
        let gains = compute_feedback_gains(&k, &l, &plant).unwrap();
        let f = build_characteristic(
            &plant,
            Some(&gains),
            &ControlLaw::PartialCancellation { k: 0.1 },
            0.1,
        )
        .unwrap();
        let coeffs: Vec<(f64, f64)> = f.points().iter().map(|p| (p.coeff, p.delay)).collect();
        assert_eq!(coeffs, vec![(-0.85, 2.0), (0.1, 2.1)]);
        let dist = f.distributed().expect("distributed part");
        assert_eq!(dist.shifts, vec![(1.0, 0.0), (-1.0, 0.1)]);

        // Zero-delay distributed part vanishes identically: I(s, 0) = 0.
        let f0 = build_characteristic(
            &plant,
            Some(&gains),
            &ControlLaw::FullCancellation,
            0.0,
        )
        .unwrap();
        for &s in &[c(0.0, 0.0), c(0.3, 5.0)] {
            assert!((f0.eval(s) - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn certificate_margin_for_the_transport_case() {
        let plant = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
        let f = build_characteristic(&plant, None, &ControlLaw::PartialCancellation { k: 0.1 }, 0.1)
            .unwrap();
        let (margin, sup_i): (f64, f64) = theorem_certificate(&f, &plant, 0.1, 100.0);
        assert!((margin - 0.05).abs() < 1e-12);
        assert_eq!(sup_i, 0.0);
    }

    #[test]
    fn contour_through_a_root_is_detected_or_dodged() {
        // Root exactly on the initial contour: re = ln(1.2)/2, im = 0 lies on
        // [re, 1] x [0, 10]'s edge. The retry logic must still deliver the
        // count for the inflated region.
        let f = CharacteristicFunction::constant(1.0).with_point(-1.2, 2.0);
        let re_root = 1.2f64.ln() / 2.0;
        let rect = Rect::new(re_root, 1.0, 0.0, 10.0).unwrap();
        let scan = count_rhp_roots(&f, &rect, &ScanOptions::default());
        match scan {
            Ok(result) => assert!(result.count >= 3),
            Err(crate::Error::ContourTooClose { .. }) => {}
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }
}
