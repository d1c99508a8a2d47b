//! Backstepping kernels, their inverses, and the boundary feedback gains.
//!
//! The direct transform subtracts a Volterra integral from the state,
//!
//! ```text
//! alpha(x) = u(x) - int_0^x Kuu(x,xi) u(xi) + Kuv(x,xi) v(xi) dxi
//! beta(x)  = v(x) - int_0^x Kvu(x,xi) u(xi) + Kvv(x,xi) v(xi) dxi
//! ```
//!
//! and removes the in-domain couplings when the four kernels satisfy, on the
//! triangle `T = {xi <= x}`,
//!
//! ```text
//! lambda Kuu_x + lambda Kuu_xi = -sigma_mp(xi) Kuv
//! lambda Kuv_x - mu     Kuv_xi = -sigma_pm(xi) Kuu
//! mu     Kvu_x - lambda Kvu_xi =  sigma_mp(xi) Kvv
//! mu     Kvv_x + mu     Kvv_xi =  sigma_pm(xi) Kvu
//! ```
//!
//! with data `Kvu(x,x) = -sigma_mp(x)/(lambda+mu)`,
//! `Kuv(x,x) = sigma_pm(x)/(lambda+mu)` on the diagonal and
//! `Kuv(x,0) = (lambda q / mu) Kuu(x,0)`,
//! `Kvv(x,0) = (lambda q / mu) Kvu(x,0)` on the lower edge.
//!
//! Each equation is integrated along its characteristic line into a Volterra
//! integral equation and the coupled system is solved by successive
//! approximations with trapezoidal panel quadrature, breaking each
//! characteristic at the grid lattice. `Kuu`/`Kvv` ride characteristics of
//! slope one, so their panels land exactly on grid nodes; `Kuv`/`Kvu` run to
//! the diagonal with slope `-lambda/mu` resp. `-mu/lambda` and read the
//! opposite kernel through bilinear interpolation.
//!
//! Note the edge conditions are what make the solve well-posed: `Kuv` and
//! `Kvu` carry diagonal data, while `Kuu(x,0)` and `Kvv(x,0)` are recovered
//! from them through the edge relations (this is where `q != 0` enters).

use crate::grid::{TriField, TriGrid};
use crate::model::{PlantConfig, Profile};
use crate::scalar::{default_tolerance, Real};
use crate::{Error, Result};

/// Options for the fixed-point solves.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions<R: Real> {
    /// Stop when the max-norm update between successive iterates drops below
    /// this.
    pub tolerance: R,
    /// Hard cap on sweeps before reporting non-convergence.
    pub max_iterations: usize,
}

impl<R: Real> Default for SolverOptions<R> {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance::<R>(),
            max_iterations: 200,
        }
    }
}

/// The four backstepping kernels on the triangular grid.
#[derive(Debug, Clone)]
pub struct KernelSet<R: Real> {
    grid: TriGrid,
    kuu: TriField<R>,
    kuv: TriField<R>,
    kvu: TriField<R>,
    kvv: TriField<R>,
    iterations: usize,
    last_update: R,
}

impl<R: Real> KernelSet<R> {
    pub fn grid(&self) -> TriGrid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn kuu(&self) -> &TriField<R> {
        &self.kuu
    }

    pub fn kuv(&self) -> &TriField<R> {
        &self.kuv
    }

    pub fn kvu(&self) -> &TriField<R> {
        &self.kvu
    }

    pub fn kvv(&self) -> &TriField<R> {
        &self.kvv
    }

    /// Sweeps it took the fixed-point iteration to converge.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Max-norm update of the final sweep.
    pub fn last_update(&self) -> R {
        self.last_update
    }

    /// Builds a kernel set directly from node values (used when re-importing
    /// exported fields). No convergence metadata is attached.
    pub fn from_fields(
        kuu: TriField<R>,
        kuv: TriField<R>,
        kvu: TriField<R>,
        kvv: TriField<R>,
    ) -> Result<Self> {
        let grid = kuu.grid();
        if kuv.grid() != grid || kvu.grid() != grid || kvv.grid() != grid {
            return Err(Error::GridMismatch(
                "kernel fields must share one triangular grid".into(),
            ));
        }
        Ok(Self {
            grid,
            kuu,
            kuv,
            kvu,
            kvv,
            iterations: 0,
            last_update: R::nan(),
        })
    }
}

/// Node samples of the profiles, shared by the sweeps.
struct PlantOnGrid<'a, R: Real> {
    plant: &'a PlantConfig<R>,
    grid: TriGrid,
    sigma_pm: Vec<R>,
    sigma_mp: Vec<R>,
}

impl<'a, R: Real> PlantOnGrid<'a, R> {
    fn new(plant: &'a PlantConfig<R>, grid: TriGrid) -> Self {
        let sample = |p: &Profile<R>| {
            (0..=grid.n())
                .map(|k| p.eval(grid.coord(k)))
                .collect::<Vec<_>>()
        };
        Self {
            plant,
            grid,
            sigma_pm: sample(plant.sigma_pm()),
            sigma_mp: sample(plant.sigma_mp()),
        }
    }

    fn speed_sum(&self) -> R {
        self.plant.lambda() + self.plant.mu()
    }
}

/// Integrates `source.sample(x(xi'), xi') * sigma(xi')` along the
/// characteristic through node `(i, j)` that runs backward to the diagonal,
/// `x(xi') = x_i - slope (xi' - xi_j)`, with trapezoidal panels broken at the
/// `xi` lattice. Returns the integral from `xi_j` to the diagonal foot `x0`.
#[allow(clippy::too_many_arguments)]
fn integral_to_diagonal<R: Real>(
    grid: TriGrid,
    source: &TriField<R>,
    sigma: &Profile<R>,
    sigma_nodes: &[R],
    i: usize,
    j: usize,
    slope: R,
    x0: R,
) -> R {
    let h: R = grid.spacing();
    let xi_j: R = grid.coord(j);
    let x_i: R = grid.coord(i);
    let eval = |xi: R, sig: R| -> R {
        let x = x_i - slope * (xi - xi_j);
        source.sample(x, xi) * sig
    };

    let mut total = R::zero();
    let mut xi_prev = xi_j;
    let mut g_prev = eval(xi_j, sigma_nodes[j]);
    let mut k = j + 1;
    let tiny = h * R::of(1e-12);
    while k <= grid.n() && grid.coord::<R>(k) < x0 - tiny {
        let xi_k: R = grid.coord(k);
        let g_k = eval(xi_k, sigma_nodes[k]);
        total += (xi_k - xi_prev) * (g_prev + g_k) * R::of(0.5);
        xi_prev = xi_k;
        g_prev = g_k;
        k += 1;
    }
    if x0 > xi_prev + tiny {
        let g_end = eval(x0, sigma.eval(x0));
        total += (x0 - xi_prev) * (g_prev + g_end) * R::of(0.5);
    }
    total
}

/// One application of the `Kuv` integral equation given `Kuu`.
fn update_kuv<R: Real>(ctx: &PlantOnGrid<R>, kuu: &TriField<R>, out: &mut TriField<R>) {
    let (lambda, mu) = (ctx.plant.lambda(), ctx.plant.mu());
    let sum = ctx.speed_sum();
    for (i, j) in ctx.grid.nodes() {
        let value = if i == j {
            ctx.sigma_pm[i] / sum
        } else {
            let x_i: R = ctx.grid.coord(i);
            let xi_j: R = ctx.grid.coord(j);
            let x0 = (mu * x_i + lambda * xi_j) / sum;
            let integral = integral_to_diagonal(
                ctx.grid,
                kuu,
                ctx.plant.sigma_pm(),
                &ctx.sigma_pm,
                i,
                j,
                lambda / mu,
                x0,
            );
            ctx.plant.sigma_pm().eval(x0) / sum - integral / mu
        };
        out.set(i, j, value);
    }
}

/// One application of the `Kvu` integral equation given `Kvv`.
fn update_kvu<R: Real>(ctx: &PlantOnGrid<R>, kvv: &TriField<R>, out: &mut TriField<R>) {
    let (lambda, mu) = (ctx.plant.lambda(), ctx.plant.mu());
    let sum = ctx.speed_sum();
    for (i, j) in ctx.grid.nodes() {
        let value = if i == j {
            -ctx.sigma_mp[i] / sum
        } else {
            let x_i: R = ctx.grid.coord(i);
            let xi_j: R = ctx.grid.coord(j);
            let x0 = (lambda * x_i + mu * xi_j) / sum;
            let integral = integral_to_diagonal(
                ctx.grid,
                kvv,
                ctx.plant.sigma_mp(),
                &ctx.sigma_mp,
                i,
                j,
                mu / lambda,
                x0,
            );
            -ctx.plant.sigma_mp().eval(x0) / sum + integral / lambda
        };
        out.set(i, j, value);
    }
}

/// One application of the `Kuu` integral equation given `Kuv`. The slope-one
/// characteristic from `(x_i - xi_j, 0)` passes through grid nodes only.
fn update_kuu<R: Real>(ctx: &PlantOnGrid<R>, kuv: &TriField<R>, out: &mut TriField<R>) {
    let (lambda, mu, q) = (ctx.plant.lambda(), ctx.plant.mu(), ctx.plant.q());
    let h: R = ctx.grid.spacing();
    let half = R::of(0.5);
    for (i, j) in ctx.grid.nodes() {
        let edge = kuv.get(i - j, 0) * mu / (lambda * q);
        let value = if j == 0 {
            edge
        } else {
            let mut integral = R::zero();
            for k in 0..j {
                let g0 = kuv.get(i - j + k, k) * ctx.sigma_mp[k];
                let g1 = kuv.get(i - j + k + 1, k + 1) * ctx.sigma_mp[k + 1];
                integral += h * half * (g0 + g1);
            }
            edge - integral / lambda
        };
        out.set(i, j, value);
    }
}

/// One application of the `Kvv` integral equation given `Kvu`.
fn update_kvv<R: Real>(ctx: &PlantOnGrid<R>, kvu: &TriField<R>, out: &mut TriField<R>) {
    let (lambda, mu, q) = (ctx.plant.lambda(), ctx.plant.mu(), ctx.plant.q());
    let h: R = ctx.grid.spacing();
    let half = R::of(0.5);
    for (i, j) in ctx.grid.nodes() {
        let edge = kvu.get(i - j, 0) * lambda * q / mu;
        let value = if j == 0 {
            edge
        } else {
            let mut integral = R::zero();
            for k in 0..j {
                let g0 = kvu.get(i - j + k, k) * ctx.sigma_pm[k];
                let g1 = kvu.get(i - j + k + 1, k + 1) * ctx.sigma_pm[k + 1];
                integral += h * half * (g0 + g1);
            }
            edge + integral / mu
        };
        out.set(i, j, value);
    }
}

/// Solves the kernel equations with default options.
pub fn solve_kernels<R: Real>(plant: &PlantConfig<R>, n: usize) -> Result<KernelSet<R>> {
    solve_kernels_with(plant, n, &SolverOptions::default())
}

/// Solves the kernel equations by successive approximations.
///
/// Within each sweep, `Kuv` is refreshed from the previous `Kuu` and the new
/// `Kuv` immediately feeds the `Kuu` edge data (and likewise for the
/// `Kvu`/`Kvv` pair), so the diagonal and edge conditions hold exactly at
/// every iterate.
pub fn solve_kernels_with<R: Real>(
    plant: &PlantConfig<R>,
    n: usize,
    options: &SolverOptions<R>,
) -> Result<KernelSet<R>> {
    if n < 2 {
        return Err(Error::Precondition(format!(
            "kernel grid needs n >= 2, got {n}"
        )));
    }
    let grid = TriGrid::new(n);
    let ctx = PlantOnGrid::new(plant, grid);

    let mut kuu = TriField::zeros(grid);
    let mut kuv = TriField::zeros(grid);
    let mut kvu = TriField::zeros(grid);
    let mut kvv = TriField::zeros(grid);
    let mut next_kuu = TriField::zeros(grid);
    let mut next_kuv = TriField::zeros(grid);
    let mut next_kvu = TriField::zeros(grid);
    let mut next_kvv = TriField::zeros(grid);

    let mut last_update = R::infinity();
    for sweep in 1..=options.max_iterations {
        update_kuv(&ctx, &kuu, &mut next_kuv);
        update_kuu(&ctx, &next_kuv, &mut next_kuu);
        update_kvu(&ctx, &kvv, &mut next_kvu);
        update_kvv(&ctx, &next_kvu, &mut next_kvv);

        last_update = next_kuu
            .max_diff(&kuu)
            .max(next_kuv.max_diff(&kuv))
            .max(next_kvu.max_diff(&kvu))
            .max(next_kvv.max_diff(&kvv));

        std::mem::swap(&mut kuu, &mut next_kuu);
        std::mem::swap(&mut kuv, &mut next_kuv);
        std::mem::swap(&mut kvu, &mut next_kvu);
        std::mem::swap(&mut kvv, &mut next_kvv);

        if last_update <= options.tolerance {
            return Ok(KernelSet {
                grid,
                kuu,
                kuv,
                kvu,
                kvv,
                iterations: sweep,
                last_update,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "kernel fixed-point iteration",
        iterations: options.max_iterations,
        residual: last_update.to_f64().unwrap_or(f64::NAN),
    })
}

/// Max-norm defect of each kernel's characteristic-line integral equation.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport<R: Real> {
    pub kuu: R,
    pub kuv: R,
    pub kvu: R,
    pub kvv: R,
}

impl<R: Real> ResidualReport<R> {
    pub fn max(&self) -> R {
        self.kuu.max(self.kuv).max(self.kvu).max(self.kvv)
    }
}

/// Re-applies every integral equation to the stored fields and reports the
/// node-wise defect, field by field. Independent of the solver path: a single
/// Jacobi application of the equations to whatever fields are passed in.
pub fn verify_kernel_residual<R: Real>(
    kernels: &KernelSet<R>,
    plant: &PlantConfig<R>,
) -> ResidualReport<R> {
    let ctx = PlantOnGrid::new(plant, kernels.grid);
    let mut rhs = TriField::zeros(kernels.grid);

    update_kuv(&ctx, &kernels.kuu, &mut rhs);
    let kuv = rhs.max_diff(&kernels.kuv);
    update_kuu(&ctx, &kernels.kuv, &mut rhs);
    let kuu = rhs.max_diff(&kernels.kuu);
    update_kvu(&ctx, &kernels.kvv, &mut rhs);
    let kvu = rhs.max_diff(&kernels.kvu);
    update_kvv(&ctx, &kernels.kvu, &mut rhs);
    let kvv = rhs.max_diff(&kernels.kvv);

    ResidualReport { kuu, kuv, kvu, kvv }
}

/// Kernels of the inverse Volterra transform on the same grid.
#[derive(Debug, Clone)]
pub struct InverseKernelSet<R: Real> {
    grid: TriGrid,
    laa: TriField<R>,
    lab: TriField<R>,
    lba: TriField<R>,
    lbb: TriField<R>,
    iterations: usize,
    last_update: R,
}

impl<R: Real> InverseKernelSet<R> {
    pub fn grid(&self) -> TriGrid {
        self.grid
    }

    pub fn laa(&self) -> &TriField<R> {
        &self.laa
    }

    pub fn lab(&self) -> &TriField<R> {
        &self.lab
    }

    pub fn lba(&self) -> &TriField<R> {
        &self.lba
    }

    pub fn lbb(&self) -> &TriField<R> {
        &self.lbb
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn last_update(&self) -> R {
        self.last_update
    }
}

/// Solves the reciprocity identity `L = K + K (*) L` with default options.
pub fn solve_inverse_kernels<R: Real>(kernels: &KernelSet<R>) -> Result<InverseKernelSet<R>> {
    solve_inverse_kernels_with(kernels, &SolverOptions::default())
}

/// Solves `L = K + K (*) L`, where `(*)` composes lower-triangular Volterra
/// kernels, `(K (*) L)(x, xi) = int_xi^x K(x, s) L(s, xi) ds` with the 2x2
/// matrix product inside, discretized by the trapezoidal rule on the shared
/// grid. The Neumann series converges superlinearly, so plain successive
/// substitution is used.
pub fn solve_inverse_kernels_with<R: Real>(
    kernels: &KernelSet<R>,
    options: &SolverOptions<R>,
) -> Result<InverseKernelSet<R>> {
    let grid = kernels.grid;
    let h: R = grid.spacing();
    let half = R::of(0.5);

    let mut laa = kernels.kuu.clone();
    let mut lab = kernels.kuv.clone();
    let mut lba = kernels.kvu.clone();
    let mut lbb = kernels.kvv.clone();
    let mut next_laa = TriField::zeros(grid);
    let mut next_lab = TriField::zeros(grid);
    let mut next_lba = TriField::zeros(grid);
    let mut next_lbb = TriField::zeros(grid);

    let mut last_update = R::infinity();
    for sweep in 1..=options.max_iterations {
        for (i, j) in grid.nodes() {
            let mut saa = R::zero();
            let mut sab = R::zero();
            let mut sba = R::zero();
            let mut sbb = R::zero();
            if i > j {
                for k in j..=i {
                    let w = if k == j || k == i { half } else { R::one() };
                    let (kuu, kuv) = (kernels.kuu.get(i, k), kernels.kuv.get(i, k));
                    let (kvu, kvv) = (kernels.kvu.get(i, k), kernels.kvv.get(i, k));
                    let (vaa, vab) = (laa.get(k, j), lab.get(k, j));
                    let (vba, vbb) = (lba.get(k, j), lbb.get(k, j));
                    saa += w * (kuu * vaa + kuv * vba);
                    sab += w * (kuu * vab + kuv * vbb);
                    sba += w * (kvu * vaa + kvv * vba);
                    sbb += w * (kvu * vab + kvv * vbb);
                }
            }
            next_laa.set(i, j, kernels.kuu.get(i, j) + h * saa);
            next_lab.set(i, j, kernels.kuv.get(i, j) + h * sab);
            next_lba.set(i, j, kernels.kvu.get(i, j) + h * sba);
            next_lbb.set(i, j, kernels.kvv.get(i, j) + h * sbb);
        }

        last_update = next_laa
            .max_diff(&laa)
            .max(next_lab.max_diff(&lab))
            .max(next_lba.max_diff(&lba))
            .max(next_lbb.max_diff(&lbb));

        std::mem::swap(&mut laa, &mut next_laa);
        std::mem::swap(&mut lab, &mut next_lab);
        std::mem::swap(&mut lba, &mut next_lba);
        std::mem::swap(&mut lbb, &mut next_lbb);

        if last_update <= options.tolerance {
            return Ok(InverseKernelSet {
                grid,
                laa,
                lab,
                lba,
                lbb,
                iterations: sweep,
                last_update,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "inverse kernel Neumann series",
        iterations: options.max_iterations,
        residual: last_update.to_f64().unwrap_or(f64::NAN),
    })
}

/// Boundary feedback gains and the distributed-delay kernel.
///
/// `n_alpha`, `n_beta` live on the `xi` grid over `[0,1]`; `ntilde` lives on
/// a uniform grid over `[0, tau]` with spacing `1/(n max(lambda, mu))`, the
/// simulator time step, so the split point `1/mu` lands on or within half a
/// cell of a sample.
#[derive(Debug, Clone)]
pub struct FeedbackGains<R: Real> {
    n_alpha: Vec<R>,
    n_beta: Vec<R>,
    ntilde: Vec<R>,
    dnu: R,
    tau: R,
}

impl<R: Real> FeedbackGains<R> {
    pub fn n_alpha(&self) -> &[R] {
        &self.n_alpha
    }

    pub fn n_beta(&self) -> &[R] {
        &self.n_beta
    }

    /// Samples of `ntilde` on the uniform `[0, tau]` grid.
    pub fn ntilde(&self) -> &[R] {
        &self.ntilde
    }

    pub fn dnu(&self) -> R {
        self.dnu
    }

    pub fn tau(&self) -> R {
        self.tau
    }

    /// Linear interpolation of `n_alpha` at `xi in [0,1]`.
    pub fn n_alpha_at(&self, xi: R) -> R {
        interp_uniform(&self.n_alpha, R::zero(), R::one(), xi)
    }

    /// Linear interpolation of `n_beta` at `xi in [0,1]`.
    pub fn n_beta_at(&self, xi: R) -> R {
        interp_uniform(&self.n_beta, R::zero(), R::one(), xi)
    }
}

/// Linear interpolation on a uniform table over `[lo, hi]`, clamped.
pub(crate) fn interp_uniform<R: Real>(table: &[R], lo: R, hi: R, x: R) -> R {
    debug_assert!(table.len() >= 2);
    let m = table.len() - 1;
    let t = ((x - lo) / (hi - lo)).max(R::zero()).min(R::one()) * R::of_usize(m);
    let cell = t.floor().to_usize().unwrap_or(0).min(m - 1);
    let frac = t - R::of_usize(cell);
    table[cell] + (table[cell + 1] - table[cell]) * frac
}

/// Assembles the boundary gains
/// `N_alpha(xi) = Lba(1, xi) - rho Laa(1, xi)`,
/// `N_beta(xi)  = Lbb(1, xi) - rho Lab(1, xi)`
/// and the distributed-delay kernel
///
/// ```text
/// ntilde(nu) = q lambda N_alpha(lambda nu - lambda/mu)  for nu in [1/mu, tau]
///            + mu       N_beta(1 - mu nu)               for nu in [0, 1/mu)
/// ```
///
/// with the convention that `nu = 1/mu` takes the `N_alpha` branch (a
/// measure-zero choice, irrelevant to the quadratures downstream).
///
/// The factor `q` on the `N_alpha` branch comes from the reflection the
/// rightward family picks up at `x = 0` before its value reappears in the
/// boundary history (`alpha(t, xi) = q beta(t - xi/lambda - 1/mu, 1)`);
/// dropping it leaves the reduction measurably inconsistent with the
/// simulated traces whenever `q != 1`.
pub fn compute_feedback_gains<R: Real>(
    kernels: &KernelSet<R>,
    inverse: &InverseKernelSet<R>,
    plant: &PlantConfig<R>,
) -> Result<FeedbackGains<R>> {
    if kernels.grid != inverse.grid {
        return Err(Error::GridMismatch(format!(
            "direct kernels on n = {} but inverse kernels on n = {}",
            kernels.grid.n(),
            inverse.grid.n()
        )));
    }
    let grid = kernels.grid;
    let n = grid.n();
    let rho = plant.rho();
    let (lambda, mu) = (plant.lambda(), plant.mu());
    let tau = lambda.recip() + mu.recip();

    let n_alpha: Vec<R> = (0..=n)
        .map(|j| inverse.lba.get(n, j) - rho * inverse.laa.get(n, j))
        .collect();
    let n_beta: Vec<R> = (0..=n)
        .map(|j| inverse.lbb.get(n, j) - rho * inverse.lab.get(n, j))
        .collect();

    let speed_max = lambda.max(mu);
    let cells = (tau * R::of_usize(n) * speed_max)
        .round()
        .to_usize()
        .unwrap_or(0)
        .max(2);
    let dnu = tau / R::of_usize(cells);
    let split = mu.recip();
    let eps = dnu * R::of(1e-9);

    let q = plant.q();
    let ntilde: Vec<R> = (0..=cells)
        .map(|k| {
            let nu = dnu * R::of_usize(k);
            if nu >= split - eps {
                q * lambda
                    * interp_uniform(&n_alpha, R::zero(), R::one(), lambda * nu - lambda / mu)
            } else {
                mu * interp_uniform(&n_beta, R::zero(), R::one(), R::one() - mu * nu)
            }
        })
        .collect();

    Ok(FeedbackGains {
        n_alpha,
        n_beta,
        ntilde,
        dnu,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlantConfig;
    use crate::sim::{inverse_transform_state, transform_state, PdeState};

    fn benchmark_plant() -> PlantConfig<f64> {
        PlantConfig::new(
            1.0,
            1.0,
            1.0,
            0.85,
            Profile::Constant(1.0),
            Profile::Constant(1.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_profiles_give_exactly_zero_kernels() {
        let plant = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
        let kernels = solve_kernels(&plant, 32).unwrap();
        for field in [kernels.kuu(), kernels.kuv(), kernels.kvu(), kernels.kvv()] {
            assert!(field.values().iter().all(|&v| v == 0.0));
        }
        assert!(kernels.iterations() <= 2);
    }

    #[test]
    fn diagonal_and_edge_conditions_hold() {
        let plant = benchmark_plant();
        let kernels = solve_kernels(&plant, 40).unwrap();
        let g = kernels.grid();
        for i in 0..=g.n() {
            // Kvu(x,x) = -sigma_mp/(lambda+mu) = -0.5, Kuv(x,x) = 0.5.
            assert!((kernels.kvu().get(i, i) + 0.5).abs() < 1e-14);
            assert!((kernels.kuv().get(i, i) - 0.5).abs() < 1e-14);
            // Edge: Kuv(x,0) = (lambda q/mu) Kuu(x,0), same for Kvv/Kvu.
            assert!((kernels.kuv().get(i, 0) - kernels.kuu().get(i, 0)).abs() < 1e-12);
            assert!((kernels.kvv().get(i, 0) - kernels.kvu().get(i, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_small_after_convergence_and_zero_for_zero() {
        let plant = benchmark_plant();
        let kernels = solve_kernels(&plant, 64).unwrap();
        let report = verify_kernel_residual(&kernels, &plant);
        assert!(report.max() <= 1e-8, "residual {:?}", report);

        let zero_plant = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
        let zero = solve_kernels(&zero_plant, 16).unwrap();
        assert_eq!(verify_kernel_residual(&zero, &zero_plant).max(), 0.0);
    }

    #[test]
    fn residual_detects_a_perturbed_node() {
        let plant = benchmark_plant();
        let kernels = solve_kernels(&plant, 24).unwrap();
        let mut kuu = kernels.kuu().clone();
        kuu.set(17, 5, kuu.get(17, 5) + 0.1);
        let perturbed = KernelSet::from_fields(
            kuu,
            kernels.kuv().clone(),
            kernels.kvu().clone(),
            kernels.kvv().clone(),
        )
        .unwrap();
        let report = verify_kernel_residual(&perturbed, &plant);
        assert!(report.kuu >= 0.01, "kuu residual {}", report.kuu);
    }

    #[test]
    fn small_coupling_regime_is_linear() {
        let scaled = |c: f64| {
            PlantConfig::new(
                1.0,
                1.0,
                1.0,
                0.85,
                Profile::Constant(c),
                Profile::Constant(c),
            )
            .unwrap()
        };
        // The converged solve at c = 1e-6 coincides with its own first
        // Picard iterate to second order in c.
        let one_sweep = SolverOptions {
            tolerance: f64::INFINITY,
            max_iterations: 1,
        };
        let c = 1e-6;
        let full = solve_kernels(&scaled(c), 24).unwrap();
        let first = solve_kernels_with(&scaled(c), 24, &one_sweep).unwrap();
        let diff = full
            .kuu()
            .max_diff(first.kuu())
            .max(full.kuv().max_diff(first.kuv()))
            .max(full.kvu().max_diff(first.kvu()))
            .max(full.kvv().max_diff(first.kvv()));
        assert!(diff < 1e-11, "second-order remainder {diff}");

        // And scaling c by 100 scales the kernels by 100 up to O(c).
        let big = solve_kernels(&scaled(100.0 * c), 24).unwrap();
        let mismatch = big
            .kuv()
            .values()
            .iter()
            .zip(full.kuv().values())
            .map(|(b, f)| (b - 100.0 * f).abs())
            .fold(0.0f64, f64::max);
        assert!(mismatch < 1e-8, "nonlinear remainder {mismatch}");
    }

    #[test]
    fn self_convergence_is_at_least_first_order() {
        let plant = benchmark_plant();
        let probe = |n: usize| {
            let k = solve_kernels(&plant, n).unwrap();
            [
                k.kuu().sample(1.0, 0.5),
                k.kuv().sample(1.0, 0.5),
                k.kvu().sample(1.0, 0.5),
                k.kvv().sample(1.0, 0.5),
            ]
        };
        let (a, b, c) = (probe(32), probe(64), probe(128));
        for f in 0..4 {
            let d1 = (a[f] - b[f]).abs();
            let d2 = (b[f] - c[f]).abs();
            let order = (d1 / d2).log2();
            assert!(order >= 1.0, "field {f}: order {order} (d1={d1:e}, d2={d2:e})");
        }
    }

    #[test]
    fn inverse_of_zero_is_zero_and_reciprocity_holds() {
        let zero_plant = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
        let zero = solve_kernels(&zero_plant, 16).unwrap();
        let inv = solve_inverse_kernels(&zero).unwrap();
        assert!(inv.laa().values().iter().all(|&v| v == 0.0));
        assert!(inv.lbb().values().iter().all(|&v| v == 0.0));

        // Independent trapezoid check of L = K + K (*) L on the top row.
        let plant = benchmark_plant();
        let k = solve_kernels(&plant, 48).unwrap();
        let l = solve_inverse_kernels(&k).unwrap();
        let n = k.n();
        let h = 1.0 / n as f64;
        for j in [0usize, 7, 23, 48] {
            let mut saa = 0.0;
            let mut sba = 0.0;
            if j < n {
                for s in j..=n {
                    let w = if s == j || s == n { 0.5 } else { 1.0 };
                    saa += w * (k.kuu().get(n, s) * l.laa().get(s, j)
                        + k.kuv().get(n, s) * l.lba().get(s, j));
                    sba += w * (k.kvu().get(n, s) * l.laa().get(s, j)
                        + k.kvv().get(n, s) * l.lba().get(s, j));
                }
            }
            let raa = (k.kuu().get(n, j) + h * saa - l.laa().get(n, j)).abs();
            let rba = (k.kvu().get(n, j) + h * sba - l.lba().get(n, j)).abs();
            assert!(raa < 1e-9 && rba < 1e-9, "reciprocity defect {raa:e}/{rba:e}");
        }
    }

    #[test]
    fn transform_round_trip_refines_at_first_order() {
        let plant = benchmark_plant();
        let roundtrip_err = |n: usize| {
            let k = solve_kernels(&plant, n).unwrap();
            let l = solve_inverse_kernels(&k).unwrap();
            let state = PdeState::<f64>::from_profiles(
                &Profile::Tabulated(
                    (0..=n)
                        .map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin())
                        .collect(),
                ),
                &Profile::Tabulated(
                    (0..=n)
                        .map(|i| (std::f64::consts::PI * i as f64 / n as f64).cos())
                        .collect(),
                ),
                n,
                0.0,
            );
            let (alpha, beta) = transform_state(&state, &k).unwrap();
            let (u, v) = inverse_transform_state(&alpha, &beta, &l).unwrap();
            state
                .u
                .iter()
                .zip(&u)
                .chain(state.v.iter().zip(&v))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        let e64 = roundtrip_err(64);
        let e128 = roundtrip_err(128);
        assert!(e64 < 0.05, "round-trip error too large: {e64}");
        assert!(e128 < 0.7 * e64, "no refinement: {e64} -> {e128}");
    }

    #[test]
    fn gains_match_their_defining_formulas() {
        let plant = benchmark_plant();
        let k = solve_kernels(&plant, 32).unwrap();
        let l = solve_inverse_kernels(&k).unwrap();
        let gains = compute_feedback_gains(&k, &l, &plant).unwrap();
        let n = k.n();
        for j in 0..=n {
            let want_a = l.lba().get(n, j) - 0.85 * l.laa().get(n, j);
            let want_b = l.lbb().get(n, j) - 0.85 * l.lab().get(n, j);
            assert_eq!(gains.n_alpha()[j], want_a);
            assert_eq!(gains.n_beta()[j], want_b);
        }
        assert_eq!(gains.tau(), 2.0);

        // Independent re-evaluation of the ntilde split at random points:
        // lambda = mu = 1 puts the switch at nu = 1.
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut rand01 = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let nu = 2.0 * rand01();
            let expected = if nu >= 1.0 {
                gains.n_alpha_at(nu - 1.0)
            } else {
                gains.n_beta_at(1.0 - nu)
            };
            let got = interp_uniform(gains.ntilde(), 0.0, gains.tau(), nu);
            // The stored table smooths the jump at nu = 1 over one cell.
            if (nu - 1.0).abs() > gains.dnu() {
                assert!(
                    (got - expected).abs() < 2.0 * gains.dnu(),
                    "ntilde({nu}) = {got} vs {expected}"
                );
            }
        }
        // Exactly at the split the alpha branch wins.
        let at_split = gains.ntilde()[32];
        assert_eq!(at_split, gains.n_alpha_at(0.0));
    }

    #[test]
    fn ntilde_alpha_branch_carries_the_distal_reflection() {
        // alpha(t, xi) = q beta(t - xi/lambda - 1/mu, 1): the rightward
        // branch of ntilde is scaled by q, the leftward one is not.
        let q = 0.7;
        let plant = PlantConfig::new(
            1.0,
            1.0,
            q,
            0.85,
            Profile::Constant(1.0),
            Profile::Constant(1.0),
        )
        .unwrap();
        let k = solve_kernels(&plant, 32).unwrap();
        let l = solve_inverse_kernels(&k).unwrap();
        let gains = compute_feedback_gains(&k, &l, &plant).unwrap();
        // Sample well inside each branch (lambda = mu = 1, split at nu = 1).
        let idx_alpha = 48; // nu = 1.5 -> q * n_alpha(0.5)
        let idx_beta = 16; // nu = 0.5 ->     n_beta(0.5)
        assert_eq!(gains.ntilde()[idx_alpha], q * gains.n_alpha_at(0.5));
        assert_eq!(gains.ntilde()[idx_beta], gains.n_beta_at(0.5));
    }

    #[test]
    fn zero_kernels_give_zero_gains() {
        let plant = PlantConfig::transport(1.0, 1.0, 1.0, 0.85).unwrap();
        let k = solve_kernels(&plant, 16).unwrap();
        let l = solve_inverse_kernels(&k).unwrap();
        let gains = compute_feedback_gains(&k, &l, &plant).unwrap();
        assert!(gains.n_alpha().iter().all(|&x| x == 0.0));
        assert!(gains.n_beta().iter().all(|&x| x == 0.0));
        assert!(gains.ntilde().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let plant = benchmark_plant();
        let k32 = solve_kernels(&plant, 32).unwrap();
        let k16 = solve_kernels(&plant, 16).unwrap();
        let l16 = solve_inverse_kernels(&k16).unwrap();
        assert!(matches!(
            compute_feedback_gains(&k32, &l16, &plant),
            Err(crate::Error::GridMismatch(_))
        ));
    }

    #[test]
    fn tiny_grid_is_rejected() {
        let plant = benchmark_plant();
        assert!(solve_kernels(&plant, 1).is_err());
    }
}
