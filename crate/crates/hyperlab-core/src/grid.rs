//! Uniform triangular grid on `T = {(x, xi) : 0 <= xi <= x <= 1}`.

use crate::scalar::Real;

/// Node layout for the triangle, `n + 1` nodes per axis, row-packed so that
/// node `(i, j)` (with `j <= i`) lives at index `i (i + 1) / 2 + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriGrid {
    n: usize,
}

impl TriGrid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "triangular grid needs n >= 1");
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing<R: Real>(&self) -> R {
        R::of_usize(self.n).recip()
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 2) / 2
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i <= self.n);
        i * (i + 1) / 2 + j
    }

    pub fn coord<R: Real>(&self, k: usize) -> R {
        R::of_usize(k) * self.spacing::<R>()
    }

    /// Iterates nodes in row order: `(0,0), (1,0), (1,1), (2,0), ...`.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.n).flat_map(|i| (0..=i).map(move |j| (i, j)))
    }
}

/// Scalar field sampled on a [`TriGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriField<R: Real> {
    grid: TriGrid,
    values: Vec<R>,
}

impl<R: Real> TriField<R> {
    pub fn zeros(grid: TriGrid) -> Self {
        Self {
            grid,
            values: vec![R::zero(); grid.node_count()],
        }
    }

    pub fn grid(&self) -> TriGrid {
        self.grid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> R {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: R) {
        let idx = self.grid.index(i, j);
        self.values[idx] = value;
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    /// Max-norm of the node-wise difference to another field on the same grid.
    pub fn max_diff(&self, other: &Self) -> R {
        debug_assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .fold(R::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    pub fn max_abs(&self) -> R {
        self.values.iter().fold(R::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Interpolated value at `(x, xi)` with `xi <= x`, both in `[0,1]`.
    ///
    /// Bilinear inside interior cells; cells cut by the diagonal are
    /// interpolated barycentrically on the lower triangle so only nodes of
    /// `T` are ever read. Queries are clamped to the triangle, which absorbs
    /// roundoff from characteristic tracing.
    pub fn sample(&self, x: R, xi: R) -> R {
        let n = self.grid.n;
        let nf = R::of_usize(n);
        let x = x.max(R::zero()).min(R::one());
        let xi = xi.max(R::zero()).min(x);

        // Snap queries that are within roundoff of a grid line; the solver's
        // exact-node characteristic paths rely on this.
        let snap = |p: R| {
            let r = p.round();
            if (p - r).abs() <= R::of(1e-9) {
                r
            } else {
                p
            }
        };
        let px = snap(x * nf);
        let pxi = snap(xi * nf).min(px);
        let i = px.floor().to_usize().unwrap_or(0).min(n - 1);
        let j = pxi.floor().to_usize().unwrap_or(0).min(i);
        let fx = px - R::of_usize(i);
        let fxi = pxi - R::of_usize(j);

        if j < i {
            // Full square cell.
            let v00 = self.get(i, j);
            let v10 = self.get(i + 1, j);
            let v01 = self.get(i, j + 1);
            let v11 = self.get(i + 1, j + 1);
            let bottom = v00 + (v10 - v00) * fx;
            let top = v01 + (v11 - v01) * fx;
            bottom + (top - bottom) * fxi
        } else {
            // Diagonal cell: lower triangle (i,i), (i+1,i), (i+1,i+1).
            let fxi = fxi.min(fx);
            let v00 = self.get(i, j);
            let v10 = self.get(i + 1, j);
            let v11 = self.get(i + 1, j + 1);
            v00 * (R::one() - fx) + v10 * (fx - fxi) + v11 * fxi
        }
    }
}
