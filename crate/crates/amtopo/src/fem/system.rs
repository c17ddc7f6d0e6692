//! Symmetric banded linear systems with Dirichlet elimination and a direct
//! Cholesky solver.
//!
//! All global matrices in this crate come from bilinear quads on a structured
//! grid numbered with the short axis fastest, so they are narrow-banded; a
//! dense-band Cholesky factorization is both simpler and considerably faster
//! here than a general sparse factorization. Constraints are applied by
//! symmetric row/column elimination with right-hand-side correction, which
//! keeps the matrix positive definite.

use crate::error::{Error, Result};

/// Maps global node indices to a compact, contiguous index set covering only
/// the nodes touched by an active element subset.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Sorted global node ids of the active region.
    pub active_nodes: Vec<usize>,
    /// Global node id -> compact index, `u32::MAX` when inactive.
    compact: Vec<u32>,
}

impl DofMap {
    /// Identity map over `num_nodes` nodes.
    pub fn full(num_nodes: usize) -> DofMap {
        DofMap {
            active_nodes: (0..num_nodes).collect(),
            compact: (0..num_nodes as u32).collect(),
        }
    }

    /// Map covering exactly `active_nodes` (must be sorted and unique).
    pub fn from_active_nodes(num_nodes: usize, active_nodes: Vec<usize>) -> DofMap {
        debug_assert!(active_nodes.windows(2).all(|w| w[0] < w[1]));
        let mut compact = vec![u32::MAX; num_nodes];
        for (k, &n) in active_nodes.iter().enumerate() {
            compact[n] = k as u32;
        }
        DofMap {
            active_nodes,
            compact,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.active_nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.active_nodes.is_empty()
    }

    /// Compact index of a global node; panics if the node is inactive.
    #[inline]
    pub fn index_of(&self, node: usize) -> usize {
        let c = self.compact[node];
        debug_assert!(c != u32::MAX, "node {node} is not in the active region");
        c as usize
    }

    #[inline]
    pub fn contains(&self, node: usize) -> bool {
        self.compact[node] != u32::MAX
    }

    /// Scatters a compact solution vector back to a full-length nodal field,
    /// filling inactive nodes with `fill` (one dof per node).
    pub fn scatter(&self, compact: &[f64], num_nodes: usize, fill: f64) -> Vec<f64> {
        assert_eq!(compact.len(), self.len());
        let mut full = vec![fill; num_nodes];
        for (k, &n) in self.active_nodes.iter().enumerate() {
            full[n] = compact[k];
        }
        full
    }
}

/// Symmetric banded matrix plus right-hand side and Dirichlet constraints.
///
/// Only the lower band is stored, row-major: row `i` keeps the entries
/// `A[i][i-bw..=i]` contiguously, zero-padded near the top rows.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    n: usize,
    bw: usize,
    band: Vec<f64>,
    rhs: Vec<f64>,
    dirichlet: Vec<(usize, f64)>,
}

impl LinearSystem {
    /// Creates an empty system of `n` dofs with lower bandwidth `bw`
    /// (number of stored sub-diagonals).
    pub fn new(n: usize, bw: usize) -> LinearSystem {
        let bw = bw.min(n.saturating_sub(1));
        LinearSystem {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
            rhs: vec![0.0; n],
            dirichlet: Vec::new(),
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Adds `v` to the matrix entry `(i, j)`. Symmetric storage: the call
    /// covers both `(i, j)` and `(j, i)`; add each unordered pair once.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi < self.n);
        debug_assert!(
            hi - lo <= self.bw,
            "entry ({i}, {j}) outside bandwidth {}",
            self.bw
        );
        self.band[hi * (self.bw + 1) + self.bw - (hi - lo)] += v;
    }

    #[inline]
    pub fn add_rhs(&mut self, i: usize, v: f64) {
        self.rhs[i] += v;
    }

    pub fn rhs_mut(&mut self) -> &mut [f64] {
        &mut self.rhs
    }

    /// Pins dof `i` to `value` (applied during factorization).
    pub fn set_dirichlet(&mut self, i: usize, value: f64) {
        debug_assert!(i < self.n);
        self.dirichlet.push((i, value));
    }

    /// Applies constraints, factors the matrix, and solves for the stored
    /// right-hand side in one step.
    pub fn solve(self) -> Result<Vec<f64>> {
        let rhs = self.rhs.clone();
        let factored = self.factor()?;
        factored.solve(rhs)
    }

    /// Applies the Dirichlet constraints by symmetric elimination and
    /// computes the Cholesky factorization. The factorization can solve for
    /// many right-hand sides (state and adjoint problems share operators).
    pub fn factor(self) -> Result<Factored> {
        let LinearSystem {
            n,
            bw,
            mut band,
            rhs: base_rhs,
            dirichlet,
        } = self;
        if n == 0 {
            return Err(Error::BadSystem("empty system".into()));
        }
        let w = bw + 1;

        let mut constrained = vec![false; n];
        let mut values = vec![0.0; n];
        for &(i, v) in &dirichlet {
            constrained[i] = true;
            values[i] = v;
        }

        // Record couplings between free and constrained dofs so later
        // right-hand sides get the same elimination correction, then zero the
        // constrained rows/columns and put 1 on their diagonals.
        let mut corrections: Vec<(usize, usize, f64)> = Vec::new();
        if !dirichlet.is_empty() {
            for i in 0..n {
                for off in 1..=bw.min(i) {
                    let j = i - off;
                    let a = band[i * w + bw - off];
                    if a == 0.0 {
                        continue;
                    }
                    match (constrained[i], constrained[j]) {
                        (false, true) => corrections.push((i, j, a)),
                        (true, false) => corrections.push((j, i, a)),
                        (true, true) => {}
                        (false, false) => continue,
                    }
                    band[i * w + bw - off] = 0.0;
                }
                if constrained[i] {
                    band[i * w + bw] = 1.0;
                }
            }
        }

        let matrix = band.clone();
        let mut l = band;

        // Banded Cholesky, in place on the lower band (LAPACK dpbtrf style).
        for i in 0..n {
            let jstart = i.saturating_sub(bw);
            for j in jstart..i {
                let kstart = jstart.max(j.saturating_sub(bw));
                let mut s = l[i * w + bw - (i - j)];
                for k in kstart..j {
                    s -= l[i * w + bw - (i - k)] * l[j * w + bw - (j - k)];
                }
                let djj = l[j * w + bw];
                l[i * w + bw - (i - j)] = s / djj;
            }
            let mut d = l[i * w + bw];
            for k in jstart..i {
                let lik = l[i * w + bw - (i - k)];
                d -= lik * lik;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::BadSystem(format!(
                    "matrix is not positive definite (pivot {d:.3e} at dof {i}); \
                     check constraints and material floors"
                )));
            }
            l[i * w + bw] = d.sqrt();
        }

        Ok(Factored {
            n,
            bw,
            l,
            matrix,
            base_rhs,
            constrained,
            values,
            corrections,
        })
    }
}

/// Cholesky factorization with the constraint data needed to solve repeated
/// right-hand sides against the same operator.
#[derive(Debug, Clone)]
pub struct Factored {
    n: usize,
    bw: usize,
    /// Cholesky factor, same banded layout as the input.
    l: Vec<f64>,
    /// Constraint-eliminated matrix, kept for the residual check.
    matrix: Vec<f64>,
    /// Right-hand side accumulated during assembly.
    base_rhs: Vec<f64>,
    constrained: Vec<bool>,
    values: Vec<f64>,
    /// `(free dof, constrained dof, original coupling)` triplets.
    corrections: Vec<(usize, usize, f64)>,
}

/// Relative residual bound enforced after every direct solve.
const RESIDUAL_TOL: f64 = 1e-8;

impl Factored {
    /// Solves for the right-hand side accumulated during assembly.
    pub fn solve_base(&self) -> Result<Vec<f64>> {
        self.solve(self.base_rhs.clone())
    }

    /// Solves `A x = rhs` with the factored operator, applying the stored
    /// Dirichlet values, and verifies the residual of the eliminated system.
    pub fn solve(&self, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);

        for &(free, fixed, a) in &self.corrections {
            rhs[free] -= a * self.values[fixed];
        }
        for i in 0..n {
            if self.constrained[i] {
                rhs[i] = self.values[i];
            }
        }

        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = rhs.clone();

        // Forward substitution L y = rhs.
        for i in 0..n {
            let jstart = i.saturating_sub(bw);
            let mut s = x[i];
            for k in jstart..i {
                s -= self.l[i * w + bw - (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        // Back substitution L^T x = y.
        for i in (0..n).rev() {
            let mut s = x[i];
            let iend = (i + bw).min(n - 1);
            for k in i + 1..=iend {
                s -= self.l[k * w + bw - (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }

        // Residual check against the eliminated matrix.
        let mut rnorm2 = 0.0;
        for i in 0..n {
            let mut ax = self.matrix[i * w + bw] * x[i];
            for off in 1..=bw.min(i) {
                ax += self.matrix[i * w + bw - off] * x[i - off];
            }
            let iend = (i + bw).min(n - 1);
            for k in i + 1..=iend {
                ax += self.matrix[k * w + bw - (k - i)] * x[k];
            }
            let r = ax - rhs[i];
            rnorm2 += r * r;
        }
        let rel = if rhs_norm > 0.0 {
            rnorm2.sqrt() / rhs_norm
        } else {
            rnorm2.sqrt()
        };
        if !(rel <= RESIDUAL_TOL) {
            return Err(Error::SolveFailure(format!(
                "relative residual {rel:.3e} exceeds {RESIDUAL_TOL:.1e}"
            )));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system_returns_rhs() {
        let mut sys = LinearSystem::new(5, 2);
        for i in 0..5 {
            sys.add(i, i, 1.0);
            sys.add_rhs(i, i as f64 - 2.0);
        }
        let x = sys.solve().unwrap();
        for (i, v) in x.iter().enumerate() {
            assert!((v - (i as f64 - 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn tridiagonal_poisson_matches_dense_reference() {
        // -u'' = 1 on 8 unknowns with u = 0 at both ends: symmetric profile.
        let n = 8;
        let mut sys = LinearSystem::new(n, 1);
        for i in 0..n {
            sys.add(i, i, 2.0);
            if i + 1 < n {
                sys.add(i + 1, i, -1.0);
            }
            sys.add_rhs(i, 1.0);
        }
        let x = sys.solve().unwrap();
        // Exact discrete solution: x_i = (i+1)(n-i)/2.
        for (i, v) in x.iter().enumerate() {
            let exact = (i as f64 + 1.0) * (n - i) as f64 / 2.0;
            assert!((v - exact).abs() < 1e-12, "x[{i}] = {v}, want {exact}");
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut sys = LinearSystem::new(2, 1);
        sys.add(0, 0, 1.0);
        sys.add(1, 1, -1.0);
        let err = sys.solve().unwrap_err();
        assert!(err.to_string().contains("not positive definite"));
    }

    #[test]
    fn singular_matrix_is_rejected() {
        // Zero row: no mass, no diffusion, no constraint.
        let mut sys = LinearSystem::new(3, 1);
        sys.add(0, 0, 1.0);
        sys.add(2, 2, 1.0);
        assert!(sys.solve().is_err());
    }

    #[test]
    fn dirichlet_elimination_keeps_symmetric_solution() {
        // 1D conduction across 5 nodes, ends pinned to 1 and 3: linear ramp.
        let n = 5;
        let mut sys = LinearSystem::new(n, 1);
        for e in 0..n - 1 {
            sys.add(e, e, 1.0);
            sys.add(e + 1, e + 1, 1.0);
            sys.add(e + 1, e, -1.0);
        }
        sys.set_dirichlet(0, 1.0);
        sys.set_dirichlet(n - 1, 3.0);
        let x = sys.solve().unwrap();
        for (i, v) in x.iter().enumerate() {
            let exact = 1.0 + 2.0 * i as f64 / (n - 1) as f64;
            assert!((v - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn factorization_reuse_solves_multiple_rhs() {
        let n = 6;
        let mut sys = LinearSystem::new(n, 1);
        for e in 0..n - 1 {
            sys.add(e, e, 1.0);
            sys.add(e + 1, e + 1, 1.0);
            sys.add(e + 1, e, -1.0);
        }
        sys.set_dirichlet(0, 0.0);
        sys.set_dirichlet(n - 1, 0.0);
        let f = sys.factor().unwrap();
        let mut b1 = vec![0.0; n];
        b1[2] = 1.0;
        let mut b2 = vec![0.0; n];
        b2[3] = 2.0;
        let x1 = f.solve(b1.clone()).unwrap();
        let x2 = f.solve(b2.clone()).unwrap();
        // Linearity of the combined solve.
        let mut b3 = vec![0.0; n];
        b3[2] = 1.0;
        b3[3] = 2.0;
        let x3 = f.solve(b3).unwrap();
        for i in 0..n {
            assert!((x3[i] - x1[i] - x2[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn solution_is_deterministic() {
        let build = || {
            let mut sys = LinearSystem::new(40, 3);
            for i in 0..40 {
                sys.add(i, i, 4.0 + (i % 7) as f64);
                if i >= 3 {
                    sys.add(i, i - 3, -1.0);
                }
                sys.add_rhs(i, (i as f64).sin());
            }
            sys.set_dirichlet(0, 0.5);
            sys.solve().unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b, "repeated solves must be bitwise identical");
    }

    #[test]
    fn dof_map_scatter_round_trip() {
        let map = DofMap::from_active_nodes(10, vec![1, 3, 4, 8]);
        assert_eq!(map.len(), 4);
        assert_eq!(map.index_of(3), 1);
        assert!(!map.contains(0));
        let full = map.scatter(&[1.0, 2.0, 3.0, 4.0], 10, 0.0);
        assert_eq!(full, vec![0.0, 1.0, 0.0, 2.0, 3.0, 0.0, 0.0, 0.0, 4.0, 0.0]);
    }
}
