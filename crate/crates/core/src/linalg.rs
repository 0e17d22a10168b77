//! Jacobi-preconditioned conjugate gradient on weighted Laplacian systems
//! restricted to a set of free nodes.

use crate::error::{GllError, Result};
use crate::sparse::EdgePattern;

/// Result of one CG solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `|b - A x| / |b|` at exit (0 for a zero right-hand side).
    pub rel_residual: f64,
}

/// The operator `(L_c + diag(extra))` restricted to free nodes, where `L_c`
/// is the Laplacian with symmetric edge coefficients `c`. Couplings from
/// free to fixed nodes are kept separately to build right-hand sides.
#[derive(Debug, Clone)]
pub(crate) struct ReducedSystem {
    n: usize,
    free: Vec<usize>,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    bnd_ptr: Vec<usize>,
    bnd_cols: Vec<usize>,
    bnd_vals: Vec<f64>,
}

impl ReducedSystem {
    pub(crate) fn new(pattern: &EdgePattern, coeffs: &[f64], extra_diag: &[f64], fixed: &[bool]) -> Self {
        let n = pattern.n();
        debug_assert_eq!(coeffs.len(), pattern.num_edges());
        debug_assert_eq!(extra_diag.len(), n);
        debug_assert_eq!(fixed.len(), n);
        let free: Vec<usize> = (0..n).filter(|&x| !fixed[x]).collect();
        let mut local = vec![usize::MAX; n];
        for (l, &x) in free.iter().enumerate() {
            local[x] = l;
        }
        let mut diag = Vec::with_capacity(free.len());
        let (mut row_ptr, mut cols, mut vals) = (vec![0], Vec::new(), Vec::new());
        let (mut bnd_ptr, mut bnd_cols, mut bnd_vals) = (vec![0], Vec::new(), Vec::new());
        for &x in &free {
            let mut d = extra_diag[x];
            for &(y, e) in pattern.neighbors(x) {
                let c = coeffs[e];
                d += c;
                if fixed[y] {
                    bnd_cols.push(y);
                    bnd_vals.push(c);
                } else {
                    cols.push(local[y]);
                    vals.push(c);
                }
            }
            diag.push(d);
            row_ptr.push(cols.len());
            bnd_ptr.push(bnd_cols.len());
        }
        Self {
            n,
            free,
            diag,
            row_ptr,
            cols,
            vals,
            bnd_ptr,
            bnd_cols,
            bnd_vals,
        }
    }

    pub(crate) fn free(&self) -> &[usize] {
        &self.free
    }

    pub(crate) fn dim(&self) -> usize {
        self.free.len()
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.dim() {
            let mut acc = self.diag[r] * x[r];
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc -= self.vals[p] * x[self.cols[p]];
            }
            out[r] = acc;
        }
    }

    /// `source|_free + C_fb boundary`, both arguments indexed globally.
    pub(crate) fn rhs(&self, source: Option<&[f64]>, boundary: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|r| {
                let mut b = source.map_or(0.0, |s| s[self.free[r]]);
                for p in self.bnd_ptr[r]..self.bnd_ptr[r + 1] {
                    b += self.bnd_vals[p] * boundary[self.bnd_cols[p]];
                }
                b
            })
            .collect()
    }

    /// Scatters a free-node vector into a global vector holding `boundary` elsewhere.
    pub(crate) fn expand(&self, x: &[f64], boundary: &[f64]) -> Vec<f64> {
        let mut full = boundary.to_vec();
        full.resize(self.n, 0.0);
        for (r, &g) in self.free.iter().enumerate() {
            full[g] = x[r];
        }
        full
    }

    pub(crate) fn solve(&self, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<CgOutcome> {
        pcg(self, b, x0, tol, max_iter)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(sys: &ReducedSystem, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    let m = sys.dim();
    let b_norm = dot(b, b).sqrt();
    if m == 0 || b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; m],
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = sys
        .diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
    let mut ax = vec![0.0; m];
    let mut total = 0;
    // restart from the current iterate whenever the recursive residual
    // claims convergence that the true residual does not confirm
    loop {
        sys.apply(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let true_rel = dot(&r, &r).sqrt() / b_norm;
        if true_rel <= tol {
            return Ok(CgOutcome {
                x,
                iterations: total,
                rel_residual: true_rel,
            });
        }
        if total >= max_iter || !true_rel.is_finite() {
            return Err(GllError::NoConvergence {
                solver: "conjugate gradient",
                iterations: total,
                residual: true_rel,
            });
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; m];
        let mut rel = true_rel;
        let mut progressed = false;
        while rel > tol && total < max_iter {
            sys.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            total += 1;
            progressed = true;
            // refresh the recursive residual periodically against drift
            if total % 50 == 0 {
                sys.apply(&x, &mut ax);
                for i in 0..m {
                    r[i] = b[i] - ax[i];
                }
            }
            rel = dot(&r, &r).sqrt() / b_norm;
            for i in 0..m {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
        if !progressed {
            sys.apply(&x, &mut ax);
            let rel = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum::<f64>().sqrt() / b_norm;
            return Err(GllError::NoConvergence {
                solver: "conjugate gradient",
                iterations: total,
                residual: rel,
            });
        }
    }
}
