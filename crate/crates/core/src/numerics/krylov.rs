use super::vector;

/// Outcome of [`pcg`].
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for SPD (or SPSD with a consistent
/// right-hand side) systems given as closures.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = rhs.len();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vector::sub(rhs, &apply(&x));
    let bnorm = vector::norm2(rhs).max(f64::MIN_POSITIVE);
    let mut rel = vector::norm2(&r) / bnorm;
    if rel <= tol {
        return CgOutcome { solution: x, iterations: 0, relative_residual: rel, converged: true };
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = vector::dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = vector::dot(&p, &ap);
        if pap <= 0.0 {
            return CgOutcome { solution: x, iterations: it, relative_residual: rel, converged: false };
        }
        let alpha = rz / pap;
        vector::axpy(alpha, &p, &mut x);
        vector::axpy(-alpha, &ap, &mut r);
        rel = vector::norm2(&r) / bnorm;
        if rel <= tol {
            return CgOutcome { solution: x, iterations: it, relative_residual: rel, converged: true };
        }
        z = precondition(&r);
        let rz_next = vector::dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome { solution: x, iterations: max_iter, relative_residual: rel, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 50;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut v = 2.5 * x[i];
                    if i > 0 {
                        v -= x[i - 1];
                    }
                    if i + 1 < n {
                        v -= x[i + 1];
                    }
                    v
                })
                .collect()
        };
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let rhs = apply(&exact);
        let out = pcg(apply, |r| r.to_vec(), &rhs, None, 1e-13, 500);
        assert!(out.converged);
        assert!(vector::norm_inf(&vector::sub(&out.solution, &exact)) < 1e-11);
    }
}
