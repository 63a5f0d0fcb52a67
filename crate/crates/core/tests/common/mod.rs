//! Independent dense oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpdv_core::fem2d::Mesh;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dv(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn mv(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (m * dv(x)).as_slice().to_vec()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `xᵀ M x`
pub fn quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    dot(&mv(m, x), x)
}

/// `xᵀ M⁻¹ x` by a fresh Cholesky factorization.
pub fn quad_inv(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let c = m.clone().cholesky().expect("SPD");
    dot(c.solve(&dv(x)).as_slice(), x)
}

/// Random orthogonal matrix by Gram-Schmidt on uniform columns.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        loop {
            let mut v = dv(&uniform_vec(rng, n));
            for i in 0..j {
                let qi = q.column(i).into_owned();
                v -= &qi * qi.dot(&v);
            }
            let nrm = v.norm();
            if nrm > 1e-3 {
                q.set_column(j, &(v / nrm));
                break;
            }
        }
    }
    q
}

/// `Q diag(eigs) Qᵀ` for a random orthogonal `Q`.
pub fn spd_with_spectrum(rng: &mut ChaCha8Rng, eigs: &[f64]) -> DMatrix<f64> {
    let q = random_orthogonal(rng, eigs.len());
    let m = &q * DMatrix::from_diagonal(&dv(eigs)) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Random SPD matrix with eigenvalues spread log-uniformly over `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let eigs: Vec<f64> = (0..n).map(|_| lo * (hi / lo).powf(rng.random_range(0.0..1.0))).collect();
    spd_with_spectrum(rng, &eigs)
}

/// Ascending eigenvalues of the pencil `(a, d)` via `L⁻¹ a L⁻ᵀ`, `d = L Lᵀ`.
pub fn pencil_eigs(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Vec<f64> {
    let l = d.clone().cholesky().expect("SPD").l();
    let linv = l.clone().try_inverse().expect("invertible");
    let c = &linv * a * linv.transpose();
    let mut e: Vec<f64> = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Solves `[A Bᵀ; B 0][u; p] = [c; b]` by a dense LU.
pub fn dense_kkt(a: &DMatrix<f64>, c: &[f64], b: &DMatrix<f64>, rhs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = b.shape();
    let k = DMatrix::from_fn(n + m, n + m, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => b[(j - n, i)],
        (false, true) => b[(i - n, j)],
        (false, false) => 0.0,
    });
    let r = DVector::from_iterator(n + m, c.iter().chain(rhs).copied());
    let x = k.lu().solve(&r).expect("nonsingular KKT");
    (x.rows(0, n).as_slice().to_vec(), x.rows(n, m).as_slice().to_vec())
}

/// Gradients of the three barycentric functions, from inverting `[1 x y]`.
pub fn triangle_gradients(p: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let m = DMatrix::from_fn(3, 3, |i, j| if j == 0 { 1.0 } else { p[i][j - 1] });
    let inv = m.try_inverse().expect("nondegenerate triangle");
    // column k of inv holds the coefficients (a, b, c) of φ_k = a + b x + c y
    [[inv[(1, 0)], inv[(2, 0)]], [inv[(1, 1)], inv[(2, 1)]], [inv[(1, 2)], inv[(2, 2)]]]
}

pub fn triangle_area(p: [[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs()
}

/// `S_ij = Σ_T |T| σ_T⁻¹ ∇φ_i · ∇φ_j`, one element at a time.
pub fn element_loop_stiffness(mesh: &Mesh, sigma: &[f64]) -> DMatrix<f64> {
    let nv = mesh.n_vertices();
    let mut s = DMatrix::zeros(nv, nv);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let pts = [mesh.vertices()[tri[0]], mesh.vertices()[tri[1]], mesh.vertices()[tri[2]]];
        let g = triangle_gradients(pts);
        let w = triangle_area(pts) / sigma[t];
        for a in 0..3 {
            for b in 0..3 {
                s[(tri[a], tri[b])] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    s
}

/// One explicit step of the transformed primal-dual iteration, written out
/// line by line with dense matrices.
pub struct DenseStep {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iq: DMatrix<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn algorithm1_step(
    a: &DMatrix<f64>,
    c: &[f64],
    b: &DMatrix<f64>,
    rhs: &[f64],
    iv: &DMatrix<f64>,
    iq: &DMatrix<f64>,
    stilde: &DMatrix<f64>,
    u: &[f64],
    p: &[f64],
    alpha: f64,
    gamma: f64,
) -> DenseStep {
    let u = dv(u);
    let p = dv(p);
    let grad = a * &u - dv(c);
    let iv_inv = iv.clone().try_inverse().unwrap();
    // u_half = u - I_V^{-1}(∇f(u) + Bᵀp)
    let u_half = &u - &iv_inv * (&grad + b.transpose() * &p);
    // I_Q,k+1 = (I_Q,k + αγ S̃)/(1 + αγ)
    let iq_next = (iq + stilde * (alpha * gamma)) / (1.0 + alpha * gamma);
    // p_{k+1} = p + α I_Q,k+1^{-1}(B u_half - b)
    let p_next = &p + iq_next.clone().try_inverse().unwrap() * (b * &u_half - dv(rhs)) * alpha;
    // u_{k+1} = (1 - α) u + α u_half
    let u_next = &u * (1.0 - alpha) + &u_half * alpha;
    DenseStep { u: u_next.as_slice().to_vec(), p: p_next.as_slice().to_vec(), iq: iq_next }
}

/// `½ (u−u*)ᵀA(u−u*) + ½ (p−p*)ᵀ I_Q (p−p*)`
pub fn quadratic_lyapunov(a: &DMatrix<f64>, iq: &DMatrix<f64>, u: &[f64], ustar: &[f64], p: &[f64], pstar: &[f64]) -> f64 {
    0.5 * quad(a, &sub(u, ustar)) + 0.5 * quad(iq, &sub(p, pstar))
}

/// Root of `(s + r t) t = v` in `t ≥ 0` by bisection.
pub fn magnitude_root(s: f64, r: f64, v: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, v / s);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (s + r * mid) * mid > v {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Operator sequences for the inexact-preconditioner sandwich, indexed like
/// the verifier's arguments.
pub struct SandwichSequence {
    pub iqstar: Vec<DMatrix<f64>>,
    pub iq: Vec<DMatrix<f64>>,
    pub stilde: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub omega: Vec<f64>,
}

impl SandwichSequence {
    /// Smallest `δ` meeting the spectral-radius hypothesis.
    pub fn measured_delta(&self) -> f64 {
        let r = self
            .iq
            .iter()
            .zip(&self.iqstar)
            .map(|(iq, st)| pencil_eigs(st, iq).iter().fold(0.0_f64, |m, l| m.max((1.0 - l).abs())))
            .fold(0.0, f64::max);
        r / (1.0 - r)
    }

    /// Largest `δ` meeting `2δ ω/(1−ω) I* ≼ ½ S` at every step.
    pub fn hypothesis2_limit(&self) -> f64 {
        (0..self.s.len())
            .map(|k| pencil_eigs(&self.s[k], &self.iqstar[k])[0] * (1.0 - self.omega[k]) / (4.0 * self.omega[k]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `steps` updates of `I*` with random `S_k`; `I_k = L W_k Lᵀ` with
/// `I*_k = L Lᵀ` and `W_k` of spectrum `1/(1+e)`, `|e| < δ/(1+δ)`. The weight
/// ratio `ω/(1−ω)` is `omega_scale` times the hypothesis-2 limit.
pub fn sandwich_sequence(r: &mut ChaCha8Rng, n: usize, steps: usize, delta: f64, omega_scale: f64) -> SandwichSequence {
    let radius = 0.999 * delta / (1.0 + delta);
    let perturb = |r: &mut ChaCha8Rng, star: &DMatrix<f64>| -> DMatrix<f64> {
        if delta == 0.0 {
            return star.clone();
        }
        let eigs: Vec<f64> = (0..n).map(|_| 1.0 / (1.0 + r.random_range(-radius..radius))).collect();
        let w = spd_with_spectrum(r, &eigs);
        let l = star.clone().cholesky().expect("SPD").l();
        let m = &l * w * l.transpose();
        (&m + m.transpose()) * 0.5
    };
    let mut iqstar = vec![random_spd(r, n, 1.0, 3.0)];
    let mut iq = vec![perturb(r, &iqstar[0])];
    let (mut stilde, mut s, mut omega) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..steps {
        let sk = random_spd(r, n, 0.5, 5.0);
        let t = if delta == 0.0 { 1.0 } else { omega_scale * pencil_eigs(&sk, &iqstar[k])[0] / (4.0 * delta) };
        let w = t / (1.0 + t);
        let next_star = &iqstar[k] * w + &sk * (1.0 - w);
        let next = perturb(r, &next_star);
        stilde.push((&next - &iq[k] * w) / (1.0 - w));
        iqstar.push(next_star);
        iq.push(next);
        s.push(sk);
        omega.push(w);
    }
    SandwichSequence { iqstar, iq, stilde, s, omega }
}
