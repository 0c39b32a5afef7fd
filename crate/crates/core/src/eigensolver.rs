//! Eigenvalues of smallest magnitude (or nearest a shift) of non-symmetric
//! pencils `(K, M)` with singular `M`.
//!
//! The sparse path runs implicitly restarted Arnoldi on the shift-inverted
//! operator `(K - sigma M)^{-1} M` in complex arithmetic. The dense path
//! reduces the pencil to `K^{-1} M` and diagonalizes it; it serves as the
//! oracle for small problems.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{EigenPair, Pencil};
use crate::error::{OseenError, Result};

/// Ritz values of the shift-inverted operator below this modulus belong to
/// infinite eigenvalues and are discarded.
pub const INFINITE_RITZ_THRESHOLD: f64 = 1e-10;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub nev: usize,
    /// Target `sigma`; eigenvalues are returned by increasing `|lambda - sigma|`.
    pub shift: [f64; 2],
    /// Bound on `||K x - lambda M x||_2 / ||x||_2`.
    pub tol: f64,
    /// Krylov subspace dimension.
    pub max_krylov: usize,
    /// Largest dimension accepted by [`dense_solve`]. Smaller pencils than the
    /// Krylov basis are handed to it automatically.
    pub dense_threshold: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::with_nev(4)
    }
}

impl SolverConfig {
    pub fn with_nev(nev: usize) -> Self {
        Self {
            nev,
            shift: [0.0, 0.0],
            tol: DEFAULT_TOL,
            max_krylov: (2 * nev + 8).max(30),
            dense_threshold: 800,
            max_restarts: 300,
            seed: DEFAULT_SEED,
        }
    }

    pub fn shift(&self) -> Complex64 {
        Complex64::new(self.shift[0], self.shift[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.nev == 0 {
            return Err(OseenError::invalid("nev must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(OseenError::invalid("tolerance must be positive"));
        }
        if self.max_krylov < 2 * self.nev + 8 {
            return Err(OseenError::invalid(format!(
                "max_krylov = {} must be at least 2 nev + 8 = {}",
                self.max_krylov,
                2 * self.nev + 8
            )));
        }
        Ok(())
    }
}

/// Parallelism used by the sparse factorization; capped by
/// `OSEEN_SPECTRAL_THREADS`.
pub fn parallelism() -> Par {
    match std::env::var("OSEEN_SPECTRAL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(0) | Some(1) | None => Par::Seq,
        Some(n) => Par::rayon(n),
    }
}

enum Factor {
    Real(Lu<usize, f64>),
    Complex(Lu<usize, Complex64>),
}

/// Elimination of the zero-mean multiplier. Its row and column are dense,
/// which wrecks the fill of a direct factorization, so the pressure-pinned
/// block `A + s e_p e_p^T` is factored instead and the constant-pressure
/// mode `z` is restored afterwards. `z` spans the left and right null
/// spaces of the unpinned block.
struct Border {
    /// Index of the multiplier (last unknown).
    last: usize,
    pressure: std::ops::Range<usize>,
    /// Multiplier column and row restricted to the pressure unknowns.
    col: Vec<f64>,
    row: Vec<f64>,
    col_sum: f64,
    row_sum: f64,
}

impl Border {
    fn of(pencil: &Pencil) -> Option<Self> {
        let layout = pencil.layout?;
        let last = layout.multiplier();
        let pressure = layout.pressure();
        if last + 1 != pencil.dim() || pressure.end != last {
            return None;
        }
        let mut col = vec![0.0; pressure.len()];
        for (r, c, v) in pencil.k.triplets() {
            if c == last && pressure.contains(&r) {
                col[r - pressure.start] += v;
            }
        }
        let mut row = vec![0.0; pressure.len()];
        for (c, v) in pencil.k.row(last) {
            if pressure.contains(&c) {
                row[c - pressure.start] += v;
            }
        }
        // Other couplings to the multiplier would break the elimination.
        let clean = pencil.k.row(last).all(|(c, _)| pressure.contains(&c))
            && pencil.k.triplets().all(|(r, c, _)| c != last || pressure.contains(&r));
        let (col_sum, row_sum) = (col.iter().sum::<f64>(), row.iter().sum::<f64>());
        (clean && col_sum.abs() > 0.0 && row_sum.abs() > 0.0).then_some(Self {
            last,
            pressure,
            col,
            row,
            col_sum,
            row_sum,
        })
    }
}

/// Sparse LU of `K - sigma M` applied to complex vectors.
struct ShiftInvert<'a> {
    pencil: &'a Pencil,
    factor: Factor,
    border: Option<Border>,
    n: usize,
}

impl<'a> ShiftInvert<'a> {
    fn new(pencil: &'a Pencil, sigma: Complex64) -> Result<Self> {
        faer::set_global_parallelism(parallelism());
        let singular = |e: String| OseenError::SingularPencil(format!("factorization of K - sigma M failed: {e}"));
        let n = pencil.dim();
        let border = Border::of(pencil);
        let size = border.as_ref().map_or(n, |b| b.last);
        let pin = border.as_ref().map(|b| (b.pressure.start, pencil.k.max_abs().max(1.0)));
        let keep = |r: usize, c: usize| r < size && c < size;
        let shifted = |shift: Complex64| {
            let mut t: Vec<(usize, usize, Complex64)> = pencil
                .k
                .triplets()
                .filter(|&(r, c, _)| keep(r, c))
                .map(|(r, c, v)| (r, c, Complex64::new(v, 0.0)))
                .chain(
                    pencil
                        .m
                        .triplets()
                        .filter(|&(r, c, _)| keep(r, c))
                        .map(|(r, c, v)| (r, c, -shift * v)),
                )
                .collect();
            if let Some((p, s)) = pin {
                t.push((p, p, Complex64::new(s, 0.0)));
            }
            t
        };
        let entries = shifted(sigma);
        let factor = if sigma.im == 0.0 {
            let t: Vec<_> = entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v.re)).collect();
            let a = SparseColMat::try_new_from_triplets(size, size, &t)
                .map_err(|e| OseenError::Internal(format!("sparse conversion failed: {e:?}")))?;
            Factor::Real(a.sp_lu().map_err(|e| singular(format!("{e:?}")))?)
        } else {
            let t: Vec<_> = entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
            let a = SparseColMat::try_new_from_triplets(size, size, &t)
                .map_err(|e| OseenError::Internal(format!("sparse conversion failed: {e:?}")))?;
            Factor::Complex(a.sp_lu().map_err(|e| singular(format!("{e:?}")))?)
        };
        let op = Self {
            pencil,
            factor,
            border,
            n,
        };
        op.check_finite()?;
        Ok(op)
    }

    fn lu_solve(&self, b: &mut [Complex64]) {
        let n = b.len();
        match &self.factor {
            Factor::Real(lu) => {
                let mut rhs = Mat::<f64>::from_fn(n, 2, |i, j| if j == 0 { b[i].re } else { b[i].im });
                lu.solve_in_place(rhs.as_mut());
                for (i, v) in b.iter_mut().enumerate() {
                    *v = Complex64::new(rhs[(i, 0)], rhs[(i, 1)]);
                }
            }
            Factor::Complex(lu) => {
                let mut rhs = Mat::<Complex64>::from_fn(n, 1, |i, _| b[i]);
                lu.solve_in_place(rhs.as_mut());
                for (i, v) in b.iter_mut().enumerate() {
                    *v = rhs[(i, 0)];
                }
            }
        }
    }

    /// Solves `(K - sigma M) y = b` in place.
    fn solve(&self, b: &mut [Complex64]) {
        let Some(border) = &self.border else {
            self.lu_solve(b);
            return;
        };
        let (f, g) = b.split_at_mut(border.last);
        let pr = border.pressure.clone();
        // Solvability of the unpinned block fixes the multiplier.
        let mu: Complex64 = f[pr.clone()].iter().sum::<Complex64>() / border.col_sum;
        for (fi, &m) in f[pr.clone()].iter_mut().zip(&border.col) {
            *fi -= mu * m;
        }
        self.lu_solve(f);
        // Add the constant pressure mode to satisfy the mean constraint.
        let mean: Complex64 = f[pr.clone()].iter().zip(&border.row).map(|(y, &m)| y * m).sum();
        let alpha = (g[0] - mean) / border.row_sum;
        for y in f[pr].iter_mut() {
            *y += alpha;
        }
        g[0] = mu;
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = self.pencil.m.matvec_complex(x);
        self.solve(&mut y);
        y
    }

    /// A pivot breakdown shows up as non-finite solutions.
    fn check_finite(&self) -> Result<()> {
        let mut probe = vec![Complex64::new(1.0, 0.0); self.n];
        self.solve(&mut probe);
        if probe.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            Ok(())
        } else {
            Err(OseenError::SingularPencil("K - sigma M is numerically singular".into()))
        }
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Normalizes `x^H M x = 1` (falling back to the Euclidean norm when `M x = 0`)
/// and rotates the largest-modulus entry among the `M`-weighted unknowns
/// onto the positive real axis.
pub fn normalize_vector(pencil: &Pencil, x: &mut [Complex64]) {
    let mx = pencil.m.matvec_complex(x);
    let mut scale = dot(x, &mx).re;
    if !(scale > 0.0) {
        scale = dot(x, x).re;
    }
    let scale = scale.sqrt();
    let weighted: Vec<bool> = (0..x.len()).map(|i| pencil.m.row(i).any(|(_, v)| v != 0.0)).collect();
    let pivot = (0..x.len())
        .filter(|&i| weighted[i] || !weighted.iter().any(|&w| w))
        .fold(None::<usize>, |best, i| match best {
            Some(b) if x[b].norm() >= x[i].norm() => Some(b),
            _ => Some(i),
        });
    let phase = match pivot {
        Some(i) if x[i].norm() > 0.0 => x[i].conj() / x[i].norm(),
        _ => Complex64::new(1.0, 0.0),
    };
    for v in x.iter_mut() {
        *v *= phase / scale;
    }
}

fn finish_pair(pencil: &Pencil, lambda: Complex64, mut x: Vec<Complex64>) -> EigenPair {
    normalize_vector(pencil, &mut x);
    let residual = pencil.residual(lambda, &x);
    EigenPair { lambda, x, residual }
}

/// Sorts by distance to `sigma`; conjugate pairs are ordered with the
/// positive imaginary part first.
fn sort_pairs(pairs: &mut [EigenPair], sigma: Complex64) {
    pairs.sort_by(|a, b| {
        let (da, db) = ((a.lambda - sigma).norm(), (b.lambda - sigma).norm());
        let scale = da.max(db).max(1.0);
        if (da - db).abs() > 1e-12 * scale {
            da.total_cmp(&db)
        } else {
            b.lambda.im.total_cmp(&a.lambda.im).then(a.lambda.re.total_cmp(&b.lambda.re))
        }
    });
}

/// Appends missing conjugates of complex eigenpairs (real pencils with a real
/// shift only).
fn close_under_conjugation(pencil: &Pencil, pairs: &mut Vec<EigenPair>, tol: f64) {
    let mut extra = Vec::new();
    for p in pairs.iter() {
        if p.lambda.im.abs() <= tol * p.lambda.norm().max(1.0) {
            continue;
        }
        let target = p.lambda.conj();
        let present = pairs
            .iter()
            .chain(extra.iter())
            .any(|q: &EigenPair| (q.lambda - target).norm() <= 1e3 * tol * target.norm().max(1.0));
        if !present {
            let x: Vec<Complex64> = p.x.iter().map(|v| v.conj()).collect();
            extra.push(finish_pair(pencil, target, x));
        }
    }
    pairs.extend(extra);
}

/// Replaces numerically real eigenpairs by exactly real ones: for a real
/// pencil and real `lambda`, `Re x` stays in the eigenspace.
fn snap_real(pencil: &Pencil, pairs: &mut [EigenPair], tol: f64) {
    for p in pairs.iter_mut() {
        if p.lambda.im == 0.0 || p.lambda.im.abs() > tol * p.lambda.norm().max(1.0) {
            continue;
        }
        let x: Vec<Complex64> = p.x.iter().map(|v| Complex64::new(v.re, 0.0)).collect();
        if x.iter().all(|v| v.re == 0.0) {
            continue;
        }
        let real = finish_pair(pencil, Complex64::new(p.lambda.re, 0.0), x);
        if real.residual <= tol.max(p.residual) {
            *p = real;
        }
    }
}

/// Keeps the first `nev` pairs, extended so a conjugate pair is never split.
fn truncate_keeping_pairs(pairs: &mut Vec<EigenPair>, nev: usize, tol: f64) {
    if pairs.len() <= nev {
        return;
    }
    let mut keep = nev;
    let last = pairs[nev - 1].lambda;
    while keep < pairs.len() {
        let next = pairs[keep].lambda;
        let is_partner = last.im.abs() > tol * last.norm().max(1.0)
            && (next - last.conj()).norm() <= 1e3 * tol * last.norm().max(1.0);
        if is_partner {
            keep += 1;
        } else {
            break;
        }
    }
    pairs.truncate(keep);
}

/// Eigenpairs nearest `config.shift`, via shift-invert Arnoldi.
pub fn shift_invert_solve(pencil: &Pencil, config: &SolverConfig) -> Result<Vec<EigenPair>> {
    config.validate()?;
    let n = pencil.dim();
    if n <= config.max_krylov + 1 {
        let mut pairs = dense_solve_with(pencil, config.dense_threshold.max(n))?;
        let sigma = config.shift();
        if sigma.im == 0.0 {
            snap_real(pencil, &mut pairs, config.tol);
        }
        sort_pairs(&mut pairs, sigma);
        truncate_keeping_pairs(&mut pairs, config.nev, config.tol);
        return Ok(pairs);
    }
    let sigma = config.shift();
    let op = ShiftInvert::new(pencil, sigma)?;
    let real_problem = sigma.im == 0.0;
    let mut pairs = implicitly_restarted_arnoldi(&op, config)?;
    if real_problem {
        snap_real(pencil, &mut pairs, config.tol);
        close_under_conjugation(pencil, &mut pairs, config.tol);
    }
    sort_pairs(&mut pairs, sigma);
    truncate_keeping_pairs(&mut pairs, config.nev, config.tol);
    Ok(pairs)
}

struct Arnoldi {
    /// Orthonormal basis, `m + 1` columns once complete.
    basis: Vec<Vec<Complex64>>,
    /// `(m + 1) x m` upper Hessenberg, row major.
    h: Vec<Vec<Complex64>>,
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Orthogonalizes `w` against `basis` with two passes of modified
/// Gram–Schmidt, returning the projection coefficients.
fn orthogonalize(basis: &[Vec<Complex64>], w: &mut [Complex64]) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::new(0.0, 0.0); basis.len()];
    for _pass in 0..2 {
        for (i, v) in basis.iter().enumerate() {
            let c = dot(v, w);
            axpy(-c, v, w);
            coeffs[i] += c;
        }
    }
    coeffs
}

fn extend_arnoldi(op: &ShiftInvert, ar: &mut Arnoldi, from: usize, m: usize, rng: &mut ChaCha8Rng, scale: &mut f64) {
    for j in from..m {
        let mut w = op.apply(&ar.basis[j]);
        let coeffs = orthogonalize(&ar.basis[..=j], &mut w);
        for (i, c) in coeffs.into_iter().enumerate() {
            ar.h[i][j] = c;
        }
        let mut beta = norm(&w);
        *scale = scale.max(ar.h[j][j].norm()).max(beta);
        if beta <= 1e-13 * *scale {
            // Invariant subspace: continue with a fresh purified direction.
            let mut fresh = op.apply(&random_vector(op.n, rng));
            orthogonalize(&ar.basis[..=j], &mut fresh);
            let nf = norm(&fresh);
            for v in fresh.iter_mut() {
                *v /= nf;
            }
            ar.h[j + 1][j] = Complex64::new(0.0, 0.0);
            ar.basis.truncate(j + 1);
            ar.basis.push(fresh);
            continue;
        }
        for v in w.iter_mut() {
            *v /= beta;
        }
        ar.h[j + 1][j] = Complex64::new(beta, 0.0);
        ar.basis.truncate(j + 1);
        ar.basis.push(w);
        beta = 0.0;
        let _ = beta;
    }
}

/// Eigenvalues and unit eigenvectors of the leading `m x m` block.
fn ritz(h: &[Vec<Complex64>], m: usize) -> Result<Vec<(Complex64, Vec<Complex64>)>> {
    let hm = Mat::<Complex64>::from_fn(m, m, |i, j| h[i][j]);
    let evd = hm
        .eigen()
        .map_err(|e| OseenError::Internal(format!("projected eigenproblem failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let mut y: Vec<Complex64> = (0..m).map(|i| u[(i, k)]).collect();
        let ny = norm(&y);
        for v in y.iter_mut() {
            *v /= ny;
        }
        out.push((s[k], y));
    }
    Ok(out)
}

/// Complex Givens rotation `[c s; -conj(s) c]` zeroing `b` in `(a, b)`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (0.0, Complex64::new(1.0, 0.0));
    }
    let rho = na.hypot(nb);
    (na / rho, (a / na) * b.conj() / rho)
}

/// One explicit-shift QR step on the leading `m x m` Hessenberg block,
/// accumulating the unitary transform into `q` (m x m, row major).
fn shifted_qr_step(h: &mut [Vec<Complex64>], q: &mut [Vec<Complex64>], m: usize, mu: Complex64) {
    for i in 0..m {
        h[i][i] -= mu;
    }
    let mut rotations = Vec::with_capacity(m.saturating_sub(1));
    for i in 0..m - 1 {
        let (c, s) = givens(h[i][i], h[i + 1][i]);
        for j in i..m {
            let (x, y) = (h[i][j], h[i + 1][j]);
            h[i][j] = x * c + s * y;
            h[i + 1][j] = -s.conj() * x + y * c;
        }
        rotations.push((c, s));
    }
    for (i, &(c, s)) in rotations.iter().enumerate() {
        for row in h.iter_mut().take((i + 2).min(m)) {
            let (x, y) = (row[i], row[i + 1]);
            row[i] = x * c + y * s.conj();
            row[i + 1] = -x * s + y * c;
        }
        for row in q.iter_mut().take(m) {
            let (x, y) = (row[i], row[i + 1]);
            row[i] = x * c + y * s.conj();
            row[i + 1] = -x * s + y * c;
        }
    }
    for i in 0..m {
        h[i][i] += mu;
    }
}

fn implicitly_restarted_arnoldi(op: &ShiftInvert, config: &SolverConfig) -> Result<Vec<EigenPair>> {
    let n = op.n;
    let m = config.max_krylov.min(n - 1);
    let sigma = config.shift();
    // Keep a few extra Ritz vectors so a conjugate partner or a near-double
    // eigenvalue at the cutoff does not stall convergence.
    let nev = config.nev.min(m - 2);
    let k = (nev + (m - nev) / 2).min(m - 1).max(nev + 1);
    let norm_a = op.pencil.k.norm_inf() + sigma.norm() * op.pencil.m.norm_inf();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Purify the start vector so it carries no component along infinite
    // eigenvectors.
    let mut v0 = op.apply(&random_vector(n, &mut rng));
    let nv0 = norm(&v0);
    if !(nv0 > 0.0) || !nv0.is_finite() {
        return Err(OseenError::SingularPencil("operator annihilates the start vector".into()));
    }
    for v in v0.iter_mut() {
        *v /= nv0;
    }
    let mut ar = Arnoldi {
        basis: vec![v0],
        h: vec![vec![Complex64::new(0.0, 0.0); m]; m + 1],
    };
    let mut scale = 0.0f64;
    extend_arnoldi(op, &mut ar, 0, m, &mut rng, &mut scale);

    let mut best = Vec::new();
    for restart in 0..=config.max_restarts {
        let mut values = ritz(&ar.h, m)?;
        values.sort_by(|a, b| b.0.norm().total_cmp(&a.0.norm()));
        let beta_m = ar.h[m][m - 1].norm();

        // Finite Ritz values, largest modulus first.
        let wanted: Vec<&(Complex64, Vec<Complex64>)> =
            values.iter().filter(|(t, _)| t.norm() >= INFINITE_RITZ_THRESHOLD).take(nev).collect();
        let estimates: Vec<f64> = wanted
            .iter()
            .map(|(theta, y)| beta_m * y[m - 1].norm() * norm_a / theta.norm().powi(2))
            .collect();
        best = estimates.clone();
        let estimated_ok = wanted.len() == nev && estimates.iter().all(|&e| e <= 0.1 * config.tol);
        if estimated_ok || restart == config.max_restarts {
            let mut pairs = Vec::with_capacity(nev);
            let mut residuals = Vec::with_capacity(nev);
            for (theta, y) in &wanted {
                let mut x = vec![Complex64::new(0.0, 0.0); n];
                for (i, yi) in y.iter().enumerate() {
                    axpy(*yi, &ar.basis[i], &mut x);
                }
                let lambda = sigma + theta.inv();
                let pair = finish_pair(op.pencil, lambda, x);
                residuals.push(pair.residual);
                pairs.push(pair);
            }
            if wanted.len() == nev && residuals.iter().all(|&r| r <= config.tol) {
                return Ok(pairs);
            }
            if restart == config.max_restarts {
                return Err(OseenError::Convergence {
                    restarts: restart,
                    best_residuals: residuals,
                });
            }
        }

        // Implicit restart with the unwanted Ritz values as shifts.
        let mut q: Vec<Vec<Complex64>> = (0..m)
            .map(|i| (0..m).map(|j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        for (mu, _) in values.iter().skip(k) {
            shifted_qr_step(&mut ar.h, &mut q, m, *mu);
        }
        // New k-step factorization: V_k = V_m Q[:, :k], residual updated.
        let mut new_basis = Vec::with_capacity(k + 1);
        for j in 0..k {
            let mut v = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..m {
                axpy(q[i][j], &ar.basis[i], &mut v);
            }
            new_basis.push(v);
        }
        let mut f = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..m {
            axpy(q[i][k] * ar.h[k][k - 1], &ar.basis[i], &mut f);
        }
        axpy(ar.h[m][m - 1] * q[m - 1][k - 1], &ar.basis[m], &mut f);
        // Reorthogonalize the residual against the compressed basis.
        let corr = orthogonalize(&new_basis, &mut f);
        for (i, c) in corr.into_iter().enumerate() {
            ar.h[i][k - 1] += c;
        }
        for row in ar.h.iter_mut().skip(k) {
            row.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        }
        for row in ar.h.iter_mut().take(k) {
            row.iter_mut().skip(k).for_each(|v| *v = Complex64::new(0.0, 0.0));
        }
        let nf = norm(&f);
        if nf <= 1e-13 * scale.max(1e-300) {
            let mut fresh = op.apply(&random_vector(n, &mut rng));
            orthogonalize(&new_basis, &mut fresh);
            let nfr = norm(&fresh);
            for v in fresh.iter_mut() {
                *v /= nfr;
            }
            ar.h[k][k - 1] = Complex64::new(0.0, 0.0);
            new_basis.push(fresh);
        } else {
            for v in f.iter_mut() {
                *v /= nf;
            }
            ar.h[k][k - 1] = Complex64::new(nf, 0.0);
            new_basis.push(f);
        }
        ar.basis = new_basis;
        extend_arnoldi(op, &mut ar, k, m, &mut rng, &mut scale);
    }
    Err(OseenError::Convergence {
        restarts: config.max_restarts,
        best_residuals: best,
    })
}

/// Full finite spectrum of a small pencil, via `Z = K^{-1} M` and a dense
/// eigendecomposition of `Z`.
pub fn dense_solve(pencil: &Pencil) -> Result<Vec<EigenPair>> {
    dense_solve_with(pencil, SolverConfig::default().dense_threshold)
}

pub fn dense_solve_with(pencil: &Pencil, threshold: usize) -> Result<Vec<EigenPair>> {
    let n = pencil.dim();
    if n > threshold {
        return Err(OseenError::invalid(format!(
            "dense solve limited to dimension {threshold}, got {n}"
        )));
    }
    let k = Mat::<f64>::from_fn(n, n, |_, _| 0.0);
    let mut k = k;
    for (r, c, v) in pencil.k.triplets() {
        k[(r, c)] += v;
    }
    let mut m = Mat::<f64>::zeros(n, n);
    for (r, c, v) in pencil.m.triplets() {
        m[(r, c)] += v;
    }
    let lu = k.partial_piv_lu();
    let z = lu.solve(&m);
    if z.col_iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).any(|v| !v.is_finite()) {
        return Err(OseenError::SingularPencil("K is singular".into()));
    }
    let evd = z
        .eigen()
        .map_err(|e| OseenError::Internal(format!("dense eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mu_max = (0..n).map(|i| s[i].norm()).fold(0.0, f64::max);
    // Defective zero eigenvalues of Z are perturbed to O(sqrt(eps) |Z|).
    let cutoff = (1e-6 * mu_max).max(INFINITE_RITZ_THRESHOLD);
    let mut pairs = Vec::new();
    for j in 0..n {
        let mu = s[j];
        if mu.norm() < cutoff {
            continue;
        }
        let x: Vec<Complex64> = (0..n).map(|i| u[(i, j)]).collect();
        pairs.push(finish_pair(pencil, mu.inv(), x));
    }
    sort_pairs(&mut pairs, Complex64::new(0.0, 0.0));
    Ok(pairs)
}

/// Outcome of [`verify_residuals`].
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub residuals: Vec<f64>,
    pub violations: Vec<usize>,
    /// Indices of complex eigenvalues whose conjugate is missing.
    pub unpaired: Vec<usize>,
}

impl ResidualReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.unpaired.is_empty()
    }
}

/// Recomputes relative residuals and checks conjugate pairing for real
/// pencils.
pub fn verify_residuals(pencil: &Pencil, pairs: &[EigenPair], tol: f64) -> ResidualReport {
    let residuals: Vec<f64> = pairs.iter().map(|p| pencil.residual(p.lambda, &p.x)).collect();
    let violations = residuals
        .iter()
        .enumerate()
        .filter(|(_, &r)| !(r <= tol))
        .map(|(i, _)| i)
        .collect();
    let pair_tol = 1e3 * tol;
    let unpaired = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.lambda.im.abs() > tol * p.lambda.norm().max(1.0))
        .filter(|(_, p)| {
            !pairs
                .iter()
                .any(|q| (q.lambda - p.lambda.conj()).norm() <= pair_tol * p.lambda.norm().max(1.0))
        })
        .map(|(i, _)| i)
        .collect();
    ResidualReport {
        residuals,
        violations,
        unpaired,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenvalueRecord {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

pub fn eigenvalue_records(pairs: &[EigenPair]) -> Vec<EigenvalueRecord> {
    pairs
        .iter()
        .map(|p| EigenvalueRecord {
            re: p.lambda.re,
            im: p.lambda.im,
            residual: p.residual,
        })
        .collect()
}
