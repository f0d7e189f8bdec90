use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{InferenceError, ModelData, Result};
use crate::linalg::{cholesky, CholeskyFactor, DenseMatrix};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub sig2k_hat: f64,
    pub sig2xi_hat: f64,
    pub mu_hat: DVector<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn check_variances(sig2k: f64, sig2xi: f64) -> Result<()> {
    if !(sig2k >= 0.0 && sig2xi >= 0.0 && sig2k.is_finite() && sig2xi.is_finite()) {
        return Err(InferenceError::InvalidConfig(format!(
            "variances must be finite and nonnegative (σ²_K = {sig2k}, σ²_ξ = {sig2xi})"
        )));
    }
    Ok(())
}

/// Marginal covariance `Δ = σ²_ξI + V + σ²_K S K Sᵀ`, formed densely.
fn delta_dense(data: &ModelData, sig2k: f64, sig2xi: f64) -> DenseMatrix {
    let mut delta = &data.s * &data.k.k * data.s.transpose() * sig2k;
    for i in 0..data.n() {
        delta[(i, i)] += sig2xi + data.v[i];
    }
    crate::linalg::symmetrize(&delta)
}

/// `log φ(Z | Hμ, Δ)` through an explicit `N × N` Cholesky of `Δ`.
pub fn loglik_dense(data: &ModelData, mu: &DVector<f64>, sig2k: f64, sig2xi: f64) -> Result<f64> {
    check_variances(sig2k, sig2xi)?;
    let f = cholesky(&delta_dense(data, sig2k, sig2xi))?;
    let resid = &data.z - data.h.mul_vec(mu);
    let quad = resid.dot(&f.solve(&resid));
    Ok(-0.5 * data.n() as f64 * LOG_2PI - 0.5 * f.log_det() - 0.5 * quad)
}

/// Low-rank representation of `Δ⁻¹` from the Sherman–Morrison–Woodbury identity.
///
/// With `U = σ²_ξI + V` and `K = LLᵀ`,
/// `[σ_K⁻²K⁻¹ + SᵀU⁻¹S]⁻¹ = σ²_K L B⁻¹ Lᵀ` where `B = I + σ²_K LᵀSᵀU⁻¹SL`,
/// so `Δ⁻¹ = U⁻¹ − σ²_K U⁻¹SL B⁻¹ LᵀSᵀU⁻¹` and `log|Δ| = log|U| + log|B|`.
/// Nothing of size `N × N` is formed, and `σ²_K = 0` needs no special case.
struct Woodbury {
    uinv: DVector<f64>,
    /// `S L`, `N × r`
    sl: DenseMatrix,
    b: CholeskyFactor,
    sig2k: f64,
    log_det: f64,
}

impl Woodbury {
    fn new(data: &ModelData, sig2k: f64, sig2xi: f64) -> Result<Self> {
        check_variances(sig2k, sig2xi)?;
        let uinv = data.v.map(|v| 1.0 / (v + sig2xi));
        let l = data.k_factor()?.l();
        let sl = &data.s * l;
        let r = sl.ncols();
        let usl = DenseMatrix::from_fn(sl.nrows(), r, |i, j| sl[(i, j)] * uinv[i]);
        let mut b = sl.transpose() * usl * sig2k;
        for i in 0..r {
            b[(i, i)] += 1.0;
        }
        let b = cholesky(&crate::linalg::symmetrize(&b))?;
        let log_det = -uinv.iter().map(|u| u.ln()).sum::<f64>() + b.log_det();
        Ok(Woodbury {
            uinv,
            sl,
            b,
            sig2k,
            log_det,
        })
    }

    /// `Δ⁻¹ x`.
    fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let ux = x.component_mul(&self.uinv);
        let w = self.sl.tr_mul(&ux);
        let corr = &self.sl * self.b.solve(&w) * self.sig2k;
        ux - corr.component_mul(&self.uinv)
    }

    /// `Δ⁻¹ X` column by column.
    fn solve_matrix(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            out.set_column(j, &self.solve(&x.column(j).into_owned()));
        }
        out
    }
}

/// `log φ(Z | Hμ, Δ)` via the Woodbury identity and determinant lemma.
pub fn loglik_smw(data: &ModelData, mu: &DVector<f64>, sig2k: f64, sig2xi: f64) -> Result<f64> {
    let w = Woodbury::new(data, sig2k, sig2xi)?;
    let resid = &data.z - data.h.mul_vec(mu);
    let quad = resid.dot(&w.solve(&resid));
    Ok(-0.5 * data.n() as f64 * LOG_2PI - 0.5 * w.log_det - 0.5 * quad)
}

fn gls_with(data: &ModelData, w: &Woodbury) -> Result<DVector<f64>> {
    let h = data.h.to_dense();
    let dh = w.solve_matrix(&h);
    let hdh = crate::linalg::symmetrize(&(h.transpose() * &dh));
    let rhs = dh.tr_mul(&data.z);
    let f = cholesky(&hdh).map_err(|_| InferenceError::InvalidData("HᵀΔ⁻¹H is singular; H lacks full column rank".into()))?;
    Ok(f.solve(&rhs))
}

/// Weighted least squares `μ̂ = (HᵀΔ⁻¹H)⁻¹HᵀΔ⁻¹Z`.
pub fn gls_mu(data: &ModelData, sig2k: f64, sig2xi: f64) -> Result<DVector<f64>> {
    gls_with(data, &Woodbury::new(data, sig2k, sig2xi)?)
}

/// `ℓ(σ²_K, σ²_ξ)` with `μ` profiled out; returns the value and `μ̂`.
pub fn profile_loglik(data: &ModelData, sig2k: f64, sig2xi: f64) -> Result<(f64, DVector<f64>)> {
    let w = Woodbury::new(data, sig2k, sig2xi)?;
    let mu = gls_with(data, &w)?;
    let resid = &data.z - data.h.mul_vec(&mu);
    let quad = resid.dot(&w.solve(&resid));
    Ok((-0.5 * data.n() as f64 * LOG_2PI - 0.5 * w.log_det - 0.5 * quad, mu))
}

const NM_TOLERANCE: f64 = 1e-8;
const NM_MAX_ITER: usize = 500;

struct NelderMeadResult {
    x: [f64; 2],
    fx: f64,
    converged: bool,
    iterations: usize,
}

/// Two-dimensional Nelder–Mead (reflection 1, expansion 2, contraction ½,
/// shrink ½). Stops when every vertex lies within `NM_TOLERANCE` of the best.
fn nelder_mead<F: FnMut([f64; 2]) -> f64>(mut f: F, start: [f64; 2], step: f64) -> NelderMeadResult {
    let mut eval = |x: [f64; 2]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<([f64; 2], f64)> = [start, [start[0] + step, start[1]], [start[0], start[1] + step]]
        .into_iter()
        .map(|x| (x, eval(x)))
        .collect();
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for it in 0..NM_MAX_ITER {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| (x[0] - best[0]).hypot(x[1] - best[1]))
            .fold(0.0, f64::max);
        if size < NM_TOLERANCE {
            return NelderMeadResult {
                x: best,
                fx: simplex[0].1,
                converged: true,
                iterations: it,
            };
        }
        let (worst, f_worst) = simplex[2];
        let f_second = simplex[1].1;
        let centroid = lerp(simplex[0].0, simplex[1].0, 0.5);

        let refl = lerp(centroid, worst, -1.0);
        let f_refl = eval(refl);
        if f_refl < simplex[0].1 {
            let exp = lerp(centroid, worst, -2.0);
            let f_exp = eval(exp);
            simplex[2] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
            continue;
        }
        if f_refl < f_second {
            simplex[2] = (refl, f_refl);
            continue;
        }
        let (contr, f_contr) = if f_refl < f_worst {
            let c = lerp(centroid, refl, 0.5);
            (c, eval(c))
        } else {
            let c = lerp(centroid, worst, 0.5);
            (c, eval(c))
        };
        if f_contr < f_worst.min(f_refl) {
            simplex[2] = (contr, f_contr);
            continue;
        }
        for v in simplex.iter_mut().skip(1) {
            let x = lerp(best, v.0, 0.5);
            *v = (x, eval(x));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    NelderMeadResult {
        x: simplex[0].0,
        fx: simplex[0].1,
        converged: false,
        iterations: NM_MAX_ITER,
    }
}

/// Maximum likelihood for `(σ²_K, σ²_ξ)` over `(log σ²_K, log σ²_ξ)`, with
/// `μ_B` profiled out by weighted least squares.
pub fn mle_stcos(data: &ModelData, init: Option<(f64, f64)>) -> Result<MleResult> {
    data.validate()?;
    let (k0, x0) = init.unwrap_or((1.0, 1.0));
    if !(k0 > 0.0 && x0 > 0.0) {
        return Err(InferenceError::InvalidConfig("initial variances must be positive".into()));
    }
    // fail early on structural problems rather than inside the optimizer
    profile_loglik(data, k0, x0)?;
    let nm = nelder_mead(
        |t| match profile_loglik(data, t[0].exp(), t[1].exp()) {
            Ok((l, _)) => -l,
            Err(_) => f64::INFINITY,
        },
        [k0.ln(), x0.ln()],
        1.0,
    );
    let (sig2k_hat, sig2xi_hat) = (nm.x[0].exp(), nm.x[1].exp());
    let (loglik, mu_hat) = profile_loglik(data, sig2k_hat, sig2xi_hat)?;
    debug_assert!((loglik + nm.fx).abs() <= 1e-9 * loglik.abs().max(1.0));
    if !nm.converged {
        log::warn!("MLE optimizer hit the {NM_MAX_ITER}-iteration cap");
    }
    Ok(MleResult {
        sig2k_hat,
        sig2xi_hat,
        mu_hat,
        loglik,
        converged: nm.converged,
        iterations: nm.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::{identity_k, KMatrix, FineLevelStructure};
    use crate::linalg::SparseMatrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(seed: u64, n: usize, nb: usize, r: usize) -> ModelData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            let a = i % nb;
            let b = (i * 7 + 3) % nb;
            let w: f64 = rng.random_range(0.2..0.8);
            trip.push((i, a, w));
            trip.push((i, b, 1.0 - w));
        }
        let h = SparseMatrix::from_triplets(n, nb, trip).unwrap();
        let s = DenseMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        let m = DenseMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
        let k = KMatrix {
            k: &m * m.transpose() + DenseMatrix::identity(r, r) * 0.5,
            structure: FineLevelStructure::RandomWalk,
        };
        let z = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let v = DVector::from_fn(n, |_, _| rng.random_range(0.05..0.5));
        ModelData::new(z, v, h, s, k).unwrap()
    }

    #[test]
    fn smw_matches_dense() {
        let data = random_data(1, 40, 5, 3);
        let mu = DVector::from_fn(5, |i, _| 0.1 * i as f64);
        for (k, x) in [(1.0, 0.5), (0.01, 2.0), (3.0, 1e-4)] {
            let a = loglik_dense(&data, &mu, k, x).unwrap();
            let b = loglik_smw(&data, &mu, k, x).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn smw_at_zero_sig2k_is_diagonal_gaussian() {
        let data = random_data(2, 30, 4, 2);
        let mu = DVector::zeros(4);
        let u = data.v.map(|v| v + 0.3);
        let resid = &data.z - data.h.mul_vec(&mu);
        let diag = super::super::gaussian_diag_loglik(&data.z, &(&data.z - resid), &u);
        assert_relative_eq!(loglik_smw(&data, &mu, 0.0, 0.3).unwrap(), diag, max_relative = 1e-12);
    }

    #[test]
    fn gls_recovers_z_with_identity_design() {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let v = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
        let h = SparseMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).unwrap();
        let data = ModelData::new(z.clone(), v, h, DenseMatrix::zeros(n, 1), identity_k(1)).unwrap();
        let mu = gls_mu(&data, 1.0, 0.0).unwrap();
        assert!((mu - z).amax() < 1e-12);
    }

    #[test]
    fn nelder_mead_on_quadratic_and_rosenbrock() {
        let q = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), [0.0, 0.0], 1.0);
        assert!(q.converged);
        assert!((q.x[0] - 1.0).abs() < 1e-6 && (q.x[1] + 2.0).abs() < 1e-6);
        let r = nelder_mead(|x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2), [-1.2, 1.0], 0.5);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn mle_dominates_perturbations() {
        let data = random_data(4, 40, 5, 3);
        let fit = mle_stcos(&data, None).unwrap();
        assert!(fit.converged);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t1, t2) = (fit.sig2k_hat.ln(), fit.sig2xi_hat.ln());
        for _ in 0..20 {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let (l, _) = profile_loglik(&data, (t1 + 0.05 * a.cos()).exp(), (t2 + 0.05 * a.sin()).exp()).unwrap();
            assert!(fit.loglik >= l);
        }
        let dense = loglik_dense(&data, &fit.mu_hat, fit.sig2k_hat, fit.sig2xi_hat).unwrap();
        assert_relative_eq!(dense, fit.loglik, max_relative = 1e-8);
    }
}
