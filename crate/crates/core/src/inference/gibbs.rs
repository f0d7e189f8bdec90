use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{GibbsConfig, GibbsOutput, Hyperparams, InferenceError, ModelData, Result};
use crate::linalg::{cholesky_jittered, mvn_sample_factored, DenseMatrix};

/// Current values of every unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub mu_b: DVector<f64>,
    pub eta: DVector<f64>,
    pub xi: DVector<f64>,
    pub sig2_mu: f64,
    pub sig2_k: f64,
    pub sig2_xi: f64,
}

/// One chain over the six full conditionals; each step can be driven alone.
pub struct GibbsSampler<'a> {
    data: &'a ModelData,
    hyper: Hyperparams,
    z: DVector<f64>,
    vinv: DVector<f64>,
    /// `HᵀV⁻¹H`
    htvh: DenseMatrix,
    /// `SᵀV⁻¹S`
    stvs: DenseMatrix,
    k_inv: DenseMatrix,
    pub state: GibbsState,
    iteration: usize,
}

/// `IG(a, b)` via `b / Gamma(a, 1)`.
pub(crate) fn inverse_gamma<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(a, 1.0).expect("shape is positive").sample(rng);
    b / g
}

fn init_vec(v: &Option<Vec<f64>>, n: usize, name: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::zeros(n)),
        Some(x) if x.len() == n => Ok(DVector::from_column_slice(x)),
        Some(x) => Err(InferenceError::InvalidConfig(format!(
            "initial {name} has length {}, expected {n}",
            x.len()
        ))),
    }
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &'a ModelData, hyper: Hyperparams, cfg: &GibbsConfig) -> Result<Self> {
        data.validate()?;
        hyper.validate()?;
        let vinv = data.v.map(|x| 1.0 / x);
        let htvh = data.h.weighted_gram(&vinv);
        let sv = DenseMatrix::from_fn(data.n(), data.r(), |i, j| data.s[(i, j)] * vinv[i]);
        let stvs = crate::linalg::symmetrize(&(data.s.transpose() * sv));
        let k_inv = crate::linalg::symmetrize(&data.k_factor()?.inverse());
        let init = &cfg.init;
        let state = GibbsState {
            mu_b: init_vec(&init.mu_b, data.n_b(), "mu_b")?,
            eta: init_vec(&init.eta, data.r(), "eta")?,
            xi: init_vec(&init.xi, data.n(), "xi")?,
            sig2_mu: init.sig2_mu.unwrap_or(1.0),
            sig2_k: init.sig2_k.unwrap_or(1.0),
            sig2_xi: init.sig2_xi.unwrap_or(1.0),
        };
        for s2 in [state.sig2_mu, state.sig2_k, state.sig2_xi] {
            if !(s2 > 0.0 && s2.is_finite()) {
                return Err(InferenceError::InvalidConfig("initial variances must be positive".into()));
            }
        }
        Ok(GibbsSampler {
            data,
            hyper,
            z: data.z.clone(),
            vinv,
            htvh,
            stvs,
            k_inv,
            state,
            iteration: 0,
        })
    }

    /// Replaces the observations (used by successive-conditional checks).
    pub fn set_z(&mut self, z: DVector<f64>) {
        assert_eq!(z.len(), self.z.len(), "z length is fixed by the model data");
        self.z = z;
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn k_inv(&self) -> &DenseMatrix {
        &self.k_inv
    }

    fn numerical(&self, e: crate::linalg::LinalgError) -> InferenceError {
        InferenceError::Numerical {
            iteration: self.iteration,
            source: e,
        }
    }

    /// `μ_B | rest ~ N(ϑ, Ω⁻¹)`, `Ω = HᵀV⁻¹H + σ_μ⁻²I`, `ϑ = Ω⁻¹HᵀV⁻¹(Z − Sη − ξ)`.
    pub fn draw_mu_b<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let st = &self.state;
        let resid = &self.z - &self.data.s * &st.eta - &st.xi;
        let rhs = self.data.h.tr_mul_vec(&resid.component_mul(&self.vinv));
        let mut omega = self.htvh.clone();
        for i in 0..omega.nrows() {
            omega[(i, i)] += 1.0 / st.sig2_mu;
        }
        let f = cholesky_jittered(&omega).map_err(|e| self.numerical(e))?;
        let mean = f.solve(&rhs);
        self.state.mu_b = mvn_sample_factored(&mean, &f, rng);
        Ok(())
    }

    /// `η | rest ~ N(ϑ, Ω⁻¹)`, `Ω = SᵀV⁻¹S + σ_K⁻²K⁻¹`, `ϑ = Ω⁻¹SᵀV⁻¹(Z − Hμ_B − ξ)`.
    pub fn draw_eta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let st = &self.state;
        let resid = &self.z - self.data.h.mul_vec(&st.mu_b) - &st.xi;
        let rhs = self.data.s.tr_mul(&resid.component_mul(&self.vinv));
        let omega = &self.stvs + &self.k_inv / st.sig2_k;
        let f = cholesky_jittered(&omega).map_err(|e| self.numerical(e))?;
        let mean = f.solve(&rhs);
        self.state.eta = mvn_sample_factored(&mean, &f, rng);
        Ok(())
    }

    /// `ξ | rest`: diagonal precision `V⁻¹ + σ_ξ⁻²I`, drawn componentwise with
    /// mean `Ω⁻¹V⁻¹(Z − Hμ_B − Sη)`.
    pub fn draw_xi<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let st = &self.state;
        let resid = &self.z - self.data.h.mul_vec(&st.mu_b) - &self.data.s * &st.eta;
        let inv_s2 = 1.0 / st.sig2_xi;
        let xi = DVector::from_fn(resid.len(), |i, _| {
            let prec = self.vinv[i] + inv_s2;
            let mean = self.vinv[i] * resid[i] / prec;
            mean + rng.sample::<f64, _>(StandardNormal) / prec.sqrt()
        });
        self.state.xi = xi;
        Ok(())
    }

    /// `σ²_μ | rest ~ IG(a_μ + n_B/2, b_μ + μ_Bᵀμ_B/2)`.
    pub fn draw_sig2_mu<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mu = &self.state.mu_b;
        let a = self.hyper.a_mu + mu.len() as f64 / 2.0;
        let b = self.hyper.b_mu + mu.dot(mu) / 2.0;
        self.state.sig2_mu = inverse_gamma(a, b, rng);
    }

    /// `σ²_K | rest ~ IG(a_K + r/2, b_K + ηᵀK⁻¹η/2)`.
    pub fn draw_sig2_k<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let eta = &self.state.eta;
        let a = self.hyper.a_k + eta.len() as f64 / 2.0;
        let b = self.hyper.b_k + eta.dot(&(&self.k_inv * eta)) / 2.0;
        self.state.sig2_k = inverse_gamma(a, b, rng);
    }

    /// `σ²_ξ | rest ~ IG(a_ξ + N/2, b_ξ + ξᵀξ/2)`.
    pub fn draw_sig2_xi<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let xi = &self.state.xi;
        let a = self.hyper.a_xi + xi.len() as f64 / 2.0;
        let b = self.hyper.b_xi + xi.dot(xi) / 2.0;
        self.state.sig2_xi = inverse_gamma(a, b, rng);
    }

    /// One full cycle in the order μ_B, η, ξ, σ²_μ, σ²_K, σ²_ξ.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.draw_mu_b(rng)?;
        self.draw_eta(rng)?;
        self.draw_xi(rng)?;
        self.draw_sig2_mu(rng);
        self.draw_sig2_k(rng);
        self.draw_sig2_xi(rng);
        self.iteration += 1;
        Ok(())
    }

    /// `log φ(Z | Hμ_B + Sη + ξ, V)` at the current state.
    pub fn loglik(&self) -> f64 {
        let st = &self.state;
        let mean = self.data.h.mul_vec(&st.mu_b) + &self.data.s * &st.eta + &st.xi;
        super::gaussian_diag_loglik(&self.z, &mean, &self.data.v)
    }
}

/// Runs the chain for `cfg.iterations` sweeps, keeping every `thin`-th draw
/// after `burn`. Seeded from `cfg.seed`.
pub fn gibbs_stcos(data: &ModelData, hyper: &Hyperparams, cfg: &GibbsConfig) -> Result<GibbsOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = GibbsSampler::new(data, *hyper, cfg)?;
    let saved = cfg.saved_draws();
    let (n, nb, r) = (data.n(), data.n_b(), data.r());

    let mut mu_hist = DenseMatrix::zeros(saved, nb);
    let mut eta_hist = DenseMatrix::zeros(saved, r);
    let mut xi_hist = cfg.store_xi.then(|| DenseMatrix::zeros(saved, n));
    let mut sig2_mu = Vec::with_capacity(saved);
    let mut sig2_k = Vec::with_capacity(saved);
    let mut sig2_xi = Vec::with_capacity(saved);
    let mut loglik = Vec::with_capacity(saved);
    let mut xi_sum = DVector::zeros(n);

    for it in 0..cfg.iterations {
        if cfg.report_period > 0 && (it + 1) % cfg.report_period == 0 {
            log::info!("Begin iteration {}", it + 1);
        }
        sampler.sweep(&mut rng)?;
        if it >= cfg.burn && (it - cfg.burn + 1).is_multiple_of(cfg.thin) {
            let d = sig2_xi.len();
            let st = &sampler.state;
            mu_hist.set_row(d, &st.mu_b.transpose());
            eta_hist.set_row(d, &st.eta.transpose());
            if let Some(h) = xi_hist.as_mut() {
                h.set_row(d, &st.xi.transpose());
            }
            xi_sum += &st.xi;
            sig2_mu.push(st.sig2_mu);
            sig2_k.push(st.sig2_k);
            sig2_xi.push(st.sig2_xi);
            loglik.push(sampler.loglik());
        }
    }
    debug_assert_eq!(sig2_xi.len(), saved);
    let xi_mean = if saved > 0 { xi_sum / saved as f64 } else { xi_sum };
    Ok(GibbsOutput {
        mu_b: mu_hist,
        eta: eta_hist,
        xi: xi_hist,
        sig2_mu,
        sig2_k,
        sig2_xi,
        loglik,
        xi_mean,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
