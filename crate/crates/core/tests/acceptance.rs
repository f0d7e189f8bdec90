//! Acceptance suite: one PASS/FAIL line per criterion.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use stcos::basis::{areal_spacetime_bisquare, BasisConfig, Period, SpaceTimeKnots};
use stcos::cov::{best_positive_approximant, car_precision, cov_approx_randwalk, KMatrix, FineLevelStructure};
use stcos::geom::{adjacency_matrix, overlap_matrix, AdjacencyRule, Domain, Point2};
use stcos::inference::{
    gibbs_stcos, loglik_dense, loglik_smw, mle_stcos, profile_loglik, GibbsConfig, GibbsSampler, Hyperparams, ModelData,
};
use stcos::linalg::{quantile_type7, sym_eigen, DenseMatrix, SparseMatrix};
use stcos::pipeline::summary::read_targets_csv;
use stcos::pipeline::{moe_to_var, simulate, SimulationTruth, SourceLayout};

struct Outcome {
    id: u32,
    pass: bool,
    soft: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, soft: false, detail }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DenseMatrix::identity(n, n) * 0.1
}

fn criterion_1() -> Outcome {
    let pairs = [(3157.0, 3683788.0), (7048.0, 18360194.0), (5563.0, 11438356.0), (9503.0, 33378510.0)];
    let mut worst: f64 = 0.0;
    for (moe, var) in pairs {
        worst = worst.max((moe_to_var(moe, 0.10).unwrap() - var).abs());
    }
    outcome(1, worst <= 1.0, format!("max |DirectVar - listed| = {worst:.3}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_rel, mut worst_resid): (f64, f64) = (0.0, 0.0);
    for _ in 0..25 {
        let s = loop {
            let s = random_matrix(&mut rng, 6, 3);
            let sv = s.clone().svd(false, false).singular_values;
            if sv.min() > 1e-3 * sv.max() {
                break s;
            }
        };
        let sigma = random_pd(&mut rng, 6);
        let x = best_positive_approximant(&s, &sigma).unwrap();

        // vec(S X Sᵀ) = (S ⊗ S) vec X, solved as a 36 × 9 least-squares problem.
        let design = s.kronecker(&s);
        let target = DVector::from_column_slice(sigma.as_slice());
        let sol = design.clone().svd(true, true).solve(&target, 1e-14).unwrap();
        let oracle = DenseMatrix::from_column_slice(3, 3, sol.as_slice());
        worst_rel = worst_rel.max((&x - &oracle).norm() / oracle.norm());

        let resid = s.transpose() * (&sigma - &s * &x * s.transpose()) * &s;
        worst_resid = worst_resid.max(resid.norm() / (s.transpose() * &sigma * &s).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        2,
        worst_rel <= 1e-8 && worst_resid <= 1e-8 && secs < 1.0,
        format!("max rel err {worst_rel:.2e} (<= 1e-8), max normal-eq residual {worst_resid:.2e} (<= 1e-8), {secs:.3}s"),
    )
}

/// Bisquare at time offset zero for the centered knot.
fn psi0(p: Point2, c: Point2, ws: f64) -> f64 {
    let d2 = p.dist2(c) / (ws * ws);
    if d2 > 1.0 {
        0.0
    } else {
        (2.0 - d2).powi(2)
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let square = Domain::grid("sq", "u", Point2::new(0.0, 0.0), 1.0, 1.0, 1, 1).unwrap();
    let c = Point2::new(0.5, 0.5);
    let ws = 0.6;
    let knots = SpaceTimeKnots::new(vec![(c, 2017.0)], ws, 1.0).unwrap();
    let period = Period::new(vec![2017.0]).unwrap();
    let m = 256;
    let h = 1.0 / m as f64;
    let mut quad = 0.0;
    for i in 0..m {
        for j in 0..m {
            quad += psi0(Point2::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h), c, ws);
        }
    }
    quad /= (m * m) as f64;

    let reps = 10_000;
    let mut passing = 0;
    let mut worst_z: f64 = 0.0;
    for seed in 0..20u64 {
        let est = areal_spacetime_bisquare(
            &square,
            &period,
            &knots,
            &BasisConfig { mc_reps: reps },
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()[(0, 0)];
        // Empirical SE from an independent uniform sample of the same size.
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let vals: Vec<f64> = (0..reps)
            .map(|_| psi0(Point2::new(rng.random(), rng.random()), c, ws))
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        let z = (est - quad).abs() / se;
        worst_z = worst_z.max(z);
        if z <= 3.0 {
            passing += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        3,
        passing >= 19 && secs < 10.0,
        format!("{passing}/20 seeds within 3 SE of quadrature {quad:.6} (worst {worst_z:.2} SE), {secs:.2}s"),
    )
}

struct MomentCheck {
    worst: f64,
    checks: usize,
}

impl MomentCheck {
    fn new() -> Self {
        MomentCheck { worst: 0.0, checks: 0 }
    }

    /// Compares sample mean and variance of `xs` with `(mean, var)` in units
    /// of their Monte Carlo standard errors.
    fn add(&mut self, xs: &[f64], mean: f64, var: f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        let se_mean = (m2 / n).sqrt();
        let se_var = ((m4 - m2 * m2) / n).sqrt();
        let s2 = m2 * n / (n - 1.0);
        self.worst = self.worst.max((m - mean).abs() / se_mean);
        self.worst = self.worst.max((s2 - var).abs() / se_var);
        self.checks += 2;
    }
}

fn frozen_context() -> ModelData {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (n, nb, r) = (12, 4, 3);
    let mut trip = Vec::new();
    for i in 0..n {
        let a = i % nb;
        let b = (a + 1 + i / nb) % nb;
        let w = 0.25 + 0.5 * rng.random::<f64>();
        trip.push((i, a, w));
        trip.push((i, b, 1.0 - w));
    }
    let h = SparseMatrix::from_triplets(n, nb, trip).unwrap();
    let s = random_matrix(&mut rng, n, r);
    let k = KMatrix { k: random_pd(&mut rng, r), structure: FineLevelStructure::Identity };
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
    let v = DVector::from_fn(n, |_, _| 0.2 + rng.random::<f64>());
    ModelData::new(z, v, h, s, k).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let draws = 100_000;
    let data = frozen_context();
    let hyper = Hyperparams { a_mu: 3.0, b_mu: 2.0, a_k: 4.0, b_k: 1.5, a_xi: 2.5, b_xi: 0.7 };
    let mut sampler = GibbsSampler::new(&data, hyper, &GibbsConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, nb, r) = (data.n(), data.n_b(), data.r());
    sampler.state.mu_b = DVector::from_fn(nb, |i, _| 0.3 * i as f64 - 0.4);
    sampler.state.eta = DVector::from_fn(r, |i, _| 0.5 - 0.2 * i as f64);
    sampler.state.xi = DVector::from_fn(n, |i, _| 0.05 * (i as f64 - 6.0));
    sampler.state.sig2_mu = 0.8;
    sampler.state.sig2_k = 1.7;
    sampler.state.sig2_xi = 0.3;
    let frozen = sampler.state.clone();

    let h = data.h.to_dense();
    let vinv = DenseMatrix::from_diagonal(&data.v.map(|x| 1.0 / x));
    let k_inv = data.k.k.clone().try_inverse().unwrap();
    let mut check = MomentCheck::new();

    // Normal steps: oracle moments by explicit dense inverses.
    let normal_oracle = |design: &DenseMatrix, prior_prec: &DenseMatrix, resid: &DVector<f64>| {
        let cov = (design.transpose() * &vinv * design + prior_prec).try_inverse().unwrap();
        let mean = &cov * design.transpose() * &vinv * resid;
        (mean, cov)
    };
    let resid_mu = &data.z - &data.s * &frozen.eta - &frozen.xi;
    let (mean, cov) = normal_oracle(&h, &(DenseMatrix::identity(nb, nb) / frozen.sig2_mu), &resid_mu);
    let mut cols = vec![Vec::with_capacity(draws); nb];
    for _ in 0..draws {
        sampler.draw_mu_b(&mut rng).unwrap();
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(sampler.state.mu_b[j]);
        }
    }
    for j in 0..nb {
        check.add(&cols[j], mean[j], cov[(j, j)]);
    }
    sampler.state = frozen.clone();

    let resid_eta = &data.z - &h * &frozen.mu_b - &frozen.xi;
    let (mean, cov) = normal_oracle(&data.s, &(&k_inv / frozen.sig2_k), &resid_eta);
    let mut cols = vec![Vec::with_capacity(draws); r];
    for _ in 0..draws {
        sampler.draw_eta(&mut rng).unwrap();
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(sampler.state.eta[j]);
        }
    }
    for j in 0..r {
        check.add(&cols[j], mean[j], cov[(j, j)]);
    }
    sampler.state = frozen.clone();

    let resid_xi = &data.z - &h * &frozen.mu_b - &data.s * &frozen.eta;
    let mut cols = vec![Vec::with_capacity(draws); n];
    for _ in 0..draws {
        sampler.draw_xi(&mut rng).unwrap();
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(sampler.state.xi[j]);
        }
    }
    for i in 0..n {
        let var = 1.0 / (1.0 / data.v[i] + 1.0 / frozen.sig2_xi);
        check.add(&cols[i], var * resid_xi[i] / data.v[i], var);
    }
    sampler.state = frozen.clone();

    // IG(a, b): mean b/(a−1), variance b²/((a−1)²(a−2)).
    let ig = |a: f64, b: f64| (b / (a - 1.0), b * b / ((a - 1.0).powi(2) * (a - 2.0)));
    let ig_steps: [(f64, f64); 3] = [
        (hyper.a_mu + nb as f64 / 2.0, hyper.b_mu + frozen.mu_b.norm_squared() / 2.0),
        (hyper.a_k + r as f64 / 2.0, hyper.b_k + frozen.eta.dot(&(&k_inv * &frozen.eta)) / 2.0),
        (hyper.a_xi + n as f64 / 2.0, hyper.b_xi + frozen.xi.norm_squared() / 2.0),
    ];
    for (step, (a, b)) in ig_steps.iter().enumerate() {
        let mut xs = Vec::with_capacity(draws);
        for _ in 0..draws {
            match step {
                0 => {
                    sampler.draw_sig2_mu(&mut rng);
                    xs.push(sampler.state.sig2_mu);
                }
                1 => {
                    sampler.draw_sig2_k(&mut rng);
                    xs.push(sampler.state.sig2_k);
                }
                _ => {
                    sampler.draw_sig2_xi(&mut rng);
                    xs.push(sampler.state.sig2_xi);
                }
            }
        }
        let (m, v) = ig(*a, *b);
        check.add(&xs, m, v);
        sampler.state = frozen.clone();
    }

    let (gibbs_mean, grid_mean) = conjugate_1d();
    let rel = (gibbs_mean - grid_mean).abs() / grid_mean.abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        4,
        check.worst <= 3.0 && rel <= 0.02 && secs < 30.0,
        format!(
            "{} moment checks, worst {:.2} MC SE (<= 3); 1-D posterior mean {gibbs_mean:.5} vs grid {grid_mean:.5} ({:.3}% <= 2%), {secs:.1}s",
            check.checks,
            check.worst,
            rel * 100.0
        ),
    )
}

/// One fine unit, `S = 0`, and `σ²_ξ` pinned near zero: the chain targets
/// `μ | Z` under a Student-t marginal prior, which is integrated on a grid.
fn conjugate_1d() -> (f64, f64) {
    let z = [2.0, 3.1, 2.4];
    let v = [1.5, 1.0, 2.0];
    let n = z.len();
    let h = SparseMatrix::from_triplets(n, 1, (0..n).map(|i| (i, 0, 1.0))).unwrap();
    let data = ModelData::new(
        DVector::from_column_slice(&z),
        DVector::from_column_slice(&v),
        h,
        DenseMatrix::zeros(n, 1),
        KMatrix { k: DenseMatrix::identity(1, 1), structure: FineLevelStructure::Identity },
    )
    .unwrap();
    let hyper = Hyperparams { a_mu: 1.0, b_mu: 2.0, a_k: 1.0, b_k: 2.0, a_xi: 1e8, b_xi: 1e-8 };
    let cfg = GibbsConfig { iterations: 101_000, burn: 1_000, thin: 1, report_period: 0, seed: 7, store_xi: false, ..GibbsConfig::default() };
    let out = gibbs_stcos(&data, &hyper, &cfg).unwrap();
    let gibbs_mean = out.mu_b_mean()[0];

    // μ ~ t_{2a}(0, b/a) after integrating σ²_μ out.
    let (a, b) = (hyper.a_mu, hyper.b_mu);
    let log_post = |mu: f64| {
        let prior = -(a + 0.5) * (1.0 + mu * mu / (2.0 * b)).ln();
        let lik: f64 = z.iter().zip(&v).map(|(zi, vi)| -0.5 * (zi - mu).powi(2) / vi).sum();
        prior + lik
    };
    let (lo, hi, m) = (-30.0, 30.0, 600_000);
    let step = (hi - lo) / m as f64;
    let (mut w, mut wm) = (0.0, 0.0);
    for i in 0..=m {
        let mu = lo + i as f64 * step;
        let d = log_post(mu).exp();
        w += d;
        wm += d * mu;
    }
    (gibbs_mean, wm / w)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fine = Domain::grid("fine", "f", Point2::new(0.0, 0.0), 1000.0, 1000.0, 4, 4).unwrap();
    // Three sources, each an 8 × 8 grid nested in the fine cells, observed
    // over different periods.
    let layout: Vec<SourceLayout> = [(2017, 1), (2016, 3), (2015, 1)]
        .iter()
        .enumerate()
        .map(|(i, &(year, lookback))| SourceLayout {
            domain: Domain::grid(&format!("src{i}"), &format!("s{i}_"), Point2::new(0.0, 0.0), 500.0, 500.0, 8, 8).unwrap(),
            year,
            lookback,
            v: (0..64).map(|j| 0.01 + 0.01 * ((j * 7 + i) % 5) as f64).collect(),
        })
        .collect();
    let spatial: Vec<Point2> = [(1000.0, 1000.0), (3000.0, 1000.0), (1000.0, 3000.0), (3000.0, 3000.0)]
        .iter()
        .map(|&(x, y)| Point2::new(x, y))
        .collect();
    let temporal = [2013.0, 2014.0, 2015.0, 2016.0, 2017.0];
    let knots = SpaceTimeKnots::cartesian(&spatial, &temporal, 2500.0, 1.0).unwrap();
    let basis = BasisConfig { mc_reps: 500 };

    let mut s_star = DenseMatrix::zeros(16 * temporal.len(), knots.len());
    for (t, &year) in temporal.iter().enumerate() {
        let block =
            areal_spacetime_bisquare(&fine, &Period::new(vec![year]).unwrap(), &knots, &basis, &mut rng).unwrap();
        s_star.rows_mut(16 * t, 16).copy_from(&block);
    }
    let w = adjacency_matrix(&fine, AdjacencyRule::Queen);
    let q_inv = car_precision(&w, 0.9, true).unwrap().inverse_symmetrized().unwrap();
    let k = cov_approx_randwalk(&q_inv, &s_star).unwrap();

    let mu_b: Vec<f64> = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect();
    let truth = SimulationTruth { mu_b: mu_b.clone(), sig2_k: 1.0, sig2_xi: 0.04 };
    let sim = simulate(&fine, &truth, &knots, &k.k, &layout, &basis, 0.10, &mut rng).unwrap();
    let data = ModelData::new(
        DVector::from_vec(sim.record.z.clone()),
        DVector::from_vec(sim.record.v.clone()),
        sim.h.clone(),
        sim.s.clone(),
        k,
    )
    .unwrap();
    let cfg = GibbsConfig { iterations: 10_000, burn: 2_000, thin: 10, report_period: 0, seed: 55, ..GibbsConfig::default() };
    let out = gibbs_stcos(&data, &Hyperparams::default(), &cfg).unwrap();

    let mut covered = 0;
    for (j, truth) in mu_b.iter().enumerate() {
        let col: Vec<f64> = out.mu_b.column(j).iter().cloned().collect();
        let lo = quantile_type7(&col, 0.05).unwrap();
        let hi = quantile_type7(&col, 0.95).unwrap();
        if (lo..=hi).contains(truth) {
            covered += 1;
        }
    }
    let med = quantile_type7(&out.sig2_xi, 0.5).unwrap();
    let ratio = med / 0.04;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        5,
        covered >= 12 && (1.0 / 3.0..=3.0).contains(&ratio) && secs < 120.0,
        format!(
            "N = {}, r = {}: 90% CI covers {covered}/16 mu_B (>= 12); sig2_xi median {med:.4} = {ratio:.2} x truth (within 3x); {secs:.1}s",
            data.n(),
            data.r()
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, nb, r) = (40, 8, 5);
    let h = SparseMatrix::from_triplets(
        n,
        nb,
        (0..n).flat_map(|i| [(i, i % nb, 0.6), (i, (i + 3) % nb, 0.4)]),
    )
    .unwrap();
    let s = random_matrix(&mut rng, n, r);
    let kmat = random_pd(&mut rng, r);
    let v = DVector::from_fn(n, |_, _| 0.1 + 0.3 * rng.random::<f64>());
    let mu_true = DVector::from_fn(nb, |_, _| rng.sample::<f64, _>(StandardNormal));
    let chol = kmat.clone().cholesky().unwrap();
    let eta = chol.l() * DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = h.mul_vec(&mu_true)
        + &s * eta
        + DVector::from_fn(n, |i, _| rng.sample::<f64, _>(StandardNormal) * (0.5 + v[i]).sqrt());
    let data = ModelData::new(z, v, h, s, KMatrix { k: kmat, structure: FineLevelStructure::Identity }).unwrap();

    let mut worst_rel: f64 = 0.0;
    for &(a, b) in &[(0.3, 0.7), (1.0, 1.0), (2.5, 0.05), (0.01, 3.0)] {
        let mu = DVector::from_fn(nb, |i, _| 0.1 * i as f64);
        let d = loglik_dense(&data, &mu, a, b).unwrap();
        let w = loglik_smw(&data, &mu, a, b).unwrap();
        worst_rel = worst_rel.max((d - w).abs() / d.abs());
    }
    let fit = mle_stcos(&data, None).unwrap();
    let mut dominated = 0;
    for _ in 0..20 {
        let a = fit.sig2k_hat * (0.5 * (rng.random::<f64>() * 2.0 - 1.0)).exp();
        let b = fit.sig2xi_hat * (0.5 * (rng.random::<f64>() * 2.0 - 1.0)).exp();
        let (ll, _) = profile_loglik(&data, a, b).unwrap();
        if ll <= fit.loglik {
            dominated += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        6,
        worst_rel <= 1e-6 && dominated == 20 && secs < 5.0,
        format!(
            "dense vs SMW max rel diff {worst_rel:.2e} (<= 1e-6); optimum ({:.4}, {:.4}) dominates {dominated}/20 perturbations; {secs:.2}s",
            fit.sig2k_hat, fit.sig2xi_hat
        ),
    )
}

fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> SparseMatrix {
    let mut edges = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.insert((j, i));
    }
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    SparseMatrix::from_triplets(n, n, edges.iter().flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])).unwrap()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut min_eig = f64::INFINITY;
    let mut worst_asym: f64 = 0.0;
    let mut unscaled_exact = true;
    let mut within_rounding = true;
    for _ in 0..10 {
        let n = rng.random_range(3..=30);
        let w = random_connected_graph(&mut rng, n);
        let deg = w.row_sums();
        for tau in [0.1, 0.5, 0.9] {
            let q = car_precision(&w, tau, false).unwrap().q;
            unscaled_exact &= q == q.transpose();
            min_eig = min_eig.min(*sym_eigen(&q).unwrap().values.as_slice().last().unwrap());
            let qs = car_precision(&w, tau, true).unwrap().q;
            let dq = DenseMatrix::from_diagonal(&deg) * qs;
            let asym = (&dq - dq.transpose()).abs().max();
            worst_asym = worst_asym.max(asym);
            within_rounding &= asym <= 4.0 * f64::EPSILON * tau;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        7,
        min_eig > 0.0 && unscaled_exact && within_rounding && secs < 1.0,
        format!(
            "min eigenvalue of D - tau W {min_eig:.3e} (> 0); D - tau W bitwise symmetric: {unscaled_exact}; \
             max |DQ - (DQ)^T| {worst_asym:.1e} (rounding level, <= 4 eps tau); {secs:.3}s"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    let fixtures = [
        (Point2::new(0.0, 0.0), 2.0, 2, 1.0, 4),
        (Point2::new(0.1, -0.3), 3.0, 3, 0.5, 18),
        (Point2::new(5e5, 4.3e6), 900.0, 4, 300.0, 12),
    ];
    for (origin, coarse_w, coarse_n, fine_w, fine_n) in fixtures {
        let coarse = Domain::grid("c", "c", origin, coarse_w, coarse_w, coarse_n, coarse_n).unwrap();
        let fine = Domain::grid("f", "f", origin, fine_w, fine_w, fine_n, fine_n).unwrap();
        for (a, b) in [(&coarse, &fine), (&fine, &coarse)] {
            let m = overlap_matrix(a, b, true).unwrap();
            for s in m.row_sums().iter() {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    let grid = Domain::grid("g", "g", Point2::new(0.0, 0.0), 1.0, 1.0, 2, 2).unwrap();
    let queen = adjacency_matrix(&grid, AdjacencyRule::Queen).to_dense();
    let rook = adjacency_matrix(&grid, AdjacencyRule::Rook).to_dense();
    // Cells in row-major order from the bottom left: 0 1 / 2 3 with 0 at the origin.
    let queen_ref = DenseMatrix::from_row_slice(4, 4, &[0., 1., 1., 1., 1., 0., 1., 1., 1., 1., 0., 1., 1., 1., 1., 0.]);
    let rook_ref = DenseMatrix::from_row_slice(4, 4, &[0., 1., 1., 0., 1., 0., 0., 1., 1., 0., 0., 1., 0., 1., 1., 0.]);
    let tables = queen == queen_ref && rook == rook_ref;
    outcome(
        8,
        worst <= 1e-9 && tables,
        format!("max |row sum - 1| {worst:.1e} (<= 1e-9); 2x2 queen/rook tables exact: {tables}"),
    )
}

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn copy_toy(dest: &Path) {
    for entry in std::fs::read_dir(toy_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            std::fs::copy(&p, dest.join(p.file_name().unwrap())).unwrap();
        }
    }
}

fn run_cli(config: &Path, seed: u64) -> bool {
    Command::new(env!("CARGO_BIN_EXE_stcos"))
        .args(["run", "--config"])
        .arg(config)
        .args(["--seed", &seed.to_string()])
        .env("RUST_LOG", "warn")
        .status()
        .unwrap()
        .success()
}

fn hash(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    copy_toy(dir.path());
    let config = dir.path().join("toy.toml");
    let files = ["targets.csv", "chain.csv", "run.json"];
    let out = dir.path().join("out");

    let ok1 = run_cli(&config, 42);
    let first: Vec<String> = files.iter().map(|f| hash(&out.join(f))).collect();
    let base = read_targets_csv(out.join("targets.csv")).unwrap();
    let ok2 = run_cli(&config, 42);
    let second: Vec<String> = files.iter().map(|f| hash(&out.join(f))).collect();
    let identical = ok1 && ok2 && first == second;

    // Same inputs with estimates and margins of error multiplied by 100.
    let scaled_dir = tempfile::tempdir().unwrap();
    copy_toy(scaled_dir.path());
    let rows = stcos::pipeline::read_estimates_csv(toy_dir().join("estimates.csv")).unwrap();
    let scaled: Vec<_> = rows
        .into_iter()
        .map(|mut r| {
            r.est = r.est.map(|x| x * 100.0);
            r.moe = r.moe.map(|x| x * 100.0);
            r
        })
        .collect();
    stcos::pipeline::write_estimates_csv(scaled_dir.path().join("estimates.csv"), &scaled).unwrap();
    let ok3 = run_cli(&scaled_dir.path().join("toy.toml"), 42);
    let got = read_targets_csv(scaled_dir.path().join("out/targets.csv")).unwrap();
    let mut worst: f64 = 0.0;
    let mut exact = ok3 && got.len() == base.len();
    for (g, b) in got.iter().zip(&base) {
        let pairs = [
            (g.e_mean, b.e_mean),
            (g.e_sd, b.e_sd),
            (g.e_lo, b.e_lo),
            (g.e_hi, b.e_hi),
            (g.e_median, b.e_median),
            (g.e_moe, b.e_moe),
        ];
        for (x, y) in pairs {
            exact &= x == 100.0 * y;
            worst = worst.max((x - 100.0 * y).abs() / (100.0 * y).abs());
        }
    }
    let equivariant = ok3 && got.len() == base.len() && worst <= 1e-12;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        9,
        identical && equivariant && secs < 120.0,
        format!(
            "seed 42 twice: hashes identical = {identical}; scale by 100: max rel deviation {worst:.1e} \
             (bitwise exact: {exact}; accepted at <= 1e-12, rounding level); {secs:.1}s"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, nb, r) = (10_000, 200, 20);
    let h = SparseMatrix::from_triplets(
        n,
        nb,
        (0..n).flat_map(|i| [(i, i % nb, 0.7), (i, (i * 7 + 3) % nb, 0.3)]),
    )
    .unwrap();
    let s = random_matrix(&mut rng, n, r);
    let k = KMatrix { k: random_pd(&mut rng, r), structure: FineLevelStructure::Identity };
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = DVector::from_fn(n, |_, _| 0.1 + rng.random::<f64>());
    let data = ModelData::new(z, v, h, s, k).unwrap();
    let mu = DVector::zeros(nb);

    let t = Instant::now();
    let ll = loglik_smw(&data, &mu, 0.7, 0.3).unwrap();
    let smw_secs = t.elapsed().as_secs_f64();

    let cfg = GibbsConfig { iterations: 300, burn: 100, thin: 10, report_period: 0, seed: 1, store_xi: false, ..GibbsConfig::default() };
    let t = Instant::now();
    gibbs_stcos(&data, &Hyperparams::default(), &cfg).unwrap();
    let rate = cfg.iterations as f64 / t.elapsed().as_secs_f64();
    Outcome {
        id: 10,
        pass: smw_secs < 1.0 && rate >= 100.0 && ll.is_finite(),
        soft: true,
        detail: format!("N = {n}, r = {r}, n_B = {nb}: loglik_smw {smw_secs:.3}s (< 1s), Gibbs {rate:.0} it/s (>= 100)"),
    }
}

#[test]
fn acceptance() {
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    // Written to the raw handle so the lines show without --nocapture.
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    for o in &results {
        let status = if o.pass { "PASS" } else if o.soft { "FAIL (soft)" } else { "FAIL" };
        writeln!(out, "criterion {:>2}: {status}: {}", o.id, o.detail).unwrap();
    }
    drop(out);
    let failed: Vec<u32> = results.iter().filter(|o| !o.pass && !o.soft).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
