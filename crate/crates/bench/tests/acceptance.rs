//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Run alone with
//! `cargo test --release -p mfcov-bench --test acceptance`.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mfcov::estimators::{
    emf, lemf, mrmf_gradient_analytic, mrmf_gradient_fd, mrmf_solve, precondition, Gain, MrmfProblem,
};
use mfcov::metric::{gmml_geodesic, gmml_metric, similarity_dissimilarity};
use mfcov::models::{
    correlated_group_operator, random_spd, running_example_model, standard_normal_matrix, standard_normal_vector,
    BudgetAllocation, WrappedGaussianModel,
};
use mfcov::rng::{Purpose, SeedTree, StreamRng};
use mfcov::spd::{geodesic, intrinsic_distance, riemannian_exp, riemannian_log};
use mfcov::stats::mahalanobis_sq;
use mfcov::tangent::{build_congruence_operator, flat_to_sym, regularized_inverse, sym_to_flat, tri_dim};
use mfcov::{FidelityStructure, SpdMatrix, SymMatrix, TangentOperator};
use mfcov_bench::config::Whitening;
use mfcov_bench::metric::MetricExperiment;
use mfcov_bench::pipeline::{calibrate, solve, CoupledSummary, MrmfCalibration};
use mfcov_bench::report::{median, summarize};
use mfcov_bench::simple::SimpleExperiment;
use mfcov_bench::{ExperimentConfig, ExperimentKind};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn tree() -> SeedTree {
    SeedTree::new(20_240_601)
}

fn rng(criterion: u64, index: u64) -> StreamRng {
    tree().stream(Purpose::Misc, criterion, index)
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Ok` iff every `(label, worst, tolerance)` holds.
fn bounds(items: &[(&str, f64, f64)]) -> Outcome {
    let show = |x: f64| if x == x.trunc() && x.abs() < 1e6 { format!("{x}") } else { format!("{x:.2e}") };
    let text: Vec<String> = items.iter().map(|(l, w, t)| format!("{l} {} (≤ {})", show(*w), show(*t))).collect();
    let text = text.join(", ");
    if items.iter().all(|(_, w, t)| w <= t) {
        Ok(text)
    } else {
        Err(text)
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

/// Well-conditioned invertible, non-symmetric matrix.
fn invertible(d: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let q = standard_normal_matrix(d, d, rng).qr().q();
    let scales = standard_normal_vector(d, rng).map(|z| (0.5 * z).exp());
    q * DMatrix::from_diagonal(&scales)
}

fn criterion_1() -> Outcome {
    let mut worst = [0.0f64; 5];
    for (k, d) in [2usize, 3, 4, 6].into_iter().enumerate() {
        let mut r = rng(1, k as u64);
        for _ in 0..500 {
            let a = random_spd(d, 1.0, &mut r);
            let b = random_spd(d, 1.0, &mut r);
            let x = riemannian_log(&a, &b).map_err(e)?;
            let back = riemannian_exp(&a, &x).map_err(e)?;
            let x2 = riemannian_log(&a, &back).map_err(e)?;
            worst[0] = worst[0].max(rel(back.matrix(), b.matrix())).max(rel(x2.matrix(), x.matrix()));

            let g0 = geodesic(&a, &b, 0.0).map_err(e)?;
            let g1 = geodesic(&a, &b, 1.0).map_err(e)?;
            worst[1] = worst[1].max(rel(g0.matrix(), a.matrix())).max(rel(g1.matrix(), b.matrix()));

            let full = intrinsic_distance(&a, &b).map_err(e)?;
            let (s, t): (f64, f64) = (rand::Rng::random(&mut r), rand::Rng::random(&mut r));
            let gs = geodesic(&a, &b, s).map_err(e)?;
            let gt = geodesic(&a, &b, t).map_err(e)?;
            let part = intrinsic_distance(&gs, &gt).map_err(e)?;
            worst[2] = worst[2].max((part - (t - s).abs() * full).abs() / full.max(1e-300));

            let y = invertible(d, &mut r);
            let move_by = |m: &DMatrix<f64>| sym(&y * m * y.transpose());
            let ya = SpdMatrix::new(move_by(a.matrix())).map_err(e)?;
            let yb = SpdMatrix::new(move_by(b.matrix())).map_err(e)?;
            let moved = intrinsic_distance(&ya, &yb).map_err(e)?;
            worst[3] = worst[3].max((moved - full).abs() / full.max(1e-300));

            let lhs = riemannian_log(&ya, &yb).map_err(e)?;
            worst[4] = worst[4].max(rel(lhs.matrix(), &move_by(x.matrix())));
        }
    }
    bounds(&[
        ("exp/log round trip", worst[0], 1e-10),
        ("geodesic endpoints", worst[1], 1e-12),
        ("constant speed", worst[2], 1e-8),
        ("affine invariance", worst[3], 1e-10),
        ("log-congruence equivariance", worst[4], 1e-10),
    ])
}

fn running_instance(criterion: u64, seed: u64, d: usize) -> Result<(WrappedGaussianModel, Vec<SpdMatrix>), String> {
    let mut r = rng(criterion, seed);
    let model = running_example_model(d, 0.15, 0.8, &mut r).map_err(e)?;
    let data = model.draw(&mut r).map_err(e)?;
    Ok((model, data))
}

fn unflat(v: &[f64], d: usize) -> DMatrix<f64> {
    flat_to_sym(&DVector::from_column_slice(v), d).unwrap().into_matrix()
}

/// `⟨v, Γ_S⁻¹ v⟩_Σ` with `Γ_S = Γ G_Σ` and the Σ-weighted inner product.
fn weighted_mahalanobis(data: &[SpdMatrix], means: &[SpdMatrix], gamma: &TangentOperator) -> Result<f64, String> {
    let d = means[0].dim();
    let q = tri_dim(d);
    let logs: Vec<SymMatrix> =
        data.iter().zip(means).map(|(s, m)| riemannian_log(m, s)).collect::<mfcov::Result<_>>().map_err(e)?;
    let v = DVector::from_iterator(
        logs.len() * q,
        logs.iter().flat_map(|l| sym_to_flat(l).iter().copied().collect::<Vec<_>>()),
    );
    let g_sigma = build_congruence_operator(means).map_err(e)?;
    let gamma_s = gamma.matrix() * g_sigma.matrix();
    let w = gamma_s.lu().solve(&v).ok_or("singular weighted operator")?;
    Ok((0..means.len())
        .map(|n| {
            let inv = means[n].inverse_matrix();
            let wn = unflat(&w.as_slice()[n * q..(n + 1) * q], d);
            (&inv * logs[n].matrix() * &inv * wn).trace()
        })
        .sum())
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (model, data) = running_instance(2, seed, 3)?;
        let gi = regularized_inverse(model.gamma(), 0.0).map_err(e)?;
        let mut r = rng(2, 1000 + seed);
        let candidate: Vec<SpdMatrix> = model
            .slot_means()
            .iter()
            .map(|m| SpdMatrix::new(sym(m.sqrt_matrix() * random_spd(3, 0.3, &mut r).matrix() * m.sqrt_matrix())))
            .collect::<mfcov::Result<_>>()
            .map_err(e)?;
        let plain = mahalanobis_sq(&data, &candidate, &gi).map_err(e)?;
        let weighted = weighted_mahalanobis(&data, &candidate, model.gamma())?;
        worst = worst.max((plain - weighted).abs() / plain.abs().max(1e-300));
    }
    bounds(&[("relative difference", worst, 1e-8)])
}

/// Pinned low-fidelity value near, but not at, the true mean.
fn pinned_low(model: &WrappedGaussianModel, criterion: u64, seed: u64) -> Result<SpdMatrix, String> {
    let mut r = rng(criterion, 5000 + seed);
    let m = &model.means()[1];
    SpdMatrix::new(sym(m.sqrt_matrix() * random_spd(m.dim(), 0.2, &mut r).matrix() * m.sqrt_matrix())).map_err(e)
}

fn pinned_problem(
    criterion: u64,
    seed: u64,
) -> Result<(WrappedGaussianModel, Vec<SpdMatrix>, MrmfProblem, SpdMatrix), String> {
    let (model, data) = running_instance(criterion, seed, 3)?;
    let s_bar = pinned_low(&model, criterion, seed)?;
    let gi = regularized_inverse(model.gamma(), 0.0).map_err(e)?;
    let problem = MrmfProblem::new(FidelityStructure::running_example(), data.clone(), gi)
        .and_then(|p| p.with_fixed(1, s_bar.clone()))
        .map_err(e)?;
    Ok((model, data, problem, s_bar))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for seed in 0..20 {
        let (_, _, problem, _) = pinned_problem(3, seed)?;
        let direct = mrmf_solve(&problem).map_err(e)?;
        let (pre_problem, pre) = precondition(&problem).map_err(e)?;
        let via = pre.restore(mrmf_solve(&pre_problem).map_err(e)?).map_err(e)?;
        unconverged += usize::from(!direct.converged) + usize::from(!via.converged);
        worst = worst.max(rel(via.high().matrix(), direct.high().matrix()));
    }
    bounds(&[("relative Frobenius difference", worst, 1e-6), ("unconverged solves", unconverged as f64, 0.0)])
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for seed in 0..50 {
        let (model, data, problem, s_bar) = pinned_problem(4, seed)?;
        let report = mrmf_solve(&problem).map_err(e)?;
        unconverged += usize::from(!report.converged);
        let g = model.gamma();
        let cross = g.extract_block(&[0], &[1]).map_err(e)?.into_matrix();
        let lo = g.extract_block(&[1], &[1]).map_err(e)?.into_matrix();
        let lo_inv = lo.try_inverse().ok_or("singular low-fidelity block")?;
        let lhs = sym_to_flat(&riemannian_log(report.high(), &data[0]).map_err(e)?);
        let rhs = &cross * lo_inv * sym_to_flat(&riemannian_log(&s_bar, &data[1]).map_err(e)?);
        worst = worst.max((&lhs - &rhs).norm() / (1.0 + rhs.norm()));
    }
    bounds(&[("scaled residual", worst, 1e-5), ("unconverged solves", unconverged as f64, 0.0)])
}

/// Coupled-pair wrapped Gaussian with whitened correlated noise.
fn pair_model(d: usize, r: &mut StreamRng) -> Result<WrappedGaussianModel, String> {
    let structure = FidelityStructure::coupled_pair();
    let q = tri_dim(d);
    let base = random_spd(q, 0.5, r).into_matrix();
    let base = &base * (0.15 * 0.15 * q as f64 / base.trace());
    let white = correlated_group_operator(&structure, &base, 0.8).map_err(e)?;
    let means = vec![random_spd(d, 1.0, r), random_spd(d, 1.0, r)];
    let inv_roots: Vec<SpdMatrix> = structure.slot_fidelity().iter().map(|&f| means[f].inv_sqrt()).collect();
    let g = build_congruence_operator(&inv_roots).map_err(e)?;
    let gamma = g.compose(&white).and_then(|w| w.compose(&g)).map_err(e)?;
    let gamma = TangentOperator::new(d, 2, sym(gamma.into_matrix()))
        .and_then(|t| t.with_structure(structure.clone()))
        .map_err(e)?;
    WrappedGaussianModel::new(structure, means, gamma).map_err(e)
}

fn criterion_5() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for d in [3usize, 4] {
        let model = pair_model(d, &mut rng(5, d as u64))?;
        let gi = regularized_inverse(model.gamma(), 0.0).map_err(e)?;
        let target = tri_dim(d) as f64;
        // Reference coordinates from the true means, as the pipeline does
        // from pilot means.
        let cal =
            MrmfCalibration { means: model.means().to_vec(), gamma: model.gamma().clone(), gamma_inv: gi.clone() };
        let values: Vec<(f64, bool)> = (0..2000u64)
            .into_par_iter()
            .map(|t| {
                let mut r = tree().stream(Purpose::Evaluation, 50 + d as u64, t);
                let data = model.draw(&mut r).map_err(e)?;
                let problem = MrmfProblem::new(FidelityStructure::coupled_pair(), data, gi.clone())
                    .and_then(|p| p.with_fixed(1, model.means()[1].clone()))
                    .map_err(e)?;
                let report = solve(&problem, Whitening::Reference, &cal).map_err(e)?;
                Ok((report.mahalanobis_value, report.converged))
            })
            .collect::<Result<_, String>>()?;
        let xs: Vec<f64> = values.iter().map(|v| v.0).collect();
        let unconverged = values.iter().filter(|v| !v.1).count();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        ok &= (m - target).abs() <= 3.0 * se && unconverged == 0;
        parts.push(format!("d={d}: mean {m:.3} ± {se:.3} vs {target}, unconverged {unconverged}"));
    }
    let text = parts.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_6() -> Outcome {
    let config = ExperimentConfig::default();
    let experiment = SimpleExperiment::new(config).map_err(e)?;
    let model = &experiment.model;
    let truth = experiment.truth().matrix().clone();
    let alloc = BudgetAllocation::from_fraction(1.0, 0.01, 56.0, 0.9).map_err(e)?;
    let t = tree();
    let cal = calibrate(model, &alloc, 1000, &t, 60).map_err(e)?;
    let alpha = cal.emf_gain.clone()?;
    let beta = cal.lemf_gain.clone()?;

    let draws: Vec<CoupledSummary> = (0..2000u64)
        .into_par_iter()
        .map(|k| CoupledSummary::draw(model, &alloc, &mut t.stream(Purpose::Evaluation, 60, k)))
        .collect::<mfcov::Result<_>>()
        .map_err(e)?;
    // Log-Euclidean target: the mean log of the high-fidelity SCM at M1.
    let target_draws: Vec<DMatrix<f64>> = (0..20_000u64)
        .into_par_iter()
        .map(|k| {
            let c = CoupledSummary::draw(
                model,
                &BudgetAllocation::new(1.0, 0.01, 56.0, alloc.m1, 0).unwrap(),
                &mut t.stream(Purpose::Moments, 60, k),
            )?;
            Ok(c.s_hi.to_spd()?.log().into_matrix())
        })
        .collect::<mfcov::Result<_>>()
        .map_err(e)?;
    let log_target = target_draws.iter().fold(DMatrix::zeros(4, 4), |a, x| a + x) / target_draws.len() as f64;

    let emf_mse = |a: f64| -> Result<f64, String> {
        let mut acc = 0.0;
        for c in &draws {
            let est = emf(&c.s_hi, &c.s_lo1, &c.s_lo_bar, &Gain::Scalar(a)).map_err(e)?;
            acc += (est.matrix.matrix() - &truth).norm_squared();
        }
        Ok(acc / draws.len() as f64)
    };
    let lemf_mse = |a: f64| -> Result<f64, String> {
        let mut acc = 0.0;
        for c in &draws {
            let [h, l, b] = [&c.s_hi, &c.s_lo1, &c.s_lo_bar].map(|m| m.to_spd());
            let est = lemf(&h.map_err(e)?, &l.map_err(e)?, &b.map_err(e)?, &Gain::Scalar(a)).map_err(e)?;
            acc += (est.log().matrix() - &log_target).norm_squared();
        }
        Ok(acc / draws.len() as f64)
    };
    let (e0, el, eh) = (emf_mse(alpha)?, emf_mse(0.8 * alpha)?, emf_mse(1.2 * alpha)?);
    let (l0, ll, lh) = (lemf_mse(beta)?, lemf_mse(0.8 * beta)?, lemf_mse(1.2 * beta)?);
    let text = format!(
        "EMF α={alpha:.4}: MSE {e0:.5} vs {el:.5} (0.8α), {eh:.5} (1.2α); \
         LEMF α={beta:.4}: MSE {l0:.5} vs {ll:.5} (0.8α), {lh:.5} (1.2α)"
    );
    if e0 <= el && e0 <= eh && l0 <= ll && l0 <= lh {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_7() -> Outcome {
    let config = ExperimentConfig {
        trials: 500,
        budgets: vec![6.0, 56.0, 106.0, 206.0],
        pilot: 1000,
        ..ExperimentConfig::default()
    };
    let out = SimpleExperiment::new(config.clone()).map_err(e)?.run().map_err(e)?;
    let s = summarize(&out.records).map_err(e)?;
    let get = |b: f64, est: &str| s.get(b, est).ok_or(format!("no summary for {est} at {b}"));
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for &b in &config.budgets {
        let (m, h) = (get(b, "mrmf")?, get(b, "hf")?);
        notes.push(format!(
            "B={b}: MRMF/HF frob {:.3}/{:.3} intr {:.3}/{:.3}",
            m.median_se_frobenius, h.median_se_frobenius, m.median_se_intrinsic, h.median_se_intrinsic
        ));
        if !(m.median_se_frobenius < h.median_se_frobenius && m.median_se_intrinsic < h.median_se_intrinsic) {
            failures.push(format!("(a) at B={b}"));
        }
        let positive = out
            .records
            .iter()
            .filter(|r| r.budget == b && r.estimator == "mrmf")
            .all(|r| !r.is_failed() && r.min_eig > 0.0);
        if !positive {
            failures.push(format!("(b) at B={b}"));
        }
    }
    let indefinite = get(6.0, "emf")?.indefinite_fraction;
    notes.push(format!("EMF indefinite at B=6: {:.1}%", 100.0 * indefinite));
    if !(indefinite > 0.05) {
        failures.push("(c)".into());
    }
    let (lf, mrmf) = (get(206.0, "lf")?.median_se_intrinsic, get(206.0, "mrmf")?.median_se_intrinsic);
    notes.push(format!("B=206 intrinsic LF {lf:.3} vs MRMF {mrmf:.4}"));
    if !(lf > mrmf) {
        failures.push("(d)".into());
    }
    let text = notes.join("; ");
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(format!("failed {}: {text}", failures.join(", ")))
    }
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in [2usize, 3, 4] {
        for seed in 0..20u64 {
            let (model, data) = running_instance(8, 100 * d as u64 + seed, d)?;
            let gi = regularized_inverse(model.gamma(), 0.0).map_err(e)?;
            let mut problem = MrmfProblem::new(FidelityStructure::running_example(), data, gi)
                .and_then(|p| p.with_lambdas(vec![0.1 * seed as f64, 0.05]))
                .map_err(e)?;
            if seed % 3 == 0 {
                problem = problem.with_fixed(1, model.means()[1].clone()).map_err(e)?;
            }
            let mut r = rng(8, 10_000 + 100 * d as u64 + seed);
            let roots: Vec<SymMatrix> =
                problem.free_fidelities().iter().map(|_| random_spd(d, 0.7, &mut r).to_sym()).collect();
            let a = mrmf_gradient_analytic(&problem, &roots).map_err(e)?;
            let f = mrmf_gradient_fd(&problem, &roots, 1e-6).map_err(e)?;
            let num: f64 = a.iter().zip(&f).map(|(x, y)| (x.matrix() - y.matrix()).norm_squared()).sum();
            let den: f64 = f.iter().map(|y| y.matrix().norm_squared()).sum();
            worst = worst.max(num.sqrt() / den.sqrt().max(1e-8));
        }
    }
    bounds(&[("relative gradient error", worst, 1e-5)])
}

fn criterion_9() -> Outcome {
    let mut worst = [0.0f64; 3];
    let mut r = rng(9, 0);
    for d in [2usize, 3, 4, 6] {
        for _ in 0..50 {
            let g0 = random_spd(d, 1.0, &mut r);
            let g1 = random_spd(d, 1.0, &mut r);
            let m0 = standard_normal_vector(d, &mut r);
            let m1 = standard_normal_vector(d, &mut r);
            let (tm, dm) = similarity_dissimilarity(&g0, &g1, &m0, &m1).map_err(e)?;
            worst[0] = worst[0].max(rel(gmml_metric(&tm, &dm, 0.0).map_err(e)?.matrix(), &tm.inverse_matrix()));
            worst[1] = worst[1].max(rel(gmml_metric(&tm, &dm, 1.0).map_err(e)?.matrix(), dm.matrix()));
            for t in [0.1, rand::Rng::random::<f64>(&mut r)] {
                let a = gmml_metric(&tm, &dm, t).map_err(e)?;
                let b = gmml_geodesic(&tm, &dm, t).map_err(e)?;
                worst[2] = worst[2].max(rel(a.matrix(), b.matrix()));
            }
        }
    }
    let closed_form = bounds(&[("t=0", worst[0], 1e-10), ("t=1", worst[1], 1e-10), ("geodesic form", worst[2], 1e-10)]);

    let config = ExperimentConfig { kind: ExperimentKind::MetricLearning, trials: 200, ..ExperimentConfig::default() };
    let out = MetricExperiment::new(config.clone()).map_err(e)?.run().map_err(e)?;
    let mut ordered = true;
    let mut notes = Vec::new();
    for &b in &config.budgets {
        let frob = |est: &str| {
            let v: Vec<f64> = out
                .records
                .iter()
                .filter(|r| r.budget == b && r.estimator == est)
                .map(|r| if r.is_failed() { f64::INFINITY } else { r.se_frobenius })
                .collect();
            median(&v)
        };
        let (m, h) = (frob("mrmf"), frob("hf"));
        ordered &= m < h;
        notes.push(format!("B={b}: MRMF {m:.2e} vs HF {h:.2e}"));
    }
    let pipeline = format!("median Frobenius SE of Â: {}", notes.join(", "));
    match closed_form {
        Ok(t) if ordered => Ok(format!("{t}; {pipeline}")),
        Ok(t) | Err(t) => Err(format!("{t}; {pipeline}")),
    }
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let mut matched = Vec::new();
    for kind in [ExperimentKind::SimpleGaussian, ExperimentKind::MetricLearning] {
        let config = ExperimentConfig {
            kind,
            trials: 40,
            budgets: vec![6.0, 56.0],
            pilot: 200,
            tuning_trials: 8,
            ..ExperimentConfig::default()
        };
        let name = format!("{kind:?}");
        let cfg_path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&cfg_path, config.to_toml()).map_err(e)?;
        let mut outputs = Vec::new();
        for (run, threads) in [(0, "1"), (1, "2")] {
            let out = dir.path().join(format!("{name}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mfcov"))
                .arg("run")
                .arg(&cfg_path)
                .arg("--output-dir")
                .arg(&out)
                .env("MFCOV_THREADS", threads)
                .stdout(std::process::Stdio::null())
                .status()
                .map_err(e)?;
            if !status.success() {
                return Err(format!("{name} run {run} exited with {status}"));
            }
            outputs.push(std::fs::read(out.join("trials.csv")).map_err(e)?);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{name}: trials.csv differs between runs"));
        }
        matched.push(format!("{name} ({} bytes)", outputs[0].len()));
    }
    Ok(format!("identical trials.csv across runs with 1 and 2 threads: {}", matched.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome, Duration); 10] = [
        (1, criterion_1, Duration::from_secs(10)),
        (2, criterion_2, Duration::from_secs(5)),
        (3, criterion_3, Duration::from_secs(120)),
        (4, criterion_4, Duration::from_secs(180)),
        (5, criterion_5, Duration::from_secs(600)),
        (6, criterion_6, Duration::from_secs(300)),
        (7, criterion_7, Duration::from_secs(1800)),
        (8, criterion_8, Duration::from_secs(60)),
        (9, criterion_9, Duration::from_secs(900)),
        (10, criterion_10, Duration::from_secs(600)),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut all = true;
    for (n, run, limit) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over time limit")),
            Err(d) => (false, d),
        };
        all &= pass;
        println!(
            "{} criterion {n}: {detail} [{:.1} s, limit {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
