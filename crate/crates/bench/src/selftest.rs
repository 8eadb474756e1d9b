//! Fast invariant checks over every module of the core library, run by the
//! `selftest` command and by the `property-suite` experiment kind.

use mfcov::estimators::{emf, lemf, mrmf_gradient_analytic, mrmf_gradient_fd, precondition, Gain, MrmfProblem};
use mfcov::metric::{gmml_geodesic, gmml_metric, mean_relative_error, similarity_dissimilarity, MetricMatrix};
use mfcov::models::{random_spd, random_sym, running_example_model, BudgetAllocation, GaussianCoupledModel};
use mfcov::rng::{Purpose, SeedTree, StreamRng};
use mfcov::spd::{congruence, geodesic, intrinsic_distance, riemannian_exp, riemannian_log};
use mfcov::stats::frechet_mean;
use mfcov::tangent::{build_congruence_operator, flat_to_sym, regularized_inverse, sym_to_flat};
use mfcov::{FidelityStructure, SpdMatrix, TangentOperator};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&mut StreamRng) -> Result<String, String>;

const CHECKS: [(&str, Check); 10] = [
    ("spd.exp_log_round_trip", exp_log_round_trip),
    ("spd.geodesic_endpoints", geodesic_endpoints),
    ("spd.affine_invariance", affine_invariance),
    ("tangent.flatten_and_congruence", flatten_and_congruence),
    ("stats.frechet_mean_of_pair", frechet_mean_of_pair),
    ("estimators.control_variates", control_variates),
    ("estimators.gradient", gradient),
    ("estimators.preconditioning", preconditioning),
    ("models.budget_and_coupling", budget_and_coupling),
    ("metric.gmml_and_mre", gmml_and_mre),
];

/// Run every check with streams derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let tree = SeedTree::new(seed);
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let outcome = check(&mut tree.stream(Purpose::Misc, 0, i as u64));
            let passed = outcome.is_ok();
            CheckResult { name, passed, detail: outcome.unwrap_or_else(|e| e) }
        })
        .collect()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// `Ok` with the observed worst value when it is within `tol`.
fn within(what: &str, worst: f64, tol: f64) -> Result<String, String> {
    let msg = format!("{what}: worst {worst:.3e}, tolerance {tol:.0e}");
    if worst <= tol {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn err(e: mfcov::Error) -> String {
    e.to_string()
}

fn exp_log_round_trip(rng: &mut StreamRng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for d in [2, 3, 4, 6] {
        for _ in 0..20 {
            let a = random_spd(d, 1.0, rng);
            let b = random_spd(d, 1.0, rng);
            let back = riemannian_exp(&a, &riemannian_log(&a, &b).map_err(err)?).map_err(err)?;
            worst = worst.max(rel(back.matrix(), b.matrix()));
        }
    }
    within("relative error of exp(log(B))", worst, 1e-10)
}

fn geodesic_endpoints(rng: &mut StreamRng) -> Result<String, String> {
    let (mut ends, mut speed): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let a = random_spd(4, 1.0, rng);
        let b = random_spd(4, 1.0, rng);
        let g0 = geodesic(&a, &b, 0.0).map_err(err)?;
        let g1 = geodesic(&a, &b, 1.0).map_err(err)?;
        ends = ends.max(rel(g0.matrix(), a.matrix())).max(rel(g1.matrix(), b.matrix()));
        let full = intrinsic_distance(&a, &b).map_err(err)?;
        let part = intrinsic_distance(&a, &geodesic(&a, &b, 0.3).map_err(err)?).map_err(err)?;
        speed = speed.max((part - 0.3 * full).abs() / full.max(1.0));
    }
    let msg = format!("endpoint error {ends:.3e} (tolerance 1e-12), speed defect {speed:.3e} (tolerance 1e-8)");
    if ends <= 1e-12 && speed <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn affine_invariance(rng: &mut StreamRng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = random_spd(3, 1.0, rng);
        let b = random_spd(3, 1.0, rng);
        let y = random_spd(3, 1.0, rng);
        let before = intrinsic_distance(&a, &b).map_err(err)?;
        let after =
            intrinsic_distance(&congruence(&y, &a).map_err(err)?, &congruence(&y, &b).map_err(err)?).map_err(err)?;
        worst = worst.max((before - after).abs() / before.max(1.0));
    }
    within("relative change of distance under congruence", worst, 1e-10)
}

fn flatten_and_congruence(rng: &mut StreamRng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_sym(4, 1.0, rng);
        let back = flat_to_sym(&sym_to_flat(&x), 4).map_err(err)?;
        worst = worst.max(rel(back.matrix(), x.matrix()));
        // The flat inner product matches the Frobenius one.
        let y = random_sym(4, 1.0, rng);
        let dot = sym_to_flat(&x).dot(&sym_to_flat(&y));
        worst = worst.max((dot - x.dot(&y)).abs() / x.frobenius_norm().max(1.0) / y.frobenius_norm().max(1.0));
    }
    let ys: Vec<SpdMatrix> = (0..3).map(|_| random_spd(3, 1.0, rng)).collect();
    let inv: Vec<SpdMatrix> = ys.iter().map(SpdMatrix::inverse).collect();
    let g = build_congruence_operator(&ys).map_err(err)?;
    let h = build_congruence_operator(&inv).map_err(err)?;
    let id = TangentOperator::identity(3, 3);
    worst = worst.max(rel(g.compose(&h).map_err(err)?.matrix(), id.matrix()));
    within("flattening and congruence-operator inverse", worst, 1e-10)
}

fn frechet_mean_of_pair(rng: &mut StreamRng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let a = random_spd(3, 1.0, rng);
        let b = random_spd(3, 1.0, rng);
        let mean = frechet_mean(&[a.clone(), b.clone()], 1e-12, 200).map_err(err)?;
        let mid = geodesic(&a, &b, 0.5).map_err(err)?;
        worst = worst.max(rel(mean.matrix(), mid.matrix()));
    }
    within("Fréchet mean of two points vs geodesic midpoint", worst, 1e-9)
}

fn control_variates(rng: &mut StreamRng) -> Result<String, String> {
    let h = random_spd(3, 1.0, rng);
    let l = random_spd(3, 1.0, rng);
    let b = random_spd(3, 1.0, rng);
    let e = emf(&h.to_sym(), &l.to_sym(), &b.to_sym(), &Gain::Scalar(0.0)).map_err(err)?;
    let mut worst = rel(e.matrix.matrix(), h.matrix());
    // With equal low-fidelity inputs the correction vanishes for any gain.
    let e = emf(&h.to_sym(), &l.to_sym(), &l.to_sym(), &Gain::Scalar(0.7)).map_err(err)?;
    worst = worst.max(rel(e.matrix.matrix(), h.matrix()));
    let le = lemf(&h, &l, &l, &Gain::Scalar(0.7)).map_err(err)?;
    worst = worst.max(rel(le.matrix(), h.matrix()));
    within("control variates with a vanishing correction", worst, 1e-12)
}

fn running_problem(rng: &mut StreamRng, d: usize) -> Result<MrmfProblem, String> {
    let model = running_example_model(d, 0.15, 0.8, rng).map_err(err)?;
    let data = model.draw(rng).map_err(err)?;
    let gi = regularized_inverse(model.gamma(), 0.0).map_err(err)?;
    MrmfProblem::new(FidelityStructure::running_example(), data, gi)
        .and_then(|p| p.with_lambdas(vec![0.2, 0.1]))
        .map_err(err)
}

fn gradient(rng: &mut StreamRng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for d in [2, 3] {
        let problem = running_problem(rng, d)?;
        let roots: Vec<_> = (0..2).map(|_| random_spd(d, 0.5, rng).to_sym()).collect();
        let a = mrmf_gradient_analytic(&problem, &roots).map_err(err)?;
        let f = mrmf_gradient_fd(&problem, &roots, 1e-5).map_err(err)?;
        let num: f64 = a.iter().zip(&f).map(|(x, y)| (x.matrix() - y.matrix()).norm_squared()).sum();
        let den: f64 = f.iter().map(|y| y.matrix().norm_squared()).sum();
        worst = worst.max((num / den.max(1e-300)).sqrt());
    }
    within("analytic vs central-difference gradient", worst, 1e-5)
}

fn preconditioning(rng: &mut StreamRng) -> Result<String, String> {
    let problem = running_problem(rng, 3)?;
    let (pre_problem, pre) = precondition(&problem).map_err(err)?;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let cand = vec![random_spd(3, 1.0, rng), random_spd(3, 1.0, rng)];
        let f = problem.objective(&cand).map_err(err)?.total;
        let g = pre_problem.objective(&pre.to_transformed(&cand).map_err(err)?).map_err(err)?.total;
        worst = worst.max((f - g).abs() / f.max(1.0));
    }
    within("objective change under whitening", worst, 1e-10)
}

fn budget_and_coupling(rng: &mut StreamRng) -> Result<String, String> {
    for &b in &[6.0, 56.0, 106.0, 156.0, 206.0] {
        let a = BudgetAllocation::from_fraction(1.0, 0.01, b, 0.9).map_err(err)?;
        let cost = a.m1 as f64 * 1.01 + a.m2 as f64 * 0.01;
        if (a.cost() - cost).abs() > 1e-12 || a.cost() > b + 1e-9 {
            return Err(format!("budget {b}: cost {} exceeds budget or misreports", a.cost()));
        }
    }
    let model = GaussianCoupledModel::new(random_spd(3, 0.5, rng), 0.7).map_err(err)?;
    let n = 20_000;
    let mut cross = DMatrix::zeros(3, 3);
    for _ in 0..n {
        let (h, l) = model.draw_pair(rng);
        cross += &h * l.transpose();
    }
    cross /= n as f64;
    // Cov(X_hi, X_lo) = Σ_hi for additive independent noise.
    within("budget accounting and Monte Carlo cross-covariance", rel(&cross, model.sigma_hi().matrix()), 0.08)
}

fn gmml_and_mre(rng: &mut StreamRng) -> Result<String, String> {
    let g0 = random_spd(3, 1.0, rng);
    let g1 = random_spd(3, 1.0, rng);
    let m0 = DVector::from_vec(vec![1.0, 0.0, -0.5]);
    let m1 = DVector::zeros(3);
    let (t, d) = similarity_dissimilarity(&g0, &g1, &m0, &m1).map_err(err)?;
    let mut worst = rel(gmml_metric(&t, &d, 0.0).map_err(err)?.matrix(), &t.inverse_matrix());
    worst = worst.max(rel(gmml_metric(&t, &d, 1.0).map_err(err)?.matrix(), d.matrix()));
    let a = gmml_metric(&t, &d, 0.1).map_err(err)?;
    worst = worst.max(rel(a.matrix(), gmml_geodesic(&t, &d, 0.1).map_err(err)?.matrix()));
    let reference = MetricMatrix::new(a.clone(), 0.1, "reference");
    let scaled = MetricMatrix::new(SpdMatrix::new(a.matrix() * 1.44).map_err(err)?, 0.1, "scaled");
    let points: Vec<_> = (0..50).map(|_| DVector::from_fn(3, |_, _| rand::Rng::random::<f64>(rng) - 0.5)).collect();
    let mre = mean_relative_error(&scaled, &reference, &points).map_err(err)?;
    worst = worst.max((mre - 0.2).abs());
    within("GMML endpoints, geodesic form and MRE scaling", worst, 1e-10)
}
