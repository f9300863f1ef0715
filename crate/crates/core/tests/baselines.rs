use nalgebra::{DMatrix, DVector};
use steinflow::baselines::*;
use steinflow::kernels::{KernelConfig, PrecondRank, Preconditioner};
use steinflow::models::{default_grid, synthesize_data, DarcyModel, LinearGaussianModel, MeasurementSetup, NullModel, DEFAULT_DELTA};
use steinflow::stats::variance_function;
use steinflow::svgd::{build_preconditioners, mpo_direction};
use steinflow::{Field, GaussianPrior, Mesh};

fn prior(ng: usize) -> GaussianPrior<f64> {
    let mesh = Mesh::new(ng).unwrap();
    GaussianPrior::new(&mesh, 0.5, &Field::zeros(&mesh)).unwrap()
}

fn linear(prior: &GaussianPrior<f64>, noise: f64) -> LinearGaussianModel<f64> {
    let mesh = prior.mesh();
    let truth = Field::from_fn(mesh, |x, y| (2.0 * x).sin() * (3.0 * y).cos()).unwrap();
    let setup = MeasurementSetup::new(mesh, default_grid(3), DEFAULT_DELTA, 1.0, DVector::zeros(9)).unwrap();
    let syn = synthesize_data(setup.observe(truth.as_vector()), noise, 2).unwrap();
    LinearGaussianModel::from_measurement(&setup.with_data(syn.sigma, syn.noisy).unwrap()).unwrap()
}

fn darcy(prior: &GaussianPrior<f64>) -> DarcyModel<f64> {
    let mesh = prior.mesh();
    let n = mesh.num_nodes();
    let meas = MeasurementSetup::new(mesh, default_grid(5), DEFAULT_DELTA, 1.0, DVector::zeros(25)).unwrap();
    let base = DarcyModel::new(mesh, &DVector::from_element(n, 1.0), meas).unwrap();
    let truth = DVector::from_iterator(n, mesh.nodes().iter().map(|p| (2.0 * p[0]).sin() * (3.0 * p[1]).cos()));
    let syn = synthesize_data(base.observe(&base.solve_forward(&truth).unwrap()), 0.01, 1).unwrap();
    let meas = base.measurement().with_data(syn.sigma, syn.noisy).unwrap();
    base.with_measurement(meas).unwrap()
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn pcn_accepts_everything_without_data() {
    let p = prior(4);
    let cfg = PcnConfig { beta: 0.3, iters: 500, burn_in: 100, thin: 7, seed: 1 };
    let st = pcn(&NullModel::new(p.dim()), &p, &cfg, None).unwrap();
    assert_eq!(st.acceptance_rate(), 1.0);
    assert_eq!(st.thinned().len(), (500 - 100) / 7);
    assert_eq!(st.moments().count(), 400);
}

#[test]
fn pcn_preserves_the_prior() {
    let p = prior(4);
    let cfg = PcnConfig { beta: 0.5, iters: 60_000, burn_in: 0, thin: 1, seed: 3 };
    let st = pcn(&NullModel::new(p.dim()), &p, &cfg, None).unwrap();
    let coeffs: Vec<DVector<f64>> = st.thinned().iter().map(|u| p.to_spectral(u)).collect();
    let var = variance_function(&coeffs).unwrap();
    for k in 0..5 {
        let expected = 1.0 / p.eigvals()[k].powi(2);
        assert!((var[k] / expected - 1.0).abs() < 0.1, "mode {k}: {} vs {expected}", var[k]);
    }
}

#[test]
fn pcn_recovers_linear_gaussian_posterior() {
    let p = prior(6);
    let model = linear(&p, 0.5);
    let (mean, cov) = model.analytic_posterior(&p).unwrap();
    let cfg = PcnConfig { beta: 0.2, iters: 100_000, burn_in: 5_000, thin: 50, seed: 4 };
    let st = pcn(&model, &p, &cfg, Some(&mean)).unwrap();
    assert!((0.1..0.9).contains(&st.acceptance_rate()));
    assert!(rel(&st.variance(), &cov.diagonal()) < 0.1);
    // streaming mean stays within a few CLT widths of the posterior mean
    let sd = cov.diagonal().map(f64::sqrt);
    let err = (st.mean() - &mean).component_div(&sd);
    assert!(err.amax() < 1.0);
}

#[test]
fn pcn_streaming_variance_matches_two_pass() {
    let p = prior(4);
    let model = linear(&p, 0.3);
    let cfg = PcnConfig { beta: 0.3, iters: 3_000, burn_in: 1_000, thin: 1, seed: 5 };
    let st = pcn(&model, &p, &cfg, None).unwrap();
    assert!(st.variance().iter().all(|&v| v >= 0.0));
    assert!(rel(&st.variance(), &variance_function(st.thinned()).unwrap()) < 1e-10);
}

#[test]
fn pcn_rejects_bad_settings() {
    let p = prior(3);
    let m = NullModel::new(p.dim());
    for beta in [0.0, 1.5, f64::NAN] {
        assert!(pcn(&m, &p, &PcnConfig { beta, iters: 10, burn_in: 0, thin: 1, seed: 0 }, None).is_err());
    }
    assert!(pcn(&m, &p, &PcnConfig { beta: 0.5, iters: 10, burn_in: 0, thin: 0, seed: 0 }, None).is_err());
    assert!(pcn(&m, &p, &PcnConfig { beta: 0.5, iters: 10, burn_in: 11, thin: 1, seed: 0 }, None).is_err());
}

#[test]
fn newton_cg_solves_linear_problem_exactly() {
    let p = prior(6);
    let model = linear(&p, 0.01);
    let (mean, _) = model.analytic_posterior(&p).unwrap();
    let cfg = MapConfig { max_newton: 3, cg_rule: CgRule::Fixed(1e-13), ..MapConfig::default() };
    let out = map_newton_cg(&model, &p, &DVector::zeros(p.dim()), &cfg).unwrap();
    assert!(rel(&out.point, &mean) < 1e-8);
    assert!(out.iterations() <= 3);
    assert!(!out.line_search_failed);
}

#[test]
fn newton_cg_reduces_darcy_stationarity() {
    let p = prior(16);
    let model = darcy(&p);
    let out = map_newton_cg(&model, &p, &DVector::zeros(p.dim()), &MapConfig::default()).unwrap();
    assert!(out.iterations() <= 10);
    let g = &out.grad_norm;
    assert!(g.last().unwrap() * 1e4 <= g[0], "{g:?}");
    assert!(out.objective.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn newton_cg_full_hessian_also_converges() {
    let p = prior(8);
    let model = darcy(&p);
    let cfg = MapConfig { full_hessian: true, ..MapConfig::default() };
    let out = map_newton_cg(&model, &p, &DVector::zeros(p.dim()), &cfg).unwrap();
    assert!(out.grad_norm.last().unwrap() < &out.grad_norm[0]);
}

#[test]
fn newton_direction_matches_single_particle_mpo() {
    let p = prior(8);
    let model = darcy(&p);
    let u = p.sample(6, 1).remove(0).into_vector() * 0.5;
    let precs = build_preconditioners(&model, &p, std::slice::from_ref(&u), PrecondRank::Dense).unwrap();
    let mpo = mpo_direction(std::slice::from_ref(&u), &model, &p, &precs, 0.2, &KernelConfig::default()).unwrap();
    let newton = newton_direction(&model, &p, &u, 1e-13, false).unwrap();
    assert!(rel(&newton, &mpo.fields[0]) < 1e-8);
}

#[test]
fn gradient_descent_solves_single_mode_problem() {
    let mesh = Mesh::new(2).unwrap();
    let mean = Field::from_fn(&mesh, |_, _| 0.3).unwrap();
    let p = GaussianPrior::new(&mesh, 0.5, &mean).unwrap();
    let out = map_gradient_descent(&NullModel::new(p.dim()), &p, &DVector::zeros(p.dim()), 500).unwrap();
    assert!(rel(&out.point, p.mean()) < 1e-6);
}

#[test]
fn gradient_descent_is_monotone_and_lags_newton() {
    let p = prior(8);
    let model = darcy(&p);
    let u0 = DVector::zeros(p.dim());
    let gd = map_gradient_descent(&model, &p, &u0, 100).unwrap();
    assert!(gd.objective.windows(2).all(|w| w[1] <= w[0]));
    assert!(gd.grad_norm.last().unwrap() < &gd.grad_norm[0]);
    let nt = map_newton_cg(&model, &p, &u0, &MapConfig::default()).unwrap();
    assert!(nt.final_objective() < gd.final_objective());
}

#[test]
fn map_rejects_bad_input() {
    let p = prior(3);
    let m = NullModel::new(p.dim());
    assert!(map_newton_cg(&m, &p, &DVector::zeros(3), &MapConfig::default()).is_err());
    assert!(map_gradient_descent(&m, &p, &DVector::from_element(p.dim(), f64::NAN), 5).is_err());
    let cfg = MapConfig { cg_rule: CgRule::Fixed(1.5), ..MapConfig::default() };
    assert!(map_newton_cg(&m, &p, &DVector::zeros(p.dim()), &cfg).is_err());
}

#[test]
fn laplace_samples_center_on_map_point() {
    let p = prior(5);
    let model = darcy(&p);
    let map = map_newton_cg(&model, &p, &DVector::zeros(p.dim()), &MapConfig::default()).unwrap().point;
    let prec = Preconditioner::build(&model, &p, &map, PrecondRank::Dense).unwrap();
    let draws = laplace_sample(&p, &map, &prec, 2000, 7).unwrap();
    let coeffs: Vec<DVector<f64>> = draws.iter().map(|u| p.to_spectral(&(u - &map))).collect();
    let n = coeffs.len() as f64;
    let mean = coeffs.iter().fold(DVector::zeros(p.dim()), |a, c| a + c) / n;
    let cov = prec.power_matrix(-1.0);
    for k in 0..p.dim() {
        assert!(mean[k].abs() < 4.0 * (cov[(k, k)] / n).sqrt());
    }
    // variance along the softest direction of B is 1 / theta_min
    let (k, &theta_min) = prec.theta().iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let dir = prec.basis().column(k).into_owned();
    let q = coeffs.iter().map(|c| c.dot(&dir).powi(2)).sum::<f64>() / n;
    assert!((q * theta_min - 1.0).abs() < 0.1);
}

#[test]
fn laplace_with_prior_preconditioner_is_shifted_prior() {
    let p = prior(5);
    let center = DVector::from_element(p.dim(), 0.7);
    let prec = Preconditioner::from_prior(&p, &center);
    let draws = laplace_sample(&p, &center, &prec, 4000, 8).unwrap();
    let coeffs: Vec<DVector<f64>> = draws.iter().map(|u| p.to_spectral(&(u - &center))).collect();
    let second = coeffs.iter().fold(DVector::zeros(p.dim()), |a, c| a + c.component_mul(c)) / coeffs.len() as f64;
    for k in 0..10 {
        assert!((second[k] * p.eigvals()[k].powi(2) - 1.0).abs() < 0.1);
    }
    let again = laplace_sample(&p, &center, &prec, 3, 8).unwrap();
    assert_eq!(&again[..], &draws[..3]);
    let _: DMatrix<f64> = prec.power_matrix(1.0);
}
