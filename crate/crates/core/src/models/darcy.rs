use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::fem::{assemble_load, assemble_stiffness, local_stiffness, DirichletSolver, Mesh};
use crate::models::{ForwardModel, HessianAction, MeasurementSetup};
use crate::Real;

/// Log-permeability inversion for `-div(e^u grad w) = f`, `w = 0` on the
/// boundary, observed through mollified point functionals.
#[derive(Debug, Clone)]
pub struct DarcyModel<T: Real> {
    mesh: Mesh,
    load: DVector<T>,
    measurement: MeasurementSetup<T>,
    local: Vec<[[T; 3]; 3]>,
    adjoint_sign: T,
}

/// Forward solution at a fixed `u`, reused by derivative computations.
#[derive(Debug, Clone)]
pub struct DarcyLinearization<T: Real> {
    solver: DirichletSolver<T>,
    kappa: Vec<T>,
    state: DVector<T>,
    residual: DVector<T>,
    potential: T,
}

impl<T: Real> DarcyLinearization<T> {
    pub fn state(&self) -> &DVector<T> {
        &self.state
    }

    pub fn potential(&self) -> T {
        self.potential
    }

    /// `observe(w) - d`.
    pub fn residual(&self) -> &DVector<T> {
        &self.residual
    }
}

impl<T: Real> DarcyModel<T> {
    /// `source` holds nodal values of `f`.
    pub fn new(mesh: &Mesh, source: &DVector<T>, measurement: MeasurementSetup<T>) -> Result<Self> {
        let load = assemble_load(mesh, source)?;
        if measurement.operator().ncols() != mesh.num_nodes() {
            return invalid("measurement setup built on a different mesh");
        }
        let local = (0..mesh.elements().len()).map(|e| local_stiffness(mesh, e)).collect();
        Ok(Self {
            mesh: mesh.clone(),
            load,
            measurement,
            local,
            adjoint_sign: T::one(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn measurement(&self) -> &MeasurementSetup<T> {
        &self.measurement
    }

    pub fn with_measurement(&self, measurement: MeasurementSetup<T>) -> Result<Self> {
        if measurement.operator().ncols() != self.mesh.num_nodes() {
            return invalid("measurement setup built on a different mesh");
        }
        Ok(Self {
            measurement,
            ..self.clone()
        })
    }

    /// Copy whose adjoint source has the wrong sign; gradients become
    /// incorrect. Negative control for derivative checks.
    pub fn with_perturbed_adjoint_sign(&self) -> Self {
        Self {
            adjoint_sign: -self.adjoint_sign,
            ..self.clone()
        }
    }

    fn check(&self, u: &DVector<T>) -> Result<()> {
        if u.len() != self.mesh.num_nodes() {
            return invalid(format!("field has {} entries, expected {}", u.len(), self.mesh.num_nodes()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite log-permeability");
        }
        Ok(())
    }

    /// State `w` solving the forward problem.
    pub fn solve_forward(&self, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.linearize(u)?.state)
    }

    pub fn observe(&self, w: &DVector<T>) -> DVector<T> {
        self.measurement.observe(w)
    }

    pub fn linearize(&self, u: &DVector<T>) -> Result<DarcyLinearization<T>> {
        self.check(u)?;
        let stiffness = assemble_stiffness(&self.mesh, u)?;
        let solver = DirichletSolver::new(&stiffness, &self.mesh)?;
        let third = T::lit(1.0 / 3.0);
        let kappa = self
            .mesh
            .elements()
            .iter()
            .map(|el| ((u[el[0]] + u[el[1]] + u[el[2]]) * third).exp())
            .collect();
        let state = solver.solve(&self.load)?;
        let residual = self.observe(&state) - self.measurement.data();
        let s2 = self.measurement.sigma() * self.measurement.sigma();
        let potential = residual.norm_squared() / (s2 + s2);
        Ok(DarcyLinearization {
            solver,
            kappa,
            state,
            residual,
            potential,
        })
    }

    /// `sum_e weight_e a_e^T Khat_e b_e` scattered to the nodes of `e`.
    fn scatter_pair(&self, weight: impl Fn(usize) -> T, a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.mesh.num_nodes());
        for (e, el) in self.mesh.elements().iter().enumerate() {
            let k = &self.local[e];
            let mut q = T::zero();
            for i in 0..3 {
                for j in 0..3 {
                    q += a[el[i]] * k[i][j] * b[el[j]];
                }
            }
            let v = weight(e) * q;
            for &node in el {
                out[node] += v;
            }
        }
        out
    }

    /// `K_uhat w = sum_e kappa_e mean_e(uhat) Khat_e w_e`.
    fn coefficient_action(&self, lin: &DarcyLinearization<T>, uhat: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.mesh.num_nodes());
        let third = T::lit(1.0 / 3.0);
        for (e, el) in self.mesh.elements().iter().enumerate() {
            let c = lin.kappa[e] * (uhat[el[0]] + uhat[el[1]] + uhat[el[2]]) * third;
            let k = &self.local[e];
            for i in 0..3 {
                let mut s = T::zero();
                for j in 0..3 {
                    s += k[i][j] * w[el[j]];
                }
                out[el[i]] += c * s;
            }
        }
        out
    }

    fn sigma2(&self) -> T {
        self.measurement.sigma() * self.measurement.sigma()
    }

    /// Adjoint state `p` with `K p = -sigma^-2 L^T (L w - d)`.
    pub fn adjoint(&self, lin: &DarcyLinearization<T>) -> Result<DVector<T>> {
        let rhs = self.measurement.operator().tr_mul(&lin.residual) * (-self.adjoint_sign / self.sigma2());
        lin.solver.solve(&rhs)
    }

    pub fn gradient_at(&self, lin: &DarcyLinearization<T>) -> Result<DVector<T>> {
        let p = self.adjoint(lin)?;
        let third = T::lit(1.0 / 3.0);
        Ok(self.scatter_pair(|e| lin.kappa[e] * third, &p, &lin.state))
    }

    /// Incremental state `what = -K^-1 K_uhat w`.
    fn incremental_state(&self, lin: &DarcyLinearization<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        let rhs = -self.coefficient_action(lin, uhat, &lin.state);
        lin.solver.solve(&rhs)
    }

    pub fn gn_action_at(&self, lin: &DarcyLinearization<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        self.check(uhat)?;
        let what = self.incremental_state(lin, uhat)?;
        let l = self.measurement.operator();
        let rhs = l.tr_mul(&(l * &what)) * (-T::one() / self.sigma2());
        let ptilde = lin.solver.solve(&rhs)?;
        let third = T::lit(1.0 / 3.0);
        Ok(self.scatter_pair(|e| lin.kappa[e] * third, &ptilde, &lin.state))
    }

    pub fn full_action_at(&self, lin: &DarcyLinearization<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        self.check(uhat)?;
        let third = T::lit(1.0 / 3.0);
        let p = self.adjoint(lin)?;
        let what = self.incremental_state(lin, uhat)?;
        let l = self.measurement.operator();
        let rhs = -self.coefficient_action(lin, uhat, &p) - l.tr_mul(&(l * &what)) / self.sigma2();
        let phat = lin.solver.solve(&rhs)?;
        let el = self.mesh.elements();
        let ubar = |e: usize| (uhat[el[e][0]] + uhat[el[e][1]] + uhat[el[e][2]]) * third;
        let coeff_term = self.scatter_pair(|e| lin.kappa[e] * ubar(e) * third, &p, &lin.state);
        let adjoint_term = self.scatter_pair(|e| lin.kappa[e] * third, &phat, &lin.state);
        let state_term = self.scatter_pair(|e| lin.kappa[e] * third, &p, &what);
        Ok(coeff_term + adjoint_term + state_term)
    }

    pub fn weighted_jacobian_at(&self, lin: &DarcyLinearization<T>) -> Result<DMatrix<T>> {
        let l = self.measurement.operator();
        let nd = l.nrows();
        let mut jac = DMatrix::zeros(nd, self.mesh.num_nodes());
        let scale = T::lit(1.0 / 3.0) / self.measurement.sigma();
        for j in 0..nd {
            let q = lin.solver.solve(&(-l.row(j).transpose()))?;
            let row = self.scatter_pair(|e| lin.kappa[e] * scale, &q, &lin.state);
            jac.set_row(j, &row.transpose());
        }
        Ok(jac)
    }
}

impl<T: Real> ForwardModel<T> for DarcyModel<T> {
    fn dim(&self) -> usize {
        self.mesh.num_nodes()
    }

    fn potential(&self, u: &DVector<T>) -> Result<T> {
        Ok(self.linearize(u)?.potential)
    }

    fn gradient(&self, u: &DVector<T>) -> Result<(T, DVector<T>)> {
        let lin = self.linearize(u)?;
        Ok((lin.potential, self.gradient_at(&lin)?))
    }

    fn gn_hessian_action(&self, u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        self.gn_action_at(&self.linearize(u)?, uhat)
    }

    fn full_hessian_action(&self, u: &DVector<T>, uhat: &DVector<T>) -> Result<DVector<T>> {
        self.full_action_at(&self.linearize(u)?, uhat)
    }

    fn hessian_at<'a>(&'a self, u: &DVector<T>, full: bool) -> Result<HessianAction<'a, T>> {
        let lin = self.linearize(u)?;
        Ok(Box::new(move |uhat| {
            if full {
                self.full_action_at(&lin, uhat)
            } else {
                self.gn_action_at(&lin, uhat)
            }
        }))
    }

    fn weighted_jacobian(&self, u: &DVector<T>) -> Result<Option<DMatrix<T>>> {
        let lin = self.linearize(u)?;
        Ok(Some(self.weighted_jacobian_at(&lin)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{default_grid, DEFAULT_DELTA};

    fn model(ng: usize, truth: impl Fn(f64, f64) -> f64, sigma: f64) -> DarcyModel<f64> {
        let mesh = Mesh::new(ng).unwrap();
        let n = mesh.num_nodes();
        let m = MeasurementSetup::new(&mesh, default_grid(5), DEFAULT_DELTA, sigma, DVector::zeros(25)).unwrap();
        let base = DarcyModel::new(&mesh, &DVector::from_element(n, 1.0), m).unwrap();
        let ut = DVector::from_iterator(n, mesh.nodes().iter().map(|p| truth(p[0], p[1])));
        let d = base.observe(&base.solve_forward(&ut).unwrap());
        let meas = base.measurement().with_data(sigma, d).unwrap();
        base.with_measurement(meas).unwrap()
    }

    fn field(mesh: &Mesh, k: f64) -> DVector<f64> {
        DVector::from_iterator(
            mesh.num_nodes(),
            mesh.nodes()
                .iter()
                .map(|p| 0.6 * (k * p[0] + 1.3).sin() * (2.0 * p[1] - k).cos() + 0.2 * (k * 3.1 * p[0] * p[1]).sin()),
        )
    }

    #[test]
    fn forward_center_value_and_scaling() {
        let m = model(32, |_, _| 0.0, 1.0);
        let n = m.dim();
        let w = m.solve_forward(&DVector::zeros(n)).unwrap();
        let c = w[m.mesh().nearest_node(0.5, 0.5)];
        assert!((c - 0.0736713).abs() < 2e-3);
        let shifted = m.solve_forward(&DVector::from_element(n, 0.4)).unwrap();
        assert!((shifted - &w * (-0.4f64).exp()).amax() < 1e-12);
    }

    #[test]
    fn zero_source_gives_zero_state() {
        let mesh = Mesh::new(6).unwrap();
        let n = mesh.num_nodes();
        let meas = MeasurementSetup::new(&mesh, default_grid(2), 0.05, 1.0, DVector::zeros(4)).unwrap();
        let m = DarcyModel::new(&mesh, &DVector::zeros(n), meas).unwrap();
        assert_eq!(m.solve_forward(&field(&mesh, 1.0)).unwrap().amax(), 0.0);
    }

    #[test]
    fn perfect_fit_is_stationary() {
        let truth = |x: f64, y: f64| (x - y).sin();
        let m = model(12, truth, 1e-3);
        let mesh = m.mesh().clone();
        let ut = Field64Helper::interp(&mesh, truth);
        let (phi, g) = m.gradient(&ut).unwrap();
        assert!(phi.abs() < 1e-20);
        assert!(g.amax() < 1e-10);
        let u = field(&mesh, 2.0);
        assert!(m.potential(&u).unwrap() > 0.0);
    }

    struct Field64Helper;
    impl Field64Helper {
        fn interp(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
            DVector::from_iterator(mesh.num_nodes(), mesh.nodes().iter().map(|p| f(p[0], p[1])))
        }
    }

    #[test]
    fn misfit_scaling() {
        let m = model(8, |_, _| 0.0, 0.01);
        let u = field(m.mesh(), 1.0);
        let lin = m.linearize(&u).unwrap();
        let w = lin.state().clone();
        let obs = m.observe(&w);
        let r = lin.residual().clone();
        let doubled = m
            .with_measurement(m.measurement().with_data(0.01, &obs - &r * 2.0).unwrap())
            .unwrap();
        let ratio = doubled.potential(&u).unwrap() / lin.potential();
        assert!((ratio - 4.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for ng in [8, 16, 32] {
            let m = model(ng, |x, y| 0.5 * (3.0 * x).sin() * y, 0.005);
            let mesh = m.mesh().clone();
            for k in 0..3 {
                let u = field(&mesh, 1.0 + k as f64);
                let dir = field(&mesh, 4.0 + 1.7 * k as f64);
                let (_, g) = m.gradient(&u).unwrap();
                let h = 1e-5;
                let fd = (m.potential(&(&u + &dir * h)).unwrap() - m.potential(&(&u - &dir * h)).unwrap()) / (2.0 * h);
                let an = g.dot(&dir);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-12), "ng={ng} k={k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn perturbed_adjoint_breaks_gradient() {
        let m = model(8, |x, _| x, 0.01);
        let bad = m.with_perturbed_adjoint_sign();
        let u = field(m.mesh(), 1.0);
        let (_, g) = m.gradient(&u).unwrap();
        let (_, gb) = bad.gradient(&u).unwrap();
        assert!((&g + &gb).amax() < 1e-12 * (1.0 + gb.amax()));
    }

    #[test]
    fn data_shift_shifts_gradient_linearly() {
        let m = model(8, |x, y| x * y, 0.01);
        let u = field(m.mesh(), 1.5);
        let d = m.measurement().data().clone();
        let shift = DVector::from_fn(d.len(), |i, _| 1e-3 * (i as f64).cos());
        let g = |dd: DVector<f64>| {
            let mm = m.with_measurement(m.measurement().with_data(0.01, dd).unwrap()).unwrap();
            mm.gradient(&u).unwrap().1
        };
        let g0 = g(d.clone());
        let g1 = g(&d + &shift);
        let g2 = g(&d + &shift * 2.0);
        assert!(((&g2 - &g1) - (&g1 - &g0)).amax() < 1e-9 * (1.0 + g0.amax()));
    }

    #[test]
    fn gn_hessian_symmetric_psd_and_matches_jacobian() {
        let m = model(8, |x, y| (x + y).cos(), 0.01);
        let mesh = m.mesh().clone();
        let u = field(&mesh, 1.0);
        let lin = m.linearize(&u).unwrap();
        let n = m.dim();
        // dense Jacobian by incremental forward solves, one column per node
        let mut jac = DMatrix::zeros(25, n);
        let mut e = DVector::zeros(n);
        for k in 0..n {
            e[k] = 1.0;
            let what = m.incremental_state(&lin, &e).unwrap();
            jac.set_column(k, &(m.observe(&what) / 0.01));
            e[k] = 0.0;
        }
        let wj = m.weighted_jacobian_at(&lin).unwrap();
        assert!((&wj - &jac).amax() <= 1e-8 * jac.amax());
        let h = jac.tr_mul(&jac);
        for k in 0..4 {
            let a = field(&mesh, 2.0 + k as f64);
            let b = field(&mesh, 7.0 - k as f64);
            let ha = m.gn_action_at(&lin, &a).unwrap();
            let hb = m.gn_action_at(&lin, &b).unwrap();
            let scale = ha.norm() * b.norm();
            assert!((ha.dot(&b) - hb.dot(&a)).abs() <= 1e-8 * scale);
            assert!(ha.dot(&a) >= -1e-10 * scale);
            let dense = &h * &a;
            assert!((&ha - &dense).norm() <= 1e-8 * dense.norm());
        }
        let col = m.gn_hessian_matrix(&u).unwrap();
        assert!((col - &h).amax() <= 1e-8 * h.amax());
    }

    #[test]
    fn full_hessian_matches_second_differences() {
        let m = model(16, |x, y| 0.3 * (x - 2.0 * y).sin(), 0.005);
        let mesh = m.mesh().clone();
        let u = field(&mesh, 1.0);
        let lin = m.linearize(&u).unwrap();
        for k in 0..3 {
            let dir = field(&mesh, 3.0 + 2.1 * k as f64);
            let h = 1e-4;
            let fd = (m.potential(&(&u + &dir * h)).unwrap() - 2.0 * lin.potential()
                + m.potential(&(&u - &dir * h)).unwrap())
                / (h * h);
            let an = m.full_action_at(&lin, &dir).unwrap().dot(&dir);
            assert!((fd - an).abs() <= 1e-3 * an.abs(), "{fd} vs {an}");
            // gradient differences give the full action itself
            let gp = m.gradient(&(&u + &dir * 1e-6)).unwrap().1;
            let gm = m.gradient(&(&u - &dir * 1e-6)).unwrap().1;
            let fdv = (gp - gm) / 2e-6;
            let act = m.full_action_at(&lin, &dir).unwrap();
            assert!((&fdv - &act).norm() <= 1e-5 * act.norm());
        }
        let a = field(&mesh, 2.0);
        let b = field(&mesh, 5.0);
        let ha = m.full_action_at(&lin, &a).unwrap();
        let hb = m.full_action_at(&lin, &b).unwrap();
        assert!((ha.dot(&b) - hb.dot(&a)).abs() <= 1e-8 * ha.norm() * b.norm());
    }

    #[test]
    fn full_equals_gn_at_perfect_fit() {
        let truth = |x: f64, y: f64| x * y - 0.2;
        let m = model(8, truth, 0.01);
        let mesh = m.mesh().clone();
        let u = Field64Helper::interp(&mesh, truth);
        let dir = field(&mesh, 2.0);
        let full = m.full_hessian_action(&u, &dir).unwrap();
        let gn = m.gn_hessian_action(&u, &dir).unwrap();
        assert!((&full - &gn).norm() <= 1e-8 * gn.norm());
    }

    #[test]
    fn growth_along_ray() {
        let m = model(8, |_, _| 0.0, 0.01);
        let mesh = m.mesh().clone();
        let ufix = Field64Helper::interp(&mesh, |x, y| -0.5 - x * y);
        let mut last = (-1.0, -1.0, -1.0);
        for c in [0.0, 1.0, 2.0, 3.0] {
            let u = &ufix * c;
            let (phi, g) = m.gradient(&u).unwrap();
            let hn = m.weighted_jacobian(&u).unwrap().unwrap().singular_values().max().powi(2);
            assert!(phi.is_finite() && g.norm().is_finite() && hn.is_finite());
            assert!(phi >= last.0 && g.norm() >= last.1 && hn > last.2, "c={c}");
            last = (phi, g.norm(), hn);
        }
    }
}
