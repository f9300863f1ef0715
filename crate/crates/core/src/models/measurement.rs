use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::fem::Mesh;
use crate::Real;

/// Default mollifier width.
pub const DEFAULT_DELTA: f64 = 0.02;

// Degree-5 seven-point rule on the reference triangle: barycentric
// coordinates and weights summing to one.
const RULE: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const W1: f64 = 0.132_394_152_788_506;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W2: f64 = 0.125_939_180_544_827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// `k x k` interior grid with points at `((i+1)/(k+1), (j+1)/(k+1))`.
pub fn default_grid(k: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / (k + 1) as f64;
    (0..k)
        .flat_map(|j| (0..k).map(move |i| [(i + 1) as f64 * h, (j + 1) as f64 * h]))
        .collect()
}

/// Mollified point functionals `l_j(w) = int rho_delta(x - x_j) w(x) dx`
/// with Gaussian `rho_delta`, plus noise level and data.
#[derive(Debug, Clone)]
pub struct MeasurementSetup<T: Real> {
    points: Vec<[f64; 2]>,
    delta: f64,
    sigma: T,
    data: DVector<T>,
    /// Row `j` holds the dual vector of `l_j`.
    operator: DMatrix<T>,
}

impl<T: Real> MeasurementSetup<T> {
    pub fn new(mesh: &Mesh, points: Vec<[f64; 2]>, delta: f64, sigma: T, data: DVector<T>) -> Result<Self> {
        if points.is_empty() {
            return invalid("at least one measurement point is required");
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return invalid(format!("mollifier width must be positive, got {delta}"));
        }
        if !(sigma > T::zero() && sigma.is_finite()) {
            return invalid(format!("noise level must be positive, got {sigma}"));
        }
        if data.len() != points.len() {
            return invalid(format!("{} data values for {} points", data.len(), points.len()));
        }
        if let Some(p) = points.iter().find(|p| !(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0)) {
            return invalid(format!("measurement point {p:?} is not strictly interior"));
        }
        let mut operator = DMatrix::zeros(points.len(), mesh.num_nodes());
        for (j, p) in points.iter().enumerate() {
            for (i, v) in mollifier_dual(mesh, *p, delta).into_iter().enumerate() {
                operator[(j, i)] = T::lit(v);
            }
        }
        Ok(Self {
            points,
            delta,
            sigma,
            data,
            operator,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn data(&self) -> &DVector<T> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Observation matrix whose rows are the mollifier dual vectors.
    pub fn operator(&self) -> &DMatrix<T> {
        &self.operator
    }

    pub fn observe(&self, w: &DVector<T>) -> DVector<T> {
        &self.operator * w
    }

    pub fn with_data(&self, sigma: T, data: DVector<T>) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return invalid(format!("noise level must be positive, got {sigma}"));
        }
        if data.len() != self.len() {
            return invalid(format!("{} data values for {} points", data.len(), self.len()));
        }
        Ok(Self {
            sigma,
            data,
            ..self.clone()
        })
    }
}

/// `(int rho(x - x0) phi_i(x) dx)_i` by subdivided quadrature on elements
/// within eight widths of `x0`.
fn mollifier_dual(mesh: &Mesh, x0: [f64; 2], delta: f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_nodes()];
    let reach = 8.0 * delta;
    let cell = 1.0 / mesh.ng() as f64;
    let sub = ((4.0 * cell / delta).ceil() as usize).max(1);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * delta * delta);
    let nodes = mesh.nodes();
    for (e, el) in mesh.elements().iter().enumerate() {
        let v = [nodes[el[0]], nodes[el[1]], nodes[el[2]]];
        let lo = [v.iter().map(|p| p[0]).fold(f64::MAX, f64::min), v.iter().map(|p| p[1]).fold(f64::MAX, f64::min)];
        let hi = [v.iter().map(|p| p[0]).fold(f64::MIN, f64::max), v.iter().map(|p| p[1]).fold(f64::MIN, f64::max)];
        let dx = (lo[0] - x0[0]).max(x0[0] - hi[0]).max(0.0);
        let dy = (lo[1] - x0[1]).max(x0[1] - hi[1]).max(0.0);
        if dx * dx + dy * dy > reach * reach {
            continue;
        }
        let area = mesh.signed_area(e);
        let sub_area = area / (sub * sub) as f64;
        let s = sub as f64;
        let mut acc = [0.0; 3];
        let mut integrate = |corners: [[f64; 2]; 3]| {
            for (bary, wq) in RULE.iter() {
                // reference coordinates (xi, eta) of the quadrature point
                let xi = bary[0] * corners[0][0] + bary[1] * corners[1][0] + bary[2] * corners[2][0];
                let eta = bary[0] * corners[0][1] + bary[1] * corners[1][1] + bary[2] * corners[2][1];
                let phi = [1.0 - xi - eta, xi, eta];
                let x = v[0][0] + xi * (v[1][0] - v[0][0]) + eta * (v[2][0] - v[0][0]);
                let y = v[0][1] + xi * (v[1][1] - v[0][1]) + eta * (v[2][1] - v[0][1]);
                let r2 = (x - x0[0]).powi(2) + (y - x0[1]).powi(2);
                let rho = norm * (-r2 / (2.0 * delta * delta)).exp();
                for a in 0..3 {
                    acc[a] += wq * sub_area * rho * phi[a];
                }
            }
        };
        for i in 0..sub {
            for j in 0..sub - i {
                let (fi, fj) = (i as f64, j as f64);
                integrate([[fi / s, fj / s], [(fi + 1.0) / s, fj / s], [fi / s, (fj + 1.0) / s]]);
                if i + j + 1 < sub {
                    integrate([
                        [(fi + 1.0) / s, fj / s],
                        [(fi + 1.0) / s, (fj + 1.0) / s],
                        [fi / s, (fj + 1.0) / s],
                    ]);
                }
            }
        }
        for a in 0..3 {
            out[el[a]] += acc[a];
        }
    }
    out
}

/// Observations of a known truth together with their noisy version.
#[derive(Debug, Clone)]
pub struct SyntheticData<T> {
    pub clean: DVector<T>,
    pub noisy: DVector<T>,
    pub sigma: T,
}

/// Adds `sigma * N(0, 1)` noise to `clean`, with `sigma = relative_noise *
/// max |clean|`.
pub fn synthesize_data<T: Real>(clean: DVector<T>, relative_noise: f64, seed: u64) -> Result<SyntheticData<T>> {
    if !(relative_noise > 0.0 && relative_noise.is_finite()) {
        return invalid(format!("relative noise must be positive, got {relative_noise}"));
    }
    let peak = clean.amax();
    if !(peak > T::zero()) {
        return invalid("noise-free data vanish identically; the relative noise rule is undefined");
    }
    let sigma = peak * T::lit(relative_noise);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = clean.map(|c| {
        let xi: f64 = StandardNormal.sample(&mut rng);
        c + sigma * T::lit(xi)
    });
    Ok(SyntheticData { clean, noisy, sigma })
}
