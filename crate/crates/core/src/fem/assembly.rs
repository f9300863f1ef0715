use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::fem::{Mesh, SparseSymOperator};
use crate::Real;

/// Gradients of the three barycentric hat functions of element `e`
/// together with its area.
pub fn reference_gradients(mesh: &Mesh, e: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.elements()[e];
    let p = mesh.nodes();
    let (pa, pb, pc) = (p[a], p[b], p[c]);
    let area = mesh.signed_area(e);
    let inv2a = 1.0 / (2.0 * area);
    let g = [
        [(pb[1] - pc[1]) * inv2a, (pc[0] - pb[0]) * inv2a],
        [(pc[1] - pa[1]) * inv2a, (pa[0] - pc[0]) * inv2a],
        [(pa[1] - pb[1]) * inv2a, (pb[0] - pa[0]) * inv2a],
    ];
    (g, area)
}

/// Consistent P1 mass matrix `M_ij = int phi_i phi_j`.
pub fn assemble_mass<T: Real>(mesh: &Mesh) -> SparseSymOperator<T> {
    let mut m = SparseSymOperator::with_mesh_pattern(mesh);
    for (e, el) in mesh.elements().iter().enumerate() {
        let area = T::lit(mesh.signed_area(e));
        let diag = area / T::lit(6.0);
        let off = area / T::lit(12.0);
        for (a, &na) in el.iter().enumerate() {
            for (b, &nb) in el.iter().enumerate() {
                m.add(na, nb, if a == b { diag } else { off });
            }
        }
    }
    m
}

/// Element stiffness scaled by `exp(mean of the nodal log-coefficient)`.
///
/// Returns `int exp(u_h) grad phi_i . grad phi_j` with the coefficient
/// frozen per element at the average of its three nodal values. With
/// Neumann (natural) rows kept, so constants lie in the kernel.
pub fn assemble_stiffness<T: Real>(mesh: &Mesh, logcoeff: &DVector<T>) -> Result<SparseSymOperator<T>> {
    if logcoeff.len() != mesh.num_nodes() {
        return invalid(format!(
            "log-coefficient has {} entries, mesh has {} nodes",
            logcoeff.len(),
            mesh.num_nodes()
        ));
    }
    let mut s = SparseSymOperator::with_mesh_pattern(mesh);
    let third = T::lit(1.0 / 3.0);
    for (e, el) in mesh.elements().iter().enumerate() {
        let kappa = ((logcoeff[el[0]] + logcoeff[el[1]] + logcoeff[el[2]]) * third).exp();
        let local = local_stiffness::<T>(mesh, e);
        for a in 0..3 {
            for b in 0..3 {
                s.add(el[a], el[b], kappa * local[a][b]);
            }
        }
    }
    Ok(s)
}

/// Unit-coefficient element stiffness `area * grad phi_a . grad phi_b`.
pub(crate) fn local_stiffness<T: Real>(mesh: &Mesh, e: usize) -> [[T; 3]; 3] {
    let (g, area) = reference_gradients(mesh, e);
    let mut k = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = T::lit(area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]));
        }
    }
    k
}

/// Load vector `b_i = int f phi_i` for a source given by its nodal
/// interpolant (exact for P1 data: `b = M f_h`).
pub fn assemble_load<T: Real>(mesh: &Mesh, nodal_source: &DVector<T>) -> Result<DVector<T>> {
    if nodal_source.len() != mesh.num_nodes() {
        return invalid("source length does not match mesh");
    }
    Ok(assemble_mass::<T>(mesh).mul_vec(nodal_source))
}

/// Diagonal `M_ii^{1/2}` of the lumped square root of the mass matrix.
pub fn lumped_mass_sqrt<T: Real>(mass: &SparseSymOperator<T>) -> DVector<T> {
    mass.diagonal().map(|d| d.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn mass_sums_to_area() {
        for ng in [2, 5, 12] {
            let mesh = Mesh::new(ng).unwrap();
            let m = assemble_mass::<f64>(&mesh);
            assert!((m.total() - 1.0).abs() < 1e-12);
            assert!(m.is_exactly_symmetric());
        }
    }

    #[test]
    fn element_mass_entries() {
        // single element contribution: diagonal A/6, off-diagonal A/12
        let mesh = Mesh::new(2).unwrap();
        let a = mesh.signed_area(0);
        let mut m = SparseSymOperator::<f64>::with_mesh_pattern(&mesh);
        let el = mesh.elements()[0];
        for (i, &ni) in el.iter().enumerate() {
            for (j, &nj) in el.iter().enumerate() {
                m.add(ni, nj, if i == j { a / 6.0 } else { a / 12.0 });
            }
        }
        let full = assemble_mass::<f64>(&mesh);
        // corner node 0 belongs to elements 0 and 1 only
        let contrib: f64 = mesh
            .elements()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.contains(&0))
            .map(|(k, _)| mesh.signed_area(k) / 6.0)
            .sum();
        assert!((full.get(0, 0) - contrib).abs() < 1e-15);
        assert!((m.get(el[0], el[1]) - a / 12.0).abs() < 1e-15);
        assert!((m.get(el[2], el[2]) - a / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mass_positive_definite() {
        let mesh = Mesh::new(4).unwrap();
        let m = assemble_mass::<f64>(&mesh).to_dense();
        let eig = SymmetricEigen::new(m);
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn stiffness_kernel_and_scaling() {
        let mesh = Mesh::new(6).unwrap();
        let n = mesh.num_nodes();
        let zero = DVector::zeros(n);
        let s0 = assemble_stiffness(&mesh, &zero).unwrap();
        let ones = DVector::from_element(n, 1.0);
        assert!(s0.mul_vec(&ones).amax() < 1e-12);
        assert!(s0.is_exactly_symmetric());

        let c: f64 = 0.7;
        let sc = assemble_stiffness(&mesh, &DVector::from_element(n, c)).unwrap();
        for (i, j, v) in sc.triplets() {
            assert!((v - c.exp() * s0.get(i, j)).abs() < 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn stiffness_psd_random() {
        let mesh = Mesh::new(6).unwrap();
        let n = mesh.num_nodes();
        let u = DVector::from_fn(n, |i, _| ((i * 37 % 11) as f64 - 5.0) * 0.2);
        let s = assemble_stiffness(&mesh, &u).unwrap();
        assert!(s.mul_vec(&DVector::from_element(n, 1.0)).amax() < 1e-12);
        for k in 0..100 {
            let x = DVector::from_fn(n, |i, _| (((i + 3) * (k + 7) * 2654435761usize) % 1000) as f64 / 500.0 - 1.0);
            assert!(s.quad_form(&x) >= -1e-12);
        }
    }

    #[test]
    fn stiffness_rejects_mismatch() {
        let mesh = Mesh::new(4).unwrap();
        assert!(assemble_stiffness(&mesh, &DVector::<f64>::zeros(3)).is_err());
    }

    #[test]
    fn lumped_sqrt() {
        let mesh = Mesh::new(8).unwrap();
        let m = assemble_mass::<f64>(&mesh);
        let d = lumped_mass_sqrt(&m);
        assert!(d.iter().all(|&v| v > 0.0));
        for i in 0..d.len() {
            assert!((d[i] * d[i] - m.get(i, i)).abs() <= 2.0 * f64::EPSILON * m.get(i, i));
        }
        // every interior node is covered by six triangles of area 1/(2 ng^2)
        let expected = (6.0 * (1.0 / 128.0) / 6.0f64).sqrt();
        for &k in mesh.interior_nodes() {
            assert!((d[k] - expected).abs() < 1e-15);
        }
    }
}
