use std::io::{Read, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::fem::Mesh;
use crate::Real;

/// Magic prefix of the binary field format.
pub const FIELD_MAGIC: &[u8; 8] = b"SFLD0001";

/// Nodal coefficient vector of a P1 function on a [`Mesh`].
///
/// The mesh is identified by its resolution `ng`; coefficients follow the
/// mesh's row-major node order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    ng: usize,
    values: DVector<T>,
}

impl<T: Real> Field<T> {
    pub fn new(mesh: &Mesh, values: DVector<T>) -> Result<Self> {
        Self::from_parts(mesh.ng(), values)
    }

    fn from_parts(ng: usize, values: DVector<T>) -> Result<Self> {
        if values.len() != (ng + 1) * (ng + 1) {
            return invalid(format!(
                "field has {} values, mesh with ng={ng} has {} nodes",
                values.len(),
                (ng + 1) * (ng + 1)
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite field value at node {i}")));
        }
        Ok(Self { ng, values })
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            ng: mesh.ng(),
            values: DVector::zeros(mesh.num_nodes()),
        }
    }

    /// Nodal interpolant of `f(x, y)`.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(mesh.num_nodes(), mesh.nodes().iter().map(|p| T::lit(f(p[0], p[1]))));
        Self::new(mesh, values)
    }

    pub fn ng(&self) -> usize {
        self.ng
    }

    pub fn matches(&self, mesh: &Mesh) -> bool {
        self.ng == mesh.ng()
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<T> {
        self.values
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.ng as u32).to_le_bytes())?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for v in self.values.iter() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("bad field magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let ng = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        if count != (ng + 1) * (ng + 1) {
            return Err(Error::Format(format!("node count {count} inconsistent with ng={ng}")));
        }
        let mut values = DVector::zeros(count);
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = T::lit(f64::from_le_bytes(buf));
        }
        Self::from_parts(ng, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

impl<T> Deref for Field<T> {
    type Target = DVector<T>;

    fn deref(&self) -> &DVector<T> {
        &self.values
    }
}

impl<T> DerefMut for Field<T> {
    fn deref_mut(&mut self) -> &mut DVector<T> {
        &mut self.values
    }
}
