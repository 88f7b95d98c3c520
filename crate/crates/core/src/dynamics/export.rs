//! Vector-field grids for plotting.

use std::io::Write;

use nalgebra::DVector;

use super::{max_contraction_eigenvalue, VectorField};
use crate::error::{Error, Result};

/// Field samples over a planar grid, row-major with `x2` outer and `x1` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    /// `[x1, x2, f1, f2, lambda_max]`, plus `V` when `has_potential`.
    pub rows: Vec<Vec<f64>>,
    pub has_potential: bool,
}

impl FieldGrid {
    pub fn header(&self) -> &'static str {
        if self.has_potential {
            "x1,x2,f1,f2,lambda_max,V"
        } else {
            "x1,x2,f1,f2,lambda_max"
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header())?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Samples `f`, `λ_max(½(J + Jᵀ))` and, for gradient fields, `V` on a
/// `resolution × resolution` grid over `[x1_min, x1_max, x2_min, x2_max]`.
pub fn export_field_grid<F: VectorField + ?Sized>(
    f: &F,
    bounds: [f64; 4],
    resolution: usize,
) -> Result<FieldGrid> {
    if f.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "field export needs a 2-D model, got n = {}",
            f.dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    let [a0, a1, b0, b1] = bounds;
    if !(a1 > a0 && b1 > b0) || bounds.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad bounds {bounds:?}")));
    }
    let axis = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let has_potential = f.potential(&DVector::zeros(2)).is_some();

    let mut rows = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            let x = DVector::from_column_slice(&[axis(a0, a1, i), axis(b0, b1, j)]);
            let fx = f.eval(&x);
            let mut row = vec![x[0], x[1], fx[0], fx[1], max_contraction_eigenvalue(f, &x)?];
            if has_potential {
                row.push(f.potential(&x).unwrap_or(f64::NAN));
            }
            rows.push(row);
        }
    }
    Ok(FieldGrid {
        rows,
        has_potential,
    })
}
