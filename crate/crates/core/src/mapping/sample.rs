use crate::error::{LabError, Result};
use crate::exec::{map_collect, Execution};
use crate::geometry::{region_quadrature, Exclusion, Quadrature};
use crate::linalg::{adjugate, determinant, operator_norm, singular_extremes, Matrix};

use super::{Domain, Mapping, Scheme};

/// The differential of a mapping at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialSample {
    pub point: Vec<f64>,
    pub jacobian: Matrix,
    /// `J(x, φ)`.
    pub det: f64,
    /// `|Dφ(x)|`.
    pub op_norm: f64,
    /// `l(Dφ(x))`.
    pub min_stretch: f64,
    /// `|adj Dφ(x)|`.
    pub adj_norm: f64,
}

impl DifferentialSample {
    pub fn from_jacobian(point: Vec<f64>, jacobian: Matrix) -> Self {
        let det = determinant(&jacobian);
        let (op_norm, min_stretch) = singular_extremes(&jacobian);
        let adj_norm = operator_norm(&adjugate(&jacobian));
        DifferentialSample {
            point,
            jacobian,
            det,
            op_norm,
            min_stretch,
            adj_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.jacobian.nrows()
    }
}

pub fn differential_sample(
    mapping: &Mapping,
    x: &[f64],
    scheme: Scheme,
) -> Result<DifferentialSample> {
    Ok(DifferentialSample::from_jacobian(
        x.to_vec(),
        mapping.jacobian(x, scheme)?,
    ))
}

/// Differentials at the quadrature points of a domain.
#[derive(Debug, Clone)]
pub struct GridSamples {
    pub quadrature: Quadrature,
    /// One sample per quadrature point, in grid order.
    pub samples: Vec<DifferentialSample>,
}

impl GridSamples {
    pub fn weights(&self) -> Vec<f64> {
        self.quadrature.points.iter().map(|p| p.weight).collect()
    }

    pub fn excluded_cell_count(&self) -> usize {
        self.quadrature.excluded_cells.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Samples `Dφ` over the domain grid. Interior cells are sampled at their
/// centers; cells crossed by a curved boundary at the centroids of their
/// clipped pieces. Cells near singular points are excluded and counted.
pub fn sample_grid(
    mapping: &Mapping,
    domain: &Domain,
    scheme: Scheme,
    exec: Execution,
) -> Result<GridSamples> {
    domain.validate()?;
    let n = domain.dim();
    if !(2..=3).contains(&n) {
        return Err(LabError::validation(
            "domain.n",
            "grid operations support n = 2 and n = 3",
        ));
    }
    if domain.grid < 4 {
        return Err(LabError::validation(
            "domain.grid",
            "resolution must be at least 4 per axis",
        ));
    }
    mapping.check_dim(n)?;
    let grid = domain.sampling_grid()?;
    let radius = domain.exclusion_radius(grid.max_h());
    let exclusions: Vec<Exclusion> = mapping
        .singular_points(n)
        .into_iter()
        .map(|center| Exclusion { center, radius })
        .collect();
    let quadrature = region_quadrature(&grid, &domain.region(), &exclusions, exec)?;
    let samples = map_collect(exec, quadrature.points.len(), |i| {
        let x = &quadrature.points[i].x;
        let jac = mapping.jacobian_within(x, scheme, |p| domain.contains(p))?;
        Ok(DifferentialSample::from_jacobian(x.clone(), jac))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(GridSamples {
        quadrature,
        samples,
    })
}
