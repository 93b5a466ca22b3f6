use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::mapping::{Domain, Mapping, Pullback};

use super::{Condenser, Plate};

/// The condenser `(φ(F₀), φ(F₁))` in `image_domain`.
///
/// Level-set plates are pulled back through `φ⁻¹` and stay exact. Cell
/// plates are rasterized: an image cell belongs to the plate when the
/// preimage of its center lies in the source cells dilated by one layer.
pub fn image_condenser(
    condenser: &Condenser,
    mapping: &Mapping,
    image_domain: &Domain,
) -> Result<Condenser> {
    condenser.validate()?;
    image_domain.validate()?;
    let n = condenser.domain.dim();
    if image_domain.dim() != n {
        return Err(LabError::validation(
            "image_domain.n",
            format!("expected dimension {n}"),
        ));
    }
    mapping.check_dim(n)?;
    let inverse = mapping.inverse()?;
    let image_grid = image_domain.sampling_grid()?;

    let push = |plate: &Plate| -> Result<Plate> {
        Ok(match plate {
            Plate::LevelSet { set, label } => Plate::LevelSet {
                set: Arc::new(Pullback {
                    base: set.clone(),
                    inverse: inverse.clone(),
                }),
                label: format!("{}({label})", mapping.label()),
            },
            Plate::Cells { .. } => {
                let (src_grid, member) = match plate.offset(1.0) {
                    Plate::Cells { grid, cells } => {
                        let mut m = vec![false; grid.cell_count()];
                        for c in cells {
                            m[c] = true;
                        }
                        (grid, m)
                    }
                    Plate::LevelSet { .. } => unreachable!(),
                };
                let cells: Vec<usize> = (0..image_grid.cell_count())
                    .filter(|&c| {
                        inverse
                            .evaluate(&image_grid.cell_center(c))
                            .ok()
                            .and_then(|x| src_grid.locate_cell(&x))
                            .is_some_and(|k| member[k])
                    })
                    .collect();
                if cells.is_empty() {
                    return Err(LabError::ResolutionTooCoarse(
                        "a plate has no cell on the image grid; refine the image grid".into(),
                    ));
                }
                Plate::Cells {
                    grid: image_grid.clone(),
                    cells,
                }
            }
        })
    };
    let f0 = push(&condenser.f0)?;
    let f1 = push(&condenser.f1)?;
    if let (Plate::Cells { cells: a, .. }, Plate::Cells { cells: b, .. }) = (&f0, &f1) {
        if a.iter().any(|c| b.binary_search(c).is_ok()) {
            return Err(LabError::ResolutionTooCoarse(
                "image plates overlap after rasterization; use a finer grid".into(),
            ));
        }
    }
    Ok(Condenser {
        domain: image_domain.clone(),
        f0,
        f1,
        p: condenser.p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{solve_capacity, PlateSpec, Side, SolverConfig};
    use crate::mapping::MappingSpec;

    fn slab(d: &Domain, hi: f64) -> Condenser {
        let half = |offset, side| PlateSpec::HalfSpace {
            axis: 0,
            offset,
            side,
        };
        Condenser {
            f0: Plate::from_spec(&half(0.0, Side::Below), d, "F0").unwrap(),
            f1: Plate::from_spec(&half(hi, Side::Above), d, "F1").unwrap(),
            domain: d.clone(),
            p: 2.0,
        }
    }

    #[test]
    fn identity_keeps_cell_masks() {
        let d = Domain::unit_box(2, 8);
        let c = Condenser {
            f0: Plate::from_spec(&PlateSpec::OuterRing {}, &d, "F0").unwrap(),
            f1: Plate::from_spec(
                &PlateSpec::Cells {
                    cells: vec![vec![3, 3], vec![4, 4]],
                },
                &d,
                "F1",
            )
            .unwrap(),
            domain: d.clone(),
            p: 2.0,
        };
        let img = image_condenser(&c, &Mapping::Identity, &d).unwrap();
        match (img.f1, c.f1.offset(1.0)) {
            (Plate::Cells { cells: a, .. }, Plate::Cells { cells: b, .. }) => assert_eq!(a, b),
            _ => unreachable!(),
        }
    }

    #[test]
    fn stretched_slab_has_capacity_one_half() {
        let m = Mapping::new(&MappingSpec::diagonal(&[2.0, 1.0])).unwrap();
        let src = Domain::unit_box(2, 16);
        let img_dom = Domain::rect(vec![0.0, 0.0], vec![2.0, 1.0], 16);
        let img = image_condenser(&slab(&src, 1.0), &m, &img_dom).unwrap();
        let v = solve_capacity(&img, &SolverConfig::default())
            .unwrap()
            .value;
        // width 1, separation 2
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }

    #[test]
    fn overlapping_raster_is_too_coarse() {
        let d = Domain::unit_box(2, 8);
        let c = Condenser {
            f0: Plate::from_spec(
                &PlateSpec::Cells {
                    cells: vec![vec![2, 2]],
                },
                &d,
                "F0",
            )
            .unwrap(),
            f1: Plate::from_spec(
                &PlateSpec::Cells {
                    cells: vec![vec![4, 2]],
                },
                &d,
                "F1",
            )
            .unwrap(),
            domain: d.clone(),
            p: 2.0,
        };
        let e = image_condenser(&c, &Mapping::Identity, &d).unwrap_err();
        assert!(matches!(e, LabError::ResolutionTooCoarse(_)));
    }

    #[test]
    fn grid_field_has_no_inverse() {
        let d = Domain::unit_box(2, 8);
        let gf = crate::mapping::GridField::from_fn(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![5, 5],
            1,
            |x| x.to_vec(),
        )
        .unwrap();
        let m = Mapping::GridField(Arc::new(gf));
        assert!(image_condenser(&slab(&d, 1.0), &m, &d).is_err());
    }
}
