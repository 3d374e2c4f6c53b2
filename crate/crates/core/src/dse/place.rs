//! Bottom-left placement of layer rectangles.

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::mapping::LayerPlan;

use super::design::{Occupancy, Placement, Rect};

/// Rectangle for layer `i` given the rectangles of the layers before it.
///
/// Dense layers take the free position with the lowest row, then the lowest
/// column. An aggregation must take the column directly east of its producer.
pub fn place_next(occ: &Occupancy, plans: &[LayerPlan], placed: &[Rect]) -> Option<Rect> {
    let i = placed.len();
    let (rows, cols) = plans[i].extent();
    match plans[i] {
        LayerPlan::Aggregate { .. } => {
            let prod = placed.last()?;
            let r = Rect::new(prod.row, prod.end_col(), rows, cols);
            occ.fits(&r).then_some(r)
        }
        LayerPlan::Dense { .. } => occ.first_fit(rows, cols),
    }
}

/// Places all layers in model order.
pub fn place_layers(plans: &[LayerPlan], arch: &ArchSpec) -> Result<Placement> {
    if arch.cols > Occupancy::MAX_COLS {
        return Err(Error::Arch(format!(
            "grids wider than {} columns are not supported",
            Occupancy::MAX_COLS
        )));
    }
    let mut occ = Occupancy::new(arch);
    let mut rects: Vec<Rect> = Vec::with_capacity(plans.len());
    for (i, p) in plans.iter().enumerate() {
        let Some(r) = place_next(&occ, plans, &rects) else {
            let (h, w) = p.extent();
            let what = match p {
                LayerPlan::Aggregate { .. } => "east of its producer",
                LayerPlan::Dense { .. } => "anywhere on the grid",
            };
            return Err(Error::Infeasible(format!(
                "placement: layer {i} ({h}x{w} tiles) does not fit {what}"
            )));
        };
        occ.fill(&r);
        rects.push(r);
    }
    Ok(Placement { rects })
}
