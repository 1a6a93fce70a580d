//! Support-condition catalog for the bridge problem.
//!
//! `A0` pins the two roadway-end node pairs and restricts the design domain
//! to the upper half. `B1..B10` pin a fixed-height segment of the left
//! boundary (mirrored on the right) stacked upward from the roadway, `B10`
//! reaching the top corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Which elements carry design variables (the roadway is never designable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignRegion {
    Full,
    UpperHalf,
}

/// Serializable description of a support condition; the catalog is
/// overridable from configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupportSpec {
    pub id: String,
    /// First and last pinned node rows (inclusive) on the left boundary.
    pub node_rows: (usize, usize),
    pub region: DesignRegion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportCondition {
    pub id: String,
    pub node_rows: (usize, usize),
    pub region: DesignRegion,
    pub design_mask: Vec<bool>,
}

impl SupportCondition {
    pub fn from_spec(spec: &SupportSpec, grid: &GridSpec) -> Result<Self> {
        let (first, last) = spec.node_rows;
        if first > last || last > grid.height {
            return Err(Error::Invalid(format!(
                "support `{}` node rows {first}..={last} outside the boundary",
                spec.id
            )));
        }
        // pinned segment must stay in the upper half, down to the roadway's lower edge
        if last > grid.roadway_row + 1 {
            return Err(Error::Invalid(format!(
                "support `{}` extends below the roadway",
                spec.id
            )));
        }
        let design_mask = (0..grid.n_elements())
            .map(|i| {
                let row = i / grid.width;
                row != grid.roadway_row
                    && match spec.region {
                        DesignRegion::Full => true,
                        DesignRegion::UpperHalf => row < grid.roadway_row,
                    }
            })
            .collect();
        Ok(Self {
            id: spec.id.clone(),
            node_rows: spec.node_rows,
            region: spec.region,
            design_mask,
        })
    }

    pub fn spec(&self) -> SupportSpec {
        SupportSpec {
            id: self.id.clone(),
            node_rows: self.node_rows,
            region: self.region,
        }
    }

    pub fn n_designable(&self) -> usize {
        self.design_mask.iter().filter(|&&d| d).count()
    }

    /// Pinned DOFs: both components of every segment node, on both sides.
    pub fn fixed_dofs(&self, grid: &GridSpec) -> Vec<usize> {
        let mut dofs = Vec::new();
        for node_col in [0, grid.width] {
            for node_row in self.node_rows.0..=self.node_rows.1 {
                let n = grid.node(node_col, node_row);
                dofs.push(2 * n);
                dofs.push(2 * n + 1);
            }
        }
        dofs.sort_unstable();
        dofs
    }
}

/// Default eleven-condition catalog for `grid`.
pub fn default_catalog(grid: &GridSpec) -> Vec<SupportSpec> {
    let road = grid.roadway_row;
    let seg = (road / 10).max(1);
    let mut specs = vec![SupportSpec {
        id: "A0".into(),
        node_rows: (road, road + 1),
        region: DesignRegion::UpperHalf,
    }];
    for k in 1..=10usize {
        let Some(top) = road.checked_sub(seg * k) else {
            break;
        };
        specs.push(SupportSpec {
            id: format!("B{k}"),
            node_rows: (top, top + seg),
            region: DesignRegion::Full,
        });
    }
    specs
}

pub fn find<'a>(catalog: &'a [SupportSpec], id: &str) -> Result<&'a SupportSpec> {
    catalog
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownCondition(id.to_string()))
}
