//! Structured grid and density field over the square bridge domain.
//!
//! Elements are stored row-major with row 0 at the top of the domain.
//! Heights are measured upwards from the bottom edge, so element row `r`
//! has its centroid at `height - r - 0.5`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Row of the one-element-thick non-design roadway.
    pub roadway_row: usize,
    /// Per-element volume `s_i`.
    pub element_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::square(80)
    }
}

impl GridSpec {
    /// Square `n x n` grid with the roadway on the center row.
    pub fn square(n: usize) -> Self {
        Self {
            width: n,
            height: n,
            roadway_row: n / 2,
            element_size: 1.0,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn mirror_col(&self, col: usize) -> usize {
        self.width - 1 - col
    }

    /// Element index of the horizontal mirror image of `idx`.
    #[inline]
    pub fn mirror_index(&self, idx: usize) -> usize {
        let (row, col) = (idx / self.width, idx % self.width);
        self.index(row, self.mirror_col(col))
    }

    #[inline]
    pub fn is_roadway(&self, idx: usize) -> bool {
        idx / self.width == self.roadway_row
    }

    /// Centroid height of an element row above the domain bottom.
    #[inline]
    pub fn row_height(&self, row: usize) -> f64 {
        self.height as f64 - row as f64 - 0.5
    }

    pub fn n_nodes(&self) -> usize {
        (self.width + 1) * (self.height + 1)
    }

    /// Node numbering is column-major over the `(width+1) x (height+1)`
    /// node lattice, node rows counted from the top.
    #[inline]
    pub fn node(&self, node_col: usize, node_row: usize) -> usize {
        node_col * (self.height + 1) + node_row
    }

    /// Global DOFs of element `(row, col)` in local order bottom-left,
    /// bottom-right, top-right, top-left; `(ux, uy)` per node with `uy`
    /// positive upward.
    pub fn element_dofs(&self, row: usize, col: usize) -> [usize; 8] {
        let nodes = [
            self.node(col, row + 1),
            self.node(col + 1, row + 1),
            self.node(col + 1, row),
            self.node(col, row),
        ];
        let mut dofs = [0; 8];
        for (a, n) in nodes.iter().enumerate() {
            dofs[2 * a] = 2 * n;
            dofs[2 * a + 1] = 2 * n + 1;
        }
        dofs
    }
}

/// Per-element material densities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_elements() {
            return Err(Error::Invalid(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.n_elements()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("density {v} outside [0, 1]")));
        }
        Ok(Self { grid, values })
    }

    pub fn filled(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_elements()],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.grid.index(row, col);
        self.values[i] = value;
    }

    /// Horizontal mirror image about the vertical centerline.
    pub fn mirrored(&self) -> Self {
        let values = (0..self.values.len())
            .map(|i| self.values[self.grid.mirror_index(i)])
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn is_mirror_symmetric(&self) -> bool {
        (0..self.values.len()).all(|i| self.values[i] == self.values[self.grid.mirror_index(i)])
    }

    /// Replace each value by the mean of itself and its mirror image.
    /// `0.5 * (a + b)` is commutative, so the result is exactly symmetric.
    pub fn symmetrize(&mut self) {
        mirror_average(&self.grid, &mut self.values);
    }

    /// Fix the roadway row to solid.
    pub fn fix_roadway(&mut self) {
        let r = self.grid.roadway_row;
        let w = self.grid.width;
        self.values[r * w..(r + 1) * w].fill(1.0);
    }
}

/// In-place mirror averaging of any per-element quantity.
pub fn mirror_average(grid: &GridSpec, values: &mut [f64]) {
    for row in 0..grid.height {
        for col in 0..grid.width / 2 {
            let a = grid.index(row, col);
            let b = grid.index(row, grid.mirror_col(col));
            let m = 0.5 * (values[a] + values[b]);
            values[a] = m;
            values[b] = m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_bridge_domain() {
        let g = GridSpec::default();
        assert_eq!((g.width, g.height, g.roadway_row), (80, 80, 40));
        assert_eq!(g.n_elements(), 6400);
        assert_eq!(g.row_height(0), 79.5);
    }

    #[test]
    fn element_dofs_share_edges() {
        let g = GridSpec::square(3);
        let left = g.element_dofs(1, 0);
        let right = g.element_dofs(1, 1);
        // right edge of `left` is the left edge of `right`
        assert_eq!(&left[2..4], &right[0..2]);
        assert_eq!(&left[4..6], &right[6..8]);
    }

    #[test]
    fn symmetrize_is_exact() {
        let g = GridSpec::square(5);
        let mut f = DensityField::new(g, (0..25).map(|i| (i as f64 * 0.37) % 1.0).collect()).unwrap();
        assert!(!f.is_mirror_symmetric());
        f.symmetrize();
        assert!(f.is_mirror_symmetric());
        assert_eq!(f, f.mirrored());
    }

    #[test]
    fn rejects_out_of_range_density() {
        let g = GridSpec::square(2);
        assert!(DensityField::new(g, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(DensityField::new(g, vec![0.0; 3]).is_err());
    }
}
