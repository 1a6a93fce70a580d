//! Density-weighted sensitivity filter with a cone kernel
//! `H_ej = max(0, r - dist(e, j))`, restricted to designable elements.

use crate::grid::GridSpec;

#[derive(Debug, Clone)]
pub struct SensitivityFilter {
    radius: f64,
    /// Per element: designable neighbours and their kernel weights.
    neighbors: Vec<Vec<(usize, f64)>>,
    weight_sums: Vec<f64>,
}

impl SensitivityFilter {
    pub fn new(grid: &GridSpec, design_mask: &[bool], radius: f64) -> Self {
        let reach = radius.ceil() as isize;
        let mut neighbors = Vec::with_capacity(grid.n_elements());
        let mut weight_sums = Vec::with_capacity(grid.n_elements());
        for row in 0..grid.height as isize {
            for col in 0..grid.width as isize {
                let e = grid.index(row as usize, col as usize);
                let mut list = Vec::new();
                if design_mask[e] {
                    for dr in -reach..=reach {
                        for dc in -reach..=reach {
                            let (r, c) = (row + dr, col + dc);
                            if r < 0 || c < 0 || r >= grid.height as isize || c >= grid.width as isize {
                                continue;
                            }
                            let j = grid.index(r as usize, c as usize);
                            let w = radius - ((dr * dr + dc * dc) as f64).sqrt();
                            if w > 0.0 && design_mask[j] {
                                list.push((j, w));
                            }
                        }
                    }
                }
                weight_sums.push(list.iter().map(|&(_, w)| w).sum());
                neighbors.push(list);
            }
        }
        Self {
            radius,
            neighbors,
            weight_sums,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn neighbors(&self, e: usize) -> &[(usize, f64)] {
        &self.neighbors[e]
    }

    /// `dc~_e = sum_j H_ej x_j dc_j / (max(1e-3, x_e) sum_j H_ej)`.
    /// Non-designable elements come out as zero.
    pub fn apply(&self, x: &[f64], dc: &[f64]) -> Vec<f64> {
        (0..dc.len()).map(|e| self.apply_at(e, x, dc)).collect()
    }

    pub fn apply_at(&self, e: usize, x: &[f64], dc: &[f64]) -> f64 {
        let list = &self.neighbors[e];
        if list.is_empty() {
            return 0.0;
        }
        let num: f64 = list.iter().map(|&(j, w)| w * x[j] * dc[j]).sum();
        num / (x[e].max(1e-3) * self.weight_sums[e])
    }
}
