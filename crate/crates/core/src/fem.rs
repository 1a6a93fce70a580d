//! Plane-stress finite-element analysis on the structured grid.
//!
//! Bilinear unit-square elements with SIMP interpolation
//! `E(x) = Emin + x^p (E0 - Emin)`. The reduced stiffness system (pinned DOFs
//! removed) is factored with a sparse Cholesky whose symbolic analysis is
//! computed once per support condition and reused every iteration.

use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};
use faer::linalg::solvers::Solve;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialModel {
    pub e0: f64,
    pub emin: f64,
    /// SIMP penalization exponent.
    pub penal: f64,
    pub nu: f64,
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            e0: 1.0,
            emin: 1e-9,
            penal: 3.0,
            nu: 0.3,
        }
    }
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.emin > 0.0 && self.emin < self.e0) {
            return Err(Error::InvalidMaterial(format!(
                "need 0 < Emin < E0, got Emin={} E0={}",
                self.emin, self.e0
            )));
        }
        if !(self.penal >= 1.0) {
            return Err(Error::InvalidMaterial(format!("penalization {} < 1", self.penal)));
        }
        if !(self.nu > -1.0 && self.nu < 0.5) {
            return Err(Error::InvalidMaterial(format!("Poisson ratio {} outside (-1, 0.5)", self.nu)));
        }
        Ok(())
    }

    #[inline]
    pub fn youngs(&self, x: f64) -> f64 {
        self.emin + x.powf(self.penal) * (self.e0 - self.emin)
    }

    /// `dE/dx`
    #[inline]
    pub fn youngs_derivative(&self, x: f64) -> f64 {
        self.penal * x.powf(self.penal - 1.0) * (self.e0 - self.emin)
    }
}

/// Unit-modulus stiffness matrix of a unit-square bilinear element in
/// plane stress, by 2x2 Gauss quadrature. Local nodes run counterclockwise
/// from the bottom-left corner.
pub fn element_stiffness(nu: f64) -> [[f64; 8]; 8] {
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let c = 1.0 / (1.0 - nu * nu);
    let d = [
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * (1.0 - nu) / 2.0],
    ];
    let g = 1.0 / 3f64.sqrt();
    let mut k = [[0.0; 8]; 8];
    for xi in [-g, g] {
        for eta in [-g, g] {
            // physical element is [0,1]^2, so d(xi)/dx = 2 and det J = 1/4
            let mut b = [[0.0; 8]; 3];
            for (a, &(xa, ya)) in corners.iter().enumerate() {
                let dx = 0.5 * xa * (1.0 + ya * eta);
                let dy = 0.5 * ya * (1.0 + xa * xi);
                b[0][2 * a] = dx;
                b[1][2 * a + 1] = dy;
                b[2][2 * a] = dy;
                b[2][2 * a + 1] = dx;
            }
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            s += b[p][i] * d[p][q] * b[q][j];
                        }
                    }
                    k[i][j] += 0.25 * s;
                }
            }
        }
    }
    k
}

#[derive(Debug, Clone)]
pub struct FemSolution {
    /// Full displacement vector including pinned DOFs (zero).
    pub displacements: Vec<f64>,
    pub compliance: f64,
    /// `u_e^T k0 u_e` per element (unit modulus).
    pub unit_energies: Vec<f64>,
    /// `E_e(x_e) u_e^T k0 u_e` per element.
    pub element_energies: Vec<f64>,
}

/// Assembly pattern and symbolic factorization for one grid and support set.
pub struct FemSystem {
    grid: GridSpec,
    ke: [[f64; 8]; 8],
    n_free: usize,
    /// Full DOF -> reduced DOF, `usize::MAX` when pinned.
    reduced: Vec<usize>,
    /// Per element, per local `(a, b)` pair: slot in the upper-triangular
    /// CSC value array, `usize::MAX` when not stored.
    slots: Vec<[usize; 64]>,
    pattern: SymbolicSparseColMat<usize>,
    symbolic: SymbolicLlt<usize>,
    load: Vec<f64>,
}

impl std::fmt::Debug for FemSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FemSystem")
            .field("grid", &self.grid)
            .field("n_free", &self.n_free)
            .field("nnz", &self.pattern.row_idx().len())
            .finish()
    }
}

impl FemSystem {
    pub fn new(grid: GridSpec, nu: f64, fixed_dofs: &[usize], load: Vec<f64>) -> Result<Self> {
        let n_dofs = 2 * grid.n_nodes();
        if load.len() != n_dofs {
            return Err(Error::Invalid(format!(
                "load vector has {} entries, expected {n_dofs}",
                load.len()
            )));
        }
        let mut reduced = vec![0usize; n_dofs];
        for &d in fixed_dofs {
            reduced[d] = usize::MAX;
        }
        let mut n_free = 0;
        for r in reduced.iter_mut() {
            if *r != usize::MAX {
                *r = n_free;
                n_free += 1;
            }
        }
        if n_free == 0 {
            return Err(Error::Invalid("every DOF is pinned".into()));
        }

        // column -> sorted rows (upper triangle: row <= col)
        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); n_free];
        let mut elem_dofs = Vec::with_capacity(grid.n_elements());
        for row in 0..grid.height {
            for col in 0..grid.width {
                let dofs = grid.element_dofs(row, col).map(|d| reduced[d]);
                for &ri in &dofs {
                    for &cj in &dofs {
                        if ri != usize::MAX && cj != usize::MAX && ri <= cj {
                            columns[cj].push(ri);
                        }
                    }
                }
                elem_dofs.push(dofs);
            }
        }
        let mut col_ptr = Vec::with_capacity(n_free + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for rows in columns.iter_mut() {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend_from_slice(rows);
            col_ptr.push(row_idx.len());
        }
        let slots = elem_dofs
            .iter()
            .map(|dofs| {
                let mut s = [usize::MAX; 64];
                for a in 0..8 {
                    for b in 0..8 {
                        let (ri, cj) = (dofs[a], dofs[b]);
                        if ri != usize::MAX && cj != usize::MAX && ri <= cj {
                            let start = col_ptr[cj];
                            let pos = row_idx[start..col_ptr[cj + 1]]
                                .binary_search(&ri)
                                .expect("pattern contains every element entry");
                            s[8 * a + b] = start + pos;
                        }
                    }
                }
                s
            })
            .collect();
        let pattern = SymbolicSparseColMat::new_checked(n_free, n_free, col_ptr, None, row_idx);
        let symbolic = SymbolicLlt::try_new(pattern.as_ref(), Side::Upper)
            .map_err(|e| Error::SingularSystem(format!("symbolic factorization: {e:?}")))?;
        Ok(Self {
            grid,
            ke: element_stiffness(nu),
            n_free,
            reduced,
            slots,
            pattern,
            symbolic,
            load,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn element_stiffness(&self) -> &[[f64; 8]; 8] {
        &self.ke
    }

    /// Solve `K(x) U = F` and evaluate compliance and element energies.
    pub fn analyze(&self, field: &DensityField, material: &MaterialModel) -> Result<FemSolution> {
        let g = &self.grid;
        if field.grid.width != g.width || field.grid.height != g.height {
            return Err(Error::ShapeMismatch {
                got_w: field.grid.width,
                got_h: field.grid.height,
                want_w: g.width,
                want_h: g.height,
            });
        }
        let mut values = vec![0.0; self.pattern.row_idx().len()];
        for (e, slots) in self.slots.iter().enumerate() {
            let modulus = material.youngs(field.values[e]);
            for (ab, &slot) in slots.iter().enumerate() {
                if slot != usize::MAX {
                    values[slot] += modulus * self.ke[ab / 8][ab % 8];
                }
            }
        }
        let matrix = SparseColMatRef::new(self.pattern.as_ref(), &values);
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), matrix, Side::Upper)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;

        let mut rhs = Mat::<f64>::zeros(self.n_free, 1);
        for (d, &r) in self.reduced.iter().enumerate() {
            if r != usize::MAX {
                rhs[(r, 0)] = self.load[d];
            }
        }
        llt.solve_in_place(rhs.as_mut());

        let displacements: Vec<f64> = self
            .reduced
            .iter()
            .map(|&r| if r == usize::MAX { 0.0 } else { rhs[(r, 0)] })
            .collect();
        if displacements.iter().any(|u| !u.is_finite()) {
            return Err(Error::SingularSystem("non-finite displacement".into()));
        }

        let mut unit_energies = Vec::with_capacity(g.n_elements());
        let mut element_energies = Vec::with_capacity(g.n_elements());
        let mut compliance = 0.0;
        for row in 0..g.height {
            for col in 0..g.width {
                let ue = g.element_dofs(row, col).map(|d| displacements[d]);
                let mut energy = 0.0;
                for a in 0..8 {
                    let mut ka = 0.0;
                    for b in 0..8 {
                        ka += self.ke[a][b] * ue[b];
                    }
                    energy += ue[a] * ka;
                }
                let scaled = material.youngs(field.values[g.index(row, col)]) * energy;
                unit_energies.push(energy);
                element_energies.push(scaled);
                compliance += scaled;
            }
        }
        Ok(FemSolution {
            displacements,
            compliance,
            unit_energies,
            element_energies,
        })
    }
}
