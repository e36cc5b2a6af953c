//! Trilinear (Q1) velocity elements on the grid cells with one constant
//! pressure per cell.
//!
//! Strains are taken at the 2×2×2 Gauss points with the volumetric part
//! replaced by the cell-centre divergence (B-bar):
//! `Ē_q = E_q + ⅓ (div_c - tr E_q) I`.

use nalgebra::{SMatrix, SVector};

use crate::fields::BoxDomain;
use crate::materials::{to_mandel, ElasticityTensor, Matrix3, Vector3};

pub type ElementMatrix = SMatrix<f64, 24, 24>;
pub type ElementVector = SVector<f64, 24>;

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Piecewise-constant data over grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMap<T> {
    pub table: Vec<T>,
    /// Index into `table` per cell; `None` means every cell uses `table[0]`.
    pub ids: Option<Vec<u32>>,
}

impl<T> CellMap<T> {
    pub fn uniform(t: T) -> Self {
        Self {
            table: vec![t],
            ids: None,
        }
    }

    pub fn per_cell(table: Vec<T>, ids: Vec<u32>) -> Self {
        Self { table, ids: Some(ids) }
    }

    #[inline]
    pub fn id(&self, cell: usize) -> usize {
        self.ids.as_ref().map_or(0, |ids| ids[cell] as usize)
    }

    #[inline]
    pub fn get(&self, cell: usize) -> &T {
        &self.table[self.id(cell)]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> CellMap<U> {
        CellMap {
            table: self.table.iter().map(f).collect(),
            ids: self.ids.clone(),
        }
    }
}

/// Cell layout of a non-periodic grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cells {
    pub domain: BoxDomain,
    pub counts: [usize; 3],
    pub spacing: [f64; 3],
    pub volume: f64,
}

impl Cells {
    pub fn new(domain: &BoxDomain) -> Self {
        let n = domain.counts();
        let spacing = domain.spacings();
        Self {
            domain: *domain,
            counts: [n[0] - 1, n[1] - 1, n[2] - 1],
            spacing,
            volume: spacing[0] * spacing[1] * spacing[2],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn ijk(&self, c: usize) -> [usize; 3] {
        [
            c % self.counts[0],
            (c / self.counts[0]) % self.counts[1],
            c / (self.counts[0] * self.counts[1]),
        ]
    }

    /// Global node indices of the 8 corners, local order `a₀ + 2a₁ + 4a₂`.
    #[inline]
    pub fn nodes(&self, c: usize) -> [usize; 8] {
        let [i, j, k] = self.ijk(c);
        let d = &self.domain;
        let mut out = [0; 8];
        for (a, o) in out.iter_mut().enumerate() {
            *o = d.index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
        }
        out
    }

    pub fn center(&self, c: usize) -> [f64; 3] {
        let ijk = self.ijk(c);
        [
            (ijk[0] as f64 + 0.5) * self.spacing[0],
            (ijk[1] as f64 + 0.5) * self.spacing[1],
            (ijk[2] as f64 + 0.5) * self.spacing[2],
        ]
    }
}

/// Shape-function gradients at reference point `xi ∈ [0,1]³`.
pub fn shape_gradients(xi: [f64; 3], spacing: [f64; 3]) -> [Vector3; 8] {
    let phi = |a: usize, t: f64| if a == 0 { 1.0 - t } else { t };
    let dphi = |a: usize| if a == 0 { -1.0 } else { 1.0 };
    let mut out = [Vector3::zeros(); 8];
    for (a, g) in out.iter_mut().enumerate() {
        let aa = [a & 1, (a >> 1) & 1, (a >> 2) & 1];
        for d in 0..3 {
            let mut v = dphi(aa[d]) / spacing[d];
            for e in 0..3 {
                if e != d {
                    v *= phi(aa[e], xi[e]);
                }
            }
            g[d] = v;
        }
    }
    out
}

/// Gradient operators of one cell, shared by all cells of a uniform grid.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Shape gradients at the 8 Gauss points.
    pub gauss: [[Vector3; 8]; 8],
    pub center: [Vector3; 8],
    /// Gauss weight `|c|/8`.
    pub weight: f64,
    pub volume: f64,
}

impl ElementGeometry {
    pub fn new(spacing: [f64; 3]) -> Self {
        let mut gauss = [[Vector3::zeros(); 8]; 8];
        for (q, g) in gauss.iter_mut().enumerate() {
            *g = shape_gradients([GAUSS[q & 1], GAUSS[(q >> 1) & 1], GAUSS[(q >> 2) & 1]], spacing);
        }
        let volume = spacing[0] * spacing[1] * spacing[2];
        Self {
            gauss,
            center: shape_gradients([0.5; 3], spacing),
            weight: volume / 8.0,
            volume,
        }
    }

    /// `∇u` from the 8 nodal displacements.
    #[inline]
    pub fn grad(grads: &[Vector3; 8], u: &[[f64; 3]; 8]) -> Matrix3 {
        let mut g = Matrix3::zeros();
        for a in 0..8 {
            for k in 0..3 {
                for d in 0..3 {
                    g[(k, d)] += u[a][k] * grads[a][d];
                }
            }
        }
        g
    }

    /// Cell-centre divergence coefficients as a 24-vector.
    pub fn div_row(&self) -> ElementVector {
        let mut b = ElementVector::zeros();
        for a in 0..8 {
            for k in 0..3 {
                b[3 * a + k] = self.center[a][k];
            }
        }
        b
    }

    /// 6×24 map from nodal displacements to the Mandel vector of `Ē_q`.
    pub fn bbar(&self, q: usize) -> SMatrix<f64, 6, 24> {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let g = &self.gauss[q];
        let mut b = SMatrix::<f64, 6, 24>::zeros();
        for a in 0..8 {
            let c = 3 * a;
            b[(0, c)] = g[a][0];
            b[(1, c + 1)] = g[a][1];
            b[(2, c + 2)] = g[a][2];
            // √2 E23 = (∂₃u₂ + ∂₂u₃)/√2, etc.
            b[(3, c + 1)] = s2 * g[a][2];
            b[(3, c + 2)] = s2 * g[a][1];
            b[(4, c)] = s2 * g[a][2];
            b[(4, c + 2)] = s2 * g[a][0];
            b[(5, c)] = s2 * g[a][1];
            b[(5, c + 1)] = s2 * g[a][0];
        }
        let div = self.div_row();
        let mut tr = ElementVector::zeros();
        for col in 0..24 {
            tr[col] = b[(0, col)] + b[(1, col)] + b[(2, col)];
        }
        let corr = (div - tr) / 3.0;
        for r in 0..3 {
            for col in 0..24 {
                b[(r, col)] += corr[col];
            }
        }
        b
    }

    /// `Σ_q w_q B̄_qᵀ H B̄_q`
    pub fn stiffness(&self, h: &ElasticityTensor) -> ElementMatrix {
        let mut k = ElementMatrix::zeros();
        for q in 0..8 {
            let b = self.bbar(q);
            k += self.weight * b.transpose() * h.matrix() * b;
        }
        0.5 * (k + k.transpose())
    }

    /// `Ē_q` as a matrix, from nodal displacements.
    pub fn strain_bar(&self, q: usize, u: &[[f64; 3]; 8]) -> Matrix3 {
        let g = Self::grad(&self.gauss[q], u);
        let e = 0.5 * (g + g.transpose());
        let div = Self::grad(&self.center, u).trace();
        e + (div - e.trace()) / 3.0 * Matrix3::identity()
    }
}

/// Q1 scalar Laplacian element matrix `∫ ∇N_a · ∇N_b`.
pub fn laplace_element(spacing: [f64; 3]) -> SMatrix<f64, 8, 8> {
    let geo = ElementGeometry::new(spacing);
    let mut k = SMatrix::<f64, 8, 8>::zeros();
    for q in 0..8 {
        for a in 0..8 {
            for b in 0..8 {
                k[(a, b)] += geo.weight * geo.gauss[q][a].dot(&geo.gauss[q][b]);
            }
        }
    }
    k
}

#[inline]
pub fn gather(field: &[f64], nodes: &[usize; 8], n: usize) -> [[f64; 3]; 8] {
    let mut u = [[0.0; 3]; 8];
    for a in 0..8 {
        for k in 0..3 {
            u[a][k] = field[k * n + nodes[a]];
        }
    }
    u
}

/// Mandel vector of a nodal strain, re-exported for callers building loads.
pub fn mandel(e: &Matrix3) -> SVector<f64, 6> {
    to_mandel(e)
}
