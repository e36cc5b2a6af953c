//! Geometric multigrid V-cycle for the Q1 scalar Laplacian, used as the
//! velocity-block preconditioner of the saddle solver.

use nalgebra::{DMatrix, SMatrix};

use crate::fields::BoxDomain;

use super::q1::{laplace_element, Cells};

const COARSE_DENSE_LIMIT: usize = 3000;

struct Level {
    domain: BoxDomain,
    cells: Cells,
    element: SMatrix<f64, 8, 8>,
    fixed: Vec<bool>,
    inv_diag: Vec<f64>,
    omega: f64,
}

impl Level {
    fn new(domain: BoxDomain) -> Self {
        let cells = Cells::new(&domain);
        let element = laplace_element(cells.spacing);
        let n = domain.node_count();
        let fixed: Vec<bool> = (0..n).map(|i| domain.is_gamma(i)).collect();
        let mut diag = vec![0.0; n];
        for c in 0..cells.len() {
            for (a, &node) in cells.nodes(c).iter().enumerate() {
                diag[node] += element[(a, a)];
            }
        }
        let inv_diag = diag
            .iter()
            .zip(&fixed)
            .map(|(d, &f)| if f || *d == 0.0 { 0.0 } else { 1.0 / d })
            .collect();
        let mut level = Self {
            domain,
            cells,
            element,
            fixed,
            inv_diag,
            omega: 0.0,
        };
        level.omega = 4.0 / (3.0 * level.spectral_radius());
        level
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.cells.len() {
            let nodes = self.cells.nodes(c);
            let mut u = [0.0; 8];
            for a in 0..8 {
                u[a] = if self.fixed[nodes[a]] { 0.0 } else { x[nodes[a]] };
            }
            for a in 0..8 {
                if self.fixed[nodes[a]] {
                    continue;
                }
                let mut s = 0.0;
                for b in 0..8 {
                    s += self.element[(a, b)] * u[b];
                }
                y[nodes[a]] += s;
            }
        }
    }

    /// Power iteration estimate of `ρ(D⁻¹A)`, padded by 5%.
    fn spectral_radius(&self) -> f64 {
        let n = self.domain.node_count();
        let mut x: Vec<f64> = (0..n)
            .map(|i| if self.fixed[i] { 0.0 } else { 1.0 + ((i * 7919) % 13) as f64 / 13.0 })
            .collect();
        let mut y = vec![0.0; n];
        let mut rho = 1.0;
        for _ in 0..20 {
            self.apply(&x, &mut y);
            for i in 0..n {
                y[i] *= self.inv_diag[i];
            }
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if ny == 0.0 || nx == 0.0 {
                break;
            }
            rho = ny / nx;
            for i in 0..n {
                x[i] = y[i] / ny;
            }
        }
        1.05 * rho
    }

    fn smooth(&self, b: &[f64], x: &mut [f64], sweeps: usize, scratch: &mut [f64]) {
        for _ in 0..sweeps {
            self.apply(x, scratch);
            for i in 0..x.len() {
                x[i] += self.omega * self.inv_diag[i] * (b[i] - scratch[i]);
            }
        }
    }
}

enum Coarse {
    Dense { free: Vec<usize>, chol: nalgebra::Cholesky<f64, nalgebra::Dyn> },
    Smooth(usize),
}

/// V(2,2) cycle with damped Jacobi smoothing and trilinear transfer.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: Coarse,
}

fn coarsen(d: &BoxDomain) -> Option<BoxDomain> {
    let n = d.counts();
    if n.iter().all(|&m| m >= 5 && (m - 1) % 2 == 0) {
        let c = [(n[0] + 1) / 2, (n[1] + 1) / 2, (n[2] + 1) / 2];
        BoxDomain::new(d.extents(), c, d.gamma()).ok()
    } else {
        None
    }
}

impl Multigrid {
    pub fn new(domain: &BoxDomain) -> Self {
        let mut levels = vec![Level::new(*domain)];
        while let Some(d) = coarsen(&levels.last().unwrap().domain) {
            levels.push(Level::new(d));
        }
        let last = levels.last().unwrap();
        let free: Vec<usize> = (0..last.domain.node_count()).filter(|&i| !last.fixed[i]).collect();
        let coarse = if free.len() <= COARSE_DENSE_LIMIT {
            let n = last.domain.node_count();
            let mut pos = vec![usize::MAX; n];
            for (k, &i) in free.iter().enumerate() {
                pos[i] = k;
            }
            let mut m = DMatrix::zeros(free.len(), free.len());
            for c in 0..last.cells.len() {
                let nodes = last.cells.nodes(c);
                for a in 0..8 {
                    for b in 0..8 {
                        let (pa, pb) = (pos[nodes[a]], pos[nodes[b]]);
                        if pa != usize::MAX && pb != usize::MAX {
                            m[(pa, pb)] += last.element[(a, b)];
                        }
                    }
                }
            }
            match m.cholesky() {
                Some(chol) => Coarse::Dense { free, chol },
                None => Coarse::Smooth(40),
            }
        } else {
            Coarse::Smooth(40)
        };
        Self { levels, coarse }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// One V-cycle from a zero initial guess: `x ≈ A⁻¹ b` on free nodes.
    pub fn vcycle(&self, b: &[f64], x: &mut [f64]) {
        self.cycle(0, b, x);
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let lev = &self.levels[l];
        x.iter_mut().for_each(|v| *v = 0.0);
        if l + 1 == self.levels.len() {
            match &self.coarse {
                Coarse::Dense { free, chol } => {
                    let rhs = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&i| b[i]));
                    let sol = chol.solve(&rhs);
                    for (k, &i) in free.iter().enumerate() {
                        x[i] = sol[k];
                    }
                }
                Coarse::Smooth(s) => {
                    let mut scratch = vec![0.0; b.len()];
                    lev.smooth(b, x, *s, &mut scratch);
                }
            }
            return;
        }
        let n = b.len();
        let mut scratch = vec![0.0; n];
        lev.smooth(b, x, 2, &mut scratch);
        lev.apply(x, &mut scratch);
        for i in 0..n {
            scratch[i] = if lev.fixed[i] { 0.0 } else { b[i] - scratch[i] };
        }
        let coarse = &self.levels[l + 1];
        let mut rc = vec![0.0; coarse.domain.node_count()];
        transfer(&lev.domain, &coarse.domain, &mut scratch, &mut rc, false);
        for (i, r) in rc.iter_mut().enumerate() {
            if coarse.fixed[i] {
                *r = 0.0;
            }
        }
        let mut ec = vec![0.0; rc.len()];
        self.cycle(l + 1, &rc, &mut ec);
        let mut ef = vec![0.0; n];
        transfer(&lev.domain, &coarse.domain, &mut ef, &mut ec, true);
        for i in 0..n {
            if !lev.fixed[i] {
                x[i] += ef[i];
            }
        }
        lev.smooth(b, x, 2, &mut scratch);
    }
}

/// Trilinear prolongation (`prolong = true`: coarse → fine) or its transpose.
fn transfer(fine: &BoxDomain, coarse: &BoxDomain, f: &mut [f64], c: &mut [f64], prolong: bool) {
    let nf = fine.counts();
    let weights = |i: usize| -> [(usize, f64); 2] {
        if i % 2 == 0 {
            [(i / 2, 1.0), (i / 2, 0.0)]
        } else {
            [((i - 1) / 2, 0.5), ((i + 1) / 2, 0.5)]
        }
    };
    if !prolong {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    for k in 0..nf[2] {
        let wk = weights(k);
        for j in 0..nf[1] {
            let wj = weights(j);
            for i in 0..nf[0] {
                let wi = weights(i);
                let fi = fine.index(i, j, k);
                let mut acc = 0.0;
                for &(ck, ak) in &wk {
                    if ak == 0.0 {
                        continue;
                    }
                    for &(cj, aj) in &wj {
                        if aj == 0.0 {
                            continue;
                        }
                        for &(ci, ai) in &wi {
                            if ai == 0.0 {
                                continue;
                            }
                            let w = ai * aj * ak;
                            let cidx = coarse.index(ci, cj, ck);
                            if prolong {
                                acc += w * c[cidx];
                            } else {
                                c[cidx] += w * f[fi];
                            }
                        }
                    }
                }
                if prolong {
                    f[fi] = acc;
                }
            }
        }
    }
}
