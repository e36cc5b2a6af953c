//! Structured grids over a box, nodal fields and discrete calculus.
//!
//! Nodes are numbered `i + nx (j + ny k)`. Non-periodic boxes carry nodes on
//! both end faces (spacing `L/(n-1)`); periodic boxes drop the duplicate end
//! node (spacing `L/n`).

use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::materials::Matrix3;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("field does not vanish on the boundary (max |ζ| = {0:e})")]
    NonzeroTrace(f64),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Low,
    High,
}

/// Dirichlet portion Γ of the boundary, as a node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaMarker {
    None,
    FullBoundary,
    Face { axis: usize, side: Side },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    extents: [f64; 3],
    counts: [usize; 3],
    periodic: bool,
    gamma: GammaMarker,
}

impl BoxDomain {
    pub fn new(extents: [f64; 3], counts: [usize; 3], gamma: GammaMarker) -> Result<Self, FieldError> {
        Self::build(extents, counts, false, gamma)
    }

    pub fn periodic(extents: [f64; 3], counts: [usize; 3]) -> Result<Self, FieldError> {
        Self::build(extents, counts, true, GammaMarker::None)
    }

    pub fn unit_cube(n: usize, gamma: GammaMarker) -> Result<Self, FieldError> {
        Self::new([1.0; 3], [n; 3], gamma)
    }

    fn build(extents: [f64; 3], counts: [usize; 3], periodic: bool, gamma: GammaMarker) -> Result<Self, FieldError> {
        if extents.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(FieldError::InvalidDomain(format!("extents must be positive, got {extents:?}")));
        }
        if counts.iter().any(|&n| n < 3) {
            return Err(FieldError::InvalidDomain(format!("need at least 3 nodes per axis, got {counts:?}")));
        }
        if periodic && gamma != GammaMarker::None {
            return Err(FieldError::InvalidDomain("periodic domains carry no Dirichlet portion".into()));
        }
        if let GammaMarker::Face { axis, .. } = gamma {
            if axis > 2 {
                return Err(FieldError::InvalidDomain(format!("face axis {axis} out of range")));
            }
        }
        Ok(Self {
            extents,
            counts,
            periodic,
            gamma,
        })
    }

    pub fn extents(&self) -> [f64; 3] {
        self.extents
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn gamma(&self) -> GammaMarker {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: GammaMarker) -> Result<Self, FieldError> {
        Self::build(self.extents, self.counts, self.periodic, gamma)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let n = self.counts[axis];
        if self.periodic {
            self.extents[axis] / n as f64
        } else {
            self.extents[axis] / (n - 1) as f64
        }
    }

    pub fn spacings(&self) -> [f64; 3] {
        [self.spacing(0), self.spacing(1), self.spacing(2)]
    }

    /// Largest grid spacing.
    pub fn h_max(&self) -> f64 {
        self.spacings().into_iter().fold(0.0, f64::max)
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let nx = self.counts[0];
        let ny = self.counts[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.ijk(idx);
        [
            i as f64 * self.spacing(0),
            j as f64 * self.spacing(1),
            k as f64 * self.spacing(2),
        ]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        if self.periodic {
            return false;
        }
        let ijk = self.ijk(idx);
        (0..3).any(|a| ijk[a] == 0 || ijk[a] == self.counts[a] - 1)
    }

    pub fn is_gamma(&self, idx: usize) -> bool {
        match self.gamma {
            GammaMarker::None => false,
            GammaMarker::FullBoundary => self.is_boundary(idx),
            GammaMarker::Face { axis, side } => {
                let c = self.ijk(idx)[axis];
                match side {
                    Side::Low => c == 0,
                    Side::High => c == self.counts[axis] - 1,
                }
            }
        }
    }

    pub fn gamma_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.is_gamma(n)).collect()
    }

    /// Quadrature weight of a node: trapezoidal, or rectangle rule when periodic.
    #[inline]
    pub fn weight(&self, idx: usize) -> f64 {
        let ijk = self.ijk(idx);
        let mut w = 1.0;
        for a in 0..3 {
            let mut wa = self.spacing(a);
            if !self.periodic && (ijk[a] == 0 || ijk[a] == self.counts[a] - 1) {
                wa *= 0.5;
            }
            w *= wa;
        }
        w
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.node_count()).map(|n| self.weight(n)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    /// `∫ integrand` by nodal quadrature.
    pub fn integrate(&self, integrand: impl Fn(usize) -> f64) -> f64 {
        (0..self.node_count()).map(|n| self.weight(n) * integrand(n)).sum()
    }

    /// Same quadrature restricted to the index sub-box `lo..=hi`, with
    /// trapezoidal weights of that sub-box.
    pub fn integrate_sub_box(&self, lo: [usize; 3], hi: [usize; 3], integrand: impl Fn(usize) -> f64) -> f64 {
        let mut sum = 0.0;
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let ijk = [i, j, k];
                    let mut w = 1.0;
                    for a in 0..3 {
                        let mut wa = self.spacing(a);
                        if lo[a] != hi[a] && (ijk[a] == lo[a] || ijk[a] == hi[a]) {
                            wa *= 0.5;
                        }
                        w *= wa;
                    }
                    sum += w * integrand(self.index(i, j, k));
                }
            }
        }
        sum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub domain: BoxDomain,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub domain: BoxDomain,
    pub data: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub domain: BoxDomain,
    pub values: Vec<Matrix3>,
}

impl ScalarField {
    pub fn zeros(domain: &BoxDomain) -> Self {
        Self {
            domain: *domain,
            values: vec![0.0; domain.node_count()],
        }
    }

    pub fn from_fn(domain: &BoxDomain, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self {
            domain: *domain,
            values: (0..domain.node_count()).map(|n| f(domain.position(n))).collect(),
        }
    }

    pub fn integral(&self) -> f64 {
        self.domain.integrate(|n| self.values[n])
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.domain.volume()
    }

    /// `(∫ f²)^{1/2}`
    pub fn norm_l2(&self) -> f64 {
        self.domain.integrate(|n| self.values[n].powi(2)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl VectorField {
    pub fn zeros(domain: &BoxDomain) -> Self {
        let n = domain.node_count();
        Self {
            domain: *domain,
            data: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_fn(domain: &BoxDomain, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let mut v = Self::zeros(domain);
        for n in 0..domain.node_count() {
            v.set(n, f(domain.position(n)));
        }
        v
    }

    pub fn from_components(domain: &BoxDomain, data: [Vec<f64>; 3]) -> Result<Self, FieldError> {
        let n = domain.node_count();
        if data.iter().any(|c| c.len() != n) {
            return Err(FieldError::ShapeMismatch(format!("expected {n} nodal values per component")));
        }
        Ok(Self { domain: *domain, data })
    }

    #[inline]
    pub fn get(&self, n: usize) -> [f64; 3] {
        [self.data[0][n], self.data[1][n], self.data[2][n]]
    }

    #[inline]
    pub fn set(&mut self, n: usize, v: [f64; 3]) {
        for c in 0..3 {
            self.data[c][n] = v[c];
        }
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            domain: self.domain,
            values: self.data[c].clone(),
        }
    }

    /// Vanishes on every Γ node within `tol`.
    pub fn satisfies_dirichlet(&self, tol: f64) -> bool {
        self.domain
            .gamma_nodes()
            .into_iter()
            .all(|n| self.get(n).iter().all(|x| x.abs() <= tol))
    }

    /// Equals `data` on every Γ node within `tol`.
    pub fn satisfies_dirichlet_data(&self, data: &VectorField, tol: f64) -> bool {
        self.domain.gamma_nodes().into_iter().all(|n| {
            let a = self.get(n);
            let b = data.get(n);
            (0..3).all(|c| (a[c] - b[c]).abs() <= tol)
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in 0..3 {
            out.data[c].iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for c in 0..3 {
            for (x, y) in self.data[c].iter_mut().zip(&other.data[c]) {
                *x += a * y;
            }
        }
    }

    /// `∫ u · v`
    pub fn inner(&self, other: &VectorField) -> f64 {
        self.domain.integrate(|n| {
            let a = self.get(n);
            let b = other.get(n);
            a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
        })
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Max over nodes of the Euclidean length.
    pub fn norm_linf(&self) -> f64 {
        (0..self.domain.node_count())
            .map(|n| {
                let v = self.get(n);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Zeroes the Γ nodes.
    pub fn clear_gamma(&mut self) {
        for n in self.domain.gamma_nodes() {
            self.set(n, [0.0; 3]);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.domain.node_count());
        for c in 0..3 {
            out.extend_from_slice(&self.data[c]);
        }
        out
    }

    pub fn from_flat(domain: &BoxDomain, flat: &[f64]) -> Self {
        let n = domain.node_count();
        assert_eq!(flat.len(), 3 * n, "flat vector length");
        Self {
            domain: *domain,
            data: [
                flat[..n].to_vec(),
                flat[n..2 * n].to_vec(),
                flat[2 * n..].to_vec(),
            ],
        }
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &VectorField {
    type Output = VectorField;
    fn mul(self, s: f64) -> VectorField {
        self.scaled(s)
    }
}

impl TensorField {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, t| m.max(t.abs().max()))
    }

    /// Max over nodes of the Frobenius norm.
    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, t| m.max(t.norm()))
    }
}

/// Partial derivative of nodal data along `axis`.
pub fn derivative(domain: &BoxDomain, f: &[f64], axis: usize) -> Vec<f64> {
    let [nx, ny, _] = domain.counts();
    let n = domain.counts()[axis];
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let inv2h = 0.5 / domain.spacing(axis);
    let periodic = domain.is_periodic();
    let mut out = vec![0.0; f.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let i = domain.ijk(idx)[axis];
        let base = idx - i * stride;
        let at = |m: usize| f[base + m * stride];
        *o = if i > 0 && i + 1 < n {
            (at(i + 1) - at(i - 1)) * inv2h
        } else if periodic {
            let (p, m) = if i == 0 { (1, n - 1) } else { (0, n - 2) };
            (at(p) - at(m)) * inv2h
        } else if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h
        } else {
            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h
        };
    }
    out
}

/// `(∇v)_{ab} = ∂v_a/∂x_b`.
pub fn gradient(v: &VectorField) -> TensorField {
    let d = &v.domain;
    let parts: Vec<Vec<f64>> = (0..9).map(|ab| derivative(d, &v.data[ab / 3], ab % 3)).collect();
    let values = (0..d.node_count())
        .map(|n| Matrix3::from_fn(|a, b| parts[3 * a + b][n]))
        .collect();
    TensorField { domain: *d, values }
}

pub fn gradient_scalar(f: &ScalarField) -> VectorField {
    let d = &f.domain;
    VectorField {
        domain: *d,
        data: [
            derivative(d, &f.values, 0),
            derivative(d, &f.values, 1),
            derivative(d, &f.values, 2),
        ],
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let d = &v.domain;
    let mut values = derivative(d, &v.data[0], 0);
    for c in 1..3 {
        for (o, x) in values.iter_mut().zip(derivative(d, &v.data[c], c)) {
            *o += x;
        }
    }
    ScalarField { domain: *d, values }
}

pub fn curl(v: &VectorField) -> VectorField {
    let d = &v.domain;
    let dd = |c: usize, a: usize| derivative(d, &v.data[c], a);
    let sub = |a: Vec<f64>, b: Vec<f64>| a.into_iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    VectorField {
        domain: *d,
        data: [
            sub(dd(2, 1), dd(1, 2)),
            sub(dd(0, 2), dd(2, 0)),
            sub(dd(1, 0), dd(0, 1)),
        ],
    }
}

/// `E(v) = sym ∇v`
pub fn strain(v: &VectorField) -> TensorField {
    let g = gradient(v);
    TensorField {
        domain: g.domain,
        values: g.values.iter().map(|t| 0.5 * (t + t.transpose())).collect(),
    }
}

/// `(∫|v|ᵖ)^{1/p}` with the Euclidean pointwise norm.
pub fn norm_lp(v: &VectorField, p: f64) -> f64 {
    v.domain
        .integrate(|n| {
            let a = v.get(n);
            (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt().powf(p)
        })
        .powf(1.0 / p)
}

/// `(∫|v|ᵖ + ∫|∇v|ᵖ)^{1/p}`, Euclidean and Frobenius pointwise norms.
pub fn norm_w1p(v: &VectorField, p: f64) -> f64 {
    let g = gradient(v);
    w1p_from_parts(v, &g, p)
}

/// Same as [`norm_w1p`] with a caller-supplied gradient.
pub fn w1p_from_parts(v: &VectorField, g: &TensorField, p: f64) -> f64 {
    v.domain
        .integrate(|n| {
            let a = v.get(n);
            (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt().powf(p) + g.values[n].norm().powf(p)
        })
        .powf(1.0 / p)
}

/// [`norm_w1p`] restricted to the index sub-box `lo..=hi` (gradient taken on the full grid).
pub fn norm_w1p_sub_box(v: &VectorField, p: f64, lo: [usize; 3], hi: [usize; 3]) -> f64 {
    let g = gradient(v);
    v.domain
        .integrate_sub_box(lo, hi, |n| {
            let a = v.get(n);
            (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt().powf(p) + g.values[n].norm().powf(p)
        })
        .powf(1.0 / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrisvardReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// `∫|∇ζ|²` against `∫|curl ζ|² + ∫(div ζ)²` for ζ vanishing on the boundary.
pub fn grisvard_check(zeta: &VectorField) -> Result<GrisvardReport, FieldError> {
    let d = &zeta.domain;
    let scale = zeta.max_abs();
    let trace = (0..d.node_count())
        .filter(|&n| d.is_boundary(n))
        .map(|n| zeta.get(n).iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .fold(0.0, f64::max);
    if trace > 1e-12 * scale.max(1e-300) && trace > 0.0 {
        return Err(FieldError::NonzeroTrace(trace));
    }
    let g = gradient(zeta);
    let c = curl(zeta);
    let dv = divergence(zeta);
    let lhs = d.integrate(|n| g.values[n].norm_squared());
    let rhs = d.integrate(|n| {
        let w = c.get(n);
        w[0] * w[0] + w[1] * w[1] + w[2] * w[2] + dv.values[n].powi(2)
    });
    Ok(GrisvardReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

const MAGIC: &[u8; 4] = b"INCF";
const FORMAT_VERSION: u32 = 1;

fn gamma_code(g: GammaMarker) -> [u8; 3] {
    match g {
        GammaMarker::None => [0, 0, 0],
        GammaMarker::FullBoundary => [1, 0, 0],
        GammaMarker::Face { axis, side } => [2, axis as u8, (side == Side::High) as u8],
    }
}

/// Writes nodal data in the `INCF` binary layout.
///
/// All numbers little-endian: magic `INCF`, `u32` version, `3×f64` extents,
/// `3×u32` node counts, `u8` periodic flag, `3×u8` Γ code (kind, axis, side),
/// `u32` component count, then `f64` values component-major in node order.
pub fn write_components<W: Write>(w: &mut W, domain: &BoxDomain, comps: &[&[f64]]) -> Result<(), FieldError> {
    let n = domain.node_count();
    if comps.iter().any(|c| c.len() != n) {
        return Err(FieldError::ShapeMismatch("component length differs from node count".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for e in domain.extents {
        w.write_all(&e.to_le_bytes())?;
    }
    for c in domain.counts {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    w.write_all(&[domain.periodic as u8])?;
    w.write_all(&gamma_code(domain.gamma))?;
    w.write_all(&(comps.len() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * n * comps.len());
    for c in comps {
        for x in c.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_components<R: Read>(r: &mut R) -> Result<(BoxDomain, Vec<Vec<f64>>), FieldError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(FieldError::Format(format!("unsupported version {version}")));
    }
    let mut extents = [0.0; 3];
    for e in &mut extents {
        r.read_exact(&mut b8)?;
        *e = f64::from_le_bytes(b8);
    }
    let mut counts = [0usize; 3];
    for c in &mut counts {
        r.read_exact(&mut b4)?;
        *c = u32::from_le_bytes(b4) as usize;
    }
    let mut flags = [0u8; 4];
    r.read_exact(&mut flags)?;
    let gamma = match flags[1] {
        0 => GammaMarker::None,
        1 => GammaMarker::FullBoundary,
        2 => GammaMarker::Face {
            axis: flags[2] as usize,
            side: if flags[3] == 1 { Side::High } else { Side::Low },
        },
        k => return Err(FieldError::Format(format!("unknown boundary code {k}"))),
    };
    let domain = BoxDomain::build(extents, counts, flags[0] == 1, gamma)?;
    r.read_exact(&mut b4)?;
    let ncomp = u32::from_le_bytes(b4) as usize;
    let n = domain.node_count();
    let mut bytes = vec![0u8; 8 * n * ncomp];
    r.read_exact(&mut bytes)?;
    let comps = (0..ncomp)
        .map(|c| {
            bytes[8 * n * c..8 * n * (c + 1)]
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((domain, comps))
}

impl VectorField {
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<(), FieldError> {
        write_components(w, &self.domain, &[&self.data[0], &self.data[1], &self.data[2]])
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self, FieldError> {
        let (domain, comps) = read_components(r)?;
        let [a, b, c]: [Vec<f64>; 3] = comps
            .try_into()
            .map_err(|_| FieldError::Format("expected 3 components".into()))?;
        Self::from_components(&domain, [a, b, c])
    }

    /// CSV with columns `x,y,z,v1,v2,v3`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), FieldError> {
        writeln!(w, "x,y,z,v1,v2,v3")?;
        for n in 0..self.domain.node_count() {
            let p = self.domain.position(n);
            let v = self.get(n);
            writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e}", p[0], p[1], p[2], v[0], v[1], v[2])?;
        }
        Ok(())
    }
}

impl ScalarField {
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<(), FieldError> {
        write_components(w, &self.domain, &[&self.values])
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self, FieldError> {
        let (domain, mut comps) = read_components(r)?;
        if comps.len() != 1 {
            return Err(FieldError::Format("expected 1 component".into()));
        }
        Ok(Self {
            domain,
            values: comps.pop().unwrap(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::observed_orders;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cube(n: usize) -> BoxDomain {
        BoxDomain::new([1.0, 1.3, 0.8], [n, n + 1, n + 2], GammaMarker::FullBoundary).unwrap()
    }

    #[test]
    fn domain_validation() {
        assert!(BoxDomain::new([1.0; 3], [2, 3, 3], GammaMarker::None).is_err());
        assert!(BoxDomain::new([0.0, 1.0, 1.0], [3; 3], GammaMarker::None).is_err());
        let d = BoxDomain::periodic([1.0; 3], [4; 3]).unwrap();
        assert!(d.with_gamma(GammaMarker::FullBoundary).is_err());
        assert_eq!(d.spacing(0), 0.25);
        let f = BoxDomain::unit_cube(
            5,
            GammaMarker::Face {
                axis: 2,
                side: Side::High,
            },
        )
        .unwrap();
        assert_eq!(f.gamma_nodes().len(), 25);
        assert_eq!(BoxDomain::unit_cube(5, GammaMarker::FullBoundary).unwrap().gamma_nodes().len(), 125 - 27);
    }

    #[test]
    fn gradient_examples() {
        let d = cube(6);
        let g = gradient(&VectorField::from_fn(&d, |x| [x[1], 0.0, 0.0]));
        for t in &g.values {
            let mut e = Matrix3::zeros();
            e[(0, 1)] = 1.0;
            assert!((t - e).abs().max() <= 1e-14);
        }
        let g = gradient(&VectorField::from_fn(&d, |_| [1.0, -2.0, 3.0]));
        assert!(g.max_abs() <= 1e-12);
    }

    #[test]
    fn gradient_order_on_sine() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [9, 17, 33] {
            let d = BoxDomain::unit_cube(n, GammaMarker::None).unwrap();
            let g = gradient(&VectorField::from_fn(&d, |x| [(3.0 * x[1]).sin(), 0.0, 0.0]));
            let err = (0..d.node_count())
                .map(|m| (g.values[m][(0, 1)] - 3.0 * (3.0 * d.position(m)[1]).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
            hs.push(d.spacing(0));
        }
        for o in observed_orders(&hs, &errs) {
            assert!(o >= 1.9, "order {o}");
        }
    }

    #[test]
    fn operators_exact_on_affine_fields() {
        let d = cube(5);
        let a = Matrix3::new(0.3, -1.0, 2.0, 0.5, 0.7, -0.2, 1.1, 0.4, -0.9);
        let v = VectorField::from_fn(&d, |x| {
            let y = a * nalgebra::Vector3::new(x[0], x[1], x[2]);
            [y[0] + 1.0, y[1], y[2] - 2.0]
        });
        for t in &gradient(&v).values {
            assert!((t - a).abs().max() <= 1e-13);
        }
        for x in &divergence(&v).values {
            assert!((x - a.trace()).abs() <= 1e-13);
        }
        let c = curl(&v);
        for n in 0..d.node_count() {
            let w = c.get(n);
            assert!((w[0] - (a[(2, 1)] - a[(1, 2)])).abs() <= 1e-13);
            assert!((w[1] - (a[(0, 2)] - a[(2, 0)])).abs() <= 1e-13);
            assert!((w[2] - (a[(1, 0)] - a[(0, 1)])).abs() <= 1e-13);
        }
    }

    #[test]
    fn div_curl_strain_examples() {
        let d = cube(5);
        for x in divergence(&VectorField::from_fn(&d, |x| x)).values {
            assert!((x - 3.0).abs() <= 1e-13);
        }
        let rot = VectorField::from_fn(&d, |x| [-x[1], x[0], 0.0]);
        let c = curl(&rot);
        for n in 0..d.node_count() {
            let w = c.get(n);
            assert!(w[0].abs() <= 1e-13 && w[1].abs() <= 1e-13 && (w[2] - 2.0).abs() <= 1e-13);
        }
        assert!(strain(&rot).max_abs() <= 1e-13);
        let e = strain(&VectorField::from_fn(&d, |x| [x[1], 0.0, 0.0]));
        for t in &e.values {
            assert!((t[(0, 1)] - 0.5).abs() <= 1e-14 && (t[(1, 0)] - 0.5).abs() <= 1e-14);
            assert_eq!(t, &t.transpose());
        }
    }

    #[test]
    fn quadrature_examples() {
        let d = BoxDomain::unit_cube(5, GammaMarker::None).unwrap();
        assert!((d.integrate(|_| 1.0) - 1.0).abs() <= 1e-14);
        assert_eq!(d.integrate(|_| 0.0), 0.0);
        let d = BoxDomain::unit_cube(65, GammaMarker::None).unwrap();
        let i = d.integrate(|n| (PI * d.position(n)[0]).sin().powi(2));
        assert!((i - 0.5).abs() <= 1e-6);
        let p = BoxDomain::periodic([1.0; 3], [8; 3]).unwrap();
        assert!((p.integrate(|_| 1.0) - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn norm_examples() {
        let d = BoxDomain::unit_cube(9, GammaMarker::None).unwrap();
        assert_eq!(norm_w1p(&VectorField::zeros(&d), 2.0), 0.0);
        let e1 = VectorField::from_fn(&d, |_| [1.0, 0.0, 0.0]);
        assert!((norm_w1p(&e1, 2.0) - 1.0).abs() <= 1e-13);
        // p = 1.5 against a fine-grid oracle
        let f = |x: [f64; 3]| [(x[0] + 2.0 * x[1]).sin(), x[2] * x[0], (x[1] * x[2]).cos()];
        let coarse = norm_w1p(&VectorField::from_fn(&d, f), 1.5);
        let fine_d = BoxDomain::unit_cube(65, GammaMarker::None).unwrap();
        let fine = norm_w1p(&VectorField::from_fn(&fine_d, f), 1.5);
        assert!((coarse - fine).abs() <= 0.01 * fine);
    }

    #[test]
    fn norm_sub_box_monotone() {
        let d = BoxDomain::unit_cube(9, GammaMarker::None).unwrap();
        let v = VectorField::from_fn(&d, |x| [(5.0 * x[0]).sin(), x[1] * x[1], -x[2]]);
        let full = norm_w1p(&v, 1.7);
        assert!((norm_w1p_sub_box(&v, 1.7, [0; 3], [8; 3]) - full).abs() <= 1e-13);
        for (lo, hi) in [([0, 0, 0], [4, 4, 4]), ([2, 1, 3], [7, 8, 5]), ([3, 3, 3], [3, 8, 8])] {
            assert!(norm_w1p_sub_box(&v, 1.7, lo, hi) <= full);
        }
    }

    fn bump_rotation(d: &BoxDomain) -> VectorField {
        VectorField::from_fn(d, |x| {
            let s = (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2) * (PI * x[2]).sin().powi(2);
            [-s * (x[1] - 0.5), s * (x[0] - 0.5), 0.0]
        })
    }

    #[test]
    fn grisvard_examples() {
        let d = BoxDomain::unit_cube(9, GammaMarker::FullBoundary).unwrap();
        let r = grisvard_check(&VectorField::zeros(&d)).unwrap();
        assert_eq!((r.lhs, r.rhs, r.gap), (0.0, 0.0, 0.0));
        assert!(grisvard_check(&VectorField::from_fn(&d, |_| [1.0, 0.0, 0.0])).is_err());
        // Difference operators along distinct axes commute and the boundary
        // rows only ever meet zero nodal values, so the discrete identity is
        // exact up to round-off rather than O(h²).
        for n in [17, 33, 65] {
            let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary).unwrap();
            let r = grisvard_check(&bump_rotation(&d)).unwrap();
            assert!(r.gap <= 1e-12 * r.lhs, "n={n} {r:?}");
        }
    }

    #[test]
    fn grisvard_holds_for_rough_fields() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = BoxDomain::new([1.0, 0.7, 1.3], [7, 9, 8], GammaMarker::FullBoundary).unwrap();
        let mut z = VectorField::from_fn(&d, |_| [rng.gen(), rng.gen(), rng.gen()]);
        for n in 0..d.node_count() {
            if d.is_boundary(n) {
                z.set(n, [0.0; 3]);
            }
        }
        let r = grisvard_check(&z).unwrap();
        assert!(r.gap <= 1e-12 * r.lhs, "{r:?}");
    }

    #[test]
    fn grisvard_gradient_field() {
        // ζ = ∇φ sampled from the closed form, φ a fourth-power bump
        let d = BoxDomain::unit_cube(17, GammaMarker::FullBoundary).unwrap();
        let s = |t: f64| (PI * t).sin().powi(4);
        let ds = |t: f64| 4.0 * PI * (PI * t).sin().powi(3) * (PI * t).cos();
        let mut z = VectorField::from_fn(&d, |x| {
            [ds(x[0]) * s(x[1]) * s(x[2]), s(x[0]) * ds(x[1]) * s(x[2]), s(x[0]) * s(x[1]) * ds(x[2])]
        });
        for n in 0..d.node_count() {
            if d.is_boundary(n) {
                z.set(n, [0.0; 3]);
            }
        }
        let r = grisvard_check(&z).unwrap();
        assert!(curl(&z).norm_l2() <= 0.05 * r.lhs.sqrt());
        assert!(r.gap <= 1e-12 * r.lhs, "{r:?}");
    }

    #[test]
    fn div_curl_vanishes_to_second_order() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [17, 33, 65] {
            let d = BoxDomain::unit_cube(n, GammaMarker::FullBoundary).unwrap();
            let dc = divergence(&curl(&bump_rotation(&d)));
            errs.push(dc.norm_l2());
            hs.push(d.spacing(0));
        }
        for (o, e) in observed_orders(&hs, &errs).into_iter().zip(&errs[1..]) {
            assert!(*e <= 1e-12 || o >= 1.5, "order {o}, errors {errs:?}");
        }
    }

    #[test]
    fn binary_rejects_garbage() {
        let mut bytes: &[u8] = b"NOPE0000";
        assert!(VectorField::read_binary(&mut bytes).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(
            n in 3usize..6,
            periodic in any::<bool>(),
            vals in prop::collection::vec(-1e6f64..1e6, 3 * 125),
        ) {
            let d = if periodic {
                BoxDomain::periodic([1.0, 2.0, 0.5], [n, n, n]).unwrap()
            } else {
                BoxDomain::new([1.0, 2.0, 0.5], [n, n, n], GammaMarker::Face { axis: 1, side: Side::High }).unwrap()
            };
            let m = d.node_count();
            let v = VectorField::from_components(
                &d,
                [vals[..m].to_vec(), vals[m..2 * m].to_vec(), vals[2 * m..3 * m].to_vec()],
            ).unwrap();
            let mut buf = Vec::new();
            v.write_binary(&mut buf).unwrap();
            let back = VectorField::read_binary(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
