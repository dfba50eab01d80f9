use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Largest phase-space dimension the grid machinery accepts.
pub const MAX_GRID_DIM: usize = 4;
/// Floor applied before taking logs of grid densities.
pub const LOG_FLOOR: f64 = 1e-300;
const MAGIC: &[u8; 8] = b"QFGRID1\n";

/// Periodic tensor grid; axis `a` holds `lo_a + k·h_a`, `k < n_a`,
/// `h_a = (hi_a − lo_a)/n_a`. Flattened row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    n: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl GridGeometry {
    pub fn new(n: Vec<usize>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = n.len();
        if d == 0 || lo.len() != d || hi.len() != d {
            return Err(Error::InvalidConfig("grid axes disagree in length".into()));
        }
        if d > MAX_GRID_DIM {
            return Err(Error::DimensionLimit(d));
        }
        if n.iter().any(|&k| k < 4 || k % 2 != 0) {
            return Err(Error::InvalidConfig("grid sizes must be even and ≥ 4".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidConfig("grid extents must satisfy lo < hi".into()));
        }
        Ok(Self { n, lo, hi })
    }

    /// `n` points per axis on `[−L, L)` in every dimension.
    pub fn cube(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![n; dim], vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.n
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.n[axis] as f64
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Distance in the flat array between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n[axis + 1..].iter().product()
    }

    /// Writes the coordinates of flat index `idx` into `x`.
    pub fn point(&self, mut idx: usize, x: &mut [f64]) {
        for a in (0..self.dim()).rev() {
            let k = idx % self.n[a];
            idx /= self.n[a];
            x[a] = self.lo[a] + k as f64 * self.spacing(a);
        }
    }

    /// True when any coordinate of `idx` sits on the lower (identified) edge.
    pub fn on_boundary(&self, mut idx: usize) -> bool {
        for a in (0..self.dim()).rev() {
            if idx % self.n[a] == 0 {
                return true;
            }
            idx /= self.n[a];
        }
        false
    }
}

/// Density values on a [`GridGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    geom: GridGeometry,
    values: Vec<f64>,
}

impl GridState {
    pub fn new(geom: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::DimensionMismatch {
                expected: geom.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values".into()));
        }
        Ok(Self { geom, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(geom: GridGeometry, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let d = geom.dim();
        let g = &geom;
        let values = crate::par::map_init(
            geom.len(),
            || vec![0.0; d],
            |x, i| {
                g.point(i, x);
                f(x)
            },
        );
        Self::new(geom, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Trapezoidal rule, which on a periodic grid is the plain cell sum.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.geom.cell_volume()
    }

    /// Clips negatives, zeroes the boundary and rescales to unit mass.
    pub fn project(&mut self) {
        project_values(&self.geom, &mut self.values);
    }

    /// Multilinear interpolation of `ln max(Q, 1e-300)`; points off the grid
    /// get the floor.
    pub fn log_density_at(&self, x: &[f64]) -> f64 {
        let d = self.geom.dim();
        let floor = LOG_FLOOR.ln();
        let mut base = 0usize;
        let mut frac = [0.0f64; MAX_GRID_DIM];
        let mut step = [0usize; MAX_GRID_DIM];
        for a in 0..d {
            let h = self.geom.spacing(a);
            let u = (x[a] - self.geom.lo[a]) / h;
            let n = self.geom.n[a];
            if !(u >= 0.0) || u > (n - 1) as f64 {
                return floor;
            }
            let k = (u.floor() as usize).min(n - 2);
            frac[a] = u - k as f64;
            let s = self.geom.stride(a);
            base += k * s;
            step[a] = s;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += step[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx].max(LOG_FLOOR).ln();
            }
        }
        acc
    }

    /// Draws points by inverse CDF over cells, then uniformly within the cell.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut cdf = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        for &v in &self.values {
            acc += v.max(0.0);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::DegenerateSupport);
        }
        let d = self.geom.dim();
        let mut out = vec![0.0; n * d];
        for row in out.chunks_mut(d) {
            let u = rng.random::<f64>() * acc;
            let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            self.geom.point(idx, row);
            for (a, v) in row.iter_mut().enumerate() {
                *v += (rng.random::<f64>() - 0.5) * self.geom.spacing(a);
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.geom.dim() as u32).to_le_bytes())?;
        for a in 0..self.geom.dim() {
            w.write_all(&(self.geom.n[a] as u64).to_le_bytes())?;
            w.write_all(&self.geom.lo[a].to_le_bytes())?;
            w.write_all(&self.geom.hi[a].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a grid state".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        if d == 0 || d > MAX_GRID_DIM {
            return Err(Error::Format(format!("grid dimension {d}")));
        }
        let (mut n, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..d {
            r.read_exact(&mut b8)?;
            n.push(u64::from_le_bytes(b8) as usize);
            r.read_exact(&mut b8)?;
            lo.push(f64::from_le_bytes(b8));
            r.read_exact(&mut b8)?;
            hi.push(f64::from_le_bytes(b8));
        }
        let geom = GridGeometry::new(n, lo, hi).map_err(|e| Error::Format(e.to_string()))?;
        let mut values = vec![0.0; geom.len()];
        for v in &mut values {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Self::new(geom, values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

pub(crate) fn project_values(geom: &GridGeometry, values: &mut [f64]) {
    for (i, v) in values.iter_mut().enumerate() {
        if *v < 0.0 || geom.on_boundary(i) {
            *v = 0.0;
        }
    }
    let mass = values.iter().sum::<f64>() * geom.cell_volume();
    if mass > 0.0 {
        let s = 1.0 / mass;
        values.iter_mut().for_each(|v| *v *= s);
    }
}
