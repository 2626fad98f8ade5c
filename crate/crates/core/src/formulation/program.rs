use serde::{Deserialize, Serialize};

/// Cone attached to a contiguous block of constraint rows `s = b - A x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "dim", rename_all = "snake_case")]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(self) -> usize {
        match self {
            Cone::Zero(d) | Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
        }
    }
}

/// Standard conic form
///
/// ```text
/// minimize    1/2 x' P x + q' x
/// subject to  A x + s = b,  s in K
/// ```
///
/// with `P` stored as upper-triangular triplets and `K` a product of the
/// listed cones taken in row order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n: usize,
    pub p: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(n: usize) -> Self {
        ConicProgram {
            n,
            q: vec![0.0; n],
            ..Default::default()
        }
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Adds `1/2 x_I' H x_I` for the variables starting at `offset`.
    pub fn add_quadratic(&mut self, offset: usize, h: &nalgebra::DMatrix<f64>) {
        for j in 0..h.ncols() {
            for i in 0..=j {
                let v = h[(i, j)];
                if v != 0.0 {
                    self.p.push((offset + i, offset + j, v));
                }
            }
        }
    }

    /// Appends a block of rows. `rows[r]` lists `(column, coefficient)`.
    /// Consecutive zero or nonnegative blocks are merged.
    pub fn push_block(&mut self, cone: Cone, rows: Vec<Vec<(usize, f64)>>, b: Vec<f64>) -> usize {
        assert_eq!(rows.len(), b.len());
        assert_eq!(rows.len(), cone.dim());
        let start = self.m();
        for (r, row) in rows.into_iter().enumerate() {
            for (c, v) in row {
                if v != 0.0 {
                    self.a.push((start + r, c, v));
                }
            }
        }
        self.b.extend(b);
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Zero(d)), Cone::Zero(e)) | (Some(Cone::Nonnegative(d)), Cone::Nonnegative(e)) => {
                *d += e
            }
            _ => self.cones.push(cone),
        }
        start
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v: f64 = self.q.iter().zip(x).map(|(q, x)| q * x).sum();
        for &(i, j, p) in &self.p {
            let w = p * x[i] * x[j];
            v += if i == j { 0.5 * w } else { w };
        }
        v
    }

    /// `P x` with the symmetric completion of the stored triangle.
    pub fn p_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, p) in &self.p {
            out[i] += p * x[j];
            if i != j {
                out[j] += p * x[i];
            }
        }
        out
    }

    pub fn a_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for &(r, c, v) in &self.a {
            out[r] += v * x[c];
        }
        out
    }

    pub fn at_times(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(r, c, v) in &self.a {
            out[c] += v * z[r];
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }
}
