//! Active-set Newton refinement of an interior-point solution.
//!
//! Each cone block is classified as inactive (`z = 0`), pinned (`s = 0`) or
//! on the boundary of a second-order cone (`s_0 = |s_1|`, `z` on the
//! opposite ray). The resulting smooth equality-constrained KKT system is
//! solved by Newton's method; blocks whose multipliers or slacks leave
//! their cone are reclassified and the solve repeated.

use nalgebra::{DMatrix, DVector};

use crate::formulation::{Cone, ConicProgram};

use super::KktResiduals;

/// Dense refinement is skipped above this many variables plus rows.
const SIZE_LIMIT: usize = 3000;
const CLASSIFY: f64 = 1e-6;
const NEWTON_STEPS: usize = 60;
const ROUNDS: usize = 6;
const REG: f64 = 1e-9;
const REFINE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Free,
    Pinned,
    Boundary,
}

#[derive(Debug, Clone)]
struct Block {
    start: usize,
    len: usize,
    soc: bool,
    state: State,
}

pub(crate) struct Polished {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub kkt: KktResiduals,
}

fn blocks(program: &ConicProgram, s: &[f64], z: &[f64]) -> Vec<Block> {
    let mut out = Vec::new();
    let mut row = 0;
    for cone in &program.cones {
        match *cone {
            Cone::Zero(d) => {
                out.push(Block { start: row, len: d, soc: false, state: State::Pinned });
                row += d;
            }
            Cone::Nonnegative(d) => {
                for r in row..row + d {
                    let state = if s[r] < z[r] { State::Pinned } else { State::Free };
                    out.push(Block { start: r, len: 1, soc: false, state });
                }
                row += d;
            }
            Cone::SecondOrder(d) => {
                let (s0, z0) = (s[row], z[row]);
                let state = if s0 <= z0 {
                    if s0 <= CLASSIFY { State::Pinned } else { State::Boundary }
                } else if z0 <= CLASSIFY {
                    State::Free
                } else {
                    State::Boundary
                };
                out.push(Block { start: row, len: d, soc: true, state });
                row += d;
            }
        }
    }
    out
}

fn tail_norm(v: &[f64]) -> f64 {
    v[1..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Dense {
    p: DMatrix<f64>,
    a: DMatrix<f64>,
    q: DVector<f64>,
    b: DVector<f64>,
}

impl Dense {
    fn new(program: &ConicProgram) -> Self {
        let n = program.n;
        let m = program.m();
        let mut p = DMatrix::zeros(n, n);
        for &(i, j, v) in &program.p {
            p[(i, j)] += v;
            if i != j {
                p[(j, i)] += v;
            }
        }
        let mut a = DMatrix::zeros(m, n);
        for &(r, c, v) in &program.a {
            a[(r, c)] += v;
        }
        Dense {
            p,
            a,
            q: DVector::from_column_slice(&program.q),
            b: DVector::from_column_slice(&program.b),
        }
    }

    fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * x
    }
}

/// Gradient and Hessian of `|s_1| - s_0` in `x` for a boundary block.
fn boundary_terms(d: &Dense, blk: &Block, s: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
    let s1 = s.rows(blk.start + 1, blk.len - 1);
    let norm = s1.norm();
    if norm == 0.0 {
        return None;
    }
    let u = s1 / norm;
    let a0 = d.a.row(blk.start).transpose();
    let a1 = d.a.rows(blk.start + 1, blk.len - 1);
    let grad = &a0 - a1.transpose() * &u;
    let proj = DMatrix::identity(blk.len - 1, blk.len - 1) - &u * u.transpose();
    let hess = a1.transpose() * proj * a1 / norm;
    Some((grad, hess, norm - s[blk.start]))
}

/// Solves `K v = rhs` through the quasi-definite shift `K + diag(d, -d)` and
/// iterative refinement, which tolerates repeated rows and free columns.
fn regularized_solve(k: &DMatrix<f64>, n: usize, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let dim = k.nrows();
    let mut shifted = k.clone();
    for i in 0..dim {
        shifted[(i, i)] += if i < n { REG } else { -REG };
    }
    let lu = shifted.lu();
    let mut v = lu.solve(rhs)?;
    let target = 1e-15 * (1.0 + rhs.amax());
    for _ in 0..REFINE {
        let r = rhs - k * &v;
        if r.amax() <= target {
            break;
        }
        v += lu.solve(&r)?;
    }
    v.iter().all(|x| x.is_finite()).then_some(v)
}

/// Infinity norm of the KKT equations of the current classification.
fn residual(
    d: &Dense,
    pinned: &[usize],
    boundary: &[&Block],
    x: &DVector<f64>,
    ze: &[f64],
    zeta: &[f64],
) -> Option<f64> {
    let s = d.slack(x);
    let mut stat = &d.p * x + &d.q;
    let mut worst: f64 = 0.0;
    for (e, &r) in pinned.iter().enumerate() {
        stat += d.a.row(r).transpose() * ze[e];
        worst = worst.max(s[r].abs());
    }
    for (j, blk) in boundary.iter().enumerate() {
        let (g, _, hval) = boundary_terms(d, blk, &s)?;
        stat += g * zeta[j];
        worst = worst.max(hval.abs());
    }
    Some(worst.max(stat.amax()))
}

/// Damped Newton iterations on the equality system of the current
/// classification. Returns `(x, multipliers of pinned rows, multipliers of
/// boundary blocks)`.
fn newton(
    d: &Dense,
    blocks: &[Block],
    x0: &DVector<f64>,
    z0: &[f64],
) -> Option<(DVector<f64>, Vec<f64>, Vec<f64>)> {
    let n = x0.len();
    let pinned: Vec<usize> = blocks
        .iter()
        .filter(|b| b.state == State::Pinned)
        .flat_map(|b| b.start..b.start + b.len)
        .collect();
    let boundary: Vec<&Block> = blocks.iter().filter(|b| b.state == State::Boundary).collect();
    let (ne, nb) = (pinned.len(), boundary.len());
    let dim = n + ne + nb;

    let mut x = x0.clone();
    let mut zeta: Vec<f64> = boundary.iter().map(|b| z0[b.start]).collect();
    let mut ze: Vec<f64> = pinned.iter().map(|&r| z0[r]).collect();
    let mut current = residual(d, &pinned, &boundary, &x, &ze, &zeta)?;
    for _ in 0..NEWTON_STEPS {
        if current <= 1e-15 {
            break;
        }
        let s = d.slack(&x);
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        k.view_mut((0, 0), (n, n)).copy_from(&d.p);
        for (e, &r) in pinned.iter().enumerate() {
            let row = d.a.row(r);
            for c in 0..n {
                k[(c, n + e)] = row[c];
                k[(n + e, c)] = row[c];
            }
            rhs[n + e] = s[r];
        }
        for (j, blk) in boundary.iter().enumerate() {
            let (g, h, hval) = boundary_terms(d, blk, &s)?;
            let mut tl = k.view_mut((0, 0), (n, n));
            tl += h * zeta[j];
            for c in 0..n {
                k[(c, n + ne + j)] = g[c];
                k[(n + ne + j, c)] = g[c];
            }
            rhs[n + ne + j] = -hval;
        }
        // multipliers enter at their new values
        rhs.rows_mut(0, n).copy_from(&(-(&d.p * &x + &d.q)));
        let step = regularized_solve(&k, n, &rhs)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1e-4 {
            let xt = &x + step.rows(0, n) * alpha;
            let zet: Vec<f64> = ze.iter().zip(step.rows(n, ne).iter()).map(|(a, b)| a + alpha * (b - a)).collect();
            let zt: Vec<f64> = zeta.iter().zip(step.rows(n + ne, nb).iter()).map(|(a, b)| a + alpha * (b - a)).collect();
            if let Some(r) = residual(d, &pinned, &boundary, &xt, &zet, &zt) {
                if r < current {
                    (x, ze, zeta, current) = (xt, zet, zt, r);
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((x, ze, zeta))
}

/// Refines `(x, s, z)`; `None` when the refinement does not certify a
/// point with smaller residuals than `kkt`.
pub(crate) fn polish(program: &ConicProgram, x: &[f64], s: &[f64], z: &[f64], kkt: f64) -> Option<Polished> {
    if program.n + program.m() > SIZE_LIMIT || x.len() != program.n || z.len() != program.m() {
        return None;
    }
    let d = Dense::new(program);
    let mut blocks = blocks(program, s, z);
    let x0 = DVector::from_column_slice(x);
    let scale = 1.0 + d.b.amax().max(d.q.amax());
    let eps = 1e-12 * scale;

    for _ in 0..ROUNDS {
        let (xn, ze, zeta) = newton(&d, &blocks, &x0, z)?;
        let mut sn = d.slack(&xn);
        let mut zn = DVector::zeros(program.m());
        let (mut e, mut j) = (0, 0);
        let mut changed = false;
        for blk in blocks.iter_mut() {
            let rows = blk.start..blk.start + blk.len;
            match blk.state {
                State::Pinned => {
                    for r in rows {
                        zn[r] = ze[e];
                        sn[r] = 0.0;
                        e += 1;
                    }
                    let zb = zn.rows(blk.start, blk.len);
                    let outside = if blk.soc {
                        zb[0] < tail_norm(zb.as_slice()) - eps
                    } else {
                        blk.len == 1 && zb[0] < -eps
                    };
                    if outside {
                        blk.state = if blk.soc { State::Boundary } else { State::Free };
                        changed = true;
                    }
                }
                State::Free => {
                    let sb = sn.rows(blk.start, blk.len);
                    let outside = if blk.soc {
                        sb[0] < tail_norm(sb.as_slice()) - eps
                    } else {
                        sb[0] < -eps
                    };
                    if outside {
                        blk.state = if blk.soc { State::Boundary } else { State::Pinned };
                        changed = true;
                    }
                }
                State::Boundary => {
                    let zeta_j = zeta[j];
                    j += 1;
                    let sb = sn.rows(blk.start + 1, blk.len - 1).clone_owned();
                    let norm = sb.norm();
                    if zeta_j < -eps {
                        blk.state = State::Free;
                        changed = true;
                    } else if norm <= eps {
                        blk.state = State::Pinned;
                        changed = true;
                    } else {
                        zn[blk.start] = zeta_j;
                        zn.rows_mut(blk.start + 1, blk.len - 1).copy_from(&(-(&sb / norm) * zeta_j));
                        sn[blk.start] = norm;
                    }
                }
            }
        }
        if changed {
            continue;
        }
        let (xv, sv, zv): (Vec<f64>, Vec<f64>, Vec<f64>) =
            (xn.iter().copied().collect(), sn.iter().copied().collect(), zn.iter().copied().collect());
        let refined = KktResiduals::evaluate(program, &xv, &sv, &zv);
        if refined.max() < kkt {
            return Some(Polished { x: xv, s: sv, z: zv, kkt: refined });
        }
        return None;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snaps_group_to_exact_zero() {
        // minimize 1/2 (x - 1)^2 + 2 t  s.t. |x| <= t  -> x = 0, t = 0
        let mut p = ConicProgram::new(2);
        p.p.push((0, 0, 1.0));
        p.q = vec![-1.0, 2.0];
        p.push_block(Cone::SecondOrder(2), vec![vec![(1, -1.0)], vec![(0, -1.0)]], vec![0.0, 0.0]);
        let x = [1e-7, 1.2e-7];
        let s = [1.2e-7, 1e-7];
        let z = [2.0, -1.0];
        let out = polish(&p, &x, &s, &z, 1e-6).expect("refined");
        assert!(out.x.iter().all(|v| v.abs() < 1e-15));
        assert!((out.z[0] - 2.0).abs() < 1e-14 && (out.z[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn aligns_boundary_group() {
        // minimize 1/2 |x - c|^2 + t  s.t. |x| <= t; optimum x = c (1 - 1/|c|)
        let mut p = ConicProgram::new(3);
        p.p.push((0, 0, 1.0));
        p.p.push((1, 1, 1.0));
        let c = [3.0, 4.0];
        p.q = vec![-c[0], -c[1], 1.0];
        p.push_block(
            Cone::SecondOrder(3),
            vec![vec![(2, -1.0)], vec![(0, -1.0)], vec![(1, -1.0)]],
            vec![0.0; 3],
        );
        // slightly misaligned start
        let x = [2.4001, 3.1999, 4.0];
        let s = [4.0, 2.4001, 3.1999];
        let z = [1.0, -0.6, -0.8];
        let out = polish(&p, &x, &s, &z, 1e-3).expect("refined");
        assert!((out.x[0] - 2.4).abs() < 1e-13 && (out.x[1] - 3.2).abs() < 1e-13);
        assert!(out.kkt.max() < 1e-14);
    }
}
