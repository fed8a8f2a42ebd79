//! Least-distance quadratic programs: `min ½‖y − x‖²` subject to linear
//! equalities and inequalities.
//!
//! Dual active-set method (Goldfarb–Idnani) with identity Hessian. The
//! iteration starts from the unconstrained minimizer `y = x` and adds the
//! most violated constraint each round, so no feasible starting point is
//! needed. An empty dual step direction proves infeasibility.

use crate::tensor::{dot_unchecked, norm2};

/// `normalᵀ y ≥ rhs`, or `= rhs` when `equality` is set.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub normal: Vec<f64>,
    pub rhs: f64,
    pub equality: bool,
}

#[derive(Debug, Clone)]
pub struct LdpSolution {
    pub point: Vec<f64>,
    /// Indices into the constraint list, in the order they entered.
    pub active: Vec<usize>,
    /// Lagrange multipliers for `active`, with respect to unit normals.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    /// Max of stationarity, dual sign and complementarity residuals.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub enum LdpFailure {
    Infeasible { constraint: usize },
    IterationLimit { point: Vec<f64>, iterations: usize },
}

/// Normals of zero length are either trivially satisfied or make the
/// problem infeasible; both are resolved before the main loop.
struct Prepared {
    normals: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    equality: Vec<bool>,
    live: Vec<bool>,
}

fn prepare(cons: &[LinearConstraint], tol: f64) -> Result<Prepared, LdpFailure> {
    let mut p = Prepared {
        normals: Vec::with_capacity(cons.len()),
        rhs: Vec::with_capacity(cons.len()),
        equality: Vec::with_capacity(cons.len()),
        live: Vec::with_capacity(cons.len()),
    };
    for (k, c) in cons.iter().enumerate() {
        let n = norm2(&c.normal);
        if n == 0.0 {
            let ok = if c.equality {
                c.rhs.abs() <= tol
            } else {
                c.rhs <= tol
            };
            if !ok {
                return Err(LdpFailure::Infeasible { constraint: k });
            }
            p.normals.push(c.normal.clone());
            p.rhs.push(c.rhs);
            p.live.push(false);
        } else {
            p.normals.push(c.normal.iter().map(|v| v / n).collect());
            p.rhs.push(c.rhs / n);
            p.live.push(true);
        }
        p.equality.push(c.equality);
    }
    Ok(p)
}

/// Orthonormal basis of the active normals plus the triangular factor,
/// rebuilt from scratch after every change of the working set.
struct Basis {
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

impl Basis {
    fn build(cols: &[Vec<f64>]) -> Basis {
        let m = cols.len();
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut r = vec![vec![0.0; m]; m];
        for (j, c) in cols.iter().enumerate() {
            let mut v = c.clone();
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for (i, qi) in q.iter().enumerate() {
                    let h = dot_unchecked(qi, &v);
                    r[i][j] += h;
                    for (vk, qk) in v.iter_mut().zip(qi) {
                        *vk -= h * qk;
                    }
                }
            }
            let nv = norm2(&v);
            r[j][j] = nv;
            q.push(v.into_iter().map(|x| x / nv).collect());
        }
        Basis { q, r }
    }

    /// Returns the component of `n` orthogonal to the active normals and the
    /// coefficients expressing the remainder in terms of those normals.
    fn split(&self, n: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.q.len();
        let mut z = n.to_vec();
        let mut d = vec![0.0; m];
        for _ in 0..2 {
            for (i, qi) in self.q.iter().enumerate() {
                let h = dot_unchecked(qi, &z);
                d[i] += h;
                for (zk, qk) in z.iter_mut().zip(qi) {
                    *zk -= h * qk;
                }
            }
        }
        let mut coef = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = d[i];
            for k in i + 1..m {
                s -= self.r[i][k] * coef[k];
            }
            coef[i] = s / self.r[i][i];
        }
        (z, coef)
    }
}

/// Solves the least-distance problem. `tol` is the violation (in units of
/// distance along unit normals) below which a constraint counts as satisfied.
pub fn least_distance(
    x: &[f64],
    cons: &[LinearConstraint],
    tol: f64,
    max_iter: usize,
) -> Result<LdpSolution, LdpFailure> {
    let p = prepare(cons, tol)?;
    let dim = x.len();
    let dep_tol = 1e-10;
    let mut y = x.to_vec();
    // active entries: (constraint index, sign applied to its normal)
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_set = vec![false; cons.len()];
    let mut redundant = vec![false; cons.len()];
    let mut iterations = 0;

    let signed_normals = |active: &[(usize, f64)]| -> Vec<Vec<f64>> {
        active
            .iter()
            .map(|&(k, s)| p.normals[k].iter().map(|v| v * s).collect())
            .collect()
    };
    let mut basis = Basis::build(&[]);

    loop {
        // equalities enter first, lowest index first; then the most violated
        // inequality, lowest index on ties
        let mut pick: Option<(usize, f64)> = None;
        for k in 0..cons.len() {
            if p.live[k] && p.equality[k] && !in_set[k] && !redundant[k] {
                let s = dot_unchecked(&p.normals[k], &y) - p.rhs[k];
                pick = Some((k, if s > 0.0 { -1.0 } else { 1.0 }));
                break;
            }
        }
        if pick.is_none() {
            let mut worst = -tol;
            for k in 0..cons.len() {
                if p.live[k] && !p.equality[k] && !in_set[k] {
                    let s = dot_unchecked(&p.normals[k], &y) - p.rhs[k];
                    if s < worst {
                        worst = s;
                        pick = Some((k, 1.0));
                    }
                }
            }
        }
        let Some((k, sign)) = pick else {
            break;
        };
        let np: Vec<f64> = p.normals[k].iter().map(|v| v * sign).collect();
        let bp = p.rhs[k] * sign;
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(LdpFailure::IterationLimit {
                    point: y,
                    iterations: max_iter,
                });
            }
            let s = dot_unchecked(&np, &y) - bp;
            let (z, r) = basis.split(&np);
            let z_norm = norm2(&z);

            // largest dual step keeping active inequality multipliers ≥ 0
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (pos, (&(c, _), &rj)) in active.iter().zip(&r).enumerate() {
                if !p.equality[c] && rj > 0.0 {
                    let ratio = u[pos] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(pos);
                    }
                }
            }

            if z_norm <= dep_tol {
                if p.equality[k] && s.abs() <= tol {
                    redundant[k] = true;
                    break;
                }
                if s >= -tol && !p.equality[k] {
                    // became satisfied through earlier partial steps
                    break;
                }
                let Some(pos) = drop_at else {
                    return Err(LdpFailure::Infeasible { constraint: k });
                };
                for (uj, rj) in u.iter_mut().zip(&r) {
                    *uj -= t1 * rj;
                }
                u_plus += t1;
                in_set[active[pos].0] = false;
                active.remove(pos);
                u.remove(pos);
                basis = Basis::build(&signed_normals(&active));
                continue;
            }

            let t2 = (-s / (z_norm * z_norm)).max(0.0);
            let t = t1.min(t2);
            for (yi, zi) in y.iter_mut().zip(&z) {
                *yi += t * zi;
            }
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= t * rj;
            }
            u_plus += t;
            if t2 <= t1 {
                active.push((k, sign));
                u.push(u_plus);
                in_set[k] = true;
                basis = Basis::build(&signed_normals(&active));
                break;
            }
            let pos = drop_at.expect("finite t1 has a blocking index");
            in_set[active[pos].0] = false;
            active.remove(pos);
            u.remove(pos);
            basis = Basis::build(&signed_normals(&active));
        }
        debug_assert_eq!(y.len(), dim);
    }

    let kkt_residual = kkt(x, &y, &p, &active, &u);
    Ok(LdpSolution {
        point: y,
        active: active.iter().map(|&(k, _)| k).collect(),
        multipliers: active.iter().zip(&u).map(|(&(_, s), &m)| s * m).collect(),
        iterations,
        kkt_residual,
    })
}

fn kkt(x: &[f64], y: &[f64], p: &Prepared, active: &[(usize, f64)], u: &[f64]) -> f64 {
    // stationarity: y − x = Σ u_c · sign_c · n_c
    let mut g: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let mut worst: f64 = 0.0;
    for (&(c, s), &uc) in active.iter().zip(u) {
        for (gi, ni) in g.iter_mut().zip(&p.normals[c]) {
            *gi -= uc * s * ni;
        }
        if !p.equality[c] {
            worst = worst.max(-uc);
        }
        let slack = dot_unchecked(&p.normals[c], y) - p.rhs[c];
        worst = worst.max((uc * slack).abs());
    }
    let stationarity = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    worst.max(stationarity)
}
