//! Independent reference implementations and random instance generators
//! shared by the integration tests. Nothing here calls the solvers under
//! test.
#![allow(dead_code)]

use fsg_core::{Layer, LinearHead, Matrix, MlpNetwork};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform_vec(rng: &mut StdRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Head with standard normal weights (features x classes) and bias.
pub fn random_head(rng: &mut StdRng, features: usize, classes: usize) -> LinearHead {
    let w = Matrix::new(features, classes, normal_vec(rng, features * classes)).unwrap();
    LinearHead::new(w, normal_vec(rng, classes)).unwrap()
}

/// Dense+ReLU network on the unit box with He-normal weights.
pub fn random_mlp(rng: &mut StdRng, input: usize, depth: usize, max_width: usize) -> MlpNetwork {
    let mut layers = Vec::new();
    let mut w_in = input;
    for _ in 0..depth {
        let w_out = rng.random_range(2..=max_width);
        let n = Normal::new(0.0, (2.0 / w_in as f64).sqrt()).unwrap();
        let data: Vec<f64> = (0..w_in * w_out).map(|_| n.sample(rng)).collect();
        let b: Vec<f64> = (0..w_out).map(|_| 0.1 * n.sample(rng)).collect();
        layers.push(Layer::dense(Matrix::new(w_in, w_out, data).unwrap(), b));
        layers.push(Layer::Relu);
        w_in = w_out;
    }
    MlpNetwork::with_unit_box(layers).unwrap()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting; `None` when the matrix is
/// numerically singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[piv][col].abs() <= 1e-11 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Projection of `x` onto `{y : A y = c}`; `None` for dependent rows.
fn project_affine(x: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return Some(x.to_vec());
    }
    let gram: Vec<Vec<f64>> = rows.iter().map(|r| rows.iter().map(|s| dotp(r, s)).collect()).collect();
    let resid: Vec<f64> = rows.iter().zip(rhs).map(|(r, c)| dotp(r, x) - c).collect();
    let lambda = solve_dense(gram, resid)?;
    let mut y = x.to_vec();
    for (r, l) in rows.iter().zip(&lambda) {
        for (yi, ri) in y.iter_mut().zip(r) {
            *yi -= l * ri;
        }
    }
    Some(y)
}

/// Closest flip point between classes `i` and `j` by trying every subset
/// of inequality constraints as the active set. Returns the distance and
/// point, or `None` when no subset gives a feasible point.
pub fn flip_oracle(head: &LinearHead, x: &[f64], i: usize, j: usize) -> Option<(f64, Vec<f64>)> {
    let f = x.len();
    let w = head.weights();
    let b = head.bias();
    let col = |k: usize| -> Vec<f64> { (0..f).map(|r| w.get(r, k)).collect() };
    let diff = |k: usize| -> Vec<f64> { col(i).iter().zip(col(k)).map(|(a, c)| a - c).collect() };
    // Inequalities as (row, rhs) meaning row·y >= rhs.
    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..head.classes() {
        if k != i && k != j {
            ineq.push((diff(k), b[k] - b[i]));
        }
    }
    for l in 0..f {
        let mut e = vec![0.0; f];
        e[l] = 1.0;
        ineq.push((e, 0.0));
    }
    let eq = (diff(j), b[j] - b[i]);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << ineq.len()) {
        let mut rows = vec![eq.0.clone()];
        let mut rhs = vec![eq.1];
        for (k, (r, c)) in ineq.iter().enumerate() {
            if mask & (1 << k) != 0 {
                rows.push(r.clone());
                rhs.push(*c);
            }
        }
        if rows.len() > f {
            continue;
        }
        let Some(y) = project_affine(x, &rows, &rhs) else { continue };
        let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        if (dotp(&eq.0, &y) - eq.1).abs() > tol {
            continue;
        }
        if ineq.iter().any(|(r, c)| dotp(r, &y) < c - tol) {
            continue;
        }
        let d = euclid(x, &y);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, y));
        }
    }
    best
}

/// Distance from `q` to the convex hull of `points`: every subset of at
/// most `dim + 1` points is a candidate face; the query is projected onto
/// its affine hull and kept when the barycentric weights are nonnegative.
pub fn hull_oracle(points: &[Vec<f64>], q: &[f64]) -> f64 {
    let m = points.len();
    let dim = q.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|&k| mask & (1 << k) != 0).collect();
        if idx.len() > dim + 1 {
            continue;
        }
        let p0 = &points[idx[0]];
        let edges: Vec<Vec<f64>> = idx[1..]
            .iter()
            .map(|&k| points[k].iter().zip(p0).map(|(a, b)| a - b).collect())
            .collect();
        let qp: Vec<f64> = q.iter().zip(p0).map(|(a, b)| a - b).collect();
        let t = if edges.is_empty() {
            Vec::new()
        } else {
            let gram: Vec<Vec<f64>> = edges.iter().map(|e| edges.iter().map(|g| dotp(e, g)).collect()).collect();
            let rhs: Vec<f64> = edges.iter().map(|e| dotp(e, &qp)).collect();
            match solve_dense(gram, rhs) {
                Some(t) => t,
                None => continue,
            }
        };
        let w0 = 1.0 - t.iter().sum::<f64>();
        if w0 < -1e-12 || t.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut y = p0.clone();
        for (e, tk) in edges.iter().zip(&t) {
            for (yi, ei) in y.iter_mut().zip(e) {
                *yi += tk * ei;
            }
        }
        best = best.min(euclid(q, &y));
    }
    best
}

/// Brute-force containment: for each center with a radius, the indices
/// of all other points (train then probe) strictly inside its ball.
pub fn union_oracle(train: &[Vec<f64>], probe: &[Vec<f64>], radii: &[Option<f64>]) -> Vec<Vec<usize>> {
    let all: Vec<&Vec<f64>> = train.iter().chain(probe).collect();
    (0..train.len())
        .map(|i| match radii[i] {
            None => Vec::new(),
            Some(r) => (0..all.len()).filter(|&k| k != i && euclid(all[k], &train[i]) < r).collect(),
        })
        .collect()
}

/// Two-point equidistant coordinates from the three pairwise distances.
pub fn two_point_oracle(a: &[f64], b: &[f64], c: &[f64]) -> [f64; 2] {
    let d_ab = euclid(a, b);
    let d_ac = euclid(a, c);
    let d_bc = euclid(b, c);
    if d_ac == 0.0 {
        return [0.0, 0.0];
    }
    let cos = ((d_ab * d_ab + d_ac * d_ac - d_bc * d_bc) / (2.0 * d_ab * d_ac)).clamp(-1.0, 1.0);
    [d_ac * cos, d_ac * (1.0 - cos * cos).sqrt()]
}

/// Pre-activations of every dense layer at `x`.
pub fn pre_activations(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut h = x.to_vec();
    for layer in net.layers() {
        match layer {
            Layer::Dense { weights, bias } => {
                let z: Vec<f64> = (0..weights.cols())
                    .map(|c| bias[c] + (0..weights.rows()).map(|r| h[r] * weights.get(r, c)).sum::<f64>())
                    .collect();
                out.extend_from_slice(&z);
                h = z;
            }
            Layer::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }
    out
}

/// Network output computed directly from the layer list.
pub fn forward_oracle(net: &MlpNetwork, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in net.layers() {
        match layer {
            Layer::Dense { weights, bias } => {
                h = (0..weights.cols())
                    .map(|c| bias[c] + (0..weights.rows()).map(|r| h[r] * weights.get(r, c)).sum::<f64>())
                    .collect();
            }
            Layer::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }
    h
}

/// Least-squares linear head fitting one-hot targets.
pub fn least_squares_head(x: &[Vec<f64>], labels: &[usize], classes: usize) -> LinearHead {
    let f = x[0].len();
    let aug = |r: &Vec<f64>| -> Vec<f64> { r.iter().copied().chain([1.0]).collect() };
    let rows: Vec<Vec<f64>> = x.iter().map(aug).collect();
    let mut gram = vec![vec![0.0; f + 1]; f + 1];
    for r in &rows {
        for a in 0..=f {
            for b in 0..=f {
                gram[a][b] += r[a] * r[b];
            }
        }
    }
    let mut w = vec![vec![0.0; classes]; f + 1];
    for k in 0..classes {
        let rhs: Vec<f64> = (0..=f)
            .map(|a| rows.iter().zip(labels).filter(|(_, &l)| l == k).map(|(r, _)| r[a]).sum())
            .collect();
        let sol = solve_dense(gram.clone(), rhs).expect("full-rank design");
        for a in 0..=f {
            w[a][k] = sol[a];
        }
    }
    let weights = Matrix::from_rows(&w[..f]).unwrap();
    LinearHead::new(weights, w[f].clone()).unwrap()
}
