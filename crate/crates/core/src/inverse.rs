//! Inverse problems through a dense/ReLU network: find box-constrained inputs
//! whose features hit a point, a ball or a sphere, staying close to a
//! reference input.
//!
//! Each problem is solved by quadratic-penalty continuation,
//! `|x - x_ref|² + μ_k φ(N(x))`, with μ growing geometrically and every stage
//! warm-started from the previous one. Stages take Armijo-safeguarded
//! Gauss-Newton steps over the variables off the box boundary, falling back
//! to projected gradient steps; the box is enforced by clamping.
//!
//! A run whose residual stops shrinking is retried from the box centre and
//! then from Halton points of the box, entering the penalty schedule halfway
//! so the reference term does not pull it back into the same basin.

use serde::Serialize;

use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::model::{Layer, MlpNetwork};
use crate::tensor::{cholesky_solve, dist2, dot_unchecked, matvec, vecmat_unchecked, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseResult {
    pub input: Vector,
    /// Features of `input`.
    pub features: Vector,
    /// Constraint violation: distance to the target point, or distance of
    /// the features from the sphere (interior mode: only outside the ball).
    pub residual: f64,
    /// `|input - reference|²`.
    pub objective: f64,
    pub stages_used: usize,
    /// Restarts from other starting points before this result.
    pub restarts: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphSequence {
    pub radii: Vec<f64>,
    pub frames: Vec<InverseResult>,
}

impl MorphSequence {
    pub fn all_converged(&self) -> bool {
        self.frames.iter().all(|f| f.converged)
    }
}

fn check_input(net: &MlpNetwork, x: &[f64], what: &str) -> Result<()> {
    if x.len() != net.input_dim() {
        return Err(Error::shape(format!(
            "{what} has {} entries, network input is {}",
            x.len(),
            net.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn forward_unchecked(net: &MlpNetwork, x: &[f64]) -> Vector {
    let mut h = x.to_vec();
    for layer in net.layers() {
        match layer {
            Layer::Dense { weights, bias } => {
                h = vecmat_unchecked(&h, weights);
                for (v, b) in h.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            Layer::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }
    h
}

/// Runs the network on `x`.
pub fn forward_features(net: &MlpNetwork, x: &[f64]) -> Result<Vector> {
    check_input(net, x, "input")?;
    Ok(forward_unchecked(net, x))
}

/// Gradient of `cotangent · N(x)` with respect to `x`. The ReLU derivative
/// at exactly zero is taken as zero.
pub fn backward_gradient(net: &MlpNetwork, x: &[f64], cotangent: &[f64]) -> Result<Vector> {
    check_input(net, x, "input")?;
    if cotangent.len() != net.output_dim() {
        return Err(Error::shape(format!(
            "cotangent has {} entries, network output is {}",
            cotangent.len(),
            net.output_dim()
        )));
    }
    Ok(backward_unchecked(net, x, cotangent, false).1)
}

/// Returns the features and the input gradient. With `open_kinks` a ReLU
/// input of exactly zero passes gradient through (its right derivative).
fn backward_unchecked(
    net: &MlpNetwork,
    x: &[f64],
    cotangent: &[f64],
    open_kinks: bool,
) -> (Vector, Vector) {
    let mut inputs = Vec::with_capacity(net.layers().len());
    let mut h = x.to_vec();
    for layer in net.layers() {
        let next = match layer {
            Layer::Dense { weights, bias } => {
                let mut y = vecmat_unchecked(&h, weights);
                y.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                y
            }
            Layer::Relu => h.iter().map(|v| v.max(0.0)).collect(),
        };
        inputs.push(std::mem::replace(&mut h, next));
    }
    let mut g = cotangent.to_vec();
    for (layer, input) in net.layers().iter().zip(&inputs).rev() {
        match layer {
            Layer::Dense { weights, .. } => {
                g = matvec(weights, &g).expect("dense layer shapes were validated");
            }
            Layer::Relu => {
                for (gv, iv) in g.iter_mut().zip(input) {
                    if *iv < 0.0 || (*iv == 0.0 && !open_kinks) {
                        *gv = 0.0;
                    }
                }
            }
        }
    }
    (h, g)
}

#[derive(Clone, Copy)]
enum Goal<'a> {
    Point(&'a [f64]),
    Sphere { center: &'a [f64], radius: f64, perimeter: bool },
}

/// Constraint residuals `r` (the penalty is `|r|²`) and, per residual, its
/// derivative with respect to the features.
struct Residuals {
    values: Vector,
    rows: Vec<Vector>,
}

impl Residuals {
    fn penalty(&self) -> f64 {
        dot_unchecked(&self.values, &self.values)
    }

    fn norm(&self) -> f64 {
        self.penalty().sqrt()
    }
}

impl Goal<'_> {
    fn residuals(&self, feat: &[f64]) -> Residuals {
        match *self {
            Goal::Point(t) => Residuals {
                values: feat.iter().zip(t).map(|(a, b)| a - b).collect(),
                rows: (0..feat.len())
                    .map(|k| {
                        let mut e = vec![0.0; feat.len()];
                        e[k] = 1.0;
                        e
                    })
                    .collect(),
            },
            Goal::Sphere { center, radius, perimeter } => {
                let diff: Vector = feat.iter().zip(center).map(|(a, b)| a - b).collect();
                let d = dot_unchecked(&diff, &diff).sqrt();
                let e = d - radius;
                if !perimeter && e <= 0.0 {
                    return Residuals { values: vec![], rows: vec![] };
                }
                let unit = if d > 0.0 { diff.into_iter().map(|v| v / d).collect() } else { vec![0.0; feat.len()] };
                Residuals { values: vec![e], rows: vec![unit] }
            }
        }
    }
}

struct Problem<'a> {
    net: &'a MlpNetwork,
    goal: Goal<'a>,
    reference: &'a [f64],
}

/// Objective value and gradient at a point, with the Jacobian of the
/// constraint residuals with respect to the input.
struct Linearization {
    gradient: Vector,
    jacobian: Vec<Vector>,
    residuals: Vector,
}

impl Problem<'_> {
    fn objective(&self, x: &[f64], mu: f64) -> f64 {
        let feat = forward_unchecked(self.net, x);
        dist2(x, self.reference).powi(2) + mu * self.goal.residuals(&feat).penalty()
    }

    fn linearize(&self, x: &[f64], mu: f64, open_kinks: bool) -> Linearization {
        let feat = forward_unchecked(self.net, x);
        let res = self.goal.residuals(&feat);
        let jacobian: Vec<Vector> = res
            .rows
            .iter()
            .map(|row| backward_unchecked(self.net, x, row, open_kinks).1)
            .collect();
        let mut gradient: Vector = x.iter().zip(self.reference).map(|(a, r)| 2.0 * (a - r)).collect();
        for (jrow, r) in jacobian.iter().zip(&res.values) {
            for (g, j) in gradient.iter_mut().zip(jrow) {
                *g += 2.0 * mu * r * j;
            }
        }
        Linearization { gradient, jacobian, residuals: res.values }
    }

    fn residual(&self, x: &[f64]) -> (Vector, f64) {
        let feat = forward_unchecked(self.net, x);
        let r = self.goal.residuals(&feat).norm();
        (feat, r)
    }

    /// Gauss-Newton direction `(I + μ JᵀJ) p = -g/2` over the variables off
    /// the box boundary. A variable sitting on a bound that the direction
    /// would leave is pinned and the system re-solved. The direction is
    /// then scaled so the full step stays inside the box.
    fn gauss_newton(&self, x: &[f64], lin: &Linearization, mu: f64) -> Option<Vector> {
        let (lo, hi) = (self.net.input_lo(), self.net.input_hi());
        let leaves = |i: usize, d: f64| (x[i] <= lo[i] && d < 0.0) || (x[i] >= hi[i] && d > 0.0);
        let mut free: Vec<usize> = (0..x.len()).filter(|&i| !leaves(i, -lin.gradient[i])).collect();
        let mut p = vec![0.0; x.len()];
        while !free.is_empty() {
            let m = free.len();
            let mut h = Matrix::zeros(m, m);
            for a in 0..m {
                for b in 0..=a {
                    let jj: f64 = lin.jacobian.iter().map(|row| row[free[a]] * row[free[b]]).sum();
                    let v = mu * jj + if a == b { 1.0 } else { 0.0 };
                    h.set(a, b, v);
                    h.set(b, a, v);
                }
            }
            let rhs: Vector = free.iter().map(|&i| -0.5 * lin.gradient[i]).collect();
            let sol = cholesky_solve(&h, &rhs, 1e-15)?;
            p.iter_mut().for_each(|v| *v = 0.0);
            for (&i, v) in free.iter().zip(sol) {
                p[i] = v;
            }
            let before = free.len();
            free.retain(|&i| !leaves(i, p[i]));
            if free.len() == before {
                break;
            }
        }
        if free.is_empty() {
            return None;
        }
        let mut scale: f64 = 1.0;
        for &i in &free {
            if p[i] > 0.0 {
                scale = scale.min((hi[i] - x[i]) / p[i]);
            } else if p[i] < 0.0 {
                scale = scale.min((lo[i] - x[i]) / p[i]);
            }
        }
        if !(scale > 0.0) {
            return None;
        }
        Some(p.into_iter().map(|v| v * scale).collect())
    }

    /// Armijo backtracking along `x + s·dir`, projected onto the box.
    fn line_search(&self, x: &[f64], g: &[f64], dir: &[f64], f: f64, mu: f64) -> Option<(Vector, f64)> {
        const SHRINK: f64 = 0.5;
        const SUFFICIENT: f64 = 1e-4;
        const MAX_HALVINGS: usize = 80;
        let mut step = 1.0;
        for _ in 0..MAX_HALVINGS {
            let mut trial: Vector = x.iter().zip(dir).map(|(xi, di)| xi + step * di).collect();
            self.net.clamp(&mut trial);
            let decrease: f64 = g.iter().zip(x.iter().zip(&trial)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if decrease <= 0.0 {
                return None;
            }
            let ft = self.objective(&trial, mu);
            if ft <= f - SUFFICIENT * decrease {
                return Some((trial, ft));
            }
            step *= SHRINK;
        }
        None
    }

    /// One descent step: Gauss-Newton first, plain projected gradient if
    /// that fails. A point where the zero-at-kink derivative gives no
    /// descent (a dead ReLU start) is retried with the right derivative at
    /// the kinks.
    fn step(&self, x: &[f64], f: f64, mu: f64) -> Option<(Vector, f64)> {
        for open_kinks in [false, true] {
            let lin = self.linearize(x, mu, open_kinks);
            if let Some(p) = self.gauss_newton(x, &lin, mu) {
                if let Some(s) = self.line_search(x, &lin.gradient, &p, f, mu) {
                    return Some(s);
                }
            }
            let neg: Vector = lin.gradient.iter().map(|g| -g).collect();
            if let Some(s) = self.line_search(x, &lin.gradient, &neg, f, mu) {
                return Some(s);
            }
            if lin.residuals.is_empty() {
                break;
            }
        }
        None
    }

    /// Descends until the relative objective change stays below the inner
    /// tolerance for several consecutive steps (single small steps are
    /// common while crossing ReLU kinks).
    fn inner(&self, x: &mut Vector, mu: f64, cfg: &AuditConfig) {
        const SMALL_STEPS: usize = 10;
        let mut f = self.objective(x, mu);
        let mut small = 0;
        for _ in 0..cfg.inner_max_iter {
            let Some((trial, ft)) = self.step(x, f, mu) else { return };
            let rel = (f - ft) / f.abs().max(f64::MIN_POSITIVE);
            *x = trial;
            f = ft;
            small = if rel <= cfg.inner_rel_tol { small + 1 } else { 0 };
            if small >= SMALL_STEPS {
                return;
            }
        }
    }

    /// Penalty continuation from `start`.
    fn continuation(&self, start: Vector, first_stage: usize, cfg: &AuditConfig) -> InverseResult {
        const PLATEAU_STAGES: usize = 3;
        const PLATEAU_RATIO: f64 = 0.9;
        let mut x = start;
        let (mut feat, mut res) = self.residual(&x);
        let mut history = vec![res];
        let mut mu = cfg.penalty_initial * cfg.penalty_growth.powi(first_stage as i32);
        let mut stages = first_stage;
        while res > cfg.inverse_tol && stages < cfg.penalty_max_stages {
            self.inner(&mut x, mu, cfg);
            stages += 1;
            (feat, res) = self.residual(&x);
            history.push(res);
            if history.len() > PLATEAU_STAGES
                && res > PLATEAU_RATIO * history[history.len() - 1 - PLATEAU_STAGES]
            {
                break;
            }
            mu *= cfg.penalty_growth;
        }
        InverseResult {
            objective: dist2(&x, self.reference).powi(2),
            input: x,
            features: feat,
            residual: res,
            stages_used: stages,
            restarts: 0,
            converged: res <= cfg.inverse_tol,
        }
    }

    /// Runs the continuation from the reference; if that stalls, retries
    /// from the box centre and then from Halton points in the box. Returns
    /// the first converged run, or the one with the smallest residual.
    fn solve(&self, cfg: &AuditConfig) -> InverseResult {
        let mut best = self.continuation(self.reference.to_vec(), 0, cfg);
        let (lo, hi) = (self.net.input_lo(), self.net.input_hi());
        let primes = first_primes(lo.len());
        let mut tried = 0;
        for k in 0..cfg.inverse_restarts {
            if best.converged {
                break;
            }
            tried += 1;
            let start: Vector = (0..lo.len())
                .map(|i| {
                    let u = if k == 0 { 0.5 } else { radical_inverse(k, primes[i]) };
                    lo[i] + u * (hi[i] - lo[i])
                })
                .collect();
            let run = self.continuation(start, cfg.penalty_max_stages / 2, cfg);
            if run.converged || run.residual < best.residual {
                best = run;
            }
        }
        best.restarts = tried;
        best
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut k: usize, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k as u64 % base) as f64 * inv;
        k /= base as usize;
        inv /= base as f64;
    }
    out
}

fn check_target(net: &MlpNetwork, target: &[f64], what: &str, cfg: &AuditConfig) -> Result<()> {
    if target.len() != net.output_dim() {
        return Err(Error::shape(format!(
            "{what} has {} entries, network output is {}",
            target.len(),
            net.output_dim()
        )));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    if net.ends_with_relu() && target.iter().any(|&v| v < -cfg.inverse_tol) {
        return Err(Error::Infeasible(
            "target outside feature range (negative entry under terminal ReLU)".into(),
        ));
    }
    Ok(())
}

fn check_reference(net: &MlpNetwork, reference: &[f64]) -> Result<()> {
    check_input(net, reference, "reference")?;
    if !net.contains(reference) {
        return Err(Error::invalid("reference lies outside the input box"));
    }
    Ok(())
}

/// Input closest to `reference` whose features equal `target`.
pub fn map_to_point(
    net: &MlpNetwork,
    target: &[f64],
    reference: &[f64],
    cfg: &AuditConfig,
) -> Result<InverseResult> {
    check_target(net, target, "target", cfg)?;
    check_reference(net, reference)?;
    Ok(Problem { net, goal: Goal::Point(target), reference }.solve(cfg))
}

/// Input closest to `reference` whose features lie inside the ball of
/// `radius` around `center`, or on its boundary sphere when `on_perimeter`.
pub fn map_to_ball(
    net: &MlpNetwork,
    center: &[f64],
    radius: f64,
    reference: &[f64],
    on_perimeter: bool,
    cfg: &AuditConfig,
) -> Result<InverseResult> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("radius must be finite and ≥ 0, got {radius}")));
    }
    if radius == 0.0 && on_perimeter {
        return map_to_point(net, center, reference, cfg);
    }
    check_target(net, center, "center", cfg)?;
    check_reference(net, reference)?;
    let goal = Goal::Sphere { center, radius, perimeter: on_perimeter };
    Ok(Problem { net, goal, reference }.solve(cfg))
}

/// Walks from `x_a` to the features of `x_b` over uniformly shrinking
/// spheres around `N(x_b)`, each frame warm-started from the previous one.
pub fn morph(
    net: &MlpNetwork,
    x_a: &[f64],
    x_b: &[f64],
    steps: usize,
    cfg: &AuditConfig,
) -> Result<MorphSequence> {
    if steps < 2 {
        return Err(Error::invalid(format!("morph needs at least 2 steps, got {steps}")));
    }
    check_reference(net, x_a)?;
    check_reference(net, x_b)?;
    let center = forward_unchecked(net, x_b);
    let r0 = dist2(&forward_unchecked(net, x_a), &center);
    let radii: Vec<f64> = (0..steps)
        .map(|k| if k + 1 == steps { 0.0 } else { r0 * (1.0 - k as f64 / (steps - 1) as f64) })
        .collect();
    let mut frames: Vec<InverseResult> = Vec::with_capacity(steps);
    for &r in &radii {
        let reference = frames.last().map_or(x_a, |f| f.input.as_slice());
        let frame = map_to_ball(net, &center, r, reference, true, cfg)?;
        frames.push(frame);
    }
    Ok(MorphSequence { radii, frames })
}
