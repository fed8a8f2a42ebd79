//! Two-point equidistant projection of high-dimensional paths onto the plane.
//!
//! Control point A maps to (0, 0) and B to (|AB|, 0). Every other point C
//! maps to the upper half-plane point whose distances to those two images
//! equal |AC| and |BC|. Coordinates come from the component of C − A along
//! AB and the length of the rejection, rather than from the three distances
//! directly; that keeps near-collinear points on the axis.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{dot_unchecked, norm2, Vector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectedPath {
    pub control_a: [f64; 2],
    pub control_b: [f64; 2],
    pub points: Vec<[f64; 2]>,
    pub source_dim: usize,
}

pub fn project_two_point(a: &[f64], b: &[f64], path: &[Vector]) -> Result<ProjectedPath> {
    let dim = a.len();
    if b.len() != dim {
        return Err(Error::shape(format!(
            "control points have {} and {} entries",
            dim,
            b.len()
        )));
    }
    let ab: Vector = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let d_ab = norm2(&ab);
    if d_ab == 0.0 {
        return Err(Error::invalid("control points coincide"));
    }
    if !d_ab.is_finite() {
        return Err(Error::invalid("control points have non-finite entries"));
    }
    let unit: Vector = ab.iter().map(|v| v / d_ab).collect();
    let mut points = Vec::with_capacity(path.len());
    for (k, c) in path.iter().enumerate() {
        if c.len() != dim {
            return Err(Error::shape(format!(
                "path point {k} has {} entries, control points have {dim}",
                c.len()
            )));
        }
        if c.as_slice() == a {
            points.push([0.0, 0.0]);
            continue;
        }
        if c.as_slice() == b {
            points.push([d_ab, 0.0]);
            continue;
        }
        let ac: Vector = c.iter().zip(a).map(|(x, y)| x - y).collect();
        let along = dot_unchecked(&ac, &unit);
        let rejection: Vector = ac.iter().zip(&unit).map(|(v, u)| v - along * u).collect();
        points.push([along, norm2(&rejection)]);
    }
    Ok(ProjectedPath {
        control_a: [0.0, 0.0],
        control_b: [d_ab, 0.0],
        points,
        source_dim: dim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathFormat {
    Csv,
    Svg,
}

impl PathFormat {
    /// `.svg` selects SVG; anything else is CSV.
    pub fn from_path(path: &Path) -> PathFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("svg") => PathFormat::Svg,
            _ => PathFormat::Csv,
        }
    }
}

pub fn path_csv(p: &ProjectedPath) -> String {
    let mut out = String::from("x,y\n");
    for [x, y] in &p.points {
        let _ = writeln!(out, "{x:.16e},{y:.16e}");
    }
    out
}

pub fn path_svg(p: &ProjectedPath) -> String {
    let all = p.points.iter().chain([&p.control_a, &p.control_b]);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for [x, y] in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(-y);
        y1 = y1.max(-y);
    }
    let extent = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
    let pad = 0.05 * extent;
    let (vx, vy, vw, vh) = (x0 - pad, y0 - pad, x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
    let stroke = extent / 200.0;
    let radius = extent / 80.0;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vx} {vy} {vw} {vh}">"#
    );
    let [ax, ay] = p.control_a;
    let [bx, by] = p.control_b;
    let _ = writeln!(
        out,
        r##"  <line x1="{ax}" y1="{}" x2="{bx}" y2="{}" stroke="#999999" stroke-width="{stroke}" stroke-dasharray="{} {}"/>"##,
        -ay,
        -by,
        4.0 * stroke,
        2.0 * stroke
    );
    let coords: Vec<String> = p.points.iter().map(|[x, y]| format!("{x},{}", -y)).collect();
    let _ = writeln!(
        out,
        r##"  <polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="{stroke}"/>"##,
        coords.join(" ")
    );
    for (label, [x, y]) in [("A", p.control_a), ("B", p.control_b)] {
        let _ = writeln!(
            out,
            r##"  <circle cx="{x}" cy="{}" r="{radius}" fill="#c0392b"><title>{label}</title></circle>"##,
            -y
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes the path as CSV or SVG.
pub fn emit_path(p: &ProjectedPath, format: PathFormat, path: &Path) -> Result<()> {
    let text = match format {
        PathFormat::Csv => path_csv(p),
        PathFormat::Svg => path_svg(p),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    #[test]
    fn collinear_and_endpoint_points() {
        let a = vec![1.0, 1.0, 0.0];
        let b = vec![3.0, 1.0, 0.0];
        let path = vec![a.clone(), vec![1.5, 1.0, 0.0], b.clone()];
        let p = project_two_point(&a, &b, &path).unwrap();
        assert_eq!(p.points[0], [0.0, 0.0]);
        assert_eq!(p.points[1], [0.5, 0.0]);
        assert_eq!(p.points[2], [2.0, 0.0]);
        assert_eq!(p.control_b, [2.0, 0.0]);
        assert_eq!(p.source_dim, 3);
    }

    #[test]
    fn equilateral_triangle() {
        let a = vec![0.0, 0.0];
        let b = vec![1.0, 0.0];
        let c = vec![0.5, 3f64.sqrt() / 2.0];
        let p = project_two_point(&a, &b, &[c]).unwrap();
        assert!((p.points[0][0] - 0.5).abs() < 1e-12);
        assert!((p.points[0][1] - 0.866_025_4).abs() < 1e-7);
    }

    #[test]
    fn prescribed_distances_in_high_dimension() {
        // d_AB = 2, d_AC = 1.5, d_BC = 1.2, embedded in 64 dimensions.
        let c1 = (1.5f64 * 1.5 + 4.0 - 1.44) / 4.0;
        let c2 = (2.25 - c1 * c1).sqrt();
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 64];
        let mut c = vec![0.0; 64];
        a[7] = 0.25;
        b[7] = 0.25;
        b[3] = 2.0;
        c[7] = 0.25;
        c[3] = c1;
        c[40] = c2;
        let p = project_two_point(&a, &b, &[c]).unwrap();
        assert!((p.points[0][0] - 1.2025).abs() < 1e-4);
        // cos α = 4.81 / 6, so c₂ = 1.5·sqrt(1 − cos²α) = 0.896657.
        assert!((p.points[0][1] - 0.896_657).abs() < 1e-6);
        assert!((dist(p.points[0], p.control_a) - 1.5).abs() < 1e-12);
        assert!((dist(p.points[0], p.control_b) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn coincident_controls_are_rejected() {
        let err = project_two_point(&[1.0, 2.0], &[1.0, 2.0], &[]).unwrap_err();
        assert!(err.to_string().contains("control points coincide"));
        assert!(project_two_point(&[0.0], &[1.0], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn csv_output() {
        let p = project_two_point(&[0.0, 0.0], &[1.0, 0.0], &[vec![0.0, 0.0], vec![0.1, 0.3]]).unwrap();
        let text = path_csv(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "x,y");
        assert!(!text.contains('\r'));
        let parsed: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(parsed, vec![0.1, 0.3]);
    }

    #[test]
    fn svg_output() {
        let p = project_two_point(&[0.0, 0.0], &[2.0, 0.0], &[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]])
            .unwrap();
        let svg = path_svg(&p);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(r#"points="0,-0 1,-0 2,-0""#) || svg.contains(r#"points="0,0 1,0 2,0""#));
        assert!(svg.contains(r#"x1="0" y1="-0" x2="2" y2="-0""#));
    }
}
