//! Level maps of 2-d score functions as SVG, and per-class score histograms.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::Model;
use crate::scalar::Scalar;

/// Scores on a regular `res × res` grid; `values[iy * res + ix]` sits at
/// `x = lo[0] + ix·(hi[0]−lo[0])/(res−1)` and likewise for `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub res: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        let t = |k: usize, i: usize| self.lo[k] + (self.hi[k] - self.lo[k]) * i as f64 / (self.res - 1) as f64;
        [t(0, ix), t(1, iy)]
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.res + ix]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "score"])?;
        for iy in 0..self.res {
            for ix in 0..self.res {
                let [x, y] = self.point(ix, iy);
                w.write_record([x.to_string(), y.to_string(), self.value(ix, iy).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates output `output` of a model with 2-d input on a grid.
pub fn evaluate_grid<T: Scalar>(model: &Model<T>, output: usize, lo: [f64; 2], hi: [f64; 2], res: usize) -> Result<Grid> {
    if model.input_dim() != 2 || output >= model.output_dim() {
        return Err(Error::DimensionMismatch("level maps need a 2-d input and a valid output".into()));
    }
    if res < 2 || !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::InvalidConfig("grid needs res >= 2 and a non-empty box".into()));
    }
    let mut grid = Grid {
        lo,
        hi,
        res,
        values: Vec::new(),
    };
    grid.values = (0..res * res)
        .into_par_iter()
        .map(|k| {
            let [x, y] = grid.point(k % res, k / res);
            Ok(model.forward(&[T::of(x), T::of(y)])?[output].as_f64())
        })
        .collect::<Result<_>>()?;
    Ok(grid)
}

/// Blue for negative, white at zero, red for positive, saturating at ±`scale`.
fn ramp(v: f64, scale: f64) -> (u8, u8, u8) {
    let t = (v / scale).clamp(-1.0, 1.0);
    // quantized so that neighbouring cells share colours and merge
    let t = (t * 32.0).round() / 32.0;
    let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
    if t >= 0.0 {
        (255, fade(t * 0.85), fade(t * 0.85))
    } else {
        (fade(-t * 0.85), fade(-t * 0.85), 255)
    }
}

/// Segments of the `level` contour of a grid, in grid coordinates.
pub fn contour_segments(grid: &Grid, level: f64) -> Vec<[(f64, f64); 2]> {
    let n = grid.res;
    let mut segs = Vec::new();
    let cross = |a: f64, b: f64| (level - a) / (b - a);
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let v = [
                grid.value(ix, iy),
                grid.value(ix + 1, iy),
                grid.value(ix + 1, iy + 1),
                grid.value(ix, iy + 1),
            ];
            let (x, y) = (ix as f64, iy as f64);
            // crossing points on the bottom, right, top, left edges
            let mut pts = Vec::with_capacity(4);
            let corners = [(x, y), (x + 1.0, y), (x + 1.0, y + 1.0), (x, y + 1.0)];
            for e in 0..4 {
                let (a, b) = (v[e], v[(e + 1) % 4]);
                if (a >= level) != (b >= level) {
                    let t = cross(a, b);
                    let (p, q) = (corners[e], corners[(e + 1) % 4]);
                    pts.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
                }
            }
            match pts.len() {
                2 => segs.push([pts[0], pts[1]]),
                4 => {
                    // saddle: pair the crossings according to the cell centre
                    let centre = v.iter().sum::<f64>() / 4.0;
                    if (centre >= level) == (v[0] >= level) {
                        segs.push([pts[0], pts[1]]);
                        segs.push([pts[2], pts[3]]);
                    } else {
                        segs.push([pts[0], pts[3]]);
                        segs.push([pts[1], pts[2]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

/// Level map with the zero contour in black and the data points on top
/// (`+1` as filled dots, others as open circles).
pub fn level_map_svg(grid: &Grid, points: &[Vec<f64>], labels: &[i64]) -> String {
    const CELL: f64 = 3.0;
    let n = grid.res;
    let size = CELL * n as f64;
    let scale = grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    // rows are flipped so that y grows upwards
    let screen_y = |gy: f64| size - CELL * (gy + 0.5);
    for iy in 0..n {
        let mut ix = 0;
        while ix < n {
            let c = ramp(grid.value(ix, iy), scale);
            let mut end = ix + 1;
            while end < n && ramp(grid.value(end, iy), scale) == c {
                end += 1;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{CELL}" fill="rgb({},{},{})"/>"#,
                CELL * ix as f64,
                size - CELL * (iy + 1) as f64,
                CELL * (end - ix) as f64,
                c.0,
                c.1,
                c.2
            );
            ix = end;
        }
    }
    let segs = contour_segments(grid, 0.0);
    if !segs.is_empty() {
        let mut d = String::new();
        for [a, b] in &segs {
            let _ = write!(
                d,
                "M{:.2} {:.2}L{:.2} {:.2}",
                CELL * (a.0 + 0.5),
                screen_y(a.1),
                CELL * (b.0 + 0.5),
                screen_y(b.1)
            );
        }
        let _ = writeln!(s, r#"<path class="zero-level" d="{d}" stroke="black" stroke-width="1.5" fill="none"/>"#);
    }
    let to_grid = |v: f64, k: usize| (v - grid.lo[k]) / (grid.hi[k] - grid.lo[k]) * (n - 1) as f64;
    for (p, &y) in points.iter().zip(labels) {
        let (cx, cy) = (CELL * (to_grid(p[0], 0) + 0.5), screen_y(to_grid(p[1], 1)));
        let fill = if y == 1 { "black" } else { "white" };
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{fill}" stroke="black" stroke-width="0.5"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

/// Per-class counts over shared, equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub classes: Vec<i64>,
    /// `counts[class][bin]`
    pub counts: Vec<Vec<usize>>,
}

pub fn class_histograms(scores: &[f64], labels: &[i64], bins: usize) -> Result<Histogram> {
    if scores.len() != labels.len() || scores.is_empty() || bins == 0 {
        return Err(Error::InvalidConfig("histograms need matching non-empty scores and labels".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![vec![0; bins]; classes.len()];
    for (&v, y) in scores.iter().zip(labels) {
        let c = classes.binary_search(y).expect("label collected above");
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[c][b] += 1;
    }
    Ok(Histogram { edges, classes, counts })
}

impl Histogram {
    /// Header `bin_lo,bin_hi,count_<label>...`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        header.extend(self.classes.iter().map(|c| format!("count_{c}")));
        w.write_record(&header)?;
        for b in 0..self.edges.len() - 1 {
            let mut row = vec![self.edges[b].to_string(), self.edges[b + 1].to_string()];
            row.extend(self.counts.iter().map(|c| c[b].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(f: impl Fn(f64, f64) -> f64, res: usize) -> Grid {
        let mut g = Grid {
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
            res,
            values: vec![],
        };
        g.values = (0..res * res)
            .map(|k| {
                let [x, y] = g.point(k % res, k / res);
                f(x, y)
            })
            .collect();
        g
    }

    #[test]
    fn vertical_line_contour() {
        let g = grid_of(|x, _| x - 0.05, 11);
        let segs = contour_segments(&g, 0.0);
        assert_eq!(segs.len(), 10);
        for [a, b] in segs {
            // x = 0.05 sits at grid coordinate 5.25
            assert!((a.0 - 5.25).abs() < 1e-9 && (b.0 - 5.25).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_map_has_no_contour() {
        let g = grid_of(|_, _| 0.3, 20);
        assert!(contour_segments(&g, 0.0).is_empty());
        let svg = level_map_svg(&g, &[], &[]);
        assert!(!svg.contains("zero-level"));
        // one merged rect per row
        assert_eq!(svg.matches("<rect").count(), 20);
    }

    #[test]
    fn histograms_share_bins() {
        let h = class_histograms(&[0.0, 1.0, 0.4, 0.6], &[1, 1, -1, -1], 2).unwrap();
        assert_eq!(h.classes, vec![-1, 1]);
        assert_eq!(h.counts, vec![vec![1, 1], vec![1, 1]]);
        let flat = class_histograms(&[0.0; 4], &[1, 1, -1, -1], 5).unwrap();
        assert_eq!(flat.counts[0], flat.counts[1]);
    }
}
