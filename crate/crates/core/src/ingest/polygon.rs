//! Area of simple polygons inside grid cells, in projected meters.

use super::grid::{Cell, GridSpec};
use crate::error::{Error, Result};

/// Ring of `(lat, lon)` vertices; a repeated closing vertex is optional.
pub type Ring = Vec<(f64, f64)>;

type Pt = (f64, f64);

/// Signed shoelace area (counter-clockwise positive).
pub(crate) fn signed_area(pts: &[Pt]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

fn orient(a: Pt, b: Pt, c: Pt) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Pt, b: Pt, p: Pt) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    let (o1, o2, o3, o4) = (
        orient(a, b, c),
        orient(a, b, d),
        orient(c, d, a),
        orient(c, d, b),
    );
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Projects a ring to grid meters, validating simplicity and area.
pub(crate) fn project_ring(ring: &[(f64, f64)], grid: &GridSpec) -> Result<Vec<Pt>> {
    let mut pts: Vec<Pt> = ring
        .iter()
        .map(|&(lat, lon)| grid.project(lat, lon))
        .collect();
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "polygon needs at least 3 vertices, got {}",
            pts.len()
        )));
    }
    if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::invalid("polygon has non-finite coordinates"));
    }
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                return Err(Error::invalid(format!(
                    "polygon self-intersects at edges {i} and {j}"
                )));
            }
        }
    }
    let span = pts.iter().fold(0.0f64, |m, p| {
        m.max((p.0 - pts[0].0).abs()).max((p.1 - pts[0].1).abs())
    });
    if signed_area(&pts).abs() <= 1e-12 * span * span {
        return Err(Error::invalid("polygon has zero area"));
    }
    Ok(pts)
}

/// Sutherland–Hodgman clip of `subject` to an axis-aligned rectangle.
fn clip_to_rect(subject: &[Pt], rect: [f64; 4]) -> Vec<Pt> {
    let [x0, y0, x1, y1] = rect;
    let mut out = subject.to_vec();
    // each edge: inside test and intersection with its line
    for edge in 0..4 {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let inside = |p: Pt| match edge {
            0 => p.0 >= x0,
            1 => p.0 <= x1,
            2 => p.1 >= y0,
            _ => p.1 <= y1,
        };
        let cross = |a: Pt, b: Pt| -> Pt {
            match edge {
                0 | 1 => {
                    let x = if edge == 0 { x0 } else { x1 };
                    let t = (x - a.0) / (b.0 - a.0);
                    (x, a.1 + t * (b.1 - a.1))
                }
                _ => {
                    let y = if edge == 2 { y0 } else { y1 };
                    let t = (y - a.1) / (b.1 - a.1);
                    (a.0 + t * (b.0 - a.0), y)
                }
            }
        };
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(cross(prev, cur)),
                (false, true) => {
                    out.push(cross(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Fraction of the polygon's area that lies inside `cell`, in `[0, 1]`.
pub fn clip_polygon_area(polygon: &[(f64, f64)], grid: &GridSpec, cell: Cell) -> Result<f64> {
    if cell.row >= grid.rows || cell.col >= grid.cols {
        return Err(Error::invalid(format!("cell {cell:?} outside grid")));
    }
    let pts = project_ring(polygon, grid)?;
    let total = signed_area(&pts).abs();
    let part = signed_area(&clip_to_rect(&pts, grid.cell_rect(cell))).abs();
    Ok((part / total).clamp(0.0, 1.0))
}

/// Nonzero area fractions of the polygon over every grid cell it touches,
/// as `(flat cell index, fraction)` in row-major order.
pub fn polygon_cell_fractions(
    polygon: &[(f64, f64)],
    grid: &GridSpec,
) -> Result<Vec<(usize, f64)>> {
    let pts = project_ring(polygon, grid)?;
    let total = signed_area(&pts).abs();
    let s = grid.cell_size_m;
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let range = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
        let a = (lo / s).floor().max(0.0);
        let b = ((hi / s).ceil()).min(n as f64);
        (b > a).then_some((a as usize, b as usize))
    };
    let (Some((c0, c1)), Some((r0, r1))) =
        (range(xmin, xmax, grid.cols), range(ymin, ymax, grid.rows))
    else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for row in r0..r1 {
        for col in c0..c1 {
            let cell = Cell::new(row, col);
            let part = signed_area(&clip_to_rect(&pts, grid.cell_rect(cell))).abs();
            if part > 0.0 {
                out.push((grid.index(cell), (part / total).clamp(0.0, 1.0)));
            }
        }
    }
    Ok(out)
}
