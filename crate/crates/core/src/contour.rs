//! Boundary curves of planar invariant sets.
//!
//! Each cell is clipped to `{h ≥ 0}`, the clipped polygons' edges are split
//! at every vertex of the others, and edges traversed in both directions
//! cancel. What remains is the boundary of the union, chained into loops.
//! Outer loops run counterclockwise, holes clockwise.

use std::collections::HashMap;

use crate::iise::InvariantSetCertificate;

/// Points closer than this are merged.
const SNAP: f64 = 1e-9;

pub type Point = [f64; 2];

/// Closed boundary loops of `{h ≥ 0}`, without repeating the first point.
/// `None` unless the certificate is planar.
pub fn boundary_loops(cert: &InvariantSetCertificate) -> Option<Vec<Vec<Point>>> {
    let p = &cert.partition;
    if p.dim() != 2 {
        return None;
    }
    let scale = p.domain_diameter().max(1e-300);
    let mut pieces: Vec<Vec<Point>> = Vec::new();
    for (i, c) in p.cells().iter().enumerate() {
        let poly: Vec<Point> = c.region.vertices().iter().map(|v| [v[0], v[1]]).collect();
        let piece = cert.barrier.field.piece(i);
        let clipped = clip(&poly, |x| piece.eval(x));
        if clipped.len() >= 3 && signed_area(&clipped) > 1e-14 * scale * scale {
            pieces.push(clipped);
        }
    }
    Some(union_boundary(&pieces, SNAP * scale))
}

/// Keep the part of a counterclockwise polygon where `f ≥ 0`.
fn clip(poly: &[Point], f: impl Fn(&[f64]) -> f64) -> Vec<Point> {
    let vals: Vec<f64> = poly.iter().map(|x| f(x)).collect();
    let mut out = Vec::with_capacity(poly.len() + 2);
    for j in 0..poly.len() {
        let k = (j + 1) % poly.len();
        let (a, b) = (poly[j], poly[k]);
        let (fa, fb) = (vals[j], vals[k]);
        if fa >= 0.0 {
            out.push(a);
        }
        if (fa >= 0.0) != (fb >= 0.0) {
            let w = fa / (fa - fb);
            out.push([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]);
        }
    }
    out
}

pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|j| {
            let (a, b) = (poly[j], poly[(j + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Total signed area enclosed by a set of loops.
pub fn loops_area(loops: &[Vec<Point>]) -> f64 {
    loops.iter().map(|l| signed_area(l)).sum()
}

struct Snapper {
    tol: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Point>,
}

impl Snapper {
    fn key(&self, x: Point) -> (i64, i64) {
        ((x[0] / self.tol).floor() as i64, (x[1] / self.tol).floor() as i64)
    }

    fn id(&mut self, x: Point) -> usize {
        let (kx, ky) = self.key(x);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        let q = self.points[id];
                        if (q[0] - x[0]).hypot(q[1] - x[1]) <= self.tol {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.points.len();
        self.points.push(x);
        self.buckets.entry((kx, ky)).or_default().push(id);
        id
    }
}

fn union_boundary(pieces: &[Vec<Point>], tol: f64) -> Vec<Vec<Point>> {
    let mut snap = Snapper {
        tol,
        buckets: HashMap::new(),
        points: Vec::new(),
    };
    let polys: Vec<Vec<usize>> = pieces
        .iter()
        .map(|poly| {
            let mut ids: Vec<usize> = poly.iter().map(|&x| snap.id(x)).collect();
            ids.dedup();
            if ids.len() > 1 && ids.first() == ids.last() {
                ids.pop();
            }
            ids
        })
        .collect();
    let pts = snap.points.clone();

    // directed edges, split at points lying on them
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for ids in &polys {
        for j in 0..ids.len() {
            let (a, b) = (ids[j], ids[(j + 1) % ids.len()]);
            let mut chain = vec![a];
            chain.extend(points_on_segment(&pts, a, b, tol));
            chain.push(b);
            for w in chain.windows(2) {
                let (u, v) = (w[0], w[1]);
                if u == v {
                    continue;
                }
                if let Some(c) = edges.get_mut(&(v, u)) {
                    *c -= 1;
                    if *c == 0 {
                        edges.remove(&(v, u));
                    }
                } else {
                    *edges.entry((u, v)).or_default() += 1;
                }
            }
        }
    }

    let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut keys: Vec<(usize, usize)> = edges.keys().copied().collect();
    keys.sort_unstable();
    for &(u, v) in &keys {
        next.entry(u).or_default().push(v);
    }
    let mut loops = Vec::new();
    for &(start, _) in &keys {
        while next.get(&start).is_some_and(|v| !v.is_empty()) {
            let mut ring = vec![start];
            let mut cur = start;
            loop {
                let Some(v) = next.get_mut(&cur).and_then(|v| v.pop()) else {
                    break;
                };
                if v == start {
                    break;
                }
                ring.push(v);
                cur = v;
            }
            let ring: Vec<Point> = ring.into_iter().map(|k| pts[k]).collect();
            let ring = drop_collinear(ring, tol);
            if ring.len() >= 3 {
                loops.push(ring);
            }
        }
    }
    loops
}

/// Ids of points strictly inside segment `a → b`, ordered from `a`.
fn points_on_segment(pts: &[Point], a: usize, b: usize, tol: f64) -> Vec<usize> {
    let (pa, pb) = (pts[a], pts[b]);
    let d = [pb[0] - pa[0], pb[1] - pa[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return Vec::new();
    }
    let (lo_x, hi_x) = (pa[0].min(pb[0]) - tol, pa[0].max(pb[0]) + tol);
    let (lo_y, hi_y) = (pa[1].min(pb[1]) - tol, pa[1].max(pb[1]) + tol);
    let mut hits: Vec<(f64, usize)> = pts
        .iter()
        .enumerate()
        .filter(|&(k, q)| k != a && k != b && q[0] >= lo_x && q[0] <= hi_x && q[1] >= lo_y && q[1] <= hi_y)
        .filter_map(|(k, q)| {
            let r = [q[0] - pa[0], q[1] - pa[1]];
            let t = (r[0] * d[0] + r[1] * d[1]) / len2;
            let off = (r[0] * d[1] - r[1] * d[0]).abs() / len2.sqrt();
            (t > 0.0 && t < 1.0 && off <= tol).then_some((t, k))
        })
        .collect();
    hits.sort_by(|x, y| x.0.total_cmp(&y.0));
    hits.into_iter().map(|(_, k)| k).collect()
}

fn drop_collinear(ring: Vec<Point>, tol: f64) -> Vec<Point> {
    let mut ring = ring;
    loop {
        let n = ring.len();
        if n < 3 {
            return ring;
        }
        let pos = (0..n).find(|&j| {
            let (a, b, c) = (ring[(j + n - 1) % n], ring[j], ring[(j + 1) % n]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let ac = [c[0] - a[0], c[1] - a[1]];
            let cross = ab[0] * ac[1] - ab[1] * ac[0];
            let len = ac[0].hypot(ac[1]);
            len > 0.0 && cross.abs() / len <= tol && ab[0] * ac[0] + ab[1] * ac[1] > 0.0
        });
        match pos {
            Some(j) => {
                ring.remove(j);
            }
            None => return ring,
        }
    }
}

/// Whether `x` lies inside the region bounded by `loops` (even-odd rule) or
/// within `tol` of one of its edges.
pub fn point_in_region(loops: &[Vec<Point>], x: Point, tol: f64) -> bool {
    let mut inside = false;
    for ring in loops {
        let n = ring.len();
        for j in 0..n {
            let (a, b) = (ring[j], ring[(j + 1) % n]);
            if segment_distance(a, b, x) <= tol {
                return true;
            }
            if (a[1] > x[1]) != (b[1] > x[1]) {
                let t = (x[1] - a[1]) / (b[1] - a[1]);
                if x[0] < a[0] + t * (b[0] - a[0]) {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

fn segment_distance(a: Point, b: Point, x: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x[0] - a[0] - t * d[0]).hypot(x[1] - a[1] - t * d[1])
}

/// Plain-text loops: one `x y` pair per line, a blank line between loops.
pub fn format_loops(loops: &[Vec<Point>]) -> String {
    let mut out = String::new();
    for (j, ring) in loops.iter().enumerate() {
        if j > 0 {
            out.push('\n');
        }
        for x in ring {
            out.push_str(&format!("{} {}\n", x[0], x[1]));
        }
    }
    out
}
