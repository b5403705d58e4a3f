use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{bounding_box, MeshTopology, SparsePointSet, Vec3};
use crate::error::{Error, Result};

const MAX_SLICE_ATTEMPTS: usize = 32;

/// A connected piece of a plane/mesh intersection.
#[derive(Debug, Clone)]
pub struct Polyline {
    pub points: Vec<Vec3>,
    pub closed: bool,
    /// Object label of the triangles the polyline runs through, if known.
    pub label: Option<i64>,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let open: f64 = self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        if self.closed && self.points.len() > 1 {
            open + (self.points[0] - self.points[self.points.len() - 1]).norm()
        } else {
            open
        }
    }

    /// Point at arc length `s` from the first vertex (wrapping for loops).
    fn point_at(&self, s: f64) -> Vec3 {
        let n = self.points.len();
        let segs = if self.closed { n } else { n - 1 };
        let total = self.length();
        let mut s = if self.closed { s.rem_euclid(total) } else { s.clamp(0.0, total) };
        for k in 0..segs {
            let a = self.points[k];
            let b = self.points[(k + 1) % n];
            let len = (b - a).norm();
            if s <= len || k + 1 == segs {
                let t = if len > 0.0 { (s / len).clamp(0.0, 1.0) } else { 0.0 };
                return a + (b - a) * t;
            }
            s -= len;
        }
        self.points[n - 1]
    }
}

/// A sampled planar contour.
#[derive(Debug, Clone)]
pub struct Contour {
    pub points: SparsePointSet,
    pub axis: usize,
    pub coordinate: f64,
    /// Length of the full intersection polyline the arc was cut from.
    pub polyline_length: f64,
}

/// Intersects the mesh with the plane `x[axis] = coordinate` and returns
/// all intersection polylines. Returns `Ok(None)` when a vertex lies on the
/// plane (the caller should move the plane).
fn intersect_plane(
    positions: &[Vec3],
    topology: &MeshTopology,
    vertex_labels: Option<&[i64]>,
    axis: usize,
    coordinate: f64,
) -> Option<Vec<Polyline>> {
    let (lo, hi) = bounding_box(positions);
    let tol = 1e-12 * (hi - lo).norm().max(1.0);
    let side = |v: usize| positions[v][axis] - coordinate;

    // Intersection points are keyed by the mesh edge they lie on.
    let mut adjacency: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut key_label: HashMap<(usize, usize), i64> = HashMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    for tri in topology.triangles() {
        let d = [side(tri[0]), side(tri[1]), side(tri[2])];
        if d.iter().any(|x| x.abs() <= tol) {
            return None;
        }
        let mut keys = Vec::with_capacity(2);
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if (d[k] > 0.0) != (d[(k + 1) % 3] > 0.0) {
                keys.push((a.min(b), a.max(b)));
            }
        }
        if keys.len() == 2 {
            for (x, y) in [(keys[0], keys[1]), (keys[1], keys[0])] {
                let entry = adjacency.entry(x).or_default();
                if entry.is_empty() {
                    order.push(x);
                }
                entry.push(y);
            }
            if let Some(vl) = vertex_labels {
                for k in &keys {
                    key_label.entry(*k).or_insert(vl[tri[0]]);
                }
            }
        }
    }

    let point_of = |(a, b): (usize, usize)| {
        let (da, db) = (side(a), side(b));
        let t = da / (da - db);
        positions[a] + (positions[b] - positions[a]) * t
    };

    let mut visited: HashMap<(usize, usize), bool> = HashMap::new();
    let mut polylines = Vec::new();
    // Open chains start at degree-1 keys; what remains are loops.
    let starts: Vec<(usize, usize)> = order
        .iter()
        .filter(|k| adjacency[*k].len() == 1)
        .chain(order.iter().filter(|k| adjacency[*k].len() != 1))
        .copied()
        .collect();
    for start in starts {
        if visited.contains_key(&start) {
            continue;
        }
        let mut chain = vec![start];
        visited.insert(start, true);
        let mut prev: Option<(usize, usize)> = None;
        let mut cur = start;
        let closed = loop {
            let next = adjacency[&cur]
                .iter()
                .copied()
                .find(|n| Some(*n) != prev && !visited.contains_key(n));
            match next {
                Some(n) => {
                    visited.insert(n, true);
                    chain.push(n);
                    prev = Some(cur);
                    cur = n;
                }
                None => break chain.len() > 2 && adjacency[&cur].contains(&start),
            }
        };
        polylines.push(Polyline {
            points: chain.iter().map(|k| point_of(*k)).collect(),
            closed,
            label: key_label.get(&start).copied(),
        });
    }
    Some(polylines)
}

/// Cuts an arc covering `arc_fraction` of the longest intersection polyline
/// at `x[axis] = coordinate`, starting at arc position `start_fraction`
/// (in `[0, 1)` of the admissible start range), and resamples it with
/// `n_points` equidistant points.
#[allow(clippy::too_many_arguments)]
pub fn slice_contour_at(
    positions: &[Vec3],
    topology: &MeshTopology,
    vertex_labels: Option<&[i64]>,
    axis: usize,
    coordinate: f64,
    arc_fraction: f64,
    start_fraction: f64,
    n_points: usize,
) -> Result<Contour> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    if !(arc_fraction > 0.0 && arc_fraction <= 1.0) {
        return Err(Error::invalid(format!("arc fraction must be in (0, 1], got {arc_fraction}")));
    }
    if n_points == 0 {
        return Err(Error::invalid("contour needs at least one point"));
    }
    let polylines = intersect_plane(positions, topology, vertex_labels, axis, coordinate)
        .ok_or_else(|| Error::invalid("slice plane passes through a mesh vertex"))?;
    let longest = polylines
        .into_iter()
        .filter(|p| p.points.len() >= 2)
        .max_by(|a, b| a.length().total_cmp(&b.length()))
        .ok_or(Error::EmptySlice { attempts: 1 })?;

    let total = longest.length();
    let arc = arc_fraction * total;
    let full_loop = longest.closed && arc_fraction >= 1.0;
    let start = if longest.closed {
        start_fraction * total
    } else {
        start_fraction * (total - arc)
    };
    let step = if full_loop {
        arc / n_points as f64
    } else if n_points > 1 {
        arc / (n_points - 1) as f64
    } else {
        0.0
    };
    let mut pts: Vec<Vec3> = (0..n_points)
        .map(|k| longest.point_at(start + step * k as f64))
        .collect();
    for p in &mut pts {
        // exact coplanarity
        p[axis] = coordinate;
    }
    let labels = longest.label.map(|l| vec![l; n_points]);
    Ok(Contour {
        points: SparsePointSet::new(pts, labels)?,
        axis,
        coordinate,
        polyline_length: total,
    })
}

/// Random planar partial contour: a plane orthogonal to `axis` at a uniform
/// coordinate within the mesh extent, then a random arc of its longest
/// intersection polyline.
pub fn slice_contour<R: Rng + ?Sized>(
    positions: &[Vec3],
    topology: &MeshTopology,
    vertex_labels: Option<&[i64]>,
    axis: usize,
    rng: &mut R,
    arc_fraction: f64,
    n_points: usize,
) -> Result<Contour> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    if !(arc_fraction > 0.0 && arc_fraction <= 1.0) || n_points == 0 {
        return Err(Error::invalid(format!(
            "need 0 < arc fraction <= 1 and at least one point, got {arc_fraction} and {n_points}"
        )));
    }
    let (lo, hi) = bounding_box(positions);
    for _ in 0..MAX_SLICE_ATTEMPTS {
        let coordinate = lo[axis] + (hi[axis] - lo[axis]) * rng.random::<f64>();
        let start: f64 = rng.random();
        match slice_contour_at(
            positions,
            topology,
            vertex_labels,
            axis,
            coordinate,
            arc_fraction,
            start,
            n_points,
        ) {
            Ok(c) => return Ok(c),
            // arguments were validated up front, so InvalidArgument here
            // means the plane hit a vertex
            Err(Error::EmptySlice { .. }) | Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::EmptySlice {
        attempts: MAX_SLICE_ATTEMPTS,
    })
}

/// Plane through a point set: returns (centroid, unit normal, max |distance|).
fn fit_plane(points: &[Vec3]) -> (Vec3, Vec3, f64) {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imin();
    let n: Vec3 = eig.eigenvectors.column(k).into_owned().normalize();
    let dev = points.iter().map(|p| (p - c).dot(&n).abs()).fold(0.0, f64::max);
    (c, n, dev)
}

/// Orthonormal in-plane basis for a plane with normal `n`. Axis-aligned
/// planes get the two remaining coordinate axes in increasing order.
fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let k = n.iamax();
    if n[k].abs() > 1.0 - 1e-9 {
        let mut axes = (0..3).filter(|a| *a != k).map(|a| {
            let mut e = Vec3::zeros();
            e[a] = 1.0;
            e
        });
        return (axes.next().unwrap(), axes.next().unwrap());
    }
    let helper = {
        let mut e = Vec3::zeros();
        e[n.iamin()] = 1.0;
        e
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Applies one rigid in-plane translation drawn from `N(0, sigma^2 I_2)` to
/// every point of a planar contour. Returns the shifted contour and the
/// translation vector.
pub fn contour_inplane_noise<R: Rng + ?Sized>(
    contour: &SparsePointSet,
    sigma: f64,
    rng: &mut R,
) -> Result<(SparsePointSet, Vec3)> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    let pts = contour.points();
    let (lo, hi) = bounding_box(pts);
    let (_, normal, dev) = fit_plane(pts);
    if dev > 1e-6 * (hi - lo).norm().max(1.0) {
        return Err(Error::NotCoplanar { deviation: dev });
    }
    let (u, v) = plane_basis(&normal);
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let shift = (u * g1 + v * g2) * sigma;
    let moved = pts.iter().map(|p| p + shift).collect();
    Ok((
        SparsePointSet::new(moved, contour.labels().map(<[i64]>::to_vec))?,
        shift,
    ))
}
