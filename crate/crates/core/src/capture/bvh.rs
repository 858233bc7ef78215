//! Axis-aligned bounding-volume hierarchy over mesh triangles, used for
//! nearest-hit ray casting and closest-point queries.

use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }

    pub fn distance_squared(&self, p: &Vector3<f64>) -> f64 {
        let d = (self.min - p).sup(&Vector3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn ray_entry(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            // NaN from 0 * inf means the ray lies in the slab plane; keep it.
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if !lo.is_nan() {
                t0 = t0.max(lo);
            }
            if !hi.is_nan() {
                t1 = t1.min(hi);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`; inner: index of the left child
    /// (the right child is `first + 1`).
    first: u32,
    /// Triangles in a leaf; 0 for inner nodes.
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

/// Nearest ray hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: u32,
}

/// Closest surface point to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vector3<f64>,
    pub distance_squared: f64,
    pub triangle: u32,
}

impl Bvh {
    pub fn build(triangles: &[[Vector3<f64>; 3]]) -> Bvh {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1),
            order: (0..triangles.len() as u32).collect(),
        };
        let bounds: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                t.iter().for_each(|p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<Vector3<f64>> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        bvh.nodes.push(Node {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        if !triangles.is_empty() {
            bvh.split(0, 0, triangles.len(), &bounds, &centroids);
        }
        bvh
    }

    fn split(&mut self, node: usize, start: usize, end: usize, bounds: &[Aabb], centroids: &[Vector3<f64>]) {
        let slice = &mut self.order[start..end];
        let node_bounds = slice
            .iter()
            .fold(Aabb::empty(), |acc, &i| acc.merge(&bounds[i as usize]));
        self.nodes[node].bounds = node_bounds;
        if end - start <= LEAF_SIZE {
            self.nodes[node].first = start as u32;
            self.nodes[node].count = (end - start) as u32;
            return;
        }
        let mut cb = Aabb::empty();
        slice.iter().for_each(|&i| cb.grow(&centroids[i as usize]));
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.nodes.len();
        for _ in 0..2 {
            self.nodes.push(Node {
                bounds: Aabb::empty(),
                first: 0,
                count: 0,
            });
        }
        self.nodes[node].first = left as u32;
        self.nodes[node].count = 0;
        self.split(left, start, start + mid, bounds, centroids);
        self.split(left + 1, start + mid, end, bounds, centroids);
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn raycast(&self, triangles: &[[Vector3<f64>; 3]], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        if triangles.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<RayHit> = None;
        let mut t_max = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.ray_entry(origin, &inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    if let Some(t) = ray_triangle(origin, dir, &triangles[tri as usize]) {
                        let better = match best {
                            None => true,
                            Some(b) => t < b.t || (t == b.t && tri < b.triangle),
                        };
                        if better && t <= t_max {
                            best = Some(RayHit { t, triangle: tri });
                            t_max = t;
                        }
                    }
                }
            } else {
                let l = node.first as usize;
                let tl = self.nodes[l].bounds.ray_entry(origin, &inv, t_max);
                let tr = self.nodes[l + 1].bounds.ray_entry(origin, &inv, t_max);
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        // nearer child on top
                        if a <= b {
                            stack.push(l + 1);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(l + 1);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(l + 1),
                    (None, None) => {}
                }
            }
        }
        best
    }

    pub fn closest_point(&self, triangles: &[[Vector3<f64>; 3]], p: &Vector3<f64>) -> Option<ClosestPoint> {
        if triangles.is_empty() {
            return None;
        }
        let mut best: Option<ClosestPoint> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack = vec![(0usize, self.nodes[0].bounds.distance_squared(p))];
        while let Some((n, lower)) = stack.pop() {
            if lower > best_d2 {
                continue;
            }
            let node = &self.nodes[n];
            if node.count > 0 {
                for &tri in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    let q = closest_point_on_triangle(p, &triangles[tri as usize]);
                    let d2 = (q - p).norm_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = Some(ClosestPoint {
                            point: q,
                            distance_squared: d2,
                            triangle: tri,
                        });
                    }
                }
            } else {
                let l = node.first as usize;
                let dl = self.nodes[l].bounds.distance_squared(p);
                let dr = self.nodes[l + 1].bounds.distance_squared(p);
                if dl <= dr {
                    stack.push((l + 1, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((l + 1, dr));
                }
            }
        }
        best
    }
}

/// Möller–Trumbore, two-sided. Returns the ray parameter of the hit.
pub fn ray_triangle(origin: &Vector3<f64>, dir: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > 1e-9).then_some(t)
}

/// Closest point on a triangle by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Vector3<f64> {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
