use crate::geomgen::{TriMesh, Vec3};

const LEAF_SIZE: usize = 4;

/// Nearest intersection along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
    /// Barycentric weights of the triangle's three vertices.
    pub bary: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    /// Entry distance of the slab test, if the box is hit within `[t0, t1]`.
    fn entry(&self, origin: &Vec3, inv: &Vec3, t0: f64, t1: f64) -> Option<f64> {
        let mut near = t0;
        let mut far = t1;
        for a in 0..3 {
            let (mut ta, mut tb) = ((self.lo[a] - origin[a]) * inv[a], (self.hi[a] - origin[a]) * inv[a]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0·∞ leaves the bound unchanged
            if ta > near {
                near = ta;
            }
            if tb < far {
                far = tb;
            }
        }
        // widen slightly so rounding never culls a box the triangle test would hit
        (near <= far * (1.0 + 4.0 * f64::EPSILON) + 1e-12).then_some(near)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over a mesh's triangles (median split on the
/// longest centroid axis).
#[derive(Clone, Debug)]
pub struct Bvh {
    triangles: Vec<[Vec3; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let triangles: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|[a, b, c]| (a + b + c) / 3.0).collect();
        let mut nodes = Vec::new();
        if !triangles.is_empty() {
            build_node(&triangles, &centroids, &mut order, 0, triangles.len(), &mut nodes);
        }
        Bvh {
            triangles,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Nearest hit with `t ∈ (t_min, t_max)`; among equal distances the lower
    /// triangle index wins. `skip` excludes one triangle.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64, skip: Option<u32>) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let limit = best.map_or(t_max, |h| h.t);
            let Some(_) = self.nodes[i].bounds().entry(&ray.origin, &inv, t_min, limit) else {
                continue;
            };
            match self.nodes[i] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[start..end] {
                        if Some(tri) == skip {
                            continue;
                        }
                        if let Some((t, bary)) = intersect_triangle(ray, &self.triangles[tri as usize]) {
                            let better = match best {
                                None => true,
                                Some(b) => t < b.t || (t == b.t && tri < b.triangle),
                            };
                            if t > t_min && t < t_max && better {
                                best = Some(Hit { t, triangle: tri, bary });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }

    /// True if any triangle other than `skip` is hit within `(t_min, t_max)`.
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64, skip: Option<u32>) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if self.nodes[i].bounds().entry(&ray.origin, &inv, t_min, t_max).is_none() {
                continue;
            }
            match self.nodes[i] {
                Node::Leaf { start, end, .. } => {
                    for &tri in &self.order[start..end] {
                        if Some(tri) == skip {
                            continue;
                        }
                        if let Some((t, _)) = intersect_triangle(ray, &self.triangles[tri as usize]) {
                            if t > t_min && t < t_max {
                                return true;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        false
    }
}

fn build_node(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in &order[start..end] {
        for p in &tris[t as usize] {
            bounds.grow(p);
        }
        cbounds.grow(&centroids[t as usize]);
    }
    let index = nodes.len();
    let extent = cbounds.hi - cbounds.lo;
    if end - start <= LEAF_SIZE || extent.max() <= 0.0 {
        nodes.push(Node::Leaf { bounds, start, end });
        return index;
    }
    let axis = extent.imax();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    let mut merged = *nodes[left].bounds();
    merged.merge(nodes[right].bounds());
    nodes[index] = Node::Inner {
        bounds: merged,
        left,
        right,
    };
    index
}

/// Watertight ray/triangle test (shear to ray space, edge functions with a
/// consistent sign rule). Hits on either side of the triangle count.
/// Returns the ray parameter and barycentric weights.
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<(f64, [f64; 3])> {
    let d = ray.direction;
    let kz = d.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if d[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = d[kx] / d[kz];
    let sy = d[ky] / d[kz];
    let sz = 1.0 / d[kz];
    let a = tri[0] - ray.origin;
    let b = tri[1] - ray.origin;
    let c = tri[2] - ray.origin;
    let (ax, ay) = (a[kx] - sx * a[kz], a[ky] - sy * a[kz]);
    let (bx, by) = (b[kx] - sx * b[kz], b[ky] - sy * b[kz]);
    let (cx, cy) = (c[kx] - sx * c[kz], c[ky] - sy * c[kz]);
    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * sz * a[kz] + v * sz * b[kz] + w * sz * c[kz];
    let t = t_scaled / det;
    if !t.is_finite() {
        return None;
    }
    Some((t, [u / det, v / det, w / det]))
}

/// Reference nearest-hit search over every triangle.
pub fn brute_force_intersect(mesh: &TriMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for f in 0..mesh.faces.len() {
        if let Some((t, bary)) = intersect_triangle(ray, &mesh.triangle(f)) {
            if t > t_min && t < t_max && best.is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    triangle: f as u32,
                    bary,
                });
            }
        }
    }
    best
}
