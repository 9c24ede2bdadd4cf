//! Bounding volume hierarchy over axis-aligned boxes, median split on centroids.

use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn expanded(&self, d: f64) -> Aabb {
        Aabb { min: self.min - Vec3::repeat(d), max: self.max + Vec3::repeat(d) }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && self.max.x >= o.min.x
            && self.min.y <= o.max.y
            && self.max.y >= o.min.y
            && self.min.z <= o.max.z
            && self.max.z >= o.min.z
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Squared distance from a point to the box (0 inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }

    /// Slab test; returns the entry parameter if the ray enters before `t_max`.
    pub fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf means the origin lies on the slab plane; treat as inside
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

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: u32, count: u32 },
    Inner { bounds: Aabb, left: u32, right: u32 },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    boxes: Vec<Aabb>,
}

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Bvh {
        let mut order: Vec<u32> = (0..boxes.len() as u32).collect();
        let centers: Vec<Vec3> = boxes.iter().map(|b| b.center()).collect();
        let mut nodes = Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1);
        if !boxes.is_empty() {
            build_node(boxes, &centers, &mut order, 0, &mut nodes);
        }
        Bvh { nodes, order, boxes: boxes.to_vec() }
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| *n.bounds()).unwrap_or_else(Aabb::empty)
    }

    /// Visits primitives whose boxes the ray enters before the current `t_max`.
    /// The visitor returns a new (smaller) `t_max` when it records a hit.
    pub fn traverse_ray(&self, origin: &Vec3, dir: &Vec3, mut t_max: f64, mut visit: impl FnMut(usize, f64) -> Option<f64>) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node.bounds().ray_entry(origin, &inv, t_max).is_none() {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &p in &self.order[*start as usize..(*start + *count) as usize] {
                        if let Some(t) = visit(p as usize, t_max) {
                            t_max = t_max.min(t);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    // near child last so it pops first
                    let l = self.nodes[*left as usize].bounds().ray_entry(origin, &inv, t_max);
                    let r = self.nodes[*right as usize].bounds().ray_entry(origin, &inv, t_max);
                    match (l, r) {
                        (Some(a), Some(b)) => {
                            if a <= b {
                                stack.push(*right);
                                stack.push(*left);
                            } else {
                                stack.push(*left);
                                stack.push(*right);
                            }
                        }
                        (Some(_), None) => stack.push(*left),
                        (None, Some(_)) => stack.push(*right),
                        (None, None) => {}
                    }
                }
            }
        }
    }

    /// Visits every primitive whose box overlaps `query`. Stops early when the
    /// visitor returns `true`, and reports whether it did.
    pub fn any_overlap(&self, query: &Aabb, mut visit: impl FnMut(usize) -> bool) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut stack: Vec<u32> = vec![0];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if !node.bounds().overlaps(query) {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &p in &self.order[*start as usize..(*start + *count) as usize] {
                        if self.boxes[p as usize].overlaps(query) && visit(p as usize) {
                            return true;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        false
    }

    /// Nearest-primitive search. `visit` returns the squared distance of a
    /// primitive; subtrees farther than the best so far (or `max_d2`) are pruned.
    pub fn nearest(&self, p: &Vec3, max_d2: f64, mut visit: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut best_d2 = max_d2;
        let mut stack: Vec<u32> = vec![0];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node.bounds().distance_squared(p) > best_d2 {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &prim in &self.order[*start as usize..(*start + *count) as usize] {
                        let d2 = visit(prim as usize);
                        if d2 <= best_d2 && best.map_or(true, |(bi, bd)| d2 < bd || (d2 == bd && (prim as usize) < bi)) {
                            best_d2 = d2;
                            best = Some((prim as usize, d2));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left as usize].bounds().distance_squared(p);
                    let dr = self.nodes[*right as usize].bounds().distance_squared(p);
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }
}

fn build_node(boxes: &[Aabb], centers: &[Vec3], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let bounds = order.iter().fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i as usize]));
    let idx = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start: offset as u32, count: order.len() as u32 });
        return idx;
    }
    let cb = Aabb::from_points(order.iter().map(|&i| &centers[i as usize]));
    let ext = cb.extents();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        nodes.push(Node::Leaf { bounds, start: offset as u32, count: order.len() as u32 });
        return idx;
    }
    order.sort_by(|&a, &b| {
        centers[a as usize][axis]
            .partial_cmp(&centers[b as usize][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    nodes.push(Node::Leaf { bounds, start: 0, count: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(boxes, centers, lo, offset, nodes);
    let right = build_node(boxes, centers, hi, offset + mid, nodes);
    nodes[idx as usize] = Node::Inner { bounds, left, right };
    idx
}
