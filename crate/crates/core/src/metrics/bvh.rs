//! Bounding-volume hierarchy over triangles for self-intersection queries.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn overlaps(&self, o: &Aabb, pad: f64) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] + pad && o.min[k] <= self.max[k] + pad)
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

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// face indices, leaves reference contiguous ranges
    order: Vec<usize>,
}

impl Bvh {
    pub fn build(faces: &[[usize; 3]], vertices: &[Vector3<f64>]) -> Self {
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                f.iter().for_each(|&v| b.grow(&vertices[v]));
                b
            })
            .collect();
        let centers: Vec<Vector3<f64>> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(2 * faces.len() / LEAF_SIZE + 1),
            order: (0..faces.len()).collect(),
        };
        if !faces.is_empty() {
            bvh.split(0, faces.len(), &boxes, &centers);
        }
        bvh
    }

    fn split(&mut self, start: usize, end: usize, boxes: &[Aabb], centers: &[Vector3<f64>]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &self.order[start..end] {
            bounds.merge(&boxes[f]);
            cbounds.grow(&centers[f]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let axis = (cbounds.max - cbounds.min).imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a][axis]
                .partial_cmp(&centers[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.split(start, mid, boxes, centers);
        let right = self.split(mid, end, boxes, centers);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Calls `visit(i, j)` for every face pair (i ≠ j, each unordered pair
    /// once) whose bounding boxes overlap within `pad`.
    pub fn self_pairs(&self, pad: f64, mut visit: impl FnMut(usize, usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![(0usize, 0usize)];
        while let Some((a, b)) = stack.pop() {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            if !na.bounds().overlaps(nb.bounds(), pad) {
                continue;
            }
            match (na, nb) {
                (Node::Leaf { start: s0, end: e0, .. }, Node::Leaf { start: s1, end: e1, .. }) => {
                    if a == b {
                        for i in *s0..*e0 {
                            for j in i + 1..*e0 {
                                visit(self.order[i], self.order[j]);
                            }
                        }
                    } else {
                        for i in *s0..*e0 {
                            for j in *s1..*e1 {
                                visit(self.order[i], self.order[j]);
                            }
                        }
                    }
                }
                (Node::Inner { left, right, .. }, _) if a == b => {
                    stack.push((*left, *left));
                    stack.push((*right, *right));
                    stack.push((*left, *right));
                }
                (Node::Inner { left, right, .. }, Node::Leaf { .. }) => {
                    stack.push((*left, b));
                    stack.push((*right, b));
                }
                (Node::Leaf { .. }, Node::Inner { left, right, .. }) => {
                    stack.push((a, *left));
                    stack.push((a, *right));
                }
                (Node::Inner { left: l0, right: r0, .. }, Node::Inner { left: l1, right: r1, .. }) => {
                    stack.push((*l0, *l1));
                    stack.push((*l0, *r1));
                    stack.push((*r0, *l1));
                    stack.push((*r0, *r1));
                }
            }
        }
    }
}
