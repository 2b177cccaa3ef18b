//! Indexed triangle meshes and their connectivity.

use std::collections::HashSet;

use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Component label per face (vertex-connected), labels numbered in
    /// order of first appearance.
    pub fn face_components(&self) -> (Vec<usize>, usize) {
        let mut uf = UnionFind::new(self.vertices.len());
        for f in &self.faces {
            uf.union(f[0] as usize, f[1] as usize);
            uf.union(f[1] as usize, f[2] as usize);
        }
        let mut label = vec![usize::MAX; self.vertices.len()];
        let mut next = 0;
        let labels = self
            .faces
            .iter()
            .map(|f| {
                let root = uf.find(f[0] as usize);
                if label[root] == usize::MAX {
                    label[root] = next;
                    next += 1;
                }
                label[root]
            })
            .collect();
        (labels, next)
    }

    pub fn component_count(&self) -> usize {
        self.face_components().1
    }

    /// `V − E + F` over referenced vertices; 2 for a closed genus-0 surface.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = HashSet::new();
        let mut used = HashSet::new();
        for f in &self.faces {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
                used.insert(a);
            }
        }
        used.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Edges used by exactly one face.
    pub fn boundary_edge_count(&self) -> usize {
        let mut count = std::collections::HashMap::new();
        for f in &self.faces {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        count.values().filter(|c| **c == 1).count()
    }

    /// Keeps the faces selected by `keep` and drops vertices no face uses.
    pub fn filter_faces(&self, keep: impl Fn(usize, &[u32; 3]) -> bool) -> Self {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (i, f) in self.faces.iter().enumerate() {
            if !keep(i, f) {
                continue;
            }
            let mut nf = [0u32; 3];
            for (k, v) in f.iter().enumerate() {
                let v = *v as usize;
                if remap[v] == u32::MAX {
                    remap[v] = vertices.len() as u32;
                    vertices.push(self.vertices[v]);
                }
                nf[k] = remap[v];
            }
            faces.push(nf);
        }
        Self { vertices, faces }
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    /// Signed enclosed volume (positive when faces wind counter-clockwise
    /// seen from outside).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels do not depend on union order
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}
