//! Conforming triangulations of planar domains.
//!
//! Conventions used throughout the crate:
//! - triangle vertices are stored counterclockwise;
//! - an edge stores its vertices sorted ascending; its unit tangent points
//!   from the lower to the higher vertex index and its unit normal is the
//!   tangent rotated 90 degrees counterclockwise;
//! - `tri_edges[k][i]` is the edge of triangle `k` opposite local vertex `i`;
//! - for an adjacent triangle, `sign` records whether the triangle's outward
//!   normal on that edge equals the edge normal (+1) or its opposite (-1).
//!
//! Refinement-edge markers drive newest-vertex bisection: each triangle
//! stores the local index of the edge that receives the new vertex, and both
//! children mark the edge opposite that vertex.

use std::collections::HashMap;

use crate::Error;

/// Marker for the missing second triangle of a boundary edge.
pub const NO_TRI: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Point2 {
        Point2 { x, y }
    }
}

/// Undirected mesh edge. `v` is sorted ascending; `tri[1] == NO_TRI` on the
/// boundary; `sign[s]` is the outward-normal sign of `tri[s]` on this edge.
#[derive(Clone, Debug)]
pub struct Edge {
    pub v: [usize; 2],
    pub tri: [usize; 2],
    pub sign: [f64; 2],
    pub boundary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshStats {
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub n_edges: usize,
    pub n_interior_edges: usize,
    pub n_boundary_edges: usize,
    /// Longest edge of the mesh.
    pub h_max: f64,
    /// Shortest edge of the mesh.
    pub h_min: f64,
    /// Worst ratio of element diameter to inradius.
    pub shape_max: f64,
}

#[derive(Clone, Debug)]
pub struct Triangulation {
    pub vertices: Vec<Point2>,
    /// Vertex triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge opposite local vertex `i` of each triangle.
    pub tri_edges: Vec<[usize; 3]>,
    /// Local refinement-edge index per triangle, if the mesh carries markers.
    pub refine_edge: Option<Vec<u8>>,
    /// For refined meshes: the triangle of the source mesh each triangle
    /// descends from.
    pub parent: Option<Vec<usize>>,
    pub vertex_is_boundary: Vec<bool>,
    /// Triangles around each vertex, ascending.
    pub vertex_tris: Vec<Vec<usize>>,
    pub area: Vec<f64>,
}

impl Triangulation {
    /// Builds the full topology from vertex coordinates and counterclockwise
    /// vertex triples. Rejects meshes with degenerate or clockwise triangles
    /// and edges shared by more than two triangles.
    pub fn from_cells(
        vertices: Vec<Point2>,
        triangles: Vec<[usize; 3]>,
        refine_edge: Option<Vec<u8>>,
    ) -> Result<Triangulation, Error> {
        let nv = vertices.len();
        if let Some(marks) = &refine_edge {
            if marks.len() != triangles.len() {
                return Err(Error::MeshFormat(
                    "marker count differs from triangle count".into(),
                ));
            }
            if marks.iter().any(|&m| m > 2) {
                return Err(Error::MeshFormat("refinement-edge index out of range".into()));
            }
        }
        let mut area = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::MeshFormat(format!("triangle {k} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::MeshFormat(format!("triangle {k} repeats a vertex")));
            }
            let a = signed_area(&vertices, t);
            if a <= 0.0 {
                return Err(Error::MeshFormat(format!(
                    "triangle {k} is degenerate or clockwise (signed area {a})"
                )));
            }
            area.push(a);
        }
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tri_edges = vec![[0usize; 3]; triangles.len()];
        for (k, t) in triangles.iter().enumerate() {
            for i in 0..3 {
                let a = t[(i + 1) % 3];
                let b = t[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let e = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        v: [key.0, key.1],
                        tri: [NO_TRI; 2],
                        sign: [0.0; 2],
                        boundary: false,
                    });
                    edges.len() - 1
                });
                tri_edges[k][i] = e;
                let slot = if edges[e].tri[0] == NO_TRI {
                    0
                } else if edges[e].tri[1] == NO_TRI {
                    1
                } else {
                    return Err(Error::MeshFormat(format!(
                        "edge ({}, {}) is shared by more than two triangles",
                        key.0, key.1
                    )));
                };
                edges[e].tri[slot] = k;
                // A counterclockwise triangle traverses the edge from a to b;
                // descending traversal aligns its outward normal with the
                // edge normal.
                edges[e].sign[slot] = if a > b { 1.0 } else { -1.0 };
            }
        }
        let mut vertex_is_boundary = vec![false; nv];
        for e in edges.iter_mut() {
            e.boundary = e.tri[1] == NO_TRI;
            if e.boundary {
                vertex_is_boundary[e.v[0]] = true;
                vertex_is_boundary[e.v[1]] = true;
            } else if e.sign[0] == e.sign[1] {
                return Err(Error::MeshFormat(format!(
                    "edge ({}, {}) is traversed twice in the same direction",
                    e.v[0], e.v[1]
                )));
            }
        }
        let mut vertex_tris = vec![Vec::new(); nv];
        for (k, t) in triangles.iter().enumerate() {
            for &v in t {
                vertex_tris[v].push(k);
            }
        }
        Ok(Triangulation {
            vertices,
            triangles,
            edges,
            tri_edges,
            refine_edge,
            parent: None,
            vertex_is_boundary,
            vertex_tris,
            area,
        })
    }

    /// The unit square split into an `m 2^n` by `2^n` grid of congruent cells,
    /// each cut along the diagonal from its lower-left to its upper-right
    /// corner. `m = 1` gives the uniform family; larger `m` stretches the
    /// triangles horizontally by that factor.
    pub fn anisotropic(n: u32, m: u32) -> Triangulation {
        assert!(m >= 1, "aspect factor must be positive");
        let nx = (m as usize) << n;
        let ny = 1usize << n;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Point2::new(i as f64 / nx as f64, j as f64 / ny as f64));
            }
        }
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (ll, lr) = (idx(i, j), idx(i + 1, j));
                let (ul, ur) = (idx(i, j + 1), idx(i + 1, j + 1));
                triangles.push([ll, lr, ur]);
                triangles.push([ll, ur, ul]);
            }
        }
        Triangulation::from_cells(vertices, triangles, None).expect("grid meshes are valid")
    }

    /// Uniform mesh of the unit square with `2^(n+1)` triangles per row.
    pub fn uniform(n: u32) -> Triangulation {
        Triangulation::anisotropic(n, 1)
    }

    /// Four triangles joining the corners of the unit square to its centre,
    /// with the outer edges marked for bisection.
    pub fn crossed_coarse() -> Triangulation {
        let vertices = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.5, 0.5),
        ];
        let triangles = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        // The marked edge is the outer one, opposite the centre vertex.
        Triangulation::from_cells(vertices, triangles, Some(vec![2; 4]))
            .expect("the crossed coarse mesh is valid")
    }

    /// Bisects every triangle at its refinement edge, `rounds` times. Fails
    /// if markers are missing or if two neighbours disagree about splitting
    /// their common edge, which would create a hanging node.
    ///
    /// The result's `parent` map points back to this mesh across all rounds.
    pub fn refine_nvb_global(&self, rounds: u32) -> Result<Triangulation, Error> {
        let mut cur = self.clone();
        let mut parent: Vec<usize> = (0..self.triangles.len()).collect();
        for _ in 0..rounds {
            let marks = cur.refine_edge.as_ref().ok_or(Error::MissingRefinementEdges)?;
            let mut marked = vec![false; cur.edges.len()];
            for (k, &m) in marks.iter().enumerate() {
                marked[cur.tri_edges[k][m as usize]] = true;
            }
            for (e, edge) in cur.edges.iter().enumerate() {
                if !marked[e] {
                    continue;
                }
                for &k in edge.tri.iter().filter(|&&k| k != NO_TRI) {
                    if cur.tri_edges[k][marks[k] as usize] != e {
                        return Err(Error::IncompatibleMarking { edge: e });
                    }
                }
            }
            let mut vertices = cur.vertices.clone();
            let mut mid = vec![usize::MAX; cur.edges.len()];
            for (e, edge) in cur.edges.iter().enumerate() {
                if marked[e] {
                    let (p, q) = (vertices[edge.v[0]], vertices[edge.v[1]]);
                    mid[e] = vertices.len();
                    vertices.push(Point2::new(0.5 * (p.x + q.x), 0.5 * (p.y + q.y)));
                }
            }
            let nt = cur.triangles.len();
            let mut triangles = Vec::with_capacity(2 * nt);
            let mut new_marks = Vec::with_capacity(2 * nt);
            let mut new_parent = Vec::with_capacity(2 * nt);
            for k in 0..nt {
                let m = marks[k] as usize;
                let t = cur.triangles[k];
                let (a, b, c) = (t[m], t[(m + 1) % 3], t[(m + 2) % 3]);
                let v = mid[cur.tri_edges[k][m]];
                // Both children mark the edge opposite the new vertex.
                triangles.push([a, b, v]);
                new_marks.push(2);
                triangles.push([a, v, c]);
                new_marks.push(1);
                new_parent.push(parent[k]);
                new_parent.push(parent[k]);
            }
            cur = Triangulation::from_cells(vertices, triangles, Some(new_marks))?;
            parent = new_parent;
        }
        cur.parent = Some(parent);
        Ok(cur)
    }

    /// Splits every triangle into three by connecting its vertices to its
    /// barycentre.
    pub fn barycentric_refine(&self) -> BarycentricMesh {
        let nv = self.vertices.len();
        let nt = self.triangles.len();
        let mut vertices = self.vertices.clone();
        for t in &self.triangles {
            let (p0, p1, p2) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            vertices.push(Point2::new((p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0));
        }
        let mut triangles = Vec::with_capacity(3 * nt);
        for (k, t) in self.triangles.iter().enumerate() {
            let b = nv + k;
            triangles.push([t[0], t[1], b]);
            triangles.push([t[1], t[2], b]);
            triangles.push([t[2], t[0], b]);
        }
        let mesh = Triangulation::from_cells(vertices, triangles, None)
            .expect("barycentric refinement of a valid mesh is valid");
        let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, edge) in mesh.edges.iter().enumerate() {
            ids.insert((edge.v[0], edge.v[1]), e);
        }
        let macro_edge = self
            .edges
            .iter()
            .map(|edge| ids[&(edge.v[0], edge.v[1])])
            .collect();
        BarycentricMesh {
            mesh,
            macro_count: nt,
            barycentre: (nv..nv + nt).collect(),
            macro_edge,
        }
    }

    pub fn point(&self, v: usize) -> Point2 {
        self.vertices[v]
    }

    pub fn tri_xy(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [
            [self.vertices[t[0]].x, self.vertices[t[0]].y],
            [self.vertices[t[1]].x, self.vertices[t[1]].y],
            [self.vertices[t[2]].x, self.vertices[t[2]].y],
        ]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].v;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt()
    }

    pub fn edge_midpoint(&self, e: usize) -> Point2 {
        let [a, b] = self.edges[e].v;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        Point2::new(0.5 * (p.x + q.x), 0.5 * (p.y + q.y))
    }

    /// Unit tangent, from the lower to the higher vertex index.
    pub fn edge_tangent(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e].v;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        let len = self.edge_length(e);
        [(q.x - p.x) / len, (q.y - p.y) / len]
    }

    /// Unit normal: the tangent rotated 90 degrees counterclockwise.
    pub fn edge_normal(&self, e: usize) -> [f64; 2] {
        let t = self.edge_tangent(e);
        [-t[1], t[0]]
    }

    /// Slot (0 or 1) of triangle `k` in edge `e`'s adjacency.
    pub fn edge_slot(&self, e: usize, k: usize) -> Option<usize> {
        self.edges[e].tri.iter().position(|&t| t == k)
    }

    /// Outward unit normal of triangle `k` on its edge opposite local
    /// vertex `i`.
    pub fn outward_normal(&self, k: usize, i: usize) -> [f64; 2] {
        let e = self.tri_edges[k][i];
        let slot = self.edge_slot(e, k).expect("tri_edges is consistent");
        let n = self.edge_normal(e);
        let s = self.edges[e].sign[slot];
        [s * n[0], s * n[1]]
    }

    /// Barycentric coordinates of `x` with respect to triangle `k`.
    pub fn barycentric(&self, k: usize, x: Point2) -> [f64; 3] {
        let t = self.triangles[k];
        let (p0, p1, p2) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
        let twice = 2.0 * self.area[k];
        let l0 = ((p2.x - p1.x) * (x.y - p1.y) - (p2.y - p1.y) * (x.x - p1.x)) / twice;
        let l1 = ((p0.x - p2.x) * (x.y - p2.y) - (p0.y - p2.y) * (x.x - p2.x)) / twice;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Gradients of the three barycentric coordinates on triangle `k`.
    pub fn grad_barycentric(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        let twice = 2.0 * self.area[k];
        let mut g = [[0.0; 2]; 3];
        for i in 0..3 {
            let p = self.vertices[t[(i + 1) % 3]];
            let q = self.vertices[t[(i + 2) % 3]];
            g[i] = [(p.y - q.y) / twice, (q.x - p.x) / twice];
        }
        g
    }

    pub fn n_interior_edges(&self) -> usize {
        self.edges.iter().filter(|e| !e.boundary).count()
    }

    pub fn stats(&self) -> MeshStats {
        let mut h_max: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        for e in 0..self.edges.len() {
            let l = self.edge_length(e);
            h_max = h_max.max(l);
            h_min = h_min.min(l);
        }
        let mut shape_max: f64 = 0.0;
        for k in 0..self.triangles.len() {
            let mut diam: f64 = 0.0;
            let mut perimeter = 0.0;
            for i in 0..3 {
                let l = self.edge_length(self.tri_edges[k][i]);
                diam = diam.max(l);
                perimeter += l;
            }
            let inradius = 2.0 * self.area[k] / perimeter;
            shape_max = shape_max.max(diam / inradius);
        }
        let n_boundary = self.edges.iter().filter(|e| e.boundary).count();
        MeshStats {
            n_vertices: self.vertices.len(),
            n_triangles: self.triangles.len(),
            n_edges: self.edges.len(),
            n_interior_edges: self.edges.len() - n_boundary,
            n_boundary_edges: n_boundary,
            h_max,
            h_min,
            shape_max,
        }
    }

    /// Serializes the mesh as plain text. Coordinates keep 17 significant
    /// digits, so import reproduces them bit for bit.
    pub fn export_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "vertices {}", self.vertices.len()).unwrap();
        for p in &self.vertices {
            writeln!(out, "{:.16e} {:.16e}", p.x, p.y).unwrap();
        }
        writeln!(out, "triangles {}", self.triangles.len()).unwrap();
        for (k, t) in self.triangles.iter().enumerate() {
            match &self.refine_edge {
                Some(marks) => writeln!(out, "{} {} {} {}", t[0], t[1], t[2], marks[k]).unwrap(),
                None => writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap(),
            }
        }
        out
    }

    /// Parses the `export_text` format and validates the mesh.
    pub fn import_text(text: &str) -> Result<Triangulation, Error> {
        fn header(lines: &[(usize, &str)], pos: &mut usize, name: &str) -> Result<usize, Error> {
            let &(no, line) = lines
                .get(*pos)
                .ok_or_else(|| Error::MeshFormat(format!("missing '{name}' header")))?;
            *pos += 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[..] {
                [word, count] if word == name => count
                    .parse::<usize>()
                    .map_err(|_| Error::MeshFormat(format!("line {}: bad count", no + 1))),
                _ => Err(Error::MeshFormat(format!("line {}: expected '{name} <count>'", no + 1))),
            }
        }
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let mut pos = 0;
        let nv = header(&lines, &mut pos, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let &(no, line) = lines
                .get(pos)
                .ok_or_else(|| Error::MeshFormat("vertex list ends early".into()))?;
            pos += 1;
            let nums: Result<Vec<f64>, _> =
                line.split_whitespace().map(|s| s.parse::<f64>()).collect();
            match nums.as_deref() {
                Ok([x, y]) => vertices.push(Point2::new(*x, *y)),
                _ => {
                    return Err(Error::MeshFormat(format!(
                        "line {}: expected two coordinates",
                        no + 1
                    )))
                }
            }
        }
        let nt = header(&lines, &mut pos, "triangles")?;
        let mut triangles = Vec::with_capacity(nt);
        let mut marks: Vec<u8> = Vec::new();
        for i in 0..nt {
            let &(no, line) = lines
                .get(pos)
                .ok_or_else(|| Error::MeshFormat("triangle list ends early".into()))?;
            pos += 1;
            let nums: Result<Vec<usize>, _> =
                line.split_whitespace().map(|s| s.parse::<usize>()).collect();
            let nums = nums.map_err(|_| Error::MeshFormat(format!("line {}: bad index", no + 1)))?;
            match nums[..] {
                [a, b, c] if marks.is_empty() => triangles.push([a, b, c]),
                [a, b, c, m] if marks.len() == i => {
                    triangles.push([a, b, c]);
                    let m = u8::try_from(m)
                        .map_err(|_| Error::MeshFormat(format!("line {}: bad marker", no + 1)))?;
                    marks.push(m);
                }
                _ => {
                    return Err(Error::MeshFormat(format!(
                        "line {}: expected 'a b c' or 'a b c marker' consistently",
                        no + 1
                    )))
                }
            }
        }
        if pos != lines.len() {
            return Err(Error::MeshFormat("trailing content after triangle list".into()));
        }
        let marks = if marks.is_empty() { None } else { Some(marks) };
        Triangulation::from_cells(vertices, triangles, marks)
    }

    /// Geometric conformity check: no vertex may lie in the open interior of
    /// an edge. Quadratic in the mesh size; intended for tests.
    pub fn validate_conformity(&self) -> Result<(), Error> {
        for (e, edge) in self.edges.iter().enumerate() {
            let (p, q) = (self.vertices[edge.v[0]], self.vertices[edge.v[1]]);
            let len2 = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
            for (v, z) in self.vertices.iter().enumerate() {
                if v == edge.v[0] || v == edge.v[1] {
                    continue;
                }
                let cross = (q.x - p.x) * (z.y - p.y) - (q.y - p.y) * (z.x - p.x);
                let t = ((z.x - p.x) * (q.x - p.x) + (z.y - p.y) * (q.y - p.y)) / len2;
                if cross.abs() < 1e-12 * len2.sqrt() && t > 1e-9 && t < 1.0 - 1e-9 {
                    return Err(Error::MeshFormat(format!(
                        "vertex {v} hangs on edge {e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Barycentric refinement of a `Triangulation`. The sub-triangles of macro
/// element `k` are `3k + i` for `i = 0, 1, 2`, with vertex triples
/// `(v_i, v_{i+1}, barycentre)` in the macro's cyclic order.
#[derive(Clone, Debug)]
pub struct BarycentricMesh {
    pub mesh: Triangulation,
    pub macro_count: usize,
    /// Barycentre vertex of each macro element.
    pub barycentre: Vec<usize>,
    /// Edge of `mesh` that coincides with each macro-mesh edge.
    pub macro_edge: Vec<usize>,
}

impl BarycentricMesh {
    pub fn micros(&self, k: usize) -> [usize; 3] {
        [3 * k, 3 * k + 1, 3 * k + 2]
    }

    pub fn macro_of(&self, micro: usize) -> usize {
        micro / 3
    }
}

fn signed_area(vertices: &[Point2], t: &[usize; 3]) -> f64 {
    let (p0, p1, p2) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
    0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y))
}
