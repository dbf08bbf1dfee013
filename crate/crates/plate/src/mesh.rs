//! Shape-regular triangulations of polygonal domains: construction,
//! combinatorial queries, uniform (red) refinement, and newest-vertex
//! bisection with conforming closure.
//!
//! Edge orientation convention: for an interior edge the triangle with the
//! smaller id is `t_plus` and the unit normal points from `t_plus` into
//! `t_minus`; on the boundary the normal points outward. The tangent runs
//! from endpoint `a` to endpoint `b` and the pair (normal, tangent) is
//! right-handed with `normal = (tangent.y, -tangent.x)`.

use crate::quadrature::triangle_signed_area;
use std::collections::HashMap;

/// Oriented edge of a triangulation.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex ids; the tangent runs from `a` to `b`.
    pub a: usize,
    pub b: usize,
    /// Unit normal, pointing out of `t_plus`.
    pub normal: [f64; 2],
    /// Unit tangent, `(b - a) / length`.
    pub tangent: [f64; 2],
    pub length: f64,
    pub mid: [f64; 2],
    /// Adjacent triangle on the plus side (always present).
    pub t_plus: usize,
    /// Adjacent triangle on the minus side; `None` on the boundary.
    pub t_minus: Option<usize>,
    /// Local edge index of this edge within `t_plus`.
    pub l_plus: u8,
    /// Local edge index within `t_minus`, if any.
    pub l_minus: u8,
}

impl Edge {
    pub fn boundary(&self) -> bool {
        self.t_minus.is_none()
    }

    /// Physical coordinates of the point at parameter `t` in [0, 1].
    pub fn point_at(&self, mesh: &Mesh, t: f64) -> [f64; 2] {
        let a = mesh.vertices[self.a];
        let b = mesh.vertices[self.b];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Per-triangle edge ids; local edge `k` is opposite local vertex `k`.
    pub tri_edges: Vec<[usize; 3]>,
    /// True for vertices lying on a boundary edge.
    pub vertex_is_boundary: Vec<bool>,
    /// Local index of the peak vertex; the refinement edge for bisection is
    /// the edge opposite the peak.
    pub peak: Vec<u8>,
    /// Undirected endpoint pair (min, max) to edge id.
    pub edge_lookup: HashMap<(usize, usize), usize>,
    vertex_tri_offsets: Vec<usize>,
    vertex_tri_list: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshError {
    VertexIndexOutOfRange { triangle: usize },
    DegenerateTriangle { triangle: usize, area: f64 },
    InconsistentOrientation { triangle: usize },
    NonManifoldEdge { a: usize, b: usize },
    ClosureStalled { iterations: usize },
    Parse { line: usize, message: String },
}

impl std::fmt::Display for MeshError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeshError::VertexIndexOutOfRange { triangle } => {
                write!(f, "triangle {triangle} references a vertex out of range")
            }
            MeshError::DegenerateTriangle { triangle, area } => {
                write!(f, "triangle {triangle} is degenerate (signed area {area})")
            }
            MeshError::InconsistentOrientation { triangle } => {
                write!(f, "triangle {triangle} is not counterclockwise or duplicates an edge direction")
            }
            MeshError::NonManifoldEdge { a, b } => {
                write!(f, "edge ({a}, {b}) is shared by more than two triangles")
            }
            MeshError::ClosureStalled { iterations } => {
                write!(f, "bisection closure did not terminate after {iterations} sweeps; refinement-edge labels are corrupt")
            }
            MeshError::Parse { line, message } => write!(f, "mesh file line {line}: {message}"),
        }
    }
}

impl std::error::Error for MeshError {}

/// Record of one uniform refinement, mapping coarse entities to fine ones.
#[derive(Debug, Clone)]
pub struct UniformTrace {
    /// Fine triangle -> coarse parent triangle.
    pub parent: Vec<usize>,
    /// Coarse edge -> id of the fine vertex at its midpoint.
    pub edge_mid: Vec<usize>,
}

pub fn build_mesh(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Mesh, MeshError> {
    Mesh::from_parts(vertices, triangles, None)
}

impl Mesh {
    fn from_parts(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        peaks: Option<Vec<u8>>,
    ) -> Result<Mesh, MeshError> {
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(MeshError::VertexIndexOutOfRange { triangle: t });
            }
            let coords = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let area = triangle_signed_area(&coords);
            if area == 0.0 {
                return Err(MeshError::DegenerateTriangle { triangle: t, area });
            }
            if area < 0.0 {
                return Err(MeshError::InconsistentOrientation { triangle: t });
            }
        }

        // Collect directed edges; every interior edge must occur once per
        // direction for a consistently oriented manifold mesh.
        let mut directed: HashMap<(usize, usize), (usize, u8)> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let p = tri[(k + 1) % 3];
                let q = tri[(k + 2) % 3];
                if directed.insert((p, q), (t, k as u8)).is_some() {
                    return Err(MeshError::InconsistentOrientation { triangle: t });
                }
            }
        }

        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        let mut edge_lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut keys: Vec<(usize, usize)> = directed.keys().map(|&(p, q)| (p.min(q), p.max(q))) .collect();
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            let fwd = directed.get(&(key.0, key.1)).copied();
            let bwd = directed.get(&(key.1, key.0)).copied();
            let (plus, minus) = match (fwd, bwd) {
                (Some(x), Some(y)) => {
                    // Interior edge: smaller triangle id is the plus side.
                    if x.0 <= y.0 {
                        (x, Some(y))
                    } else {
                        (y, Some(x))
                    }
                }
                (Some(x), None) => (x, None),
                (None, Some(y)) => (y, None),
                (None, None) => unreachable!(),
            };
            let (tp, lp) = plus;
            let tri = triangles[tp];
            let pa = tri[(lp as usize + 1) % 3];
            let pb = tri[(lp as usize + 2) % 3];
            let va = vertices[pa];
            let vb = vertices[pb];
            let d = [vb[0] - va[0], vb[1] - va[1]];
            let length = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let tangent = [d[0] / length, d[1] / length];
            // Outward normal of a counterclockwise triangle along its
            // boundary direction.
            let normal = [tangent[1], -tangent[0]];
            let id = edges.len();
            edges.push(Edge {
                a: pa,
                b: pb,
                normal,
                tangent,
                length,
                mid: [0.5 * (va[0] + vb[0]), 0.5 * (va[1] + vb[1])],
                t_plus: tp,
                t_minus: minus.map(|(t, _)| t),
                l_plus: lp,
                l_minus: minus.map(|(_, l)| l).unwrap_or(u8::MAX),
            });
            tri_edges[tp][lp as usize] = id;
            if let Some((tm, lm)) = minus {
                tri_edges[tm][lm as usize] = id;
            }
            edge_lookup.insert(key, id);
        }

        let mut vertex_is_boundary = vec![false; nv];
        for e in &edges {
            if e.boundary() {
                vertex_is_boundary[e.a] = true;
                vertex_is_boundary[e.b] = true;
            }
        }

        // Vertex -> triangle adjacency in CSR form.
        let mut counts = vec![0usize; nv];
        for tri in &triangles {
            for &v in tri {
                counts[v] += 1;
            }
        }
        let mut vertex_tri_offsets = vec![0usize; nv + 1];
        for v in 0..nv {
            vertex_tri_offsets[v + 1] = vertex_tri_offsets[v] + counts[v];
        }
        let mut cursor = vertex_tri_offsets.clone();
        let mut vertex_tri_list = vec![0usize; vertex_tri_offsets[nv]];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tri_list[cursor[v]] = t;
                cursor[v] += 1;
            }
        }

        let peak = match peaks {
            Some(p) => p,
            None => longest_edge_peaks(&vertices, &triangles),
        };

        Ok(Mesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            vertex_is_boundary,
            peak,
            edge_lookup,
            vertex_tri_offsets,
            vertex_tri_list,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Triangles containing vertex `z` (the vertex patch T(z)).
    pub fn vertex_patch(&self, z: usize) -> &[usize] {
        &self.vertex_tri_list[self.vertex_tri_offsets[z]..self.vertex_tri_offsets[z + 1]]
    }

    /// Coordinates of the three corners of triangle `t`.
    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    pub fn area(&self, t: usize) -> f64 {
        triangle_signed_area(&self.corners(t))
    }

    /// Diameter (longest edge length) of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let c = self.corners(t);
        let mut h: f64 = 0.0;
        for k in 0..3 {
            let d = [c[(k + 1) % 3][0] - c[k][0], c[(k + 1) % 3][1] - c[k][1]];
            h = h.max((d[0] * d[0] + d[1] * d[1]).sqrt());
        }
        h
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.diameter(t)).fold(0.0, f64::max)
    }

    /// Sign of the global edge normal relative to the outward normal of
    /// triangle `t` on edge `e`: +1 on the plus side, -1 on the minus side.
    pub fn edge_sign(&self, e: usize, t: usize) -> f64 {
        if self.edges[e].t_plus == t {
            1.0
        } else {
            -1.0
        }
    }

    /// Barycentric coordinates of `x` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, x: [f64; 2]) -> [f64; 3] {
        let c = self.corners(t);
        let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
        let l1 = ((x[0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (x[1] - c[0][1])) / det;
        let l2 = ((c[1][0] - c[0][0]) * (x[1] - c[0][1]) - (x[0] - c[0][0]) * (c[1][1] - c[0][1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Triangle containing `x` (tolerant linear scan; intended for tests and
    /// small diagnostic paths, not hot loops).
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        let mut best = None;
        let mut best_min = -f64::INFINITY;
        for t in 0..self.n_triangles() {
            let l = self.barycentric(t, x);
            let m = l[0].min(l[1]).min(l[2]);
            if m > best_min {
                best_min = m;
                best = Some(t);
            }
        }
        if best_min >= -1e-12 {
            best
        } else {
            None
        }
    }

    /// Max over triangles of diameter / inradius.
    pub fn shape_regularity(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..self.n_triangles() {
            let c = self.corners(t);
            let mut perimeter = 0.0;
            for k in 0..3 {
                let d = [c[(k + 1) % 3][0] - c[k][0], c[(k + 1) % 3][1] - c[k][1]];
                perimeter += (d[0] * d[0] + d[1] * d[1]).sqrt();
            }
            let inradius = 2.0 * self.area(t) / perimeter;
            worst = worst.max(self.diameter(t) / inradius);
        }
        worst
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.n_triangles() {
            let c = self.corners(t);
            for k in 0..3 {
                let u = [c[(k + 1) % 3][0] - c[k][0], c[(k + 1) % 3][1] - c[k][1]];
                let v = [c[(k + 2) % 3][0] - c[k][0], c[(k + 2) % 3][1] - c[k][1]];
                let cos = (u[0] * v[0] + u[1] * v[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                min = min.min(cos.clamp(-1.0, 1.0).acos());
            }
        }
        min
    }

    /// Red refinement: every triangle is split into four similar children.
    pub fn refine_uniform(&self) -> (Mesh, UniformTrace) {
        let nv = self.n_vertices();
        let mut vertices = self.vertices.clone();
        let mut edge_mid = vec![0usize; self.n_edges()];
        for (e, edge) in self.edges.iter().enumerate() {
            edge_mid[e] = vertices.len();
            vertices.push(edge.mid);
        }
        debug_assert_eq!(vertices.len(), nv + self.n_edges());
        let mut triangles = Vec::with_capacity(4 * self.n_triangles());
        let mut parent = Vec::with_capacity(4 * self.n_triangles());
        for (t, tri) in self.triangles.iter().enumerate() {
            let m = [
                edge_mid[self.tri_edges[t][0]],
                edge_mid[self.tri_edges[t][1]],
                edge_mid[self.tri_edges[t][2]],
            ];
            // Corner children plus the inner child; all counterclockwise.
            triangles.push([tri[0], m[2], m[1]]);
            triangles.push([tri[1], m[0], m[2]]);
            triangles.push([tri[2], m[1], m[0]]);
            triangles.push([m[0], m[1], m[2]]);
            parent.extend_from_slice(&[t, t, t, t]);
        }
        let mesh = Mesh::from_parts(vertices, triangles, None)
            .expect("red refinement of a valid mesh is valid");
        (mesh, UniformTrace { parent, edge_mid })
    }

    /// Newest-vertex bisection of the marked triangles with conforming
    /// closure. Unmarked triangles are bisected only as far as conformity
    /// requires.
    pub fn refine_bisect(&self, marked: &[usize]) -> Result<Mesh, MeshError> {
        if marked.is_empty() {
            return Ok(self.clone());
        }
        let ne = self.n_edges();
        let mut split = vec![false; ne];
        for &t in marked {
            split[self.refinement_edge(t)] = true;
        }
        // Closure: a triangle with any split edge must split its refinement
        // edge as well.
        let cap = ne + 2;
        let mut rounds = 0;
        loop {
            let mut changed = false;
            for t in 0..self.n_triangles() {
                let re = self.refinement_edge(t);
                if !split[re] && self.tri_edges[t].iter().any(|&e| split[e]) {
                    split[re] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            rounds += 1;
            if rounds > cap {
                return Err(MeshError::ClosureStalled { iterations: rounds });
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if split[e] {
                let key = (edge.a.min(edge.b), edge.a.max(edge.b));
                midpoint.insert(key, vertices.len());
                vertices.push(edge.mid);
            }
        }

        let mut triangles = Vec::new();
        let mut peaks = Vec::new();
        for t in 0..self.n_triangles() {
            emit_bisected(self.triangles[t], self.peak[t] as usize, &midpoint, &mut triangles, &mut peaks);
        }
        Mesh::from_parts(vertices, triangles, Some(peaks))
    }

    /// Edge id of the refinement edge (opposite the peak) of triangle `t`.
    pub fn refinement_edge(&self, t: usize) -> usize {
        self.tri_edges[t][self.peak[t] as usize]
    }

    /// Total area of all triangles.
    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }
}

fn longest_edge_peaks(vertices: &[[f64; 2]], triangles: &[[usize; 3]]) -> Vec<u8> {
    triangles
        .iter()
        .map(|tri| {
            let mut best = 0usize;
            let mut best_len = -1.0f64;
            for k in 0..3 {
                let p = vertices[tri[(k + 1) % 3]];
                let q = vertices[tri[(k + 2) % 3]];
                let len2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                // Longest edge wins; ties break toward the smallest opposite
                // vertex id for determinism.
                if len2 > best_len || (len2 == best_len && tri[k] < tri[best]) {
                    best_len = len2;
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

fn emit_bisected(
    tri: [usize; 3],
    peak: usize,
    midpoint: &HashMap<(usize, usize), usize>,
    triangles: &mut Vec<[usize; 3]>,
    peaks: &mut Vec<u8>,
) {
    let r = tri[peak];
    let a = tri[(peak + 1) % 3];
    let b = tri[(peak + 2) % 3];
    let key = (a.min(b), a.max(b));
    match midpoint.get(&key) {
        None => {
            triangles.push(tri);
            peaks.push(peak as u8);
        }
        Some(&m) => {
            // Children keep counterclockwise orientation; the new vertex m is
            // the peak of both children.
            emit_bisected([a, m, r], 1, midpoint, triangles, peaks);
            emit_bisected([m, b, r], 0, midpoint, triangles, peaks);
        }
    }
}

/// Built-in initial mesh of the unit square split along one diagonal.
pub fn unit_square_two() -> Mesh {
    build_mesh(
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

/// Built-in initial mesh of the unit square split into four triangles around
/// the center vertex.
pub fn unit_square_four() -> Mesh {
    build_mesh(
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]],
        vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
    )
    .unwrap()
}

/// Built-in L-shaped domain (-1,1)^2 minus the closed lower-right quadrant,
/// as a six-triangle initial mesh with re-entrant corner at the origin.
pub fn l_shape() -> Mesh {
    build_mesh(
        vec![
            [-1.0, -1.0],
            [0.0, -1.0],
            [-1.0, 0.0],
            [0.0, 0.0],
            [1.0, 0.0],
            [-1.0, 1.0],
            [0.0, 1.0],
            [1.0, 1.0],
        ],
        vec![[0, 1, 3], [0, 3, 2], [2, 3, 6], [2, 6, 5], [3, 4, 7], [3, 7, 6]],
    )
    .unwrap()
}

/// Parse the plain-text mesh format: a header `nv nt`, then `nv` lines `x y`,
/// then `nt` lines `i j k` with 0-based vertex indices.
pub fn parse_mesh_file(text: &str) -> Result<Mesh, MeshError> {
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push((lineno + 1, tok));
        }
    }
    let mut cursor = 0usize;
    let mut take = |what: &str| -> Result<(usize, &str), MeshError> {
        let t = tokens.get(cursor).copied().ok_or(MeshError::Parse {
            line: tokens.last().map(|x| x.0).unwrap_or(0),
            message: format!("unexpected end of file while reading {what}"),
        })?;
        cursor += 1;
        Ok(t)
    };
    let parse_usize = |t: (usize, &str), what: &str| -> Result<usize, MeshError> {
        t.1.parse().map_err(|_| MeshError::Parse { line: t.0, message: format!("bad {what} `{}`", t.1) })
    };
    let parse_f64 = |t: (usize, &str), what: &str| -> Result<f64, MeshError> {
        t.1.parse().map_err(|_| MeshError::Parse { line: t.0, message: format!("bad {what} `{}`", t.1) })
    };
    let nv = parse_usize(take("vertex count")?, "vertex count")?;
    let nt = parse_usize(take("triangle count")?, "triangle count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = parse_f64(take("coordinate")?, "coordinate")?;
        let y = parse_f64(take("coordinate")?, "coordinate")?;
        vertices.push([x, y]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let i = parse_usize(take("vertex index")?, "vertex index")?;
        let j = parse_usize(take("vertex index")?, "vertex index")?;
        let k = parse_usize(take("vertex index")?, "vertex index")?;
        triangles.push([i, j, k]);
    }
    build_mesh(vertices, triangles)
}
