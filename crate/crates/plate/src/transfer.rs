//! Transfer operators between the discrete spaces: averaged Morley
//! interpolation, the Lagrange transfer into continuous quadratics, the
//! conforming C1 companion of Morley fields, and the composite smoother
//! (companion after Morley interpolation).
//!
//! Every operator is also available as an explicit sparse matrix acting on
//! coefficient vectors; the right-hand-side assembly and the dual-norm
//! surrogate compose these matrices instead of re-deriving dof formulas.

use crate::mesh::{Mesh, UniformTrace};
use crate::quadrature::edge_rule_any;
use crate::spaces::{nodal_field, DiscreteField, DofMap, SpaceKind};
use std::collections::HashMap;
use std::sync::Arc;

/// Sparse linear operator in triplet form.
#[derive(Debug, Clone)]
pub struct SparseOp {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseOp {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for &(i, j, v) in &self.entries {
            y[i as usize] += v * x[j as usize];
        }
        y
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for &(i, j, v) in &self.entries {
            x[j as usize] += v * y[i as usize];
        }
        x
    }
}

fn rows_to_entries(rows: Vec<HashMap<u32, f64>>) -> Vec<(u32, u32, f64)> {
    let mut entries = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        let mut cols: Vec<(u32, f64)> = row.into_iter().collect();
        cols.sort_unstable_by_key(|&(j, _)| j);
        for (j, v) in cols {
            if v != 0.0 {
                entries.push((i as u32, j, v));
            }
        }
    }
    entries
}

/// Matrix of the averaged Morley interpolation from any same-mesh space:
/// interior vertex dofs average the one-sided values over the vertex patch,
/// interior edge dofs take the edge mean of the averaged normal derivative.
pub fn morley_interpolation_matrix(from: &DofMap, morley: &DofMap) -> SparseOp {
    assert!(Arc::ptr_eq(&from.mesh, &morley.mesh), "same mesh required");
    assert_eq!(morley.kind, SpaceKind::Morley);
    let mesh = &morley.mesh;
    let n_iv = morley.interior_vertex.iter().filter(|&&v| v >= 0).count() as i64;
    let mut rows: Vec<HashMap<u32, f64>> = vec![HashMap::new(); morley.n_dofs];

    for z in 0..mesh.n_vertices() {
        let iv = morley.interior_vertex[z];
        if iv < 0 {
            continue;
        }
        let row = &mut rows[iv as usize];
        let patch = mesh.vertex_patch(z);
        let share = 1.0 / patch.len() as f64;
        let x = mesh.vertices[z];
        for &t in patch {
            let shapes = from.shapes(t);
            let globals = from.globals(t);
            for (i, &g) in globals.iter().enumerate() {
                if g >= 0 {
                    let v = shapes.eval(i, x).0;
                    if v != 0.0 {
                        *row.entry(g as u32).or_insert(0.0) += share * v;
                    }
                }
            }
        }
    }

    let rule = edge_rule_any(4);
    for (e, edge) in mesh.edges.iter().enumerate() {
        let ie = morley.interior_edge[e];
        if ie < 0 {
            continue;
        }
        let row = &mut rows[(n_iv + ie) as usize];
        let a = mesh.vertices[edge.a];
        let b = mesh.vertices[edge.b];
        let sides: Vec<usize> = match edge.t_minus {
            Some(tm) => vec![edge.t_plus, tm],
            None => vec![edge.t_plus],
        };
        let share = 1.0 / sides.len() as f64;
        for &t in &sides {
            let shapes = from.shapes(t);
            let globals = from.globals(t);
            for (tq, w) in rule.points.iter().zip(&rule.weights) {
                let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
                for (i, &g) in globals.iter().enumerate() {
                    if g >= 0 {
                        let grad = shapes.eval(i, x).1;
                        let nd = grad[0] * edge.normal[0] + grad[1] * edge.normal[1];
                        if nd != 0.0 {
                            *row.entry(g as u32).or_insert(0.0) += share * w * nd;
                        }
                    }
                }
            }
        }
    }

    SparseOp { rows: morley.n_dofs, cols: from.n_dofs, entries: rows_to_entries(rows) }
}

/// Matrix of the Lagrange transfer: vertex values are copied, interior edge
/// midpoint values take the average of the two one-sided Morley traces,
/// boundary midpoints stay zero.
pub fn lagrange_transfer_matrix(morley: &DofMap, s20: &DofMap) -> SparseOp {
    assert!(Arc::ptr_eq(&morley.mesh, &s20.mesh));
    assert_eq!(morley.kind, SpaceKind::Morley);
    assert_eq!(s20.kind, SpaceKind::S20);
    let mesh = &morley.mesh;
    let n_iv = s20.interior_vertex.iter().filter(|&&v| v >= 0).count() as i64;
    let mut rows: Vec<HashMap<u32, f64>> = vec![HashMap::new(); s20.n_dofs];

    for z in 0..mesh.n_vertices() {
        let iv = s20.interior_vertex[z];
        if iv < 0 {
            continue;
        }
        // Morley functions are single-valued at vertices; the value is the
        // vertex coefficient itself.
        let mv = morley.interior_vertex[z];
        if mv >= 0 {
            rows[iv as usize].insert(mv as u32, 1.0);
        }
    }
    for (e, edge) in mesh.edges.iter().enumerate() {
        let ie = s20.interior_edge[e];
        if ie < 0 {
            continue;
        }
        let row = &mut rows[(n_iv + ie) as usize];
        let sides = [Some(edge.t_plus), edge.t_minus];
        for t in sides.into_iter().flatten() {
            let shapes = morley.shapes(t);
            let globals = morley.globals(t);
            for (i, &g) in globals.iter().enumerate() {
                if g >= 0 {
                    let v = shapes.eval(i, edge.mid).0;
                    if v != 0.0 {
                        *row.entry(g as u32).or_insert(0.0) += 0.5 * v;
                    }
                }
            }
        }
    }
    SparseOp { rows: s20.n_dofs, cols: morley.n_dofs, entries: rows_to_entries(rows) }
}

/// Matrix of the conforming companion: vertex values are copied, vertex
/// gradients average the one-sided Morley gradients over the patch, and each
/// interior edge midpoint normal derivative is fixed so that the edge mean of
/// the companion's normal derivative reproduces the Morley edge dof (the
/// quadratic trace makes Simpson's rule exact).
pub fn companion_matrix(morley: &DofMap, hct: &DofMap) -> SparseOp {
    assert!(Arc::ptr_eq(&morley.mesh, &hct.mesh));
    assert_eq!(morley.kind, SpaceKind::Morley);
    assert_eq!(hct.kind, SpaceKind::Hct);
    let mesh = &morley.mesh;
    let n_iv = hct.interior_vertex.iter().filter(|&&v| v >= 0).count() as i64;
    let mut rows: Vec<HashMap<u32, f64>> = vec![HashMap::new(); hct.n_dofs];

    for z in 0..mesh.n_vertices() {
        let iv = hct.interior_vertex[z];
        if iv < 0 {
            continue;
        }
        let value_row = (3 * iv) as usize;
        let mv = morley.interior_vertex[z];
        if mv >= 0 {
            rows[value_row].insert(mv as u32, 1.0);
        }
        let patch = mesh.vertex_patch(z);
        let share = 1.0 / patch.len() as f64;
        let x = mesh.vertices[z];
        for &t in patch {
            let shapes = morley.shapes(t);
            let globals = morley.globals(t);
            for (i, &g) in globals.iter().enumerate() {
                if g >= 0 {
                    let grad = shapes.eval(i, x).1;
                    if grad[0] != 0.0 {
                        *rows[value_row + 1].entry(g as u32).or_insert(0.0) += share * grad[0];
                    }
                    if grad[1] != 0.0 {
                        *rows[value_row + 2].entry(g as u32).or_insert(0.0) += share * grad[1];
                    }
                }
            }
        }
    }

    let n_miv = morley.interior_vertex.iter().filter(|&&v| v >= 0).count() as i64;
    for (e, edge) in mesh.edges.iter().enumerate() {
        let ie = hct.interior_edge[e];
        if ie < 0 {
            continue;
        }
        let row_id = (3 * n_iv + ie) as usize;
        // 6/4 of the Morley edge-mean target, minus 1/4 of each endpoint
        // normal derivative (linear combinations of the gradient rows).
        let target_col = n_miv + morley.interior_edge[e];
        debug_assert!(morley.interior_edge[e] >= 0);
        let mut row: HashMap<u32, f64> = HashMap::new();
        row.insert(target_col as u32, 1.5);
        for &z in &[edge.a, edge.b] {
            let iv = hct.interior_vertex[z];
            if iv < 0 {
                continue;
            }
            let gx_row = rows[(3 * iv + 1) as usize].clone();
            let gy_row = rows[(3 * iv + 2) as usize].clone();
            for (col, v) in gx_row {
                *row.entry(col).or_insert(0.0) += -0.25 * edge.normal[0] * v;
            }
            for (col, v) in gy_row {
                *row.entry(col).or_insert(0.0) += -0.25 * edge.normal[1] * v;
            }
        }
        rows[row_id] = row;
    }

    SparseOp { rows: hct.n_dofs, cols: morley.n_dofs, entries: rows_to_entries(rows) }
}

/// Averaged Morley interpolation of a discrete field into the given Morley
/// space on the same mesh.
pub fn interpolate_morley(v: &DiscreteField, morley: &Arc<DofMap>) -> DiscreteField {
    let op = morley_interpolation_matrix(&v.map, morley);
    DiscreteField { map: Arc::clone(morley), coeffs: op.apply(&v.coeffs) }
}

/// Averaged Morley interpolation of a smooth function: vertex values and
/// edge means of the normal derivative, by quadrature of the given degree
/// (choose at least the polynomial degree of the gradient for exactness).
pub fn interpolate_morley_fn(
    morley: &Arc<DofMap>,
    value: &dyn Fn([f64; 2]) -> f64,
    gradient: &dyn Fn([f64; 2]) -> [f64; 2],
    edge_degree: usize,
) -> DiscreteField {
    nodal_field(morley, value, gradient, edge_degree)
}

/// Lagrange transfer of a Morley field into continuous quadratics.
pub fn transfer_c0(v: &DiscreteField, s20: &Arc<DofMap>) -> DiscreteField {
    let op = lagrange_transfer_matrix(&v.map, s20);
    DiscreteField { map: Arc::clone(s20), coeffs: op.apply(&v.coeffs) }
}

/// Conforming companion of a Morley field.
pub fn companion(v: &DiscreteField, hct: &Arc<DofMap>) -> DiscreteField {
    let op = companion_matrix(&v.map, hct);
    DiscreteField { map: Arc::clone(hct), coeffs: op.apply(&v.coeffs) }
}

/// Composite smoother: companion after Morley interpolation.
pub fn smoother(v: &DiscreteField, morley: &Arc<DofMap>, hct: &Arc<DofMap>) -> DiscreteField {
    let vm = interpolate_morley(v, morley);
    companion(&vm, hct)
}

/// Applied-operator record with optional distance diagnostics.
#[derive(Debug, Clone)]
pub struct OperatorReport {
    pub input: SpaceKind,
    pub output: SpaceKind,
    pub chain: Vec<&'static str>,
    /// Mesh-norm distance between input and output fields, when computed.
    pub distance_h: Option<f64>,
}

/// Smoother with a distance diagnostic attached.
pub fn smoother_report(
    v: &DiscreteField,
    morley: &Arc<DofMap>,
    hct: &Arc<DofMap>,
) -> (DiscreteField, OperatorReport) {
    let out = smoother(v, morley, hct);
    let mesh = &v.map.mesh;
    let d = crate::spaces::norm_h(&crate::spaces::Difference(v, &out), mesh, 4);
    let chain = if v.map.kind == SpaceKind::Morley {
        vec!["companion"]
    } else {
        vec!["morley_interpolation", "companion"]
    };
    (out, OperatorReport { input: v.map.kind, output: SpaceKind::Hct, chain, distance_h: Some(d) })
}

/// Morley interpolation matrix from a C1 field on a `depth`-times uniformly
/// refined mesh back onto the coarse Morley space.
///
/// `meshes[0]` is the coarse mesh carrying `morley`; `meshes[depth]` carries
/// `fine_hct`; `traces[l]` maps level `l` to level `l+1`. The composite edge
/// quadrature is exact for the piecewise-quadratic normal derivative traces
/// of the fine macro fields.
pub fn morley_matrix_from_refined_hct(
    morley: &DofMap,
    fine_hct: &DofMap,
    meshes: &[Arc<Mesh>],
    traces: &[UniformTrace],
) -> SparseOp {
    assert_eq!(meshes.len(), traces.len() + 1);
    assert!(Arc::ptr_eq(&morley.mesh, &meshes[0]));
    assert!(Arc::ptr_eq(&fine_hct.mesh, meshes.last().unwrap()));
    let coarse = &meshes[0];
    let fine: &Arc<Mesh> = meshes.last().unwrap();
    let n_iv = morley.interior_vertex.iter().filter(|&&v| v >= 0).count() as i64;
    let mut rows: Vec<HashMap<u32, f64>> = vec![HashMap::new(); morley.n_dofs];

    // Coarse vertices persist with the same ids through uniform refinement;
    // a C1 field's value there is its fine vertex value dof.
    for z in 0..coarse.n_vertices() {
        let iv = morley.interior_vertex[z];
        if iv < 0 {
            continue;
        }
        let fiv = fine_hct.interior_vertex[z];
        debug_assert!(fiv >= 0, "coarse interior vertices stay interior");
        rows[iv as usize].insert((3 * fiv) as u32, 1.0);
    }

    let rule = edge_rule_any(3);
    for (e, edge) in coarse.edges.iter().enumerate() {
        let ie = morley.interior_edge[e];
        if ie < 0 {
            continue;
        }
        let row = &mut rows[(n_iv + ie) as usize];
        let h_coarse = edge.length;
        for fe in descend_edge(meshes, traces, 0, e) {
            let fedge = &fine.edges[fe];
            let t = fedge.t_plus;
            let shapes = fine_hct.shapes(t);
            let globals = fine_hct.globals(t);
            let a = fine.vertices[fedge.a];
            let b = fine.vertices[fedge.b];
            for (tq, w) in rule.points.iter().zip(&rule.weights) {
                let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
                let scale = w * fedge.length / h_coarse;
                for (i, &g) in globals.iter().enumerate() {
                    if g >= 0 {
                        let grad = shapes.eval(i, x).1;
                        let nd = grad[0] * edge.normal[0] + grad[1] * edge.normal[1];
                        if nd != 0.0 {
                            *row.entry(g as u32).or_insert(0.0) += scale * nd;
                        }
                    }
                }
            }
        }
    }

    SparseOp { rows: morley.n_dofs, cols: fine_hct.n_dofs, entries: rows_to_entries(rows) }
}

/// Fine edge ids making up a coarse edge after successive uniform
/// refinements.
pub fn descend_edge(
    meshes: &[Arc<Mesh>],
    traces: &[UniformTrace],
    level: usize,
    e: usize,
) -> Vec<usize> {
    if level == traces.len() {
        return vec![e];
    }
    let edge = &meshes[level].edges[e];
    let m = traces[level].edge_mid[e];
    let next = &meshes[level + 1];
    let e1 = next.edge_lookup[&(edge.a.min(m), edge.a.max(m))];
    let e2 = next.edge_lookup[&(edge.b.min(m), edge.b.max(m))];
    let mut out = descend_edge(meshes, traces, level + 1, e1);
    out.extend(descend_edge(meshes, traces, level + 1, e2));
    out
}
