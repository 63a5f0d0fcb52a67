//! Structured triangulations of `(-1,1)²` and the lowest-order mixed pair:
//! piecewise-constant vector velocities (P0²) and continuous piecewise-linear
//! pressures (P1).
//!
//! P0² vectors use the interleaved layout `[u_x(T0), u_y(T0), u_x(T1), ...]`,
//! so every element owns a 2×2 diagonal block of the velocity operators.

use std::io::Write;

use log::warn;

use crate::error::{check_dim, Error, Result};
use crate::numerics::SparseMatrix;

pub type Point = [f64; 2];
pub type Tensor2 = [[f64; 2]; 2];

/// Measure of the domain `(-1,1)²`.
pub const DOMAIN_AREA: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    /// Endpoints, ordered counterclockwise around the domain.
    pub vertices: [usize; 2],
    pub normal: Point,
    pub length: f64,
}

/// How a vertex of a refined mesh sits in its parent mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexParent {
    Vertex(usize),
    Midpoint(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    level: usize,
    subdivisions: usize,
    parents: Option<Vec<VertexParent>>,
}

/// Uniform `n × n` grid on `(-1,1)²`, every cell cut by the diagonal from its
/// lower-left to its upper-right corner. Vertices are numbered row-major
/// (`j (n+1) + i` sits at `x_i, y_j`), triangles cell by cell, lower first.
pub fn build_structured_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidInput("mesh needs at least one subdivision".into()));
    }
    let h = 2.0 / n as f64;
    let coord = |i: usize| -1.0 + h * i as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([coord(i), coord(j)]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(BoundaryEdge { vertices: [idx(i, 0), idx(i + 1, 0)], normal: [0.0, -1.0], length: h });
    }
    for j in 0..n {
        boundary_edges.push(BoundaryEdge { vertices: [idx(n, j), idx(n, j + 1)], normal: [1.0, 0.0], length: h });
    }
    for i in (0..n).rev() {
        boundary_edges.push(BoundaryEdge { vertices: [idx(i + 1, n), idx(i, n)], normal: [0.0, 1.0], length: h });
    }
    for j in (0..n).rev() {
        boundary_edges.push(BoundaryEdge { vertices: [idx(0, j + 1), idx(0, j)], normal: [-1.0, 0.0], length: h });
    }
    let areas = triangles.iter().map(|t| signed_area(&vertices, t)).collect();
    Ok(Mesh {
        vertices,
        triangles,
        boundary_edges,
        areas,
        level: 0,
        subdivisions: n,
        parents: None,
    })
}

/// Regular (red) refinement: every triangle splits into four similar children
/// through its edge midpoints. For the structured meshes built here the result
/// is the structured mesh with twice the subdivisions; the parent of every new
/// vertex is recorded for interpolation.
pub fn refine(mesh: &Mesh) -> Result<Mesh> {
    let n = mesh.subdivisions;
    let mut fine = build_structured_mesh(2 * n)?;
    let coarse = |i: usize, j: usize| j * (n + 1) + i;
    let mut parents = Vec::with_capacity(fine.vertices.len());
    for jj in 0..=2 * n {
        for ii in 0..=2 * n {
            let p = match (ii % 2, jj % 2) {
                (0, 0) => VertexParent::Vertex(coarse(ii / 2, jj / 2)),
                (1, 0) => VertexParent::Midpoint(coarse(ii / 2, jj / 2), coarse(ii / 2 + 1, jj / 2)),
                (0, 1) => VertexParent::Midpoint(coarse(ii / 2, jj / 2), coarse(ii / 2, jj / 2 + 1)),
                // cell centre: midpoint of the cutting diagonal
                _ => VertexParent::Midpoint(coarse(ii / 2, jj / 2), coarse(ii / 2 + 1, jj / 2 + 1)),
            };
            parents.push(p);
        }
    }
    fine.level = mesh.level + 1;
    fine.parents = Some(parents);
    Ok(fine)
}

fn signed_area(vertices: &[Point], t: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    /// Mesh size `2 / n`.
    pub fn h(&self) -> f64 {
        2.0 / self.subdivisions as f64
    }

    pub fn parents(&self) -> Option<&[VertexParent]> {
        self.parents.as_deref()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Unknowns of the mixed pair: two velocity components per element plus one pressure per vertex.
    pub fn mixed_dofs(&self) -> usize {
        2 * self.n_triangles() + self.n_vertices()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Edge midpoints of triangle `t`, opposite to local vertices 0, 1, 2.
    pub fn edge_midpoints(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let mid = |p: Point, q: Point| [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        [mid(b, c), mid(c, a), mid(a, b)]
    }

    /// Constant gradients of the three barycentric basis functions on `t`.
    pub fn basis_gradients(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let two_area = 2.0 * self.areas[t];
        [
            [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
            [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
            [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
        ]
    }

    /// `∫ φ_i` for every P1 basis function.
    pub fn lumped_vertex_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                w[v] += self.areas[t] / 3.0;
            }
        }
        w
    }

    /// Number of triangles sharing each undirected edge.
    pub fn edge_multiplicities(&self) -> std::collections::BTreeMap<(usize, usize), usize> {
        let mut map = std::collections::BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        map
    }

    /// Plain-text dump: a vertex block (`x y`) then a triangle block (`a b c`).
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "vertices {}", self.n_vertices())?;
        for v in &self.vertices {
            writeln!(out, "{:e} {:e}", v[0], v[1])?;
        }
        writeln!(out, "triangles {}", self.n_triangles())?;
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Per-element coefficient: a positive scalar or a 2×2 SPD block.
#[derive(Clone, Debug, PartialEq)]
pub enum ElementWeight {
    Scalar(Vec<f64>),
    Tensor(Vec<Tensor2>),
}

impl ElementWeight {
    pub fn len(&self) -> usize {
        match self {
            ElementWeight::Scalar(v) => v.len(),
            ElementWeight::Tensor(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        match self {
            ElementWeight::Scalar(v) => {
                if let Some((t, s)) = v.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
                    return Err(Error::InvalidInput(format!("weight {s} on element {t} must be positive")));
                }
            }
            ElementWeight::Tensor(v) => {
                for (t, k) in v.iter().enumerate() {
                    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
                    if !(k[0][0] > 0.0 && det > 0.0 && (k[0][1] - k[1][0]).abs() <= 1e-14 * k[0][0].abs()) {
                        return Err(Error::InvalidInput(format!("weight block on element {t} is not SPD")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Block-diagonal P0² mass matrix with blocks `σ_T |T|`.
pub fn assemble_weighted_p0_mass(mesh: &Mesh, sigma: &ElementWeight) -> Result<SparseMatrix> {
    check_dim("assemble_weighted_p0_mass", mesh.n_triangles(), sigma.len())?;
    sigma.validate()?;
    let mut triplets = Vec::with_capacity(4 * mesh.n_triangles());
    for (t, &area) in mesh.areas.iter().enumerate() {
        match sigma {
            ElementWeight::Scalar(s) => {
                triplets.push((2 * t, 2 * t, s[t] * area));
                triplets.push((2 * t + 1, 2 * t + 1, s[t] * area));
            }
            ElementWeight::Tensor(k) => {
                for a in 0..2 {
                    for b in 0..2 {
                        triplets.push((2 * t + a, 2 * t + b, k[t][a][b] * area));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(2 * mesh.n_triangles(), 2 * mesh.n_triangles(), &triplets)
}

/// Unweighted P0² mass matrix `M₀`.
pub fn assemble_p0_mass(mesh: &Mesh) -> SparseMatrix {
    let diag: Vec<f64> = mesh.areas.iter().flat_map(|&a| [a, a]).collect();
    SparseMatrix::from_diagonal(&diag)
}

/// `G`: P1 nodal values to per-element gradients (exact for affine functions).
pub fn assemble_gradient(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(6 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let grads = mesh.basis_gradients(t);
        for (k, &v) in tri.iter().enumerate() {
            triplets.push((2 * t, v, grads[k][0]));
            triplets.push((2 * t + 1, v, grads[k][1]));
        }
    }
    SparseMatrix::from_triplets(2 * mesh.n_triangles(), mesh.n_vertices(), &triplets)
        .expect("indices are in range by construction")
}

/// Element averages `|T|⁻¹ ∫_T K⁻¹`, by the edge-midpoint rule applied entrywise.
pub fn element_kinv_averages(mesh: &Mesh, k_perm: impl Fn(Point) -> Tensor2) -> Result<Vec<Tensor2>> {
    let mut out = Vec::with_capacity(mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let mut avg = [[0.0; 2]; 2];
        for q in mesh.edge_midpoints(t) {
            let inv = invert2(&k_perm(q)).ok_or_else(|| Error::InvalidInput(format!("singular permeability near {q:?}")))?;
            for a in 0..2 {
                for b in 0..2 {
                    avg[a][b] += inv[a][b] / 3.0;
                }
            }
        }
        out.push(avg);
    }
    Ok(out)
}

pub(crate) fn invert2(k: &Tensor2) -> Option<Tensor2> {
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[k[1][1] / det, -k[0][1] / det], [-k[1][0] / det, k[0][0] / det]])
}

/// The discrete operators of the mixed Darcy formulation.
#[derive(Clone, Debug)]
pub struct FemOperators {
    /// `M₀`
    pub m0: SparseMatrix,
    /// `G`
    pub grad: SparseMatrix,
    /// `B = Gᵀ M₀`
    pub b_mat: SparseMatrix,
    /// Block diagonal of element-averaged `K⁻¹`.
    pub kinv: SparseMatrix,
}

impl FemOperators {
    pub fn assemble(mesh: &Mesh, kinv_blocks: &[Tensor2]) -> Result<Self> {
        check_dim("FemOperators kinv", mesh.n_triangles(), kinv_blocks.len())?;
        let m0 = assemble_p0_mass(mesh);
        let grad = assemble_gradient(mesh);
        let b_mat = grad.transpose().matmul(&m0)?;
        let mut triplets = Vec::with_capacity(4 * kinv_blocks.len());
        for (t, k) in kinv_blocks.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    triplets.push((2 * t + a, 2 * t + b, k[a][b]));
                }
            }
        }
        let kinv = SparseMatrix::from_triplets(2 * mesh.n_triangles(), 2 * mesh.n_triangles(), &triplets)?;
        Ok(Self { m0, grad, b_mat, kinv })
    }
}

/// `S = Gᵀ M₀ (M₀^σ)⁻¹ M₀ G`, the P1 Neumann stiffness matrix of the
/// coefficient `1/σ`. Symmetric positive semidefinite with the constants as
/// its nullspace.
pub fn assemble_variable_laplacian(mesh: &Mesh, sigma: &[f64]) -> Result<SparseMatrix> {
    check_dim("assemble_variable_laplacian", mesh.n_triangles(), sigma.len())?;
    ElementWeight::Scalar(sigma.to_vec()).validate()?;
    let grad = assemble_gradient(mesh);
    // M₀ (M₀^σ)⁻¹ M₀ is diagonal: |T| · (σ_T |T|)⁻¹ · |T|
    let weights: Vec<f64> = mesh
        .areas
        .iter()
        .zip(sigma)
        .flat_map(|(&a, &s)| {
            let w = a * (1.0 / (s * a)) * a;
            [w, w]
        })
        .collect();
    grad.transpose().matmul(&grad.scale_rows(&weights)?)
}

/// Subtracts the P1 mean `∫p / |Ω|`.
pub fn apply_zero_mean(p: &[f64], mesh: &Mesh) -> Result<Vec<f64>> {
    check_dim("apply_zero_mean", mesh.n_vertices(), p.len())?;
    let mean = integrate_p1(p, mesh) / DOMAIN_AREA;
    Ok(p.iter().map(|v| v - mean).collect())
}

/// `∫_Ω p` for a P1 nodal vector.
pub fn integrate_p1(p: &[f64], mesh: &Mesh) -> f64 {
    mesh.triangles
        .iter()
        .zip(&mesh.areas)
        .map(|(t, a)| a * (p[t[0]] + p[t[1]] + p[t[2]]) / 3.0)
        .sum()
}

/// Load vectors of the mixed system.
#[derive(Clone, Debug)]
pub struct RhsVectors {
    /// `(f, v)` against the P0² basis.
    pub fu: Vec<f64>,
    /// `−(g, q) + (g_N, q)_{∂Ω}` against the P1 basis.
    pub gp: Vec<f64>,
    /// Discrete `∫g_N − ∫g`, i.e. the sum of `gp`.
    pub compatibility_defect: f64,
}

/// Centroid rule for the P0² load, edge-midpoint rule for the interior P1 load
/// and two-point Gauss on boundary edges. `g_n` receives a boundary point and
/// the outward normal.
pub fn assemble_rhs(
    mesh: &Mesh,
    f: impl Fn(Point) -> Point,
    g: impl Fn(Point) -> f64,
    g_n: impl Fn(Point, Point) -> f64,
) -> RhsVectors {
    let mut fu = vec![0.0; 2 * mesh.n_triangles()];
    let mut gp = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.areas[t];
        let fc = f(mesh.centroid(t));
        fu[2 * t] = area * fc[0];
        fu[2 * t + 1] = area * fc[1];
        let gm = mesh.edge_midpoints(t).map(&g);
        // φ_k is 1/2 at the two midpoints adjacent to vertex k and 0 at the opposite one
        for k in 0..3 {
            let s = gm[(k + 1) % 3] + gm[(k + 2) % 3];
            gp[tri[k]] -= area / 3.0 * 0.5 * s;
        }
    }
    let offset = 0.5 / 3f64.sqrt();
    for e in &mesh.boundary_edges {
        let [a, b] = e.vertices.map(|v| mesh.vertices[v]);
        for s in [0.5 - offset, 0.5 + offset] {
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let val = g_n(x, e.normal) * e.length * 0.5;
            gp[e.vertices[0]] += val * (1.0 - s);
            gp[e.vertices[1]] += val * s;
        }
    }
    let compatibility_defect: f64 = gp.iter().sum();
    if compatibility_defect.abs() > 1e-8 {
        warn!("compatibility defect of the discrete data: {compatibility_defect:e}");
    }
    RhsVectors { fu, gp, compatibility_defect }
}
