//! Triangular meshes: Gmsh ingestion, edge/midpoint bookkeeping and element geometry.
//!
//! Vertices are numbered `0..n_vertices`, edge midpoints `n_vertices..n_vertices + n_edges`.
//! Together they are the "points" that carry P2 degrees of freedom.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::MeshError;

/// Local edge `i` of a triangle joins local vertices `EDGE_VERTICES[i]`.
/// The same order is used for the P2 midpoint basis functions 3, 4, 5.
pub const EDGE_VERTICES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    triangle_edges: Vec<[usize; 3]>,
    edge_valence: Vec<u8>,
    boundary_point: Vec<bool>,
    element_area: Vec<f64>,
    domain_area: f64,
}

impl TriMesh {
    /// Builds a mesh from vertex coordinates and triangle connectivity.
    ///
    /// Clockwise triangles are flipped. Vertices not referenced by any triangle are kept
    /// out of the mesh only if the caller removes them; use [`TriMesh::from_raw_compacting`]
    /// for file input that may carry unused geometry points.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut element_area = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= vertices.len() {
                    return Err(MeshError::DanglingNode(v));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Degenerate(t));
            }
            let twice = signed_twice_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if twice == 0.0 || !twice.is_finite() {
                return Err(MeshError::Degenerate(t));
            }
            if twice < 0.0 {
                tri.swap(1, 2);
            }
            element_area.push(0.5 * twice.abs());
        }
        let domain_area = element_area.iter().sum();

        let (edges, triangle_edges, edge_valence) = build_edge_midpoints(&triangles);
        if let Some(e) = edge_valence.iter().position(|&c| c > 2) {
            return Err(MeshError::NonManifoldEdge(edges[e][0], edges[e][1]));
        }

        let n_vertices = vertices.len();
        let mut boundary_point = vec![false; n_vertices + edges.len()];
        for (e, edge) in edges.iter().enumerate() {
            if edge_valence[e] == 1 {
                boundary_point[edge[0]] = true;
                boundary_point[edge[1]] = true;
                boundary_point[n_vertices + e] = true;
            }
        }

        Ok(Self {
            vertices,
            triangles,
            edges,
            triangle_edges,
            edge_valence,
            boundary_point,
            element_area,
            domain_area,
        })
    }

    /// Like [`TriMesh::new`] but drops vertices that no triangle references and renumbers the rest.
    pub fn from_raw_compacting(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let mut used = vec![false; vertices.len()];
        for tri in &triangles {
            for &v in tri {
                *used.get_mut(v).ok_or(MeshError::DanglingNode(v))? = true;
            }
        }
        let mut renumber = vec![usize::MAX; vertices.len()];
        let mut kept = Vec::new();
        for (i, p) in vertices.into_iter().enumerate() {
            if used[i] {
                renumber[i] = kept.len();
                kept.push(p);
            }
        }
        let triangles = triangles
            .into_iter()
            .map(|t| [renumber[t[0]], renumber[t[1]], renumber[t[2]]])
            .collect();
        Self::new(kept, triangles)
    }

    /// Structured mesh of the rectangle `[x0,x1] x [y0,y1]` with `nx * ny` cells,
    /// each cut along its lower-left to upper-right diagonal.
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::Empty);
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = x0 + (x1 - x0) * i as f64 / nx as f64;
                let y = y0 + (y1 - y0) * j as f64 / ny as f64;
                vertices.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(vertices, triangles)
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

    /// Vertices plus edge midpoints.
    pub fn n_points(&self) -> usize {
        self.vertices.len() + self.edges.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Unique undirected edges, each stored with its smaller vertex index first.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Global edge ids of a triangle, in [`EDGE_VERTICES`] order.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    /// Number of triangles sharing each edge (1 on the boundary, 2 inside).
    pub fn edge_valence(&self) -> &[u8] {
        &self.edge_valence
    }

    pub fn midpoint_index(&self, edge: usize) -> usize {
        self.vertices.len() + edge
    }

    /// Coordinates of a vertex or edge midpoint.
    pub fn point(&self, i: usize) -> [f64; 2] {
        let nv = self.vertices.len();
        if i < nv {
            self.vertices[i]
        } else {
            let [a, b] = self.edges[i - nv];
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
        }
    }

    pub fn is_boundary_point(&self, i: usize) -> bool {
        self.boundary_point[i]
    }

    pub fn boundary_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary_point
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Vertex indices lying on the boundary.
    pub fn boundary_vertices(&self) -> BTreeSet<usize> {
        (0..self.vertices.len()).filter(|&i| self.boundary_point[i]).collect()
    }

    /// The six P2 points of a triangle: three vertices then the midpoints of its edges.
    pub fn element_points(&self, t: usize) -> [usize; 6] {
        let [a, b, c] = self.triangles[t];
        let [e0, e1, e2] = self.triangle_edges[t];
        let nv = self.vertices.len();
        [a, b, c, nv + e0, nv + e1, nv + e2]
    }

    pub fn element_area(&self) -> &[f64] {
        &self.element_area
    }

    pub fn domain_area(&self) -> f64 {
        self.domain_area
    }

    pub fn max_element_area(&self) -> f64 {
        self.element_area.iter().copied().fold(0.0, f64::max)
    }

    pub fn element_geometry(&self, t: usize) -> Result<AffineMap, MeshError> {
        let [a, b, c] = self.triangles[t];
        AffineMap::from_vertices(self.vertices[a], self.vertices[b], self.vertices[c])
            .ok_or(MeshError::Degenerate(t))
    }

    /// Boundary edges chained into closed loops of vertex indices.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        // Directed boundary edges inherit the counterclockwise orientation of their triangle,
        // so each vertex has exactly one outgoing boundary edge.
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for (l, &[i, j]) in EDGE_VERTICES.iter().enumerate() {
                if self.edge_valence[self.triangle_edges[t][l]] == 1 {
                    next.insert(tri[i], tri[j]);
                }
            }
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut seen = BTreeSet::new();
        let mut loops = Vec::new();
        for s in starts {
            if seen.contains(&s) {
                continue;
            }
            let mut lp = vec![s];
            seen.insert(s);
            let mut cur = next[&s];
            while cur != s {
                seen.insert(cur);
                lp.push(cur);
                cur = next[&cur];
            }
            loops.push(lp);
        }
        loops
    }

    /// Writes the mesh as Gmsh ASCII 2.2 with boundary lines tagged as physical curve 1.
    pub fn write_msh(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_msh_string())?;
        Ok(())
    }

    pub fn to_msh_string(&self) -> String {
        let mut s = String::new();
        s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
        let _ = writeln!(s, "{}", self.vertices.len());
        for (i, p) in self.vertices.iter().enumerate() {
            // `{:?}` prints the shortest decimal that parses back to the same f64.
            let _ = writeln!(s, "{} {:?} {:?} 0", i + 1, p[0], p[1]);
        }
        s.push_str("$EndNodes\n$Elements\n");
        let boundary: Vec<[usize; 2]> = self
            .edges
            .iter()
            .zip(&self.edge_valence)
            .filter(|(_, &c)| c == 1)
            .map(|(e, _)| *e)
            .collect();
        let _ = writeln!(s, "{}", boundary.len() + self.triangles.len());
        let mut tag = 1;
        for e in &boundary {
            let _ = writeln!(s, "{} 1 2 1 1 {} {}", tag, e[0] + 1, e[1] + 1);
            tag += 1;
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} 2 2 2 1 {} {} {}", tag, t[0] + 1, t[1] + 1, t[2] + 1);
            tag += 1;
        }
        s.push_str("$EndElements\n");
        s
    }
}

fn signed_twice_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

/// Enumerates the unique edges of a triangulation.
///
/// Returns the edge list (sorted vertex pairs, numbered in order of first appearance),
/// the per-triangle edge ids in [`EDGE_VERTICES`] order and the number of triangles sharing each edge.
pub fn build_edge_midpoints(triangles: &[[usize; 3]]) -> (Vec<[usize; 2]>, Vec<[usize; 3]>, Vec<u8>) {
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
    let mut edges = Vec::new();
    let mut valence = Vec::new();
    let mut tri_edges = Vec::with_capacity(triangles.len());
    for tri in triangles {
        let mut ids = [0; 3];
        for (l, &[i, j]) in EDGE_VERTICES.iter().enumerate() {
            let key = (tri[i].min(tri[j]), tri[i].max(tri[j]));
            let id = *lookup.entry(key).or_insert_with(|| {
                edges.push([key.0, key.1]);
                valence.push(0u8);
                edges.len() - 1
            });
            valence[id] = valence[id].saturating_add(1);
            ids[l] = id;
        }
        tri_edges.push(ids);
    }
    (edges, tri_edges, valence)
}

/// Affine map from the reference triangle `{(0,0),(1,0),(0,1)}` onto a physical triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub origin: [f64; 2],
    /// Columns are the images of the reference edge vectors.
    pub jacobian: [[f64; 2]; 2],
    pub inverse_transpose: [[f64; 2]; 2],
    pub det: f64,
}

impl AffineMap {
    /// `None` for a zero-area triangle.
    pub fn from_vertices(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<Self> {
        let j = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv_t = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        Some(Self {
            origin: a,
            jacobian: j,
            inverse_transpose: inv_t,
            det,
        })
    }

    pub fn map(&self, xi: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [
            self.origin[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.origin[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    /// Maps a reference-coordinate gradient to physical coordinates.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let m = &self.inverse_transpose;
        [m[0][0] * g[0] + m[0][1] * g[1], m[1][0] * g[0] + m[1][1] * g[1]]
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }
}

/// Reads an ASCII Gmsh mesh (format 2.2 or 4.1) made of 3-node triangles and optional 2-node lines.
pub fn load_msh(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_msh(&text)
}

pub fn parse_msh(text: &str) -> Result<TriMesh, MeshError> {
    let mut lines = Lines::new(text);
    let mut version: Option<u32> = None;
    let mut nodes: BTreeMap<u64, [f64; 2]> = BTreeMap::new();
    let mut tris: Vec<[u64; 3]> = Vec::new();
    let mut segs: Vec<[u64; 2]> = Vec::new();

    while let Some((_, line)) = lines.next_nonempty() {
        match line {
            "$MeshFormat" => {
                let (ln, l) = lines.expect_line()?;
                let v = l.split_whitespace().next().unwrap_or("");
                let file_type = l.split_whitespace().nth(1).unwrap_or("0");
                if file_type != "0" {
                    return Err(MeshError::Parse { line: ln, msg: "binary .msh files are not supported".into() });
                }
                version = Some(match v {
                    "2.2" => 22,
                    "4.1" => 41,
                    other => return Err(MeshError::UnsupportedVersion(other.to_string())),
                });
                lines.skip_to("$EndMeshFormat")?;
            }
            "$Nodes" => match version {
                Some(22) => read_nodes_v2(&mut lines, &mut nodes)?,
                Some(_) => read_nodes_v4(&mut lines, &mut nodes)?,
                None => return Err(MeshError::Parse { line: lines.line_no, msg: "$Nodes before $MeshFormat".into() }),
            },
            "$Elements" => match version {
                Some(22) => read_elements_v2(&mut lines, &mut tris, &mut segs)?,
                Some(_) => read_elements_v4(&mut lines, &mut tris, &mut segs)?,
                None => {
                    return Err(MeshError::Parse { line: lines.line_no, msg: "$Elements before $MeshFormat".into() })
                }
            },
            l if l.starts_with("$End") => {}
            l if l.starts_with('$') => {
                // $PhysicalNames, $Entities and friends carry nothing we need.
                let end = format!("$End{}", &l[1..]);
                lines.skip_to(&end)?;
            }
            _ => {}
        }
    }

    if version.is_none() {
        return Err(MeshError::Parse { line: 0, msg: "missing $MeshFormat".into() });
    }
    if nodes.is_empty() || tris.is_empty() {
        return Err(MeshError::Empty);
    }

    let mut index: HashMap<u64, usize> = HashMap::with_capacity(nodes.len());
    let mut coords = Vec::with_capacity(nodes.len());
    for (tag, p) in &nodes {
        index.insert(*tag, coords.len());
        coords.push(*p);
    }
    let lookup = |tag: u64| index.get(&tag).copied().ok_or(MeshError::DanglingNode(tag as usize));
    let triangles = tris
        .iter()
        .map(|t| Ok([lookup(t[0])?, lookup(t[1])?, lookup(t[2])?]))
        .collect::<Result<Vec<_>, MeshError>>()?;
    let boundary_coords = segs
        .iter()
        .map(|s| Ok([coords[lookup(s[0])?], coords[lookup(s[1])?]]))
        .collect::<Result<Vec<_>, MeshError>>()?;

    let mesh = TriMesh::from_raw_compacting(coords, triangles)?;
    if !boundary_coords.is_empty() {
        check_boundary_tags(&mesh, &boundary_coords)?;
    }
    Ok(mesh)
}

/// Line elements in the file must cover exactly the topological boundary.
fn check_boundary_tags(mesh: &TriMesh, segments: &[[[f64; 2]; 2]]) -> Result<(), MeshError> {
    let key = |p: [f64; 2]| (p[0].to_bits(), p[1].to_bits());
    let by_coord: HashMap<(u64, u64), usize> =
        mesh.vertices().iter().enumerate().map(|(i, p)| (key(*p), i)).collect();
    let mut tagged = BTreeSet::new();
    for s in segments {
        let a = by_coord.get(&key(s[0])).ok_or(MeshError::BoundaryMismatch)?;
        let b = by_coord.get(&key(s[1])).ok_or(MeshError::BoundaryMismatch)?;
        tagged.insert((*a.min(b), *a.max(b)));
    }
    let topological: BTreeSet<(usize, usize)> = mesh
        .edges()
        .iter()
        .zip(mesh.edge_valence())
        .filter(|(_, &c)| c == 1)
        .map(|(e, _)| (e[0], e[1]))
        .collect();
    if tagged != topological {
        return Err(MeshError::BoundaryMismatch);
    }
    Ok(())
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines(), line_no: 0 }
    }

    fn next_nonempty(&mut self) -> Option<(usize, &'a str)> {
        for l in self.inner.by_ref() {
            self.line_no += 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some((self.line_no, t));
            }
        }
        None
    }

    fn expect_line(&mut self) -> Result<(usize, &'a str), MeshError> {
        self.next_nonempty()
            .ok_or(MeshError::Parse { line: self.line_no, msg: "unexpected end of file".into() })
    }

    fn skip_to(&mut self, marker: &str) -> Result<(), MeshError> {
        loop {
            let (_, l) = self.expect_line()?;
            if l == marker {
                return Ok(());
            }
        }
    }

    fn numbers<T: std::str::FromStr>(&mut self) -> Result<(usize, Vec<T>), MeshError> {
        let (ln, l) = self.expect_line()?;
        let v = l
            .split_whitespace()
            .map(|w| w.parse::<T>())
            .collect::<Result<Vec<T>, _>>()
            .map_err(|_| MeshError::Parse { line: ln, msg: format!("malformed numbers: {l:?}") })?;
        Ok((ln, v))
    }
}

fn need<T: Copy>(v: &[T], n: usize, line: usize) -> Result<(), MeshError> {
    if v.len() < n {
        return Err(MeshError::Parse { line, msg: format!("expected at least {n} fields") });
    }
    Ok(())
}

fn read_nodes_v2(lines: &mut Lines, nodes: &mut BTreeMap<u64, [f64; 2]>) -> Result<(), MeshError> {
    let (ln, head) = lines.numbers::<usize>()?;
    need(&head, 1, ln)?;
    for _ in 0..head[0] {
        let (ln, l) = lines.expect_line()?;
        let mut it = l.split_whitespace();
        let bad = || MeshError::Parse { line: ln, msg: format!("malformed node: {l:?}") };
        let tag: u64 = it.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
        let x: f64 = it.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
        let y: f64 = it.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
        nodes.insert(tag, [x, y]);
    }
    lines.skip_to("$EndNodes")
}

fn read_nodes_v4(lines: &mut Lines, nodes: &mut BTreeMap<u64, [f64; 2]>) -> Result<(), MeshError> {
    let (ln, head) = lines.numbers::<u64>()?;
    need(&head, 4, ln)?;
    for _ in 0..head[0] {
        let (ln, block) = lines.numbers::<i64>()?;
        need(&block, 4, ln)?;
        let parametric = block[2] != 0;
        let count = block[3] as usize;
        let mut tags = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, t) = lines.numbers::<u64>()?;
            need(&t, 1, ln)?;
            tags.push(t[0]);
        }
        for tag in tags {
            let (ln, xyz) = lines.numbers::<f64>()?;
            need(&xyz, if parametric { 4 } else { 3 }, ln)?;
            nodes.insert(tag, [xyz[0], xyz[1]]);
        }
    }
    lines.skip_to("$EndNodes")
}

fn push_element(
    ln: usize,
    etype: i64,
    verts: &[u64],
    tris: &mut Vec<[u64; 3]>,
    segs: &mut Vec<[u64; 2]>,
) -> Result<(), MeshError> {
    match etype {
        2 => {
            need(verts, 3, ln)?;
            tris.push([verts[0], verts[1], verts[2]]);
        }
        1 => {
            need(verts, 2, ln)?;
            segs.push([verts[0], verts[1]]);
        }
        other => return Err(MeshError::UnsupportedElement(other)),
    }
    Ok(())
}

fn read_elements_v2(lines: &mut Lines, tris: &mut Vec<[u64; 3]>, segs: &mut Vec<[u64; 2]>) -> Result<(), MeshError> {
    let (ln, head) = lines.numbers::<usize>()?;
    need(&head, 1, ln)?;
    for _ in 0..head[0] {
        let (ln, e) = lines.numbers::<u64>()?;
        need(&e, 3, ln)?;
        let ntags = e[2] as usize;
        need(&e, 3 + ntags, ln)?;
        push_element(ln, e[1] as i64, &e[3 + ntags..], tris, segs)?;
    }
    lines.skip_to("$EndElements")
}

fn read_elements_v4(lines: &mut Lines, tris: &mut Vec<[u64; 3]>, segs: &mut Vec<[u64; 2]>) -> Result<(), MeshError> {
    let (ln, head) = lines.numbers::<u64>()?;
    need(&head, 4, ln)?;
    for _ in 0..head[0] {
        let (ln, block) = lines.numbers::<i64>()?;
        need(&block, 4, ln)?;
        let etype = block[2];
        for _ in 0..block[3] {
            let (ln, e) = lines.numbers::<u64>()?;
            need(&e, 2, ln)?;
            push_element(ln, etype, &e[1..], tris, segs)?;
        }
    }
    lines.skip_to("$EndElements")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_triangle() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn single_triangle() {
        let m = reference_triangle();
        assert_eq!(m.n_vertices(), 3);
        assert_eq!(m.n_triangles(), 1);
        assert_eq!(m.element_area()[0], 0.5);
        assert_eq!(m.boundary_vertices().len(), 3);
        assert_eq!(m.n_edges(), 3);
        assert!((3..6).all(|i| m.is_boundary_point(i)));
    }

    #[test]
    fn unit_square_two_triangles() {
        let m = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.domain_area(), 1.0);
        assert_eq!(m.boundary_vertices().len(), 4);
        assert_eq!(m.n_edges(), 5);
        let interior: Vec<_> = m.edge_valence().iter().filter(|&&c| c == 2).collect();
        assert_eq!(interior.len(), 1);
        let interior_midpoints = (4..m.n_points()).filter(|&i| !m.is_boundary_point(i)).count();
        assert_eq!(interior_midpoints, 1);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let m = TriMesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let [a, b, c] = m.triangles()[0];
        assert!(signed_twice_area(m.vertices()[a], m.vertices()[b], m.vertices()[c]) > 0.0);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let err = TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::Degenerate(0)));
    }

    #[test]
    fn midpoints_are_means() {
        let m = TriMesh::rectangle(0.0, 2.0, -1.0, 1.0, 3, 2).unwrap();
        for (e, [a, b]) in m.edges().iter().enumerate() {
            let p = m.point(m.midpoint_index(e));
            let (pa, pb) = (m.vertices()[*a], m.vertices()[*b]);
            assert_eq!(p, [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
    }

    #[test]
    fn geometry_identity_and_scaled() {
        let g = reference_triangle().element_geometry(0).unwrap();
        assert_eq!(g.jacobian, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(g.det, 1.0);

        let m = TriMesh::new(vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]], vec![[0, 1, 2]]).unwrap();
        let g = m.element_geometry(0).unwrap();
        assert_eq!(g.jacobian, [[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(g.det, 4.0);
        assert_eq!(m.element_area()[0], 2.0);
    }

    #[test]
    fn geometry_inverse_transpose() {
        let g = AffineMap::from_vertices([0.3, -0.2], [1.7, 0.4], [0.1, 2.2]).unwrap();
        // J^{-T} J^T = I
        let (a, j) = (g.inverse_transpose, g.jacobian);
        for r in 0..2 {
            for c in 0..2 {
                let v: f64 = (0..2).map(|k| a[r][k] * j[c][k]).sum();
                assert_relative_eq!(v, if r == c { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    const V22: &str = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n5\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n9 5 5 0\n$EndNodes\n\
$Elements\n6\n1 1 2 1 1 1 2\n2 1 2 1 1 2 3\n3 1 2 1 1 3 4\n4 1 2 1 1 4 1\n5 2 2 2 1 1 2 3\n6 2 2 2 1 1 4 3\n$EndElements\n";

    #[test]
    fn parse_v22_drops_unused_nodes_and_orients() {
        let m = parse_msh(V22).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_relative_eq!(m.domain_area(), 1.0);
    }

    #[test]
    fn parse_v22_boundary_tag_mismatch() {
        let bad = V22.replace("4 1 2 1 1 4 1\n", "4 1 2 1 1 1 3\n");
        assert!(matches!(parse_msh(&bad), Err(MeshError::BoundaryMismatch)));
    }

    #[test]
    fn parse_rejects_quads_and_versions() {
        let quad = V22.replace("6 2 2 2 1 1 4 3", "6 3 2 2 1 1 2 3 4");
        assert!(matches!(parse_msh(&quad), Err(MeshError::UnsupportedElement(3))));
        let v3 = V22.replace("2.2 0 8", "3.0 0 8");
        assert!(matches!(parse_msh(&v3), Err(MeshError::UnsupportedVersion(_))));
    }

    #[test]
    fn parse_dangling_and_empty() {
        let dangling = V22.replace("6 2 2 2 1 1 4 3", "6 2 2 2 1 1 4 7");
        assert!(matches!(parse_msh(&dangling), Err(MeshError::DanglingNode(7))));
        let empty = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n0\n$EndNodes\n$Elements\n0\n$EndElements\n";
        assert!(matches!(parse_msh(empty), Err(MeshError::Empty)));
    }

    #[test]
    fn parse_v41_blocks() {
        let text = "$MeshFormat\n4.1 0 8\n$EndMeshFormat\n$Entities\n0 0 1 0\n1 0 0 0 1 1 0 0 0\n$EndEntities\n\
$Nodes\n2 4 1 4\n2 1 0 3\n1\n2\n3\n0 0 0\n1 0 0\n1 1 0\n2 1 1 1\n4\n0 1 0 0 1\n$EndNodes\n\
$Elements\n1 2 1 2\n2 1 2 2\n1 1 2 3\n2 1 3 4\n$EndElements\n";
        let m = parse_msh(text).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_relative_eq!(m.domain_area(), 1.0);
        assert_eq!(m.boundary_vertices().len(), 4);
    }

    #[test]
    fn boundary_loop_of_square() {
        let m = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let loops = m.boundary_loops();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), 16);
    }
}
