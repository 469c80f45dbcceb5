//! Tetrahedral meshes: structured box generation, a small text format, and
//! topology extraction (edges, faces, adjacency, boundary classification).
//!
//! Orientation conventions fixed here and relied on by every other module:
//! cells are stored with ascending vertex indices except for a possible swap
//! of the last two that makes the signed volume positive; an edge runs from
//! its lower to its higher vertex index; a face is oriented by the cyclic
//! order of its ascending vertex triple.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{cross, dot, sub, Point3};

/// Cells thinner than `DEGENERACY_CUTOFF * h_K^3` are rejected at ingestion.
pub const DEGENERACY_CUTOFF: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cell {cell}: vertex index {index} out of range (mesh has {count} vertices)")]
    VertexIndexOutOfRange {
        cell: usize,
        index: usize,
        count: usize,
    },
    #[error("cell {cell}: repeated vertex {index}")]
    RepeatedVertex { cell: usize, index: usize },
    #[error("cells {first} and {second} reference the same vertex set")]
    DuplicateCell { first: usize, second: usize },
    #[error("cell {cell} is degenerate (volume {volume:.3e} below cutoff)")]
    DegenerateCell { cell: usize, volume: f64 },
    #[error("face shared by more than two cells (cells {0}, {1}, {2})")]
    NonManifoldFace(usize, usize, usize),
}

/// Derived connectivity of a tetrahedral mesh.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Sorted vertex pairs, lexicographically ordered.
    pub edges: Vec<[usize; 2]>,
    /// Sorted vertex triples, lexicographically ordered.
    pub faces: Vec<[usize; 3]>,
    /// Adjacent cells per face, ascending; boundary faces have one entry.
    pub face_to_cells: Vec<(usize, Option<usize>)>,
    /// Global edge indices of each cell's six local edges
    /// (local vertex pairs in the fixed order 01, 02, 03, 12, 13, 23).
    pub cell_edges: Vec<[usize; 6]>,
    /// Global face indices of each cell's four faces
    /// (face k is opposite local vertex k).
    pub cell_faces: Vec<[usize; 4]>,
    pub boundary_edge_flags: Vec<bool>,
    pub boundary_face_flags: Vec<bool>,
    pub boundary_vertex_flags: Vec<bool>,
}

/// Local vertex pairs of a tetrahedron's six edges.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Immutable tetrahedral mesh. Construct with [`TetMesh::new`],
/// [`generate_box_mesh`], or [`read_mesh`].
#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices: Vec<Point3>,
    cells: Vec<[usize; 4]>,
    topology: Topology,
}

impl TetMesh {
    /// Builds a mesh from vertices and cells. Cell vertex order is not
    /// preserved: each cell is sorted ascending, then the last two vertices
    /// are swapped if needed so the signed volume is positive.
    pub fn new(vertices: Vec<Point3>, cells: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(MeshError::InvalidArgument(format!(
                    "vertex {i} has a non-finite coordinate"
                )));
            }
        }
        let mut canonical = Vec::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            let mut c = *cell;
            for &v in &c {
                if v >= vertices.len() {
                    return Err(MeshError::VertexIndexOutOfRange {
                        cell: i,
                        index: v,
                        count: vertices.len(),
                    });
                }
            }
            c.sort_unstable();
            for k in 0..3 {
                if c[k] == c[k + 1] {
                    return Err(MeshError::RepeatedVertex {
                        cell: i,
                        index: c[k],
                    });
                }
            }
            let vol = signed_volume(&vertices, &c);
            let c = if vol < 0.0 {
                [c[0], c[1], c[3], c[2]]
            } else {
                c
            };
            let vol = vol.abs();
            let h = cell_diameter(&vertices, &c);
            if vol < DEGENERACY_CUTOFF * h * h * h || vol == 0.0 {
                return Err(MeshError::DegenerateCell {
                    cell: i,
                    volume: vol,
                });
            }
            canonical.push(c);
        }
        let topology = build_topology(&canonical, vertices.len())?;
        Ok(Self {
            vertices,
            cells: canonical,
            topology,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.topology.edges
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.topology.faces
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.topology.edges.len()
    }

    pub fn face_count(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// `V - E + F - C`; equals 1 for meshes of a topological ball.
    pub fn euler_characteristic(&self) -> isize {
        self.vertex_count() as isize - self.edge_count() as isize + self.face_count() as isize
            - self.cell_count() as isize
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        signed_volume(&self.vertices, &self.cells[cell])
    }

    pub fn total_volume(&self) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.cell_count() {
            acc += self.cell_volume(c);
        }
        acc
    }

    /// Positions of a cell's four vertices in stored order.
    pub fn cell_points(&self, cell: usize) -> [Point3; 4] {
        let c = self.cells[cell];
        [
            self.vertices[c[0]],
            self.vertices[c[1]],
            self.vertices[c[2]],
            self.vertices[c[3]],
        ]
    }
}

fn signed_volume(vertices: &[Point3], c: &[usize; 4]) -> f64 {
    let a = sub(vertices[c[1]], vertices[c[0]]);
    let b = sub(vertices[c[2]], vertices[c[0]]);
    let d = sub(vertices[c[3]], vertices[c[0]]);
    dot(a, cross(b, d)) / 6.0
}

fn cell_diameter(vertices: &[Point3], c: &[usize; 4]) -> f64 {
    let mut h: f64 = 0.0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            h = h.max(crate::geometry::distance(vertices[c[i]], vertices[c[j]]));
        }
    }
    h
}

/// Maximum cell diameter (largest pairwise vertex distance over all cells).
pub fn mesh_size(mesh: &TetMesh) -> f64 {
    let mut h: f64 = 0.0;
    for c in mesh.cells() {
        h = h.max(cell_diameter(&mesh.vertices, c));
    }
    h
}

/// Derives edges, faces, adjacency, and boundary flags from cell connectivity.
/// The ordering is deterministic: edges sorted lexicographically by vertex
/// pair, faces by sorted triple.
pub fn build_topology(cells: &[[usize; 4]], vertex_count: usize) -> Result<Topology, MeshError> {
    for (i, cell) in cells.iter().enumerate() {
        let mut c = *cell;
        c.sort_unstable();
        for &v in &c {
            if v >= vertex_count {
                return Err(MeshError::VertexIndexOutOfRange {
                    cell: i,
                    index: v,
                    count: vertex_count,
                });
            }
        }
        for k in 0..3 {
            if c[k] == c[k + 1] {
                return Err(MeshError::RepeatedVertex {
                    cell: i,
                    index: c[k],
                });
            }
        }
    }
    {
        let mut seen: Vec<([usize; 4], usize)> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut s = *c;
                s.sort_unstable();
                (s, i)
            })
            .collect();
        seen.sort_unstable();
        for w in seen.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(MeshError::DuplicateCell {
                    first: w[0].1.min(w[1].1),
                    second: w[0].1.max(w[1].1),
                });
            }
        }
    }

    let mut edges: Vec<[usize; 2]> = Vec::with_capacity(cells.len() * 6);
    for cell in cells {
        for [i, j] in LOCAL_EDGES {
            let (a, b) = (cell[i].min(cell[j]), cell[i].max(cell[j]));
            edges.push([a, b]);
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(cells.len() * 4);
    for cell in cells {
        for k in 0..4 {
            faces.push(sorted_face(cell, k));
        }
    }
    faces.sort_unstable();
    faces.dedup();

    let edge_index = |a: usize, b: usize| -> usize {
        edges
            .binary_search(&[a.min(b), a.max(b)])
            .expect("edge present")
    };
    let face_index = |f: [usize; 3]| -> usize { faces.binary_search(&f).expect("face present") };

    let mut cell_edges = Vec::with_capacity(cells.len());
    let mut cell_faces = Vec::with_capacity(cells.len());
    let mut face_cells: Vec<Vec<usize>> = vec![Vec::new(); faces.len()];
    for (ci, cell) in cells.iter().enumerate() {
        let mut ce = [0usize; 6];
        for (k, [i, j]) in LOCAL_EDGES.iter().enumerate() {
            ce[k] = edge_index(cell[*i], cell[*j]);
        }
        cell_edges.push(ce);
        let mut cf = [0usize; 4];
        for (k, slot) in cf.iter_mut().enumerate() {
            let fi = face_index(sorted_face(cell, k));
            *slot = fi;
            face_cells[fi].push(ci);
        }
        cell_faces.push(cf);
    }

    let mut face_to_cells = Vec::with_capacity(faces.len());
    let mut boundary_face_flags = vec![false; faces.len()];
    for (fi, owners) in face_cells.iter().enumerate() {
        match owners.as_slice() {
            [a] => {
                boundary_face_flags[fi] = true;
                face_to_cells.push((*a, None));
            }
            [a, b] => face_to_cells.push((*a.min(b), Some(*a.max(b)))),
            [a, b, c, ..] => return Err(MeshError::NonManifoldFace(*a, *b, *c)),
            [] => unreachable!("face without a cell"),
        }
    }

    let mut boundary_edge_flags = vec![false; edges.len()];
    let mut boundary_vertex_flags = vec![false; vertex_count];
    for (fi, face) in faces.iter().enumerate() {
        if boundary_face_flags[fi] {
            for &v in face {
                boundary_vertex_flags[v] = true;
            }
            boundary_edge_flags[edge_index(face[0], face[1])] = true;
            boundary_edge_flags[edge_index(face[0], face[2])] = true;
            boundary_edge_flags[edge_index(face[1], face[2])] = true;
        }
    }

    Ok(Topology {
        edges,
        faces,
        face_to_cells,
        cell_edges,
        cell_faces,
        boundary_edge_flags,
        boundary_face_flags,
        boundary_vertex_flags,
    })
}

/// Sorted vertex triple of the face opposite local vertex `k`.
fn sorted_face(cell: &[usize; 4], k: usize) -> [usize; 3] {
    let mut f = [0usize; 3];
    let mut w = 0;
    for (i, &v) in cell.iter().enumerate() {
        if i != k {
            f[w] = v;
            w += 1;
        }
    }
    f.sort_unstable();
    f
}

/// Axis-aligned box extents.
#[derive(Debug, Clone, Copy)]
pub struct BoxExtents {
    pub min: Point3,
    pub max: Point3,
}

impl BoxExtents {
    pub fn unit_cube() -> Self {
        Self {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }
}

/// Kuhn/Freudenthal subdivision of an axis-aligned box: `n` subdivisions per
/// axis, each sub-cube split into six tetrahedra sharing its main diagonal.
pub fn generate_box_mesh(n: usize, extents: BoxExtents) -> Result<TetMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidArgument("n must be at least 1".into()));
    }
    for d in 0..3 {
        if !(extents.max[d] - extents.min[d]).is_finite() || extents.max[d] <= extents.min[d] {
            return Err(MeshError::InvalidArgument(format!(
                "degenerate box: axis {d} has extent [{}, {}]",
                extents.min[d], extents.max[d]
            )));
        }
    }
    let np = n + 1;
    let vertex_id = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut vertices = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                vertices.push([
                    extents.min[0] + (extents.max[0] - extents.min[0]) * (i as f64) / (n as f64),
                    extents.min[1] + (extents.max[1] - extents.min[1]) * (j as f64) / (n as f64),
                    extents.min[2] + (extents.max[2] - extents.min[2]) * (k as f64) / (n as f64),
                ]);
            }
        }
    }
    // The six permutations of the axis order trace monotone lattice paths
    // from a cube's low corner to its high corner; each path is one tet.
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut cells = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut corner = [i, j, k];
                    let mut tet = [vertex_id(corner[0], corner[1], corner[2]), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        corner[axis] += 1;
                        tet[step + 1] = vertex_id(corner[0], corner[1], corner[2]);
                    }
                    cells.push(tet);
                }
            }
        }
    }
    TetMesh::new(vertices, cells)
}

/// Cursor over the meaningful lines of a mesh file (comments and blank lines
/// skipped), tracking 1-based line numbers for error reporting.
struct LineCursor<'a> {
    lines: std::vec::IntoIter<(usize, &'a str)>,
    last_line: usize,
}

impl<'a> LineCursor<'a> {
    fn new(text: &'a str) -> Self {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self {
            lines: lines.into_iter(),
            last_line: 0,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MeshError> {
        match self.lines.next() {
            Some((n, l)) => {
                self.last_line = n;
                Ok((n, l))
            }
            None => Err(MeshError::Parse {
                line: self.last_line + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

/// Parses the `tetmesh 1` text format. Topology is rebuilt from scratch;
/// nothing beyond vertices and cells is trusted from the file.
pub fn read_mesh(text: &str) -> Result<TetMesh, MeshError> {
    let mut cursor = LineCursor::new(text);

    let (line, header) = cursor.next("header `tetmesh 1`")?;
    if header != "tetmesh 1" {
        return Err(MeshError::Parse {
            line,
            message: format!("expected `tetmesh 1`, found `{header}`"),
        });
    }

    let (line, decl) = cursor.next("`vertices N`")?;
    let vertex_count = parse_count(decl, "vertices", line)?;
    let mut vertices = Vec::with_capacity(vertex_count);
    for _ in 0..vertex_count {
        let (line, row) = cursor.next("a vertex line `x y z`")?;
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(MeshError::Parse {
                line,
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (d, f) in fields.iter().enumerate() {
            p[d] = f.parse::<f64>().map_err(|e| MeshError::Parse {
                line,
                message: format!("bad coordinate `{f}`: {e}"),
            })?;
            if !p[d].is_finite() {
                return Err(MeshError::Parse {
                    line,
                    message: format!("non-finite coordinate `{f}`"),
                });
            }
        }
        vertices.push(p);
    }

    let (line, decl) = cursor.next("`cells M`")?;
    let cell_count = parse_count(decl, "cells", line)?;
    let mut cells = Vec::with_capacity(cell_count);
    let mut cell_lines = Vec::with_capacity(cell_count);
    for _ in 0..cell_count {
        let (line, row) = cursor.next("a cell line `a b c d`")?;
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(MeshError::Parse {
                line,
                message: format!("expected 4 vertex indices, found {}", fields.len()),
            });
        }
        let mut c = [0usize; 4];
        for (d, f) in fields.iter().enumerate() {
            c[d] = f.parse::<usize>().map_err(|e| MeshError::Parse {
                line,
                message: format!("bad vertex index `{f}`: {e}"),
            })?;
        }
        cells.push(c);
        cell_lines.push(line);
    }

    if let Ok((line, content)) = cursor.next("end of file") {
        return Err(MeshError::Parse {
            line,
            message: format!("unexpected trailing content `{content}`"),
        });
    }

    TetMesh::new(vertices, cells).map_err(|e| match e {
        // Attach the offending line for errors that refer to a cell.
        MeshError::VertexIndexOutOfRange { cell, index, count } => MeshError::Parse {
            line: cell_lines[cell],
            message: format!("vertex index {index} out of range (mesh has {count} vertices)"),
        },
        MeshError::RepeatedVertex { cell, index } => MeshError::Parse {
            line: cell_lines[cell],
            message: format!("repeated vertex {index} within a cell"),
        },
        MeshError::DegenerateCell { cell, volume } => MeshError::Parse {
            line: cell_lines[cell],
            message: format!("degenerate cell (volume {volume:.3e})"),
        },
        other => other,
    })
}

fn parse_count(decl: &str, keyword: &str, line: usize) -> Result<usize, MeshError> {
    let mut parts = decl.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(num), None) if k == keyword => {
            num.parse::<usize>().map_err(|e| MeshError::Parse {
                line,
                message: format!("bad count `{num}`: {e}"),
            })
        }
        _ => Err(MeshError::Parse {
            line,
            message: format!("expected `{keyword} N`, found `{decl}`"),
        }),
    }
}

/// Serializes a mesh in the `tetmesh 1` format. Coordinates carry 17
/// significant digits, so a read-back reproduces them bit for bit.
pub fn write_mesh(mesh: &TetMesh) -> String {
    let mut out = String::new();
    out.push_str("tetmesh 1\n");
    let _ = writeln!(out, "vertices {}", mesh.vertex_count());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
    }
    let _ = writeln!(out, "cells {}", mesh.cell_count());
    for c in mesh.cells() {
        let _ = writeln!(out, "{} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    out
}

/// The reference tetrahedron (unit simplex corners).
pub fn reference_tet() -> TetMesh {
    TetMesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ],
        vec![[0, 1, 2, 3]],
    )
    .expect("reference tet is valid")
}

/// Two tetrahedra sharing a face: a five-vertex bipyramid.
pub fn two_tet_mesh() -> TetMesh {
    TetMesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ],
        vec![[0, 1, 2, 3], [1, 2, 3, 4]],
    )
    .expect("two-tet mesh is valid")
}
