//! Oriented simplicial triangulations of closed manifolds.
//!
//! Simplices are identified by their vertex labels. A label is a vertex index
//! together with an integer lattice shift, which lets periodic meshes (flat
//! tori) carry several distinct simplices on the same vertex set, as happens
//! for coarse resolutions. Non-periodic meshes use empty shifts.
//!
//! Every k-simplex with k < n is stored in its canonical orientation: its
//! labels sorted lexicographically. Top simplices carry an extra orientation
//! sign chosen so that the boundary of the fundamental class vanishes.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    pub shift: Vec<i64>,
    pub vertex: usize,
}

impl Label {
    fn plain(vertex: usize) -> Self {
        Label {
            shift: Vec::new(),
            vertex,
        }
    }
}

/// Mesh description before orientation and face enumeration.
#[derive(Clone, Debug)]
pub struct RawMesh {
    pub vertices: Vec<Vec<f64>>,
    pub period: Option<f64>,
    pub cells: Vec<Vec<Label>>,
}

/// Sparse signed incidence matrix with entries in {-1, 0, +1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedIncidence {
    rows: usize,
    cols: usize,
    columns: Vec<Vec<(usize, i8)>>,
}

impl SignedIncidence {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn column(&self, j: usize) -> &[(usize, i8)] {
        &self.columns[j]
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn column_sums(&self) -> Vec<i64> {
        self.columns
            .iter()
            .map(|c| c.iter().map(|&(_, s)| s as i64).sum())
            .collect()
    }

    /// Exact integer product `self * rhs`, as a list of nonzero entries per column.
    pub fn product(&self, rhs: &SignedIncidence) -> Vec<Vec<(usize, i64)>> {
        assert_eq!(self.cols, rhs.rows, "incompatible incidence shapes");
        rhs.columns
            .iter()
            .map(|col| {
                let mut acc: BTreeMap<usize, i64> = BTreeMap::new();
                for &(mid, s) in col {
                    for &(row, t) in &self.columns[mid] {
                        *acc.entry(row).or_insert(0) += (s as i64) * (t as i64);
                    }
                }
                acc.into_iter().filter(|&(_, v)| v != 0).collect()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, s) in col {
                m[(i, j)] += s as f64;
            }
        }
        m
    }

    /// Transpose applied to a vector: `(self^T x)_j = sum_i s_ij x_i`.
    pub fn transpose_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.cols,
            self.columns
                .iter()
                .map(|col| col.iter().map(|&(i, s)| s as f64 * x[i]).sum::<f64>()),
        )
    }

    /// Rank over the rationals, computed by elimination modulo two large primes.
    pub fn rank(&self) -> usize {
        [2_147_483_647u64, 1_000_000_007u64]
            .iter()
            .map(|&p| self.rank_mod(p))
            .max()
            .unwrap_or(0)
    }

    fn rank_mod(&self, p: u64) -> usize {
        // rows of the eliminated matrix are the columns of the incidence matrix
        let width = self.rows;
        let mut rows: Vec<Vec<u64>> = self
            .columns
            .iter()
            .map(|col| {
                let mut r = vec![0u64; width];
                for &(i, s) in col {
                    r[i] = if s > 0 { 1 } else { p - 1 };
                }
                r
            })
            .collect();
        let mut rank = 0;
        for c in 0..width {
            let Some(piv) = (rank..rows.len()).find(|&r| rows[r][c] != 0) else {
                continue;
            };
            rows.swap(rank, piv);
            let inv = mod_pow(rows[rank][c], p - 2, p);
            for v in rows[rank].iter_mut() {
                *v = *v * inv % p;
            }
            let pivot_row = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r == rank || row[c] == 0 {
                    continue;
                }
                let factor = row[c];
                for (x, &y) in row.iter_mut().zip(&pivot_row).skip(c) {
                    *x = (*x + p - factor * y % p) % p;
                }
            }
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        rank
    }
}

fn mod_pow(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % p;
        }
        base = base * base % p;
        exp >>= 1;
    }
    acc
}

/// Geometry and incidence of one top simplex.
#[derive(Clone, Debug)]
pub struct TopCell {
    /// Unwrapped vertex coordinates, in canonical (sorted label) order.
    pub coords: Vec<Vec<f64>>,
    /// +1 if the global orientation agrees with the canonical vertex order.
    pub orientation: i8,
    /// `faces[k][j]`: global index of the j-th (k+1)-subset of local vertices,
    /// subsets enumerated in lexicographic order.
    pub faces: Vec<Vec<usize>>,
}

/// Per-simplex metric volumes of all degrees.
#[derive(Clone, Debug)]
pub struct MeshMetric {
    pub volumes: Vec<Vec<f64>>,
    pub total_volume: f64,
}

#[derive(Clone, Debug)]
pub struct SimplicialComplex {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    period: Option<f64>,
    simplices: Vec<Vec<Vec<Label>>>,
    boundaries: Vec<SignedIncidence>,
    cells: Vec<TopCell>,
    metric: MeshMetric,
    hash: String,
}

/// Lexicographic (k+1)-subsets of {0..n}.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn canonical_key(labels: &[Label]) -> Vec<Label> {
    let mut sorted = labels.to_vec();
    sorted.sort();
    let base = sorted[0].shift.clone();
    if base.iter().any(|&s| s != 0) {
        for l in sorted.iter_mut() {
            for (s, b) in l.shift.iter_mut().zip(&base) {
                *s -= b;
            }
        }
    }
    sorted
}

fn permutation_parity(perm: &[usize]) -> i8 {
    let mut seen = vec![false; perm.len()];
    let mut parity = 1i8;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut j = start;
        while !seen[j] {
            seen[j] = true;
            j = perm[j];
            len += 1;
        }
        if len % 2 == 0 {
            parity = -parity;
        }
    }
    parity
}

/// k-volume of the simplex spanned by the given points.
pub fn simplex_volume(points: &[&Vec<f64>]) -> f64 {
    let k = points.len() - 1;
    if k == 0 {
        return 1.0;
    }
    let gram = edge_gram(points);
    let det = gram.determinant().max(0.0);
    det.sqrt() / factorial(k)
}

pub(crate) fn edge_gram(points: &[&Vec<f64>]) -> DMatrix<f64> {
    let k = points.len() - 1;
    let edges: Vec<Vec<f64>> = (1..=k)
        .map(|i| {
            points[i]
                .iter()
                .zip(points[0])
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    DMatrix::from_fn(k, k, |i, j| {
        edges[i].iter().zip(&edges[j]).map(|(a, b)| a * b).sum()
    })
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl SimplicialComplex {
    pub fn from_raw(raw: RawMesh) -> Result<Self> {
        let RawMesh {
            vertices,
            period,
            cells: raw_cells,
        } = raw;
        if raw_cells.is_empty() {
            return Err(Error::DegenerateMesh("no cells".into()));
        }
        let n = raw_cells[0].len() - 1;
        if n == 0 {
            return Err(Error::DegenerateMesh(
                "cells must have at least two vertices".into(),
            ));
        }
        let ambient = vertices.first().map(Vec::len).unwrap_or(0);
        if ambient < n {
            return Err(Error::DegenerateMesh(format!(
                "ambient dimension {ambient} smaller than manifold dimension {n}"
            )));
        }
        if let Some(p) = period {
            if !(p > 0.0) {
                return Err(Error::DegenerateMesh(format!(
                    "period {p} must be positive"
                )));
            }
        }

        let mut index: Vec<BTreeMap<Vec<Label>, usize>> = vec![BTreeMap::new(); n + 1];
        let mut simplices: Vec<Vec<Vec<Label>>> = vec![Vec::new(); n + 1];
        let mut volumes: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        let mut cells = Vec::with_capacity(raw_cells.len());
        let mut listed_parity = Vec::with_capacity(raw_cells.len());
        let subsets: Vec<Vec<Vec<usize>>> = (0..=n).map(|k| combinations(n + 1, k + 1)).collect();

        for (ci, cell) in raw_cells.iter().enumerate() {
            if cell.len() != n + 1 {
                return Err(Error::DegenerateMesh(format!(
                    "cell {ci} has {} vertices, expected {}",
                    cell.len(),
                    n + 1
                )));
            }
            for l in cell {
                if l.vertex >= vertices.len() {
                    return Err(Error::DegenerateMesh(format!(
                        "cell {ci} references missing vertex {}",
                        l.vertex
                    )));
                }
                let expect = if period.is_some() { ambient } else { 0 };
                if !l.shift.is_empty() && l.shift.len() != expect {
                    return Err(Error::DegenerateMesh(format!(
                        "cell {ci} has malformed shift"
                    )));
                }
            }
            let labels: Vec<Label> = cell
                .iter()
                .map(|l| {
                    let mut l = l.clone();
                    if period.is_some() && l.shift.is_empty() {
                        l.shift = vec![0; ambient];
                    }
                    l
                })
                .collect();
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
            if order.windows(2).any(|w| labels[w[0]] == labels[w[1]]) {
                return Err(Error::DegenerateMesh(format!("cell {ci} repeats a vertex")));
            }
            listed_parity.push(permutation_parity(&order));
            let sorted: Vec<Label> = order.iter().map(|&i| labels[i].clone()).collect();
            let coords: Vec<Vec<f64>> = sorted
                .iter()
                .map(|l| {
                    let mut x = vertices[l.vertex].clone();
                    if let Some(p) = period {
                        for (xi, s) in x.iter_mut().zip(&l.shift) {
                            *xi += *s as f64 * p;
                        }
                    }
                    x
                })
                .collect();
            let mut faces = Vec::with_capacity(n + 1);
            for (k, subs) in subsets.iter().enumerate() {
                let mut ids = Vec::with_capacity(subs.len());
                for sub in subs {
                    let face: Vec<Label> = sub.iter().map(|&i| sorted[i].clone()).collect();
                    let key = canonical_key(&face);
                    let next = simplices[k].len();
                    let id = *index[k].entry(key.clone()).or_insert(next);
                    if id == next {
                        simplices[k].push(key);
                        let pts: Vec<&Vec<f64>> = sub.iter().map(|&i| &coords[i]).collect();
                        volumes[k].push(simplex_volume(&pts));
                    }
                    ids.push(id);
                }
                faces.push(ids);
            }
            cells.push(TopCell {
                coords,
                orientation: 1,
                faces,
            });
        }

        if volumes.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateMesh(
                "simplex with non-positive volume".into(),
            ));
        }

        // boundary matrices for the non-top degrees, canonical orientations
        let mut boundaries = Vec::with_capacity(n);
        for k in 1..=n {
            let rows = simplices[k - 1].len();
            let mut columns = Vec::with_capacity(simplices[k].len());
            for simplex in &simplices[k] {
                let mut col = Vec::with_capacity(k + 1);
                for drop in 0..=k {
                    let face: Vec<Label> = simplex
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != drop)
                        .map(|(_, l)| l.clone())
                        .collect();
                    let key = canonical_key(&face);
                    let id = *index[k - 1].get(&key).ok_or_else(|| {
                        Error::DegenerateMesh("face missing from the complex".into())
                    })?;
                    let sign = if drop % 2 == 0 { 1 } else { -1 };
                    col.push((id, sign));
                }
                col.sort_unstable();
                columns.push(col);
            }
            boundaries.push(SignedIncidence {
                rows,
                cols: simplices[k].len(),
                columns,
            });
        }

        // closedness: every codimension-one face has exactly two cofaces
        let top = &boundaries[n - 1];
        let mut cofaces: Vec<Vec<(usize, i8)>> = vec![Vec::new(); simplices[n - 1].len()];
        for (t, col) in top.columns.iter().enumerate() {
            for &(f, s) in col {
                cofaces[f].push((t, s));
            }
        }
        for (f, cf) in cofaces.iter().enumerate() {
            if cf.len() != 2 {
                return Err(Error::NonManifold(format!(
                    "face {f} is shared by {} top cells",
                    cf.len()
                )));
            }
        }

        // orientation propagation over the dual graph
        let mut orient = vec![0i8; cells.len()];
        let mut adjacency: Vec<Vec<(usize, i8)>> = vec![Vec::new(); cells.len()];
        for cf in &cofaces {
            let (a, sa) = cf[0];
            let (b, sb) = cf[1];
            if a == b {
                return Err(Error::NonOrientable(format!(
                    "top cell {a} is glued to itself"
                )));
            }
            // need orient[a]*sa + orient[b]*sb = 0
            let rel = -sa * sb;
            adjacency[a].push((b, rel));
            adjacency[b].push((a, rel));
        }
        for start in 0..cells.len() {
            if orient[start] != 0 {
                continue;
            }
            orient[start] = listed_parity[start];
            let mut queue = VecDeque::from([start]);
            while let Some(c) = queue.pop_front() {
                for &(nb, rel) in &adjacency[c] {
                    let want = orient[c] * rel;
                    if orient[nb] == 0 {
                        orient[nb] = want;
                        queue.push_back(nb);
                    } else if orient[nb] != want {
                        return Err(Error::NonOrientable(format!(
                            "orientation conflict between cells {c} and {nb}"
                        )));
                    }
                }
            }
        }
        for (cell, &o) in cells.iter_mut().zip(&orient) {
            cell.orientation = o;
        }
        let top = &mut boundaries[n - 1];
        for (col, &o) in top.columns.iter_mut().zip(&orient) {
            for entry in col.iter_mut() {
                entry.1 *= o;
            }
        }

        let total_volume = volumes[n].iter().sum();
        let mut complex = SimplicialComplex {
            dim: n,
            vertices,
            period,
            simplices,
            boundaries,
            cells,
            metric: MeshMetric {
                volumes,
                total_volume,
            },
            hash: String::new(),
        };
        complex.hash = complex.compute_hash();
        Ok(complex)
    }

    fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for x in self.vertices.iter().flatten() {
            h.update(x.to_bits().to_le_bytes());
        }
        if let Some(p) = self.period {
            h.update(p.to_bits().to_le_bytes());
        }
        for b in &self.boundaries {
            h.update((b.cols as u64).to_le_bytes());
            for col in &b.columns {
                for &(i, s) in col {
                    h.update((i as u64).to_le_bytes());
                    h.update([s as u8]);
                }
            }
        }
        let digest = h.finalize();
        digest.iter().take(16).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.vertices.first().map(Vec::len).unwrap_or(0)
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn count(&self, k: usize) -> usize {
        self.simplices.get(k).map(Vec::len).unwrap_or(0)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.simplices.iter().map(Vec::len).collect()
    }

    /// Vertex indices of simplex `i` of degree `k`, in canonical orientation.
    pub fn simplex_vertices(&self, k: usize, i: usize) -> Vec<usize> {
        self.simplices[k][i].iter().map(|l| l.vertex).collect()
    }

    pub fn simplex_labels(&self, k: usize, i: usize) -> &[Label] {
        &self.simplices[k][i]
    }

    pub fn cells(&self) -> &[TopCell] {
        &self.cells
    }

    pub fn metric(&self) -> &MeshMetric {
        &self.metric
    }

    pub fn volumes(&self, k: usize) -> &[f64] {
        &self.metric.volumes[k]
    }

    pub fn total_volume(&self) -> f64 {
        self.metric.total_volume
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.counts()
            .iter()
            .enumerate()
            .map(|(k, &c)| if k % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum()
    }

    /// Signed boundary matrix ∂_k mapping k-chains to (k-1)-chains.
    pub fn boundary_matrix(&self, k: usize) -> Result<&SignedIncidence> {
        if k == 0 || k > self.dim {
            return Err(Error::DegreeOutOfRange {
                degree: k,
                min: 1,
                max: self.dim,
            });
        }
        Ok(&self.boundaries[k - 1])
    }

    /// Rational Betti numbers from integer ranks of the boundary matrices.
    pub fn betti_numbers(&self) -> Vec<usize> {
        let ranks: Vec<usize> = self.boundaries.iter().map(SignedIncidence::rank).collect();
        (0..=self.dim)
            .map(|k| {
                let down = if k == 0 { 0 } else { ranks[k - 1] };
                let up = if k == self.dim { 0 } else { ranks[k] };
                self.count(k) - down - up
            })
            .collect()
    }

    /// Regenerates the raw description; loading it yields an identical complex.
    pub fn to_raw(&self) -> RawMesh {
        let cells = self
            .cells
            .iter()
            .map(|c| {
                let mut labels: Vec<Label> = {
                    // top simplices are stored canonically; recover one representative
                    let first = c.faces[self.dim][0];
                    self.simplices[self.dim][first].clone()
                };
                if c.orientation < 0 {
                    labels.swap(0, 1);
                }
                if self.period.is_none() {
                    for l in labels.iter_mut() {
                        l.shift.clear();
                    }
                }
                labels
            })
            .collect();
        RawMesh {
            vertices: self.vertices.clone(),
            period: self.period,
            cells,
        }
    }

    pub fn write_mesh(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_mesh_string())?;
        Ok(())
    }

    pub fn to_mesh_string(&self) -> String {
        let raw = self.to_raw();
        let mut out = String::new();
        let _ = writeln!(out, "# simplicial mesh, dimension {}", self.dim);
        if let Some(p) = raw.period {
            let _ = writeln!(out, "periodic {p:.17e}");
        }
        out.push_str("vertices\n");
        for (i, v) in raw.vertices.iter().enumerate() {
            let _ = write!(out, "{i}");
            for x in v {
                let _ = write!(out, " {x:.17e}");
            }
            out.push('\n');
        }
        out.push_str("cells\n");
        for cell in &raw.cells {
            let tokens: Vec<String> = cell
                .iter()
                .map(|l| {
                    if l.shift.iter().all(|&s| s == 0) {
                        l.vertex.to_string()
                    } else {
                        let s: Vec<String> = l.shift.iter().map(i64::to_string).collect();
                        format!("{}:{}", l.vertex, s.join(","))
                    }
                })
                .collect();
            out.push_str(&tokens.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Unit flat n-torus, a grid of `resolution^n` cubes each split into n! simplices.
pub fn build_flat_torus(n: usize, resolution: usize) -> Result<SimplicialComplex> {
    if !(2..=3).contains(&n) {
        return Err(Error::UnsupportedDimension(n));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "torus resolution must be at least 2, got {resolution}"
        )));
    }
    let r = resolution as i64;
    let lattice_index = |q: &[i64]| -> usize {
        q.iter()
            .rev()
            .fold(0i64, |acc, &x| acc * r + x.rem_euclid(r)) as usize
    };
    let count = resolution.pow(n as u32);
    let mut vertices = vec![Vec::new(); count];
    let mut points: Vec<Vec<i64>> = vec![vec![0]];
    for _ in 0..n {
        points = points
            .into_iter()
            .flat_map(|p| {
                (0..r).map(move |x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    let points: Vec<Vec<i64>> = points.into_iter().map(|p| p[1..].to_vec()).collect();
    for p in &points {
        vertices[lattice_index(p)] = p.iter().map(|&x| x as f64 / resolution as f64).collect();
    }
    let perms = permutations(n);
    let mut cells = Vec::with_capacity(count * perms.len());
    let mut sorted_points = points.clone();
    sorted_points.sort_by_key(|p| lattice_index(p));
    for base in &sorted_points {
        for perm in &perms {
            let mut q = base.clone();
            let mut cell = Vec::with_capacity(n + 1);
            cell.push(lattice_label(&q, r, &lattice_index));
            for &axis in perm {
                q[axis] += 1;
                cell.push(lattice_label(&q, r, &lattice_index));
            }
            cells.push(cell);
        }
    }
    SimplicialComplex::from_raw(RawMesh {
        vertices,
        period: Some(1.0),
        cells,
    })
}

fn lattice_label(q: &[i64], r: i64, index: &dyn Fn(&[i64]) -> usize) -> Label {
    Label {
        shift: q.iter().map(|&x| x.div_euclid(r)).collect(),
        vertex: index(q),
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Icosahedral sphere, subdivided `subdivisions` times and projected to the unit sphere.
pub fn build_sphere(subdivisions: usize) -> Result<SimplicialComplex> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec<f64>> = vec![
        vec![-1.0, phi, 0.0],
        vec![1.0, phi, 0.0],
        vec![-1.0, -phi, 0.0],
        vec![1.0, -phi, 0.0],
        vec![0.0, -1.0, phi],
        vec![0.0, 1.0, phi],
        vec![0.0, -1.0, -phi],
        vec![0.0, 1.0, -phi],
        vec![phi, 0.0, -1.0],
        vec![phi, 0.0, 1.0],
        vec![-phi, 0.0, -1.0],
        vec![-phi, 0.0, 1.0],
    ];
    for v in vertices.iter_mut() {
        normalize(v);
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let mut m: Vec<f64> = verts[a]
                    .iter()
                    .zip(&verts[b])
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect();
                normalize(&mut m);
                verts.push(m);
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    SimplicialComplex::from_raw(RawMesh {
        vertices,
        period: None,
        cells: faces
            .iter()
            .map(|f| f.iter().map(|&v| Label::plain(v)).collect())
            .collect(),
    })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Parses the text mesh format: optional `periodic L`, then `vertices`
/// (index followed by coordinates) and `cells` (vertex tokens `v` or
/// `v:s1,s2,..` with integer period shifts).
pub fn parse_mesh(text: &str) -> Result<SimplicialComplex> {
    enum Section {
        None,
        Vertices,
        Cells,
    }
    let mut section = Section::None;
    let mut period = None;
    let mut vertices: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut cells = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut tokens = content.split_whitespace();
        let head = tokens.next().unwrap_or_default();
        match head {
            "vertices" => {
                section = Section::Vertices;
                continue;
            }
            "cells" => {
                section = Section::Cells;
                continue;
            }
            "periodic" => {
                let p: f64 = tokens
                    .next()
                    .ok_or_else(|| parse_err("missing period".into()))?
                    .parse()
                    .map_err(|e| parse_err(format!("bad period: {e}")))?;
                period = Some(p);
                continue;
            }
            _ => {}
        }
        match section {
            Section::None => return Err(parse_err(format!("unexpected token '{head}'"))),
            Section::Vertices => {
                let idx: usize = head
                    .parse()
                    .map_err(|e| parse_err(format!("bad vertex index: {e}")))?;
                let coords: std::result::Result<Vec<f64>, _> = tokens.map(str::parse).collect();
                let coords = coords.map_err(|e| parse_err(format!("bad coordinate: {e}")))?;
                if coords.is_empty() {
                    return Err(parse_err("vertex without coordinates".into()));
                }
                if vertices.insert(idx, coords).is_some() {
                    return Err(parse_err(format!("duplicate vertex {idx}")));
                }
            }
            Section::Cells => {
                let mut cell = Vec::new();
                for tok in content.split_whitespace() {
                    let (v, shift) = match tok.split_once(':') {
                        Some((v, s)) => {
                            let shift: std::result::Result<Vec<i64>, _> =
                                s.split(',').map(str::parse).collect();
                            (v, shift.map_err(|e| parse_err(format!("bad shift: {e}")))?)
                        }
                        None => (tok, Vec::new()),
                    };
                    let vertex = v
                        .parse()
                        .map_err(|e| parse_err(format!("bad cell vertex: {e}")))?;
                    cell.push(Label { shift, vertex });
                }
                cells.push(cell);
            }
        }
    }
    let expected: Vec<usize> = (0..vertices.len()).collect();
    if vertices.keys().copied().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 0,
            message: "vertex indices must be 0..N-1".into(),
        });
    }
    let vertices: Vec<Vec<f64>> = vertices.into_values().collect();
    let dims: Vec<usize> = vertices.iter().map(Vec::len).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Parse {
            line: 0,
            message: "inconsistent vertex coordinate dimension".into(),
        });
    }
    if cells.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no cells".into(),
        });
    }
    let size = cells[0].len();
    if cells.iter().any(|c| c.len() != size) {
        return Err(Error::Parse {
            line: 0,
            message: "cells of mixed size".into(),
        });
    }
    SimplicialComplex::from_raw(RawMesh {
        vertices,
        period,
        cells,
    })
}

pub fn load_mesh(path: &Path) -> Result<SimplicialComplex> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}
