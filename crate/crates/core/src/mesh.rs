//! Tetrahedral meshes: validation, boundary extraction and surface
//! quantities (area-weighted normals, mixed Voronoi areas).

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    surface: Vec<[usize; 3]>,
}

/// Faces of a positively oriented tet, each wound outward.
const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

impl TetMesh {
    /// Validates connectivity and orientation and extracts the boundary.
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tet) in tets.iter().enumerate() {
            for &v in tet {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        tet: t,
                        vertex: v,
                        count: n,
                    });
                }
            }
        }
        if tets.is_empty() {
            return Err(Error::invalid("mesh has no tetrahedra"));
        }
        let inverted: Vec<usize> = tets
            .iter()
            .enumerate()
            .filter(|(_, t)| !(signed_volume(&vertices, t) > 0.0))
            .map(|(i, _)| i)
            .collect();
        if !inverted.is_empty() {
            return Err(Error::InvertedElements(inverted));
        }
        let surface = extract_surface(&tets);
        check_manifold(&surface)?;
        Ok(Self {
            vertices,
            tets,
            surface,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn surface(&self) -> &[[usize; 3]] {
        &self.surface
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[t])
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes().iter().sum()
    }

    /// Sorted, deduplicated indices of vertices on the boundary.
    pub fn surface_vertices(&self) -> Vec<usize> {
        let mut on = vec![false; self.vertices.len()];
        for f in &self.surface {
            for &v in f {
                on[v] = true;
            }
        }
        (0..on.len()).filter(|&i| on[i]).collect()
    }

    pub fn is_surface_vertex_mask(&self) -> Vec<bool> {
        let mut on = vec![false; self.vertices.len()];
        for f in &self.surface {
            for &v in f {
                on[v] = true;
            }
        }
        on
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let tet = &self.tets[t];
        tet.iter().map(|&v| self.vertices[v]).sum::<Vec3>() / 4.0
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Unit area-weighted vertex normals; zero for interior vertices.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.surface {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            // |cross| is twice the area, so this weights by area
            let n = (b - a).cross(&(c - a));
            for &v in f {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Mixed Voronoi surface areas per vertex (zero for interior vertices).
    /// Obtuse triangles fall back to the half/quarter split, so the areas sum
    /// to the total surface area exactly.
    pub fn voronoi_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.vertices.len()];
        for f in &self.surface {
            let p = f.map(|i| self.vertices[i]);
            let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            if area == 0.0 {
                continue;
            }
            let angle_cos = |k: usize| {
                let a = p[(k + 1) % 3] - p[k];
                let b = p[(k + 2) % 3] - p[k];
                a.dot(&b)
            };
            let obtuse = (0..3).find(|&k| angle_cos(k) < 0.0);
            match obtuse {
                Some(o) => {
                    for k in 0..3 {
                        areas[f[k]] += if k == o { area / 2.0 } else { area / 4.0 };
                    }
                }
                None => {
                    let cot = |k: usize| {
                        let a = p[(k + 1) % 3] - p[k];
                        let b = p[(k + 2) % 3] - p[k];
                        a.dot(&b) / a.cross(&b).norm()
                    };
                    for k in 0..3 {
                        let j = (k + 1) % 3;
                        let l = (k + 2) % 3;
                        let e_kl = (p[l] - p[k]).norm_squared();
                        let e_kj = (p[j] - p[k]).norm_squared();
                        areas[f[k]] += (e_kl * cot(j) + e_kj * cot(l)) / 8.0;
                    }
                }
            }
        }
        areas
    }

    /// Vertices whose rest position satisfies `pred`.
    pub fn select_vertices(&self, pred: impl Fn(&Vec3) -> bool) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&i| pred(&self.vertices[i]))
            .collect()
    }

    pub fn nearest_vertex(&self, p: &Vec3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Flattened rest positions `[x0 y0 z0 x1 ...]`.
    pub fn rest_positions(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }
}

pub fn signed_volume(vertices: &[Vec3], tet: &[usize; 4]) -> f64 {
    edge_matrix(vertices, tet).determinant() / 6.0
}

/// Columns `x1 - x0, x2 - x0, x3 - x0`.
pub fn edge_matrix(vertices: &[Vec3], tet: &[usize; 4]) -> Matrix3<f64> {
    let x0 = vertices[tet[0]];
    Matrix3::from_columns(&[
        vertices[tet[1]] - x0,
        vertices[tet[2]] - x0,
        vertices[tet[3]] - x0,
    ])
}

fn extract_surface(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    // keyed by sorted vertex triple; BTreeMap keeps the output order stable
    let mut faces: BTreeMap<[usize; 3], (usize, [usize; 3])> = BTreeMap::new();
    for tet in tets {
        for local in TET_FACES {
            let f = local.map(|k| tet[k]);
            let mut key = f;
            key.sort_unstable();
            faces.entry(key).and_modify(|e| e.0 += 1).or_insert((1, f));
        }
    }
    faces
        .into_values()
        .filter(|(count, _)| *count == 1)
        .map(|(_, f)| f)
        .collect()
}

fn check_manifold(surface: &[[usize; 3]]) -> Result<()> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for f in surface {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    for (&(a, b), &count) in &directed {
        if count != 1 {
            return Err(Error::NonManifold(format!(
                "directed edge ({a}, {b}) used by {count} triangles"
            )));
        }
        if !directed.contains_key(&(b, a)) {
            return Err(Error::NonManifold(format!("boundary edge ({a}, {b}) is open")));
        }
    }
    Ok(())
}

/// Procedural test geometry built from voxels, each split into five tets
/// with alternating parity so neighbouring cells share diagonals.
pub mod shapes {
    use super::*;

    /// Corner offsets of a unit cell, index = dx + 2 dy + 4 dz.
    const CORNERS: [[usize; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ];
    const FIVE_TETS: [[usize; 4]; 5] = [
        [0, 1, 2, 4],
        [3, 2, 1, 7],
        [5, 4, 7, 1],
        [6, 7, 4, 2],
        [1, 2, 4, 7],
    ];

    /// Regular grid of voxels; `keep(i, j, k)` selects which cells are
    /// meshed.
    #[derive(Debug, Clone)]
    pub struct VoxelGrid {
        pub cells: [usize; 3],
        pub origin: Vec3,
        pub spacing: Vec3,
    }

    impl VoxelGrid {
        pub fn cell_center(&self, c: [usize; 3]) -> Vec3 {
            self.origin
                + Vec3::new(
                    (c[0] as f64 + 0.5) * self.spacing.x,
                    (c[1] as f64 + 0.5) * self.spacing.y,
                    (c[2] as f64 + 0.5) * self.spacing.z,
                )
        }

        pub fn mesh(&self, keep: impl Fn([usize; 3]) -> bool) -> Result<TetMesh> {
            let [nx, ny, nz] = self.cells;
            let lattice = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
            let mut remap: HashMap<usize, usize> = HashMap::new();
            let mut vertices = Vec::new();
            let mut tets = Vec::new();
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        if !keep([i, j, k]) {
                            continue;
                        }
                        let odd = (i + j + k) % 2 == 1;
                        let corner_ids: Vec<usize> = CORNERS
                            .iter()
                            .map(|c| {
                                let dx = if odd { 1 - c[0] } else { c[0] };
                                let (a, b, d) = (i + dx, j + c[1], k + c[2]);
                                let key = lattice(a, b, d);
                                *remap.entry(key).or_insert_with(|| {
                                    vertices.push(
                                        self.origin
                                            + Vec3::new(
                                                a as f64 * self.spacing.x,
                                                b as f64 * self.spacing.y,
                                                d as f64 * self.spacing.z,
                                            ),
                                    );
                                    vertices.len() - 1
                                })
                            })
                            .collect();
                        for local in FIVE_TETS {
                            let mut t = local.map(|c| corner_ids[c]);
                            if signed_volume(&vertices, &t) < 0.0 {
                                t.swap(2, 3);
                            }
                            tets.push(t);
                        }
                    }
                }
            }
            TetMesh::new(vertices, tets)
        }
    }

    /// Box `[0, size]` split into `cells` voxels.
    pub fn box_grid(cells: [usize; 3], size: [f64; 3]) -> TetMesh {
        VoxelGrid {
            cells,
            origin: Vec3::zeros(),
            spacing: Vec3::new(
                size[0] / cells[0] as f64,
                size[1] / cells[1] as f64,
                size[2] / cells[2] as f64,
            ),
        }
        .mesh(|_| true)
        .expect("box grids are valid by construction")
    }

    /// A single regular tetrahedron with unit edge length.
    pub fn regular_tet() -> TetMesh {
        let s = 1.0 / (2.0f64).sqrt();
        let vertices = vec![
            Vec3::new(1.0, 0.0, -s) * 0.5,
            Vec3::new(-1.0, 0.0, -s) * 0.5,
            Vec3::new(0.0, 1.0, s) * 0.5,
            Vec3::new(0.0, -1.0, s) * 0.5,
        ];
        let mut tet = [0, 1, 2, 3];
        if signed_volume(&vertices, &tet) < 0.0 {
            tet.swap(2, 3);
        }
        TetMesh::new(vertices, vec![tet]).expect("regular tet")
    }

    /// Bar along x, `cells[0]` long; used pinned at `x = 0` as a cantilever.
    pub fn bar(cells: [usize; 3], size: [f64; 3]) -> TetMesh {
        box_grid(cells, size)
    }

    /// Voxelized ball of the given radius, `cells` voxels across.
    pub fn ball(cells: usize, radius: f64) -> TetMesh {
        let h = 2.0 * radius / cells as f64;
        let grid = VoxelGrid {
            cells: [cells; 3],
            origin: Vec3::repeat(-radius),
            spacing: Vec3::repeat(h),
        };
        let g = grid.clone();
        grid.mesh(move |c| g.cell_center(c).norm() <= radius)
            .expect("voxel ball is manifold")
    }

    /// Coarse teddy-bear stand-in: torso, head and two arms sticking out
    /// along ±x at shoulder height. The "left arm" is the one at negative x.
    pub fn bear_proxy() -> TetMesh {
        // 14 x 6 x 12 voxels of 0.1 m
        let grid = VoxelGrid {
            cells: [14, 6, 12],
            origin: Vec3::new(-0.7, -0.3, 0.0),
            spacing: Vec3::repeat(0.1),
        };
        grid.mesh(|[i, j, k]| {
            let torso = (4..10).contains(&i) && (1..5).contains(&j) && k < 8;
            let head = (5..9).contains(&i) && (1..5).contains(&j) && (8..12).contains(&k);
            let arm = (i < 4 || i >= 10) && (2..4).contains(&j) && (5..7).contains(&k);
            torso || head || arm
        })
        .expect("bear proxy is manifold")
    }

    /// Point near the tip of the bear proxy's left arm.
    pub fn bear_left_hand() -> Vec3 {
        Vec3::new(-0.7, 0.0, 0.6)
    }

    /// Flat body with two thin wings along ±x; the left wing is at x < -0.2.
    pub fn bat_proxy() -> TetMesh {
        let grid = VoxelGrid {
            cells: [16, 4, 3],
            origin: Vec3::new(-0.8, -0.2, 0.0),
            spacing: Vec3::new(0.1, 0.1, 0.1),
        };
        grid.mesh(|[i, _j, k]| {
            let body = (6..10).contains(&i);
            let wing = k == 1;
            body || wing
        })
        .expect("bat proxy is manifold")
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;

    #[test]
    fn regular_tet_has_four_faces() {
        let m = regular_tet();
        assert_eq!(m.surface().len(), 4);
        assert_eq!(m.num_vertices(), 4);
        let expected = 1.0 / (6.0 * 2.0f64.sqrt());
        assert!((m.total_volume() - expected).abs() < 1e-14);
    }

    #[test]
    fn cube_grid_counts() {
        let m = box_grid([2, 2, 2], [1.0, 1.0, 1.0]);
        assert_eq!(m.num_tets(), 40);
        assert_eq!(m.num_vertices(), 27);
        // 6 faces * 4 squares * 2 triangles
        assert_eq!(m.surface().len(), 48);
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_index() {
        let verts = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        match TetMesh::new(verts, vec![[0, 1, 2, 99]]) {
            Err(Error::IndexOutOfRange { vertex: 99, count: 10, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_tet_is_reported() {
        let m = regular_tet();
        let mut t = m.tets()[0];
        t.swap(0, 1);
        match TetMesh::new(m.vertices().to_vec(), vec![t]) {
            Err(Error::InvertedElements(ids)) => assert_eq!(ids, vec![0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn surface_faces_point_outward() {
        let m = box_grid([3, 2, 2], [1.5, 1.0, 1.0]);
        let c = Vec3::new(0.75, 0.5, 0.5);
        for f in m.surface() {
            let p = f.map(|i| m.vertices()[i]);
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let mid = (p[0] + p[1] + p[2]) / 3.0;
            assert!(n.dot(&(mid - c)) > 0.0);
        }
    }

    #[test]
    fn voronoi_areas_sum_to_surface_area() {
        let m = ball(6, 1.0);
        let total: f64 = m
            .surface()
            .iter()
            .map(|f| {
                let p = f.map(|i| m.vertices()[i]);
                0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
            })
            .sum();
        let sum: f64 = m.voronoi_areas().iter().sum();
        assert!((sum - total).abs() < 1e-12 * total);
    }

    #[test]
    fn proxies_are_valid() {
        let bear = bear_proxy();
        assert!(bear.num_vertices() <= 2000);
        let bat = bat_proxy();
        assert!(bat.num_vertices() > 50);
    }
}
