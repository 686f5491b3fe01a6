//! Structured second-order tetrahedral meshes of a layered box.
//!
//! The box spans `x in [0, lx]`, `y in [0, ly]`, `z in [-lz, 0]` with the
//! free surface at `z = 0`. Every hexahedral cell is split into six
//! tetrahedra sharing the cell's main diagonal, so all corner and midside
//! nodes fall on a regular lattice of `(2nx+1)(2ny+1)(2nz+1)` points.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::constitutive::MaterialParams;
use crate::error::{Error, Result};

/// Edge of each midside node, by local corner indices.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)];

/// Local corner triples of the four faces of a tetrahedron.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

const MESH_MAGIC: &[u8; 4] = b"TFM1";
const MESH_VERSION: u32 = 1;

/// Depth of a layer interface as a function of horizontal position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interface {
    Flat {
        z: f64,
    },
    /// `z = z0 + slope_x * x + slope_y * y`.
    Sloped {
        z0: f64,
        slope_x: f64,
        #[serde(default)]
        slope_y: f64,
    },
    /// Cosine-shaped depression of depth `z_center` inside `radius`, `z_edge` outside.
    Basin {
        z_edge: f64,
        z_center: f64,
        cx: f64,
        cy: f64,
        radius: f64,
    },
    /// Piecewise-linear in `x`, constant in `y`.
    ProfileX {
        points: Vec<(f64, f64)>,
    },
}

impl Interface {
    pub fn depth(&self, x: f64, y: f64) -> f64 {
        match self {
            Interface::Flat { z } => *z,
            Interface::Sloped { z0, slope_x, slope_y } => z0 + slope_x * x + slope_y * y,
            Interface::Basin {
                z_edge,
                z_center,
                cx,
                cy,
                radius,
            } => {
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                if r >= *radius {
                    *z_edge
                } else {
                    let s = 0.5 * (1.0 + (std::f64::consts::PI * r / radius).cos());
                    z_edge + (z_center - z_edge) * s
                }
            }
            Interface::ProfileX { points } => {
                if points.is_empty() {
                    return f64::NAN;
                }
                if x <= points[0].0 {
                    return points[0].1;
                }
                for w in points.windows(2) {
                    let ((x0, z0), (x1, z1)) = (w[0], w[1]);
                    if x <= x1 {
                        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 1.0 };
                        return z0 + t * (z1 - z0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }
}

/// Geometry and layering of a box model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Layer interfaces from shallow to deep.
    #[serde(default)]
    pub interfaces: Vec<Interface>,
    /// One material per layer (`interfaces.len() + 1` entries), top first.
    pub materials: Vec<MaterialParams>,
}

impl MeshConfig {
    /// Soft layer of thickness `h_soil` over linear bedrock.
    pub fn two_layer(lx: f64, ly: f64, lz: f64, nx: usize, ny: usize, nz: usize, h_soil: f64) -> Self {
        MeshConfig {
            lx,
            ly,
            lz,
            nx,
            ny,
            nz,
            interfaces: vec![Interface::Flat { z: -h_soil }],
            materials: vec![MaterialParams::soft_soil(), MaterialParams::bedrock()],
        }
    }

    pub fn layer_count(&self) -> usize {
        self.interfaces.len() + 1
    }

    pub fn cell_size(&self) -> [f64; 3] {
        [
            self.lx / self.nx as f64,
            self.ly / self.ny as f64,
            self.lz / self.nz as f64,
        ]
    }

    /// Layer index containing the point; interfaces belong to the layer below.
    pub fn layer_at(&self, x: f64, y: f64, z: f64) -> usize {
        self.interfaces.iter().filter(|i| z <= i.depth(x, y)).count()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.lx, self.ly, self.lz];
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid(format!(
                "box extents must be positive, got {dims:?}"
            )));
        }
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::invalid("cell counts must be at least 1"));
        }
        if self.materials.len() != self.layer_count() {
            return Err(Error::invalid(format!(
                "{} interfaces need {} materials, got {}",
                self.interfaces.len(),
                self.layer_count(),
                self.materials.len()
            )));
        }
        for m in &self.materials {
            m.validate()?;
        }
        // interfaces must stay strictly ordered on a grid finer than the mesh
        let sx = 4 * self.nx;
        let sy = 4 * self.ny;
        for a in 0..=sx {
            for b in 0..=sy {
                let x = self.lx * a as f64 / sx as f64;
                let y = self.ly * b as f64 / sy as f64;
                for (k, w) in self.interfaces.windows(2).enumerate() {
                    let (zu, zl) = (w[0].depth(x, y), w[1].depth(x, y));
                    if !(zu.is_finite() && zl.is_finite()) || zu <= zl {
                        return Err(Error::InterfaceCrossing {
                            upper: k,
                            lower: k + 1,
                            x,
                            y,
                        });
                    }
                }
                if let Some(i) = self.interfaces.iter().find(|i| !i.depth(x, y).is_finite()) {
                    return Err(Error::invalid(format!(
                        "interface {i:?} is not finite at ({x}, {y})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lattice_dims(&self) -> [usize; 3] {
        [2 * self.nx + 1, 2 * self.ny + 1, 2 * self.nz + 1]
    }
}

/// Classification of a node on the box boundary. Bottom takes precedence
/// over side, side over surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Boundary {
    Interior = 0,
    Surface = 1,
    Bottom = 2,
    Side = 3,
}

impl Boundary {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Boundary::Interior,
            1 => Boundary::Surface,
            2 => Boundary::Bottom,
            3 => Boundary::Side,
            _ => return Err(Error::Format(format!("unknown boundary code {v}"))),
        })
    }
}

/// Which absorbing boundary plane a face lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacePlane {
    Bottom,
    XMin,
    XMax,
    YMin,
    YMax,
}

impl FacePlane {
    /// Outward unit normal.
    pub fn normal(self) -> [f64; 3] {
        match self {
            FacePlane::Bottom => [0.0, 0.0, -1.0],
            FacePlane::XMin => [-1.0, 0.0, 0.0],
            FacePlane::XMax => [1.0, 0.0, 0.0],
            FacePlane::YMin => [0.0, -1.0, 0.0],
            FacePlane::YMax => [0.0, 1.0, 0.0],
        }
    }

    /// Coordinate axis of the normal.
    pub fn axis(self) -> usize {
        match self {
            FacePlane::Bottom => 2,
            FacePlane::XMin | FacePlane::XMax => 0,
            FacePlane::YMin | FacePlane::YMax => 1,
        }
    }

    pub fn is_side(self) -> bool {
        self != FacePlane::Bottom
    }
}

/// Six-node triangular face on an absorbing boundary: corners, then the
/// midsides of edges (0,1), (1,2), (2,0).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFace {
    pub nodes: [u32; 6],
    pub element: u32,
    pub plane: FacePlane,
    pub area: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub config: MeshConfig,
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<[u32; 10]>,
    pub material: Vec<u32>,
    pub boundary: Vec<Boundary>,
}

/// Mesh resolution relative to the shortest shear wavelength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub fmax: f64,
    pub vs_min: f64,
    pub h_max: f64,
    pub elements_per_wavelength: f64,
    /// `(material id, Vs / (fmax * h_max of that material's elements))`.
    pub per_material: Vec<(usize, f64)>,
}

impl Mesh {
    pub fn generate(cfg: &MeshConfig) -> Result<Mesh> {
        cfg.validate()?;
        let [di, dj, dk] = cfg.lattice_dims();
        let hx = cfg.lx / (2 * cfg.nx) as f64;
        let hy = cfg.ly / (2 * cfg.ny) as f64;
        let hz = cfg.lz / (2 * cfg.nz) as f64;
        let n_nodes = di * dj * dk;
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut boundary = Vec::with_capacity(n_nodes);
        for k in 0..dk {
            for j in 0..dj {
                for i in 0..di {
                    nodes.push([i as f64 * hx, j as f64 * hy, -cfg.lz + k as f64 * hz]);
                    let b = if k == 0 {
                        Boundary::Bottom
                    } else if i == 0 || j == 0 || i == di - 1 || j == dj - 1 {
                        Boundary::Side
                    } else if k == dk - 1 {
                        Boundary::Surface
                    } else {
                        Boundary::Interior
                    };
                    boundary.push(b);
                }
            }
        }
        let id = |i: usize, j: usize, k: usize| (i + di * (j + dj * k)) as u32;
        let perms: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
        let n_tets = 6 * cfg.nx * cfg.ny * cfg.nz;
        let mut tets = Vec::with_capacity(n_tets);
        let mut material = Vec::with_capacity(n_tets);
        for ck in 0..cfg.nz {
            for cj in 0..cfg.ny {
                for ci in 0..cfg.nx {
                    for (p, perm) in perms.iter().enumerate() {
                        // lattice offsets of the four corners, in units of half cells
                        let mut c = [[0usize; 3]; 4];
                        c[1][perm[0]] = 2;
                        c[2] = c[1];
                        c[2][perm[1]] = 2;
                        c[3] = [2, 2, 2];
                        if p >= 3 {
                            c.swap(1, 2);
                        }
                        let mut t = [0u32; 10];
                        let base = [2 * ci, 2 * cj, 2 * ck];
                        for (a, off) in c.iter().enumerate() {
                            t[a] = id(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
                        }
                        for (e, &(a, b)) in TET_EDGES.iter().enumerate() {
                            let m = [
                                base[0] + (c[a][0] + c[b][0]) / 2,
                                base[1] + (c[a][1] + c[b][1]) / 2,
                                base[2] + (c[a][2] + c[b][2]) / 2,
                            ];
                            t[4 + e] = id(m[0], m[1], m[2]);
                        }
                        let cen = centroid(&nodes, &t);
                        material.push(cfg.layer_at(cen[0], cen[1], cen[2]) as u32);
                        tets.push(t);
                    }
                }
            }
        }
        let mesh = Mesh {
            config: cfg.clone(),
            nodes,
            tets,
            material,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn materials(&self) -> &[MaterialParams] {
        &self.config.materials
    }

    pub fn element_material(&self, e: usize) -> &MaterialParams {
        &self.config.materials[self.material[e] as usize]
    }

    /// Signed volume from the four corner nodes.
    pub fn element_volume(&self, e: usize) -> f64 {
        let t = &self.tets[e];
        let p = |a: usize| self.nodes[t[a] as usize];
        tet_volume(p(0), p(1), p(2), p(3))
    }

    pub fn validate(&self) -> Result<()> {
        if self.material.len() != self.tets.len() || self.boundary.len() != self.nodes.len() {
            return Err(Error::Format("mesh arrays have inconsistent lengths".into()));
        }
        let nm = self.config.materials.len() as u32;
        for (e, t) in self.tets.iter().enumerate() {
            if t.iter().any(|&n| n as usize >= self.nodes.len()) || self.material[e] >= nm {
                return Err(Error::Format(format!(
                    "element {e} references a missing node or material"
                )));
            }
            let v = self.element_volume(e);
            if !(v > 0.0) {
                return Err(Error::InvertedElement {
                    element: e,
                    volume: v,
                });
            }
            for (m, &(a, b)) in TET_EDGES.iter().enumerate() {
                let (pa, pb, pm) = (
                    self.nodes[t[a] as usize],
                    self.nodes[t[b] as usize],
                    self.nodes[t[4 + m] as usize],
                );
                for c in 0..3 {
                    if (0.5 * (pa[c] + pb[c]) - pm[c]).abs() > 1e-12 * (1.0 + pm[c].abs()) {
                        return Err(Error::Format(format!(
                            "midside node {m} of element {e} is off its edge"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Triangular faces of the tetrahedra lying on the bottom or side planes.
    pub fn boundary_faces(&self) -> Vec<BoundaryFace> {
        let cfg = &self.config;
        let tol = 1e-9 * (cfg.lx + cfg.ly + cfg.lz);
        let plane_of = |p: [f64; 3]| -> [bool; 5] {
            [
                (p[2] + cfg.lz).abs() < tol,
                p[0].abs() < tol,
                (p[0] - cfg.lx).abs() < tol,
                p[1].abs() < tol,
                (p[1] - cfg.ly).abs() < tol,
            ]
        };
        let planes = [
            FacePlane::Bottom,
            FacePlane::XMin,
            FacePlane::XMax,
            FacePlane::YMin,
            FacePlane::YMax,
        ];
        let mut faces = Vec::new();
        for (e, t) in self.tets.iter().enumerate() {
            for f in TET_FACES {
                let flags: Vec<[bool; 5]> = f.iter().map(|&a| plane_of(self.nodes[t[a] as usize])).collect();
                for (q, &plane) in planes.iter().enumerate() {
                    if flags.iter().all(|fl| fl[q]) {
                        let corner = [t[f[0]], t[f[1]], t[f[2]]];
                        let mid = |a: usize, b: usize| {
                            let m = TET_EDGES
                                .iter()
                                .position(|&(x, y)| (x, y) == (a.min(b), a.max(b)))
                                .expect("face edge is a tet edge");
                            t[4 + m]
                        };
                        let nodes = [
                            corner[0],
                            corner[1],
                            corner[2],
                            mid(f[0], f[1]),
                            mid(f[1], f[2]),
                            mid(f[2], f[0]),
                        ];
                        let p = |a: usize| self.nodes[nodes[a] as usize];
                        faces.push(BoundaryFace {
                            nodes,
                            element: e as u32,
                            plane,
                            area: triangle_area(p(0), p(1), p(2)),
                        });
                    }
                }
            }
        }
        faces
    }

    /// Nodes on the free surface (top plane, including its edges).
    pub fn surface_nodes(&self) -> Vec<usize> {
        let top = self.config.lattice_dims()[2] - 1;
        let [di, dj, _] = self.config.lattice_dims();
        (0..di * dj).map(|ij| ij + di * dj * top).collect()
    }

    /// Node closest to a point.
    pub fn nearest_node(&self, p: [f64; 3]) -> usize {
        let d2 = |q: &[f64; 3]| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
        let mut best = 0;
        for (i, q) in self.nodes.iter().enumerate() {
            if d2(q) < d2(&self.nodes[best]) {
                best = i;
            }
        }
        best
    }

    /// Longest corner-to-corner edge of an element.
    pub fn element_size(&self, e: usize) -> f64 {
        let t = &self.tets[e];
        TET_EDGES[..]
            .iter()
            .map(|&(a, b)| {
                let (p, q) = (self.nodes[t[a] as usize], self.nodes[t[b] as usize]);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Elements per shortest shear wavelength at frequency `fmax`.
    pub fn resolution(&self, fmax: f64) -> ResolutionReport {
        let nm = self.config.materials.len();
        let mut hmax = vec![0.0f64; nm];
        let mut used = vec![false; nm];
        for e in 0..self.n_elements() {
            let m = self.material[e] as usize;
            used[m] = true;
            hmax[m] = hmax[m].max(self.element_size(e));
        }
        let per_material: Vec<(usize, f64)> = (0..nm)
            .filter(|&m| used[m])
            .map(|m| (m, self.config.materials[m].vs() / (fmax * hmax[m])))
            .collect();
        let vs_min = (0..nm)
            .filter(|&m| used[m])
            .map(|m| self.config.materials[m].vs())
            .fold(f64::INFINITY, f64::min);
        let h_max = hmax.iter().copied().fold(0.0, f64::max);
        ResolutionReport {
            fmax,
            vs_min,
            h_max,
            elements_per_wavelength: vs_min / (fmax * h_max),
            per_material,
        }
    }

    /// Layer stack below `(x, y)` for a one-dimensional column analysis.
    pub fn extract_column(&self, x: f64, y: f64) -> Result<Column1D> {
        Column1D::from_config(&self.config, x, y)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(MESH_MAGIC)?;
        w.write_all(&MESH_VERSION.to_le_bytes())?;
        w.write_all(&(self.nodes.len() as u64).to_le_bytes())?;
        w.write_all(&(self.tets.len() as u64).to_le_bytes())?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        let mut buf = Vec::with_capacity(self.nodes.len() * 24 + self.tets.len() * 44 + self.nodes.len());
        for p in &self.nodes {
            for c in p {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        for t in &self.tets {
            for n in t {
                buf.extend_from_slice(&n.to_le_bytes());
            }
        }
        for m in &self.material {
            buf.extend_from_slice(&m.to_le_bytes());
        }
        buf.extend(self.boundary.iter().map(|&b| b as u8));
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_binary(&mut out).expect("writing to memory");
        out
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Mesh> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MESH_MAGIC {
            return Err(Error::Format("not a TFM1 mesh file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != MESH_VERSION {
            return Err(Error::Format(format!("unsupported mesh version {version}")));
        }
        let n_nodes = read_u64(&mut r)? as usize;
        let n_tets = read_u64(&mut r)? as usize;
        let cfg_len = read_u64(&mut r)? as usize;
        if cfg_len > 1 << 24 || n_nodes > 1 << 32 || n_tets > 1 << 32 {
            return Err(Error::Format("mesh header counts are implausible".into()));
        }
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config: MeshConfig = serde_json::from_slice(&cfg)?;
        let mut body = vec![0u8; n_nodes * 24 + n_tets * 44 + n_nodes];
        r.read_exact(&mut body)?;
        let f64_at = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        let nodes = (0..n_nodes)
            .map(|i| [f64_at(24 * i), f64_at(24 * i + 8), f64_at(24 * i + 16)])
            .collect();
        let off_t = n_nodes * 24;
        let tets = (0..n_tets)
            .map(|e| {
                let mut t = [0u32; 10];
                for (a, v) in t.iter_mut().enumerate() {
                    *v = u32_at(off_t + 40 * e + 4 * a);
                }
                t
            })
            .collect();
        let off_m = off_t + 40 * n_tets;
        let material = (0..n_tets).map(|e| u32_at(off_m + 4 * e)).collect();
        let off_b = off_m + 4 * n_tets;
        let boundary = body[off_b..off_b + n_nodes]
            .iter()
            .map(|&b| Boundary::from_u8(b))
            .collect::<Result<_>>()?;
        let mesh = Mesh {
            config,
            nodes,
            tets,
            material,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn centroid(nodes: &[[f64; 3]], t: &[u32; 10]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for &n in &t[..4] {
        for k in 0..3 {
            c[k] += 0.25 * nodes[n as usize][k];
        }
    }
    c
}

pub fn tet_volume(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], p3: [f64; 3]) -> f64 {
    let a = sub(p1, p0);
    let b = sub(p2, p0);
    let c = sub(p3, p0);
    dot(a, cross(b, c)) / 6.0
}

pub fn triangle_area(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3]) -> f64 {
    let n = cross(sub(p1, p0), sub(p2, p0));
    0.5 * dot(n, n).sqrt()
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Which boundaries carry absorbing dashpots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryConditionSpec {
    pub absorbing_bottom: bool,
    pub absorbing_sides: bool,
    /// Drive absorbing sides with the response of a 1D column (velocity
    /// through the dashpots plus its traction).
    #[serde(default = "yes")]
    pub free_field: bool,
}

fn yes() -> bool {
    true
}

impl Default for BoundaryConditionSpec {
    fn default() -> Self {
        BoundaryConditionSpec {
            absorbing_bottom: true,
            absorbing_sides: true,
            free_field: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    AbsorbingBottom,
    AbsorbingSide,
}

/// Node to DOF numbering. Every DOF is free; absorbing boundaries are
/// realized by dashpots, not by elimination.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub n_nodes: usize,
    /// Flagged DOFs with their constraint kind, sorted by DOF index.
    pub constrained: Vec<(usize, ConstraintKind)>,
}

impl DofMap {
    pub fn build(mesh: &Mesh, bc: &BoundaryConditionSpec) -> Result<DofMap> {
        mesh.validate()?;
        let mut constrained = Vec::new();
        for (n, b) in mesh.boundary.iter().enumerate() {
            let kind = match b {
                Boundary::Bottom if bc.absorbing_bottom => ConstraintKind::AbsorbingBottom,
                Boundary::Side if bc.absorbing_sides => ConstraintKind::AbsorbingSide,
                _ => continue,
            };
            for c in 0..3 {
                constrained.push((3 * n + c, kind));
            }
        }
        Ok(DofMap {
            n_nodes: mesh.n_nodes(),
            constrained,
        })
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> usize {
        3 * node + comp
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes
    }

    /// DOFs removed from the system; always empty.
    pub fn eliminated(&self) -> &[usize] {
        &[]
    }

    pub fn is_absorbing(&self, dof: usize) -> bool {
        self.constrained.binary_search_by_key(&dof, |&(d, _)| d).is_ok()
    }
}

/// One homogeneous layer of a soil column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnLayer {
    pub thickness: f64,
    pub material: usize,
}

/// Horizontally layered column below a point, shallow first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column1D {
    pub x: f64,
    pub y: f64,
    pub layers: Vec<ColumnLayer>,
    pub materials: Vec<MaterialParams>,
    /// Target element height for discretization.
    pub element_height: f64,
}

impl Column1D {
    pub fn from_config(cfg: &MeshConfig, x: f64, y: f64) -> Result<Column1D> {
        let eps = 1e-9 * (cfg.lx + cfg.ly);
        if !(x >= -eps && x <= cfg.lx + eps && y >= -eps && y <= cfg.ly + eps) {
            return Err(Error::invalid(format!(
                "column point ({x}, {y}) lies outside the model"
            )));
        }
        let mut top = 0.0f64;
        let mut layers = Vec::new();
        for (l, iface) in cfg.interfaces.iter().enumerate() {
            let z = iface.depth(x, y).clamp(-cfg.lz, 0.0);
            let bottom = z.min(top);
            if top - bottom > 0.0 {
                layers.push(ColumnLayer {
                    thickness: top - bottom,
                    material: l,
                });
            }
            top = bottom;
        }
        if top + cfg.lz > 0.0 {
            layers.push(ColumnLayer {
                thickness: top + cfg.lz,
                material: cfg.interfaces.len(),
            });
        }
        Ok(Column1D {
            x,
            y,
            layers,
            materials: cfg.materials.clone(),
            element_height: cfg.lz / cfg.nz as f64,
        })
    }

    pub fn depth(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Key identifying columns with the same layering.
    pub fn signature(&self) -> Vec<(u64, usize)> {
        self.layers
            .iter()
            .map(|l| ((l.thickness * 1e9).round() as u64, l.material))
            .collect()
    }
}
