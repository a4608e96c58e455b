//! Uniform lattice clipped to a convex body.
//!
//! Interior nodes (signed distance > 0) carry the PDE rows; exterior lattice
//! points touched by an interior second-difference stencil become ghosts and
//! carry the boundary-condition rows at their nearest boundary points. Ghost
//! interpolation cells are closed iteratively: any cell corner a ghost row
//! needs is itself added as a ghost. Node ordering is lexicographic interior
//! first, then lexicographic ghosts, so assembled systems are reproducible.

use crate::geometry::{ConvexBody, GeometryError};
use crate::la::{axpy, scale, SymMat, V3, ZERO_V};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid too coarse: {0}")]
    TooCoarse(String),
    #[error("point ({0}, {1}, {2}) is outside the interpolation domain")]
    OutsideInterpolationDomain(f64, f64, f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Scalar samples, one per grid node (interior then ghost order).
pub type Field = Vec<f64>;

/// Interpolation stencil over node ids; weights sum to 1.
#[derive(Clone, Debug)]
pub struct InterpStencil {
    pub ids: Vec<usize>,
    pub w: Vec<f64>,
}

impl InterpStencil {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.ids.iter().zip(&self.w).map(|(&i, &w)| w * u[i]).sum()
    }
}

/// Ghost node metadata. `bc_carrier` ghosts impose the boundary condition at
/// their foot point via probe values at depths h and 2h along the inward
/// normal; non-carriers (a second ghost sharing a foot, which happens when
/// the boundary passes exactly through a lattice point) are instead tied to
/// the solution by quadratic extrapolation along the same normal line.
#[derive(Clone, Debug)]
pub struct Ghost {
    pub node: usize,
    pub d: f64,
    pub foot: V3,
    pub nu: V3,
    pub bc_carrier: bool,
    /// |d|/h: normal-line offset of the ghost from its foot, used by the
    /// extrapolation row.
    pub tau: f64,
    pub st_foot: InterpStencil,
    pub st_p1: InterpStencil,
    pub st_p2: InterpStencil,
}

pub struct Grid {
    pub body: ConvexBody,
    pub n: usize,
    pub h: f64,
    /// Lattice index per node, interior block first.
    pub idx: Vec<[i64; 3]>,
    pub pos: Vec<V3>,
    pub n_interior: usize,
    /// Signed distance of each interior node (parallel to the interior block).
    pub d_interior: Vec<f64>,
    pub ghosts: Vec<Ghost>,
    /// Per-interior-node stencil ids, stride = stencil_offsets(n).len().
    stencil_ids: Vec<usize>,
    map: HashMap<[i64; 3], usize>,
}

/// Canonical second-difference stencil offsets: center, then +/- along each
/// axis, then the four cross points per axis pair (fixed order).
pub fn stencil_offsets(n: usize) -> Vec<[i64; 3]> {
    let mut offs = vec![[0i64; 3]];
    for a in 0..n {
        for s in [1i64, -1] {
            let mut o = [0i64; 3];
            o[a] = s;
            offs.push(o);
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            for (sa, sb) in [(1i64, 1i64), (-1, -1), (1, -1), (-1, 1)] {
                let mut o = [0i64; 3];
                o[a] = sa;
                o[b] = sb;
                offs.push(o);
            }
        }
    }
    offs
}

struct RawStencil {
    corners: Vec<[i64; 3]>,
    w: Vec<f64>,
}

/// Multilinear cell stencil in lattice coordinates, pruned of negligible
/// weights (so a point exactly on a lattice node needs only that node).
fn raw_stencil(n: usize, h: f64, q: V3) -> RawStencil {
    let mut anchor = [0i64; 3];
    let mut t = [0.0f64; 3];
    for a in 0..n {
        let s = q[a] / h;
        anchor[a] = s.floor() as i64;
        t[a] = s - anchor[a] as f64;
    }
    let mut corners = Vec::new();
    let mut w = Vec::new();
    for bits in 0..(1usize << n) {
        let mut c = anchor;
        let mut wt = 1.0;
        for a in 0..n {
            if bits & (1 << a) != 0 {
                c[a] += 1;
                wt *= t[a];
            } else {
                wt *= 1.0 - t[a];
            }
        }
        if wt.abs() > 1e-12 {
            corners.push(c);
            w.push(wt);
        }
    }
    let s: f64 = w.iter().sum();
    for wt in &mut w {
        *wt /= s;
    }
    RawStencil { corners, w }
}

struct RawGhost {
    d: f64,
    foot: V3,
    nu: V3,
    cells: [RawStencil; 3],
}

/// Tensor-quadratic stencil over a 3^n block, exact on quadratics. The block
/// anchor starts at the nearest lattice point and steps along `inward` until
/// the whole block is mapped; None when three steps find no complete block.
/// Exact zero weights are dropped so lattice-aligned points keep minimal rows.
fn quad_block(
    n: usize,
    h: f64,
    map: &HashMap<[i64; 3], usize>,
    x: V3,
    inward: V3,
) -> Option<InterpStencil> {
    'anchors: for k in 0..3 {
        let mut anchor = [0i64; 3];
        for a in 0..n {
            anchor[a] = ((x[a] + k as f64 * h * inward[a]) / h).round() as i64;
        }
        let nk: i64 = if n == 3 { 1 } else { 0 };
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -nk..=nk {
                    if !map.contains_key(&[anchor[0] + di, anchor[1] + dj, anchor[2] + dk]) {
                        continue 'anchors;
                    }
                }
            }
        }
        let mut t = [0.0f64; 3];
        for a in 0..n {
            t[a] = x[a] / h - anchor[a] as f64;
        }
        let wt = |ta: f64| [0.5 * ta * (ta - 1.0), 1.0 - ta * ta, 0.5 * ta * (ta + 1.0)];
        let wx = wt(t[0]);
        let wy = wt(t[1]);
        let wz = if n == 3 { wt(t[2]) } else { [0.0, 1.0, 0.0] };
        let mut ids = Vec::new();
        let mut w = Vec::new();
        for (ii, wxi) in wx.iter().enumerate() {
            for (jj, wyj) in wy.iter().enumerate() {
                for (kk, wzk) in wz.iter().enumerate() {
                    let wt = wxi * wyj * wzk;
                    if wt == 0.0 {
                        continue;
                    }
                    let c = [
                        anchor[0] + ii as i64 - 1,
                        anchor[1] + jj as i64 - 1,
                        anchor[2] + kk as i64 - 1,
                    ];
                    ids.push(map[&c]);
                    w.push(wt);
                }
            }
        }
        return Some(InterpStencil { ids, w });
    }
    None
}

impl Grid {
    pub fn build(body: &ConvexBody, h: f64) -> Result<Grid, GridError> {
        let n = body.dim();
        let inr = body.inradius();
        if h > inr / 8.0 + 1e-15 {
            return Err(GridError::TooCoarse(format!(
                "h = {h} exceeds inradius/8 = {:.6}",
                inr / 8.0
            )));
        }
        let ext = body.extent();
        let mut m = [0i64; 3];
        for a in 0..n {
            m[a] = (ext[a] / h).floor() as i64 + 2;
        }

        let mut interior: Vec<[i64; 3]> = Vec::new();
        let mut d_interior: Vec<f64> = Vec::new();
        let k_range = if n == 3 { -m[2]..=m[2] } else { 0..=0 };
        for i in -m[0]..=m[0] {
            for j in -m[1]..=m[1] {
                for k in k_range.clone() {
                    let idx = [i, j, k];
                    let x = [i as f64 * h, j as f64 * h, k as f64 * h];
                    let d = body.signed_distance(x)?.d;
                    if d > 0.0 {
                        interior.push(idx);
                        d_interior.push(d);
                    }
                }
            }
        }
        let interior_set: HashSet<[i64; 3]> = interior.iter().cloned().collect();
        for a in 0..n {
            let count = (-m[a]..=m[a])
                .filter(|&i| {
                    let mut idx = [0i64; 3];
                    idx[a] = i;
                    interior_set.contains(&idx)
                })
                .count();
            if count < 8 {
                return Err(GridError::TooCoarse(format!(
                    "only {count} interior nodes along axis {a}"
                )));
            }
        }

        // ghost discovery: exterior points any interior stencil touches,
        // then interpolation-cell closure
        let offs = stencil_offsets(n);
        let mut ghost_list: Vec<[i64; 3]> = Vec::new();
        let mut ghost_set: HashSet<[i64; 3]> = HashSet::new();
        for gi in &interior {
            for off in &offs[1..] {
                let j = [gi[0] + off[0], gi[1] + off[1], gi[2] + off[2]];
                if !interior_set.contains(&j) && ghost_set.insert(j) {
                    ghost_list.push(j);
                }
            }
        }
        let mut meta: HashMap<[i64; 3], RawGhost> = HashMap::new();
        let mut qi = 0;
        while qi < ghost_list.len() {
            let gid = ghost_list[qi];
            qi += 1;
            let x = [gid[0] as f64 * h, gid[1] as f64 * h, gid[2] as f64 * h];
            let dd = body.signed_distance(x)?;
            let b = dd.foot;
            let p1 = axpy(b, -h, dd.nu);
            let p2 = axpy(b, -2.0 * h, dd.nu);
            for p in [p1, p2] {
                if body.signed_distance(p)?.d <= 0.0 {
                    return Err(GridError::TooCoarse(format!(
                        "boundary probe at ({:.4}, {:.4}, {:.4}) leaves the domain",
                        p[0], p[1], p[2]
                    )));
                }
            }
            let cells = [
                raw_stencil(n, h, b),
                raw_stencil(n, h, p1),
                raw_stencil(n, h, p2),
            ];
            for cell in &cells {
                for c in &cell.corners {
                    if !interior_set.contains(c) && ghost_set.insert(*c) {
                        ghost_list.push(*c);
                    }
                }
            }
            meta.insert(
                gid,
                RawGhost { d: dd.d, foot: b, nu: dd.nu, cells },
            );
        }
        ghost_list.sort();

        let n_interior = interior.len();
        let mut idx = interior;
        idx.extend_from_slice(&ghost_list);
        let mut map = HashMap::with_capacity(idx.len());
        let mut pos = Vec::with_capacity(idx.len());
        for (id, gi) in idx.iter().enumerate() {
            map.insert(*gi, id);
            pos.push([gi[0] as f64 * h, gi[1] as f64 * h, gi[2] as f64 * h]);
        }

        let resolve = |st: &RawStencil| -> InterpStencil {
            InterpStencil {
                ids: st.corners.iter().map(|c| map[c]).collect(),
                w: st.w.clone(),
            }
        };
        // probe stencils are tensor-quadratic wherever a complete block is
        // mapped (exact on quadratics, which keeps the boundary closure from
        // polluting second-derivative diagnostics); multilinear otherwise
        let probe = |cell: &RawStencil, x: V3, nu: V3| -> InterpStencil {
            quad_block(n, h, &map, x, scale(nu, -1.0)).unwrap_or_else(|| resolve(cell))
        };
        let mut ghosts: Vec<Ghost> = ghost_list
            .iter()
            .enumerate()
            .map(|(gl, gi)| {
                let rg = &meta[gi];
                let node = n_interior + gl;
                let st_foot = probe(&rg.cells[0], rg.foot, rg.nu);
                // a ghost with negligible weight in its own foot cell cannot
                // anchor the boundary row (the row barely sees it, and the
                // linear solver answers with huge ghost excursions); such
                // ghosts get extrapolation rows instead
                let self_coupled = st_foot
                    .ids
                    .iter()
                    .zip(&st_foot.w)
                    .any(|(&id, &w)| id == node && w >= 0.1);
                Ghost {
                    node,
                    d: rg.d,
                    foot: rg.foot,
                    nu: rg.nu,
                    bc_carrier: self_coupled,
                    tau: -rg.d / h,
                    st_foot,
                    st_p1: probe(&rg.cells[1], axpy(rg.foot, -h, rg.nu), rg.nu),
                    st_p2: probe(&rg.cells[2], axpy(rg.foot, -2.0 * h, rg.nu), rg.nu),
                }
            })
            .collect();

        // demote ghosts whose foot duplicates an earlier ghost's foot
        let mut order: Vec<usize> = (0..ghosts.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (ghosts[a].foot, ghosts[b].foot);
            fa[0]
                .total_cmp(&fb[0])
                .then(fa[1].total_cmp(&fb[1]))
                .then(fa[2].total_cmp(&fb[2]))
        });
        let tol = 1e-9 * (1.0 + ext[0].max(ext[1]));
        let mut g0 = 0;
        while g0 < order.len() {
            let mut g1 = g0 + 1;
            while g1 < order.len() {
                let (fa, fb) = (ghosts[order[g0]].foot, ghosts[order[g1]].foot);
                if (0..n).all(|a| (fa[a] - fb[a]).abs() <= tol) {
                    g1 += 1;
                } else {
                    break;
                }
            }
            if g1 - g0 > 1 {
                // keep the closest self-coupled member as the group carrier
                let carrier = order[g0..g1]
                    .iter()
                    .filter(|&&g| ghosts[g].bc_carrier)
                    .min_by(|&&a, &&b| {
                        ghosts[a]
                            .d
                            .abs()
                            .total_cmp(&ghosts[b].d.abs())
                            .then(a.cmp(&b))
                    })
                    .copied();
                for &g in &order[g0..g1] {
                    if Some(g) != carrier {
                        ghosts[g].bc_carrier = false;
                    }
                }
            }
            g0 = g1;
        }

        let s_len = offs.len();
        let mut stencil_ids = vec![0usize; n_interior * s_len];
        for i in 0..n_interior {
            for (oi, off) in offs.iter().enumerate() {
                let j = [idx[i][0] + off[0], idx[i][1] + off[1], idx[i][2] + off[2]];
                stencil_ids[i * s_len + oi] = map[&j];
            }
        }

        Ok(Grid {
            body: body.clone(),
            n,
            h,
            idx,
            pos,
            n_interior,
            d_interior,
            ghosts,
            stencil_ids,
            map,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.idx.len()
    }

    pub fn find(&self, idx: [i64; 3]) -> Option<usize> {
        self.map.get(&idx).copied()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        node < self.n_interior
    }

    pub fn stencil_of(&self, node: usize) -> &[usize] {
        let s = stencil_offsets(self.n).len();
        &self.stencil_ids[node * s..(node + 1) * s]
    }

    /// Centered second differences; exact on quadratics.
    pub fn hessian_at(&self, u: &[f64], node: usize) -> SymMat {
        let n = self.n;
        let s_len = 1 + 2 * n + 4 * (n * (n - 1) / 2);
        let s = &self.stencil_ids[node * s_len..(node + 1) * s_len];
        let ih2 = 1.0 / (self.h * self.h);
        let mut d2 = SymMat::zero(n);
        let u0 = u[s[0]];
        for a in 0..n {
            d2.a[a][a] = (u[s[1 + 2 * a]] + u[s[2 + 2 * a]] - 2.0 * u0) * ih2;
        }
        let mut base = 1 + 2 * n;
        for a in 0..n {
            for b in a + 1..n {
                let v =
                    (u[s[base]] + u[s[base + 1]] - u[s[base + 2]] - u[s[base + 3]]) * ih2 * 0.25;
                d2.a[a][b] = v;
                d2.a[b][a] = v;
                base += 4;
            }
        }
        d2
    }

    /// Centered first differences; exact on quadratics.
    pub fn gradient_at(&self, u: &[f64], node: usize) -> V3 {
        let n = self.n;
        let s_len = 1 + 2 * n + 4 * (n * (n - 1) / 2);
        let s = &self.stencil_ids[node * s_len..(node + 1) * s_len];
        let mut g = ZERO_V;
        for a in 0..n {
            g[a] = (u[s[1 + 2 * a]] - u[s[2 + 2 * a]]) / (2.0 * self.h);
        }
        g
    }

    /// Multilinear stencil at an arbitrary point, resolved to node ids.
    pub fn interp_stencil(&self, x: V3) -> Result<InterpStencil, GridError> {
        let raw = raw_stencil(self.n, self.h, x);
        let mut ids = Vec::with_capacity(raw.corners.len());
        for c in &raw.corners {
            match self.map.get(c) {
                Some(&id) => ids.push(id),
                None => {
                    return Err(GridError::OutsideInterpolationDomain(x[0], x[1], x[2]));
                }
            }
        }
        Ok(InterpStencil { ids, w: raw.w })
    }

    pub fn interpolate(&self, u: &[f64], x: V3) -> Result<f64, GridError> {
        Ok(self.interp_stencil(x)?.eval(u))
    }

    /// Tensor-quadratic interpolation over a 3^n block, exact on quadratics.
    /// The block anchor is searched starting at the nearest lattice point and
    /// stepping along `inward` until the full block is covered; falls back to
    /// multilinear interpolation when no complete block exists.
    pub fn interpolate_quadratic(&self, u: &[f64], x: V3, inward: V3) -> Result<f64, GridError> {
        match quad_block(self.n, self.h, &self.map, x, inward) {
            Some(st) => Ok(st.eval(u)),
            None => self.interpolate(u, x),
        }
    }

    /// Transfer a field from another grid with the same spacing: copy at
    /// shared lattice points, otherwise clamp toward the origin until a
    /// source node exists (domains differ only in a thin boundary band).
    pub fn transfer_from(&self, old: &Grid, old_u: &[f64]) -> Field {
        assert!((self.h - old.h).abs() < 1e-15 && self.n == old.n);
        let mut u = vec![0.0; self.num_nodes()];
        for (i, gi) in self.idx.iter().enumerate() {
            let mut cur = *gi;
            loop {
                if let Some(&id) = old.map.get(&cur) {
                    u[i] = old_u[id];
                    break;
                }
                if cur == [0, 0, 0] {
                    u[i] = old_u[old.map[&[0, 0, 0]]];
                    break;
                }
                for c in cur.iter_mut() {
                    *c -= c.signum();
                }
            }
        }
        u
    }

    /// Sample a closed-form function at every node.
    pub fn sample(&self, f: impl Fn(V3) -> f64) -> Field {
        self.pos.iter().map(|&x| f(x)).collect()
    }
}
