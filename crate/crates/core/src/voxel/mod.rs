//! Dense 3D occupancy grids.
//!
//! Cells are stored x-major (`i` slowest, `k` fastest). A cell holds either a
//! probability in `[0, 1]` or the `UNKNOWN` sentinel, stored as `-1`.

mod io;
mod raycast;

pub use io::{read_grid, read_grid_from, write_grid, write_grid_to, GRID_MAGIC, GRID_VERSION};
pub use raycast::{fibonacci_sphere, raycast, raycast_visit, RayCause, RayMode, RayResult};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::num::Real;

/// World point in meters.
pub type Point = Vector3<f64>;

/// Voxel counts along x, y, z.
pub type Dims = [usize; 3];

/// Raw value used for unobserved cells.
pub const UNKNOWN: f64 = -1.0;

/// Default occupancy threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl GridIndex {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    pub fn as_array(self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }
}

impl From<[usize; 3]> for GridIndex {
    fn from(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// A cell value: either unobserved or a probability of occupancy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VoxelValue<T> {
    Unknown,
    Known(T),
}

impl<T: Real> VoxelValue<T> {
    /// Decodes a stored raw value; any negative value is the sentinel.
    #[inline]
    pub fn from_raw(raw: T) -> Self {
        if raw < T::zero() {
            VoxelValue::Unknown
        } else {
            VoxelValue::Known(raw)
        }
    }

    #[inline]
    pub fn raw(self) -> T {
        match self {
            VoxelValue::Unknown => T::of(UNKNOWN),
            VoxelValue::Known(v) => v,
        }
    }

    pub fn is_known(self) -> bool {
        matches!(self, VoxelValue::Known(_))
    }
}

/// Block extraction window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub offset: GridIndex,
    pub dims: Dims,
}

impl Region {
    pub fn new(offset: GridIndex, dims: Dims) -> Self {
        Self { offset, dims }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits(&self, dims: Dims) -> bool {
        let o = self.offset.as_array();
        (0..3).all(|a| self.dims[a] >= 1 && o[a] + self.dims[a] <= dims[a])
    }

    pub fn contains(&self, idx: GridIndex) -> bool {
        let o = self.offset.as_array();
        let p = idx.as_array();
        (0..3).all(|a| p[a] >= o[a] && p[a] < o[a] + self.dims[a])
    }

    /// Window of `dims` centered on `center`, shifted to lie inside `grid_dims`.
    pub fn centered(center: GridIndex, dims: Dims, grid_dims: Dims) -> Result<Self> {
        let c = center.as_array();
        let mut off = [0usize; 3];
        for a in 0..3 {
            if dims[a] > grid_dims[a] {
                return Err(invalid(format!(
                    "block dim {} exceeds grid dim {} on axis {a}",
                    dims[a], grid_dims[a]
                )));
            }
            let lo = c[a] as isize - (dims[a] / 2) as isize;
            off[a] = lo.clamp(0, (grid_dims[a] - dims[a]) as isize) as usize;
        }
        Ok(Self::new(off.into(), dims))
    }
}

/// Grid geometry: voxel counts, edge length and the world corner of voxel (0,0,0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: Dims,
    pub resolution: f64,
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: Dims, resolution: f64, origin: Point) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(invalid(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(invalid(format!("resolution must be > 0, got {resolution}")));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(invalid("grid dims exceed u32"));
        }
        Ok(Self {
            dims,
            resolution,
            origin: [origin.x, origin.y, origin.z],
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> Point {
        Point::from(self.origin)
    }

    /// World extent in meters.
    pub fn extent(&self) -> Point {
        Point::new(
            self.dims[0] as f64 * self.resolution,
            self.dims[1] as f64 * self.resolution,
            self.dims[2] as f64 * self.resolution,
        )
    }

    #[inline]
    pub fn linear(&self, idx: GridIndex) -> usize {
        (idx.i * self.dims[1] + idx.j) * self.dims[2] + idx.k
    }

    #[inline]
    pub fn unlinear(&self, lin: usize) -> GridIndex {
        let k = lin % self.dims[2];
        let r = lin / self.dims[2];
        GridIndex::new(r / self.dims[1], r % self.dims[1], k)
    }

    #[inline]
    pub fn contains_index(&self, idx: GridIndex) -> bool {
        idx.i < self.dims[0] && idx.j < self.dims[1] && idx.k < self.dims[2]
    }

    /// Signed voxel coordinates; may lie outside the grid.
    #[inline]
    pub fn voxel_coords(&self, p: &Point) -> [i64; 3] {
        let r = (p - self.origin()) / self.resolution;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    pub fn index_from_coords(&self, c: [i64; 3]) -> Option<GridIndex> {
        if (0..3).all(|a| c[a] >= 0 && (c[a] as usize) < self.dims[a]) {
            Some(GridIndex::new(c[0] as usize, c[1] as usize, c[2] as usize))
        } else {
            None
        }
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        self.index_from_coords(self.voxel_coords(p)).is_some()
    }

    pub fn world_to_index(&self, p: &Point) -> Result<GridIndex> {
        self.index_from_coords(self.voxel_coords(p)).ok_or_else(|| {
            Error::OutOfBounds(format!("point ({:.3}, {:.3}, {:.3}) outside grid", p.x, p.y, p.z))
        })
    }

    /// Center of a voxel in world coordinates.
    pub fn index_to_world(&self, idx: GridIndex) -> Point {
        self.origin()
            + Point::new(idx.i as f64 + 0.5, idx.j as f64 + 0.5, idx.k as f64 + 0.5) * self.resolution
    }

    /// Geometry of a sub-window.
    pub fn sub(&self, region: &Region) -> Result<Geometry> {
        if !region.fits(self.dims) {
            return Err(invalid(format!(
                "region {:?}+{:?} exceeds grid dims {:?}",
                region.offset, region.dims, self.dims
            )));
        }
        let o = region.offset;
        let origin = self.origin() + Point::new(o.i as f64, o.j as f64, o.k as f64) * self.resolution;
        Geometry::new(region.dims, self.resolution, origin)
    }

    pub fn same_shape(&self, other: &Geometry) -> bool {
        self.dims == other.dims
    }

    pub fn indices(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (0..self.len()).map(move |l| self.unlinear(l))
    }
}

/// Dense occupancy grid generic over the cell scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid<T> {
    geom: Geometry,
    cells: Vec<T>,
}

impl<T: Real> OccupancyGrid<T> {
    /// All cells start UNKNOWN.
    pub fn new(dims: Dims, resolution: f64, origin: Point) -> Result<Self> {
        Ok(Self::unknown(Geometry::new(dims, resolution, origin)?))
    }

    pub fn unknown(geom: Geometry) -> Self {
        Self::filled(geom, T::of(UNKNOWN))
    }

    pub fn filled(geom: Geometry, raw: T) -> Self {
        let n = geom.len();
        Self { geom, cells: vec![raw; n] }
    }

    /// Builds from raw cell values (`-1` for UNKNOWN, otherwise `[0, 1]`).
    pub fn from_raw(geom: Geometry, cells: Vec<T>) -> Result<Self> {
        if cells.len() != geom.len() {
            return Err(invalid(format!(
                "cell count {} does not match dims {:?}",
                cells.len(),
                geom.dims
            )));
        }
        if let Some(bad) = cells.iter().find(|&&c| !valid_raw(c)) {
            return Err(invalid(format!("cell value {bad} is neither UNKNOWN nor in [0,1]")));
        }
        Ok(Self { geom, cells })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> Dims {
        self.geom.dims
    }

    pub fn resolution(&self) -> f64 {
        self.geom.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn raw(&self) -> &[T] {
        &self.cells
    }

    /// Mutable raw access. Callers must keep every value UNKNOWN or in `[0,1]`.
    pub fn raw_mut(&mut self) -> &mut [T] {
        &mut self.cells
    }

    #[inline]
    pub fn get(&self, idx: GridIndex) -> VoxelValue<T> {
        VoxelValue::from_raw(self.cells[self.geom.linear(idx)])
    }

    #[inline]
    pub fn get_raw(&self, idx: GridIndex) -> T {
        self.cells[self.geom.linear(idx)]
    }

    pub fn try_get(&self, idx: GridIndex) -> Result<VoxelValue<T>> {
        if !self.geom.contains_index(idx) {
            return Err(Error::OutOfBounds(format!("{idx:?} outside {:?}", self.geom.dims)));
        }
        Ok(self.get(idx))
    }

    #[inline]
    pub fn set(&mut self, idx: GridIndex, v: VoxelValue<T>) {
        let l = self.geom.linear(idx);
        self.cells[l] = match v {
            VoxelValue::Unknown => T::of(UNKNOWN),
            VoxelValue::Known(x) => x.max(T::zero()).min(T::one()),
        };
    }

    #[inline]
    pub fn is_known(&self, idx: GridIndex) -> bool {
        self.get_raw(idx) >= T::zero()
    }

    /// Known and strictly above the threshold.
    #[inline]
    pub fn is_occupied(&self, idx: GridIndex, threshold: f64) -> bool {
        self.get_raw(idx).wide() > threshold
    }

    pub fn known_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c >= T::zero()).count()
    }

    pub fn occupied_count(&self, threshold: f64) -> usize {
        self.cells.iter().filter(|&&c| c.wide() > threshold).count()
    }

    pub fn world_to_index(&self, p: &Point) -> Result<GridIndex> {
        self.geom.world_to_index(p)
    }

    pub fn index_to_world(&self, idx: GridIndex) -> Point {
        self.geom.index_to_world(idx)
    }

    /// UNKNOWN → -1, value > θ → 1, otherwise 0.
    pub fn discretize(&self, threshold: f64) -> Result<TrinaryGrid> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!("threshold must be in (0,1), got {threshold}")));
        }
        let cells = self
            .cells
            .iter()
            .map(|&c| {
                if c < T::zero() {
                    -1
                } else if c.wide() > threshold {
                    1
                } else {
                    0
                }
            })
            .collect();
        Ok(TrinaryGrid {
            geom: self.geom.clone(),
            cells,
        })
    }

    pub fn extract_block(&self, region: &Region) -> Result<OccupancyGrid<T>> {
        let geom = self.geom.sub(region)?;
        let mut cells = Vec::with_capacity(region.len());
        let o = region.offset;
        for i in 0..region.dims[0] {
            for j in 0..region.dims[1] {
                let start = self.geom.linear(GridIndex::new(o.i + i, o.j + j, o.k));
                cells.extend_from_slice(&self.cells[start..start + region.dims[2]]);
            }
        }
        Ok(Self { geom, cells })
    }

    pub fn write_block(&mut self, region: &Region, block: &OccupancyGrid<T>) -> Result<()> {
        if !region.fits(self.geom.dims) {
            return Err(invalid(format!(
                "region {:?}+{:?} exceeds grid dims {:?}",
                region.offset, region.dims, self.geom.dims
            )));
        }
        if block.dims() != region.dims {
            return Err(invalid(format!(
                "block dims {:?} differ from region dims {:?}",
                block.dims(),
                region.dims
            )));
        }
        let o = region.offset;
        let dz = region.dims[2];
        for i in 0..region.dims[0] {
            for j in 0..region.dims[1] {
                let dst = self.geom.linear(GridIndex::new(o.i + i, o.j + j, o.k));
                let src = (i * region.dims[1] + j) * dz;
                self.cells[dst..dst + dz].copy_from_slice(&block.cells[src..src + dz]);
            }
        }
        Ok(())
    }

    /// Converts the cell scalar type.
    pub fn cast<U: Real>(&self) -> OccupancyGrid<U> {
        OccupancyGrid {
            geom: self.geom.clone(),
            cells: self.cells.iter().map(|&c| U::of(c.wide())).collect(),
        }
    }
}

#[inline]
fn valid_raw<T: Real>(c: T) -> bool {
    c == T::of(UNKNOWN) || (c >= T::zero() && c <= T::one())
}

/// Cells whose voxel box lies within `radius` of `p` (the containing cell always included).
pub fn cells_near(geom: &Geometry, p: &Point, radius: f64) -> Vec<GridIndex> {
    let res = geom.resolution;
    let c = geom.voxel_coords(p);
    let r = (radius / res).ceil() as i64;
    let local = (p - geom.origin()) / res;
    let rr = (radius / res) * (radius / res);
    let mut out = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            for dk in -r..=r {
                let n = [c[0] + di, c[1] + dj, c[2] + dk];
                let Some(idx) = geom.index_from_coords(n) else { continue };
                let mut d2 = 0.0;
                for a in 0..3 {
                    let lo = n[a] as f64;
                    let v = local[a].clamp(lo, lo + 1.0) - local[a];
                    d2 += v * v;
                }
                if d2 <= rr {
                    out.push(idx);
                }
            }
        }
    }
    out
}

/// True if any cell within `radius` (box distance) of `p` is occupied, or `p` is outside the grid.
pub fn occupied_near<T: Real>(grid: &OccupancyGrid<T>, p: &Point, radius: f64, threshold: f64) -> bool {
    if !grid.geometry().contains_point(p) {
        return true;
    }
    cells_near(grid.geometry(), p, radius)
        .into_iter()
        .any(|idx| grid.is_occupied(idx, threshold))
}

/// |known(partial)| / |known(target)|.
pub fn known_ratio<T: Real>(partial: &OccupancyGrid<T>, target: &OccupancyGrid<T>) -> Result<f64> {
    if !partial.geom.same_shape(&target.geom) {
        return Err(invalid("known_ratio: geometry mismatch"));
    }
    let denom = target.known_count();
    if denom == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(partial.known_count() as f64 / denom as f64)
}

/// Grid whose cells are -1 (unknown), 0 (free) or 1 (occupied).
#[derive(Clone, Debug, PartialEq)]
pub struct TrinaryGrid {
    geom: Geometry,
    cells: Vec<i8>,
}

impl TrinaryGrid {
    pub fn from_cells(geom: Geometry, cells: Vec<i8>) -> Result<Self> {
        if cells.len() != geom.len() {
            return Err(invalid("trinary cell count does not match dims"));
        }
        if cells.iter().any(|c| !matches!(c, -1..=1)) {
            return Err(invalid("trinary cells must be -1, 0 or 1"));
        }
        Ok(Self { geom, cells })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> Dims {
        self.geom.dims
    }

    pub fn cells(&self) -> &[i8] {
        &self.cells
    }

    pub fn get(&self, idx: GridIndex) -> i8 {
        self.cells[self.geom.linear(idx)]
    }

    /// Re-reads the trinary values as an occupancy grid (UNKNOWN, 0, 1).
    pub fn to_occupancy<T: Real>(&self) -> OccupancyGrid<T> {
        OccupancyGrid {
            geom: self.geom.clone(),
            cells: self
                .cells
                .iter()
                .map(|&c| if c < 0 { T::of(UNKNOWN) } else { T::of(c as f64) })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(dims: Dims) -> OccupancyGrid<f32> {
        OccupancyGrid::new(dims, 0.05, Point::zeros()).unwrap()
    }

    #[test]
    fn new_grid_is_unknown() {
        let g = grid([4, 4, 2]);
        assert_eq!(g.len(), 32);
        assert!(g.raw().iter().all(|&c| c == -1.0));
        assert_eq!(g.known_count(), 0);
    }

    #[test]
    fn block_sized_grid_spans_four_by_four_by_two() {
        let g = grid([80, 80, 40]);
        let e = g.geometry().extent();
        assert!((e.x - 4.0).abs() < 1e-12 && (e.y - 4.0).abs() < 1e-12 && (e.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_dims_rejected() {
        assert!(matches!(
            OccupancyGrid::<f32>::new([0, 4, 2], 0.05, Point::zeros()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(OccupancyGrid::<f32>::new([1, 1, 1], 0.0, Point::zeros()).is_err());
        assert!(OccupancyGrid::<f32>::new([1, 1, 1], -0.1, Point::zeros()).is_err());
    }

    #[test]
    fn world_to_index_floor() {
        let g = grid([10, 10, 10]);
        assert_eq!(g.world_to_index(&Point::new(0.12, 0.0, 0.26)).unwrap(), GridIndex::new(2, 0, 5));
        assert_eq!(g.world_to_index(&Point::zeros()).unwrap(), GridIndex::new(0, 0, 0));
        assert!(matches!(
            g.world_to_index(&Point::new(-0.01, 0.0, 0.0)),
            Err(Error::OutOfBounds(_))
        ));
        let idx = GridIndex::new(3, 7, 1);
        let c = g.index_to_world(idx);
        assert!((c - Point::new(0.175, 0.375, 0.075)).norm() < 1e-12);
        assert_eq!(g.world_to_index(&c).unwrap(), idx);
    }

    #[test]
    fn discretize_rules() {
        let mut g = grid([3, 1, 1]);
        g.set(GridIndex::new(0, 0, 0), VoxelValue::Known(0.7));
        g.set(GridIndex::new(1, 0, 0), VoxelValue::Known(0.5));
        let t = g.discretize(0.5).unwrap();
        assert_eq!(t.cells(), &[1, 0, -1]);
        assert!(g.discretize(1.0).is_err());
    }

    #[test]
    fn block_window_checks() {
        let g = grid([4, 4, 4]);
        let full = Region::new(GridIndex::new(0, 0, 0), [4, 4, 4]);
        assert_eq!(g.extract_block(&full).unwrap(), g);
        let bad = Region::new(GridIndex::new(1, 0, 0), [4, 4, 4]);
        assert!(matches!(g.extract_block(&bad), Err(Error::InvalidArgument(_))));
        let mut h = g.clone();
        assert!(h.write_block(&bad, &g).is_err());
        let r = Region::new(GridIndex::new(1, 1, 1), [2, 2, 2]);
        let b = g.extract_block(&r).unwrap();
        assert!((b.geometry().origin()[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn centered_region_clamps() {
        let r = Region::centered(GridIndex::new(1, 50, 9), [4, 4, 4], [100, 100, 10]).unwrap();
        assert_eq!(r.offset, GridIndex::new(0, 48, 6));
        assert!(Region::centered(GridIndex::new(0, 0, 0), [4, 4, 20], [10, 10, 10]).is_err());
    }

    #[test]
    fn cells_near_uses_box_distance() {
        let g = grid([10, 10, 10]);
        let geom = g.geometry();
        let p = Point::new(0.26, 0.26, 0.26);
        assert_eq!(cells_near(geom, &p, 0.0), vec![GridIndex::new(5, 5, 5)]);
        // 0.01 m to the face of cell 4, 0.04 m to the face of cell 6
        let n = cells_near(geom, &p, 0.02);
        assert!(n.contains(&GridIndex::new(4, 5, 5)) && !n.contains(&GridIndex::new(6, 5, 5)));
        let mut occ = g.clone();
        occ.set(GridIndex::new(4, 4, 4), VoxelValue::Known(1.0));
        assert!(!occupied_near(&occ, &p, 0.01, 0.5));
        assert!(occupied_near(&occ, &p, 0.02, 0.5));
        assert!(occupied_near(&occ, &Point::new(-1.0, 0.0, 0.0), 0.0, 0.5));
    }

    #[test]
    fn known_ratio_cases() {
        let mut target = grid([10, 10, 10]);
        target.raw_mut().iter_mut().for_each(|c| *c = 0.0);
        let partial = grid([10, 10, 10]);
        assert_eq!(known_ratio(&partial, &target).unwrap(), 0.0);
        assert_eq!(known_ratio(&target, &target).unwrap(), 1.0);
        assert!(matches!(known_ratio(&target, &partial), Err(Error::UndefinedRatio)));
    }

    fn arb_grid() -> impl Strategy<Value = OccupancyGrid<f32>> {
        (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(a, b, c)| {
            proptest::collection::vec(
                prop_oneof![Just(-1.0f32), 0.0f32..=1.0f32],
                a * b * c,
            )
            .prop_map(move |cells| {
                let geom = Geometry::new([a, b, c], 0.1, Point::new(1.0, -2.0, 0.5)).unwrap();
                OccupancyGrid::from_raw(geom, cells).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn discretize_is_idempotent(g in arb_grid(), theta in 0.05f64..0.95) {
            let once = g.discretize(theta).unwrap();
            let twice = once.to_occupancy::<f32>().discretize(theta).unwrap();
            prop_assert_eq!(once.cells(), twice.cells());
        }

        #[test]
        fn block_roundtrip_is_identity(g in arb_grid(), seed in any::<u64>()) {
            let d = g.dims();
            let s = seed as usize;
            let dims = [1 + s % d[0], 1 + (s / 7) % d[1], 1 + (s / 49) % d[2]];
            let off = GridIndex::new((s / 3) % (d[0] - dims[0] + 1), (s / 11) % (d[1] - dims[1] + 1), (s / 13) % (d[2] - dims[2] + 1));
            let r = Region::new(off, dims);
            let b = g.extract_block(&r).unwrap();
            let mut h = g.clone();
            h.write_block(&r, &b).unwrap();
            prop_assert_eq!(&h, &g);
            // overwriting a region leaves the complement untouched
            let mut w = g.clone();
            let ones = OccupancyGrid::filled(b.geometry().clone(), 1.0f32);
            w.write_block(&r, &ones).unwrap();
            for idx in g.geometry().indices() {
                if r.contains(idx) {
                    prop_assert_eq!(w.get_raw(idx), 1.0);
                } else {
                    prop_assert_eq!(w.get_raw(idx), g.get_raw(idx));
                }
            }
        }

        #[test]
        fn known_ratio_matches_count(cells in proptest::collection::vec(0u8..3, 1000), mask in proptest::collection::vec(any::<bool>(), 1000)) {
            let geom = Geometry::new([10, 10, 10], 0.1, Point::zeros()).unwrap();
            let target: Vec<f32> = cells.iter().map(|&c| if c == 0 { -1.0 } else { (c - 1) as f32 }).collect();
            let partial: Vec<f32> = target.iter().zip(&mask).map(|(&t, &m)| if m { t } else { -1.0 }).collect();
            let mut num = 0usize;
            let mut den = 0usize;
            for i in 0..1000 {
                if target[i] != -1.0 { den += 1; }
                if partial[i] != -1.0 { num += 1; }
            }
            let t = OccupancyGrid::from_raw(geom.clone(), target).unwrap();
            let p = OccupancyGrid::from_raw(geom, partial).unwrap();
            if den == 0 {
                prop_assert!(known_ratio(&p, &t).is_err());
            } else {
                prop_assert_eq!(known_ratio(&p, &t).unwrap(), num as f64 / den as f64);
            }
        }
    }
}
