//! Planar primitives shared by the index and the query engine.
//!
//! Morton codes use a fixed convention: for a cell with grid coordinates
//! `(cx, cy)` at some level, the bits of `cx` occupy the even bit positions
//! of the code and the bits of `cy` the odd ones. Within a parent the four
//! children are therefore ordered SW=0, SE=1, NW=2, NE=3, and moving between
//! levels is a plain shift by two bits per level.

/// Deepest level whose codes still fit in 62 bits.
pub const MAX_ENCODE_LEVEL: u32 = 31;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Squared Euclidean distance.
///
/// Every component that ranks neighbours (engine, k-selection, oracle) goes
/// through this one function, so their distances are bit-identical.
#[inline(always)]
pub fn dist_sq(a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Axis-aligned rectangle, closed on all sides for distance purposes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_lo: f64,
    pub y_lo: f64,
    pub x_hi: f64,
    pub y_hi: f64,
}

impl Rect {
    pub const fn new(x_lo: f64, y_lo: f64, x_hi: f64, y_hi: f64) -> Self {
        Self { x_lo, y_lo, x_hi, y_hi }
    }

    /// Square `[0, side] x [0, side]`.
    pub const fn square(side: f64) -> Self {
        Self::new(0.0, 0.0, side, side)
    }

    pub fn unit() -> Self {
        Self::square(1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.x_lo + 0.5 * self.width(),
            self.y_lo + 0.5 * self.height(),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_lo.is_finite()
            && self.y_lo.is_finite()
            && self.x_hi.is_finite()
            && self.y_hi.is_finite()
            && self.x_lo < self.x_hi
            && self.y_lo < self.y_hi
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_lo && p.x <= self.x_hi && p.y >= self.y_lo && p.y <= self.y_hi
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x_lo, self.x_hi), p.y.clamp(self.y_lo, self.y_hi))
    }

    /// Grows the rectangle by `eps` on every side.
    pub fn expand(&self, eps: f64) -> Rect {
        Rect::new(self.x_lo - eps, self.y_lo - eps, self.x_hi + eps, self.y_hi + eps)
    }
}

/// A quadrant of the (virtual) full quadtree over an MBR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MortonCell {
    pub level: u32,
    pub code: u64,
}

impl MortonCell {
    pub const ROOT: MortonCell = MortonCell { level: 0, code: 0 };

    pub const fn new(level: u32, code: u64) -> Self {
        Self { level, code }
    }

    pub fn is_valid(&self) -> bool {
        self.level <= MAX_ENCODE_LEVEL && self.code < cells_at_level(self.level)
    }

    /// The four children in Morton order.
    pub fn children(&self) -> [MortonCell; 4] {
        let base = self.code << 2;
        let level = self.level + 1;
        [0, 1, 2, 3].map(|q| MortonCell::new(level, base | q))
    }
}

/// Number of quadrants at `level`, i.e. `4^level`.
#[inline]
pub const fn cells_at_level(level: u32) -> u64 {
    1u64 << (2 * level)
}

#[inline]
fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

#[inline]
fn compact_bits(v: u64) -> u32 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
    x as u32
}

/// Interleaves grid coordinates into a Morton code.
#[inline]
pub fn interleave(cx: u32, cy: u32) -> u64 {
    spread_bits(cx) | (spread_bits(cy) << 1)
}

/// Inverse of [`interleave`].
#[inline]
pub fn deinterleave(code: u64) -> (u32, u32) {
    (compact_bits(code), compact_bits(code >> 1))
}

/// Grid coordinate of `v` along one axis at `level`, clamped into range.
///
/// The normalised offset is scaled by a power of two, which is exact, so
/// the coordinate at a coarser level is always the shifted fine coordinate.
#[inline]
fn axis_coord(v: f64, lo: f64, hi: f64, level: u32) -> (u32, bool) {
    let n = 1u64 << level;
    let t = (v - lo) / (hi - lo);
    let scaled = t * n as f64;
    if scaled.is_nan() || scaled < 0.0 {
        (0, v != lo)
    } else if scaled >= n as f64 {
        // Points on the max edge belong to the last cell; beyond it they are clamped.
        ((n - 1) as u32, v > hi)
    } else {
        (scaled as u32, false)
    }
}

/// Grid coordinates of `p` at `level`, plus whether the point had to be clamped.
#[inline]
pub fn grid_coords(p: Point, mbr: &Rect, level: u32) -> (u32, u32, bool) {
    let (cx, ox) = axis_coord(p.x, mbr.x_lo, mbr.x_hi, level);
    let (cy, oy) = axis_coord(p.y, mbr.y_lo, mbr.y_hi, level);
    (cx, cy, ox || oy)
}

/// Level-`level` quadrant containing `p`.
///
/// Cells are half-open: a point on an interior border goes to the cell with
/// the larger index. Points on the MBR's max edges, or outside the MBR, are
/// clamped into the nearest boundary cell.
#[inline]
pub fn morton_encode(p: Point, mbr: &Rect, level: u32) -> MortonCell {
    debug_assert!(level <= MAX_ENCODE_LEVEL);
    let (cx, cy, _) = grid_coords(p, mbr, level);
    MortonCell::new(level, interleave(cx, cy))
}

/// Code of the ancestor at `to_level` of a quadrant at `from_level`.
#[inline]
pub fn morton_parent(code: u64, from_level: u32, to_level: u32) -> u64 {
    debug_assert!(to_level <= from_level);
    code >> (2 * (from_level - to_level))
}

/// Code of the first `l_deep`-level quadrant covered by `cell`.
#[inline]
pub fn leaf_order_key(cell: MortonCell, l_deep: u32) -> u64 {
    debug_assert!(cell.level <= l_deep);
    cell.code << (2 * (l_deep - cell.level))
}

/// Exact extent of a quadrant.
pub fn cell_bounds(cell: MortonCell, mbr: &Rect) -> Rect {
    let (cx, cy) = deinterleave(cell.code);
    let n = (1u64 << cell.level) as f64;
    let w = mbr.width() / n;
    let h = mbr.height() / n;
    let x_lo = mbr.x_lo + cx as f64 * w;
    let y_lo = mbr.y_lo + cy as f64 * h;
    let last = (1u64 << cell.level) - 1;
    // Snap the outer edges so the root is exactly the MBR.
    let x_hi = if cx as u64 == last { mbr.x_hi } else { mbr.x_lo + (cx as f64 + 1.0) * w };
    let y_hi = if cy as u64 == last { mbr.y_hi } else { mbr.y_lo + (cy as f64 + 1.0) * h };
    Rect::new(x_lo, y_lo, x_hi, y_hi)
}

/// Squared distance from `p` to the closest point of `r` (0 inside).
#[inline]
pub fn min_dist_sq_point_rect(p: Point, r: &Rect) -> f64 {
    let dx = if p.x < r.x_lo {
        r.x_lo - p.x
    } else if p.x > r.x_hi {
        p.x - r.x_hi
    } else {
        0.0
    };
    let dy = if p.y < r.y_lo {
        r.y_lo - p.y
    } else if p.y > r.y_hi {
        p.y - r.y_hi
    } else {
        0.0
    };
    dx * dx + dy * dy
}

#[inline]
pub fn min_dist_point_rect(p: Point, r: &Rect) -> f64 {
    min_dist_sq_point_rect(p, r).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let unit = Rect::unit();
        for level in 0..=10 {
            assert_eq!(morton_encode(Point::new(0.0, 0.0), &unit, level).code, 0);
        }
        assert_eq!(morton_encode(Point::new(0.9, 0.9), &unit, 2), MortonCell::new(2, 15));
        assert_eq!(morton_encode(Point::new(0.3, 0.6), &unit, 1), MortonCell::new(1, 2));
        // SE quadrant
        assert_eq!(morton_encode(Point::new(0.7, 0.2), &unit, 1).code, 1);
    }

    #[test]
    fn encode_borders_and_clamping() {
        let unit = Rect::unit();
        // interior border goes to the larger index
        assert_eq!(morton_encode(Point::new(0.5, 0.25), &unit, 1).code, 1);
        // max edges clamp inward
        assert_eq!(morton_encode(Point::new(1.0, 1.0), &unit, 3).code, 63);
        assert_eq!(morton_encode(Point::new(1.0, 0.0), &unit, 1).code, 1);
        // outside the MBR
        let (cx, cy, clamped) = grid_coords(Point::new(-3.0, 7.0), &unit, 2);
        assert_eq!((cx, cy, clamped), (0, 3, true));
        let (_, _, clamped) = grid_coords(Point::new(1.0, 0.0), &unit, 2);
        assert!(!clamped);
    }

    #[test]
    fn parent_examples() {
        assert_eq!(morton_parent(13, 3, 2), 3);
        assert_eq!(morton_parent(77, 5, 5), 77);
        assert_eq!(morton_parent(15, 2, 0), 0);
    }

    #[test]
    fn leaf_order_key_examples() {
        assert_eq!(leaf_order_key(MortonCell::new(1, 3), 2), 12);
        assert_eq!(leaf_order_key(MortonCell::new(4, 201), 4), 201);
        let a = leaf_order_key(MortonCell::new(2, 5), 3);
        let b = leaf_order_key(MortonCell::new(2, 6), 3);
        assert_eq!(b - a, 4);
    }

    #[test]
    fn bounds_examples() {
        let mbr = Rect::new(-2.0, 3.0, 6.0, 11.0);
        assert_eq!(cell_bounds(MortonCell::ROOT, &mbr), mbr);
        assert_eq!(
            cell_bounds(MortonCell::new(1, 1), &Rect::unit()),
            Rect::new(0.5, 0.0, 1.0, 0.5)
        );
    }

    #[test]
    fn bounds_round_trip() {
        let unit = Rect::unit();
        for level in 0..=6u32 {
            for code in 0..cells_at_level(level) {
                let cell = MortonCell::new(level, code);
                let c = cell_bounds(cell, &unit).center();
                assert_eq!(morton_encode(c, &unit, level), cell);
            }
        }
    }

    #[test]
    fn min_dist_examples() {
        let r = Rect::new(3.0, 4.0, 4.0, 5.0);
        assert_eq!(min_dist_point_rect(Point::new(0.0, 0.0), &r), 5.0);
        assert_eq!(min_dist_point_rect(Point::new(3.5, 4.5), &r), 0.0);
        let r = Rect::new(1.0, 0.0, 2.0, 1.0);
        assert_eq!(min_dist_point_rect(Point::new(0.0, 0.5), &r), 1.0);
    }

    #[test]
    fn children_follow_quadrant_order() {
        let unit = Rect::unit();
        let kids = MortonCell::ROOT.children();
        let sw = cell_bounds(kids[0], &unit);
        let se = cell_bounds(kids[1], &unit);
        let nw = cell_bounds(kids[2], &unit);
        let ne = cell_bounds(kids[3], &unit);
        assert_eq!((sw.x_lo, sw.y_lo), (0.0, 0.0));
        assert_eq!((se.x_lo, se.y_lo), (0.5, 0.0));
        assert_eq!((nw.x_lo, nw.y_lo), (0.0, 0.5));
        assert_eq!((ne.x_lo, ne.y_lo), (0.5, 0.5));
    }

    proptest! {
        #[test]
        fn interleave_round_trip(cx in any::<u32>(), cy in any::<u32>()) {
            prop_assert_eq!(deinterleave(interleave(cx, cy)), (cx, cy));
        }

        #[test]
        fn hierarchy_consistency(x in 0.0f64..=22500.0, y in 0.0f64..=22500.0, l_max in 0u32..=20) {
            let mbr = Rect::square(22500.0);
            let p = Point::new(x, y);
            let fine = morton_encode(p, &mbr, l_max).code;
            for l in 0..=l_max {
                prop_assert_eq!(morton_parent(fine, l_max, l), morton_encode(p, &mbr, l).code);
            }
        }

        #[test]
        fn sorting_by_fine_code_sorts_coarse(pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..200)) {
            let mbr = Rect::unit();
            let mut codes: Vec<u64> = pts.iter().map(|&(x, y)| morton_encode(Point::new(x, y), &mbr, 12).code).collect();
            codes.sort_unstable();
            for l in 0..12 {
                let coarse: Vec<u64> = codes.iter().map(|&c| morton_parent(c, 12, l)).collect();
                prop_assert!(coarse.windows(2).all(|w| w[0] <= w[1]));
            }
        }

        #[test]
        fn encoded_point_lies_in_cell(x in -0.5f64..1.5, y in -0.5f64..1.5, level in 0u32..=16) {
            let mbr = Rect::unit();
            let p = Point::new(x, y);
            let cell = morton_encode(p, &mbr, level);
            prop_assert!(cell_bounds(cell, &mbr).contains(mbr.clamp(p)));
        }

        #[test]
        fn min_dist_is_lower_bound(
            px in -10.0f64..10.0, py in -10.0f64..10.0,
            x0 in -5.0f64..5.0, y0 in -5.0f64..5.0, w in 0.0f64..4.0, h in 0.0f64..4.0,
            tx in 0.0f64..=1.0, ty in 0.0f64..=1.0,
        ) {
            let r = Rect::new(x0, y0, x0 + w, y0 + h);
            let q = Point::new(x0 + tx * w, y0 + ty * h);
            let p = Point::new(px, py);
            prop_assert!(min_dist_sq_point_rect(p, &r) <= dist_sq(p, q));
        }

        #[test]
        fn leaf_keys_distinct_for_disjoint_leaves(level in 1u32..6, extra in 0u32..4) {
            // all quadrants at one level, under a deeper l_deep, map to distinct keys
            let l_deep = level + extra;
            let keys: Vec<u64> = (0..cells_at_level(level))
                .map(|c| leaf_order_key(MortonCell::new(level, c), l_deep))
                .collect();
            prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
