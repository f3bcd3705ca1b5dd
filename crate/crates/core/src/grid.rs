//! Lattice geometry, opinion configurations and boundary policies.
//!
//! Coordinates are `i32` pairs on the square lattice. Rectangles use
//! inclusive bounds, so `[1, n] x [1, m]` is `Rect::new(1, n, 1, m)`.
//! Row-major order means `y` outer, `x` inner.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_probability, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    pub fn parity(self) -> Parity {
        if (self.x + self.y).rem_euclid(2) == 0 {
            Parity::A
        } else {
            Parity::B
        }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Site {
        Site::new(self.x + dx, self.y + dy)
    }

    /// The four lattice neighbours in the fixed order east, west, north, south.
    pub fn lattice_neighbors(self) -> [Site; 4] {
        DIRECTIONS.map(|(dx, dy)| self.offset(dx, dy))
    }

    pub fn l1_distance(self, other: Site) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn linf_norm(self) -> u32 {
        self.x.unsigned_abs().max(self.y.unsigned_abs())
    }
}

/// East, west, north, south.
pub const DIRECTIONS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Checkerboard class: `A` when `x + y` is even.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: i32,
    pub x1: i32,
    pub y0: i32,
    pub y1: i32,
}

impl Rect {
    pub fn new(x0: i32, x1: i32, y0: i32, y1: i32) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return Err(Error::InvalidRect { x0, x1, y0, y1 });
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    /// `[0, w-1] x [0, h-1]`.
    pub fn with_size(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "rectangle size {width}x{height} must be positive"
            )));
        }
        Rect::new(0, width as i32 - 1, 0, height as i32 - 1)
    }

    /// The box `[-n, n]^2`.
    pub fn centered_box(n: u32) -> Self {
        let n = n as i32;
        Rect { x0: -n, x1: n, y0: -n, y1: n }
    }

    pub fn width(&self) -> usize {
        (self.x1 - self.x0) as usize + 1
    }

    pub fn height(&self) -> usize {
        (self.y1 - self.y0) as usize + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, s: Site) -> bool {
        s.x >= self.x0 && s.x <= self.x1 && s.y >= self.y0 && s.y <= self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.contains(s).then(|| {
            (s.y - self.y0) as usize * self.width() + (s.x - self.x0) as usize
        })
    }

    pub fn site_at(&self, index: usize) -> Site {
        let w = self.width();
        Site::new(self.x0 + (index % w) as i32, self.y0 + (index / w) as i32)
    }

    pub fn translate(&self, by: Site) -> Rect {
        Rect {
            x0: self.x0 + by.x,
            x1: self.x1 + by.x,
            y0: self.y0 + by.y,
            y1: self.y1 + by.y,
        }
    }

    pub fn expand(&self, margin: u32) -> Rect {
        let m = margin as i32;
        Rect { x0: self.x0 - m, x1: self.x1 + m, y0: self.y0 - m, y1: self.y1 + m }
    }

    /// Sites in row-major order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        let r = *self;
        (r.y0..=r.y1).flat_map(move |y| (r.x0..=r.x1).map(move |x| Site::new(x, y)))
    }

    pub fn left_column(&self) -> Vec<Site> {
        (self.y0..=self.y1).map(|y| Site::new(self.x0, y)).collect()
    }

    pub fn right_column(&self) -> Vec<Site> {
        (self.y0..=self.y1).map(|y| Site::new(self.x1, y)).collect()
    }

    pub fn bottom_row(&self) -> Vec<Site> {
        (self.x0..=self.x1).map(|x| Site::new(x, self.y0)).collect()
    }

    pub fn top_row(&self) -> Vec<Site> {
        (self.x0..=self.x1).map(|x| Site::new(x, self.y1)).collect()
    }

    /// Number of sites on the inner boundary.
    pub fn boundary_size(&self) -> usize {
        let (w, h) = (self.width(), self.height());
        if w == 1 || h == 1 {
            w * h
        } else {
            2 * (w + h) - 4
        }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]x[{}, {}]", self.x0, self.x1, self.y0, self.y1)
    }
}

/// How reads and neighbourhoods behave at the edge of a finite region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryPolicy {
    /// Finite graph: boundary sites simply have fewer neighbours.
    FreeFinite,
    /// Out-of-region sites read as a constant 0.
    FrozenZero,
    /// Out-of-region sites read as a constant 1.
    FrozenOne,
    /// Coordinates wrap modulo the region dimensions.
    Periodic,
}

impl BoundaryPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryPolicy::FreeFinite => "free",
            BoundaryPolicy::FrozenZero => "frozen0",
            BoundaryPolicy::FrozenOne => "frozen1",
            BoundaryPolicy::Periodic => "periodic",
        }
    }
}

impl FromStr for BoundaryPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" | "free-finite" => Ok(BoundaryPolicy::FreeFinite),
            "frozen0" | "frozen-zero" => Ok(BoundaryPolicy::FrozenZero),
            "frozen1" | "frozen-one" => Ok(BoundaryPolicy::FrozenOne),
            "periodic" => Ok(BoundaryPolicy::Periodic),
            other => Err(Error::Parse(format!("unknown boundary policy `{other}`"))),
        }
    }
}

impl fmt::Display for BoundaryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a neighbour's opinion comes from once the boundary policy is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeighborSource {
    Site(Site),
    Constant(bool),
}

/// Neighbourhood of `s` inside `region`, in east/west/north/south order.
pub fn neighbors(s: Site, region: &Rect, policy: BoundaryPolicy) -> Result<Vec<NeighborSource>> {
    if !region.contains(s) {
        return Err(Error::SiteOutsideRegion { site: s, region: *region });
    }
    Ok(neighbors_unchecked(s, region, policy))
}

pub(crate) fn neighbors_unchecked(
    s: Site,
    region: &Rect,
    policy: BoundaryPolicy,
) -> Vec<NeighborSource> {
    let mut out = Vec::with_capacity(4);
    for n in s.lattice_neighbors() {
        if region.contains(n) {
            out.push(NeighborSource::Site(n));
            continue;
        }
        match policy {
            BoundaryPolicy::FreeFinite => {}
            BoundaryPolicy::FrozenZero => out.push(NeighborSource::Constant(false)),
            BoundaryPolicy::FrozenOne => out.push(NeighborSource::Constant(true)),
            BoundaryPolicy::Periodic => {
                let w = region.width() as i32;
                let h = region.height() as i32;
                let x = region.x0 + (n.x - region.x0).rem_euclid(w);
                let y = region.y0 + (n.y - region.y0).rem_euclid(h);
                out.push(NeighborSource::Site(Site::new(x, y)));
            }
        }
    }
    out
}

/// A bit-packed opinion configuration over a rectangle. `true` is opinion 1 (open).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    region: Rect,
    words: Vec<u64>,
}

impl SpinConfig {
    pub fn zeros(region: Rect) -> Self {
        SpinConfig { region, words: vec![0; region.area().div_ceil(64)] }
    }

    pub fn ones(region: Rect) -> Self {
        let mut c = SpinConfig::zeros(region);
        for i in 0..region.area() {
            c.set_index(i, true);
        }
        c
    }

    pub fn from_fn(region: Rect, mut f: impl FnMut(Site) -> bool) -> Self {
        let mut c = SpinConfig::zeros(region);
        for (i, s) in region.sites().enumerate() {
            if f(s) {
                c.set_index(i, true);
            }
        }
        c
    }

    /// Builds a configuration from row-major opinions.
    pub fn from_bools(region: Rect, values: &[bool]) -> Result<Self> {
        if values.len() != region.area() {
            return Err(Error::InvalidParameter(format!(
                "expected {} opinions for {region}, got {}",
                region.area(),
                values.len()
            )));
        }
        let mut c = SpinConfig::zeros(region);
        for (i, &v) in values.iter().enumerate() {
            c.set_index(i, v);
        }
        Ok(c)
    }

    pub fn region(&self) -> &Rect {
        &self.region
    }

    pub fn get(&self, s: Site) -> Option<bool> {
        self.region.index_of(s).map(|i| self.get_index(i))
    }

    /// Opinion at `s`, failing if the site is outside the region.
    pub fn at(&self, s: Site) -> Result<bool> {
        self.get(s).ok_or(Error::SiteOutsideRegion { site: s, region: self.region })
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, v: bool) {
        let bit = 1u64 << (i & 63);
        if v {
            self.words[i >> 6] |= bit;
        } else {
            self.words[i >> 6] &= !bit;
        }
    }

    pub fn set(&mut self, s: Site, v: bool) -> Result<()> {
        let i = self
            .region
            .index_of(s)
            .ok_or(Error::SiteOutsideRegion { site: s, region: self.region })?;
        self.set_index(i, v);
        Ok(())
    }

    /// Reads through the boundary policy. `None` means the site has no
    /// opinion under this policy (outside region, `FreeFinite`).
    pub fn read(&self, s: Site, policy: BoundaryPolicy) -> Option<bool> {
        if let Some(v) = self.get(s) {
            return Some(v);
        }
        match policy {
            BoundaryPolicy::FreeFinite => None,
            BoundaryPolicy::FrozenZero => Some(false),
            BoundaryPolicy::FrozenOne => Some(true),
            BoundaryPolicy::Periodic => {
                let r = &self.region;
                let x = r.x0 + (s.x - r.x0).rem_euclid(r.width() as i32);
                let y = r.y0 + (s.y - r.y0).rem_euclid(r.height() as i32);
                self.get(Site::new(x, y))
            }
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_zeros(&self) -> usize {
        self.region.area() - self.count_ones()
    }

    /// Sitewise `self <= other`. Regions must match.
    pub fn le(&self, other: &SpinConfig) -> bool {
        self.region == other.region
            && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// First site (row-major) where `self > other`, if any.
    pub fn first_order_violation(&self, other: &SpinConfig) -> Option<Site> {
        (0..self.region.area())
            .find(|&i| self.get_index(i) && !other.get_index(i))
            .map(|i| self.region.site_at(i))
    }

    pub fn complement(&self) -> SpinConfig {
        SpinConfig::from_fn(self.region, |s| !self.get(s).unwrap())
    }

    /// Copy of the sub-window `window`, which must lie inside the region.
    pub fn restrict(&self, window: &Rect) -> Result<SpinConfig> {
        if !self.region.contains_rect(window) {
            return Err(Error::Geometry(format!("{window} is not inside {}", self.region)));
        }
        Ok(SpinConfig::from_fn(*window, |s| self.get(s).unwrap()))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.region.area()).map(|i| self.get_index(i)).collect()
    }

    /// `rect x0 x1 y0 y1` header then one line of `0`/`1` per row, `y0` first.
    pub fn serialize(&self) -> String {
        let r = &self.region;
        let mut out = format!("rect {} {} {} {}\n", r.x0, r.x1, r.y0, r.y1);
        out.reserve(r.area() + r.height());
        for y in r.y0..=r.y1 {
            for x in r.x0..=r.x1 {
                out.push(if self.get(Site::new(x, y)).unwrap() { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<SpinConfig> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty configuration".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "rect" {
            return Err(Error::Parse(format!("bad configuration header `{header}`")));
        }
        let mut bounds = [0i32; 4];
        for (b, f) in bounds.iter_mut().zip(&fields[1..]) {
            *b = f.parse().map_err(|_| Error::Parse(format!("bad bound `{f}`")))?;
        }
        let region = Rect::new(bounds[0], bounds[1], bounds[2], bounds[3])?;
        let mut config = SpinConfig::zeros(region);
        let mut rows = 0;
        for (row, line) in lines.enumerate() {
            if row >= region.height() {
                return Err(Error::Parse("too many rows".into()));
            }
            if line.len() != region.width() {
                return Err(Error::Parse(format!("row {row} has length {}", line.len())));
            }
            for (col, ch) in line.bytes().enumerate() {
                let v = match ch {
                    b'0' => false,
                    b'1' => true,
                    _ => return Err(Error::Parse(format!("bad character in row {row}"))),
                };
                config.set_index(row * region.width() + col, v);
            }
            rows += 1;
        }
        if rows != region.height() {
            return Err(Error::Parse(format!("expected {} rows, got {rows}", region.height())));
        }
        Ok(config)
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

/// `eta_0(x) = 1{U_x <= p}` over the field's region.
pub fn random_init(p: f64, uniforms: &crate::clocks::UniformField) -> Result<SpinConfig> {
    check_probability("p", p)?;
    let region = *uniforms.region();
    let mut c = SpinConfig::zeros(region);
    for (i, &u) in uniforms.values().iter().enumerate() {
        if u <= p {
            c.set_index(i, true);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clocks::{uniform_field, SeedSpec};
    use proptest::prelude::*;

    fn sq(n: u32) -> Rect {
        Rect::with_size(n, n).unwrap()
    }

    #[test]
    fn rect_rejects_inverted_bounds() {
        assert!(Rect::new(3, 1, 0, 0).is_err());
        assert_eq!(sq(4).area(), 16);
        assert_eq!(Rect::new(1, 6, 1, 3).unwrap().width(), 6);
    }

    #[test]
    fn parity_classes() {
        assert_eq!(Site::new(0, 0).parity(), Parity::A);
        assert_eq!(Site::new(1, 0).parity(), Parity::B);
        assert_eq!(Site::new(-1, -1).parity(), Parity::A);
        assert_eq!(Site::new(-3, 0).parity(), Parity::B);
    }

    #[test]
    fn neighbor_counts_by_policy() {
        let r = sq(5);
        let interior = Site::new(2, 2);
        let corner = Site::new(0, 0);
        for policy in [
            BoundaryPolicy::FreeFinite,
            BoundaryPolicy::FrozenZero,
            BoundaryPolicy::FrozenOne,
            BoundaryPolicy::Periodic,
        ] {
            assert_eq!(neighbors(interior, &r, policy).unwrap().len(), 4);
        }
        assert_eq!(neighbors(corner, &r, BoundaryPolicy::FreeFinite).unwrap().len(), 2);
        assert_eq!(neighbors(Site::new(2, 0), &r, BoundaryPolicy::FreeFinite).unwrap().len(), 3);
        let wrapped = neighbors(corner, &r, BoundaryPolicy::Periodic).unwrap();
        assert_eq!(wrapped.len(), 4);
        assert!(wrapped.contains(&NeighborSource::Site(Site::new(4, 0))));
        assert!(wrapped.contains(&NeighborSource::Site(Site::new(0, 4))));
        let frozen = neighbors(corner, &r, BoundaryPolicy::FrozenOne).unwrap();
        assert_eq!(frozen.iter().filter(|n| **n == NeighborSource::Constant(true)).count(), 2);
        assert!(neighbors(Site::new(9, 9), &r, BoundaryPolicy::Periodic).is_err());
    }

    #[test]
    fn random_init_extremes() {
        let field = uniform_field(&SeedSpec::new(3, 0, "init"), &sq(16));
        assert_eq!(random_init(0.0, &field).unwrap().count_ones(), 0);
        assert_eq!(random_init(1.0, &field).unwrap().count_zeros(), 0);
        assert!(random_init(1.5, &field).is_err());
        assert!(random_init(-0.1, &field).is_err());
    }

    #[test]
    fn frozen_reads_never_default_silently() {
        let c = SpinConfig::ones(sq(3));
        let out = Site::new(-1, 0);
        assert_eq!(c.get(out), None);
        assert_eq!(c.read(out, BoundaryPolicy::FreeFinite), None);
        assert_eq!(c.read(out, BoundaryPolicy::FrozenZero), Some(false));
        assert_eq!(c.read(out, BoundaryPolicy::Periodic), Some(true));
    }

    #[test]
    fn serialization_format() {
        let r = Rect::new(0, 2, 0, 1).unwrap();
        let c = SpinConfig::from_bools(r, &[true, false, false, false, true, true]).unwrap();
        assert_eq!(c.serialize(), "rect 0 2 0 1\n100\n011\n");
        assert!(SpinConfig::parse("rect 0 2 0 1\n100\n").is_err());
        assert!(SpinConfig::parse("rect 0 2 0 1\n100\n0x1\n").is_err());
    }

    proptest! {
        #[test]
        fn init_is_monotone_in_p(seed in any::<u64>(), p1 in 0.0..=1.0f64, p2 in 0.0..=1.0f64) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let field = uniform_field(&SeedSpec::new(seed, 0, "init"), &sq(12));
            let a = random_init(lo, &field).unwrap();
            let b = random_init(hi, &field).unwrap();
            prop_assert!(a.le(&b));
            prop_assert_eq!(a.count_ones() + a.count_zeros(), 144);
        }

        #[test]
        fn serialization_round_trips(
            x0 in -20i32..20, y0 in -20i32..20, w in 1u32..40, h in 1u32..12, seed in any::<u64>(),
        ) {
            let r = Rect::new(x0, x0 + w as i32 - 1, y0, y0 + h as i32 - 1).unwrap();
            let field = uniform_field(&SeedSpec::new(seed, 1, "init"), &r);
            let c = random_init(0.5, &field).unwrap();
            let back = SpinConfig::parse(&c.serialize()).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn neighbor_relation_is_symmetric(w in 1u32..6, h in 1u32..6, policy_ix in 0usize..4) {
            let policy = [
                BoundaryPolicy::FreeFinite,
                BoundaryPolicy::FrozenZero,
                BoundaryPolicy::FrozenOne,
                BoundaryPolicy::Periodic,
            ][policy_ix];
            let r = Rect::with_size(w, h).unwrap();
            for s in r.sites() {
                for n in neighbors(s, &r, policy).unwrap() {
                    if let NeighborSource::Site(t) = n {
                        let back = neighbors(t, &r, policy).unwrap();
                        prop_assert!(back.contains(&NeighborSource::Site(s)));
                    }
                }
            }
        }
    }
}
