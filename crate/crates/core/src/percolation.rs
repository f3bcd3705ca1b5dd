//! Clusters, crossings and circuits of open sites.

use std::collections::VecDeque;

use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::grid::{Rect, Site, SpinConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Connectivity {
    /// The four orthogonal neighbours.
    NearestNeighbor,
    /// All eight surrounding sites. Used for closed-site dual paths.
    Star,
}

const STAR: [(i32, i32); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

impl Connectivity {
    pub fn offsets(self) -> &'static [(i32, i32)] {
        match self {
            Connectivity::NearestNeighbor => &STAR[..4],
            Connectivity::Star => &STAR,
        }
    }
}

/// Open clusters of a configuration.
///
/// Labels are numbered by the position of each cluster's first site in
/// row-major order, so equal configurations always get equal labelings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabeling {
    region: Rect,
    labels: Vec<Option<u32>>,
    sizes: Vec<usize>,
}

impl ClusterLabeling {
    pub fn region(&self) -> &Rect {
        &self.region
    }

    pub fn label(&self, s: Site) -> Option<u32> {
        self.region.index_of(s).and_then(|i| self.labels[i])
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn largest(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }
}

pub fn label_clusters(config: &SpinConfig, conn: Connectivity) -> ClusterLabeling {
    let region = *config.region();
    let n = region.area();
    let mut uf = UnionFind::<usize>::new(n);
    for (i, s) in region.sites().enumerate() {
        if !config.get_index(i) {
            continue;
        }
        for &(dx, dy) in conn.offsets() {
            // each pair once: only look forward in row-major order
            if dy < 0 || (dy == 0 && dx < 0) {
                continue;
            }
            if let Some(j) = region.index_of(s.offset(dx, dy)) {
                if config.get_index(j) {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut root_label: Vec<Option<u32>> = vec![None; n];
    let mut labels = vec![None; n];
    let mut sizes = Vec::new();
    for i in 0..n {
        if !config.get_index(i) {
            continue;
        }
        let r = uf.find_mut(i);
        let l = *root_label[r].get_or_insert_with(|| {
            sizes.push(0);
            (sizes.len() - 1) as u32
        });
        labels[i] = Some(l);
        sizes[l as usize] += 1;
    }
    ClusterLabeling { region, labels, sizes }
}

pub fn largest_cluster_size(config: &SpinConfig) -> usize {
    label_clusters(config, Connectivity::NearestNeighbor).largest()
}

/// Result of a set-to-set connectivity query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Connection {
    pub connected: bool,
    /// One of the endpoint sets was empty; `connected` is then false.
    pub empty_endpoint: bool,
}

/// Whether an open path inside `region` joins `a` to `b`.
pub fn connects(
    config: &SpinConfig,
    region: &Rect,
    a: &[Site],
    b: &[Site],
    conn: Connectivity,
) -> Result<Connection> {
    if !config.region().contains_rect(region) {
        return Err(Error::RegionMismatch { expected: *config.region(), found: *region });
    }
    if let Some(&s) = a.iter().chain(b).find(|s| !region.contains(**s)) {
        return Err(Error::SiteOutsideRegion { site: s, region: *region });
    }
    if a.is_empty() || b.is_empty() {
        return Ok(Connection { connected: false, empty_endpoint: true });
    }
    let open = |s: Site| config.get(s) == Some(true);
    let mut target = vec![false; region.area()];
    for &s in b {
        target[region.index_of(s).unwrap()] = true;
    }
    let mut seen = vec![false; region.area()];
    let mut queue = VecDeque::new();
    for &s in a {
        let i = region.index_of(s).unwrap();
        if open(s) && !seen[i] {
            seen[i] = true;
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        if target[region.index_of(s).unwrap()] {
            return Ok(Connection { connected: true, empty_endpoint: false });
        }
        for &(dx, dy) in conn.offsets() {
            let t = s.offset(dx, dy);
            if let Some(j) = region.index_of(t) {
                if !seen[j] && open(t) {
                    seen[j] = true;
                    queue.push_back(t);
                }
            }
        }
    }
    Ok(Connection { connected: false, empty_endpoint: false })
}

/// Left-to-right open crossing of `rect`.
pub fn has_h_crossing(config: &SpinConfig, rect: &Rect) -> Result<bool> {
    connects(config, rect, &rect.left_column(), &rect.right_column(), Connectivity::NearestNeighbor)
        .map(|c| c.connected)
}

/// Bottom-to-top open crossing of `rect`.
pub fn has_v_crossing(config: &SpinConfig, rect: &Rect) -> Result<bool> {
    connects(config, rect, &rect.bottom_row(), &rect.top_row(), Connectivity::NearestNeighbor)
        .map(|c| c.connected)
}

/// Crossing between the two short sides (left-right when the rectangle is
/// at least as wide as it is tall).
pub fn has_long_crossing(config: &SpinConfig, rect: &Rect) -> Result<bool> {
    if rect.width() >= rect.height() {
        has_h_crossing(config, rect)
    } else {
        has_v_crossing(config, rect)
    }
}

/// Whether an open circuit in `[-n, n]^2` surrounds `[-m, m]^2`.
///
/// Computed on the dual side: there is no such circuit exactly when closed
/// sites of the annulus form a star-connected path from the ring just
/// outside the inner box to the outer boundary.
pub fn has_circuit(config: &SpinConfig, m: u32, n: u32) -> Result<bool> {
    if m >= n {
        return Err(Error::Geometry(format!("circuit needs inner < outer, got {m} >= {n}")));
    }
    let outer = Rect::centered_box(n);
    if !config.region().contains_rect(&outer) {
        return Err(Error::Geometry(format!(
            "annulus {outer} is not inside the configuration region {}",
            config.region()
        )));
    }
    let closed_in_annulus = |s: Site| outer.contains(s) && s.linf_norm() > m && config.get(s) == Some(false);
    let side = outer.width();
    let index = |s: Site| outer.index_of(s).unwrap();
    let (inner_node, outer_node) = (side * side, side * side + 1);
    let mut uf = UnionFind::<usize>::new(side * side + 2);
    for s in outer.sites() {
        if !closed_in_annulus(s) {
            continue;
        }
        let i = index(s);
        if s.linf_norm() == m + 1 {
            uf.union(i, inner_node);
        }
        if s.linf_norm() == n {
            uf.union(i, outer_node);
        }
        for &(dx, dy) in Connectivity::Star.offsets() {
            let t = s.offset(dx, dy);
            if closed_in_annulus(t) {
                uf.union(i, index(t));
            }
        }
    }
    Ok(!uf.equiv(inner_node, outer_node))
}

/// Outcome of checking the rectangle-concatenation implication on one
/// configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WitnessOutcome {
    /// Every small rectangle is crossed in its long direction.
    pub all_small_crossed: bool,
    /// The big rectangle is crossed left to right.
    pub big_crossed: bool,
}

impl WitnessOutcome {
    pub fn implication_holds(&self) -> bool {
        !self.all_small_crossed || self.big_crossed
    }
}

/// The small rectangles and the big rectangle of one renormalization step
/// at scale `l` (next scale `factor * l`), anchored at `(1, 1)`.
pub fn concatenation_rectangles(l: u32, factor: u32) -> Result<(Vec<Rect>, Rect)> {
    if l == 0 {
        return Err(Error::InvalidParameter("scale must be positive".into()));
    }
    let l = l as i32;
    let (horizontal, vertical_x, depth) = match factor {
        3 => (0..4, 1..4, 2),
        4 => (0..8, 1..7, 3),
        _ => return Err(Error::InvalidParameter(format!("factor must be 3 or 4, got {factor}"))),
    };
    let f = factor as i32;
    let mut rects = Vec::new();
    for x in horizontal {
        rects.push(Rect::new(2 * x * l + 1, (2 * x + f) * l, 1, l)?);
    }
    for x in vertical_x {
        rects.push(Rect::new(2 * x * l + 1, (2 * x + 1) * l, -depth * l + 1, l)?);
    }
    let big = Rect::new(1, f * f * l, 1, f * l)?;
    Ok((rects, big))
}

/// Smallest rectangle containing all rectangles of one step.
pub fn concatenation_cover(l: u32, factor: u32) -> Result<Rect> {
    let (small, big) = concatenation_rectangles(l, factor)?;
    Ok(small.iter().fold(big, |acc, r| {
        Rect::new(acc.x0.min(r.x0), acc.x1.max(r.x1), acc.y0.min(r.y0), acc.y1.max(r.y1)).unwrap()
    }))
}

/// Evaluates both sides of the implication "every small rectangle crossed
/// in its long direction implies the big rectangle is crossed".
pub fn concatenation_witness(config: &SpinConfig, l: u32, factor: u32) -> Result<WitnessOutcome> {
    let (small, big) = concatenation_rectangles(l, factor)?;
    let cover = concatenation_cover(l, factor)?;
    if !config.region().contains_rect(&cover) {
        return Err(Error::Geometry(format!(
            "configuration region {} does not cover {cover}",
            config.region()
        )));
    }
    let mut all_small_crossed = true;
    for r in &small {
        if !has_long_crossing(config, r)? {
            all_small_crossed = false;
            break;
        }
    }
    Ok(WitnessOutcome { all_small_crossed, big_crossed: has_h_crossing(config, &big)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sq(n: u32) -> Rect {
        Rect::with_size(n, n).unwrap()
    }

    fn from_rows(rows: &[&str]) -> SpinConfig {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        let r = Rect::with_size(w, h).unwrap();
        // rows listed top first
        SpinConfig::from_fn(r, |s| rows[(h as i32 - 1 - s.y) as usize].as_bytes()[s.x as usize] == b'1')
    }

    /// Depth-first search over simple open paths.
    fn brute_connects(c: &SpinConfig, a: &[Site], b: &[Site]) -> bool {
        fn dfs(c: &SpinConfig, s: Site, b: &[Site], path: &mut Vec<Site>) -> bool {
            if b.contains(&s) {
                return true;
            }
            for n in s.lattice_neighbors() {
                if c.get(n) == Some(true) && !path.contains(&n) {
                    path.push(n);
                    if dfs(c, n, b, path) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }
        a.iter().any(|&s| c.get(s) == Some(true) && dfs(c, s, b, &mut vec![s]))
    }

    #[test]
    fn labeling_examples() {
        let all = SpinConfig::ones(sq(5));
        let l = label_clusters(&all, Connectivity::NearestNeighbor);
        assert_eq!((l.cluster_count(), l.largest()), (1, 25));
        assert_eq!(label_clusters(&SpinConfig::zeros(sq(5)), Connectivity::NearestNeighbor).cluster_count(), 0);
        let diag = from_rows(&["01", "10"]);
        assert_eq!(label_clusters(&diag, Connectivity::NearestNeighbor).cluster_count(), 2);
        assert_eq!(label_clusters(&diag, Connectivity::Star).cluster_count(), 1);
        assert_eq!(largest_cluster_size(&SpinConfig::zeros(sq(4))), 0);
        let single = from_rows(&["000", "010", "000"]);
        assert_eq!(largest_cluster_size(&single), 1);
    }

    #[test]
    fn labels_are_canonical() {
        let c = from_rows(&["1001", "0001", "1100"]);
        let l = label_clusters(&c, Connectivity::NearestNeighbor);
        assert_eq!(l.label(Site::new(0, 0)), Some(0));
        assert_eq!(l.label(Site::new(1, 0)), Some(0));
        assert_eq!(l.label(Site::new(3, 1)), Some(1));
        assert_eq!(l.label(Site::new(0, 2)), Some(2));
        assert_eq!(l.label(Site::new(2, 0)), None);
        assert_eq!(l.sizes(), &[2, 2, 1]);
    }

    #[test]
    fn crossing_examples() {
        let r = sq(6);
        assert!(has_h_crossing(&SpinConfig::ones(r), &r).unwrap());
        let wall = SpinConfig::from_fn(r, |s| s.x != 3);
        assert!(!has_h_crossing(&wall, &r).unwrap());
        let row = SpinConfig::from_fn(r, |s| s.y == 2);
        assert!(has_h_crossing(&row, &r).unwrap());
        assert!(!has_v_crossing(&row, &r).unwrap());
        let c = SpinConfig::ones(r);
        assert!(connects(&c, &r, &[Site::new(1, 1)], &[Site::new(1, 1)], Connectivity::NearestNeighbor)
            .unwrap()
            .connected);
        let empty = connects(&c, &r, &[], &[Site::new(0, 0)], Connectivity::NearestNeighbor).unwrap();
        assert!(!empty.connected && empty.empty_endpoint);
        assert!(connects(&c, &r, &[Site::new(9, 9)], &[Site::new(0, 0)], Connectivity::NearestNeighbor).is_err());
        assert!(!has_h_crossing(&SpinConfig::zeros(r), &r).unwrap());
    }

    #[test]
    fn circuit_examples() {
        let r = Rect::centered_box(4);
        assert!(has_circuit(&SpinConfig::ones(r), 2, 4).unwrap());
        assert!(!has_circuit(&SpinConfig::zeros(r), 2, 4).unwrap());
        // a single ring at distance 3
        let ring = SpinConfig::from_fn(r, |s| s.linf_norm() == 3);
        assert!(has_circuit(&ring, 2, 4).unwrap());
        // broken at one site: no circuit
        let broken = SpinConfig::from_fn(r, |s| s.linf_norm() == 3 && s != Site::new(3, 0));
        assert!(!has_circuit(&broken, 2, 4).unwrap());
        // a diagonal-only ring is not a nearest-neighbour circuit
        let diamond = SpinConfig::from_fn(r, |s| s.x.abs() + s.y.abs() == 3);
        assert!(!has_circuit(&diamond, 0, 3).unwrap());
        assert!(has_circuit(&ring, 4, 2).is_err());
        assert!(has_circuit(&ring, 2, 5).is_err());
    }

    #[test]
    fn witness_rectangles() {
        let (small, big) = concatenation_rectangles(2, 3).unwrap();
        assert_eq!(small.len(), 7);
        assert_eq!(big, Rect::new(1, 18, 1, 6).unwrap());
        assert_eq!(concatenation_cover(2, 3).unwrap(), Rect::new(1, 18, -3, 6).unwrap());
        let (small, big) = concatenation_rectangles(2, 4).unwrap();
        assert_eq!(small.len(), 14);
        assert_eq!(big, Rect::new(1, 32, 1, 8).unwrap());
        assert_eq!(concatenation_cover(2, 4).unwrap(), Rect::new(1, 36, -5, 8).unwrap());
        assert!(concatenation_rectangles(2, 5).is_err());

        let cover = concatenation_cover(3, 3).unwrap();
        let out = concatenation_witness(&SpinConfig::ones(cover), 3, 3).unwrap();
        assert!(out.all_small_crossed && out.big_crossed);
        let out = concatenation_witness(&SpinConfig::zeros(cover), 3, 3).unwrap();
        assert!(!out.all_small_crossed && out.implication_holds());
    }

    fn random_config(r: Rect, bits: u64, seed: u64) -> SpinConfig {
        let mut state = seed;
        SpinConfig::from_fn(r, |_| {
            state = crate::clocks::mix64(state.wrapping_add(bits));
            state % 100 < 55
        })
    }

    proptest! {
        #[test]
        fn connects_matches_path_enumeration(seed in any::<u64>(), ax in 0i32..6, bx in 0i32..6) {
            let r = sq(6);
            let c = random_config(r, 0x9e37, seed);
            let a = [Site::new(ax, 0), Site::new(0, ax)];
            let b = [Site::new(bx, 5)];
            let fast = connects(&c, &r, &a, &b, Connectivity::NearestNeighbor).unwrap().connected;
            prop_assert_eq!(fast, brute_connects(&c, &a, &b));
            let rev = connects(&c, &r, &b, &a, Connectivity::NearestNeighbor).unwrap().connected;
            prop_assert_eq!(fast, rev);
            prop_assert_eq!(has_h_crossing(&c, &r).unwrap(), brute_connects(&c, &r.left_column(), &r.right_column()));
        }

        #[test]
        fn crossing_is_symmetric_under_reflection_and_rotation(seed in any::<u64>()) {
            let r = Rect::with_size(7, 5).unwrap();
            let c = random_config(r, 7, seed);
            let mirrored = SpinConfig::from_fn(r, |s| c.get(Site::new(6 - s.x, s.y)).unwrap());
            prop_assert_eq!(has_h_crossing(&c, &r).unwrap(), has_h_crossing(&mirrored, &r).unwrap());
            let rr = Rect::with_size(5, 7).unwrap();
            let rotated = SpinConfig::from_fn(rr, |s| c.get(Site::new(s.y, 4 - s.x)).unwrap());
            prop_assert_eq!(has_h_crossing(&c, &r).unwrap(), has_v_crossing(&rotated, &rr).unwrap());
        }

        #[test]
        fn events_are_increasing(seed in any::<u64>(), extra in any::<u64>()) {
            let r = Rect::centered_box(5);
            let c = random_config(r, 3, seed);
            let more = SpinConfig::from_fn(r, |s| c.get(s).unwrap() || (extra >> (r.index_of(s).unwrap() % 64)) & 1 == 1);
            prop_assert!(!has_circuit(&c, 2, 5).unwrap() || has_circuit(&more, 2, 5).unwrap());
            prop_assert!(!has_h_crossing(&c, &r).unwrap() || has_h_crossing(&more, &r).unwrap());
            prop_assert!(largest_cluster_size(&c) <= largest_cluster_size(&more));
        }

        #[test]
        fn witness_never_falsified(seed in any::<u64>(), l in 1u32..4, factor in 3u32..5) {
            let cover = concatenation_cover(l, factor).unwrap();
            let c = random_config(cover, 11, seed);
            prop_assert!(concatenation_witness(&c, l, factor).unwrap().implication_holds());
        }
    }
}
