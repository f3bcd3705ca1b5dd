//! Checkerboard enhancement: first rings of odd sites split into four
//! pieces, activation of even sites, and a pathwise check that open chains
//! joined by activated sites survive until time `t`.

use std::collections::{HashSet, VecDeque};

use crate::clocks::{piece_sum, split_pieces, ClockStream, SeedSpec};
use crate::dynamics::evolve_forward;
use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, Parity, Rect, Site, SpinConfig, DIRECTIONS};
use crate::percolation::{label_clusters, Connectivity};

/// First rings on a region plus the four pieces of every B-site on the
/// region grown by one, so that every A-site in the region sees all four of
/// its pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementField {
    region: Rect,
    outer: Rect,
    first_ring: Vec<f64>,
    // indexed by `outer`; zeros on A-sites
    pieces: Vec<[f64; 4]>,
}

impl EnhancementField {
    /// Builds a field from explicit values. Fails unless every B-site's
    /// first ring is exactly the sum of its pieces.
    pub fn from_parts(
        region: Rect,
        first_ring: impl Fn(Site) -> f64,
        pieces: impl Fn(Site) -> [f64; 4],
    ) -> Result<Self> {
        let outer = region.expand(1);
        let mut field = EnhancementField {
            region,
            outer,
            first_ring: region.sites().map(&first_ring).collect(),
            pieces: outer
                .sites()
                .map(|s| if s.parity() == Parity::B { pieces(s) } else { [0.0; 4] })
                .collect(),
        };
        for s in region.sites().filter(|s| s.parity() == Parity::B) {
            let i = region.index_of(s).unwrap();
            let sum = piece_sum(&field.pieces[outer.index_of(s).unwrap()]);
            if field.first_ring[i] != sum {
                return Err(Error::InvalidParameter(format!(
                    "first ring of ({}, {}) is not the sum of its pieces",
                    s.x, s.y
                )));
            }
            field.first_ring[i] = sum;
        }
        Ok(field)
    }

    pub fn region(&self) -> &Rect {
        &self.region
    }

    pub fn first_ring(&self, s: Site) -> Option<f64> {
        self.region.index_of(s).map(|i| self.first_ring[i])
    }

    /// Pieces of a B-site in east/west/north/south order.
    pub fn pieces_of(&self, s: Site) -> Option<[f64; 4]> {
        (s.parity() == Parity::B).then(|| self.outer.index_of(s).map(|i| self.pieces[i])).flatten()
    }

    /// The four pieces associated to an A-site, one from each B-neighbour:
    /// the neighbour's piece pointing back towards `y`.
    pub fn pieces_towards(&self, y: Site) -> Option<[f64; 4]> {
        if y.parity() != Parity::A || !self.region.contains(y) {
            return None;
        }
        let mut out = [0.0; 4];
        for (slot, &(dx, dy)) in out.iter_mut().zip(DIRECTIONS.iter()) {
            let x = y.offset(dx, dy);
            let back = DIRECTIONS.iter().position(|&d| d == (-dx, -dy)).unwrap();
            *slot = self.pieces_of(x)?[back];
        }
        Some(out)
    }
}

/// Pieces from `seed.with_purpose("enh")`, A-site first rings from the
/// ordinary clock stream of `seed`. Agrees with
/// `ClockStream::with_split_first_rings(seed, _)`.
pub fn sample_enhancement_field(region: &Rect, seed: &SeedSpec) -> EnhancementField {
    let piece_key = seed.with_purpose("enh").key();
    let clocks = ClockStream::new(seed.clone(), 0.0);
    let pieces = |s: Site| split_pieces(piece_key, s);
    EnhancementField::from_parts(
        *region,
        |s| match s.parity() {
            Parity::A => clocks.first_ring(s),
            Parity::B => piece_sum(&pieces(s)),
        },
        pieces,
    )
    .expect("pieces sum to the first ring by construction")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationMask {
    region: Rect,
    activated: Vec<bool>,
}

impl ActivationMask {
    pub fn region(&self) -> &Rect {
        &self.region
    }

    pub fn is_activated(&self, s: Site) -> bool {
        self.region.index_of(s).is_some_and(|i| self.activated[i])
    }

    pub fn count(&self) -> usize {
        self.activated.iter().filter(|&&a| a).count()
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.region.sites().filter(|&s| self.is_activated(s))
    }
}

/// An A-site is activated when it rings before `t` and all four of its
/// pieces exceed `t`.
pub fn activation_mask(field: &EnhancementField, t: f64) -> Result<ActivationMask> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be non-negative, got {t}")));
    }
    let activated = field
        .region
        .sites()
        .map(|y| match field.pieces_towards(y) {
            Some(pieces) => field.first_ring(y).unwrap() < t && pieces.iter().all(|&q| q > t),
            None => false,
        })
        .collect();
    Ok(ActivationMask { region: field.region, activated })
}

fn open_neighbors(config: &SpinConfig, s: Site) -> usize {
    s.lattice_neighbors().iter().filter(|&&n| config.get(n) == Some(true)).count()
}

/// Single pass over the original configuration: an activated site with at
/// least three open neighbours becomes open.
pub fn apply_enhancement(config: &SpinConfig, mask: &ActivationMask) -> Result<SpinConfig> {
    if config.region() != mask.region() {
        return Err(Error::RegionMismatch { expected: *mask.region(), found: *config.region() });
    }
    let mut out = config.clone();
    for y in mask.sites() {
        if open_neighbors(config, y) >= 3 {
            out.set(y, true)?;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ChainReport {
    pub chains_checked: usize,
    pub connectors_checked: usize,
    pub violations: usize,
}

/// Pathwise check of the survival argument.
///
/// Connectors are activated sites with at least three initially open
/// neighbours; all their neighbours first ring after `t`. Anchors are
/// initially open sites whose first ring is after `t`. In every open
/// cluster of the enhanced configuration, a breadth-first tree is grown
/// from the smallest anchor and the tree path to each other anchor is cut
/// at connectors. Each piece is a chain whose end sites never ring before
/// `t` and whose inner sites have two open chain neighbours, so every chain
/// site and every connector must be open at time `t`.
pub fn chain_stability_check(
    init: &SpinConfig,
    clocks: &ClockStream,
    field: &EnhancementField,
    t: f64,
    policy: BoundaryPolicy,
) -> Result<ChainReport> {
    let region = *init.region();
    if field.region() != &region {
        return Err(Error::RegionMismatch { expected: region, found: *field.region() });
    }
    for s in field.outer.sites() {
        let expected = if region.contains(s) {
            field.first_ring(s).unwrap()
        } else if s.parity() == Parity::B {
            piece_sum(&field.pieces_of(s).unwrap())
        } else {
            continue;
        };
        if clocks.first_ring(s) != expected {
            return Err(Error::SeedMismatch { site: s });
        }
    }
    let mask = activation_mask(field, t)?;
    let connectors: HashSet<Site> = mask.sites().filter(|&y| open_neighbors(init, y) >= 3).collect();
    let enhanced = apply_enhancement(init, &mask)?;
    let last = evolve_forward(init, clocks, t, policy)?;
    let anchor = |s: Site| init.get(s) == Some(true) && field.first_ring(s).unwrap() > t;

    let labels = label_clusters(&enhanced, Connectivity::NearestNeighbor);
    let mut roots: Vec<Option<Site>> = vec![None; labels.cluster_count()];
    for s in region.sites().filter(|&s| anchor(s)) {
        let l = labels.label(s).expect("anchors are open") as usize;
        roots[l].get_or_insert(s);
    }

    let mut report = ChainReport::default();
    let mut parent: Vec<Option<usize>> = vec![None; region.area()];
    for root in roots.into_iter().flatten() {
        let r = region.index_of(root).unwrap();
        parent[r] = Some(r);
        let mut queue = VecDeque::from([root]);
        let mut anchors = Vec::new();
        while let Some(s) = queue.pop_front() {
            if s != root && anchor(s) {
                anchors.push(s);
            }
            let i = region.index_of(s).unwrap();
            for n in s.lattice_neighbors() {
                if let Some(j) = region.index_of(n) {
                    if enhanced.get_index(j) && parent[j].is_none() {
                        parent[j] = Some(i);
                        queue.push_back(n);
                    }
                }
            }
        }
        for a in anchors {
            let mut path = vec![region.index_of(a).unwrap()];
            while let Some(p) = parent[*path.last().unwrap()].filter(|&p| p != *path.last().unwrap()) {
                path.push(p);
            }
            let mut chain_open = false;
            for &i in &path {
                let s = region.site_at(i);
                if connectors.contains(&s) {
                    report.connectors_checked += 1;
                    chain_open = false;
                } else if !chain_open {
                    report.chains_checked += 1;
                    chain_open = true;
                }
                if !last.get_index(i) {
                    report.violations += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Runs the check on one random instance: initial field from `(master,
/// replica, "init")`, split-first-ring clocks from `(master, replica, "clock")`.
pub fn enhancement_instance(
    region: &Rect,
    p: f64,
    t: f64,
    policy: BoundaryPolicy,
    master_seed: u64,
    replica: u64,
) -> Result<ChainReport> {
    let init = crate::dynamics::InitField::new(&SeedSpec::new(master_seed, replica, "init"), p)?.config(region);
    let clock_seed = SeedSpec::new(master_seed, replica, "clock");
    let clocks = ClockStream::with_split_first_rings(clock_seed.clone(), t);
    let field = sample_enhancement_field(region, &clock_seed);
    chain_stability_check(&init, &clocks, &field, t, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn sq(n: u32) -> Rect {
        Rect::with_size(n, n).unwrap()
    }

    #[test]
    fn pieces_sum_to_first_rings() {
        let r = Rect::new(-5, 5, -5, 5).unwrap();
        for seed in 0..5 {
            let spec = SeedSpec::new(seed, 0, "clock");
            let f = sample_enhancement_field(&r, &spec);
            let clocks = ClockStream::with_split_first_rings(spec, 1.0);
            for s in r.sites() {
                assert_eq!(f.first_ring(s).unwrap(), clocks.first_ring(s));
                if let Some(pieces) = f.pieces_of(s) {
                    assert_eq!(piece_sum(&pieces), f.first_ring(s).unwrap());
                    let mut rev = pieces;
                    rev.reverse();
                    assert_eq!(piece_sum(&rev), piece_sum(&pieces));
                }
            }
        }
    }

    #[test]
    fn attribution_points_back() {
        let r = sq(6);
        let f = sample_enhancement_field(&r, &SeedSpec::new(1, 0, "clock"));
        let y = Site::new(2, 2);
        let got = f.pieces_towards(y).unwrap();
        // east neighbour contributes its west piece, and so on
        assert_eq!(got[0], f.pieces_of(Site::new(3, 2)).unwrap()[1]);
        assert_eq!(got[1], f.pieces_of(Site::new(1, 2)).unwrap()[0]);
        assert_eq!(got[2], f.pieces_of(Site::new(2, 3)).unwrap()[3]);
        assert_eq!(got[3], f.pieces_of(Site::new(2, 1)).unwrap()[2]);
        assert!(f.pieces_towards(Site::new(2, 3)).is_none());
    }

    fn handmade(t_y: f64, piece: f64) -> EnhancementField {
        EnhancementField::from_parts(
            sq(3),
            |s| if s.parity() == Parity::A { t_y } else { 4.0 * piece },
            |_| [piece; 4],
        )
        .unwrap()
    }

    #[test]
    fn activation_rule() {
        let f = handmade(0.1, 5.0);
        let m = activation_mask(&f, 1.0).unwrap();
        assert!(m.is_activated(Site::new(1, 1)));
        assert!(!m.is_activated(Site::new(0, 1)));
        assert_eq!(activation_mask(&f, 0.0).unwrap().count(), 0);
        // a piece below t blocks activation
        let g = handmade(0.1, 0.5);
        assert!(!activation_mask(&g, 1.0).unwrap().is_activated(Site::new(1, 1)));
        // ringing after t blocks activation
        let h = handmade(2.0, 5.0);
        assert!(!activation_mask(&h, 1.0).unwrap().is_activated(Site::new(1, 1)));
        assert!(EnhancementField::from_parts(sq(3), |_| 1.0, |_| [0.1; 4]).is_err());
    }

    #[test]
    fn enhancement_rule() {
        let f = handmade(0.1, 5.0);
        let m = activation_mask(&f, 1.0).unwrap();
        let centre = Site::new(1, 1);
        let with = |ones: &[Site]| {
            let mut c = SpinConfig::zeros(sq(3));
            for &s in ones {
                c.set(s, true).unwrap();
            }
            c
        };
        let three = with(&[Site::new(2, 1), Site::new(0, 1), Site::new(1, 2)]);
        assert!(apply_enhancement(&three, &m).unwrap().get(centre).unwrap());
        let two = with(&[Site::new(2, 1), Site::new(0, 1)]);
        assert_eq!(apply_enhancement(&two, &m).unwrap(), two);
        let none = activation_mask(&f, 0.0).unwrap();
        assert_eq!(apply_enhancement(&three, &none).unwrap(), three);
        // monotone in the configuration under a fixed mask
        let more = with(&[Site::new(2, 1), Site::new(0, 1), Site::new(1, 2), Site::new(0, 0)]);
        assert!(apply_enhancement(&three, &m).unwrap().le(&apply_enhancement(&more, &m).unwrap()));
    }

    /// Two open runs joined through one closed A-site with a third open
    /// neighbour below it. Only the connector rings before `t`.
    #[test]
    fn single_connector_between_two_chains() {
        let region = Rect::with_size(7, 3).unwrap();
        let connector = Site::new(3, 1);
        let mut init = SpinConfig::zeros(region);
        for x in [0, 1, 2, 4, 5, 6] {
            init.set(Site::new(x, 1), true).unwrap();
        }
        init.set(Site::new(3, 0), true).unwrap();
        let late = 5.0;
        let mut rings = HashMap::new();
        for s in region.expand(1).sites() {
            rings.insert(s, vec![if s == connector { 0.3 } else { late }]);
        }
        let clocks = ClockStream::scripted(rings);
        let field = EnhancementField::from_parts(
            region,
            |s| if s == connector { 0.3 } else { late },
            |_| [late / 4.0; 4],
        )
        .unwrap();
        let report = chain_stability_check(&init, &clocks, &field, 1.0, BoundaryPolicy::FrozenZero).unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.connectors_checked >= 1 && report.chains_checked >= 2, "{report:?}");
        let at_t = evolve_forward(&init, &clocks, 1.0, BoundaryPolicy::FrozenZero).unwrap();
        assert!(at_t.get(connector).unwrap());
    }

    #[test]
    fn no_rings_keeps_every_chain() {
        let region = sq(10);
        let init = crate::dynamics::InitField::new(&SeedSpec::new(3, 0, "init"), 0.6).unwrap().config(&region);
        let mut rings = HashMap::new();
        for s in region.expand(1).sites() {
            rings.insert(s, vec![8.0]);
        }
        let clocks = ClockStream::scripted(rings);
        let field = EnhancementField::from_parts(region, |_| 8.0, |_| [2.0; 4]).unwrap();
        let report = chain_stability_check(&init, &clocks, &field, 1.0, BoundaryPolicy::FrozenZero).unwrap();
        assert_eq!(report.violations, 0);
        assert_eq!(report.connectors_checked, 0);
        assert!(report.chains_checked > 0);
    }

    #[test]
    fn mismatched_seeds_are_rejected() {
        let region = sq(6);
        let init = SpinConfig::ones(region);
        let clocks = ClockStream::with_split_first_rings(SeedSpec::new(1, 0, "clock"), 1.0);
        let field = sample_enhancement_field(&region, &SeedSpec::new(2, 0, "clock"));
        assert!(matches!(
            chain_stability_check(&init, &clocks, &field, 1.0, BoundaryPolicy::FrozenZero),
            Err(Error::SeedMismatch { .. })
        ));
    }

    #[test]
    fn random_instances_have_no_violations() {
        for replica in 0..30 {
            let r = enhancement_instance(&sq(24), 0.58, 1.0, BoundaryPolicy::FrozenZero, 5, replica).unwrap();
            assert_eq!(r.violations, 0, "replica {replica}");
        }
    }
}
