//! Reproducible randomness for the graphical construction.
//!
//! Every random quantity is a pure function of
//! `(master_seed, replica_id, purpose, site, index)`, hashed through a
//! SplitMix64-style counter generator. Any site's `k`-th ring can be produced
//! without materializing the rest of the field, which is what the lazy
//! backward evaluator needs.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Gamma};

use crate::grid::{Parity, Rect, Site};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

#[inline]
fn site_bits(s: Site) -> u64 {
    ((s.x as u32 as u64) << 32) | s.y as u32 as u64
}

/// `index`-th 64-bit draw of the stream keyed by `site_key`.
#[inline]
pub(crate) fn draw(site_key: u64, index: u64) -> u64 {
    mix64(site_key.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// Uniform on `[0, 1)` with 53 bits.
#[inline]
pub(crate) fn unit_closed_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on `(0, 1]`, so `u <= 0` never holds and `u <= 1` always does.
#[inline]
pub(crate) fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unit-rate exponential by inverse CDF, `-ln(1 - u)`.
#[inline]
pub(crate) fn exponential(bits: u64) -> f64 {
    -(1.0 - unit_closed_open(bits)).ln()
}

/// Identifies one independent family of streams.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replica_id: u64,
    pub purpose: String,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replica_id: u64, purpose: &str) -> Self {
        SeedSpec { master_seed, replica_id, purpose: purpose.to_string() }
    }

    pub fn with_purpose(&self, purpose: &str) -> SeedSpec {
        SeedSpec::new(self.master_seed, self.replica_id, purpose)
    }

    pub fn key(&self) -> u64 {
        let h = mix64(self.master_seed ^ 0x6A09_E667_F3BC_C908);
        let h = mix64(h ^ self.replica_id.wrapping_mul(GOLDEN));
        mix64(h ^ fnv1a(&self.purpose))
    }

    pub fn site_key(&self, s: Site) -> u64 {
        site_key(self.key(), s)
    }
}

impl fmt::Display for SeedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "master={} replica={} purpose={}", self.master_seed, self.replica_id, self.purpose)
    }
}

#[inline]
pub(crate) fn site_key(stream_key: u64, s: Site) -> u64 {
    mix64(stream_key ^ mix64(site_bits(s) ^ GOLDEN))
}

/// `U_x` for a single site; the same value `uniform_field` stores for it.
#[inline]
pub fn uniform_at(stream_key: u64, s: Site) -> f64 {
    unit_open_closed(draw(site_key(stream_key, s), 0))
}

/// i.i.d. uniforms over a rectangle, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformField {
    region: Rect,
    values: Vec<f64>,
}

impl UniformField {
    pub fn region(&self) -> &Rect {
        &self.region
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: Site) -> Option<f64> {
        self.region.index_of(s).map(|i| self.values[i])
    }
}

/// Values depend only on `(seed, site)`, never on the region, so nested
/// windows see the same field.
pub fn uniform_field(seed: &SeedSpec, region: &Rect) -> UniformField {
    let key = seed.key();
    UniformField { region: *region, values: region.sites().map(|s| uniform_at(key, s)).collect() }
}

/// A `rand` generator over one site's counter stream, used where a
/// distribution sampler needs an `RngCore`.
pub(crate) struct SiteRng {
    key: u64,
    counter: u64,
}

impl SiteRng {
    pub(crate) fn new(key: u64) -> Self {
        SiteRng { key, counter: 0 }
    }
}

impl RngCore for SiteRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = draw(self.key, self.counter);
        self.counter += 1;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// The four Gamma(1/4, 1) pieces of a site, in east/west/north/south order.
pub fn split_pieces(piece_key: u64, s: Site) -> [f64; 4] {
    let gamma = Gamma::new(0.25, 1.0).expect("valid gamma parameters");
    let mut rng = SiteRng::new(site_key(piece_key, s));
    [(); 4].map(|_| gamma.sample(&mut rng))
}

/// Sum of the pieces, accumulated in ascending order so the result does not
/// depend on how the pieces are attributed.
pub fn piece_sum(pieces: &[f64; 4]) -> f64 {
    let mut sorted = *pieces;
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

#[derive(Clone)]
enum ClockMode {
    Poisson,
    /// B-sites take their first ring from the sum of their Gamma pieces.
    SplitFirstRing { piece_key: u64 },
    Scripted(Arc<HashMap<Site, Vec<f64>>>),
}

/// The family of per-site unit-rate Poisson clocks.
///
/// Streams are stateless: the horizon records how far the caller intends to
/// look, and queries beyond it are served by the same partial sums, so
/// extending the horizon never changes an already generated ring.
#[derive(Clone)]
pub struct ClockStream {
    seed: SeedSpec,
    key: u64,
    horizon: f64,
    mode: ClockMode,
}

impl fmt::Debug for ClockStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match &self.mode {
            ClockMode::Poisson => "poisson",
            ClockMode::SplitFirstRing { .. } => "split-first-ring",
            ClockMode::Scripted(_) => "scripted",
        };
        f.debug_struct("ClockStream")
            .field("seed", &self.seed)
            .field("horizon", &self.horizon)
            .field("mode", &mode)
            .finish()
    }
}

impl ClockStream {
    pub fn new(seed: SeedSpec, horizon: f64) -> Self {
        let key = seed.key();
        ClockStream { seed, key, horizon: horizon.max(0.0), mode: ClockMode::Poisson }
    }

    /// Clocks whose B-site first rings are the Gamma-piece sums drawn from
    /// `seed.with_purpose("enh")`. Later rings, and all A-site rings, follow
    /// the ordinary stream.
    pub fn with_split_first_rings(seed: SeedSpec, horizon: f64) -> Self {
        let piece_key = seed.with_purpose("enh").key();
        ClockStream { mode: ClockMode::SplitFirstRing { piece_key }, ..ClockStream::new(seed, horizon) }
    }

    /// Hand-specified ring times; unlisted sites never ring.
    pub fn scripted(rings: HashMap<Site, Vec<f64>>) -> Self {
        let mut rings = rings;
        let mut horizon: f64 = 0.0;
        for times in rings.values_mut() {
            times.sort_by(f64::total_cmp);
            times.dedup();
            assert!(times.iter().all(|t| *t >= 0.0), "ring times must be non-negative");
            horizon = horizon.max(times.last().copied().unwrap_or(0.0));
        }
        let seed = SeedSpec::new(0, 0, "scripted");
        ClockStream {
            key: seed.key(),
            seed,
            horizon,
            mode: ClockMode::Scripted(Arc::new(rings)),
        }
    }

    pub fn seed(&self) -> &SeedSpec {
        &self.seed
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn extend_horizon(&mut self, t: f64) {
        self.horizon = self.horizon.max(t);
    }

    pub fn ring_iter(&self, s: Site) -> RingIter<'_> {
        RingIter { stream: self, site: s, site_key: site_key(self.key, s), index: 0, time: 0.0 }
    }

    /// Ring times in `[0, t]`, ascending.
    pub fn rings(&self, s: Site, t: f64) -> Vec<f64> {
        self.ring_iter(s).take_while(|&r| r <= t).collect()
    }

    /// Largest ring time strictly below `t`.
    pub fn last_ring_before(&self, s: Site, t: f64) -> Option<f64> {
        self.ring_iter(s).take_while(|&r| r < t).last()
    }

    pub fn first_ring(&self, s: Site) -> f64 {
        self.ring_iter(s).next().unwrap_or(f64::INFINITY)
    }
}

/// Successive ring times of one site.
#[derive(Clone)]
pub struct RingIter<'a> {
    stream: &'a ClockStream,
    site: Site,
    site_key: u64,
    index: u64,
    time: f64,
}

impl Iterator for RingIter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let k = self.index;
        let next = match &self.stream.mode {
            ClockMode::Poisson => self.time + exponential(draw(self.site_key, k)),
            ClockMode::SplitFirstRing { piece_key } => {
                if k == 0 && self.site.parity() == Parity::B {
                    piece_sum(&split_pieces(*piece_key, self.site))
                } else {
                    self.time + exponential(draw(self.site_key, k))
                }
            }
            ClockMode::Scripted(map) => *map.get(&self.site)?.get(k as usize)?,
        };
        self.index += 1;
        self.time = next;
        Some(next)
    }
}
