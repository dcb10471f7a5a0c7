//! Stochastic-geometry network layout.
//!
//! eNodeBs, source users (SUs) and inactive users are dropped as homogeneous
//! Poisson point processes on a rectangle. Cells are never built as polygons:
//! a user belongs to the Voronoi cell of its nearest site, which is all the
//! relay-selection pipeline needs.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain, SimRng};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Point2D<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2D<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(&self, other: &Self) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &Self) -> T {
        self.distance_sq(other).sqrt()
    }
}

/// Axis-aligned simulation area anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Region<T> {
    pub width: T,
    pub height: T,
}

impl<T: Real> Region<T> {
    pub fn new(width: T, height: T) -> Result<Self> {
        let region = Self { width, height };
        region.validate()?;
        Ok(region)
    }

    pub fn area(&self) -> T {
        self.width * self.height
    }

    pub fn center(&self) -> Point2D<T> {
        let half = T::lit(0.5);
        Point2D::new(self.width * half, self.height * half)
    }

    pub fn contains(&self, p: &Point2D<T>) -> bool {
        p.x >= T::zero() && p.x <= self.width && p.y >= T::zero() && p.y <= self.height
    }

    fn validate(&self) -> Result<()> {
        let ok = self.width.is_finite()
            && self.height.is_finite()
            && self.width > T::zero()
            && self.height > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "region must have positive finite area, got {} x {}",
                self.width, self.height
            )))
        }
    }

    fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2D<T> {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        Point2D::new(T::lit(u) * self.width, T::lit(v) * self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Site<T> {
    pub id: usize,
    pub pos: Point2D<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InactiveUser<T> {
    pub id: usize,
    pub pos: Point2D<T>,
    pub profile_id: usize,
}

/// Draws a homogeneous PPP with `intensity` points per square meter.
pub fn sample_ppp<T: Real, R: Rng + ?Sized>(
    intensity: f64,
    region: &Region<T>,
    rng: &mut R,
) -> Result<Vec<Point2D<T>>> {
    region.validate()?;
    let count = poisson_count(intensity, region.area().as_f64(), rng)?;
    Ok((0..count).map(|_| region.uniform_point(rng)).collect())
}

fn poisson_count<R: Rng + ?Sized>(intensity: f64, area: f64, rng: &mut R) -> Result<usize> {
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(Error::Config(format!("invalid PPP intensity {intensity}")));
    }
    let mean = intensity * area;
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean)
        .map_err(|e| Error::Config(format!("poisson mean {mean}: {e}")))?;
    let draw: f64 = dist.sample(rng);
    Ok(draw as usize)
}

/// Index of the nearest site for every point. Equidistant sites resolve to the
/// lowest index.
pub fn assign_nearest<T: Real>(points: &[Point2D<T>], sites: &[Point2D<T>]) -> Result<Vec<usize>> {
    if sites.is_empty() {
        return Err(Error::EmptySites);
    }
    Ok(points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = p.distance_sq(&sites[0]);
            for (j, s) in sites.iter().enumerate().skip(1) {
                let d = p.distance_sq(s);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect())
}

/// Scenario generation parameters. Intensities are in points per square meter;
/// the optional counts replace the Poisson draw with a fixed number of
/// uniformly placed points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub width: f64,
    pub height: f64,
    /// One eNodeB at the region center instead of a PPP of eNodeBs.
    pub single_cell: bool,
    pub enb_intensity: f64,
    pub su_intensity: f64,
    pub inactive_intensity: f64,
    pub n_sus: Option<usize>,
    pub n_inactive: Option<usize>,
    /// Relative weights of the behavior profiles assigned to inactive users.
    pub profile_weights: Vec<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            single_cell: true,
            enb_intensity: 2e-6,
            su_intensity: 3e-6,
            inactive_intensity: 1.5e-4,
            n_sus: None,
            n_inactive: None,
            profile_weights: vec![1.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Scenario<T> {
    pub region: Region<T>,
    pub enbs: Vec<Site<T>>,
    pub sus: Vec<Site<T>>,
    pub inactive_users: Vec<InactiveUser<T>>,
    /// SU or inactive-user id to eNodeB id.
    pub enb_assignment: BTreeMap<usize, usize>,
    /// Inactive-user id to SU id.
    pub vaa_assignment: BTreeMap<usize, usize>,
    pub rng_seed: u64,
}

impl<T: Real> Scenario<T> {
    pub fn su(&self, su_id: usize) -> Result<&Site<T>> {
        self.sus
            .iter()
            .find(|s| s.id == su_id)
            .ok_or(Error::UnknownSourceUser(su_id))
    }

    pub fn enb(&self, enb_id: usize) -> Option<&Site<T>> {
        self.enbs.iter().find(|s| s.id == enb_id)
    }

    pub fn inactive_user(&self, id: usize) -> Option<&InactiveUser<T>> {
        self.inactive_users.iter().find(|u| u.id == id)
    }

    /// eNodeB serving the given SU.
    pub fn serving_enb(&self, su_id: usize) -> Result<&Site<T>> {
        self.su(su_id)?;
        let enb_id = self.enb_assignment[&su_id];
        self.enb(enb_id)
            .ok_or_else(|| Error::Invariant(format!("SU {su_id} mapped to missing eNB {enb_id}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Builds a scenario. All geometry comes from `seed`, so the same
/// `(config, seed)` pair always serializes to the same document.
pub fn build_scenario<T: Real>(config: &ScenarioConfig, seed: u64) -> Result<Scenario<T>> {
    let region = Region::new(T::lit(config.width), T::lit(config.height))?;
    let area = region.area().as_f64();
    let mut rng = substream(seed, Domain::Scenario, 0);

    let enb_points = if config.single_cell {
        vec![region.center()]
    } else {
        sample_ppp(config.enb_intensity, &region, &mut rng)?
    };
    if enb_points.is_empty() {
        return Err(Error::EmptySites);
    }

    let n_sus = match config.n_sus {
        Some(n) => n,
        None => poisson_count(config.su_intensity, area, &mut rng)?,
    };
    let n_inactive = match config.n_inactive {
        Some(n) => n,
        None => poisson_count(config.inactive_intensity, area, &mut rng)?,
    };
    let total = n_sus + n_inactive;
    let users: Vec<Point2D<T>> = (0..total).map(|_| region.uniform_point(&mut rng)).collect();
    let mut su_idx = index::sample(&mut rng, total, n_sus).into_vec();
    su_idx.sort_unstable();

    let mut is_su = vec![false; total];
    for &i in &su_idx {
        is_su[i] = true;
    }
    let sus: Vec<Site<T>> = su_idx
        .iter()
        .map(|&i| Site { id: i, pos: users[i] })
        .collect();

    let profile_ids = draw_profiles(&config.profile_weights, n_inactive, seed)?;
    let inactive_users: Vec<InactiveUser<T>> = (0..total)
        .filter(|&i| !is_su[i])
        .zip(profile_ids)
        .map(|(i, profile_id)| InactiveUser {
            id: i,
            pos: users[i],
            profile_id,
        })
        .collect();

    let enbs: Vec<Site<T>> = enb_points
        .into_iter()
        .enumerate()
        .map(|(id, pos)| Site { id, pos })
        .collect();
    let enb_pos: Vec<_> = enbs.iter().map(|s| s.pos).collect();
    let enb_of = assign_nearest(&users, &enb_pos)?;
    let enb_assignment = (0..total).map(|i| (i, enbs[enb_of[i]].id)).collect();

    let vaa_assignment = if inactive_users.is_empty() {
        BTreeMap::new()
    } else {
        let su_pos: Vec<_> = sus.iter().map(|s| s.pos).collect();
        let user_pos: Vec<_> = inactive_users.iter().map(|u| u.pos).collect();
        let nearest = assign_nearest(&user_pos, &su_pos)?;
        inactive_users
            .iter()
            .zip(nearest)
            .map(|(u, j)| (u.id, sus[j].id))
            .collect()
    };

    Ok(Scenario {
        region,
        enbs,
        sus,
        inactive_users,
        enb_assignment,
        vaa_assignment,
        rng_seed: seed,
    })
}

fn draw_profiles(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Config("profile weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("profile weights sum to zero".into()));
    }
    let mut rng: SimRng = substream(seed, Domain::Profiles, 0);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return k;
                }
            }
            weights.len() - 1
        })
        .collect())
}

/// Inactive users inside the VAA cell of `su_id`, ascending by id.
pub fn filter_vaa_members<T: Real>(scenario: &Scenario<T>, su_id: usize) -> Result<Vec<usize>> {
    scenario.su(su_id)?;
    // BTreeMap iteration is already ascending by user id.
    Ok(scenario
        .vaa_assignment
        .iter()
        .filter(|(_, &su)| su == su_id)
        .map(|(&user, _)| user)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn brute_nearest(p: &Point2D<f64>, sites: &[Point2D<f64>]) -> usize {
        let d: Vec<f64> = sites.iter().map(|s| (p.x - s.x).hypot(p.y - s.y)).collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        d.iter().position(|&v| v == min).unwrap()
    }

    #[test]
    fn zero_intensity_gives_empty_process() {
        let region = Region::new(100.0, 100.0).unwrap();
        let pts: Vec<Point2D<f64>> = sample_ppp(0.0, &region, &mut seeded(1)).unwrap();
        assert!(pts.is_empty());
    }

    #[test]
    fn ppp_rejects_bad_inputs() {
        let region = Region::<f64> { width: 0.0, height: 10.0 };
        assert!(matches!(sample_ppp(1.0, &region, &mut seeded(1)), Err(Error::Config(_))));
        let region = Region::new(10.0, 10.0).unwrap();
        assert!(sample_ppp::<f64, _>(f64::NAN, &region, &mut seeded(1)).is_err());
        assert!(sample_ppp::<f64, _>(-1.0, &region, &mut seeded(1)).is_err());
    }

    #[test]
    fn ppp_is_seeded_and_inside_region() {
        let region = Region::new(1000.0, 500.0).unwrap();
        let a: Vec<Point2D<f64>> = sample_ppp(1e-4, &region, &mut seeded(9)).unwrap();
        let b: Vec<Point2D<f64>> = sample_ppp(1e-4, &region, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| region.contains(p)));
    }

    #[test]
    fn ppp_count_moment_matches_poisson() {
        // intensity 1e-4 on 1e6 m^2: mean 100, sigma 10. The 10_000-run sample
        // mean has standard error 0.1, so 3 sigma is 0.3.
        let region = Region::new(1000.0_f64, 1000.0).unwrap();
        let mut rng = seeded(2024);
        let runs = 10_000;
        let total: usize = (0..runs)
            .map(|_| sample_ppp(1e-4, &region, &mut rng).unwrap().len())
            .sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 100.0).abs() <= 3.0 * 10.0 / (runs as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn nearest_single_site_and_tie_break() {
        let sites = vec![Point2D::new(0.0, 0.0), Point2D::new(2.0, 0.0)];
        let pts = vec![Point2D::new(1.0, 0.0), Point2D::new(1.0, 5.0)];
        assert_eq!(assign_nearest(&pts, &sites).unwrap(), vec![0, 0]);
        assert_eq!(assign_nearest(&pts, &sites[1..]).unwrap(), vec![0, 0]);
        assert!(matches!(assign_nearest(&pts, &[]), Err(Error::EmptySites)));
    }

    #[test]
    fn nearest_matches_exhaustive_search() {
        let region = Region::new(100.0, 100.0).unwrap();
        let mut rng = seeded(5);
        let pts: Vec<Point2D<f64>> = (0..50).map(|_| region.uniform_point(&mut rng)).collect();
        let sites: Vec<Point2D<f64>> = (0..5).map(|_| region.uniform_point(&mut rng)).collect();
        let got = assign_nearest(&pts, &sites).unwrap();
        for (p, g) in pts.iter().zip(got) {
            assert_eq!(g, brute_nearest(p, &sites));
        }
    }

    #[test]
    fn scenario_edge_cases() {
        let mut cfg = ScenarioConfig {
            n_sus: Some(1),
            n_inactive: Some(0),
            ..ScenarioConfig::default()
        };
        let s: Scenario<f64> = build_scenario(&cfg, 3).unwrap();
        assert_eq!(s.enbs.len(), 1);
        assert_eq!(s.enbs[0].pos, Point2D::new(500.0, 500.0));
        assert!(s.vaa_assignment.is_empty());

        cfg.n_inactive = Some(25);
        let s: Scenario<f64> = build_scenario(&cfg, 3).unwrap();
        let su = s.sus[0].id;
        assert!(s.vaa_assignment.values().all(|&v| v == su));
        assert_eq!(filter_vaa_members(&s, su).unwrap().len(), 25);
    }

    #[test]
    fn multi_cell_without_enbs_is_an_error() {
        let cfg = ScenarioConfig {
            single_cell: false,
            enb_intensity: 0.0,
            ..ScenarioConfig::default()
        };
        assert!(matches!(build_scenario::<f64>(&cfg, 1), Err(Error::EmptySites)));
    }

    #[test]
    fn vaa_cells_partition_inactive_users() {
        let cfg = ScenarioConfig {
            n_sus: Some(3),
            n_inactive: Some(60),
            ..ScenarioConfig::default()
        };
        let s: Scenario<f64> = build_scenario(&cfg, 11).unwrap();
        let mut seen: Vec<usize> = Vec::new();
        for su in &s.sus {
            let members = filter_vaa_members(&s, su.id).unwrap();
            assert!(members.windows(2).all(|w| w[0] < w[1]));
            let su_pos: Vec<_> = s.sus.iter().map(|x| x.pos).collect();
            for &m in &members {
                let u = s.inactive_user(m).unwrap();
                assert_eq!(s.sus[brute_nearest(&u.pos, &su_pos)].id, su.id);
            }
            seen.extend(members);
        }
        seen.sort_unstable();
        let mut all: Vec<usize> = s.inactive_users.iter().map(|u| u.id).collect();
        all.sort_unstable();
        assert_eq!(seen, all);
        assert!(matches!(filter_vaa_members(&s, 10_000), Err(Error::UnknownSourceUser(_))));
    }

    #[test]
    fn scenario_json_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = build_scenario::<f64>(&cfg, 77).unwrap().to_json().unwrap();
        let b = build_scenario::<f64>(&cfg, 77).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let back: Scenario<f64> = serde_json::from_str(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn works_in_single_precision() {
        let cfg = ScenarioConfig {
            n_sus: Some(4),
            n_inactive: Some(40),
            ..ScenarioConfig::default()
        };
        let s: Scenario<f32> = build_scenario(&cfg, 8).unwrap();
        assert_eq!(s.vaa_assignment.len(), 40);
    }
}
