//! Two-hop amplify-and-forward links and BPSK bit error rates.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::text::sig6;

/// Shortest probe sequence accepted by [`probe_ber`].
pub const MIN_PROBE_BITS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinkParams<T> {
    pub path_loss_exponent: T,
    /// SNR at 1 m with unit noise power.
    pub reference_snr_db: T,
    /// Rayleigh block fading: one exponential power gain per link draw.
    pub fading: bool,
}

impl<T: Real> Default for LinkParams<T> {
    fn default() -> Self {
        Self {
            path_loss_exponent: T::lit(3.5),
            reference_snr_db: T::lit(100.0),
            fading: true,
        }
    }
}

impl<T: Real> LinkParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exponent >= T::lit(2.0)) {
            return Err(Error::Config(format!(
                "path loss exponent must be at least 2, got {}",
                self.path_loss_exponent
            )));
        }
        if !self.reference_snr_db.is_finite() {
            return Err(Error::Config("reference SNR must be finite".into()));
        }
        Ok(())
    }

    pub fn reference_snr(&self) -> T {
        from_db(self.reference_snr_db)
    }
}

pub fn to_db<T: Real>(linear: T) -> T {
    T::lit(10.0) * linear.log10()
}

pub fn from_db<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

/// Mean SNR after path loss, before fading. Distances below 1 m count as 1 m.
pub fn mean_link_snr<T: Real>(distance: T, params: &LinkParams<T>) -> T {
    let d = if distance > T::one() { distance } else { T::one() };
    params.reference_snr() * d.powf(-params.path_loss_exponent)
}

/// One link realization: mean SNR times an `Exp(1)` power gain when fading.
pub fn sample_link_snr<T: Real, R: Rng + ?Sized>(distance: T, params: &LinkParams<T>, rng: &mut R) -> T {
    let mean = mean_link_snr(distance, params);
    if params.fading {
        let g: f64 = Exp1.sample(rng);
        mean * T::lit(g)
    } else {
        mean
    }
}

/// `s1 s2 / (s1 + s2 + 1)`.
pub fn af_equivalent_snr<T: Real>(snr1: T, snr2: T) -> T {
    if snr1.is_infinite() {
        return snr2;
    }
    if snr2.is_infinite() {
        return snr1;
    }
    snr1 * snr2 / (snr1 + snr2 + T::one())
}

/// `Q(sqrt(2 snr)) = erfc(sqrt(snr)) / 2`.
pub fn ber_theoretical<T: Real>(snr: T) -> T {
    T::lit(0.5) * snr.max(T::zero()).sqrt().erfc()
}

/// Sends `seq_len` pseudorandom BPSK symbols through an AWGN channel at
/// `snr` and returns the fraction decoded wrongly, capped at one half.
pub fn probe_ber<T: Real, R: Rng + ?Sized>(snr: T, seq_len: usize, rng: &mut R) -> Result<T> {
    if seq_len < MIN_PROBE_BITS {
        return Err(Error::OutOfRange(format!(
            "probe needs at least {MIN_PROBE_BITS} bits, got {seq_len}"
        )));
    }
    if snr.is_infinite() && snr > T::zero() {
        return Ok(T::zero());
    }
    let sigma = (0.5 / snr.as_f64().max(0.0)).sqrt();
    let mut errors = 0usize;
    for _ in 0..seq_len {
        let bit: bool = rng.random();
        let symbol = if bit { 1.0 } else { -1.0 };
        let noise: f64 = StandardNormal.sample(rng);
        let received = symbol + sigma * noise;
        if (received > 0.0) != bit {
            errors += 1;
        }
    }
    let ber = errors as f64 / seq_len as f64;
    Ok(T::lit(ber.min(0.5)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PathQuality<T> {
    pub relay_id: usize,
    pub snr_hop1: T,
    pub snr_hop2: T,
    pub snr_e2e: T,
    /// Probe-measured BER.
    pub ber: T,
    pub ber_theory: T,
}

impl<T: Real> PathQuality<T> {
    /// Realizes both hops and probes the combined path.
    pub fn measure<R: Rng + ?Sized>(
        relay_id: usize,
        d_hop1: T,
        d_hop2: T,
        params: &LinkParams<T>,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let snr_hop1 = sample_link_snr(d_hop1, params, rng);
        let snr_hop2 = sample_link_snr(d_hop2, params, rng);
        let snr_e2e = af_equivalent_snr(snr_hop1, snr_hop2);
        let ber = probe_ber(snr_e2e, seq_len, rng)?;
        Ok(Self {
            relay_id,
            snr_hop1,
            snr_hop2,
            snr_e2e,
            ber,
            ber_theory: ber_theoretical(snr_e2e),
        })
    }
}

/// Relays meeting `ber_threshold`, best BER first, ties by lower id, at most
/// `max_relays` of them.
pub fn rank_relays<T: Real>(paths: &[PathQuality<T>], max_relays: usize, ber_threshold: T) -> Vec<usize> {
    let mut ok: Vec<&PathQuality<T>> = paths.iter().filter(|p| p.ber <= ber_threshold).collect();
    ok.sort_by(|a, b| {
        a.ber
            .partial_cmp(&b.ber)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.relay_id.cmp(&b.relay_id))
    });
    ok.into_iter().take(max_relays).map(|p| p.relay_id).collect()
}

pub const PATH_REPORT_HEADER: &str = "relay_id,snr1_db,snr2_db,snr_e2e_db,ber_emp,ber_theory,selected";

/// Path report CSV; `selected` is 1 for relays in `selected`.
pub fn path_report_csv<T: Real>(paths: &[PathQuality<T>], selected: &[usize]) -> String {
    let mut out = String::from(PATH_REPORT_HEADER);
    out.push('\n');
    for p in paths {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.relay_id,
            sig6(to_db(p.snr_hop1).as_f64()),
            sig6(to_db(p.snr_hop2).as_f64()),
            sig6(to_db(p.snr_e2e).as_f64()),
            sig6(p.ber.as_f64()),
            sig6(p.ber_theory.as_f64()),
            u8::from(selected.contains(&p.relay_id)),
        ));
    }
    out
}
