//! Synthetic two-platform demand generator.
//!
//! Both platforms draw Poisson counts from zone-pair intensities that share
//! a daily profile and, optionally, a common latent demand process. The
//! knobs map onto the effects the forecaster is supposed to exploit:
//!
//! * `rho` couples the platforms' latent fluctuations (0 = independent,
//!   1 = identical), which is what cross-platform fusion can pick up;
//! * `lag` feeds the latent value from one day earlier back into today's
//!   intensity, so the auxiliary platform observed a day ago carries real
//!   signal about the current target;
//! * `noise` scales the latent fluctuations relative to the deterministic
//!   daily profile.
//!
//! The per-cell count draws are coupled across platforms through a Gaussian
//! copula with the same `rho`; at `rho = 1` both platforms consume one
//! identical uniform per cell and therefore produce identical, not merely
//! statistically similar, totals; at `rho = 0` the count noise is
//! independent too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

use crate::derive_seed;
use crate::ingest::{EdgeRow, IntervalIndex};
use crate::{Error, Result};

/// Day-over-day persistence of the latent demand process. Kept internal:
/// it only needs to be high enough that recent history helps prediction.
const LATENT_PERSISTENCE: f64 = 0.6;

/// Latent values are clamped to this many standard deviations so a rare
/// draw cannot push an intensity factor negative enough to matter.
const LATENT_CLAMP: f64 = 2.5;

/// Settings for one synthetic dataset (both platforms).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of zones.
    pub m: usize,
    /// Number of days to generate.
    pub days: usize,
    /// Intervals per day.
    pub p: usize,
    /// Mean trips per zone pair per interval before modulation.
    pub base_intensity: f64,
    /// Multiplicative daily profile, one factor per slot of the day.
    pub profile: Vec<f64>,
    /// Cross-platform coupling of the latent process, in [0, 1].
    pub rho: f64,
    /// Strength of the one-day-lagged latent term.
    pub lag: f64,
    /// Strength of the same-interval latent term.
    pub noise: f64,
    pub seed: u64,
}

/// The default profile: a positive sine over the day, peak-to-trough
/// ratio 4 (1 ± 0.6).
pub fn sine_profile(p: usize, amplitude: f64) -> Vec<f64> {
    (0..p)
        .map(|s| 1.0 + amplitude * (2.0 * std::f64::consts::PI * s as f64 / p as f64).sin())
        .collect()
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            m: 20,
            days: 14,
            p: 8,
            base_intensity: 2.0,
            profile: sine_profile(8, 0.6),
            rho: 0.9,
            lag: 0.5,
            noise: 0.3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("synth.m must be positive".to_string()));
        }
        if self.days == 0 {
            return Err(Error::Config("synth.days must be positive".to_string()));
        }
        if self.p == 0 {
            return Err(Error::Config("synth.p must be positive".to_string()));
        }
        if !(self.base_intensity > 0.0) {
            return Err(Error::Config(format!(
                "synth.base_intensity must be positive, got {}",
                self.base_intensity
            )));
        }
        if self.profile.len() != self.p {
            return Err(Error::Config(format!(
                "synth.profile must have one entry per slot ({}), got {}",
                self.p,
                self.profile.len()
            )));
        }
        if self.profile.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config(
                "synth.profile entries must be finite and non-negative".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "synth.rho must be in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.lag >= 0.0) {
            return Err(Error::Config(format!(
                "synth.lag must be non-negative, got {}",
                self.lag
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "synth.noise must be non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn num_intervals(&self) -> usize {
        self.days * self.p
    }
}

/// Edge lists for both platforms, sorted by (interval, origin, dest).
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub taxi: Vec<EdgeRow>,
    pub aux: Vec<EdgeRow>,
}

// Stream tags for seed derivation; each independent random source gets its
// own tag so adding one never shifts the others.
const STREAM_SHARED: u64 = 1;
const STREAM_TAXI: u64 = 2;
const STREAM_AUX: u64 = 3;
const STREAM_PAIRS: u64 = 4;
const STREAM_COUNTS_SHARED: u64 = 5;
const STREAM_COUNTS_TAXI: u64 = 6;
const STREAM_COUNTS_AUX: u64 = 7;

/// Standard normal via Box-Muller; consumes two uniforms per call.
fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // in (0, 1], ln is safe
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Abramowitz & Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Poisson sample by inverse-CDF walk on a single uniform. Monotone in the
/// uniform for a fixed mean, so comonotone draws across platforms stay
/// ordered the same way.
fn poisson_inverse_cdf(mean: f64, uniform: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let mut k = 0u64;
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    // Hard cap far beyond any plausible tail for the intensities used here.
    while uniform > cdf && k < 100_000 {
        k += 1;
        pmf *= mean / k as f64;
        cdf += pmf;
    }
    k
}

/// One platform's latent fluctuation series: an AR(1) over innovations that
/// mix a shared component (weight `rho`) with a platform-private one.
fn latent_series(cfg: &SynthConfig, platform_stream: u64) -> Vec<f64> {
    let n = cfg.num_intervals();
    let mut shared = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SHARED]));
    let mut private = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &[platform_stream]));
    let mut w = 0.0;
    let mut series = Vec::with_capacity(n);
    for _ in 0..n {
        let s = standard_normal(&mut shared);
        let e = standard_normal(&mut private);
        let innovation = cfg.rho * s + (1.0 - cfg.rho * cfg.rho).sqrt() * e;
        w = LATENT_PERSISTENCE * w + (1.0 - LATENT_PERSISTENCE * LATENT_PERSISTENCE).sqrt() * innovation;
        series.push(w.clamp(-LATENT_CLAMP, LATENT_CLAMP));
    }
    series
}

/// One standard normal keyed by (stream, interval, origin, dest).
fn cell_normal(seed: u64, stream: u64, tij: [u64; 3]) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(
        seed,
        &[stream, tij[0], tij[1], tij[2]],
    ));
    standard_normal(&mut rng)
}

/// Zone-pair base weights in [0.25, 1.75], shared by both platforms so the
/// spatial structure matches across them.
fn pair_weights(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_PAIRS]));
    (0..cfg.m * cfg.m).map(|_| rng.random_range(0.25..1.75)).collect()
}

/// Generate both platforms' edge lists. Deterministic in the config; the
/// same seed always produces byte-identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let pair_w = pair_weights(cfg);
    let latents = [
        latent_series(cfg, STREAM_TAXI),
        latent_series(cfg, STREAM_AUX),
    ];

    let mut out = SynthOutput { taxi: Vec::new(), aux: Vec::new() };
    let count_streams = [STREAM_COUNTS_TAXI, STREAM_COUNTS_AUX];
    for t in 0..cfg.num_intervals() {
        let profile = cfg.profile[t % cfg.p];
        for i in 0..cfg.m {
            for j in 0..cfg.m {
                // Count uniforms come from a Gaussian copula with the same
                // coupling as the latents: at rho = 1 both platforms see one
                // identical uniform (hence identical counts for identical
                // intensities), at rho = 0 the draws are independent.
                let tij = [t as u64, i as u64, j as u64];
                let z_shared = cell_normal(cfg.seed, STREAM_COUNTS_SHARED, tij);
                for ((latent, rows), stream) in
                    latents.iter().zip([&mut out.taxi, &mut out.aux]).zip(count_streams)
                {
                    let z = cfg.rho * z_shared
                        + (1.0 - cfg.rho * cfg.rho).sqrt() * cell_normal(cfg.seed, stream, tij);
                    let uniform = normal_cdf(z);
                    let now = 1.0 + cfg.noise * latent[t];
                    let lagged = if t >= cfg.p { 1.0 + cfg.lag * latent[t - cfg.p] } else { 1.0 };
                    let mean = cfg.base_intensity
                        * pair_w[i * cfg.m + j]
                        * profile
                        * now.max(0.0)
                        * lagged.max(0.0);
                    let count = poisson_inverse_cdf(mean, uniform);
                    if count > 0 {
                        rows.push(EdgeRow {
                            interval: IntervalIndex(t),
                            origin: i,
                            dest: j,
                            count,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Generate and write both edge lists in the on-disk format that `ingest`
/// reads back.
pub fn generate_to_files(cfg: &SynthConfig, taxi_path: &Path, aux_path: &Path) -> Result<SynthOutput> {
    let out = generate(cfg)?;
    crate::ingest::write_edge_list(taxi_path, &out.taxi)?;
    crate::ingest::write_edge_list(aux_path, &out.aux)?;
    Ok(out)
}

/// Total trips per interval, as a dense series of length `n_intervals`.
pub fn per_interval_totals(rows: &[EdgeRow], n_intervals: usize) -> Vec<f64> {
    let mut totals = vec![0.0; n_intervals];
    for row in rows {
        totals[row.interval.0] += row.count as f64;
    }
    totals
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "series length mismatch");
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    cov / (var_a * var_b).sqrt()
}

/// Remove the per-slot-of-day mean from a totals series, leaving only the
/// fluctuations around the daily profile.
fn demean_by_slot(totals: &[f64], p: usize) -> Vec<f64> {
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for (t, &v) in totals.iter().enumerate() {
        sums[t % p] += v;
        counts[t % p] += 1;
    }
    totals
        .iter()
        .enumerate()
        .map(|(t, &v)| v - sums[t % p] / counts[t % p].max(1) as f64)
        .collect()
}

/// Pearson correlation between the platforms' per-interval totals after
/// removing each platform's daily profile. The shared profile would
/// otherwise dominate and mask the latent coupling this measures.
pub fn cross_platform_correlation(taxi_totals: &[f64], aux_totals: &[f64], p: usize) -> f64 {
    pearson(&demean_by_slot(taxi_totals, p), &demean_by_slot(aux_totals, p))
}

/// Autocorrelation of a totals series at the given lag.
pub fn autocorrelation(totals: &[f64], lag: usize) -> f64 {
    assert!(lag < totals.len(), "lag {lag} out of range for {} intervals", totals.len());
    pearson(&totals[..totals.len() - lag], &totals[lag..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphbuild::build_series;
    use crate::ingest::{Platform, ZoneRegistry};

    fn small_config() -> SynthConfig {
        SynthConfig { m: 6, days: 8, p: 4, profile: sine_profile(4, 0.6), ..SynthConfig::default() }
    }

    #[test]
    fn validation_names_the_offending_field() {
        let cases: Vec<(&str, SynthConfig)> = vec![
            ("synth.m", SynthConfig { m: 0, ..SynthConfig::default() }),
            ("synth.rho", SynthConfig { rho: 1.5, ..SynthConfig::default() }),
            ("synth.profile", SynthConfig { profile: vec![1.0; 3], ..SynthConfig::default() }),
            ("synth.noise", SynthConfig { noise: -0.1, ..SynthConfig::default() }),
            (
                "synth.base_intensity",
                SynthConfig { base_intensity: 0.0, ..SynthConfig::default() },
            ),
        ];
        for (field, cfg) in cases {
            match generate(&cfg) {
                Err(Error::Config(msg)) => {
                    assert!(msg.contains(field), "message {msg:?} does not name {field}")
                }
                other => panic!("expected config error for {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn fully_coupled_noiseless_platforms_are_identical() {
        let cfg = SynthConfig { rho: 1.0, noise: 0.0, lag: 0.0, ..small_config() };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.taxi, out.aux);
        assert!(!out.taxi.is_empty());
    }

    #[test]
    fn fully_coupled_platforms_have_proportional_totals() {
        // With rho = 1 the latent series coincide even when noise > 0, and
        // the shared per-cell uniforms make the counts themselves equal.
        let cfg = SynthConfig { rho: 1.0, noise: 0.3, ..small_config() };
        let out = generate(&cfg).unwrap();
        let n = cfg.num_intervals();
        assert_eq!(
            per_interval_totals(&out.taxi, n),
            per_interval_totals(&out.aux, n)
        );
    }

    #[test]
    fn decoupled_platforms_show_no_residual_correlation() {
        // Small noise and no lag coupling: the latent processes are
        // persistent, and at the default strengths their finite-sample
        // estimator variance alone can push |corr| past the bound even
        // with zero actual coupling. These settings make the fluctuations
        // near-iid so the estimate concentrates.
        let cfg = SynthConfig {
            m: 8,
            days: 30,
            p: 8,
            rho: 0.0,
            noise: 0.05,
            lag: 0.0,
            profile: sine_profile(8, 0.6),
            ..SynthConfig::default()
        };
        assert_eq!(cfg.num_intervals(), 240);
        let out = generate(&cfg).unwrap();
        let taxi = per_interval_totals(&out.taxi, 240);
        let aux = per_interval_totals(&out.aux, 240);
        let corr = cross_platform_correlation(&taxi, &aux, cfg.p);
        assert!(corr.abs() <= 0.1, "rho=0 but residual correlation {corr}");
    }

    #[test]
    fn coupling_strength_is_monotone_in_rho() {
        let measure = |rho: f64| {
            let cfg = SynthConfig {
                m: 8,
                days: 30,
                p: 8,
                rho,
                profile: sine_profile(8, 0.6),
                ..SynthConfig::default()
            };
            let out = generate(&cfg).unwrap();
            let n = cfg.num_intervals();
            cross_platform_correlation(
                &per_interval_totals(&out.taxi, n),
                &per_interval_totals(&out.aux, n),
                cfg.p,
            )
        };
        let low = measure(0.2);
        let high = measure(0.8);
        assert!(
            high > low,
            "correlation did not increase with rho: rho=0.2 gives {low}, rho=0.8 gives {high}"
        );
    }

    #[test]
    fn totals_autocorrelation_peaks_at_one_day() {
        // Lag coupling off: its slowly-drifting factor would smear the
        // short-lag autocorrelations this test compares against.
        let cfg = SynthConfig {
            m: 8,
            days: 30,
            p: 8,
            noise: 0.05,
            lag: 0.0,
            profile: sine_profile(8, 0.6),
            ..SynthConfig::default()
        };
        let totals = per_interval_totals(&generate(&cfg).unwrap().taxi, cfg.num_intervals());
        let at_day = autocorrelation(&totals, cfg.p);
        for lag in 1..cfg.p {
            let other = autocorrelation(&totals, lag);
            assert!(
                at_day > other,
                "autocorrelation at lag {lag} ({other}) >= at lag {} ({at_day})",
                cfg.p
            );
        }
    }

    #[test]
    fn same_seed_means_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let paths: Vec<_> = (0..2)
            .map(|run| {
                let taxi = dir.path().join(format!("taxi{run}.edges"));
                let aux = dir.path().join(format!("aux{run}.edges"));
                generate_to_files(&cfg, &taxi, &aux).unwrap();
                (taxi, aux)
            })
            .collect();
        assert_eq!(
            std::fs::read(&paths[0].0).unwrap(),
            std::fs::read(&paths[1].0).unwrap()
        );
        assert_eq!(
            std::fs::read(&paths[0].1).unwrap(),
            std::fs::read(&paths[1].1).unwrap()
        );

        let other = SynthConfig { seed: 7, ..cfg };
        let taxi3 = dir.path().join("taxi3.edges");
        let aux3 = dir.path().join("aux3.edges");
        generate_to_files(&other, &taxi3, &aux3).unwrap();
        assert_ne!(
            std::fs::read(&paths[0].0).unwrap(),
            std::fs::read(&taxi3).unwrap()
        );
    }

    #[test]
    fn output_round_trips_through_ingest_and_graphbuild() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let taxi_path = dir.path().join("taxi.edges");
        let aux_path = dir.path().join("aux.edges");
        let out = generate_to_files(&cfg, &taxi_path, &aux_path).unwrap();

        let registry = ZoneRegistry::contiguous(cfg.m);
        let rows = crate::ingest::read_edge_list(&taxi_path).unwrap();
        assert_eq!(rows, out.taxi);
        let series = build_series(&rows, &registry, Platform::Taxi, cfg.num_intervals()).unwrap();
        assert_eq!(series.intervals.len(), cfg.num_intervals());

        let total_written: u64 = out.taxi.iter().map(|r| r.count).sum();
        let total_built: f64 = series
            .intervals
            .iter()
            .map(|iv| iv.graph.adjacency.sum())
            .sum();
        assert_eq!(total_built, total_written as f64);

        let aux_rows = crate::ingest::read_edge_list(&aux_path).unwrap();
        let aux_series =
            build_series(&aux_rows, &registry, Platform::Aux, cfg.num_intervals()).unwrap();
        let samples = crate::graphbuild::make_samples(&series, &aux_series, 3, cfg.p).unwrap();
        assert_eq!(samples.len(), cfg.num_intervals() - cfg.p.max(3));
    }

    #[test]
    fn default_desk_config_yields_104_samples() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.num_intervals(), 112);
        // With k = 3 history steps and one-day-lagged auxiliary input, the
        // first valid target is interval 8.
        assert_eq!(cfg.num_intervals() - cfg.p.max(3), 104);
    }

    #[test]
    fn poisson_sampler_tracks_the_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for &mean in &[0.3, 2.0, 9.0] {
            let n = 20_000;
            let total: u64 = (0..n).map(|_| poisson_inverse_cdf(mean, rng.random())).sum();
            let sample_mean = total as f64 / n as f64;
            assert!(
                (sample_mean - mean).abs() < 0.1 * mean.max(0.5),
                "mean {mean}: sample mean {sample_mean}"
            );
        }
    }

    #[test]
    fn poisson_sampler_hits_exact_quantiles() {
        // For mean 1: P(0) = e^-1 ≈ 0.3679, P(0)+P(1) ≈ 0.7358.
        assert_eq!(poisson_inverse_cdf(1.0, 0.1), 0);
        assert_eq!(poisson_inverse_cdf(1.0, 0.5), 1);
        assert_eq!(poisson_inverse_cdf(1.0, 0.75), 2);
        assert_eq!(poisson_inverse_cdf(0.0, 0.99), 0);
    }
}
