//! Estimators over click streams: coincidence histograms, waiting times,
//! counting statistics.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcjump::{fmt_sig, ClickStream};

/// Bin centres `k·bin_width` with `|k·bin_width| ≤ tau_max`.
pub fn histogram_centers(tau_max: f64, bin_width: f64) -> Vec<f64> {
    let k = (tau_max / bin_width + 1e-9).floor() as i64;
    (-k..=k).map(|i| i as f64 * bin_width).collect()
}

/// Normalised coincidence histogram with bins centred on `k·bin_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width: f64,
    pub tau_centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// Uncorrelated expectation per bin.
    pub expected: Vec<f64>,
    pub g2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub run_id: String,
    pub clicks_a: usize,
    pub clicks_b: usize,
    pub duration: f64,
}

impl CorrelationHistogram {
    fn new(
        tau_max: f64,
        bin_width: f64,
        run_id: &str,
        na: usize,
        nb: usize,
        pairs: f64,
        duration: f64,
    ) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bin width must be positive, got {bin_width}"
            )));
        }
        if !(tau_max >= 0.0 && tau_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau_max must be non-negative, got {tau_max}"
            )));
        }
        if !(duration > 0.0) {
            return Err(Error::InvalidConfig("stream duration must be positive".into()));
        }
        let tau_centers = histogram_centers(tau_max, bin_width);
        let expected = tau_centers
            .iter()
            .map(|t| pairs * bin_width * (duration - t.abs()).max(0.0) / (duration * duration))
            .collect();
        Ok(Self {
            bin_width,
            counts: vec![0; tau_centers.len()],
            g2: vec![0.0; tau_centers.len()],
            stderr: vec![0.0; tau_centers.len()],
            tau_centers,
            expected,
            run_id: run_id.to_string(),
            clicks_a: na,
            clicks_b: nb,
            duration,
        })
    }

    fn half_bins(&self) -> i64 {
        (self.tau_centers.len() as i64 - 1) / 2
    }

    /// Range of pair separations that land in some bin.
    fn reach(&self) -> f64 {
        (self.half_bins() as f64 + 0.5) * self.bin_width
    }

    fn bin_of(&self, d: f64) -> Option<usize> {
        let k = (d / self.bin_width).round() as i64;
        let h = self.half_bins();
        (k.abs() <= h).then(|| (k + h) as usize)
    }

    fn finish(mut self) -> Self {
        for i in 0..self.counts.len() {
            let e = self.expected[i];
            let c = self.counts[i] as f64;
            if e > 0.0 {
                self.g2[i] = c / e;
                self.stderr[i] = c.sqrt() / e;
            }
        }
        self
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self
            .tau_centers
            .iter()
            .map(|t| t - 0.5 * self.bin_width)
            .collect();
        if let Some(t) = self.tau_centers.last() {
            e.push(t + 0.5 * self.bin_width);
        }
        e
    }

    pub fn len(&self) -> usize {
        self.tau_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_centers.is_empty()
    }

    /// Index of the bin containing `tau`.
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        self.bin_of(tau)
    }

    /// Bin containing `tau`: `(g2, stderr, count)`.
    pub fn at(&self, tau: f64) -> Option<(f64, f64, u64)> {
        self.bin_of(tau)
            .map(|i| (self.g2[i], self.stderr[i], self.counts[i]))
    }

    /// Writes `tau_center,g2,stderr,count`, with a trailing `theory`
    /// column when an overlay is given.
    pub fn write_csv(&self, path: &Path, overlay: Option<&[f64]>) -> Result<()> {
        if let Some(o) = overlay {
            if o.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.len(),
                    got: o.len(),
                });
            }
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        if overlay.is_some() {
            writeln!(out, "tau_center,g2,stderr,count,theory")?;
        } else {
            writeln!(out, "tau_center,g2,stderr,count")?;
        }
        for i in 0..self.len() {
            write!(
                out,
                "{},{},{},{}",
                fmt_sig(self.tau_centers[i]),
                fmt_sig(self.g2[i]),
                fmt_sig(self.stderr[i]),
                self.counts[i]
            )?;
            match overlay {
                Some(o) => writeln!(out, ",{}", fmt_sig(o[i]))?,
                None => writeln!(out)?,
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn sorted_times(s: &ClickStream) -> Result<Vec<f64>> {
    s.check_sorted()?;
    Ok(s.times())
}

/// Autocorrelation from all ordered pairs `i ≠ j` with `|t_i − t_j|` inside
/// the window, normalised by `N(N−1)·Δt·(T−|τ|)/T²`.
pub fn g2_histogram(stream: &ClickStream, tau_max: f64, bin_width: f64) -> Result<CorrelationHistogram> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let t = sorted_times(stream)?;
    let n = t.len();
    let mut h = CorrelationHistogram::new(
        tau_max,
        bin_width,
        &stream.run_id,
        n,
        n,
        n as f64 * (n as f64 - 1.0),
        stream.duration,
    )?;
    let reach = h.reach();
    let centre = h.half_bins() as usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = t[j] - t[i];
            if d >= reach {
                break;
            }
            if let Some(b) = h.bin_of(d) {
                h.counts[b] += 1;
                h.counts[2 * centre - b] += 1;
            }
        }
    }
    Ok(h.finish())
}

/// Cross-correlation histogram of `τ = t_B − t_A`, normalised by
/// `N_A N_B·Δt·(T−|τ|)/T²`. Positive `τ` means the `b` click came later.
pub fn cross_g2_histogram(
    a: &ClickStream,
    b: &ClickStream,
    tau_max: f64,
    bin_width: f64,
) -> Result<CorrelationHistogram> {
    if a.run_id != b.run_id {
        return Err(Error::IncompatibleStreams(a.run_id.clone(), b.run_id.clone()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyStream);
    }
    let same = std::ptr::eq(a, b) || a.records == b.records;
    let ta = sorted_times(a)?;
    let tb = sorted_times(b)?;
    let (na, nb) = (ta.len(), tb.len());
    let pairs = if same {
        na as f64 * (na as f64 - 1.0)
    } else {
        na as f64 * nb as f64
    };
    let mut h = CorrelationHistogram::new(
        tau_max,
        bin_width,
        &a.run_id,
        na,
        nb,
        pairs,
        a.duration.max(b.duration),
    )?;
    let reach = h.reach();
    let mut lo = 0;
    for (i, &x) in ta.iter().enumerate() {
        while lo < nb && tb[lo] <= x - reach {
            lo += 1;
        }
        for (j, &y) in tb.iter().enumerate().skip(lo) {
            let d = y - x;
            if d >= reach {
                break;
            }
            if same && i == j {
                continue;
            }
            if let Some(k) = h.bin_of(d) {
                h.counts[k] += 1;
            }
        }
    }
    Ok(h.finish())
}

/// Density of consecutive inter-click intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaitingTimeDistribution {
    pub bin_width: f64,
    pub tau_centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// Normalised over all intervals, including those beyond the last bin.
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
    pub intervals: usize,
}

impl WaitingTimeDistribution {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "tau_center,density,stderr,count")?;
        for i in 0..self.tau_centers.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_sig(self.tau_centers[i]),
                fmt_sig(self.density[i]),
                fmt_sig(self.stderr[i]),
                self.counts[i]
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn waiting_time(stream: &ClickStream, tau_max: f64, bin_width: f64) -> Result<WaitingTimeDistribution> {
    if stream.len() < 2 {
        return Err(Error::TooFewClicks {
            needed: 2,
            have: stream.len(),
        });
    }
    if !(bin_width > 0.0 && tau_max > 0.0) {
        return Err(Error::InvalidConfig(
            "bin width and tau_max must be positive".into(),
        ));
    }
    let t = sorted_times(stream)?;
    let nb = (tau_max / bin_width).ceil() as usize;
    let mut counts = vec![0u64; nb];
    for w in t.windows(2) {
        let k = ((w[1] - w[0]) / bin_width).floor() as usize;
        if k < nb {
            counts[k] += 1;
        }
    }
    let m = (t.len() - 1) as f64;
    Ok(WaitingTimeDistribution {
        bin_width,
        tau_centers: (0..nb).map(|k| (k as f64 + 0.5) * bin_width).collect(),
        density: counts.iter().map(|&c| c as f64 / (m * bin_width)).collect(),
        stderr: counts
            .iter()
            .map(|&c| (c as f64).sqrt() / (m * bin_width))
            .collect(),
        counts,
        intervals: t.len() - 1,
    })
}

/// Probabilities of `m` clicks in disjoint consecutive windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingDistribution {
    pub window: f64,
    pub q: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

impl CountingDistribution {
    pub fn mean(&self) -> f64 {
        self.q.iter().enumerate().map(|(m, q)| m as f64 * q).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.q
            .iter()
            .enumerate()
            .map(|(m, q)| (m as f64 - mu).powi(2) * q)
            .sum()
    }

    /// Variance over mean; 1 for Poisson statistics.
    pub fn fano(&self) -> f64 {
        self.variance() / self.mean()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "m,q,stderr")?;
        for (m, (q, e)) in self.q.iter().zip(&self.stderr).enumerate() {
            writeln!(out, "{m},{},{}", fmt_sig(*q), fmt_sig(*e))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn window_counts(stream: &ClickStream, window_length: f64) -> Result<CountingDistribution> {
    if !(window_length > 0.0) {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if stream.duration < 10.0 * window_length {
        return Err(Error::InvalidConfig(format!(
            "duration {} is shorter than ten windows of {window_length}",
            stream.duration
        )));
    }
    let t = sorted_times(stream)?;
    let nw = (stream.duration / window_length).floor() as usize;
    let mut per = vec![0usize; nw];
    for x in t {
        let k = (x / window_length).floor() as usize;
        if k < nw {
            per[k] += 1;
        }
    }
    let top = per.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; top + 1];
    for c in per {
        hist[c] += 1;
    }
    let n = nw as f64;
    Ok(CountingDistribution {
        window: window_length,
        q: hist.iter().map(|&h| h as f64 / n).collect(),
        stderr: hist
            .iter()
            .map(|&h| {
                let q = h as f64 / n;
                (q * (1.0 - q) / n).sqrt()
            })
            .collect(),
        samples: nw,
    })
}

/// Fraction of clicks whose nearest neighbour lies closer than `tau_c`.
pub fn closely_spaced_fraction(stream: &ClickStream, tau_c: f64) -> Result<f64> {
    if !(tau_c > 0.0) {
        return Err(Error::InvalidConfig("tau_c must be positive".into()));
    }
    let t = sorted_times(stream)?;
    let n = t.len();
    if n < 2 {
        return Ok(0.0);
    }
    let close = (0..n)
        .filter(|&i| {
            let left = i > 0 && t[i] - t[i - 1] < tau_c;
            let right = i + 1 < n && t[i + 1] - t[i] < tau_c;
            left || right
        })
        .count();
    Ok(close as f64 / n as f64)
}

/// Clicks per unit time and its Poisson standard error.
pub fn rate(stream: &ClickStream) -> Result<(f64, f64)> {
    if !(stream.duration > 0.0) {
        return Err(Error::InvalidConfig("stream duration must be positive".into()));
    }
    let n = stream.len() as f64;
    Ok((n / stream.duration, n.sqrt() / stream.duration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcjump::{generate_poisson_stream, ClickRecord};
    use proptest::prelude::*;

    fn from_times(times: &[f64], duration: f64) -> ClickStream {
        let mut s = ClickStream::empty("test", duration);
        s.channels = vec!["source".into()];
        s.records = times
            .iter()
            .map(|&t| ClickRecord { time: t, channel: 0 })
            .collect();
        s
    }

    fn periodic(period: f64, n: usize) -> ClickStream {
        let t: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * period).collect();
        from_times(&t, n as f64 * period)
    }

    #[test]
    fn empty_stream_is_an_error() {
        let s = ClickStream::empty("x", 10.0);
        assert!(matches!(g2_histogram(&s, 1.0, 0.1), Err(Error::EmptyStream)));
    }

    #[test]
    fn poisson_histogram_is_flat() {
        let s = generate_poisson_stream(2.0, 20_000.0, 3).unwrap();
        let h = g2_histogram(&s, 5.0, 0.1).unwrap();
        let bad =
            h.g2.iter()
                .zip(&h.stderr)
                .filter(|(g, e)| (*g - 1.0).abs() > 3.0 * *e)
                .count();
        assert!(bad <= 2, "{bad} of {} bins off", h.len());
    }

    #[test]
    fn periodic_stream_has_gap() {
        let s = periodic(1.0, 500);
        let h = g2_histogram(&s, 2.5, 0.1).unwrap();
        for (t, c) in h.tau_centers.iter().zip(&h.counts) {
            if t.abs() > 0.05 && t.abs() < 0.95 {
                assert_eq!(*c, 0, "tau {t}");
            }
        }
        // k-th neighbour pairs: 2(N−k) ordered pairs at |τ| = k
        assert_eq!(h.at(1.0).unwrap().2, 499);
        assert_eq!(h.at(-2.0).unwrap().2, 498);
        assert_eq!(h.at(0.0).unwrap().2, 0);
    }

    #[test]
    fn pair_count_matches_brute_force() {
        let s = generate_poisson_stream(5.0, 200.0, 9).unwrap();
        let h = g2_histogram(&s, 1.0, 0.05).unwrap();
        let t = s.times();
        let mut brute = vec![0u64; h.len()];
        for i in 0..t.len() {
            for j in 0..t.len() {
                if i != j {
                    if let Some(b) = h.index_of(t[j] - t[i]) {
                        brute[b] += 1;
                    }
                }
            }
        }
        assert_eq!(brute, h.counts);
    }

    #[test]
    fn cross_of_independent_streams_is_flat() {
        let mut a = generate_poisson_stream(2.0, 20_000.0, 1).unwrap();
        let mut b = generate_poisson_stream(2.0, 20_000.0, 2).unwrap();
        a.run_id = "shared".into();
        b.run_id = "shared".into();
        let h = cross_g2_histogram(&a, &b, 3.0, 0.1).unwrap();
        let bad =
            h.g2.iter()
                .zip(&h.stderr)
                .filter(|(g, e)| (*g - 1.0).abs() > 3.0 * *e)
                .count();
        assert!(bad <= 2);
    }

    #[test]
    fn cross_requires_shared_clock() {
        let a = generate_poisson_stream(1.0, 100.0, 1).unwrap();
        let b = generate_poisson_stream(1.0, 100.0, 2).unwrap();
        assert!(matches!(
            cross_g2_histogram(&a, &b, 1.0, 0.1),
            Err(Error::IncompatibleStreams(..))
        ));
    }

    #[test]
    fn cross_with_itself_is_the_autocorrelation() {
        let s = generate_poisson_stream(3.0, 500.0, 4).unwrap();
        let a = g2_histogram(&s, 2.0, 0.1).unwrap();
        let c = cross_g2_histogram(&s, &s.clone(), 2.0, 0.1).unwrap();
        assert_eq!(a.counts, c.counts);
        assert_eq!(a.g2, c.g2);
    }

    #[test]
    fn cross_keeps_time_order() {
        // b fires exactly 0.3 after each a click
        let ta: Vec<f64> = (0..200).map(|k| k as f64 * 5.0 + 1.0).collect();
        let tb: Vec<f64> = ta.iter().map(|t| t + 0.3).collect();
        let a = from_times(&ta, 1000.0);
        let b = from_times(&tb, 1000.0);
        let h = cross_g2_histogram(&a, &b, 1.0, 0.1).unwrap();
        assert_eq!(h.at(0.3).unwrap().2, 200);
        assert_eq!(h.at(-0.3).unwrap().2, 0);
    }

    #[test]
    fn poisson_waiting_time_is_exponential() {
        let r = 2.0;
        let s = generate_poisson_stream(r, 50_000.0, 5).unwrap();
        let w = waiting_time(&s, 2.0, 0.05).unwrap();
        for ((t, d), e) in w.tau_centers.iter().zip(&w.density).zip(&w.stderr) {
            // exact bin average of r e^{−rτ}
            let lo = t - 0.025;
            let hi = t + 0.025;
            let exact = ((-r * lo).exp() - (-r * hi).exp()) / 0.05;
            assert!((d - exact).abs() < 4.0 * e.max(1e-3), "tau {t}: {d} vs {exact}");
        }
    }

    #[test]
    fn periodic_waiting_time_is_a_point_mass() {
        let w = waiting_time(&periodic(1.0, 100), 3.0, 0.1).unwrap();
        let k = w.counts.iter().position(|&c| c > 0).unwrap();
        assert_eq!(w.counts[k], 99);
        assert!((w.tau_centers[k] - 1.0).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn counting_statistics() {
        let empty = ClickStream::empty("e", 100.0);
        let q = window_counts(&empty, 1.0).unwrap();
        assert_eq!(q.q, vec![1.0]);
        let s = generate_poisson_stream(3.0, 30_000.0, 6).unwrap();
        let q = window_counts(&s, 1.0).unwrap();
        let total: f64 = q.q.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // standard error of the variance-to-mean ratio ≈ √(2/n)
        let se = (2.0 / q.samples as f64).sqrt();
        assert!((q.fano() - 1.0).abs() < 3.0 * se, "{}", q.fano());
        assert!(window_counts(&s, 5_000.0).is_err());
    }

    #[test]
    fn closely_spaced_fraction_laws() {
        assert_eq!(closely_spaced_fraction(&periodic(1.0, 100), 0.9).unwrap(), 0.0);
        let r = 1.0;
        let tc = 0.1;
        let s = generate_poisson_stream(r, 100_000.0, 7).unwrap();
        let f = closely_spaced_fraction(&s, tc).unwrap();
        let exact = 1.0 - (-2.0 * r * tc).exp();
        assert!((f - exact).abs() < 0.005, "{f} vs {exact}");
    }

    #[test]
    fn rate_and_error() {
        assert_eq!(rate(&ClickStream::empty("e", 10.0)).unwrap().0, 0.0);
        let s = generate_poisson_stream(4.0, 10_000.0, 8).unwrap();
        let (r, e) = rate(&s).unwrap();
        assert!((r - 4.0).abs() < 3.0 * e);
    }

    #[test]
    fn doubling_clicks_shrinks_errors() {
        let a = generate_poisson_stream(2.0, 10_000.0, 10).unwrap();
        let b = generate_poisson_stream(2.0, 20_000.0, 10).unwrap();
        let ha = g2_histogram(&a, 1.0, 0.1).unwrap();
        let hb = g2_histogram(&b, 1.0, 0.1).unwrap();
        let ma: f64 = ha.stderr.iter().sum::<f64>() / ha.len() as f64;
        let mb: f64 = hb.stderr.iter().sum::<f64>() / hb.len() as f64;
        let ratio = ma / mb;
        assert!((ratio - 2f64.sqrt()).abs() < 0.1 * 2f64.sqrt(), "{ratio}");
    }

    #[test]
    fn histogram_csv() {
        let dir = tempfile::tempdir().unwrap();
        let h = g2_histogram(&periodic(1.0, 20), 1.0, 0.5).unwrap();
        let p = dir.path().join("h.csv");
        h.write_csv(&p, None).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("tau_center,g2,stderr,count\n"));
        assert_eq!(text.lines().count(), 1 + h.len());
        let theory = vec![1.0; h.len()];
        h.write_csv(&p, Some(&theory)).unwrap();
        assert!(fs::read_to_string(&p)
            .unwrap()
            .starts_with("tau_center,g2,stderr,count,theory\n"));
        assert!(h.write_csv(&p, Some(&[1.0])).is_err());
    }

    #[test]
    fn poisson_calibration() {
        // at most 1% of bins beyond 3σ, pooled over independent streams
        let (mut bad, mut total) = (0, 0);
        for seed in 0..20 {
            let s = generate_poisson_stream(1.0, 20_000.0, 100 + seed).unwrap();
            let h = g2_histogram(&s, 10.0, 0.1).unwrap();
            bad +=
                h.g2.iter()
                    .zip(&h.stderr)
                    .filter(|(g, e)| (*g - 1.0).abs() > 3.0 * *e)
                    .count();
            total += h.len();
        }
        assert!(bad as f64 <= 0.01 * total as f64, "{bad} of {total}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn autocorrelation_is_symmetric(seed in any::<u64>(), rate in 0.5f64..5.0, bw in 0.02f64..0.5) {
            let s = generate_poisson_stream(rate, 200.0, seed).unwrap();
            prop_assume!(s.len() > 1);
            let h = g2_histogram(&s, 3.0, bw).unwrap();
            let n = h.len();
            for i in 0..n {
                prop_assert_eq!(h.counts[i], h.counts[n - 1 - i]);
                prop_assert_eq!(h.g2[i], h.g2[n - 1 - i]);
            }
        }

        #[test]
        fn counting_distribution_normalised(seed in any::<u64>(), rate in 0.1f64..10.0, w in 0.1f64..2.0) {
            let s = generate_poisson_stream(rate, 100.0 * w, seed).unwrap();
            let q = window_counts(&s, w).unwrap();
            let total: f64 = q.q.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(q.q.iter().all(|&x| x >= 0.0));
        }
    }
}
