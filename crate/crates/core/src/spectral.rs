//! One-sided power spectra, SNR against the Johnson floor, and power
//! statistics at the resonance bin.
//!
//! PSD normalisation (rectangular window, `N` samples at interval `dt`):
//! `P_k = 2|X_k|²·dt/N` for `0 < k < N/2`, and `|X_k|²·dt/N` at DC and
//! Nyquist, with `Δf = 1/(N·dt)`. Then `Σ P_k·Δf` equals the mean square of
//! the record exactly, and white noise of one-sided density `S` gives
//! `E[P_k] = S`.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{Error, Result};
use crate::noise::RngStream;
use crate::params::{PhysicalConstants, ResonatorParams};

pub const MIN_RECORD: usize = 1 << 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Option<Vec<f64>> {
        match self {
            Window::Rectangular => None,
            Window::Hann => Some(
                (0..n)
                    .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub frequencies: Vec<f64>,
    /// One-sided PSD, V²/Hz.
    pub psd: Vec<f64>,
    pub bin_width: f64,
    pub window: Window,
    pub record_length: f64,
    pub sample_rate: f64,
}

impl SpectrumResult {
    /// Index of the bin whose centre is closest to `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        ((f / self.bin_width).round().max(0.0) as usize).min(self.psd.len() - 1)
    }

    pub fn at(&self, f: f64) -> f64 {
        self.psd[self.bin_of(f)]
    }

    /// `Σ P_k Δf`.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width
    }

    /// Mean PSD over bins with centre in `[f_lo, f_hi]`.
    pub fn band_mean(&self, f_lo: f64, f_hi: f64) -> f64 {
        let lo = (f_lo / self.bin_width).ceil().max(0.0) as usize;
        let hi = ((f_hi / self.bin_width).floor() as usize).min(self.psd.len() - 1);
        if hi < lo {
            return f64::NAN;
        }
        self.psd[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_Hz,psd_V2_per_Hz")?;
        for (f, p) in self.frequencies.iter().zip(&self.psd) {
            writeln!(w, "{f:e},{p:e}")?;
        }
        Ok(())
    }
}

fn check_rate(sample_rate: f64) -> Result<()> {
    if sample_rate.is_finite() && sample_rate > 0.0 {
        Ok(())
    } else {
        Err(Error::Spectrum(format!("sample rate must be positive, got {sample_rate}")))
    }
}

/// One-sided PSD of a uniformly sampled record.
pub fn psd(series: &[f64], sample_rate: f64) -> Result<SpectrumResult> {
    psd_windowed(series, sample_rate, Window::Rectangular)
}

pub fn psd_windowed(series: &[f64], sample_rate: f64, window: Window) -> Result<SpectrumResult> {
    check_rate(sample_rate)?;
    let n = series.len();
    if n < MIN_RECORD {
        return Err(Error::Spectrum(format!(
            "record has {n} samples, at least {MIN_RECORD} required"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Spectrum("record contains non-finite samples".into()));
    }
    let w = window.weights(n);
    let mut buf: Vec<Complex64> = match &w {
        None => series.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        Some(w) => series.iter().zip(w).map(|(&v, &wi)| Complex64::new(v * wi, 0.0)).collect(),
    };
    let norm = match &w {
        None => n as f64,
        Some(w) => w.iter().map(|x| x * x).sum::<f64>(),
    };
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dt = 1.0 / sample_rate;
    let half = n / 2;
    let mut psd = Vec::with_capacity(half + 1);
    for (k, x) in buf.iter().take(half + 1).enumerate() {
        let single = k == 0 || (n % 2 == 0 && k == half);
        let f = if single { 1.0 } else { 2.0 };
        psd.push(f * x.norm_sqr() * dt / norm);
    }
    let bin_width = sample_rate / n as f64;
    Ok(SpectrumResult {
        frequencies: (0..=half).map(|k| k as f64 * bin_width).collect(),
        psd,
        bin_width,
        window,
        record_length: n as f64 * dt,
        sample_rate,
    })
}

/// PSD of samples with explicit timestamps; the spacing must be uniform.
pub fn psd_from_times(times: &[f64], values: &[f64]) -> Result<SpectrumResult> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::Spectrum("times and values must have equal length >= 2".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::Spectrum(format!(
                "non-uniform sampling at index {i}: step {:e} s, expected {dt:e} s",
                w[1] - w[0]
            )));
        }
    }
    psd(values, 1.0 / dt)
}

/// DFT coefficient at one bin, `X_k = Σ x_n e^{−2πikn/N}`.
pub fn dft_bin(series: &[f64], k: usize) -> Complex64 {
    let n = series.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &x) in series.iter().enumerate() {
        // Reduce k·j mod N exactly before the trigonometric call.
        let m = (k as u128 * j as u128 % n as u128) as f64;
        let (s, c) = (-2.0 * PI * m / n as f64).sin_cos();
        acc += Complex64::new(x * c, x * s);
    }
    acc
}

/// PSD value and sinusoid amplitude at the bin closest to `f`, without a full
/// FFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinPower {
    pub frequency: f64,
    pub psd: f64,
    /// Amplitude of a sinusoid at the bin frequency, `2|X_k|/N`.
    pub amplitude: f64,
}

pub fn bin_power(series: &[f64], sample_rate: f64, f: f64) -> Result<BinPower> {
    check_rate(sample_rate)?;
    let n = series.len();
    if n == 0 {
        return Err(Error::Spectrum("empty record".into()));
    }
    let k = ((f * n as f64 / sample_rate).round().max(0.0) as usize).min(n / 2);
    let x = dft_bin(series, k);
    let single = k == 0 || (n % 2 == 0 && k == n / 2);
    let factor = if single { 1.0 } else { 2.0 };
    Ok(BinPower {
        frequency: k as f64 * sample_rate / n as f64,
        psd: factor * x.norm_sqr() / (sample_rate * n as f64),
        amplitude: factor * x.norm() / n as f64,
    })
}

/// Running DFT at the bin nearest `f` for several prefix lengths of a stream,
/// so truncated-record powers come out of one pass without storing the record.
#[derive(Debug, Clone)]
pub struct PrefixBins {
    sample_rate: f64,
    counts: Vec<usize>,
    ks: Vec<usize>,
    acc: Vec<Complex64>,
    seen: usize,
}

impl PrefixBins {
    pub fn new(sample_rate: f64, f: f64, counts: &[usize]) -> Result<Self> {
        check_rate(sample_rate)?;
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Spectrum("prefix lengths must be positive".into()));
        }
        let ks = counts
            .iter()
            .map(|&n| ((f * n as f64 / sample_rate).round() as usize).min(n / 2))
            .collect();
        Ok(PrefixBins {
            sample_rate,
            counts: counts.to_vec(),
            ks,
            acc: vec![Complex64::new(0.0, 0.0); counts.len()],
            seen: 0,
        })
    }

    pub fn push(&mut self, x: f64) {
        let j = self.seen;
        for i in 0..self.counts.len() {
            let n = self.counts[i];
            if j < n {
                let m = (self.ks[i] as u128 * j as u128 % n as u128) as f64;
                let (s, c) = (-2.0 * PI * m / n as f64).sin_cos();
                self.acc[i] += Complex64::new(x * c, x * s);
            }
        }
        self.seen += 1;
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    /// Bin powers for every prefix that has been completely seen.
    pub fn powers(&self) -> Vec<Option<BinPower>> {
        (0..self.counts.len())
            .map(|i| {
                let n = self.counts[i];
                (self.seen >= n).then(|| {
                    let k = self.ks[i];
                    let single = k == 0 || (n % 2 == 0 && k == n / 2);
                    let factor = if single { 1.0 } else { 2.0 };
                    BinPower {
                        frequency: k as f64 * self.sample_rate / n as f64,
                        psd: factor * self.acc[i].norm_sqr() / (self.sample_rate * n as f64),
                        amplitude: factor * self.acc[i].norm() / n as f64,
                    }
                })
            })
            .collect()
    }
}

/// SNR in dB, or absence of a detectable signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snr {
    Db(f64),
    SignalAbsent,
}

impl Snr {
    pub fn db(self) -> Option<f64> {
        match self {
            Snr::Db(v) => Some(v),
            Snr::SignalAbsent => None,
        }
    }
}

/// `10·log10((P̄ − F)/F)` with `F = 4k_BTR`.
pub fn snr(mean_psd: f64, resonator: &ResonatorParams, constants: &PhysicalConstants) -> Result<Snr> {
    snr_with_floor(mean_psd, resonator.johnson_floor(constants))
}

pub fn snr_with_floor(mean_psd: f64, floor: f64) -> Result<Snr> {
    if !(mean_psd >= 0.0) || !(floor > 0.0) {
        return Err(Error::Domain(format!(
            "snr needs mean psd >= 0 and floor > 0, got {mean_psd}, {floor}"
        )));
    }
    Ok(if mean_psd <= floor {
        Snr::SignalAbsent
    } else {
        Snr::Db(10.0 * ((mean_psd - floor) / floor).log10())
    })
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpectrumStats {
    pub frequencies: Vec<f64>,
    pub mean_psd: Vec<f64>,
    /// Sample standard deviation per bin; absent for a single trajectory.
    pub std_psd: Option<Vec<f64>>,
    pub resonance_bin: usize,
    pub resonance_powers: Vec<f64>,
    pub count: usize,
}

/// Bin-wise mean and standard deviation over spectra of identical layout.
pub fn ensemble_stats(spectra: &[SpectrumResult], f_res: f64) -> Result<EnsembleSpectrumStats> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::Spectrum("empty ensemble".into()))?;
    if spectra
        .iter()
        .any(|s| s.psd.len() != first.psd.len() || s.bin_width != first.bin_width)
    {
        return Err(Error::Spectrum("ensemble spectra have different layouts".into()));
    }
    let m = first.psd.len();
    let n = spectra.len();
    let mut mean = vec![0.0; m];
    for s in spectra {
        for (a, p) in mean.iter_mut().zip(&s.psd) {
            *a += p / n as f64;
        }
    }
    let std = (n > 1).then(|| {
        (0..m)
            .map(|k| {
                (spectra.iter().map(|s| (s.psd[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            })
            .collect()
    });
    let bin = first.bin_of(f_res);
    Ok(EnsembleSpectrumStats {
        frequencies: first.frequencies.clone(),
        mean_psd: mean,
        std_psd: std,
        resonance_bin: bin,
        resonance_powers: spectra.iter().map(|s| s.psd[bin]).collect(),
        count: n,
    })
}

impl EnsembleSpectrumStats {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_Hz,mean_psd_V2_per_Hz,std_psd_V2_per_Hz")?;
        for k in 0..self.mean_psd.len() {
            let s = self.std_psd.as_ref().map(|s| s[k]).unwrap_or(f64::NAN);
            writeln!(w, "{:e},{:e},{:e}", self.frequencies[k], self.mean_psd[k], s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub time: f64,
    pub bin_frequency: f64,
    pub mean_psd: f64,
    pub std_psd: Option<f64>,
    /// `P̄ − 4k_BTR`.
    pub signal_power: f64,
    pub snr: Snr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrCurve {
    pub points: Vec<SnrPoint>,
    /// Signal power per second of record, anchored at the longest time.
    pub extrapolation_slope: f64,
    /// Least-squares line through `(time, signal_power)`: slope, intercept, R².
    pub fit: LinearFit,
}

impl SnrCurve {
    /// Extrapolated SNR at detection time `t`.
    pub fn extrapolate(&self, t: f64, floor: f64) -> Result<Snr> {
        snr_with_floor(floor + self.extrapolation_slope * t, floor)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, floor: f64) -> Result<()> {
        writeln!(w, "time_s,bin_frequency_Hz,mean_psd_V2_per_Hz,std_psd_V2_per_Hz,signal_power_V2_per_Hz,snr_dB,extrapolated_snr_dB")?;
        for p in &self.points {
            let fmt = |s: Snr| s.db().map(|v| format!("{v:e}")).unwrap_or_else(|| "absent".into());
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{},{}",
                p.time,
                p.bin_frequency,
                p.mean_psd,
                p.std_psd.unwrap_or(f64::NAN),
                p.signal_power,
                fmt(p.snr),
                fmt(self.extrapolate(p.time, floor)?)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Domain("linear fit needs two or more points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("linear fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// SNR versus detection time from per-trajectory resonance-bin powers.
/// `powers[j][i]` is the PSD of trajectory `j` truncated to `times[i]`.
pub fn snr_curve_from_powers(
    times: &[f64],
    bin_frequencies: &[f64],
    powers: &[Vec<f64>],
    floor: f64,
) -> Result<SnrCurve> {
    if powers.is_empty() {
        return Err(Error::Spectrum("empty ensemble".into()));
    }
    if times.is_empty() || bin_frequencies.len() != times.len() || powers.iter().any(|p| p.len() != times.len()) {
        return Err(Error::Spectrum("powers must have one entry per detection time".into()));
    }
    let mut points = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let column: Vec<f64> = powers.iter().map(|p| p[i]).collect();
        let (mean, std) = mean_std(&column);
        points.push(SnrPoint {
            time: t,
            bin_frequency: bin_frequencies[i],
            mean_psd: mean,
            std_psd: std,
            signal_power: mean - floor,
            snr: snr_with_floor(mean, floor)?,
        });
    }
    let last = points
        .iter()
        .max_by(|a, b| a.time.total_cmp(&b.time))
        .expect("non-empty");
    let extrapolation_slope = last.signal_power / last.time;
    let fit = if times.len() >= 2 {
        linear_fit(times, &points.iter().map(|p| p.signal_power).collect::<Vec<_>>())?
    } else {
        LinearFit {
            slope: extrapolation_slope,
            intercept: 0.0,
            r_squared: f64::NAN,
        }
    };
    Ok(SnrCurve {
        points,
        extrapolation_slope,
        fit,
    })
}

/// Truncates each record to every detection time and evaluates the
/// resonance-bin PSD.
pub fn snr_vs_time(
    records: &[Vec<f64>],
    sample_rate: f64,
    times: &[f64],
    f_res: f64,
    floor: f64,
) -> Result<SnrCurve> {
    let counts: Vec<usize> = times.iter().map(|t| (t * sample_rate).round() as usize).collect();
    let mut bin_f = vec![0.0; times.len()];
    let mut powers = Vec::with_capacity(records.len());
    for r in records {
        let mut row = Vec::with_capacity(times.len());
        for (i, &n) in counts.iter().enumerate() {
            if n == 0 || n > r.len() {
                return Err(Error::Spectrum(format!(
                    "detection time {:e} s exceeds the record length {:e} s",
                    times[i],
                    r.len() as f64 / sample_rate
                )));
            }
            let b = bin_power(&r[..n], sample_rate, f_res)?;
            bin_f[i] = b.frequency;
            row.push(b.psd);
        }
        powers.push(row);
    }
    snr_curve_from_powers(times, &bin_f, &powers, floor)
}

/// Non-central χ² distribution of `P = scale·χ'²_k(λ)`. With one degree of
/// freedom, `P = (V_s + V_n)²` for `V_n ~ N(0, scale)` and `λ = V_s²/scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoncentralChiSquared {
    pub dof: f64,
    pub noncentrality: f64,
    pub scale: f64,
}

impl NoncentralChiSquared {
    pub fn new(dof: f64, noncentrality: f64, scale: f64) -> Result<Self> {
        if !(dof > 0.0 && noncentrality >= 0.0 && scale > 0.0) || !noncentrality.is_finite() {
            return Err(Error::Domain(format!(
                "invalid non-central chi-squared: dof {dof}, lambda {noncentrality}, scale {scale}"
            )));
        }
        Ok(NoncentralChiSquared {
            dof,
            noncentrality,
            scale,
        })
    }

    /// Resonance-bin power model for signal amplitude density `vs` over the
    /// floor `4k_BTR`, the noise power split evenly over `dof` components:
    /// scale `floor/dof`, so the mean is `vs² + floor` for any `dof`.
    pub fn for_signal(vs: f64, floor: f64, dof: f64) -> Result<Self> {
        if !(vs >= 0.0) {
            return Err(Error::Domain(format!("signal density must be >= 0, got {vs}")));
        }
        if !(floor > 0.0 && dof > 0.0) {
            return Err(Error::Domain(format!("floor and dof must be positive, got {floor} and {dof}")));
        }
        let scale = floor / dof;
        Self::new(dof, vs * vs / scale, scale)
    }

    pub fn mean(&self) -> f64 {
        self.scale * (self.dof + self.noncentrality)
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * 2.0 * (self.dof + 2.0 * self.noncentrality)
    }

    /// Poisson-mixture weights `e^{−λ/2}(λ/2)^j/j!` until the tail is below
    /// 1e-16.
    fn mixture(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * self.noncentrality;
        let j_max = (half + 12.0 * half.sqrt() + 40.0).ceil() as usize;
        // Start at the mode and walk both ways for numerical stability.
        let mode = half.floor() as usize;
        let ln_w_mode = -half + mode as f64 * half.max(f64::MIN_POSITIVE).ln() - ln_factorial(mode);
        let w_mode = if half == 0.0 { 1.0 } else { ln_w_mode.exp() };
        let mut weights = vec![0.0; j_max + 1];
        weights[mode.min(j_max)] = w_mode;
        for j in (mode + 1)..=j_max {
            weights[j] = weights[j - 1] * half / j as f64;
        }
        for j in (0..mode.min(j_max)).rev() {
            weights[j] = weights[j + 1] * (j + 1) as f64 / half;
        }
        weights
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .map(move |(j, w)| (w, self.dof + 2.0 * j as f64))
    }

    pub fn cdf(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let x = p / self.scale;
        if self.dof == 1.0 {
            let (sx, sl) = (x.sqrt(), self.noncentrality.sqrt());
            return (std_normal_cdf(sx - sl) - std_normal_cdf(-sx - sl)).clamp(0.0, 1.0);
        }
        self.mixture()
            .map(|(w, k)| w * ChiSquared::new(k).expect("positive dof").cdf(x))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn pdf(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let x = p / self.scale;
        if self.dof == 1.0 {
            let (sx, sl) = (x.sqrt(), self.noncentrality.sqrt());
            let v = ((-(sx - sl).powi(2) / 2.0).exp() + (-(sx + sl).powi(2) / 2.0).exp())
                / (2.0 * (2.0 * PI * x).sqrt());
            return v / self.scale;
        }
        self.mixture()
            .map(|(w, k)| w * ChiSquared::new(k).expect("positive dof").pdf(x))
            .sum::<f64>()
            / self.scale
    }

    /// Draw with integer `dof` as a sum of squared shifted Gaussians.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let k = self.dof.round().max(1.0) as usize;
        let shift = self.noncentrality.sqrt();
        let mut s = 0.0;
        for i in 0..k {
            let z = rng.standard_normal() + if i == 0 { shift } else { 0.0 };
            s += z * z;
        }
        self.scale * s
    }
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Samples of the resonance-bin power `P = (V_s + V_n)²`, `V_n ~ N(0, floor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStats {
    pub distribution: NoncentralChiSquared,
    pub samples: Vec<f64>,
}

pub fn noncentral_power_stats(vs: f64, floor: f64, n: usize, rng: &mut RngStream) -> Result<PowerStats> {
    let distribution = NoncentralChiSquared::for_signal(vs, floor, 1.0)?;
    let sd = floor.sqrt();
    let samples = (0..n)
        .map(|_| {
            let v = vs + sd * rng.standard_normal();
            v * v
        })
        .collect();
    Ok(PowerStats {
        distribution,
        samples,
    })
}

/// Independent power draws at successive time points, `(t, P)`.
pub fn burst_series(vs: f64, floor: f64, times: &[f64], rng: &mut RngStream) -> Result<Vec<(f64, f64)>> {
    let stats = noncentral_power_stats(vs, floor, times.len(), rng)?;
    Ok(times.iter().copied().zip(stats.samples).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against `cdf`, asymptotic p-value with
/// Stephens' small-sample correction.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("KS test needs finite samples".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
        n: s.len(),
    })
}

/// `Q_KS(λ) = 2 Σ (−1)^{j−1} e^{−2j²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sine_on_bin_has_half_square_amplitude() {
        let fs = 4.096e9;
        let n = 8192;
        let f = 200e6;
        let v0 = 3e-7;
        let x: Vec<f64> = (0..n).map(|i| v0 * (2.0 * PI * f * i as f64 / fs).sin()).collect();
        let s = psd(&x, fs).unwrap();
        assert_relative_eq!(s.at(f) * s.bin_width, v0 * v0 / 2.0, max_relative = 1e-3);
        assert_relative_eq!(s.total_power(), v0 * v0 / 2.0, max_relative = 1e-9);
        let b = bin_power(&x, fs, f).unwrap();
        assert_relative_eq!(b.psd, s.at(f), max_relative = 1e-9);
        assert_relative_eq!(b.amplitude, v0, max_relative = 1e-9);
        assert_eq!(b.frequency, f);
    }

    #[test]
    fn zero_record_and_short_record() {
        let s = psd(&vec![0.0; 2048], 1e6).unwrap();
        assert!(s.psd.iter().all(|&p| p == 0.0));
        assert!(matches!(psd(&[1.0; 100], 1e6), Err(Error::Spectrum(_))));
    }

    #[test]
    fn non_uniform_times_rejected() {
        let mut t: Vec<f64> = (0..2048).map(|i| i as f64 * 1e-9).collect();
        let v = vec![0.0; 2048];
        assert!(psd_from_times(&t, &v).is_ok());
        t[1000] += 0.3e-9;
        assert!(matches!(psd_from_times(&t, &v), Err(Error::Spectrum(_))));
    }

    #[test]
    fn white_noise_floor_matches_density() {
        let fs = 1e9;
        let density: f64 = 6.63e-17;
        let sd = (density * fs / 2.0).sqrt();
        let mut rng = RngStream::new(3, 0);
        let x: Vec<f64> = (0..1 << 18).map(|_| sd * rng.standard_normal()).collect();
        let s = psd(&x, fs).unwrap();
        assert_relative_eq!(s.band_mean(1e6, 4.9e8), density, max_relative = 0.02);
    }

    #[test]
    fn snr_examples() {
        let res = ResonatorParams::default();
        let k = PhysicalConstants::CODATA;
        let f = res.johnson_floor(&k);
        assert_relative_eq!(f, 6.63e-17, max_relative = 1e-3);
        assert_relative_eq!(snr(2.0 * f, &res, &k).unwrap().db().unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(snr(11.0 * f, &res, &k).unwrap().db().unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(snr(f, &res, &k).unwrap(), Snr::SignalAbsent);
        assert!(snr(-1.0, &res, &k).is_err());
    }

    #[test]
    fn prefix_bins_match_direct_dft() {
        let fs = 4.096e9;
        let mut rng = RngStream::new(5, 1);
        let x: Vec<f64> = (0..20_000)
            .map(|i| (2.0 * PI * 200e6 * i as f64 / fs).cos() + rng.standard_normal())
            .collect();
        let counts = [4096, 10_000, 20_000];
        let mut pb = PrefixBins::new(fs, 200e6, &counts).unwrap();
        for &v in &x[..12_000] {
            pb.push(v);
        }
        let partial = pb.powers();
        assert!(partial[2].is_none());
        for &v in &x[12_000..] {
            pb.push(v);
        }
        for (p, &n) in pb.powers().iter().zip(&counts) {
            let direct = bin_power(&x[..n], fs, 200e6).unwrap();
            let p = p.unwrap();
            assert_relative_eq!(p.psd, direct.psd, max_relative = 1e-9);
            assert_eq!(p.frequency, direct.frequency);
        }
    }

    #[test]
    fn ensemble_stats_single_trajectory() {
        let s = psd(&(0..2048).map(|i| (i as f64).sin()).collect::<Vec<_>>(), 1e3).unwrap();
        let e = ensemble_stats(std::slice::from_ref(&s), 100.0).unwrap();
        assert!(e.std_psd.is_none());
        assert_eq!(e.mean_psd, s.psd);
        assert_eq!(e.count, 1);
    }

    #[test]
    fn snr_curve_noise_only_is_absent() {
        let fs = 4.096e9;
        let floor: f64 = 6.63e-17;
        let sd = (floor * fs / 2.0).sqrt();
        let records: Vec<Vec<f64>> = (0..4)
            .map(|j| {
                let mut rng = RngStream::new(11, j);
                (0..40_960).map(|_| 0.2 * sd * rng.standard_normal()).collect()
            })
            .collect();
        let c = snr_vs_time(&records, fs, &[2.5e-6, 5e-6, 1e-5], 200e6, floor).unwrap();
        assert!(c.points.iter().all(|p| p.snr == Snr::SignalAbsent));
        assert!(snr_vs_time(&records, fs, &[1e-3], 200e6, floor).is_err());
    }

    #[test]
    fn coherent_signal_power_grows_linearly() {
        let fs = 4.096e9;
        let v0 = 1e-6;
        let rec: Vec<f64> = (0..81_920).map(|i| v0 * (2.0 * PI * 200e6 * i as f64 / fs).cos()).collect();
        let c = snr_vs_time(&[rec], fs, &[5e-6, 1e-5, 2e-5], 200e6, 1e-30).unwrap();
        let p: Vec<f64> = c.points.iter().map(|p| p.signal_power).collect();
        assert_relative_eq!(p[1] / p[0], 2.0, max_relative = 1e-6);
        assert_relative_eq!(p[2] / p[1], 2.0, max_relative = 1e-6);
        assert!(c.fit.r_squared > 0.999999);
        assert_relative_eq!(c.extrapolation_slope, v0 * v0 / 2.0, max_relative = 1e-6);
    }

    #[test]
    fn noncentral_one_dof_closed_form_matches_mixture() {
        for &lambda in &[0.0, 0.3, 2.0, 17.0] {
            let d = NoncentralChiSquared::new(1.0, lambda, 2.0).unwrap();
            let general = NoncentralChiSquared::new(1.0 + 1e-13, lambda, 2.0).unwrap();
            for &p in &[0.01, 0.5, 2.0, 9.0, 40.0] {
                assert_relative_eq!(d.cdf(p), general.cdf(p), epsilon = 1e-9);
                assert_relative_eq!(d.pdf(p), general.pdf(p), max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn noncentral_moments_and_sampling() {
        let floor: f64 = 6.63e-17;
        let vs = (floor * 2.0).sqrt();
        let mut rng = RngStream::new(21, 2);
        let stats = noncentral_power_stats(vs, floor, 1_000_000, &mut rng).unwrap();
        let mean = stats.samples.iter().sum::<f64>() / stats.samples.len() as f64;
        assert_relative_eq!(mean, vs * vs + floor, max_relative = 0.01);
        assert_relative_eq!(stats.distribution.mean(), vs * vs + floor, max_relative = 1e-12);
        let ks = ks_test(&stats.samples[..5000], |p| stats.distribution.cdf(p)).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
        let zero = NoncentralChiSquared::for_signal(0.0, floor, 1.0).unwrap();
        assert_relative_eq!(zero.mean(), floor, max_relative = 1e-12);
        // Two components: a complex bin; pure noise is exponential.
        let two = NoncentralChiSquared::for_signal(vs, floor, 2.0).unwrap();
        assert_relative_eq!(two.mean(), vs * vs + floor, max_relative = 1e-12);
        let expo = NoncentralChiSquared::for_signal(0.0, floor, 2.0).unwrap();
        for p in [0.3 * floor, floor, 4.0 * floor] {
            assert_relative_eq!(expo.cdf(p), 1.0 - (-p / floor).exp(), max_relative = 1e-10);
        }
    }

    #[test]
    fn three_db_leaves_many_low_draws() {
        let floor: f64 = 6.63e-17;
        // SNR = 3 dB means Vs² ≈ 2·floor.
        let vs = (floor * 10f64.powf(0.3)).sqrt();
        let mut rng = RngStream::new(1, 9);
        let s = noncentral_power_stats(vs, floor, 100_000, &mut rng).unwrap();
        let below = s.samples.iter().filter(|&&p| p < floor).count() as f64 / 1e5;
        assert!(below > 0.15, "{below}");
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 1e-3).collect();
        let b = burst_series(vs, floor, &ts, &mut rng).unwrap();
        assert_eq!(b.len(), 50);
    }

    #[test]
    fn ks_rejects_wrong_distribution() {
        let mut rng = RngStream::new(2, 2);
        let x: Vec<f64> = (0..2000).map(|_| rng.standard_normal() + 0.3).collect();
        let ks = ks_test(&x, std_normal_cdf).unwrap();
        assert!(ks.p_value < 1e-6);
        let y: Vec<f64> = (0..2000).map(|_| rng.standard_normal()).collect();
        assert!(ks_test(&y, std_normal_cdf).unwrap().p_value > 0.01);
    }

    proptest! {
        #[test]
        fn parseval_holds(seed in 0u64..1000, n in 1024usize..3000, fs in 1e3f64..1e10) {
            let mut rng = RngStream::new(seed, 0);
            let x: Vec<f64> = (0..n).map(|_| rng.standard_normal() + 0.1).collect();
            let s = psd(&x, fs).unwrap();
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
            prop_assert!((s.total_power() - ms).abs() <= 1e-9 * ms);
        }

        #[test]
        fn shift_by_whole_samples_keeps_noise_power_in_bounds(seed in 0u64..200, shift in 1usize..500) {
            let fs = 1e9;
            let mut rng = RngStream::new(seed, 4);
            let x: Vec<f64> = (0..8192 + 500).map(|_| rng.standard_normal()).collect();
            let a = psd(&x[..8192], fs).unwrap();
            let b = psd(&x[shift..shift + 8192], fs).unwrap();
            let ma = a.band_mean(1e8, 2e8);
            let mb = b.band_mean(1e8, 2e8);
            prop_assert!((ma - mb).abs() < 0.25 * ma);
        }
    }
}
