//! TTCF traces and their windowed, zero-padded Fourier transforms.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::Operator;

/// Shortest trace accepted by [`spectrum`].
pub const MIN_TRACE_LEN: usize = 8;

/// `TTCF(t_k) = tr(A 𝒫(t_k))` on a uniform grid starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationTrace {
    pub dt: f64,
    pub values: Vec<C64>,
    /// Names of `A` and `B`.
    pub labels: (String, String),
}

impl CorrelationTrace {
    pub fn new(dt: f64, values: Vec<C64>, a: &str, b: &str) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            });
        }
        Ok(Self {
            dt,
            values,
            labels: (a.to_string(), b.to_string()),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| k as f64 * self.dt)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Every `stride`-th sample, keeping `t = 0`.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter {
                name: "stride",
                reason: "must be >= 1".into(),
            });
        }
        Ok(Self {
            dt: self.dt * stride as f64,
            values: self.values.iter().step_by(stride).copied().collect(),
            labels: self.labels.clone(),
        })
    }
}

/// Pointwise `tr(A 𝒫_k)`.
pub fn ttcf_trace(p_series: &[Operator], dt: f64, a: &Operator, labels: (&str, &str)) -> Result<CorrelationTrace> {
    let sparse = a.to_sparse();
    let mut values = Vec::with_capacity(p_series.len());
    for p in p_series {
        if p.shape() != a.shape() {
            return Err(Error::InvalidDimension(format!(
                "observable shape {:?} vs operator shape {:?}",
                a.shape(),
                p.shape()
            )));
        }
        let flat: Vec<C64> = p.matrix().iter().copied().collect();
        values.push(sparse.trace_product(&flat));
    }
    CorrelationTrace::new(dt, values, labels.0, labels.1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    None,
    #[default]
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::None => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / (n - 1) as f64).cos()))
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::None => "none",
            Window::Hann => "hann",
        }
    }
}

/// `S(ω_j) = dt Σ_k w_k x_k e^{−iω_j t_k}` on the padded grid, ordered from
/// negative to positive frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumTrace {
    pub omega: Vec<f64>,
    pub values: Vec<C64>,
    pub window: Window,
    pub pad_factor: usize,
}

impl SpectrumTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.arg()).collect()
    }

    /// Grid spacing `2π / (N_pad dt)`.
    pub fn d_omega(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }
}

pub fn spectrum(trace: &CorrelationTrace, window: Window, pad_factor: usize) -> Result<SpectrumTrace> {
    let n = trace.len();
    if n < MIN_TRACE_LEN {
        return Err(Error::TraceTooShort {
            len: n,
            min: MIN_TRACE_LEN,
        });
    }
    if pad_factor == 0 {
        return Err(Error::InvalidParameter {
            name: "pad_factor",
            reason: "must be >= 1".into(),
        });
    }
    let n_pad = n * pad_factor;
    let mut buf = vec![C64::new(0.0, 0.0); n_pad];
    for ((b, &x), w) in buf.iter_mut().zip(&trace.values).zip(window.weights(n)) {
        *b = x * w;
    }
    FftPlanner::new().plan_fft_forward(n_pad).process(&mut buf);

    // shift so that index 0 holds the most negative frequency
    let shift = n_pad / 2;
    let d_omega = 2.0 * PI / (n_pad as f64 * trace.dt);
    let mut omega = Vec::with_capacity(n_pad);
    let mut values = Vec::with_capacity(n_pad);
    for i in 0..n_pad {
        let j = (i + n_pad - shift) % n_pad;
        let signed = if j >= n_pad - shift { j as f64 - n_pad as f64 } else { j as f64 };
        omega.push(signed * d_omega);
        values.push(buf[j] * trace.dt);
    }
    Ok(SpectrumTrace {
        omega,
        values,
        window,
        pad_factor,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub omega: f64,
    pub magnitude: f64,
}

/// Local maxima of `|S|` above `rel_threshold · max|S|`, largest first.
pub fn peak_census(s: &SpectrumTrace, rel_threshold: f64) -> Vec<Peak> {
    let mag = s.magnitude();
    let top = mag.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Vec::new();
    }
    let cut = rel_threshold * top;
    let last = mag.len() - 1;
    let mut peaks: Vec<Peak> = (0..mag.len())
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { mag[i - 1] };
            let right = if i == last { f64::NEG_INFINITY } else { mag[i + 1] };
            mag[i] > cut && mag[i] > left && mag[i] >= right
        })
        .map(|i| Peak {
            omega: s.omega[i],
            magnitude: mag[i],
        })
        .collect();
    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.omega.total_cmp(&b.omega)));
    peaks
}

/// Full width at half maximum of the dominant `|S|` peak, with linear
/// interpolation at the half-height crossings. `None` if the peak does not
/// fall to half height inside the grid.
pub fn fwhm(s: &SpectrumTrace) -> Option<f64> {
    let mag = s.magnitude();
    let (imax, &top) = mag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(top > 0.0) {
        return None;
    }
    let half = 0.5 * top;
    let mut lo = imax;
    while lo > 0 && mag[lo] > half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < mag.len() && mag[hi] > half {
        hi += 1;
    }
    if mag[lo] > half || mag[hi] > half {
        return None;
    }
    let cross = |a: usize, b: usize| {
        let f = (half - mag[a]) / (mag[b] - mag[a]);
        s.omega[a] + f * (s.omega[b] - s.omega[a])
    };
    Some(cross(hi, hi - 1) - cross(lo, lo + 1))
}
