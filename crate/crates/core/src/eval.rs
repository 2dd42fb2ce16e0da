//! Quantitative evaluation: power-spectrum metrics (entropy ratio and
//! symmetric KL), sample diversity, and representation-power scores from a
//! deterministic teacher-forced pass.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::autodiff::{SubstrateError, Tape, Tensor};
use crate::model::{ModelKind, ModelParams};
use crate::motion::MotionSequence;
use crate::objective::{kl_unit_gaussian, stream_kl, KlPenalty, LossWeights, ObjectiveError};

/// Smoothing constant added to normalized spectra before entropy and KL.
pub const SPECTRUM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence too short: {0}")]
    TooShort(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty report")]
    EmptyReport,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A frames-by-dimensions value matrix extracted from a sequence (or any
/// other source of per-frame feature vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    frames: usize,
    dims: usize,
    values: Vec<f64>,
}

impl FeatureSeries {
    pub fn new(frames: usize, dims: usize, values: Vec<f64>) -> Result<Self, EvalError> {
        if values.len() != frames * dims {
            return Err(EvalError::Mismatch(format!(
                "{} values for {frames} x {dims}",
                values.len()
            )));
        }
        Ok(FeatureSeries { frames, dims, values })
    }

    pub fn from_sequence(seq: &MotionSequence) -> Self {
        let dims = seq.frame_dim();
        let mut values = Vec::with_capacity(seq.len() * dims);
        for f in seq.frames() {
            values.extend_from_slice(&f.to_vec());
        }
        FeatureSeries {
            frames: seq.len(),
            dims,
            values,
        }
    }

    /// Feature matrix of the frames from `start` on.
    pub fn from_sequence_tail(seq: &MotionSequence, start: usize) -> Result<Self, EvalError> {
        if start >= seq.len() {
            return Err(EvalError::TooShort(format!(
                "tail start {start} >= length {}",
                seq.len()
            )));
        }
        let dims = seq.frame_dim();
        let mut values = Vec::new();
        for f in &seq.frames()[start..] {
            values.extend_from_slice(&f.to_vec());
        }
        Ok(FeatureSeries {
            frames: seq.len() - start,
            dims,
            values,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn value(&self, frame: usize, dim: usize) -> f64 {
        self.values[frame * self.dims + dim]
    }

    /// Truncates to the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> FeatureSeries {
        assert!(frames <= self.frames);
        FeatureSeries {
            frames,
            dims: self.dims,
            values: self.values[..frames * self.dims].to_vec(),
        }
    }
}

/// Per-dimension normalized power spectra over DC..Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    dims: usize,
    bins: usize,
    /// Row-major `dims x bins`; every row sums to 1 and every weight is
    /// strictly positive after smoothing.
    weights: Vec<f64>,
}

impl PowerSpectrum {
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row(&self, dim: usize) -> &[f64] {
        &self.weights[dim * self.bins..(dim + 1) * self.bins]
    }

    /// Bin with the largest weight for one dimension.
    pub fn argmax_bin(&self, dim: usize) -> usize {
        let row = self.row(dim);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

/// Real-input power spectrum per feature dimension over the full series (no
/// windowing): squared FFT magnitudes from DC through Nyquist, normalized to
/// a distribution, then smoothed with [`SPECTRUM_EPS`] and renormalized so
/// every bin stays strictly positive.
pub fn power_spectrum(series: &FeatureSeries) -> Result<PowerSpectrum, EvalError> {
    let n = series.frames;
    if n < 2 {
        return Err(EvalError::TooShort(format!(
            "power spectrum needs >= 2 frames, got {n}"
        )));
    }
    let bins = n / 2 + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut weights = Vec::with_capacity(series.dims * bins);
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    for d in 0..series.dims {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(series.value(i, d), 0.0);
        }
        fft.process(&mut buf);
        let mut power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        if total > 0.0 {
            for p in &mut power {
                *p /= total;
            }
        }
        let smoothed_total: f64 = power.iter().map(|p| p + SPECTRUM_EPS).sum();
        for p in &power {
            weights.push((p + SPECTRUM_EPS) / smoothed_total);
        }
    }
    Ok(PowerSpectrum {
        dims: series.dims,
        bins,
        weights,
    })
}

fn entropy(w: &[f64]) -> f64 {
    -w.iter().map(|&p| p * p.ln()).sum::<f64>()
}

fn check_compatible(a: &PowerSpectrum, b: &PowerSpectrum) -> Result<(), EvalError> {
    if a.dims != b.dims || a.bins != b.bins {
        return Err(EvalError::Mismatch(format!(
            "spectra {}x{} vs {}x{}",
            a.dims, a.bins, b.dims, b.bins
        )));
    }
    Ok(())
}

/// Power spectrum entropy ratio: mean over dimensions of
/// `(H_gen - H_gt) / H_gt`. Zero is best; positive values indicate noise,
/// negative values a lack of variation.
pub fn pser(gen: &PowerSpectrum, gt: &PowerSpectrum) -> Result<f64, EvalError> {
    check_compatible(gen, gt)?;
    let mut acc = 0.0;
    for d in 0..gen.dims {
        let hg = entropy(gen.row(d));
        let ht = entropy(gt.row(d));
        acc += (hg - ht) / ht;
    }
    Ok(acc / gen.dims as f64)
}

/// Symmetric power spectrum KL divergence: mean over dimensions of
/// `(KL(gt||gen) + KL(gen||gt)) / 2`. Lower is better.
pub fn pskld(gen: &PowerSpectrum, gt: &PowerSpectrum) -> Result<f64, EvalError> {
    check_compatible(gen, gt)?;
    let kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(&p, &q)| p * (p / q).ln()).sum()
    };
    let mut acc = 0.0;
    for d in 0..gen.dims {
        let g = gen.row(d);
        let t = gt.row(d);
        acc += 0.5 * (kl(t, g) + kl(g, t));
    }
    Ok(acc / gen.dims as f64)
}

/// Truncates both series to their common length and returns
/// `(pser, pskld)` of `gen` against `gt`.
pub fn spectral_compare(gen: &FeatureSeries, gt: &FeatureSeries) -> Result<(f64, f64), EvalError> {
    if gen.dims != gt.dims {
        return Err(EvalError::Mismatch(format!(
            "feature dims {} vs {}",
            gen.dims, gt.dims
        )));
    }
    let n = gen.frames.min(gt.frames);
    let sg = power_spectrum(&gen.truncated(n))?;
    let st = power_spectrum(&gt.truncated(n))?;
    Ok((pser(&sg, &st)?, pskld(&sg, &st)?))
}

/// Mean over frames and feature dimensions of the population standard
/// deviation across the K samples.
pub fn diversity(samples: &[FeatureSeries]) -> Result<f64, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::Mismatch(format!(
            "diversity needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    let (frames, dims) = (samples[0].frames, samples[0].dims);
    for (i, s) in samples.iter().enumerate() {
        if s.frames != frames || s.dims != dims {
            return Err(EvalError::Mismatch(format!(
                "sample {i} is {}x{}, expected {frames}x{dims}",
                s.frames, s.dims
            )));
        }
    }
    let k = samples.len() as f64;
    let mut acc = 0.0;
    for f in 0..frames {
        for d in 0..dims {
            let first = samples[0].value(f, d);
            if samples.iter().all(|s| s.value(f, d) == first) {
                // Identical samples contribute exactly zero; skipping the
                // arithmetic avoids rounding in mean subtraction.
                continue;
            }
            let mean: f64 = samples.iter().map(|s| s.value(f, d)).sum::<f64>() / k;
            let var: f64 = samples
                .iter()
                .map(|s| {
                    let e = s.value(f, d) - mean;
                    e * e
                })
                .sum::<f64>()
                / k;
            acc += var.sqrt();
        }
    }
    Ok(acc / (frames * dims) as f64)
}

/// Representation-power scores of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprPowerRow {
    pub e_rec: f64,
    pub e_trec: f64,
    /// Absent for the deterministic Q model, which trains without a KL term.
    pub neg_log_p: Option<f64>,
}

/// Teacher-forced evaluation over full sequences with deterministic latents
/// (`z = mu`): per sequence, the frame reconstruction error, the
/// time-difference reconstruction error, and the negative ELBO
/// `e_rec + lambda_ts * e_trec + lambda_kl * mean(stream KLs)`.
pub fn repr_power_eval(
    params: &ModelParams,
    dataset: &[MotionSequence],
    weights: &LossWeights,
    penalty: KlPenalty,
) -> Result<Vec<ReprPowerRow>, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let frame_dim = params.frame_dim();
    let n_streams = params.stream_count();
    let use_kl = params.config().kind != ModelKind::Q;

    let mut rows = Vec::with_capacity(dataset.len());
    for seq in dataset {
        if seq.len() < 3 {
            return Err(EvalError::TooShort(format!(
                "representation-power evaluation needs >= 3 frames, got {}",
                seq.len()
            )));
        }
        if seq.frame_dim() != frame_dim {
            return Err(EvalError::Mismatch(format!(
                "sequence frame dim {} vs model {}",
                seq.frame_dim(),
                frame_dim
            )));
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let base = tape.mark();
        let mut state = bound.zero_state(&mut tape);

        let mut sum_abs_trans = 0.0;
        let mut sum_abs_pose = 0.0;
        let mut td_abs_trans = 0.0;
        let mut td_abs_pose = 0.0;
        let mut phis: Vec<Vec<f64>> = vec![Vec::with_capacity(seq.len() - 1); n_streams];
        let mut prev_pred: Option<Vec<f64>> = None;
        let mut prev_target: Option<Vec<f64>> = None;

        for i in 1..seq.len() {
            let prev = tape.input(Tensor::from_raw(vec![frame_dim], seq.frame(i - 1).to_vec()));
            let out = bound.step(&mut tape, prev, &state, None)?;
            let pred = tape.value(out.frame).data().to_vec();
            for (s, post) in out.posteriors.iter().enumerate() {
                phis[s].push(kl_unit_gaussian(&post.values(&tape)).max(0.0));
            }
            // Compact the tape: keep parameters, re-seed the state.
            let state_values = out.state.capture(&tape);
            tape.rollback(base);
            state = params.seed_state(&mut tape, &state_values);

            let target = seq.frame(i).to_vec();
            for d in 0..frame_dim {
                let err = (pred[d] - target[d]).abs();
                if d < 3 {
                    sum_abs_trans += err;
                } else {
                    sum_abs_pose += err;
                }
            }
            if let (Some(pp), Some(pt)) = (&prev_pred, &prev_target) {
                for d in 0..frame_dim {
                    let err = ((pred[d] - pp[d]) - (target[d] - pt[d])).abs();
                    if d < 3 {
                        td_abs_trans += err;
                    } else {
                        td_abs_pose += err;
                    }
                }
            }
            prev_pred = Some(pred);
            prev_target = Some(target);
        }

        let steps = (seq.len() - 1) as f64;
        let diff_steps = (seq.len() - 2) as f64;
        let pose_dim = (frame_dim - 3) as f64;
        let e_rec = sum_abs_trans / (3.0 * steps) + sum_abs_pose / (pose_dim * steps);
        let e_trec = td_abs_trans / (3.0 * diff_steps) + td_abs_pose / (pose_dim * diff_steps);
        let neg_log_p = if use_kl {
            let mut kl_mean = 0.0;
            for stream_phis in &phis {
                let kl = match penalty {
                    KlPenalty::Charbonnier => stream_kl(stream_phis)?,
                    KlPenalty::Identity => stream_phis.iter().sum(),
                };
                kl_mean += kl;
            }
            kl_mean /= n_streams as f64;
            Some(e_rec + weights.lambda_ts * e_trec + weights.lambda_kl * kl_mean)
        } else {
            None
        };
        rows.push(ReprPowerRow { e_rec, e_trec, neg_log_p });
    }
    Ok(rows)
}

type MetricGetter = fn(&EvalRow) -> Option<f64>;

/// One report row; absent metrics stay empty in the CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRow {
    pub name: String,
    pub e_rec: Option<f64>,
    pub e_trec: Option<f64>,
    pub neg_log_p: Option<f64>,
    pub pser: Option<f64>,
    pub pskld: Option<f64>,
    pub diversity: Option<f64>,
}

impl EvalRow {
    pub fn named(name: impl Into<String>) -> Self {
        EvalRow {
            name: name.into(),
            ..Default::default()
        }
    }

    fn columns(&self) -> [Option<f64>; 6] {
        [
            self.e_rec,
            self.e_trec,
            self.neg_log_p,
            self.pser,
            self.pskld,
            self.diversity,
        ]
    }
}

/// Column means over present values; absent columns stay absent.
pub fn aggregate_rows(rows: &[EvalRow]) -> EvalRow {
    let mut sums = [0.0f64; 6];
    let mut counts = [0usize; 6];
    for row in rows {
        for (i, v) in row.columns().iter().enumerate() {
            if let Some(v) = v {
                sums[i] += v;
                counts[i] += 1;
            }
        }
    }
    let pick = |i: usize| {
        if counts[i] > 0 {
            Some(sums[i] / counts[i] as f64)
        } else {
            None
        }
    };
    EvalRow {
        name: "aggregate".into(),
        e_rec: pick(0),
        e_trec: pick(1),
        neg_log_p: pick(2),
        pser: pick(3),
        pskld: pick(4),
        diversity: pick(5),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Renders rows plus the aggregate row as CSV.
pub fn report_csv(rows: &[EvalRow]) -> Result<String, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut out = String::from("sequence,e_rec,e_trec,neg_log_p,pser,pskld,diversity\n");
    let mut write_row = |row: &EvalRow| {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.name,
            cell(row.e_rec),
            cell(row.e_trec),
            cell(row.neg_log_p),
            cell(row.pser),
            cell(row.pskld),
            cell(row.diversity),
        ));
    };
    for row in rows {
        write_row(row);
    }
    write_row(&aggregate_rows(rows));
    Ok(out)
}

/// Writes one two-column `<metric>.txt` series (row index, value) per
/// metric that has data.
pub fn write_plot_series(dir: impl AsRef<Path>, rows: &[EvalRow]) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let metrics: [(&str, MetricGetter); 6] = [
        ("e_rec", |r| r.e_rec),
        ("e_trec", |r| r.e_trec),
        ("neg_log_p", |r| r.neg_log_p),
        ("pser", |r| r.pser),
        ("pskld", |r| r.pskld),
        ("diversity", |r| r.diversity),
    ];
    for (name, get) in metrics {
        let mut series = String::new();
        for (i, row) in rows.iter().enumerate() {
            if let Some(v) = get(row) {
                series.push_str(&format!("{i} {v}\n"));
            }
        }
        if !series.is_empty() {
            std::fs::write(dir.join(format!("{name}.txt")), series)?;
        }
    }
    Ok(())
}

/// Writes the report CSV; with `plot_dir` set, also writes the per-metric
/// plot series.
pub fn emit_report(
    rows: &[EvalRow],
    path: impl AsRef<Path>,
    plot_dir: Option<&Path>,
) -> Result<(), EvalError> {
    let csv = report_csv(rows)?;
    std::fs::write(path, csv)?;
    if let Some(dir) = plot_dir {
        write_plot_series(dir, rows)?;
    }
    Ok(())
}
