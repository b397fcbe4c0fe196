//! Residual norm-ratio traces, attention-distance statistics and argmax
//! attention maps, with their CSV/JSON report formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wingan_tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse_err(line: usize, detail: impl Into<String>) -> ReportError {
    ReportError::Parse {
        line,
        detail: detail.into(),
    }
}

/// `‖shortcut‖₂ / ‖branch‖₂`, `+∞` when the branch is exactly zero.
pub fn norm_ratio(shortcut_norm: f64, branch_norm: f64) -> f64 {
    if branch_norm == 0.0 {
        f64::INFINITY
    } else {
        shortcut_norm / branch_norm
    }
}

/// One residual sub-layer: `A{i}` for attention, `M{i}` for MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TapRecord {
    pub label: String,
    pub resolution: (usize, usize),
    pub shortcut_norm: f64,
    pub branch_norm: f64,
}

impl TapRecord {
    pub fn new<T: Real>(label: String, resolution: (usize, usize), shortcut: &Tensor<T>, branch: &Tensor<T>) -> Self {
        Self {
            label,
            resolution,
            shortcut_norm: shortcut.l2_norm(),
            branch_norm: branch.l2_norm(),
        }
    }

    pub fn ratio(&self) -> f64 {
        norm_ratio(self.shortcut_norm, self.branch_norm)
    }

    /// The branch carried nothing; the ratio is the `+∞` sentinel.
    pub fn degenerate(&self) -> bool {
        self.branch_norm == 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormRatioTrace {
    pub records: Vec<TapRecord>,
}

pub const TRACE_HEADER: &str = "label,resolution,shortcut_norm,branch_norm,ratio";

fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn parse_float(s: &str, line: usize) -> Result<f64, ReportError> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| parse_err(line, format!("bad number {s:?}"))),
    }
}

fn parse_resolution(s: &str, line: usize) -> Result<(usize, usize), ReportError> {
    let (h, w) = s.split_once('x').ok_or_else(|| parse_err(line, format!("bad resolution {s:?}")))?;
    let p = |v: &str| v.parse().map_err(|_| parse_err(line, format!("bad resolution {s:?}")));
    Ok((p(h)?, p(w)?))
}

impl NormRatioTrace {
    /// Indices where the resolution changes from the previous record.
    pub fn boundaries(&self) -> Vec<usize> {
        (1..self.records.len())
            .filter(|&i| self.records[i].resolution != self.records[i - 1].resolution)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{}x{},{},{},{}",
                r.label,
                r.resolution.0,
                r.resolution.1,
                fmt_float(r.shortcut_norm),
                fmt_float(r.branch_norm),
                fmt_float(r.ratio())
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => return Err(parse_err(1, "missing trace header")),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(parse_err(i + 1, "expected 5 fields"));
            }
            records.push(TapRecord {
                label: f[0].to_string(),
                resolution: parse_resolution(f[1], i + 1)?,
                shortcut_norm: parse_float(f[2], i + 1)?,
                branch_norm: parse_float(f[3], i + 1)?,
            });
        }
        Ok(Self { records })
    }
}

/// Mean and population variance of a ratio across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSummary {
    pub label: String,
    pub resolution: (usize, usize),
    pub mean: f64,
    pub variance: f64,
}

/// Aggregates traces of identical layout position by position.
pub fn aggregate_traces(traces: &[NormRatioTrace]) -> Result<Vec<RatioSummary>, ReportError> {
    let Some(first) = traces.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(first.records.len());
    for (i, r) in first.records.iter().enumerate() {
        let mut vals = Vec::with_capacity(traces.len());
        for t in traces {
            match t.records.get(i) {
                Some(o) if o.label == r.label => vals.push(o.ratio()),
                _ => return Err(ReportError::Invalid(format!("traces disagree at record {i}"))),
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let variance = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.push(RatioSummary {
            label: r.label.clone(),
            resolution: r.resolution,
            mean,
            variance,
        });
    }
    Ok(out)
}

/// How captured weights are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnLayout {
    /// `[B, heads, N, N]`.
    Global,
    /// `[B, nW, heads, M², M²]` on a grid cyclically shifted by `shift`.
    Windowed { m: usize, shift: usize },
}

/// Softmax weights of one attention layer, in 64-bit.
#[derive(Debug, Clone)]
pub struct CapturedAttention {
    pub label: String,
    pub grid: (usize, usize),
    pub heads: usize,
    pub layout: AttnLayout,
    pub weights: Tensor<f64>,
}

/// One query's attention row with keys in original grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnRow {
    pub sample: usize,
    pub head: usize,
    pub query: (usize, usize),
    pub keys: Vec<((usize, usize), f64)>,
}

impl CapturedAttention {
    pub fn new<T: Real>(label: String, grid: (usize, usize), heads: usize, layout: AttnLayout, weights: &Tensor<T>) -> Result<Self, ReportError> {
        let cap = Self {
            label,
            grid,
            heads,
            layout,
            weights: weights.cast(),
        };
        cap.check()?;
        Ok(cap)
    }

    fn check(&self) -> Result<(), ReportError> {
        let (h, w) = self.grid;
        let s = self.weights.shape();
        let ok = match self.layout {
            AttnLayout::Global => s.len() == 4 && s[1] == self.heads && s[2] == h * w && s[3] == h * w,
            AttnLayout::Windowed { m, .. } => {
                m > 0
                    && h % m == 0
                    && w % m == 0
                    && s.len() == 5
                    && s[1] == (h / m) * (w / m)
                    && s[2] == self.heads
                    && s[3] == m * m
                    && s[4] == m * m
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ReportError::Invalid(format!("weights {s:?} inconsistent with a {h}x{w} grid")))
        }
    }

    pub fn batch(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Largest distance a key can have from its query under this layout.
    pub fn max_distance(&self) -> f64 {
        let (h, w) = self.grid;
        match self.layout {
            AttnLayout::Global => (((h - 1).pow(2) + (w - 1).pow(2)) as f64).sqrt(),
            AttnLayout::Windowed { m, .. } => (m - 1) as f64 * 2f64.sqrt(),
        }
    }

    /// Every (sample, head, query) row.
    pub fn rows(&self) -> Vec<AttnRow> {
        let (h, w) = self.grid;
        let d = self.weights.data();
        let mut rows = Vec::new();
        match self.layout {
            AttnLayout::Global => {
                let n = h * w;
                for b in 0..self.batch() {
                    for hd in 0..self.heads {
                        for q in 0..n {
                            let base = ((b * self.heads + hd) * n + q) * n;
                            rows.push(AttnRow {
                                sample: b,
                                head: hd,
                                query: (q / w, q % w),
                                keys: (0..n).map(|k| ((k / w, k % w), d[base + k])).collect(),
                            });
                        }
                    }
                }
            }
            AttnLayout::Windowed { m, shift } => {
                let (nwx, t) = (w / m, m * m);
                let nw = (h / m) * nwx;
                let pos = |win: usize, tok: usize| {
                    let y = (win / nwx) * m + tok / m;
                    let x = (win % nwx) * m + tok % m;
                    ((y + shift) % h, (x + shift) % w)
                };
                for b in 0..self.batch() {
                    for win in 0..nw {
                        for hd in 0..self.heads {
                            for p in 0..t {
                                let base = (((b * nw + win) * self.heads + hd) * t + p) * t;
                                rows.push(AttnRow {
                                    sample: b,
                                    head: hd,
                                    query: pos(win, p),
                                    keys: (0..t).map(|k| (pos(win, k), d[base + k])).collect(),
                                });
                            }
                        }
                    }
                }
            }
        }
        rows
    }
}

/// `d_q = Σ_k a_qk · ‖p_q − p_k‖₂` for one row.
pub fn row_distance(row: &AttnRow) -> f64 {
    let (qi, qj) = (row.query.0 as f64, row.query.1 as f64);
    row.keys
        .iter()
        .map(|&((ki, kj), a)| a * ((qi - ki as f64).powi(2) + (qj - kj as f64).powi(2)).sqrt())
        .sum()
}

/// Distance from the query to its highest-weighted key only.
pub fn row_argmax_distance(row: &AttnRow) -> f64 {
    let (k, _) = row_argmax(row.keys.iter().copied());
    let (dy, dx) = (row.query.0 as f64 - k.0 as f64, row.query.1 as f64 - k.1 as f64);
    (dy * dy + dx * dx).sqrt()
}

/// How a row's distance is summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    #[default]
    Weighted,
    Argmax,
}

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDistanceHistogram {
    pub label: String,
    /// `HISTOGRAM_BINS + 1` uniform edges over `[0, max distance]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub per_head: Vec<Vec<u64>>,
    pub mean: f64,
    pub samples: u64,
}

fn bin_of(d: f64, max: f64) -> usize {
    if max <= 0.0 {
        return 0;
    }
    ((d / max * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

/// Per-(head, query) distances of one layer, pooled over samples.
pub fn attention_distances(cap: &CapturedAttention, mode: DistanceMode) -> Vec<(usize, f64)> {
    cap.rows()
        .iter()
        .map(|r| {
            let d = match mode {
                DistanceMode::Weighted => row_distance(r),
                DistanceMode::Argmax => row_argmax_distance(r),
            };
            (r.head, d)
        })
        .collect()
}

pub fn attention_distance(cap: &CapturedAttention, mode: DistanceMode) -> AttentionDistanceHistogram {
    let max = cap.max_distance();
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| max * i as f64 / HISTOGRAM_BINS as f64).collect();
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let mut per_head = vec![vec![0u64; HISTOGRAM_BINS]; cap.heads];
    let dists = attention_distances(cap, mode);
    let mut total = 0.0;
    for &(hd, d) in &dists {
        let b = bin_of(d, max);
        counts[b] += 1;
        per_head[hd][b] += 1;
        total += d;
    }
    AttentionDistanceHistogram {
        label: cap.label.clone(),
        edges,
        counts,
        per_head,
        mean: if dists.is_empty() { 0.0 } else { total / dists.len() as f64 },
        samples: dists.len() as u64,
    }
}

pub const HISTOGRAM_HEADER: &str = "label,head,bin_lo,bin_hi,count";

/// CSV with one row per (layer, head, bin); head `all` is the pooled histogram.
pub fn histograms_to_csv(hists: &[AttentionDistanceHistogram]) -> String {
    let mut s = String::from(HISTOGRAM_HEADER);
    s.push('\n');
    for h in hists {
        let heads = std::iter::once(("all".to_string(), &h.counts))
            .chain(h.per_head.iter().enumerate().map(|(i, c)| (i.to_string(), c)));
        for (name, counts) in heads {
            for (b, c) in counts.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", h.label, name, h.edges[b], h.edges[b + 1], c);
            }
        }
    }
    s
}

/// Parses [`histograms_to_csv`] output back; the mean is not stored and is
/// left at zero.
pub fn histograms_from_csv(text: &str) -> Result<Vec<AttentionDistanceHistogram>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HISTOGRAM_HEADER => {}
        _ => return Err(parse_err(1, "missing histogram header")),
    }
    let mut out: Vec<AttentionDistanceHistogram> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(i + 1, "expected 5 fields"));
        }
        let (lo, hi) = (parse_float(f[2], i + 1)?, parse_float(f[3], i + 1)?);
        let count: u64 = f[4].parse().map_err(|_| parse_err(i + 1, "bad count"))?;
        if out.last().map(|h| h.label != f[0]).unwrap_or(true) {
            out.push(AttentionDistanceHistogram {
                label: f[0].to_string(),
                edges: vec![lo],
                counts: Vec::new(),
                per_head: Vec::new(),
                mean: 0.0,
                samples: 0,
            });
        }
        let h = out.last_mut().unwrap();
        if f[1] == "all" {
            h.counts.push(count);
            h.edges.push(hi);
            h.samples += count;
        } else {
            let head: usize = f[1].parse().map_err(|_| parse_err(i + 1, "bad head"))?;
            if head == h.per_head.len() {
                h.per_head.push(Vec::new());
            }
            h.per_head
                .get_mut(head)
                .ok_or_else(|| parse_err(i + 1, "heads out of order"))?
                .push(count);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxEntry {
    pub q: [usize; 2],
    pub k: [usize; 2],
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxMap {
    pub grid: [usize; 2],
    pub entries: Vec<ArgmaxEntry>,
}

/// Row maximum; ties go to the smallest flat key index.
fn row_argmax(keys: impl Iterator<Item = ((usize, usize), f64)>) -> ((usize, usize), f64) {
    let mut best: Option<((usize, usize), f64)> = None;
    for (p, w) in keys {
        best = match best {
            Some((bp, bw)) if bw > w || (bw == w && bp <= p) => Some((bp, bw)),
            _ => Some((p, w)),
        };
    }
    best.expect("non-empty row")
}

/// Argmax key per query of one sample; `head = None` averages the heads first.
pub fn argmax_attention_map(cap: &CapturedAttention, sample: usize, head: Option<usize>) -> ArgmaxMap {
    let (h, w) = cap.grid;
    let rows: Vec<AttnRow> = cap
        .rows()
        .into_iter()
        .filter(|r| r.sample == sample && head.is_none_or(|hd| r.head == hd))
        .collect();
    // Sum head rows per query; keys arrive in the same order for every head.
    let mut per_query: Vec<Option<Vec<((usize, usize), f64)>>> = vec![None; h * w];
    for r in rows {
        let slot = &mut per_query[r.query.0 * w + r.query.1];
        match slot {
            None => *slot = Some(r.keys),
            Some(acc) => {
                for (a, k) in acc.iter_mut().zip(r.keys) {
                    a.1 += k.1;
                }
            }
        }
    }
    let scale = if head.is_none() { 1.0 / cap.heads as f64 } else { 1.0 };
    let entries = per_query
        .into_iter()
        .enumerate()
        .filter_map(|(qi, keys)| {
            let (k, wt) = row_argmax(keys?.into_iter());
            Some(ArgmaxEntry {
                q: [qi / w, qi % w],
                k: [k.0, k.1],
                w: wt * scale,
            })
        })
        .collect();
    ArgmaxMap { grid: [h, w], entries }
}

impl ArgmaxMap {
    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_report(path: &Path, contents: &str) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}
