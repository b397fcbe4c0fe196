//! Norm-ratio traces and attention-distance reports for a trained model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use wingan_core::diagnostics::{
    argmax_attention_map, attention_distance, histograms_to_csv, write_report, ArgmaxMap, AttentionDistanceHistogram, DistanceMode,
    NormRatioTrace, ReportError,
};
use wingan_core::nn::Ctx;
use wingan_tensor::{Real, Tape, Tensor, TensorError};

use crate::gan::Models;

#[derive(Debug, thiserror::Error)]
pub enum DiagnoseError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone)]
pub struct Report {
    pub generator_trace: NormRatioTrace,
    pub discriminator_trace: NormRatioTrace,
    pub generator_attention: Vec<AttentionDistanceHistogram>,
    pub discriminator_attention: Vec<AttentionDistanceHistogram>,
    /// Head-averaged argmax map of sample 0 per generator layer.
    pub argmax: BTreeMap<String, ArgmaxMap>,
}

/// Probes one generator pass on `z` and one discriminator pass on its output.
pub fn diagnose<T: Real>(models: &Models<T>, z: &Tensor<T>, labels: Option<&[usize]>) -> Result<Report, DiagnoseError> {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &models.gs).with_taps().with_capture();
    let img = models.g.forward(&ctx, tape.constant(z.clone()), labels)?;
    let gp = ctx.take_probe();
    let ctx_d = Ctx::new(&tape, &models.ds).with_taps().with_capture();
    models.d.forward(&ctx_d, img, labels)?;
    let dp = ctx_d.take_probe();
    let argmax = gp
        .attention
        .iter()
        .map(|cap| (cap.label.clone(), argmax_attention_map(cap, 0, None)))
        .collect();
    let hist = |caps: &[wingan_core::diagnostics::CapturedAttention]| caps.iter().map(|c| attention_distance(c, DistanceMode::Weighted)).collect();
    Ok(Report {
        generator_trace: NormRatioTrace { records: gp.records },
        discriminator_trace: NormRatioTrace { records: dp.records },
        generator_attention: hist(&gp.attention),
        discriminator_attention: hist(&dp.attention),
        argmax,
    })
}

impl Report {
    /// Writes the five report files into `dir` and returns their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, DiagnoseError> {
        let files = [
            ("norm_ratio_g.csv", self.generator_trace.to_csv()),
            ("norm_ratio_d.csv", self.discriminator_trace.to_csv()),
            ("attention_distance_g.csv", histograms_to_csv(&self.generator_attention)),
            ("attention_distance_d.csv", histograms_to_csv(&self.discriminator_attention)),
            ("argmax_g.json", serde_json::to_string_pretty(&self.argmax).map_err(ReportError::from)?),
        ];
        let mut out = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            write_report(&p, &text)?;
            out.push(p);
        }
        Ok(out)
    }
}
