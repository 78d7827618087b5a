use super::model::PipelineModel;
use super::passes::reverse_pass;
use crate::error::{Error, Result};
use crate::imagecore::{psnr, psnr_yuv, RawImage, RgbImage, PSNR_CAP_DB};
use crate::stages::demosaic_bilinear;

/// PSNR of one reverse-pass intermediate against the demosaiced ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub stage: String,
    pub psnr_rgb: f64,
    pub psnr_y: f64,
    pub psnr_uv: f64,
}

/// Every 3-channel intermediate of the reverse pass on `x`, compared with
/// `demosaic(y)` in RGB and YUV.
pub fn ablation_trace(x: &RgbImage, y: &RawImage, m: &PipelineModel) -> Result<Vec<AblationRow>> {
    if x.height != y.height() || x.width != y.width() {
        return Err(Error::Dimension(format!(
            "sRGB {}x{} vs RAW {}x{}",
            x.height,
            x.width,
            y.height(),
            y.width()
        )));
    }
    let reference = demosaic_bilinear(y)?;
    let trace = reverse_pass(x, m, true)?.trace.expect("trace requested");
    let mut rows = Vec::new();
    for (stage, img) in trace.entries.iter().filter(|(_, i)| i.channels == 3) {
        let img = img.clamp01();
        let (py, puv) = psnr_yuv(&img, &reference, PSNR_CAP_DB)?;
        rows.push(AblationRow { stage: stage.clone(), psnr_rgb: psnr(&img, &reference, PSNR_CAP_DB)?, psnr_y: py, psnr_uv: puv });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("stage,psnr_rgb,psnr_y,psnr_uv\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.stage, r.psnr_rgb, r.psnr_y, r.psnr_uv));
    }
    s
}
