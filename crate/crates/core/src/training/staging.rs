use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{imageops::FilterType, ImageFormat, ImageReader};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Stage;
use crate::dataset::{write_jsonl, CorpusError, ImageRecord};

pub const STAGE1_MAX_SIDE: u32 = 512;
pub const STAGED_IMAGES_KIND: &str = "dentvqa.staged_images";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageStatus {
    Copied,
    Resized { from: (u32, u32), to: (u32, u32) },
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub image_id: String,
    #[serde(flatten)]
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedDataset {
    pub stage: Stage,
    /// Staged images with `uri` relative to the output directory.
    pub images: Vec<ImageRecord>,
    pub entries: Vec<StageEntry>,
}

/// Resolve an image uri (`file://` or a plain path) against `base`.
pub fn image_path(uri: &str, base: &Path) -> PathBuf {
    let p = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn target_size(w: u32, h: u32) -> (u32, u32) {
    let side = w.max(h);
    if side <= STAGE1_MAX_SIDE {
        return (w, h);
    }
    let scale = f64::from(STAGE1_MAX_SIDE) / f64::from(side);
    let fit = |x: u32| ((f64::from(x) * scale).round() as u32).clamp(1, STAGE1_MAX_SIDE);
    (fit(w), fit(h))
}

fn stage_one(img: &ImageRecord, base: &Path, out: &Path, stage: Stage) -> (Option<ImageRecord>, StageEntry) {
    let skip =
        |reason: String| (None, StageEntry { image_id: img.image_id.clone(), status: StageStatus::Skipped { reason } });
    let src = image_path(&img.uri, base);
    let bytes = match std::fs::read(&src) {
        Ok(b) => b,
        Err(e) => return skip(format!("{}: {e}", src.display())),
    };
    let format = match image::guess_format(&bytes) {
        Ok(f) => f,
        Err(e) => return skip(e.to_string()),
    };
    let decoded = match ImageReader::with_format(Cursor::new(&bytes), format).decode() {
        Ok(d) => d,
        Err(e) => return skip(e.to_string()),
    };
    let (w, h) = (decoded.width(), decoded.height());
    let (nw, nh) = match stage {
        Stage::One => target_size(w, h),
        Stage::Two => (w, h),
    };
    let ext = format.extensions_str().first().copied().unwrap_or("img");
    let name = format!("images/{}.{ext}", img.image_id);
    let (data, status) = if (nw, nh) == (w, h) {
        (bytes, StageStatus::Copied)
    } else {
        let resized = decoded.resize_exact(nw, nh, FilterType::Lanczos3);
        let resized =
            if format == ImageFormat::Jpeg { image::DynamicImage::ImageRgb8(resized.to_rgb8()) } else { resized };
        let mut buf = Cursor::new(Vec::new());
        if let Err(e) = resized.write_to(&mut buf, format) {
            return skip(e.to_string());
        }
        (buf.into_inner(), StageStatus::Resized { from: (w, h), to: (nw, nh) })
    };
    if let Err(e) = std::fs::write(out.join(&name), data) {
        return skip(format!("{name}: {e}"));
    }
    let staged = ImageRecord { uri: name, width: nw, height: nh, ..img.clone() };
    (Some(staged), StageEntry { image_id: img.image_id.clone(), status })
}

/// Copy (stage 2) or downscale-to-fit (stage 1) every image into `out/images`,
/// writing `out/images.jsonl` and `out/staging.json`. Undecodable images are
/// skipped and listed in the manifest.
pub fn stage_images(
    images: &[ImageRecord],
    base: &Path,
    out: &Path,
    stage: Stage,
) -> Result<StagedDataset, CorpusError> {
    let dir = out.join("images");
    std::fs::create_dir_all(&dir).map_err(|e| CorpusError::Io(dir.display().to_string(), e))?;
    let results: Vec<_> = images.par_iter().map(|img| stage_one(img, base, out, stage)).collect();
    let mut staged = Vec::new();
    let mut entries = Vec::new();
    for (img, entry) in results {
        staged.extend(img);
        entries.push(entry);
    }
    let ds = StagedDataset { stage, images: staged, entries };
    write_jsonl(&out.join("images.jsonl"), STAGED_IMAGES_KIND, &ds.images)?;
    let manifest = out.join("staging.json");
    let json = serde_json::to_string_pretty(&ds).expect("staged dataset serializes");
    std::fs::write(&manifest, json).map_err(|e| CorpusError::Io(manifest.display().to_string(), e))?;
    Ok(ds)
}
