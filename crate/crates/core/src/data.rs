//! Dataset ingestion: a directory of images becomes an ordered traversal
//! of 64x32 grayscale frames. Frame order is the lexicographic filename
//! order, and the frame index doubles as the place label, so two aligned
//! directories compare index-to-index.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gray::{area_resize, GrayImage, IMAGE_HEIGHT, IMAGE_WIDTH};

/// One ordered pass through an environment.
#[derive(Debug, Clone)]
pub struct Traversal {
    name: String,
    frames: Vec<GrayImage>,
    sources: Vec<PathBuf>,
}

impl Traversal {
    pub fn from_frames(name: impl Into<String>, frames: Vec<GrayImage>) -> Self {
        Traversal {
            name: name.into(),
            frames,
            sources: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn frame(&self, idx: usize) -> &GrayImage {
        &self.frames[idx]
    }

    /// Source path of a frame, when the traversal was loaded from disk.
    pub fn source(&self, idx: usize) -> Option<&Path> {
        self.sources.get(idx).map(PathBuf::as_path)
    }
}

const EXTENSIONS: [&str; 5] = ["png", "pgm", "pnm", "ppm", "pbm"];

/// Loads every raster image in a directory, sorted by filename, converted
/// to grayscale with the 0.299/0.587/0.114 luminance weights, area-resized
/// to 64x32 and scaled to [0, 1].
pub fn load_traversal(dir: &Path) -> Result<Traversal> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::EmptyTraversal(dir.to_path_buf()));
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let frames: Vec<GrayImage> = paths
        .par_iter()
        .map(|p| load_frame(p))
        .collect::<Result<_>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Traversal {
        name,
        frames,
        sources: paths,
    })
}

/// Decodes one image file into a standard frame.
pub fn load_frame(path: &Path) -> Result<GrayImage> {
    let decoded = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    // 16-bit channels make the u8 path exact: v maps to v * 257, and
    // v * 257 / 65535 == v / 255.
    let rgb = decoded.into_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ImageDecode {
            path: path.to_path_buf(),
            reason: "zero-sized image".into(),
        });
    }
    let mut luma = Vec::with_capacity(w * h);
    for px in rgb.pixels() {
        let [r, g, b] = px.0;
        let (r, g, b) = (r as f64 / 65535.0, g as f64 / 65535.0, b as f64 / 65535.0);
        luma.push(0.299 * r + 0.587 * g + 0.114 * b);
    }
    let resized = area_resize(&luma, w, h, IMAGE_WIDTH, IMAGE_HEIGHT);
    GrayImage::from_pixels(resized)
}

/// Minimal binary PGM (P5) writer for previews and generated datasets.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", IMAGE_WIDTH, IMAGE_HEIGHT).into_bytes();
    bytes.extend(img.pixels().iter().map(|&p| (p * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
