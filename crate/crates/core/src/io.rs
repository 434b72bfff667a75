//! On-disk interchange: PPM/PGM images, the sequence manifest and the layer index.
//!
//! Color is binary PPM (P6). Depth is 16-bit big-endian PGM (P5) in millimeters
//! with 0 marking no data. Masks and the X-ray layer are 8-bit PGM.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Cursor, Write as _};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PixmapHeader, PnmEncoder, PnmHeader, SampleEncoding};
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb as PixRgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::{ColorImage, DepthImage, GrayImage, Mask, RgbdFrame};
use crate::raycast::LayerSet;
use crate::scalar::Real;
use crate::scene::{render_xray, NoiseModel, Rig, Sequence};

fn read_pnm(path: &Path) -> Result<DynamicImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ImageReader::with_format(BufReader::new(file), ImageFormat::Pnm)
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// `samples` are bytes; 16-bit samples are native-endian pairs.
fn write_pnm(path: &Path, samples: &[u8], header: PnmHeader, color: ExtendedColorType) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = (header.width(), header.height());
    PnmEncoder::new(&mut out)
        .with_header(header)
        .encode(samples, w, h, color)
        .map_err(|e| Error::format(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn graymap(width: usize, height: usize, maxwhite: u32) -> PnmHeader {
    GraymapHeader {
        encoding: SampleEncoding::Binary,
        width: width as u32,
        height: height as u32,
        maxwhite,
    }
    .into()
}

fn color_buffer(img: &ColorImage) -> ImageBuffer<PixRgb<u8>, Vec<u8>> {
    let raw = img.data().iter().flatten().copied().collect();
    ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer matches dimensions")
}

fn gray_buffer(width: usize, height: usize, raw: Vec<u8>) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    ImageBuffer::from_raw(width as u32, height as u32, raw).expect("buffer matches dimensions")
}

pub fn write_ppm(path: &Path, img: &ColorImage) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().flatten().copied().collect();
    let header = PixmapHeader {
        encoding: SampleEncoding::Binary,
        width: img.width() as u32,
        height: img.height() as u32,
        maxval: 255,
    };
    write_pnm(path, &raw, header.into(), ExtendedColorType::Rgb8)
}

pub fn read_ppm(path: &Path) -> Result<ColorImage> {
    let DynamicImage::ImageRgb8(buf) = read_pnm(path)? else {
        return Err(Error::format(path, "expected an 8-bit color PPM"));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf.pixels().map(|p| p.0).collect();
    ColorImage::new(w, h, data)
}

/// Meters to the millimeter code stored on disk; invalid depth maps to 0.
pub fn depth_to_mm<T: Real>(d: T) -> u16 {
    if d > T::zero() {
        let mm = (d * T::lit(1000.0)).round();
        mm.to_f64().map_or(0, |v| v.clamp(1.0, 65535.0) as u16)
    } else {
        0
    }
}

pub fn write_depth_pgm<T: Real>(path: &Path, depth: &DepthImage<T>) -> Result<()> {
    let raw: Vec<u8> = depth.data().iter().flat_map(|&d| depth_to_mm(d).to_ne_bytes()).collect();
    write_pnm(path, &raw, graymap(depth.width(), depth.height(), 65535), ExtendedColorType::L16)
}

pub fn read_depth_pgm<T: Real>(path: &Path) -> Result<DepthImage<T>> {
    let DynamicImage::ImageLuma16(buf) = read_pnm(path)? else {
        return Err(Error::format(path, "expected a 16-bit depth PGM"));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf.pixels().map(|p| T::of_usize(p.0[0] as usize) / T::lit(1000.0)).collect();
    DepthImage::new(w, h, data)
}

pub fn write_gray_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_pnm(path, img.data(), graymap(img.width(), img.height(), 255), ExtendedColorType::L8)
}

pub fn read_gray_pgm(path: &Path) -> Result<GrayImage> {
    let DynamicImage::ImageLuma8(buf) = read_pnm(path)? else {
        return Err(Error::format(path, "expected an 8-bit PGM"));
    };
    GrayImage::new(buf.width() as usize, buf.height() as usize, buf.into_raw())
}

pub fn mask_to_gray(mask: &Mask) -> GrayImage {
    let raw = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    GrayImage::new(mask.width(), mask.height(), raw).expect("same dimensions")
}

pub fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    write_gray_pgm(path, &mask_to_gray(mask))
}

/// Any nonzero sample reads as foreground.
pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    let g = read_gray_pgm(path)?;
    Mask::new(g.width(), g.height(), g.data().iter().map(|&v| v != 0).collect())
}

fn encode_png(image: DynamicImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_with_encoder(PngEncoder::new(&mut out))
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn png_color(img: &ColorImage) -> Vec<u8> {
    encode_png(DynamicImage::ImageRgb8(color_buffer(img)))
}

pub fn png_gray(img: &GrayImage) -> Vec<u8> {
    encode_png(DynamicImage::ImageLuma8(gray_buffer(img.width(), img.height(), img.data().to_vec())))
}

/// Decodes an 8-bit RGB PNG.
pub fn decode_png_color(bytes: &[u8]) -> Result<ColorImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("<png>", e.to_string()))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    ColorImage::new(w, h, img.pixels().map(|p| p.0).collect())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One side-camera capture. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub color: PathBuf,
    pub depth: PathBuf,
    pub camera: Camera<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub views: Vec<ViewEntry>,
}

/// A recorded or synthetic sequence: occluder-free initialization frames, live
/// frames, the target camera and the X-ray image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub target: Camera<f64>,
    pub xray: PathBuf,
    pub init_frames: Vec<FrameEntry>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let m: Manifest = read_json(path)?;
        m.target.validate().map_err(|e| Error::format(path, format!("target camera: {e}")))?;
        for f in m.init_frames.iter().chain(&m.frames) {
            if f.views.is_empty() {
                return Err(Error::format(path, format!("frame {} lists no views", f.index)));
            }
            for v in &f.views {
                v.camera
                    .validate()
                    .map_err(|e| Error::format(path, format!("frame {}: {e}", f.index)))?;
            }
        }
        Ok(m)
    }

    /// Reads the views of one frame, resolving paths against `base`.
    pub fn read_views<T: Real>(&self, base: &Path, entry: &FrameEntry) -> Result<Vec<RgbdFrame<T>>> {
        let read = || -> Result<Vec<RgbdFrame<T>>> {
            entry
                .views
                .iter()
                .map(|v| {
                    let depth_path = base.join(&v.depth);
                    let depth = read_depth_pgm(&depth_path)?;
                    let color = read_ppm(&base.join(&v.color))?;
                    RgbdFrame::new(depth, color, v.camera.cast(), entry.index)
                        .map_err(|e| Error::format(depth_path, e.to_string()))
                })
                .collect()
        };
        read().map_err(|e| Error::Frame {
            frame: entry.index,
            source: Box::new(e),
        })
    }

    pub fn read_xray(&self, base: &Path) -> Result<GrayImage> {
        read_gray_pgm(&base.join(&self.xray))
    }
}

/// Per-frame recovery stats stored alongside the layers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mask_pixels: usize,
    pub recovered_pixels: usize,
    pub recovery_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFrame {
    pub index: usize,
    pub fg_color: PathBuf,
    pub fg_depth: PathBuf,
    pub mask: PathBuf,
    pub bg_color: PathBuf,
    pub bg_valid: PathBuf,
    pub stats: LayerStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

/// `layers.json`: everything `compose` and `serve` need from a synthesized sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerIndex {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub grid: GridInfo,
    pub xray: PathBuf,
    pub frames: Vec<LayerFrame>,
}

pub const LAYER_INDEX: &str = "layers.json";

impl LayerIndex {
    pub fn load(dir: &Path) -> Result<LayerIndex> {
        read_json(&dir.join(LAYER_INDEX))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(LAYER_INDEX), self)
    }

    pub fn frame(&self, index: usize) -> Option<&LayerFrame> {
        self.frames.iter().find(|f| f.index == index)
    }
}

/// Writes the five per-frame layers into `dir`.
pub fn write_layers<T: Real>(dir: &Path, index: usize, layers: &LayerSet<T>) -> Result<LayerFrame> {
    let name = |kind: &str, ext: &str| PathBuf::from(format!("frame{index:04}_{kind}.{ext}"));
    let frame = LayerFrame {
        index,
        fg_color: name("fg", "ppm"),
        fg_depth: name("depth", "pgm"),
        mask: name("mask", "pgm"),
        bg_color: name("bg", "ppm"),
        bg_valid: name("bgvalid", "pgm"),
        stats: LayerStats {
            mask_pixels: layers.mask.count(),
            recovered_pixels: layers.mask.and(&layers.bg_valid).count(),
            recovery_pct: crate::metrics::recovery_percentage(&layers.mask, &layers.bg_valid)?,
        },
    };
    write_ppm(&dir.join(&frame.fg_color), &layers.fg_color)?;
    write_depth_pgm(&dir.join(&frame.fg_depth), &layers.fg_depth)?;
    write_mask_pgm(&dir.join(&frame.mask), &layers.mask)?;
    write_ppm(&dir.join(&frame.bg_color), &layers.bg_color)?;
    write_mask_pgm(&dir.join(&frame.bg_valid), &layers.bg_valid)?;
    Ok(frame)
}

/// Reads a frame's layers back; depth comes back at millimeter precision.
pub fn read_layers(dir: &Path, index: &LayerIndex, frame: &LayerFrame) -> Result<LayerSet<f64>> {
    let layers = LayerSet {
        fg_color: read_ppm(&dir.join(&frame.fg_color))?,
        fg_depth: read_depth_pgm(&dir.join(&frame.fg_depth))?,
        mask: read_mask_pgm(&dir.join(&frame.mask))?,
        bg_color: read_ppm(&dir.join(&frame.bg_color))?,
        bg_valid: read_mask_pgm(&dir.join(&frame.bg_valid))?,
        xray: read_gray_pgm(&dir.join(&index.xray))?,
    };
    layers.validate()?;
    Ok(layers)
}

/// `scene.json`: the full synthetic description behind an exported manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneExport {
    pub sequence: Sequence,
    pub cameras: Rig,
    pub noise: Option<NoiseModel>,
}

/// Renders `seq` into `dir` in the manifest format and returns the manifest path.
pub fn export_sequence(seq: &Sequence, dir: &Path, noise: Option<&NoiseModel>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rig = seq.rig.build()?;
    let write_frame = |prefix: &str, index: usize, views: [RgbdFrame<f64>; 2]| -> Result<FrameEntry> {
        let mut entries = Vec::with_capacity(2);
        for (side, v) in ["left", "right"].iter().zip(views) {
            let color = PathBuf::from(format!("{prefix}{index:04}_{side}.ppm"));
            let depth = PathBuf::from(format!("{prefix}{index:04}_{side}_depth.pgm"));
            write_ppm(&dir.join(&color), &v.color)?;
            write_depth_pgm(&dir.join(&depth), &v.depth)?;
            entries.push(ViewEntry {
                color,
                depth,
                camera: v.camera,
            });
        }
        Ok(FrameEntry { index, views: entries })
    };
    let init_frames = (0..seq.init_frames)
        .map(|i| write_frame("init", i, seq.init_views(i, noise)?))
        .collect::<Result<Vec<_>>>()?;
    let frames = (0..seq.live_frames())
        .map(|f| write_frame("frame", f, seq.live_views(f, noise)?))
        .collect::<Result<Vec<_>>>()?;
    let xray = PathBuf::from("xray.pgm");
    write_gray_pgm(&dir.join(&xray), &render_xray(&seq.scene, &rig.target, &seq.xray))?;
    let manifest = Manifest {
        name: seq.name.clone(),
        target: rig.target,
        xray,
        init_frames,
        frames,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    write_json(
        &dir.join("scene.json"),
        &SceneExport {
            sequence: seq.clone(),
            cameras: rig,
            noise: noise.copied(),
        },
    )?;
    Ok(path)
}
