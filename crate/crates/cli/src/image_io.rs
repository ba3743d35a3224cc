//! Binary PPM (P6) images and their conversion to network input tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cashew_core::{Shape, Tensor};
use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

/// 8-bit RGB pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// NHWC `[1, h, w, 3]` tensor scaled to [-1, 1] by `x / 127.5 - 1`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let shape = Shape::new(vec![1, self.height, self.width, 3]).expect("non-empty image");
        Tensor::new(
            shape,
            self.pixels
                .iter()
                .map(|&p| p as f32 / 127.5 - 1.0)
                .collect(),
        )
        .expect("pixel count")
    }

    /// Mean of one channel over the image.
    pub fn channel_mean(&self, channel: usize) -> f64 {
        let sum: u64 = self
            .pixels
            .iter()
            .skip(channel)
            .step_by(3)
            .map(|&p| p as u64)
            .sum();
        sum as f64 / (self.width * self.height) as f64
    }
}

pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(
            &img.pixels,
            img.width as u32,
            img.height as u32,
            ExtendedColorType::Rgb8,
        )
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let decoder = PnmDecoder::new(BufReader::new(file))
        .with_context(|| format!("decoding {}", path.display()))?;
    if decoder.subtype() != PnmSubtype::Pixmap(SampleEncoding::Binary) {
        bail!("{}: only binary P6 images are supported", path.display());
    }
    if decoder.color_type() != image::ColorType::Rgb8 {
        bail!("{}: only 8-bit RGB images are supported", path.display());
    }
    let (w, h) = decoder.dimensions();
    let mut pixels = vec![0u8; decoder.total_bytes() as usize];
    decoder
        .read_image(&mut pixels)
        .with_context(|| format!("decoding {}", path.display()))?;
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        pixels,
    })
}
