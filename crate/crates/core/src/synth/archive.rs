//! Flat binary image archive, little-endian:
//! `"SIMG" | version u32 | H u32 | W u32 | count u64 | count*H*W f32`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = *b"SIMG";
pub const IMAGE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageArchive {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageArchive {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: Vec::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        if self.pixels_per_image() == 0 {
            0
        } else {
            self.pixels.len() / self.pixels_per_image()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, img: &Image) -> Result<()> {
        if img.size != self.height || img.size != self.width {
            return Err(Error::DimMismatch {
                expected: self.height,
                found: img.size,
            });
        }
        self.pixels.extend_from_slice(&img.pixels);
        Ok(())
    }

    pub fn push_raw(&mut self, pixels: &[f32]) -> Result<()> {
        if pixels.len() != self.pixels_per_image() {
            return Err(Error::DimMismatch {
                expected: self.pixels_per_image(),
                found: pixels.len(),
            });
        }
        self.pixels.extend_from_slice(pixels);
        Ok(())
    }

    /// Copies of the images at `indices`, horizontally flipped where `flip`.
    pub fn select(&self, picks: impl IntoIterator<Item = (usize, bool)>) -> Self {
        let mut out = Self::new(self.height, self.width);
        for (i, flip) in picks {
            let src = self.image(i);
            if flip {
                for row in src.chunks_exact(self.width) {
                    out.pixels.extend(row.iter().rev());
                }
            } else {
                out.pixels.extend_from_slice(src);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_archive(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        read_archive(&bytes)
    }
}

pub fn write_archive<W: Write>(a: &ImageArchive, mut w: W) -> Result<()> {
    w.write_all(&IMAGE_MAGIC)?;
    w.write_all(&IMAGE_VERSION.to_le_bytes())?;
    w.write_all(&(a.height as u32).to_le_bytes())?;
    w.write_all(&(a.width as u32).to_le_bytes())?;
    w.write_all(&(a.len() as u64).to_le_bytes())?;
    for v in &a.pixels {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(bytes: &[u8]) -> Result<ImageArchive> {
    const HEADER: usize = 24;
    if bytes.len() < HEADER {
        return Err(Error::Truncated(format!("image archive header needs {HEADER} bytes")));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != IMAGE_VERSION {
        return Err(Error::Version(version));
    }
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Truncated("implausible image archive size".into()))?;
    if bytes.len() - HEADER != expected {
        return Err(Error::Truncated(format!(
            "image payload is {} bytes, header implies {expected}",
            bytes.len() - HEADER
        )));
    }
    let pixels = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ImageArchive {
        height,
        width,
        pixels,
    })
}
