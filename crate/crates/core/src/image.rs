//! 8-bit grayscale images and binary PGM / grayscale PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BlockGrid, BlockIndex};

/// Row-major 8-bit grayscale image whose sides are both even, so it tiles
/// exactly into 2×2 blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dimensions(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "pixel buffer holds {} values, expected {width}x{height} = {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        check_dimensions(width, height)?;
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn grid(&self) -> BlockGrid {
        BlockGrid::new(self.width / 2, self.height / 2)
    }

    /// The four pixels of a block in raster order: top-left, top-right,
    /// bottom-left, bottom-right.
    pub fn block(&self, at: BlockIndex) -> [u8; 4] {
        let (x, y) = (2 * at.col, 2 * at.row);
        let top = y * self.width + x;
        let bottom = top + self.width;
        [
            self.pixels[top],
            self.pixels[top + 1],
            self.pixels[bottom],
            self.pixels[bottom + 1],
        ]
    }

    pub fn set_block(&mut self, at: BlockIndex, values: [u8; 4]) {
        let (x, y) = (2 * at.col, 2 * at.row);
        let top = y * self.width + x;
        let bottom = top + self.width;
        self.pixels[top] = values[0];
        self.pixels[top + 1] = values[1];
        self.pixels[bottom] = values[2];
        self.pixels[bottom + 1] = values[3];
    }

    /// Every block with its pixels, in linear block order.
    pub fn blocks(&self) -> impl Iterator<Item = (BlockIndex, [u8; 4])> + '_ {
        self.grid().iter().map(move |b| (b, self.block(b)))
    }

    /// Pixel values with the two low bits cleared.
    pub fn msb_plane(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| p & !0b11).collect()
    }
}

fn check_dimensions(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "{width}x{height} does not tile into 2x2 blocks (both sides must be even and positive)"
        )));
    }
    Ok(())
}

/// Splits an image into its block lattice and the per-block pixel quadruples.
pub fn split_into_blocks(image: &GrayImage) -> (BlockGrid, Vec<(BlockIndex, [u8; 4])>) {
    (image.grid(), image.blocks().collect())
}

/// Writes a raw 8-bit raster as binary PGM (P5, maxval 255). Dimensions are
/// not restricted, which lets block-resolution masks of odd size be written.
pub fn write_pgm_raw<W: Write>(mut out: W, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Dimension(format!(
            "raster holds {} values, expected {}",
            data.len(),
            width * height
        )));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(data)?;
    out.flush()?;
    Ok(())
}

pub fn write_pgm<W: Write>(out: W, image: &GrayImage) -> Result<()> {
    write_pgm_raw(out, image.width, image.height, &image.pixels)
}

/// Reads a binary PGM into `(width, height, raster)` without the even-size
/// restriction.
pub fn read_pgm_raw<R: Read>(mut input: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = HeaderCursor { bytes: &bytes, pos: 0 };

    let magic = cursor.token()?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "expected binary PGM magic P5, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}, only 255 is accepted")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let raster = &bytes[cursor.pos..];
    let expected = width * height;
    if raster.len() < expected {
        return Err(Error::Format(format!(
            "raster truncated: {} of {expected} bytes",
            raster.len()
        )));
    }
    Ok((width, height, raster[..expected].to_vec()))
}

pub fn read_pgm<R: Read>(input: R) -> Result<GrayImage> {
    let (width, height, data) = read_pgm_raw(input)?;
    GrayImage::new(width, height, data)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("unexpected end of PGM header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let token = self.token()?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::Format(format!(
                    "bad {what} field {:?}",
                    String::from_utf8_lossy(token)
                ))
            })
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Loads a PGM, or an 8-bit grayscale PNG when the extension is `.png`.
pub fn load(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    if is_png(path) {
        read_png(file)
    } else {
        read_pgm(file)
    }
}

pub fn save(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let file = BufWriter::new(File::create(path)?);
    if is_png(path) {
        write_png(file, image)
    } else {
        write_pgm(file, image)
    }
}

pub fn read_png<R: Read>(mut input: R) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "png must be 8-bit grayscale, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut data = vec![0; reader.output_buffer_size().unwrap_or(width * height)];
    let frame = reader
        .next_frame(&mut data)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    data.truncate(frame.buffer_size());
    GrayImage::new(width, height, data)
}

pub fn write_png<W: Write>(out: W, image: &GrayImage) -> Result<()> {
    let mut encoder = png::Encoder::new(out, image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .write_image_data(&image.pixels)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    Ok(())
}
