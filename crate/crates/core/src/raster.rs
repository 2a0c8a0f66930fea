//! 8-bit RGB rasters and their PNG / PPM encodings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Side length of every rendered structure image.
pub const IMAGE_SIZE: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode PNG: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: cannot encode PNG: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("{path}: unsupported PNG layout {color:?}/{depth:?}")]
    Unsupported {
        path: PathBuf,
        color: png::ColorType,
        depth: png::BitDepth,
    },
}

/// Row-major interleaved RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn white(width: usize, height: usize) -> Self {
        Self::filled(width, height, [255; 3])
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copy `other` into this image with its top-left corner at `(x0, y0)`.
    pub fn blit(&mut self, other: &RgbImage, x0: usize, y0: usize) {
        for y in 0..other.height.min(self.height.saturating_sub(y0)) {
            let n = other.width.min(self.width.saturating_sub(x0)) * 3;
            let dst = ((y0 + y) * self.width + x0) * 3;
            let src = y * other.width * 3;
            self.data[dst..dst + n].copy_from_slice(&other.data[src..src + n]);
        }
    }

    /// PNG encoding (8-bit RGB, no metadata chunks, fixed settings).
    pub fn encode_png(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Fast);
            enc.set_filter(png::FilterType::Sub);
            let mut w = enc.write_header()?;
            w.write_image_data(&self.data)?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RasterError> {
        let bytes = self.encode_png().map_err(|e| RasterError::Encode {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        std::fs::write(path, bytes).map_err(|source| RasterError::Io {
            path: path.to_owned(),
            source,
        })
    }

    /// Binary PPM (P6), handy for eyeballing output without a PNG decoder.
    pub fn write_ppm(&self, path: &Path) -> Result<(), RasterError> {
        let io = |source| RasterError::Io {
            path: path.to_owned(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height).map_err(io)?;
        w.write_all(&self.data).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Decode an 8-bit PNG (RGB, RGBA, gray or gray+alpha; alpha is dropped).
    pub fn read_png(path: &Path) -> Result<Self, RasterError> {
        let file = File::open(path).map_err(|source| RasterError::Io {
            path: path.to_owned(),
            source,
        })?;
        let decode_err = |e: png::DecodingError| RasterError::Decode {
            path: path.to_owned(),
            message: e.to_string(),
        };
        let mut reader = png::Decoder::new(BufReader::new(file))
            .read_info()
            .map_err(decode_err)?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(decode_err)?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width as usize, info.height as usize);
        if info.bit_depth != png::BitDepth::Eight {
            return Err(RasterError::Unsupported {
                path: path.to_owned(),
                color: info.color_type,
                depth: info.bit_depth,
            });
        }
        let data = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
            color => {
                return Err(RasterError::Unsupported {
                    path: path.to_owned(),
                    color,
                    depth: info.bit_depth,
                })
            }
        };
        Ok(Self { width: w, height: h, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::white(7, 5);
        img.put(3, 2, [255, 0, 0]);
        img.put(6, 4, [1, 2, 3]);
        let path = dir.path().join("x.png");
        img.write_png(&path).unwrap();
        assert_eq!(RgbImage::read_png(&path).unwrap(), img);
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut img = RgbImage::white(16, 16);
        img.put(4, 4, [0, 0, 0]);
        assert_eq!(img.encode_png().unwrap(), img.encode_png().unwrap());
    }

    #[test]
    fn corrupt_png_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = RgbImage::read_png(&path).unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }

    #[test]
    fn ppm_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        RgbImage::white(2, 3).write_ppm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n2 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }

    #[test]
    fn blit_clips() {
        let mut big = RgbImage::white(4, 4);
        let small = RgbImage::filled(3, 3, [0, 0, 0]);
        big.blit(&small, 2, 2);
        assert_eq!(big.get(3, 3), [0, 0, 0]);
        assert_eq!(big.get(1, 1), [255; 3]);
    }
}
