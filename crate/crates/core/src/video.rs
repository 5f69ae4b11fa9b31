//! Frame decoding for the container formats found in ultrasound corpora.
//!
//! Natively supported: YUV4MPEG2 (`.y4m`), animated GIF, single still images
//! and directories of still images (decoded in file-name order). Any other
//! extension is piped through an external `ffmpeg` binary (overridable with
//! the `LUS_FFMPEG` environment variable) as a YUV4MPEG2 stream.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use image::{AnimationDecoder, DynamicImage, GrayImage, ImageReader, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode video: {reason}")]
    Undecodable { path: PathBuf, reason: String },
    #[error("{path}: no decodable frames")]
    NoFrames { path: PathBuf },
}

pub type Result<T> = std::result::Result<T, VideoError>;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "gif"];

/// A lazily decoded stream of frames.
pub struct FrameStream {
    path: PathBuf,
    inner: Inner,
}

enum Inner {
    Y4m {
        decoder: y4m::Decoder<Box<dyn Read + Send>>,
        child: Option<Child>,
    },
    Buffered(std::vec::IntoIter<DynamicImage>),
    Files(std::vec::IntoIter<PathBuf>),
}

impl Drop for FrameStream {
    fn drop(&mut self) {
        if let Inner::Y4m { child: Some(child), .. } = &mut self.inner {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn undecodable(path: &Path, reason: impl ToString) -> VideoError {
    VideoError::Undecodable {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Open a video (or image directory) for sequential decoding.
pub fn open(path: &Path) -> Result<FrameStream> {
    let inner = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|source| VideoError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && IMAGE_EXTENSIONS.contains(&extension(p).as_str()))
            .collect();
        files.sort();
        Inner::Files(files.into_iter())
    } else {
        let file = File::open(path).map_err(|source| VideoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        match extension(path).as_str() {
            "y4m" => {
                let reader: Box<dyn Read + Send> = Box::new(BufReader::new(file));
                let decoder = y4m::decode(reader).map_err(|e| undecodable(path, e))?;
                Inner::Y4m { decoder, child: None }
            }
            "gif" => {
                let decoder = image::codecs::gif::GifDecoder::new(BufReader::new(file))
                    .map_err(|e| undecodable(path, e))?;
                let frames = decoder
                    .into_frames()
                    .collect_frames()
                    .map_err(|e| undecodable(path, e))?;
                let images: Vec<DynamicImage> = frames
                    .into_iter()
                    .map(|f| DynamicImage::ImageRgba8(f.into_buffer()))
                    .collect();
                Inner::Buffered(images.into_iter())
            }
            "png" | "jpg" | "jpeg" | "bmp" => {
                let img = decode_image(path)?;
                Inner::Buffered(vec![img].into_iter())
            }
            _ => spawn_ffmpeg(path)?,
        }
    };
    Ok(FrameStream {
        path: path.to_path_buf(),
        inner,
    })
}

fn decode_image(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|source| VideoError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| VideoError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|e| undecodable(path, e))
}

fn spawn_ffmpeg(path: &Path) -> Result<Inner> {
    let program = std::env::var_os("LUS_FFMPEG").unwrap_or_else(|| "ffmpeg".into());
    let mut child = Command::new(&program)
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p", "-"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| {
            undecodable(
                path,
                format!(
                    "unsupported container `.{}` and no usable ffmpeg ({}: {e})",
                    extension(path),
                    program.to_string_lossy()
                ),
            )
        })?;
    let stdout = child.stdout.take().expect("stdout piped");
    let reader: Box<dyn Read + Send> = Box::new(BufReader::new(stdout));
    match y4m::decode(reader) {
        Ok(decoder) => Ok(Inner::Y4m {
            decoder,
            child: Some(child),
        }),
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            Err(undecodable(path, format!("ffmpeg produced no stream: {e}")))
        }
    }
}

fn clamp_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Convert one YUV4MPEG2 frame to an image. 8-bit only; full-range BT.601.
fn y4m_frame_to_image(
    frame: &y4m::Frame<'_>,
    width: usize,
    height: usize,
    colorspace: y4m::Colorspace,
) -> std::result::Result<DynamicImage, String> {
    use y4m::Colorspace as C;
    if colorspace.get_bit_depth() != 8 {
        return Err(format!("unsupported bit depth {}", colorspace.get_bit_depth()));
    }
    let y = frame.get_y_plane();
    if let C::Cmono = colorspace {
        return GrayImage::from_raw(width as u32, height as u32, y.to_vec())
            .map(DynamicImage::ImageLuma8)
            .ok_or_else(|| "short luma plane".to_string());
    }
    let (sx, sy) = match colorspace {
        C::C444 => (1, 1),
        C::C422 => (2, 1),
        _ => (2, 2),
    };
    let chroma_w = width.div_ceil(sx);
    let (u, v) = (frame.get_u_plane(), frame.get_v_plane());
    let mut out = RgbImage::new(width as u32, height as u32);
    for row in 0..height {
        for col in 0..width {
            let luma = y[row * width + col] as f32;
            let ci = (row / sy) * chroma_w + col / sx;
            let cb = u[ci] as f32 - 128.0;
            let cr = v[ci] as f32 - 128.0;
            out.put_pixel(
                col as u32,
                row as u32,
                image::Rgb([
                    clamp_u8(luma + 1.402 * cr),
                    clamp_u8(luma - 0.344_136 * cb - 0.714_136 * cr),
                    clamp_u8(luma + 1.772 * cb),
                ]),
            );
        }
    }
    Ok(DynamicImage::ImageRgb8(out))
}

impl Iterator for FrameStream {
    type Item = Result<DynamicImage>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = &self.path;
        match &mut self.inner {
            Inner::Buffered(it) => it.next().map(Ok),
            Inner::Files(it) => it.next().map(|p| decode_image(&p)),
            Inner::Y4m { decoder, .. } => {
                let (w, h, cs) = (decoder.get_width(), decoder.get_height(), decoder.get_colorspace());
                match decoder.read_frame() {
                    Ok(frame) => Some(y4m_frame_to_image(&frame, w, h, cs).map_err(|r| undecodable(path, r))),
                    Err(y4m::Error::EOF) => None,
                    Err(e) => Some(Err(undecodable(path, e))),
                }
            }
        }
    }
}

/// Write grayscale frames as a YUV4MPEG2 (`Cmono`) stream.
pub fn write_y4m_gray(path: &Path, frames: &[GrayImage], fps: usize) -> Result<()> {
    let io_err = |source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let first = frames.first().ok_or_else(|| VideoError::NoFrames { path: path.to_path_buf() })?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    let file = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    let mut enc = y4m::encode(w, h, y4m::Ratio::new(fps, 1))
        .with_colorspace(y4m::Colorspace::Cmono)
        .write_header(file)
        .map_err(|e| undecodable(path, e))?;
    for f in frames {
        if f.width() as usize != w || f.height() as usize != h {
            return Err(undecodable(path, "frame size changed mid-stream"));
        }
        enc.write_frame(&y4m::Frame::new([f.as_raw(), &[], &[]], None))
            .map_err(|e| undecodable(path, e))?;
    }
    Ok(())
}
