//! Binary PGM/PPM images via the `image` crate.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::nn::Image8;

fn format_err(e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => {
            Error::Io(io)
        }
        other => Error::Format(other.to_string()),
    }
}

/// Grayscale images stay single-channel; anything else becomes RGB.
pub fn read_pnm(path: &Path) -> Result<Image8> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(format_err)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Image8::new(h, w, 1, b.into_raw()),
        other => Image8::new(h, w, 3, other.to_rgb8().into_raw()),
    }
}

/// P5 for one channel, P6 for three.
pub fn write_pnm(path: &Path, img: &Image8) -> Result<()> {
    let (subtype, color) = match img.channels() {
        1 => (
            PnmSubtype::Graymap(SampleEncoding::Binary),
            ExtendedColorType::L8,
        ),
        3 => (
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            ExtendedColorType::Rgb8,
        ),
        c => {
            return Err(Error::Format(format!(
                "cannot write {c}-channel image as PNM"
            )))
        }
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(subtype)
        .write_image(img.pixels(), img.width() as u32, img.height() as u32, color)
        .map_err(format_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_and_color_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gray = Image8::new(3, 4, 1, (0..12).map(|v| v * 20).collect()).unwrap();
        let p = dir.path().join("g.pgm");
        write_pnm(&p, &gray).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P5"));
        assert_eq!(read_pnm(&p).unwrap(), gray);

        let rgb = Image8::new(2, 2, 3, (0..12).map(|v| 255 - v).collect()).unwrap();
        let p = dir.path().join("c.ppm");
        write_pnm(&p, &rgb).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P6"));
        assert_eq!(read_pnm(&p).unwrap(), rgb);

        let two = Image8::filled(2, 2, 2, 0);
        assert!(write_pnm(&dir.path().join("x.pgm"), &two).is_err());
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pgm");
        std::fs::write(&p, b"P5\n2 2\n255\n\x01").unwrap();
        assert!(matches!(read_pnm(&p), Err(Error::Format(_))));
    }
}
