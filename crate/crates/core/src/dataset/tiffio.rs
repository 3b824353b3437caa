//! Grayscale TIFF reading (8/16-bit, single or multi-page) and 16-bit writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use super::DatasetError;

fn format_err(path: &Path, msg: impl std::fmt::Display) -> DatasetError {
    DatasetError::Format(format!("{}: {msg}", path.display()))
}

/// All pages of a grayscale TIFF, widened to `u16` without rescaling.
pub fn read_tiff_stack(path: &Path) -> Result<Vec<Array2<u16>>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| format_err(path, e))?;
    let mut pages = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(|e| format_err(path, e))?;
        match dec.colortype().map_err(|e| format_err(path, e))? {
            ColorType::Gray(8) | ColorType::Gray(16) => {}
            other => return Err(format_err(path, format!("expected 8/16-bit grayscale, found {other:?}"))),
        }
        let data: Vec<u16> = match dec.read_image().map_err(|e| format_err(path, e))? {
            DecodingResult::U8(v) => v.into_iter().map(u16::from).collect(),
            DecodingResult::U16(v) => v,
            _ => return Err(format_err(path, "unsupported sample format")),
        };
        let page = Array2::from_shape_vec((h as usize, w as usize), data).map_err(|e| format_err(path, e))?;
        pages.push(page);
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| format_err(path, e))?;
    }
    Ok(pages)
}

/// Writes one page per image.
pub fn write_tiff_stack(path: &Path, pages: &[Array2<u16>]) -> Result<(), DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(io)?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| format_err(path, e))?;
    for page in pages {
        let (h, w) = page.dim();
        let data = page.as_standard_layout();
        enc.write_image::<colortype::Gray16>(w as u32, h as u32, data.as_slice().expect("standard layout"))
            .map_err(|e| format_err(path, e))?;
    }
    Ok(())
}

pub fn write_tiff_u8(path: &Path, image: &Array2<u8>) -> Result<(), DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(io)?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| format_err(path, e))?;
    let (h, w) = image.dim();
    let data = image.as_standard_layout();
    enc.write_image::<colortype::Gray8>(w as u32, h as u32, data.as_slice().expect("standard layout"))
        .map_err(|e| format_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipage_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.tif");
        let pages: Vec<Array2<u16>> =
            (0..3).map(|p| Array2::from_shape_fn((4, 6), |(r, c)| (p * 20000 + r * 100 + c) as u16)).collect();
        write_tiff_stack(&path, &pages).unwrap();
        assert_eq!(read_tiff_stack(&path).unwrap(), pages);
    }

    #[test]
    fn eight_bit_is_widened_not_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g8.tif");
        let img = Array2::from_shape_fn((3, 3), |(r, c)| (r * 3 + c) as u8 * 20);
        write_tiff_u8(&path, &img).unwrap();
        assert_eq!(read_tiff_stack(&path).unwrap()[0], img.mapv(u16::from));
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tif");
        std::fs::write(&path, b"not a tiff").unwrap();
        assert!(matches!(read_tiff_stack(&path), Err(DatasetError::Format(_))));
    }
}
