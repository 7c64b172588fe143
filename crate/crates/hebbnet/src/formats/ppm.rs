//! Binary PPM (P6) output.

use std::io::Write;
use std::path::Path;

use hebbnet_core::analysis::RgbImage;

use crate::error::{Error, Result};

pub fn encode(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn write(path: &Path, image: &RgbImage) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(image)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_then_raw_pixels() {
        let img = RgbImage { width: 2, height: 1, pixels: vec![255, 0, 0, 0, 0, 255] };
        let bytes = encode(&img);
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &img.pixels[..]);
    }
}
