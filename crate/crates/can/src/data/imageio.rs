//! Image decode/encode and geometry: bilinear resizing and the five-crop
//! augmentation.
//!
//! Images live in `[-1, 1]` as `[3, H, W]` tensors; 8-bit sRGB maps through
//! `2 v / 255 - 1` so an encode/decode round trip at unchanged size is
//! lossless.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn pixel_to_unit(v: u8) -> f64 {
    2.0 * v as f64 / 255.0 - 1.0
}

pub fn unit_to_pixel(v: f64) -> u8 {
    (((v + 1.0) * 255.0 / 2.0).round()).clamp(0.0, 255.0) as u8
}

/// Decodes a PNG or JPEG file into a `[3, H, W]` tensor in `[-1, 1]`.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw(); // interleaved RGB
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * 3;
            for c in 0..3 {
                data[(c * h + y) * w + x] = pixel_to_unit(raw[base + c]);
            }
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data))
}

/// Writes a `[3, H, W]` tensor in `[-1, 1]` as an 8-bit PNG.
pub fn encode_png(path: &Path, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(
            "encode_png",
            format!("expected [3, H, W], got {:?}", shape),
        ));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut raw = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw[(y * w + x) * 3 + c] = unit_to_pixel(image.data()[(c * h + y) * w + x]);
            }
        }
    }
    let buf: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, raw)
        .expect("buffer sized to image");
    buf.save(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Bilinear resize with half-pixel sample centers. Identity when the size
/// already matches.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::shape("resize", "expected [C, H, W]"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target is degenerate".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f64;
                let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    Ok(Tensor::from_vec(&[c, out_h, out_w], out))
}

/// Crop offsets `(y, x)` of the five-crop augmentation for an `H x W` image,
/// in the order bottom-left, bottom-right, mid, top-left, top-right. Crops
/// cover 90% of each extent, rounded down.
pub fn five_crop_offsets(h: usize, w: usize) -> (usize, usize, [(usize, usize); 5]) {
    let ch = (0.9 * h as f64).floor() as usize;
    let cw = (0.9 * w as f64).floor() as usize;
    let (dy, dx) = (h - ch, w - cw);
    (
        ch,
        cw,
        [
            (dy, 0),           // bottom-left
            (dy, dx),          // bottom-right
            (dy / 2, dx / 2),  // mid
            (0, 0),            // top-left
            (0, dx),           // top-right
        ],
    )
}

/// Returns the five 90% crops of a `[3, H, W]` image at native crop size;
/// the ingestion pipeline resizes them back to the dataset target size.
pub fn five_crop(image: &Tensor) -> Result<Vec<Tensor>> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::shape("five_crop", "expected [C, H, W]"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h < 10 || w < 10 {
        return Err(Error::Data(format!(
            "five_crop needs at least 10x10 pixels, got {h}x{w}"
        )));
    }
    let (ch, cw, offsets) = five_crop_offsets(h, w);
    let mut crops = Vec::with_capacity(5);
    for (oy, ox) in offsets {
        let mut data = vec![0.0; c * ch * cw];
        for chn in 0..c {
            for y in 0..ch {
                let src = &image.data()[(chn * h + oy + y) * w + ox..][..cw];
                data[(chn * ch + y) * cw..(chn * ch + y + 1) * cw].copy_from_slice(src);
            }
        }
        crops.push(Tensor::from_vec(&[c, ch, cw], data));
    }
    Ok(crops)
}

/// Tiles a `[N, 3, S, S]` batch into one `[3, rows*S, columns*S]` image,
/// row-major, padding missing cells with black.
pub fn tile_grid(images: &Tensor, columns: usize) -> Result<Tensor> {
    let (n, c, h, w) = images.dims4("tile_grid")?;
    if columns == 0 {
        return Err(Error::InvalidArgument("grid needs at least one column".into()));
    }
    let rows = n.div_ceil(columns);
    let (gh, gw) = (rows * h, columns * w);
    let mut out = vec![-1.0; c * gh * gw];
    for i in 0..n {
        let (row, col) = (i / columns, i % columns);
        for ch in 0..c {
            for y in 0..h {
                let src = &images.data()[((i * c + ch) * h + y) * w..][..w];
                let dst_base = (ch * gh + row * h + y) * gw + col * w;
                out[dst_base..dst_base + w].copy_from_slice(src);
            }
        }
    }
    Ok(Tensor::from_vec(&[c, gh, gw], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::testutil::seeded_tensor;

    #[test]
    fn tile_grid_geometry() {
        let images = seeded_tensor(&[10, 3, 4, 4], 90);
        let grid = tile_grid(&images, 8).unwrap();
        assert_eq!(grid.shape(), &[3, 8, 32]); // 2 rows of 8 columns
        // first image lands at the top-left tile
        assert_eq!(grid.data()[0], images.data()[0]);
    }

    #[test]
    fn five_crop_geometry_100px() {
        let (ch, cw, offsets) = five_crop_offsets(100, 100);
        assert_eq!((ch, cw), (90, 90));
        let set: std::collections::BTreeSet<(usize, usize)> = offsets.into_iter().collect();
        let expected: std::collections::BTreeSet<(usize, usize)> =
            [(0, 0), (0, 10), (10, 0), (10, 10), (5, 5)].into_iter().collect();
        assert_eq!(set, expected);
    }

    #[test]
    fn five_crop_geometry_10px() {
        let (ch, cw, offsets) = five_crop_offsets(10, 10);
        assert_eq!((ch, cw), (9, 9));
        for (y, x) in offsets {
            assert!(y <= 1 && x <= 1);
        }
        assert_eq!(offsets[2], (0, 0)); // mid offset floor((10-9)/2) = 0
    }

    #[test]
    fn five_crop_content_is_pixel_exact() {
        let image = seeded_tensor(&[3, 20, 16], 91);
        let crops = five_crop(&image).unwrap();
        let (ch, cw, offsets) = five_crop_offsets(20, 16);
        for (crop, (oy, ox)) in crops.iter().zip(offsets) {
            assert_eq!(crop.shape(), &[3, ch, cw]);
            for c in 0..3 {
                for y in 0..ch {
                    for x in 0..cw {
                        assert_eq!(
                            crop.data()[(c * ch + y) * cw + x],
                            image.data()[(c * 20 + oy + y) * 16 + ox + x]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn five_crop_rejects_tiny_images() {
        let image = Tensor::zeros(&[3, 8, 12]);
        assert!(five_crop(&image).is_err());
    }

    #[test]
    fn resize_identity_is_exact() {
        let image = seeded_tensor(&[3, 12, 12], 92);
        let out = resize_bilinear(&image, 12, 12).unwrap();
        assert_eq!(out, image);
    }

    #[test]
    fn resize_stays_in_range_and_shape() {
        let image = seeded_tensor(&[3, 17, 13], 93);
        let out = resize_bilinear(&image, 32, 32).unwrap();
        assert_eq!(out.shape(), &[3, 32, 32]);
        assert!(out.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn resize_constant_image_is_constant() {
        let image = Tensor::full(&[3, 9, 9], 0.25);
        let out = resize_bilinear(&image, 21, 7).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn png_roundtrip_is_lossless_at_same_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        // quantized pixel values survive the trip exactly
        let image = Tensor::from_fn(&[3, 8, 8], |i| pixel_to_unit((i * 37 % 256) as u8));
        encode_png(&path, &image).unwrap();
        let back = decode_image(&path).unwrap();
        assert_eq!(back, image);
    }
}
