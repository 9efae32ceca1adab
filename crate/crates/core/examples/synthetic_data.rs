//! Render a contact sheet of synthetic carriers and digits.
//!
//! cargo run --example synthetic_data -- [out_dir]

use faceprotect::datasets::{synthetic_digits, synthetic_faces};
use faceprotect::image::{GrayImage, RgbImage};

fn main() -> faceprotect::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_preview".into());
    std::fs::create_dir_all(&out).map_err(|e| faceprotect::Error::Dataset(e.to_string()))?;

    let faces = synthetic_faces(8, 42);
    let (w, h) = (256 * 4, 256 * 2);
    let mut sheet = vec![0u8; w * h * 3];
    for (i, face) in faces.iter().enumerate() {
        let (ox, oy) = ((i % 4) * 256, (i / 4) * 256);
        for y in 0..256 {
            let src = &face.data()[y * 256 * 3..(y + 1) * 256 * 3];
            let dst = ((oy + y) * w + ox) * 3;
            sheet[dst..dst + 256 * 3].copy_from_slice(src);
        }
    }
    RgbImage::new(w as u32, h as u32, sheet)?.save(format!("{out}/faces.png"))?;

    let digits = synthetic_digits(40, 42);
    let (w, h) = (28 * 10, 28 * 4);
    let mut sheet = vec![0u8; w * h];
    for (i, d) in digits.iter().enumerate() {
        let (ox, oy) = ((i % 10) * 28, (i / 10) * 28);
        for y in 0..28 {
            sheet[(oy + y) * w + ox..(oy + y) * w + ox + 28].copy_from_slice(&d.data()[y * 28..(y + 1) * 28]);
        }
    }
    GrayImage::new(w as u32, h as u32, sheet)?
        .resize_nearest(w as u32 * 3, h as u32 * 3)?
        .save(format!("{out}/digits.png"))?;
    println!("wrote {out}/faces.png and {out}/digits.png");
    Ok(())
}
