//! Map complex fingerprints to two-plane images in [-1, 1] and back.
//!
//!     cargo run --release --example normalization

use num_complex::Complex64;
use pla_core::csi::{ComplexCsi, Identity};
use pla_core::fingerprint::{batchify, denormalize, normalize, unbatchify, NormMode, NormalizationMeta};

fn main() -> pla_core::Result<()> {
    let values: Vec<Complex64> = (0..8 * 4)
        .map(|i| Complex64::from_polar(10f64.powi(i % 7 - 3), i as f64 * 0.7))
        .collect();
    let x = ComplexCsi::new(8, 4, values, Identity::Jack, 0)?;
    let img = normalize(&x)?;
    let meta = img.meta.expect("fitted");
    println!("shared range {:.4e}, midpoints ({:.3e}, {:.3e})", meta.range_common, meta.mid_real, meta.mid_imag);
    println!("max |entry| {:.6}", img.max_abs());

    let back = denormalize(&img)?;
    let worst = x
        .values()
        .iter()
        .zip(back.values())
        .map(|(u, v)| (u - v).norm() / u.norm())
        .fold(0.0, f64::max);
    println!("worst relative round-trip error {worst:.2e}");

    // constant input has zero range; it maps to zeros and back
    let flat = ComplexCsi::new(2, 2, vec![Complex64::new(3.0, -1.0); 4], Identity::Alice, 0)?;
    let img = normalize(&flat)?;
    println!("degenerate: {}, planes {:?}", img.meta.unwrap().degenerate, img.planes());
    println!("restored {:?}", denormalize(&img)?.values()[0]);

    // one set of statistics for a whole dataset
    let items = vec![x.clone(), flat.relabel(Identity::Jack)];
    let shared = NormalizationMeta::fit(items[0].values())?;
    let mode = NormMode::PerDataset { meta: shared };
    let batch = batchify(&[mode.normalize(&items[0])?, normalize(&items[0])?])?;
    println!("batch dims {:?}, unbatched {}", batch.dims(), unbatchify(&batch)?.len());
    Ok(())
}
