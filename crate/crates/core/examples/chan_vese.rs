//! Classic Chan-Vese segmentation of a noisy disk from a small initial contour.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use weakseg::eval::prf_dice;
use weakseg::imgcore::{BinaryMask, GrayImage};
use weakseg::levelset::{cv_evolve, CvConfig};

fn main() -> weakseg::Result<()> {
    let n = 64;
    let inside = |x: usize, y: usize, r: f64| (x as f64 + 0.5 - 32.0).hypot(y as f64 + 0.5 - 32.0) <= r;
    let truth = BinaryMask::from_fn(n, n, |x, y| inside(x, y, 20.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let img = GrayImage::from_fn(n, n, |x, y| {
        let base: f64 = if *truth.get(x, y) { 0.75 } else { 0.25 };
        (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
    });
    let init = BinaryMask::from_fn(n, n, |x, y| inside(x, y, 10.0));

    let r = cv_evolve(&img, &init, &CvConfig::default())?;
    let e = &r.energies;
    println!(
        "steps {} converged {} degenerate {}",
        r.iterations, r.converged, r.degenerate
    );
    println!("energy {:.4} -> {:.4}", e[0], e[e.len() - 1]);
    println!("dice vs truth {:.4}", prf_dice(&r.mask, &truth)?.dice);
    Ok(())
}
