//! Random augmentation keeps the constrained region tied to the lesion: its
//! pixel count stays near four times the ellipse's under scaling, rotation
//! and cropping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weakseg::synthgen::{gen_dataset, SynthConfig};
use weakseg::weaktrain::{augment, AugmentConfig};

fn main() -> weakseg::Result<()> {
    let s = gen_dataset(&SynthConfig::default(), 1)?.samples.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("original: {:?}, region/ellipse {:.2}", s.image.dims(), ratio(&s));
    for i in 0..8 {
        let a = augment(&s, &AugmentConfig::default(), [32, 64], &mut rng)?;
        let t = &a.sample;
        println!(
            "#{i}: {:?}, theta {:6.1} deg, long axis {:5.2}, region/ellipse {:.2}",
            t.image.dims(),
            t.ellipse.theta.to_degrees(),
            t.annotation.long_length(),
            ratio(t)
        );
    }
    Ok(())
}

fn ratio(s: &weakseg::weaktrain::Sample) -> f64 {
    s.region.count() as f64 / s.ellipse_mask().count() as f64
}
