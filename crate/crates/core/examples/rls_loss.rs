//! Regional level set loss of a few candidate predictions on one synthetic
//! lesion: the truth scores lowest, the ellipse close behind.

use weakseg::eval::prf_dice;
use weakseg::imgcore::BinaryMask;
use weakseg::losses::{region_means, rls_loss, LossConfig};
use weakseg::synthgen::{gen_dataset, SynthConfig};

fn main() -> weakseg::Result<()> {
    let cfg = SynthConfig {
        irregularity: 0.3,
        noise: 0.02,
        ..SynthConfig::default()
    };
    let s = gen_dataset(&cfg, 1)?.samples.remove(0);
    let gt = s.gt_mask.clone().expect("synthetic samples carry ground truth");
    let loss = LossConfig::default();
    let (w, h) = gt.dims();

    let candidates = [
        ("ground truth", gt.clone()),
        ("ellipse", s.ellipse_mask()),
        ("everything", BinaryMask::filled(w, h, true)),
        ("inverted truth", gt.complement()),
    ];
    println!(
        "{:<16} {:>8} {:>8} {:>8} {:>8}",
        "prediction", "rls", "c1", "c2", "dice"
    );
    for (name, mask) in candidates {
        // Soften binary masks so both region means stay defined.
        let p = mask.map(|&m| if m { 0.99 } else { 0.01 });
        let means = region_means(&p, &s.image, &s.region)?;
        let l = rls_loss(&p, &s.image, &s.region, &loss)?;
        println!(
            "{name:<16} {:>8.5} {:>8.4} {:>8.4} {:>8.4}",
            l.value,
            means.c1,
            means.c2,
            prf_dice(&mask, &gt)?.dice
        );
    }
    Ok(())
}
