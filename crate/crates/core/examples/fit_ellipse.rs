//! Fit the pseudo-mask ellipse to a RECIST annotation and build the
//! constrained region used by the level set loss.

use weakseg::recist::{constrained_region, fit_ellipse, rasterize_ellipse, RecistAnnotation};

fn main() -> weakseg::Result<()> {
    // Long diameter tilted by 30 degrees, short one perpendicular to it.
    let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let (cx, cy) = (32.0, 32.0);
    let ann = RecistAnnotation::new(
        ((cx - 12.0 * c, cy - 12.0 * s), (cx + 12.0 * c, cy + 12.0 * s)),
        ((cx + 6.0 * s, cy - 6.0 * c), (cx - 6.0 * s, cy + 6.0 * c)),
    );
    let e = fit_ellipse(&ann)?;
    println!("ellipse: {}", serde_json::to_string(&e)?);

    let mask = rasterize_ellipse(&e, (64, 64));
    let region = constrained_region(&e, (64, 64));
    println!(
        "mask {} px (analytic {:.1}), region {} px, ratio {:.3}",
        mask.count(),
        e.area(),
        region.count(),
        region.count() as f64 / mask.count() as f64
    );

    for y in (0..64).step_by(2) {
        let row: String = (0..64)
            .map(|x| match (mask.get(x, y), region.get(x, y)) {
                (true, _) => '#',
                (false, true) => '.',
                _ => ' ',
            })
            .collect();
        println!("{row}");
    }
    Ok(())
}
