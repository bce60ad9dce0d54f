//! Score ellipse pseudo masks against ground truth and write the report
//! files the `eval` subcommand produces.

use weakseg::eval::{prf_dice, summarize, write_histogram_csv, write_metrics_csv, write_summary_json};
use weakseg::synthgen::{gen_dataset, SynthConfig};

fn main() -> weakseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("weakseg-eval").display().to_string());
    let cfg = SynthConfig {
        irregularity: 0.3,
        ..SynthConfig::default()
    };
    let data = gen_dataset(&cfg, 50)?;
    let mut cases = Vec::new();
    for s in &data.samples {
        let gt = s.gt_mask.as_ref().expect("ground truth");
        cases.push((s.id.clone(), prf_dice(&s.ellipse_mask(), gt)?));
    }
    let metrics: Vec<_> = cases.iter().map(|(_, m)| *m).collect();
    let summary = summarize(&metrics)?;

    std::fs::create_dir_all(&out)?;
    write_metrics_csv(format!("{out}/metrics.csv"), &cases)?;
    write_summary_json(format!("{out}/summary.json"), &summary)?;
    write_histogram_csv(format!("{out}/histogram.csv"), &summary)?;

    println!("dice {:.4}±{:.4} (population std)", summary.dice.mean, summary.dice.std);
    for t in [50, 80, 90, 95] {
        println!(
            "  dice >= {:.2}: {:5.1}% of lesions",
            t as f64 / 100.0,
            100.0 * summary.dice_histogram[t]
        );
    }
    println!("reports in {out}/");
    Ok(())
}
