//! Generate a synthetic lesion dataset and write it to disk.
//!
//! cargo run --example synth_dataset -- [OUT_DIR] [N]

use weakseg::synthgen::{gen_dataset, write_dataset, SynthConfig};

fn main() -> weakseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .unwrap_or_else(|| std::env::temp_dir().join("weakseg-synth").display().to_string());
    let n: usize = args.next().and_then(|v| v.parse().ok()).unwrap_or(8);

    let cfg = SynthConfig {
        distractors: 2,
        seed: 42,
        ..SynthConfig::default()
    };
    let data = gen_dataset(&cfg, n)?;
    write_dataset(&out, &data)?;

    for (s, m) in data.samples.iter().zip(&data.manifest) {
        println!(
            "{}: radius {:5.2} contrast {:+.3} long {:5.2} short {:5.2} distractors {}",
            s.id,
            m.radius,
            m.contrast,
            s.annotation.long_length(),
            s.annotation.short_length(),
            m.distractors
        );
    }
    println!("wrote {n} lesions to {out}/");
    Ok(())
}
