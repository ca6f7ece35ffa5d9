//! Plants a synthetic dataset on disk and reads it back: per-streamer latent
//! directions, an excitement walk per window, lagged text, and a manifest
//! with per-split checksums.

use contentctr::data::{
    generate_windows, load_split, read_dataset_manifest, write_dataset, FileFormat,
    GeneratorConfig, Split,
};
use contentctr::Result;

fn main() -> Result<()> {
    let config = GeneratorConfig {
        streamers: 3,
        windows_per_streamer: 8,
        n: 8,
        d_visual: 12,
        d_text: 10,
        lag_min: 0,
        lag_max: 2,
        ..GeneratorConfig::default()
    };
    let seed = 42;
    let data = generate_windows(&config, seed)?;
    println!(
        "generated {} train / {} test windows of {} segments",
        data.train.len(),
        data.test.len(),
        config.n
    );

    let w = &data.train[0];
    println!(
        "first window: streamer {}, text lag {}, ctr range [{:.3}, {:.3}]",
        w.streamer_id,
        w.lag,
        w.segments.iter().map(|s| s.ctr).fold(f32::INFINITY, f32::min),
        w.segments.iter().map(|s| s.ctr).fold(0.0, f32::max),
    );

    let dir = std::env::temp_dir().join("contentctr_generate_example");
    let manifest = write_dataset(&dir, &data, &config, seed, FileFormat::Binary)?;
    println!("wrote {} as {:?}", dir.display(), manifest.file_format);

    // The manifest records a checksum per split; loading verifies it.
    let manifest = read_dataset_manifest(&dir)?;
    for (name, entry) in [("train", &manifest.train), ("test", &manifest.test)] {
        println!(
            "  {name}: {} windows in {}, sha256 {}...",
            entry.windows,
            entry.file,
            &entry.sha256[..12]
        );
    }
    let train = load_split(&dir, Split::Train)?;
    assert_eq!(train, data.train, "round trip must be exact");
    println!("round trip exact: {} windows match bit for bit", train.len());
    Ok(())
}
