//! Projects digit canvases onto the sphere and reports mask statistics.

use s2seg::datagen::{generate_dataset, synthetic_digits, DataGenConfig, ProjectionPoint};

fn main() -> s2seg::Result<()> {
    let sources = synthetic_digits(200, 1);
    for (point, rotated) in [(ProjectionPoint::Pole, false), (ProjectionPoint::GridCenter, false), (ProjectionPoint::Pole, true)] {
        let cfg = DataGenConfig { bandlimit: 32, items_per_sphere: 2, projection_point: point, rotated, seed: 4, ..Default::default() };
        let ds = generate_dataset(&cfg, &sources, 20)?;
        let fg: usize = ds.records.iter().map(|r| r.mask.iter().filter(|&&c| c != 0).count()).sum();
        let total: usize = ds.records.iter().map(|r| r.mask.len()).sum();
        println!(
            "{:<11} rotated {rotated:<5}: {} records, {:.2}% foreground points, {} bytes on disk",
            point.to_string(),
            ds.records.len(),
            100.0 * fg as f64 / total as f64,
            ds.to_bytes().len()
        );
    }
    Ok(())
}
