//! Draws equivariant segmentation architectures in a parameter range and
//! prints their layer tables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2seg::cli::reference_architecture;
use s2seg::network::{count_parameters, sample_equivariant_architecture, SamplerConfig};

fn main() -> s2seg::Result<()> {
    let reference = reference_architecture()?;
    println!("reference model, {} parameters\n{reference}", count_parameters(&reference));
    let cfg = SamplerConfig::new(190_000, 210_000, 50, 1, 11);
    for seed in 0..3 {
        let spec = sample_equivariant_architecture(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let bandlimits: Vec<usize> = spec.layers.iter().map(|l| l.out_bandlimit).collect();
        println!(
            "seed {seed}: {} layers, {} parameters, output bandlimits {bandlimits:?}, β̂·L = {:.4}",
            spec.layers.len(),
            count_parameters(&spec),
            spec.layers[0].beta_hat * spec.layers[0].in_bandlimit as f64
        );
    }
    Ok(())
}
