//! Per-layer latency and per-operation time shares of a sampled model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2seg::cli::profile_network;
use s2seg::grid::Bandlimit;
use s2seg::network::{sample_equivariant_architecture, Network, SamplerConfig};
use s2seg::transforms::{s2_synthesize, S2Spectrum};

fn main() -> s2seg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = sample_equivariant_architecture(&SamplerConfig::new(20_000, 60_000, 16, 1, 11), &mut rng)?;
    let net = Network::new(spec)?;
    let params = net.init_params(&mut rng);
    let l = Bandlimit::new(16)?;
    let inputs = (0..2).map(|_| s2_synthesize(&S2Spectrum::random_real(l, 1, &mut rng))).collect::<s2seg::Result<Vec<_>>>()?;
    let report = profile_network(&net, &params, &inputs, 1, 5)?;
    println!("{} parameters\n{report}", net.param_count());
    Ok(())
}
