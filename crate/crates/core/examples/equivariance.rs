//! Rotating the input of a spherical CNN rotates its output. Exact for a
//! linear stack, approximate once ReLU is sampled on the grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2seg::cli::verify::relu_equivariance_by_bandlimit;
use s2seg::grid::{Bandlimit, Rotation};
use s2seg::network::{rotation_equivariance_error, Head, LayerKind, LayerSpec, ModelSpec, Network, Nonlinearity};
use s2seg::transforms::S2Spectrum;

fn main() -> s2seg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = 10;
    let layers = vec![
        LayerSpec::new(LayerKind::S2So3Conv, 1, 4, l, 8, 0.5),
        LayerSpec::new(LayerKind::So3Conv, 4, 4, 8, 8, 0.6),
        LayerSpec::new(LayerKind::So3S2Conv, 4, 3, 8, l, 0.6),
    ];
    let net = Network::new(ModelSpec::new(layers, Nonlinearity::Identity, Head::Segmentation)?)?;
    let params = net.init_params(&mut rng);
    let x = S2Spectrum::random_real(Bandlimit::new(l)?, 1, &mut rng);
    for _ in 0..5 {
        let r = Rotation::random(&mut rng);
        let e = rotation_equivariance_error(&net, &params, &x, &r)?;
        let a = r.euler();
        println!("linear stack, R = ({:.2}, {:.2}, {:.2}): relative error {e:.2e}", a.alpha, a.beta, a.gamma);
    }
    let bandlimits = [8, 16, 32];
    let medians = relu_equivariance_by_bandlimit(&bandlimits, 10, 3)?;
    for (l, m) in bandlimits.iter().zip(medians) {
        println!("ReLU stack at L={l:>2}: median relative error {m:.3e}");
    }
    Ok(())
}
