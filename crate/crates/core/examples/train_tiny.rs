//! Trains a tiny segmentation model on unrotated spheres and evaluates it on
//! unrotated and rotated test sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2seg::datagen::{generate_dataset, synthetic_digits, DataGenConfig};
use s2seg::network::{Head, LayerKind, LayerSpec, ModelSpec, Network, Nonlinearity};
use s2seg::training::{evaluate, train, TrainConfig};

fn main() -> s2seg::Result<()> {
    let sources = synthetic_digits(300, 1);
    let cfg = DataGenConfig { bandlimit: 12, rotated: false, seed: 2, ..Default::default() };
    let train_set = generate_dataset(&cfg, &sources, 96)?;
    let test_cfg = DataGenConfig { seed: 3, ..cfg.clone() };
    let plain = generate_dataset(&test_cfg, &sources, 32)?;
    let rotated = generate_dataset(&DataGenConfig { rotated: true, ..test_cfg }, &sources, 32)?;

    let layers = vec![
        LayerSpec::new(LayerKind::S2So3Conv, 1, 6, 12, 6, 0.6),
        LayerSpec::new(LayerKind::So3S2Conv, 6, 11, 6, 12, 1.2),
    ];
    let net = Network::new(ModelSpec::new(layers, Nonlinearity::Relu, Head::Segmentation)?)?;
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(4));
    println!("{} parameters", net.param_count());
    let tc = TrainConfig { epochs: 5, batch_size: 16, ..TrainConfig::default() };
    let out = train(&net, params, None, &train_set.records, None, &tc, |e| {
        println!("epoch {:>2}  loss {:.4}  {:.1} s", e.epoch, e.loss, e.wall_time_s)
    })?;
    for (name, ds) in [("unrotated", &plain), ("rotated", &rotated)] {
        let r = evaluate(&net, &out.params, &ds.records)?;
        println!("{name:<9} accuracy {:.3}  mIoU {:?}", r.accuracy, r.miou);
    }
    Ok(())
}
