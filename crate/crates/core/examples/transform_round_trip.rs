//! Forward and inverse transforms on S² and SO(3) at a few bandlimits.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use s2seg::grid::Bandlimit;
use s2seg::transforms::{s2_analyze, s2_synthesize, so3_analyze, so3_synthesize, S2Spectrum, So3Spectrum};

fn rel(a: &[num_complex::Complex64], b: &[num_complex::Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn main() -> s2seg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("{:>4}  {:>12} {:>10}  {:>12} {:>10}", "L", "S2 error", "S2 ms", "SO3 error", "SO3 ms");
    for l in [4, 8, 16, 32] {
        let b = Bandlimit::new(l)?;
        let f = S2Spectrum::random_real(b, 1, &mut rng);
        let t = Instant::now();
        let s2 = rel(&s2_analyze(&s2_synthesize(&f)?)?.coeffs, &f.coeffs);
        let s2_ms = t.elapsed().as_secs_f64() * 1e3;
        let h = So3Spectrum::random_real(b, 1, &mut rng);
        let t = Instant::now();
        let so3 = rel(&so3_analyze(&so3_synthesize(&h)?)?.coeffs, &h.coeffs);
        let so3_ms = t.elapsed().as_secs_f64() * 1e3;
        println!("{l:>4}  {s2:>12.2e} {s2_ms:>10.2}  {so3:>12.2e} {so3_ms:>10.2}");
    }
    Ok(())
}
