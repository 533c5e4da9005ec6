//! Rotating and permuting the input cloud moves the output the same way: an
//! even-depth network is invariant, an odd-depth one yields one vector per
//! point that rotates with the cloud.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uninet::network::{forward, sum_pool, NetworkConfig, ParamSet};
use uninet::{GroupElement, PointCloud};

fn main() -> uninet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = PointCloud::random(12, 1.0, &mut rng).centralize();
    let g = GroupElement::random(x.len(), &mut rng);
    let moved = x.act(&g)?;

    for k in [2, 3, 4] {
        let cfg = NetworkConfig::basic(k, 4).with_extras(3, true, true).with_seed(5);
        let theta = ParamSet::init(&cfg)?;
        let out = forward(&x, &cfg, &theta)?;
        let out_moved = forward(&moved, &cfg, &theta)?;
        let err = out_moved.max_abs_diff(&out.act(&g)?) / (1.0 + out.max_abs());
        println!(
            "K={k}: output order {}, {} parameters, |F(gX) - g F(X)| / (1 + |F(X)|) = {err:.2e}",
            out.order(),
            theta.len()
        );
        if out.order() == 0 {
            println!("       pooled features {:?}", sum_pool(&out)?);
        }
    }
    Ok(())
}
