//! A depth-2 network with hand-set parameters whose pooled output is the
//! squared Frobenius norm of the centred cloud, with no training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uninet::network::{forward, sum_pool, NetworkConfig};
use uninet::oracles::{construct_p2_params, power_sums};
use uninet::PointCloud;

fn main() -> uninet::Result<()> {
    let cfg = NetworkConfig::basic(2, 3);
    let theta = construct_p2_params(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [2, 5, 40] {
        let x = PointCloud::random(n, 2.0, &mut rng).centralize();
        let pooled = sum_pool(&forward(&x, &cfg, &theta)?)?;
        let p2 = power_sums(&x).s1;
        println!("n={n:3}: network {:.12}  tr(XX^T) {:.12}  rel err {:.1e}", pooled[0], p2, (pooled[0] - p2).abs() / p2);
    }
    Ok(())
}
