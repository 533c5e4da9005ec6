//! Covariance eigenvalues two ways: directly, and from the three power sums
//! tr(C), tr(C^2), tr(C^3) that a depth-6 network can produce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uninet::group::random_rotation;
use uninet::oracles::{cloud_with_spectrum, covariance, lambda_cov, power_sums, q_from_power_sums};
use uninet::PointCloud;

fn main() -> uninet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random = PointCloud::random(32, 1.0, &mut rng);
    // two eigenvalues 1e-7 apart
    let nearly_double = cloud_with_spectrum(random_rotation(&mut rng).matrix(), [1.0, 1.0 + 1e-7, 0.25]);

    for (name, x) in [("random", &random), ("near-double", &nearly_double)] {
        let s = power_sums(x);
        let direct = lambda_cov(x);
        let via_q = q_from_power_sums(s)?;
        println!("{name}: trace {:.6}", covariance(x).trace());
        println!("  power sums     {:.10e} {:.10e} {:.10e}", s.s1, s.s2, s.s3);
        println!("  direct         {:?}", direct.as_array());
        println!("  from the sums  {:?}", via_q.as_array());
        println!("  relative diff  {:.2e}", via_q.relative_diff(&direct));
    }
    Ok(())
}
