//! Dense tensors over R^3: products, contractions, the O(3) action and the
//! invariant pairing functionals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uninet::group::random_orthogonal;
use uninet::{DenseTensor, Pairing};

fn main() -> uninet::Result<()> {
    let u = DenseTensor::vector([1.0, 2.0, 0.5]);
    let v = DenseTensor::vector([-1.0, 0.0, 3.0]);

    // order-2 outer product; its trace is the inner product
    let uv = u.tensor_product(&v);
    println!("u (x) v has order {} and {} entries", uv.order(), uv.values().len());
    println!("trace(u (x) v) = {} = <u, v>", uv.contract(1, 2)?.values()[0]);

    // contractions commute with rotating every mode
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_orthogonal(&mut rng);
    let t = uv.tensor_product(&u);
    let lhs = t.rotate(&r).contract(1, 3)?;
    let rhs = t.contract(1, 3)?.rotate(&r);
    let err = lhs.values().iter().zip(rhs.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("|C13(R.T) - R.C13(T)|_inf = {err:.2e}");

    // on a rank-one tensor a pairing functional is a product of inner products
    let w = [0.5, -0.5, 1.0];
    let rank_one = DenseTensor::rank_one(&[[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0], w, w]);
    for pairing in Pairing::all(4) {
        println!("pairing {:?}: {:.4}", pairing.pairs(), rank_one.lambda_sigma(&pairing)?);
    }
    Ok(())
}
