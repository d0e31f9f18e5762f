//! Margin-based bitext mining on synthetic embeddings: score candidates,
//! pick the F1-optimal threshold, mine, report precision/recall.

use dapkit::evalkit::{mine_pairs, optimal_threshold, MiningMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dapkit::error::Result<()> {
    // two "languages": target vectors are noisy copies of source vectors,
    // so the identity pairing is the gold standard
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 60;
    let d = 12;
    let src: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
        .collect();
    let tgt: Vec<Vec<f64>> = src
        .iter()
        .map(|v| v.iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect())
        .collect();
    let gold: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();

    // pass 1: score everything; pass 2: apply the tuned threshold
    let scored = mine_pairs(&src, &tgt, 4, f64::MIN, &gold, MiningMode::Exact)?;
    let (gamma, train_f1) = optimal_threshold(&scored.candidates, &gold)?;
    println!("chose gamma {gamma:.4} (F1 {train_f1:.3} at tuning time)");

    let mined = mine_pairs(&src, &tgt, 4, gamma, &gold, MiningMode::TopM(8))?;
    println!(
        "mined {} pairs: P {:.3}  R {:.3}  F1 {:.3}",
        mined.predicted.len(),
        mined.precision,
        mined.recall,
        mined.f1
    );
    for &(i, j, s) in mined.predicted.iter().take(5) {
        println!("  {i} -> {j}  score {s:.4}");
    }
    Ok(())
}
