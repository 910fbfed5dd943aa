//! Regenerates `fixtures/sparse1152.npy`: a 1152-dim condition-like vector
//! with exactly 448 entries of magnitude below 0.01.
//!
//! cargo run -p condscope --example make_fixtures -- fixtures

use std::path::PathBuf;

use condscope::io::write_npy;
use condscope::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 1152;
const TAIL: usize = 448;
const HEAD: usize = 24;

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(1152);
    let mut mags = Vec::with_capacity(DIM);
    // tail stays clear of the 0.01 boundary so float width does not matter
    mags.extend((0..TAIL).map(|_| rng.random_range(1e-4..9e-3)));
    mags.extend((0..DIM - TAIL - HEAD).map(|_| rng.random_range(0.012f64..0.5)));
    mags.extend((0..HEAD).map(|_| rng.random_range(2.0..8.0)));
    mags.shuffle(&mut rng);
    let v: Vec<f64> = mags.into_iter().map(|m| if rng.random_bool(0.5) { m } else { -m }).collect();
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    write_npy(&Tensor::vector(v), dir.join("sparse1152.npy")).expect("write fixture");
}
