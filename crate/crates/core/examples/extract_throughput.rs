//! Single-run Toeplitz extraction throughput at n = 8192, m = 5120.
//!
//!     cargo run --release -p qrng-core --example extract_throughput

use std::time::Instant;

use qrng_core::extract::{build_seed, extract_packed, Bits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() {
    let (n, m) = (8192, 5120);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut bits = |len: usize| {
        Bits::from_words((0..len.div_ceil(64)).map(|_| rng.gen()).collect(), len).unwrap()
    };
    let seed = build_seed(&bits(n + m - 1), n, m).unwrap();
    let input = bits(1 << 30);
    let t = Instant::now();
    let sum = extract_packed(&input, &seed, &mut std::io::sink()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!(
        "{} blocks, {:.2} Gbps in, {:.2} Gbps out, {} thread(s)",
        sum.blocks,
        sum.input_bits_used as f64 / secs / 1e9,
        sum.output_bits as f64 / secs / 1e9,
        rayon::current_num_threads()
    );
}
