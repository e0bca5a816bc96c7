//! Regenerates the golden SAT corpus under `tests/golden/`.
//!
//! ```sh
//! cargo run -p sentinel-core --example gen_golden
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentinel_core::testing::{random_stream, StreamShape};

const FILES: u64 = 60;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    fs::create_dir_all(&dir)?;
    for seed in 0..FILES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = StreamShape { max_nodes: 25, max_reviews: 8, malformed_rate: 0.05 };
        let stream = random_stream(&mut rng, shape);
        fs::write(dir.join(format!("random-{seed:03}.satl")), stream.to_text())?;
    }
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/catalog-cache.satl");
    fs::copy(fixture, dir.join("catalog-cache.satl"))?;
    println!("wrote {} files to {}", FILES + 1, dir.display());
    Ok(())
}
