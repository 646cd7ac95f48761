use cogfuse_model::gradcheck::{network_error, TOLERANCE};

const SEEDS: u64 = 20;
const COORDS: usize = 40;

#[test]
fn network_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let err = network_error(seed, COORDS).unwrap();
        assert!(err < TOLERANCE, "seed {seed}: relative error {err:.3e}");
        worst = worst.max(err);
    }
    eprintln!("end-to-end: worst relative error {worst:.3e} over {SEEDS} seeds × {COORDS} coordinates");
}
