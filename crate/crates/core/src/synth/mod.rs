//! Synthetic pipelines, schedules and the analytic cost oracle that stands in
//! for hardware benchmarking.

pub mod analysis;
pub mod generator;
pub mod ops;
pub mod oracle;
pub mod schedule;

pub use analysis::{analyze_stage, MachineModel, StageAnalysis};
pub use generator::{build_random_pipeline, sample_pipeline, GeneratorConfig, Outcome, Rejection, Span, SynthPipeline};
pub use ops::{Arity, OpKind};
pub use oracle::{oracle_runtime, AnalyticOracle, CostOracle, NoiseConfig, OracleConfig};
pub use schedule::{enumerate_schedules, ScheduleDecision, StageSchedule};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for item `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// RNG for one purpose (`stream`) of one seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
