//! Use-case circuits, end-to-end pipelines, adversary simulation and
//! benchmarks for the authenticated-HE schemes.

pub mod adversary;
pub mod bench;
pub mod keys;
pub mod pipeline;
pub mod report;
pub mod setup;
pub mod stats;
pub mod usecase;

// ciphertext buffers are a few hundred KiB; the system allocator maps and
// faults them in afresh on every operation, which swamps timings
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
