//! Genetic search over per-class kernel-group bit vectors.

mod eval;
mod genome;
mod io;
mod search;

pub use eval::{exhaustive_evaluation, pruned_evaluation, Candidate, Evaluation, ScoreTable};
pub use genome::{crossover, diff, evolve_class, fitness, init_class, init_population, jaccard_distance, mutate, repair, InitRanges, KernelGenome};
pub use io::{load_genome, save_genome, GenomeFile, GENOME_FORMAT};
pub use search::{
    build_search_space, cm_accuracy, genome_module, retained_kernels, search, EvaluationMode, GaConfig, GenerationLog, SearchResult,
    SearchSpace, SearchStatus, GA_CONFIG_VERSION,
};
