use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::genome::KernelGenome;
use crate::bits;
use crate::error::{Error, Result};

pub const GENOME_FORMAT: &str = "modsplit-genome";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenomeFile {
    pub format: String,
    pub version: u32,
    pub model_hash: String,
    pub class_id: usize,
    pub n_bits: usize,
    /// Base64 bitset, least significant bit first.
    pub bits: String,
    pub fitness: Option<f64>,
    pub generation: usize,
}

pub fn save_genome(path: impl AsRef<Path>, model_hash: &str, g: &KernelGenome) -> Result<()> {
    let file = GenomeFile {
        format: GENOME_FORMAT.into(),
        version: 1,
        model_hash: model_hash.into(),
        class_id: g.class_id,
        n_bits: g.bits.len(),
        bits: bits::encode(&g.bits),
        fitness: g.fitness,
        generation: g.generation,
    };
    if let Some(p) = path.as_ref().parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

/// Returns the genome and the hash of the model it was searched on.
pub fn load_genome(path: impl AsRef<Path>) -> Result<(KernelGenome, String)> {
    let file: GenomeFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.format != GENOME_FORMAT || file.version != 1 {
        return Err(Error::Artifact(format!("unsupported genome format {} v{}", file.format, file.version)));
    }
    let mut g = KernelGenome::new(file.class_id, bits::decode(&file.bits, file.n_bits)?, file.generation);
    g.fitness = file.fitness;
    Ok((g, file.model_hash))
}
