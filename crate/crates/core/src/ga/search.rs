use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{exhaustive_evaluation, pruned_evaluation, Candidate, ScoreTable};
use super::genome::{evolve_class, init_population, InitRanges, KernelGenome};
use crate::analysis::{group_by_scores, importance_all, layer_sensitivity, GroupRule, GroupingPlan, SensitivityProfile, DEFAULT_DROP_RATIOS};
use crate::composer::{decode, Provenance, SlicedModule};
use crate::datasets::{ImageBatch, LabeledDataset};
use crate::error::{Error, Result};
use crate::zoo::TrainedModel;

pub const GA_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    #[default]
    Pruned,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Individuals per class.
    pub population: usize,
    pub parents: usize,
    pub mutation: f64,
    /// Accuracy weight of the fitness; diversity gets `1 - alpha`.
    pub alpha: f64,
    pub generations: usize,
    /// Beam width when merging subtasks.
    pub top: usize,
    /// Generations without a better best fitness before stopping.
    pub patience: usize,
    #[serde(default = "yes")]
    pub elitism: bool,
    #[serde(default)]
    pub evaluation: EvaluationMode,
    #[serde(default)]
    pub init: InitRanges,
    #[serde(default)]
    pub time_budget_secs: Option<f64>,
    pub seed: u64,
}

fn default_version() -> u32 {
    GA_CONFIG_VERSION
}

fn yes() -> bool {
    true
}

impl GaConfig {
    pub fn paper(seed: u64) -> Self {
        Self {
            version: GA_CONFIG_VERSION,
            population: 100,
            parents: 50,
            mutation: 0.1,
            alpha: 0.9,
            generations: 200,
            top: 10,
            patience: 20,
            elitism: true,
            evaluation: EvaluationMode::Pruned,
            init: InitRanges::default(),
            time_budget_secs: None,
            seed,
        }
    }

    pub fn desk(seed: u64) -> Self {
        Self {
            population: 20,
            parents: 10,
            generations: 50,
            top: 4,
            patience: 10,
            ..Self::paper(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != GA_CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported ga config version {}", self.version)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation) {
            return Err(Error::Config("mutation probability must lie in [0, 1]".into()));
        }
        if self.population == 0 || self.parents == 0 || self.parents > self.population {
            return Err(Error::Config("need 0 < parents <= population".into()));
        }
        if self.top == 0 || self.generations == 0 {
            return Err(Error::Config("top and generations must be positive".into()));
        }
        Ok(())
    }
}

/// Analysis artifacts the search consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    /// One plan per class (or the same class-agnostic plan repeated).
    pub groupings: Vec<GroupingPlan>,
    pub sensitivity: SensitivityProfile,
}

/// Importance on `train`, per-class (or class-agnostic) grouping and
/// segment sensitivity on `valid`.
pub fn build_search_space(
    tm: &TrainedModel,
    train: &LabeledDataset,
    valid: &LabeledDataset,
    rule: GroupRule,
    class_agnostic: bool,
    threshold: f64,
    seed: u64,
) -> Result<SearchSpace> {
    let importance = importance_all(tm, train, None, seed)?;
    let mean = importance.mean();
    let n = tm.net.n_classes();
    let groupings = (0..n)
        .map(|c| {
            Ok(if class_agnostic {
                group_by_scores(tm, &mean, None, rule)
            } else {
                group_by_scores(tm, importance.class(c)?, Some(c), rule)
            })
        })
        .collect::<Result<_>>()?;
    let sensitivity = layer_sensitivity(tm, valid, &mean, &DEFAULT_DROP_RATIOS, threshold)?;
    Ok(SearchSpace { groupings, sensitivity })
}

/// Flat per-kernel retention of a genome.
pub fn retained_kernels(grouping: &GroupingPlan, bits: &[bool], n_layers: usize) -> Result<Vec<bool>> {
    Ok(grouping.retained(bits, n_layers)?.concat())
}

pub fn genome_module(tm: &TrainedModel, grouping: &GroupingPlan, genome: &KernelGenome) -> Result<SlicedModule> {
    let bits = retained_kernels(grouping, &genome.bits, tm.net.conv.len())?;
    decode(tm, genome.class_id, &bits, None, Provenance::Ga)
}

/// Accuracy of the CM formed by decoding one genome per class.
pub fn cm_accuracy(genomes: &[KernelGenome], groupings: &[GroupingPlan], tm: &TrainedModel, data: &LabeledDataset) -> Result<f64> {
    let modules = genomes
        .iter()
        .map(|g| genome_module(tm, &groupings[g.class_id], g))
        .collect::<Result<Vec<_>>>()?;
    crate::composer::compose(modules, crate::composer::Mode::Parallel)?.accuracy(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_acc: f64,
    pub best_diff: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Completed,
    EarlyStopped,
    /// Best-so-far returned after the time budget ran out.
    TimeBudgetExceeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub parent_hash: String,
    /// Members of the best composed candidate found, one per class.
    pub genomes: Vec<KernelGenome>,
    pub best: Candidate,
    pub log: Vec<GenerationLog>,
    pub status: SearchStatus,
}

impl SearchResult {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("generation,best_fitness,best_acc,best_diff,evaluations\n");
        for g in &self.log {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                g.generation, g.best_fitness, g.best_acc, g.best_diff, g.evaluations
            ));
        }
        s
    }

    pub fn modules(&self, tm: &TrainedModel, groupings: &[GroupingPlan]) -> Result<Vec<SlicedModule>> {
        self.genomes.iter().map(|g| genome_module(tm, &groupings[g.class_id], g)).collect()
    }
}

type Scored = (Vec<f64>, Vec<bool>);

/// Scores every individual on `batch`, reusing results for bit vectors seen before.
fn score_populations(
    tm: &TrainedModel,
    groupings: &[GroupingPlan],
    pops: &[Vec<KernelGenome>],
    batch: &ImageBatch,
    labels: &[usize],
    memo: &mut HashMap<(usize, Vec<bool>), Scored>,
) -> Result<ScoreTable> {
    let n_layers = tm.net.conv.len();
    let mut todo: Vec<(usize, Vec<bool>)> = Vec::new();
    for (c, pop) in pops.iter().enumerate() {
        for g in pop {
            let key = (c, g.bits.clone());
            if !memo.contains_key(&key) && !todo.contains(&key) {
                todo.push(key);
            }
        }
    }
    let fresh: Vec<((usize, Vec<bool>), Scored)> = todo
        .into_par_iter()
        .map(|(c, bits)| {
            let kernels = retained_kernels(&groupings[c], &bits, n_layers)?;
            let module = decode(tm, c, &kernels, None, Provenance::Ga)?;
            let scores = module.scores(batch)?;
            Ok(((c, bits), (scores, kernels)))
        })
        .collect::<Result<_>>()?;
    memo.extend(fresh);
    let mut scores = Vec::with_capacity(pops.len());
    let mut kernels = Vec::with_capacity(pops.len());
    for (c, pop) in pops.iter().enumerate() {
        let (s, k): (Vec<_>, Vec<_>) = pop
            .iter()
            .map(|g| {
                let e = &memo[&(c, g.bits.clone())];
                (e.0.clone(), e.1.clone())
            })
            .unzip();
        scores.push(s);
        kernels.push(k);
    }
    Ok(ScoreTable {
        scores,
        kernels,
        labels: labels.to_vec(),
    })
}

/// CNNSplitter search on `data` (the validation split).
pub fn search(tm: &TrainedModel, data: &LabeledDataset, space: &SearchSpace, cfg: &GaConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let n = tm.net.n_classes();
    let hash = tm.hash();
    if data.n_classes() != n {
        return Err(Error::ClassSpace(format!("data has {} classes, model has {n}", data.n_classes())));
    }
    if space.groupings.len() != n {
        return Err(Error::Artifact(format!("{} grouping plans for {n} classes", space.groupings.len())));
    }
    if space.groupings.iter().any(|g| g.model_hash != hash) || space.sensitivity.model_hash != hash {
        return Err(Error::Artifact("analysis artifacts were computed for a different model".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pops = init_population(&space.groupings, &space.sensitivity, cfg.init, cfg.population, &mut rng);
    let batch = data.full_batch();
    let mut memo = HashMap::new();
    let mut log = Vec::new();
    let mut best: Option<(Candidate, Vec<KernelGenome>)> = None;
    let mut stale = 0;
    let mut forced: Vec<Vec<usize>> = Vec::new();
    let mut status = SearchStatus::Completed;

    for generation in 0..cfg.generations {
        let table = score_populations(tm, &space.groupings, &pops, &batch, data.labels(), &mut memo)?;
        let eval = match cfg.evaluation {
            EvaluationMode::Pruned => pruned_evaluation(&table, cfg.top, cfg.alpha, &forced)?,
            EvaluationMode::Exhaustive => exhaustive_evaluation(&table, cfg.alpha)?,
        };
        eval.assign(&mut pops);
        let gen_best = eval.best().clone();
        log.push(GenerationLog {
            generation,
            best_fitness: gen_best.fitness,
            best_acc: gen_best.acc,
            best_diff: gen_best.diff,
            evaluations: eval.evaluations,
        });
        let members: Vec<KernelGenome> = gen_best.members.iter().enumerate().map(|(c, &i)| pops[c][i].clone()).collect();
        if best.as_ref().is_none_or(|(b, _)| gen_best.fitness > b.fitness) {
            best = Some((gen_best.clone(), members.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            status = SearchStatus::EarlyStopped;
            break;
        }
        if cfg.time_budget_secs.is_some_and(|t| started.elapsed().as_secs_f64() > t) {
            status = SearchStatus::TimeBudgetExceeded;
            break;
        }
        if generation + 1 == cfg.generations {
            break;
        }
        pops = pops
            .iter()
            .enumerate()
            .map(|(c, pop)| {
                let elite = cfg.elitism.then(|| &members[c]);
                evolve_class(pop, cfg.parents, cfg.mutation, elite, &space.groupings[c], generation + 1, &mut rng)
            })
            .collect();
        // the elites sit in slot 0 of every class
        forced = if cfg.elitism { vec![vec![0; n]] } else { Vec::new() };
    }
    let (best, genomes) = best.expect("at least one generation");
    Ok(SearchResult {
        parent_hash: hash,
        genomes,
        best,
        log,
        status,
    })
}
