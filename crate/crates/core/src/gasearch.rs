//! Genetic-algorithm query engine plus an exact linear-scan oracle.
//!
//! A genotype is a row index into the queried table; its phenotype is the
//! record that index denotes, and the allele fed to the fitness function is
//! the record's queried attribute value. Fitness is the absolute distance
//! between that value and the query target, so lower is better and zero is
//! an exact hit.
//!
//! A search evolves a fixed-size population for at most `num_gens`
//! generations (evaluate, accept, select, crossover, mutate). It stops the
//! moment any individual reaches fitness zero; otherwise it returns the best
//! individual observed anywhere in the run, tagged with its distance. The
//! `fitness_threshold` classifies that terminal distance as acceptable or
//! not; it never stops the loop early, so an exact match found in a later
//! generation always wins over a within-threshold neighbour.
//!
//! Every run is driven by an explicit 64-bit seed and is fully
//! deterministic.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::microdb::{DbError, Table};

/// Default population size.
pub const DEFAULT_POP_SIZE: usize = 16;
/// Default generation budget.
pub const DEFAULT_NUM_GENS: u32 = 40;
/// Default mutations per generation.
pub const DEFAULT_NUM_MUTS: u32 = 1;
/// Default acceptance threshold on the terminal distance.
pub const DEFAULT_FITNESS_THRESHOLD: u32 = 1;
/// Default RNG seed for reproducible runs.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("table has no records")]
    EmptyTable,
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Db(#[from] DbError),
}

/// Parent selection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionScheme {
    Roulette,
    Tournament,
    Truncation,
}

impl std::str::FromStr for SelectionScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "roulette" => Ok(SelectionScheme::Roulette),
            "tournament" => Ok(SelectionScheme::Tournament),
            "truncation" => Ok(SelectionScheme::Truncation),
            other => Err(format!(
                "unknown selection scheme {other:?} (expected roulette, tournament or truncation)"
            )),
        }
    }
}

impl std::fmt::Display for SelectionScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SelectionScheme::Roulette => "roulette",
            SelectionScheme::Tournament => "tournament",
            SelectionScheme::Truncation => "truncation",
        };
        f.write_str(s)
    }
}

/// Run parameters of one search.
#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub pop_size: usize,
    pub num_gens: u32,
    pub num_muts: u32,
    pub fitness_threshold: u32,
    pub selection: SelectionScheme,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            pop_size: DEFAULT_POP_SIZE,
            num_gens: DEFAULT_NUM_GENS,
            num_muts: DEFAULT_NUM_MUTS,
            fitness_threshold: DEFAULT_FITNESS_THRESHOLD,
            selection: SelectionScheme::Roulette,
            rng_seed: DEFAULT_SEED,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.pop_size < 2 {
            return Err(SearchError::InvalidConfig(format!(
                "pop_size {} must be at least 2",
                self.pop_size
            )));
        }
        if !self.pop_size.is_multiple_of(2) {
            return Err(SearchError::InvalidConfig(format!(
                "pop_size {} must be even for pairwise crossover",
                self.pop_size
            )));
        }
        if self.num_gens == 0 {
            return Err(SearchError::InvalidConfig(
                "num_gens must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A population of row-index genes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    pub genes: Vec<usize>,
    pub generation: u32,
}

/// Per-individual distances, aligned with the population's genes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitnessVector {
    pub fits: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchOutcome {
    /// A record matched the target exactly.
    Exact {
        row: usize,
    },
    /// Best record found, at a nonzero distance from the target.
    Approximate {
        row: usize,
        distance: u32,
    },
    NotFound,
}

impl SearchOutcome {
    pub fn row(&self) -> Option<usize> {
        match self {
            SearchOutcome::Exact { row } => Some(*row),
            SearchOutcome::Approximate { row, .. } => Some(*row),
            SearchOutcome::NotFound => None,
        }
    }

    pub fn distance(&self) -> Option<u32> {
        match self {
            SearchOutcome::Exact { .. } => Some(0),
            SearchOutcome::Approximate { distance, .. } => Some(*distance),
            SearchOutcome::NotFound => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Ga,
    Oracle,
}

/// Result of one search run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResult {
    pub outcome: SearchOutcome,
    pub generations_used: u32,
    pub evaluations: u64,
    pub method: SearchMethod,
}

/// Best-so-far fitness after each evaluated generation; non-increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchTrace {
    pub best_per_generation: Vec<u32>,
}

/// Draw an initial population uniformly from the table's row indices.
pub fn init_population<R: Rng>(
    rng: &mut R,
    cfg: &GaConfig,
    row_count: usize,
) -> Result<Population, SearchError> {
    if row_count == 0 {
        return Err(SearchError::EmptyTable);
    }
    let genes = (0..cfg.pop_size)
        .map(|_| rng.gen_range(0..row_count))
        .collect();
    Ok(Population {
        genes,
        generation: 0,
    })
}

/// Per-gene absolute distance between the record's attribute value and the
/// target.
pub fn evaluate_fitness(
    pop: &Population,
    table: &Table,
    attribute: &str,
    target: u32,
) -> Result<FitnessVector, SearchError> {
    let attr = table
        .attribute_index(attribute)
        .ok_or_else(|| SearchError::UnknownAttribute(attribute.to_string()))?;
    let fits = pop
        .genes
        .iter()
        .map(|&gene| {
            let value = table.record(gene)?.value(attr);
            Ok((value as i64 - target as i64).unsigned_abs() as u32)
        })
        .collect::<Result<Vec<u32>, SearchError>>()?;
    Ok(FitnessVector { fits })
}

/// Lowest-index locus whose fitness is within the threshold, if any.
pub fn check_acceptance(fits: &FitnessVector, threshold: u32) -> Option<usize> {
    fits.fits.iter().position(|&f| f <= threshold)
}

/// Sample `pop_size` parents with replacement.
///
/// Roulette weights each individual `max_fit + 1 - fit`, so every weight is
/// positive and lower distance means higher weight. Tournament plays size-2
/// bouts where the lower fit wins and ties are settled by coin flip.
/// Truncation keeps the top half by fitness and cycles through it.
pub fn select_parents<R: Rng>(
    rng: &mut R,
    pop: &Population,
    fits: &FitnessVector,
    scheme: SelectionScheme,
) -> Population {
    debug_assert_eq!(pop.genes.len(), fits.fits.len());
    let n = pop.genes.len();
    let genes = match scheme {
        SelectionScheme::Roulette => {
            let max_fit = fits.fits.iter().copied().max().unwrap_or(0) as u64;
            let weights: Vec<u64> = fits.fits.iter().map(|&f| max_fit + 1 - f as u64).collect();
            let dist = WeightedIndex::new(&weights).expect("weights are positive");
            (0..n).map(|_| pop.genes[dist.sample(rng)]).collect()
        }
        SelectionScheme::Tournament => (0..n)
            .map(|_| {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                let winner = match fits.fits[a].cmp(&fits.fits[b]) {
                    std::cmp::Ordering::Less => a,
                    std::cmp::Ordering::Greater => b,
                    std::cmp::Ordering::Equal => {
                        if rng.gen_bool(0.5) {
                            a
                        } else {
                            b
                        }
                    }
                };
                pop.genes[winner]
            })
            .collect(),
        SelectionScheme::Truncation => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (fits.fits[i], i));
            let half = (n / 2).max(1);
            (0..n).map(|i| pop.genes[order[i % half]]).collect()
        }
    };
    Population {
        genes,
        generation: pop.generation,
    }
}

/// Arithmetic crossover: each consecutive parent pair blends into two
/// children with a shared random weight, rounded and clamped back into the
/// row-index domain. Increments the generation counter. Requires an even
/// number of parents.
pub fn crossover<R: Rng>(rng: &mut R, parents: &Population, row_count: usize) -> Population {
    debug_assert!(parents.genes.len().is_multiple_of(2));
    debug_assert!(row_count >= 1);
    let mut genes = Vec::with_capacity(parents.genes.len());
    for pair in parents.genes.chunks(2) {
        let (p1, p2) = (pair[0] as f64, pair[1] as f64);
        let alpha: f64 = rng.gen();
        let c1 = (alpha * p1 + (1.0 - alpha) * p2).round() as usize;
        let c2 = ((1.0 - alpha) * p1 + alpha * p2).round() as usize;
        genes.push(c1.min(row_count - 1));
        genes.push(c2.min(row_count - 1));
    }
    Population {
        genes,
        generation: parents.generation + 1,
    }
}

/// Uniform mutation: `num_muts` times, replace a random locus with a uniform
/// random row index.
pub fn mutate<R: Rng>(
    rng: &mut R,
    pop: &Population,
    cfg: &GaConfig,
    row_count: usize,
) -> Population {
    let mut genes = pop.genes.clone();
    for _ in 0..cfg.num_muts {
        let locus = rng.gen_range(0..genes.len());
        genes[locus] = rng.gen_range(0..row_count);
    }
    Population {
        genes,
        generation: pop.generation,
    }
}

/// Run the evolutionary search loop against one table attribute.
pub fn run_search(
    cfg: &GaConfig,
    table: &Table,
    attribute: &str,
    target: u32,
) -> Result<SearchResult, SearchError> {
    run_search_with_trace(cfg, table, attribute, target).map(|(result, _)| result)
}

/// [`run_search`] plus the best-so-far fitness after each generation.
pub fn run_search_with_trace(
    cfg: &GaConfig,
    table: &Table,
    attribute: &str,
    target: u32,
) -> Result<(SearchResult, SearchTrace), SearchError> {
    cfg.validate()?;
    let row_count = table.row_count();
    if row_count == 0 {
        return Err(SearchError::EmptyTable);
    }
    if table.attribute_index(attribute).is_none() {
        return Err(SearchError::UnknownAttribute(attribute.to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut pop = init_population(&mut rng, cfg, row_count)?;
    let mut evaluations: u64 = 0;
    let mut best: Option<(u32, usize)> = None;
    let mut trace = Vec::with_capacity(cfg.num_gens as usize);

    for round in 1..=cfg.num_gens {
        let fits = evaluate_fitness(&pop, table, attribute, target)?;
        evaluations += pop.genes.len() as u64;

        if let Some(locus) = check_acceptance(&fits, 0) {
            trace.push(0);
            let result = SearchResult {
                outcome: SearchOutcome::Exact {
                    row: pop.genes[locus],
                },
                generations_used: round,
                evaluations,
                method: SearchMethod::Ga,
            };
            return Ok((
                result,
                SearchTrace {
                    best_per_generation: trace,
                },
            ));
        }

        // lowest fit this generation, ties broken by lowest locus
        let (locus, &fit) = fits
            .fits
            .iter()
            .enumerate()
            .min_by_key(|&(i, &f)| (f, i))
            .expect("population is never empty");
        if best.is_none_or(|(b, _)| fit < b) {
            best = Some((fit, pop.genes[locus]));
        }
        trace.push(best.expect("set above").0);

        if round < cfg.num_gens {
            let parents = select_parents(&mut rng, &pop, &fits, cfg.selection);
            let children = crossover(&mut rng, &parents, row_count);
            pop = mutate(&mut rng, &children, cfg, row_count);
        }
    }

    let (distance, row) = best.expect("at least one generation was evaluated");
    let result = SearchResult {
        outcome: SearchOutcome::Approximate { row, distance },
        generations_used: cfg.num_gens,
        evaluations,
        method: SearchMethod::Ga,
    };
    Ok((
        result,
        SearchTrace {
            best_per_generation: trace,
        },
    ))
}

/// Exhaustive linear scan: the minimum-distance row, lowest index on ties.
pub fn oracle_search(
    table: &Table,
    attribute: &str,
    target: u32,
) -> Result<SearchResult, SearchError> {
    let attr = table
        .attribute_index(attribute)
        .ok_or_else(|| SearchError::UnknownAttribute(attribute.to_string()))?;
    if table.row_count() == 0 {
        return Err(SearchError::EmptyTable);
    }
    let (row, distance) = table
        .records()
        .enumerate()
        .map(|(i, r)| {
            let d = (r.value(attr) as i64 - target as i64).unsigned_abs() as u32;
            (i, d)
        })
        .min_by_key(|&(i, d)| (d, i))
        .expect("table is non-empty");
    let outcome = if distance == 0 {
        SearchOutcome::Exact { row }
    } else {
        SearchOutcome::Approximate { row, distance }
    };
    Ok(SearchResult {
        outcome,
        generations_used: 0,
        evaluations: table.row_count() as u64,
        method: SearchMethod::Oracle,
    })
}
