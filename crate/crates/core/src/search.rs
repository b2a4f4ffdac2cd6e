//! Evolutionary search over hybrid networks: each depthwise layer either
//! stays depthwise or becomes a FuSe-Half pair.
//!
//! Fitness is `accuracy − λ·latency`, latency comes from the cycle model and
//! accuracy from a pluggable estimator. The search keeps every evaluated
//! genome and returns the non-dominated (accuracy, latency) set.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::sim::{units, Unit};
use crate::topology::{fuse_replace, ArrayConfig, Dataflow, FuseVariant, NetworkTopology};

/// One bit per depthwise layer of the base network, in layer order; 1 = FuSe-Half.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Genome {
    pub bits: Vec<bool>,
}

impl Genome {
    pub fn zeros(n: usize) -> Self {
        Genome { bits: vec![false; n] }
    }

    pub fn ones(n: usize) -> Self {
        Genome { bits: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.bits.iter().try_for_each(|&b| f.write_str(if b { "1" } else { "0" }))
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Invalid(format!("genome `{s}` must contain only 0 and 1"))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(|bits| Genome { bits })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EAConfig {
    pub population: usize,
    /// Per-bit flip probability, in `[0, 1)`.
    pub mutation_prob: f64,
    /// Fraction of the population, best first, eligible as parents; in `(0, 1]`.
    pub parent_ratio: f64,
    pub iterations: usize,
    /// Children per iteration; as many of the oldest individuals are retired.
    pub offspring: usize,
    pub seed: u64,
    /// λ in `accuracy − λ·latency_s`.
    pub latency_weight: f64,
}

impl Default for EAConfig {
    fn default() -> Self {
        EAConfig {
            population: 100,
            mutation_prob: 0.1,
            parent_ratio: 0.25,
            iterations: 100,
            offspring: 50,
            seed: 0,
            latency_weight: 1.0,
        }
    }
}

impl EAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::InvalidConfig("population must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mutation_prob) {
            return Err(Error::InvalidConfig(format!(
                "mutation_prob {} outside [0, 1)",
                self.mutation_prob
            )));
        }
        if !(self.parent_ratio > 0.0 && self.parent_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "parent_ratio {} outside (0, 1]",
                self.parent_ratio
            )));
        }
        if !self.latency_weight.is_finite() || self.latency_weight < 0.0 {
            return Err(Error::InvalidConfig("latency_weight must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn parent_count(&self, population: usize) -> usize {
        ((self.parent_ratio * population as f64).ceil() as usize).clamp(1, population)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub latency_s: f64,
    pub accuracy: f64,
    /// `accuracy − λ·latency_s`.
    pub score: f64,
}

impl Fitness {
    pub fn dominates(&self, other: &Fitness) -> bool {
        self.accuracy >= other.accuracy
            && self.latency_s <= other.latency_s
            && (self.accuracy > other.accuracy || self.latency_s < other.latency_s)
    }
}

/// Accuracy proxy for a hybrid network.
pub trait AccuracyEstimator: Sync {
    fn estimate(&self, genome: &Genome) -> Result<f64>;
}

impl<F: Fn(&Genome) -> Result<f64> + Sync> AccuracyEstimator for F {
    fn estimate(&self, genome: &Genome) -> Result<f64> {
        self(genome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantEstimator(pub f64);

impl AccuracyEstimator for ConstantEstimator {
    fn estimate(&self, _: &Genome) -> Result<f64> {
        Ok(self.0)
    }
}

/// `base − penalty·popcount`: every replacement costs the same accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticEstimator {
    pub base: f64,
    pub penalty: f64,
}

impl Default for SyntheticEstimator {
    fn default() -> Self {
        SyntheticEstimator {
            base: 0.75,
            penalty: 0.001,
        }
    }
}

impl AccuracyEstimator for SyntheticEstimator {
    fn estimate(&self, g: &Genome) -> Result<f64> {
        Ok(self.base - self.penalty * g.popcount() as f64)
    }
}

/// `base + Σ deltas[i]` over the replaced layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEstimator {
    pub base: f64,
    pub deltas: Vec<f64>,
}

impl TableEstimator {
    /// CSV with header `layer,accuracy_delta`; a row with layer `base` sets
    /// the all-depthwise accuracy, the others list deltas in layer order.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(1, 1, e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["layer", "accuracy_delta"] {
            return Err(Error::parse(1, 1, "expected header `layer,accuracy_delta`"));
        }
        let mut base = 0.0;
        let mut deltas = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(line, 1, e.to_string()))?;
            let value: f64 = rec[1]
                .parse()
                .map_err(|_| Error::parse(line, 2, format!("`{}` is not a number", &rec[1])))?;
            if &rec[0] == "base" {
                base = value;
            } else {
                deltas.push(value);
            }
        }
        Ok(TableEstimator { base, deltas })
    }
}

impl AccuracyEstimator for TableEstimator {
    fn estimate(&self, g: &Genome) -> Result<f64> {
        if g.len() != self.deltas.len() {
            return Err(Error::Estimator(format!(
                "table has {} layers, genome has {}",
                self.deltas.len(),
                g.len()
            )));
        }
        Ok(self.base + g.bits.iter().zip(&self.deltas).filter(|(b, _)| **b).map(|(_, d)| d).sum::<f64>())
    }
}

/// Latency of hybrids of one base network, memoized per genome and per layer.
pub struct LatencyModel<'a> {
    base: &'a NetworkTopology,
    cfg: ArrayConfig,
    depthwise_layers: usize,
    genomes: Mutex<HashMap<Genome, f64>>,
    units: Mutex<HashMap<Unit, u64>>,
}

impl<'a> LatencyModel<'a> {
    /// Runs FuSe pairs ST-OS and every other layer output stationary.
    pub fn new(base: &'a NetworkTopology, cfg: &ArrayConfig) -> Result<Self> {
        let cfg = cfg.clone().with_dataflow(Dataflow::Stos);
        cfg.validate()?;
        Ok(LatencyModel {
            base,
            cfg,
            depthwise_layers: base.depthwise_indices().len(),
            genomes: Mutex::new(HashMap::new()),
            units: Mutex::new(HashMap::new()),
        })
    }

    pub fn genome_len(&self) -> usize {
        self.depthwise_layers
    }

    pub fn cycles(&self, genome: &Genome) -> Result<u64> {
        let net = fuse_replace(self.base, FuseVariant::Half, &genome.bits)?;
        let mut total = 0;
        for unit in units(&net)? {
            let cached = self.units.lock().expect("unit cache").get(&unit).copied();
            total += match cached {
                Some(c) => c,
                None => {
                    let c = unit.cycles(&self.cfg)?;
                    self.units.lock().expect("unit cache").insert(unit, c);
                    c
                }
            };
        }
        Ok(total)
    }

    pub fn latency(&self, genome: &Genome) -> Result<f64> {
        if let Some(&l) = self.genomes.lock().expect("genome cache").get(genome) {
            return Ok(l);
        }
        let l = self.cycles(genome)? as f64 / self.cfg.freq_hz as f64;
        self.genomes.lock().expect("genome cache").insert(genome.clone(), l);
        Ok(l)
    }
}

pub fn latency_of(genome: &Genome, base: &NetworkTopology, cfg: &ArrayConfig) -> Result<f64> {
    LatencyModel::new(base, cfg)?.latency(genome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub genome: Genome,
    pub fitness: Fitness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    /// Sorted by latency, then genome.
    pub pareto: Vec<ParetoPoint>,
    pub evaluated: usize,
    /// Best score in the population after initialization and after each iteration.
    pub best_score: Vec<f64>,
    /// Iteration (0 = initialization) at which each genome was first evaluated.
    pub first_seen: BTreeMap<Genome, usize>,
}

impl SearchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("genome,accuracy,latency_s\n");
        for p in &self.pareto {
            out.push_str(&format!(
                "{},{},{}\n",
                p.genome,
                fmt_g(p.fitness.accuracy),
                fmt_g(p.fitness.latency_s)
            ));
        }
        out
    }
}

/// Non-dominated points; equal points are all kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.fitness.dominates(&p.fitness)))
        .cloned()
        .collect();
    front.sort_by(|a, b| {
        a.fitness
            .latency_s
            .total_cmp(&b.fitness.latency_s)
            .then_with(|| a.genome.cmp(&b.genome))
    });
    front
}

fn evaluate(
    batch: &[Genome],
    model: &LatencyModel,
    estimator: &dyn AccuracyEstimator,
    lambda: f64,
) -> Result<Vec<Fitness>> {
    batch
        .par_iter()
        .map(|g| {
            let latency_s = model.latency(g)?;
            let accuracy = estimator.estimate(g)?;
            Ok(Fitness {
                latency_s,
                accuracy,
                score: accuracy - lambda * latency_s,
            })
        })
        .collect()
}

/// Best first; ties go to lower latency, then to the smaller genome.
fn rank(a: &(Genome, Fitness), b: &(Genome, Fitness)) -> std::cmp::Ordering {
    b.1.score
        .total_cmp(&a.1.score)
        .then_with(|| a.1.latency_s.total_cmp(&b.1.latency_s))
        .then_with(|| a.0.cmp(&b.0))
}

/// Regularized evolution.
///
/// All random draws for an iteration happen before its children are
/// evaluated, so the result depends on the seed only.
pub fn evolve(
    base: &NetworkTopology,
    cfg: &ArrayConfig,
    ea: &EAConfig,
    estimator: &dyn AccuracyEstimator,
) -> Result<SearchResult> {
    ea.validate()?;
    let model = LatencyModel::new(base, cfg)?;
    let n = model.genome_len();
    let mut rng = ChaCha8Rng::seed_from_u64(ea.seed);
    let mut seen: BTreeMap<Genome, Fitness> = BTreeMap::new();
    let mut first_seen = BTreeMap::new();

    let init: Vec<Genome> = (0..ea.population)
        .map(|_| Genome {
            bits: (0..n).map(|_| rng.random_bool(0.5)).collect(),
        })
        .collect();
    let fit = evaluate(&init, &model, estimator, ea.latency_weight)?;
    // Oldest at the front.
    let mut population: VecDeque<(Genome, Fitness)> = init.into_iter().zip(fit).collect();
    for (g, f) in &population {
        seen.insert(g.clone(), *f);
        first_seen.entry(g.clone()).or_insert(0);
    }
    let best = |pop: &VecDeque<(Genome, Fitness)>| pop.iter().map(|p| p.1.score).fold(f64::NEG_INFINITY, f64::max);
    let mut best_score = vec![best(&population)];

    for iteration in 1..=ea.iterations {
        let mut ranked: Vec<&(Genome, Fitness)> = population.iter().collect();
        ranked.sort_by(|a, b| rank(a, b));
        let parents = &ranked[..ea.parent_count(population.len())];
        let children: Vec<Genome> = (0..ea.offspring)
            .map(|_| {
                let a = rng.random_range(0..parents.len());
                let b = if parents.len() > 1 {
                    // Second parent distinct from the first.
                    (a + 1 + rng.random_range(0..parents.len() - 1)) % parents.len()
                } else {
                    a
                };
                let (pa, pb) = (&parents[a].0, &parents[b].0);
                Genome {
                    bits: (0..n)
                        .map(|i| {
                            let bit = if rng.random_bool(0.5) { pa.bits[i] } else { pb.bits[i] };
                            bit ^ (ea.mutation_prob > 0.0 && rng.random_bool(ea.mutation_prob))
                        })
                        .collect(),
                }
            })
            .collect();
        let fit = evaluate(&children, &model, estimator, ea.latency_weight)?;
        for (g, f) in children.into_iter().zip(fit) {
            seen.insert(g.clone(), f);
            first_seen.entry(g.clone()).or_insert(iteration);
            population.push_back((g, f));
        }
        while population.len() > ea.population {
            population.pop_front();
        }
        best_score.push(best(&population));
    }

    let points: Vec<ParetoPoint> = seen
        .iter()
        .map(|(g, f)| ParetoPoint {
            genome: g.clone(),
            fitness: *f,
        })
        .collect();
    Ok(SearchResult {
        pareto: pareto_front(&points),
        evaluated: seen.len(),
        best_score,
        first_seen,
    })
}

/// Replaces the `floor(N/2)` depthwise layers with the highest simulated
/// latency; ties go to the earlier layer.
pub fn greedy_half(base: &NetworkTopology, cfg: &ArrayConfig) -> Result<Genome> {
    let cfg = cfg.clone().with_dataflow(Dataflow::OutputStationary);
    let dw = base.depthwise_indices();
    let cycles: Vec<u64> = dw
        .par_iter()
        .map(|&i| Unit::Single(base.layers[i].clone()).cycles(&cfg))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..dw.len()).collect();
    order.sort_by(|&a, &b| cycles[b].cmp(&cycles[a]).then(a.cmp(&b)));
    let mut genome = Genome::zeros(dw.len());
    for &i in &order[..dw.len() / 2] {
        genome.bits[i] = true;
    }
    Ok(genome)
}
