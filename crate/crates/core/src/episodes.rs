//! Few-shot task sampling.
//!
//! Every draw is a pure function of `(set, spec, seed, run_index)`: the
//! generator for run `r` is ChaCha8 keyed by `seed` with stream id `r`, so
//! runs can be produced in any order or in parallel.

use std::fmt;

use ndarray::Array2;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::feature_io::FeatureSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Exactly `queries / ways` queries per class.
    Balanced,
    /// Queries drawn uniformly from an equal-size per-class pool.
    Uniform,
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Balanced => "balanced",
            Sampling::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "balanced" => Ok(Sampling::Balanced),
            "uniform" => Ok(Sampling::Uniform),
            other => Err(format!("unknown sampling {other:?} (balanced|uniform)")),
        }
    }
}

/// Per-class pool size for uniform sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolSize {
    /// Everything left after supports, truncated to the smallest chosen class.
    #[default]
    All,
    Fixed(usize),
}

impl Serialize for PoolSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PoolSize::All => s.serialize_str("all"),
            PoolSize::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl fmt::Display for PoolSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolSize::All => f.write_str("all"),
            PoolSize::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for PoolSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(PoolSize::All);
        }
        s.parse::<usize>()
            .map(PoolSize::Fixed)
            .map_err(|_| format!("pool size must be a count or \"all\", got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub sampling: Sampling,
    pub pool_per_class: PoolSize,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(Error::validation("ways must be at least 2"));
        }
        if self.shots < 1 {
            return Err(Error::validation("shots must be at least 1"));
        }
        if self.queries < 1 {
            return Err(Error::validation("queries must be at least 1"));
        }
        if self.sampling == Sampling::Balanced && !self.queries.is_multiple_of(self.ways) {
            return Err(Error::validation(format!(
                "balanced sampling needs queries divisible by ways: {} is not a multiple of {}",
                self.queries, self.ways
            )));
        }
        if let (Sampling::Uniform, PoolSize::Fixed(pool)) = (self.sampling, self.pool_per_class) {
            if pool == 0 || pool * self.ways < self.queries {
                return Err(Error::validation(format!(
                    "a pool of {pool} per class over {} ways cannot supply {} queries",
                    self.ways, self.queries
                )));
            }
        }
        Ok(())
    }
}

/// One few-shot task. Labels are episode-local (`0..ways`); `class_map`
/// translates them back to the source set's classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support_features: Array2<f64>,
    pub support_labels: Vec<usize>,
    pub query_features: Array2<f64>,
    pub query_truth: Vec<usize>,
    pub class_map: Vec<usize>,
    /// Source rows, aligned with the feature blocks.
    pub support_rows: Vec<usize>,
    pub query_rows: Vec<usize>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.class_map.len()
    }

    /// Stable 64-bit digest of the drawn classes and rows.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for part in [&self.class_map, &self.support_rows, &self.query_rows] {
            h.write(part.len() as u64);
            part.iter().for_each(|&x| h.write(x as u64));
        }
        h.finish()
    }
}

pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Generator for one run: keyed by `seed`, stream `run_index`.
pub fn episode_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

struct ClassDraw {
    support: Vec<usize>,
    rest: Vec<usize>,
}

fn draw_class(
    set: &FeatureSet,
    class: usize,
    shots: usize,
    needed: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ClassDraw> {
    let rows = set.class_rows(class);
    if rows.len() < needed {
        return Err(Error::InsufficientRows {
            class,
            needed,
            available: rows.len(),
        });
    }
    let mut order: Vec<usize> = rows.to_vec();
    order.shuffle(rng);
    let rest = order.split_off(shots);
    Ok(ClassDraw {
        support: order,
        rest,
    })
}

fn assemble(
    set: &FeatureSet,
    class_map: Vec<usize>,
    draws: &[ClassDraw],
    queries: Vec<(usize, usize)>,
) -> Episode {
    let support: Vec<(usize, usize)> = draws
        .iter()
        .enumerate()
        .flat_map(|(local, d)| d.support.iter().map(move |&r| (r, local)))
        .collect();
    let gather = |rows: &[(usize, usize)]| {
        let feats = set.features();
        Array2::from_shape_fn((rows.len(), set.dim()), |(i, j)| f64::from(feats[[rows[i].0, j]]))
    };
    Episode {
        support_features: gather(&support),
        support_labels: support.iter().map(|p| p.1).collect(),
        query_features: gather(&queries),
        query_truth: queries.iter().map(|p| p.1).collect(),
        class_map,
        support_rows: support.iter().map(|p| p.0).collect(),
        query_rows: queries.iter().map(|p| p.0).collect(),
    }
}

pub fn sample_episode(
    set: &FeatureSet,
    spec: &EpisodeSpec,
    seed: u64,
    run_index: u64,
) -> Result<Episode> {
    spec.validate()?;
    if set.class_count() < spec.ways {
        return Err(Error::validation(format!(
            "{}-way episodes need at least {} classes, feature set has {}",
            spec.ways,
            spec.ways,
            set.class_count()
        )));
    }
    let mut rng = episode_rng(seed, run_index);
    let class_map = index::sample(&mut rng, set.class_count(), spec.ways).into_vec();
    let per_class_min = match spec.sampling {
        Sampling::Balanced => spec.queries / spec.ways,
        Sampling::Uniform => 1,
    };
    let draws = class_map
        .iter()
        .map(|&c| draw_class(set, c, spec.shots, spec.shots + per_class_min, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let mut queries: Vec<(usize, usize)> = match spec.sampling {
        Sampling::Balanced => draws
            .iter()
            .enumerate()
            .flat_map(|(local, d)| d.rest[..per_class_min].iter().map(move |&r| (r, local)))
            .collect(),
        Sampling::Uniform => {
            let (smallest, available) = draws
                .iter()
                .enumerate()
                .map(|(local, d)| (local, d.rest.len()))
                .min_by_key(|&(local, len)| (len, local))
                .expect("ways >= 2");
            let pool = match spec.pool_per_class {
                PoolSize::All => available,
                PoolSize::Fixed(p) => p.min(available),
            };
            if pool * spec.ways < spec.queries {
                return Err(Error::InsufficientRows {
                    class: class_map[smallest],
                    needed: spec.shots + spec.queries.div_ceil(spec.ways),
                    available: available + spec.shots,
                });
            }
            // `rest` is already a random permutation, so its prefix is a
            // uniform subset of the class remainder.
            let merged: Vec<(usize, usize)> = draws
                .iter()
                .enumerate()
                .flat_map(|(local, d)| d.rest[..pool].iter().map(move |&r| (r, local)))
                .collect();
            index::sample(&mut rng, merged.len(), spec.queries)
                .into_iter()
                .map(|i| merged[i])
                .collect()
        }
    };
    if spec.sampling == Sampling::Balanced {
        queries.shuffle(&mut rng);
    }
    Ok(assemble(set, class_map, &draws, queries))
}

/// Two-way episode with `q1` queries from the first drawn class and
/// `total - q1` from the second.
pub fn sample_imbalanced_two_way(
    set: &FeatureSet,
    q1: usize,
    total: usize,
    shots: usize,
    seed: u64,
    run_index: u64,
) -> Result<Episode> {
    if q1 < 1 || q1 + 1 > total {
        return Err(Error::validation(format!(
            "q1 must lie in [1, {}], got {q1}",
            total.saturating_sub(1)
        )));
    }
    if shots < 1 {
        return Err(Error::validation("shots must be at least 1"));
    }
    if set.class_count() < 2 {
        return Err(Error::validation("two-way episodes need at least 2 classes"));
    }
    let mut rng = episode_rng(seed, run_index);
    let class_map = index::sample(&mut rng, set.class_count(), 2).into_vec();
    let counts = [q1, total - q1];
    let draws = class_map
        .iter()
        .zip(counts)
        .map(|(&c, q)| draw_class(set, c, shots, shots + q, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut queries: Vec<(usize, usize)> = draws
        .iter()
        .zip(counts)
        .enumerate()
        .flat_map(|(local, (d, q))| d.rest[..q].iter().map(move |&r| (r, local)))
        .collect();
    queries.shuffle(&mut rng);
    Ok(assemble(set, class_map, &draws, queries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{generate_synthetic, SyntheticConfig};
    use ndarray::Array2;

    fn synth(classes: usize, per_class: usize) -> FeatureSet {
        generate_synthetic(&SyntheticConfig {
            class_count: classes,
            per_class,
            dim: 4,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    fn counts(ep: &Episode) -> Vec<usize> {
        let mut c = vec![0; ep.ways()];
        ep.query_truth.iter().for_each(|&y| c[y] += 1);
        c
    }

    #[test]
    fn balanced_counts_are_exact() {
        let set = synth(8, 40);
        let spec = EpisodeSpec {
            ways: 5,
            shots: 1,
            queries: 75,
            sampling: Sampling::Balanced,
            pool_per_class: PoolSize::All,
        };
        for run in 0..20 {
            let ep = sample_episode(&set, &spec, 3, run).unwrap();
            assert_eq!(counts(&ep), vec![15; 5]);
            assert_eq!(ep.support_labels, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn labels_map_back_to_source_classes() {
        let set = synth(6, 30);
        let spec = EpisodeSpec {
            ways: 3,
            shots: 2,
            queries: 20,
            sampling: Sampling::Uniform,
            pool_per_class: PoolSize::Fixed(10),
        };
        let ep = sample_episode(&set, &spec, 1, 9).unwrap();
        for (&row, &y) in ep.query_rows.iter().zip(&ep.query_truth) {
            assert_eq!(set.labels()[row], ep.class_map[y]);
        }
        for (i, &row) in ep.support_rows.iter().enumerate() {
            assert_eq!(set.labels()[row], ep.class_map[ep.support_labels[i]]);
            assert_eq!(
                ep.support_features.row(i).to_vec(),
                set.features().row(row).iter().map(|&x| x as f64).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn exhausted_class_is_named() {
        let features = Array2::from_elem((5, 2), 1.0f32);
        let set = FeatureSet::new(features, vec![0, 0, 0, 0, 1], 2, "tiny").unwrap();
        let spec = EpisodeSpec {
            ways: 2,
            shots: 1,
            queries: 2,
            sampling: Sampling::Uniform,
            pool_per_class: PoolSize::All,
        };
        let err = sample_episode(&set, &spec, 0, 0).unwrap_err();
        assert!(
            matches!(err, Error::InsufficientRows { class: 1, needed: 2, available: 1 }),
            "{err}"
        );
    }

    #[test]
    fn spec_validation() {
        let mut spec = EpisodeSpec {
            ways: 5,
            shots: 1,
            queries: 74,
            sampling: Sampling::Balanced,
            pool_per_class: PoolSize::All,
        };
        assert!(spec.validate().unwrap_err().to_string().contains("divisible"));
        spec.sampling = Sampling::Uniform;
        assert!(spec.validate().is_ok());
        spec.pool_per_class = PoolSize::Fixed(10);
        assert!(spec.validate().is_err());
        spec.ways = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn imbalanced_counts() {
        let set = synth(4, 120);
        let ep = sample_imbalanced_two_way(&set, 1, 100, 1, 7, 0).unwrap();
        assert_eq!(counts(&ep), vec![1, 99]);
        let ep = sample_imbalanced_two_way(&set, 50, 100, 1, 7, 0).unwrap();
        assert_eq!(counts(&ep), vec![50, 50]);
        assert!(sample_imbalanced_two_way(&set, 0, 100, 1, 7, 0).is_err());
        assert!(sample_imbalanced_two_way(&set, 100, 100, 1, 7, 0).is_err());
    }

    #[test]
    fn pool_size_parsing() {
        assert_eq!("all".parse::<PoolSize>().unwrap(), PoolSize::All);
        assert_eq!("12".parse::<PoolSize>().unwrap(), PoolSize::Fixed(12));
        assert!("x".parse::<PoolSize>().is_err());
        assert_eq!(serde_json::to_string(&PoolSize::All).unwrap(), "\"all\"");
        assert_eq!(serde_json::to_string(&PoolSize::Fixed(3)).unwrap(), "3");
    }
}
