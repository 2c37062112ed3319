//! Hyperparameter search selecting by final dev F1.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::{set_train_key, train_key_value};
use crate::error::{Error, Result};
use crate::trainer::{train, Experiment, Method, TrainConfig};

/// Ordered axes, each a hyperparameter key and its candidate values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    /// One `key = v1, v2, ...` line per axis; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid line {}: expected key = values", n + 1)))?;
            let key = key.trim().to_owned();
            if axes.iter().any(|(k, _)| *k == key) {
                return Err(Error::Config(format!("grid line {}: axis {key:?} repeated", n + 1)));
            }
            let values = values.split(',').map(|v| v.trim().to_owned()).collect();
            axes.push((key, values));
        }
        Ok(Grid { axes })
    }

    fn validate(&self, base: &TrainConfig) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("grid has no axes".into()));
        }
        for (key, values) in &self.axes {
            if train_key_value(base, key).is_none() {
                return Err(Error::Config(format!("grid axis {key:?} is not a hyperparameter")));
            }
            if values.is_empty() || values.iter().any(String::is_empty) {
                return Err(Error::Config(format!("grid axis {key:?} has an empty value")));
            }
            let mut probe = base.clone();
            for v in values {
                set_train_key(&mut probe, key, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    /// Every combination of axis values.
    Full,
    /// One axis at a time, holding the others at their best value so far.
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    /// Value index per axis.
    pub choice: Vec<usize>,
    pub assignment: Vec<(String, String)>,
    pub dev_f1: f64,
    pub test_f1: f64,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    /// Evaluated points in evaluation order.
    pub points: Vec<GridPoint>,
    /// Index into `points` of the highest dev F1, earliest on ties.
    pub best: usize,
    pub config: TrainConfig,
}

impl GridResult {
    /// Tab-separated table: one column per axis, then dev and test F1.
    pub fn table(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.points.first() {
            for (k, _) in &first.assignment {
                write!(out, "{k}\t").expect("write to String");
            }
        }
        out.push_str("dev_f1\ttest_f1\tbest\n");
        for (i, p) in self.points.iter().enumerate() {
            for (_, v) in &p.assignment {
                write!(out, "{v}\t").expect("write to String");
            }
            writeln!(out, "{:.6}\t{:.6}\t{}", p.dev_f1, p.test_f1, if i == self.best { "*" } else { "" })
                .expect("write to String");
        }
        out
    }
}

fn configure(base: &TrainConfig, grid: &Grid, choice: &[usize]) -> Result<TrainConfig> {
    let mut c = base.clone();
    for ((key, values), &i) in grid.axes.iter().zip(choice) {
        set_train_key(&mut c, key, &values[i])?;
    }
    Ok(c)
}

fn evaluate(
    experiment: &Experiment,
    method: Method,
    base: &TrainConfig,
    grid: &Grid,
    choices: &[Vec<usize>],
) -> Result<Vec<GridPoint>> {
    choices
        .par_iter()
        .map(|choice| {
            let config = configure(base, grid, choice)?;
            let outcome = train(method, experiment, &config)?;
            let last = outcome.records.last().expect("a run records iteration 0");
            Ok(GridPoint {
                choice: choice.clone(),
                assignment: grid
                    .axes
                    .iter()
                    .zip(choice)
                    .map(|((k, vs), &i)| (k.clone(), vs[i].clone()))
                    .collect(),
                dev_f1: last.dev.f1,
                test_f1: last.test.f1,
            })
        })
        .collect()
}

fn argmax_earliest(points: &[GridPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.dev_f1 > points[best].dev_f1 {
            best = i;
        }
    }
    best
}

/// Trains `method` at each grid point and keeps the best by dev F1. At most
/// `jobs` runs proceed at once.
pub fn grid_search(
    experiment: &Experiment,
    method: Method,
    base: &TrainConfig,
    grid: &Grid,
    mode: SearchMode,
    jobs: usize,
) -> Result<GridResult> {
    grid.validate(base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let points = pool.install(|| -> Result<Vec<GridPoint>> {
        match mode {
            SearchMode::Full => {
                let mut choices = vec![Vec::new()];
                for (_, values) in &grid.axes {
                    choices = choices
                        .into_iter()
                        .flat_map(|c| {
                            (0..values.len()).map(move |i| {
                                let mut c = c.clone();
                                c.push(i);
                                c
                            })
                        })
                        .collect();
                }
                evaluate(experiment, method, base, grid, &choices)
            }
            SearchMode::Greedy => {
                let mut points: Vec<GridPoint> = Vec::new();
                let mut current = vec![0; grid.axes.len()];
                for (axis, (_, values)) in grid.axes.iter().enumerate() {
                    let sweep: Vec<Vec<usize>> = (0..values.len())
                        .map(|i| {
                            let mut c = current.clone();
                            c[axis] = i;
                            c
                        })
                        .collect();
                    let fresh: Vec<Vec<usize>> = sweep
                        .iter()
                        .filter(|c| !points.iter().any(|p| &p.choice == *c))
                        .cloned()
                        .collect();
                    points.extend(evaluate(experiment, method, base, grid, &fresh)?);
                    let swept: Vec<GridPoint> = sweep
                        .iter()
                        .map(|c| points.iter().find(|p| &p.choice == c).expect("evaluated").clone())
                        .collect();
                    current = swept[argmax_earliest(&swept)].choice.clone();
                }
                Ok(points)
            }
        }
    })?;
    let best = argmax_earliest(&points);
    let config = configure(base, grid, &points[best].choice)?;
    Ok(GridResult { points, best, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, stratified_split, SplitSpec, SyntheticConfig};

    fn tiny() -> (Experiment, TrainConfig) {
        let corpus = generate_synthetic(&SyntheticConfig {
            num_relations: 2,
            vocab_size: 60,
            examples_per_relation: 20,
            trigger_noise: 0.0,
            negative_fraction: 0.2,
            seed: 4,
        })
        .unwrap();
        let split = stratified_split(
            &corpus.examples,
            corpus.schema.len(),
            &SplitSpec { labeled_fraction: 0.3, unlabeled_fraction: 0.5, dev_fraction: 0.2, seed: 4 },
        )
        .unwrap();
        let e = Experiment {
            schema: corpus.schema.clone(),
            labeled: split.labeled,
            unlabeled: split.unlabeled,
            dev: split.dev.clone(),
            test: split.dev,
            truth: Some(split.truth),
        };
        let mut c = TrainConfig { word_dim: 4, position_dim: 2, hidden_dim: 6, iterations_cap: 2, ..TrainConfig::default() };
        c.predictor.epochs = 3;
        c.retriever.epochs = 3;
        (e, c)
    }

    #[test]
    fn grid_file_parses_in_order() {
        let g = Grid::parse("alpha = 0.5, 1, 2 # weights\n\nbeta=1\n").unwrap();
        assert_eq!(g.axes[0], ("alpha".into(), vec!["0.5".into(), "1".into(), "2".into()]));
        assert_eq!(g.axes[1].0, "beta");
        assert!(Grid::parse("alpha = 1\nalpha = 2").is_err());
    }

    #[test]
    fn bad_axes_are_rejected() {
        let (e, c) = tiny();
        for text in ["", "train_file = x", "alpha = 1,", "alpha = one"] {
            let g = Grid::parse(text).unwrap();
            assert!(grid_search(&e, Method::SelfTraining, &c, &g, SearchMode::Full, 1).is_err(), "{text:?}");
        }
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let (e, c) = tiny();
        let g = Grid::parse("alpha = 2").unwrap();
        let r = grid_search(&e, Method::DualRe, &c, &g, SearchMode::Full, 1).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.config.alpha, 2.0);
    }

    #[test]
    fn irrelevant_axis_ties_pick_the_first_value() {
        // nothing is promoted with a zero cap, so alpha cannot matter
        let (e, mut c) = tiny();
        c.iterations_cap = 0;
        let g = Grid::parse("alpha = 0, 1").unwrap();
        let r = grid_search(&e, Method::DualRe, &c, &g, SearchMode::Full, 2).unwrap();
        assert_eq!(r.points[0].dev_f1, r.points[1].dev_f1);
        assert_eq!(r.best, 0);
        assert_eq!(r.config.alpha, 0.0);
    }

    #[test]
    fn greedy_visits_each_axis_once() {
        let (e, c) = tiny();
        let g = Grid::parse("alpha = 0, 1, 2\nbeta = 0, 1").unwrap();
        let r = grid_search(&e, Method::DualRe, &c, &g, SearchMode::Greedy, 2).unwrap();
        // three alpha points, then one new beta point
        assert_eq!(r.points.len(), 4);
        let best = r.points[r.best].dev_f1;
        assert!(r.points.iter().all(|p| p.dev_f1 <= best));
        assert_eq!(r.table().lines().count(), 5);
    }
}
