use std::ops::Range;

use rand::Rng;

use super::Series;
use crate::numcore::Matrix;
use crate::rng::seeded;
use crate::{Error, Result};

/// Per-feature affine map `(v − mean) / std`, fitted once and frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
}

fn column_stats(m: &Matrix, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = m.rows() as f64;
    let mean = m.mean_rows().into_vec();
    let mut var = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    if let Some(j) = std.iter().position(|s| s.is_nan() || *s <= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "{what} feature {j} is constant over the task-1 training region"
        )));
    }
    Ok((mean, std))
}

fn apply(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for ((v, mu), s) in out.row_mut(i).iter_mut().zip(mean).zip(std) {
            *v = (*v - mu) / s;
        }
    }
    out
}

impl Standardization {
    /// Population mean and standard deviation of every column.
    pub fn fit(series: &Series) -> Result<Self> {
        let (x_mean, x_std) = column_stats(&series.x, "observation")?;
        let (u_mean, u_std) = column_stats(&series.u, "control")?;
        Ok(Self {
            x_mean,
            x_std,
            u_mean,
            u_std,
        })
    }

    pub fn identity(d_x: usize, d_u: usize) -> Self {
        Self {
            x_mean: vec![0.0; d_x],
            x_std: vec![1.0; d_x],
            u_mean: vec![0.0; d_u],
            u_std: vec![1.0; d_u],
        }
    }

    pub fn apply(&self, series: &Series) -> Series {
        Series {
            x: apply(&series.x, &self.x_mean, &self.x_std),
            u: apply(&series.u, &self.u_mean, &self.u_std),
        }
    }

    /// Maps standardized observations back to raw units.
    pub fn invert_x(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(i).iter_mut().zip(&self.x_mean).zip(&self.x_std) {
                *v = *v * s + mu;
            }
        }
        out
    }
}

/// One contiguous slice of standardized observations and controls.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub x: Matrix,
    pub u: Matrix,
}

impl Window {
    fn from_series(s: Series) -> Self {
        Self { x: s.x, u: s.u }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Controls, or `None` when there are no control columns.
    pub fn controls(&self) -> Option<&Matrix> {
        (self.u.cols() > 0).then_some(&self.u)
    }
}

/// Training windows and held-out test segment of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    /// 1-based task index.
    pub id: usize,
    pub windows: Vec<Window>,
    pub test: Window,
    pub standardization: Standardization,
    /// Row range of the windows in the source series.
    pub train_range: Range<usize>,
    /// Row range of the test segment in the source series.
    pub test_range: Range<usize>,
}

impl TaskDataset {
    pub fn d_x(&self) -> usize {
        self.test.x.cols()
    }

    pub fn d_u(&self) -> usize {
        self.test.u.cols()
    }

    pub fn last_window(&self) -> &Window {
        self.windows.last().expect("at least one window")
    }
}

/// Lengths used to cut a series into sequential tasks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionConfig {
    pub n_tasks: usize,
    /// Length of the random contiguous block drawn from each segment.
    pub train_len: usize,
    /// Window length `T`.
    pub window_len: usize,
    pub n_windows: usize,
    pub test_len: usize,
}

impl PartitionConfig {
    fn used(&self) -> usize {
        self.n_windows * self.window_len + self.test_len
    }

    fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.window_len == 0 || self.n_windows == 0 || self.test_len == 0 {
            return Err(Error::InvalidConfig(
                "n_tasks, window length, window count and test length must be positive".into(),
            ));
        }
        if self.used() > self.train_len {
            return Err(Error::InsufficientData {
                required: self.used(),
                available: self.train_len,
            });
        }
        Ok(())
    }
}

/// Cuts `series` into `n_tasks` equal chronological segments.
///
/// Inside each segment a seeded random block of `train_len` rows is chosen;
/// its first `n_windows · window_len` rows form the windows and the next
/// `test_len` rows the test segment. Standardization is fitted on task 1's
/// window region and applied to every task.
pub fn partition_tasks(series: &Series, cfg: &PartitionConfig, seed: u64) -> Result<Vec<TaskDataset>> {
    cfg.validate()?;
    let seg_len = series.len() / cfg.n_tasks;
    if cfg.train_len > seg_len {
        return Err(Error::InsufficientData {
            required: cfg.train_len * cfg.n_tasks,
            available: series.len(),
        });
    }
    let mut rng = seeded(seed);
    let span = cfg.n_windows * cfg.window_len;
    let blocks: Vec<usize> = (0..cfg.n_tasks)
        .map(|k| k * seg_len + rng.random_range(0..=seg_len - cfg.train_len))
        .collect();
    let stats = Standardization::fit(&series.slice(blocks[0], blocks[0] + span))?;

    Ok(blocks
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let windows = (0..cfg.n_windows)
                .map(|w| {
                    let a = start + w * cfg.window_len;
                    Window::from_series(stats.apply(&series.slice(a, a + cfg.window_len)))
                })
                .collect();
            let test_start = start + span;
            TaskDataset {
                id: k + 1,
                windows,
                test: Window::from_series(stats.apply(&series.slice(test_start, test_start + cfg.test_len))),
                standardization: stats.clone(),
                train_range: start..test_start,
                test_range: test_start..test_start + cfg.test_len,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;
    use proptest::prelude::*;

    fn noise_series(rows: usize, d_x: usize, d_u: usize, seed: u64) -> Series {
        let mut rng = seeded(seed);
        Series::new(
            standard_normal(&mut rng, rows, d_x),
            standard_normal(&mut rng, rows, d_u),
        )
        .unwrap()
    }

    #[test]
    fn power_layout_gives_32_windows_and_200_test_rows() {
        let s = noise_series(52_416, 3, 5, 1);
        let cfg = PartitionConfig {
            n_tasks: 4,
            train_len: 1800,
            window_len: 50,
            n_windows: 32,
            test_len: 200,
        };
        let tasks = partition_tasks(&s, &cfg, 7).unwrap();
        assert_eq!(tasks.len(), 4);
        for t in &tasks {
            assert_eq!(t.windows.len(), 32);
            assert!(t
                .windows
                .iter()
                .all(|w| w.x.shape() == (50, 3) && w.u.shape() == (50, 5)));
            assert_eq!(t.test.x.rows(), 200);
        }
    }

    #[test]
    fn weather_layout_uses_whole_segments() {
        let s = noise_series(4 * 1461, 3, 4, 2);
        let cfg = PartitionConfig {
            n_tasks: 4,
            train_len: 1461,
            window_len: 50,
            n_windows: 22,
            test_len: 361,
        };
        let tasks = partition_tasks(&s, &cfg, 3).unwrap();
        for (k, t) in tasks.iter().enumerate() {
            assert_eq!(t.train_range.start, k * 1461);
            assert_eq!(t.test_range.end, (k + 1) * 1461);
            assert_eq!(t.windows.len(), 22);
            assert_eq!(t.test.len(), 361);
        }
    }

    #[test]
    fn single_task_spans_configured_lengths() {
        let s = noise_series(300, 2, 0, 3);
        let cfg = PartitionConfig {
            n_tasks: 1,
            train_len: 250,
            window_len: 50,
            n_windows: 4,
            test_len: 50,
        };
        let tasks = partition_tasks(&s, &cfg, 4).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].train_range.len(), 200);
        assert_eq!(tasks[0].test_range.len(), 50);
        assert_eq!(tasks[0].d_u(), 0);
    }

    #[test]
    fn insufficient_data_reports_lengths() {
        let s = noise_series(100, 1, 0, 4);
        let cfg = PartitionConfig {
            n_tasks: 2,
            train_len: 60,
            window_len: 10,
            n_windows: 5,
            test_len: 10,
        };
        assert!(matches!(
            partition_tasks(&s, &cfg, 1),
            Err(Error::InsufficientData {
                required: 120,
                available: 100
            })
        ));
        let too_long = PartitionConfig { test_len: 20, ..cfg };
        assert!(matches!(
            partition_tasks(&s, &too_long, 1),
            Err(Error::InsufficientData {
                required: 70,
                available: 60
            })
        ));
    }

    #[test]
    fn task_one_training_features_are_standardized() {
        let mut s = noise_series(1000, 3, 2, 5);
        for v in s.x.as_mut_slice() {
            *v = 40.0 + 7.0 * *v;
        }
        let cfg = PartitionConfig {
            n_tasks: 2,
            train_len: 400,
            window_len: 25,
            n_windows: 12,
            test_len: 100,
        };
        let tasks = partition_tasks(&s, &cfg, 6).unwrap();
        let parts: Vec<Series> = tasks[0]
            .windows
            .iter()
            .map(|w| Series::new(w.x.clone(), w.u.clone()).unwrap())
            .collect();
        let all = Series::concat(&parts).unwrap();
        for m in [&all.x, &all.u] {
            let (mean, std) = column_stats(m, "t").unwrap();
            assert!(mean.iter().all(|v| v.abs() < 1e-9));
            assert!(std.iter().all(|v| (v - 1.0).abs() < 1e-9));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn windows_are_lossless_disjoint_and_deterministic(
            seed in any::<u64>(),
            n_tasks in 1usize..4,
            window_len in 2usize..8,
            n_windows in 1usize..5,
            test_len in 1usize..6,
            slack in 0usize..10,
        ) {
            let train_len = window_len * n_windows + test_len + slack;
            let s = noise_series(n_tasks * (train_len + slack), 2, 1, seed);
            let cfg = PartitionConfig { n_tasks, train_len, window_len, n_windows, test_len };
            let tasks = partition_tasks(&s, &cfg, seed).unwrap();
            prop_assert_eq!(&tasks, &partition_tasks(&s, &cfg, seed).unwrap());
            let stats = &tasks[0].standardization;
            for t in &tasks {
                let block = stats.apply(&s.slice(t.train_range.start, t.train_range.end));
                let xs: Vec<f64> = t.windows.iter().flat_map(|w| w.x.as_slice().to_vec()).collect();
                prop_assert_eq!(xs.as_slice(), block.x.as_slice());
                prop_assert!(t.train_range.end <= t.test_range.start);
                for other in &tasks {
                    prop_assert!(other.train_range.end <= t.test_range.start
                        || other.train_range.start >= t.test_range.end);
                }
            }
        }
    }
}
