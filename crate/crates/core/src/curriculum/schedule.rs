use std::io::Write;
use std::path::Path;

use super::RankingModel;
use crate::datasets::Dataset;
use crate::error::{FlstError, Result};

/// Instances ordered easiest-first and cut into contiguous, near-equal batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Curriculum {
    ordered_indices: Vec<usize>,
    boundaries: Vec<usize>,
    difficulties: Vec<f64>,
}

impl Curriculum {
    /// Sorts ascending by difficulty (ties by index) and splits into `batch_count` batches.
    pub fn from_difficulties(difficulties: Vec<f64>, batch_count: usize) -> Result<Self> {
        let n = difficulties.len();
        if batch_count == 0 || batch_count > n {
            return Err(FlstError::config(format!(
                "batch count {} outside [1, {}]",
                batch_count, n
            )));
        }
        if difficulties.iter().any(|d| d.is_nan()) {
            return Err(FlstError::numeric("difficulty score is NaN"));
        }
        let mut ordered_indices: Vec<usize> = (0..n).collect();
        ordered_indices.sort_by(|&a, &b| {
            difficulties[a]
                .partial_cmp(&difficulties[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        let (base, extra) = (n / batch_count, n % batch_count);
        let mut boundaries = Vec::with_capacity(batch_count + 1);
        boundaries.push(0);
        for k in 0..batch_count {
            let size = base + usize::from(k < extra);
            boundaries.push(boundaries[k] + size);
        }
        Ok(Curriculum {
            ordered_indices,
            boundaries,
            difficulties,
        })
    }

    pub fn batch_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ordered_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_indices.is_empty()
    }

    pub fn ordered_indices(&self) -> &[usize] {
        &self.ordered_indices
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn difficulties(&self) -> &[f64] {
        &self.difficulties
    }

    pub fn batch(&self, k: usize) -> &[usize] {
        &self.ordered_indices[self.boundaries[k]..self.boundaries[k + 1]]
    }

    /// Batch index holding curriculum position `pos`.
    fn batch_of_position(&self, pos: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= pos) - 1
    }

    /// Text dump: `instance_id  score  batch`, one row per instance in curriculum order.
    pub fn write_dump(&self, data: &Dataset, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| FlstError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| FlstError::io(path, e);
        writeln!(w, "instance_id\tscore\tbatch").map_err(io)?;
        for (pos, &i) in self.ordered_indices.iter().enumerate() {
            writeln!(
                w,
                "{}\t{:.12e}\t{}",
                data.ids[i],
                self.difficulties[i],
                self.batch_of_position(pos)
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn build_curriculum(
    data: &Dataset,
    model: &RankingModel,
    batch_count: usize,
) -> Result<Curriculum> {
    Curriculum::from_difficulties(model.difficulties(&data.features)?, batch_count)
}

/// A teacher action: curriculum position and window width, each in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowAction {
    pub center: f64,
    pub width: f64,
}

impl WindowAction {
    pub fn new(center: f64, width: f64) -> Self {
        WindowAction { center, width }
    }

    fn clamped(self) -> WindowAction {
        let fix = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        let out = WindowAction {
            center: fix(self.center),
            width: fix(self.width),
        };
        if out != self {
            log::warn!("teacher action {:?} outside [-1, 1]^2, clamped", self);
        }
        out
    }

    /// Batch range `[lo, hi]` (inclusive) selected on a curriculum of `batch_count` batches.
    pub fn batch_range(self, batch_count: usize, window_max: usize) -> (usize, usize) {
        let a = self.clamped();
        let last = batch_count.saturating_sub(1);
        let center = ((a.center + 1.0) / 2.0 * last as f64).round() as usize;
        let half = ((a.width + 1.0) / 2.0 * window_max as f64).round() as usize;
        (center.saturating_sub(half), (center + half).min(last))
    }
}

/// Instance indices of the batches around the selected centre, sorted and unique.
pub fn select_window(curr: &Curriculum, action: WindowAction, window_max: usize) -> Vec<usize> {
    let (lo, hi) = action.batch_range(curr.batch_count(), window_max);
    let mut out = curr.ordered_indices[curr.boundaries[lo]..curr.boundaries[hi + 1]].to_vec();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sorted_scores_give_identity() {
        let c =
            Curriculum::from_difficulties((0..20).map(|i| i as f64 * 0.5).collect(), 4).unwrap();
        assert_eq!(c.ordered_indices(), (0..20).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn single_batch_holds_everything() {
        let c = Curriculum::from_difficulties(vec![3.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(c.boundaries(), &[0, 3]);
        assert_eq!(c.batch(0), &[1, 2, 0]);
    }

    #[test]
    fn ordering_matches_sort_oracle_and_sizes_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..103).map(|_| rng.random_range(0.0..5.0)).collect();
        let c = Curriculum::from_difficulties(scores.clone(), 10).unwrap();
        // oracle: selection sort by (score, index)
        let mut remaining: Vec<usize> = (0..103).collect();
        let mut oracle = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for k in 1..remaining.len() {
                let (a, b) = (remaining[k], remaining[best]);
                if scores[a] < scores[b] || (scores[a] == scores[b] && a < b) {
                    best = k;
                }
            }
            oracle.push(remaining.remove(best));
        }
        assert_eq!(c.ordered_indices(), oracle.as_slice());
        let sizes: Vec<usize> = c.boundaries().windows(2).map(|w| w[1] - w[0]).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn ties_break_by_index() {
        let c = Curriculum::from_difficulties(vec![1.0, 0.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(c.ordered_indices(), &[1, 3, 0, 2]);
    }

    #[test]
    fn batch_count_out_of_range() {
        assert!(Curriculum::from_difficulties(vec![1.0; 5], 0).is_err());
        assert!(Curriculum::from_difficulties(vec![1.0; 5], 6).is_err());
    }

    fn ten_batches() -> Curriculum {
        Curriculum::from_difficulties((0..100).map(|i| i as f64).collect(), 10).unwrap()
    }

    #[test]
    fn window_endpoints() {
        let c = ten_batches();
        assert_eq!(
            select_window(&c, WindowAction::new(-1.0, -1.0), 9),
            c.batch(0).to_vec()
        );
        assert_eq!(
            select_window(&c, WindowAction::new(1.0, -1.0), 9),
            c.batch(9).to_vec()
        );
    }

    #[test]
    fn centre_with_full_width_covers_all() {
        let c = ten_batches();
        let w = select_window(&c, WindowAction::new(0.0, 1.0), 9);
        assert_eq!(w, (0..100).collect::<Vec<_>>());
        assert_eq!(WindowAction::new(0.0, 1.0).batch_range(10, 9), (0, 9));
    }

    #[test]
    fn out_of_range_actions_are_clamped() {
        let c = ten_batches();
        assert_eq!(
            select_window(&c, WindowAction::new(7.0, -3.0), 9),
            select_window(&c, WindowAction::new(1.0, -1.0), 9)
        );
        assert!(!select_window(&c, WindowAction::new(f64::NAN, f64::NAN), 9).is_empty());
    }

    #[test]
    fn dump_has_one_row_per_instance() {
        let data = Dataset::new(
            crate::nn::Matrix::zeros(4, 1),
            vec![0; 4],
            vec![10, 11, 12, 13],
            1,
        )
        .unwrap();
        let c = Curriculum::from_difficulties(vec![0.4, 0.1, 0.3, 0.2], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dump.tsv");
        c.write_dump(&data, &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("11\t"));
        assert!(lines[1].ends_with("\t0"));
        assert!(lines[4].starts_with("10\t"));
        assert!(lines[4].ends_with("\t1"));
    }

    proptest! {
        #[test]
        fn ordering_is_a_permutation(scores in proptest::collection::vec(-10.0f64..10.0, 1..200), n in 1usize..20) {
            let n = n.min(scores.len());
            let c = Curriculum::from_difficulties(scores.clone(), n).unwrap();
            let mut seen = vec![false; scores.len()];
            for &i in c.ordered_indices() {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert_eq!(*c.boundaries().last().unwrap(), scores.len());
            prop_assert!(c.boundaries().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn windows_are_nonempty_sorted_unique(
            a1 in -1.0f64..=1.0, a2 in -1.0f64..=1.0,
            len in 1usize..150, n in 1usize..30, wmax in 0usize..30,
        ) {
            let n = n.min(len);
            let c = Curriculum::from_difficulties((0..len).map(|i| ((i * 37) % 11) as f64).collect(), n).unwrap();
            let w = select_window(&c, WindowAction::new(a1, a2), wmax);
            prop_assert!(!w.is_empty());
            prop_assert!(w.windows(2).all(|p| p[0] < p[1]));
            prop_assert!(w.iter().all(|&i| i < len));
        }
    }
}
