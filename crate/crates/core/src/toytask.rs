//! The delayed-sum memory benchmark: two random input channels, and a target
//! that needs the first channel from three steps back and the second channel
//! from five steps back.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};

/// How far back the target reaches into the first input channel.
pub const LAG_CHANNEL_0: usize = 3;
/// How far back the target reaches into the second input channel.
pub const LAG_CHANNEL_1: usize = 5;
/// First (0-based) timestep with a defined target.
pub const FIRST_TARGET_STEP: usize = LAG_CHANNEL_1;

/// One supervised sequence: `T×D_in` inputs, `T×D_out` targets and a
/// per-step loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
    pub mask: Vec<bool>,
}

impl Sequence {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix, mask: Vec<bool>) -> Result<Self> {
        if inputs.rows() != targets.rows() || mask.len() != inputs.rows() {
            return Err(Error::shape(
                "Sequence::new",
                format!("inputs {inputs}, targets {targets}"),
                format!("mask len {}", mask.len()),
            ));
        }
        Ok(Self {
            inputs,
            targets,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// A set of sequences sharing input and output widths.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    sequences: Vec<Sequence>,
}

impl SeriesDataset {
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset has no sequences".into()))?;
        let (d_in, d_out) = (first.inputs.cols(), first.targets.cols());
        if let Some((i, s)) = sequences
            .iter()
            .enumerate()
            .find(|(_, s)| s.inputs.cols() != d_in || s.targets.cols() != d_out)
        {
            return Err(Error::shape(
                "SeriesDataset::new",
                format!("sequence 0 widths ({d_in}, {d_out})"),
                format!("sequence {i} widths ({}, {})", s.inputs.cols(), s.targets.cols()),
            ));
        }
        Ok(Self { sequences })
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.sequences[0].inputs.cols()
    }

    pub fn d_out(&self) -> usize {
        self.sequences[0].targets.cols()
    }
}

/// Which function of the inputs the benchmark asks for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetRule {
    /// `y_t = x_{t-3}[0] + x_{t-5}[1]`.
    DelayedSum,
    /// `y_t = x_t[0] + x_t[1]`, the no-memory control.
    InstantSum,
}

/// `xs[t-3][0] + xs[t-5][1]`, defined for `t >= 5`.
pub fn delayed_sum_target(xs: &DenseMatrix, t: usize) -> Result<f64> {
    if t < FIRST_TARGET_STEP {
        return Err(Error::UndefinedTarget {
            t,
            min: FIRST_TARGET_STEP,
        });
    }
    if xs.cols() < 2 || t >= xs.rows() {
        return Err(Error::shape("delayed_sum_target", xs, format!("t={t} with 2 columns")));
    }
    Ok(xs[(t - LAG_CHANNEL_0, 0)] + xs[(t - LAG_CHANNEL_1, 1)])
}

/// `n_seq` sequences of `t_len` steps with i.i.d. uniform `[0, 1)` inputs.
/// Sequence `i` draws from sub-stream `i` of `rng`, so the result does not
/// depend on generation order. Steps before [`FIRST_TARGET_STEP`] are masked.
pub fn generate_toy_dataset(n_seq: usize, t_len: usize, rng: &Rng) -> Result<SeriesDataset> {
    generate_task(n_seq, t_len, rng, TargetRule::DelayedSum)
}

pub fn generate_task(n_seq: usize, t_len: usize, rng: &Rng, rule: TargetRule) -> Result<SeriesDataset> {
    if n_seq == 0 {
        return Err(Error::InvalidArgument("need at least one sequence".into()));
    }
    if t_len <= FIRST_TARGET_STEP {
        return Err(Error::InvalidArgument(format!(
            "sequence length {t_len} leaves no supervised step (need > {FIRST_TARGET_STEP})"
        )));
    }
    let sequences = (0..n_seq)
        .map(|i| {
            let mut r = rng.derive(i as u64);
            let xs = DenseMatrix::from_vec(t_len, 2, (0..2 * t_len).map(|_| r.uniform()).collect())?;
            let mut ys = DenseMatrix::zeros(t_len, 1);
            let mask: Vec<bool> = (0..t_len).map(|t| t >= FIRST_TARGET_STEP).collect();
            for t in FIRST_TARGET_STEP..t_len {
                ys[(t, 0)] = match rule {
                    TargetRule::DelayedSum => delayed_sum_target(&xs, t)?,
                    TargetRule::InstantSum => xs[(t, 0)] + xs[(t, 1)],
                };
            }
            Sequence::new(xs, ys, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    SeriesDataset::new(sequences)
}

/// Writes one CSV per sequence (`seq_000.csv`, ...) with columns
/// `x0,x1,target,mask`. Masked targets are written as 0.
pub fn dump_csv(dataset: &SeriesDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, seq) in dataset.sequences().iter().enumerate() {
        let path = dir.join(format!("seq_{i:03}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|source| Error::Csv {
            path: path.clone(),
            source,
        })?;
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        w.write_record(["x0", "x1", "target", "mask"]).map_err(csv_err)?;
        for t in 0..seq.len() {
            w.write_record([
                seq.inputs[(t, 0)].to_string(),
                seq.inputs[(t, 1)].to_string(),
                seq.targets[(t, 0)].to_string(),
                u8::from(seq.mask[t]).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_sized_dataset() {
        let d = generate_toy_dataset(100, 20, &Rng::new(7)).unwrap();
        assert_eq!(d.len(), 100);
        for s in d.sequences() {
            assert_eq!(s.inputs.shape(), (20, 2));
            assert_eq!(s.targets.shape(), (20, 1));
            assert_eq!(s.unmasked(), 15);
            assert!(s.mask[..5].iter().all(|&m| !m));
        }
        assert_eq!(d, generate_toy_dataset(100, 20, &Rng::new(7)).unwrap());
        assert_ne!(d, generate_toy_dataset(100, 20, &Rng::new(8)).unwrap());
    }

    #[test]
    fn boundary_length_has_one_supervised_step() {
        let d = generate_toy_dataset(1, 6, &Rng::new(1)).unwrap();
        assert_eq!(d.sequences()[0].mask, vec![false, false, false, false, false, true]);
        assert!(generate_toy_dataset(1, 5, &Rng::new(1)).is_err());
        assert!(generate_toy_dataset(0, 20, &Rng::new(1)).is_err());
    }

    #[test]
    fn delayed_sum_examples() {
        let ones = DenseMatrix::from_vec(8, 2, vec![1.0; 16]).unwrap();
        for t in 5..8 {
            assert_eq!(delayed_sum_target(&ones, t).unwrap(), 2.0);
        }
        assert_eq!(delayed_sum_target(&DenseMatrix::zeros(8, 2), 6).unwrap(), 0.0);

        let mut xs = DenseMatrix::zeros(6, 2);
        xs[(2, 0)] = 0.3;
        xs[(2, 1)] = 0.9;
        xs[(0, 0)] = 0.4;
        xs[(0, 1)] = 0.2;
        assert_eq!(delayed_sum_target(&xs, 5).unwrap(), 0.3 + 0.2);
        assert!(matches!(delayed_sum_target(&xs, 4), Err(Error::UndefinedTarget { t: 4, .. })));
    }

    #[test]
    fn targets_only_depend_on_named_entries() {
        let d = generate_toy_dataset(1, 12, &Rng::new(3)).unwrap();
        let xs = &d.sequences()[0].inputs;
        for t in 5..12 {
            let base = delayed_sum_target(xs, t).unwrap();
            for s in 0..12 {
                for c in 0..2 {
                    if (s, c) == (t - 3, 0) || (s, c) == (t - 5, 1) {
                        continue;
                    }
                    let mut p = xs.clone();
                    p[(s, c)] += 0.77;
                    assert_eq!(delayed_sum_target(&p, t).unwrap(), base);
                }
            }
        }
    }

    #[test]
    fn targets_are_bounded() {
        let d = generate_toy_dataset(50, 30, &Rng::new(11)).unwrap();
        for s in d.sequences() {
            for t in 0..s.len() {
                let y = s.targets[(t, 0)];
                assert!((0.0..2.0).contains(&y));
            }
        }
    }

    #[test]
    fn instant_sum_control() {
        let d = generate_task(2, 8, &Rng::new(2), TargetRule::InstantSum).unwrap();
        let s = &d.sequences()[0];
        assert_eq!(s.targets[(6, 0)], s.inputs[(6, 0)] + s.inputs[(6, 1)]);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_toy_dataset(2, 7, &Rng::new(4)).unwrap();
        dump_csv(&d, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("seq_001.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1,target,mask");
        assert_eq!(lines.len(), 8);
        assert!(lines[1].ends_with(",0,0"));
        assert!(lines[6].ends_with(",1"));
    }
}
