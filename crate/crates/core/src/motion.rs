//! Multivariate time series: CSV ingestion, per-column standardization, a
//! synthetic quasi-periodic stand-in for walking data, and the
//! seed-then-free-run generation loop.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::Params;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, Rng};
use crate::toytask::Sequence;

/// Frame-major motion data: one row per frame, one column per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionDataset {
    pub frames: DenseMatrix,
    pub norm: Option<NormStats>,
}

impl MotionDataset {
    pub fn new(frames: DenseMatrix) -> Result<Self> {
        if frames.rows() < 2 || frames.cols() < 1 {
            return Err(Error::InvalidArgument(format!(
                "motion data needs at least 2 frames and 1 feature, got {frames}"
            )));
        }
        Ok(Self { frames, norm: None })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_features(&self) -> usize {
        self.frames.cols()
    }
}

/// Per-column mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: DenseVector,
    pub std: DenseVector,
}

impl NormStats {
    /// Fits column statistics. Constant columns get `std = 1` (and a logged
    /// warning) so that they normalize to zero instead of dividing by zero.
    pub fn fit(frames: &DenseMatrix) -> Result<Self> {
        let (t, d) = frames.shape();
        if t == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!("cannot fit normalizer on {frames}")));
        }
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = frames.column(j);
            let m = col.iter().sum::<f64>() / t as f64;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t as f64;
            mean[j] = m;
            std[j] = if var > 0.0 && var.sqrt() > f64::EPSILON * m.abs().max(1.0) {
                var.sqrt()
            } else {
                log::warn!("column {j} is constant; clamping its std to 1");
                1.0
            };
        }
        Ok(Self {
            mean: DenseVector::from_vec(mean)?,
            std: DenseVector::from_vec(std)?,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, frames: &DenseMatrix, op: &'static str) -> Result<()> {
        if frames.cols() != self.n_features() || self.std.len() != self.n_features() {
            return Err(Error::shape(op, format!("frames {frames}"), format!("stats for {} features", self.n_features())));
        }
        Ok(())
    }

    pub fn normalize(&self, frames: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(frames, "normalize")?;
        let mut out = frames.clone();
        for i in 0..frames.rows() {
            for j in 0..frames.cols() {
                out[(i, j)] = (frames[(i, j)] - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, frames: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(frames, "denormalize")?;
        let mut out = frames.clone();
        for i in 0..frames.rows() {
            for j in 0..frames.cols() {
                out[(i, j)] = frames[(i, j)] * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

pub fn fit_normalizer(d: &MotionDataset) -> Result<NormStats> {
    NormStats::fit(&d.frames)
}

/// Standardizes `d` with `s` and records the stats on the result.
pub fn normalize(d: &MotionDataset, s: &NormStats) -> Result<MotionDataset> {
    Ok(MotionDataset {
        frames: s.normalize(&d.frames)?,
        norm: Some(s.clone()),
    })
}

pub fn denormalize(d: &MotionDataset, s: &NormStats) -> Result<MotionDataset> {
    Ok(MotionDataset {
        frames: s.denormalize(&d.frames)?,
        norm: None,
    })
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a rectangular numeric CSV. A first row containing any non-numeric
/// cell is taken as a header. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: &Path) -> Result<MotionDataset> {
    MotionDataset::new(read_matrix_csv(path)?)
}

/// Like [`load_csv`] but without the two-frame minimum.
pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
        })?;

    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = idx + 1;
        let parsed: Vec<Option<f64>> = record.iter().map(parse_cell).collect();
        if idx == 0 && parsed.iter().any(Option::is_none) {
            // header row
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: line,
                expected,
                found: record.len(),
            });
        }
        for (col, (value, raw)) in parsed.into_iter().zip(record.iter()).enumerate() {
            data.push(value.ok_or_else(|| Error::NonNumeric {
                path: path.to_path_buf(),
                row: line,
                col: col + 1,
                value: raw.to_string(),
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    DenseMatrix::from_vec(rows, width.unwrap_or(0), data)
}

/// Writes `frames` as CSV with a header row. Column names default to
/// `f0, f1, ...`. Values use the shortest representation that parses back to
/// the same `f64`.
pub fn write_csv(path: &Path, frames: &DenseMatrix, header: Option<&[String]>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let default_header: Vec<String>;
    let header = match header {
        Some(h) if h.len() == frames.cols() => h,
        Some(h) => {
            return Err(Error::shape("write_csv", format!("{} header names", h.len()), format!("frames {frames}")));
        }
        None => {
            default_header = (0..frames.cols()).map(|j| format!("f{j}")).collect();
            &default_header
        }
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for i in 0..frames.rows() {
        w.write_record(frames.row(i).iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One sinusoidal feature of the synthetic motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    pub amplitude: f64,
    /// Whole cycles over the base period.
    pub cycles: u32,
    pub phase: f64,
}

/// Quasi-periodic stand-in for walking data: column `j` is
/// `a_j · sin(2π f_j · t / period + φ_j)`, optionally with Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotion {
    pub period: usize,
    pub components: Vec<SineComponent>,
}

impl SyntheticMotion {
    pub const NOISE_STD: f64 = 0.01;
    pub const MAX_CYCLES: u64 = 6;

    /// Draws amplitudes from `[0.5, 1.5)`, cycle counts from `1..=6` and
    /// phases from `[0, 2π)`, column by column.
    pub fn draw(period: usize, d: usize, rng: &mut Rng) -> Self {
        let components = (0..d)
            .map(|_| SineComponent {
                amplitude: rng.uniform_range(0.5, 1.5),
                cycles: rng.int_range(1, Self::MAX_CYCLES) as u32,
                phase: rng.uniform_range(0.0, 2.0 * PI),
            })
            .collect();
        Self { period, components }
    }

    pub fn value(&self, t: usize, j: usize) -> f64 {
        let c = &self.components[j];
        c.amplitude * (2.0 * PI * f64::from(c.cycles) * t as f64 / self.period as f64 + c.phase).sin()
    }

    /// Noise-free frames `start..start + len`; indices past the period continue
    /// the same sinusoids.
    pub fn clean_frames(&self, start: usize, len: usize) -> DenseMatrix {
        let d = self.components.len();
        let mut m = DenseMatrix::zeros(len, d);
        for i in 0..len {
            for j in 0..d {
                m[(i, j)] = self.value(start + i, j);
            }
        }
        m
    }

    /// Frames `0..period` with i.i.d. Gaussian noise of standard deviation
    /// `noise_std` added row by row.
    pub fn render(&self, noise_std: f64, rng: &mut Rng) -> DenseMatrix {
        let mut m = self.clean_frames(0, self.period);
        if noise_std > 0.0 {
            for v in m.as_mut_slice() {
                *v += noise_std * rng.normal();
            }
        }
        m
    }
}

/// The synthetic benchmark dataset: [`SyntheticMotion::draw`] followed by
/// [`SyntheticMotion::render`] with σ = 0.01, both from `rng`.
pub fn synthesize_benchmark_motion(t: usize, d: usize, rng: &mut Rng) -> Result<MotionDataset> {
    if t < 2 || d < 1 {
        return Err(Error::InvalidArgument(format!("synthetic motion needs t >= 2 and d >= 1, got {t}x{d}")));
    }
    let signal = SyntheticMotion::draw(t, d, rng);
    MotionDataset::new(signal.render(SyntheticMotion::NOISE_STD, rng))
}

/// Next-frame prediction as one supervised sequence: input `x_t`, target
/// `x_{t+1}`; the last frame has no target and is masked.
pub fn next_frame_sequence(frames: &DenseMatrix) -> Result<Sequence> {
    let (t, d) = frames.shape();
    if t < 2 {
        return Err(Error::InvalidArgument(format!("next-frame training needs >= 2 frames, got {t}")));
    }
    let mut targets = DenseMatrix::zeros(t, d);
    targets.as_mut_slice()[..(t - 1) * d].copy_from_slice(&frames.as_slice()[d..]);
    let mask = (0..t).map(|i| i + 1 < t).collect();
    Sequence::new(frames.clone(), targets, mask)
}

/// Seed frames and the frames generated after them.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRun {
    pub seed_frames: usize,
    pub seed_source: DenseMatrix,
    pub generated: DenseMatrix,
}

/// Teacher-forces the model over `seed`, then free-runs for `gen_len` frames.
///
/// The first generated frame is the output after the last seed frame; each
/// later frame is the output of a step whose input is the previous generated
/// frame.
pub fn seed_and_generate(p: &Params, seed: &DenseMatrix, gen_len: usize) -> Result<GenerationRun> {
    let dims = p.dims();
    if dims.d_in != dims.d_out {
        return Err(Error::shape("seed_and_generate", format!("model d_in {}", dims.d_in), format!("d_out {}", dims.d_out)));
    }
    if seed.cols() != dims.d_in {
        return Err(Error::shape(
            "seed_and_generate",
            format!("seed frames with {} columns", seed.cols()),
            format!("model expecting {}", dims.d_in),
        ));
    }
    if seed.rows() == 0 || gen_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "need >= 1 seed frame and gen_len >= 1, got {} and {gen_len}",
            seed.rows()
        )));
    }

    let mut h = DenseVector::zeros(dims.hidden);
    let mut y = DenseVector::zeros(dims.d_out);
    for t in 0..seed.rows() {
        let step = p.step(&h, &seed.row_vector(t))?;
        h = step.h;
        y = step.y;
    }

    let mut generated = DenseMatrix::zeros(gen_len, dims.d_out);
    for g in 0..gen_len {
        if g > 0 {
            let step = p.step(&h, &y)?;
            h = step.h;
            y = step.y;
        }
        if !y.is_finite() {
            return Err(Error::NonFiniteGeneration { step: g });
        }
        generated.as_mut_slice()[g * dims.d_out..(g + 1) * dims.d_out].copy_from_slice(y.as_slice());
    }
    Ok(GenerationRun {
        seed_frames: seed.rows(),
        seed_source: seed.clone(),
        generated,
    })
}

/// Mean across features of each frame.
pub fn feature_average_trace(frames: &DenseMatrix) -> Vec<f64> {
    let d = frames.cols().max(1) as f64;
    (0..frames.rows()).map(|i| frames.row(i).iter().sum::<f64>() / d).collect()
}

/// Pearson correlation of two equal-length series; `None` when either is
/// constant or the lengths differ.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, Dims};
    use std::io::Write;

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_minimal_and_headed_files() {
        let f = write_file("1\n2\n");
        let d = load_csv(f.path()).unwrap();
        assert_eq!((d.n_frames(), d.n_features()), (2, 1));

        let f = write_file("a,b\n1,2\n3,4.5\n");
        let d = load_csv(f.path()).unwrap();
        assert_eq!(d.frames.as_slice(), &[1.0, 2.0, 3.0, 4.5]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let ragged = write_file("1,2\n3,4\n5\n");
        match load_csv(ragged.path()) {
            Err(Error::RaggedRow { row, expected, found, .. }) => assert_eq!((row, expected, found), (3, 2, 1)),
            other => panic!("{other:?}"),
        }
        let text = write_file("x,y\n1,2\n3,oops\n");
        match load_csv(text.path()) {
            Err(Error::NonNumeric { row, col, value, .. }) => assert_eq!((row, col, value.as_str()), (3, 2, "oops")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_csv(write_file("").path()), Err(Error::EmptyFile(_))));
        assert!(matches!(load_csv(write_file("a,b\n").path()), Err(Error::EmptyFile(_))));
        assert!(matches!(load_csv(Path::new("/nonexistent/x.csv")), Err(Error::Io { .. })));
        assert!(load_csv(write_file("1,2\n").path()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = Rng::new(5);
        let m = DenseMatrix::from_vec(4, 3, (0..12).map(|_| rng.normal() * 1e3).collect()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(f.path(), &m, None).unwrap();
        assert_eq!(load_csv(f.path()).unwrap().frames, m);
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("f0,f1,f2\n"));
    }

    #[test]
    fn normalizer_examples() {
        let m = DenseMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let s = NormStats::fit(&m).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);

        let constant = DenseMatrix::from_vec(3, 2, vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap();
        let s = NormStats::fit(&constant).unwrap();
        assert_eq!(s.std[0], 1.0);
        let n = s.normalize(&constant).unwrap();
        assert!(n.column(0).iter().all(|&v| v == 0.0));

        let s2 = NormStats::fit(&n).unwrap();
        for j in 0..2 {
            assert!(s2.mean[j].abs() < 1e-12);
        }
        assert!((s2.std[1] - 1.0).abs() < 1e-12);

        assert!(s.normalize(&DenseMatrix::zeros(2, 3)).is_err());
        assert!(s.denormalize(&DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn normalized_columns_are_standard() {
        let d = synthesize_benchmark_motion(375, 49, &mut Rng::new(3)).unwrap();
        assert_eq!(d.frames.shape(), (375, 49));
        let s = fit_normalizer(&d).unwrap();
        let n = normalize(&d, &s).unwrap();
        for j in 0..49 {
            let col = n.frames.column(j);
            let mean = col.iter().sum::<f64>() / 375.0;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 375.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
        let back = denormalize(&n, &s).unwrap();
        for (a, b) in back.frames.as_slice().iter().zip(d.frames.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_motion_properties() {
        let a = synthesize_benchmark_motion(375, 49, &mut Rng::new(3)).unwrap();
        let b = synthesize_benchmark_motion(375, 49, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);

        let signal = SyntheticMotion {
            period: 400,
            components: vec![SineComponent {
                amplitude: 1.25,
                cycles: 1,
                phase: 0.0,
            }],
        };
        let clean = signal.render(0.0, &mut Rng::new(0));
        let max = clean.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max, 1.25);

        let drawn = SyntheticMotion::draw(375, 49, &mut Rng::new(3));
        assert!(drawn.components.iter().all(|c| (1..=6).contains(&c.cycles)));
        let noisy = synthesize_benchmark_motion(375, 49, &mut Rng::new(3)).unwrap();
        let clean = drawn.clean_frames(0, 375);
        let max_dev = noisy.frames.as_slice().iter().zip(clean.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev > 0.0 && max_dev < 0.06);
    }

    #[test]
    fn next_frame_targets() {
        let m = DenseMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = next_frame_sequence(&m).unwrap();
        assert_eq!(s.targets.row(0), &[3.0, 4.0]);
        assert_eq!(s.targets.row(1), &[5.0, 6.0]);
        assert_eq!(s.mask, vec![true, true, false]);
    }

    #[test]
    fn zero_model_generates_zeros() {
        let p = Params::zeros(CellKind::Gru, Dims::new(3, 4, 3).unwrap());
        let seed = DenseMatrix::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let run = seed_and_generate(&p, &seed, 5).unwrap();
        assert_eq!(run.generated, DenseMatrix::zeros(5, 3));
        assert_eq!(run.seed_frames, 2);
    }

    #[test]
    fn first_generated_frame_is_output_after_seed() {
        let p = Params::init(CellKind::Gru, Dims::new(3, 5, 3).unwrap(), 0.5, &mut Rng::new(4)).unwrap();
        let mut rng = Rng::new(9);
        let seed = DenseMatrix::from_vec(4, 3, (0..12).map(|_| rng.uniform()).collect()).unwrap();

        let mut h = DenseVector::zeros(5);
        for t in 0..4 {
            h = p.step(&h, &seed.row_vector(t)).unwrap().h;
        }
        let first = p.output_project(&h).unwrap();
        let second = p.step(&h, &first).unwrap().y;

        let one = seed_and_generate(&p, &seed, 1).unwrap();
        assert_eq!(one.generated.row(0), first.as_slice());
        let two = seed_and_generate(&p, &seed, 2).unwrap();
        assert_eq!(two.generated.row(1), second.as_slice());
        assert_eq!(two, seed_and_generate(&p, &seed, 2).unwrap());
    }

    #[test]
    fn generation_rejects_bad_shapes() {
        let p = Params::zeros(CellKind::Gru, Dims::new(3, 4, 3).unwrap());
        assert!(seed_and_generate(&p, &DenseMatrix::zeros(2, 2), 3).is_err());
        assert!(seed_and_generate(&p, &DenseMatrix::zeros(0, 3), 3).is_err());
        assert!(seed_and_generate(&p, &DenseMatrix::zeros(2, 3), 0).is_err());
        let rect = Params::zeros(CellKind::Gru, Dims::new(3, 4, 2).unwrap());
        assert!(seed_and_generate(&rect, &DenseMatrix::zeros(2, 3), 3).is_err());
    }

    #[test]
    fn generation_reports_non_finite_step() {
        let mut p = crate::cells::TanhParams::zeros(Dims::new(1, 1, 1).unwrap());
        // y = 1e200 · h with h = tanh(x): feeding y back saturates h at 1, so the
        // output stays finite; a huge bias on the output then overflows.
        p.w_xh = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        p.w_hy = DenseMatrix::from_vec(1, 1, vec![1e308]).unwrap();
        p.b_y = DenseVector::from_vec(vec![1e308]).unwrap();
        let err = seed_and_generate(&Params::Tanh(p), &DenseMatrix::from_vec(1, 1, vec![10.0]).unwrap(), 3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGeneration { step: 0 }), "{err:?}");
    }

    #[test]
    fn feature_average_examples() {
        let col = DenseMatrix::from_vec(3, 1, vec![1.0, -2.0, 5.0]).unwrap();
        assert_eq!(feature_average_trace(&col), vec![1.0, -2.0, 5.0]);
        let m = DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(feature_average_trace(&m), vec![2.0, 3.0]);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson_correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap() - 0.997949).abs() < 1e-5);
        assert_eq!(pearson_correlation(&[1.0, 2.0], &[2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson_correlation(&[1.0, 1.0], &[2.0, 1.0]), None);
    }
}
