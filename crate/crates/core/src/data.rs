//! Datasets: LIBSVM text I/O, label binarization and the synthetic generator.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{config, Error, Result};
use crate::linalg::SparseExample;
use crate::rng::{run_rng, RunRng};

/// A finite collection of sparse examples of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<SparseExample>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<SparseExample>, dim: usize) -> Result<Self> {
        if examples.is_empty() {
            return config("dataset must contain at least one example");
        }
        let needed = examples.iter().map(SparseExample::min_dim).max().unwrap_or(0);
        if needed > dim {
            return Err(Error::Dimension {
                expected: dim,
                got: needed,
            });
        }
        Ok(Dataset { examples, dim })
    }

    pub fn examples(&self) -> &[SparseExample] {
        &self.examples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.examples.iter().map(SparseExample::nnz).sum()
    }

    /// Fraction of stored entries among all `n * d` coordinates.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.len() as f64 * self.dim as f64)
    }

    /// Divides every feature by its largest absolute value (features that
    /// are identically zero are left alone). Returns the applied factors.
    pub fn scale_max_abs(&mut self) -> Vec<f64> {
        let mut max_abs = vec![0.0f64; self.dim];
        for e in &self.examples {
            for (&i, &v) in e.indices().iter().zip(e.values()) {
                max_abs[i] = max_abs[i].max(v.abs());
            }
        }
        let factors: Vec<f64> = max_abs
            .iter()
            .map(|&m| if m > 0.0 { 1.0 / m } else { 1.0 })
            .collect();
        for e in &mut self.examples {
            e.scale_features(&factors);
        }
        factors
    }
}

/// How labels read from disk are mapped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelMap {
    /// `> 0` becomes +1, everything else -1.
    Sign,
    /// The given class becomes +1, every other class -1.
    OneVsRest(i64),
    /// Keep the value (regression targets).
    Raw,
}

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    pub label_map: LabelMap,
    /// Feature dimension; must be at least the largest index seen.
    pub dim: Option<usize>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            label_map: LabelMap::Sign,
            dim: None,
        }
    }
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        msg: msg.into(),
    })
}

/// Reads `label idx:val idx:val ...` lines with 1-based ascending indices.
///
/// Blank lines and `#` comments are ignored; `qid:` tokens are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, opts: ParseOptions) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows = Vec::new();
    let mut last_line = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        last_line = lineno;
        let line = line?;
        let body = match line.find('#') {
            Some(p) => &line[..p],
            None => &line[..],
        };
        let mut tokens = body.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = match label_tok.parse() {
            Ok(v) => v,
            Err(_) => return parse_err(lineno, format!("invalid label {label_tok:?}")),
        };
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            if tok.starts_with("qid:") {
                continue;
            }
            let Some((idx, val)) = tok.split_once(':') else {
                return parse_err(lineno, format!("expected idx:val, got {tok:?}"));
            };
            let idx: usize = match idx.parse() {
                Ok(i) => i,
                Err(_) => return parse_err(lineno, format!("invalid feature index {idx:?}")),
            };
            if idx == 0 {
                return parse_err(lineno, "feature indices are 1-based");
            }
            let val: f64 = match val.parse() {
                Ok(v) => v,
                Err(_) => return parse_err(lineno, format!("invalid feature value {val:?}")),
            };
            if indices.last().is_some_and(|&prev| prev >= idx - 1) {
                return parse_err(lineno, format!("feature index {idx} is not ascending"));
            }
            indices.push(idx - 1);
            values.push(val);
        }
        raw_labels.push((lineno, label));
        rows.push((indices, values));
    }
    if rows.is_empty() {
        return parse_err(last_line.max(1), "no examples found");
    }

    let labels: Vec<f64> = match opts.label_map {
        LabelMap::Sign => raw_labels
            .iter()
            .map(|&(_, l)| if l > 0.0 { 1.0 } else { -1.0 })
            .collect(),
        LabelMap::Raw => raw_labels.iter().map(|&(_, l)| l).collect(),
        LabelMap::OneVsRest(class) => {
            let mut ints = Vec::with_capacity(raw_labels.len());
            for &(line, l) in &raw_labels {
                if l.fract() != 0.0 {
                    return parse_err(line, format!("label {l} is not an integer class"));
                }
                ints.push(l as i64);
            }
            binarize_one_vs_rest(&ints, class)?
        }
    };

    let max_dim = rows
        .iter()
        .map(|(idx, _)| idx.last().map_or(0, |&i| i + 1))
        .max()
        .unwrap_or(0);
    let dim = match opts.dim {
        Some(d) if d < max_dim => {
            return config(format!(
                "dimension override {d} is below the largest feature index {max_dim}"
            ))
        }
        Some(d) => d,
        None => max_dim,
    };
    let examples = rows
        .into_iter()
        .zip(labels)
        .map(|((idx, vals), label)| SparseExample::new(idx, vals, label))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, dim)
}

/// Writes a dataset in LIBSVM format; every value round-trips exactly.
pub fn write_libsvm<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    for e in data.examples() {
        if e.label == 1.0 {
            out.write_all(b"+1")?;
        } else if e.label == -1.0 {
            out.write_all(b"-1")?;
        } else {
            write!(out, "{}", e.label)?;
        }
        for (&i, &v) in e.indices().iter().zip(e.values()) {
            write!(out, " {}:{}", i + 1, v)?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// `+1` where `label == positive_class`, `-1` elsewhere.
pub fn binarize_one_vs_rest(labels: &[i64], positive_class: i64) -> Result<Vec<f64>> {
    if !labels.contains(&positive_class) {
        let seen: BTreeSet<_> = labels.iter().collect();
        return config(format!(
            "positive class {positive_class} does not occur in labels {seen:?}"
        ));
    }
    Ok(labels
        .iter()
        .map(|&l| if l == positive_class { 1.0 } else { -1.0 })
        .collect())
}

/// Source of synthetic classification examples.
///
/// A hidden direction `u ~ U[-1, 1]^d` is drawn once. Each example keeps
/// every coordinate independently with probability `density`, with values
/// uniform in `(0, 1]`, and is labelled `sign(<u, a>)` with `sign(0) = +1`.
///
/// Stored coordinates are located by geometric gap sampling: a gap of `g`
/// skipped coordinates has probability `(1 - p)^g p`, which is the law of
/// independent Bernoulli(p) trials. RNG consumption per example is, in
/// order: one uniform for each gap, then one uniform for each value.
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    hidden: Vec<f64>,
    density: f64,
}

impl SyntheticGenerator {
    pub fn new(dim: usize, density: f64, seed: u64) -> Result<Self> {
        Self::from_rng(dim, density, &mut run_rng(seed))
    }

    pub fn from_rng(dim: usize, density: f64, rng: &mut RunRng) -> Result<Self> {
        if dim == 0 {
            return config("dimension must be >= 1");
        }
        if !(density > 0.0 && density <= 1.0) {
            return config(format!("density must lie in (0, 1], got {density}"));
        }
        let hidden = (0..dim).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        Ok(SyntheticGenerator { hidden, density })
    }

    pub fn dim(&self) -> usize {
        self.hidden.len()
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    fn support(&self, rng: &mut RunRng) -> Vec<usize> {
        let d = self.hidden.len();
        if self.density >= 1.0 {
            return (0..d).collect();
        }
        let log_q = (-self.density).ln_1p();
        let mut out = Vec::new();
        let mut next = 0usize;
        loop {
            let u: f64 = rng.gen();
            let gap = ((-u).ln_1p() / log_q).floor();
            if gap >= (d - next) as f64 {
                break;
            }
            next += gap as usize;
            out.push(next);
            next += 1;
            if next >= d {
                break;
            }
        }
        out
    }

    pub fn draw_example(&self, rng: &mut RunRng) -> SparseExample {
        let indices = self.support(rng);
        let values: Vec<f64> = indices.iter().map(|_| 1.0 - rng.gen::<f64>()).collect();
        let mut margin = 0.0;
        for (&i, &v) in indices.iter().zip(&values) {
            margin += self.hidden[i] * v;
        }
        let label = if margin >= 0.0 { 1.0 } else { -1.0 };
        SparseExample::new(indices, values, label).expect("generated indices are ascending")
    }
}

/// `n` synthetic examples in dimension `d`; bit-reproducible from `seed`.
pub fn generate_synthetic(n: usize, d: usize, density: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return config("n must be >= 1");
    }
    let mut rng = run_rng(seed);
    let gen = SyntheticGenerator::from_rng(d, density, &mut rng)?;
    let examples = (0..n).map(|_| gen.draw_example(&mut rng)).collect();
    Dataset::new(examples, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_libsvm(text.as_bytes(), ParseOptions::default())
    }

    #[test]
    fn parses_single_line() {
        let d = parse("+1 1:0.5 3:2\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.dim(), 3);
        let e = &d.examples()[0];
        assert_eq!(e.indices(), &[0, 2]);
        assert_eq!(e.values(), &[0.5, 2.0]);
        assert_eq!(e.label, 1.0);
    }

    #[test]
    fn featureless_line() {
        let d = parse("-1\n").unwrap();
        assert_eq!(d.examples()[0].nnz(), 0);
        assert_eq!(d.examples()[0].label, -1.0);
        assert_eq!(d.dim(), 0);
    }

    #[test]
    fn skips_blank_comments_and_crlf() {
        let d = parse("# header\r\n\r\n1 2:1 # trailing\r\n0 1:3 qid:4 5:1\r\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.examples()[1].label, -1.0);
        assert_eq!(d.examples()[1].indices(), &[0, 4]);
        assert_eq!(d.dim(), 5);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse("1 1:2\n1 x:2\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse("1 1:2\n\nabc 1:1\n") {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("1 3:1 2:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 2:1 2:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 0:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 2:abc\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
        assert!(matches!(parse("# only a comment\n\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn dimension_override() {
        let opts = ParseOptions {
            dim: Some(10),
            ..Default::default()
        };
        assert_eq!(parse_libsvm("1 3:1\n".as_bytes(), opts).unwrap().dim(), 10);
        let opts = ParseOptions {
            dim: Some(2),
            ..Default::default()
        };
        assert!(parse_libsvm("1 3:1\n".as_bytes(), opts).is_err());
    }

    #[test]
    fn one_vs_rest_mapping() {
        assert_eq!(
            binarize_one_vs_rest(&[0, 1, 2, 1], 1).unwrap(),
            vec![-1.0, 1.0, -1.0, 1.0]
        );
        assert_eq!(binarize_one_vs_rest(&[3, 3], 3).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(binarize_one_vs_rest(&[0, 2], 1), Err(Error::Config(_))));

        let opts = ParseOptions {
            label_map: LabelMap::OneVsRest(7),
            dim: None,
        };
        let d = parse_libsvm("7 1:1\n3 1:1\n7 2:1\n".as_bytes(), opts).unwrap();
        let labels: Vec<f64> = d.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![1.0, -1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn one_vs_rest_preserves_counts(labels in prop::collection::vec(0i64..5, 1..100)) {
            let pos = labels[0];
            let out = binarize_one_vs_rest(&labels, pos).unwrap();
            let want = labels.iter().filter(|&&l| l == pos).count();
            prop_assert_eq!(out.iter().filter(|&&b| b == 1.0).count(), want);
            prop_assert_eq!(out.len(), labels.len());
        }

        #[test]
        fn write_then_parse_round_trips(n in 1usize..30, d in 1usize..40, density in 0.05f64..1.0, seed in any::<u64>()) {
            let data = generate_synthetic(n, d, density, seed).unwrap();
            let mut buf = Vec::new();
            write_libsvm(&data, &mut buf).unwrap();
            let opts = ParseOptions { label_map: LabelMap::Raw, dim: Some(d) };
            let back = parse_libsvm(buf.as_slice(), opts).unwrap();
            prop_assert_eq!(back, data);
        }
    }

    #[test]
    fn raw_labels_round_trip() {
        let ex = vec![
            SparseExample::new(vec![1], vec![0.1 + 0.2], 3.25).unwrap(),
            SparseExample::new(vec![], vec![], -0.0001).unwrap(),
        ];
        let data = Dataset::new(ex, 4).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&data, &mut buf).unwrap();
        let opts = ParseOptions {
            label_map: LabelMap::Raw,
            dim: Some(4),
        };
        assert_eq!(parse_libsvm(buf.as_slice(), opts).unwrap(), data);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(50, 30, 0.1, 42).unwrap();
        let b = generate_synthetic(50, 30, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(50, 30, 0.1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_one_dimensional_label_is_sign_of_hidden() {
        let gen = SyntheticGenerator::new(1, 1.0, 5).unwrap();
        let data = generate_synthetic(20, 1, 1.0, 5).unwrap();
        let want = if gen.hidden()[0] >= 0.0 { 1.0 } else { -1.0 };
        for e in data.examples() {
            assert_eq!(e.nnz(), 1);
            assert!(e.values()[0] > 0.0);
            assert_eq!(e.label, want);
        }
    }

    #[test]
    fn synthetic_labels_are_signs_of_hidden_margin() {
        let gen = SyntheticGenerator::new(40, 0.3, 8).unwrap();
        let data = generate_synthetic(200, 40, 0.3, 8).unwrap();
        for e in data.examples() {
            let m: f64 = e
                .indices()
                .iter()
                .zip(e.values())
                .map(|(&i, &v)| gen.hidden()[i] * v)
                .sum();
            assert_eq!(e.label, if m >= 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn synthetic_rejects_bad_density() {
        assert!(generate_synthetic(10, 10, 0.0, 1).is_err());
        assert!(generate_synthetic(10, 10, 1.5, 1).is_err());
        assert!(generate_synthetic(10, 10, f64::NAN, 1).is_err());
        assert!(generate_synthetic(0, 10, 0.5, 1).is_err());
    }

    #[test]
    fn synthetic_density_concentrates_at_full_scale() {
        // n = 100000, d = 5000 at 5%: the binomial standard deviation of the
        // empirical density is about 7e-5, far inside the +-1e-3 window.
        let (n, d) = (100_000usize, 5_000usize);
        let mut rng = run_rng(2024);
        let gen = SyntheticGenerator::from_rng(d, 0.05, &mut rng).unwrap();
        let mut nnz = 0usize;
        for _ in 0..n {
            nnz += gen.draw_example(&mut rng).nnz();
        }
        let density = nnz as f64 / (n * d) as f64;
        assert!((0.049..=0.051).contains(&density), "{density}");
    }

    #[test]
    fn max_abs_scaling() {
        let ex = vec![
            SparseExample::new(vec![0, 1], vec![2.0, -4.0], 1.0).unwrap(),
            SparseExample::new(vec![0], vec![-1.0], 1.0).unwrap(),
        ];
        let mut data = Dataset::new(ex, 3).unwrap();
        let f = data.scale_max_abs();
        assert_eq!(f, vec![0.5, 0.25, 1.0]);
        assert_eq!(data.examples()[0].values(), &[1.0, -1.0]);
        assert_eq!(data.examples()[1].values(), &[-0.5]);
    }
}
