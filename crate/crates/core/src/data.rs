//! Datasets: the synthetic 1-D regression problem, CSV ingestion and
//! standardization.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::{init_with_rng, Activation, InitScheme, Mlp, MlpSpec, ParamVector, Task};
use crate::rng::stream_rng;

/// Smallest standard deviation used when scaling a column.
pub const STD_FLOOR: f64 = 1e-12;

/// Features and targets of one split. Classification targets are class
/// indices stored as `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitData {
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl SplitData {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Dimension {
                what: "targets",
                expected: x.rows(),
                got: y.len(),
            });
        }
        if let Some(i) = x.as_slice().iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> (Matrix, Vec<f64>) {
        (
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Per-column affine scaling fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Standardization {
    /// Fits column means and (population) standard deviations. The target
    /// is left unscaled when `target` is false.
    pub fn fit(train: &SplitData, target: bool) -> Self {
        let n = train.len().max(1) as f64;
        let cols = train.n_features();
        let mut x_mean = vec![0.0; cols];
        for r in train.x.iter_rows() {
            for (m, v) in x_mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut x_std = vec![0.0; cols];
        for r in train.x.iter_rows() {
            for ((s, v), m) in x_std.iter_mut().zip(r).zip(&x_mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for (j, s) in x_std.iter_mut().enumerate() {
            *s = s.sqrt();
            if *s < STD_FLOOR {
                log::warn!(
                    "feature {j} is constant on the training split; using std {STD_FLOOR:e}"
                );
                *s = STD_FLOOR;
            }
        }
        let (y_mean, y_std) = if target {
            let m = train.y.iter().sum::<f64>() / n;
            let s = (train.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if s < STD_FLOOR {
                log::warn!("target is constant on the training split; using std {STD_FLOOR:e}");
            }
            (m, s.max(STD_FLOOR))
        } else {
            (0.0, 1.0)
        };
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn apply(&self, split: &SplitData) -> SplitData {
        let mut x = split.x.clone();
        for i in 0..x.rows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.x_mean[j]) / self.x_std[j];
            }
        }
        let y = split
            .y
            .iter()
            .map(|v| (v - self.y_mean) / self.y_std)
            .collect();
        SplitData { x, y }
    }

    pub fn invert(&self, split: &SplitData) -> SplitData {
        let mut x = split.x.clone();
        for i in 0..x.rows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.x_std[j] + self.x_mean[j];
            }
        }
        let y = split.y.iter().map(|&v| self.invert_target(v)).collect();
        SplitData { x, y }
    }

    pub fn invert_target(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    File { path: String, sha256: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
    /// Scaling already applied to all three splits, if any.
    pub stats: Option<Standardization>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &SplitData {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Fits scaling on the training split and applies it to every split.
    pub fn standardize(mut self, target: bool) -> Self {
        let st = Standardization::fit(&self.train, target);
        self.train = st.apply(&self.train);
        self.val = st.apply(&self.val);
        self.test = st.apply(&self.test);
        self.stats = Some(st);
        self
    }

    /// CSV text of one split: feature columns then the target.
    pub fn split_csv(&self, s: Split) -> String {
        let mut buf = Vec::new();
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        writeln!(buf, "{}", header.join(",")).expect("vec write");
        let data = self.split(s);
        for (row, y) in data.x.iter_rows().zip(&data.y) {
            let cells: Vec<String> = row
                .iter()
                .chain(std::iter::once(y))
                .map(|v| format!("{v:?}"))
                .collect();
            writeln!(buf, "{}", cells.join(",")).expect("vec write");
        }
        String::from_utf8(buf).expect("ascii")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Architecture of the generating network; its input width must equal
    /// `degree`.
    pub generator: MlpSpec,
    pub generator_init: InitScheme,
    /// Standard deviation of the additive target noise.
    pub noise_sd: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Open interval excluded from train and validation inputs.
    pub gap: (f64, f64),
    pub train_range: (f64, f64),
    /// Test inputs are evenly spaced over this range, gap included.
    pub test_range: (f64, f64),
    /// Features are `[x, x^2, ..., x^degree]`.
    pub degree: usize,
    pub seed: u64,
    #[serde(default)]
    pub standardize: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            generator: MlpSpec::new(
                vec![3, 16, 16, 16, 1],
                Activation::Relu,
                Task::RegressionHomoscedastic,
            )
            .expect("valid default"),
            generator_init: InitScheme::UniformFanIn,
            noise_sd: 0.05,
            n_train: 70,
            n_val: 18,
            n_test: 33,
            gap: (-0.6, 0.6),
            train_range: (-2.0, 2.0),
            test_range: (-2.4, 2.4),
            degree: 3,
            seed: 0,
            standardize: false,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("split counts must be positive");
        }
        let (a, b) = self.train_range;
        let (g0, g1) = self.gap;
        if !(a < b) || !(g0 <= g1) || g0 < a || g1 > b {
            return bad("gap must lie inside the train range");
        }
        if g0 == a && g1 == b {
            return bad("gap covers the whole train range");
        }
        if !(self.test_range.0 <= self.test_range.1) {
            return bad("test range is empty");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be >= 0");
        }
        if self.degree == 0 {
            return bad("feature degree must be >= 1");
        }
        self.generator.validate()?;
        if self.generator.input_width() != self.degree || self.generator.output_width() != 1 {
            return bad("generator must map degree features to one output");
        }
        if self.generator.task != Task::RegressionHomoscedastic {
            return bad("generator must be a regression network");
        }
        Ok(())
    }
}

/// `[x, x^2, ..., x^degree]` for each input.
pub fn expand_features(xs: &[f64], degree: usize) -> Matrix {
    let mut data = Vec::with_capacity(xs.len() * degree);
    for &x in xs {
        let mut p = 1.0;
        for _ in 0..degree {
            p *= x;
            data.push(p);
        }
    }
    Matrix::from_vec(xs.len(), degree, data).expect("shape")
}

/// A generated dataset together with the network that produced it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub theta_gen: ParamVector,
    /// Raw 1-D inputs per split, before feature expansion.
    pub inputs: [Vec<f64>; 3],
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Synthetic> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, 0);
    let net = Mlp::new(config.generator.clone())?;
    let theta_gen = init_with_rng(&config.generator, &mut rng, config.generator_init);
    let (a, b) = config.train_range;
    let (g0, g1) = config.gap;
    let mut draw_outside_gap = |n: usize| -> Vec<f64> {
        let mut xs = Vec::with_capacity(n);
        while xs.len() < n {
            let x: f64 = rng.random_range(a..b);
            if !(x > g0 && x < g1) {
                xs.push(x);
            }
        }
        xs
    };
    let x_train = draw_outside_gap(config.n_train);
    let x_val = draw_outside_gap(config.n_val);
    let (c, d) = config.test_range;
    let x_test: Vec<f64> = if config.n_test == 1 {
        vec![0.5 * (c + d)]
    } else {
        (0..config.n_test)
            .map(|i| c + (d - c) * i as f64 / (config.n_test - 1) as f64)
            .collect()
    };
    let mut make = |xs: &[f64]| -> Result<SplitData> {
        let x = expand_features(xs, config.degree);
        let mean = net.forward(&theta_gen, &x)?;
        let y = mean
            .as_slice()
            .iter()
            .map(|m| m + config.noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        SplitData::new(x, y)
    };
    let train = make(&x_train)?;
    let val = make(&x_val)?;
    let test = make(&x_test)?;
    let feature_names = (1..=config.degree)
        .map(|p| {
            if p == 1 {
                "x".to_string()
            } else {
                format!("x{p}")
            }
        })
        .collect();
    let mut dataset = Dataset {
        feature_names,
        target_name: "y".into(),
        train,
        val,
        test,
        stats: None,
        provenance: Provenance::Synthetic { seed: config.seed },
    };
    if config.standardize {
        dataset = dataset.standardize(true);
    }
    Ok(Synthetic {
        dataset,
        theta_gen,
        inputs: [x_train, x_val, x_test],
    })
}

/// Which columns to read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: String,
    /// Feature columns; `None` uses every other column except the split tag.
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn target(name: &str) -> Self {
        Self {
            target: name.to_string(),
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Seeded shuffle, then counts `round(fraction * n)` for train and val;
    /// test takes the rest.
    Fractions {
        train: f64,
        val: f64,
        test: f64,
        seed: u64,
    },
    /// A column holding `train`, `val` or `test` per row.
    TagColumn { column: String },
}

fn parse_cell(s: &str, line: usize, col: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Data {
        line,
        message: format!("column '{col}': cannot parse '{s}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data {
            line,
            message: format!("column '{col}': non-finite value"),
        });
    }
    Ok(v)
}

/// Reads a headed CSV file into a dataset.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    split: &SplitSpec,
    standardize: bool,
) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_csv(&bytes, schema, split, standardize)?;
    ds.provenance = Provenance::File {
        path: path.display().to_string(),
        sha256: crate::manifest::sha256_hex(&bytes),
    };
    Ok(ds)
}

/// [`load_csv`] on in-memory bytes.
pub fn parse_csv(
    bytes: &[u8],
    schema: &CsvSchema,
    split: &SplitSpec,
    standardize: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let target_idx = headers
        .iter()
        .position(|h| *h == schema.target)
        .ok_or_else(|| Error::Schema(format!("missing target column '{}'", schema.target)))?;
    let tag_idx = match split {
        SplitSpec::TagColumn { column } => Some(col(column)?),
        SplitSpec::Fractions { .. } => None,
    };
    let feature_idx: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != target_idx && Some(i) != tag_idx)
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut rows: Vec<(Vec<f64>, f64, Option<Split>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Data {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let feats = feature_idx
            .iter()
            .map(|&j| parse_cell(&rec[j], line, &headers[j]))
            .collect::<Result<Vec<_>>>()?;
        let y = parse_cell(&rec[target_idx], line, &headers[target_idx])?;
        let tag = match tag_idx {
            Some(j) => Some(Split::parse(&rec[j]).ok_or_else(|| Error::Data {
                line,
                message: format!("unknown split tag '{}'", &rec[j]),
            })?),
            None => None,
        };
        rows.push((feats, y, tag));
    }
    if rows.is_empty() {
        return Err(Error::Data {
            line: 1,
            message: "no data rows".into(),
        });
    }

    let n = rows.len();
    let assignment: Vec<Split> = match split {
        SplitSpec::TagColumn { .. } => rows.iter().map(|r| r.2.expect("tagged")).collect(),
        SplitSpec::Fractions {
            train,
            val,
            test,
            seed,
        } => {
            if [train, val, test].iter().any(|f| !(**f >= 0.0))
                || ((train + val + test) - 1.0).abs() > 1e-9
            {
                return Err(Error::Config(format!(
                    "split fractions must be non-negative and sum to 1, got {train}/{val}/{test}"
                )));
            }
            let n_train = ((train * n as f64).round() as usize).min(n);
            let n_val = ((val * n as f64).round() as usize).min(n - n_train);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream_rng(*seed, 0));
            let mut a = vec![Split::Test; n];
            for (pos, &i) in perm.iter().enumerate() {
                a[i] = if pos < n_train {
                    Split::Train
                } else if pos < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            a
        }
    };
    let build = |s: Split| -> Result<SplitData> {
        let mut data = Vec::new();
        let mut y = Vec::new();
        for (r, a) in rows.iter().zip(&assignment) {
            if *a == s {
                data.extend_from_slice(&r.0);
                y.push(r.1);
            }
        }
        SplitData::new(Matrix::from_vec(y.len(), feature_idx.len(), data)?, y)
    };
    let mut ds = Dataset {
        feature_names: feature_idx.iter().map(|&j| headers[j].clone()).collect(),
        target_name: schema.target.clone(),
        train: build(Split::Train)?,
        val: build(Split::Val)?,
        test: build(Split::Test)?,
        stats: None,
        provenance: Provenance::File {
            path: String::new(),
            sha256: crate::manifest::sha256_hex(bytes),
        },
    };
    if ds.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if standardize {
        ds = ds.standardize(true);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_and_gap() {
        let s = generate_synthetic(&SyntheticConfig::default()).unwrap();
        assert_eq!(s.dataset.train.len(), 70);
        assert_eq!(s.dataset.val.len(), 18);
        assert_eq!(s.dataset.test.len(), 33);
        for xs in &s.inputs[..2] {
            assert!(xs
                .iter()
                .all(|&x| !(x > -0.6 && x < 0.6) && (-2.0..=2.0).contains(&x)));
        }
        assert!(s.inputs[2].iter().any(|&x| x > -0.6 && x < 0.6));
        let r = s.dataset.train.x.row(0);
        assert!((r[1] - r[0] * r[0]).abs() < 1e-15 && (r[2] - r[0] * r[0] * r[0]).abs() < 1e-15);
    }

    #[test]
    fn noiseless_targets_come_from_generator() {
        let cfg = SyntheticConfig {
            noise_sd: 0.0,
            seed: 3,
            ..SyntheticConfig::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        let net = Mlp::new(cfg.generator.clone()).unwrap();
        for sp in Split::ALL {
            let d = s.dataset.split(sp);
            let pred = net.forward(&s.theta_gen, &d.x).unwrap();
            assert_eq!(pred.as_slice(), &d.y[..]);
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = SyntheticConfig {
            seed: 11,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_synthetic(&SyntheticConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.dataset.train, c.dataset.train);
    }

    fn table(n: usize) -> String {
        let mut s = String::from("a,b,target\n");
        for i in 0..n {
            s.push_str(&format!(
                "{},{},{}\n",
                i as f64 * 0.5,
                (i * i) as f64,
                i as f64 - 3.0
            ));
        }
        s
    }

    #[test]
    fn fraction_split_counts() {
        let spec = SplitSpec::Fractions {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed: 4,
        };
        let ds = parse_csv(
            table(100).as_bytes(),
            &CsvSchema::target("target"),
            &spec,
            false,
        )
        .unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (70, 15, 15));
        let again = parse_csv(
            table(100).as_bytes(),
            &CsvSchema::target("target"),
            &spec,
            false,
        )
        .unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn missing_target_and_malformed_rows() {
        let spec = SplitSpec::Fractions {
            train: 1.0,
            val: 0.0,
            test: 0.0,
            seed: 0,
        };
        match parse_csv(
            table(5).as_bytes(),
            &CsvSchema::target("price"),
            &spec,
            false,
        ) {
            Err(Error::Schema(m)) => assert!(m.contains("price")),
            other => panic!("{other:?}"),
        }
        let bad = "a,target\n1,2\n3,oops\n";
        match parse_csv(bad.as_bytes(), &CsvSchema::target("target"), &spec, false) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tag_column_split() {
        let text = "x,y,split\n1,2,train\n2,3,val\n3,4,test\n4,5,train\n";
        let ds = parse_csv(
            text.as_bytes(),
            &CsvSchema::target("y"),
            &SplitSpec::TagColumn {
                column: "split".into(),
            },
            false,
        )
        .unwrap();
        assert_eq!(ds.feature_names, vec!["x"]);
        assert_eq!(ds.train.y, vec![2.0, 5.0]);
        assert_eq!(ds.val.y, vec![3.0]);
    }

    #[test]
    fn standardization_round_trip_and_moments() {
        let spec = SplitSpec::Fractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 9,
        };
        let raw = parse_csv(
            table(50).as_bytes(),
            &CsvSchema::target("target"),
            &spec,
            false,
        )
        .unwrap();
        let st = Standardization::fit(&raw.train, true);
        let z = st.apply(&raw.train);
        for j in 0..z.n_features() {
            let col: Vec<f64> = z.x.iter_rows().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        for sp in Split::ALL {
            let back = st.invert(&st.apply(raw.split(sp)));
            for (a, b) in back.x.as_slice().iter().zip(raw.split(sp).x.as_slice()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_feature_gets_floor() {
        let text = "c,y\n1,1\n1,2\n1,3\n";
        let spec = SplitSpec::Fractions {
            train: 1.0,
            val: 0.0,
            test: 0.0,
            seed: 0,
        };
        let ds = parse_csv(text.as_bytes(), &CsvSchema::target("y"), &spec, true).unwrap();
        assert_eq!(ds.stats.as_ref().unwrap().x_std, vec![STD_FLOOR]);
        assert!(ds.train.x.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn split_csv_round_trips() {
        let s = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let text = s.dataset.split_csv(Split::Train);
        let back = parse_csv(
            text.as_bytes(),
            &CsvSchema::target("y"),
            &SplitSpec::Fractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
                seed: 0,
            },
            false,
        )
        .unwrap();
        let mut sorted_a: Vec<f64> = back.train.y.clone();
        let mut sorted_b = s.dataset.train.y.clone();
        sorted_a.sort_by(f64::total_cmp);
        sorted_b.sort_by(f64::total_cmp);
        assert_eq!(sorted_a, sorted_b);
    }
}
