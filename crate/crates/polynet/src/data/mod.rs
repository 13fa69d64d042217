//! Dataset ingestion and synthetic generators.
//!
//! A [`Dataset`] is a pair of row-aligned tensors: features `(n, d)` and
//! labels `(n, o)`: one-hot rows for classification, real values for
//! regression. Loaders reject malformed input with positioned errors and
//! never return partial reads; generators are bit-deterministic per seed.

mod csv;
mod idx;

pub use csv::{load_csv, write_csv, CsvSchema, CsvTask};
pub use idx::{load_idx, load_mnist};

use crate::oracle::DensePoly;
use crate::{Error, Result, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    OneHot,
    Real,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Tensor,
    labels: Tensor,
    kind: LabelKind,
    split: String,
    provenance: String,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Tensor,
        kind: LabelKind,
        split: impl Into<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.rank() != 2 || labels.rank() != 2 {
            return Err(Error::shape(
                "Dataset::new",
                format!("features {:?}, labels {:?}", features.shape(), labels.shape()),
            ));
        }
        if features.rows() != labels.rows() {
            return Err(Error::shape(
                "Dataset::new",
                format!("{} feature rows vs {} label rows", features.rows(), labels.rows()),
            ));
        }
        if !features.all_finite() || !labels.all_finite() {
            return Err(Error::InvalidArgument("non-finite value in dataset".to_string()));
        }
        if kind == LabelKind::OneHot {
            for i in 0..labels.rows() {
                let sum: f64 = labels.row(i).iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "one-hot label row {i} sums to {sum}, want 1"
                    )));
                }
            }
        }
        Ok(Dataset {
            features,
            labels,
            kind,
            split: split.into(),
            provenance: provenance.into(),
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn label_kind(&self) -> LabelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.labels.cols()
    }

    pub fn split_tag(&self) -> &str {
        &self.split
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_split_tag(mut self, split: impl Into<String>) -> Self {
        self.split = split.into();
        self
    }

    /// Row subset by index.
    pub fn gather(&self, indices: &[usize], split: impl Into<String>) -> Result<Dataset> {
        Ok(Dataset {
            features: self.features.gather_rows(indices)?,
            labels: self.labels.gather_rows(indices)?,
            kind: self.kind,
            split: split.into(),
            provenance: self.provenance.clone(),
        })
    }

    /// Keep only one-hot rows whose argmax class is listed, re-encoding
    /// labels over the listed classes in order. For `classes = [0, 1]` on
    /// MNIST this yields the 0-vs-1 subset with 2-dim labels.
    pub fn filter_classes(&self, classes: &[usize]) -> Result<Dataset> {
        if self.kind != LabelKind::OneHot {
            return Err(Error::InvalidArgument("filter_classes needs one-hot labels".to_string()));
        }
        let arg = self.labels.argmax_rows()?;
        let keep: Vec<usize> = arg
            .iter()
            .enumerate()
            .filter(|(_, c)| classes.contains(c))
            .map(|(i, _)| i)
            .collect();
        let features = self.features.gather_rows(&keep)?;
        let mut labels = Tensor::zeros(&[keep.len(), classes.len()]);
        for (row, &orig) in keep.iter().enumerate() {
            let new_class = classes.iter().position(|&c| c == arg[orig]).unwrap();
            labels.data_mut()[row * classes.len() + new_class] = 1.0;
        }
        Dataset::new(
            features,
            labels,
            LabelKind::OneHot,
            self.split.clone(),
            format!("{} (classes {:?})", self.provenance, classes),
        )
    }
}

/// Seeded permutation split into train/val/test. Fractions must sum to 1;
/// the pieces are disjoint and exhaustive.
pub fn split(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = (ft * n as f64).round() as usize;
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    Ok((
        dataset.gather(&indices[..n_train], "train")?,
        dataset.gather(&indices[n_train..n_train + n_val], "val")?,
        dataset.gather(&indices[n_train + n_val..], "test")?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    /// Four corners of the unit square, label = parity of the corner bits,
    /// optional Gaussian jitter. Not linearly separable; degree 2 suffices.
    Xor { jitter: f64 },
    /// Two concentric circles with the given radii, optional radial jitter.
    Circles { radius0: f64, radius1: f64, jitter: f64 },
    /// Regression targets from a fixed dense polynomial plus optional
    /// Gaussian noise.
    PolynomialRegression { poly: DensePoly, noise: f64 },
}

/// Deterministic synthetic datasets for the desk-scale tasks.
pub fn make_synthetic(kind: &SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n > 0 samples".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    match kind {
        SyntheticKind::Xor { jitter } => {
            let corners = [(0.0, 0.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)];
            let mut features = Vec::with_capacity(n * 2);
            let mut labels = vec![0.0; n * 2];
            for i in 0..n {
                let (x, y, class) = corners[i % 4];
                features.push(x + jitter * normal(&mut rng));
                features.push(y + jitter * normal(&mut rng));
                labels[i * 2 + class] = 1.0;
            }
            Dataset::new(
                Tensor::new(vec![n, 2], features)?,
                Tensor::new(vec![n, 2], labels)?,
                LabelKind::OneHot,
                "full",
                format!("synthetic xor (n={n}, jitter={jitter}, seed={seed})"),
            )
        }
        SyntheticKind::Circles { radius0, radius1, jitter } => {
            let mut features = Vec::with_capacity(n * 2);
            let mut labels = vec![0.0; n * 2];
            for i in 0..n {
                let class = i % 2;
                let radius = if class == 0 { *radius0 } else { *radius1 } + jitter * normal(&mut rng);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                features.push(radius * angle.cos());
                features.push(radius * angle.sin());
                labels[i * 2 + class] = 1.0;
            }
            Dataset::new(
                Tensor::new(vec![n, 2], features)?,
                Tensor::new(vec![n, 2], labels)?,
                LabelKind::OneHot,
                "full",
                format!("synthetic circles (n={n}, radii=({radius0}, {radius1}), jitter={jitter}, seed={seed})"),
            )
        }
        SyntheticKind::PolynomialRegression { poly, noise } => {
            let d = poly.input_dim();
            let o = poly.output_dim();
            let mut features = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n * o);
            for _ in 0..n {
                let z = Tensor::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
                let mut y = poly.eval(&z)?;
                if *noise > 0.0 {
                    for v in y.data_mut() {
                        *v += noise * normal(&mut rng);
                    }
                }
                features.extend_from_slice(z.data());
                labels.extend_from_slice(y.data());
            }
            Dataset::new(
                Tensor::new(vec![n, d], features)?,
                Tensor::new(vec![n, o], labels)?,
                LabelKind::Real,
                "full",
                format!(
                    "synthetic polynomial regression (n={n}, degree={}, noise={noise}, seed={seed})",
                    poly.order()
                ),
            )
        }
    }
}

/// The fixed quadratic `y = 0.5 + 3 z1^2 + 2 z1 z2 - z2` used by the
/// regression recipe and its tests.
pub fn quadratic_target_poly() -> DensePoly {
    // Monomial order over d = 2, degree <= 2: 1, z1, z2, z1^2, z1*z2, z2^2.
    let coeffs = Tensor::new(vec![1, 6], vec![0.5, 0.0, -1.0, 3.0, 2.0, 0.0]).unwrap();
    DensePoly::new(2, 1, 2, coeffs).unwrap()
}

/// A single-output dense polynomial with seeded coefficients in [-2, 2],
/// the target family for `polynomial-regression` datasets.
pub fn seeded_target_poly(dim: usize, degree: usize, seed: u64) -> Result<DensePoly> {
    let basis = crate::oracle::monomial_count(dim, degree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00D0_17E5);
    let coeffs: Vec<f64> = (0..basis).map(|_| rng.gen_range(-2.0..2.0)).collect();
    DensePoly::new(dim, 1, degree, Tensor::new(vec![1, basis], coeffs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_without_jitter_is_four_corners() {
        let ds = make_synthetic(&SyntheticKind::Xor { jitter: 0.0 }, 16, 0).unwrap();
        assert_eq!(ds.len(), 16);
        let mut distinct: Vec<Vec<u64>> = Vec::new();
        for i in 0..ds.len() {
            let bits: Vec<u64> = ds.features().row(i).iter().map(|v| v.to_bits()).collect();
            if !distinct.contains(&bits) {
                distinct.push(bits);
            }
        }
        assert_eq!(distinct.len(), 4);
        // Parity labels: corners (0,0) and (1,1) are class 0.
        for i in 0..ds.len() {
            let row = ds.features().row(i);
            let parity = ((row[0] + row[1]) as i64) % 2;
            let class = ds.labels().row(i).iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(class as i64, parity);
        }
    }

    #[test]
    fn circles_norms_match_radii() {
        let ds = make_synthetic(
            &SyntheticKind::Circles { radius0: 1.0, radius1: 2.0, jitter: 0.0 },
            64,
            3,
        )
        .unwrap();
        for i in 0..ds.len() {
            let row = ds.features().row(i);
            let norm = (row[0] * row[0] + row[1] * row[1]).sqrt();
            let class = ds.labels().row(i).iter().position(|&v| v == 1.0).unwrap();
            let expect = if class == 0 { 1.0 } else { 2.0 };
            assert!((norm - expect).abs() < 1e-9, "row {i}: norm {norm}");
        }
    }

    #[test]
    fn regression_targets_come_from_the_polynomial() {
        let poly = quadratic_target_poly();
        let ds = make_synthetic(
            &SyntheticKind::PolynomialRegression { poly: poly.clone(), noise: 0.0 },
            256,
            9,
        )
        .unwrap();
        for i in 0..ds.len() {
            let z = Tensor::from_vec(ds.features().row(i).to_vec());
            let y = poly.eval(&z).unwrap();
            assert!((y.data()[0] - ds.labels().row(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_deterministic_per_seed() {
        for kind in [
            SyntheticKind::Xor { jitter: 0.1 },
            SyntheticKind::Circles { radius0: 1.0, radius1: 2.0, jitter: 0.05 },
        ] {
            let a = make_synthetic(&kind, 32, 7).unwrap();
            let b = make_synthetic(&kind, 32, 7).unwrap();
            assert!(a.features().bits_eq(b.features()));
            assert!(a.labels().bits_eq(b.labels()));
        }
    }

    #[test]
    fn split_all_train() {
        let ds = make_synthetic(&SyntheticKind::Xor { jitter: 0.0 }, 12, 1).unwrap();
        let (train, val, test) = split(&ds, (1.0, 0.0, 0.0), 5).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(val.len(), 0);
        assert_eq!(test.len(), 0);
    }

    #[test]
    fn split_deterministic_and_exhaustive() {
        let ds = make_synthetic(
            &SyntheticKind::Circles { radius0: 1.0, radius1: 2.0, jitter: 0.1 },
            101,
            2,
        )
        .unwrap();
        let (tr1, va1, te1) = split(&ds, (0.6, 0.2, 0.2), 11).unwrap();
        let (tr2, _, _) = split(&ds, (0.6, 0.2, 0.2), 11).unwrap();
        assert!(tr1.features().bits_eq(tr2.features()));
        assert_eq!(tr1.len() + va1.len() + te1.len(), ds.len());

        // Union of the splits is the original multiset of rows.
        let mut original: Vec<Vec<u64>> = (0..ds.len())
            .map(|i| ds.features().row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut recombined: Vec<Vec<u64>> = Vec::new();
        for part in [&tr1, &va1, &te1] {
            for i in 0..part.len() {
                recombined.push(part.features().row(i).iter().map(|v| v.to_bits()).collect());
            }
        }
        original.sort();
        recombined.sort();
        assert_eq!(original, recombined);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = make_synthetic(&SyntheticKind::Xor { jitter: 0.0 }, 8, 1).unwrap();
        assert!(split(&ds, (0.5, 0.2, 0.2), 1).is_err());
    }

    #[test]
    fn one_hot_validation() {
        let features = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let labels = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.5, 0.4]).unwrap();
        assert!(Dataset::new(features, labels, LabelKind::OneHot, "t", "test").is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let features = Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap();
        let labels = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        assert!(Dataset::new(features, labels, LabelKind::Real, "t", "test").is_err());
    }

    #[test]
    fn filter_classes_remaps() {
        let features = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let labels = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let ds = Dataset::new(features, labels, LabelKind::OneHot, "t", "test").unwrap();
        let sub = ds.filter_classes(&[0, 2]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.labels().row(0), &[1.0, 0.0]); // class 0 stays first
        assert_eq!(sub.labels().row(1), &[0.0, 1.0]); // class 2 becomes second
        assert_eq!(sub.features().data(), &[1.0, 2.0]);
    }
}
