//! Spread of generated classifier weights and rank/linear correlations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypernet::GeneratedClassifier;

/// Mean over weight coordinates of the per-coordinate population standard
/// deviation across examples. `W` and `b` are both included.
pub fn weight_diversity(classifiers: &[GeneratedClassifier]) -> Result<f64> {
    if classifiers.len() < 2 {
        return Err(Error::Data(format!(
            "weight diversity needs at least two classifiers, got {}",
            classifiers.len()
        )));
    }
    let shape = (classifiers[0].weights.shape(), classifiers[0].bias.len());
    if classifiers.iter().any(|c| (c.weights.shape(), c.bias.len()) != shape) {
        return Err(Error::Data("classifiers differ in shape".into()));
    }
    let flat: Vec<Vec<f64>> = classifiers.iter().map(GeneratedClassifier::flatten).collect();
    let width = flat[0].len();
    let n = flat.len() as f64;
    // Welford per coordinate
    let mut total_sd = 0.0;
    for j in 0..width {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, row) in flat.iter().enumerate() {
            let x = row[j];
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        total_sd += (m2 / n).max(0.0).sqrt();
    }
    Ok(total_sd / width as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `None` when either coordinate has zero variance.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

pub fn correlations(pairs: &[(f64, f64)]) -> Result<Correlation> {
    if pairs.len() < 3 {
        return Err(Error::Data(format!(
            "correlations need at least 3 points, got {}",
            pairs.len()
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(Correlation {
        pearson: pearson(&xs, &ys),
        spearman: spearman(&xs, &ys),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::rng::Rng;

    fn cls(w: Vec<f64>, b: Vec<f64>) -> GeneratedClassifier {
        let c = b.len();
        let d = w.len() / c;
        GeneratedClassifier {
            weights: Matrix::from_vec(c, d, w),
            bias: b,
            provenance: String::new(),
        }
    }

    /// Mean, then mean squared deviation, in two separate passes.
    fn two_pass(classifiers: &[GeneratedClassifier]) -> f64 {
        let flat: Vec<Vec<f64>> = classifiers.iter().map(|c| c.flatten()).collect();
        let n = flat.len() as f64;
        let width = flat[0].len();
        let mut acc = 0.0;
        for j in 0..width {
            let mean = flat.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = flat.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            acc += var.sqrt();
        }
        acc / width as f64
    }

    #[test]
    fn identical_classifiers_have_zero_diversity() {
        let a = cls(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]);
        assert_eq!(weight_diversity(&[a.clone(), a.clone(), a]).unwrap(), 0.0);
    }

    #[test]
    fn unit_shift_gives_half() {
        let a = cls(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]);
        let b = cls(vec![2.0, 3.0, 4.0, 5.0], vec![1.5, 0.5]);
        assert!((weight_diversity(&[a, b]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_two_pass_oracle() {
        let mut rng = Rng::new(17);
        let classifiers: Vec<GeneratedClassifier> = (0..25)
            .map(|_| {
                cls(
                    (0..12).map(|_| rng.uniform(-3.0, 3.0)).collect(),
                    (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                )
            })
            .collect();
        let got = weight_diversity(&classifiers).unwrap();
        assert!((got - two_pass(&classifiers)).abs() < 1e-12);
    }

    #[test]
    fn diversity_translation_invariant_and_linear() {
        let mut rng = Rng::new(2);
        let base: Vec<GeneratedClassifier> = (0..6)
            .map(|_| cls((0..4).map(|_| rng.normal()).collect(), vec![rng.normal(), rng.normal()]))
            .collect();
        let d0 = weight_diversity(&base).unwrap();
        let shifted: Vec<GeneratedClassifier> = base
            .iter()
            .map(|c| {
                cls(
                    c.weights.data().iter().map(|x| x + 7.0).collect(),
                    c.bias.iter().map(|x| x - 3.0).collect(),
                )
            })
            .collect();
        assert!((weight_diversity(&shifted).unwrap() - d0).abs() < 1e-12);
        let scaled: Vec<GeneratedClassifier> = base
            .iter()
            .map(|c| {
                cls(
                    c.weights.data().iter().map(|x| -2.5 * x).collect(),
                    c.bias.iter().map(|x| -2.5 * x).collect(),
                )
            })
            .collect();
        assert!((weight_diversity(&scaled).unwrap() - 2.5 * d0).abs() < 1e-12);
    }

    #[test]
    fn diversity_needs_two() {
        assert!(weight_diversity(&[cls(vec![1.0, 2.0], vec![0.0, 0.0])]).is_err());
        let a = cls(vec![1.0, 2.0], vec![0.0, 0.0]);
        let b = cls(vec![1.0, 2.0, 3.0], vec![0.0]);
        assert!(weight_diversity(&[a, b]).is_err());
    }

    #[test]
    fn hand_correlations() {
        let c = correlations(&[(1.0, 2.0), (2.0, 1.0), (3.0, 3.0)]).unwrap();
        assert!((c.spearman.unwrap() - 0.5).abs() < 1e-15);
        let c = correlations(&[(1.0, 1.0), (2.0, 4.0), (3.0, 9.0), (4.0, 16.0)]).unwrap();
        assert_eq!(c.spearman, Some(1.0));
        assert!(c.pearson.unwrap() > 0.9);
        let c = correlations(&[(1.0, 5.0), (2.0, 3.0), (3.0, 2.0), (4.0, -8.0)]).unwrap();
        assert_eq!(c.spearman, Some(-1.0));
        assert!(c.pearson.unwrap() < 0.0);
    }

    #[test]
    fn degenerate_correlations() {
        let c = correlations(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).unwrap();
        assert_eq!(c.pearson, None);
        assert_eq!(c.spearman, None);
        assert!(correlations(&[(1.0, 2.0), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }
}
