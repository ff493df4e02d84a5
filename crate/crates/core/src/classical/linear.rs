//! Multinomial naive Bayes and the two linear discriminative models.

use serde::{Deserialize, Serialize};

use super::tfidf::SparseVector;
use super::ClassicalError;
use crate::corpus::Label;
use crate::scalar::Real;

fn sign<T: Real>(label: Label) -> T {
    match label {
        Label::Included => T::one(),
        Label::Excluded => -T::one(),
    }
}

fn check_dims<T: Real>(x: &[SparseVector<T>], labels: &[Label]) -> Result<usize, ClassicalError> {
    if x.len() != labels.len() {
        return Err(ClassicalError::LengthMismatch {
            vectors: x.len(),
            labels: labels.len(),
        });
    }
    let dim = x.first().ok_or(ClassicalError::TooFewExamples(0))?.dim;
    if let Some(bad) = x.iter().find(|v| v.dim != dim) {
        return Err(ClassicalError::DimensionMismatch {
            expected: dim,
            found: bad.dim,
        });
    }
    Ok(dim)
}

pub(crate) fn require_both_classes(labels: &[Label]) -> Result<(), ClassicalError> {
    if labels.len() < 2 {
        return Err(ClassicalError::TooFewExamples(labels.len()));
    }
    let included = labels.iter().filter(|l| **l == Label::Included).count();
    if included == 0 || included == labels.len() {
        return Err(ClassicalError::SingleClass);
    }
    Ok(())
}

/// Index 0 is Excluded, index 1 Included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes<T> {
    pub alpha: T,
    pub class_count: [usize; 2],
    pub class_log_prior: [T; 2],
    pub feature_log_prob: [Vec<T>; 2],
}

fn class_index(label: Label) -> usize {
    match label {
        Label::Excluded => 0,
        Label::Included => 1,
    }
}

impl<T: Real> NaiveBayes<T> {
    /// Laplace/Lidstone-smoothed multinomial model. A class absent from the
    /// training data gets the lowest finite log prior.
    pub fn fit(x: &[SparseVector<T>], labels: &[Label], alpha: T) -> Result<Self, ClassicalError> {
        let dim = check_dims(x, labels)?;
        let mut counts = [vec![T::zero(); dim], vec![T::zero(); dim]];
        let mut class_count = [0usize; 2];
        for (v, &l) in x.iter().zip(labels) {
            let c = class_index(l);
            class_count[c] += 1;
            for (i, val) in v.iter() {
                counts[c][i] = counts[c][i] + val;
            }
        }
        if class_count.contains(&0) {
            log::warn!("naive Bayes trained on a single class");
        }
        let n = T::of_usize(labels.len());
        let prior = |c: usize| {
            if class_count[c] == 0 {
                T::min_value()
            } else {
                (T::of_usize(class_count[c]) / n).ln()
            }
        };
        let log_prob = |row: &Vec<T>| {
            let total = row.iter().copied().sum::<T>() + alpha * T::of_usize(dim);
            row.iter().map(|&c| ((c + alpha) / total).ln()).collect::<Vec<T>>()
        };
        Ok(Self {
            alpha,
            class_count,
            class_log_prior: [prior(0), prior(1)],
            feature_log_prob: [log_prob(&counts[0]), log_prob(&counts[1])],
        })
    }

    /// Unnormalized joint log likelihood `[Excluded, Included]`.
    pub fn joint_log_likelihood(&self, x: &SparseVector<T>) -> [T; 2] {
        let jll = |c: usize| self.class_log_prior[c] + x.dot(&self.feature_log_prob[c]);
        [jll(0), jll(1)]
    }

    /// Posterior probability of Included.
    pub fn posterior_included(&self, x: &SparseVector<T>) -> T {
        let [e, i] = self.joint_log_likelihood(x);
        let m = e.max(i);
        let (pe, pi) = ((e - m).exp(), (i - m).exp());
        pi / (pe + pi)
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Label {
        let [e, i] = self.joint_log_likelihood(x);
        if i > e {
            Label::Included
        } else {
            Label::Excluded
        }
    }
}

/// `w·x + b`; positive scores are Included, zero is Excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> LinearModel<T> {
    pub fn decision(&self, x: &SparseVector<T>) -> T {
        x.dot(&self.weights) + self.bias
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Label {
        if self.decision(x) > T::zero() {
            Label::Included
        } else {
            Label::Excluded
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings<T> {
    /// Coefficient of `0.5 * ||w||^2`; per-sample losses are summed.
    pub lambda: T,
    pub tolerance: T,
    pub max_iterations: usize,
}

fn softplus<T: Real>(t: T) -> T {
    t.max(T::zero()) + (-t.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

struct Problem<'a, T> {
    x: &'a [SparseVector<T>],
    y: Vec<T>,
    dim: usize,
    lambda: T,
}

impl<T: Real> Problem<'_, T> {
    fn margins(&self, w: &[T], b: T) -> Vec<T> {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(xi, &yi)| yi * (xi.dot(w) + b))
            .collect()
    }

    fn penalty(&self, w: &[T]) -> T {
        T::of(0.5) * self.lambda * w.iter().map(|&v| v * v).sum::<T>()
    }

    fn logistic_loss(&self, w: &[T], b: T) -> T {
        self.penalty(w) + self.margins(w, b).into_iter().map(|m| softplus(-m)).sum::<T>()
    }

    fn logistic_grad(&self, w: &[T], b: T) -> (Vec<T>, T) {
        let mut g: Vec<T> = w.iter().map(|&v| self.lambda * v).collect();
        let mut gb = T::zero();
        for ((xi, &yi), m) in self.x.iter().zip(&self.y).zip(self.margins(w, b)) {
            let coef = -yi * sigmoid(-m);
            gb = gb + coef;
            for (j, v) in xi.iter() {
                g[j] = g[j] + coef * v;
            }
        }
        (g, gb)
    }

    fn hinge_loss(&self, w: &[T], b: T) -> T {
        self.penalty(w)
            + self
                .margins(w, b)
                .into_iter()
                .map(|m| (T::one() - m).max(T::zero()))
                .sum::<T>()
    }

    fn hinge_subgrad(&self, w: &[T], b: T) -> (Vec<T>, T) {
        let mut g: Vec<T> = w.iter().map(|&v| self.lambda * v).collect();
        let mut gb = T::zero();
        for ((xi, &yi), m) in self.x.iter().zip(&self.y).zip(self.margins(w, b)) {
            if m < T::one() {
                gb = gb - yi;
                for (j, v) in xi.iter() {
                    g[j] = g[j] - yi * v;
                }
            }
        }
        (g, gb)
    }
}

fn grad_norm<T: Real>(g: &[T], gb: T) -> T {
    (g.iter().map(|&v| v * v).sum::<T>() + gb * gb).sqrt()
}

fn problem<'a, T: Real>(
    x: &'a [SparseVector<T>],
    labels: &[Label],
    lambda: T,
) -> Result<Problem<'a, T>, ClassicalError> {
    let dim = check_dims(x, labels)?;
    require_both_classes(labels)?;
    Ok(Problem {
        x,
        y: labels.iter().map(|&l| sign(l)).collect(),
        dim,
        lambda,
    })
}

/// L2-regularized logistic regression by full-batch gradient descent with
/// a step-halving line search. Also returns the loss after every accepted step.
pub fn fit_logistic_traced<T: Real>(
    x: &[SparseVector<T>],
    labels: &[Label],
    settings: SolverSettings<T>,
) -> Result<(LinearModel<T>, Vec<T>), ClassicalError> {
    let p = problem(x, labels, settings.lambda)?;
    let mut w = vec![T::zero(); p.dim];
    let mut b = T::zero();
    let mut loss = p.logistic_loss(&w, b);
    let mut losses = vec![loss];
    let mut step = T::one();
    let armijo = T::of(1e-4);
    let min_step = T::of(1e-20);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let (g, gb) = p.logistic_grad(&w, b);
        let gn = grad_norm(&g, gb);
        if gn < settings.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while step > min_step {
            let cand: Vec<T> = w.iter().zip(&g).map(|(&wi, &gi)| wi - step * gi).collect();
            let cb = b - step * gb;
            let cl = p.logistic_loss(&cand, cb);
            if cl <= loss - armijo * step * gn * gn {
                w = cand;
                b = cb;
                loss = cl;
                accepted = true;
                break;
            }
            step = step / T::of(2.0);
        }
        if !accepted {
            break;
        }
        losses.push(loss);
        step = (step * T::of(2.0)).min(T::of(1e6));
    }
    Ok((
        LinearModel {
            weights: w,
            bias: b,
            iterations,
            converged,
        },
        losses,
    ))
}

pub fn fit_logistic<T: Real>(
    x: &[SparseVector<T>],
    labels: &[Label],
    settings: SolverSettings<T>,
) -> Result<LinearModel<T>, ClassicalError> {
    fit_logistic_traced(x, labels, settings).map(|(m, _)| m)
}

/// Hinge-loss linear SVM by deterministic sub-gradient descent with step
/// `1 / (lambda * t)`, keeping the iterate of lowest objective.
pub fn fit_linear_svm<T: Real>(
    x: &[SparseVector<T>],
    labels: &[Label],
    settings: SolverSettings<T>,
) -> Result<LinearModel<T>, ClassicalError> {
    let p = problem(x, labels, settings.lambda)?;
    let mut w = vec![T::zero(); p.dim];
    let mut b = T::zero();
    let mut best = (p.hinge_loss(&w, b), w.clone(), b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let (g, gb) = p.hinge_subgrad(&w, b);
        if grad_norm(&g, gb) < settings.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let eta = T::one() / (settings.lambda * T::of_usize(iterations));
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi = *wi - eta * *gi;
        }
        b = b - eta * gb;
        let loss = p.hinge_loss(&w, b);
        if loss < best.0 {
            best = (loss, w.clone(), b);
        }
    }
    Ok(LinearModel {
        weights: best.1,
        bias: best.2,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(d: &[f64]) -> SparseVector<f64> {
        SparseVector::from_dense(d)
    }

    #[test]
    fn nb_hand_arithmetic() {
        let x = vec![sv(&[2.0, 1.0, 0.0]), sv(&[0.0, 1.0, 3.0])];
        let y = vec![Label::Included, Label::Excluded];
        let nb = NaiveBayes::fit(&x, &y, 1.0).unwrap();
        // Included counts [2,1,0] + 1 over 3 + 3; Excluded [0,1,3] + 1 over 4 + 3.
        let inc = [3.0f64 / 6.0, 2.0 / 6.0, 1.0 / 6.0];
        let exc = [1.0f64 / 7.0, 2.0 / 7.0, 4.0 / 7.0];
        let doc = sv(&[1.0, 0.0, 1.0]);
        let li = 0.5f64 * inc[0] * inc[2];
        let le = 0.5f64 * exc[0] * exc[2];
        assert!((nb.posterior_included(&doc) - li / (li + le)).abs() < 1e-12);
    }

    #[test]
    fn nb_single_class_predicts_it() {
        let x = vec![sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let nb = NaiveBayes::fit(&x, &[Label::Included; 2], 1.0).unwrap();
        assert_eq!(nb.predict(&sv(&[0.5, 0.5])), Label::Included);
        assert!(serde_json::to_string(&nb).is_ok());
    }

    #[test]
    fn discriminative_models_need_both_classes() {
        let x = vec![sv(&[1.0]), sv(&[2.0])];
        let s = SolverSettings {
            lambda: 1.0,
            tolerance: 1e-6,
            max_iterations: 10,
        };
        assert_eq!(
            fit_logistic(&x, &[Label::Excluded; 2], s),
            Err(ClassicalError::SingleClass)
        );
        assert!(matches!(
            fit_linear_svm(&[sv(&[1.0]), sv(&[1.0, 2.0])], &[Label::Included, Label::Excluded], s),
            Err(ClassicalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logistic_converges_and_loss_never_rises() {
        let x = vec![sv(&[1.0, 0.0]), sv(&[0.9, 0.1]), sv(&[0.0, 1.0]), sv(&[0.2, 0.8])];
        let y = vec![Label::Included, Label::Included, Label::Excluded, Label::Excluded];
        let s = SolverSettings {
            lambda: 1.0,
            tolerance: 1e-6,
            max_iterations: 10_000,
        };
        let (m, losses) = fit_logistic_traced(&x, &y, s).unwrap();
        assert!(m.converged);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(m.predict(xi), *yi);
        }
    }
}
