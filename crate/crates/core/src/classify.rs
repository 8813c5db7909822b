//! Multinomial logistic regression on flattened operators, plus weight maps.
//!
//! Features are `F(K)`, the row-major flattening of `K`. The objective is the
//! mean cross-entropy plus `|W|^2 / (2 * reg_weight)`; biases are not
//! penalised. Optimisation is full-batch gradient descent with Armijo
//! backtracking from a zero start, so a fit is deterministic.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::{save_heatmap_pgm, save_tensor, Tensor};
use crate::error::{Error, Result};
use crate::koopman::KoopmanOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    /// Inverse penalty strength.
    pub reg_weight: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls to this value.
    pub tol: f64,
    /// Independent sigmoid per class instead of a softmax.
    pub one_vs_rest: bool,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            reg_weight: 200.0,
            max_iter: 2000,
            tol: 1e-6,
            one_vs_rest: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub classes: Vec<u32>,
    /// One row per class, `w * w` columns.
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub w: usize,
    pub config: LogRegConfig,
    /// Objective value before each accepted step and at the end.
    pub loss_history: Vec<f64>,
    fitted: bool,
}

impl ClassifierModel {
    /// An all-zero, unfitted model.
    pub fn zeros(classes: Vec<u32>, w: usize, config: LogRegConfig) -> Self {
        let c = classes.len();
        Self {
            classes,
            weights: DMatrix::zeros(c, w * w),
            biases: DVector::zeros(c),
            w,
            config,
            loss_history: Vec::new(),
            fitted: false,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn iterations(&self) -> usize {
        self.loss_history.len().saturating_sub(1)
    }

    /// Raw class scores `W F(K) + b`.
    pub fn scores(&self, k: &KoopmanOperator) -> Result<DVector<f64>> {
        if k.w() != self.w {
            return Err(Error::DimMismatch(format!(
                "{}x{} operator for a {}x{} model",
                k.w(),
                k.w(),
                self.w,
                self.w
            )));
        }
        let x = DVector::from_vec(k.flatten());
        Ok(&self.weights * x + &self.biases)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: u32,
    pub scores: Vec<f64>,
    /// Softmax of the scores, or normalised sigmoids for one-vs-rest.
    pub probabilities: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn predict(model: &ClassifierModel, k: &KoopmanOperator) -> Result<Prediction> {
    let z = model.scores(k)?;
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    let probabilities = if model.config.one_vs_rest {
        let p: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
        let s: f64 = p.iter().sum();
        p.into_iter().map(|v| v / s).collect()
    } else {
        softmax(z.as_slice())
    };
    Ok(Prediction {
        label: model.classes[best],
        scores: z.as_slice().to_vec(),
        probabilities,
    })
}

struct Problem {
    x: DMatrix<f64>,
    /// One-hot targets, classes by samples.
    y: DMatrix<f64>,
    penalty: f64,
    one_vs_rest: bool,
}

impl Problem {
    fn objective(
        &self,
        w: &DMatrix<f64>,
        b: &DVector<f64>,
        want_grad: bool,
    ) -> (f64, DMatrix<f64>, DVector<f64>) {
        let n = self.x.ncols() as f64;
        let mut z = w * &self.x;
        for mut col in z.column_iter_mut() {
            col += b;
        }
        let mut loss = 0.0;
        // residual = dL/dz per sample, before the 1/n
        let mut r = DMatrix::zeros(z.nrows(), z.ncols());
        for j in 0..z.ncols() {
            let col = z.column(j);
            if self.one_vs_rest {
                for c in 0..col.len() {
                    let y = self.y[(c, j)];
                    loss += softplus(col[c]) - y * col[c];
                    r[(c, j)] = sigmoid(col[c]) - y;
                }
            } else {
                let m = col.max();
                let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                for c in 0..col.len() {
                    let y = self.y[(c, j)];
                    loss -= y * (col[c] - lse);
                    r[(c, j)] = (col[c] - lse).exp() - y;
                }
            }
        }
        loss = loss / n + 0.5 * self.penalty * w.norm_squared();
        if !want_grad {
            return (loss, DMatrix::zeros(0, 0), DVector::zeros(0));
        }
        let gw = &r * self.x.transpose() / n + w * self.penalty;
        let gb = r.column_sum() / n;
        (loss, gw, gb)
    }
}

/// Fits the classifier; `samples` pair an operator with its label.
pub fn fit_logreg(
    samples: &[(KoopmanOperator, u32)],
    cfg: &LogRegConfig,
) -> Result<ClassifierModel> {
    let first = samples.first().ok_or(Error::EmptyInput)?;
    if !(cfg.reg_weight > 0.0 && cfg.reg_weight.is_finite()) {
        return Err(Error::BadSpec(format!(
            "regularization weight {} must be positive",
            cfg.reg_weight
        )));
    }
    let w = first.0.w();
    let mut classes: Vec<u32> = samples.iter().map(|s| s.1).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut x = DMatrix::zeros(w * w, samples.len());
    let mut y = DMatrix::zeros(classes.len(), samples.len());
    for (j, (k, label)) in samples.iter().enumerate() {
        if k.w() != w {
            return Err(Error::DimMismatch(format!(
                "sample {j} is {}x{}, expected {w}x{w}",
                k.w(),
                k.w()
            )));
        }
        x.set_column(j, &DVector::from_vec(k.flatten()));
        let c = classes.binary_search(label).expect("label collected above");
        y[(c, j)] = 1.0;
    }
    let problem = Problem {
        x,
        y,
        penalty: 1.0 / cfg.reg_weight,
        one_vs_rest: cfg.one_vs_rest,
    };

    let mut model = ClassifierModel::zeros(classes, w, *cfg);
    let (mut loss, mut gw, mut gb) = problem.objective(&model.weights, &model.biases, true);
    let mut step = 1.0;
    model.loss_history.push(loss);
    for _ in 0..cfg.max_iter {
        let g2 = gw.norm_squared() + gb.norm_squared();
        if g2.sqrt() <= cfg.tol {
            break;
        }
        // Armijo backtracking, re-expanding the step after each success.
        step *= 2.0;
        let mut accepted = false;
        while step > 1e-20 {
            let w_try = &model.weights - &gw * step;
            let b_try = &model.biases - &gb * step;
            let (l_try, _, _) = problem.objective(&w_try, &b_try, false);
            if l_try <= loss - 1e-4 * step * g2 {
                model.weights = w_try;
                model.biases = b_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        (loss, gw, gb) = problem.objective(&model.weights, &model.biases, true);
        model.loss_history.push(loss);
    }
    model.fitted = true;
    Ok(model)
}

/// Anything that maps an operator to a label; lets other classifiers share the reporting code.
pub trait OperatorClassifier {
    fn classify(&self, k: &KoopmanOperator) -> Result<u32>;
}

impl OperatorClassifier for ClassifierModel {
    fn classify(&self, k: &KoopmanOperator) -> Result<u32> {
        Ok(predict(self, k)?.label)
    }
}

pub fn rank1_accuracy<C: OperatorClassifier + ?Sized>(
    model: &C,
    samples: &[(KoopmanOperator, u32)],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0;
    for (k, label) in samples {
        if model.classify(k)? == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// `|C|` per class, reshaped row-major to `w x w`.
pub fn export_weight_maps(model: &ClassifierModel) -> Result<Vec<(u32, DMatrix<f64>)>> {
    if !model.fitted {
        return Err(Error::UnfittedModel);
    }
    Ok(model
        .classes
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let row: Vec<f64> = model.weights.row(c).iter().map(|v| v.abs()).collect();
            (*label, DMatrix::from_row_slice(model.w, model.w, &row))
        })
        .collect())
}

/// Writes `class_<label>.pgm` and `class_<label>.ika1` for every class.
pub fn save_weight_maps(model: &ClassifierModel, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (label, map) in export_weight_maps(model)? {
        let pgm = dir.join(format!("class_{label}.pgm"));
        save_heatmap_pgm(&map, &pgm)?;
        let ika = dir.join(format!("class_{label}.ika1"));
        save_tensor(&Tensor::from_matrix(&map)?, &ika)?;
        written.push(pgm);
        written.push(ika);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
struct ReportRow {
    sample_id: String,
    #[serde(rename = "true")]
    truth: u32,
    predicted: u32,
    top1_class: Option<u32>,
    top1_score: Option<f64>,
    top2_class: Option<u32>,
    top2_score: Option<f64>,
    top3_class: Option<u32>,
    top3_score: Option<f64>,
}

/// Per-sample report with the three most probable classes.
pub fn write_report(
    model: &ClassifierModel,
    samples: &[(String, KoopmanOperator, u32)],
    path: impl AsRef<Path>,
) -> Result<f64> {
    let mut out = csv::Writer::from_path(path)?;
    let mut hits = 0;
    for (id, k, truth) in samples {
        let p = predict(model, k)?;
        let mut order: Vec<usize> = (0..p.probabilities.len()).collect();
        order.sort_by(|a, b| {
            p.probabilities[*b]
                .total_cmp(&p.probabilities[*a])
                .then(a.cmp(b))
        });
        let top = |i: usize| {
            order
                .get(i)
                .map(|&c| (model.classes[c], p.probabilities[c]))
        };
        if p.label == *truth {
            hits += 1;
        }
        out.serialize(ReportRow {
            sample_id: id.clone(),
            truth: *truth,
            predicted: p.label,
            top1_class: top(0).map(|t| t.0),
            top1_score: top(0).map(|t| t.1),
            top2_class: top(1).map(|t| t.0),
            top2_score: top(1).map(|t| t.1),
            top3_class: top(2).map(|t| t.0),
            top3_score: top(2).map(|t| t.1),
        })?;
    }
    out.flush()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(hits as f64 / samples.len() as f64)
}
