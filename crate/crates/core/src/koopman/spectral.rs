//! Eigenvalues of `K` and real fractional powers `K^r`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Eigenvalues sorted by descending magnitude, ties by ascending angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub magnitudes: Vec<f64>,
    /// Principal angles in `(-pi, pi]`.
    pub angles: Vec<f64>,
}

fn principal_angle(z: Complex64) -> f64 {
    let a = z.arg();
    if a <= -PI {
        PI
    } else {
        a
    }
}

fn eigenvalues(k: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !k.is_square() {
        return Err(Error::DimMismatch(format!(
            "spectrum of a {:?} matrix",
            k.shape()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite operator".into()));
    }
    let schur = nalgebra::Schur::try_new(k.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectrum(k: &DMatrix<f64>) -> Result<Spectrum> {
    let mut vals: Vec<(f64, f64, Complex64)> = eigenvalues(k)?
        .into_iter()
        .map(|z| (z.norm(), principal_angle(z), z))
        .collect();
    vals.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Conjugate pairs come out of the solver with magnitudes a few ulps apart;
    // runs of equal magnitude are ordered by angle.
    let tol = 1e-10 * vals.first().map_or(0.0, |v| v.0).max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < vals.len() {
        let mut end = start + 1;
        while end < vals.len() && vals[end - 1].0 - vals[end].0 <= tol {
            end += 1;
        }
        vals[start..end].sort_by(|a, b| a.1.total_cmp(&b.1));
        start = end;
    }
    Ok(Spectrum {
        magnitudes: vals.iter().map(|v| v.0).collect(),
        angles: vals.iter().map(|v| v.1).collect(),
        eigenvalues: vals.into_iter().map(|v| v.2).collect(),
    })
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    re: f64,
    im: f64,
    magnitude: f64,
    angle: f64,
}

pub fn write_spectrum_csv(s: &Spectrum, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, z) in s.eigenvalues.iter().enumerate() {
        w.serialize(SpectrumRow {
            index: i,
            re: z.re,
            im: z.im,
            magnitude: s.magnitudes[i],
            angle: s.angles[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

const CLUSTER_TOL: f64 = 1e-6;
const NULL_TOL: f64 = 1e-5;
const MAX_CONDITION: f64 = 1e12;

/// Principal real power `K^r = V diag(lambda^r) V^-1`.
pub fn fractional_power(k: &DMatrix<f64>, r: f64) -> Result<DMatrix<f64>> {
    let w = k.nrows();
    let lambdas = eigenvalues(k)?;
    let scale = k.norm().max(f64::MIN_POSITIVE);
    if let Some(z) = lambdas
        .iter()
        .find(|z| z.im.abs() <= 1e-12 * scale && z.re <= 0.0)
    {
        return Err(Error::BranchCut { re: z.re, im: z.im });
    }

    // Group numerically equal eigenvalues and take each group's eigenvectors
    // from the null space of K - lambda I.
    let kc: DMatrix<Complex64> = k.map(|v| Complex64::new(v, 0.0));
    let mut used = vec![false; w];
    let mut columns: Vec<nalgebra::DVector<Complex64>> = Vec::with_capacity(w);
    for i in 0..w {
        if used[i] {
            continue;
        }
        let members: Vec<usize> = (i..w)
            .filter(|&j| !used[j] && (lambdas[j] - lambdas[i]).norm() <= CLUSTER_TOL * scale)
            .collect();
        let center = members.iter().map(|&j| lambdas[j]).sum::<Complex64>() / members.len() as f64;
        let shifted = &kc - DMatrix::<Complex64>::identity(w, w) * center;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::NumericalFailure("SVD without vectors".into()))?;
        let m = members.len();
        if svd.singular_values[w - m] > NULL_TOL * scale {
            return Err(Error::NotDiagonalizable {
                condition: f64::INFINITY,
            });
        }
        for row in w - m..w {
            columns.push(v_t.row(row).adjoint());
        }
        for j in members {
            used[j] = true;
        }
    }
    let v = DMatrix::from_columns(&columns);
    let sv = v.clone().svd(false, false).singular_values;
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::NotDiagonalizable { condition });
    }
    let v_inv = v.clone().try_inverse().ok_or(Error::NotDiagonalizable {
        condition: f64::INFINITY,
    })?;
    // Eigenvalues matched to the basis actually used.
    let d = &v_inv * &kc * &v;
    let powered = DMatrix::from_diagonal(&d.diagonal().map(|z| z.powf(r)));
    let out = v * powered * v_inv;
    let residue = out.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > 1e-6 * scale {
        return Err(Error::NumericalFailure(format!(
            "imaginary residue {residue:e} in K^{r}"
        )));
    }
    Ok(out.map(|z| z.re))
}
