//! JSON fixture formats for matrices and QMP problems.
//!
//! A matrix is `{"rows": r, "cols": c, "re": [...], "im": [...]}` with both arrays
//! row-major of length `r * c`. `im` may be omitted for real data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QmpError, Result};
use crate::matrix::{CMatrix, C64};
use crate::model::{QMFunction, QMPProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFixture {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl From<&CMatrix> for MatrixFixture {
    fn from(m: &CMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            re: m.iter().map(|z| z.re).collect(),
            im: m.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<&MatrixFixture> for CMatrix {
    type Error = QmpError;

    fn try_from(f: &MatrixFixture) -> Result<Self> {
        let len = f.rows * f.cols;
        if f.re.len() != len {
            return Err(QmpError::Parse(format!(
                "'re' has {} entries, expected {len}",
                f.re.len()
            )));
        }
        let im = if f.im.is_empty() {
            vec![0.0; len]
        } else {
            f.im.clone()
        };
        if im.len() != len {
            return Err(QmpError::Parse(format!(
                "'im' has {} entries, expected {len}",
                im.len()
            )));
        }
        let data: Vec<C64> =
            f.re.iter()
                .zip(&im)
                .map(|(&a, &b)| C64::new(a, b))
                .collect();
        let m = CMatrix::from_row_major(f.rows, f.cols, data)?;
        if !m.is_finite() {
            return Err(QmpError::Parse("matrix has non-finite entries".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionFixture {
    pub a: MatrixFixture,
    pub b: MatrixFixture,
    pub c: f64,
    pub d: MatrixFixture,
}

impl From<&QMFunction> for FunctionFixture {
    fn from(f: &QMFunction) -> Self {
        Self {
            a: (&f.a).into(),
            b: (&f.b).into(),
            c: f.c,
            d: (&f.d).into(),
        }
    }
}

impl TryFrom<&FunctionFixture> for QMFunction {
    type Error = QmpError;

    fn try_from(f: &FunctionFixture) -> Result<Self> {
        Ok(QMFunction {
            a: (&f.a).try_into()?,
            b: (&f.b).try_into()?,
            c: f.c,
            d: (&f.d).try_into()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFixture {
    pub n: usize,
    pub r: usize,
    pub objective: FunctionFixture,
    #[serde(default)]
    pub inequalities: Vec<FunctionFixture>,
    #[serde(default)]
    pub equalities: Vec<FunctionFixture>,
}

impl From<&QMPProblem> for ProblemFixture {
    fn from(p: &QMPProblem) -> Self {
        Self {
            n: p.n,
            r: p.r,
            objective: (&p.objective).into(),
            inequalities: p.inequalities.iter().map(Into::into).collect(),
            equalities: p.equalities.iter().map(Into::into).collect(),
        }
    }
}

impl TryFrom<&ProblemFixture> for QMPProblem {
    type Error = QmpError;

    fn try_from(f: &ProblemFixture) -> Result<Self> {
        let conv = |v: &[FunctionFixture]| -> Result<Vec<QMFunction>> {
            v.iter().map(QMFunction::try_from).collect()
        };
        Ok(QMPProblem {
            n: f.n,
            r: f.r,
            objective: (&f.objective).try_into()?,
            inequalities: conv(&f.inequalities)?,
            equalities: conv(&f.equalities)?,
        })
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| QmpError::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| QmpError::Io(format!("{}: {e}", path.display())))
}

pub fn read_problem(path: &Path) -> Result<QMPProblem> {
    let f: ProblemFixture = read_json(path)?;
    QMPProblem::try_from(&f)
}

pub fn read_matrix(path: &Path) -> Result<CMatrix> {
    let f: MatrixFixture = read_json(path)?;
    CMatrix::try_from(&f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_real_matrix_without_im() {
        let f: MatrixFixture =
            serde_json::from_str(r#"{"rows":2,"cols":1,"re":[1.5,-2]}"#).unwrap();
        let m = CMatrix::try_from(&f).unwrap();
        assert_eq!(m[(1, 0)], C64::new(-2.0, 0.0));
    }

    #[test]
    fn rejects_wrong_length() {
        let f: MatrixFixture = serde_json::from_str(r#"{"rows":2,"cols":2,"re":[1,2,3]}"#).unwrap();
        assert!(CMatrix::try_from(&f).is_err());
        let f: MatrixFixture =
            serde_json::from_str(r#"{"rows":1,"cols":2,"re":[1,2],"im":[0]}"#).unwrap();
        assert!(CMatrix::try_from(&f).is_err());
    }

    #[test]
    fn problem_survives_json() {
        let f = QMFunction::type2(
            CMatrix::identity(2),
            CMatrix::from_fn(2, 1, |i, _| C64::new(i as f64, 0.5)),
            -1.25,
        );
        let p = QMPProblem::new(f.clone(), vec![f.clone()], vec![]).unwrap();
        let text = serde_json::to_string(&ProblemFixture::from(&p)).unwrap();
        let back: ProblemFixture = serde_json::from_str(&text).unwrap();
        assert_eq!(QMPProblem::try_from(&back).unwrap(), p);
    }
}
