//! Flat coordinates for symmetric matrices and dense operators on stacks of
//! them.
//!
//! A d×d symmetric matrix maps to `q = d(d+1)/2` coordinates: the diagonal
//! entries first, then the strict upper triangle row by row, scaled by √2.
//! The encoding is an isometry for the Frobenius inner product, so operators
//! written in these coordinates act on tangent vectors with the unweighted
//! inner product.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::FidelityStructure;
use crate::spd::{check_dims, symmetrize, SpdMatrix, SymMatrix};

/// Condition estimate above which an operator is treated as singular.
pub const MAX_CONDITION: f64 = 1e14;

/// Default relative shift used when inverting estimated covariance operators.
pub const DEFAULT_INVERSE_SHIFT: f64 = 1e-8;

/// `d(d+1)/2`.
pub fn tri_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

pub fn sym_to_flat(x: &SymMatrix) -> DVector<f64> {
    flat_of(x.matrix())
}

pub(crate) fn flat_of(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut v = DVector::zeros(tri_dim(d));
    for i in 0..d {
        v[i] = m[(i, i)];
    }
    let mut k = d;
    for i in 0..d {
        for j in i + 1..d {
            v[k] = std::f64::consts::SQRT_2 * m[(i, j)];
            k += 1;
        }
    }
    v
}

pub fn flat_to_sym(v: &DVector<f64>, d: usize) -> Result<SymMatrix> {
    check_dims(tri_dim(d), v.len())?;
    Ok(SymMatrix::from_symmetric_unchecked(unflat(v.as_slice(), d)))
}

pub(crate) fn unflat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = v[i];
    }
    let mut k = d;
    for i in 0..d {
        for j in i + 1..d {
            let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// An ordered list of symmetric matrices of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentStack {
    dim: usize,
    parts: Vec<SymMatrix>,
}

impl TangentStack {
    pub fn new(parts: Vec<SymMatrix>) -> Result<Self> {
        let dim = parts.first().map(SymMatrix::dim).ok_or_else(|| Error::Invalid("empty tangent stack".into()))?;
        for p in &parts {
            check_dims(dim, p.dim())?;
        }
        Ok(TangentStack { dim, parts })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[SymMatrix] {
        &self.parts
    }

    pub fn into_parts(self) -> Vec<SymMatrix> {
        self.parts
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let q = tri_dim(self.dim);
        let mut v = DVector::zeros(q * self.parts.len());
        for (n, p) in self.parts.iter().enumerate() {
            v.rows_mut(n * q, q).copy_from(&sym_to_flat(p));
        }
        v
    }

    pub fn from_flat(v: &DVector<f64>, dim: usize, count: usize) -> Result<Self> {
        let q = tri_dim(dim);
        check_dims(q * count, v.len())?;
        let parts = (0..count)
            .map(|n| SymMatrix::from_symmetric_unchecked(unflat(&v.as_slice()[n * q..(n + 1) * q], dim)))
            .collect();
        Ok(TangentStack { dim, parts })
    }
}

/// A linear map between stacks of symmetric matrices, stored as a dense
/// matrix in flat coordinates. Square operators may carry the fidelity
/// structure of their slots.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentOperator {
    dim: usize,
    row_slots: usize,
    col_slots: usize,
    matrix: DMatrix<f64>,
    structure: Option<FidelityStructure>,
}

impl TangentOperator {
    /// Square operator on stacks of `count` slots.
    pub fn new(dim: usize, count: usize, matrix: DMatrix<f64>) -> Result<Self> {
        Self::rectangular(dim, count, count, matrix)
    }

    pub fn rectangular(dim: usize, row_slots: usize, col_slots: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let q = tri_dim(dim);
        check_dims(row_slots * q, matrix.nrows())?;
        check_dims(col_slots * q, matrix.ncols())?;
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator entries"));
        }
        Ok(TangentOperator { dim, row_slots, col_slots, matrix, structure: None })
    }

    pub fn identity(dim: usize, count: usize) -> Self {
        let n = tri_dim(dim) * count;
        TangentOperator { dim, row_slots: count, col_slots: count, matrix: DMatrix::identity(n, n), structure: None }
    }

    pub fn zeros(dim: usize, count: usize) -> Self {
        let n = tri_dim(dim) * count;
        TangentOperator { dim, row_slots: count, col_slots: count, matrix: DMatrix::zeros(n, n), structure: None }
    }

    /// Attach slot metadata; the slot count must match.
    pub fn with_structure(mut self, structure: FidelityStructure) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Invalid("only square operators carry a fidelity structure".into()));
        }
        check_dims(structure.slot_count(), self.row_slots)?;
        self.structure = Some(structure);
        Ok(self)
    }

    pub fn structure(&self) -> Option<&FidelityStructure> {
        self.structure.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> usize {
        tri_dim(self.dim)
    }

    /// Slot count of a square operator.
    pub fn count(&self) -> usize {
        self.row_slots
    }

    pub fn row_slots(&self) -> usize {
        self.row_slots
    }

    pub fn col_slots(&self) -> usize {
        self.col_slots
    }

    pub fn is_square(&self) -> bool {
        self.row_slots == self.col_slots
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && (&self.matrix - self.matrix.transpose()).norm() <= rel_tol * self.matrix.norm()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn transpose(&self) -> TangentOperator {
        TangentOperator {
            dim: self.dim,
            row_slots: self.col_slots,
            col_slots: self.row_slots,
            matrix: self.matrix.transpose(),
            structure: self.structure.clone(),
        }
    }

    /// Spectral norm.
    pub fn operator_norm(&self) -> f64 {
        self.matrix.clone().svd(false, false).singular_values.max()
    }

    pub fn apply_flat(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims(self.matrix.ncols(), v.len())?;
        Ok(&self.matrix * v)
    }

    pub fn apply(&self, x: &TangentStack) -> Result<TangentStack> {
        check_dims(self.dim, x.dim())?;
        check_dims(self.col_slots, x.count())?;
        TangentStack::from_flat(&(&self.matrix * x.to_flat()), self.dim, self.row_slots)
    }

    /// `vᵀ G v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&self.apply_flat(v)?))
    }

    /// Operator product `self ∘ other`.
    pub fn compose(&self, other: &TangentOperator) -> Result<TangentOperator> {
        check_dims(self.dim, other.dim)?;
        check_dims(self.col_slots, other.row_slots)?;
        let mut out =
            TangentOperator::rectangular(self.dim, self.row_slots, other.col_slots, &self.matrix * &other.matrix)?;
        if self.structure.is_some() && self.structure == other.structure {
            out.structure = self.structure.clone();
        }
        Ok(out)
    }

    /// Sub-operator mapping the `cols` slots to the `rows` slots.
    pub fn extract_block(&self, rows: &[usize], cols: &[usize]) -> Result<TangentOperator> {
        for &r in rows {
            if r >= self.row_slots {
                return Err(Error::SlotOutOfRange { index: r, count: self.row_slots });
            }
        }
        for &c in cols {
            if c >= self.col_slots {
                return Err(Error::SlotOutOfRange { index: c, count: self.col_slots });
            }
        }
        let q = self.q();
        let mut m = DMatrix::zeros(rows.len() * q, cols.len() * q);
        for (bi, &r) in rows.iter().enumerate() {
            for (bj, &c) in cols.iter().enumerate() {
                m.view_mut((bi * q, bj * q), (q, q)).copy_from(&self.matrix.view((r * q, c * q), (q, q)));
            }
        }
        TangentOperator::rectangular(self.dim, rows.len(), cols.len(), m)
    }

    /// Zero every block coupling slots of different groups of the attached
    /// structure. Without a structure the operator is returned unchanged.
    pub fn zero_cross_group_blocks(mut self) -> TangentOperator {
        let Some(s) = self.structure.as_ref() else { return self };
        let q = tri_dim(self.dim);
        let groups = s.slot_group().to_vec();
        for (a, &ga) in groups.iter().enumerate() {
            for (b, &gb) in groups.iter().enumerate() {
                if ga != gb {
                    self.matrix.view_mut((a * q, b * q), (q, q)).fill(0.0);
                }
            }
        }
        self
    }

    /// Write a one-line JSON header followed by one text row per matrix row.
    /// Values are printed with round-trip precision.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = OperatorHeader {
            format: OPERATOR_FORMAT.to_string(),
            dim: self.dim,
            row_slots: self.row_slots,
            col_slots: self.col_slots,
            structure: self.structure.clone(),
        };
        let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{json}")?;
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Format("missing header".into()))??;
        let header: OperatorHeader = serde_json::from_str(&first).map_err(|e| Error::Format(e.to_string()))?;
        if header.format != OPERATOR_FORMAT {
            return Err(Error::Format(format!("unknown format tag `{}`", header.format)));
        }
        let q = tri_dim(header.dim);
        let (nr, nc) = (header.row_slots * q, header.col_slots * q);
        let mut data = Vec::with_capacity(nr * nc);
        for i in 0..nr {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing row {i}")))??;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|e| Error::Format(format!("row {i}: {e}")))?);
            }
            if data.len() - before != nc {
                return Err(Error::Format(format!("row {i} has {} values, expected {nc}", data.len() - before)));
            }
        }
        let matrix = DMatrix::from_row_slice(nr, nc, &data);
        let mut op = TangentOperator::rectangular(header.dim, header.row_slots, header.col_slots, matrix)?;
        if let Some(s) = header.structure {
            op = op.with_structure(s)?;
        }
        Ok(op)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

const OPERATOR_FORMAT: &str = "mfcov-tangent-operator-v1";

#[derive(Serialize, Deserialize)]
struct OperatorHeader {
    format: String,
    dim: usize,
    row_slots: usize,
    col_slots: usize,
    structure: Option<FidelityStructure>,
}

/// The operator `(C_1, …, C_N) ↦ (Y_1⁻¹ C_1 Y_1⁻¹, …, Y_N⁻¹ C_N Y_N⁻¹)`.
pub fn build_congruence_operator(ys: &[SpdMatrix]) -> Result<TangentOperator> {
    let d = ys.first().map(SpdMatrix::dim).ok_or_else(|| Error::Invalid("no congruence factors".into()))?;
    for y in ys {
        check_dims(d, y.dim())?;
    }
    let q = tri_dim(d);
    let n = ys.len();
    let mut m = DMatrix::zeros(n * q, n * q);
    let mut e = vec![0.0; q];
    for (s, y) in ys.iter().enumerate() {
        let yinv = y.inverse_matrix();
        for k in 0..q {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[k] = 1.0;
            let basis = unflat(&e, d);
            let image = flat_of(&symmetrize(&(&yinv * basis * &yinv)));
            m.view_mut((s * q, s * q + k), (q, 1)).copy_from(&image);
        }
    }
    TangentOperator::new(d, n, m)
}

/// `(G + eps·tr(G)/n·I)⁻¹` through a symmetric eigendecomposition, where `n`
/// is the operator size. Fails when the shifted operator has condition
/// estimate above [`MAX_CONDITION`].
pub fn regularized_inverse(g: &TangentOperator, eps: f64) -> Result<TangentOperator> {
    if !g.is_square() {
        return Err(Error::Invalid("cannot invert a rectangular operator".into()));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::OutOfRange { name: "eps", value: eps });
    }
    if !g.is_symmetric(1e-10) {
        return Err(Error::Invalid("operator is not symmetric".into()));
    }
    let n = g.matrix.nrows();
    let shift = eps * g.trace() / n as f64;
    let mut shifted = symmetrize(&g.matrix);
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    let eig = SymmetricEigen::new(shifted);
    let abs = eig.eigenvalues.map(f64::abs);
    let (lo, hi) = (abs.min(), abs.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / l);
    }
    let inv = symmetrize(&(scaled * eig.eigenvectors.transpose()));
    let mut out = TangentOperator::new(g.dim, g.row_slots, inv)?;
    out.structure = g.structure.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_order_diagonal_first() {
        let v = sym_to_flat(&SymMatrix::from_diagonal(&[1.0, 2.0]));
        assert_eq!(v.as_slice(), &[1.0, 2.0, 0.0]);
        let x = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let v = sym_to_flat(&x);
        assert_eq!(v.as_slice(), &[0.0, 0.0, std::f64::consts::SQRT_2]);
        assert!((v.dot(&v) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn flat_order_upper_triangle_row_major() {
        let m = DMatrix::from_fn(3, 3, |i, j| (i.min(j) * 10 + i.max(j)) as f64);
        let v = sym_to_flat(&SymMatrix::new(m.clone()).unwrap());
        let s = std::f64::consts::SQRT_2;
        assert_eq!(v.as_slice(), &[0.0, 11.0, 22.0, s * 1.0, s * 2.0, s * 12.0]);
        assert!((flat_to_sym(&v, 3).unwrap().matrix() - &m).norm() < 1e-14);
    }

    #[test]
    fn identity_congruence_operator() {
        let g = build_congruence_operator(&[SpdMatrix::identity(3), SpdMatrix::identity(3)]).unwrap();
        assert!((g.matrix() - DMatrix::<f64>::identity(12, 12)).norm() < 1e-15);
    }

    #[test]
    fn small_inverses() {
        let i = TangentOperator::identity(1, 1);
        assert_eq!(regularized_inverse(&i, 0.0).unwrap().matrix(), i.matrix());
        let g = TangentOperator::new(1, 2, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]))).unwrap();
        let inv = regularized_inverse(&g, 0.0).unwrap();
        assert!((inv.matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25]))).norm() < 1e-15);
    }

    #[test]
    fn singular_operator_rejected() {
        let g = TangentOperator::new(1, 2, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        assert!(matches!(regularized_inverse(&g, 0.0), Err(Error::Singular { .. })));
        assert!(regularized_inverse(&g, 1e-8).is_ok());
    }

    #[test]
    fn block_extraction_and_ranges() {
        let m = DMatrix::from_fn(9, 9, |i, j| (i * 9 + j) as f64);
        let g = TangentOperator::new(2, 3, m.clone()).unwrap();
        assert_eq!(g.extract_block(&[0, 1, 2], &[0, 1, 2]).unwrap().matrix(), &m);
        let b = g.extract_block(&[2], &[0]).unwrap();
        assert_eq!(b.matrix(), &m.view((6, 0), (3, 3)).into_owned());
        assert!(matches!(g.extract_block(&[3], &[0]), Err(Error::SlotOutOfRange { .. })));
    }

    #[test]
    fn cross_group_zeroing() {
        let g = TangentOperator::new(1, 3, DMatrix::from_element(3, 3, 1.0))
            .unwrap()
            .with_structure(FidelityStructure::running_example())
            .unwrap()
            .zero_cross_group_blocks();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.matrix(), &expected);
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let m = DMatrix::from_fn(6, 6, |i, j| ((i + 1) as f64 / (j + 3) as f64).sin() * 1e-7 + (i == j) as u8 as f64);
        let g = TangentOperator::new(2, 2, m).unwrap().with_structure(FidelityStructure::coupled_pair()).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = TangentOperator::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn malformed_file_rejected() {
        assert!(TangentOperator::read_from("".as_bytes()).is_err());
        let text = "{\"format\":\"mfcov-tangent-operator-v1\",\"dim\":1,\"row_slots\":1,\"col_slots\":1,\"structure\":null}\n1 2\n";
        assert!(matches!(TangentOperator::read_from(text.as_bytes()), Err(Error::Format(_))));
    }
}
