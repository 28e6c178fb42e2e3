//! Dense linear-algebra kernels shared by every other module: numerical rank,
//! nullspace extraction, LQ factorization, projections, principal angles and
//! subspace intersections.
//!
//! All routines work on `nalgebra::DMatrix<f64>` and reject non-finite input.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative singular-value threshold for rank decisions on exact
/// (noise-free) data.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Outcome of a numerical rank decision.
#[derive(Debug, Clone)]
pub struct RankDecision {
    pub numerical_rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
    /// Absolute threshold actually applied (`rel_tol * sigma_1`).
    pub tolerance_used: f64,
}

impl RankDecision {
    /// Nullity of the decided matrix given its column count.
    pub fn nullity(&self, cols: usize) -> usize {
        cols - self.numerical_rank
    }
}

/// A subspace of R^ambient_dim represented by an orthonormal column basis.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Wraps a matrix whose columns are already orthonormal.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let dim = basis.ncols();
        if dim > basis.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} basis columns in ambient dimension {}",
                dim,
                basis.nrows()
            )));
        }
        let gram = basis.transpose() * &basis;
        let defect = (&gram - DMatrix::identity(dim, dim)).amax();
        if defect > 1e-10 {
            return Err(Error::InvalidMatrix(format!(
                "columns not orthonormal (Gram defect {defect:.3e})"
            )));
        }
        Ok(Self { ambient_dim: basis.nrows(), basis })
    }

    /// The trivial subspace {0} of R^ambient_dim.
    pub fn empty(ambient_dim: usize) -> Self {
        Self { ambient_dim, basis: DMatrix::zeros(ambient_dim, 0) }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Number of basis vectors (the subspace dimension).
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Coordinates of `v` in the basis, i.e. `Bᵀ v`.
    pub fn coordinates(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} vs ambient dimension {}",
                v.len(),
                self.ambient_dim
            )));
        }
        Ok(self.basis.transpose() * v)
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

/// Thin SVD with singular values sorted descending and factors permuted to match.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    if order.windows(2).all(|w| w[0] < w[1]) {
        return (u, s, vt);
    }
    let sorted: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), u.ncols(), |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(vt.nrows(), vt.ncols(), |r, c| vt[(order[r], c)]);
    (u_sorted, sorted, vt_sorted)
}

fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

fn rank_from_values(s: &[f64], rel_tol: f64) -> (usize, f64) {
    let sigma1 = s.first().copied().unwrap_or(0.0);
    let threshold = rel_tol * sigma1;
    let rank = s.iter().filter(|&&x| x > threshold).count();
    (rank, threshold)
}

/// Numerical rank of `m`: the count of singular values above `rel_tol * sigma_1`.
/// A zero matrix has rank 0.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<RankDecision> {
    check_finite(m)?;
    if rel_tol <= 0.0 {
        return Err(Error::InvalidMatrix(format!("rel_tol must be positive, got {rel_tol}")));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(RankDecision { numerical_rank: 0, singular_values: vec![], tolerance_used: 0.0 });
    }
    let s = singular_values_desc(m);
    let (rank, threshold) = rank_from_values(&s, rel_tol);
    Ok(RankDecision { numerical_rank: rank, singular_values: s, tolerance_used: threshold })
}

/// Orthonormal basis of the range (column space) of `m`.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> Result<SubspaceBasis> {
    check_finite(m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(SubspaceBasis::empty(m.nrows()));
    }
    let (u, s, _) = sorted_svd(m);
    let (rank, _) = rank_from_values(&s, rel_tol);
    Ok(SubspaceBasis { ambient_dim: m.nrows(), basis: u.columns(0, rank).into_owned() })
}

/// Orthonormal basis of the orthogonal complement of `span(basis)` in its
/// ambient space.
///
/// Computed from the SVD of the projector `I - B Bᵀ`, whose spectrum is {0, 1}
/// up to roundoff, so selecting singular values above 1/2 is unambiguous.
pub fn orthonormal_complement(basis: &SubspaceBasis) -> SubspaceBasis {
    let n = basis.ambient_dim;
    let proj = DMatrix::identity(n, n) - basis.matrix() * basis.matrix().transpose();
    let (u, s, _) = sorted_svd(&proj);
    let dim = s.iter().filter(|&&x| x > 0.5).count();
    SubspaceBasis { ambient_dim: n, basis: u.columns(0, dim).into_owned() }
}

/// Orthonormal basis `N` of the left nullspace of `m`, i.e. `Nᵀ m = 0`, with
/// dimension `rows(m) - rank(m)`.
pub fn left_nullspace(m: &DMatrix<f64>, rel_tol: f64) -> Result<SubspaceBasis> {
    let range = range_basis(m, rel_tol)?;
    Ok(orthonormal_complement(&range))
}

/// Orthonormal basis of the (right) nullspace of `m`, i.e. `m x = 0`.
pub fn right_nullspace(m: &DMatrix<f64>, rel_tol: f64) -> Result<SubspaceBasis> {
    check_finite(m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        // Every vector is annihilated.
        return Ok(SubspaceBasis {
            ambient_dim: m.ncols(),
            basis: DMatrix::identity(m.ncols(), m.ncols()),
        });
    }
    let (_, s, vt) = sorted_svd(m);
    let (rank, _) = rank_from_values(&s, rel_tol);
    let row_space = SubspaceBasis {
        ambient_dim: m.ncols(),
        basis: vt.rows(0, rank).transpose(),
    };
    Ok(orthonormal_complement(&row_space))
}

/// LQ factorization `m = L * Q` with `L` lower triangular (or trapezoidal) and
/// `Q` having orthonormal rows; the diagonal of `L` is non-negative.
pub fn lq_decompose(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_finite(m)?;
    let qr = m.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    // m = rᵀ qᵀ; flip signs so diag(L) >= 0.
    let k = r.nrows().min(r.ncols());
    let mut l = r.transpose();
    let mut q_rows = q.transpose();
    for i in 0..k {
        if l[(i, i)] < 0.0 {
            for rr in 0..l.nrows() {
                l[(rr, i)] = -l[(rr, i)];
            }
            for cc in 0..q_rows.ncols() {
                q_rows[(i, cc)] = -q_rows[(i, cc)];
            }
        }
    }
    Ok((l, q_rows))
}

/// Orthogonal projection of `v` onto the subspace.
pub fn orthogonal_projection(basis: &SubspaceBasis, v: &DVector<f64>) -> Result<DVector<f64>> {
    let coords = basis.coordinates(v)?;
    Ok(basis.matrix() * coords)
}

/// Principal angles between two subspaces of a common ambient space, in
/// ascending order over `[0, pi/2]`.
///
/// Cosines are the singular values of `AᵀB` clamped into [0, 1]. Near-zero
/// angles are below the resolution of `acos` at 1, so those are evaluated
/// through the sine route instead: the singular values of `(I - A Aᵀ) B` are
/// the sines of the same angles.
pub fn principal_angles(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<Vec<f64>> {
    if a.ambient_dim != b.ambient_dim {
        return Err(Error::DimensionMismatch(format!(
            "ambient dimensions {} vs {}",
            a.ambient_dim, b.ambient_dim
        )));
    }
    if a.dim() == 0 || b.dim() == 0 {
        return Ok(vec![]);
    }
    let count = a.dim().min(b.dim());
    let prod = a.matrix().transpose() * b.matrix();
    let mut cosines = singular_values_desc(&prod);
    cosines.truncate(count);

    let residual = b.matrix() - a.matrix() * &prod;
    let mut sines = singular_values_desc(&residual);
    sines.reverse();
    sines.truncate(count);

    let angles = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let c = c.clamp(0.0, 1.0);
            if c * c > 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect();
    Ok(angles)
}

/// Dimension of `range(p1) ∩ range(p2)`.
///
/// Evaluated two ways: rank p1 + rank p2 - rank [p1 p2] with per-matrix
/// relative thresholds, and the nullity form with one absolute threshold
/// taken from sigma_1 of the concatenation. A disagreement means the inputs
/// are scaled inconsistently for the tolerance.
pub fn subspace_intersection_dim(
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    rel_tol: f64,
) -> Result<usize> {
    check_finite(p1)?;
    check_finite(p2)?;
    if p1.nrows() != p2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "row counts {} vs {}",
            p1.nrows(),
            p2.nrows()
        )));
    }
    let mut joint = DMatrix::zeros(p1.nrows(), p1.ncols() + p2.ncols());
    joint.columns_mut(0, p1.ncols()).copy_from(p1);
    joint.columns_mut(p1.ncols(), p2.ncols()).copy_from(p2);

    let r1 = numerical_rank(p1, rel_tol)?.numerical_rank;
    let r2 = numerical_rank(p2, rel_tol)?.numerical_rank;
    let joint_decision = numerical_rank(&joint, rel_tol)?;
    let r12 = joint_decision.numerical_rank;
    if r1 + r2 < r12 {
        return Err(Error::RankToleranceAmbiguous(format!(
            "rank [p1 p2] = {r12} exceeds rank p1 + rank p2 = {}",
            r1 + r2
        )));
    }
    let by_rank = r1 + r2 - r12;

    // Nullity route under the joint absolute threshold.
    let abs_tol = joint_decision.tolerance_used;
    let count_above = |m: &DMatrix<f64>| -> usize {
        if m.nrows() == 0 || m.ncols() == 0 {
            return 0;
        }
        singular_values_desc(m).iter().filter(|&&x| x > abs_tol).count()
    };
    let null1 = p1.ncols() - count_above(p1);
    let null2 = p2.ncols() - count_above(p2);
    let null12 = joint.ncols() - r12;
    let by_nullity = match null12.checked_sub(null1 + null2) {
        Some(d) => d,
        None => {
            return Err(Error::InconsistentRankForms {
                form_rank: by_rank,
                form_nullity: 0,
            })
        }
    };

    if by_rank != by_nullity {
        return Err(Error::InconsistentRankForms {
            form_rank: by_rank,
            form_nullity: by_nullity,
        });
    }
    Ok(by_rank)
}

/// Orthonormal basis of `range(p1) ∩ range(p2)` of the given dimension,
/// from the principal directions with cosines closest to 1.
pub fn intersection_basis(
    a: &SubspaceBasis,
    b: &SubspaceBasis,
    dim: usize,
) -> Result<SubspaceBasis> {
    if a.ambient_dim != b.ambient_dim {
        return Err(Error::DimensionMismatch(format!(
            "ambient dimensions {} vs {}",
            a.ambient_dim, b.ambient_dim
        )));
    }
    if dim == 0 || a.dim() == 0 || b.dim() == 0 {
        return Ok(SubspaceBasis::empty(a.ambient_dim));
    }
    if dim > a.dim().min(b.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "requested intersection dimension {dim} exceeds min subspace dimension {}",
            a.dim().min(b.dim())
        )));
    }
    let prod = a.matrix().transpose() * b.matrix();
    let (u, _, _) = sorted_svd(&prod);
    let directions = a.matrix() * u.columns(0, dim);
    // Principal vectors for near-1 cosines are orthonormal up to roundoff;
    // re-orthonormalize for safety.
    range_basis(&directions.into_owned(), 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_of_identity() {
        let d = numerical_rank(&DMatrix::identity(3, 3), 1e-10).unwrap();
        assert_eq!(d.numerical_rank, 3);
    }

    #[test]
    fn rank_of_zero_matrix() {
        let d = numerical_rank(&DMatrix::zeros(4, 2), 1e-10).unwrap();
        assert_eq!(d.numerical_rank, 0);
        assert_eq!(d.nullity(2), 2);
    }

    #[test]
    fn rank_rejects_nan() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = f64::NAN;
        assert!(matches!(numerical_rank(&m, 1e-9), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn left_nullspace_of_tall_injection() {
        // [e1 e2] in R^3: left nullspace is span(e3)
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let n = left_nullspace(&m, DEFAULT_REL_TOL).unwrap();
        assert_eq!(n.dim(), 1);
        assert!((n.matrix()[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((n.matrix().transpose() * &m).amax() < 1e-12);
    }

    #[test]
    fn left_nullspace_matches_orthogonal_complement_oracle() {
        // Build an 8x3 full-column-rank matrix from the first 3 columns of a
        // random orthogonal Q; its left nullspace must equal span of the rest.
        let mut rng = StdRng::seed_from_u64(11);
        let big = random_matrix(&mut rng, 8, 8);
        let q = big.qr().q();
        let coeff = random_matrix(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 2.0;
        let m = q.columns(0, 3) * coeff;
        let n = left_nullspace(&m.into_owned(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(n.dim(), 5);
        let expected =
            SubspaceBasis::from_orthonormal(q.columns(3, 5).into_owned()).unwrap();
        let angles = principal_angles(&n, &expected).unwrap();
        assert!(angles.iter().all(|&a| a < 1e-10));
        let gram = n.matrix().transpose() * n.matrix();
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-10);
    }

    #[test]
    fn lq_of_orthonormal_rows_is_identity() {
        let mut rng = StdRng::seed_from_u64(3);
        let q = random_matrix(&mut rng, 6, 6).qr().q();
        let m = q.columns(0, 3).transpose().into_owned(); // 3x6 orthonormal rows
        let (l, q_rows) = lq_decompose(&m).unwrap();
        assert!((&l - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!((&m - &l * &q_rows).amax() < 1e-12);
    }

    #[test]
    fn lq_roundtrip_random_wide() {
        let mut rng = StdRng::seed_from_u64(4);
        let m = random_matrix(&mut rng, 4, 20);
        let (l, q) = lq_decompose(&m).unwrap();
        assert!((&m - &l * &q).norm() < 1e-12 * m.norm().max(1.0));
        for i in 0..4 {
            assert!(l[(i, i)] >= 0.0);
            for j in (i + 1)..4 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        let gram = &q * q.transpose();
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn lq_roundtrip_large() {
        let mut rng = StdRng::seed_from_u64(5);
        let m = random_matrix(&mut rng, 200, 2000);
        let (l, q) = lq_decompose(&m).unwrap();
        assert!((&m - &l * &q).norm() <= 1e-10 * m.norm());
    }

    #[test]
    fn projection_cases() {
        let basis = SubspaceBasis::from_orthonormal(DMatrix::from_row_slice(
            3,
            1,
            &[1.0, 0.0, 0.0],
        ))
        .unwrap();
        let inside = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        assert!((orthogonal_projection(&basis, &inside).unwrap() - &inside).amax() < 1e-14);
        let orth = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        assert!(orthogonal_projection(&basis, &orth).unwrap().amax() < 1e-14);
        let mixed = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let p = orthogonal_projection(&basis, &mixed).unwrap();
        assert!((p - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-14);
        let wrong = DVector::from_vec(vec![1.0, 2.0]);
        assert!(orthogonal_projection(&basis, &wrong).is_err());
    }

    #[test]
    fn principal_angles_extremes() {
        let e1 = SubspaceBasis::from_orthonormal(DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]))
            .unwrap();
        let e2 = SubspaceBasis::from_orthonormal(DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]))
            .unwrap();
        let same = principal_angles(&e1, &e1).unwrap();
        assert!(same.iter().all(|&a| a < 1e-12));
        let orth = principal_angles(&e1, &e2).unwrap();
        assert!((orth[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn intersection_dim_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(subspace_intersection_dim(&id, &id, 1e-9).unwrap(), 3);
        let e1 = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let e2 = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert_eq!(subspace_intersection_dim(&e1, &e2, 1e-9).unwrap(), 0);
        let short = DMatrix::zeros(2, 1);
        assert!(subspace_intersection_dim(&e1, &short, 1e-9).is_err());
    }

    #[test]
    fn intersection_forms_agree_on_random_pairs() {
        // Lemma-style identity checked on many well-conditioned random pairs.
        let mut rng = StdRng::seed_from_u64(21);
        for trial in 0..1000 {
            let rows = 3 + (trial % 5);
            let c1 = 1 + (trial % 3);
            let c2 = 1 + (trial % 4);
            let p1 = random_matrix(&mut rng, rows, c1);
            let p2 = random_matrix(&mut rng, rows, c2);
            let dim = subspace_intersection_dim(&p1, &p2, 1e-9).unwrap();
            assert!(dim <= c1.min(c2));
        }
    }

    #[test]
    fn intersection_detects_shared_direction() {
        let mut rng = StdRng::seed_from_u64(8);
        let shared = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0f64));
        let mut p1 = random_matrix(&mut rng, 6, 3);
        let mut p2 = random_matrix(&mut rng, 6, 3);
        p1.set_column(0, &shared);
        p2.set_column(2, &(2.0 * &shared));
        assert_eq!(subspace_intersection_dim(&p1, &p2, 1e-9).unwrap(), 1);
        let a = range_basis(&p1, 1e-9).unwrap();
        let b = range_basis(&p2, 1e-9).unwrap();
        let inter = intersection_basis(&a, &b, 1).unwrap();
        assert_eq!(inter.dim(), 1);
        // the intersection direction is the shared column up to scale
        let v = inter.matrix().column(0).into_owned();
        let cosine = v.dot(&shared).abs() / shared.norm();
        assert!((cosine - 1.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn rank_nullity_holds(rows in 1usize..7, cols in 1usize..7, seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, rows, cols);
            let d = numerical_rank(&m, 1e-9).unwrap();
            let kernel = right_nullspace(&m, 1e-9).unwrap();
            let left = left_nullspace(&m, 1e-9).unwrap();
            prop_assert_eq!(d.numerical_rank + kernel.dim(), cols);
            prop_assert_eq!(d.numerical_rank + left.dim(), rows);
        }

        #[test]
        fn projection_idempotent(seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 6, 3);
            let basis = range_basis(&m, 1e-9).unwrap();
            let v = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0f64));
            let p1 = orthogonal_projection(&basis, &v).unwrap();
            let p2 = orthogonal_projection(&basis, &p1).unwrap();
            prop_assert!((p2 - &p1).norm() <= 1e-10 * v.norm().max(1.0));
        }

        #[test]
        fn lq_roundtrip(rows in 1usize..6, extra in 0usize..8, seed in 0u64..100) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, rows, rows + extra);
            let (l, q) = lq_decompose(&m).unwrap();
            prop_assert!((&m - &l * &q).norm() <= 1e-10 * m.norm().max(1.0));
        }
    }
}
