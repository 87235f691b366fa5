//! Eigendecomposition of the reduced state matrix with biorthonormal
//! left/right eigenvectors, participation factors, slow-mode selection,
//! and modal reconstruction of state responses.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::machine::StateLayout;
use crate::nadir::CoiWeights;
use crate::{CMat, CVec, DMat, DVec, C64};

/// Tolerance below which |w^T v| is treated as a defective pair.
const DEFECT_TOL: f64 = 1e-12;
/// Enforced accuracy of the decomposition itself.
const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
const BIORTH_TOL: f64 = 1e-8;

/// Full spectrum of a real matrix with right eigenvectors `v_i` (unit
/// 2-norm) and left eigenvectors `w_i` rescaled so that w_i^T v_k = d_ik.
/// Complex eigenvalues come in adjacent conjugate pairs, the member with
/// positive imaginary part first.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    pub eigenvalues: Vec<C64>,
    /// Right eigenvectors, one column per mode.
    pub right: CMat,
    /// Left eigenvectors, one column per mode, biorthonormal scaling.
    pub left: CMat,
    pub scaling: ScalingRecord,
}

/// Numerical quality of the decomposition, recorded at construction.
#[derive(Debug, Clone, Copy)]
pub struct ScalingRecord {
    pub max_eigen_residual: f64,
    pub max_biorth_deviation: f64,
}

impl ModalBasis {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_real_mode(&self, i: usize) -> bool {
        let l = self.eigenvalues[i];
        l.im.abs() <= 1e-9 * l.re.abs().max(1.0)
    }

    /// Index of the conjugate partner, or `i` itself for a real mode.
    pub fn conjugate_of(&self, i: usize) -> usize {
        if self.is_real_mode(i) {
            return i;
        }
        let target = self.eigenvalues[i].conj();
        // adjacent by construction
        for cand in [i.wrapping_sub(1), i + 1] {
            if cand < self.n() && (self.eigenvalues[cand] - target).norm() < 1e-6 {
                return cand;
            }
        }
        // fall back to a global search
        let mut best = i;
        let mut dist = f64::INFINITY;
        for k in 0..self.n() {
            if k == i {
                continue;
            }
            let d = (self.eigenvalues[k] - target).norm();
            if d < dist {
                dist = d;
                best = k;
            }
        }
        best
    }
}

fn unpack_packed_real(re: &DVec, im: &DVec, packed: &DMat, conjugate: bool) -> CMat {
    let n = re.len();
    let mut out = CMat::zeros(n, n);
    let mut j = 0;
    while j < n {
        if im[j] == 0.0 {
            for i in 0..n {
                out[(i, j)] = Complex64::new(packed[(i, j)], 0.0);
            }
            j += 1;
        } else {
            // columns j, j+1 hold the real and imaginary parts of the
            // eigenvector for the eigenvalue with im > 0
            let sign = if conjugate { -1.0 } else { 1.0 };
            for i in 0..n {
                let (a, b) = (packed[(i, j)], packed[(i, j + 1)]);
                out[(i, j)] = Complex64::new(a, sign * b);
                out[(i, j + 1)] = Complex64::new(a, -sign * b);
            }
            j += 2;
        }
    }
    out
}

/// Eigendecomposition of a real square matrix with biorthonormal scaling.
pub fn eigendecompose(a: &DMat) -> Result<ModalBasis> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            what: "eigendecompose input",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let n = a.nrows();
    let eig = nalgebra_lapack::Eigen::new(a.clone(), true, true)
        .ok_or_else(|| Error::Eigensolver("dgeev did not converge".into()))?;
    let re = eig.eigenvalues_re.clone();
    let im = eig.eigenvalues_im.clone();
    let vr_packed = eig
        .eigenvectors
        .ok_or_else(|| Error::Eigensolver("right eigenvectors missing".into()))?;
    let vl_packed = eig
        .left_eigenvectors
        .ok_or_else(|| Error::Eigensolver("left eigenvectors missing".into()))?;

    let eigenvalues: Vec<C64> = (0..n).map(|i| Complex64::new(re[i], im[i])).collect();
    let mut right = unpack_packed_real(&re, &im, &vr_packed, false);
    // LAPACK's left vectors satisfy u^H A = lambda u^H; the transpose
    // convention w^T A = lambda w^T wants w = conj(u).
    let mut left = unpack_packed_real(&re, &im, &vl_packed, true);

    // Unit-norm right vectors, then rescale the left set so w_i^T v_i = 1.
    for i in 0..n {
        let vnorm = right.column(i).norm();
        if vnorm == 0.0 {
            return Err(Error::Eigensolver(format!("zero right eigenvector {i}")));
        }
        let mut col = right.column_mut(i);
        col /= Complex64::new(vnorm, 0.0);
        let s: C64 = (left.column(i).transpose() * right.column(i))[(0, 0)];
        if s.norm() < DEFECT_TOL {
            return Err(Error::DefectiveMode(s.norm()));
        }
        let mut wcol = left.column_mut(i);
        for k in 0..n {
            wcol[k] /= s;
        }
    }

    // Quality record: eigen residuals and biorthonormality.
    let ac: CMat = a.map(|v| Complex64::new(v, 0.0));
    let mut max_res: f64 = 0.0;
    for i in 0..n {
        let v = right.column(i);
        let r = &ac * v - v * eigenvalues[i];
        max_res = max_res.max(r.norm());
    }
    let wtv = left.transpose() * &right;
    let mut max_dev: f64 = 0.0;
    for i in 0..n {
        for k in 0..n {
            let target = if i == k {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            max_dev = max_dev.max((wtv[(i, k)] - target).norm());
        }
    }
    if max_res > EIGEN_RESIDUAL_TOL {
        return Err(Error::Eigensolver(format!(
            "eigenpair residual {max_res:.3e} above {EIGEN_RESIDUAL_TOL:.0e}"
        )));
    }
    if max_dev > BIORTH_TOL {
        return Err(Error::Eigensolver(format!(
            "biorthonormality defect {max_dev:.3e} above {BIORTH_TOL:.0e}"
        )));
    }

    Ok(ModalBasis {
        eigenvalues,
        right,
        left,
        scaling: ScalingRecord {
            max_eigen_residual: max_res,
            max_biorth_deviation: max_dev,
        },
    })
}

/// Participation factors p_ik = |v_ik w_ik|, one row per mode, each row
/// normalized to unit sum.
pub fn participation_factors(basis: &ModalBasis) -> DMat {
    let n = basis.n();
    let mut p = DMat::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for k in 0..n {
            let v = basis.right[(k, i)];
            let w = basis.left[(k, i)];
            let m = (v * w).norm();
            p[(i, k)] = m;
            row_sum += m;
        }
        if row_sum > 0.0 {
            for k in 0..n {
                p[(i, k)] /= row_sum;
            }
        }
    }
    p
}

/// Retained slow modes, closed under conjugation.
#[derive(Debug, Clone)]
pub struct ModeSet {
    /// All retained mode indices, ascending.
    pub indices: Vec<usize>,
    /// Conjugate pairs, (im > 0 member, partner).
    pub pairs: Vec<(usize, usize)>,
    /// Real modes.
    pub reals: Vec<usize>,
    /// Max turbine/governor or rotor-speed participation per retained mode
    /// (aligned with `indices`).
    pub max_gov_pf: Vec<f64>,
    /// Share of the center-of-inertia signal carried by each retained mode
    /// (aligned with `indices`).
    pub coi_share: Vec<f64>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The full spectrum as a mode set (every pair and real mode retained).
    pub fn full(basis: &ModalBasis) -> ModeSet {
        let n = basis.n();
        let indices: Vec<usize> = (0..n).collect();
        let mut pairs = Vec::new();
        let mut reals = Vec::new();
        for i in 0..n {
            if basis.is_real_mode(i) {
                reals.push(i);
            } else if basis.eigenvalues[i].im > 0.0 {
                pairs.push((i, basis.conjugate_of(i)));
            }
        }
        ModeSet {
            indices,
            pairs,
            reals,
            max_gov_pf: vec![0.0; n],
            coi_share: vec![0.0; n],
        }
    }
}

/// Select the modes that drive the frequency excursion.
///
/// A mode is retained when all three hold:
///  - |lambda| <= `slow_cutoff` (rad/s): governor-band dynamics only;
///  - its largest participation factor over turbine/governor and
///    rotor-speed states is at least `threshold`;
///  - its share of the center-of-inertia response is at least `threshold`,
///    measured by |<c, v_m><w_m, c>| with c the inertia-weighted speed
///    selector, normalized over all modes. This keeps aggregate modes and
///    drops inter-machine modes that cancel in the COI signal.
///
/// The result is closed under conjugation.
pub fn select_modes(
    basis: &ModalBasis,
    pf: &DMat,
    layout: &StateLayout,
    weights: &CoiWeights,
    threshold: f64,
    slow_cutoff: f64,
) -> Result<ModeSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "participation threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if weights.machines != layout.machines {
        return Err(Error::InvalidArgument(
            "COI weights do not match the layout's machines".into(),
        ));
    }
    let n = basis.n();
    let mut c = CVec::zeros(n);
    for (m, &zi) in layout.speed_indices().iter().enumerate() {
        c[zi] = Complex64::new(weights.c[m], 0.0);
    }

    // COI share of every mode.
    let mut coi_raw = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let obs: C64 = (c.transpose() * basis.right.column(i))[(0, 0)];
        let exc: C64 = (basis.left.column(i).transpose() * &c)[(0, 0)];
        let s = (obs * exc).norm();
        coi_raw[i] = s;
        total += s;
    }
    if total > 0.0 {
        for s in &mut coi_raw {
            *s /= total;
        }
    }

    let mut interesting: Vec<usize> = layout.governor_indices();
    interesting.extend(layout.speed_indices());

    let mut keep = vec![false; n];
    for i in 0..n {
        if basis.eigenvalues[i].norm() > slow_cutoff {
            continue;
        }
        let max_pf = interesting
            .iter()
            .map(|&k| pf[(i, k)])
            .fold(0.0_f64, f64::max);
        if max_pf >= threshold && coi_raw[i] >= threshold {
            keep[i] = true;
            keep[basis.conjugate_of(i)] = true;
        }
    }

    let indices: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if indices.is_empty() {
        return Err(Error::EmptyModeSet {
            threshold,
            cutoff: slow_cutoff,
        });
    }
    let mut pairs = Vec::new();
    let mut reals = Vec::new();
    for &i in &indices {
        if basis.is_real_mode(i) {
            reals.push(i);
        } else if basis.eigenvalues[i].im > 0.0 {
            pairs.push((i, basis.conjugate_of(i)));
        }
    }
    let max_gov_pf = indices
        .iter()
        .map(|&i| {
            interesting
                .iter()
                .map(|&k| pf[(i, k)])
                .fold(0.0_f64, f64::max)
        })
        .collect();
    let coi_share = indices.iter().map(|&i| coi_raw[i]).collect();
    Ok(ModeSet {
        indices,
        pairs,
        reals,
        max_gov_pf,
        coi_share,
    })
}

/// Reconstruct state responses from a subset of modes:
/// x_k(t) = sum_m e^(lambda_m t) <w_m, dx0> v_mk.
///
/// For a conjugation-closed subset and real dx0 the imaginary residue is
/// checked against 1e-10 and the real part returned (states x times).
pub fn modal_response(
    basis: &ModalBasis,
    dx0: &DVec,
    modes: &[usize],
    times: &[f64],
) -> Result<DMat> {
    let n = basis.n();
    if dx0.len() != n {
        return Err(Error::Dimension {
            what: "modal_response dx0",
            expected: n,
            got: dx0.len(),
        });
    }
    if let Some(&bad) = modes.iter().find(|&&m| m >= n) {
        return Err(Error::Dimension {
            what: "modal_response mode index",
            expected: n,
            got: bad,
        });
    }
    let dx0c: CVec = dx0.map(|v| Complex64::new(v, 0.0));
    // excitation coefficients q_m = w_m^T dx0
    let q: Vec<C64> = modes
        .iter()
        .map(|&m| (basis.left.column(m).transpose() * &dx0c)[(0, 0)])
        .collect();

    let mut out = DMat::zeros(n, times.len());
    let mut max_imag: f64 = 0.0;
    for (j, &t) in times.iter().enumerate() {
        let mut acc = CVec::zeros(n);
        for (qi, &m) in q.iter().zip(modes) {
            let e = (basis.eigenvalues[m] * t).exp() * qi;
            acc += basis.right.column(m) * e;
        }
        for k in 0..n {
            out[(k, j)] = acc[k].re;
            max_imag = max_imag.max(acc[k].im.abs());
        }
    }
    if max_imag > 1e-10 {
        return Err(Error::PairingViolation(format!(
            "imaginary residue {max_imag:.3e} in reconstructed response; mode subset is not conjugation-closed"
        )));
    }
    Ok(out)
}

/// One line per mode: eigenvalue, damping ratio, frequency, and the
/// top participating states.
pub fn mode_report(
    basis: &ModalBasis,
    pf: &DMat,
    layout: &StateLayout,
    selected: Option<&ModeSet>,
) -> String {
    use std::fmt::Write;
    let names = layout.state_names();
    let mut s = String::new();
    s.push_str("mode,re,im,damping_ratio,freq_hz,selected,top_states\n");
    for i in 0..basis.n() {
        let l = basis.eigenvalues[i];
        let mag = l.norm();
        let zeta = if mag > 0.0 { -l.re / mag } else { 0.0 };
        let freq = l.im.abs() / (2.0 * std::f64::consts::PI);
        let sel = selected.map(|m| m.indices.contains(&i)).unwrap_or(false);
        let mut top: Vec<(f64, usize)> = (0..basis.n()).map(|k| (pf[(i, k)], k)).collect();
        top.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let tops: Vec<String> = top
            .iter()
            .take(3)
            .map(|(p, k)| format!("{}:{:.4}", names[*k], p))
            .collect();
        writeln!(
            s,
            "{i},{:.6},{:.6},{zeta:.4},{freq:.4},{},{}",
            l.re,
            l.im,
            sel as u8,
            tops.join(" ")
        )
        .unwrap();
    }
    s
}
