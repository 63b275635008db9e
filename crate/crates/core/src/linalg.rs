//! Cholesky factor of `Q_s = A_sᵀA_s + σ_e² Σ_s⁻¹` grown one atom at a time.
//!
//! Greedy pursuits evaluate every candidate extension of the current support;
//! bordering the factor costs `O(k²)` per candidate instead of a fresh
//! `O(k³)` factorization.

use nalgebra::DVector;

use crate::model::SignalModel;

#[derive(Clone, Debug)]
pub(crate) struct GrowingCholesky {
    atoms: Vec<usize>,
    /// Row `r` holds `L[r][0..=r]`.
    rows: Vec<Vec<f64>>,
    /// `L⁻¹ A_sᵀ y`.
    z: Vec<f64>,
    log_det: f64,
    data: f64,
}

/// Candidate border for one new atom.
#[derive(Clone, Debug)]
pub(crate) struct Border {
    pub atom: usize,
    w: Vec<f64>,
    pivot: f64,
    z_new: f64,
}

impl Border {
    /// Change in `yᵀA_sQ_s⁻¹A_sᵀy`.
    pub fn data_gain(&self) -> f64 {
        self.z_new * self.z_new
    }

    /// Change in `ln det Q_s`.
    pub fn log_det_gain(&self) -> f64 {
        2.0 * self.pivot.ln()
    }
}

impl GrowingCholesky {
    pub fn new() -> Self {
        Self {
            atoms: Vec::new(),
            rows: Vec::new(),
            z: Vec::new(),
            log_det: 0.0,
            data: 0.0,
        }
    }

    pub fn atoms(&self) -> &[usize] {
        &self.atoms
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `yᵀA_sQ_s⁻¹A_sᵀy`.
    pub fn data(&self) -> f64 {
        self.data
    }

    /// Border for adding `atom`, with `aty = Aᵀy`. `None` when the pivot is
    /// not strictly positive in floating point.
    pub fn border(&self, model: &SignalModel, aty: &DVector<f64>, atom: usize) -> Option<Border> {
        let gram = model.gram();
        let k = self.atoms.len();
        let mut w = Vec::with_capacity(k);
        for r in 0..k {
            let row = &self.rows[r];
            let mut acc = gram[(self.atoms[r], atom)];
            for (c, wc) in w.iter().enumerate() {
                acc -= row[c] * wc;
            }
            w.push(acc / row[r]);
        }
        let diag = gram[(atom, atom)] + model.noise_var() / model.coef_vars()[atom];
        let pivot_sq = diag - w.iter().map(|v| v * v).sum::<f64>();
        if !(pivot_sq > 0.0) {
            return None;
        }
        let pivot = pivot_sq.sqrt();
        let proj: f64 = w.iter().zip(&self.z).map(|(a, b)| a * b).sum();
        let z_new = (aty[atom] - proj) / pivot;
        Some(Border {
            atom,
            w,
            pivot,
            z_new,
        })
    }

    pub fn push(&mut self, border: Border) {
        self.data += border.data_gain();
        self.log_det += border.log_det_gain();
        let mut row = border.w;
        row.push(border.pivot);
        self.rows.push(row);
        self.z.push(border.z_new);
        self.atoms.push(border.atom);
    }

    /// `Q_s⁻¹ A_sᵀ y`, ordered like `atoms()`.
    pub fn solve(&self) -> Vec<f64> {
        let k = self.atoms.len();
        let mut x = self.z.clone();
        for r in (0..k).rev() {
            let mut acc = x[r];
            for c in (r + 1)..k {
                acc -= self.rows[c][r] * x[c];
            }
            x[r] = acc / self.rows[r][r];
        }
        x
    }
}
