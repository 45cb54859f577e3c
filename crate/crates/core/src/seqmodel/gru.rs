//! Gated recurrent unit cell, forward and backward.
//!
//! Gate layout in the stacked weights is `[reset; update; candidate]`:
//!
//! ```text
//! r  = σ(W_r x + b_r + U_r h + c_r)
//! z  = σ(W_z x + b_z + U_z h + c_z)
//! n  = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use super::tensor::{sigmoid, Mat};

pub struct GruWeights<'a> {
    pub w: &'a Mat,
    pub u: &'a Mat,
    pub bx: &'a Mat,
    pub bh: &'a Mat,
}

pub struct GruGrads<'a> {
    pub w: &'a mut Mat,
    pub u: &'a mut Mat,
    pub bx: &'a mut Mat,
    pub bh: &'a mut Mat,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n h + c_n`, needed for the reset-gate gradient.
    pub hn: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn step(p: &GruWeights<'_>, x: Vec<f64>, h_prev: &[f64]) -> GruCache {
    let hd = h_prev.len();
    let mut gx = p.bx.data.clone();
    p.w.matvec_acc(&x, &mut gx);
    let mut gh = p.bh.data.clone();
    p.u.matvec_acc(h_prev, &mut gh);
    let mut r = vec![0.0; hd];
    let mut z = vec![0.0; hd];
    let mut n = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for i in 0..hd {
        r[i] = sigmoid(gx[i] + gh[i]);
        z[i] = sigmoid(gx[hd + i] + gh[hd + i]);
        n[i] = (gx[2 * hd + i] + r[i] * gh[2 * hd + i]).tanh();
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
    GruCache {
        x,
        h_prev: h_prev.to_vec(),
        r,
        z,
        n,
        hn: gh[2 * hd..].to_vec(),
        h,
    }
}

/// Accumulates parameter gradients; returns `(dx, dh_prev)`.
pub fn backward(p: &GruWeights<'_>, g: &mut GruGrads<'_>, c: &GruCache, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = dh.len();
    let mut dgx = vec![0.0; 3 * hd];
    let mut dgh = vec![0.0; 3 * hd];
    let mut dh_prev = vec![0.0; hd];
    for i in 0..hd {
        let dn = dh[i] * (1.0 - c.z[i]);
        let dz = dh[i] * (c.h_prev[i] - c.n[i]);
        dh_prev[i] = dh[i] * c.z[i];
        let dn_pre = dn * (1.0 - c.n[i] * c.n[i]);
        let dr = dn_pre * c.hn[i];
        let dr_pre = dr * c.r[i] * (1.0 - c.r[i]);
        let dz_pre = dz * c.z[i] * (1.0 - c.z[i]);
        dgx[i] = dr_pre;
        dgx[hd + i] = dz_pre;
        dgx[2 * hd + i] = dn_pre;
        dgh[i] = dr_pre;
        dgh[hd + i] = dz_pre;
        dgh[2 * hd + i] = dn_pre * c.r[i];
    }
    g.w.outer_acc(&dgx, &c.x);
    g.u.outer_acc(&dgh, &c.h_prev);
    super::tensor::add_into(&mut g.bx.data, &dgx);
    super::tensor::add_into(&mut g.bh.data, &dgh);
    let mut dx = vec![0.0; c.x.len()];
    p.w.matvec_t_acc(&dgx, &mut dx);
    p.u.matvec_t_acc(&dgh, &mut dh_prev);
    (dx, dh_prev)
}
