//! Hot numeric kernels. Everything computes in `f64`; parallel loops only
//! partition independent output elements, so each element's reduction order is
//! fixed and results are bitwise identical for any thread count.

use rayon::prelude::*;

/// `c = op_a(a) * op_b(b)` where stored `a` is `(m,k)` (or `(k,m)` when
/// `ta`) and stored `b` is `(k,n)` (or `(n,k)` when `tb`).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        match (ta, tb) {
            (false, false) => {
                let arow = &a[i * k..(i + 1) * k];
                for (p, &av) in arow.iter().enumerate() {
                    if av != 0.0 {
                        let brow = &b[p * n..(p + 1) * n];
                        for (r, &bv) in row.iter_mut().zip(brow) {
                            *r += av * bv;
                        }
                    }
                }
            }
            (false, true) => {
                let arow = &a[i * k..(i + 1) * k];
                for (j, r) in row.iter_mut().enumerate() {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (&av, &bv) in arow.iter().zip(brow) {
                        acc += av * bv;
                    }
                    *r = acc;
                }
            }
            (true, false) => {
                for p in 0..k {
                    let av = a[p * m + i];
                    if av != 0.0 {
                        let brow = &b[p * n..(p + 1) * n];
                        for (r, &bv) in row.iter_mut().zip(brow) {
                            *r += av * bv;
                        }
                    }
                }
            }
            (true, true) => {
                for (j, r) in row.iter_mut().enumerate() {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (p, &bv) in brow.iter().enumerate() {
                        acc += a[p * m + i] * bv;
                    }
                    *r = acc;
                }
            }
        }
    });
    out
}

/// Batched matmul over leading dimension `nb`: per-batch `(m,k)x(k,n)`,
/// with the second operand optionally transposed (stored `(n,k)`).
pub fn bmm(a: &[f64], b: &[f64], nb: usize, m: usize, k: usize, n: usize, tb: bool) -> Vec<f64> {
    let mut out = vec![0.0f64; nb * m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let (bi, i) = (r / m, r % m);
        let asub = &a[bi * m * k..(bi + 1) * m * k];
        let bsub = if tb {
            &b[bi * n * k..(bi + 1) * n * k]
        } else {
            &b[bi * k * n..(bi + 1) * k * n]
        };
        let arow = &asub[i * k..(i + 1) * k];
        if tb {
            for (j, r) in row.iter_mut().enumerate() {
                let brow = &bsub[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&av, &bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                *r = acc;
            }
        } else {
            for (p, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    let brow = &bsub[p * n..(p + 1) * n];
                    for (r, &bv) in row.iter_mut().zip(brow) {
                        *r += av * bv;
                    }
                }
            }
        }
    });
    out
}

/// 1-D convolution, stride 1, zero padding that preserves temporal length.
/// `x` is `(b, cin, l)`, `w` is `(cout, cin, ksize)`, optional bias `(cout)`.
pub fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    b: usize,
    cin: usize,
    cout: usize,
    l: usize,
    ksize: usize,
) -> Vec<f64> {
    let pad = (ksize - 1) / 2;
    let mut out = vec![0.0f64; b * cout * l];
    out.par_chunks_mut(l).enumerate().for_each(|(r, row)| {
        let (bi, co) = (r / cout, r % cout);
        if let Some(bias) = bias {
            row.fill(bias[co]);
        }
        for ci in 0..cin {
            let xrow = &x[(bi * cin + ci) * l..(bi * cin + ci + 1) * l];
            let wrow = &w[(co * cin + ci) * ksize..(co * cin + ci + 1) * ksize];
            for (dk, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                // out[t] += wv * x[t + dk - pad] over valid t
                let shift = dk as isize - pad as isize;
                let t0 = (-shift).max(0) as usize;
                let t1 = ((l as isize - shift).min(l as isize)).max(0) as usize;
                if t0 >= t1 {
                    continue;
                }
                let src = &xrow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                for (r, &xv) in row[t0..t1].iter_mut().zip(src) {
                    *r += wv * xv;
                }
            }
        }
    });
    out
}

/// Gradient w.r.t. the convolution input.
pub fn conv1d_backward_input(
    dy: &[f64],
    w: &[f64],
    b: usize,
    cin: usize,
    cout: usize,
    l: usize,
    ksize: usize,
) -> Vec<f64> {
    let pad = (ksize - 1) / 2;
    let mut dx = vec![0.0f64; b * cin * l];
    dx.par_chunks_mut(l).enumerate().for_each(|(r, row)| {
        let (bi, ci) = (r / cin, r % cin);
        for co in 0..cout {
            let dyrow = &dy[(bi * cout + co) * l..(bi * cout + co + 1) * l];
            let wrow = &w[(co * cin + ci) * ksize..(co * cin + ci + 1) * ksize];
            for (dk, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                // dx[t] += wv * dy[t - (dk - pad)]
                let shift = pad as isize - dk as isize;
                let t0 = (-shift).max(0) as usize;
                let t1 = ((l as isize - shift).min(l as isize)).max(0) as usize;
                if t0 >= t1 {
                    continue;
                }
                let src = &dyrow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                for (r, &gv) in row[t0..t1].iter_mut().zip(src) {
                    *r += wv * gv;
                }
            }
        }
    });
    dx
}

/// Gradients w.r.t. convolution weights and bias.
pub fn conv1d_backward_weights(
    dy: &[f64],
    x: &[f64],
    b: usize,
    cin: usize,
    cout: usize,
    l: usize,
    ksize: usize,
) -> (Vec<f64>, Vec<f64>) {
    let pad = (ksize - 1) / 2;
    let mut dw = vec![0.0f64; cout * cin * ksize];
    let mut db = vec![0.0f64; cout];
    dw.par_chunks_mut(cin * ksize)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(co, (dwrow, db))| {
            for bi in 0..b {
                let dyrow = &dy[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                for &g in dyrow {
                    *db += g;
                }
                for ci in 0..cin {
                    let xrow = &x[(bi * cin + ci) * l..(bi * cin + ci + 1) * l];
                    for dk in 0..ksize {
                        let shift = dk as isize - pad as isize;
                        let t0 = (-shift).max(0) as usize;
                        let t1 = ((l as isize - shift).min(l as isize)).max(0) as usize;
                        if t0 >= t1 {
                            continue;
                        }
                        let src = &xrow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                        let mut acc = 0.0;
                        for (&gv, &xv) in dyrow[t0..t1].iter().zip(src) {
                            acc += gv * xv;
                        }
                        dwrow[ci * ksize + dk] += acc;
                    }
                }
            }
        });
    (dw, db)
}

/// Max pooling with window `wsize` (odd), stride 1, length-preserving
/// padding. Returns pooled values and flat argmax indices for backward.
pub fn maxpool1d_forward(
    x: &[f64],
    rows: usize,
    l: usize,
    wsize: usize,
) -> (Vec<f64>, Vec<usize>) {
    let pad = (wsize - 1) / 2;
    let mut out = vec![0.0f64; rows * l];
    let mut arg = vec![0usize; rows * l];
    out.par_chunks_mut(l)
        .zip(arg.par_chunks_mut(l))
        .enumerate()
        .for_each(|(r, (orow, arow))| {
            let xrow = &x[r * l..(r + 1) * l];
            for t in 0..l {
                let lo = t.saturating_sub(pad);
                let hi = (t + pad + 1).min(l);
                let mut best = xrow[lo];
                let mut bi = lo;
                for (j, &v) in xrow[lo..hi].iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        bi = lo + j;
                    }
                }
                orow[t] = best;
                arow[t] = r * l + bi;
            }
        });
    (out, arg)
}

pub fn maxpool1d_backward(dy: &[f64], arg: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0f64; input_len];
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i] += g;
    }
    dx
}

/// Direct real DFT plan for temporal length `l`: trig tables for the
/// `l/2 + 1` nonnegative frequency bins. O(L^2) per row, which is the point:
/// correctness at desk scale is defined by the inversion identity, not speed.
pub struct DftPlan {
    pub l: usize,
    pub nf: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl DftPlan {
    pub fn new(l: usize) -> Self {
        let nf = l / 2 + 1;
        let mut cos = vec![0.0f64; nf * l];
        let mut sin = vec![0.0f64; nf * l];
        for f in 0..nf {
            for t in 0..l {
                // exact integer reduction keeps the angle in [0, 2pi)
                let r = (f * t) % l;
                let angle = 2.0 * std::f64::consts::PI * (r as f64) / (l as f64);
                cos[f * l + t] = angle.cos();
                sin[f * l + t] = angle.sin();
            }
        }
        DftPlan { l, nf, cos, sin }
    }

    /// Doubling factor per bin in the inverse transform: 1 for DC and (even
    /// lengths) Nyquist, 2 elsewhere.
    #[inline]
    fn bin_factor(&self, f: usize) -> f64 {
        if f == 0 || (self.l % 2 == 0 && f == self.nf - 1) {
            1.0
        } else {
            2.0
        }
    }

    /// Forward transform of one real row: `re[f] = sum_t x[t] cos(2pi f t / L)`,
    /// `im[f] = -sum_t x[t] sin(2pi f t / L)`.
    pub fn rfft_row(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        for f in 0..self.nf {
            let c = &self.cos[f * self.l..(f + 1) * self.l];
            let s = &self.sin[f * self.l..(f + 1) * self.l];
            let mut ar = 0.0;
            let mut ai = 0.0;
            for ((&xv, &cv), &sv) in x.iter().zip(c).zip(s) {
                ar += xv * cv;
                ai -= xv * sv;
            }
            re[f] = ar;
            im[f] = ai;
        }
    }

    /// Inverse transform assuming Hermitian symmetry of the full spectrum.
    pub fn irfft_row(&self, re: &[f64], im: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        for f in 0..self.nf {
            let fac = self.bin_factor(f) / self.l as f64;
            let (rf, if_) = (re[f] * fac, im[f] * fac);
            if rf == 0.0 && if_ == 0.0 {
                continue;
            }
            let c = &self.cos[f * self.l..(f + 1) * self.l];
            let s = &self.sin[f * self.l..(f + 1) * self.l];
            for ((xv, &cv), &sv) in x.iter_mut().zip(c).zip(s) {
                *xv += rf * cv - if_ * sv;
            }
        }
    }

    /// Adjoint of `irfft_row` as a real-linear map: temporal gradient in,
    /// per-bin gradient out.
    pub fn irfft_adjoint_row(&self, dy: &[f64], gre: &mut [f64], gim: &mut [f64]) {
        for f in 0..self.nf {
            let fac = self.bin_factor(f) / self.l as f64;
            let c = &self.cos[f * self.l..(f + 1) * self.l];
            let s = &self.sin[f * self.l..(f + 1) * self.l];
            let mut ar = 0.0;
            let mut ai = 0.0;
            for ((&gv, &cv), &sv) in dy.iter().zip(c).zip(s) {
                ar += gv * cv;
                ai -= gv * sv;
            }
            gre[f] = ar * fac;
            gim[f] = ai * fac;
        }
    }

    /// Adjoint of `rfft_row`: per-bin gradient in, temporal gradient out.
    pub fn rfft_adjoint_row(&self, are: &[f64], aim: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
        for f in 0..self.nf {
            let (rf, if_) = (are[f], aim[f]);
            if rf == 0.0 && if_ == 0.0 {
                continue;
            }
            let c = &self.cos[f * self.l..(f + 1) * self.l];
            let s = &self.sin[f * self.l..(f + 1) * self.l];
            for ((gv, &cv), &sv) in dx.iter_mut().zip(c).zip(s) {
                *gv += rf * cv - if_ * sv;
            }
        }
    }
}
