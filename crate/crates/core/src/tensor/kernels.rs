//! Flat-slice numeric kernels behind the tensor ops.
//!
//! Everything here works on row-major `&[f64]` buffers with explicit
//! dimensions and is written for a single core: the matmul is tiled so the
//! B panel stays L1-resident and the per-tile accumulators live in
//! registers, and the scan keeps its lane loop free of cross-lane
//! dependencies so it auto-vectorizes.

use super::fastmath;

/// Column-tile width of the matmul micro-kernel (two 8-lane vectors).
const MM_TILE: usize = 16;
/// K-blocking so a `MM_KB x MM_TILE` B panel is ~16 KB (L1-resident).
const MM_KB: usize = 128;
/// Rows per register block in the main matmul loop.
const MM_ROWS: usize = 8;

/// `out[m,n] += a[m,k] * b[k,n]`. `out` must be zeroed by the caller when a
/// plain product is wanted.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let n_main = n - n % MM_TILE;
    for k0 in (0..k).step_by(MM_KB) {
        let k1 = (k0 + MM_KB).min(k);
        let klen = k1 - k0;
        for j0 in (0..n_main).step_by(MM_TILE) {
            // Four rows at a time: 4 x MM_TILE accumulators give enough
            // independent FMA chains to cover the instruction latency; a
            // single row's two vector accumulators leave the units mostly
            // idle.
            let m_main = m - m % MM_ROWS;
            for i0 in (0..m_main).step_by(MM_ROWS) {
                // The re-slice to exactly `klen` lets the row indexing in
                // the hot loop drop its bounds checks.
                let rows: [&[f64]; MM_ROWS] =
                    std::array::from_fn(|r| &a[(i0 + r) * k + k0..(i0 + r) * k + k1][..klen]);
                let mut acc = [[0.0f64; MM_TILE]; MM_ROWS];
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    acc_r.copy_from_slice(&out[(i0 + r) * n + j0..(i0 + r) * n + j0 + MM_TILE]);
                }
                for kk in 0..klen {
                    let boff = (k0 + kk) * n + j0;
                    let brow: &[f64; MM_TILE] = b[boff..boff + MM_TILE].try_into().unwrap();
                    for r in 0..MM_ROWS {
                        let av = rows[r][kk];
                        for t in 0..MM_TILE {
                            acc[r][t] += av * brow[t];
                        }
                    }
                }
                for (r, acc_r) in acc.iter().enumerate() {
                    out[(i0 + r) * n + j0..(i0 + r) * n + j0 + MM_TILE].copy_from_slice(acc_r);
                }
            }
            for i in m_main..m {
                let arow = &a[i * k + k0..i * k + k1];
                let mut acc = [0.0f64; MM_TILE];
                acc.copy_from_slice(&out[i * n + j0..i * n + j0 + MM_TILE]);
                for (kk, &av) in arow.iter().enumerate() {
                    let brow: &[f64; MM_TILE] =
                        b[(k0 + kk) * n + j0..(k0 + kk) * n + j0 + MM_TILE]
                            .try_into()
                            .unwrap();
                    for t in 0..MM_TILE {
                        acc[t] += av * brow[t];
                    }
                }
                out[i * n + j0..i * n + j0 + MM_TILE].copy_from_slice(&acc);
            }
        }
        // Ragged right edge.
        if n_main < n {
            for i in 0..m {
                let arow = &a[i * k + k0..i * k + k1];
                for (kk, &av) in arow.iter().enumerate() {
                    let brow = &b[(k0 + kk) * n + n_main..(k0 + kk) * n + n];
                    let orow = &mut out[i * n + n_main..i * n + n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
}

/// `a[m,k] * b[k,n]` into a fresh buffer.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, &mut out, m, k, n);
    out
}

/// Transpose a row-major `[rows, cols]` matrix.
pub fn transpose2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Output length of a strided convolution.
pub fn conv1d_out_len(l_in: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    let span = l_in + 2 * padding;
    if span < kernel {
        0
    } else {
        (span - kernel) / stride + 1
    }
}

/// Valid `t` range such that `t*stride + kk - padding` lands in `[0, l_in)`.
#[inline]
fn conv_t_range(l_in: usize, l_out: usize, stride: usize, padding: usize, kk: usize) -> (usize, usize) {
    let t0 = if padding > kk {
        (padding - kk).div_ceil(stride)
    } else {
        0
    };
    let t1 = ((l_in + padding - kk - 1) / stride + 1).min(l_out);
    (t0, t1.max(t0))
}

/// Dense 1-d convolution: `y[co,t] = sum_{ci,kk} w[co,ci,kk] * x[ci, t*stride + kk - padding]`
/// with zero padding outside the signal.
pub fn conv1d_fwd(
    x: &[f64],
    w: &[f64],
    c_in: usize,
    l_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let l_out = conv1d_out_len(l_in, kernel, stride, padding);
    let mut y = vec![0.0; c_out * l_out];
    for co in 0..c_out {
        for ci in 0..c_in {
            for kk in 0..kernel {
                let wv = w[(co * c_in + ci) * kernel + kk];
                let (t0, t1) = conv_t_range(l_in, l_out, stride, padding, kk);
                let yrow = &mut y[co * l_out..(co + 1) * l_out];
                let xrow = &x[ci * l_in..(ci + 1) * l_in];
                for t in t0..t1 {
                    yrow[t] += wv * xrow[t * stride + kk - padding];
                }
            }
        }
    }
    y
}

/// Gradients of [`conv1d_fwd`] with respect to the signal and the weights.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_bwd(
    gy: &[f64],
    x: &[f64],
    w: &[f64],
    c_in: usize,
    l_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    let l_out = conv1d_out_len(l_in, kernel, stride, padding);
    for co in 0..c_out {
        for ci in 0..c_in {
            for kk in 0..kernel {
                let wv = w[(co * c_in + ci) * kernel + kk];
                let (t0, t1) = conv_t_range(l_in, l_out, stride, padding, kk);
                let grow = &gy[co * l_out..(co + 1) * l_out];
                let xrow = &x[ci * l_in..(ci + 1) * l_in];
                let dxrow = &mut dx[ci * l_in..(ci + 1) * l_in];
                let mut wacc = 0.0;
                for t in t0..t1 {
                    let j = t * stride + kk - padding;
                    wacc += grow[t] * xrow[j];
                    dxrow[j] += grow[t] * wv;
                }
                dw[(co * c_in + ci) * kernel + kk] += wacc;
            }
        }
    }
}

/// Depthwise 1-d convolution with explicit left padding and unit stride;
/// output length equals input length when `pad_left = kernel - 1` (causal).
pub fn dwconv1d_fwd(
    x: &[f64],
    w: &[f64],
    channels: usize,
    l_in: usize,
    kernel: usize,
    pad_left: usize,
) -> Vec<f64> {
    let l_out = l_in + pad_left + 1 - kernel;
    let mut y = vec![0.0; channels * l_out];
    for ch in 0..channels {
        for kk in 0..kernel {
            let wv = w[ch * kernel + kk];
            let t0 = pad_left.saturating_sub(kk);
            let t1 = (l_in + pad_left - kk).min(l_out);
            let yrow = &mut y[ch * l_out..(ch + 1) * l_out];
            let xrow = &x[ch * l_in..(ch + 1) * l_in];
            for t in t0..t1 {
                yrow[t] += wv * xrow[t + kk - pad_left];
            }
        }
    }
    y
}

/// Gradients of [`dwconv1d_fwd`].
pub fn dwconv1d_bwd(
    gy: &[f64],
    x: &[f64],
    w: &[f64],
    channels: usize,
    l_in: usize,
    kernel: usize,
    pad_left: usize,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    let l_out = l_in + pad_left + 1 - kernel;
    for ch in 0..channels {
        for kk in 0..kernel {
            let wv = w[ch * kernel + kk];
            let t0 = pad_left.saturating_sub(kk);
            let t1 = (l_in + pad_left - kk).min(l_out);
            let grow = &gy[ch * l_out..(ch + 1) * l_out];
            let xrow = &x[ch * l_in..(ch + 1) * l_in];
            let dxrow = &mut dx[ch * l_in..(ch + 1) * l_in];
            let mut wacc = 0.0;
            for t in t0..t1 {
                let j = t + kk - pad_left;
                wacc += grow[t] * xrow[j];
                dxrow[j] += grow[t] * wv;
            }
            dw[ch * kernel + kk] += wacc;
        }
    }
}

/// Layer norm over the last axis. Returns `(y, stats)` where `stats` holds
/// the per-row mean followed by the per-row reciprocal standard deviation
/// (needed by the backward pass).
pub fn layer_norm_fwd(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    d: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut stats = vec![0.0; 2 * rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        stats[r] = mean;
        stats[rows + r] = rstd;
        let yr = &mut y[r * d..(r + 1) * d];
        for j in 0..d {
            yr[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
        }
    }
    (y, stats)
}

/// Gradients of [`layer_norm_fwd`] given the saved row statistics.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_bwd(
    gy: &[f64],
    x: &[f64],
    gain: &[f64],
    stats: &[f64],
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let rows = x.len() / d;
    let dn = d as f64;
    for r in 0..rows {
        let mean = stats[r];
        let rstd = stats[rows + r];
        let xr = &x[r * d..(r + 1) * d];
        let gr = &gy[r * d..(r + 1) * d];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let xhat = (xr[j] - mean) * rstd;
            let dxhat = gr[j] * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[j] += gr[j] * xhat;
            dbias[j] += gr[j];
        }
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xhat = (xr[j] - mean) * rstd;
            let dxhat = gr[j] * gain[j];
            dxr[j] += rstd * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
        }
    }
}

/// Zero-order-hold discretization factors for one scalar state:
/// `a_d = e^{a dt}` and `phi = (e^{a dt} - 1)/a`, with the series fallback
/// `phi ≈ dt (1 + a dt / 2)` when `|a dt|` is tiny. The input multiplier is
/// `b_d = phi * b`. Uses the vectorizable [`fastmath::exp`].
#[inline(always)]
fn zoh_factors(a: f64, dt: f64) -> (f64, f64) {
    let x = a * dt;
    let small = x.abs() < 1e-8;
    let ad = fastmath::exp(x);
    let denom = if small { 1.0 } else { a };
    let phi = if small {
        dt * (1.0 + 0.5 * x)
    } else {
        (ad - 1.0) / denom
    };
    (ad, phi)
}

/// Fused selective-scan forward over a `[l, d]` sequence with `n` states per
/// channel. `u, delta: [l, d]`, `a: [d, n]`, `b, c: [l, n]`, output `[l, d]`.
/// When `save_h` is set the full state history `[(l+1), d, n]` (initial zero
/// state first) is returned for the backward pass.
pub fn scan_fwd(
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    l: usize,
    d: usize,
    n: usize,
    save_h: bool,
) -> (Vec<f64>, Vec<f64>) {
    let dn = d * n;
    let mut y = vec![0.0; l * d];
    let mut h = vec![0.0; dn];
    let mut hist = if save_h { vec![0.0; (l + 1) * dn] } else { Vec::new() };
    let nb = n - n % 8;
    for t in 0..l {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        for ch in 0..d {
            let dv = delta[t * d + ch];
            let uv = u[t * d + ch];
            let arow = &a[ch * n..(ch + 1) * n];
            let hrow = &mut h[ch * n..(ch + 1) * n];
            // Eight independent partial sums so the state update and the
            // output reduction vectorize; a plain `acc +=` over k would
            // serialize the whole lane loop (FP addition is not
            // reassociable), taking the exp evaluation scalar with it.
            let mut acc = [0.0f64; 8];
            let mut k = 0;
            while k < nb {
                let a8: &[f64; 8] = arow[k..k + 8].try_into().unwrap();
                let h8: &mut [f64; 8] = (&mut hrow[k..k + 8]).try_into().unwrap();
                let b8: &[f64; 8] = bt[k..k + 8].try_into().unwrap();
                let c8: &[f64; 8] = ct[k..k + 8].try_into().unwrap();
                for j in 0..8 {
                    let (ad, phi) = zoh_factors(a8[j], dv);
                    let hv = ad * h8[j] + phi * b8[j] * uv;
                    h8[j] = hv;
                    acc[j] += c8[j] * hv;
                }
                k += 8;
            }
            let mut tail = 0.0;
            for k in nb..n {
                let (ad, phi) = zoh_factors(arow[k], dv);
                hrow[k] = ad * hrow[k] + phi * bt[k] * uv;
                tail += ct[k] * hrow[k];
            }
            y[t * d + ch] = acc.iter().sum::<f64>() + tail;
        }
        if save_h {
            hist[(t + 1) * dn..(t + 2) * dn].copy_from_slice(&h);
        }
    }
    (y, hist)
}

/// Reverse-mode sweep of [`scan_fwd`] using the saved state history.
/// Accumulates into the five gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn scan_bwd(
    gy: &[f64],
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    hist: &[f64],
    l: usize,
    d: usize,
    n: usize,
    du: &mut [f64],
    ddelta: &mut [f64],
    da: &mut [f64],
    db: &mut [f64],
    dc: &mut [f64],
) {
    let dn = d * n;
    // hbar[ch,k] is the adjoint of h after step t has consumed it.
    let mut hbar = vec![0.0; dn];
    let nb = n - n % 8;
    for t in (0..l).rev() {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        let dbt = &mut db[t * n..(t + 1) * n];
        let dct = &mut dc[t * n..(t + 1) * n];
        let hcur = &hist[(t + 1) * dn..(t + 2) * dn];
        let hprev = &hist[t * dn..(t + 1) * dn];
        for ch in 0..d {
            let dv = delta[t * d + ch];
            let uv = u[t * d + ch];
            let gyv = gy[t * d + ch];
            let arow = &a[ch * n..(ch + 1) * n];
            let darow = &mut da[ch * n..(ch + 1) * n];
            let hbrow = &mut hbar[ch * n..(ch + 1) * n];
            // Partial sums per lane, as in scan_fwd, so the sweep vectorizes.
            let mut du_acc = [0.0f64; 8];
            let mut ddt_acc = [0.0f64; 8];
            let mut k = 0;
            while k < nb {
                let hc8: &[f64; 8] = hcur[ch * n + k..ch * n + k + 8].try_into().unwrap();
                let hp8: &[f64; 8] = hprev[ch * n + k..ch * n + k + 8].try_into().unwrap();
                let a8: &[f64; 8] = arow[k..k + 8].try_into().unwrap();
                let b8: &[f64; 8] = bt[k..k + 8].try_into().unwrap();
                let c8: &[f64; 8] = ct[k..k + 8].try_into().unwrap();
                let db8: &mut [f64; 8] = (&mut dbt[k..k + 8]).try_into().unwrap();
                let dc8: &mut [f64; 8] = (&mut dct[k..k + 8]).try_into().unwrap();
                let da8: &mut [f64; 8] = (&mut darow[k..k + 8]).try_into().unwrap();
                let hb8: &mut [f64; 8] = (&mut hbrow[k..k + 8]).try_into().unwrap();
                for j in 0..8 {
                    // y[t] = sum_k c[t,k] h[t,k]: h picks up gy c, c picks up gy h.
                    dc8[j] += gyv * hc8[j];
                    let hb = hb8[j] + gyv * c8[j];
                    let av = a8[j];
                    let x = av * dv;
                    let small = x.abs() < 1e-8;
                    let ad = fastmath::exp(x);
                    let denom = if small { 1.0 } else { av };
                    let phi = if small { dv * (1.0 + 0.5 * x) } else { (ad - 1.0) / denom };
                    // h = ad hprev + phi b u
                    du_acc[j] += hb * phi * b8[j];
                    db8[j] += hb * phi * uv;
                    // d(ad)/d(dt) = a e^{a dt}; d(phi)/d(dt) = e^{a dt} (both branches).
                    ddt_acc[j] += hb * (av * ad * hp8[j] + ad * b8[j] * uv);
                    // d(ad)/da = dt e^{a dt};
                    // d(phi)/da = (dt e^{a dt} - phi)/a, series dt^2 (1/2 + a dt/3).
                    let dphi_da = if small {
                        dv * dv * (0.5 + x / 3.0)
                    } else {
                        (dv * ad - phi) / denom
                    };
                    da8[j] += hb * (dv * ad * hp8[j] + dphi_da * b8[j] * uv);
                    hb8[j] = hb * ad;
                }
                k += 8;
            }
            let mut du_tail = 0.0;
            let mut ddt_tail = 0.0;
            for k in nb..n {
                let hc = hcur[ch * n + k];
                let hp = hprev[ch * n + k];
                dct[k] += gyv * hc;
                let hb = hbrow[k] + gyv * ct[k];
                let av = arow[k];
                let x = av * dv;
                let small = x.abs() < 1e-8;
                let ad = fastmath::exp(x);
                let denom = if small { 1.0 } else { av };
                let phi = if small { dv * (1.0 + 0.5 * x) } else { (ad - 1.0) / denom };
                du_tail += hb * phi * bt[k];
                dbt[k] += hb * phi * uv;
                ddt_tail += hb * (av * ad * hp + ad * bt[k] * uv);
                let dphi_da = if small {
                    dv * dv * (0.5 + x / 3.0)
                } else {
                    (dv * ad - phi) / denom
                };
                darow[k] += hb * (dv * ad * hp + dphi_da * bt[k] * uv);
                hbrow[k] = hb * ad;
            }
            du[t * d + ch] += du_acc.iter().sum::<f64>() + du_tail;
            ddelta[t * d + ch] += ddt_acc.iter().sum::<f64>() + ddt_tail;
        }
    }
}
