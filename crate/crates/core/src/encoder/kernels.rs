//! Dense row-major kernels.

pub(crate) const LN_EPS: f64 = 1e-5;

/// `c = a · b` (or `c += a · b` when `accumulate`), where `a` is `m × k` and
/// `b` is `k × n` after the optional transposes. A transposed operand is
/// stored row-major in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can produce.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn add_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
    }
}

pub(crate) fn bias_grad(dbias: &mut [f64], dout: &[f64]) {
    for row in dout.chunks_exact(dbias.len()) {
        dbias.iter_mut().zip(row).for_each(|(d, g)| *d += g);
    }
}

/// Row-wise layer norm. Writes normalized inputs to `xhat` and the inverse
/// standard deviations to `rstd`.
pub(crate) fn layernorm_forward(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    out: &mut [f64],
    xhat: &mut [f64],
    rstd: &mut [f64],
) {
    let d = gain.len();
    for (row, ((xr, or), hr)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(xhat.chunks_exact_mut(d)).enumerate() {
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[row] = r;
        for j in 0..d {
            let h = (xr[j] - mean) * r;
            hr[j] = h;
            or[j] = h * gain[j] + bias[j];
        }
    }
}

/// Accumulates into `dx`, `dgain`, `dbias`.
pub(crate) fn layernorm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let d = gain.len();
    let mut dxhat = vec![0.0; d];
    for (row, ((dyr, hr), dxr)) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).enumerate() {
        if dyr.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut mean_d = 0.0;
        let mut mean_dh = 0.0;
        for j in 0..d {
            dxhat[j] = dyr[j] * gain[j];
            dgain[j] += dyr[j] * hr[j];
            dbias[j] += dyr[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hr[j];
        }
        mean_d /= d as f64;
        mean_dh /= d as f64;
        let r = rstd[row];
        for j in 0..d {
            dxr[j] += r * (dxhat[j] - mean_d - hr[j] * mean_dh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU, written as `u * sigmoid(2a)`. Returns the value
/// and the sigmoid, which `gelu_grad_with` reuses.
pub(crate) fn gelu_parts(u: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-2.0 * GELU_C * (u + GELU_K * u * u * u)).exp());
    (u * s, s)
}

pub(crate) fn gelu_grad_with(u: f64, s: f64) -> f64 {
    s + 2.0 * u * s * (1.0 - s) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

#[cfg(test)]
fn gelu(u: f64) -> f64 {
    gelu_parts(u).0
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}
