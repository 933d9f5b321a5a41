//! Raw f64 compute kernels backing the tape primitives.
//!
//! Everything is row-major. The GEMM calls go through `matrixmultiply`;
//! the rest are straightforward loops kept allocation-free so the tape
//! controls all buffer lifetimes.

/// c = a[m,k] @ b[k,n] + beta * c
pub fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c = a[m,k] @ b[n,k]^T + beta * c
pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// c = a[k,m]^T @ b[k,n] + beta * c
pub fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable in-place softmax over each row of x[rows, cols].
pub fn softmax_rows(x: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * cols);
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Softmax backward: dx = p * (dy - sum(dy * p)) per row, accumulated into dx.
pub fn softmax_rows_backward(p: &[f64], dy: &[f64], rows: usize, cols: usize, dx: &mut [f64]) {
    for r in 0..rows {
        let o = r * cols;
        let mut dot = 0.0;
        for c in 0..cols {
            dot += dy[o + c] * p[o + c];
        }
        for c in 0..cols {
            dx[o + c] += p[o + c] * (dy[o + c] - dot);
        }
    }
}

/// Layer norm over the last axis. Writes the normalized output into `out`
/// and (mean, rstd) per row into `cache` (len 2*rows).
pub fn layernorm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    rows: usize,
    cols: usize,
    out: &mut [f64],
    cache: &mut [f64],
) {
    debug_assert_eq!(cache.len(), 2 * rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        cache[2 * r] = mean;
        cache[2 * r + 1] = rstd;
        for c in 0..cols {
            out[r * cols + c] = (row[c] - mean) * rstd * gamma[c] + beta[c];
        }
    }
}

/// Layer norm backward. Accumulates into dx, dgamma, dbeta.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    x: &[f64],
    gamma: &[f64],
    cache: &[f64],
    dy: &[f64],
    rows: usize,
    cols: usize,
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let n = cols as f64;
    for r in 0..rows {
        let o = r * cols;
        let mean = cache[2 * r];
        let rstd = cache[2 * r + 1];
        // xhat = (x - mean) * rstd; dy_hat = dy * gamma
        let mut sum_dyh = 0.0;
        let mut sum_dyh_xhat = 0.0;
        for c in 0..cols {
            let xhat = (x[o + c] - mean) * rstd;
            let dyh = dy[o + c] * gamma[c];
            sum_dyh += dyh;
            sum_dyh_xhat += dyh * xhat;
            dgamma[c] += dy[o + c] * xhat;
            dbeta[c] += dy[o + c];
        }
        for c in 0..cols {
            let xhat = (x[o + c] - mean) * rstd;
            let dyh = dy[o + c] * gamma[c];
            dx[o + c] += rstd * (dyh - sum_dyh / n - xhat * sum_dyh_xhat / n);
        }
    }
}

/// Multi-head causal scaled dot-product attention forward.
///
/// q, k, v are [t, d] with d = heads * dh. Position i attends to j <= i.
/// Writes output into `out` [t, d] and the attention probabilities into
/// `probs` [heads, t, t] (upper triangle left as zeros).
pub fn causal_attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    heads: usize,
    t: usize,
    d: usize,
    out: &mut [f64],
    probs: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    debug_assert_eq!(probs.len(), heads * t * t);
    for h in 0..heads {
        let hoff = h * dh;
        for i in 0..t {
            let prow = &mut probs[h * t * t + i * t..h * t * t + i * t + t];
            let qi = &q[i * d + hoff..i * d + hoff + dh];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k[j * d + hoff..j * d + hoff + dh];
                let mut s = 0.0;
                for c in 0..dh {
                    s += qi[c] * kj[c];
                }
                let s = s * scale;
                prow[j] = s;
                if s > max {
                    max = s;
                }
            }
            let mut sum = 0.0;
            for j in 0..=i {
                prow[j] = (prow[j] - max).exp();
                sum += prow[j];
            }
            let inv = 1.0 / sum;
            for j in 0..=i {
                prow[j] *= inv;
            }
            let orow = &mut out[i * d + hoff..i * d + hoff + dh];
            orow.fill(0.0);
            for j in 0..=i {
                let p = prow[j];
                let vj = &v[j * d + hoff..j * d + hoff + dh];
                for c in 0..dh {
                    orow[c] += p * vj[c];
                }
            }
        }
    }
}

/// Backward of `causal_attention_forward`. Accumulates into dq, dk, dv.
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    heads: usize,
    t: usize,
    d: usize,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let hoff = h * dh;
        for i in 0..t {
            let prow = &probs[h * t * t + i * t..h * t * t + i * t + t];
            let doi = &dout[i * d + hoff..i * d + hoff + dh];
            // dv[j] += p_ij * dout_i ; dp_j = dout_i . v_j
            let mut dot = 0.0;
            for j in 0..=i {
                let vj = &v[j * d + hoff..j * d + hoff + dh];
                let mut s = 0.0;
                for c in 0..dh {
                    s += doi[c] * vj[c];
                    dv[j * d + hoff + c] += prow[j] * doi[c];
                }
                dp[j] = s;
                dot += s * prow[j];
            }
            // softmax backward then score -> q, k
            let qi = &q[i * d + hoff..i * d + hoff + dh];
            for j in 0..=i {
                let ds = prow[j] * (dp[j] - dot) * scale;
                let kj = &k[j * d + hoff..j * d + hoff + dh];
                for c in 0..dh {
                    dq[i * d + hoff + c] += ds * kj[c];
                    dk[j * d + hoff + c] += ds * qi[c];
                }
            }
        }
    }
}

/// Cross entropy with logits per row: loss_i = logsumexp(row_i) - row_i[target_i].
/// Writes per-row losses into `losses` and softmax probabilities into `probs`.
pub fn cross_entropy_rows_forward(
    logits: &[f64],
    targets: &[usize],
    rows: usize,
    cols: usize,
    losses: &mut [f64],
    probs: &mut [f64],
) {
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            probs[r * cols + c] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for c in 0..cols {
            probs[r * cols + c] *= inv;
        }
        losses[r] = max + sum.ln() - row[targets[r]];
    }
}

/// Cross entropy backward: dlogits_i += (probs_i - onehot_i) * dloss_i.
pub fn cross_entropy_rows_backward(
    probs: &[f64],
    targets: &[usize],
    dlosses: &[f64],
    rows: usize,
    cols: usize,
    dlogits: &mut [f64],
) {
    for r in 0..rows {
        let dl = dlosses[r];
        if dl == 0.0 {
            continue;
        }
        for c in 0..cols {
            dlogits[r * cols + c] += probs[r * cols + c] * dl;
        }
        dlogits[r * cols + targets[r]] -= dl;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_nn_identity() {
        // [2x3] @ [3x2]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let mut c = [0.0; 4];
        gemm_nn(&a, &b, 2, 3, 2, 0.0, &mut c);
        assert_eq!(c, [1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn gemm_transposes_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // [2,3]
        let bt = [1.0, 3.0, 5.0, 2.0, 4.0, 6.0]; // [2,3], interpreted as b^T with b=[3,2]
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // [3,2]
        let mut c1 = [0.0; 4];
        let mut c2 = [0.0; 4];
        gemm_nn(&a, &b, 2, 3, 2, 0.0, &mut c1);
        gemm_nt(&a, &bt, 2, 3, 2, 0.0, &mut c2);
        assert_eq!(c1, c2);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // [3,2] = a^T
        let mut c3 = [0.0; 4];
        gemm_tn(&at, &b, 2, 3, 2, 0.0, &mut c3);
        assert_eq!(c1, c3);
    }

    #[test]
    fn softmax_uniform_on_zeros() {
        let mut x = [0.0, 0.0, 0.0];
        softmax_rows(&mut x, 1, 3);
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = [3.0, -1.0, 0.5, 10.0, 2.0, 2.0, 2.0, 2.0];
        softmax_rows(&mut x, 2, 4);
        for r in 0..2 {
            let s: f64 = x[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[cfg(test)]
mod perf_probe {
    use super::*;

    #[test]
    #[ignore = "manual perf probe"]
    fn gemm_throughput() {
        for &(m, k, n) in &[(16usize, 80usize, 80usize), (16, 80, 320), (16, 128, 128), (16, 128, 1200), (64, 256, 256), (256, 256, 256)] {
            let a = vec![1.0f64; m * k];
            let b = vec![1.0f64; k * n];
            let mut c = vec![0.0f64; m * n];
            let reps = (2_000_000_00 / (2 * m * k * n)).max(1);
            let t0 = std::time::Instant::now();
            for _ in 0..reps {
                gemm_nn(&a, &b, m, k, n, 0.0, &mut c);
            }
            let dt = t0.elapsed().as_secs_f64();
            let gflops = (2 * m * k * n * reps) as f64 / dt / 1e9;
            println!("[{m}x{k}x{n}] {gflops:.2} GFLOP/s");
        }
    }
}
