//! Dense kernels shared by the inference and training paths.
//!
//! Matrices are row-major slices. Everything is generic over [`Real`] so the
//! same code runs in 32-bit (training, inference) and 64-bit (gradient checks).

use num_traits::Float;

pub trait Real:
    Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + std::ops::AddAssign + 'static
{
    /// `c = alpha * a * b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(
        rs >= 0 && cs >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand's extent was bounds-checked above and
                // `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `c (+)= a[m,k] * b[k,n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c (+)= a[k,m]^T * b[k,n]`; the weight-gradient shape.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `c (+)= a[m,k] * b[n,k]^T`; the input-gradient shape.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Writes the normalized rows (before scale/shift) to
/// `xhat` and the reciprocal standard deviations to `rstd`.
pub fn layer_norm<T: Real>(
    x: &[T],
    scale: &[T],
    bias: &[T],
    d: usize,
    out: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.as_f64() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = T::of(rs);
        let o = &mut out[r * d..(r + 1) * d];
        let xh = &mut xhat[r * d..(r + 1) * d];
        for j in 0..d {
            let h = T::of((row[j].as_f64() - mean) * rs);
            xh[j] = h;
            o[j] = h * scale[j] + bias[j];
        }
    }
}

/// Backward of [`layer_norm`]; accumulates into `dx`, `dscale`, `dbias`.
pub fn layer_norm_backward<T: Real>(
    dout: &[T],
    xhat: &[T],
    rstd: &[T],
    scale: &[T],
    d: usize,
    dx: &mut [T],
    dscale: &mut [T],
    dbias: &mut [T],
) {
    for r in 0..rstd.len() {
        let go = &dout[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for j in 0..d {
            dscale[j] += go[j] * xh[j];
            dbias[j] += go[j];
            let g = (go[j] * scale[j]).as_f64();
            sum_g += g;
            sum_gx += g * xh[j].as_f64();
        }
        let mean_g = sum_g / d as f64;
        let mean_gx = sum_gx / d as f64;
        let rs = rstd[r].as_f64();
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let g = (go[j] * scale[j]).as_f64();
            dxr[j] += T::of(rs * (g - mean_g - xh[j].as_f64() * mean_gx));
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let x = x.as_f64();
    T::of(0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let x = x.as_f64();
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    T::of(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)
}

/// In-place softmax of one row, accumulating in 64 bits.
pub fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let mut sum = 0.0f64;
    let exps: Vec<f64> = row
        .iter()
        .map(|v| {
            let e = (v.as_f64() - max).exp();
            sum += e;
            e
        })
        .collect();
    for (v, e) in row.iter_mut().zip(exps) {
        *v = T::of(e / sum);
    }
}

/// `log softmax(row)[target]` in 64 bits.
pub fn log_softmax_at<T: Real>(row: &[T], target: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let lse = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
    row[target].as_f64() - lse
}
