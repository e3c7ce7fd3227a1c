//! Raw slice kernels behind the graph ops. All spatial buffers are HWC row-major.

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n`, both row-major
/// unless the matching `*_t` flag says the buffer stores the transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
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

/// Patch matrix of shape `(h*w) x (k*k*cin)` for a same-padded `k x k` convolution.
pub(crate) fn im2col(input: &[f64], h: usize, w: usize, cin: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let row = k * k * cin;
    let mut cols = vec![0.0; h * w * row];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut cols[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * cin;
                    let off = (ky * k + kx) * cin;
                    dst[off..off + cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    cols
}

/// Scatter-add of a patch-matrix gradient back onto the input grid.
pub(crate) fn col2im_add(
    cols: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    out: &mut [f64],
) {
    let pad = (k / 2) as isize;
    let row = k * k * cin;
    for y in 0..h {
        for x in 0..w {
            let src = &cols[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * cin;
                    let off = (ky * k + kx) * cin;
                    for (d, s) in out[dst..dst + cin].iter_mut().zip(&src[off..off + cin]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

pub(crate) fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
    d: &ConvDims,
) -> Vec<f64> {
    let hw = d.h * d.w;
    let kk = d.k * d.k * d.cin;
    let mut out = vec![0.0; hw * d.cout];
    for px in out.chunks_exact_mut(d.cout.max(1)) {
        px.copy_from_slice(bias);
    }
    if d.k == 1 {
        gemm(hw, kk, d.cout, input, false, kernel, false, 1.0, &mut out);
    } else {
        let cols = im2col(input, d.h, d.w, d.cin, d.k);
        gemm(hw, kk, d.cout, &cols, false, kernel, false, 1.0, &mut out);
    }
    out
}

/// Gradients of a same-padded convolution. `None` skips an argument that does
/// not need a gradient.
pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    upstream: &[f64],
    d: &ConvDims,
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let hw = d.h * d.w;
    let kk = d.k * d.k * d.cin;
    if let Some(gb) = grad_bias {
        for px in upstream.chunks_exact(d.cout.max(1)) {
            for (g, u) in gb.iter_mut().zip(px) {
                *g += u;
            }
        }
    }
    let cols;
    let patches: &[f64] = if d.k == 1 {
        input
    } else if grad_kernel.is_some() {
        cols = im2col(input, d.h, d.w, d.cin, d.k);
        &cols
    } else {
        &[]
    };
    if let Some(gk) = grad_kernel {
        gemm(kk, hw, d.cout, patches, true, upstream, false, 1.0, gk);
    }
    if let Some(gi) = grad_input {
        if d.k == 1 {
            gemm(hw, d.cout, kk, upstream, false, kernel, true, 1.0, gi);
        } else {
            let mut dcols = vec![0.0; hw * kk];
            gemm(hw, d.cout, kk, upstream, false, kernel, true, 0.0, &mut dcols);
            col2im_add(&dcols, d.h, d.w, d.cin, d.k, gi);
        }
    }
}

/// 2x2 stride-2 max pooling with partial edge windows. Returns the pooled
/// values and, per output element, the flat input index that won. Ties go to
/// the first element in row-major scan order.
pub(crate) fn maxpool2_forward(
    input: &[f64],
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    let mut arg = vec![usize::MAX; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for dy in 0..2 {
                let y = oy * 2 + dy;
                if y >= h {
                    continue;
                }
                for dx in 0..2 {
                    let x = ox * 2 + dx;
                    if x >= w {
                        continue;
                    }
                    let src = (y * w + x) * c;
                    let dst = (oy * ow + ox) * c;
                    for ch in 0..c {
                        let v = input[src + ch];
                        if arg[dst + ch] == usize::MAX || v > out[dst + ch] {
                            out[dst + ch] = v;
                            arg[dst + ch] = src + ch;
                        }
                    }
                }
            }
        }
    }
    (out, arg, oh, ow)
}

/// Per-axis sampling plan for align-corners-false bilinear resizing.
#[derive(Debug, Clone)]
pub(crate) struct AxisPlan {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisPlan {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for i in 0..dst {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let l = (pos.floor() as usize).min(src - 1);
            let h = (l + 1).min(src - 1);
            lo.push(l);
            hi.push(h);
            frac.push(if l == h { 0.0 } else { pos - l as f64 });
        }
        AxisPlan { lo, hi, frac }
    }
}

pub(crate) fn resize_forward(
    input: &[f64],
    w: usize,
    c: usize,
    ys: &AxisPlan,
    xs: &AxisPlan,
) -> Vec<f64> {
    let oh = ys.lo.len();
    let ow = xs.lo.len();
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
        for ox in 0..ow {
            let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
            let weights = [
                ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                ((y0 * w + x1) * c, (1.0 - fy) * fx),
                ((y1 * w + x0) * c, fy * (1.0 - fx)),
                ((y1 * w + x1) * c, fy * fx),
            ];
            let dst = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (src, wt) in weights {
                if wt == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(&input[src..src + c]) {
                    *d += wt * s;
                }
            }
        }
    }
    out
}

pub(crate) fn resize_backward(
    upstream: &[f64],
    w: usize,
    c: usize,
    ys: &AxisPlan,
    xs: &AxisPlan,
    grad: &mut [f64],
) {
    let oh = ys.lo.len();
    let ow = xs.lo.len();
    for oy in 0..oh {
        let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
        for ox in 0..ow {
            let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
            let weights = [
                ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                ((y0 * w + x1) * c, (1.0 - fy) * fx),
                ((y1 * w + x0) * c, fy * (1.0 - fx)),
                ((y1 * w + x1) * c, fy * fx),
            ];
            let up = &upstream[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (dst, wt) in weights {
                if wt == 0.0 {
                    continue;
                }
                for (g, u) in grad[dst..dst + c].iter_mut().zip(up) {
                    *g += wt * u;
                }
            }
        }
    }
}
