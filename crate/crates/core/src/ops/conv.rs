//! 2-D cross-correlation (im2col + gemm) and depthwise 1-D convolution.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Stride and zero padding of a square-kernel 2-D convolution. Padding may be
/// asymmetric: `pad_begin` rows/columns before the image, `pad_end` after.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_begin: usize,
    pub pad_end: usize,
}

impl Conv2dSpec {
    pub fn symmetric(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            pad_begin: padding,
            pad_end: padding,
        }
    }

    /// Output extent along one spatial axis of length `n` for kernel `k`.
    pub fn out_extent(&self, n: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Config("convolution stride must be >= 1".into()));
        }
        let span = n + self.pad_begin + self.pad_end;
        if span < k {
            return Err(Error::Config(format!(
                "kernel {k} exceeds padded extent {span}"
            )));
        }
        if !(span - k).is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "output extent ({n}+{}+{}-{k})/{}+1 is not integral",
                self.pad_begin, self.pad_end, self.stride
            )));
        }
        Ok((span - k) / self.stride + 1)
    }
}

struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn pixels_out(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self, spec: &Conv2dSpec) -> bool {
        self.k == 1 && spec.stride == 1 && spec.pad_begin == 0 && spec.pad_end == 0
    }
}

fn geometry<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Geometry> {
    let (batch, cin, h, w) = x.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return dim_err(format!(
            "conv2d: input has {cin} channels but weight expects {wcin}"
        ));
    }
    if kh != kw {
        return dim_err(format!("conv2d: kernel must be square, got {kh}x{kw}"));
    }
    if kh % 2 == 0 {
        return Err(Error::Config(format!("conv2d: kernel size {kh} must be odd")));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return dim_err(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                b.shape()
            ));
        }
    }
    Ok(Geometry {
        batch,
        cin,
        cout,
        k: kh,
        h,
        w,
        ho: spec.out_extent(h, kh)?,
        wo: spec.out_extent(w, kw)?,
    })
}

fn im2col<T: Real>(img: &[T], g: &Geometry, spec: &Conv2dSpec, cols: &mut [T]) {
    let p = g.pixels_out();
    let pad = spec.pad_begin as isize;
    for ci in 0..g.cin {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geometry, spec: &Conv2dSpec, img: &mut [T]) {
    let p = g.pixels_out();
    let pad = spec.pad_begin as isize;
    for ci in 0..g.cin {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Standard cross-correlation with symmetric zero padding.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_with(x, weight, Some(bias), &Conv2dSpec::symmetric(stride, padding))
}

pub fn conv2d_with<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = geometry(x, weight, bias, spec)?;
    let (kk, p) = (g.cols(), g.pixels_out());
    let mut out = vec![T::zero(); g.batch * g.cout * p];
    let mut cols = if g.is_pointwise(spec) {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let img_len = g.cin * g.h * g.w;
    for b in 0..g.batch {
        let img = &x.data()[b * img_len..(b + 1) * img_len];
        let dst = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        let rhs: &[T] = if g.is_pointwise(spec) {
            img
        } else {
            im2col(img, &g, spec, &mut cols);
            &cols
        };
        T::gemm(g.cout, kk, p, weight.data(), false, rhs, false, T::zero(), dst);
        if let Some(bias) = bias {
            for (co, row) in dst.chunks_mut(p).enumerate() {
                let bv = bias.data()[co];
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::from_vec(&[g.batch, g.cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d_with`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &Conv2dSpec,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = geometry(x, weight, None, spec)?;
    if grad_out.shape() != [g.batch, g.cout, g.ho, g.wo] {
        return dim_err(format!(
            "conv2d backward: upstream shape {:?} does not match output {:?}",
            grad_out.shape(),
            [g.batch, g.cout, g.ho, g.wo]
        ));
    }
    let (kk, p) = (g.cols(), g.pixels_out());
    let img_len = g.cin * g.h * g.w;
    let pointwise = g.is_pointwise(spec);
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); g.cout];
    let mut cols = vec![T::zero(); kk * p];
    let mut gcols = vec![T::zero(); kk * p];
    for b in 0..g.batch {
        let img = &x.data()[b * img_len..(b + 1) * img_len];
        let go = &grad_out.data()[b * g.cout * p..(b + 1) * g.cout * p];
        for (co, row) in go.chunks(p).enumerate() {
            gb[co] = gb[co] + row.iter().copied().sum::<T>();
        }
        let rhs: &[T] = if pointwise {
            img
        } else {
            im2col(img, &g, spec, &mut cols);
            &cols
        };
        // gW += gOut · colsᵀ
        T::gemm(g.cout, p, kk, go, false, rhs, true, T::one(), &mut gw);
        // gCols = Wᵀ · gOut
        let gimg = &mut gx[b * img_len..(b + 1) * img_len];
        if pointwise {
            T::gemm(kk, g.cout, p, weight.data(), true, go, false, T::zero(), gimg);
        } else {
            T::gemm(kk, g.cout, p, weight.data(), true, go, false, T::zero(), &mut gcols);
            col2im(&gcols, &g, spec, gimg);
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[g.cout], gb)?,
    ))
}

fn depthwise_dims<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (b, l, c) = x.dims3()?;
    let (wc, k) = weight.dims2()?;
    if wc != c {
        return dim_err(format!(
            "depthwise conv1d: input has {c} channels, weight has {wc}"
        ));
    }
    if k % 2 == 0 {
        return Err(Error::Config(format!(
            "depthwise conv1d: kernel size {k} must be odd"
        )));
    }
    Ok((b, l, c, k))
}

/// Per-channel 1-D convolution along the sequence axis of a (B, L, C)
/// tensor, zero padding `k/2` on both ends so the length is preserved.
pub fn depthwise_conv1d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, l, c, k) = depthwise_dims(x, weight)?;
    if bias.shape() != [c] {
        return dim_err(format!("depthwise conv1d: bias shape {:?}", bias.shape()));
    }
    let half = (k / 2) as isize;
    let (xd, wd) = (x.data(), weight.data());
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for t in 0..l {
            for ch in 0..c {
                let mut acc = bias.data()[ch];
                for j in 0..k {
                    let s = t as isize + j as isize - half;
                    if s >= 0 && (s as usize) < l {
                        acc = acc + wd[ch * k + j] * xd[(bi * l + s as usize) * c + ch];
                    }
                }
                out[(bi * l + t) * c + ch] = acc;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn depthwise_conv1d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, l, c, k) = depthwise_dims(x, weight)?;
    x.expect_same_shape(grad_out, "depthwise conv1d backward")?;
    let half = (k / 2) as isize;
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); weight.len()];
    let mut gb = vec![T::zero(); c];
    for bi in 0..b {
        for t in 0..l {
            for ch in 0..c {
                let g = gd[(bi * l + t) * c + ch];
                gb[ch] = gb[ch] + g;
                for j in 0..k {
                    let s = t as isize + j as isize - half;
                    if s >= 0 && (s as usize) < l {
                        let xi = (bi * l + s as usize) * c + ch;
                        gw[ch * k + j] = gw[ch * k + j] + g * xd[xi];
                        gx[xi] = gx[xi] + g * wd[ch * k + j];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[c], gb)?,
    ))
}
