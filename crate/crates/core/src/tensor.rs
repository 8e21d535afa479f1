//! Dense rank-4 `f32` tensors and the few forward ops the attention block
//! needs. Layout is contiguous row-major over `(batch, channel, height, width)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("tensor entries must be finite".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [b, c, h, w] = shape;
        let mut data = Vec::with_capacity(b * c * h * w);
        for ib in 0..b {
            for ic in 0..c {
                for ih in 0..h {
                    for iw in 0..w {
                        data.push(f([ib, ic, ih, iw]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.shape;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    pub fn get(&self, idx: [usize; 4]) -> f32 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], v: f32) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Cross-correlation with zero padding chosen so the output keeps the input's
/// spatial size. `kernel` has shape `(out_c, in_c, kh, kw)`.
pub fn conv2d(
    input: &DenseTensor,
    kernel: &DenseTensor,
    dilation: (usize, usize),
) -> Result<DenseTensor> {
    let [b, in_c, h, w] = input.shape;
    let [out_c, k_in, kh, kw] = kernel.shape;
    if k_in != in_c {
        return Err(Error::Shape(format!(
            "kernel expects {k_in} input channels, tensor has {in_c}"
        )));
    }
    let (dy, dx) = dilation;
    if dy == 0 || dx == 0 {
        return Err(Error::Shape("dilation must be at least 1".into()));
    }
    let pad_y = (dy * kh.saturating_sub(1) / 2) as isize;
    let pad_x = (dx * kw.saturating_sub(1) / 2) as isize;

    let mut out = DenseTensor::zeros([b, out_c, h, w]);
    for ib in 0..b {
        for oc in 0..out_c {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = 0.0f32;
                    for ic in 0..in_c {
                        for ky in 0..kh {
                            let iy = oy as isize + (ky * dy) as isize - pad_y;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = ox as isize + (kx * dx) as isize - pad_x;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += kernel.get([oc, ic, ky, kx])
                                    * input.get([ib, ic, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out.set([ib, oc, oy, ox], acc);
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel spatial mean, shape `(b, c, 1, 1)`.
pub fn global_avg_pool(input: &DenseTensor) -> DenseTensor {
    let [b, c, h, w] = input.shape;
    let plane = h * w;
    let data = input
        .data
        .chunks(plane.max(1))
        .take(b * c)
        .map(|ch| {
            if plane == 0 {
                0.0
            } else {
                (ch.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64) as f32
            }
        })
        .collect();
    DenseTensor {
        shape: [b, c, 1, 1],
        data,
    }
}

/// Matrix-vector product without bias.
pub fn fully_connected(v: &[f32], weights: &Matrix) -> Result<Vec<f32>> {
    if v.len() != weights.cols {
        return Err(Error::Shape(format!(
            "vector of length {} against {}x{} weights",
            v.len(),
            weights.rows,
            weights.cols
        )));
    }
    Ok(weights
        .data
        .chunks(weights.cols.max(1))
        .take(weights.rows)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect())
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_map(x: &DenseTensor) -> DenseTensor {
    x.map(sigmoid)
}

pub fn concat_channels(xs: &[DenseTensor]) -> Result<DenseTensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    let [b, _, h, w] = first.shape;
    for t in xs {
        let [tb, _, th, tw] = t.shape;
        if (tb, th, tw) != (b, h, w) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                first.shape, t.shape
            )));
        }
    }
    let total_c: usize = xs.iter().map(|t| t.shape[1]).sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(b * total_c * plane);
    for ib in 0..b {
        for t in xs {
            let c = t.shape[1];
            let start = ib * c * plane;
            data.extend_from_slice(&t.data[start..start + c * plane]);
        }
    }
    Ok(DenseTensor {
        shape: [b, total_c, h, w],
        data,
    })
}
