//! Forward math of the polarization attention block with supplied weights.
//!
//! A channel map from pooled features and two small fully connected layers
//! is multiplied with a spatial map from four convolution branches into the
//! response `M`. The task-specific polarization function then reweights the
//! input: `F' = M + psi(sigmoid(M)) * F + F`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, conv2d, fully_connected, global_avg_pool, sigmoid_map, DenseTensor, Matrix,
};

pub const DEFAULT_ETA: f64 = 15.0;
pub const DEFAULT_REDUCTION: usize = 16;
pub const DEFAULT_DILATION: usize = 2;

const MAGIC: &[u8; 4] = b"PAMW";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Excitation: a steep sigmoid centred on 0.5.
pub fn psi_cls(x: f64, eta: f64) -> f64 {
    1.0 / (1.0 + (-eta * (x - 0.5)).exp())
}

/// Depression: a tent peaking at 0.5.
pub fn psi_reg(x: f64) -> f64 {
    if x < 0.5 {
        x
    } else {
        1.0 - x
    }
}

pub fn polarize(task: TaskKind, x: f64, eta: f64) -> f64 {
    match task {
        TaskKind::Classification => psi_cls(x, eta),
        TaskKind::Regression => psi_reg(x),
    }
}

pub fn polarize_map(task: TaskKind, x: &DenseTensor, eta: f64) -> DenseTensor {
    x.map(|v| polarize(task, f64::from(v), eta) as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PamWeights {
    w0: Matrix,
    w1: Matrix,
    branch_3x3: DenseTensor,
    branch_1x3_dilated: DenseTensor,
    branch_3x1_dilated: DenseTensor,
    branch_3x3_dilated: DenseTensor,
    fuse_3x3: DenseTensor,
    reduction: usize,
    dilation: usize,
    eta: f64,
}

/// The four branch kernels of the spatial attention path, each shaped
/// `(k, C, kh, kw)`; `k` is the per-branch width (1 by default).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernels {
    pub branch_3x3: DenseTensor,
    pub branch_1x3_dilated: DenseTensor,
    pub branch_3x1_dilated: DenseTensor,
    pub branch_3x3_dilated: DenseTensor,
    /// `(1, 4k, 3, 3)`.
    pub fuse_3x3: DenseTensor,
}

impl SpatialKernels {
    pub fn zeros(channels: usize) -> Self {
        Self {
            branch_3x3: DenseTensor::zeros([1, channels, 3, 3]),
            branch_1x3_dilated: DenseTensor::zeros([1, channels, 1, 3]),
            branch_3x1_dilated: DenseTensor::zeros([1, channels, 3, 1]),
            branch_3x3_dilated: DenseTensor::zeros([1, channels, 3, 3]),
            fuse_3x3: DenseTensor::zeros([1, 4, 3, 3]),
        }
    }
}

impl PamWeights {
    pub fn new(
        w0: Matrix,
        w1: Matrix,
        spatial: SpatialKernels,
        reduction: usize,
        dilation: usize,
        eta: f64,
    ) -> Result<Self> {
        let channels = w0.cols();
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "reduction ratio {reduction} must divide channel count {channels}"
            )));
        }
        let squeezed = channels / reduction;
        if w0.rows() != squeezed {
            return Err(Error::Shape(format!(
                "w0 is {}x{}, expected {squeezed}x{channels}",
                w0.rows(),
                w0.cols()
            )));
        }
        if (w1.rows(), w1.cols()) != (channels, squeezed) {
            return Err(Error::Shape(format!(
                "w1 is {}x{}, expected {channels}x{squeezed}",
                w1.rows(),
                w1.cols()
            )));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        if dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        let width = spatial.branch_3x3.shape()[0];
        let expect = [
            ("branch_3x3", &spatial.branch_3x3, (3, 3)),
            ("branch_1x3_dilated", &spatial.branch_1x3_dilated, (1, 3)),
            ("branch_3x1_dilated", &spatial.branch_3x1_dilated, (3, 1)),
            ("branch_3x3_dilated", &spatial.branch_3x3_dilated, (3, 3)),
        ];
        for (name, k, (kh, kw)) in expect {
            let want = [width, channels, kh, kw];
            if k.shape() != want || width == 0 {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected {want:?}",
                    k.shape()
                )));
            }
        }
        if spatial.fuse_3x3.shape() != [1, 4 * width, 3, 3] {
            return Err(Error::Shape(format!(
                "fuse_3x3 is {:?}, expected {:?}",
                spatial.fuse_3x3.shape(),
                [1, 4 * width, 3, 3]
            )));
        }
        Ok(Self {
            w0,
            w1,
            branch_3x3: spatial.branch_3x3,
            branch_1x3_dilated: spatial.branch_1x3_dilated,
            branch_3x1_dilated: spatial.branch_3x1_dilated,
            branch_3x3_dilated: spatial.branch_3x3_dilated,
            fuse_3x3: spatial.fuse_3x3,
            reduction,
            dilation,
            eta,
        })
    }

    /// All-zero weights with default dilation and eta.
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let squeezed = channels.checked_div(reduction).unwrap_or(0);
        Self::new(
            Matrix::zeros(squeezed, channels),
            Matrix::zeros(channels, squeezed),
            SpatialKernels::zeros(channels),
            reduction,
            DEFAULT_DILATION,
            DEFAULT_ETA,
        )
    }

    pub fn channels(&self) -> usize {
        self.w0.cols()
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn arrays(&self) -> Vec<(&'static str, Vec<u32>, &[f32])> {
        let dims4 = |t: &DenseTensor| t.shape().iter().map(|&d| d as u32).collect::<Vec<_>>();
        vec![
            (
                "w0",
                vec![self.w0.rows() as u32, self.w0.cols() as u32],
                self.w0.data(),
            ),
            (
                "w1",
                vec![self.w1.rows() as u32, self.w1.cols() as u32],
                self.w1.data(),
            ),
            (
                "branch_3x3",
                dims4(&self.branch_3x3),
                self.branch_3x3.data(),
            ),
            (
                "branch_1x3_dilated",
                dims4(&self.branch_1x3_dilated),
                self.branch_1x3_dilated.data(),
            ),
            (
                "branch_3x1_dilated",
                dims4(&self.branch_3x1_dilated),
                self.branch_3x1_dilated.data(),
            ),
            (
                "branch_3x3_dilated",
                dims4(&self.branch_3x3_dilated),
                self.branch_3x3_dilated.data(),
            ),
            ("fuse_3x3", dims4(&self.fuse_3x3), self.fuse_3x3.data()),
        ]
    }

    /// Serializes to the `PAMW` container: magic, version, reduction,
    /// dilation and eta, then named arrays each with a shape header. All
    /// integers are little-endian `u32`, all values little-endian `f32`.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.reduction as u32).to_le_bytes())?;
        out.write_all(&(self.dilation as u32).to_le_bytes())?;
        out.write_all(&(self.eta as f32).to_le_bytes())?;
        let arrays = self.arrays();
        out.write_all(&(arrays.len() as u32).to_le_bytes())?;
        for (name, dims, data) in arrays {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in dims {
                out.write_all(&d.to_le_bytes())?;
            }
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut r = ByteReader(&mut input);
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Schema("not a PAMW weight file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported PAMW version {version}")));
        }
        let reduction = r.u32()? as usize;
        let dilation = r.u32()? as usize;
        let eta = f64::from(r.f32()?);
        let count = r.u32()?;

        let mut named: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            if len > 256 {
                return Err(Error::Schema(format!("array name of {len} bytes")));
            }
            let mut name = vec![0u8; len];
            r.fill(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Schema("array name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            if ndim > 4 {
                return Err(Error::Schema(format!("{name}: rank {ndim} > 4")));
            }
            let dims: Vec<usize> = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            named.push((name, dims, data));
        }

        let mut take = |key: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            let pos = named
                .iter()
                .position(|(n, _, _)| n == key)
                .ok_or_else(|| Error::Schema(format!("missing array {key:?}")))?;
            let (_, dims, data) = named.swap_remove(pos);
            Ok((dims, data))
        };
        let matrix = |(dims, data): (Vec<usize>, Vec<f32>)| -> Result<Matrix> {
            match dims[..] {
                [r, c] => Matrix::new(r, c, data),
                _ => Err(Error::Schema(format!(
                    "expected a matrix, got dims {dims:?}"
                ))),
            }
        };
        let tensor = |(dims, data): (Vec<usize>, Vec<f32>)| -> Result<DenseTensor> {
            match dims[..] {
                [a, b, c, d] => DenseTensor::new([a, b, c, d], data),
                _ => Err(Error::Schema(format!(
                    "expected a rank-4 kernel, got dims {dims:?}"
                ))),
            }
        };
        let w0 = matrix(take("w0")?)?;
        let w1 = matrix(take("w1")?)?;
        let spatial = SpatialKernels {
            branch_3x3: tensor(take("branch_3x3")?)?,
            branch_1x3_dilated: tensor(take("branch_1x3_dilated")?)?,
            branch_3x1_dilated: tensor(take("branch_3x1_dilated")?)?,
            branch_3x3_dilated: tensor(take("branch_3x3_dilated")?)?,
            fuse_3x3: tensor(take("fuse_3x3")?)?,
        };
        Self::new(w0, w1, spatial, reduction, dilation, eta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

struct ByteReader<'a, R: Read>(&'a mut R);

impl<R: Read> ByteReader<'_, R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0
            .read_exact(buf)
            .map_err(|e| Error::Schema(format!("truncated weight file: {e}")))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

/// `sigmoid(W1 (W0 gap(F)))`, shape `(b, C, 1, 1)`.
pub fn channel_attention(f: &DenseTensor, w: &PamWeights) -> Result<DenseTensor> {
    let [b, c, _, _] = f.shape();
    if c != w.channels() {
        return Err(Error::Shape(format!(
            "features have {c} channels, weights expect {}",
            w.channels()
        )));
    }
    let pooled = global_avg_pool(f);
    let mut out = Vec::with_capacity(b * c);
    for v in pooled.data().chunks(c.max(1)).take(b) {
        let squeezed = fully_connected(v, &w.w0)?;
        out.extend(fully_connected(&squeezed, &w.w1)?);
    }
    Ok(sigmoid_map(&DenseTensor::new([b, c, 1, 1], out)?))
}

/// `sigmoid(conv3x3(cat(branches(F))))`, shape `(b, 1, H, W)`.
pub fn spatial_attention(f: &DenseTensor, w: &PamWeights) -> Result<DenseTensor> {
    let d = w.dilation;
    let branches = [
        conv2d(f, &w.branch_3x3, (1, 1))?,
        conv2d(f, &w.branch_1x3_dilated, (d, d))?,
        conv2d(f, &w.branch_3x1_dilated, (d, d))?,
        conv2d(f, &w.branch_3x3_dilated, (d, d))?,
    ];
    let stacked = concat_channels(&branches)?;
    Ok(sigmoid_map(&conv2d(&stacked, &w.fuse_3x3, (1, 1))?))
}

/// Fuses the attention maps into task-specific features.
pub fn pam_fuse(
    f: &DenseTensor,
    mc: &DenseTensor,
    ms: &DenseTensor,
    task: TaskKind,
    eta: f64,
) -> Result<DenseTensor> {
    let [b, c, h, w] = f.shape();
    if mc.shape() != [b, c, 1, 1] || ms.shape() != [b, 1, h, w] {
        return Err(Error::Shape(format!(
            "features {:?} with channel map {:?} and spatial map {:?}",
            f.shape(),
            mc.shape(),
            ms.shape()
        )));
    }
    Ok(DenseTensor::from_fn([b, c, h, w], |[ib, ic, ih, iw]| {
        let m = f64::from(mc.get([ib, ic, 0, 0])) * f64::from(ms.get([ib, 0, ih, iw]));
        let x = f64::from(f.get([ib, ic, ih, iw]));
        let gate = polarize(task, 1.0 / (1.0 + (-m).exp()), eta);
        (m + gate * x + x) as f32
    }))
}

/// Channel map, spatial map and fusion in one call.
pub fn pam_forward(f: &DenseTensor, w: &PamWeights, task: TaskKind) -> Result<DenseTensor> {
    let mc = channel_attention(f, w)?;
    let ms = spatial_attention(f, w)?;
    pam_fuse(f, &mc, &ms, task, w.eta)
}
