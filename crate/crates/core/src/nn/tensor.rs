use crate::error::{Error, Result};

/// Dense `f32` tensor laid out as `[N, C, T, H, W]`, row-major.
///
/// Image feature maps use `T = 1`; flat feature vectors use `T = H = W = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// `T * H * W`, the number of positions per channel.
    pub fn volume(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.volume()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(mut self, shape: [usize; 5]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [n, _, t, h, w] = first.shape;
        let mut c_total = 0;
        for p in parts {
            let [pn, pc, pt, ph, pw] = p.shape;
            if (pn, pt, ph, pw) != (n, t, h, w) {
                return Err(Error::Shape(format!(
                    "cannot concat {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            c_total += pc;
        }
        let mut out = Tensor::zeros([n, c_total, t, h, w]);
        for b in 0..n {
            let mut offset = 0;
            let dst = out.item_mut(b);
            for p in parts {
                let src = p.item(b);
                dst[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(out)
    }

    /// Channels `[from, from + count)`.
    pub fn slice_channels(&self, from: usize, count: usize) -> Tensor {
        let [n, c, t, h, w] = self.shape;
        assert!(from + count <= c);
        let vol = t * h * w;
        let mut out = Tensor::zeros([n, count, t, h, w]);
        for b in 0..n {
            let src = &self.item(b)[from * vol..(from + count) * vol];
            out.item_mut(b).copy_from_slice(src);
        }
        out
    }

    /// Frames `[from, from + count)` of every channel.
    pub fn slice_time(&self, from: usize, count: usize) -> Tensor {
        let [n, c, t, h, w] = self.shape;
        assert!(from + count <= t);
        let plane = h * w;
        let mut out = Tensor::zeros([n, c, count, h, w]);
        for nc in 0..n * c {
            let src = &self.data[nc * t * plane + from * plane..nc * t * plane + (from + count) * plane];
            out.data[nc * count * plane..(nc + 1) * count * plane].copy_from_slice(src);
        }
        out
    }

    /// Writes `src` (with `count` frames) into frames `[from, from + count)`,
    /// adding to what is there.
    pub fn add_time_slice(&mut self, from: usize, src: &Tensor) {
        let [n, c, t, h, w] = self.shape;
        let count = src.shape[2];
        debug_assert_eq!(src.shape, [n, c, count, h, w]);
        let plane = h * w;
        for nc in 0..n * c {
            let dst = &mut self.data[nc * t * plane + from * plane..nc * t * plane + (from + count) * plane];
            for (d, s) in dst.iter_mut().zip(&src.data[nc * count * plane..(nc + 1) * count * plane]) {
                *d += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_slice_invert() {
        let a = Tensor::from_vec([2, 1, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 1, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), [2, 3, 1, 1, 2]);
        assert_eq!(c.slice_channels(0, 1), a);
        assert_eq!(c.slice_channels(1, 2), b);
    }

    #[test]
    fn time_slices() {
        let x = Tensor::from_vec([1, 2, 3, 1, 1], vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let s = x.slice_time(1, 2);
        assert_eq!(s.data(), &[1.0, 2.0, 11.0, 12.0]);
        let mut z = Tensor::zeros([1, 2, 3, 1, 1]);
        z.add_time_slice(1, &s);
        assert_eq!(z.data(), &[0.0, 1.0, 2.0, 0.0, 11.0, 12.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(Tensor::from_vec([1, 1, 1, 1, 2], vec![0.0]).is_err());
        assert!(Tensor::zeros([1, 2, 1, 1, 1]).reshape([1, 3, 1, 1, 1]).is_err());
    }
}
