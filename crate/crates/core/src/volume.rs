//! Registered 3D grids: intensity volumes, label maps and binary masks.

use puir_autograd::Tensor;

use crate::{PuirError, Result};

/// A dense 3D grid in C order `(d, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

/// Scalar imaging volume.
pub type Volume = Grid<f32>;
/// Per-voxel tissue class.
pub type LabelMap = Grid<u8>;
/// Binary mask stored as 0/1 bytes.
pub type Mask = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn new(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if n != data.len() {
            return Err(PuirError::shape("grid data", &[n], &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: [usize; 3], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let [d, h, w] = shape;
        let mut data = Vec::with_capacity(d * h * w);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.shape[1] + h) * self.shape[2] + w
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> T {
        self.data[self.index(d, h, w)]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>, context: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(PuirError::shape(context, &self.shape, &other.shape));
        }
        Ok(())
    }
}

impl Volume {
    pub fn min(&self) -> f32 {
        self.data.iter().cloned().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max)
    }

    /// `max - min`, in double precision.
    pub fn data_range(&self) -> f64 {
        self.max() as f64 - self.min() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single-channel `[1, D, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.shape;
        Tensor::new(vec![1, d, h, w], self.data.iter().map(|&v| v as f64).collect())
            .expect("grid length matches its shape")
    }

    /// Volume from a flat f64 buffer (values rounded to f32).
    pub fn from_f64(shape: [usize; 3], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v != 0)
    }
}
