//! Row-major rasters for images, depth maps and label maps.

#[derive(Clone, Debug, PartialEq)]
pub struct Raster<P> {
    height: usize,
    width: usize,
    data: Vec<P>,
}

/// RGB image with channel values in `[0, 1]`.
pub type RgbImage = Raster<[f64; 3]>;
/// Depth in meters.
pub type DepthMap = Raster<f64>;
pub type LabelMap = Raster<usize>;

impl<P: Clone> Raster<P> {
    pub fn filled(height: usize, width: usize, value: P) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> P) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Panics if `data.len() != height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<P>) -> Self {
        assert_eq!(data.len(), height * width, "raster data has wrong length");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn map<Q: Clone>(&self, f: impl FnMut(&P) -> Q) -> Raster<Q> {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<P> Raster<P> {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<Q>(&self, other: &Raster<Q>) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> &P {
        &self.data[r * self.width + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut P {
        &mut self.data[r * self.width + c]
    }

    /// Reads with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, r: isize, c: isize) -> &P {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn as_slice(&self) -> &[P] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [P] {
        &mut self.data
    }
}

/// Luminance `0.299 R + 0.587 G + 0.114 B`.
pub fn luminance(image: &RgbImage) -> Raster<f64> {
    image.map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
}
