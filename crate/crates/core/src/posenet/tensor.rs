use crate::scalar::Scalar;

/// Cubic voxel grid with a channel vector per voxel, stored channels-last.
///
/// Voxel `(x, y, z)` has linear index `(x * side + y) * side + z`; its channel
/// `c` lives at `index * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTensor<T> {
    side: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> VoxelTensor<T> {
    pub fn zeros(side: usize, channels: usize) -> Self {
        Self { side, channels, data: vec![T::zero(); side * side * side * channels] }
    }

    pub fn filled(side: usize, channels: usize, value: T) -> Self {
        Self { side, channels, data: vec![value; side * side * side * channels] }
    }

    pub fn from_vec(side: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), side * side * side * channels, "voxel tensor size mismatch");
        Self { side, channels, data }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxels(&self) -> usize {
        self.side * self.side * self.side
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.side + y) * self.side + z
    }

    #[inline]
    pub fn get(&self, voxel: usize, channel: usize) -> T {
        self.data[voxel * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, voxel: usize, channel: usize, value: T) {
        self.data[voxel * self.channels + channel] = value;
    }

    /// Channel vector of one voxel.
    pub fn voxel(&self, voxel: usize) -> &[T] {
        &self.data[voxel * self.channels..(voxel + 1) * self.channels]
    }

    /// Concatenate tensors of equal side along the channel axis.
    pub fn concat(parts: &[&VoxelTensor<T>]) -> Self {
        let side = parts[0].side;
        assert!(parts.iter().all(|p| p.side == side), "concat: side mismatch");
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(side * side * side * channels);
        for v in 0..side * side * side {
            for p in parts {
                data.extend_from_slice(p.voxel(v));
            }
        }
        Self { side, channels, data }
    }

    /// Inverse of [`VoxelTensor::concat`]: split off channel ranges of the given widths.
    pub fn split(&self, widths: &[usize]) -> Vec<Self> {
        assert_eq!(widths.iter().sum::<usize>(), self.channels, "split widths must cover all channels");
        let voxels = self.voxels();
        let mut out: Vec<Self> = widths.iter().map(|&w| Self::zeros(self.side, w)).collect();
        for v in 0..voxels {
            let src = self.voxel(v);
            let mut offset = 0;
            for (part, &w) in out.iter_mut().zip(widths) {
                part.data[v * w..(v + 1) * w].copy_from_slice(&src[offset..offset + w]);
                offset += w;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { side: self.side, channels: self.channels, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.side, self.channels), (other.side, other.channels));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> VoxelTensor<U> {
        VoxelTensor {
            side: self.side,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64_lossy()).unwrap_or(U::nan())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_restores_parts() {
        let a = VoxelTensor::<f32>::from_vec(2, 1, (0..8).map(|v| v as f32).collect());
        let b = VoxelTensor::<f32>::from_vec(2, 2, (0..16).map(|v| -(v as f32)).collect());
        let joined = VoxelTensor::concat(&[&a, &b]);
        assert_eq!(joined.channels(), 3);
        assert_eq!(joined.voxel(3), &[3.0, -6.0, -7.0]);
        let parts = joined.split(&[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
