use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense frame-major video tensor of shape `T x C x H x W` with `f32` samples.
///
/// Used for the RGB clip `V`, the rendered pose video `K'` and the fused
/// tensor `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipTensor {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ClipTensor {
    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self { frames, channels, height, width, data: vec![0.0; frames * channels * height * width] }
    }

    pub fn from_vec(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != frames * channels * height * width {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {frames}x{channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { frames, channels, height, width, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[T, C, H, W]`
    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// All channels of frame `t`, laid out `C x H x W`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(t, c, y, x)]
    }

    /// Copies the channel range `[start, end)` into a new tensor.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<ClipTensor> {
        if start >= end || end > self.channels {
            return Err(Error::Shape(format!(
                "channel range {start}..{end} outside 0..{}",
                self.channels
            )));
        }
        let plane = self.height * self.width;
        let mut out = ClipTensor::zeros(self.frames, end - start, self.height, self.width);
        for t in 0..self.frames {
            let src = &self.frame(t)[start * plane..end * plane];
            out.frame_mut(t).copy_from_slice(src);
        }
        Ok(out)
    }

    /// Concatenates along the channel axis; `T`, `H` and `W` must agree.
    pub fn concat_channels(&self, other: &ClipTensor) -> Result<ClipTensor> {
        if self.frames != other.frames || self.height != other.height || self.width != other.width {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?} along channels",
                self.shape(),
                other.shape()
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for t in 0..self.frames {
            data.extend_from_slice(self.frame(t));
            data.extend_from_slice(other.frame(t));
        }
        Ok(ClipTensor { frames: self.frames, channels, height: self.height, width: self.width, data })
    }

    /// Mirrors every frame left-to-right: column `x` moves to `W - 1 - x`.
    pub fn mirrored(&self) -> ClipTensor {
        let mut out = self.clone();
        let w = self.width;
        for row in out.data.chunks_exact_mut(w) {
            row.reverse();
        }
        debug_assert_eq!(out.data.len() % w, 0);
        out
    }

    /// Keeps frames `[start, start + len)`.
    pub fn frame_range(&self, start: usize, len: usize) -> Result<ClipTensor> {
        if start + len > self.frames {
            return Err(Error::Shape(format!(
                "frame range {start}..{} outside 0..{}",
                start + len,
                self.frames
            )));
        }
        let n = self.frame_len();
        Ok(ClipTensor {
            frames: len,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    /// Repacks as `C x T x H x W`, the layout the 3D convolution consumes.
    pub fn to_channel_major(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for t in 0..self.frames {
            for c in 0..self.channels {
                let src = (t * self.channels + c) * plane;
                let dst = (c * self.frames + t) * plane;
                out[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        out
    }

    pub fn nonzero_support(&self) -> Vec<bool> {
        let plane = self.height * self.width;
        let mut mask = vec![false; self.frames * plane];
        for t in 0..self.frames {
            let frame = self.frame(t);
            for c in 0..self.channels {
                for (i, v) in frame[c * plane..(c + 1) * plane].iter().enumerate() {
                    if *v != 0.0 {
                        mask[t * plane + i] = true;
                    }
                }
            }
        }
        mask
    }
}
