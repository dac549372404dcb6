//! Observed data: images and partial labellings that condition the prior.

use crate::error::{Error, Result};
use crate::grid::{GridDomain, LabelSet, Labelling};

/// A `W x H x C` image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    domain: GridDomain,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(domain: GridDomain, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != domain.nodes() * channels {
            return Err(Error::DimensionMismatch(format!(
                "image data has {} values, expected {}x{}x{channels}",
                data.len(),
                domain.width,
                domain.height
            )));
        }
        Ok(Image { domain, channels, data })
    }

    pub fn filled(domain: GridDomain, colour: &[f64]) -> Self {
        let data = colour.iter().copied().cycle().take(domain.nodes() * colour.len()).collect();
        Image { domain, channels: colour.len(), data }
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Colour of node `t` (flat index).
    pub fn pixel(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channels)
    }
}

/// Per-node clamps: `None` is free, `Some(k)` fixes the node to label `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClampMask {
    domain: GridDomain,
    cells: Vec<Option<u8>>,
}

impl ClampMask {
    pub fn free(domain: GridDomain) -> Self {
        ClampMask { domain, cells: vec![None; domain.nodes()] }
    }

    pub fn new(domain: GridDomain, cells: Vec<Option<u8>>) -> Result<Self> {
        if cells.len() != domain.nodes() {
            return Err(Error::DimensionMismatch(format!(
                "clamp mask has {} cells, domain has {}",
                cells.len(),
                domain.nodes()
            )));
        }
        Ok(ClampMask { domain, cells })
    }

    /// Every node clamped to `y`.
    pub fn full(y: &Labelling) -> Self {
        ClampMask { domain: y.domain(), cells: y.as_slice().iter().map(|&k| Some(k)).collect() }
    }

    /// Clamps the rectangle `[x0, x1) x [y0, y1)` to the labels of `y`.
    pub fn clamp_rect(&mut self, y: &Labelling, x0: usize, y0: usize, x1: usize, y1: usize) {
        for yy in y0..y1.min(self.domain.height) {
            for xx in x0..x1.min(self.domain.width) {
                let t = self.domain.index(xx, yy);
                self.cells[t] = Some(y.as_slice()[t]);
            }
        }
    }

    pub fn set(&mut self, x: usize, y: usize, label: Option<u8>) {
        let t = self.domain.index(x, y);
        self.cells[t] = label;
    }

    pub fn get(&self, t: usize) -> Option<u8> {
        self.cells[t]
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn cells(&self) -> &[Option<u8>] {
        &self.cells
    }

    pub fn clamped_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_free(&self) -> bool {
        self.clamped_count() == 0
    }
}

/// An event `B = (x, y_V)`: an optional image and an optional partial labelling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evidence {
    pub image: Option<Image>,
    pub clamps: Option<ClampMask>,
}

impl Evidence {
    pub fn none() -> Self {
        Evidence::default()
    }

    pub fn image(image: Image) -> Self {
        Evidence { image: Some(image), clamps: None }
    }

    pub fn clamped(clamps: ClampMask) -> Self {
        Evidence { image: None, clamps: Some(clamps) }
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_none() && self.clamps.as_ref().is_none_or(ClampMask::is_free)
    }

    pub fn validate(&self, domain: GridDomain, labels: &LabelSet) -> Result<()> {
        if let Some(img) = &self.image {
            if img.domain() != domain {
                return Err(Error::DimensionMismatch(format!(
                    "image is {}x{}, domain is {}x{}",
                    img.domain().width,
                    img.domain().height,
                    domain.width,
                    domain.height
                )));
            }
        }
        if let Some(c) = &self.clamps {
            if c.domain() != domain {
                return Err(Error::DimensionMismatch("clamp mask does not match the domain".into()));
            }
            for k in c.cells().iter().flatten() {
                labels.check(*k as usize)?;
            }
        }
        Ok(())
    }

    pub fn clamp(&self, t: usize) -> Option<u8> {
        self.clamps.as_ref().and_then(|c| c.get(t))
    }
}
