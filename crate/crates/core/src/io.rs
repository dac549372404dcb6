//! File formats: binary PNM images and label maps, JSON model and
//! statistics files.
//!
//! Image values are stored as bytes and mapped to `[0, 1]` on read. Label maps
//! are P5 files whose byte is the label id; clamp masks are P5 files where `0`
//! means free and `v >= 1` clamps the node to label `v - 1`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceModel;
use crate::error::{Error, Result};
use crate::evidence::{ClampMask, Image};
use crate::grid::{
    GridDomain, GrfModel, LabelSet, Labelling, NeighborhoodStructure, Offset, OffsetTable, PotentialTable,
    StatisticsKind, SufficientStatistics,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A raw PNM raster: `channels` is 1 for P5 and 3 for P6.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            if token.is_empty() {
                return Err(Error::MalformedHeader("unexpected end of header".into()));
            }
            return Ok(token);
        }
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
        } else if c.is_ascii_whitespace() {
            if !token.is_empty() {
                return Ok(token);
            }
        } else {
            token.push(c as char);
        }
    }
}

fn header_number<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let t = header_token(r)?;
    t.parse().map_err(|_| Error::MalformedHeader(format!("bad {what}: {t:?}")))
}

pub fn read_pnm_from<R: Read>(reader: R) -> Result<Pnm> {
    let mut r = BufReader::new(reader);
    let channels = match header_token(&mut r)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::MalformedHeader(format!("unsupported magic {other:?}"))),
    };
    let width = header_number(&mut r, "width")?;
    let height = header_number(&mut r, "height")?;
    let maxval = header_number(&mut r, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("empty raster {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!("maxval {maxval}, only 255 is supported")));
    }
    let mut data = vec![0u8; width * height * channels];
    r.read_exact(&mut data)
        .map_err(|_| Error::MalformedHeader("raster shorter than the header declares".into()))?;
    Ok(Pnm { width, height, channels, data })
}

pub fn write_pnm_to<W: Write>(mut w: W, pnm: &Pnm) -> Result<()> {
    let magic = match pnm.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::ChannelMismatch { expected: 3, found: c }),
    };
    write!(w, "{magic}\n{} {}\n255\n", pnm.width, pnm.height)?;
    w.write_all(&pnm.data)?;
    Ok(())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    read_pnm_from(fs::File::open(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, pnm: &Pnm) -> Result<()> {
    let mut buf = Vec::new();
    write_pnm_to(&mut buf, pnm)?;
    fs::write(path, buf)?;
    Ok(())
}

impl Pnm {
    fn domain(&self) -> Result<GridDomain> {
        GridDomain::new(self.width, self.height)
    }

    fn grey(&self) -> Result<&[u8]> {
        if self.channels != 1 {
            return Err(Error::MalformedHeader("label maps must be single-channel P5".into()));
        }
        Ok(&self.data)
    }
}

pub fn image_to_pnm(image: &Image) -> Result<Pnm> {
    let d = image.domain();
    let data = image.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let pnm = Pnm { width: d.width, height: d.height, channels: image.channels(), data };
    if pnm.channels != 1 && pnm.channels != 3 {
        return Err(Error::ChannelMismatch { expected: 3, found: pnm.channels });
    }
    Ok(pnm)
}

pub fn pnm_to_image(pnm: &Pnm) -> Result<Image> {
    Image::new(pnm.domain()?, pnm.channels, pnm.data.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    pnm_to_image(&read_pnm(path)?)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_pnm(path, &image_to_pnm(image)?)
}

pub fn labelling_to_pnm(y: &Labelling) -> Pnm {
    Pnm { width: y.width(), height: y.height(), channels: 1, data: y.as_slice().to_vec() }
}

/// Decodes a label map; `num_labels` bounds the admissible values.
pub fn pnm_to_labelling(pnm: &Pnm, num_labels: Option<usize>) -> Result<Labelling> {
    let data = pnm.grey()?.to_vec();
    if let Some(k) = num_labels {
        if let Some(&v) = data.iter().find(|&&v| v as usize >= k) {
            return Err(Error::LabelOutOfRange { value: v as usize, count: k });
        }
    }
    Labelling::new(pnm.domain()?, data)
}

pub fn read_labelling(path: impl AsRef<Path>, num_labels: Option<usize>) -> Result<Labelling> {
    pnm_to_labelling(&read_pnm(path)?, num_labels)
}

pub fn write_labelling(path: impl AsRef<Path>, y: &Labelling) -> Result<()> {
    write_pnm(path, &labelling_to_pnm(y))
}

pub fn clamps_to_pnm(mask: &ClampMask) -> Result<Pnm> {
    let d = mask.domain();
    let data = mask
        .cells()
        .iter()
        .map(|c| match c {
            None => Ok(0),
            Some(255) => Err(Error::LabelOutOfRange { value: 255, count: 255 }),
            Some(k) => Ok(k + 1),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(Pnm { width: d.width, height: d.height, channels: 1, data })
}

pub fn pnm_to_clamps(pnm: &Pnm, num_labels: Option<usize>) -> Result<ClampMask> {
    let cells = pnm.grey()?.iter().map(|&v| v.checked_sub(1)).collect::<Vec<_>>();
    if let Some(k) = num_labels {
        if let Some(v) = cells.iter().flatten().find(|&&v| v as usize >= k) {
            return Err(Error::LabelOutOfRange { value: *v as usize, count: k });
        }
    }
    ClampMask::new(pnm.domain()?, cells)
}

pub fn read_clamps(path: impl AsRef<Path>, num_labels: Option<usize>) -> Result<ClampMask> {
    pnm_to_clamps(&read_pnm(path)?, num_labels)
}

pub fn write_clamps(path: impl AsRef<Path>, mask: &ClampMask) -> Result<()> {
    write_pnm(path, &clamps_to_pnm(mask)?)
}

/// On-disk model: structure, potentials and an optional appearance model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub num_labels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
    pub domain: GridDomain,
    pub offsets: Vec<Offset>,
    pub unary: Vec<f64>,
    pub pairwise: Vec<OffsetTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<AppearanceModel>,
    /// Free-form record of seeds, schedules and commands.
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl ModelFile {
    pub fn new(model: &GrfModel, appearance: Option<&AppearanceModel>) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            num_labels: model.num_labels(),
            label_names: model.labels.names().map(<[String]>::to_vec),
            domain: model.domain,
            offsets: model.structure.pairwise().to_vec(),
            unary: model.potentials.unary.clone(),
            pairwise: model.potentials.pairwise.clone(),
            appearance: appearance.cloned(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn with_provenance(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.provenance.insert(key.to_string(), value.into());
        self
    }

    /// Rebuilds and re-validates the model and appearance.
    pub fn model(&self) -> Result<(GrfModel, Option<AppearanceModel>)> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported model format version {}", self.format_version)));
        }
        let labels = match &self.label_names {
            Some(names) if names.len() != self.num_labels => {
                return Err(Error::DimensionMismatch(format!(
                    "{} label names for {} labels",
                    names.len(),
                    self.num_labels
                )))
            }
            Some(names) => LabelSet::with_names(names.clone())?,
            None => LabelSet::new(self.num_labels)?,
        };
        let domain = GridDomain::new(self.domain.width, self.domain.height)?;
        if self.offsets.iter().any(|a| a.is_zero()) {
            return Err(Error::DuplicateOffset(Offset::ZERO));
        }
        let structure = NeighborhoodStructure::new(self.offsets.iter().copied())?;
        let potentials = PotentialTable::new(self.num_labels, self.unary.clone(), self.pairwise.clone())?;
        let model = GrfModel::build(domain, labels, structure, potentials)?;
        if let Some(app) = &self.appearance {
            app.validate()?;
            if app.num_labels() != self.num_labels {
                return Err(Error::DimensionMismatch(format!(
                    "appearance covers {} labels, model has {}",
                    app.num_labels(),
                    self.num_labels
                )));
            }
        }
        Ok((model, self.appearance.clone()))
    }
}

pub fn write_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(file)? + "\n")?;
    Ok(())
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<(GrfModel, Option<AppearanceModel>)> {
    read_model_file(path)?.model()
}

/// On-disk statistics: per-offset label-pair tables and their kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsFile {
    pub kind: StatisticsKind,
    pub num_labels: usize,
    pub unary: Vec<f64>,
    pub pairwise: Vec<OffsetTable>,
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
}

impl StatisticsFile {
    pub fn new(stats: &SufficientStatistics) -> Self {
        StatisticsFile {
            kind: stats.kind,
            num_labels: stats.num_labels,
            unary: stats.unary.clone(),
            pairwise: stats.pairwise.clone(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn with_provenance(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.provenance.insert(key.to_string(), value.into());
        self
    }

    pub fn statistics(&self) -> Result<SufficientStatistics> {
        LabelSet::new(self.num_labels)?;
        let offsets: Vec<Offset> = self.pairwise.iter().map(|t| t.offset).collect();
        if offsets.iter().any(|a| a.is_zero()) {
            return Err(Error::DuplicateOffset(Offset::ZERO));
        }
        NeighborhoodStructure::new(offsets)?;
        SufficientStatistics::new(self.kind, self.num_labels, self.unary.clone(), self.pairwise.clone())
    }
}

pub fn write_statistics(path: impl AsRef<Path>, file: &StatisticsFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(file)? + "\n")?;
    Ok(())
}

pub fn read_statistics(path: impl AsRef<Path>) -> Result<SufficientStatistics> {
    let file: StatisticsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.statistics()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_header_with_comments() {
        let bytes = b"P5\n# made by hand\n3 1\n# max\n255\n\x00\x01\x02".to_vec();
        let pnm = read_pnm_from(&bytes[..]).unwrap();
        assert_eq!((pnm.width, pnm.height, pnm.channels), (3, 1, 1));
        assert_eq!(pnm.data, vec![0, 1, 2]);
        let mut out = Vec::new();
        write_pnm_to(&mut out, &pnm).unwrap();
        assert_eq!(read_pnm_from(&out[..]).unwrap(), pnm);
    }

    #[test]
    fn malformed_headers() {
        for bad in [&b"P3\n1 1\n255\n0"[..], b"P5\n1 x\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00", b"P5"] {
            assert!(matches!(read_pnm_from(bad), Err(Error::MalformedHeader(_))), "{bad:?}");
        }
    }

    #[test]
    fn clamp_convention() {
        let pnm = Pnm { width: 3, height: 1, channels: 1, data: vec![0, 3, 1] };
        let mask = pnm_to_clamps(&pnm, Some(3)).unwrap();
        assert_eq!(mask.cells(), &[None, Some(2), Some(0)]);
        assert_eq!(clamps_to_pnm(&mask).unwrap(), pnm);
        assert!(matches!(pnm_to_clamps(&pnm, Some(2)), Err(Error::LabelOutOfRange { value: 2, count: 2 })));
        let free = Pnm { width: 2, height: 2, channels: 1, data: vec![0; 4] };
        assert!(pnm_to_clamps(&free, None).unwrap().is_free());
    }

    #[test]
    fn label_range_checked() {
        let pnm = Pnm { width: 2, height: 1, channels: 1, data: vec![0, 4] };
        assert!(matches!(pnm_to_labelling(&pnm, Some(4)), Err(Error::LabelOutOfRange { value: 4, count: 4 })));
        assert_eq!(pnm_to_labelling(&pnm, Some(5)).unwrap().as_slice(), &[0, 4]);
    }

    #[test]
    fn model_file_rejects_opposite_offsets() {
        let d = GridDomain::new(3, 3).unwrap();
        let s = NeighborhoodStructure::new([Offset::new(1, 0)]).unwrap();
        let m = GrfModel::uniform(d, LabelSet::new(2).unwrap(), s);
        let mut f = ModelFile::new(&m, None);
        assert_eq!(f.model().unwrap().0, m);
        f.offsets.push(Offset::new(-1, 0));
        f.pairwise.push(OffsetTable { offset: Offset::new(-1, 0), values: vec![0.0; 4] });
        assert!(f.model().is_err());
    }
}
