//! Dataset samples and the line-delimited manifest file.
//!
//! Line 1 of a manifest is the header; every following line is one sample,
//! ordered by `sample_id`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::rational::Rational;
use crate::social::Role;

pub const MANIFEST_FORMAT: &str = "forgesim-manifest/1";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("header count {field} = {header} but samples tally {actual}")]
    CountMismatch {
        field: &'static str,
        header: u64,
        actual: u64,
    },
    #[error("samples are not strictly ordered by sample_id at {0:?}")]
    Unordered(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub agent_id: Option<String>,
    pub blueprint_id: Option<String>,
    /// Operator ids joined by `>`; empty for real samples.
    pub chain: String,
    pub s_llm: Option<Rational>,
    pub s_disc: Option<Rational>,
    pub fused: Option<Rational>,
    pub event_ref: Option<String>,
    pub role: Option<Role>,
}

impl Provenance {
    pub fn real() -> Self {
        Provenance {
            agent_id: None,
            blueprint_id: None,
            chain: String::new(),
            s_llm: None,
            s_disc: None,
            fused: None,
            event_ref: None,
            role: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub sample_id: String,
    pub image_ref: String,
    pub text: String,
    /// 1 for forged images.
    pub y: u8,
    /// Text-image consistency; 1 is an accurate correspondence.
    pub delta: u8,
    pub mismatch_flag: u8,
    pub provenance: Provenance,
}

impl DatasetSample {
    /// A real image with its caption: `y = 0`, `delta = 1`.
    pub fn real(index: usize, image_ref: &str, caption: &str) -> Self {
        DatasetSample {
            sample_id: real_sample_id(index),
            image_ref: image_ref.to_string(),
            text: caption.to_string(),
            y: 0,
            delta: 1,
            mismatch_flag: 0,
            provenance: Provenance::real(),
        }
    }

    pub fn is_interaction(&self) -> bool {
        self.provenance.event_ref.is_some()
    }
}

pub fn real_sample_id(index: usize) -> String {
    format!("r-{:08}", index + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    /// Samples with `y = 0`.
    pub m_real: u64,
    /// Samples with `y = 1`.
    pub n_forged: u64,
    /// Forged samples carrying the creator's own caption.
    pub n_blueprints: u64,
    /// Samples produced from social interaction events.
    pub n_interactions: u64,
    pub total: u64,
}

impl Tally {
    pub fn of(samples: &[DatasetSample]) -> Self {
        let mut t = Tally::default();
        for s in samples {
            t.total += 1;
            if s.y == 0 {
                t.m_real += 1;
            } else {
                t.n_forged += 1;
            }
            if s.is_interaction() {
                t.n_interactions += 1;
            } else if s.y == 1 {
                t.n_blueprints += 1;
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub seed: u64,
    pub config_digest: String,
    pub counts: Tally,
    pub tool_versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub samples: Vec<DatasetSample>,
}

impl DatasetManifest {
    /// Sorts samples by id and fills the header counts.
    pub fn new(
        seed: u64,
        config_digest: String,
        tool_versions: BTreeMap<String, String>,
        mut samples: Vec<DatasetSample>,
    ) -> Self {
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        DatasetManifest {
            header: ManifestHeader {
                format: MANIFEST_FORMAT.to_string(),
                seed,
                config_digest,
                counts: Tally::of(&samples),
                tool_versions,
            },
            samples,
        }
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<(), ManifestError> {
        serde_json::to_writer(&mut writer, &self.header).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut writer, s).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, ManifestError> {
        let mut lines = BufReader::new(reader).lines();
        let first = lines.next().ok_or(ManifestError::Malformed {
            line: 1,
            message: "missing header".into(),
        })??;
        let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| ManifestError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != MANIFEST_FORMAT {
            return Err(ManifestError::Malformed {
                line: 1,
                message: format!("unsupported format {:?}", header.format),
            });
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line).map_err(|e| ManifestError::Malformed {
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        Ok(DatasetManifest { header, samples })
    }

    /// Recomputes the tallies and checks them and the ordering against the header.
    pub fn verify(&self) -> Result<(), ManifestError> {
        let actual = Tally::of(&self.samples);
        let h = self.header.counts;
        for (field, header, actual) in [
            ("m_real", h.m_real, actual.m_real),
            ("n_forged", h.n_forged, actual.n_forged),
            ("n_blueprints", h.n_blueprints, actual.n_blueprints),
            ("n_interactions", h.n_interactions, actual.n_interactions),
            ("total", h.total, actual.total),
        ] {
            if header != actual {
                return Err(ManifestError::CountMismatch { field, header, actual });
            }
        }
        if let Some(w) = self.samples.windows(2).find(|w| w[0].sample_id >= w[1].sample_id) {
            return Err(ManifestError::Unordered(w[1].sample_id.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_header_only() {
        let m = DatasetManifest::new(1, "d".into(), BTreeMap::new(), vec![]);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back = DatasetManifest::read(buf.as_slice()).unwrap();
        assert_eq!(back.header.counts, Tally::default());
        back.verify().unwrap();
    }

    #[test]
    fn verify_catches_tampered_counts() {
        let samples = vec![DatasetSample::real(0, "a", "c"), DatasetSample::real(1, "b", "c")];
        let mut m = DatasetManifest::new(1, "d".into(), BTreeMap::new(), samples);
        assert_eq!(m.header.counts.m_real, 2);
        m.header.counts.m_real = 3;
        assert!(matches!(
            m.verify(),
            Err(ManifestError::CountMismatch { field: "m_real", .. })
        ));
    }

    #[test]
    fn real_samples_follow_dataset_convention() {
        let s = DatasetSample::real(4, "img", "caption");
        assert_eq!((s.y, s.delta, s.mismatch_flag), (0, 1, 0));
        assert!(s.provenance.chain.is_empty());
        assert_eq!(s.sample_id, "r-00000005");
    }
}
