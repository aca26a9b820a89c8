//! Provenance header lines and content checksums.

use sha2::{Digest, Sha256};
use slicefinder_core::{Image2D, MatcherParams, StrategyKind, Volume3D};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over dimensions, spacing and voxel values (as f64 bits).
pub fn volume_checksum(vol: &Volume3D) -> String {
    let mut bytes = Vec::with_capacity(48 + vol.data().len() * 8);
    for d in vol.dims() {
        bytes.extend((d as u64).to_le_bytes());
    }
    for s in vol.spacing_um() {
        bytes.extend(s.to_le_bytes());
    }
    for v in vol.data() {
        bytes.extend(v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// SHA-256 over dimensions, spacing, values and mask.
pub fn image_checksum(img: &Image2D) -> String {
    let mut bytes = Vec::with_capacity(24 + img.data().len() * 9);
    bytes.extend((img.width() as u64).to_le_bytes());
    bytes.extend((img.height() as u64).to_le_bytes());
    bytes.extend(img.spacing_um().to_le_bytes());
    for (v, m) in img.data().iter().zip(img.mask()) {
        bytes.extend(v.to_le_bytes());
        bytes.push(u8::from(*m));
    }
    sha256_hex(&bytes)
}

/// Short hash of every parameter that influences scores.
pub fn params_hash(params: &MatcherParams, strategy: StrategyKind) -> String {
    let text = format!("{params:?} strategy={strategy}");
    sha256_hex(text.as_bytes())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    /// Rows `0..done` of `total` have been written.
    Incomplete {
        done: usize,
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub params: String,
    pub exp: String,
    pub template: String,
    pub status: RunStatus,
}

impl Provenance {
    pub fn new(
        params: &MatcherParams,
        strategy: StrategyKind,
        exp: String,
        template: String,
    ) -> Self {
        Self {
            params: params_hash(params, strategy),
            exp,
            template,
            status: RunStatus::Complete,
        }
    }

    pub fn with_status(&self, status: RunStatus) -> Self {
        Self {
            status,
            ..self.clone()
        }
    }

    /// `# slicefinder <version> params=<hash> exp=<sha> template=<sha> status=<...>`
    pub fn line(&self) -> String {
        let status = match self.status {
            RunStatus::Complete => "complete".to_string(),
            RunStatus::Incomplete { done, total } => format!("incomplete({done}/{total})"),
        };
        format!(
            "# slicefinder {VERSION} params={} exp={} template={} status={status}",
            self.params, self.exp, self.template
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# slicefinder ")?;
        let mut fields = rest.split_whitespace().skip(1);
        let mut get = |key: &str| fields.next()?.strip_prefix(key).map(str::to_string);
        let params = get("params=")?;
        let exp = get("exp=")?;
        let template = get("template=")?;
        let status = get("status=")?;
        let status = if status == "complete" {
            RunStatus::Complete
        } else {
            let inner = status.strip_prefix("incomplete(")?.strip_suffix(')')?;
            let (d, t) = inner.split_once('/')?;
            RunStatus::Incomplete {
                done: d.parse().ok()?,
                total: t.parse().ok()?,
            }
        };
        Some(Self {
            params,
            exp,
            template,
            status,
        })
    }
}
