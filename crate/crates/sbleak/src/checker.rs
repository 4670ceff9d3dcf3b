//! CPU snapshot assessment.
//!
//! Takes a textual snapshot of a CPU's identity (vendor/family/model,
//! microcode revision, IA32_ARCH_CAPABILITIES) and decides whether that part
//! forwards store-buffer data to faulting loads. Also flags the errata-057
//! condition: a part that leaks while its MDS_NO bit claims immunity.

use serde::Serialize;
use thiserror::Error;

use crate::machine::{builtin_profiles, revision_hex, vulnerable_revisions};

/// Identity gate: only this exact part is assessed.
pub const ICE_LAKE_VENDOR: &str = "GenuineIntel";
pub const ICE_LAKE_FAMILY: u32 = 6;
pub const ICE_LAKE_MODEL: u32 = 126;

/// Bit position of MDS_NO in IA32_ARCH_CAPABILITIES.
pub const MDS_NO_BIT: u32 = 5;

/// First revision of the window in which the forwarding fix reportedly
/// landed; catalogued leak measurements stop just below it, so revisions
/// from here up to the first measured-clean revision are only presumed fixed.
pub const PRESUMED_FIX_REVISION: u32 = 0x5c;

/// A parsed CPU snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpuSnapshot {
    pub vendor: String,
    pub family: u32,
    pub model: u32,
    pub stepping: u32,
    pub microcode_revision: u32,
    /// Raw IA32_ARCH_CAPABILITIES value, when the snapshot has one.
    pub arch_capabilities: Option<u64>,
}

/// Snapshot parse failures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("snapshot is missing required field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has malformed value `{value}`")]
    MalformedHex { field: String, value: String },
}

/// Vulnerability verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AssessStatus {
    /// The part forwards buffered stores to faulting loads.
    VulnerableMSBDS,
    /// Revision at or past the first measured-clean revision.
    Mitigated,
    /// Revision inside the fix window but below any clean measurement.
    PresumedMitigated,
    /// Not the part this assessment is calibrated for.
    NotApplicable,
}

impl std::fmt::Display for AssessStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AssessStatus::VulnerableMSBDS => "VulnerableMSBDS",
            AssessStatus::Mitigated => "Mitigated",
            AssessStatus::PresumedMitigated => "PresumedMitigated",
            AssessStatus::NotApplicable => "NotApplicable",
        })
    }
}

/// The verdict plus the reasoning behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assessment {
    pub status: AssessStatus,
    /// True when the part leaks while its MDS_NO bit claims immunity.
    pub errata_057: bool,
    pub rationale: String,
}

impl Assessment {
    /// Structured-text rendering, mirroring the snapshot input format.
    pub fn render(&self) -> String {
        format!(
            "status = {}\nerrata_057 = {}\nrationale = {}\n",
            self.status, self.errata_057, self.rationale
        )
    }
}

/// Parses a snapshot: one `key = value` per line, `#` comments, blank lines
/// ignored. Numeric fields accept decimal or 0x-prefixed hex. Unknown keys
/// are ignored so snapshots may carry extra information.
pub fn parse_snapshot(text: &str) -> Result<CpuSnapshot, SnapshotError> {
    let mut vendor = None;
    let mut fields: [(&str, Option<u64>); 5] = [
        ("family", None),
        ("model", None),
        ("stepping", None),
        ("microcode", None),
        ("arch_capabilities", None),
    ];

    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "vendor" {
            vendor = Some(value.to_string());
            continue;
        }
        if let Some(slot) = fields.iter_mut().find(|(name, _)| *name == key) {
            slot.1 = Some(parse_number(key, value)?);
        }
    }

    let vendor = vendor.ok_or_else(|| SnapshotError::MissingField("vendor".into()))?;
    let required = |idx: usize| -> Result<u64, SnapshotError> {
        fields[idx].1.ok_or_else(|| SnapshotError::MissingField(fields[idx].0.into()))
    };
    Ok(CpuSnapshot {
        vendor,
        family: required(0)? as u32,
        model: required(1)? as u32,
        stepping: required(2)? as u32,
        microcode_revision: required(3)? as u32,
        arch_capabilities: fields[4].1,
    })
}

fn parse_number(field: &str, value: &str) -> Result<u64, SnapshotError> {
    let parsed = match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => value.parse::<u64>(),
    };
    parsed.map_err(|_| SnapshotError::MalformedHex {
        field: field.to_string(),
        value: value.to_string(),
    })
}

/// Whether the MDS_NO immunity claim is set in a raw
/// IA32_ARCH_CAPABILITIES value.
pub fn mds_no_set(arch_capabilities: u64) -> bool {
    arch_capabilities & (1 << MDS_NO_BIT) != 0
}

/// Assesses a snapshot against the catalogued microcode history.
pub fn assess(snapshot: &CpuSnapshot) -> Assessment {
    if snapshot.vendor != ICE_LAKE_VENDOR
        || snapshot.family != ICE_LAKE_FAMILY
        || snapshot.model != ICE_LAKE_MODEL
    {
        return Assessment {
            status: AssessStatus::NotApplicable,
            errata_057: false,
            rationale: format!(
                "assessment covers {} family {} model {} only; snapshot is {} family {} model {}",
                ICE_LAKE_VENDOR,
                ICE_LAKE_FAMILY,
                ICE_LAKE_MODEL,
                snapshot.vendor,
                snapshot.family,
                snapshot.model
            ),
        };
    }

    let rev = snapshot.microcode_revision;
    let first_clean = builtin_profiles()
        .iter()
        .filter(|p| p.forwarding_mitigated)
        .map(|p| p.revision)
        .min()
        .expect("catalogue has mitigated revisions");

    let (status, rationale) = if rev >= first_clean {
        (
            AssessStatus::Mitigated,
            format!(
                "microcode {} is at or past {}, where catalogued leakage measurements read zero",
                revision_hex(rev),
                revision_hex(first_clean)
            ),
        )
    } else if rev >= PRESUMED_FIX_REVISION {
        (
            AssessStatus::PresumedMitigated,
            format!(
                "microcode {} falls inside the reported fix window [{}, {}) but below any \
                 measured-clean revision",
                revision_hex(rev),
                revision_hex(PRESUMED_FIX_REVISION),
                revision_hex(first_clean)
            ),
        )
    } else if vulnerable_revisions().any(|v| v == rev) {
        (
            AssessStatus::VulnerableMSBDS,
            format!(
                "microcode {} is catalogued with nonzero store-buffer leakage; faulting loads \
                 receive forwarded store data",
                revision_hex(rev)
            ),
        )
    } else {
        (
            AssessStatus::VulnerableMSBDS,
            format!(
                "microcode {} predates the fix window and is not in the catalogue; treated as \
                 vulnerable",
                revision_hex(rev)
            ),
        )
    };

    let errata_057 = status == AssessStatus::VulnerableMSBDS
        && snapshot.arch_capabilities.is_some_and(mds_no_set);
    let rationale = if errata_057 {
        format!("{rationale}; MDS_NO is set, incorrectly claiming immunity (errata 057)")
    } else {
        rationale
    };
    Assessment { status, errata_057, rationale }
}
