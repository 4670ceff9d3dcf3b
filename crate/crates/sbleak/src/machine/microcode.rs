//! Microcode profiles for the modeled Ice Lake client part.
//!
//! Eleven revisions were exercised against the leak: everything up to and
//! including 0x5a still forwards stale store data to faulting loads, while
//! 0x66 and later block it. Every one of these revisions ships with the
//! MDS_NO capability bit set — which is exactly the trap the snapshot checker
//! flags: on the vulnerable revisions that bit is wrong.

use serde::{Deserialize, Serialize};

/// Release date of a microcode revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct McDate {
    pub year: u16,
    pub month: u8,
    pub day: u8,
}

impl McDate {
    pub const fn new(year: u16, month: u8, day: u8) -> Self {
        McDate { year, month, day }
    }
}

impl std::fmt::Display for McDate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

/// Behavior of one microcode revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicrocodeProfile {
    /// Revision number as reported by the platform (e.g. 0x48).
    pub revision: u32,
    /// Release date.
    pub date: McDate,
    /// Whether this revision blocks store-buffer forwarding to faulting loads.
    pub forwarding_mitigated: bool,
    /// Whether the platform reports the MDS_NO capability bit under this
    /// revision. True for every built-in profile — including the vulnerable
    /// ones, where the report is simply wrong.
    pub reported_mds_no: bool,
}

impl MicrocodeProfile {
    /// `0x48`-style lowercase hex rendering of the revision.
    pub fn revision_hex(&self) -> String {
        revision_hex(self.revision)
    }
}

/// `0x48`-style lowercase hex rendering of a revision number.
pub fn revision_hex(revision: u32) -> String {
    format!("{revision:#x}")
}

/// The 11 built-in revisions, oldest first.
pub const BUILTIN_PROFILES: [MicrocodeProfile; 11] = [
    profile(0x32, McDate::new(2019, 7, 5), false),
    profile(0x36, McDate::new(2019, 7, 18), false),
    profile(0x46, McDate::new(2019, 9, 5), false),
    profile(0x48, McDate::new(2019, 9, 12), false),
    profile(0x50, McDate::new(2019, 10, 27), false),
    profile(0x56, McDate::new(2019, 11, 5), false),
    profile(0x5a, McDate::new(2019, 11, 19), false),
    profile(0x66, McDate::new(2020, 1, 9), true),
    profile(0x70, McDate::new(2020, 2, 17), true),
    profile(0x82, McDate::new(2020, 4, 22), true),
    profile(0x86, McDate::new(2020, 5, 5), true),
];

const fn profile(revision: u32, date: McDate, forwarding_mitigated: bool) -> MicrocodeProfile {
    MicrocodeProfile {
        revision,
        date,
        forwarding_mitigated,
        reported_mds_no: true,
    }
}

/// All built-in profiles, oldest revision first.
pub fn builtin_profiles() -> &'static [MicrocodeProfile] {
    &BUILTIN_PROFILES
}

/// Looks up a built-in profile by revision number.
pub fn profile_by_revision(revision: u32) -> Option<&'static MicrocodeProfile> {
    BUILTIN_PROFILES.iter().find(|p| p.revision == revision)
}

/// Revisions observed to leak (i.e. built-ins with forwarding enabled).
pub fn vulnerable_revisions() -> impl Iterator<Item = u32> {
    BUILTIN_PROFILES
        .iter()
        .filter(|p| !p.forwarding_mitigated)
        .map(|p| p.revision)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_eleven_profiles_seven_vulnerable() {
        assert_eq!(builtin_profiles().len(), 11);
        let vuln: Vec<u32> = vulnerable_revisions().collect();
        assert_eq!(vuln, vec![0x32, 0x36, 0x46, 0x48, 0x50, 0x56, 0x5a]);
        let mitigated: Vec<u32> = builtin_profiles()
            .iter()
            .filter(|p| p.forwarding_mitigated)
            .map(|p| p.revision)
            .collect();
        assert_eq!(mitigated, vec![0x66, 0x70, 0x82, 0x86]);
    }

    #[test]
    fn test_every_builtin_reports_mds_no() {
        assert!(builtin_profiles().iter().all(|p| p.reported_mds_no));
    }

    #[test]
    fn test_dates_are_monotonic_and_rendered_iso() {
        let dates: Vec<McDate> = builtin_profiles().iter().map(|p| p.date).collect();
        let mut sorted = dates.clone();
        sorted.sort();
        assert_eq!(dates, sorted);
        assert_eq!(profile_by_revision(0x66).unwrap().date.to_string(), "2020-01-09");
        assert_eq!(profile_by_revision(0x32).unwrap().date.to_string(), "2019-07-05");
    }

    #[test]
    fn test_revision_lookup_and_hex() {
        assert!(profile_by_revision(0x5c).is_none());
        assert_eq!(profile_by_revision(0x5a).unwrap().revision_hex(), "0x5a");
    }
}
