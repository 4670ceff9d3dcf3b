//! Page table and access-fault classification.
//!
//! The simulator models a flat 4 KiB-page address space. Every mapped page
//! carries the handful of permission bits the attack cares about: present,
//! user-accessible, and a protection key that may be denied for the current
//! thread. Unmapped addresses behave like non-present pages.

use std::collections::HashMap;

use crate::machine::MachineError;

/// Page size in bytes. Store/load aliasing is defined modulo this value.
pub const PAGE_SIZE: u64 = 4096;

/// Returns the page base (bits 12 and up) of a virtual address.
pub fn page_base(vaddr: u64) -> u64 {
    vaddr & !(PAGE_SIZE - 1)
}

/// Returns the offset of an address inside its page (bits 0..12).
pub fn page_offset(vaddr: u64) -> u16 {
    (vaddr & (PAGE_SIZE - 1)) as u16
}

/// Translation entry for one 4 KiB page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageMapping {
    /// Page-aligned virtual address this mapping describes.
    pub vaddr: u64,
    /// Present bit; a cleared bit means any access takes a not-present fault.
    pub present: bool,
    /// User-accessible bit (the US bit); cleared for supervisor-only pages.
    pub user_accessible: bool,
    /// Memory protection key, 0..=15.
    pub protection_key: u8,
    /// Whether the current thread's key rights deny access to this page's key.
    pub key_denied: bool,
}

impl PageMapping {
    /// A present, user-accessible page with key 0 and no key denial.
    pub fn user_data(vaddr: u64) -> Self {
        PageMapping {
            vaddr,
            present: true,
            user_accessible: true,
            protection_key: 0,
            key_denied: false,
        }
    }

    /// A present supervisor-only page (user accesses fault with `FaultUS`).
    pub fn supervisor(vaddr: u64) -> Self {
        PageMapping {
            user_accessible: false,
            ..Self::user_data(vaddr)
        }
    }

    /// A present user page whose protection key is denied (`FaultPK`).
    pub fn key_denied(vaddr: u64, key: u8) -> Self {
        PageMapping {
            protection_key: key,
            key_denied: true,
            ..Self::user_data(vaddr)
        }
    }

    /// A non-present page (`FaultNP`).
    pub fn not_present(vaddr: u64) -> Self {
        PageMapping {
            present: false,
            ..Self::user_data(vaddr)
        }
    }
}

/// Outcome of a permission check for one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum AccessOutcome {
    /// Access is architecturally permitted.
    Ok,
    /// User access to a supervisor page.
    FaultUS,
    /// Access denied by the page's protection key.
    FaultPK,
    /// Page not present.
    FaultNP,
}

impl AccessOutcome {
    /// Whether this outcome is a fault at all.
    pub fn is_fault(self) -> bool {
        self != AccessOutcome::Ok
    }
}

impl std::fmt::Display for AccessOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AccessOutcome::Ok => "ok",
            AccessOutcome::FaultUS => "fault-us",
            AccessOutcome::FaultPK => "fault-pk",
            AccessOutcome::FaultNP => "fault-np",
        };
        f.write_str(s)
    }
}

/// Flat page table: page base -> mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PageTable {
    pages: HashMap<u64, PageMapping>,
}

impl PageTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs a mapping. Rejects unaligned page addresses and out-of-range
    /// protection keys; re-mapping an existing page replaces it.
    pub fn map(&mut self, mapping: PageMapping) -> Result<(), MachineError> {
        if mapping.vaddr % PAGE_SIZE != 0 {
            return Err(MachineError::UnalignedPage(mapping.vaddr));
        }
        if mapping.protection_key > 15 {
            return Err(MachineError::ProtectionKeyRange(mapping.protection_key));
        }
        self.pages.insert(mapping.vaddr, mapping);
        Ok(())
    }

    /// Looks up the mapping covering `vaddr`, if any.
    pub fn mapping(&self, vaddr: u64) -> Option<&PageMapping> {
        self.pages.get(&page_base(vaddr))
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Classifies an access to `vaddr`. Total: unmapped addresses report
    /// `FaultNP`. Fault precedence is NP over US over PK, so a non-present
    /// supervisor page reports `FaultNP` and a supervisor page with a denied
    /// key reports `FaultUS`.
    pub fn classify_access(&self, vaddr: u64, from_user: bool) -> AccessOutcome {
        let Some(m) = self.mapping(vaddr) else {
            return AccessOutcome::FaultNP;
        };
        if !m.present {
            AccessOutcome::FaultNP
        } else if from_user && !m.user_accessible {
            AccessOutcome::FaultUS
        } else if m.key_denied {
            AccessOutcome::FaultPK
        } else {
            AccessOutcome::Ok
        }
    }
}
