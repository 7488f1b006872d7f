use std::fmt;

use serde::{Deserialize, Serialize};

/// General-purpose 64-bit registers.
///
/// `RC` is the count register of the string instructions and `RD:RA` is the
/// double-width dividend/product pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reg {
    Ra,
    Rb,
    Rc,
    Rd,
    Rsi,
    Rdi,
}

const VIEW_NAMES: [[&str; 4]; 6] = [
    ["RA", "EAX", "AX", "AL"],
    ["RB", "EBX", "BX", "BL"],
    ["RC", "ECX", "CX", "CL"],
    ["RD", "EDX", "DX", "DL"],
    ["RSI", "ESI", "SI", "SIL"],
    ["RDI", "EDI", "DI", "DIL"],
];

impl Reg {
    pub const ALL: [Reg; 6] = [Reg::Ra, Reg::Rb, Reg::Rc, Reg::Rd, Reg::Rsi, Reg::Rdi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        VIEW_NAMES[self.index()][0]
    }

    pub fn view(self, width: Width) -> RegView {
        RegView { reg: self, width }
    }

    pub fn full(self) -> RegView {
        self.view(Width::W64)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Operand width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
}

impl Width {
    pub const ALL: [Width; 4] = [Width::W8, Width::W16, Width::W32, Width::W64];

    pub fn bytes(self) -> u64 {
        match self {
            Width::W8 => 1,
            Width::W16 => 2,
            Width::W32 => 4,
            Width::W64 => 8,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() as u32 * 8
    }

    pub fn mask(self) -> u64 {
        match self {
            Width::W64 => u64::MAX,
            w => (1u64 << w.bits()) - 1,
        }
    }

    pub fn sign_bit(self) -> u64 {
        1u64 << (self.bits() - 1)
    }

    /// Sign-extends the low `self.bits()` bits of `value` to 64 bits.
    pub fn sign_extend(self, value: u64) -> u64 {
        let shift = 64 - self.bits();
        (((value << shift) as i64) >> shift) as u64
    }

    pub fn from_bytes(bytes: u64) -> Option<Width> {
        match bytes {
            1 => Some(Width::W8),
            2 => Some(Width::W16),
            4 => Some(Width::W32),
            8 => Some(Width::W64),
            _ => None,
        }
    }

    pub(crate) fn ptr_name(self) -> &'static str {
        match self {
            Width::W8 => "BYTE",
            Width::W16 => "WORD",
            Width::W32 => "DWORD",
            Width::W64 => "QWORD",
        }
    }

    pub(crate) fn suffix(self) -> char {
        match self {
            Width::W8 => 'B',
            Width::W16 => 'W',
            Width::W32 => 'D',
            Width::W64 => 'Q',
        }
    }

    fn view_slot(self) -> usize {
        match self {
            Width::W64 => 0,
            Width::W32 => 1,
            Width::W16 => 2,
            Width::W8 => 3,
        }
    }
}

/// A register accessed through one of its width views (`RA`, `EAX`, `AX`, `AL`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegView {
    pub reg: Reg,
    pub width: Width,
}

impl RegView {
    pub fn name(self) -> &'static str {
        VIEW_NAMES[self.reg.index()][self.width.view_slot()]
    }

    /// Parses a view name. `RAX`..`RDX` are accepted as aliases of the 64-bit views.
    pub fn parse(name: &str) -> Option<RegView> {
        let upper = name.to_ascii_uppercase();
        let alias = match upper.as_str() {
            "RAX" => Some(Reg::Ra),
            "RBX" => Some(Reg::Rb),
            "RCX" => Some(Reg::Rc),
            "RDX" => Some(Reg::Rd),
            _ => None,
        };
        if let Some(reg) = alias {
            return Some(reg.full());
        }
        for reg in Reg::ALL {
            for width in Width::ALL {
                if VIEW_NAMES[reg.index()][width.view_slot()] == upper {
                    return Some(RegView { reg, width });
                }
            }
        }
        None
    }

    /// Value of this view given the full 64-bit register value.
    pub fn extract(self, full: u64) -> u64 {
        full & self.width.mask()
    }

    /// New full register value after writing `value` through this view.
    ///
    /// 32-bit writes zero the upper half; 8- and 16-bit writes merge.
    pub fn merge(self, full: u64, value: u64) -> u64 {
        match self.width {
            Width::W64 => value,
            Width::W32 => value & Width::W32.mask(),
            w => (full & !w.mask()) | (value & w.mask()),
        }
    }

    /// Whether a write through this view keeps bits of the old value.
    pub fn write_merges(self) -> bool {
        matches!(self.width, Width::W8 | Width::W16)
    }
}

impl fmt::Display for RegView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flag {
    Zf,
    Cf,
    Sf,
    Of,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::Zf, Flag::Cf, Flag::Sf, Flag::Of];

    pub fn name(self) -> &'static str {
        match self {
            Flag::Zf => "ZF",
            Flag::Cf => "CF",
            Flag::Sf => "SF",
            Flag::Of => "OF",
        }
    }

    pub fn parse(name: &str) -> Option<Flag> {
        Flag::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub zf: bool,
    pub cf: bool,
    pub sf: bool,
    pub of: bool,
}

impl Flags {
    pub fn get(&self, flag: Flag) -> bool {
        match flag {
            Flag::Zf => self.zf,
            Flag::Cf => self.cf,
            Flag::Sf => self.sf,
            Flag::Of => self.of,
        }
    }

    pub fn set(&mut self, flag: Flag, value: bool) {
        match flag {
            Flag::Zf => self.zf = value,
            Flag::Cf => self.cf = value,
            Flag::Sf => self.sf = value,
            Flag::Of => self.of = value,
        }
    }
}
