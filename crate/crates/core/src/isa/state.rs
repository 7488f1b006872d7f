use serde::{Deserialize, Serialize};

use super::reg::{Flags, Reg, RegView};

pub const PAGE_SIZE: usize = 4096;

/// Initial architectural state supplied to a test program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputData {
    pub regs: [u64; 6],
    pub flags: Flags,
    #[serde(with = "hex_page")]
    pub mem: Vec<u8>,
}

impl Default for InputData {
    fn default() -> Self {
        InputData {
            regs: [0; 6],
            flags: Flags::default(),
            mem: vec![0; PAGE_SIZE],
        }
    }
}

impl InputData {
    pub fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    pub fn set_reg(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
    }

    pub fn write_u64(&mut self, offset: usize, v: u64) {
        for (i, b) in v.to_le_bytes().into_iter().enumerate() {
            self.mem[(offset + i) % PAGE_SIZE] = b;
        }
    }
}

/// Full machine state during execution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchState {
    pub regs: [u64; 6],
    pub flags: Flags,
    #[serde(with = "hex_page")]
    pub mem: Vec<u8>,
    pub pc: usize,
}

impl Default for ArchState {
    fn default() -> Self {
        ArchState::from_input(&InputData::default())
    }
}

impl ArchState {
    pub fn from_input(input: &InputData) -> ArchState {
        debug_assert_eq!(input.mem.len(), PAGE_SIZE);
        ArchState {
            regs: input.regs,
            flags: input.flags,
            mem: input.mem.clone(),
            pc: 0,
        }
    }

    pub fn reg(&self, r: Reg) -> u64 {
        self.regs[r.index()]
    }

    pub fn set_reg(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = v;
    }

    pub fn read_view(&self, v: RegView) -> u64 {
        v.extract(self.reg(v.reg))
    }

    pub fn write_view(&mut self, v: RegView, value: u64) {
        let full = v.merge(self.reg(v.reg), value);
        self.set_reg(v.reg, full);
    }

    /// Little-endian read of `size` bytes; bytes past the page end wrap.
    pub fn load(&self, offset: u16, size: u64) -> u64 {
        let mut v = 0u64;
        for i in 0..size as usize {
            v |= (self.mem[(offset as usize + i) % PAGE_SIZE] as u64) << (8 * i);
        }
        v
    }

    pub fn store(&mut self, offset: u16, size: u64, value: u64) {
        for i in 0..size as usize {
            self.mem[(offset as usize + i) % PAGE_SIZE] = (value >> (8 * i)) as u8;
        }
    }
}

mod hex_page {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(serde::de::Error::custom)?;
        if bytes.len() != super::PAGE_SIZE {
            return Err(serde::de::Error::custom("sandbox page must be 4096 bytes"));
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::reg::Width;

    #[test]
    fn wrapping_access() {
        let mut s = ArchState::default();
        s.store(4094, 4, 0xAABB_CCDD);
        assert_eq!(s.mem[4094], 0xDD);
        assert_eq!(s.mem[1], 0xAA);
        assert_eq!(s.load(4094, 4), 0xAABB_CCDD);
    }

    #[test]
    fn view_write_zero_extends() {
        let mut s = ArchState::default();
        s.set_reg(Reg::Rb, u64::MAX);
        s.write_view(Reg::Rb.view(Width::W32), 7);
        assert_eq!(s.reg(Reg::Rb), 7);
    }

    #[test]
    fn input_serde_round_trip() {
        let mut input = InputData::default();
        input.regs[2] = 99;
        input.mem[17] = 3;
        let json = serde_json::to_string(&input).unwrap();
        assert_eq!(serde_json::from_str::<InputData>(&json).unwrap(), input);
    }
}
