//! 128-bit macro instruction format, binary program files and a small
//! line-oriented assembler.
//!
//! Bit layout (most significant first):
//!
//! ```text
//! [127:124] mode   [123:110] length   [109:96] width
//! [95] off_x  [94:64] addr_x
//! [63] off_y  [62:32] addr_y
//! [31] off_z  [30:0]  addr_z
//! ```
//!
//! Control instructions reuse the fields: `Loop` keeps the end PC in `addr_x`
//! and the iteration count in `addr_y`; `RegAddi` selects the offset register
//! with `length` and carries a signed 31-bit immediate in `addr_x`;
//! `RegStore`/`RegLoad` select the register group with `length` and the memory
//! address with `addr_z`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub const INSTRUCTION_BYTES: usize = 16;
pub const MAX_LENGTH: u16 = (1 << 14) - 1;
pub const MAX_ADDR: u32 = (1 << 31) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    Vadd = 0,
    Vsub = 1,
    Vmul = 2,
    Vsgt = 3,
    Vsig = 4,
    Vtanh = 5,
    Vexp = 6,
    Mvmul = 7,
    VSsgt = 8,
    Vmaxabs = 9,
    Vsqnorm = 10,
    Loop = 11,
    RegAddi = 12,
    RegStore = 13,
    RegLoad = 14,
    Halt = 15,
}

impl Opcode {
    pub const ALL: [Opcode; 16] = [
        Opcode::Vadd,
        Opcode::Vsub,
        Opcode::Vmul,
        Opcode::Vsgt,
        Opcode::Vsig,
        Opcode::Vtanh,
        Opcode::Vexp,
        Opcode::Mvmul,
        Opcode::VSsgt,
        Opcode::Vmaxabs,
        Opcode::Vsqnorm,
        Opcode::Loop,
        Opcode::RegAddi,
        Opcode::RegStore,
        Opcode::RegLoad,
        Opcode::Halt,
    ];

    pub fn from_mode(mode: u8) -> Opcode {
        Opcode::ALL[(mode & 0xF) as usize]
    }

    pub fn mode(self) -> u8 {
        self as u8
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Vadd => "vadd",
            Opcode::Vsub => "vsub",
            Opcode::Vmul => "vmul",
            Opcode::Vsgt => "vsgt",
            Opcode::Vsig => "vsig",
            Opcode::Vtanh => "vtanh",
            Opcode::Vexp => "vexp",
            Opcode::Mvmul => "mvmul",
            Opcode::VSsgt => "vssgt",
            Opcode::Vmaxabs => "vmaxabs",
            Opcode::Vsqnorm => "vsqnorm",
            Opcode::Loop => "loop",
            Opcode::RegAddi => "regaddi",
            Opcode::RegStore => "regstore",
            Opcode::RegLoad => "regload",
            Opcode::Halt => "halt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let lower = s.to_ascii_lowercase();
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == lower)
    }

    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Loop | Opcode::RegAddi | Opcode::RegStore | Opcode::RegLoad | Opcode::Halt)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Offset register selected by `RegAddi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffsetReg {
    X = 0,
    Y = 1,
    Z = 2,
}

/// Register group moved by `RegStore` / `RegLoad`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegGroup {
    /// `loop_begin, loop_end, loop_n`
    Loop = 0,
    /// `off_x, off_y, off_z`
    Offsets = 1,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("{field} = {value} does not fit in {bits} bits")]
    FieldOutOfRange { field: &'static str, value: i64, bits: u32 },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("program file length {0} is not a multiple of 16 bytes")]
    TruncatedProgram(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MacroInstruction {
    pub opcode: Opcode,
    pub length: u16,
    pub width: u16,
    pub off_x: bool,
    pub off_y: bool,
    pub off_z: bool,
    pub addr_x: u32,
    pub addr_y: u32,
    pub addr_z: u32,
}

impl MacroInstruction {
    pub fn new(opcode: Opcode) -> Self {
        MacroInstruction {
            opcode,
            length: 0,
            width: 0,
            off_x: false,
            off_y: false,
            off_z: false,
            addr_x: 0,
            addr_y: 0,
            addr_z: 0,
        }
    }

    /// Element-wise or reduction op over `length` words.
    pub fn vector(opcode: Opcode, length: usize, x: usize, y: usize, z: usize) -> Self {
        MacroInstruction {
            length: length as u16,
            addr_x: x as u32,
            addr_y: y as u32,
            addr_z: z as u32,
            ..Self::new(opcode)
        }
    }

    /// `Z[r] += sum_c X[r*length + c] * Y[c]` for `r < width`.
    pub fn mvmul(length: usize, width: usize, x: usize, y: usize, z: usize) -> Self {
        MacroInstruction { width: width as u16, ..Self::vector(Opcode::Mvmul, length, x, y, z) }
    }

    pub fn loop_to(end_pc: usize, iterations: u32) -> Self {
        MacroInstruction { addr_x: end_pc as u32, addr_y: iterations, ..Self::new(Opcode::Loop) }
    }

    pub fn reg_addi(reg: OffsetReg, imm: i32) -> Self {
        MacroInstruction { length: reg as u16, addr_x: (imm as u32) & MAX_ADDR, ..Self::new(Opcode::RegAddi) }
    }

    pub fn reg_store(group: RegGroup, addr: usize) -> Self {
        MacroInstruction { length: group as u16, addr_z: addr as u32, ..Self::new(Opcode::RegStore) }
    }

    pub fn reg_load(group: RegGroup, addr: usize) -> Self {
        MacroInstruction { length: group as u16, addr_z: addr as u32, ..Self::new(Opcode::RegLoad) }
    }

    pub fn halt() -> Self {
        Self::new(Opcode::Halt)
    }

    pub fn with_offsets(mut self, x: bool, y: bool, z: bool) -> Self {
        self.off_x = x;
        self.off_y = y;
        self.off_z = z;
        self
    }

    /// Sign-extended `RegAddi` immediate.
    pub fn immediate(&self) -> i32 {
        ((self.addr_x << 1) as i32) >> 1
    }

    pub fn validate(&self) -> Result<(), IsaError> {
        check(self.length as i64, MAX_LENGTH as i64, "length", 14)?;
        check(self.width as i64, MAX_LENGTH as i64, "width", 14)?;
        check(self.addr_x as i64, MAX_ADDR as i64, "addr_x", 31)?;
        check(self.addr_y as i64, MAX_ADDR as i64, "addr_y", 31)?;
        check(self.addr_z as i64, MAX_ADDR as i64, "addr_z", 31)
    }

    pub fn encode(&self) -> Result<u128, IsaError> {
        self.validate()?;
        Ok(((self.opcode.mode() as u128) << 124)
            | ((self.length as u128) << 110)
            | ((self.width as u128) << 96)
            | ((self.off_x as u128) << 95)
            | ((self.addr_x as u128) << 64)
            | ((self.off_y as u128) << 63)
            | ((self.addr_y as u128) << 32)
            | ((self.off_z as u128) << 31)
            | (self.addr_z as u128))
    }

    pub fn decode(word: u128) -> MacroInstruction {
        let bits = |shift: u32, width: u32| ((word >> shift) & ((1u128 << width) - 1)) as u32;
        MacroInstruction {
            opcode: Opcode::from_mode(bits(124, 4) as u8),
            length: bits(110, 14) as u16,
            width: bits(96, 14) as u16,
            off_x: bits(95, 1) == 1,
            addr_x: bits(64, 31),
            off_y: bits(63, 1) == 1,
            addr_y: bits(32, 31),
            off_z: bits(31, 1) == 1,
            addr_z: bits(0, 31),
        }
    }
}

fn check(value: i64, max: i64, field: &'static str, bits: u32) -> Result<(), IsaError> {
    if value < 0 || value > max {
        Err(IsaError::FieldOutOfRange { field, value, bits })
    } else {
        Ok(())
    }
}

pub fn encode(inst: &MacroInstruction) -> Result<u128, IsaError> {
    inst.encode()
}

pub fn decode(word: u128) -> MacroInstruction {
    MacroInstruction::decode(word)
}

/// Binary program file: 16 little-endian bytes per instruction.
pub fn program_to_bytes(program: &[MacroInstruction]) -> Result<Vec<u8>, IsaError> {
    let mut out = Vec::with_capacity(program.len() * INSTRUCTION_BYTES);
    for inst in program {
        out.extend_from_slice(&inst.encode()?.to_le_bytes());
    }
    Ok(out)
}

pub fn program_from_bytes(bytes: &[u8]) -> Result<Vec<MacroInstruction>, IsaError> {
    if bytes.len() % INSTRUCTION_BYTES != 0 {
        return Err(IsaError::TruncatedProgram(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(INSTRUCTION_BYTES)
        .map(|c| MacroInstruction::decode(u128::from_le_bytes(c.try_into().expect("16-byte chunk"))))
        .collect())
}

impl fmt::Display for MacroInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Opcode::*;
        let compute = !self.opcode.is_control();
        write!(f, "{}", self.opcode)?;
        if compute || matches!(self.opcode, RegAddi | RegStore | RegLoad) || self.length != 0 {
            write!(f, " length={}", self.length)?;
        }
        if self.opcode == Mvmul || self.width != 0 {
            write!(f, " width={}", self.width)?;
        }
        match self.opcode {
            Loop => write!(f, " end={} n={}", self.addr_x, self.addr_y)?,
            RegAddi => write!(f, " imm={}", self.immediate())?,
            _ if compute || self.addr_x != 0 => write!(f, " x={:#x}", self.addr_x)?,
            _ => {}
        }
        if self.opcode != Loop && (compute || self.addr_y != 0) {
            write!(f, " y={:#x}", self.addr_y)?;
        }
        if compute || matches!(self.opcode, RegStore | RegLoad) || self.addr_z != 0 {
            write!(f, " z={:#x}", self.addr_z)?;
        }
        for (set, name) in [(self.off_x, "offx"), (self.off_y, "offy"), (self.off_z, "offz")] {
            if set {
                write!(f, " {name}")?;
            }
        }
        Ok(())
    }
}

/// One instruction per line; see [`assemble`].
pub fn disassemble(program: &[MacroInstruction]) -> String {
    let mut out = String::new();
    for inst in program {
        out.push_str(&inst.to_string());
        out.push('\n');
    }
    out
}

fn parse_number(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

enum Operand<'a> {
    Value(i64),
    Label(&'a str),
}

/// Assembles `opcode length=N width=M x=A y=B z=C [offx] [offy] [offz]` lines.
///
/// `#` starts a comment. `name:` defines a label equal to the index of the next
/// instruction; labels may appear wherever a number is expected. `loop` also
/// accepts `end=` / `n=` and `regaddi` accepts `imm=` (signed).
pub fn assemble(source: &str) -> Result<Vec<MacroInstruction>, IsaError> {
    struct Pending<'a> {
        line: usize,
        opcode: Opcode,
        fields: Vec<(&'a str, Operand<'a>)>,
        flags: [bool; 3],
    }

    let mut labels: HashMap<&str, usize> = HashMap::new();
    let mut pending: Vec<Pending> = Vec::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let err = |reason: String| IsaError::Syntax { line: line_no, reason };
        let mut line = raw_line.split('#').next().unwrap_or("").trim();
        while let Some(colon) = line.find(':') {
            let (name, rest) = line.split_at(colon);
            let name = name.trim();
            if !is_label(name) || name.contains(char::is_whitespace) {
                return Err(err(format!("invalid label '{name}'")));
            }
            if labels.insert(name, pending.len()).is_some() {
                return Err(err(format!("duplicate label '{name}'")));
            }
            line = rest[1..].trim();
        }
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let mnemonic = tokens.next().expect("non-empty line");
        let opcode = Opcode::from_mnemonic(mnemonic)
            .ok_or_else(|| err(format!("unknown opcode '{mnemonic}'")))?;
        let mut fields = Vec::new();
        let mut flags = [false; 3];
        for tok in tokens {
            match tok.to_ascii_lowercase().as_str() {
                "offx" => flags[0] = true,
                "offy" => flags[1] = true,
                "offz" => flags[2] = true,
                _ => {
                    let (key, value) =
                        tok.split_once('=').ok_or_else(|| err(format!("expected key=value, found '{tok}'")))?;
                    let key = match (opcode, key) {
                        (_, "length" | "width" | "x" | "y" | "z") => key,
                        (Opcode::Loop, "end") => "x",
                        (Opcode::Loop, "n") => "y",
                        (Opcode::RegAddi, "imm") => "imm",
                        _ => return Err(err(format!("unknown field '{key}' for {opcode}"))),
                    };
                    if fields.iter().any(|(k, _)| *k == key) {
                        return Err(err(format!("field '{key}' given twice")));
                    }
                    let operand = match parse_number(value) {
                        Some(v) => Operand::Value(v),
                        None if is_label(value) => Operand::Label(value),
                        None => return Err(err(format!("invalid number '{value}'"))),
                    };
                    fields.push((key, operand));
                }
            }
        }
        if opcode == Opcode::Loop && !fields.iter().any(|(k, _)| *k == "x") {
            return Err(err("loop requires end=".into()));
        }
        if opcode == Opcode::Mvmul && !fields.iter().any(|(k, _)| *k == "width") {
            return Err(err("mvmul requires width=".into()));
        }
        if !opcode.is_control() && !fields.iter().any(|(k, _)| *k == "length") {
            return Err(err(format!("{opcode} requires length=")));
        }
        pending.push(Pending { line: line_no, opcode, fields, flags });
    }

    pending
        .into_iter()
        .map(|p| {
            let err = |reason: String| IsaError::Syntax { line: p.line, reason };
            let mut inst = MacroInstruction::new(p.opcode).with_offsets(p.flags[0], p.flags[1], p.flags[2]);
            for (key, operand) in p.fields {
                let value = match operand {
                    Operand::Value(v) => v,
                    Operand::Label(name) => {
                        *labels.get(name).ok_or_else(|| err(format!("undefined label '{name}'")))? as i64
                    }
                };
                let range = |max: i64, bits: u32| {
                    if value < 0 || value > max {
                        Err(err(format!("{key}={value} does not fit in {bits} bits")))
                    } else {
                        Ok(value)
                    }
                };
                match key {
                    "length" => inst.length = range(MAX_LENGTH as i64, 14)? as u16,
                    "width" => inst.width = range(MAX_LENGTH as i64, 14)? as u16,
                    "x" => inst.addr_x = range(MAX_ADDR as i64, 31)? as u32,
                    "y" => inst.addr_y = range(MAX_ADDR as i64, 31)? as u32,
                    "z" => inst.addr_z = range(MAX_ADDR as i64, 31)? as u32,
                    "imm" => {
                        if !(-(1i64 << 30)..(1i64 << 30)).contains(&value) {
                            return Err(err(format!("imm={value} does not fit in 31 signed bits")));
                        }
                        inst.addr_x = (value as i32 as u32) & MAX_ADDR;
                    }
                    _ => unreachable!("keys are normalised while parsing"),
                }
            }
            Ok(inst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_vadd_example() {
        let inst = MacroInstruction::vector(Opcode::Vadd, 4, 0x100, 0x200, 0x300);
        assert_eq!(inst.encode().unwrap(), 0x00010000_00000100_00000200_00000300);
        assert_eq!(decode(0x00010000_00000100_00000200_00000300), inst);
        assert_eq!(MacroInstruction::new(Opcode::Vadd).encode().unwrap(), 0);
    }

    #[test]
    fn decodes_loop_fields() {
        let word = (Opcode::Loop.mode() as u128) << 124 | (12u128 << 64) | (9u128 << 32);
        let inst = decode(word);
        assert_eq!(inst.opcode, Opcode::Loop);
        assert_eq!((inst.addr_x, inst.addr_y), (12, 9));
        assert_eq!(inst, MacroInstruction::loop_to(12, 9));
    }

    #[test]
    fn offset_flags_use_top_address_bits() {
        let inst = MacroInstruction::new(Opcode::Vadd).with_offsets(true, true, true);
        let w = inst.encode().unwrap();
        assert_eq!(w, (1u128 << 95) | (1u128 << 63) | (1u128 << 31));
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let inst = MacroInstruction::vector(Opcode::Vadd, 1, 1 << 31, 0, 0);
        assert!(matches!(inst.encode(), Err(IsaError::FieldOutOfRange { field: "addr_x", .. })));
        let inst = MacroInstruction { length: 1 << 14, ..MacroInstruction::new(Opcode::Vadd) };
        assert!(inst.encode().is_err());
    }

    #[test]
    fn regaddi_immediate_is_signed() {
        assert_eq!(MacroInstruction::reg_addi(OffsetReg::Y, -6).immediate(), -6);
        assert_eq!(MacroInstruction::reg_addi(OffsetReg::X, 6).immediate(), 6);
    }

    #[test]
    fn assembles_examples() {
        let p = assemble("vadd length=4 x=0x100 y=0x200 z=0x300").unwrap();
        assert_eq!(p, vec![MacroInstruction::vector(Opcode::Vadd, 4, 0x100, 0x200, 0x300)]);

        let src = "loop end=done n=9\n  vadd length=1 x=0 y=0 z=0\n  vadd length=1 x=0 y=0 z=0\ndone: regaddi length=0 imm=-2\nhalt\n";
        let p = assemble(src).unwrap();
        assert_eq!(p[0], MacroInstruction::loop_to(3, 9));
        assert_eq!(p[3], MacroInstruction::reg_addi(OffsetReg::X, -2));

        match assemble("vfoo length=1") {
            Err(IsaError::Syntax { line: 1, reason }) => assert!(reason.contains("unknown opcode")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn assembler_errors_carry_line_numbers() {
        let cases = [
            ("halt\nvadd x=1", 2, "requires length"),
            ("# c\n\nvadd length=99999 x=0 y=0 z=0", 3, "does not fit"),
            ("loop end=nowhere n=1", 1, "undefined label"),
            ("vadd length=1 q=3", 1, "unknown field"),
            ("a:\na: halt", 2, "duplicate label"),
        ];
        for (src, line, needle) in cases {
            match assemble(src) {
                Err(IsaError::Syntax { line: l, reason }) => {
                    assert_eq!(l, line, "{src}");
                    assert!(reason.contains(needle), "{reason}");
                }
                other => panic!("{src}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn disassembly_forms() {
        assert_eq!(MacroInstruction::halt().to_string(), "halt");
        assert_eq!(MacroInstruction::reg_store(RegGroup::Loop, 0x40).to_string(), "regstore length=0 z=0x40");
        assert_eq!(MacroInstruction::loop_to(12, 9).to_string(), "loop end=12 n=9");
        assert_eq!(
            MacroInstruction::vector(Opcode::Vadd, 4, 0x100, 0x200, 0x300).to_string(),
            "vadd length=4 x=0x100 y=0x200 z=0x300"
        );
    }

    #[test]
    fn program_bytes_are_sixteen_per_instruction() {
        let p = vec![MacroInstruction::vector(Opcode::Vadd, 4, 1, 2, 3), MacroInstruction::halt()];
        let bytes = program_to_bytes(&p).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(program_from_bytes(&bytes).unwrap(), p);
        assert_eq!(program_from_bytes(&bytes[..31]), Err(IsaError::TruncatedProgram(31)));
    }

    fn arb_instruction() -> impl Strategy<Value = MacroInstruction> {
        (0u8..16, 0u16..=MAX_LENGTH, 0u16..=MAX_LENGTH, any::<[bool; 3]>(), [0u32..=MAX_ADDR, 0u32..=MAX_ADDR, 0u32..=MAX_ADDR])
            .prop_map(|(mode, length, width, f, a)| MacroInstruction {
                opcode: Opcode::from_mode(mode),
                length,
                width,
                off_x: f[0],
                off_y: f[1],
                off_z: f[2],
                addr_x: a[0],
                addr_y: a[1],
                addr_z: a[2],
            })
    }

    proptest! {
        #[test]
        fn decode_encode_identity(inst in arb_instruction()) {
            prop_assert_eq!(decode(inst.encode().unwrap()), inst);
        }

        #[test]
        fn encode_decode_identity(word in any::<u128>()) {
            prop_assert_eq!(decode(word).encode().unwrap(), word);
        }

        #[test]
        fn assemble_disassemble_identity(p in proptest::collection::vec(arb_instruction(), 0..20)) {
            prop_assert_eq!(assemble(&disassemble(&p)).unwrap(), p);
        }
    }
}
