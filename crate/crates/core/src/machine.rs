//! The SID virtual machine.
//!
//! Each macro instruction runs to completion in one `step`: the FSM walks the
//! operands `n_track` elements per iteration and the cycle counter is charged
//! with the iteration count plus a fixed pipeline overhead. Arithmetic results
//! never depend on `n_track`; only the cycle count does.

use std::fmt;

use thiserror::Error;

use crate::isa::{MacroInstruction, Opcode};
use crate::numerics::{fx_add, fx_mul, fx_sub, FxWord, LutFunction, LutSet, LutTable};

pub const IMAGE_MAGIC: &[u8; 4] = b"SIDM";
pub const IMAGE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MachineConfig {
    pub n_track: usize,
    pub n_local: usize,
    pub data_mem_words: usize,
    pub inst_mem_slots: usize,
    pub pipeline_overhead: u64,
    pub clock_hz: f64,
    pub luts: LutSet,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            n_track: 4,
            n_local: 64,
            data_mem_words: 458_752,
            inst_mem_slots: 8_192,
            pipeline_overhead: 4,
            clock_hz: 115e6,
            luts: LutSet::default(),
        }
    }
}

impl MachineConfig {
    pub fn with_n_track(mut self, n_track: usize) -> Self {
        self.n_track = n_track;
        self
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        if self.n_track == 0 {
            return Err(MachineError::Config("n_track must be at least 1".into()));
        }
        if self.n_local == 0 {
            return Err(MachineError::Config("n_local must be at least 1".into()));
        }
        if !(self.clock_hz > 0.0) {
            return Err(MachineError::Config("clock_hz must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form cycle cost of one instruction.
    pub fn cycle_cost(&self, inst: &MacroInstruction) -> u64 {
        let chunks = (inst.length as u64).div_ceil(self.n_track as u64);
        match inst.opcode {
            Opcode::Loop | Opcode::RegAddi | Opcode::RegStore | Opcode::RegLoad | Opcode::Halt => 1,
            Opcode::Mvmul => inst.width as u64 * chunks + self.pipeline_overhead,
            _ => chunks + self.pipeline_overhead,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MachineError {
    #[error("invalid machine configuration: {0}")]
    Config(String),
    #[error("program has {len} instructions but instruction memory holds {capacity}")]
    ProgramTooLarge { len: usize, capacity: usize },
    #[error("memory image has {len} words but data memory holds {capacity}")]
    ImageTooLarge { len: usize, capacity: usize },
    #[error("malformed memory image: {0}")]
    BadImage(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrapReason {
    AddressOutOfRange { operand: char, start: i64, len: usize },
    WidthExceedsScratchpad { width: usize, n_local: usize },
    EmptyReduction,
    UndefinedRegister(u16),
    CycleBudgetExceeded(u64),
}

impl fmt::Display for TrapReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrapReason::AddressOutOfRange { operand, start, len } => {
                write!(f, "operand {operand} range [{start}, {start}+{len}) outside data memory")
            }
            TrapReason::WidthExceedsScratchpad { width, n_local } => {
                write!(f, "mvmul width {width} exceeds scratchpad of {n_local} words")
            }
            TrapReason::EmptyReduction => write!(f, "reduction over zero elements"),
            TrapReason::UndefinedRegister(sel) => write!(f, "register selector {sel} is undefined"),
            TrapReason::CycleBudgetExceeded(budget) => write!(f, "cycle budget of {budget} exceeded"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trap at pc {pc}: {reason}")]
pub struct Trap {
    pub pc: usize,
    pub reason: TrapReason,
}

/// Down-counters of the iteration controller, as left by the last macro instruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FsmState {
    pub reg_length: u16,
    pub reg_width: u16,
    pub reg_width_copy: u16,
}

/// Data memory contents plus optional replacement lookup tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryImage {
    pub words: Vec<FxWord>,
    pub luts: Vec<LutTable>,
}

impl MemoryImage {
    pub fn new(words: Vec<FxWord>) -> Self {
        MemoryImage { words, luts: Vec::new() }
    }

    /// `"SIDM"`, version, word count, table count (all u32 LE), the words as
    /// i32 LE, then each table as a u32 word count followed by its words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.words.len());
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.luts.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.raw().to_le_bytes());
        }
        for lut in &self.luts {
            let words = lut.to_words();
            out.extend_from_slice(&(words.len() as u32).to_le_bytes());
            for w in words {
                out.extend_from_slice(&w.raw().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MachineError> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8], MachineError> {
            if cursor.len() < n {
                return Err(MachineError::BadImage("unexpected end of file".into()));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(4)? != IMAGE_MAGIC {
            return Err(MachineError::BadImage("missing SIDM magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != IMAGE_VERSION {
            return Err(MachineError::BadImage(format!("unsupported version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let lut_count = u32_at(take(4)?) as usize;
        let read_words = |raw: &[u8]| -> Vec<FxWord> {
            raw.chunks_exact(4).map(|c| FxWord::from_raw(i32::from_le_bytes(c.try_into().expect("4 bytes")))).collect()
        };
        let words = read_words(take(count.checked_mul(4).ok_or_else(|| MachineError::BadImage("word count overflow".into()))?)?);
        let mut luts = Vec::with_capacity(lut_count);
        for _ in 0..lut_count {
            let n = u32_at(take(4)?) as usize;
            let lut_words = read_words(take(n * 4)?);
            luts.push(LutTable::from_words(&lut_words).map_err(|e| MachineError::BadImage(e.to_string()))?);
        }
        if !cursor.is_empty() {
            return Err(MachineError::BadImage(format!("{} trailing bytes", cursor.len())));
        }
        Ok(MemoryImage { words, luts })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub cycles: u64,
    pub reads: u64,
    pub writes: u64,
    pub instructions: u64,
    pub wall_time_s: f64,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cycles={}", self.cycles)?;
        writeln!(f, "reads={}", self.reads)?;
        writeln!(f, "writes={}", self.writes)?;
        writeln!(f, "instructions={}", self.instructions)?;
        write!(f, "wall_time_s={:.9}", self.wall_time_s)
    }
}

#[derive(Clone, Debug)]
pub struct MachineState {
    config: MachineConfig,
    program: Vec<MacroInstruction>,
    pub pc: usize,
    memory: Vec<FxWord>,
    scratchpad: Vec<FxWord>,
    pub loop_begin: u32,
    pub loop_end: u32,
    pub loop_n: u32,
    pub offsets: [i32; 3],
    pub fsm: FsmState,
    pub cycles: u64,
    pub reads: u64,
    pub writes: u64,
    pub instructions: u64,
    pub halted: bool,
}

impl MachineState {
    pub fn load(config: MachineConfig, program: Vec<MacroInstruction>, image: &MemoryImage) -> Result<Self, MachineError> {
        config.validate()?;
        if program.len() > config.inst_mem_slots {
            return Err(MachineError::ProgramTooLarge { len: program.len(), capacity: config.inst_mem_slots });
        }
        if image.words.len() > config.data_mem_words {
            return Err(MachineError::ImageTooLarge { len: image.words.len(), capacity: config.data_mem_words });
        }
        let mut config = config;
        for lut in &image.luts {
            config.luts.replace(lut.clone());
        }
        let mut memory = vec![FxWord::ZERO; config.data_mem_words];
        memory[..image.words.len()].copy_from_slice(&image.words);
        let scratchpad = vec![FxWord::ZERO; config.n_local];
        Ok(MachineState {
            config,
            program,
            pc: 0,
            memory,
            scratchpad,
            loop_begin: 0,
            loop_end: 0,
            loop_n: 0,
            offsets: [0; 3],
            fsm: FsmState::default(),
            cycles: 0,
            reads: 0,
            writes: 0,
            instructions: 0,
            halted: false,
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn program(&self) -> &[MacroInstruction] {
        &self.program
    }

    pub fn memory(&self) -> &[FxWord] {
        &self.memory
    }

    pub fn read(&self, addr: usize, len: usize) -> &[FxWord] {
        &self.memory[addr..addr + len]
    }

    pub fn write(&mut self, addr: usize, words: &[FxWord]) {
        self.memory[addr..addr + words.len()].copy_from_slice(words);
    }

    /// Rewinds to pc 0 for another pass over the same program, keeping memory,
    /// registers and counters.
    pub fn restart(&mut self) {
        self.pc = 0;
        self.halted = false;
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            cycles: self.cycles,
            reads: self.reads,
            writes: self.writes,
            instructions: self.instructions,
            wall_time_s: self.cycles as f64 / self.config.clock_hz,
        }
    }

    pub fn reset_counters(&mut self) {
        self.cycles = 0;
        self.reads = 0;
        self.writes = 0;
        self.instructions = 0;
    }

    fn trap(&self, reason: TrapReason) -> Trap {
        Trap { pc: self.pc, reason }
    }

    fn operand(&self, operand: char, base: u32, offset_on: bool, len: usize) -> Result<usize, Trap> {
        let idx = match operand {
            'x' => 0,
            'y' => 1,
            _ => 2,
        };
        let start = base as i64 + if offset_on { self.offsets[idx] as i64 } else { 0 };
        if start < 0 || start as u64 + len as u64 > self.memory.len() as u64 {
            return Err(self.trap(TrapReason::AddressOutOfRange { operand, start, len }));
        }
        Ok(start as usize)
    }

    /// Executes the instruction at `pc` to completion. Falling off the end of
    /// the program halts without charging a cycle.
    pub fn step(&mut self) -> Result<(), Trap> {
        if self.halted {
            return Ok(());
        }
        let Some(inst) = self.program.get(self.pc).copied() else {
            self.halted = true;
            return Ok(());
        };
        match inst.opcode {
            Opcode::Halt => {
                self.halted = true;
                self.cycles += 1;
                self.instructions += 1;
                return Ok(());
            }
            Opcode::Loop => {
                self.loop_begin = self.pc as u32 + 1;
                self.loop_end = inst.addr_x;
                self.loop_n = inst.addr_y;
            }
            Opcode::RegAddi => {
                let reg = inst.length as usize;
                if reg > 2 {
                    return Err(self.trap(TrapReason::UndefinedRegister(inst.length)));
                }
                self.offsets[reg] = self.offsets[reg].wrapping_add(inst.immediate());
            }
            Opcode::RegStore | Opcode::RegLoad => self.exec_reg_transfer(&inst)?,
            _ => self.exec_macro(&inst)?,
        }
        self.cycles += self.config.cycle_cost(&inst);
        self.instructions += 1;
        if self.pc as u32 == self.loop_end && self.loop_n != 0 {
            self.pc = self.loop_begin as usize;
            self.loop_n -= 1;
        } else {
            self.pc += 1;
        }
        Ok(())
    }

    /// Runs until `Halt`, a trap, or the optional cycle budget is exceeded.
    pub fn run(&mut self, cycle_budget: Option<u64>) -> Result<RunReport, Trap> {
        while !self.halted {
            self.step()?;
            if let Some(budget) = cycle_budget {
                if self.cycles > budget {
                    return Err(self.trap(TrapReason::CycleBudgetExceeded(budget)));
                }
            }
        }
        Ok(self.report())
    }

    fn exec_reg_transfer(&mut self, inst: &MacroInstruction) -> Result<(), Trap> {
        let group = inst.length;
        if group > 1 {
            return Err(self.trap(TrapReason::UndefinedRegister(group)));
        }
        let addr = self.operand('z', inst.addr_z, inst.off_z, 3)?;
        if inst.opcode == Opcode::RegStore {
            let regs = if group == 0 {
                [self.loop_begin as i32, self.loop_end as i32, self.loop_n as i32]
            } else {
                self.offsets
            };
            for (i, r) in regs.into_iter().enumerate() {
                self.memory[addr + i] = FxWord::from_raw(r);
            }
            self.writes += 3;
        } else {
            let vals = [self.memory[addr].raw(), self.memory[addr + 1].raw(), self.memory[addr + 2].raw()];
            if group == 0 {
                self.loop_begin = vals[0] as u32;
                self.loop_end = vals[1] as u32;
                self.loop_n = vals[2] as u32;
            } else {
                self.offsets = vals;
            }
            self.reads += 3;
        }
        Ok(())
    }

    fn exec_macro(&mut self, inst: &MacroInstruction) -> Result<(), Trap> {
        let len = inst.length as usize;
        let n_track = self.config.n_track;
        match inst.opcode {
            Opcode::Vadd | Opcode::Vsub | Opcode::Vmul | Opcode::Vsgt => {
                let x = self.operand('x', inst.addr_x, inst.off_x, len)?;
                let y = self.operand('y', inst.addr_y, inst.off_y, len)?;
                let z = self.operand('z', inst.addr_z, inst.off_z, len)?;
                let op: fn(FxWord, FxWord) -> FxWord = match inst.opcode {
                    Opcode::Vadd => fx_add,
                    Opcode::Vsub => fx_sub,
                    Opcode::Vmul => fx_mul,
                    _ => |a, b| if a >= b { FxWord::ONE } else { FxWord::ZERO },
                };
                let out = self.run_vector(len, n_track, |m, i| op(m[x + i], m[y + i]));
                self.memory[z..z + len].copy_from_slice(&out);
                self.reads += 2 * len as u64;
                self.writes += len as u64;
            }
            Opcode::Vsig | Opcode::Vtanh | Opcode::Vexp => {
                let x = self.operand('x', inst.addr_x, inst.off_x, len)?;
                let z = self.operand('z', inst.addr_z, inst.off_z, len)?;
                let function = match inst.opcode {
                    Opcode::Vsig => LutFunction::Sigmoid,
                    Opcode::Vtanh => LutFunction::Tanh,
                    _ => LutFunction::ExpNeg,
                };
                let table = self.config.luts.get(function).clone();
                let out = self.run_vector(len, n_track, |m, i| table.apply(m[x + i]));
                self.memory[z..z + len].copy_from_slice(&out);
                self.reads += len as u64;
                self.writes += len as u64;
            }
            Opcode::VSsgt => {
                let x = self.operand('x', inst.addr_x, inst.off_x, len)?;
                let y = self.operand('y', inst.addr_y, inst.off_y, 1)?;
                let z = self.operand('z', inst.addr_z, inst.off_z, len)?;
                let scalar = self.memory[y];
                let out = self.run_vector(len, n_track, |m, i| if m[x + i] > scalar { FxWord::ONE } else { FxWord::ZERO });
                self.memory[z..z + len].copy_from_slice(&out);
                self.reads += len as u64 + 1;
                self.writes += len as u64;
            }
            Opcode::Vmaxabs | Opcode::Vsqnorm => {
                if len == 0 {
                    return Err(self.trap(TrapReason::EmptyReduction));
                }
                let x = self.operand('x', inst.addr_x, inst.off_x, len)?;
                let z = self.operand('z', inst.addr_z, inst.off_z, 1)?;
                let maxabs = inst.opcode == Opcode::Vmaxabs;
                self.scratchpad[0] = FxWord::ZERO;
                self.fsm = FsmState { reg_length: len as u16, ..FsmState::default() };
                let mut i = 0;
                while self.fsm.reg_length > 0 {
                    let lanes = n_track.min(self.fsm.reg_length as usize);
                    for v in &self.memory[x + i..x + i + lanes] {
                        let acc = self.scratchpad[0];
                        self.scratchpad[0] = if maxabs { acc.max(v.saturating_abs()) } else { fx_add(acc, fx_mul(*v, *v)) };
                    }
                    i += lanes;
                    self.fsm.reg_length -= lanes as u16;
                }
                self.memory[z] = self.scratchpad[0];
                self.reads += len as u64;
                self.writes += 1;
            }
            Opcode::Mvmul => self.exec_mvmul(inst)?,
            _ => unreachable!("control opcodes are handled by step"),
        }
        Ok(())
    }

    /// One-dimension FSM: `reg_length` counts down by `n_track` per iteration.
    fn run_vector(&mut self, len: usize, n_track: usize, f: impl Fn(&[FxWord], usize) -> FxWord) -> Vec<FxWord> {
        let mut out = Vec::with_capacity(len);
        self.fsm = FsmState { reg_length: len as u16, ..FsmState::default() };
        while self.fsm.reg_length > 0 {
            let lanes = n_track.min(self.fsm.reg_length as usize);
            for _ in 0..lanes {
                out.push(f(&self.memory, out.len()));
            }
            self.fsm.reg_length -= lanes as u16;
        }
        out
    }

    /// Matrix-vector FSM. The outer iteration walks column tiles of `n_track`
    /// (`reg_length`), the inner walks rows (`reg_width`, reloaded from
    /// `reg_width_copy` per tile). Partial sums live in the scratchpad and start
    /// from the destination's current contents.
    fn exec_mvmul(&mut self, inst: &MacroInstruction) -> Result<(), Trap> {
        let len = inst.length as usize;
        let width = inst.width as usize;
        if width > self.config.n_local {
            return Err(self.trap(TrapReason::WidthExceedsScratchpad { width, n_local: self.config.n_local }));
        }
        let x = self.operand('x', inst.addr_x, inst.off_x, len * width)?;
        let y = self.operand('y', inst.addr_y, inst.off_y, len)?;
        let z = self.operand('z', inst.addr_z, inst.off_z, width)?;
        let n_track = self.config.n_track;
        self.scratchpad[..width].copy_from_slice(&self.memory[z..z + width]);
        self.fsm = FsmState { reg_length: len as u16, reg_width: width as u16, reg_width_copy: width as u16 };
        let mut col = 0;
        while self.fsm.reg_length > 0 {
            let lanes = n_track.min(self.fsm.reg_length as usize);
            self.fsm.reg_width = self.fsm.reg_width_copy;
            while self.fsm.reg_width > 0 {
                let row = width - self.fsm.reg_width as usize;
                let base = x + row * len + col;
                let mut acc = self.scratchpad[row];
                for lane in 0..lanes {
                    acc = fx_add(acc, fx_mul(self.memory[base + lane], self.memory[y + col + lane]));
                }
                self.scratchpad[row] = acc;
                self.fsm.reg_width -= 1;
            }
            col += lanes;
            self.fsm.reg_length -= lanes as u16;
        }
        self.memory[z..z + width].copy_from_slice(&self.scratchpad[..width]);
        self.reads += (len * width + len + width) as u64;
        self.writes += width as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{assemble, OffsetReg, RegGroup};

    fn fx(v: f64) -> FxWord {
        FxWord::from_real(v)
    }

    fn words(vals: &[f64]) -> Vec<FxWord> {
        vals.iter().copied().map(fx).collect()
    }

    fn small_config(n_track: usize) -> MachineConfig {
        MachineConfig { data_mem_words: 4096, ..MachineConfig::default() }.with_n_track(n_track)
    }

    fn run_with(program: Vec<MacroInstruction>, image: Vec<FxWord>, n_track: usize) -> MachineState {
        let mut m = MachineState::load(small_config(n_track), program, &MemoryImage::new(image)).unwrap();
        m.run(Some(10_000_000)).unwrap();
        m
    }

    fn real(m: &MachineState, addr: usize, len: usize) -> Vec<f64> {
        m.read(addr, len).iter().map(|w| w.to_real()).collect()
    }

    #[test]
    fn empty_program_halts_immediately() {
        let mut m = MachineState::load(small_config(4), vec![], &MemoryImage::default()).unwrap();
        m.step().unwrap();
        assert!(m.halted);
        assert_eq!(m.cycles, 0);
    }

    #[test]
    fn halt_costs_one_cycle() {
        let m = run_with(vec![MacroInstruction::halt()], vec![], 4);
        assert_eq!(m.report().cycles, 1);
    }

    #[test]
    fn load_rejects_oversize_inputs() {
        let program = vec![MacroInstruction::halt(); 8_193];
        let err = MachineState::load(MachineConfig::default(), program, &MemoryImage::default()).unwrap_err();
        assert_eq!(err, MachineError::ProgramTooLarge { len: 8_193, capacity: 8_192 });
        let err = MachineState::load(small_config(1), vec![], &MemoryImage::new(vec![FxWord::ZERO; 4097])).unwrap_err();
        assert!(matches!(err, MachineError::ImageTooLarge { .. }));
        let err = MachineState::load(small_config(0), vec![], &MemoryImage::default()).unwrap_err();
        assert!(matches!(err, MachineError::Config(_)));
    }

    #[test]
    fn image_words_read_back() {
        let m = MachineState::load(small_config(4), vec![], &MemoryImage::new(words(&[1.5, -2.0, 3.25]))).unwrap();
        assert_eq!(real(&m, 0, 3), vec![1.5, -2.0, 3.25]);
    }

    #[test]
    fn image_bytes_roundtrip() {
        let image = MemoryImage { words: words(&[1.0, -0.5, 7.0]), luts: vec![LutTable::sigmoid()] };
        let bytes = image.to_bytes();
        assert_eq!(&bytes[..4], b"SIDM");
        assert_eq!(MemoryImage::from_bytes(&bytes).unwrap(), image);
        assert!(MemoryImage::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(MemoryImage::from_bytes(b"NOPE").is_err());
    }

    #[test]
    fn one_dimension_fsm_cycles() {
        let inst = MacroInstruction::vector(Opcode::Vadd, 10, 0, 16, 32);
        let mut m = MachineState::load(small_config(4), vec![inst], &MemoryImage::default()).unwrap();
        m.step().unwrap();
        assert_eq!(m.cycles, 3 + 4);
    }

    #[test]
    fn matrix_fsm_cycles() {
        let inst = MacroInstruction::mvmul(8, 5, 0, 100, 200);
        let mut m = MachineState::load(small_config(4), vec![inst], &MemoryImage::default()).unwrap();
        m.step().unwrap();
        assert_eq!(m.cycles, 10 + 4);
        assert_eq!(m.fsm.reg_width_copy, 5);
    }

    #[test]
    fn elementwise_ops() {
        let mut image = words(&[1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
        image.extend(words(&[1.0; 4]));
        let program = vec![
            MacroInstruction::vector(Opcode::Vadd, 4, 0, 4, 20),
            MacroInstruction::vector(Opcode::Vsub, 4, 0, 0, 24),
            MacroInstruction::vector(Opcode::Vmul, 4, 0, 8, 28),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, image, 4);
        assert_eq!(real(&m, 20, 4), vec![11.0, 22.0, 33.0, 44.0]);
        assert_eq!(real(&m, 24, 4), vec![0.0; 4]);
        assert_eq!(real(&m, 28, 4), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn vsgt_is_inclusive() {
        let image = words(&[1.0, 5.0, 2.0, 3.0, 4.0, 4.0]);
        let program = vec![
            MacroInstruction::vector(Opcode::Vsgt, 2, 0, 2, 10),
            MacroInstruction::vector(Opcode::Vsgt, 2, 4, 4, 12),
            MacroInstruction::vector(Opcode::Vsgt, 2, 0, 3, 14),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, image, 2);
        assert_eq!(real(&m, 10, 2), vec![0.0, 1.0]);
        assert_eq!(real(&m, 12, 2), vec![1.0, 1.0]);
        assert_eq!(real(&m, 14, 1), vec![0.0]);
    }

    #[test]
    fn lut_ops() {
        let image = words(&[0.0, 0.0]);
        let program = vec![
            MacroInstruction::vector(Opcode::Vsig, 2, 0, 0, 10),
            MacroInstruction::vector(Opcode::Vtanh, 1, 0, 0, 12),
            MacroInstruction::vector(Opcode::Vexp, 1, 0, 0, 13),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, image, 4);
        for v in real(&m, 10, 2) {
            assert!((v - 0.5).abs() < 1e-3);
        }
        assert!(real(&m, 12, 1)[0].abs() < 1e-3);
        assert!((real(&m, 13, 1)[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mvmul_selector_and_bias() {
        // W = [[1,0,0],[0,1,0]] at 0, x at 6, Z at 9 (zeros), bias copy at 11
        let mut image = words(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 5.0, 6.0, 7.0, 0.0, 0.0, 1.0, 1.0]);
        image.extend(words(&[0.0; 6]));
        let program = vec![
            MacroInstruction::mvmul(3, 2, 0, 6, 9),
            MacroInstruction::mvmul(3, 2, 13, 6, 11),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, image, 4);
        assert_eq!(real(&m, 9, 2), vec![5.0, 6.0]);
        assert_eq!(real(&m, 11, 2), vec![1.0, 1.0]);
    }

    #[test]
    fn mvmul_matches_float_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut image = words(&w);
        image.extend(words(&x));
        image.extend(words(&[0.0; 5]));
        let m = run_with(vec![MacroInstruction::mvmul(8, 5, 0, 40, 48), MacroInstruction::halt()], image.clone(), 3);
        for r in 0..5 {
            let expected: f64 = (0..8).map(|c| image[r * 8 + c].to_real() * image[40 + c].to_real()).sum();
            assert!((m.read(48 + r, 1)[0].to_real() - expected).abs() < 2f64.powi(-8));
        }
    }

    #[test]
    fn mvmul_traps_when_width_exceeds_scratchpad() {
        let mut m = MachineState::load(small_config(4), vec![MacroInstruction::mvmul(1, 65, 0, 100, 200)], &MemoryImage::default()).unwrap();
        let trap = m.step().unwrap_err();
        assert_eq!(trap.pc, 0);
        assert_eq!(trap.reason, TrapReason::WidthExceedsScratchpad { width: 65, n_local: 64 });
    }

    #[test]
    fn vssgt_is_strict() {
        let image = words(&[1.0, 2.0, 3.0, 2.0, 0.5, 3.0]);
        let program = vec![
            MacroInstruction::vector(Opcode::VSsgt, 3, 0, 3, 10),
            MacroInstruction::vector(Opcode::VSsgt, 3, 0, 4, 13),
            MacroInstruction::vector(Opcode::VSsgt, 3, 0, 5, 16),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, image, 4);
        assert_eq!(real(&m, 10, 3), vec![0.0, 0.0, 1.0]);
        assert_eq!(real(&m, 13, 3), vec![1.0, 1.0, 1.0]);
        assert_eq!(real(&m, 16, 3), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn reductions() {
        let mut image = words(&[-3.0, 2.0, -7.0, 3.0, 4.0, 0.0, 0.0]);
        image.extend(words(&[1.0; 64]));
        let program = vec![
            MacroInstruction::vector(Opcode::Vmaxabs, 3, 0, 0, 100),
            MacroInstruction::vector(Opcode::Vmaxabs, 1, 1, 0, 101),
            MacroInstruction::vector(Opcode::Vmaxabs, 2, 5, 0, 102),
            MacroInstruction::vector(Opcode::Vsqnorm, 2, 3, 0, 103),
            MacroInstruction::vector(Opcode::Vsqnorm, 2, 5, 0, 104),
            MacroInstruction::vector(Opcode::Vsqnorm, 64, 7, 0, 105),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, image, 4);
        assert_eq!(real(&m, 100, 6), vec![7.0, 2.0, 0.0, 25.0, 0.0, 64.0]);
    }

    #[test]
    fn empty_reduction_traps() {
        let mut m = MachineState::load(small_config(4), vec![MacroInstruction::vector(Opcode::Vsqnorm, 0, 0, 0, 0)], &MemoryImage::default()).unwrap();
        assert_eq!(m.step().unwrap_err().reason, TrapReason::EmptyReduction);
    }

    #[test]
    fn loop_body_runs_n_plus_one_times() {
        // counter at 0, one at 1
        let program = vec![
            MacroInstruction::loop_to(1, 9),
            MacroInstruction::vector(Opcode::Vadd, 1, 0, 1, 0),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, words(&[0.0, 1.0]), 4);
        assert_eq!(real(&m, 0, 1), vec![10.0]);
    }

    #[test]
    fn loop_with_zero_iterations_falls_through() {
        let program = vec![
            MacroInstruction::loop_to(1, 0),
            MacroInstruction::vector(Opcode::Vadd, 1, 0, 1, 0),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, words(&[0.0, 1.0]), 4);
        assert_eq!(real(&m, 0, 1), vec![1.0]);
        assert_eq!(m.cycles, 1 + (1 + 4) + 1);
    }

    #[test]
    fn regaddi_accumulates() {
        let program = vec![
            MacroInstruction::reg_addi(OffsetReg::X, 6),
            MacroInstruction::reg_addi(OffsetReg::X, 6),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, vec![], 4);
        assert_eq!(m.offsets, [12, 0, 0]);
    }

    #[test]
    fn nested_loop_restores_outer_registers() {
        // Outer loop walks x offset by 1 over 3 words; inner loop bumps y offset.
        let src = "
            loop end=outer_end n=2
              regstore length=0 z=200
              regstore length=1 z=203
              loop end=inner_end n=3
                vadd length=1 x=0 y=10 z=20 offx offz
            inner_end: regaddi length=1 imm=1
              regload length=0 z=200
              regload length=1 z=203
              regaddi length=0 imm=1
            outer_end: regaddi length=2 imm=1
            halt
        ";
        let program = assemble(src).unwrap();
        let m = run_with(program, words(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]), 4);
        // Inner body adds Y[10] (never offset) to X[i] four times into Z[20+i].
        assert_eq!(real(&m, 20, 3), vec![1.5, 2.5, 3.5]);
        assert_eq!(m.offsets, [3, 0, 3]);
        let saved: Vec<i32> = m.read(203, 3).iter().map(|w| w.raw()).collect();
        assert_eq!(saved, vec![2, 0, 2]);
    }

    #[test]
    fn reg_store_and_load_roundtrip() {
        let program = vec![
            MacroInstruction::loop_to(5, 0),
            MacroInstruction::reg_addi(OffsetReg::Z, -4),
            MacroInstruction::reg_store(RegGroup::Loop, 10),
            MacroInstruction::reg_store(RegGroup::Offsets, 13),
            MacroInstruction::halt(),
        ];
        let m = run_with(program, vec![], 4);
        let raw: Vec<i32> = m.read(10, 6).iter().map(|w| w.raw()).collect();
        assert_eq!(raw, vec![1, 5, 0, 0, 0, -4]);
    }

    #[test]
    fn out_of_range_operand_traps_without_writing() {
        let program = vec![MacroInstruction::vector(Opcode::Vadd, 4, 0, 4, 4094), MacroInstruction::halt()];
        let mut m = MachineState::load(small_config(4), program, &MemoryImage::new(words(&[1.0; 8]))).unwrap();
        let before = m.memory().to_vec();
        let trap = m.run(None).unwrap_err();
        assert!(matches!(trap.reason, TrapReason::AddressOutOfRange { operand: 'z', .. }));
        assert_eq!(m.memory(), &before[..]);
    }

    #[test]
    fn cycle_budget_traps() {
        let program = vec![MacroInstruction::loop_to(1, 1000), MacroInstruction::vector(Opcode::Vadd, 4, 0, 0, 0)];
        let mut m = MachineState::load(small_config(4), program, &MemoryImage::default()).unwrap();
        let trap = m.run(Some(100)).unwrap_err();
        assert_eq!(trap.reason, TrapReason::CycleBudgetExceeded(100));
    }

    #[test]
    fn report_is_key_value() {
        let m = run_with(vec![MacroInstruction::halt()], vec![], 4);
        let text = m.report().to_string();
        assert!(text.starts_with("cycles=1\nreads=0\nwrites=0\n"));
        assert!(text.contains("wall_time_s="));
    }
}
