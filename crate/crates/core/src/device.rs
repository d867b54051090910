//! The physical medium: geometry, per-page state and operation counters.
//!
//! Block ids are global: block `b` lives on LUN `b / blocks_per_lun` and owns
//! physical pages `b·B .. (b+1)·B`. Pages inside a block are programmed in
//! ascending order and a block can only be erased once nothing on it is live.

use crate::error::{Error, Result};

pub type BlockId = usize;
pub type PageAddr = usize;
pub type LunId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashGeometry {
    pub channels: u32,
    pub luns_per_channel: u32,
    pub blocks_per_lun: u32,
    pub pages_per_block: u32,
    pub page_size: u32,
}

impl FlashGeometry {
    /// Full-size device: 4 channels × 2 LUNs × 1024 blocks × 128 pages of 16 KiB.
    pub const fn full_scale() -> Self {
        FlashGeometry {
            channels: 4,
            luns_per_channel: 2,
            blocks_per_lun: 1024,
            pages_per_block: 128,
            page_size: 16 * 1024,
        }
    }

    /// Small device used by default so experiments finish in seconds:
    /// 1 channel × 2 LUNs × 256 blocks × 32 pages.
    pub const fn desk() -> Self {
        FlashGeometry {
            channels: 1,
            luns_per_channel: 2,
            blocks_per_lun: 256,
            pages_per_block: 32,
            page_size: 16 * 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("geometry.channels", self.channels),
            ("geometry.luns_per_channel", self.luns_per_channel),
            ("geometry.blocks_per_lun", self.blocks_per_lun),
            ("geometry.pages_per_block", self.pages_per_block),
            ("geometry.page_size", self.page_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.physical_pages() > u32::MAX as u64 {
            return Err(Error::config("geometry", "more than 2^32 physical pages"));
        }
        Ok(())
    }

    pub fn luns(&self) -> usize {
        (self.channels * self.luns_per_channel) as usize
    }

    pub fn blocks(&self) -> usize {
        self.luns() * self.blocks_per_lun as usize
    }

    pub fn pages_per_block(&self) -> usize {
        self.pages_per_block as usize
    }

    pub fn physical_pages(&self) -> u64 {
        self.blocks() as u64 * self.pages_per_block as u64
    }

    pub fn lun_of(&self, block: BlockId) -> LunId {
        block / self.blocks_per_lun as usize
    }

    pub fn block_of(&self, page: PageAddr) -> BlockId {
        page / self.pages_per_block as usize
    }

    pub fn page_addr(&self, block: BlockId, index: usize) -> PageAddr {
        block * self.pages_per_block as usize + index
    }

    /// Blocks that live on `lun`.
    pub fn lun_blocks(&self, lun: LunId) -> std::ops::Range<BlockId> {
        let per = self.blocks_per_lun as usize;
        lun * per..(lun + 1) * per
    }
}

impl Default for FlashGeometry {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageState {
    Free,
    Live,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteKind {
    /// A write issued by the application.
    Application,
    /// A live page copied by garbage collection.
    Migration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeviceCounters {
    pub physical_writes: u64,
    pub logical_writes: u64,
    pub migrations: u64,
    pub erases: u64,
}

impl DeviceCounters {
    /// Counter increments from `earlier` to `self`.
    pub fn since(&self, earlier: &DeviceCounters) -> DeviceCounters {
        DeviceCounters {
            physical_writes: self.physical_writes - earlier.physical_writes,
            logical_writes: self.logical_writes - earlier.logical_writes,
            migrations: self.migrations - earlier.migrations,
            erases: self.erases - earlier.erases,
        }
    }

    /// Physical over logical writes; 1 when nothing was written.
    pub fn write_amplification(&self) -> f64 {
        if self.logical_writes == 0 {
            1.0
        } else {
            self.physical_writes as f64 / self.logical_writes as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlashDevice {
    geometry: FlashGeometry,
    pages: Vec<PageState>,
    write_ptr: Vec<u32>,
    live: Vec<u32>,
    erase_seq: Vec<u64>,
    next_seq: u64,
    counters: DeviceCounters,
    free_pages: u64,
    live_pages: u64,
}

impl FlashDevice {
    pub fn new(geometry: FlashGeometry) -> Result<Self> {
        geometry.validate()?;
        let blocks = geometry.blocks();
        let pba = geometry.physical_pages();
        Ok(FlashDevice {
            geometry,
            pages: vec![PageState::Free; pba as usize],
            write_ptr: vec![0; blocks],
            live: vec![0; blocks],
            erase_seq: vec![0; blocks],
            next_seq: 1,
            counters: DeviceCounters::default(),
            free_pages: pba,
            live_pages: 0,
        })
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn counters(&self) -> DeviceCounters {
        self.counters
    }

    pub fn page_state(&self, page: PageAddr) -> PageState {
        self.pages[page]
    }

    /// Index of the next page to program in `block`.
    pub fn write_pointer(&self, block: BlockId) -> usize {
        self.write_ptr[block] as usize
    }

    pub fn live_count(&self, block: BlockId) -> usize {
        self.live[block] as usize
    }

    /// Sequence number of the last erase of `block` (0 if never erased).
    pub fn erase_seq(&self, block: BlockId) -> u64 {
        self.erase_seq[block]
    }

    pub fn is_full(&self, block: BlockId) -> bool {
        self.write_ptr[block] as usize == self.geometry.pages_per_block()
    }

    pub fn free_pages(&self) -> u64 {
        self.free_pages
    }

    pub fn live_pages(&self) -> u64 {
        self.live_pages
    }

    pub fn dead_pages(&self) -> u64 {
        self.geometry.physical_pages() - self.free_pages - self.live_pages
    }

    /// Programs `page`, which must be the write pointer of its block.
    pub fn write_page(&mut self, page: PageAddr, kind: WriteKind) -> Result<()> {
        if page >= self.pages.len() {
            return Err(Error::Constraint(format!("page {page} does not exist")));
        }
        let block = self.geometry.block_of(page);
        let index = page - self.geometry.page_addr(block, 0);
        if self.pages[page] != PageState::Free {
            return Err(Error::Constraint(format!(
                "page {page} is {:?}; only free pages can be programmed",
                self.pages[page]
            )));
        }
        if index != self.write_ptr[block] as usize {
            return Err(Error::Constraint(format!(
                "block {block} must be programmed at index {}, not {index}",
                self.write_ptr[block]
            )));
        }
        self.pages[page] = PageState::Live;
        self.write_ptr[block] += 1;
        self.live[block] += 1;
        self.free_pages -= 1;
        self.live_pages += 1;
        self.counters.physical_writes += 1;
        match kind {
            WriteKind::Application => self.counters.logical_writes += 1,
            WriteKind::Migration => self.counters.migrations += 1,
        }
        Ok(())
    }

    pub fn invalidate_page(&mut self, page: PageAddr) -> Result<()> {
        match self.pages.get(page) {
            Some(PageState::Live) => {}
            Some(state) => {
                return Err(Error::Constraint(format!(
                    "page {page} is {state:?}; only live pages can be invalidated"
                )))
            }
            None => return Err(Error::Constraint(format!("page {page} does not exist"))),
        }
        let block = self.geometry.block_of(page);
        self.pages[page] = PageState::Dead;
        self.live[block] -= 1;
        self.live_pages -= 1;
        Ok(())
    }

    pub fn erase_block(&mut self, block: BlockId) -> Result<()> {
        if block >= self.write_ptr.len() {
            return Err(Error::Constraint(format!("block {block} does not exist")));
        }
        if self.live[block] != 0 {
            return Err(Error::Constraint(format!(
                "block {block} still holds {} live pages",
                self.live[block]
            )));
        }
        let start = self.geometry.page_addr(block, 0);
        let written = self.write_ptr[block] as usize;
        for p in &mut self.pages[start..start + written] {
            *p = PageState::Free;
        }
        self.free_pages += written as u64;
        self.write_ptr[block] = 0;
        self.erase_seq[block] = self.next_seq;
        self.next_seq += 1;
        self.counters.erases += 1;
        Ok(())
    }

    /// Recounts page states from scratch and compares them to the cached
    /// totals and per-block counters.
    pub fn check_consistency(&self) -> Result<()> {
        let b = self.geometry.pages_per_block();
        let (mut free, mut live) = (0u64, 0u64);
        for block in 0..self.geometry.blocks() {
            let pages = &self.pages[block * b..(block + 1) * b];
            let ptr = self.write_ptr[block] as usize;
            let mut block_live = 0;
            for (i, &st) in pages.iter().enumerate() {
                match st {
                    PageState::Free => {
                        free += 1;
                        if i < ptr {
                            return Err(Error::Constraint(format!(
                                "block {block}: free page {i} below write pointer {ptr}"
                            )));
                        }
                    }
                    PageState::Live => block_live += 1,
                    PageState::Dead => {}
                }
                if st != PageState::Free && i >= ptr {
                    return Err(Error::Constraint(format!(
                        "block {block}: programmed page {i} at or above write pointer {ptr}"
                    )));
                }
            }
            if block_live != self.live[block] as u64 {
                return Err(Error::Constraint(format!(
                    "block {block}: live counter {} but {block_live} live pages",
                    self.live[block]
                )));
            }
            live += block_live;
        }
        if free != self.free_pages || live != self.live_pages {
            return Err(Error::Constraint(format!(
                "cached totals free={} live={} but counted free={free} live={live}",
                self.free_pages, self.live_pages
            )));
        }
        let c = &self.counters;
        if c.physical_writes != c.logical_writes + c.migrations {
            return Err(Error::Constraint("physical writes != logical + migrations".into()));
        }
        Ok(())
    }
}

/// Round-robin choice among candidates, remembering where it stopped.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: usize,
}

impl RoundRobin {
    /// Returns the first index at or after the cursor (cyclically) for which
    /// `has_space` holds, and moves the cursor past it.
    pub fn select(&mut self, candidates: usize, has_space: impl Fn(usize) -> bool) -> Result<usize> {
        for k in 0..candidates {
            let i = (self.cursor + k) % candidates;
            if has_space(i) {
                self.cursor = (i + 1) % candidates;
                return Ok(i);
            }
        }
        Err(Error::CapacityExhausted(format!(
            "none of {candidates} LUNs has a free page"
        )))
    }
}
