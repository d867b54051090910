//! Page-level mapping, per-LUN block pools and victim selection.

use std::collections::VecDeque;

use crate::device::{BlockId, FlashDevice, PageAddr};
use crate::error::{Error, Result};

const UNMAPPED: u32 = u32::MAX;

/// Logical-to-physical map with its reverse, so garbage collection can find
/// the owner of a live page.
#[derive(Debug, Clone)]
pub struct MappingTable {
    l2p: Vec<u32>,
    p2l: Vec<u32>,
    mapped: u64,
}

impl MappingTable {
    pub fn new(logical_pages: u64, physical_pages: u64) -> Self {
        MappingTable {
            l2p: vec![UNMAPPED; logical_pages as usize],
            p2l: vec![UNMAPPED; physical_pages as usize],
            mapped: 0,
        }
    }

    pub fn logical_pages(&self) -> u64 {
        self.l2p.len() as u64
    }

    pub fn mapped(&self) -> u64 {
        self.mapped
    }

    /// Current physical location of `lpa`, `None` if it was never written.
    pub fn translate(&self, lpa: u64) -> Result<Option<PageAddr>> {
        match self.l2p.get(lpa as usize) {
            None => Err(Error::domain(format!(
                "logical page {lpa} is outside LBA={}",
                self.l2p.len()
            ))),
            Some(&UNMAPPED) => Ok(None),
            Some(&p) => Ok(Some(p as PageAddr)),
        }
    }

    /// Logical owner of a physical page, if it holds live data.
    pub fn owner(&self, page: PageAddr) -> Option<u64> {
        match self.p2l[page] {
            UNMAPPED => None,
            l => Some(l as u64),
        }
    }

    /// Forgets where `lpa` lives, returning the page it occupied.
    pub fn unmap(&mut self, lpa: u64) -> Option<PageAddr> {
        let old = std::mem::replace(&mut self.l2p[lpa as usize], UNMAPPED);
        if old == UNMAPPED {
            return None;
        }
        self.p2l[old as usize] = UNMAPPED;
        self.mapped -= 1;
        Some(old as PageAddr)
    }

    /// Points `lpa` at `page`, returning the previous location.
    pub fn remap(&mut self, lpa: u64, page: PageAddr) -> Option<PageAddr> {
        let old = self.l2p[lpa as usize];
        self.l2p[lpa as usize] = page as u32;
        self.p2l[page] = lpa as u32;
        if old == UNMAPPED {
            self.mapped += 1;
            None
        } else {
            self.p2l[old as usize] = UNMAPPED;
            Some(old as PageAddr)
        }
    }
}

/// Victim selection policy inside one subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cleaning {
    /// Fewest live pages; ties to the oldest erase, then the lowest id.
    Greedy,
    /// Least recently erased; ties to the lowest id.
    Lru,
}

impl std::str::FromStr for Cleaning {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(Cleaning::Greedy),
            "lru" => Ok(Cleaning::Lru),
            _ => Err(format!("expected greedy or lru, got `{s}`")),
        }
    }
}

impl std::fmt::Display for Cleaning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Cleaning::Greedy => "greedy",
            Cleaning::Lru => "lru",
        })
    }
}

/// Blocks that would free at least one page if erased. Completely live blocks
/// are skipped: migrating them costs a block's worth of writes and gains
/// nothing.
fn reclaimable<'a>(
    candidates: &'a [BlockId],
    dev: &'a FlashDevice,
) -> impl Iterator<Item = BlockId> + 'a {
    let b = dev.geometry().pages_per_block();
    candidates.iter().copied().filter(move |&blk| dev.live_count(blk) < b)
}

pub fn pick_victim_greedy(candidates: &[BlockId], dev: &FlashDevice) -> Option<BlockId> {
    reclaimable(candidates, dev).min_by_key(|&blk| (dev.live_count(blk), dev.erase_seq(blk), blk))
}

pub fn pick_victim_lru(candidates: &[BlockId], dev: &FlashDevice) -> Option<BlockId> {
    reclaimable(candidates, dev).min_by_key(|&blk| (dev.erase_seq(blk), blk))
}

pub fn pick_victim(policy: Cleaning, candidates: &[BlockId], dev: &FlashDevice) -> Option<BlockId> {
    match policy {
        Cleaning::Greedy => pick_victim_greedy(candidates, dev),
        Cleaning::Lru => pick_victim_lru(candidates, dev),
    }
}

/// The blocks one group holds on one LUN.
///
/// `open` is the block currently being filled; `sealed` are blocks no longer
/// written to (normally full, possibly partial after two groups were merged)
/// and are the only victim candidates.
#[derive(Debug, Clone, Default)]
pub struct Subgroup {
    pub free: VecDeque<BlockId>,
    pub open: Option<BlockId>,
    pub sealed: Vec<BlockId>,
}

impl Subgroup {
    pub fn held(&self) -> usize {
        self.free.len() + self.sealed.len() + usize::from(self.open.is_some())
    }

    /// Pages that can still be programmed without an erase.
    pub fn free_pages(&self, dev: &FlashDevice) -> usize {
        let b = dev.geometry().pages_per_block();
        self.free.len() * b + self.open.map_or(0, |blk| b - dev.write_pointer(blk))
    }

    pub fn has_space(&self, dev: &FlashDevice) -> bool {
        !self.free.is_empty() || self.open.is_some_and(|blk| !dev.is_full(blk))
    }

    /// Next page to program, opening a free block when the current one is full.
    pub fn next_page(&mut self, dev: &FlashDevice) -> Option<PageAddr> {
        if let Some(blk) = self.open {
            if !dev.is_full(blk) {
                return Some(dev.geometry().page_addr(blk, dev.write_pointer(blk)));
            }
            self.sealed.push(blk);
            self.open = None;
        }
        let blk = self.free.pop_front()?;
        self.open = Some(blk);
        Some(dev.geometry().page_addr(blk, 0))
    }

    /// Removes `blk` from the sealed list.
    pub fn take_sealed(&mut self, blk: BlockId) -> bool {
        match self.sealed.iter().position(|&b| b == blk) {
            Some(i) => {
                self.sealed.swap_remove(i);
                true
            }
            None => false,
        }
    }

    /// Moves every block of `other` into `self`. An open block of `other` is
    /// sealed when `self` already has one.
    pub fn absorb(&mut self, other: Subgroup) {
        self.free.extend(other.free);
        self.sealed.extend(other.sealed);
        if let Some(blk) = other.open {
            if self.open.is_none() {
                self.open = Some(blk);
            } else {
                self.sealed.push(blk);
            }
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.free
            .iter()
            .copied()
            .chain(self.open)
            .chain(self.sealed.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{FlashGeometry, WriteKind};

    fn device(blocks: u32, b: u32) -> FlashDevice {
        FlashDevice::new(FlashGeometry {
            channels: 1,
            luns_per_channel: 1,
            blocks_per_lun: blocks,
            pages_per_block: b,
            page_size: 4096,
        })
        .unwrap()
    }

    /// Fills `blk`, leaving `live` pages live, after erasing it `erases` times.
    fn prepare(dev: &mut FlashDevice, blk: BlockId, erases: usize, live: usize) {
        for _ in 0..erases {
            dev.erase_block(blk).unwrap();
        }
        let b = dev.geometry().pages_per_block();
        for i in 0..b {
            let p = dev.geometry().page_addr(blk, i);
            dev.write_page(p, WriteKind::Application).unwrap();
            if i >= live {
                dev.invalidate_page(p).unwrap();
            }
        }
    }

    #[test]
    fn mapping_roundtrip() {
        let mut mt = MappingTable::new(4, 16);
        assert_eq!(mt.translate(2).unwrap(), None);
        assert!(mt.translate(4).is_err());
        assert_eq!(mt.remap(2, 5), None);
        assert_eq!(mt.translate(2).unwrap(), Some(5));
        assert_eq!(mt.remap(2, 9), Some(5));
        assert_eq!(mt.owner(5), None);
        assert_eq!(mt.owner(9), Some(2));
        assert_eq!(mt.mapped(), 1);
        assert_eq!(mt.unmap(2), Some(9));
        assert_eq!(mt.unmap(2), None);
        assert_eq!(mt.owner(9), None);
        assert_eq!(mt.mapped(), 0);
        assert_eq!(mt.remap(2, 5), None);
        assert_eq!(mt.mapped(), 1);
    }

    #[test]
    fn lru_picks_oldest_erase() {
        let mut dev = device(3, 8);
        // Erase orders give sequence numbers; block 1 erased first.
        dev.erase_block(1).unwrap();
        dev.erase_block(0).unwrap();
        dev.erase_block(2).unwrap();
        for blk in 0..3 {
            prepare(&mut dev, blk, 0, 4);
        }
        assert_eq!(pick_victim_lru(&[0, 1, 2], &dev), Some(1));
        assert_eq!(pick_victim_lru(&[2], &dev), Some(2));
        let mut fresh = device(3, 8);
        for blk in 0..3 {
            prepare(&mut fresh, blk, 0, 4);
        }
        assert_eq!(pick_victim_lru(&[2, 1, 0], &fresh), Some(0));
    }

    #[test]
    fn greedy_tie_breaks() {
        let mut dev = device(3, 8);
        prepare(&mut dev, 0, 1, 7);
        prepare(&mut dev, 2, 1, 3);
        prepare(&mut dev, 1, 1, 3);
        // Blocks 1 and 2 both hold 3 live pages; block 2 was erased earlier.
        assert_eq!(pick_victim_greedy(&[0, 1, 2], &dev), Some(2));
        let mut empty = device(2, 8);
        prepare(&mut empty, 0, 0, 5);
        prepare(&mut empty, 1, 0, 0);
        assert_eq!(pick_victim_greedy(&[0, 1], &empty), Some(1));
    }

    #[test]
    fn fully_live_blocks_are_not_victims() {
        let mut dev = device(2, 4);
        prepare(&mut dev, 0, 0, 4);
        assert_eq!(pick_victim_greedy(&[0], &dev), None);
        assert_eq!(pick_victim_lru(&[0], &dev), None);
        assert_eq!(pick_victim(Cleaning::Greedy, &[], &dev), None);
    }

    #[test]
    fn subgroup_space_accounting() {
        let dev = device(4, 8);
        let mut sg = Subgroup::default();
        sg.free.extend([0, 1]);
        assert_eq!(sg.free_pages(&dev), 16);
        assert_eq!(sg.next_page(&dev), Some(0));
        assert_eq!(sg.open, Some(0));
        assert_eq!(sg.held(), 2);
        let mut other = Subgroup {
            open: Some(3),
            ..Subgroup::default()
        };
        other.free.push_back(2);
        sg.absorb(other);
        assert_eq!(sg.sealed, vec![3]);
        assert_eq!(sg.held(), 4);
        assert!(sg.take_sealed(3));
        assert!(!sg.take_sealed(3));
    }
}
