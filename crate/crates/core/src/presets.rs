//! Named experiments, written as configuration text.

use crate::config::Config;
use crate::error::{Error, Result};

pub const NAMES: &[&str] = &[
    "equilibrium",
    "swap2",
    "swap5x5",
    "greedy_vs_lru",
    "grid_study",
    "trace_replay",
];

/// Baseline manager on a uniform workload at the default ratio.
const EQUILIBRIUM: &str = "
[manager]
kind = baseline

[workload]
kind = uniform

[run]
warmup_writes = 5x
measured_writes = 10x
window = 0.1x
";

/// Two equal clusters at 90% and 10%, swapped once two LBA into the measured
/// phase, under Wolf and FDP with the oracle detector.
const SWAP2: &str = "
[manager]
detector = oracle

[workload]
kind = kmodal
sizes = 0.5, 0.5
probs = 0.9, 0.1
swaps = 7x:0-1

[run]
warmup_writes = 5x
measured_writes = 10x
window = 0.1x

[experiment]
kind = single
managers = wolf, fdp
compare_noswap = true
";

/// Five equal clusters with doubling frequencies; each pair swapped once.
const SWAP5X5: &str = "
[manager]
detector = oracle

[workload]
kind = exponential
groups = 5

[run]
warmup_writes = 5x
measured_writes = 10x
window = 0.1x

[experiment]
kind = swap_pairs
managers = wolf, fdp
swap_at = 7x
";

/// Wolf on clusters at 100% and 0%, swapped and swapped back half an LBA
/// later; migrations are counted for one LBA after the second swap.
const GREEDY_VS_LRU: &str = "
[manager]
kind = wolf
detector = oracle

[workload]
kind = kmodal
sizes = 0.5, 0.5
probs = 1.0, 0.0
swaps = 5x:0-1; 5.5x:0-1

[run]
warmup_writes = 5x
measured_writes = 1.7x
window = 0.1x

[experiment]
kind = cleaning
seeds = 8
horizon = 1x
";

const GRID_STUDY: &str = "
[experiment]
kind = grid_study

[grid]
q = 10
groups = 2, 3, 4, 5
ratios = 0.7
";

/// FDP replaying a synthetic trace shaped like a database working set: over
/// half the pages never rewritten, the rest in two equal clusters with the
/// hotter one eight times hotter per page. An empty trace path makes the
/// runner generate the trace into the output directory first.
const TRACE_REPLAY: &str = "
[manager]
kind = fdp
detector = oracle

[workload]
kind = trace
trace =
sizes = 0.54, 0.23, 0.23
probs = 0.0, 0.111111111111, 0.888888888889

[run]
warmup_writes = 5x
measured_writes = 10x
window = 0.1x

[experiment]
kind = frequencies
";

pub fn text(name: &str) -> Result<&'static str> {
    Ok(match name {
        "equilibrium" => EQUILIBRIUM,
        "swap2" => SWAP2,
        "swap5x5" => SWAP5X5,
        "greedy_vs_lru" => GREEDY_VS_LRU,
        "grid_study" => GRID_STUDY,
        "trace_replay" => TRACE_REPLAY,
        _ => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{name}`; known: {}", NAMES.join(", ")),
            ))
        }
    })
}

pub fn preset(name: &str) -> Result<Config> {
    Config::parse(text(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorkloadConfig;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in NAMES {
            let mut c = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            if matches!(c.run.workload, WorkloadConfig::Trace { .. }) {
                c.set_trace("placeholder.trace".into());
            }
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset() {
        let err = preset("tpcc").unwrap_err().to_string();
        assert!(err.contains("tpcc") && err.contains("swap2"), "{err}");
    }
}
