//! Pairing plan for the multi-grained trajectory pyramid.
//!
//! Level 0 is the list of per-frame encodings. Each dyadic level pairs
//! consecutive outputs of the level below; an odd leftover is carried up
//! unchanged. Once a single node covers the whole window, the remaining
//! levels up to `T − 1` each hold one BSME fed by the same pair that fed the
//! last dyadic BSME.
//!
//! Frame indices are 0-based throughout.

use std::ops::Range;

use crate::error::{Error, Result};

/// Output `index` of pyramid level `level` (level 0 = encoder outputs).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    pub level: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Bsme {
        prev: NodeRef,
        cur: NodeRef,
        /// Encoder frame routed into the extra interface.
        extra_frame: usize,
    },
    Carry {
        from: NodeRef,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleNode {
    pub kind: NodeKind,
    /// Input frames this node summarizes.
    pub support: Range<usize>,
}

impl ScheduleNode {
    pub fn is_bsme(&self) -> bool {
        matches!(self.kind, NodeKind::Bsme { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    pub nodes: Vec<ScheduleNode>,
}

impl Level {
    pub fn bsme_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_bsme()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSchedule {
    pub frames: usize,
    /// `levels[0]` is pyramid level 1.
    pub levels: Vec<Level>,
    /// ⌈log₂ T⌉, the first level whose single node spans the window.
    pub dyadic_depth: usize,
    /// Levels stacked above the dyadic ones.
    pub extra_levels: usize,
}

/// ⌈log₂ n⌉ for n ≥ 1.
pub fn ceil_log2(n: usize) -> usize {
    let mut d = 0;
    while (1usize << d) < n {
        d += 1;
    }
    d
}

pub fn build_schedule(frames: usize) -> Result<LevelSchedule> {
    if frames < 2 {
        return Err(Error::Config(format!(
            "input window needs at least 2 frames, got {frames}"
        )));
    }
    let dyadic_depth = ceil_log2(frames);
    let total = frames - 1;
    let mut levels = Vec::with_capacity(total);

    // Supports of the outputs of the level below.
    let mut below: Vec<Range<usize>> = (0..frames).map(|f| f..f + 1).collect();
    for l in 1..=dyadic_depth {
        let mut nodes = Vec::with_capacity(below.len().div_ceil(2));
        for j in 0..below.len().div_ceil(2) {
            let (a, b) = (2 * j, 2 * j + 1);
            let node = if b < below.len() {
                let support = below[a].start..below[b].end;
                ScheduleNode {
                    kind: NodeKind::Bsme {
                        prev: NodeRef {
                            level: l - 1,
                            index: a,
                        },
                        cur: NodeRef {
                            level: l - 1,
                            index: b,
                        },
                        extra_frame: ((1usize << l) * (j + 1)).min(frames) - 1,
                    },
                    support,
                }
            } else {
                ScheduleNode {
                    kind: NodeKind::Carry {
                        from: NodeRef {
                            level: l - 1,
                            index: a,
                        },
                    },
                    support: below[a].clone(),
                }
            };
            nodes.push(node);
        }
        below = nodes.iter().map(|n| n.support.clone()).collect();
        levels.push(Level { nodes });
    }

    let top = levels[dyadic_depth - 1].nodes[0].clone();
    let NodeKind::Bsme { prev, cur, .. } = top.kind else {
        unreachable!("the top dyadic level always pairs two nodes");
    };
    for _ in dyadic_depth..total {
        levels.push(Level {
            nodes: vec![ScheduleNode {
                kind: NodeKind::Bsme {
                    prev,
                    cur,
                    extra_frame: frames - 1,
                },
                support: 0..frames,
            }],
        });
    }

    Ok(LevelSchedule {
        frames,
        levels,
        dyadic_depth,
        extra_levels: total - dyadic_depth,
    })
}

impl LevelSchedule {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Output count per level, carried nodes included.
    pub fn node_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.nodes.len()).collect()
    }
}
