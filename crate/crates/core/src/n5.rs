//! The N5 neighbourhood: adjacent swaps at the borders of critical blocks.

use ndarray::Array2;

use crate::eval::CriticalBlocks;
use crate::graph::Move;

/// Candidate moves of a state and the node-pair positions they occupy in
/// the flattened action space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoveSet {
    pub moves: Vec<Move>,
    /// `(tail, head)` node indices of each move, aligned with `moves`.
    pub pairs: Vec<(usize, usize)>,
    pub node_count: usize,
}

impl MoveSet {
    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn mask(&self) -> Array2<bool> {
        build_mask(self, self.node_count)
    }
}

/// Enumerates N5 moves. Interior blocks contribute their first and last
/// adjacent pair (one move when the block has two operations); the first
/// block contributes only its last pair and the last block only its first
/// pair. A path consisting of a single block has no moves.
pub fn enumerate_moves(cb: &CriticalBlocks) -> MoveSet {
    let mut moves = Vec::new();
    let count = cb.blocks.len();
    if count >= 2 {
        for (i, block) in cb.blocks.iter().enumerate() {
            let len = block.ops.len();
            if len < 2 {
                continue;
            }
            let pair = |a: usize| Move {
                machine: block.machine,
                first: block.ops[a],
                second: block.ops[a + 1],
            };
            let head = pair(0);
            let tail = pair(len - 2);
            if i == 0 {
                moves.push(tail);
            } else if i == count - 1 {
                moves.push(head);
            } else {
                moves.push(head);
                if len > 2 {
                    moves.push(tail);
                }
            }
        }
    }
    let pairs = moves
        .iter()
        .map(|m| {
            (
                m.first.node(cb.num_machines),
                m.second.node(cb.num_machines),
            )
        })
        .collect();
    MoveSet {
        moves,
        pairs,
        node_count: cb.node_count,
    }
}

/// `node_count x node_count` mask, true exactly at each move's (tail, head).
pub fn build_mask(ms: &MoveSet, node_count: usize) -> Array2<bool> {
    let mut mask = Array2::from_elem((node_count, node_count), false);
    for &(a, b) in &ms.pairs {
        mask[[a, b]] = true;
    }
    mask
}
