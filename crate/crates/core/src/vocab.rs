//! Shared token vocabulary: special tokens, a small text vocabulary for
//! instructions and symbolic scenes, and a 256-token block of action bins.

/// Special token ids. MASK never appears in ground-truth targets.
pub const MASK: u32 = 0;
pub const PAD: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SEP: u32 = 4;

pub const YES: u32 = 5;
pub const NO: u32 = 6;

// Tabletop instruction words.
pub const MOVE: u32 = 7;
pub const TO: u32 = 8;
pub const THEN: u32 = 9;
pub const COLOR_BASE: u32 = 10; // red, green, blue
pub const NUM_COLORS: u32 = 3;
pub const ZONE_BASE: u32 = 13; // nw, ne, sw, se, center
pub const NUM_ZONES: u32 = 5;

// Block-scene words.
pub const STACK_TOK: u32 = 18;
pub const GOAL_TOK: u32 = 19;
pub const PRED_ON: u32 = 20;
pub const PRED_ONTABLE: u32 = 21;
pub const PRED_CLEAR: u32 = 22;
pub const ACT_PICK: u32 = 23;
pub const ACT_PLACEON: u32 = 24;
pub const ACT_PLACETABLE: u32 = 25;
pub const BLOCK_BASE: u32 = 26;
pub const MAX_BLOCKS: u32 = 8;

/// First id of the 256 contiguous action-bin tokens.
pub const ACTION_BIN_BASE: u32 = 64;
pub const ACTION_BINS: u32 = 256;

pub const VOCAB_SIZE: usize = (ACTION_BIN_BASE + ACTION_BINS) as usize;

pub const SPECIAL_COUNT: usize = 5;

pub fn color_token(class: u8) -> u32 {
    assert!((class as u32) < NUM_COLORS);
    COLOR_BASE + class as u32
}

pub fn zone_token(zone: u8) -> u32 {
    assert!((zone as u32) < NUM_ZONES);
    ZONE_BASE + zone as u32
}

pub fn block_token(id: u32) -> u32 {
    assert!(id < MAX_BLOCKS);
    BLOCK_BASE + id
}

/// Mask / pad / structure token ids bundled for layout checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub mask: u32,
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub sep: u32,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens { mask: MASK, pad: PAD, bos: BOS, eos: EOS, sep: SEP }
    }
}

impl SpecialTokens {
    pub fn all_distinct(&self) -> bool {
        let ids = [self.mask, self.pad, self.bos, self.eos, self.sep];
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                if ids[i] == ids[j] {
                    return false;
                }
            }
        }
        true
    }
}

/// Debug name for a token id.
pub fn token_name(id: u32) -> String {
    match id {
        MASK => "<mask>".into(),
        PAD => "<pad>".into(),
        BOS => "<bos>".into(),
        EOS => "<eos>".into(),
        SEP => "<sep>".into(),
        YES => "yes".into(),
        NO => "no".into(),
        MOVE => "move".into(),
        TO => "to".into(),
        THEN => "then".into(),
        STACK_TOK => "stack".into(),
        GOAL_TOK => "goal".into(),
        PRED_ON => "on?".into(),
        PRED_ONTABLE => "ontable?".into(),
        PRED_CLEAR => "clear?".into(),
        ACT_PICK => "pick".into(),
        ACT_PLACEON => "place-on".into(),
        ACT_PLACETABLE => "place-table".into(),
        id if (COLOR_BASE..COLOR_BASE + NUM_COLORS).contains(&id) => {
            ["red", "green", "blue"][(id - COLOR_BASE) as usize].into()
        }
        id if (ZONE_BASE..ZONE_BASE + NUM_ZONES).contains(&id) => {
            ["nw", "ne", "sw", "se", "center"][(id - ZONE_BASE) as usize].into()
        }
        id if (BLOCK_BASE..BLOCK_BASE + MAX_BLOCKS).contains(&id) => {
            format!("b{}", id - BLOCK_BASE)
        }
        id if (ACTION_BIN_BASE..ACTION_BIN_BASE + ACTION_BINS).contains(&id) => {
            format!("bin{}", id - ACTION_BIN_BASE)
        }
        id => format!("tok{id}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_distinct_and_vocab_large_enough() {
        assert!(SpecialTokens::default().all_distinct());
        assert!(VOCAB_SIZE >= ACTION_BINS as usize + SPECIAL_COUNT);
        assert!(BLOCK_BASE + MAX_BLOCKS <= ACTION_BIN_BASE);
    }
}
