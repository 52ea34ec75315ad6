//! Bundled machines, labeling sidecars and instruction sets.

use crate::gridworld::TaskKind;

pub const DOORKEY_RM: &str = include_str!("../../../fixtures/doorkey.rm");
pub const BLOCKED_UNLOCK_PICKUP_RM: &str = include_str!("../../../fixtures/blocked_unlock_pickup.rm");
pub const UNLOCK_TO_UNLOCK_RM: &str = include_str!("../../../fixtures/unlock_to_unlock.rm");
pub const KEY_CORRIDOR_RM: &str = include_str!("../../../fixtures/key_corridor.rm");
pub const CRAFTIUM_RM: &str = include_str!("../../../fixtures/craftium.rm");
pub const METAWORLD_RM: &str = include_str!("../../../fixtures/metaworld.rm");

pub const DOORKEY_LBL: &str = include_str!("../../../fixtures/doorkey.lbl");
pub const BLOCKED_UNLOCK_PICKUP_LBL: &str = include_str!("../../../fixtures/blocked_unlock_pickup.lbl");
pub const UNLOCK_TO_UNLOCK_LBL: &str = include_str!("../../../fixtures/unlock_to_unlock.lbl");
pub const KEY_CORRIDOR_LBL: &str = include_str!("../../../fixtures/key_corridor.lbl");

pub const DOORKEY_INSTRUCTIONS: &str = include_str!("../../../fixtures/doorkey.instructions");
pub const BLOCKED_UNLOCK_PICKUP_INSTRUCTIONS: &str =
    include_str!("../../../fixtures/blocked_unlock_pickup.instructions");
pub const UNLOCK_TO_UNLOCK_INSTRUCTIONS: &str =
    include_str!("../../../fixtures/unlock_to_unlock.instructions");
pub const KEY_CORRIDOR_INSTRUCTIONS: &str = include_str!("../../../fixtures/key_corridor.instructions");
pub const METAWORLD_INSTRUCTIONS: &str = include_str!("../../../fixtures/metaworld.instructions");

/// The six published machines, byte-identical to their printed text.
pub const PUBLISHED_RMS: &[(&str, &str)] = &[
    ("doorkey", DOORKEY_RM),
    ("blocked_unlock_pickup", BLOCKED_UNLOCK_PICKUP_RM),
    ("unlock_to_unlock", UNLOCK_TO_UNLOCK_RM),
    ("key_corridor", KEY_CORRIDOR_RM),
    ("craftium", CRAFTIUM_RM),
    ("metaworld", METAWORLD_RM),
];

/// Text artifacts of one compositional task.
#[derive(Debug, Clone, Copy)]
pub struct ComposeFixture {
    pub name: &'static str,
    pub rm: &'static str,
    pub labeling: &'static str,
    pub instructions: &'static str,
    pub task_json: &'static str,
}

macro_rules! compose {
    ($name:literal) => {
        ComposeFixture {
            name: $name,
            rm: include_str!(concat!("../../../fixtures/compose/", $name, ".rm")),
            labeling: include_str!(concat!("../../../fixtures/compose/", $name, ".lbl")),
            instructions: include_str!(concat!("../../../fixtures/compose/", $name, ".instructions")),
            task_json: include_str!(concat!("../../../fixtures/compose/", $name, ".task.json")),
        }
    };
}

/// Zero-shot trio: two training tasks and their sequential composite.
pub const ZERO_SHOT: [ComposeFixture; 3] = [compose!("zs_a"), compose!("zs_b"), compose!("zs_c")];

/// Multi-task ablation suite; the first K entries form the K-task suite.
pub const ABLATION_SUITE: [ComposeFixture; 5] = [
    compose!("suite_1"),
    compose!("suite_2"),
    compose!("suite_3"),
    compose!("suite_4"),
    compose!("suite_5"),
];

/// Looks up a compositional fixture by name (`suite_1`, `zs_c`, ...).
pub fn compose_fixture(name: &str) -> Option<ComposeFixture> {
    ZERO_SHOT
        .iter()
        .chain(&ABLATION_SUITE)
        .find(|f| f.name == name)
        .copied()
}

/// Bundled `(rm, labeling, instructions)` for the fixed-layout task kinds.
pub fn task_texts(kind: TaskKind) -> Option<(&'static str, &'static str, &'static str)> {
    match kind {
        TaskKind::DoorKey => Some((DOORKEY_RM, DOORKEY_LBL, DOORKEY_INSTRUCTIONS)),
        TaskKind::BlockedUnlockPickup => Some((
            BLOCKED_UNLOCK_PICKUP_RM,
            BLOCKED_UNLOCK_PICKUP_LBL,
            BLOCKED_UNLOCK_PICKUP_INSTRUCTIONS,
        )),
        TaskKind::UnlockToUnlock => Some((
            UNLOCK_TO_UNLOCK_RM,
            UNLOCK_TO_UNLOCK_LBL,
            UNLOCK_TO_UNLOCK_INSTRUCTIONS,
        )),
        TaskKind::KeyCorridor => Some((KEY_CORRIDOR_RM, KEY_CORRIDOR_LBL, KEY_CORRIDOR_INSTRUCTIONS)),
        TaskKind::XCompose => None,
    }
}
