"""Synthetic viewpoint-graph worlds standing in for a photographic simulator."""

from .generate import (
    DEFAULT_LANDMARKS,
    SPLITS,
    ConfigInvalid,
    Episode,
    World,
    WorldConfig,
    generate_world,
    load_world,
    save_world,
    validate_episode,
    world_to_json,
)
from .grammar import (
    Grammar,
    NoTemplateForPath,
    PathTooShort,
    clause_heads,
    generate_instruction,
    is_unambiguous,
    split_legs,
)
from .graph import (
    N_VIEWS,
    STOP,
    ActionOutOfRange,
    AlreadyDone,
    Edge,
    EnvironmentGraph,
    NavState,
    Panorama,
    Unreachable,
    UnknownViewpoint,
    Viewpoint,
    WorldError,
    replay_teacher,
    shortest_path,
    step,
    teacher_action,
)
