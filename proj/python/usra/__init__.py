"""StriderWorld pixel-control experiments: usra / lusr / svea training stack."""

from _usra import (  # noqa: F401
    ACTION_COUNT,
    EPISODE_LENGTH,
    FRAME_SIZE,
    OBS_CHANNELS,
    DomainSpec,
    ModelBundle,
    PhysState,
    StriderEnv,
    TrainConfig,
    UsraError,
    Variant,
    collect_random,
    color_jitter,
    conv2d,
    evaluate,
    finetune_phase2,
    grad_suite,
    load_bundle,
    make_domain,
    parse_config,
    pretrain_phase1,
    random_conv,
    relative_improvement,
    render,
    save_bundle,
)

__all__ = [
    "ACTION_COUNT",
    "EPISODE_LENGTH",
    "FRAME_SIZE",
    "OBS_CHANNELS",
    "DomainSpec",
    "ModelBundle",
    "PhysState",
    "StriderEnv",
    "TrainConfig",
    "UsraError",
    "Variant",
    "collect_random",
    "color_jitter",
    "conv2d",
    "evaluate",
    "finetune_phase2",
    "grad_suite",
    "load_bundle",
    "make_domain",
    "parse_config",
    "pretrain_phase1",
    "random_conv",
    "relative_improvement",
    "render",
    "save_bundle",
]
