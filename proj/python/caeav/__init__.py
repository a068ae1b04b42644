"""Python access to the caeav library.

Arrays go in and come out as float64 numpy arrays. Configs are the same flat
``key = value`` text the command-line tool reads; an empty string means the
synthetic defaults.
"""

from ._caeav import (
    ConfigError,
    DimensionError,
    Error,
    InputError,
    NumericError,
    UsageError,
    VersionError,
    __version__,
    ablate,
    entropy,
    evaluate_checkpoint,
    export_dataset,
    gamma_schedule,
    gradcheck,
    learning_rates,
    load_dataset,
    loss_entropy,
    loss_infonce_cap,
    loss_va,
    make_splits,
    resolve_config,
    softmax,
    topk_count,
    topk_mask,
    train,
)


def config(**keys):
    """Build config text from keyword arguments, e.g. config(train__epochs=3)."""
    lines = ["schema_version = 1"]
    for k, v in keys.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k.replace('__', '.')} = {v}")
    return "\n".join(lines) + "\n"


__all__ = [name for name in dir() if not name.startswith("_")]
