"""Python access to the SAR-to-RGB diffusion core.

Images are float32 numpy arrays in (C, H, W) order. Commands take the same
flat configs as the command-line tool and return its report as a dict.
"""

from ._core import (
    ConfigError,
    DataError,
    NoiseSchedule,
    NumericError,
    command_defaults,
    command_names,
    degrade,
    fid,
    mae,
    preprocess_rgb,
    preprocess_sar,
    psnr,
    resolve_config,
    run_command,
    ssim,
    synthetic_pair,
    to_unit_range,
)


def run(command, out, preset=None, **flags):
    """Resolves defaults <- preset <- flags and runs one command."""
    config = resolve_config(command, preset, None, {k: _flag(v) for k, v in flags.items()})
    return run_command(command, config, str(out))


def _flag(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


__all__ = [
    "ConfigError",
    "DataError",
    "NoiseSchedule",
    "NumericError",
    "command_defaults",
    "command_names",
    "degrade",
    "fid",
    "mae",
    "preprocess_rgb",
    "preprocess_sar",
    "psnr",
    "resolve_config",
    "run",
    "run_command",
    "ssim",
    "synthetic_pair",
    "to_unit_range",
]
