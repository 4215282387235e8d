"""Bundled deterministic test clips.

These are synthetic stand-ins for natural content: multi-octave moving
textures with detail at several block scales, so partition depth varies with
quality, plus a flat-noise clip for cost-model calibration tests. Generated
on demand from frozen specs; identical across runs and platforms.
"""

from __future__ import annotations

from .frame_io import FramePlane, SynthSpec, generate_synthetic

BUNDLED_CLIPS = {
    # 192x128: 3x2 superblocks, gentle pan
    "texture_a": SynthSpec(
        width=192, height=128, frame_count=50, pattern="moving_texture",
        seed=11, amplitude=80, velocity=(2, 1),
    ),
    # portrait orientation, different seed and faster motion
    "texture_b": SynthSpec(
        width=128, height=192, frame_count=50, pattern="moving_texture",
        seed=29, amplitude=70, velocity=(1, 2),
    ),
    # spatially stationary noise: never splits, monotone rate in Q
    "noise_a": SynthSpec(
        width=128, height=128, frame_count=30, pattern="noise",
        seed=5, amplitude=60,
    ),
}


def clip_names() -> list:
    return sorted(BUNDLED_CLIPS)


def load_clip(name: str, frames: int | None = None) -> list[FramePlane]:
    """Materialize a bundled clip, optionally truncated to ``frames``."""
    try:
        spec = BUNDLED_CLIPS[name]
    except KeyError:
        raise KeyError(
            f"unknown bundled clip {name!r}; available: {clip_names()}"
        ) from None
    if frames is not None and frames < spec.frame_count:
        spec = SynthSpec(
            width=spec.width, height=spec.height, frame_count=frames,
            pattern=spec.pattern, seed=spec.seed, value=spec.value,
            period=spec.period, amplitude=spec.amplitude, velocity=spec.velocity,
        )
    return generate_synthetic(spec)
