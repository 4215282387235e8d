"""Raw video ingestion (Y4M subset, headerless YUV) and synthetic sequences.

Only the luma plane is processed; chroma bytes are parsed and skipped.
Every plane handed to the encoder is padded to 64-pixel multiples by edge
replication so superblocks are always full size. The pre-padding window is
kept on the plane (``crop_width`` / ``crop_height``) for quality metrics.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterator, Optional

import numpy as np

SUPERBLOCK = 64


class MalformedHeader(ValueError):
    """Y4M signature or mandatory tags missing."""


class UnsupportedFormat(ValueError):
    """Stream is valid Y4M but outside the 8-bit 4:2:0 subset."""


class TruncatedFrame(ValueError):
    """Fewer payload bytes than the header promises."""


class InvalidSpec(ValueError):
    """Synthetic-sequence spec with impossible parameters."""


@dataclass
class StreamInfo:
    """Geometry and format of an input stream (pre-padding)."""

    width: int
    height: int
    frame_count: Optional[int] = None  # unknown for streaming reads
    chroma_format: str = "C420"
    bit_depth: int = 8


@dataclass(eq=False)
class FramePlane:
    """8-bit luma grid for one frame.

    ``samples`` is a (height, width) uint8 array. ``crop_width``/``crop_height``
    record the original window when the plane was padded; metrics compare
    inside that window only.
    """

    width: int
    height: int
    samples: np.ndarray
    frame_index: int = 0
    crop_width: int = 0
    crop_height: int = 0

    def __post_init__(self):
        if self.samples.shape != (self.height, self.width):
            raise ValueError("samples shape does not match width/height")
        if self.samples.dtype != np.uint8:
            raise ValueError("samples must be uint8")
        if self.crop_width <= 0:
            self.crop_width = self.width
        if self.crop_height <= 0:
            self.crop_height = self.height

    def same_as(self, other: "FramePlane") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.crop_width == other.crop_width
            and self.crop_height == other.crop_height
            and np.array_equal(self.samples, other.samples)
        )


def _padded_dim(n: int) -> int:
    return ((n + SUPERBLOCK - 1) // SUPERBLOCK) * SUPERBLOCK


def pad_plane(plane: FramePlane) -> FramePlane:
    """Pad right/bottom by edge replication to 64-pixel multiples.

    Samples inside the original window are never altered; a no-op when the
    plane is already aligned.
    """
    pw, ph = _padded_dim(plane.width), _padded_dim(plane.height)
    if (pw, ph) == (plane.width, plane.height):
        return plane
    padded = np.pad(
        plane.samples, ((0, ph - plane.height), (0, pw - plane.width)), mode="edge"
    )
    return FramePlane(
        width=pw,
        height=ph,
        samples=padded,
        frame_index=plane.frame_index,
        crop_width=plane.crop_width,
        crop_height=plane.crop_height,
    )


# ---------------------------------------------------------------------------
# Y4M subset reader
# ---------------------------------------------------------------------------

_Y4M_SIGNATURE = b"YUV4MPEG2"


def parse_y4m_header(stream: BinaryIO) -> StreamInfo:
    """Parse the Y4M signature line, leaving the stream at the first FRAME.

    Only 8-bit 4:2:0 is accepted (tags C420, C420jpeg, C420mpeg2, C420paldv);
    a missing C tag defaults to 4:2:0 per Y4M convention.
    """
    line = stream.readline(4096)
    if not line.startswith(_Y4M_SIGNATURE):
        raise MalformedHeader("missing YUV4MPEG2 signature")
    tokens = line.decode("ascii", errors="replace").strip().split()
    width = height = None
    chroma = "C420"
    for tok in tokens[1:]:
        if tok.startswith("W"):
            width = int(tok[1:])
        elif tok.startswith("H"):
            height = int(tok[1:])
        elif tok.startswith("C"):
            chroma = tok
    if width is None or height is None:
        raise MalformedHeader("header lacks W or H tag")
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"non-positive dimensions {width}x{height}")
    if not chroma.startswith("C420") or "p1" in chroma:
        raise UnsupportedFormat(f"unsupported colourspace tag {chroma}")
    if width % 2 or height % 2:
        raise UnsupportedFormat("odd dimensions are not representable in 4:2:0")
    return StreamInfo(width=width, height=height, chroma_format="C420", bit_depth=8)


def read_frame(
    stream: BinaryIO, info: StreamInfo, frame_index: int = 0, raw: bool = False,
    gray: bool = False,
) -> Optional[FramePlane]:
    """Read one frame; returns None at end of stream.

    Y4M mode expects a FRAME marker line (parameters ignored) followed by a
    planar I420 payload. Raw mode reads tightly packed I420, or luma only
    with ``gray``. The luma plane is padded to 64-multiples on return.
    """
    if not raw:
        marker = stream.readline(4096)
        if marker == b"":
            return None
        if not marker.startswith(b"FRAME"):
            raise TruncatedFrame("expected FRAME marker")
    luma_bytes = info.width * info.height
    if gray and raw:
        chroma_bytes = 0
    else:
        chroma_bytes = (info.width // 2) * (info.height // 2) * 2
    payload = stream.read(luma_bytes + chroma_bytes)
    if raw and len(payload) == 0:
        return None
    if len(payload) < luma_bytes + chroma_bytes:
        raise TruncatedFrame(
            f"frame {frame_index}: got {len(payload)} bytes, "
            f"need {luma_bytes + chroma_bytes}"
        )
    luma = np.frombuffer(payload[:luma_bytes], dtype=np.uint8).reshape(
        info.height, info.width
    )
    plane = FramePlane(
        width=info.width,
        height=info.height,
        samples=luma.copy(),
        frame_index=frame_index,
    )
    return pad_plane(plane)


def read_y4m(stream: BinaryIO, limit: Optional[int] = None) -> list[FramePlane]:
    info = parse_y4m_header(stream)
    frames = []
    while limit is None or len(frames) < limit:
        plane = read_frame(stream, info, frame_index=len(frames))
        if plane is None:
            break
        frames.append(plane)
    return frames


def read_raw(
    stream: BinaryIO, width: int, height: int, gray: bool = False,
    limit: Optional[int] = None,
) -> list[FramePlane]:
    info = StreamInfo(width=width, height=height)
    frames = []
    while limit is None or len(frames) < limit:
        plane = read_frame(stream, info, frame_index=len(frames), raw=True, gray=gray)
        if plane is None:
            break
        frames.append(plane)
    return frames


def load_sequence(
    path: str, width: Optional[int] = None, height: Optional[int] = None,
    gray: bool = False, limit: Optional[int] = None,
) -> list[FramePlane]:
    """Load a .y4m file, or raw I420/gray when width/height are given."""
    with open(path, "rb") as fh:
        head = fh.peek(16) if isinstance(fh, io.BufferedReader) else b""
        if head.startswith(_Y4M_SIGNATURE):
            return read_y4m(fh, limit=limit)
        if width is None or height is None:
            raise MalformedHeader(
                f"{path}: not a Y4M stream and no --width/--height supplied"
            )
        return read_raw(fh, width, height, gray=gray, limit=limit)


def write_raw(frames: list[FramePlane], stream: BinaryIO, gray: bool = False) -> None:
    """Write the pre-padding window of each frame as raw gray or I420.

    I420 chroma planes are filled with neutral 128 (luma-only pipeline).
    """
    for plane in frames:
        window = plane.samples[: plane.crop_height, : plane.crop_width]
        stream.write(window.tobytes())
        if not gray:
            n = (plane.crop_width // 2) * (plane.crop_height // 2) * 2
            stream.write(b"\x80" * n)


# ---------------------------------------------------------------------------
# Synthetic sequences
# ---------------------------------------------------------------------------

PATTERNS = ("constant", "gradient", "checkerboard", "noise", "moving_texture")


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic synthetic sequence: identical spec, bit-identical frames."""

    width: int
    height: int
    frame_count: int
    pattern: str
    seed: int = 0
    value: int = 128          # constant
    period: int = 4           # checkerboard tile size
    amplitude: int = 64       # noise / texture contrast
    velocity: tuple = (1, 0)  # moving_texture pixels per frame (dx, dy)


def _texture_base(spec: SynthSpec) -> np.ndarray:
    """Natural-texture stand-in: value-noise octaves with uneven detail.

    Smooth coarse structure carries fine detail only inside patches, and a
    second coarse field damps whole regions to near-flat, so the optimal
    partition depth varies across the frame and shifts with the quantizer.
    """
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    h, w = spec.height, spec.width

    def octave(cell: int, weight: float) -> np.ndarray:
        gh, gw = h // cell + 2, w // cell + 2
        grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
        ys = np.arange(h) / cell
        xs = np.arange(w) / cell
        y0 = ys.astype(int)
        x0 = xs.astype(int)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        tl = grid[np.ix_(y0, x0)]
        tr = grid[np.ix_(y0, x0 + 1)]
        bl = grid[np.ix_(y0 + 1, x0)]
        br = grid[np.ix_(y0 + 1, x0 + 1)]
        return weight * ((tl * (1 - fx) + tr * fx) * (1 - fy)
                         + (bl * (1 - fx) + br * fx) * fy)

    smooth = octave(64, 1.0) + octave(32, 0.5)
    field = octave(48, 1.0)
    thr = np.quantile(field, 0.55)
    mask = np.clip((field - thr) / max(field.std(), 1e-9), 0.0, 1.0)
    detail = (octave(8, 0.5) + octave(4, 0.35)
              + 0.25 * rng.uniform(-1.0, 1.0, size=(h, w)))
    out = smooth + mask * detail
    flat = octave(96, 1.0)
    fthr = np.quantile(flat, 0.35)
    out *= 0.06 + 0.94 * np.clip((flat - fthr) / max(flat.std(), 1e-9), 0.0, 1.0)
    out /= max(np.abs(out).max(), 1e-9)
    return np.clip(128.0 + spec.amplitude * out, 0, 255).astype(np.uint8)


def generate_synthetic(spec: SynthSpec) -> list[FramePlane]:
    """Produce a deterministic sequence; planes are padded to 64-multiples."""
    if spec.width <= 0 or spec.height <= 0 or spec.frame_count <= 0:
        raise InvalidSpec(f"non-positive dimensions in {spec}")
    if spec.pattern not in PATTERNS:
        raise InvalidSpec(f"unknown pattern {spec.pattern!r}")
    h, w = spec.height, spec.width
    frames = []
    if spec.pattern == "constant":
        base = np.full((h, w), np.uint8(spec.value))
        frames = [base.copy() for _ in range(spec.frame_count)]
    elif spec.pattern == "gradient":
        xs = np.arange(w)[None, :]
        ys = np.arange(h)[:, None]
        denom = max(w + h - 2, 1)
        base = (((xs + ys) * 255) // denom).astype(np.uint8)
        frames = [base.copy() for _ in range(spec.frame_count)]
    elif spec.pattern == "checkerboard":
        if spec.period <= 0:
            raise InvalidSpec("checkerboard period must be positive")
        xs = np.arange(w)[None, :] // spec.period
        ys = np.arange(h)[:, None] // spec.period
        base = (((xs + ys) % 2) * 255).astype(np.uint8)
        frames = [base.copy() for _ in range(spec.frame_count)]
    elif spec.pattern == "noise":
        rng = np.random.default_rng(np.random.PCG64(spec.seed))
        lo = max(0, 128 - spec.amplitude)
        hi = min(255, 128 + spec.amplitude)
        frames = [
            rng.integers(lo, hi + 1, size=(h, w)).astype(np.uint8)
            for _ in range(spec.frame_count)
        ]
    elif spec.pattern == "moving_texture":
        base = _texture_base(spec)
        dx, dy = spec.velocity
        frames = [
            np.roll(base, shift=(t * dy, t * dx), axis=(0, 1))
            for t in range(spec.frame_count)
        ]
    return [
        pad_plane(FramePlane(width=w, height=h, samples=arr, frame_index=i))
        for i, arr in enumerate(frames)
    ]


def parse_pattern_spec(
    text: str, width: int, height: int, frame_count: int, seed: int = 0
) -> SynthSpec:
    """Parse a CLI pattern string like ``noise:amplitude=40`` into a spec."""
    name, _, rest = text.partition(":")
    if name not in PATTERNS:
        raise InvalidSpec(f"unknown pattern {name!r} (choose from {PATTERNS})")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            key = key.strip()
            if key in ("value", "period", "amplitude", "seed"):
                kwargs[key] = int(val)
            elif key == "vx":
                kwargs.setdefault("velocity", [1, 0])
                kwargs["velocity"][0] = int(val)
            elif key == "vy":
                kwargs.setdefault("velocity", [1, 0])
                kwargs["velocity"][1] = int(val)
            else:
                raise InvalidSpec(f"unknown pattern parameter {key!r}")
    if "velocity" in kwargs:
        kwargs["velocity"] = tuple(kwargs["velocity"])
    kwargs.setdefault("seed", seed)
    return SynthSpec(
        width=width, height=height, frame_count=frame_count, pattern=name, **kwargs
    )
