"""FDM-2PSK codec.

Each message bin carries one bit as a phase of 0 or pi relative to the reference
bin, which is the highest-frequency bin and always has phase 0. Bins sit on a
symmetric grid ``(k - (n-1)/2) * delta_f`` around the carrier.

Payload framing: a 16-bit big-endian count of payload bits, then the payload bits,
both chunked into frames of ``n_bins - 1`` bits and zero padded at the tail of each
part.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .config import CodecConfig
from .errors import FramingError, ShapeError
from .physics import MWField

HEADER_BITS = 16
MAX_PAYLOAD_BITS = 2**HEADER_BITS - 1


@dataclass(frozen=True)
class Frame:
    """Message bits of one symbol interval."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"Frame bits must be 0 or 1, got {bits}")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    @classmethod
    def parse(cls, text: str) -> Frame:
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise FramingError(f"Not an ASCII bit string: '{text}'")
        return cls(tuple(int(c) for c in text))

    def class_index(self, class_bits: int | None = None) -> int:
        """Integer value of the leading ``class_bits`` bits, most significant first."""
        bits = self.bits if class_bits is None else self.bits[:class_bits]
        return int("".join(str(b) for b in bits) or "0", 2)


@dataclass(frozen=True)
class PhaseLabel:
    """Dense per-bin bit vector; the reference entry (last) is always 0."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).ravel()
        if bits.size < 2:
            raise ShapeError("A phase label covers at least 2 bins")
        if np.any(bits > 1):
            raise ValueError(f"Label entries must be 0 or 1, got {bits}")
        if bits[-1] != 0:
            raise ValueError("The reference entry of a phase label must be 0")
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhaseLabel):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    @property
    def n_bins(self) -> int:
        return self.bits.size

    @property
    def phases(self) -> np.ndarray:
        """Per-bin phases in radians."""
        return self.bits.astype(np.float64) * math.pi

    @property
    def frame(self) -> Frame:
        return Frame(tuple(self.bits[:-1]))


def encode_bits(frame: Frame, cfg: CodecConfig) -> PhaseLabel:
    """Map message bits to phases (0 -> 0, 1 -> pi) with the reference appended."""
    if len(frame) != cfg.message_bits:
        raise ShapeError(
            f"Frame has {len(frame)} bits, {cfg.n_bins}-bin codec expects {cfg.message_bits}"
        )
    return PhaseLabel(np.array([*frame.bits, 0], dtype=np.uint8))


def bin_offsets_hz(cfg: CodecConfig) -> np.ndarray:
    """Bin frequencies relative to the carrier (Hz), ascending."""
    return (np.arange(cfg.n_bins) - (cfg.n_bins - 1) / 2.0) * cfg.delta_f


def field_from_label(label: PhaseLabel, cfg: CodecConfig) -> MWField:
    """MW drive for a label; the reference is the strongest, highest-frequency bin."""
    if label.n_bins != cfg.n_bins:
        raise ShapeError(f"Label has {label.n_bins} bins, codec has {cfg.n_bins}")
    amplitudes = np.full(cfg.n_bins, cfg.reference_amplitude / cfg.amplitude_ratio)
    amplitudes[-1] = cfg.reference_amplitude
    return MWField(
        offsets=2.0 * math.pi * bin_offsets_hz(cfg),
        amplitudes=amplitudes,
        phases=label.phases,
        reference_index=cfg.n_bins - 1,
        carrier_hz=cfg.center_hz,
    )


def decode_label(raw: Sequence[float] | np.ndarray, threshold: float = 0.5) -> Frame:
    """Threshold network outputs; entries strictly above ``threshold`` decode to 1.

    The final (reference) entry is dropped.
    """
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if raw.size < 2:
        raise ShapeError("Raw label must cover at least 2 bins")
    return Frame(tuple((raw[:-1] > threshold).astype(int)))


def transmission_rate(n_bins: int, delta_f: float) -> float:
    """Information rate in bit/s: one bit per message bin per beat period."""
    if n_bins < 2:
        raise ValueError(f"n_bins must be at least 2, got {n_bins}")
    return (n_bins - 1) * delta_f


def frame_classes(cfg: CodecConfig) -> list[Frame]:
    """All frames of the class space; bits beyond ``cfg.class_bits`` are zero."""
    padding = (0,) * (cfg.message_bits - cfg.class_bits)
    return [
        Frame(bits + padding) for bits in itertools.product((0, 1), repeat=cfg.class_bits)
    ]


def _chunk(bits: np.ndarray, width: int) -> list[Frame]:
    n_frames = math.ceil(bits.size / width)
    padded = np.zeros(n_frames * width, dtype=np.uint8)
    padded[: bits.size] = bits
    return [Frame(tuple(row)) for row in padded.reshape(n_frames, width)]


def _header_frames(width: int) -> int:
    return math.ceil(HEADER_BITS / width)


def bits_to_frames(bits: Sequence[int] | np.ndarray, cfg: CodecConfig) -> list[Frame]:
    """Frame an arbitrary bit string behind a 16-bit header holding its length in bits.

    The length is a bit count so padding in the last frame is dropped on decode;
    payloads are limited to ``MAX_PAYLOAD_BITS``.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size > MAX_PAYLOAD_BITS:
        raise FramingError(f"Payload of {bits.size} bits exceeds the 16-bit header")
    width = cfg.message_bits
    header = np.array(
        [(bits.size >> shift) & 1 for shift in range(HEADER_BITS - 1, -1, -1)],
        dtype=np.uint8,
    )
    frames = _chunk(header, width)
    if bits.size:
        frames.extend(_chunk(bits, width))
    return frames


def frames_to_bits(frames: Sequence[Frame]) -> np.ndarray:
    """Inverse of ``bits_to_frames``."""
    if not frames:
        raise FramingError("Empty frame list has no header")
    width = len(frames[0])
    if any(len(f) != width for f in frames):
        raise FramingError("Frames have inconsistent widths")
    n_header = _header_frames(width)
    if len(frames) < n_header:
        raise FramingError(f"Need {n_header} header frames, got {len(frames)}")
    header_bits = np.concatenate([f.bits for f in frames[:n_header]])[:HEADER_BITS]
    count = int("".join(str(b) for b in header_bits), 2)
    expected = n_header + math.ceil(count / width)
    if len(frames) != expected:
        raise FramingError(
            f"Header announces {count} bits ({expected} frames), got {len(frames)} frames"
        )
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    body = np.concatenate([f.bits for f in frames[n_header:]]).astype(np.uint8)
    return body[:count]


def payload_to_frames(payload: bytes, cfg: CodecConfig) -> list[Frame]:
    return bits_to_frames(np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8)), cfg)


def frames_to_payload(frames: Sequence[Frame]) -> bytes:
    bits = frames_to_bits(frames)
    if bits.size % 8:
        raise FramingError(f"{bits.size} payload bits do not form whole bytes")
    return np.packbits(bits).tobytes()


def format_frames(frames: Iterable[Frame]) -> str:
    """ASCII interchange: one frame per line."""
    return "".join(f"{frame}\n" for frame in frames)


def parse_frames(text: str) -> list[Frame]:
    return [Frame.parse(line) for line in text.splitlines() if line.strip()]
