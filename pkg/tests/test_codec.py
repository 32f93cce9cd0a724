"""Unit tests for the FDM-2PSK codec and payload framing."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rydbergfdm.codec import (
    Frame,
    PhaseLabel,
    bin_offsets_hz,
    bits_to_frames,
    decode_label,
    encode_bits,
    field_from_label,
    format_frames,
    frame_classes,
    frames_to_bits,
    frames_to_payload,
    parse_frames,
    payload_to_frames,
    transmission_rate,
)
from rydbergfdm.config import TWO_PI, CodecConfig
from rydbergfdm.errors import FramingError, ShapeError


class TestFrame:
    """Bit containers and their text form."""

    pytestmark = pytest.mark.unit

    def test_parse_and_str(self):
        frame = Frame.parse("101")
        assert frame.bits == (1, 0, 1)
        assert str(frame) == "101"

    @pytest.mark.parametrize("text", ["", "10a", "2"])
    def test_parse_rejects_non_bits(self, text):
        with pytest.raises(FramingError):
            Frame.parse(text)

    def test_class_index_uses_leading_bits(self):
        assert Frame((1, 0, 1)).class_index() == 5
        assert Frame((1, 1, 0, 0, 1)).class_index(3) == 6


class TestEncodeDecode:
    """Label construction and thresholding."""

    pytestmark = pytest.mark.unit

    def test_encode_appends_reference(self):
        label = encode_bits(Frame((1, 0, 1)), CodecConfig())
        np.testing.assert_array_equal(label.bits, [1, 0, 1, 0])
        np.testing.assert_allclose(label.phases, [math.pi, 0.0, math.pi, 0.0])
        assert label.frame == Frame((1, 0, 1))

    def test_encode_rejects_wrong_width(self):
        with pytest.raises(ShapeError):
            encode_bits(Frame((1, 0)), CodecConfig())

    def test_label_reference_must_be_zero(self):
        with pytest.raises(ValueError):
            PhaseLabel(np.array([0, 1, 1, 1]))

    def test_decode_thresholds(self):
        assert decode_label([0.9, 0.2, 0.7, 0.1]) == Frame((1, 0, 1))

    def test_decode_tie_is_zero(self):
        assert decode_label([0.5, 0.51, 0.49, 0.9]) == Frame((0, 1, 0))

    def test_decode_every_class(self):
        """
        Verify thresholding an exact label recovers every frame of the class space.

        Labels are converted to floats so the round trip exercises the raw-output path.
        """
        cfg = CodecConfig()
        for frame in frame_classes(cfg):
            raw = encode_bits(frame, cfg).bits.astype(float)
            assert decode_label(raw, cfg.threshold) == frame


class TestField:
    """Field construction from labels."""

    pytestmark = pytest.mark.unit

    def test_symmetric_offsets(self):
        np.testing.assert_allclose(bin_offsets_hz(CodecConfig()), [-3e3, -1e3, 1e3, 3e3])

    def test_reference_dominates(self):
        cfg = CodecConfig()
        field = field_from_label(encode_bits(Frame((0, 1, 0)), cfg), cfg)
        assert field.reference_index == 3
        np.testing.assert_allclose(field.offsets, TWO_PI * np.array([-3e3, -1e3, 1e3, 3e3]))
        np.testing.assert_allclose(field.amplitudes[:3], cfg.reference_amplitude / 10)
        assert field.amplitudes[3] == cfg.reference_amplitude
        np.testing.assert_allclose(field.phases, [0.0, math.pi, 0.0, 0.0])

    def test_label_bins_must_match(self):
        with pytest.raises(ShapeError):
            field_from_label(PhaseLabel(np.zeros(5, dtype=np.uint8)), CodecConfig())


class TestRates:
    """Information rate of the bin grid."""

    pytestmark = pytest.mark.unit

    @pytest.mark.parametrize(
        "n_bins,delta_f,expected",
        [(4, 2e3, 6e3), (20, 2e3, 38e3), (4, 200e3, 0.6e6)],
    )
    def test_rate(self, n_bins, delta_f, expected):
        assert transmission_rate(n_bins, delta_f) == pytest.approx(expected)

    def test_rejects_single_bin(self):
        with pytest.raises(ValueError):
            transmission_rate(1, 2e3)


class TestClassSpace:
    """Enumeration of the frames a model must distinguish."""

    pytestmark = pytest.mark.unit

    def test_full_space(self):
        classes = frame_classes(CodecConfig())
        assert len(classes) == 8
        assert [c.class_index() for c in classes] == list(range(8))

    def test_active_bits_pad_with_zeros(self):
        cfg = CodecConfig(n_bins=20, active_bits=3)
        classes = frame_classes(cfg)
        assert len(classes) == 8
        assert all(len(c) == 19 and not any(c.bits[3:]) for c in classes)

    def test_active_bits_bounded(self):
        with pytest.raises(ValueError):
            CodecConfig(n_bins=4, active_bits=4)


class TestFraming:
    """Length-prefixed payload framing."""

    pytestmark = pytest.mark.unit

    def test_qr_sized_payload(self):
        """
        Verify a 441-bit payload on the 4-bin codec.

        The 16-bit header needs 6 three-bit frames and the body needs 147.
        """
        bits = np.random.default_rng(0).integers(0, 2, 441)
        frames = bits_to_frames(bits, CodecConfig())
        assert len(frames) == 6 + 147
        np.testing.assert_array_equal(frames_to_bits(frames), bits)

    def test_empty_payload(self):
        frames = bits_to_frames([], CodecConfig())
        assert len(frames) == 6
        assert frames_to_bits(frames).size == 0

    def test_bytes_payload(self):
        frames = payload_to_frames(b"Rydberg", CodecConfig(n_bins=8))
        assert frames_to_payload(frames) == b"Rydberg"

    def test_truncated_stream_is_rejected(self):
        frames = bits_to_frames(np.ones(30, dtype=np.uint8), CodecConfig())
        with pytest.raises(FramingError, match="announces"):
            frames_to_bits(frames[:-1])

    def test_mixed_widths_are_rejected(self):
        with pytest.raises(FramingError):
            frames_to_bits([Frame((0, 0, 0)), Frame((0, 0))])

    def test_header_length_limit(self):
        """
        Verify the 16-bit header bounds payloads at 65535 bits.

        The header counts payload bits, so the largest payload still round-trips and one
        more bit is rejected.
        """
        bits = np.random.default_rng(1).integers(0, 2, 2**16 - 1)
        frames = bits_to_frames(bits, CodecConfig())
        assert len(frames) == 6 + 21845
        np.testing.assert_array_equal(frames_to_bits(frames), bits)
        with pytest.raises(FramingError, match="16-bit header"):
            bits_to_frames(np.zeros(2**16, dtype=np.uint8), CodecConfig())

    def test_partial_byte_payload(self):
        frames = bits_to_frames([1, 0, 1], CodecConfig())
        with pytest.raises(FramingError, match="whole bytes"):
            frames_to_payload(frames)

    def test_text_interchange(self):
        frames = [Frame((1, 0, 1)), Frame((0, 0, 1))]
        text = format_frames(frames)
        assert text == "101\n001\n"
        assert parse_frames(text + "\n") == frames
