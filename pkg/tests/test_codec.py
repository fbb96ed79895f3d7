import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scanstream.codec import (
    DEFAULT_BBOX,
    CardinalityError,
    CompressionConfig,
    ConfigError,
    DecodeError,
    OutOfRangeError,
    PointCloudScan,
    decode,
    encode,
    pack_unit,
    pad_scan,
    residual,
    unpack_unit,
)


def cloud(n, seed=0, span=40.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-span, span, size=(n, 3))


def make_scan(n, seed=0, scan_id=0):
    return pad_scan(cloud(n, seed), n, scan_id=scan_id)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize("q,c", [(7, 0), (25, 0), (8, -1), (8, 10)])
def test_config_rejects_out_of_grid(q, c):
    with pytest.raises(ConfigError):
        CompressionConfig(q, c).validate()


def test_config_accepts_grid_corners():
    for q, c in [(8, 0), (8, 9), (24, 0), (24, 9)]:
        CompressionConfig(q, c).validate()


# -------------------------------------------------------------- round trip


@given(q=st.integers(8, 24), c=st.integers(0, 9), seed=st.integers(0, 20))
def test_roundtrip_error_bounded_by_cell(q, c, seed):
    scan = make_scan(512, seed)
    unit = encode(scan, CompressionConfig(q, c))
    out = decode(unit)
    stats = residual(scan, out)
    # uniform quantization over the default box: worst case is half a cell
    # diagonal, plus a little float slack
    cell = (DEFAULT_BBOX[3] - DEFAULT_BBOX[0]) / (2**q - 1)
    assert stats.max_ptp <= (math.sqrt(3.0) / 2.0) * cell * (1.0 + 1e-6) + 1e-9
    assert out.n_points == scan.n_points
    assert out.scan_id == scan.scan_id


def test_decoded_points_sorted_not_original_order():
    # the codec reorders points; residual matching must still pair correctly
    scan = make_scan(256, 3)
    out = decode(encode(scan, CompressionConfig(16, 2)))
    stats = residual(scan, out)
    assert stats.mean_ptp < 0.01


def test_encode_deterministic():
    scan = make_scan(1024, 5)
    cfg = CompressionConfig(14, 3)
    assert encode(scan, cfg).payload == encode(scan, cfg).payload


def test_payload_nondecreasing_in_q():
    scan = make_scan(2048, 9)
    for c in (0, 5, 9):
        sizes = [len(encode(scan, CompressionConfig(q, c)).payload) for q in range(8, 25)]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))


def test_mean_ptp_nonincreasing_in_q():
    scan = make_scan(2048, 11)
    for c in (0, 9):
        errs = [
            residual(scan, decode(encode(scan, CompressionConfig(q, c)))).mean_ptp
            for q in range(8, 25)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_higher_c_never_larger_at_same_q():
    scan = make_scan(2048, 13)
    for q in (10, 16, 22):
        sizes = [len(encode(scan, CompressionConfig(q, c)).payload) for c in range(10)]
        assert all(b <= a for a, b in zip(sizes, sizes[1:]))


def test_unit_metadata_and_sizes():
    scan = make_scan(300, 1, scan_id=77)
    unit = encode(scan, CompressionConfig(12, 4))
    assert (unit.scan_id, unit.q, unit.c) == (77, 12, 4)
    assert unit.payload_bits == 8 * len(unit.payload)
    assert unit.wire_size > len(unit.payload)


def test_tight_bbox_roundtrip():
    scan = make_scan(512, 21, scan_id=5)
    unit = encode(scan, CompressionConfig(10, 0, tight_bbox=True))
    stats = residual(scan, decode(unit))
    loose = encode(scan, CompressionConfig(10, 0))
    loose_stats = residual(scan, decode(loose))
    # a tight box shrinks the quantization cell, so error drops at equal q
    assert stats.mean_ptp < loose_stats.mean_ptp


# ------------------------------------------------------------ unit framing


def test_pack_unpack_unit_roundtrip():
    unit = encode(make_scan(400, 8, scan_id=9), CompressionConfig(15, 6))
    clone = unpack_unit(pack_unit(unit))
    assert clone.scan_id == unit.scan_id
    assert clone.q == unit.q and clone.c == unit.c
    assert np.allclose(clone.bbox, unit.bbox)
    assert clone.payload == unit.payload
    assert decode(clone).points.shape == (400, 3)


def test_unpack_unit_rejects_garbage():
    blob = bytearray(pack_unit(encode(make_scan(64, 2), CompressionConfig(9, 1))))
    blob[0] = 0xFF  # break the magic
    with pytest.raises(DecodeError):
        unpack_unit(bytes(blob))
    with pytest.raises(DecodeError):
        unpack_unit(blob[:10])


def test_decode_rejects_truncated_payload():
    unit = encode(make_scan(128, 4), CompressionConfig(12, 0))
    unit.payload = unit.payload[: len(unit.payload) // 2]
    with pytest.raises(DecodeError):
        decode(unit)


# ----------------------------------------------------------- input guards


def test_out_of_range_points_rejected():
    points = np.array([[0.0, 0.0, 0.0], [60.0, 0.0, 0.0]])  # outside the 50 m box
    scan = pad_scan(points, 2)
    with pytest.raises(OutOfRangeError):
        encode(scan, CompressionConfig(10, 0))


def test_pad_scan_pads_and_rejects_excess():
    scan = pad_scan(cloud(10, 6), 16)
    assert scan.n_points == 16
    with pytest.raises(ValueError):
        pad_scan(cloud(10, 6), 4)


def test_residual_zero_on_identity():
    scan = make_scan(200, 14)
    stats = residual(scan, scan)
    assert stats.mean_ptp == 0.0
    assert stats.max_ptp == 0.0
    assert stats.l2_norm == 0.0


def test_residual_rejects_mismatched_counts():
    a = make_scan(64, 1)
    b = make_scan(32, 1)
    with pytest.raises(CardinalityError):
        residual(a, b)
