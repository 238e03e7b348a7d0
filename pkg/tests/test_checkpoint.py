import numpy as np
import pytest

from sstm.checkpoint import (
    BadMagicError,
    ChecksumError,
    TruncatedCheckpointError,
    VersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from sstm.model import ModelConfig, init_weights


@pytest.fixture(scope="module")
def blob():
    cfg = ModelConfig.for_variant("sstm++", iters=4).scaled(8)
    return encode_checkpoint(init_weights(cfg), cfg), cfg


def test_save_load_save_is_byte_identical(tmp_path, blob):
    raw, cfg = blob
    w, c = decode_checkpoint(raw)
    assert c == cfg
    save_checkpoint(w, c, tmp_path / "a.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == raw
    w2, _ = load_checkpoint(tmp_path / "a.ckpt")
    assert all(np.array_equal(w[k].data, w2[k].data) for k in w)


@pytest.mark.parametrize("cut", [4, 20, 200, -13, -1])
def test_truncation_is_reported(blob, cut):
    raw, _ = blob
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(raw[:cut])


def test_single_bit_flip_fails_checksum(blob):
    raw, _ = blob
    rng = np.random.default_rng(0)
    for pos in rng.integers(len(raw) // 4, len(raw) - 16, size=5):
        bad = bytearray(raw)
        bad[pos] ^= 1 << int(rng.integers(8))
        with pytest.raises(ChecksumError):
            decode_checkpoint(bytes(bad))


def test_header_errors(blob):
    raw, _ = blob
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"NOTACKPT" + raw[8:])
    bumped = raw[:8] + (99).to_bytes(4, "little") + raw[12:]
    with pytest.raises(VersionError):
        decode_checkpoint(bumped)
