import struct

import numpy as np
import pytest

from msadnet.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from msadnet.errors import CheckpointError
from msadnet.model import build_msadnet

from conftest import desk_config


@pytest.mark.parametrize("precision", ["float32", "float64"])
def test_round_trip_is_bit_exact(tmp_path, precision):
    m = build_msadnet(desk_config(precision=precision, seed=4))
    # make running stats non-trivial
    m.forward(np.random.default_rng(0).uniform(0, 1, (2, 1, 112, 112)), mode="train")
    save_checkpoint(tmp_path / "m.msad", m, extra={"note": "x"})
    back, cfg = load_checkpoint(tmp_path / "m.msad")
    assert cfg["note"] == "x" and back.config == m.config
    a, b = m.state_dict(), back.state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes()
    x = np.random.default_rng(1).uniform(0, 1, (2, 1, 112, 112))
    assert m.forward(x).data.tobytes() == back.forward(x).data.tobytes()
    # saving the reloaded model reproduces the file byte for byte
    save_checkpoint(tmp_path / "n.msad", back, extra={"note": "x"})
    assert (tmp_path / "m.msad").read_bytes() == (tmp_path / "n.msad").read_bytes()


def test_layout_header_and_flags(tmp_path):
    m = build_msadnet(desk_config(enable_sam=False))
    save_checkpoint(tmp_path / "m.msad", m)
    raw = (tmp_path / "m.msad").read_bytes()
    assert raw[:4] == b"MSAD"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    clen = struct.unpack("<I", raw[8:12])[0]
    count = struct.unpack("<I", raw[12 + clen : 16 + clen])[0]
    n_params = len(m.parameters())
    n_buffers = len(list(m.named_buffers()))
    assert count == n_params + n_buffers
    # first record: name, trainable flag, precision code
    pos = 16 + clen
    (nlen,) = struct.unpack("<H", raw[pos : pos + 2])
    name = raw[pos + 2 : pos + 2 + nlen].decode()
    flags, code, ndim = struct.unpack("<BBB", raw[pos + 2 + nlen : pos + 5 + nlen])
    assert name == "b1.conv.kernel" and flags == 1 and code == 4 and ndim == 4


def test_corrupt_files_are_rejected(tmp_path):
    m = build_msadnet(desk_config(enable_sam=False))
    save_checkpoint(tmp_path / "m.msad", m)
    raw = (tmp_path / "m.msad").read_bytes()
    (tmp_path / "bad_magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "short").write_bytes(raw[:-3])
    (tmp_path / "long").write_bytes(raw + b"\0")
    for name, frag in (("bad_magic", "magic"), ("short", "truncated"), ("long", "trailing")):
        with pytest.raises(CheckpointError, match=frag):
            read_checkpoint(tmp_path / name)
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "absent")
