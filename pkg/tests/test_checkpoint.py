import hashlib

import numpy as np
import pytest

from ltc_msda.checkpoint import Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from ltc_msda.errors import CheckpointFormatError, DimensionError
from ltc_msda.state import TrainConfig, TrainState
from ltc_msda.synth import DomainSpec, generate_domain, sample_batch
from ltc_msda.trainer import train_step


@pytest.fixture(scope="module")
def trained():
    cfg = TrainConfig(M=2, K=3, d=4, hidden_dim=8, per_domain_size=6, learning_rate=1e-2)
    sets = [generate_domain(DomainSpec(3, 2, 10, rotation=0.2 * i, noise_std=0.3, seed=i)) for i in range(3)]
    state = TrainState.initial(cfg)
    for _ in range(4):
        state, _ = train_step(state, sample_batch(sets, 6, state.rng), cfg)
    return Checkpoint.from_state(state, cfg.sigma)


def _same_state(a: Checkpoint, b: Checkpoint):
    sa, sb = a.state, b.state
    pairs = list(zip(sa.encoder.arrays(), sb.encoder.arrays())) + list(zip(sa.gcn.arrays(), sb.gcn.arrays()))
    for ma, mb in ((sa.encoder_moments, sb.encoder_moments), (sa.gcn_moments, sb.gcn_moments)):
        pairs += list(zip(ma.first.arrays() + ma.second.arrays(), mb.first.arrays() + mb.second.arrays()))
    pairs += [(sa.bank.prototypes, sb.bank.prototypes), (sa.bank.initialized, sb.bank.initialized)]
    pairs += [(a.graph.F, b.graph.F), (a.graph.A, b.graph.A)]
    for x, y in pairs:
        assert x.dtype == y.dtype and x.shape == y.shape and x.tobytes() == y.tobytes()
    assert (sa.step, sa.bank.beta, a.sigma) == (sb.step, sb.bank.beta, b.sigma)
    assert sa.rng.bit_generator.state == sb.rng.bit_generator.state


def test_round_trip_is_bitwise(trained, tmp_path):
    path = tmp_path / "c.ltcg"
    save_checkpoint(trained, path)
    back = load_checkpoint(path)
    _same_state(trained, back)
    save_checkpoint(back, tmp_path / "d.ltcg")
    assert path.read_bytes() == (tmp_path / "d.ltcg").read_bytes()


def test_header_layout(trained):
    data = to_bytes(trained)
    assert data[:4] == b"LTCG"
    assert np.frombuffer(data[4:24], "<u4").tolist() == [1, 2, 3, 4, 2]


def test_restored_sampler_continues_the_stream(trained):
    a = from_bytes(to_bytes(trained)).state.rng
    b = from_bytes(to_bytes(trained)).state.rng
    assert a.bit_generator.state == trained.state.rng.bit_generator.state
    np.testing.assert_array_equal(a.random(5), b.random(5))


@pytest.mark.parametrize("cut", [0, 3, 10, 100, -1])
def test_truncated_file_is_rejected(trained, tmp_path, cut):
    data = to_bytes(trained)
    path = tmp_path / "t.ltcg"
    path.write_bytes(data[:cut] if cut >= 0 else data[:-1])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_corrupted_byte_is_rejected(trained):
    data = bytearray(to_bytes(trained))
    data[200] ^= 1
    with pytest.raises(CheckpointFormatError):
        from_bytes(bytes(data))


def test_version_mismatch(trained):
    data = bytearray(to_bytes(trained))
    data[4:8] = (2).to_bytes(4, "little")
    data[-8:] = hashlib.blake2b(bytes(data[4:-8]), digest_size=8).digest()
    with pytest.raises(CheckpointFormatError, match="version"):
        from_bytes(bytes(data))


def test_dimension_mismatch_names_both(trained):
    with pytest.raises(DimensionError) as err:
        from_bytes(to_bytes(trained), expect_M=3, expect_K=3)
    assert "M=2, K=3" in str(err.value) and "M=3, K=3" in str(err.value)


def test_failed_save_leaves_old_file(trained, tmp_path, monkeypatch):
    path = tmp_path / "c.ltcg"
    save_checkpoint(trained, path)
    before = path.read_bytes()
    import ltc_msda.checkpoint as ck

    monkeypatch.setattr(ck.os, "replace", lambda *a: (_ for _ in ()).throw(OSError("disk full")))
    with pytest.raises(OSError):
        save_checkpoint(trained, path)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.ltcg"]
