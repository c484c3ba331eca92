import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qifsnn import checkpoint
from qifsnn.config import RunConfig, dump_config, load_config, parse_config, replace_section
from qifsnn.errors import ConfigError, MalformedHeader, ShapeMismatch, TruncatedData
from qifsnn.io import atomic_write_text
from qifsnn.network import SpikingNetwork, network_forward, tiny_dense_spec, tiny_res_spec
from qifsnn.neuron import QifParams


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert parse_config(dump_config(cfg)) == cfg

    def test_partial_file(self):
        cfg = parse_config("[training]\noptimizer = adam\nlearning_rate = 0.001  # comment\n[run]\nseed = 9\n")
        assert cfg.training.optimizer == "adam" and cfg.training.learning_rate == 0.001
        assert cfg.run.seed == 9 and cfg.training.epochs == 50

    @given(
        seed=st.integers(0, 2**31),
        lr=st.floats(1e-6, 1.0),
        epochs=st.integers(1, 500),
        clip=st.one_of(st.none(), st.floats(0.01, 10.0)),
        ics=st.lists(st.floats(-10, 10), min_size=1, max_size=6),
        dropout=st.floats(0.0, 0.9),
    )
    def test_round_trip_property(self, seed, lr, epochs, clip, ics, dropout):
        cfg = RunConfig()
        cfg = replace_section(cfg, "run", seed=seed)
        cfg = replace_section(cfg, "training", learning_rate=lr, epochs=epochs, grad_clip=clip, dropout=dropout)
        cfg = replace_section(cfg, "analyze", initial_conditions=tuple(ics))
        again = parse_config(dump_config(cfg))
        assert again == cfg
        assert parse_config(dump_config(again)) == again

    @pytest.mark.parametrize(
        "text",
        [
            "[bogus]\nx = 1\n",
            "[training]\nlr = 0.1\n",
            "[training]\nepochs = many\n",
            "[neuron]\nkind = izhikevich\n",
            "[run]\nthreads = 0\n",
            "not an ini file",
        ],
    )
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_neuron_section_forms(self):
        cfg = parse_config("[neuron]\nu_r = 0.0\nu_c = 4.5\n")
        assert cfg.neuron.qif_params() == QifParams()
        cfg = parse_config("[neuron]\na = 1.0\nu_1 = 0.0\nu_2 = 2.0\nu_th = 2.0\n")
        assert cfg.neuron.qif_params().u_c == 3.0
        with pytest.raises(ConfigError):
            parse_config("[neuron]\nu_r = 0.0\n").neuron.qif_params()

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[data]\nseparation = 6.5\n")
        assert load_config(path).data.separation == 6.5


class TestAtomicWrite:
    def test_no_temp_left(self, tmp_path):
        atomic_write_text(tmp_path / "sub" / "a.txt", "hello")
        assert (tmp_path / "sub" / "a.txt").read_text() == "hello"
        assert os.listdir(tmp_path / "sub") == ["a.txt"]

    def test_replaces(self, tmp_path):
        atomic_write_text(tmp_path / "a.txt", "one")
        atomic_write_text(tmp_path / "a.txt", "two")
        assert (tmp_path / "a.txt").read_text() == "two"


class TestCheckpoint:
    def test_round_trip_dtypes(self):
        tensors = {
            "f": np.arange(6.0).reshape(2, 3),
            "s": np.float32([1.5]),
            "i": np.array([[-1, 2]], dtype=np.int64),
            "u": np.frombuffer(b"abc", dtype=np.uint8),
            "scalar": np.array(2.5),
        }
        out = checkpoint.loads(checkpoint.dumps(tensors))
        assert list(out) == list(tensors)
        for k in tensors:
            np.testing.assert_array_equal(out[k], tensors[k])
            assert out[k].dtype == tensors[k].dtype.newbyteorder("<") or out[k].dtype == tensors[k].dtype

    def test_layout(self):
        buf = checkpoint.dumps({"w": np.array([1.0])})
        assert buf[:8] == b"QSNNCKPT"
        assert buf[8:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
        assert len(buf) == 16 + 2 + 1 + 2 + 4 + 8

    def test_errors(self):
        buf = checkpoint.dumps({"w": np.arange(4.0)})
        with pytest.raises(MalformedHeader):
            checkpoint.loads(b"XXXXXXXX" + buf[8:])
        with pytest.raises(TruncatedData):
            checkpoint.loads(buf[:-1])
        with pytest.raises(MalformedHeader):
            checkpoint.loads(buf + b"\0")

    def test_unsupported_dtype(self):
        with pytest.raises(TypeError):
            checkpoint.dumps({"c": np.array([1j])})

    @pytest.mark.parametrize("spec", [tiny_dense_spec(4, 3, hidden=5), tiny_res_spec((1, 4, 4), 2, channels=2, hidden=3)])
    def test_network_round_trip(self, spec, tmp_path):
        net = SpikingNetwork(spec, np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(3,) + spec.input_shape)
        network_forward(net, x, mode="train")  # moves running stats off their defaults
        checkpoint.save(tmp_path / "c.bin", checkpoint.pack_network(net))
        again = checkpoint.unpack_network(checkpoint.load(tmp_path / "c.bin"))
        assert again.spec == spec
        np.testing.assert_array_equal(network_forward(again, x).output, network_forward(net, x).output)

    def test_network_missing_spec(self):
        with pytest.raises(MalformedHeader):
            checkpoint.unpack_network({"0.weight": np.zeros((1, 1))})

    def test_network_mismatched_tensors(self):
        net = SpikingNetwork(tiny_dense_spec(4, 3, hidden=5))
        packed = checkpoint.pack_network(net)
        packed["0.weight"] = np.zeros((2, 2))
        with pytest.raises(ShapeMismatch):
            checkpoint.unpack_network(packed)


@pytest.mark.parametrize("name", ["blobs_qif.ini", "blobs_lif.ini", "digits_conv.ini"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    assert parse_config(dump_config(cfg)) == cfg
