import json

import numpy as np
import pytest

from xbarmap.checkpoint import (
    SCHEMA_VERSION,
    checkpoint_dict,
    load_checkpoint,
    model_from_dict,
    save_checkpoint,
)
from xbarmap.data import synthetic_blobs
from xbarmap.device import DeviceModel
from xbarmap.errors import CheckpointError
from xbarmap.network import TrainConfig, initialize_model, mlp, small_cnn, train

DEVICES = [DeviceModel(bits=3, nonlinearity=2.0), DeviceModel()]


@pytest.fixture(scope="module")
def data():
    return synthetic_blobs(3, 12, 40, 6.0, seed=0)


@pytest.mark.parametrize("device", DEVICES, ids=["quantized", "analog"])
@pytest.mark.parametrize("scheme", ["baseline", "de", "bc", "acm"])
def test_round_trip_predictions(tmp_path, data, scheme, device):
    model = initialize_model(mlp([12, 6, 3]), scheme, device, seed=1)
    model = train(model, data, TrainConfig(epochs=2)).model
    path = tmp_path / "m.json"
    save_checkpoint(model, path, {"seed": 1, "scheme": scheme})
    restored, context = load_checkpoint(path)
    assert context == {"seed": 1, "scheme": scheme}
    assert restored.device == model.device
    for a, b in zip(model.effective_weights(), restored.effective_weights()):
        assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(restored.forward(data.images), model.forward(data.images))


def test_cnn_round_trip():
    model = initialize_model(small_cnn(n_classes=3, image_hw=(8, 8), channels=(2, 3)), "acm",
                             DeviceModel(bits=4), seed=0)
    restored = model_from_dict(json.loads(json.dumps(checkpoint_dict(model))))
    x = np.random.default_rng(0).uniform(size=(2, 64))
    np.testing.assert_array_equal(restored.forward(x), model.forward(x))


def test_integer_states_stored():
    d = checkpoint_dict(initialize_model(mlp([4, 2]), "acm", DeviceModel(bits=2), seed=0))
    state = d["layers"][0]["state"]
    assert all(isinstance(v, int) for v in state["states"]["data"])
    assert state["states"]["shape"] == [3, 4]


def test_bc_reference_stored():
    d = checkpoint_dict(initialize_model(mlp([4, 2]), "bc", DeviceModel(bits=2), seed=0))
    assert d["layers"][0]["state"]["reference"] == [0.5] * 4


def test_save_is_deterministic(tmp_path):
    model = initialize_model(mlp([4, 3]), "de", DeviceModel(bits=3), seed=0)
    save_checkpoint(model, tmp_path / "a.json")
    save_checkpoint(model, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestRejects:
    @pytest.fixture
    def good(self):
        return checkpoint_dict(initialize_model(mlp([4, 2]), "bc", DeviceModel(bits=2), seed=0))

    def test_wrong_format(self, good):
        good["format"] = "other"
        with pytest.raises(CheckpointError):
            model_from_dict(good)

    def test_future_schema(self, good):
        good["schema_version"] = SCHEMA_VERSION + 1
        with pytest.raises(CheckpointError, match="schema_version"):
            model_from_dict(good)

    def test_missing_reference(self, good):
        del good["layers"][0]["state"]["reference"]
        with pytest.raises(CheckpointError, match="reference"):
            model_from_dict(good)

    def test_state_out_of_range(self, good):
        good["layers"][0]["state"]["states"]["data"][0] = 99
        with pytest.raises(CheckpointError):
            model_from_dict(good)

    def test_shape_mismatch(self, good):
        good["layers"][0]["spec"]["n_in"] = 5
        with pytest.raises(CheckpointError):
            model_from_dict(good)

    def test_bad_device(self, good):
        good["device"]["bits"] = 0
        with pytest.raises(CheckpointError):
            model_from_dict(good)

    def test_corrupted_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "xbarmap-checkpoint", "layers": [')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.json")
