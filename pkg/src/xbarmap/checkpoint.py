"""JSON model checkpoints (see docs/checkpoint_schema.md)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .device import AnalogCells, CrossbarState, DeviceModel, RangeTracker
from .errors import CheckpointError, XbarError
from .layers import Conv2d, MappedLayer, SignedLayer
from .network import LayerSpec, Network, build_layer
from .periphery import MappingScheme, build_periphery

FORMAT = "xbarmap-checkpoint"
SCHEMA_VERSION = 1


def _matrix(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unmatrix(d: dict, dtype) -> np.ndarray:
    return np.asarray(d["data"], dtype=dtype).reshape(d["shape"])


def _linear_state(layer) -> dict:
    inner = layer.inner if isinstance(layer, Conv2d) else layer
    state = {"activation_range": inner.tracker.value}
    if isinstance(inner, SignedLayer):
        state["weight"] = _matrix(inner.weight)
    elif isinstance(inner.cells, CrossbarState):
        state["states"] = _matrix(inner.cells.states)
    else:
        state["conductance"] = _matrix(inner.cells.g)
    if isinstance(inner, MappedLayer) and inner.reference is not None:
        state["reference"] = inner.reference.tolist()
    return state


def checkpoint_dict(model: Network, context: dict | None = None) -> dict:
    layers = []
    for spec, layer in zip(model.specs, model.layers):
        entry = {"spec": spec.to_dict()}
        if spec.is_linear:
            entry["state"] = _linear_state(layer)
        layers.append(entry)
    return {
        "format": FORMAT,
        "schema_version": SCHEMA_VERSION,
        "device": model.device.to_dict(),
        "context": context or {},
        "layers": layers,
    }


def save_checkpoint(model: Network, path, context: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, context), sort_keys=True) + "\n")


def _restore_linear(spec: LayerSpec, state: dict, device: DeviceModel):
    tracker = RangeTracker(value=state.get("activation_range"))
    if spec.mapping == "baseline":
        inner = SignedLayer(_unmatrix(state["weight"], np.float64), device.activation_bits, tracker)
    else:
        scheme = MappingScheme.parse(spec.mapping)
        n_out = spec.matrix_shape()[0]
        if "states" in state:
            cells = CrossbarState(_unmatrix(state["states"], np.int64), device)
        else:
            cells = AnalogCells(_unmatrix(state["conductance"], np.float64), device)
        reference = state.get("reference")
        if scheme is MappingScheme.BC and reference is None:
            raise CheckpointError("BC layer is missing its reference column")
        inner = MappedLayer(build_periphery(scheme, n_out), cells, reference,
                            device.activation_bits, tracker)
    if inner.n_in != spec.matrix_shape()[1] or inner.n_out != spec.matrix_shape()[0]:
        raise CheckpointError(f"stored matrix does not match layer spec {spec}")
    if spec.kind == "conv2d":
        return Conv2d(inner, spec.in_channels, spec.input_hw, spec.kernel_size,
                      spec.stride, spec.padding)
    return inner


def model_from_dict(d: dict) -> Network:
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise CheckpointError("not an xbarmap checkpoint")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint schema_version {d.get('schema_version')!r}; "
            f"expected {SCHEMA_VERSION}"
        )
    try:
        device = DeviceModel(**d["device"])
        specs, layers = [], []
        for entry in d["layers"]:
            spec = LayerSpec.from_dict(entry["spec"])
            if spec.is_linear:
                layer = _restore_linear(spec, entry["state"], device)
            else:
                layer = build_layer(spec, None, device)
            specs.append(spec)
            layers.append(layer)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, XbarError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return Network(specs, layers, device)


def load_checkpoint(path) -> tuple[Network, dict]:
    """Return the model and the free-form context stored with it."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    model = model_from_dict(d)
    return model, d.get("context", {})
