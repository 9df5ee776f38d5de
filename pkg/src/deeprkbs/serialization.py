"""JSON model files.

Two kinds are written, both tagged with ``format_version`` 1:
``deep_measure`` (layers of atomic measures with their bases) and
``finite`` (plain weight matrices and biases).  Floats go through
``repr``, the shortest string that reads back to the identical double.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .basis import Activation, basis_from_dict
from .errors import FormatError
from .measure import AtomicVectorMeasure
from .network import DeepMeasureNetwork, FiniteNetwork, LayerMeasure

FORMAT_VERSION = 1


def measure_to_dict(mu: AtomicVectorMeasure) -> dict:
    locs = [loc if isinstance(loc, int) else list(loc) for loc in mu.locations]
    return {"target_dim": mu.target_dim, "locations": locs,
            "weights": [[float(v) for v in row] for row in mu.weights]}


def measure_from_dict(d: dict) -> AtomicVectorMeasure:
    m = int(d["target_dim"])
    locs = [loc if isinstance(loc, int) else tuple(loc) for loc in d["locations"]]
    if not locs:
        return AtomicVectorMeasure.empty(m)
    return AtomicVectorMeasure(locs, np.array(d["weights"], dtype=float).reshape(len(locs), m), m)


def deep_to_dict(net: DeepMeasureNetwork) -> dict:
    return {"format_version": FORMAT_VERSION, "kind": "deep_measure",
            "layers": [{"basis": layer.basis.to_dict(), "input_dim": layer.input_dim,
                        "measure": measure_to_dict(layer.measure)} for layer in net.layers]}


def finite_to_dict(fn: FiniteNetwork) -> dict:
    layers = []
    for i, (W, b) in enumerate(zip(fn.weights, fn.biases)):
        entry = {"shape": list(W.shape), "W": [[float(v) for v in row] for row in W],
                 "b": [float(v) for v in b]}
        if fn.windows is not None:
            entry["windows"] = [float(v) for v in fn.windows[i]]
        layers.append(entry)
    return {"format_version": FORMAT_VERSION, "kind": "finite",
            "activation": fn.activation.to_dict(), "layers": layers}


def model_from_dict(d: dict):
    if not isinstance(d, dict):
        raise FormatError("model file must hold a JSON object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    kind = d.get("kind")
    try:
        if kind == "deep_measure":
            layers = [LayerMeasure(basis_from_dict(e["basis"]), measure_from_dict(e["measure"]),
                                   int(e["input_dim"])) for e in d["layers"]]
            return DeepMeasureNetwork(tuple(layers))
        if kind == "finite":
            Ws = [np.array(e["W"], dtype=float).reshape(e["shape"]) for e in d["layers"]]
            bs = [np.array(e["b"], dtype=float) for e in d["layers"]]
            windows = None
            if all("windows" in e for e in d["layers"]):
                windows = tuple(np.array(e["windows"], dtype=float) for e in d["layers"])
            return FiniteNetwork(tuple(Ws), tuple(bs), Activation.from_dict(d["activation"]), windows)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed {kind} model: {exc!r}") from None
    raise FormatError(f"unknown model kind {kind!r}")


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=1) + "\n"


def save_model(model, path) -> None:
    if isinstance(model, DeepMeasureNetwork):
        d = deep_to_dict(model)
    elif isinstance(model, FiniteNetwork):
        d = finite_to_dict(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    Path(path).write_text(dumps(d))


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return model_from_dict(d)
