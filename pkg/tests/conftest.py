import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))  # make oracles importable

from fgmp import fileio


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def build_workspace(root, rng, n_layers=2, rows=8, cols=64, tokens=12, ratio=0.9, **cfg_extra):
    """Synthetic layer manifest: weights, fishers, activations + config.json."""
    root = str(root)
    os.makedirs(root, exist_ok=True)
    layers = []
    for i in range(n_layers):
        name = f"l{i}"
        w = rng.normal(0, 1 + i, size=(rows, cols)).astype(np.float32)
        w[rng.integers(0, rows), rng.integers(0, cols)] = 30.0 * (i + 1)  # outlier
        wf = rng.uniform(0, 2, size=(rows, cols)).astype(np.float32)
        x = rng.normal(0, 0.5 + i, size=(tokens, cols)).astype(np.float32)
        xf = rng.uniform(0, 1, size=cols).astype(np.float32)
        files = {
            "weights": f"{name}.w.fgt",
            "weight_fisher": f"{name}.wf.fgt",
            "activations": f"{name}.x.fgt",
            "activation_fisher": f"{name}.xf.fgt",
        }
        fileio.write_tensor_file(os.path.join(root, files["weights"]), w, fileio.KIND_TENSOR)
        fileio.write_tensor_file(
            os.path.join(root, files["weight_fisher"]), wf, fileio.KIND_FISHER_ELEM
        )
        fileio.write_tensor_file(os.path.join(root, files["activations"]), x, fileio.KIND_TENSOR)
        fileio.write_tensor_file(
            os.path.join(root, files["activation_fisher"]), xf, fileio.KIND_FISHER_CHANNEL
        )
        layers.append({"name": name, **files})
    doc = {
        "policy": "fisher",
        "ratio": ratio,
        "scope": "global",
        "clip": "sw",
        "layers": layers,
        **cfg_extra,
    }
    cfg_path = os.path.join(root, "config.json")
    with open(cfg_path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return cfg_path
