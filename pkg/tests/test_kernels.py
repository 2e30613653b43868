import json
import os
import subprocess
import sys

import numpy as np
import pytest

from togkit import _pykernels, kernels

PROBE = "import json; from togkit import kernels; print(json.dumps([kernels.BACKEND, sorted(kernels.available())]))"


def _probe(env_value):
    env = dict(os.environ)
    env.pop("TOGKIT_PURE_PYTHON", None)
    if env_value is not None:
        env["TOGKIT_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", PROBE], capture_output=True, text=True, env=env, check=True)
    return json.loads(out.stdout)


def test_env_forces_fallback():
    backend, _ = _probe("1")
    assert backend == "python"


def test_default_prefers_compiled():
    backend, names = _probe(None)
    assert backend == ("cython" if "cython" in names else "python")


def test_same_iou_either_way(rng):
    impls = kernels.available()
    if "cython" not in impls:
        pytest.skip("compiled kernels not built")
    boxes = rng.uniform([0, 0, 2, 2, -90], [60, 60, 40, 40, 90], (300, 5))
    a = tuple(boxes[0])
    np.testing.assert_allclose(impls["cython"].rect_iou_many(a, boxes), _pykernels.rect_iou_many(a, boxes), rtol=0, atol=1e-12)


def test_fill_ring_agrees(rng):
    impls = kernels.available()
    if "cython" not in impls:
        pytest.skip("compiled kernels not built")
    for _ in range(50):
        ring = rng.uniform(-5, 45, (int(rng.integers(3, 9)), 2))
        a = _pykernels.fill_ring(np.zeros((40, 40), np.uint8), ring)
        b = impls["cython"].fill_ring(np.zeros((40, 40), np.uint8), ring)
        assert np.array_equal(a, b)
