import os
import subprocess
import sys

import numpy as np
import pytest

import tacnet
from tacnet._backend import available_backends
from tacnet.persistence import superlevel_diagram


def _backend_in_subprocess(env_extra):
    env = {**os.environ, **env_extra}
    out = subprocess.run([sys.executable, "-c", "import tacnet; print(tacnet.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    return out.stdout.strip()


def test_forced_fallback():
    assert _backend_in_subprocess({"TACNET_PURE_PYTHON": "1"}) == "python"


def test_default_prefers_compiled():
    expected = "cython" if "cython" in available_backends() else "python"
    env = {k: v for k, v in os.environ.items() if k != "TACNET_PURE_PYTHON"}
    out = subprocess.run([sys.executable, "-c", "import tacnet; print(tacnet.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == expected


@pytest.mark.skipif("cython" not in available_backends(), reason="extension not built")
@pytest.mark.parametrize("conn8,frame", [(False, False), (True, True)])
def test_merge_pairs_agree(conn8, frame):
    b = available_backends()
    rng = np.random.default_rng(0)
    for _ in range(50):
        h, w = rng.integers(1, 12, size=2)
        order = rng.permutation(h * w).astype(np.int64)
        a = b["cython"].merge_pairs(order, int(h), int(w), conn8, frame)
        c = b["python"].merge_pairs(order, int(h), int(w), conn8, frame)
        assert np.array_equal(a[0], c[0]) and np.array_equal(a[1], c[1]) and a[2] == c[2]


def test_diagrams_agree_large():
    field = np.random.default_rng(1).integers(0, 20, size=(40, 40)) / 19.0
    rows = [superlevel_diagram(field, k).rows() for k in available_backends().values()]
    assert all(r == rows[0] for r in rows)
    assert tacnet.BACKEND in available_backends()
