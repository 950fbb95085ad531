import os

import numpy as np
import pytest

from tacnet.metrics import betti_error
from tacnet.persistence import betti_numbers
from tacnet.synthetic import SyntheticSpec, gen_data, generate, load_dataset


def test_topology_by_construction():
    for seed in range(5):
        _, membrane, _, topo = generate(SyntheticSpec(depth=6, seed=seed))
        for z in range(6):
            assert betti_numbers(membrane[z]) == topo[z]


def test_clean_generation_static():
    spec = SyntheticSpec(depth=4, jitter=0, noise=0, break_prob=0)
    image, membrane, _, _ = generate(spec)
    for z in range(1, 4):
        assert np.array_equal(image[z], image[0])
        assert np.array_equal(membrane[z], membrane[0])
    assert betti_error(membrane[0], membrane[0], patch=32, samples=10) == 0.0


def test_forced_breaks_drop_loops():
    spec = SyntheticSpec(depth=5, rings=1, noise=0, break_prob=1.0, seed=3)
    image, membrane, _, topo = generate(spec)
    for z in range(5):
        seen = image[z] > 0.5
        assert betti_numbers(seen)[1] < topo[z][1]
        assert betti_numbers(membrane[z]) == topo[z]


def test_tiling():
    image, membrane, labels, topo = generate(SyntheticSpec(depth=3, structure="membrane-tiling"))
    assert topo is None and membrane.any() and labels.max() > 1


def test_gen_data_deterministic(tmp_path):
    spec = SyntheticSpec(depth=4, seed=9)
    gen_data(spec, tmp_path / "a")
    gen_data(spec, tmp_path / "b")
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    image, membrane, labels = load_dataset(tmp_path / "a")
    ref = generate(spec)
    assert np.array_equal(membrane, ref[1]) and np.array_equal(labels, ref[2])
    assert np.array_equal(image, ref[0].astype(np.float32))


def test_invalid_spec():
    with pytest.raises(ValueError):
        SyntheticSpec(jitter=-1)
    with pytest.raises(ValueError):
        SyntheticSpec(break_prob=1.5)
    with pytest.raises(ValueError):
        SyntheticSpec(structure="cubes")
