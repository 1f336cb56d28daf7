"""Estimator-style wrapper: sklearn conventions, fitted state, persistence."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from annpress.compressor import NeighborhoodPreservingCompressor
from annpress.synth import clustered_dataset


def fitted(**overrides):
    kwargs = dict(d_out=4, n_projections=2, stages=1, encoders_per_stage=(1,),
                  heads=2, epochs=3, batch_size=64, lr0=1e-3, random_state=0)
    kwargs.update(overrides)
    comp = NeighborhoodPreservingCompressor(**kwargs)
    return comp.fit(clustered_dataset(200, 16, clusters=4, subspace_dim=3, seed=2))


def test_get_set_params_round_trip():
    comp = NeighborhoodPreservingCompressor(d_out=8, epochs=7)
    params = comp.get_params()
    assert params["d_out"] == 8 and params["epochs"] == 7
    comp.set_params(epochs=9)
    assert comp.get_params()["epochs"] == 9
    cloned = clone(comp)
    assert cloned.get_params() == comp.get_params()


def test_transform_requires_fit():
    comp = NeighborhoodPreservingCompressor(d_out=4)
    with pytest.raises(NotFittedError):
        comp.transform(np.ones((3, 16), dtype=np.float32))


def test_fit_transform_shapes_and_state():
    comp = fitted()
    assert comp.n_features_in_ == 16
    assert comp.boundary_ > 0
    assert comp.report_.mean_losses
    out = comp.transform(np.ones((5, 16), dtype=np.float32))
    assert out.shape == (5, 4) and out.dtype == np.float32


def test_fit_returns_self():
    comp = NeighborhoodPreservingCompressor(d_out=4, n_projections=2, stages=1,
                                            encoders_per_stage=(1,), heads=2,
                                            epochs=2, batch_size=64)
    data = clustered_dataset(128, 16, clusters=4, subspace_dim=3, seed=2)
    assert comp.fit(data) is comp


def test_transform_rejects_wrong_width():
    comp = fitted()
    with pytest.raises(ValueError):
        comp.transform(np.ones((3, 17), dtype=np.float32))


def test_same_random_state_reproduces_transform():
    a = fitted()
    b = fitted()
    x = clustered_dataset(64, 16, clusters=4, subspace_dim=3, seed=9)
    np.testing.assert_array_equal(a.transform(x), b.transform(x))


def test_checkpoint_round_trip_preserves_transform(tmp_path):
    comp = fitted()
    path = tmp_path / "comp.ckpt"
    comp.save(str(path))
    back = NeighborhoodPreservingCompressor.from_checkpoint(str(path))
    x = clustered_dataset(64, 16, clusters=4, subspace_dim=3, seed=9)
    np.testing.assert_array_equal(back.transform(x), comp.transform(x))
