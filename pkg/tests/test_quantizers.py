"""Codebook training and compressed-domain distance computations."""

import numpy as np
import pytest

from annpress.quantizers import (
    IvfIndex,
    PqIndex,
    SqIndex,
    adc_distances,
    adc_search,
    kmeans,
    pq_decode,
    pq_encode,
    pq_train,
    sq_decode,
    sq_distance,
    sq_distances,
    sq_encode,
    sq_train,
)
from annpress.vecio import FormatError

RNG = np.random.default_rng(11)


def test_kmeans_inertia_never_increases():
    data = RNG.normal(size=(400, 6)).astype(np.float32)
    _, history = kmeans(data, 12, iters=20, seed=0, return_history=True)
    assert all(a >= b - 1e-6 for a, b in zip(history, history[1:]))


def test_kmeans_with_one_centroid_per_point_is_exact():
    data = RNG.normal(size=(50, 4)).astype(np.float32)
    centroids = kmeans(data, 50, iters=5, seed=1)
    nearest = ((data[:, None] - centroids[None]) ** 2).sum(axis=2).min(axis=1)
    np.testing.assert_allclose(nearest, 0.0, atol=1e-10)


def test_kmeans_survives_empty_clusters():
    # Three distinct values repeated many times force empty clusters at k=8.
    data = np.repeat(np.array([[0.0], [5.0], [9.0]], dtype=np.float32), 40, axis=0)
    centroids = kmeans(data, 8, iters=10, seed=2)
    assert centroids.shape == (8, 1)
    assert np.all(np.isfinite(centroids))


def test_pq_round_trip_is_exact_below_codebook_capacity():
    data = RNG.normal(size=(200, 8)).astype(np.float32)
    codebook = pq_train(data, m=4, seed=0)
    codes = pq_encode(codebook, data)
    assert codes.dtype == np.uint8
    np.testing.assert_allclose(pq_decode(codebook, codes), data, atol=1e-6)


def test_pq_rejects_indivisible_width():
    with pytest.raises(ValueError, match="m"):
        pq_train(RNG.normal(size=(50, 7)).astype(np.float32), m=4)


def test_adc_matches_distance_to_reconstruction():
    data = RNG.normal(size=(3000, 16)).astype(np.float32)
    codebook = pq_train(data, m=4, seed=3)
    codes = pq_encode(codebook, data)
    recon = pq_decode(codebook, codes).astype(np.float64)
    for qi in range(5):
        query = RNG.normal(size=16).astype(np.float32)
        adc = adc_distances(codebook, codes, query)
        exact = ((recon - query.astype(np.float64)) ** 2).sum(axis=1)
        np.testing.assert_allclose(adc, exact, rtol=1e-6)


def test_adc_search_breaks_ties_toward_lower_id():
    data = np.ones((10, 4), dtype=np.float32)
    codebook = pq_train(data, m=2, seed=0)
    codes = pq_encode(codebook, data)
    ids, _ = adc_search(codebook, codes, np.ones(4, dtype=np.float32), 5)
    np.testing.assert_array_equal(ids, np.arange(5))


def test_ivf_full_probe_equals_flat_scan_bit_for_bit():
    data = RNG.normal(size=(2000, 16)).astype(np.float32)
    ivf = IvfIndex.build(data, nlist=8, m=4, seed=5)
    codes = pq_encode(ivf.codebook, data)
    for qi in range(8):
        query = RNG.normal(size=16).astype(np.float32)
        flat_ids, flat_d = adc_search(ivf.codebook, codes, query, 10)
        ivf_ids, ivf_d = ivf.search(query, 10, nprobe=ivf.nlist)
        np.testing.assert_array_equal(ivf_ids, flat_ids)
        np.testing.assert_array_equal(ivf_d, flat_d)


def test_ivf_recall_grows_with_probes():
    data = RNG.normal(size=(2000, 16)).astype(np.float32)
    ivf = IvfIndex.build(data, nlist=16, m=4, seed=5)
    query = data[7] + 0.01
    narrow = ivf.search(query, 10, nprobe=1)[0]
    wide = ivf.search(query, 10, nprobe=16)[0]
    assert 7 in wide
    assert len(set(wide) & set(narrow)) <= 10


def test_ivf_nprobe_validation():
    data = RNG.normal(size=(300, 8)).astype(np.float32)
    ivf = IvfIndex.build(data, nlist=4, m=2, seed=0)
    with pytest.raises(ValueError, match="nprobe"):
        ivf.search(data[0], 5, nprobe=0)
    with pytest.raises(ValueError, match="nprobe"):
        ivf.search(data[0], 5, nprobe=5)


def test_sq_round_trip_error_bounded_by_half_step():
    data = RNG.normal(size=(500, 6)).astype(np.float32) * 3
    params = sq_train(data)
    decoded = sq_decode(params, sq_encode(params, data))
    assert np.all(np.abs(decoded - data) < params.steps / 2 + 1e-6)


def test_sq_constant_dimension_is_preserved():
    data = RNG.normal(size=(100, 3)).astype(np.float32)
    data[:, 1] = 4.25
    params = sq_train(data)
    codes = sq_encode(params, data)
    decoded = sq_decode(params, codes)
    np.testing.assert_array_equal(decoded[:, 1], np.full(100, 4.25, dtype=np.float32))
    d = sq_distance(params, codes[0], codes[1])
    exact = np.linalg.norm(decoded[0] - decoded[1])
    assert d == pytest.approx(exact, rel=1e-6)


def test_sq_distances_match_decoded_euclidean():
    data = RNG.normal(size=(300, 5)).astype(np.float32)
    params = sq_train(data)
    codes = sq_encode(params, data)
    recon = params.mins.astype(np.float64) + codes * params.steps
    got = sq_distances(params, codes[0], codes)
    exact = np.linalg.norm(recon - recon[0], axis=1)
    np.testing.assert_allclose(got, exact, rtol=1e-9)


@pytest.mark.parametrize("builder", [
    lambda d: PqIndex.build(d, m=4, seed=1),
    lambda d: IvfIndex.build(d, nlist=4, m=4, seed=1),
    lambda d: SqIndex.build(d),
])
def test_index_save_load_round_trip(tmp_path, builder):
    data = RNG.normal(size=(400, 8)).astype(np.float32)
    index = builder(data)
    path = tmp_path / "index.bin"
    index.save(str(path))
    back = type(index).load(str(path))
    queries = data[:5] + 0.01
    kwargs = {"nprobe": 4} if isinstance(index, IvfIndex) else {}
    for q in queries:
        a_ids, a_d = index.search(q, 7, **kwargs)
        b_ids, b_d = back.search(q, 7, **kwargs)
        np.testing.assert_array_equal(a_ids, b_ids)
        np.testing.assert_array_equal(a_d, b_d)


def test_index_files_reject_wrong_magic(tmp_path):
    data = RNG.normal(size=(100, 8)).astype(np.float32)
    sq_path = tmp_path / "x.sq"
    SqIndex.build(data).save(str(sq_path))
    with pytest.raises(FormatError):
        PqIndex.load(str(sq_path))
