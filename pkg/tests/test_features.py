import json

import numpy as np
import pytest

from fraudsig.banksim import CustomerSeries, continuous_path, make_samples
from fraudsig.features import (
    SCHEME_VERSION,
    build_feature_store,
    dataset_fingerprint,
    encode_prefixes,
    scale_matrix,
    scale_vector,
)
from fraudsig.lyndon import LyndonBasis
from fraudsig.signatures import encode


def _customer(rng, n, name="C"):
    steps = np.cumsum(rng.integers(0, 4, size=n)).astype(np.int64)
    return CustomerSeries(
        customer=name,
        steps=steps,
        amounts=rng.uniform(0.5, 80.0, size=n),
        frauds=np.zeros(n, dtype=np.int8),
        ages=["2"] * n,
        genders=["M"] * n,
        categories=["es_food"] * n,
    )


@pytest.mark.parametrize("degree", [2, 3, 4])
def test_incremental_matches_direct_per_prefix(degree, rng):
    basis = LyndonBasis.build(7, degree)
    cs = _customer(rng, 9)
    max_sd, max_amt = 3.0, 85.0
    rows = encode_prefixes(cs.step_diffs, cs.amounts, degree, basis, min_prefix=5)
    rows = rows * scale_vector(basis, max_sd, max_amt)[None, :]
    for k, j in enumerate(range(5, 10)):
        direct = encode(continuous_path(cs, j, max_sd, max_amt), degree, basis)
        scale = max(1.0, np.abs(direct).max())
        np.testing.assert_allclose(rows[k], direct, atol=1e-9 * scale)


def test_min_prefix_one_covers_single_transaction(rng):
    basis = LyndonBasis.build(7, 2)
    cs = _customer(rng, 3)
    rows = encode_prefixes(cs.step_diffs, cs.amounts, 2, basis, min_prefix=2)
    assert rows.shape == (2, basis.dim)
    direct = encode(continuous_path(cs, 2, 0.0, 0.0), 2, basis)
    np.testing.assert_allclose(rows[0], direct, atol=1e-10)


def test_scale_vector_is_exact_channel_rescaling(rng):
    """Dividing the value channels of the path by (s_sd, s_amt) multiplies
    each Lyndon coordinate by a per-word monomial; scale_vector is that
    monomial, checked against re-encoding the scaled path."""
    basis = LyndonBasis.build(7, 3)
    cs = _customer(rng, 7)
    unscaled = encode(continuous_path(cs, 7, 0.0, 0.0), 3, basis)
    max_sd, max_amt = 2.5, 60.0
    scaled = encode(continuous_path(cs, 7, max_sd, max_amt), 3, basis)
    np.testing.assert_allclose(
        unscaled * scale_vector(basis, max_sd, max_amt), scaled, atol=1e-10
    )


def test_scale_matrix_handles_degenerate_maxima():
    basis = LyndonBasis.build(7, 2)
    m = np.ones((2, basis.dim))
    np.testing.assert_array_equal(scale_matrix(m, basis, 0.0, 0.0), m)


def _sample_set(rng, n_customers=3):
    customers = [_customer(rng, int(rng.integers(5, 9)), f"C{i}") for i in range(n_customers)]
    return make_samples(customers, min_prefix=5)


def test_store_build_and_cache_hit(tmp_path, rng):
    samples = _sample_set(rng)
    csv = tmp_path / "d.csv"
    csv.write_text("fake,contents\n")
    h = dataset_fingerprint(csv)
    store1, hit1 = build_feature_store(samples, 3, tmp_path / "cache", h, 5)
    assert not hit1
    store2, hit2 = build_feature_store(samples, 3, tmp_path / "cache", h, 5)
    assert hit2
    np.testing.assert_array_equal(store1.matrix, store2.matrix)
    manifest = json.loads((tmp_path / "cache" / "manifest.json").read_text())
    assert manifest["dataset_sha256"] == h
    assert manifest["scheme_version"] == SCHEME_VERSION


def test_cache_invalidated_by_key_change(tmp_path, rng):
    samples = _sample_set(rng)
    csv = tmp_path / "d.csv"
    csv.write_text("v1\n")
    h1 = dataset_fingerprint(csv)
    build_feature_store(samples, 2, tmp_path / "cache", h1, 5)
    # different degree -> rebuild
    _, hit = build_feature_store(samples, 3, tmp_path / "cache", h1, 5)
    assert not hit
    # different dataset hash -> rebuild
    csv.write_text("v2\n")
    _, hit = build_feature_store(samples, 3, tmp_path / "cache", dataset_fingerprint(csv), 5)
    assert not hit


def test_worker_pool_matches_serial(tmp_path, rng):
    samples = _sample_set(rng, n_customers=5)
    a, _ = build_feature_store(samples, 2, tmp_path / "c1", "h", 5, workers=1)
    b, _ = build_feature_store(samples, 2, tmp_path / "c2", "h", 5, workers=2)
    np.testing.assert_array_equal(a.matrix, b.matrix)


def test_rows_align_with_samples(tmp_path, rng):
    samples = _sample_set(rng, n_customers=4)
    store, _ = build_feature_store(samples, 2, tmp_path / "c", "h", 5)
    basis = store.basis
    for i in (0, len(samples) - 1):
        ci = int(samples.customer_idx[i])
        j = int(samples.prefix_len[i])
        cs = samples.customers[ci]
        direct = encode(continuous_path(cs, j, 0.0, 0.0), 2, basis)
        np.testing.assert_allclose(store.matrix[i], direct, atol=1e-9)


def test_fingerprint_tracks_content(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("alpha")
    h1 = dataset_fingerprint(f)
    f.write_text("beta")
    assert dataset_fingerprint(f) != h1
    assert len(h1) == 64
