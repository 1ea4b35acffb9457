"""Log-signature feature store with an incremental prefix encoder.

Encoding every prefix of a customer independently costs quadratic work in
the series length, so the store exploits two exact algebraic facts instead:

* the augmented path of a prefix differs from the next prefix's only in its
  normalised time channel and three terminal decoration points, so a running
  signature over the shared lead-lag body (with *unnormalised* time) can be
  finalised per prefix with two extra segment products;
* scaling a path channel by a constant multiplies every log-signature
  coordinate by that constant raised to the number of letters of the word
  lying in that channel, so time normalisation (per prefix) and the
  train-split amount/step scaling (per experiment) are exact diagonal
  rescalings of the cached coordinates.

Cached vectors are therefore time-normalised but unscaled in the two value
channels, making the on-disk cache a pure function of (dataset, degree,
augmentation scheme); the split-dependent scaling happens at load time.  A
cache entry is one flat little-endian float64 matrix plus a JSON manifest.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .banksim import SampleSet
from .lyndon import LyndonBasis
from .signatures import augmented_dim, chen_product, lyndon_project, segment_signature, tensor_log

__all__ = [
    "SCHEME_VERSION",
    "FeatureStore",
    "dataset_fingerprint",
    "encode_prefixes",
    "build_feature_store",
    "scale_matrix",
    "scale_vector",
]

SCHEME_VERSION = 1

# Augmented channel layout for d=2 raw channels (step difference, amount):
# [lead t, lead sd, lead amt, lag t, lag sd, lag amt, visibility].
_D_AUG = augmented_dim(2)
_TIME_CHANNELS = (0, 3)
_SD_CHANNELS = (1, 4)
_AMT_CHANNELS = (2, 5)
_VIS_CHANNEL = 6


def dataset_fingerprint(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _class_counts(basis: LyndonBasis):
    counts = basis.letter_class_counts(
        {"time": _TIME_CHANNELS, "sd": _SD_CHANNELS, "amt": _AMT_CHANNELS}
    )
    return counts["time"], counts["sd"], counts["amt"]


def encode_prefixes(
    step_diffs: np.ndarray,
    amounts: np.ndarray,
    degree: int,
    basis: LyndonBasis,
    min_prefix: int = 5,
) -> np.ndarray:
    """Log-signature coordinates of every prefix of one customer.

    Args:
        step_diffs, amounts: unscaled per-transaction feature values; the
            first step difference must already be 0 by convention.
        degree: truncation degree.
        basis: Lyndon basis over the 7 augmented channels.
        min_prefix: shortest encoded prefix (>= 2).

    Returns:
        (n_prefixes, basis.dim) matrix, one row per prefix length
        min_prefix..T in order; rows are time-normalised but keep the raw
        value scales.
    """
    if basis.alphabet_size != _D_AUG or basis.degree != degree:
        raise ValueError(
            f"basis (D={basis.alphabet_size}, M={basis.degree}) does not match "
            f"(D={_D_AUG}, M={degree})"
        )
    if min_prefix < 2:
        raise ValueError(f"min_prefix must be >= 2, got {min_prefix}")
    sd = np.asarray(step_diffs, dtype=np.float64)
    amt = np.asarray(amounts, dtype=np.float64)
    T = sd.size
    if amt.size != T:
        raise ValueError("step_diffs and amounts must have equal length")
    n_out = max(0, T - min_prefix + 1)
    out = np.empty((n_out, basis.dim))
    if n_out == 0:
        return out

    time_counts, _, _ = _class_counts(basis)
    vis_on = np.zeros(_D_AUG)
    vis_on[_VIS_CHANNEL] = 1.0
    # Running signature over [prepended start point, lead-lag body] with
    # unnormalised time; the first increment only switches visibility on.
    running = segment_signature(vis_on, degree)
    row = 0
    for k in range(1, T):
        lead = np.zeros(_D_AUG)
        lead[0] = 1.0
        lead[1] = sd[k] - sd[k - 1]
        lead[2] = amt[k] - amt[k - 1]
        lag = np.zeros(_D_AUG)
        lag[3:6] = lead[0:3]
        running = chen_product(running, segment_signature(lead, degree))
        running = chen_product(running, segment_signature(lag, degree))
        n = k + 1
        if n < min_prefix:
            continue
        # Terminal decorations: visibility off at the last point, then the
        # jump to the all-zero point.
        tail = chen_product(running, segment_signature(-vis_on, degree))
        drop = np.zeros(_D_AUG)
        drop[0] = drop[3] = -(n - 1.0)
        drop[1] = drop[4] = -sd[k]
        drop[2] = drop[5] = -amt[k]
        tail = chen_product(tail, segment_signature(drop, degree))
        coords = lyndon_project(tensor_log(tail), basis)
        out[row] = coords * (1.0 / (n - 1.0)) ** time_counts
        row += 1
    return out


def scale_vector(basis: LyndonBasis, max_sd: float, max_amt: float) -> np.ndarray:
    """Per-coordinate factors turning unscaled cached vectors into the
    vectors of the path with both value channels divided by their maxima."""
    _, sd_counts, amt_counts = _class_counts(basis)
    s_sd = 1.0 / max_sd if max_sd > 0 else 1.0
    s_amt = 1.0 / max_amt if max_amt > 0 else 1.0
    return s_sd**sd_counts * s_amt**amt_counts


def scale_matrix(
    matrix: np.ndarray, basis: LyndonBasis, max_sd: float, max_amt: float
) -> np.ndarray:
    return matrix * scale_vector(basis, max_sd, max_amt)[None, :]


@dataclass
class FeatureStore:
    """Cached unscaled feature matrix, row-aligned with a SampleSet."""

    matrix: np.ndarray
    basis: LyndonBasis
    degree: int
    manifest: dict

    def materialize(self, max_sd: float, max_amt: float) -> np.ndarray:
        return scale_matrix(self.matrix, self.basis, max_sd, max_amt)


_worker_ctx: dict = {}


def _worker_init(degree: int, min_prefix: int):
    _worker_ctx["degree"] = degree
    _worker_ctx["min_prefix"] = min_prefix
    _worker_ctx["basis"] = LyndonBasis.build(_D_AUG, degree)


def _worker_encode(task):
    ci, sd, amt = task
    return ci, encode_prefixes(
        sd, amt, _worker_ctx["degree"], _worker_ctx["basis"], _worker_ctx["min_prefix"]
    )


def build_feature_store(
    samples: SampleSet,
    degree: int,
    cache_path: str | Path,
    dataset_hash: str,
    min_prefix: int = 5,
    workers: int = 1,
) -> tuple[FeatureStore, bool]:
    """Encode every sample once, or reuse the on-disk cache.

    The cache key is (dataset hash, degree, augmentation scheme version,
    minimum prefix); a valid entry is loaded without touching the encoder.

    Returns:
        (store, cache_hit).
    """
    cache_path = Path(cache_path)
    cache_path.mkdir(parents=True, exist_ok=True)
    basis = LyndonBasis.build(_D_AUG, degree)
    bin_path = cache_path / "features.bin"
    manifest_path = cache_path / "manifest.json"
    expected = {
        "dataset_sha256": dataset_hash,
        "degree": degree,
        "scheme_version": SCHEME_VERSION,
        "min_prefix": min_prefix,
        "n_rows": len(samples),
        "n_cols": basis.dim,
    }
    if manifest_path.exists() and bin_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if {k: manifest.get(k) for k in expected} == expected:
            matrix = np.fromfile(bin_path, dtype="<f8").reshape(
                expected["n_rows"], expected["n_cols"]
            )
            return FeatureStore(matrix, basis, degree, manifest), True

    matrix = np.empty((len(samples), basis.dim))
    offsets = np.zeros(len(samples.customers) + 1, dtype=np.intp)
    lengths = [
        max(0, len(cs) - min_prefix + 1) for cs in samples.customers
    ]
    offsets[1:] = np.cumsum(lengths)
    tasks = [
        (ci, cs.step_diffs, cs.amounts)
        for ci, cs in enumerate(samples.customers)
        if lengths[ci] > 0
    ]
    if workers > 1:
        with multiprocessing.Pool(
            workers, initializer=_worker_init, initargs=(degree, min_prefix)
        ) as pool:
            for ci, rows in pool.imap_unordered(_worker_encode, tasks, chunksize=16):
                matrix[offsets[ci] : offsets[ci] + rows.shape[0]] = rows
    else:
        for ci, sd, amt in tasks:
            rows = encode_prefixes(sd, amt, degree, basis, min_prefix)
            matrix[offsets[ci] : offsets[ci] + rows.shape[0]] = rows

    tmp_bin = bin_path.with_suffix(".bin.tmp")
    matrix.astype("<f8").tofile(tmp_bin)
    tmp_bin.replace(bin_path)
    tmp_manifest = manifest_path.with_suffix(".json.tmp")
    tmp_manifest.write_text(json.dumps(expected, indent=1))
    tmp_manifest.replace(manifest_path)
    return FeatureStore(matrix, basis, degree, dict(expected)), False
