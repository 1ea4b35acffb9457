"""Truncated path signatures of piecewise-linear paths.

The signature of a path is the family of its iterated integrals; truncated
at degree M it lives in the tensor algebra T_M = R + R^D + (R^D)^2 + ... +
(R^D)^M.  For a piecewise-linear path the signature factorises over segments
(Chen's identity), each factor being the tensor exponential of the segment
increment, so the whole computation reduces to truncated tensor products.

A :class:`TensorSeries` stores one flat float64 array per level; the level-m
coefficient of a word (i_1, ..., i_m) sits at flat index sum_j i_j * D**(m-j).
Concatenation of words corresponds to the outer product of the flat blocks.

The feature map used for transaction sequences is

    augment -> path_signature -> tensor_log -> lyndon_project

producing the log-signature coordinates in the Lyndon-word basis.
"""

from __future__ import annotations

import math

import numpy as np

from .lyndon import LyndonBasis

__all__ = [
    "TensorSeries",
    "segment_signature",
    "chen_product",
    "path_signature",
    "tensor_log",
    "tensor_exp",
    "lyndon_project",
    "augment_time",
    "augment_leadlag",
    "augment_visibility_reset",
    "augment",
    "augmented_dim",
    "encode",
]


class TensorSeries:
    """Truncated series in the tensor algebra over R^D.

    Attributes:
        alphabet_size: channel count D.
        degree: truncation degree M.
        levels: list of M+1 flat arrays; ``levels[m]`` has shape (D**m,),
            with ``levels[0]`` the scalar part as a shape-(1,) array.
    """

    __slots__ = ("alphabet_size", "degree", "levels")

    def __init__(self, alphabet_size: int, degree: int, levels: list[np.ndarray]):
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        if len(levels) != degree + 1:
            raise ValueError(f"expected {degree + 1} levels, got {len(levels)}")
        for m, lvl in enumerate(levels):
            if lvl.shape != (alphabet_size**m,):
                raise ValueError(
                    f"level {m} has shape {lvl.shape}, expected ({alphabet_size**m},)"
                )
        self.alphabet_size = alphabet_size
        self.degree = degree
        self.levels = levels

    @classmethod
    def zero(cls, alphabet_size: int, degree: int) -> "TensorSeries":
        return cls(
            alphabet_size,
            degree,
            [np.zeros(alphabet_size**m) for m in range(degree + 1)],
        )

    @classmethod
    def unit(cls, alphabet_size: int, degree: int) -> "TensorSeries":
        """The multiplicative identity: scalar part 1, all higher levels 0."""
        out = cls.zero(alphabet_size, degree)
        out.levels[0][0] = 1.0
        return out

    def copy(self) -> "TensorSeries":
        return TensorSeries(
            self.alphabet_size, self.degree, [lvl.copy() for lvl in self.levels]
        )

    def allclose(self, other: "TensorSeries", rtol=1e-10, atol=1e-12) -> bool:
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.levels, other.levels)
        )

    def __repr__(self) -> str:
        return (
            f"TensorSeries(D={self.alphabet_size}, M={self.degree}, "
            f"scalar={self.levels[0][0]!r})"
        )


def segment_signature(increment: np.ndarray, degree: int) -> TensorSeries:
    """Signature of a single linear segment: the tensor exponential of the
    increment, with level m equal to increment^(tensor m) / m!."""
    inc = np.asarray(increment, dtype=np.float64)
    if inc.ndim != 1 or inc.size == 0:
        raise ValueError(f"increment must be a non-empty vector, got shape {inc.shape}")
    d = inc.size
    levels = [np.ones(1)]
    for m in range(1, degree + 1):
        levels.append(np.multiply.outer(levels[-1], inc).ravel() / m)
    return TensorSeries(d, degree, levels)


def chen_product(a: TensorSeries, b: TensorSeries) -> TensorSeries:
    """Truncated tensor-algebra product; concatenates paths by Chen's identity."""
    if a.alphabet_size != b.alphabet_size or a.degree != b.degree:
        raise ValueError(
            f"mismatched series: D {a.alphabet_size}/{b.alphabet_size}, "
            f"M {a.degree}/{b.degree}"
        )
    out = TensorSeries.zero(a.alphabet_size, a.degree)
    for m in range(a.degree + 1):
        acc = out.levels[m]
        for i in range(m + 1):
            left = a.levels[i]
            right = b.levels[m - i]
            if i == 0:
                acc += left[0] * right
            elif i == m:
                acc += left * right[0]
            else:
                acc += np.multiply.outer(left, right).ravel()
    return out


def path_signature(points: np.ndarray, degree: int) -> TensorSeries:
    """Signature of the piecewise-linear path through `points` ((n, D), n >= 2),
    accumulated left to right over segment exponentials."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
        raise ValueError(f"need at least 2 points of >= 1 channel, got shape {pts.shape}")
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    sig = segment_signature(pts[1] - pts[0], degree)
    for k in range(1, pts.shape[0] - 1):
        sig = chen_product(sig, segment_signature(pts[k + 1] - pts[k], degree))
    return sig


def tensor_log(s: TensorSeries) -> TensorSeries:
    """Tensor logarithm of a series with scalar part 1:

        log(1 + t) = sum_{n>=1} (-1)**(n-1) / n * t^(tensor n)

    truncated at the series degree.  The scalar part of the result is 0.
    """
    if abs(s.levels[0][0] - 1.0) > 1e-9:
        raise ValueError(
            f"tensor_log needs scalar part 1, got {s.levels[0][0]!r}"
        )
    t = s.copy()
    t.levels[0][0] = 0.0
    out = t.copy()
    power = t
    # t has zero scalar part, so t^(tensor n) vanishes below level n.
    for n in range(2, s.degree + 1):
        power = chen_product(power, t)
        coeff = (-1.0) ** (n - 1) / n
        for m in range(n, s.degree + 1):
            out.levels[m] += coeff * power.levels[m]
    return out


def tensor_exp(a: TensorSeries) -> TensorSeries:
    """Tensor exponential of a series with scalar part 0 (inverse of tensor_log)."""
    if abs(a.levels[0][0]) > 1e-9:
        raise ValueError(f"tensor_exp needs scalar part 0, got {a.levels[0][0]!r}")
    out = TensorSeries.unit(a.alphabet_size, a.degree)
    power = TensorSeries.unit(a.alphabet_size, a.degree)
    for n in range(1, a.degree + 1):
        power = chen_product(power, a)
        inv_fact = 1.0 / math.factorial(n)
        for m in range(n, a.degree + 1):
            out.levels[m] += inv_fact * power.levels[m]
    return out


def lyndon_project(log_series: TensorSeries, basis: LyndonBasis) -> np.ndarray:
    """Read the tensor-log coefficients at Lyndon-word positions into a flat
    vector ordered like ``basis.words``."""
    if basis.alphabet_size != log_series.alphabet_size or basis.degree != log_series.degree:
        raise ValueError(
            f"basis (D={basis.alphabet_size}, M={basis.degree}) does not match "
            f"series (D={log_series.alphabet_size}, M={log_series.degree})"
        )
    out = np.empty(basis.dim)
    for length in range(1, basis.degree + 1):
        out[basis.output_slice(length)] = log_series.levels[length][
            basis.flat_indices(length)
        ]
    return out


# ---------------------------------------------------------------------------
# Path augmentations.  Composition order: time, then lead-lag over all
# channels, then invisibility-reset.  d input channels become 2d+3.
# ---------------------------------------------------------------------------


def _check_path(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
        raise ValueError(f"need at least 2 points of >= 1 channel, got shape {pts.shape}")
    return pts


def augment_time(points: np.ndarray) -> np.ndarray:
    """Prepend a normalised time channel t_i = i / (n - 1)."""
    pts = _check_path(points)
    n = pts.shape[0]
    t = np.arange(n, dtype=np.float64) / (n - 1)
    return np.column_stack([t, pts])


def augment_leadlag(points: np.ndarray) -> np.ndarray:
    """Interleave the path with a one-step lagged copy of itself.

    Point sequence (p1, p1), (p2, p1), (p2, p2), (p3, p2), ...: 2n-1 points,
    lead channels first, lag channels second.
    """
    pts = _check_path(points)
    n, d = pts.shape
    out = np.empty((2 * n - 1, 2 * d))
    out[0::2, :d] = pts
    out[0::2, d:] = pts
    out[1::2, :d] = pts[1:]
    out[1::2, d:] = pts[:-1]
    return out


def augment_visibility_reset(points: np.ndarray) -> np.ndarray:
    """Append a visibility channel equal to 1 on the existing points, prepend
    the first point with visibility 0, and append the last point with
    visibility 0 followed by the all-zero point."""
    pts = _check_path(points)
    n, d = pts.shape
    out = np.zeros((n + 3, d + 1))
    out[1 : n + 1, :d] = pts
    out[1 : n + 1, d] = 1.0
    out[0, :d] = pts[0]
    out[n + 1, :d] = pts[-1]
    # rows 0 and n+1 keep visibility 0; the final row stays all-zero.
    return out


def augment(points: np.ndarray) -> np.ndarray:
    """Full augmentation: time, lead-lag, invisibility-reset.

    An n-point path in R^d becomes a (2n+2)-point path in R^(2d+3) with
    channel layout [lead time, lead x_1..x_d, lag time, lag x_1..x_d,
    visibility].
    """
    return augment_visibility_reset(augment_leadlag(augment_time(points)))


def augmented_dim(d: int) -> int:
    """Channel count after augmentation."""
    return 2 * d + 3


def encode(points: np.ndarray, degree: int, basis: LyndonBasis | None = None) -> np.ndarray:
    """Log-signature feature vector of a raw path.

    Augments the path, computes the truncated signature, takes the tensor
    logarithm, and projects onto the Lyndon-word basis.

    Args:
        points: (n, d) array of path points, n >= 2.
        degree: signature truncation degree.
        basis: optional prebuilt basis over 2d+3 letters (rebuilt if omitted).

    Returns:
        Flat float64 vector of length ``lyndon_dim(2d+3, degree)``.
    """
    pts = _check_path(points)
    aug = augment(pts)
    if basis is None:
        basis = LyndonBasis.build(aug.shape[1], degree)
    elif basis.alphabet_size != aug.shape[1] or basis.degree != degree:
        raise ValueError(
            f"basis (D={basis.alphabet_size}, M={basis.degree}) does not match "
            f"augmented path (D={aug.shape[1]}, M={degree})"
        )
    return lyndon_project(tensor_log(path_signature(aug, degree)), basis)
