"""Dense networks with hand-written forward, backward, and tangent passes.

Everything is batched numpy in float64 and purely functional in the
parameters: a network object holds only the architecture, while parameters
travel as a plain list of arrays aligned with ``net.param_specs``.  Besides
ordinary reverse-mode gradients, every trunk layer implements a
forward-tangent rule and a second-order reverse rule, which together give the
exact parameter gradient of penalties defined on input gradients (the
gradient-penalty term of the critic loss) without any numerical
differentiation.

Conventions:
    * class index 0 is reserved for generated samples; indices 1..K are the
      real classes,
    * the critic readout is the fixed unit-Lipschitz linear map
      (x_0 - x_1 - ... - x_K) / sqrt(K+1),
    * class probabilities for real classes come from a softmax restricted to
      indices 1..K.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ParamSpec",
    "Dense",
    "TanhAct",
    "ResidualTanh",
    "GeneratorNet",
    "DiscriminatorNet",
    "critic_head",
    "critic_head_vector",
    "restricted_softmax",
    "save_params",
    "load_params",
    "zeros_like_params",
]


@dataclass(frozen=True)
class ParamSpec:
    """Shape and fan metadata for one parameter tensor."""

    name: str
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int


# ---------------------------------------------------------------------------
# Trunk layers.  Each layer exposes:
#   forward(ps, x) -> (y, cache)
#   backward(ps, cache, dy, need_param_grads) -> (grads, dx)
#   tangent(ps, cache, xdot) -> (ydot, tcache)
#   second_backward(ps, cache, tcache, lam, mu) -> (grads, lam_x, mu_x)
# where lam = d(out)/d(primal activation) and mu = d(out)/d(tangent
# activation) for the scalar being differentiated in the second-order pass.
# ---------------------------------------------------------------------------


class Dense:
    """Affine layer y = x W^T + b."""

    def __init__(self, in_dim: int, out_dim: int, name: str):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.specs = [
            ParamSpec(f"{name}.W", (out_dim, in_dim), in_dim, out_dim),
            ParamSpec(f"{name}.b", (out_dim,), in_dim, out_dim),
        ]

    def forward(self, ps, x):
        W, b = ps
        return x @ W.T + b, (x,)

    def backward(self, ps, cache, dy, need_param_grads=True):
        W, _ = ps
        (x,) = cache
        grads = [dy.T @ x, dy.sum(axis=0)] if need_param_grads else None
        return grads, dy @ W

    def tangent(self, ps, cache, xdot):
        W, _ = ps
        return xdot @ W.T, (xdot,)

    def second_backward(self, ps, cache, tcache, lam, mu):
        W, _ = ps
        (x,) = cache
        (xdot,) = tcache
        grads = [lam.T @ x + mu.T @ xdot, lam.sum(axis=0)]
        return grads, lam @ W, mu @ W


class TanhAct:
    """Elementwise tanh."""

    specs: list[ParamSpec] = []

    def forward(self, ps, x):
        y = np.tanh(x)
        return y, (y,)

    def backward(self, ps, cache, dy, need_param_grads=True):
        (y,) = cache
        return ([] if need_param_grads else None), dy * (1.0 - y * y)

    def tangent(self, ps, cache, xdot):
        (y,) = cache
        return (1.0 - y * y) * xdot, (xdot,)

    def second_backward(self, ps, cache, tcache, lam, mu):
        (y,) = cache
        (xdot,) = tcache
        sech2 = 1.0 - y * y
        lam_x = lam * sech2 + mu * (-2.0 * y * sech2) * xdot
        return [], lam_x, mu * sech2


class ResidualTanh:
    """Residual block y = x + tanh(x W^T + b) with a square weight matrix."""

    def __init__(self, dim: int, name: str):
        self.dim = dim
        self.specs = [
            ParamSpec(f"{name}.W", (dim, dim), dim, dim),
            ParamSpec(f"{name}.b", (dim,), dim, dim),
        ]

    def forward(self, ps, x):
        W, b = ps
        t = np.tanh(x @ W.T + b)
        return x + t, (x, t)

    def backward(self, ps, cache, dy, need_param_grads=True):
        W, _ = ps
        x, t = cache
        da = dy * (1.0 - t * t)
        grads = [da.T @ x, da.sum(axis=0)] if need_param_grads else None
        return grads, dy + da @ W

    def tangent(self, ps, cache, xdot):
        W, _ = ps
        _, t = cache
        adot = xdot @ W.T
        return xdot + (1.0 - t * t) * adot, (xdot, adot)

    def second_backward(self, ps, cache, tcache, lam, mu):
        W, _ = ps
        x, t = cache
        xdot, adot = tcache
        sech2 = 1.0 - t * t
        lam_a = lam * sech2 + mu * (-2.0 * t * sech2) * adot
        mu_a = mu * sech2
        grads = [lam_a.T @ x + mu_a.T @ xdot, lam_a.sum(axis=0)]
        return grads, lam + lam_a @ W, mu + mu_a @ W


def _check_codes(codes, cards):
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != len(cards):
        raise ValueError(
            f"codes must have shape (batch, {len(cards)}), got {codes.shape}"
        )
    for f, card in enumerate(cards):
        col = codes[:, f]
        if col.size and (col.min() < 0 or col.max() >= card):
            raise ValueError(
                f"condition feature {f}: code out of range [0, {card}) "
                f"(got min {col.min()}, max {col.max()})"
            )
    return codes


class _EmbeddingBank:
    """One tanh-squashed lookup table per categorical feature; output
    dimension equals the cardinality."""

    def __init__(self, cards: tuple[int, ...], name: str):
        self.cards = tuple(cards)
        self.out_dim = sum(self.cards)
        self.specs = [
            ParamSpec(f"{name}.emb{f}", (c, c), c, c) for f, c in enumerate(self.cards)
        ]

    def forward(self, ps, codes):
        outs = []
        for f in range(len(self.cards)):
            outs.append(np.tanh(ps[f][codes[:, f]]))
        return outs, (codes, outs)

    def backward(self, ps, cache, douts):
        codes, outs = cache
        grads = []
        for f, c in enumerate(self.cards):
            h = outs[f]
            de = douts[f] * (1.0 - h * h)
            dtable = np.zeros_like(ps[f])
            np.add.at(dtable, codes[:, f], de)
            grads.append(dtable)
        return grads

    def second_backward(self, ps, cache, lams):
        # The lookup tangent is identically zero for a fixed table, so only
        # the primal (lam) path reaches the tables.
        return self.backward(ps, cache, lams)


def _trunk_forward(layers, params, offsets, x):
    caches = []
    for layer, (lo, hi) in zip(layers, offsets):
        x, cache = layer.forward(params[lo:hi], x)
        caches.append(cache)
    return x, caches


def _trunk_backward(layers, params, offsets, caches, dy, need_param_grads=True):
    grads = [None] * (offsets[-1][1] if offsets else 0)
    for layer, (lo, hi), cache in zip(reversed(layers), reversed(offsets), reversed(caches)):
        layer_grads, dy = layer.backward(params[lo:hi], cache, dy, need_param_grads)
        if need_param_grads:
            grads[lo:hi] = layer_grads
    return grads, dy


class _Net:
    """Shared plumbing: an embedding bank plus a trunk of dense layers."""

    def __init__(self):
        self.layers: list = []
        self._offsets: list[tuple[int, int]] = []

    def _finalize(self, emb: _EmbeddingBank):
        self.emb = emb
        self.param_specs: list[ParamSpec] = list(emb.specs)
        n = len(self.param_specs)
        for layer in self.layers:
            self._offsets.append((n, n + len(layer.specs)))
            self.param_specs.extend(layer.specs)
            n += len(layer.specs)
        self.n_emb = len(emb.specs)

    def _split(self, params):
        if len(params) != len(self.param_specs):
            raise ValueError(
                f"expected {len(self.param_specs)} parameter tensors, got {len(params)}"
            )
        return params[: self.n_emb], params[self.n_emb :]

    def init_params(self, rng: np.random.Generator, gain: float = 1.0):
        """Draw every tensor from its zero-mean Gaussian prior with
        fan-balanced variance gain**2 * 2 / (fan_in + fan_out)."""
        out = []
        for spec in self.param_specs:
            sigma = gain * np.sqrt(2.0 / (spec.fan_in + spec.fan_out))
            out.append(rng.normal(0.0, sigma, size=spec.shape))
        return out


class GeneratorNet(_Net):
    """Maps (latent vector, condition codes) to a synthetic feature vector.

    Trunk: affine projection to `width`, `n_residual` residual tanh blocks,
    a tanh, and a final affine map to the feature dimension.
    """

    def __init__(
        self,
        latent_dim: int,
        emb_cards: tuple[int, ...],
        out_dim: int,
        width: int = 128,
        n_residual: int = 2,
    ):
        super().__init__()
        self.latent_dim = latent_dim
        self.out_dim = out_dim
        emb = _EmbeddingBank(emb_cards, "gen")
        in_dim = emb.out_dim + latent_dim
        self.layers = [Dense(in_dim, width, "gen.proj")]
        for r in range(n_residual):
            self.layers.append(ResidualTanh(width, f"gen.res{r}"))
        self.layers.append(TanhAct())
        self.layers.append(Dense(width, out_dim, "gen.out"))
        self._finalize(emb)

    def forward(self, params, z, codes):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"latent batch must be (n, {self.latent_dim}), got {z.shape}")
        codes = _check_codes(codes, self.emb.cards)
        emb_ps, trunk_ps = self._split(params)
        outs, emb_cache = self.emb.forward(emb_ps, codes)
        x = np.concatenate(outs + [z], axis=1)
        y, caches = _trunk_forward(self.layers, trunk_ps, self._offsets_local(), x)
        return y, (emb_cache, caches)

    def backward(self, params, cache, dy, need_param_grads=True):
        emb_ps, trunk_ps = self._split(params)
        emb_cache, caches = cache
        trunk_grads, dx = _trunk_backward(
            self.layers, trunk_ps, self._offsets_local(), caches, dy, need_param_grads
        )
        if not need_param_grads:
            return None, dx[:, self.emb.out_dim :]
        douts, off = [], 0
        for c in self.emb.cards:
            douts.append(dx[:, off : off + c])
            off += c
        emb_grads = self.emb.backward(emb_ps, emb_cache, douts)
        return emb_grads + trunk_grads, dx[:, self.emb.out_dim :]

    def _offsets_local(self):
        return [(lo - self.n_emb, hi - self.n_emb) for lo, hi in self._offsets]


class DiscriminatorNet(_Net):
    """Scores (feature vector, condition codes) into K+1 raw class scores.

    Trunk: affine projection to `width`, `n_residual` residual tanh blocks, a
    tanh, a tanh-separated stack of narrowing affine layers (`head_widths`),
    and a final affine map to K+1 scores.
    """

    def __init__(
        self,
        feat_dim: int,
        emb_cards: tuple[int, ...],
        n_classes: int = 2,
        width: int = 128,
        n_residual: int = 2,
        head_widths: tuple[int, ...] = (64, 32),
    ):
        super().__init__()
        self.feat_dim = feat_dim
        self.n_classes = n_classes
        emb = _EmbeddingBank(emb_cards, "disc")
        in_dim = feat_dim + emb.out_dim
        self.layers = [Dense(in_dim, width, "disc.proj")]
        for r in range(n_residual):
            self.layers.append(ResidualTanh(width, f"disc.res{r}"))
        self.layers.append(TanhAct())
        prev = width
        for h, w in enumerate(head_widths):
            self.layers.append(Dense(prev, w, f"disc.head{h}"))
            self.layers.append(TanhAct())
            prev = w
        self.layers.append(Dense(prev, n_classes + 1, "disc.out"))
        self._finalize(emb)

    def forward(self, params, feat, codes):
        feat = np.asarray(feat, dtype=np.float64)
        if feat.ndim != 2 or feat.shape[1] != self.feat_dim:
            raise ValueError(f"feature batch must be (n, {self.feat_dim}), got {feat.shape}")
        codes = _check_codes(codes, self.emb.cards)
        emb_ps, trunk_ps = self._split(params)
        outs, emb_cache = self.emb.forward(emb_ps, codes)
        x = np.concatenate([feat] + outs, axis=1)
        y, caches = _trunk_forward(self.layers, trunk_ps, self._offsets_local(), x)
        return y, (emb_cache, caches)

    def backward(self, params, cache, dscores, need_param_grads=True):
        """Reverse pass; returns (grads, dfeat)."""
        emb_ps, trunk_ps = self._split(params)
        emb_cache, caches = cache
        trunk_grads, dx = _trunk_backward(
            self.layers, trunk_ps, self._offsets_local(), caches, dscores, need_param_grads
        )
        dfeat = dx[:, : self.feat_dim]
        if not need_param_grads:
            return None, dfeat
        douts, off = [], self.feat_dim
        for c in self.emb.cards:
            douts.append(dx[:, off : off + c])
            off += c
        emb_grads = self.emb.backward(emb_ps, emb_cache, douts)
        return emb_grads + trunk_grads, dfeat

    def critic_input_gradient(self, params, feat, codes):
        """Per-sample gradient of critic_head(forward(feat)) w.r.t. feat.

        Returns (gradients (B, feat_dim), forward cache) so callers can reuse
        the cache for the second-order pass.
        """
        scores, cache = self.forward(params, feat, codes)
        tvec = critic_head_vector(self.n_classes)
        _, dfeat = self.backward(
            params, cache, np.broadcast_to(tvec, scores.shape), need_param_grads=False
        )
        return dfeat, cache

    def penalty_param_grads(self, params, feat, codes, cache, input_grads, coeffs):
        """Parameter gradient of sum_i coeffs[i] * <g_i, g_i-hat> where
        g_i = critic input gradient at sample i and g_i-hat is g_i held fixed.

        This is the exact reverse pass over the forward-tangent program with
        tangent direction g_i per sample, which yields the gradient of any
        function of the input-gradient norms once `coeffs` carries the outer
        derivative.
        """
        emb_ps, trunk_ps = self._split(params)
        emb_cache, caches = cache
        offsets = self._offsets_local()
        # Forward tangent: only the feature slice of the input is perturbed.
        xdot = np.concatenate(
            [input_grads, np.zeros((input_grads.shape[0], self.emb.out_dim))], axis=1
        )
        tcaches = []
        for layer, (lo, hi), c in zip(self.layers, offsets, caches):
            xdot, tcache = layer.tangent(trunk_ps[lo:hi], c, xdot)
            tcaches.append(tcache)
        # Reverse over the tangent program.
        tvec = critic_head_vector(self.n_classes)
        mu = coeffs[:, None] * tvec[None, :]
        lam = np.zeros_like(mu)
        grads = [None] * len(trunk_ps)
        for layer, (lo, hi), c, tc in zip(
            reversed(self.layers), reversed(offsets), reversed(caches), reversed(tcaches)
        ):
            layer_grads, lam, mu = layer.second_backward(trunk_ps[lo:hi], c, tc, lam, mu)
            grads[lo:hi] = layer_grads
        lams, off = [], self.feat_dim
        for c in self.emb.cards:
            lams.append(lam[:, off : off + c])
            off += c
        emb_grads = self.emb.second_backward(emb_ps, emb_cache, lams)
        return emb_grads + grads

    def _offsets_local(self):
        return [(lo - self.n_emb, hi - self.n_emb) for lo, hi in self._offsets]


def critic_head_vector(n_classes: int) -> np.ndarray:
    """Weights of the fixed critic readout; Euclidean norm exactly 1."""
    v = -np.ones(n_classes + 1)
    v[0] = 1.0
    return v / np.sqrt(n_classes + 1.0)


def critic_head(scores: np.ndarray) -> np.ndarray:
    """(x_0 - x_1 - ... - x_K) / sqrt(K+1) per row."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ValueError(f"scores must be (batch, K+1) with K >= 1, got {scores.shape}")
    return scores @ critic_head_vector(scores.shape[1] - 1)


def restricted_softmax(scores: np.ndarray) -> np.ndarray:
    """Softmax over the real classes 1..K only, max-stabilised per row.

    Returns a (batch, K) array of probabilities summing to 1 per row; the
    generated-class score (column 0) never enters.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ValueError(f"scores must be (batch, K+1) with K >= 1, got {scores.shape}")
    real = scores[:, 1:]
    shifted = real - real.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Parameter serialisation: one flat little-endian float64 stream plus a JSON
# manifest of names and shapes, in parameter order.
# ---------------------------------------------------------------------------


def save_params(prefix: str | Path, params, names=None) -> None:
    prefix = Path(prefix)
    names = names or [f"param{i}" for i in range(len(params))]
    flat = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in params])
    prefix.with_suffix(".bin").write_bytes(flat.astype("<f8").tobytes())
    manifest = {
        "dtype": "<f8",
        "tensors": [
            {"name": n, "shape": list(np.shape(p))} for n, p in zip(names, params)
        ],
    }
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1))


def load_params(prefix: str | Path):
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    flat = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype=manifest["dtype"])
    params, off = [], 0
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        params.append(flat[off : off + size].reshape(entry["shape"]).astype(np.float64))
        off += size
    if off != flat.size:
        raise ValueError(f"parameter stream has {flat.size} values, manifest expects {off}")
    return params


def zeros_like_params(params):
    return [np.zeros_like(p) for p in params]
