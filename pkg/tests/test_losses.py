import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fraudsig.losses import (
    DiscriminatorLossParts,
    discriminator_loss,
    generator_loss_from_scores,
    grad_norm_penalty,
    gradient_penalty,
    interpolate,
    labeled_loss,
    labeled_loss_grad,
    unlabeled_loss,
)
from fraudsig.metrics import cross_entropy
from fraudsig.nnet import DiscriminatorNet, GeneratorNet, restricted_softmax

from oracles import fd_grad


def _setup(rng, feat_dim=3, n_classes=2):
    disc = DiscriminatorNet(
        feat_dim=feat_dim, emb_cards=(2,), n_classes=n_classes,
        width=5, n_residual=1, head_widths=(4,),
    )
    return disc, disc.init_params(rng)


def test_uniform_scores_give_log2():
    scores = np.zeros((6, 3))
    labels = np.array([1, 2, 1, 1, 2, 2])
    assert labeled_loss(scores, labels) == pytest.approx(np.log(2.0), abs=1e-12)


def test_labeled_loss_equals_binary_cross_entropy():
    """For K=2 the class-2 restricted-softmax mass must reproduce the binary
    cross-entropy metric on the same probabilities."""
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(50, 3))
    labels = rng.integers(1, 3, size=50)
    probs = restricted_softmax(scores)[:, 1]  # fraud = class 2
    want = cross_entropy((labels == 2).astype(int), probs, clip=0.0)
    assert labeled_loss(scores, labels) == pytest.approx(want, abs=1e-12)


def test_labeled_loss_grad_matches_fd(rng):
    scores = rng.normal(size=(7, 3))
    labels = rng.integers(1, 3, size=7)
    _, grad = labeled_loss_grad(scores, labels)
    fd = fd_grad(lambda s: labeled_loss(s, labels), scores.copy())
    np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-9)
    assert np.all(grad[:, 0] == 0.0)


def test_labeled_loss_rejects_empty_and_bad_labels():
    with pytest.raises(ValueError):
        labeled_loss(np.zeros((0, 3)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        labeled_loss(np.zeros((2, 3)), np.array([0, 1]))  # 0 is the fake class
    with pytest.raises(ValueError):
        labeled_loss(np.zeros((2, 3)), np.array([1, 3]))


def test_unlabeled_loss_direction():
    real = np.array([[1.0, 0.0, 0.0]])
    fake = np.array([[0.0, 1.0, 1.0]])
    # critic(real)=1/sqrt3, critic(fake)=-2/sqrt3 -> difference 3/sqrt3
    assert unlabeled_loss(real, fake) == pytest.approx(3.0 / np.sqrt(3.0))


def test_grad_norm_penalty_trivials():
    assert grad_norm_penalty(np.ones(8)) == 0.0
    assert grad_norm_penalty(np.zeros(5)) == 1.0
    assert grad_norm_penalty(np.array([0.0, 2.0])) == pytest.approx(1.0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_interpolate_endpoints(a, b):
    real = np.array([[a, 1.0]])
    fake = np.array([[b, -1.0]])
    np.testing.assert_allclose(interpolate(real, fake, np.array([1.0])), real)
    np.testing.assert_allclose(interpolate(real, fake, np.array([0.0])), fake)


def test_zero_discriminator_has_unit_penalty(rng):
    """All-zero parameters give a constant critic, zero input gradient, and
    so penalty mean (0-1)^2 = 1."""
    disc, params = _setup(rng)
    zero = [np.zeros_like(p) for p in params]
    real = rng.normal(size=(4, 3))
    fake = rng.normal(size=(4, 3))
    codes = rng.integers(0, 2, (4, 1))
    pen = gradient_penalty(disc, zero, real, fake, codes, rng.uniform(size=4))
    assert pen == pytest.approx(1.0, abs=1e-15)


def test_gradient_penalty_grads_match_fd(rng):
    disc, params = _setup(rng)
    real = rng.normal(size=(3, 3))
    fake = rng.normal(size=(3, 3))
    codes = rng.integers(0, 2, (3, 1))
    eps = rng.uniform(size=3)
    _, grads = gradient_penalty(disc, params, real, fake, codes, eps, want_grads=True)
    for k, p in enumerate(params):
        def f(pv):
            trial = list(params)
            trial[k] = pv
            return gradient_penalty(disc, trial, real, fake, codes, eps)

        np.testing.assert_allclose(grads[k], fd_grad(f, p.copy()), rtol=2e-4, atol=1e-7)


def test_parts_total_is_weighted_sum():
    parts = DiscriminatorLossParts(unlabeled=0.3, labeled=0.7, penalty=0.11)
    assert parts.total(10.0, 10.0) == pytest.approx(0.3 + 7.0 + 1.1, abs=1e-12)


def test_discriminator_loss_decomposition_and_fd(rng):
    disc, params = _setup(rng)
    B = 4
    real = rng.normal(size=(B, 3))
    fake = rng.normal(size=(B, 3))
    codes = rng.integers(0, 2, (B, 1))
    lab = rng.normal(size=(B, 3))
    labels = rng.integers(1, 3, B)
    eps = rng.uniform(size=B)

    parts, total, grads = discriminator_loss(
        disc, params, real, codes, fake, codes, lab, codes, labels, eps,
        lam=10.0, gp_weight=10.0, want_grads=True,
    )
    assert total == pytest.approx(
        parts.unlabeled + 10.0 * parts.labeled + 10.0 * parts.penalty, abs=1e-12
    )

    def f(trial):
        _, t = discriminator_loss(
            disc, trial, real, codes, fake, codes, lab, codes, labels, eps,
            lam=10.0, gp_weight=10.0,
        )
        return t

    for k, p in enumerate(params):
        def fk(pv):
            trial = list(params)
            trial[k] = pv
            return f(trial)

        np.testing.assert_allclose(grads[k], fd_grad(fk, p.copy()), rtol=2e-4, atol=1e-7)


def test_discriminator_loss_batch_mismatch(rng):
    disc, params = _setup(rng)
    with pytest.raises(ValueError):
        discriminator_loss(
            disc, params, np.zeros((3, 3)), np.zeros((3, 1), dtype=int),
            np.zeros((2, 3)), np.zeros((2, 1), dtype=int),
            np.zeros((2, 3)), np.zeros((2, 1), dtype=int),
            np.array([1, 2]), np.zeros(3), 10.0, 10.0,
        )


def test_generator_loss_and_grad(rng):
    disc, dparams = _setup(rng)
    gen = GeneratorNet(latent_dim=2, emb_cards=(2,), out_dim=3, width=4, n_residual=1)
    gparams = gen.init_params(rng)
    z = rng.normal(size=(4, 2))
    codes = rng.integers(0, 2, (4, 1))

    def gen_loss(trial):
        fake, _ = gen.forward(trial, z, codes)
        scores, _ = disc.forward(dparams, fake, codes)
        value, _ = generator_loss_from_scores(scores)
        return value

    fake, gcache = gen.forward(gparams, z, codes)
    scores, dcache = disc.forward(dparams, fake, codes)
    value, dscores = generator_loss_from_scores(scores)
    _, dfeat = disc.backward(dparams, dcache, dscores, need_param_grads=False)
    grads, _ = gen.backward(gparams, gcache, dfeat)

    from fraudsig.nnet import critic_head
    assert value == pytest.approx(float(critic_head(scores).mean()))
    for k, p in enumerate(gparams):
        def fk(pv):
            trial = list(gparams)
            trial[k] = pv
            return gen_loss(trial)

        np.testing.assert_allclose(grads[k], fd_grad(fk, p.copy()), rtol=1e-5, atol=1e-7)
