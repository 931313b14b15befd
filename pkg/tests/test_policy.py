import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from clutterlab.policy import (
    ActorCritic,
    Adam,
    BetaHead,
    Mlp,
    TruncNormalHead,
    adam_step,
    beta_entropy,
    beta_log_prob,
    checkpoint_bytes,
    checkpoint_from_bytes,
    clip_global_norm,
    global_norm,
    sample_beta,
    trunc_normal_entropy,
    trunc_normal_log_prob,
    trunc_normal_sample,
)
from clutterlab.policy.distributions import beta_mean
from clutterlab.policy.special import digamma, erf, lgamma, log_beta, trigamma

GRID = (0.5, 1.0, 2.0, 5.0, 10.0)
H = 1e-5


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error; the floor keeps all-zero gradients comparable."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-8))


def fd_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


# -- special functions ----------------------------------------------------------------------------


def test_lgamma_anchor():
    assert lgamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), abs=1e-12)
    assert float(lgamma(0.5)) == pytest.approx(0.5723649, abs=1e-7)


@given(st.floats(1e-3, 200.0))
@settings(max_examples=200, deadline=None)
def test_special_functions_match_scipy(x):
    assert float(lgamma(x)) == pytest.approx(special.gammaln(x), rel=1e-12, abs=1e-12)
    assert float(digamma(x)) == pytest.approx(special.digamma(x), rel=1e-10, abs=1e-10)
    assert float(trigamma(x)) == pytest.approx(special.polygamma(1, x), rel=1e-9)


@given(st.floats(-6.0, 6.0))
def test_erf_matches_scipy(x):
    assert float(erf(x)) == pytest.approx(special.erf(x), abs=1e-14)


def test_log_beta():
    a, b = np.meshgrid(GRID, GRID)
    np.testing.assert_allclose(log_beta(a, b), special.betaln(a, b), rtol=1e-12)


# -- Beta numerics -----------------------------------------------------------------------------------


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("a", GRID)
@pytest.mark.parametrize("b", GRID)
def test_beta_density_normalized_and_entropy_matches_quadrature(a, b):
    pdf = lambda u: math.exp(float(beta_log_prob(a, b, u)))
    # split at the midpoint so endpoint singularities (a or b < 1) sit at interval ends
    mass = sum(integrate.quad(pdf, lo, hi, limit=200, epsabs=1e-12, epsrel=1e-12)[0] for lo, hi in ((0, 0.5), (0.5, 1)))
    assert abs(mass - 1.0) < 1e-6

    def plogp(u):
        lp = float(beta_log_prob(a, b, u))
        return -math.exp(lp) * lp

    h = sum(integrate.quad(plogp, lo, hi, limit=200, epsabs=1e-12, epsrel=1e-12)[0] for lo, hi in ((0, 0.5), (0.5, 1)))
    assert abs(float(beta_entropy(a, b)) - h) < 1e-6
    assert float(beta_entropy(a, b)) == pytest.approx(stats.beta(a, b).entropy(), abs=1e-10)


def test_beta_uniform_case():
    assert float(beta_entropy(1.0, 1.0)) == 0.0
    assert float(beta_log_prob(1.0, 1.0, 0.3)) == 0.0
    head = BetaHead()
    # raw output mapping to alpha = beta = 1 in every dimension
    raw = np.full((1, 8), -np.inf)
    a, b = head.params(raw)
    if not np.allclose(a, 1.0):
        raw = _raw_for(head, np.ones(4), np.ones(4))
    for action in (np.zeros(4), np.array([0.9, -0.3, 0.5, -0.99])):
        assert float(head.log_prob(raw, action[None])[0]) == -4 * math.log(2.0)
    assert -4 * math.log(2.0) == pytest.approx(-2.7726, abs=1e-4)


def _raw_for(head: BetaHead, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Invert the head's parameter map: alpha = 1 + softplus(raw)."""
    lo = np.full((1, 8), -50.0)
    hi = np.full((1, 8), 50.0)
    target = np.concatenate([alpha, beta])[None]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        a, b = head.params(mid)
        up = np.concatenate([a, b], axis=1) < target
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def test_beta_two_two_values():
    assert float(beta_log_prob(2.0, 2.0, 0.5)) == pytest.approx(math.log(1.5), abs=1e-12)
    assert float(beta_entropy(2.0, 2.0)) == pytest.approx(-0.1251, abs=1e-4)


def test_beta_sample_mean():
    rng = np.random.default_rng(0)
    alpha = np.array([5.0, 2, 2, 2])
    beta = np.array([2.0, 2, 2, 2])
    n = 100_000
    u = sample_beta(np.tile(alpha, (n, 1)), np.tile(beta, (n, 1)), rng)
    a = 2 * u - 1
    sd = 2 * math.sqrt(5 * 2 / (7**2 * 8)) / math.sqrt(n)
    assert abs(a[:, 0].mean() - 3 / 7) < 3 * sd
    np.testing.assert_allclose(beta_mean(alpha, beta), alpha / (alpha + beta))


# -- truncated normal -----------------------------------------------------------------------------


def test_trunc_normal_mass_and_wide_limit():
    mass = integrate.quad(lambda x: math.exp(float(trunc_normal_log_prob(0.0, 1.0, x))), -1, 1, epsabs=1e-12)[0]
    assert abs(mass - 1.0) < 1e-6
    for x in (-0.9, 0.0, 0.5):
        assert float(trunc_normal_log_prob(0.0, 100.0, x)) == pytest.approx(-math.log(2.0), abs=1e-3)


@pytest.mark.parametrize("mu,sigma", [(0.0, 0.3), (0.7, 0.2), (-2.0, 0.5), (0.1, 3.0)])
def test_trunc_normal_matches_scipy(mu, sigma):
    ref = stats.truncnorm((-1 - mu) / sigma, (1 - mu) / sigma, loc=mu, scale=sigma)
    xs = np.linspace(-0.99, 0.99, 7)
    np.testing.assert_allclose(trunc_normal_log_prob(mu, sigma, xs), ref.logpdf(xs), atol=1e-9)
    assert float(trunc_normal_entropy(mu, sigma)) == pytest.approx(ref.entropy(), abs=1e-8)


@pytest.mark.parametrize("mu,sigma", [(0.0, 0.3), (-2.0, 0.5), (3.0, 0.01), (0.1, 3.0), (0.99, 1e-3)])
def test_trunc_normal_sampler_distribution(mu, sigma):
    x = trunc_normal_sample(np.full(20_000, mu), np.full(20_000, sigma), np.random.default_rng(4))
    ref = stats.truncnorm((-1 - mu) / sigma, (1 - mu) / sigma, loc=mu, scale=sigma)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_trunc_normal_samples_in_bounds():
    rng = np.random.default_rng(1)
    mu = rng.uniform(-3, 3, (250_000, 4))
    sigma = rng.uniform(0.01, 5, (250_000, 4))
    x = trunc_normal_sample(mu, sigma, rng)
    assert np.all((x >= -1) & (x <= 1))


# -- heads, sampling, modes -------------------------------------------------------------------------


@pytest.mark.parametrize("head", [BetaHead(), TruncNormalHead()])
def test_head_samples_and_modes_in_box(head):
    rng = np.random.default_rng(2)
    raw = rng.normal(0, 3, (500, head.n_raw))
    for a in (head.sample(raw, rng), head.mode(raw)):
        assert a.shape == (500, 4)
        assert np.all(np.abs(a) <= 1)
    assert np.all(np.isfinite(head.log_prob(raw, head.sample(raw, rng))))


# -- optimizer -----------------------------------------------------------------------------------------


def test_clip_global_norm():
    g = [np.array([0.6, 0.0]), np.array([[0.8]])]
    clipped, norm = clip_global_norm(g, 0.5)
    assert norm == pytest.approx(1.0)
    np.testing.assert_allclose(clipped[0], [0.3, 0.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(clipped[1], [[0.4]], rtol=0, atol=1e-15)
    small = [np.array([0.3])]
    out, _ = clip_global_norm(small, 0.5)
    assert out[0][0] == 0.3
    assert global_norm(small) == pytest.approx(0.3)


def test_adam_converges_on_quadratic():
    x = np.array([0.0])
    params = [x]
    state = Adam(params, lr=1e-2)
    for _ in range(1000):
        adam_step(params, [2 * (x - 1.5)], state)
    assert abs(x[0] - 1.5) < 1e-3


# -- gradient checks (100 random configurations per op) --------------------------------------------------


def _configs(seed: int, n: int = 100):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield rng


def test_mlp_structure():
    net = Mlp([3, 4, 2], np.random.default_rng(0))
    for p in net.params:
        p[...] = 0.0
    net.params[-1][:] = [0.5, -1.0]
    np.testing.assert_array_equal(net.forward(np.ones((2, 3))), [[0.5, -1.0]] * 2)
    lin = Mlp([3, 2], np.random.default_rng(0))
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_allclose(lin.forward(x), x @ lin.params[0] + lin.params[1])


def test_mlp_gradients_match_finite_differences():
    worst = 0.0
    for rng in _configs(10):
        sizes = [int(rng.integers(1, 6))] + [int(rng.integers(1, 7)) for _ in range(rng.integers(1, 4))] + [int(rng.integers(1, 4))]
        net = Mlp(sizes, rng, output_gain=float(rng.uniform(0.1, 2)))
        for p in net.params:
            p += rng.normal(0, 0.3, p.shape)
        x = rng.normal(0, 1, (int(rng.integers(1, 5)), sizes[0]))
        w = rng.normal(0, 1, (len(x), sizes[-1]))
        loss = lambda: float(np.sum(w * net.forward(x, keep=False)))
        net.forward(x, keep=True)
        grads, gx = net.backward(w)
        for p, g in zip(net.params, grads):
            worst = max(worst, rel_err(g, fd_grad(loss, p)))
        worst = max(worst, rel_err(gx, fd_grad(loss, x)))
    assert worst < 1e-4


@pytest.mark.parametrize("head", [BetaHead(), TruncNormalHead()])
def test_head_gradients_match_finite_differences(head):
    worst = 0.0
    for rng in _configs(11):
        raw = rng.normal(0, 1.5, (3, head.n_raw))
        action = np.clip(head.sample(raw, rng), -0.999, 0.999)
        w = rng.normal(0, 1, 3)
        lp, dlp = head.log_prob_grad(raw, action)
        ent, dent = head.entropy_grad(raw)
        np.testing.assert_allclose(lp, head.log_prob(raw, action), rtol=1e-12)
        np.testing.assert_allclose(ent, head.entropy(raw), rtol=1e-12)
        worst = max(worst, rel_err(w[:, None] * dlp, fd_grad(lambda: float(w @ head.log_prob(raw, action)), raw)))
        worst = max(worst, rel_err(w[:, None] * dent, fd_grad(lambda: float(w @ head.entropy(raw)), raw)))
    assert worst < 1e-4


@pytest.mark.parametrize("head", ["beta", "trunc_normal"])
def test_ppo_loss_gradients_match_finite_differences(head):
    from clutterlab.ppo import TrainerConfig, ppo_loss

    cfg = TrainerConfig(batch=8, minibatches=1, n_envs=1, total_steps=8, head=head)
    worst = 0.0
    for i, rng in enumerate(_configs(12)):
        model = ActorCritic(4, head=head, hidden=5, hidden_layers=2, seed=i)
        for p in model.params:
            p += rng.normal(0, 0.2, p.shape)
        obs = rng.normal(0, 1, (6, 4))
        actions, logp, _ = model.act(obs, rng)
        actions = np.clip(actions, -0.999, 0.999)
        old = model.head.log_prob(model.raw(obs), actions) + rng.normal(0, 0.05, 6)
        adv = rng.normal(0, 1, 6)
        ret = rng.normal(0, 1, 6)
        grads = ppo_loss(model, obs, actions, old, adv, ret, cfg).grads
        total = lambda: ppo_loss(model, obs, actions, old, adv, ret, cfg).total
        k = int(rng.integers(len(model.params)))  # one tensor per configuration keeps runtime low
        worst = max(worst, rel_err(grads[k], fd_grad(total, model.params[k])))
    assert worst < 1e-4


# -- actor-critic --------------------------------------------------------------------------------------


def test_checkpoint_round_trip():
    model = ActorCritic(7, hidden=6, hidden_layers=2, seed=3)
    adam = Adam(model.params)
    data = checkpoint_bytes(model, adam, {"note": "x"})
    back, adam2, meta = checkpoint_from_bytes(data)
    assert meta["note"] == "x"
    for a, b in zip(model.params, back.params):
        np.testing.assert_array_equal(a, b)
    obs = np.random.default_rng(0).normal(size=(2, 7))
    np.testing.assert_array_equal(model.raw(obs), back.raw(obs))
    assert adam2 is not None


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        checkpoint_from_bytes(b"not a checkpoint")
