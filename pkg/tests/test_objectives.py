import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stprompt import autodiff as ad
from stprompt.autodiff import Tensor, check_gradients, default_dtype
from stprompt.config import RunConfig
from stprompt.errors import ConfigurationError, ContractError
from stprompt.objectives import (
    LossConfig,
    MetricAccumulator,
    combined_loss,
    metrics,
    regression_loss,
    uniformity_loss,
)


def test_regression_loss_examples():
    y = Tensor([1.0, 2.0])
    assert regression_loss(y.data, y).item() == 0.0
    assert regression_loss([1.0, 2.0], Tensor([2.0, 4.0])).item() == pytest.approx(1.5)
    with pytest.raises(ContractError):
        regression_loss(np.zeros(3), Tensor(np.zeros(2)))


def test_regression_loss_matches_loop():
    rng = np.random.default_rng(0)
    y, p = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    loop = sum(abs(a - b) for a, b in zip(y.ravel(), p.ravel())) / y.size
    assert regression_loss(y, Tensor(p)).item() == pytest.approx(loop, abs=1e-7)


def emb(vectors):
    """(R, d) list -> (R, F=1, d) embedding tensor."""
    return Tensor(np.asarray(vectors, dtype=np.float64)[:, None, :])


def test_uniformity_hand_values():
    assert uniformity_loss(emb([[1, 0], [1, 0]]), tau=1.0).item() == pytest.approx(1.0)
    assert uniformity_loss(emb([[1, 0], [0, 1]]), tau=1.0).item() == pytest.approx(0.0, abs=1e-12)
    assert uniformity_loss(emb([[1, 0], [1, 0]]), tau=1.0, sign="literal").item() == pytest.approx(-1.0)


def test_uniformity_loop_oracle():
    rng = np.random.default_rng(1)
    E = rng.normal(size=(2, 5, 3, 4))
    tau = 0.3
    total = 0.0
    for b in range(2):
        for f in range(3):
            for r in range(5):
                s = 0.0
                for q in range(5):
                    if q != r:
                        u, v = E[b, r, f], E[b, q, f]
                        s += math.exp(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)) / tau)
                total += math.log(s)
    assert uniformity_loss(Tensor(E), tau).item() == pytest.approx(total / 30, rel=1e-12)


def test_uniformity_zero_vector_has_zero_cosine():
    val = uniformity_loss(emb([[0, 0], [1, 0], [0, 1]]), tau=1.0).item()
    # row 0: two zero cosines; rows 1 and 2: one zero cosine with row 0 and one orthogonal
    assert val == pytest.approx(math.log(2.0))


def test_uniformity_needs_two_regions():
    with pytest.raises(ContractError):
        uniformity_loss(emb([[1, 0]]))


def test_uniformity_is_stable_at_tiny_tau():
    val = uniformity_loss(emb([[1, 0], [1, 0], [0.6, 0.8]]), tau=1e-4).item()
    assert np.isfinite(val)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 2, 3), elements=st.floats(-5, 5)), st.floats(0.1, 50), st.integers(0, 1000))
def test_property_uniformity_scale_and_permutation_invariant(E, scale, seed):
    if np.any(np.linalg.norm(E, axis=-1) < 1e-3):
        return
    base = uniformity_loss(Tensor(E)).item()
    assert uniformity_loss(Tensor(E * scale)).item() == pytest.approx(base, rel=1e-9, abs=1e-12)
    perm = np.random.default_rng(seed).permutation(4)
    assert uniformity_loss(Tensor(E[perm])).item() == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_uniformity_gradient_64bit():
    with default_dtype(np.float64):
        E = Tensor(np.random.default_rng(2).normal(size=(2, 5, 2, 4)), requires_grad=True)
        errs = check_gradients(lambda: uniformity_loss(E, 0.3), {"E": E})
    assert errs["E"] < 1e-6


def test_uniformity_descent_spreads_embeddings():
    from stprompt.analysis import mean_pairwise_cosine
    from stprompt.params import ParameterStore

    store = ParameterStore()
    rng = np.random.default_rng(3)
    store.add("E", rng.normal(size=(32, 1, 8)) + 1.5, "prompt")
    start = mean_pairwise_cosine(store["E"].data)
    opt = ad.Adam(store, lr=0.05)
    for _ in range(100):
        opt.zero_grad()
        uniformity_loss(store["E"]).backward()
        opt.step()
    assert mean_pairwise_cosine(store["E"].data) < start


def test_combined_loss_examples():
    lr, lu = Tensor(2.0), Tensor(3.0)
    assert combined_loss(lr, lu, 0.0).item() == 2.0
    assert combined_loss(lr, lu, 1.0).item() == 5.0
    assert combined_loss(lr, None, 1.0).item() == 2.0
    with pytest.raises(ConfigurationError):
        combined_loss(lr, lu, -1.0)


def test_loss_defaults():
    cfg = RunConfig()
    assert (cfg.tau, cfg.lam, cfg.uniformity_sign) == (0.3, 1.0, "separation")
    assert LossConfig() == LossConfig(0.3, 1.0, "separation")
    assert RunConfig(no_uni=True).uniformity_weight == 0.0
    with pytest.raises(ConfigurationError):
        LossConfig(tau=0.0)


def test_metric_examples():
    assert metrics([100.0], [90.0]).mape == pytest.approx(0.10)
    assert metrics([0.0, 0.0], [3.0, 4.0]).rmse == pytest.approx(math.sqrt(12.5))
    assert metrics([0.0, 10.0], [1.0, 10.0], mape_epsilon=0.5).mape == 0.0
    assert metrics([0.0], [1.0]).mape is None


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-100, 100)), arrays(np.float64, 7, elements=st.floats(-100, 100)))
def test_property_rmse_dominates_mae(y, p):
    rep = metrics(y, p)
    assert rep.rmse >= rep.mae - 1e-12
    same = metrics(y, y)
    assert same.mae == same.rmse == 0.0 and same.mape in (0.0, None)


def test_accumulator_matches_one_shot_metrics():
    rng = np.random.default_rng(4)
    y, p = rng.normal(10, 3, size=(50, 3)), rng.normal(10, 3, size=(50, 3))
    acc = MetricAccumulator()
    for lo in range(0, 50, 16):
        acc.update(y[lo:lo + 16], p[lo:lo + 16])
    one = metrics(y, p)
    got = acc.report()
    assert got.mae == pytest.approx(one.mae) and got.rmse == pytest.approx(one.rmse)
    assert got.mape == pytest.approx(one.mape)
