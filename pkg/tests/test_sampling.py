import numpy as np
import pytest

from coldse.degradation import degrade
from coldse.errors import InvalidParameterError, NumericError
from coldse.restoration import CountingRestorer, IdentityRestorer, OracleRestorer
from coldse.sampling import (
    SamplerConfig,
    direct_reconstruction,
    improved_sampling,
    naive_sampled_reconstruction,
    run_sampler,
    steps_for,
)
from coldse.schedule import make_cosine_schedule

IMPROVED = SamplerConfig("improved", "reanchored")
IMPROVED_FIXED = SamplerConfig("improved", "fixed_xT")
NAIVE = SamplerConfig("naive", "reanchored")
NAIVE_FIXED = SamplerConfig("naive", "fixed_xT")


class Constant:
    def __init__(self, value):
        self.value = value

    def restore(self, x_t, t):
        return np.full(np.shape(x_t), self.value, dtype=float)


class Biased:
    """Deliberately wrong restorer: scaled, shifted and severity dependent."""

    def __init__(self, x0):
        self.x0 = np.asarray(x0)

    def restore(self, x_t, t):
        return 0.7 * self.x0 + 0.3 * np.asarray(x_t) + 0.05 * t + 0.2


def with_trajectory(cfg):
    return SamplerConfig(cfg.method, cfg.variant, cfg.T_start, record_trajectory=True)


def test_direct(rng):
    x0, y = rng.normal(size=(2, 40))
    np.testing.assert_array_equal(direct_reconstruction(OracleRestorer(x0), y, 50), x0)
    np.testing.assert_array_equal(direct_reconstruction(IdentityRestorer(), y, 50), y)


def test_scalar_walkthrough_improved(halves):
    out, traj = improved_sampling(OracleRestorer([1.0]), np.array([0.0]), halves, with_trajectory(IMPROVED))
    assert [s.t for s in traj] == [2, 1, 0]
    assert traj.steps[1].x_t[0] == pytest.approx(0.7071068, abs=1e-7)
    assert out[0] == pytest.approx(1.0, abs=1e-15)


def test_scalar_walkthrough_naive(halves):
    out, traj = naive_sampled_reconstruction(Constant(0.9), np.array([0.0]), halves, with_trajectory(NAIVE_FIXED))
    assert traj.steps[1].x_t[0] == pytest.approx(np.sqrt(0.5) * 0.9, abs=1e-12)
    assert traj.steps[1].x_t[0] == pytest.approx(0.6364, abs=1e-4)
    assert out[0] == pytest.approx(0.9, abs=1e-15)


def test_single_step_schedule_returns_restoration(rng):
    one = make_cosine_schedule(1)
    x = rng.normal(size=12)
    R = Biased(rng.normal(size=12))
    out, _ = improved_sampling(R, x, one, IMPROVED)
    np.testing.assert_array_equal(out, R.restore(x, 1))
    # identity restorer with fixed endpoint: degrade(x_1, x_T, 0) = x_1 = x_T
    out, _ = naive_sampled_reconstruction(IdentityRestorer(), x, one, NAIVE_FIXED)
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("T", [2, 10, 50])
@pytest.mark.parametrize("cfg", [IMPROVED, IMPROVED_FIXED, NAIVE, NAIVE_FIXED], ids=lambda c: c.label)
def test_oracle_exactness(T, cfg, rng):
    sched = make_cosine_schedule(T)
    x0 = rng.normal(size=64)
    xT = x0 + rng.normal(size=64)
    out, traj = run_sampler(OracleRestorer(x0), xT, sched, with_trajectory(cfg))
    np.testing.assert_allclose(out, x0, rtol=1e-9, atol=1e-12)
    for step in traj:
        np.testing.assert_allclose(step.x_t, degrade(x0, xT, sched, step.t), rtol=1e-9, atol=1e-12)


def test_variant_equivalence_under_oracle(cosine50, rng):
    x0 = rng.normal(size=30)
    xT = x0 + rng.uniform(-1, 1, size=30)
    _, a = improved_sampling(OracleRestorer(x0), xT, cosine50, with_trajectory(IMPROVED))
    _, b = improved_sampling(OracleRestorer(x0), xT, cosine50, with_trajectory(IMPROVED_FIXED))
    for sa, sb in zip(a, b):
        assert sa.t == sb.t
        np.testing.assert_allclose(sa.x_t, sb.x_t, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_final_restoration_identity(seed, cosine50):
    rng = np.random.default_rng(seed)
    R = Biased(rng.normal(size=25))
    out, traj = improved_sampling(R, rng.normal(size=25) * 3, cosine50, with_trajectory(IMPROVED))
    last = traj.steps[-2]
    assert last.t == 1
    np.testing.assert_allclose(out, R.restore(last.x_t, 1), rtol=0, atol=1e-12)


def test_naive_and_improved_coincide_when_reanchored(cosine50, rng):
    R = Biased(rng.normal(size=20))
    y = rng.normal(size=20)
    a, _ = improved_sampling(R, y, cosine50, IMPROVED)
    b, _ = naive_sampled_reconstruction(R, y, cosine50, NAIVE)
    np.testing.assert_array_equal(a, b)


def test_fixed_variants_differ_for_imperfect_restorer(cosine50, rng):
    R = Biased(rng.normal(size=20))
    y = rng.normal(size=20)
    a, _ = improved_sampling(R, y, cosine50, IMPROVED_FIXED)
    b, _ = naive_sampled_reconstruction(R, y, cosine50, NAIVE_FIXED)
    assert not np.allclose(a, b)


@pytest.mark.parametrize("T_start", [None, 7])
def test_restorer_call_count(cosine50, rng, T_start):
    counter = CountingRestorer(IdentityRestorer())
    cfg = SamplerConfig("improved", "reanchored", T_start=T_start)
    improved_sampling(counter, rng.normal(size=8), cosine50, cfg)
    assert counter.calls == (50 if T_start is None else 7)
    assert steps_for(cfg, cosine50) == counter.calls
    counter = CountingRestorer(IdentityRestorer())
    run_sampler(counter, rng.normal(size=8), cosine50, SamplerConfig("direct"))
    assert counter.calls == 1


def test_trajectory_is_off_by_default(cosine50, rng):
    _, traj = improved_sampling(IdentityRestorer(), rng.normal(size=8), cosine50)
    assert traj is None


def test_trajectory_l1(halves):
    _, traj = improved_sampling(OracleRestorer([1.0]), np.array([0.0]), halves, with_trajectory(IMPROVED))
    dists = traj.l1_to([1.0])
    assert [t for t, _ in dists] == [2, 1, 0]
    assert dists[0][1] == pytest.approx(1.0)
    assert dists[-1][1] == pytest.approx(0.0, abs=1e-15)


def test_non_finite_restoration_is_reported(cosine50):
    class Exploding:
        def restore(self, x_t, t):
            return np.full(np.shape(x_t), np.inf if t == 30 else 0.0)

    with pytest.raises(NumericError, match="t=30"):
        improved_sampling(Exploding(), np.zeros(4), cosine50)


def test_config_validation(cosine50):
    with pytest.raises(InvalidParameterError):
        SamplerConfig("ddpm")
    with pytest.raises(InvalidParameterError):
        SamplerConfig("improved", "other")
    with pytest.raises(InvalidParameterError):
        SamplerConfig("improved", T_start=0)
    with pytest.raises(InvalidParameterError):
        improved_sampling(IdentityRestorer(), np.zeros(3), cosine50, SamplerConfig("improved", T_start=51))
    with pytest.raises(InvalidParameterError):
        improved_sampling(IdentityRestorer(), np.zeros(3), cosine50, NAIVE)


def test_batched_sampling_matches_rows(cosine50, rng):
    x0 = rng.normal(size=(3, 10))
    y = x0 + rng.normal(size=(3, 10))

    class RowBiased:
        def restore(self, x_t, t):
            return 0.5 * x_t + 0.01 * t

    batch, _ = improved_sampling(RowBiased(), y, cosine50, IMPROVED_FIXED)
    for i in range(3):
        row, _ = improved_sampling(RowBiased(), y[i], cosine50, IMPROVED_FIXED)
        np.testing.assert_allclose(batch[i], row, rtol=1e-14)
