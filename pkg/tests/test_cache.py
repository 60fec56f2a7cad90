import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magcache.cache import (
    PRESETS,
    UNBOUNDED,
    CacheConfig,
    CacheState,
    Decision,
    ErrorModel,
    MagCacheController,
    decide,
    derive_schedule,
    dumps_schedule,
    loads_schedule,
    on_residual,
    retained_prefix_length,
    skip_error,
)
from magcache.calibrate import MagnitudeCurve
from magcache.errors import ConfigError, IndexOutOfRange, MalformedDocument, ProtocolViolation

import oracles


def const_curve(g, n):
    return MagnitudeCurve("const", np.array([1.0] + [g] * (n - 1)))


def test_skip_error_examples():
    curve = MagnitudeCurve("c", np.array([1, 0.98, 0.97]))
    assert skip_error(curve, 0, 2) == pytest.approx(0.0494, abs=1e-15)
    ones = MagnitudeCurve("c", np.ones(5))
    assert skip_error(ones, 1, 4) == 0.0
    assert skip_error(ones, 1, 4, ErrorModel.NAIVE) == 0.0
    above = MagnitudeCurve("c", np.array([1, 1.05]))
    assert skip_error(above, 0, 1, ErrorModel.NAIVE) == pytest.approx(0.05)
    assert skip_error(above, 0, 1) == pytest.approx(0.05)
    with pytest.raises(IndexOutOfRange):
        skip_error(curve, 1, 1)
    with pytest.raises(IndexOutOfRange):
        skip_error(curve, 0, 3)


def test_retained_prefix():
    assert retained_prefix_length(0.2, 50) == 10
    assert retained_prefix_length(0.2, 30) == 6
    assert retained_prefix_length(0.0, 50) == 0
    assert retained_prefix_length(0.29, 100) == 29
    assert retained_prefix_length(1.0, 7) == 7


def test_first_step_computes():
    d, state = decide(CacheState(), CacheConfig(UNBOUNDED, 10, 0.0), const_curve(1.0, 4), 0)
    assert d is Decision.COMPUTE
    assert state.pending == 0


def test_accumulation_pattern():
    curve = const_curve(0.99, 9)
    sched = derive_schedule(curve, CacheConfig(0.05, 10, 0.0))
    assert "".join("C" if d else "S" for d in sched.decisions) == "CSSCSSCSS"
    np.testing.assert_allclose(sched.estimated_error[:3], [0, 0.01, 0.0299], atol=1e-12)


def test_k_bound_pattern():
    sched = derive_schedule(const_curve(0.9, 13), CacheConfig(UNBOUNDED, 3, 0.0))
    assert sched.computed_steps == [0, 4, 8, 12]
    assert sched.model_call_speedup == 3.25


@pytest.mark.parametrize("cfg", [CacheConfig(0.0, 5, 0.0), CacheConfig(1.0, 0, 0.0)])
def test_degenerate_configs_compute_everything(cfg):
    sched = derive_schedule(const_curve(1.0, 12), cfg)
    assert sched.decisions.all()
    assert sched.model_call_speedup == 1.0


def test_wan_slow_prefix_and_reference():
    rng = np.random.default_rng(3)
    gamma = np.concatenate([[1.0], np.sort(rng.uniform(0.9, 1.0, 49))[::-1]])
    curve = MagnitudeCurve("wan-like", gamma)
    cfg = PRESETS["wan-slow"]
    assert (cfg.delta, cfg.max_skip, cfg.retain_fraction) == (0.12, 2, 0.2)
    sched = derive_schedule(curve, cfg)
    assert sched.decisions[:10].all()
    ref_dec, ref_err = oracles.schedule_ref(gamma, 0.12, 2, 0.2)
    assert sched.decisions.tolist() == ref_dec
    np.testing.assert_allclose(sched.estimated_error, ref_err, rtol=0, atol=1e-15)


def test_presets():
    assert {k: (v.delta, v.max_skip) for k, v in PRESETS.items()} == {
        "open-sora-fast": (0.12, 3),
        "open-sora-slow": (0.06, 1),
        "wan-fast": (0.12, 4),
        "wan-slow": (0.12, 2),
    }
    assert all(v.retain_fraction == 0.2 for v in PRESETS.values())


def test_pinned_steps_forced():
    curve = MagnitudeCurve("c", np.ones(10), pinned_steps=frozenset({5}))
    cfg = CacheConfig(UNBOUNDED, 100, 0.0, pinned_steps=frozenset({7}))
    assert derive_schedule(curve, cfg).computed_steps == [0, 5, 7]


def test_on_residual_protocol():
    curve = const_curve(0.99, 5)
    cfg = CacheConfig(0.05, 3, 0.0)
    ctl = MagCacheController(cfg, curve)
    assert ctl.decide(0) is Decision.COMPUTE
    r0 = np.full((2, 2), 3.0)
    ctl.on_residual(0, r0)
    assert ctl.cached_residual is r0
    assert ctl.decide(1) is Decision.SKIP
    with pytest.raises(ProtocolViolation):
        ctl.on_residual(1, r0)
    assert ctl.decide(2) is Decision.SKIP
    assert ctl.cached_residual is r0
    assert ctl.decide(3) is Decision.COMPUTE
    with pytest.raises(ProtocolViolation):
        ctl.decide(4)  # residual for step 3 never supplied


def test_on_residual_without_decision():
    with pytest.raises(ProtocolViolation):
        on_residual(CacheState(), 0, np.zeros(1))


def test_decide_is_pure():
    curve = const_curve(0.99, 6)
    cfg = CacheConfig(0.05, 3, 0.0)
    state = CacheState(last_computed=0, cached_residual=np.zeros(1))
    first = decide(state, cfg, curve, 1)
    second = decide(state, cfg, curve, 1)
    assert first[0] == second[0]
    assert first[1].accumulated_error == second[1].accumulated_error
    assert state.accumulated_error == 0.0


def test_config_validation():
    with pytest.raises(ConfigError):
        CacheConfig(-0.1, 2)
    with pytest.raises(ConfigError):
        CacheConfig(0.1, -1)
    with pytest.raises(ConfigError):
        CacheConfig(0.1, 2, retain_fraction=1.5)
    with pytest.raises(ConfigError):
        CacheConfig(float("nan"), 2)


def test_schedule_json_roundtrip():
    sched = derive_schedule(const_curve(0.97, 20), CacheConfig(UNBOUNDED, 2, 0.1, frozenset({15})))
    text = dumps_schedule(sched)
    back = loads_schedule(text)
    assert back == sched
    assert dumps_schedule(back) == text
    assert '"delta": "unbounded"' in text


def test_schedule_json_malformed():
    with pytest.raises(MalformedDocument):
        loads_schedule('{"decisions": [1, 0]}')
    good = dumps_schedule(derive_schedule(const_curve(0.97, 5), CacheConfig(0.1, 2, 0.0)))
    with pytest.raises(MalformedDocument):
        loads_schedule(good.replace('"computed_count": ', '"computed_count": 9'))


curves = st.builds(
    lambda seed, n, spread: MagnitudeCurve(
        "h", np.concatenate([[1.0], np.clip(1 + np.random.default_rng(seed).normal(0, spread, n - 1), 0.05, None)])
    ),
    st.integers(0, 2**32 - 1), st.integers(2, 40), st.sampled_from([0.0, 0.005, 0.03, 0.2]),
)
configs = st.builds(
    CacheConfig,
    delta=st.one_of(st.just(0.0), st.floats(0.0, 0.5), st.just(UNBOUNDED)),
    max_skip=st.integers(0, 8),
    retain_fraction=st.sampled_from([0.0, 0.1, 0.2, 0.5]),
    pinned_steps=st.frozensets(st.integers(0, 45), max_size=4),
    error_model=st.sampled_from(list(ErrorModel)),
)


@settings(max_examples=200, deadline=None)
@given(curve=curves, cfg=configs)
def test_schedule_invariants(curve, cfg):
    sched = derive_schedule(curve, cfg)
    dec = sched.decisions
    assert dec[0]
    prefix = retained_prefix_length(cfg.retain_fraction, curve.num_steps)
    assert dec[:prefix].all()
    for p in cfg.pinned_steps | curve.pinned_steps:
        if p < curve.num_steps:
            assert dec[p]
    run = 0
    for d in dec:
        run = 0 if d else run + 1
        assert run <= cfg.max_skip
    skipped = ~dec
    if math.isfinite(cfg.delta):
        assert np.all(sched.estimated_error[skipped] <= cfg.delta)
    assert np.all(sched.estimated_error[dec] == 0.0)
    if cfg.delta == 0 or cfg.max_skip == 0:
        assert dec.all() and sched.model_call_speedup == 1.0
    assert sched.model_call_speedup == curve.num_steps / sched.computed_count
    ref_dec, ref_err = oracles.schedule_ref(
        curve.gamma, cfg.delta, cfg.max_skip, cfg.retain_fraction,
        cfg.pinned_steps, cfg.error_model is ErrorModel.NAIVE,
    )
    assert dec.tolist() == ref_dec
    np.testing.assert_allclose(sched.estimated_error, ref_err, rtol=1e-13, atol=0)
    assert derive_schedule(curve, cfg) == sched


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 30))
def test_naive_bounded_by_multiplicative(seed, n):
    rng = np.random.default_rng(seed)
    gamma = np.concatenate([[1.0], np.sort(rng.uniform(0.5, 1.0, n - 1))[::-1]])
    curve = MagnitudeCurve("mono", gamma)
    for t_hat in range(n - 1):
        for t in range(t_hat + 1, n):
            assert skip_error(curve, t_hat, t, ErrorModel.NAIVE) <= skip_error(curve, t_hat, t) + 1e-15
