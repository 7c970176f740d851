import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdmkit import autodiff as ad
from vdmkit.errors import ConfigurationError, DomainError, ScheduleInvalidError
from vdmkit.schedule import (KINDS, MonotonicNetParams, NoiseSchedule, ScheduleEndpoints, gamma_tilde,
                             implied_weighting, snr_alpha_sigma, write_analysis_csv)

import oracles
from conftest import random_learned_schedule


def all_schedules(rng):
    return [random_learned_schedule(rng), NoiseSchedule("log-snr-linear"), NoiseSchedule("beta-linear"),
            NoiseSchedule("alpha-cosine"), NoiseSchedule("beta-linear", ScheduleEndpoints(-10, 10)),
            NoiseSchedule("alpha-cosine", ScheduleEndpoints(-10, 10))]


def identity_net():
    return MonotonicNetParams.from_effective(1.0, 0.0, np.zeros(4), np.zeros(4), np.zeros(4), 0.0)


def test_endpoints_must_be_ordered():
    with pytest.raises(ConfigurationError):
        ScheduleEndpoints(1.0, 1.0)


def test_gamma_tilde_examples():
    net = identity_net()
    g = ad.value_of(gamma_tilde(net, np.array([0.2, 0.7])))
    assert g[1] - g[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        gamma_tilde(net, 1.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gamma_tilde_monotone_for_any_weights(seed):
    rng = np.random.default_rng(seed)
    w = 16
    net = MonotonicNetParams(rng.normal(0, 3), rng.normal(0, 3), rng.normal(0, 3, w), rng.normal(0, 3, w),
                             rng.normal(0, 3, w), rng.normal(0, 3))
    assert all(np.all(ad.value_of(e) > 0) for e in net.effective())
    g = ad.value_of(gamma_tilde(net, np.linspace(0, 1, 10_000)))
    assert np.diff(g).min() >= -1e-12


def test_gamma_examples():
    assert NoiseSchedule("beta-linear").gamma_value(1.0) == pytest.approx(oracles.BETA_LINEAR_GAMMA_1, abs=1e-12)
    assert NoiseSchedule("log-snr-linear").gamma_value(0.0) == pytest.approx(oracles.NCSN_GAMMA_0, abs=1e-12)
    s = NoiseSchedule("learned-monotonic", ScheduleEndpoints(-7.5, 4.25), identity_net())
    assert s.gamma_value(0.0) == -7.5 and s.gamma_value(1.0) == 4.25
    a = NoiseSchedule("alpha-cosine").gamma_value(np.array([0.0, 1.0]))
    assert a == pytest.approx([oracles.COSINE_GAMMA_0, oracles.COSINE_GAMMA_1], abs=1e-9)
    with pytest.raises(ConfigurationError):
        NoiseSchedule("learned-monotonic")
    with pytest.raises(ConfigurationError):
        NoiseSchedule("quadratic")


def test_gamma_prime_examples():
    lin = NoiseSchedule("log-snr-linear")
    assert lin.gamma_prime_value(np.array([0.1, 0.5, 0.9])) == pytest.approx(oracles.NCSN_SLOPE, abs=1e-12)
    s = NoiseSchedule("learned-monotonic", ScheduleEndpoints(-7.5, 4.25), identity_net())
    assert s.gamma_prime_value(np.linspace(0.01, 0.99, 9)) == pytest.approx(11.75, abs=1e-12)
    beta = NoiseSchedule("beta-linear")
    h = 1e-6
    fd = (beta.gamma_value(0.5 + h) - beta.gamma_value(0.5 - h)) / (2 * h)
    assert abs(fd - beta.gamma_prime_value(0.5)) / abs(fd) < 1e-6


def test_schedule_properties(rng):
    t = np.linspace(0, 1, 10_001)
    inner = rng.uniform(0.01, 0.99, 100)
    for s in all_schedules(rng):
        g = s.gamma_value(t)
        assert np.diff(g).min() > -1e-12, s
        h = 1e-6
        fd = (s.gamma_value(inner + h) - s.gamma_value(inner - h)) / (2 * h)
        gp = s.gamma_prime_value(inner)
        assert np.all(gp > 0)
        assert np.max(np.abs(fd - gp) / np.abs(gp)) < 1e-6, s
        snr, a2, s2 = snr_alpha_sigma(s, t)
        assert np.max(np.abs(snr * s2 - a2)) < 1e-12
        assert np.max(np.abs(a2 + s2 - 1)) < 1e-15


def test_endpoint_exactness(rng):
    for ends in [ScheduleEndpoints(-10, 10), ScheduleEndpoints(-13.3, 5.7)]:
        for s in [random_learned_schedule(rng, endpoints=ends), NoiseSchedule("log-snr-linear", ends)]:
            assert abs(s.gamma_value(0.0) - ends.gamma0) <= 1e-12
            assert abs(s.gamma_value(1.0) - ends.gamma1) <= 1e-12


def test_snr_alpha_sigma_examples():
    const = NoiseSchedule("log-snr-linear", ScheduleEndpoints(-1e-9, 1e-9))
    snr, a2, s2 = snr_alpha_sigma(const, 0.5)
    assert (snr, a2, s2) == pytest.approx((1.0, 0.5, 0.5), abs=1e-9)
    g = -np.log(4.0)
    four = NoiseSchedule("log-snr-linear", ScheduleEndpoints(g - 1, g + 1))
    assert snr_alpha_sigma(four, 0.5)[0] == pytest.approx(4.0, rel=1e-14)


def test_implied_weighting():
    t = np.linspace(0.01, 0.99, 99)
    w = implied_weighting(NoiseSchedule("log-snr-linear"), t)
    assert w == pytest.approx(oracles.NCSN_WEIGHT, abs=1e-15)
    s = NoiseSchedule("learned-monotonic", ScheduleEndpoints(-7.5, 4.25), identity_net())
    assert implied_weighting(s, t) == pytest.approx(1 / 11.75, rel=1e-12)
    beta = NoiseSchedule("beta-linear")
    ratio = implied_weighting(beta, 0.5) / implied_weighting(beta, 0.01)
    assert ratio == pytest.approx(oracles.BETA_WEIGHT_RATIO_HALF_VS_001, rel=1e-9)
    with pytest.raises(ScheduleInvalidError):
        implied_weighting(beta, 0.0)


def test_analysis_csv(tmp_path):
    ends = ScheduleEndpoints(-10.0, 10.0)
    first_last = []
    for kind in ("log-snr-linear", "beta-linear", "alpha-cosine"):
        path = write_analysis_csv(NoiseSchedule(kind, ends), tmp_path / f"{kind}.csv", grid_size=101)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "gamma", "snr", "alpha_sq", "sigma_sq", "gamma_prime", "implied_weight"]
        body = np.array(rows[1:], dtype=float)
        assert body.shape == (101, 7)
        first_last.append((body[0, 1], body[-1, 1]))
        if kind == "log-snr-linear":
            assert np.ptp(body[:, 5]) == 0
    assert all(fl == pytest.approx((-10.0, 10.0), abs=1e-12) for fl in first_last)
    path = write_analysis_csv(NoiseSchedule("beta-linear"), tmp_path / "natural.csv", grid_size=11)
    assert float(list(csv.reader(open(path)))[-1][1]) == pytest.approx(oracles.BETA_LINEAR_GAMMA_1, abs=1e-12)


def test_kinds_listed():
    assert set(KINDS) == {"learned-monotonic", "log-snr-linear", "beta-linear", "alpha-cosine"}
