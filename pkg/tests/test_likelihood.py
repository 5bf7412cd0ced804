import math
import threading

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from epicross.epidemic import (
    AdjacencyVector,
    EpidemicParams,
    NetworkState,
    Trajectory,
    build_generator,
    chain_network,
    ssa_simulate,
    transition_matrix,
)
from epicross.likelihood import (
    EvalCache,
    TemperConfig,
    TemperOverflowError,
    TemperedObjective,
    cache_argmax,
    evaluate_cached,
    log_likelihood,
    tempered_objective,
)

# two-node reference scenario solved independently with a high-order ODE
# integrator; the value is frozen so regressions are caught even if the
# integrator check ever changes
REF_PARAMS = EpidemicParams(beta=1.3, gamma=0.7, eps=0.05)
REF_NETWORK = AdjacencyVector((1,))
REF_DATA = Trajectory(np.array([0.0, 0.5, 1.0, 1.5]),
                      np.array([[1, 0], [1, 1], [0, 1], [0, 1]]))
REF_LOGLIK = -3.8878921922589722


def ode_log_likelihood(g, data, params):
    """Reference likelihood by integrating the master equation per step."""
    q = build_generator(g, params).dense()
    idx = data.state_indices()
    total = 0.0
    for k in range(data.n_steps):
        p0 = np.zeros(q.shape[0])
        p0[idx[k]] = 1.0
        span = (data.times[k], data.times[k + 1])
        sol = solve_ivp(lambda t, y: q @ y, span, p0, method="DOP853",
                        rtol=1e-12, atol=1e-14)
        total += math.log(sol.y[idx[k + 1], -1])
    return total


class TestLogLikelihood:
    def test_matches_ode_oracle(self):
        ll = log_likelihood(REF_NETWORK, REF_DATA, REF_PARAMS)
        assert ll == pytest.approx(ode_log_likelihood(REF_NETWORK, REF_DATA, REF_PARAMS),
                                   abs=1e-9)
        assert ll == pytest.approx(REF_LOGLIK, abs=1e-9)

    def test_matches_ode_oracle_random(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            n = 3
            g = AdjacencyVector(tuple(int(b) for b in rng.integers(0, 2, size=3)))
            params = EpidemicParams(*rng.uniform(0.1, 1.5, size=3))
            traj = ssa_simulate(g, params, 0.25, 3.0,
                                NetworkState((1, 0, 0)), seed=int(rng.integers(1e6)))
            ll = log_likelihood(g, traj, params)
            assert ll == pytest.approx(ode_log_likelihood(g, traj, params), abs=1e-8)

    def test_factorizes_over_steps(self):
        # mixed step lengths: likelihood is the product of per-step entries
        g = REF_NETWORK
        times = np.array([0.0, 0.1, 0.3, 0.4, 0.6])
        states = np.array([[1, 0], [1, 1], [1, 1], [0, 1], [1, 1]])
        data = Trajectory(times, states)
        q = build_generator(g, REF_PARAMS)
        idx = data.state_indices()
        expected = 0.0
        for k in range(4):
            m = transition_matrix(q, times[k + 1] - times[k])
            expected += math.log(m.probs[idx[k + 1], idx[k]])
        assert log_likelihood(g, data, REF_PARAMS) == pytest.approx(expected, rel=1e-12)

    def test_uniform_grid_single_solve_consistent(self):
        # grid times built by accumulation differ in ulps from k*dt; the
        # grouped solve must not split on that
        times_exact = np.arange(6) * 0.1
        times_accum = np.zeros(6)
        for k in range(1, 6):
            times_accum[k] = times_accum[k - 1] + 0.1
        states = np.array([[1, 0], [1, 1], [0, 1], [1, 1], [1, 0], [1, 1]])
        a = log_likelihood(REF_NETWORK, Trajectory(times_exact, states), REF_PARAMS)
        b = log_likelihood(REF_NETWORK, Trajectory(times_accum, states), REF_PARAMS)
        assert a == pytest.approx(b, rel=1e-12)

    def test_dense_and_column_paths_agree(self):
        g = chain_network(4)
        params = EpidemicParams(1.0, 0.5, 0.01)
        traj = ssa_simulate(g, params, 0.1, 20.0, NetworkState((1, 0, 0, 0)), seed=5)
        dense = log_likelihood(g, traj, params)
        columns = log_likelihood(g, traj, params, dense_limit=1)
        assert columns == pytest.approx(dense, abs=1e-8)

    def test_never_positive(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            n = int(rng.integers(2, 5))
            d = n * (n - 1) // 2
            g = AdjacencyVector(tuple(int(b) for b in rng.integers(0, 2, size=d)))
            params = EpidemicParams(*rng.uniform(0.05, 2.0, size=3))
            traj = ssa_simulate(g, params, 0.2, 4.0,
                                NetworkState((1,) + (0,) * (n - 1)),
                                seed=int(rng.integers(1e6)))
            assert log_likelihood(g, traj, params) <= 0.0

    def test_impossible_transition_is_minus_inf(self):
        # eps = 0 and no edges: nobody can become infected
        params = EpidemicParams(beta=1.0, gamma=0.5, eps=0.0)
        data = Trajectory(np.array([0.0, 0.1]), np.array([[0, 0], [1, 0]]))
        assert log_likelihood(AdjacencyVector((0,)), data, params) == -math.inf

    def test_empty_product(self):
        data = Trajectory(np.array([0.0]), np.array([[1, 0]]))
        assert log_likelihood(REF_NETWORK, data, REF_PARAMS) == 0.0

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            log_likelihood(chain_network(3), REF_DATA, REF_PARAMS)


class TestTempering:
    def test_formula(self):
        cfg = TemperConfig(tau=2.0, log_shift=-5.0)
        assert tempered_objective(-3.0, cfg) == pytest.approx(math.exp(1.0))
        assert tempered_objective(-5.0, cfg) == 1.0

    def test_zero_likelihood_maps_to_zero(self):
        assert tempered_objective(-math.inf, TemperConfig(tau=1.0)) == 0.0

    def test_overflow_aborts_with_payload(self):
        cfg = TemperConfig(tau=1.0, log_shift=0.0)
        with pytest.raises(TemperOverflowError) as exc:
            tempered_objective(800.0, cfg, g="101")
        assert exc.value.g == "101"
        assert exc.value.loglik == 800.0
        assert exc.value.config == cfg

    def test_tau_controls_overflow_onset(self):
        cfg10 = TemperConfig(tau=10.0, log_shift=0.0)
        assert tempered_objective(800.0, cfg10) == pytest.approx(math.exp(80.0))

    def test_validation(self):
        with pytest.raises(ValueError):
            TemperConfig(tau=0.0)
        with pytest.raises(ValueError):
            TemperConfig(tau=-1.0)
        with pytest.raises(ValueError):
            TemperConfig(tau=1.0, log_shift=math.inf)
        with pytest.raises(ValueError):
            tempered_objective(math.nan, TemperConfig(tau=1.0))

    def test_shift_is_pure_rescaling(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            tau = float(rng.uniform(0.5, 50.0))
            s1, s2 = rng.uniform(-100.0, 100.0, size=2)
            ll = float(rng.uniform(-150.0, 50.0))
            a = tempered_objective(ll, TemperConfig(tau=tau, log_shift=s1))
            b = tempered_objective(ll, TemperConfig(tau=tau, log_shift=s2))
            assert a == pytest.approx(b * math.exp((s2 - s1) / tau), rel=1e-12)


class TestEvalCache:
    def test_compute_once(self):
        cache = EvalCache()
        calls = []

        def compute():
            calls.append(1)
            return -1.5

        assert cache.get_or_compute("10", compute) == -1.5
        assert cache.get_or_compute("10", compute) == -1.5
        assert len(calls) == 1
        assert cache.n_evaluations == 1
        assert cache.n_hits == 1
        assert cache.hit_fraction == 0.5
        assert "10" in cache and len(cache) == 1

    def test_argmax_tie_breaks_lexicographic(self):
        cache = EvalCache()
        cache.get_or_compute("110", lambda: -2.0)
        cache.get_or_compute("011", lambda: -2.0)
        cache.get_or_compute("111", lambda: -5.0)
        key, ll = cache.argmax()
        assert key == "011"
        assert ll == -2.0
        g, ll2 = cache_argmax(cache)
        assert g.bitstring == "011" and ll2 == -2.0

    def test_argmax_skips_zero_likelihood(self):
        cache = EvalCache()
        cache.get_or_compute("1", lambda: -math.inf)
        with pytest.raises(ValueError):
            cache.argmax()
        cache.get_or_compute("0", lambda: -7.0)
        assert cache.argmax() == ("0", -7.0)

    def test_save_load_roundtrip(self, tmp_path):
        cache = EvalCache()
        cache.get_or_compute("101", lambda: -1.2345678901234567)
        cache.get_or_compute("010", lambda: -math.inf)
        path = tmp_path / "cache.csv"
        cache.save(path)
        assert path.read_text().splitlines()[0] == "g,loglik"
        back = EvalCache.load(path)
        assert back.lookup("101") == cache.lookup("101")
        assert back.lookup("010") == -math.inf
        assert back.n_evaluations == 0 and back.n_hits == 0

    def test_load_rejects_bad_header(self, tmp_path):
        path = tmp_path / "cache.csv"
        path.write_text("network,value\n")
        with pytest.raises(ValueError):
            EvalCache.load(path)

    def test_thread_safety_counts(self):
        cache = EvalCache()
        keys = [format(i % 8, "03b") for i in range(400)]

        def worker(chunk):
            for key in chunk:
                cache.get_or_compute(key, lambda k=key: -float(int(k, 2)))

        threads = [threading.Thread(target=worker, args=(keys[i::4],)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(cache) == 8
        # every request was either a hit or an evaluation
        assert cache.n_evaluations + cache.n_hits == 400
        assert cache.n_evaluations >= 8


class TestTemperedObjective:
    def make(self, tau=1.0):
        params = EpidemicParams(1.0, 0.5, 0.05)
        data = ssa_simulate(chain_network(3), params, 0.1, 10.0,
                            NetworkState((1, 0, 0)), seed=11)
        g0 = chain_network(3)
        ll0 = log_likelihood(g0, data, params)
        obj = TemperedObjective(data, params, TemperConfig(tau=tau, log_shift=ll0))
        return obj, g0, ll0

    def test_call_and_counters(self):
        obj, g0, ll0 = self.make()
        assert obj(g0.bits) == pytest.approx(1.0)
        assert obj.n_evaluations == 1
        obj(g0.bits)
        assert obj.n_hits == 1
        obj((0, 0, 0))
        assert obj.n_evaluations == 2

    def test_argmax_matches_cache(self):
        obj, g0, ll0 = self.make()
        for code in range(8):
            obj(tuple((code >> i) & 1 for i in range(3)))
        bits, value = obj.argmax()
        key, ll = obj.cache.argmax()
        assert "".join(map(str, bits)) == key
        assert value == pytest.approx(math.exp(ll - ll0))
        assert obj.max_value == value

    def test_retemper_shares_cache(self):
        obj, g0, ll0 = self.make()
        obj(g0.bits)
        hot = obj.retemper(TemperConfig(tau=10.0, log_shift=ll0))
        assert hot(g0.bits) == pytest.approx(1.0)
        assert hot.n_evaluations == 1  # served from the shared cache
        assert hot.n_hits == 1

    def test_evaluate_cached_roundtrip(self):
        params = EpidemicParams(1.0, 0.5, 0.05)
        data = ssa_simulate(chain_network(3), params, 0.1, 5.0,
                            NetworkState((1, 0, 0)), seed=12)
        cache = EvalCache()
        cfg = TemperConfig(tau=2.0, log_shift=-10.0)
        g = chain_network(3)
        v1 = evaluate_cached(g, data, params, cfg, cache)
        v2 = evaluate_cached(g, data, params, cfg, cache)
        assert v1 == v2
        assert cache.n_evaluations == 1 and cache.n_hits == 1
        assert v1 == pytest.approx(math.exp((cache.lookup(g.bitstring) + 10.0) / 2.0))

    def test_temperature_preserves_argmax(self):
        params = EpidemicParams(1.0, 0.5, 0.05)
        data = ssa_simulate(chain_network(3), params, 0.1, 10.0,
                            NetworkState((1, 0, 0)), seed=13)
        ll0 = log_likelihood(chain_network(3), data, params)
        winners = []
        for tau in (1.0, 10.0, 100.0):
            obj = TemperedObjective(data, params, TemperConfig(tau=tau, log_shift=ll0))
            for code in range(8):
                obj(tuple((code >> i) & 1 for i in range(3)))
            winners.append(obj.argmax()[0])
        assert winners[0] == winners[1] == winners[2]
