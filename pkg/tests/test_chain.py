import math

import numpy as np
import pytest

import shellsde as s
from shellsde.chain import ChainCaps, chain_rng, explosion_tail_bound
from shellsde.moments import embedded_matrix


def test_embedded_step_novikov_probabilities(novikov):
    rng = chain_rng(1, 0)
    # n = 1 jumps to 2 with certainty
    for _ in range(20):
        assert s.embedded_step(novikov, 1, rng) == 2
    # bulk rows: up with probability 1/(1 + lambda^-2)
    ups = 0
    trials = 100_000
    for k in range(trials):
        ups += s.embedded_step(novikov, 5, rng) == 6
    p = ups / trials
    se = math.sqrt(0.8 * 0.2 / trials)
    assert abs(p - 0.8) <= 4 * se


def test_increment_distribution_goy_any_coefficients():
    for (a, c) in [(1.0, 0.5), (2.0, 0.1), (0.3, 0.3)]:
        spec = s.build_goy(a, -(a + c), c, 2.0, 1.0)
        inc = s.increment_distribution(spec)
        assert inc.probs.sum() == pytest.approx(1.0)
        assert inc.drift == pytest.approx(0.6, abs=1e-12)


def test_increment_distribution_novikov(novikov):
    inc = s.increment_distribution(novikov)
    table = dict(zip(inc.offsets.tolist(), inc.probs.tolist()))
    assert table[1] == pytest.approx(0.8)
    assert table[-1] == pytest.approx(0.2)
    assert inc.drift == pytest.approx(0.6)


def test_increment_reflection_relation(goy, novikov, sabra):
    for spec in (goy, novikov, sabra):
        inc = s.increment_distribution(spec)
        table = dict(zip(inc.offsets.tolist(), inc.probs.tolist()))
        for r, q in table.items():
            if r > 0:
                assert table[-r] == pytest.approx(q * spec.lam ** (-2 * r), rel=1e-12)
        assert inc.drift > 0.0


def test_holding_time_mean(novikov):
    caps = ChainCaps(max_jumps=10_000, max_level=30)
    start = np.zeros(30)
    start[2] = 1.0
    holds = []
    for rep in range(3000):
        traj = s.simulate_chain(novikov, start, 50.0, caps, chain_rng(3, rep))
        if len(traj.times) > 1 and traj.states[0] == 3:
            holds.append(traj.times[1] - traj.times[0])
        if len(holds) >= 2000:
            break
    holds = np.array(holds)
    target = 1.0 / novikov.pi_n(3)
    se = holds.std() / math.sqrt(len(holds))
    assert abs(holds.mean() - target) <= 4 * se


def test_sigma_rescaling_is_exact_time_change():
    a = s.build_novikov(2.0, 1.0)
    b = s.build_novikov(2.0, 2.0)
    caps = ChainCaps(max_jumps=100_000, max_level=40)
    start = np.zeros(40)
    start[0] = 1.0
    for rep in range(50):
        ta = s.simulate_chain(a, start, 8.0, caps, chain_rng(11, rep))
        tb = s.simulate_chain(b, start, 2.0, caps, chain_rng(11, rep))
        m = min(len(ta.times), len(tb.times))
        assert np.array_equal(ta.states[:m], tb.states[:m])
        assert np.array_equal(ta.times[:m] / 4.0, tb.times[:m])


def test_survival_basics(novikov):
    start = np.zeros(40)
    start[0] = 1.0
    est = s.survival_curve(
        novikov, start, [0.0, 0.3, 0.6, 1.2], replicates=2000, caps=ChainCaps(100_000, 40), seed=5
    )
    assert est.survival[0] == 1.0
    assert np.all(np.diff(est.survival_monotone) <= 0.0)
    assert np.all(est.occupancy.sum(axis=1) <= est.survival + 1e-12)
    assert est.tail_time_bound < 1e-20


def test_survival_matches_forward_mass(novikov):
    times = [0.3, 0.8]
    start = np.zeros(40)
    start[0] = 1.0
    est = s.survival_curve(novikov, start, times, replicates=4000, caps=ChainCaps(100_000, 40), seed=6)
    Q = s.build_qmatrix(novikov, 18)
    sol = s.solve_forward(Q, np.eye(18)[0], times)
    for ti in range(len(times)):
        assert abs(est.survival[ti] - sol.mass[ti]) <= 3.5 * max(est.se[ti], 1e-4)


def test_occupancy_matches_forward_profile(novikov):
    times = [0.4]
    start = np.zeros(40)
    start[0] = 1.0
    est = s.survival_curve(novikov, start, times, replicates=6000, caps=ChainCaps(100_000, 40), seed=8)
    Q = s.build_qmatrix(novikov, 18)
    sol = s.solve_forward(Q, np.eye(18)[0], times)
    for n in range(1, 9):
        diff = abs(est.occupancy[0, n - 1] - sol.u[0, n - 1])
        se = max(est.occupancy_se[0, n - 1], 1.0 / 6000)
        assert diff <= 3.5 * se


def test_cap_doubling_insensitive(novikov):
    start = np.zeros(80)
    start[0] = 1.0
    t = [0.5]
    small = s.survival_curve(novikov, start[:40], t, 3000, ChainCaps(50_000, 40), seed=9)
    big = s.survival_curve(novikov, start, t, 3000, ChainCaps(100_000, 80), seed=9)
    assert abs(small.survival[0] - big.survival[0]) <= small.se[0] + 2.0 / 3000


def test_absorbed_status_for_dead_model():
    import dataclasses

    spec = s.build_novikov(2.0, 1.0)
    dead = dataclasses.replace(
        spec, interactions=tuple(dataclasses.replace(it, k=0.0) for it in spec.interactions)
    )
    start = np.zeros(10)
    start[0] = 1.0
    traj = s.simulate_chain(dead, start, 5.0, ChainCaps(1000, 10), chain_rng(1, 1))
    assert traj.status == "absorbed"
    assert traj.position_at(4.9) == 1


def test_visit_statistics_match_fundamental_matrix(novikov):
    N = 10
    vs = s.visit_statistics(novikov, N, replicates=4000, seed=13)
    M = np.linalg.inv(np.eye(N) - embedded_matrix(novikov, N))
    for n in range(1, 7):
        assert abs(vs.mean_visits[n - 1] - M[n - 1, n - 1]) <= 3.5 * vs.se[n - 1]
    # shells above the start are on the escape route, so they are hit a.s.;
    # the start itself is only revisited with the return probability
    assert np.all(vs.p_visit[1:6] >= 0.95)
    assert vs.p_visit[0] == pytest.approx(0.25, abs=0.03)
    bulk = vs.mean_visits[2:7]
    assert bulk.max() - bulk.min() <= 0.3 * bulk.mean()


def test_visit_counts_geometric_tail(novikov):
    # P(V > k+1 | V > k) constant in k for the conditioned visit count
    N, shell = 10, 4
    P = embedded_matrix(novikov, N)
    counts = []
    for rep in range(4000):
        rng = chain_rng(21, rep)
        pos, c = 1, 0
        for _ in range(10_000):
            row = P[pos - 1]
            u = rng.random()
            cum = 0.0
            nxt = None
            for m in np.nonzero(row)[0]:
                cum += row[m]
                if u <= cum:
                    nxt = m + 1
                    break
            if nxt is None:
                break
            pos = nxt
            if pos == shell:
                c += 1
        counts.append(c)
    counts = np.array(counts)
    ratios = []
    for k in (1, 2, 3):
        num = (counts > k + 1).sum()
        den = (counts > k).sum()
        ratios.append(num / den)
        se = math.sqrt(ratios[-1] * (1 - ratios[-1]) / den)
        assert abs(ratios[-1] - ratios[0]) <= 4 * (se + 0.02)


def test_explosion_evidence(novikov):
    # jump count to exceed a level grows linearly, time to exceed it is summable
    caps = ChainCaps(200_000, 100)
    start = np.zeros(100)
    start[0] = 1.0
    levels = [10, 20, 40]
    med_jumps, med_times = [], []
    for L in levels:
        js, ts = [], []
        for rep in range(400):
            traj = s.simulate_chain(novikov, start, 50.0, ChainCaps(200_000, L), chain_rng(31, rep))
            if traj.status == "exploded":
                js.append(len(traj.times))
                ts.append(traj.times[-1])
        med_jumps.append(np.median(js))
        med_times.append(np.median(ts))
    # linear jump growth: roughly proportional to the level
    assert 1.5 <= med_jumps[1] / med_jumps[0] <= 3.0
    assert 1.5 <= med_jumps[2] / med_jumps[1] <= 3.0
    # times converge: going from 20 to 40 adds far less than going from 10 to 20
    assert med_times[2] - med_times[1] <= 0.5 * (med_times[1] - med_times[0]) + 0.05
    assert explosion_tail_bound(novikov, 40) <= 1e-20


def test_chain_rng_reproducible(novikov):
    start = np.zeros(20)
    start[0] = 1.0
    a = s.simulate_chain(novikov, start, 1.0, ChainCaps(1000, 20), chain_rng(5, 7))
    b = s.simulate_chain(novikov, start, 1.0, ChainCaps(1000, 20), chain_rng(5, 7))
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.states, b.states)
