"""The ten acceptance criteria, each at its stated tolerance and budget.

Every criterion records one PASS/FAIL line, printed in the session summary.
"""

import itertools
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

import conftest
from o2osim.analysis import (
    IntentionLog,
    density_heatmap,
    path_coefficients,
    risk_avoidant_trend,
    stage_flow_matrix,
    standardized_ols,
)
from o2osim.cli import main, stage_window
from o2osim.config import FactorSpec, RunConfig, default_zones
from o2osim.engine import run
from o2osim.experiment import EmergenceTree, ResultRow, ResultTable, ate, build_design, emergence_probability, execute_design
from o2osim.metrics import (
    InvolutionLevel,
    UtilityParams,
    benchmark_compare,
    classify_involution,
    crra,
    gini,
    involution_index,
    rider_utility,
    welfare,
)

SEEDS = list(range(10))
DESK = {"world.n_riders": 50, "world.horizon": 1200}


@contextmanager
def criterion(n, title):
    t0 = time.perf_counter()

    def record(ok, detail=""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:6.1f}s) {title}"
        conftest.ACCEPTANCE_LINES[n] = line + (f": {detail}" if detail else "")
        print(conftest.ACCEPTANCE_LINES[n])

    try:
        yield
    except BaseException as exc:
        record(False, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
        raise
    record(True)


def within(x, expected, rel=1e-9):
    return math.isclose(x, expected, rel_tol=rel, abs_tol=0.0 if expected else 1e-12)


def brute_gini(x):
    n, mu = len(x), sum(x) / len(x)
    return sum(abs(a - b) for a, b in itertools.product(x, x)) / (2 * n * n * mu)


def test_c01_metric_oracles():
    with criterion(1, "metric oracles exact to 1e-9, < 1 s"):
        t0 = time.perf_counter()
        assert all(crra(1.0, eta) == 0.0 for eta in (0.1, 0.5, 1.0, 2.0))
        assert within(crra(4.0, 0.5), 2.0)
        assert within(crra(math.e, 1.0), 1.0)
        p = UtilityParams(eta=0.5)
        assert within(rider_utility(4, 1, p), 1.0)
        assert rider_utility(1, 0, p) == 0.0
        assert within(rider_utility(0, 0, p), -2.0)
        assert gini([1, 1, 1, 1]) == 0.0 and gini([5]) == 0.0
        assert within(gini([0, 0, 0, 10]), 0.75) and within(brute_gini([0, 0, 0, 10]), 0.75)
        w = welfare([2, 2])
        assert (w.eq, w.prod, w.swf) == (1.0, 4.0, 4.0)
        w = welfare([0, 0, 0, 10])
        assert abs(w.eq) < 1e-12 and w.prod == 10 and abs(w.swf) < 1e-12
        w = welfare([3, 1])
        assert within(gini([3, 1]), 0.25) and within(w.eq, 0.5) and w.prod == 4 and within(w.swf, 2.0)
        with pytest.raises(ValueError, match="equality undefined for N<2"):
            welfare([1])
        assert within(involution_index(100, [1, 3]), 50.0)
        assert involution_index(0, [1, 3]) == 0.0
        with pytest.raises(ValueError, match="non-positive average utility"):
            involution_index(100, [-1, -1])
        levels = [classify_involution(v) for v in (25, 45, 72, 30, 60.0001)]
        assert levels == [InvolutionLevel.LOW, InvolutionLevel.MODERATE, InvolutionLevel.HIGH,
                          InvolutionLevel.LOW, InvolutionLevel.HIGH]
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0, f"took {elapsed:.2f}s"


@pytest.fixture(scope="module")
def default_experiment(tmp_path_factory):
    base = tmp_path_factory.mktemp("default_experiment")
    cfg = base / "default.toml"
    cfg.write_text("[experiment]\nreplicates = 10\n")
    timings = {}
    for par in (1, 8):
        t0 = time.perf_counter()
        code = main(["experiment", "--config", str(cfg), "--out", str(base / f"p{par}"), "--parallel", str(par)])
        timings[par] = (code, time.perf_counter() - t0)
    return base, cfg, timings


def test_c02_determinism(tmp_path, default_experiment):
    with criterion(2, "byte-identical traces; parallel 1 vs 8 results identical; < 2 min each"):
        base, cfg, timings = default_experiment
        for k in (1, 2):
            assert main(["simulate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / f"s{k}")]) == 0
        a = (tmp_path / "s1" / "trace.jsonl").read_bytes()
        assert a == (tmp_path / "s2" / "trace.jsonl").read_bytes()
        assert a.count(b"\n") == RunConfig().world.horizon
        for par, (code, secs) in timings.items():
            assert code == 0, f"--parallel {par} exit {code}"
            assert secs < 120, f"--parallel {par} took {secs:.0f}s"
        r1 = (base / "p1" / "results.csv").read_bytes()
        assert r1 == (base / "p8" / "results.csv").read_bytes()
        assert r1.count(b"\n") == 11


def test_observe_on_default_experiment(tmp_path, default_experiment, capsys):
    base, _, _ = default_experiment
    capsys.readouterr()
    assert main(["analyze", "--in", str(base / "p1"), "--layer", "observe", "--out", str(tmp_path)]) == 0
    assert "fraction_high" in capsys.readouterr().out


@st.composite
def random_configs(draw):
    width, height = draw(st.integers(10, 80)), draw(st.integers(10, 80))
    return RunConfig().replace(**{
        "world.width": width, "world.height": height,
        "world.zones": default_zones(width, height, draw(st.integers(1, 10))),
        "world.n_riders": draw(st.integers(2, 40)),
        "world.steps_per_day": 60, "world.horizon": draw(st.sampled_from([60, 120, 180])),
        "agents.shift_steps": draw(st.integers(10, 60)),
        "agents.intelligence": draw(st.sampled_from(["low", "medium", "high"])),
        "agents.interaction_mode": draw(st.sampled_from(["none", "local", "global"])),
        "agents.speed": draw(st.integers(1, 3)),
        "orders.volume_multiplier": draw(st.floats(0.0, 3.0)),
        "orders.expiry": draw(st.integers(1, 40)),
        "platform.governance": draw(st.sampled_from(["off", "hill_climb"])),
        "platform.epoch_steps": 30,
    })


@settings(max_examples=20, database=None)
@given(random_configs(), st.integers(0, 2**31 - 1))
def conservation_property(cfg, seed):
    tr = run(cfg, seed)
    paid = np.zeros(cfg.world.n_riders)
    for ev in tr.events:
        for _, rider, fee in ev["delivered"]:
            paid[rider] += fee
    # every unit of income is a fee paid for exactly one delivery, to the rider who delivered
    assert np.allclose(tr.income_delta.sum(axis=0), paid, rtol=1e-9, atol=1e-9)
    assert math.isclose(float(tr.income_delta.sum()), float(paid.sum()), rel_tol=1e-9, abs_tol=1e-9)
    delivered = [o for ev in tr.events for o, _, _ in ev["delivered"]]
    assert len(delivered) == len(set(delivered))
    window = cfg.world.steps_per_day
    heat = density_heatmap(tr, window)
    assert np.all(heat.sum(axis=(1, 2)) == cfg.world.n_riders * window)
    assert heat.sum() == cfg.world.n_riders * cfg.world.horizon


def test_c03_conservation():
    with criterion(3, "money and heatmap conservation on 20 random configs, < 1 min"):
        t0 = time.perf_counter()
        conservation_property()
        elapsed = time.perf_counter() - t0
        assert elapsed < 60, f"took {elapsed:.0f}s"


def sweep(path, levels, name):
    design = build_design([FactorSpec(name, list(levels))], replicates=len(SEEDS), base_seed=SEEDS[0])
    table = execute_design(design, RunConfig().replace(**DESK))
    assert all(r.ok for r in table.rows), [r.status for r in table.rows if not r.ok]
    return [float(np.median(table.column("involution_index", **{name: lv}))) for lv in levels]


def test_c04_volume_sweep():
    with criterion(4, "median index strictly decreasing in order volume, Spearman <= -0.9, < 10 min"):
        t0 = time.perf_counter()
        levels = [0.375, 0.5, 0.625, 0.75]
        medians = sweep("orders.volume_multiplier", levels, "order_volume")
        print("volume medians", dict(zip(levels, medians)))
        assert all(b < a for a, b in zip(medians, medians[1:])), medians
        rho = spearmanr(levels, medians)[0]
        assert rho <= -0.9, rho
        assert time.perf_counter() - t0 < 600


def test_c05_interaction_sweep():
    with criterion(5, "median index non-decreasing none -> local -> global, < 10 min"):
        t0 = time.perf_counter()
        levels = ["none", "local", "global"]
        medians = sweep("agents.interaction_mode", levels, "interaction")
        print("interaction medians", dict(zip(levels, medians)))
        assert all(b >= a for a, b in zip(medians, medians[1:])), medians
        assert time.perf_counter() - t0 < 600


def brute_bootstrap(t, c, B, seed):
    gen = np.random.default_rng(seed)
    diffs = []
    for _ in range(B):
        ts = [t[gen.integers(len(t))] for _ in range(len(t))]
        cs = [c[gen.integers(len(c))] for _ in range(len(c))]
        diffs.append(sum(ts) / len(ts) - sum(cs) / len(cs))
    diffs.sort()
    return diffs[int(0.025 * B)], diffs[int(0.975 * B) - 1]


def test_c06_ate_coverage():
    with criterion(6, "ATE 95% CI covers 2.0 in >= 93/100 trials; matches brute-force bootstrap, < 1 min"):
        t0 = time.perf_counter()
        n = 100
        covered = 0
        for trial in range(100):
            gen = np.random.default_rng(10_000 + trial)
            noise = gen.normal(size=2 * n)
            treatment = np.repeat([1.0, 0.0], n)
            y = 2.0 * treatment + noise
            res = ate(y[:n], y[n:], B=2000, seed=trial)
            covered += res.ci_low <= 2.0 <= res.ci_high
            if trial < 3:
                lo, hi = brute_bootstrap(y[:n].tolist(), y[n:].tolist(), 10_000, 99 + trial)
                ref = ate(y[:n], y[n:], B=10_000, seed=trial)
                assert abs(ref.ci_low - lo) < 0.03 and abs(ref.ci_high - hi) < 0.03, (ref, lo, hi)
        print("ATE coverage", covered, "/ 100")
        assert covered >= 93, f"covered {covered}/100"
        assert time.perf_counter() - t0 < 60


def test_c07_path_coefficients():
    with criterion(7, "(0.894, 0.447) to 0.02 on 1e4 rows; affine invariance to 1e-9"):
        gen = np.random.default_rng(42)
        x1, x2 = gen.normal(size=10_000), gen.normal(size=10_000)
        y = 2 * x1 + x2
        rows = [ResultRow(0, i, {"x1": a, "x2": b}, {"involution_index": v})
                for i, (a, b, v) in enumerate(zip(x1, x2, y))]
        coefs = path_coefficients(ResultTable(["x1", "x2"], rows), "involution_index", ["x1", "x2"])
        assert abs(coefs["x1"]["beta"] - 2 / math.sqrt(5)) < 0.02
        assert abs(coefs["x2"]["beta"] - 1 / math.sqrt(5)) < 0.02
        noisy_y = y + np.random.default_rng(7).normal(size=10_000)
        a = standardized_ols(np.column_stack([x1, x2]), noisy_y, ["x1", "x2"])
        b = standardized_ols(np.column_stack([10 * x1 + 3, x2]), noisy_y, ["x1", "x2"])
        for k in ("x1", "x2"):
            assert abs(a[k]["beta"] - b[k]["beta"]) < 1e-9


def leaf_oracle(e, d, a, w):
    # walk the tree: each condition either holds (continue) or fails (leaf)
    leaves = {}
    prob = e
    for name, p in (("E_fail", d), ("E_star", a), ("E_double_star", w)):
        leaves[name] = prob * (1.0 - p)
        prob = prob * p
    leaves["C"] = prob
    return leaves


def test_c08_emergence_tree():
    with criterion(8, "emergence tree equals leaf enumeration on 1000 triples; sums to p_E to 1e-12"):
        gen = np.random.default_rng(8)
        for _ in range(1000):
            d, a, w = gen.random(3).tolist()
            e = float(gen.random()) if gen.random() < 0.5 else 1.0
            got = emergence_probability(EmergenceTree(p_D=d, p_A=a, p_W=w, p_E=e))
            assert got == leaf_oracle(e, d, a, w)
            assert abs(sum(got.values()) - e) < 1e-12


def test_c09_mechanism_pipeline(default_traces):
    with criterion(9, "risk-avoidant share non-decreasing over final third in >= 7/10 seeds; flows partition"):
        config = RunConfig()
        window = stage_window(config)
        rising = []
        for seed in SEEDS:
            tr = default_traces(seed)
            logs = IntentionLog.from_trace(tr)
            flow = stage_flow_matrix(logs, window)
            assert np.allclose(flow.shares.sum(axis=1), 1.0, rtol=0, atol=1e-12)
            dominant = []
            for k, (a, b) in enumerate(flow.windows):
                block = tr.intentions[a:b]
                per_label = np.bincount(block.ravel(), minlength=3)
                assert np.allclose(flow.shares[k], per_label / block.size, rtol=0, atol=1e-12)
                # plurality label per rider, ties to the earlier label
                per_rider = np.stack([(block == lab).sum(axis=0) for lab in range(3)])
                dominant.append(np.bincount(per_rider.argmax(axis=0), minlength=3))
            for k in range(len(flow.windows) - 1):
                assert np.array_equal(flow.counts[k].sum(axis=1), dominant[k])
                assert np.array_equal(flow.counts[k].sum(axis=0), dominant[k + 1])
            rising.append(risk_avoidant_trend(flow.shares, flow.windows, tr.horizon))
        print("risk-avoidant non-decreasing by seed", rising)
        assert sum(rising) >= 7, f"{sum(rising)}/10 seeds"


def test_c10_benchmark_compare():
    with criterion(10, "benchmark comparator (1/3, 0.5774, 0.9820) to 1e-4; metric set on any series"):
        out = benchmark_compare([1, 2, 3], [1, 2, 4])
        assert abs(out["mae"] - 1 / 3) < 1e-4
        assert abs(out["rmse"] - 0.5774) < 1e-4
        assert abs(out["pearson"] - 0.9820) < 1e-4
        gen = np.random.default_rng(10)
        real = gen.gamma(4.0, size=30)
        sim = real + gen.normal(0, 0.1, size=30)
        out = benchmark_compare(real, sim)
        assert {"mae", "rmse", "pearson"} <= set(out)
        assert math.isclose(out["mae"], float(np.mean(np.abs(sim - real))), rel_tol=1e-12)
        assert math.isclose(out["rmse"], float(np.sqrt(np.mean((sim - real) ** 2))), rel_tol=1e-12)
        assert math.isclose(out["pearson"], float(np.corrcoef(real, sim)[0, 1]), rel_tol=1e-12)
        const = benchmark_compare([4.02] * 5, [4.05] * 5)
        assert abs(const["mae"] - 0.03) < 1e-9 and const["pearson"] is None and const["pearson_error"]
