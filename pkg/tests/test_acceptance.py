"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines as they pass.
"""

import json
import time
import tracemalloc

import numpy as np
import pytest

from vecmerge import (Checkpoint, MetricsTable, TaskVector, Tensor, TiesConfig,
                      apply, elect_signs, expand_sweep, extract_task_vector,
                      parse_recipe, read_archive, select_best, ties_merge,
                      trim, tv_merge, write_archive)
from vecmerge.bench import run_bench
from vecmerge.bench.model import init_model, loss_and_grads
from vecmerge.bench.data import ModelSpec, gen_dataset

from helpers import naive_ties_vector, random_checkpoint


def ok(number, label):
    print(f"CRITERION {number} ({label}): PASS")


def test_criterion_1_format_round_trip():
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    for _ in range(200):
        ckpt = random_checkpoint(rng, n_tensors=int(rng.integers(1, 21)),
                                 max_numel=4096)
        blob = write_archive(ckpt)
        again = read_archive(blob)
        assert write_archive(again) == blob
        for name in ckpt.names():
            assert again[name].dtype == ckpt[name].dtype
            np.testing.assert_array_equal(again.values(name), ckpt.values(name))
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"round-trip took {elapsed:.2f}s"
    ok(1, "format round-trip")


def test_criterion_2_tv_inversion():
    rng = np.random.default_rng(1002)
    for _ in range(50):
        base = random_checkpoint(rng, dtypes=["F32"])
        ft = Checkpoint({n: Tensor("F32", (base.values(n)
                                           + rng.normal(size=base[n].shape)).astype(np.float32))
                         for n in base.names()})
        out = apply(base, extract_task_vector(base, ft))
        for name in base.names():
            got = out.values(name).astype(np.float64)
            want = ft.values(name).astype(np.float64)
            denom = np.where(want == 0.0, 1.0, np.abs(want))
            assert np.max(np.abs(got - want) / denom, initial=0.0) <= 1e-6
    base64 = random_checkpoint(rng, dtypes=["F64"])
    ft64 = Checkpoint({n: Tensor("F64", base64.values(n) + rng.normal(size=base64[n].shape))
                       for n in base64.names()})
    out64 = apply(base64, extract_task_vector(base64, ft64))
    for name in base64.names():
        np.testing.assert_array_equal(out64.values(name), ft64.values(name))
    ok(2, "task-vector inversion")


def test_criterion_3_lambda_zero_identity():
    rng = np.random.default_rng(1003)
    for _ in range(10):
        base = random_checkpoint(rng)
        tv = TaskVector.from_arrays(
            {n: rng.normal(size=base[n].shape) for n in base.names()})
        canonical = write_archive(base)
        merged_tv = tv_merge(base, [(tv, 0.0), (tv, 0.0)])
        assert write_archive(merged_tv) == canonical
        merged_ties, _ = ties_merge(base, [tv], TiesConfig(0.5, [1.0], 0.0))
        assert write_archive(merged_ties) == canonical
    ok(3, "lambda-zero identity")


def _random_ties_instance(rng):
    numel = int(rng.integers(1, 65))
    n_vec = int(rng.integers(1, 5))
    density = float(rng.choice([0.25, 0.5, 1.0]))
    vectors = [rng.normal(size=numel) for _ in range(n_vec)]
    weights = [float(rng.uniform(0.1, 3.0)) for _ in range(n_vec)]
    lam = float(rng.uniform(0.0, 2.0))
    base_vals = rng.normal(size=numel)
    return base_vals, vectors, weights, density, lam


def _run_ties_instance(base_vals, vectors, weights, density, lam, threads=1):
    base = Checkpoint.from_arrays({"w": base_vals})
    tvs = [TaskVector.from_arrays({"w": v}) for v in vectors]
    out, _ = ties_merge(base, tvs, TiesConfig(density, weights, lam), threads=threads)
    signs = elect_signs([trim(t, density) for t in tvs], weights)
    return out, signs


def test_criterion_4_ties_oracle_equivalence():
    rng = np.random.default_rng(1004)
    for _ in range(500):
        base_vals, vectors, weights, density, lam = _random_ties_instance(rng)
        out, signs = _run_ties_instance(base_vals, vectors, weights, density, lam)
        merged_ref, gamma_ref = naive_ties_vector(vectors, weights, density)
        expected = base_vals + lam * np.array(merged_ref)
        np.testing.assert_allclose(out.values("w"), expected, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(signs.signs["w"], gamma_ref)
    # pinned hand case
    out, _ = _run_ties_instance(
        np.zeros(4), [np.array([1.0, -2.0, 0.5, 0.0]), np.array([2.0, 1.0, -0.4, 0.3])],
        [1.0, 1.0], 0.5, 1.0)
    np.testing.assert_array_equal(out.values("w"), [1.5, -2.0, 0.0, 0.0])
    ok(4, "TIES oracle equivalence")


def test_criterion_5_reduction_law():
    rng = np.random.default_rng(1005)
    for _ in range(50):
        base = random_checkpoint(rng)
        tv = TaskVector.from_arrays(
            {n: rng.normal(size=base[n].shape) for n in base.names()})
        lam = float(rng.uniform(-2.0, 2.0))
        if lam == 0.0:
            lam = 1.0
        got, _ = ties_merge(base, [tv], TiesConfig(1.0, [1.0], lam))
        want = tv_merge(base, [(tv, lam)])
        for name in base.names():
            g = got.values(name).astype(np.float64)
            w = want.values(name).astype(np.float64)
            ulp = np.spacing(np.abs(want.values(name)).astype(np.float64))
            assert np.all(np.abs(g - w) <= 2 * ulp)
    ok(5, "density-1 single-vector reduction to TV")


def test_criterion_6_sweep_and_selection():
    doc = {"base": "b.st", "method": "tv",
           "vectors": [{"source": "a.st", "weight": {"grid": "default"}},
                       {"source": "b.st", "weight": {"grid": [0.2, 0.5, 1.0]}}],
           "output": "o.st"}
    expanded = expand_sweep(parse_recipe(json.dumps(doc)))
    assert len(expanded) == 30
    assert all(not r.grids() for r in expanded)
    table = MetricsTable(rows=[({"lambda": 0.2}, 0.61),
                               ({"lambda": 0.4}, 0.63),
                               ({"lambda": 0.6}, 0.63)])
    assert select_best(table) == {"lambda": 0.4}
    ok(6, "sweep expansion and selection")


def test_criterion_7_gradient_correctness():
    rng = np.random.default_rng(1007)
    for _ in range(20):
        d = int(rng.integers(2, 8))
        h = int(rng.integers(2, 10))
        c = int(rng.integers(2, 5))
        spec = ModelSpec(d, h, c)
        model = init_model(spec, int(rng.integers(1 << 31)))
        data = gen_dataset("mixed", 16, spec, int(rng.integers(1 << 31)))
        _, grads = loss_and_grads(model, data.X, data.y)
        for name in model.names():
            values = model.values(name)
            flat = values.reshape(-1)
            coords = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for idx in coords:
                step = 1e-5

                def loss_at(delta):
                    perturbed = flat.copy()
                    perturbed[idx] += delta
                    m = Checkpoint({
                        n: (Tensor("F64", perturbed.reshape(values.shape))
                            if n == name else model.tensors[n])
                        for n in model.names()})
                    return loss_and_grads(m, data.X, data.y)[0]

                numeric = (loss_at(step) - loss_at(-step)) / (2 * step)
                analytic = grads[name].reshape(-1)[idx]
                denom = max(abs(numeric), abs(analytic), 1e-8)
                assert abs(numeric - analytic) / denom < 1e-4
    ok(7, "analytic gradient correctness")


SEEDS = [0, 1, 2, 3, 4]


@pytest.fixture(scope="module")
def bench_runs():
    runs = {}
    start = time.perf_counter()
    runs["t1_a"] = run_bench(["full_ft", "tv_merge_ft", "ties_merge_ft"], SEEDS)
    runs["elapsed"] = time.perf_counter() - start
    runs["t1_b"] = run_bench(["full_ft", "tv_merge_ft", "ties_merge_ft"], SEEDS)
    runs["t4"] = run_bench(["full_ft", "tv_merge_ft", "ties_merge_ft"], SEEDS,
                           threads=4)
    return runs


def test_criterion_8_merge_advantage(bench_runs):
    with open("tests/fixtures/bench_expected.json") as fh:
        pinned = json.load(fh)
    scen = bench_runs["t1_a"]["scenarios"]
    full = scen["full_ft"]["mean_f1"]
    merged = scen["tv_merge_ft"]["mean_f1"]
    assert merged > full, f"tv_merge_ft {merged:.4f} <= full_ft {full:.4f}"
    assert abs(full - pinned["full_ft"]["mean_f1"]) <= 0.01
    assert abs(merged - pinned["tv_merge_ft"]["mean_f1"]) <= 0.01
    assert bench_runs["elapsed"] < 60.0
    ok(8, "qualitative merge-then-fine-tune advantage")


def _big_instance():
    rng = np.random.default_rng(1009)
    shapes = {f"block{i}": (2_500_000,) for i in range(4)}  # 10M params total
    base = Checkpoint({n: Tensor("F32", rng.normal(size=s).astype(np.float32))
                       for n, s in shapes.items()})
    tvs = [TaskVector.from_arrays({n: rng.normal(size=s) for n, s in shapes.items()})
           for _ in range(2)]
    return base, tvs


def test_criterion_9_throughput():
    base, tvs = _big_instance()
    ckpt_bytes = sum(t.values.size * 4 for t in base.tensors.values())
    start = time.perf_counter()
    merged = tv_merge(base, [(tvs[0], 0.5), (tvs[1], 0.25)])
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"merge took {elapsed:.2f}s"
    assert len(merged) == 4

    tracemalloc.start()
    tv_merge(base, [(tvs[0], 0.5), (tvs[1], 0.25)])
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < 3 * ckpt_bytes, f"peak {peak / 1e6:.0f}MB >= 3x checkpoint"
    ok(9, "10M-parameter merge throughput and memory")


def test_criterion_10_determinism(bench_runs):
    # criterion 4 instances: byte-identical across consecutive runs and threads
    rng_a = np.random.default_rng(1010)
    rng_b = np.random.default_rng(1010)
    for _ in range(25):
        inst_a = _random_ties_instance(rng_a)
        inst_b = _random_ties_instance(rng_b)
        out_a1, _ = _run_ties_instance(*inst_a, threads=1)
        out_a2, _ = _run_ties_instance(*inst_a, threads=1)
        out_b4, _ = _run_ties_instance(*inst_b, threads=4)
        blob = write_archive(out_a1)
        assert write_archive(out_a2) == blob
        assert write_archive(out_b4) == blob

    # criterion 8 bench: identical across runs and thread counts
    key = lambda r: json.dumps(r, sort_keys=True)
    assert key(bench_runs["t1_a"]) == key(bench_runs["t1_b"])
    assert key(bench_runs["t1_a"]) == key(bench_runs["t4"])

    # criterion 9 merge: identical across runs and thread counts
    base, tvs = _big_instance()
    pairs = [(tvs[0], 0.5), (tvs[1], 0.25)]
    first = write_archive(tv_merge(base, pairs, threads=1))
    assert write_archive(tv_merge(base, pairs, threads=1)) == first
    assert write_archive(tv_merge(base, pairs, threads=4)) == first
    ok(10, "determinism across runs and thread counts")
