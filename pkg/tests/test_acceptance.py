"""Acceptance suite: one test per release criterion, one summary line each.

Criteria 4, 5, 6 and 8 train on the real citation datasets and look for
them under ``$DUALGNN_DATA`` (default ``<repo>/data``), as directories in
the format of docs/data_format.md (``contrib/convert_planetoid.py``
produces them from the public releases).  When a dataset directory is
missing those criteria FAIL with a diagnostic rather than skipping: the
release gate is meant to stay red until someone runs it on a machine with
the data present.
"""

import json
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import select_balanced_naive, semantic_dense, structural_dense

from dualgnn import autodiff as ad
from dualgnn.autodiff import Tensor
from dualgnn.connectivity import (build_semantic, build_structural,
                                  semantic_propagate)
from dualgnn.data import (build_undirected_adjacency, load_dataset,
                          make_explicit_split, make_imbalanced_split)
from dualgnn.gradcheck import check_gradient, standard_checks
from dualgnn.model import ModelConfig, init_params
from dualgnn.sparse import add_self_loops, sym_normalize
from dualgnn.synthetic import community_graph, two_community_graph
from dualgnn.trainer import (TrainConfig, apply_variant, train,
                             train_config_from_dict)

REPO_ROOT = Path(__file__).resolve().parents[1]
DATA_ROOT = Path(__import__("os").environ.get("DUALGNN_DATA",
                                              REPO_ROOT / "data"))

MISSING = ("dataset '{name}' not found under {root} — convert a public "
           "release with contrib/convert_planetoid.py into that directory "
           "(or set $DUALGNN_DATA) and rerun; this environment has no "
           "network access, so the criterion cannot execute here")


def record(criterion, ok: bool, detail: str) -> None:
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    if not ok:
        pytest.fail(line, pytrace=False)


def dataset_or_none(name: str):
    path = DATA_ROOT / name
    if not path.is_dir():
        return None
    return load_dataset(path)


def benchmark_config(name: str, seed: int) -> TrainConfig:
    with open(REPO_ROOT / "configs" / f"{name}.json", encoding="utf-8") as fh:
        cfg = train_config_from_dict(json.load(fh))
    return replace(cfg, seed=seed)


_RUN_CACHE: dict = {}


def benchmark_runs(name: str, variant: str):
    """Three training runs (seeds 1..3, fresh split per seed) of a variant
    on a benchmark dataset; cached so criteria can share them."""
    key = (name, variant)
    if key not in _RUN_CACHE:
        dataset = dataset_or_none(name)
        assert dataset is not None
        runs = []
        for seed in (1, 2, 3):
            split = make_imbalanced_split(dataset, 3, 0.10, seed=seed)
            cfg = apply_variant(benchmark_config(name, seed), variant)
            runs.append((cfg, train(dataset, split, cfg)))
        _RUN_CACHE[key] = runs
    return _RUN_CACHE[key]


def mean_bacc(runs) -> float:
    return float(np.mean([r.test_metrics.balanced_accuracy * 100.0
                          for _, r in runs]))


class TestCriterion1Oracles:
    def test_oracle_suite(self):
        rng = np.random.default_rng(0)

        for case in range(50):
            n = int(rng.integers(2, 51))
            m = int(rng.integers(1, max(2, n * 2)))
            adj = build_undirected_adjacency(rng.integers(0, n, m),
                                             rng.integers(0, n, m), n)
            hops = int(rng.integers(1, 4))
            mine = build_structural(adj, hops).matrix.to_dense()
            want = structural_dense(adj.to_dense(), hops)
            assert np.array_equal(mine, want), \
                f"structural adjacency mismatch (case {case}, hops {hops})"

        max_err = 0.0
        for case in range(50):
            n = int(rng.integers(3, 41))
            k = int(rng.integers(1, n + 1))
            assignments = rng.integers(0, k, n)
            x = rng.standard_normal((n, int(rng.integers(1, 6))))
            mine = semantic_propagate(build_semantic(assignments, k), x)
            want = semantic_dense(assignments) @ x
            max_err = max(max_err, float(np.abs(mine - want).max()))
        assert max_err <= 1e-12, f"semantic propagation off by {max_err}"

        from dualgnn.pseudolabel import select_balanced
        for case in range(100):
            n = int(rng.integers(5, 41))
            c = int(rng.integers(2, 6))
            logits = rng.standard_normal((n, c)) * 2.0
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            pool = rng.permutation(n)[:int(rng.integers(1, n + 1))]
            pool.sort()
            quotas = np.where(rng.random(c) < 0.25, np.inf,
                              rng.integers(0, 4, c).astype(float))
            threshold = float(rng.uniform(0.2, 0.9))
            got = select_balanced(probs, pool, quotas, threshold)
            want_ids, want_labels = select_balanced_naive(
                probs, pool, quotas, threshold)
            assert np.array_equal(got.node_ids, want_ids), f"case {case}"
            assert np.array_equal(got.labels, want_labels), f"case {case}"

        record(1, True,
               "structural adjacency = shortest-path oracle on 50 graphs; "
               "semantic propagation within 1e-12 of the dense operator on "
               "50 cases; balanced selection = sort oracle on 100 matrices")


class TestCriterion2Gradients:
    def test_gradient_suite(self):
        results = standard_checks(seed=0)

        ds = community_graph([5, 5], p_in=0.6, p_out=0.2, num_features=4,
                             noise=0.5, seed=2)
        model_cfg = ModelConfig(num_layers=2, hidden_dim=5, dropout=0.5,
                                max_hops=2, num_clusters=3)
        params = init_params(model_cfg, ds.num_features, ds.num_classes,
                             seed=0)
        struct_op = sym_normalize(add_self_loops(
            build_structural(ds.adjacency, 2).matrix, 1.0))
        rng = np.random.default_rng(5)
        sem_ops = [build_semantic(rng.integers(0, 3, ds.num_nodes), 3)
                   for _ in range(2)]
        features = Tensor(ds.features)
        train_ids = np.array([0, 1, 5, 6])
        train_labels = ds.labels[train_ids]
        node_weights = np.full(4, 0.5)
        pseudo_ids = np.array([2, 7, 8])
        pseudo_labels = np.array([0, 1, 1])

        from dualgnn.model import forward

        def build_loss(tape):
            res = forward(tape, params, model_cfg, features, struct_op,
                          sem_ops, struct_op)
            sup = ad.weighted_ce(tape, res.logits, train_ids, train_labels,
                                 node_weights)
            ps = ad.mean_ce(tape, res.logits, pseudo_ids, pseudo_labels)
            return ad.add(tape, sup, ad.scale(tape, ps, 1.0))

        results.append(check_gradient("total-loss", build_loss,
                                      params.all_parameters()))

        worst = max(results, key=lambda r: r.max_rel_err)
        failed = [r.name for r in results if not r.passed]
        record(2, not failed,
               f"{len(results)} finite-difference checks (every op + the "
               f"composite training loss on a 10-node instance); worst "
               f"relative error {worst.max_rel_err:.2e} ({worst.name}) vs "
               f"tolerance 1e-5" +
               (f"; FAILED: {failed}" if failed else ""))


class TestCriterion3Sanity:
    def test_two_community_convergence(self):
        ds = two_community_graph(seed=0)
        split = make_explicit_split(ds, [1, 1], seed=0, val_per_class=20,
                                    test_per_class=79)
        cfg = TrainConfig(
            max_epochs=200, patience=200, refresh_interval=50, seed=1,
            row_normalize_features=False,
            model=ModelConfig(hidden_dim=16, num_clusters=8))
        result = train(ds, split, cfg)
        ok = (result.test_metrics.accuracy == 1.0
              and result.epochs_run <= 200
              and result.wall_time_sec < 5.0)
        record(3, ok,
               f"two-community graph (200 nodes, 1 label per class): test "
               f"accuracy {result.test_metrics.accuracy:.3f} after "
               f"{result.epochs_run} epochs in "
               f"{result.wall_time_sec:.2f}s (need 1.000, ≤200, <5s)")


class TestCriterion4CoraHeadline:
    def test_cora_mean_balanced_accuracy(self):
        if dataset_or_none("cora") is None:
            record(4, False, MISSING.format(name="cora", root=DATA_ROOT))
        runs = benchmark_runs("cora", "full")
        mean = mean_bacc(runs)
        walls = [r.wall_time_sec for _, r in runs]
        ok = mean >= 72.0 and max(walls) <= 900.0
        record(4, ok,
               f"cora, 3 minority classes at 10%: mean test balanced "
               f"accuracy {mean:.1f} over seeds 1-3 (need ≥ 72.0); slowest "
               f"seed {max(walls):.0f}s (budget 900s)")


class TestCriterion5BaselineDelta:
    def test_beats_gcn_baseline(self):
        for name in ("cora", "citeseer"):
            if dataset_or_none(name) is None:
                record(5, False, MISSING.format(name=name, root=DATA_ROOT))
        deltas = {}
        for name in ("cora", "citeseer"):
            deltas[name] = (mean_bacc(benchmark_runs(name, "full"))
                            - mean_bacc(benchmark_runs(name, "gcn-baseline")))
        ok = all(d >= 4.0 for d in deltas.values())
        record(5, ok,
               f"mean balanced-accuracy lead over the GCN baseline: cora "
               f"+{deltas['cora']:.1f}, citeseer +{deltas['citeseer']:.1f} "
               f"(need ≥ +4.0 on both)")


class TestCriterion6Ablations:
    def test_ablation_directions(self):
        if dataset_or_none("cora") is None:
            record(6, False, MISSING.format(name="cora", root=DATA_ROOT))
        full = mean_bacc(benchmark_runs("cora", "full"))
        drop_sem_stream = full - mean_bacc(
            benchmark_runs("cora", "no-structural"))
        drop_struct_stream = full - mean_bacc(
            benchmark_runs("cora", "no-semantic"))
        drop_weights = full - mean_bacc(
            benchmark_runs("cora", "uniform-weights"))
        drop_pseudo = full - mean_bacc(benchmark_runs("cora", "no-pseudo"))
        ok = (drop_sem_stream >= 5.0 and drop_weights >= 2.0
              and drop_pseudo >= 1.0)
        record(6, ok,
               f"cora ablation drops: single-stream semantic-only "
               f"{drop_sem_stream:+.1f} (need ≥ 5; structural-only "
               f"{drop_struct_stream:+.1f}, reported ungated), uniform "
               f"class weights {drop_weights:+.1f} (need ≥ 2), no "
               f"pseudo-labels {drop_pseudo:+.1f} (need ≥ 1)")


class TestCriterion7Determinism:
    def test_byte_identical_reruns(self, tmp_path):
        ds = community_graph([110, 105, 120], p_in=0.08, p_out=0.01,
                             num_features=6, noise=0.4, seed=11)
        split = make_imbalanced_split(ds, 1, 0.10, seed=3)
        outputs = []
        for run_name in ("a", "b"):
            cfg = TrainConfig(
                max_epochs=60, patience=60, refresh_interval=25,
                confidence_threshold=0.5, seed=7,
                row_normalize_features=False,
                model=ModelConfig(hidden_dim=16, num_clusters=8))
            outputs.append(
                (train(ds, split, cfg, out_dir=tmp_path / run_name),
                 (tmp_path / run_name / "epochs.jsonl").read_bytes(),
                 (tmp_path / run_name / "checkpoint.bin").read_bytes()))
        (res_a, log_a, ckpt_a), (res_b, log_b, ckpt_b) = outputs
        ok = (log_a == log_b and ckpt_a == ckpt_b
              and res_a.test_metrics.to_dict() == res_b.test_metrics.to_dict())
        record(7, ok,
               f"identical config+seed reruns: epoch logs "
               f"({len(log_a)} bytes), checkpoints ({len(ckpt_a)} bytes) "
               f"and final metrics are byte-identical")


class TestCriterion8PseudoInvariants:
    def test_invariants_on_headline_runs(self):
        if dataset_or_none("cora") is None:
            record(8, False, MISSING.format(name="cora", root=DATA_ROOT))
        violations = []
        epochs_checked = 0
        for cfg, result in benchmark_runs("cora", "full"):
            for rec in result.history:
                epochs_checked += 1
                over = [c for c, q in enumerate(result.quotas)
                        if q is not None and rec["pseudo_per_class"][c] > q]
                if over:
                    violations.append(f"quota exceeded for classes {over} "
                                      f"at epoch {rec['epoch']}")
                if (rec["pseudo_selected"] > 0
                        and not rec["pseudo_min_confidence"]
                        > cfg.confidence_threshold):
                    violations.append(f"confidence ≤ threshold at epoch "
                                      f"{rec['epoch']}")
                if rec["pseudo_eval_overlap"] != 0:
                    violations.append(f"val/test overlap at epoch "
                                      f"{rec['epoch']}")
        record(8, not violations,
               f"pseudo-label invariants (per-class ≤ quota, confidence "
               f"strictly above threshold, zero val/test overlap) hold at "
               f"all {epochs_checked} logged epochs of the headline runs" +
               (f"; violations: {violations[:3]}" if violations else ""))


class TestCriterionScale:
    def test_structural_adjacency_at_pubmed_scale(self):
        """Two-hop structural adjacency for a 19,717-node graph must fit in
        2 GB.  Runs in a fresh process so the peak-memory reading is not
        polluted by the rest of the suite; uses the real dataset when
        present, otherwise a random graph of the same size."""
        pubmed = DATA_ROOT / "pubmed"
        if pubmed.is_dir():
            build_src = (f"from dualgnn.data import load_dataset\n"
                         f"adj = load_dataset({str(pubmed)!r}).adjacency\n")
        else:
            build_src = (
                "from dualgnn.data import build_undirected_adjacency\n"
                "rng = np.random.default_rng(0)\n"
                "adj = build_undirected_adjacency(\n"
                "    rng.integers(0, 19717, 44324),\n"
                "    rng.integers(0, 19717, 44324), 19717)\n")
        code = (
            "import json, resource\n"
            "import numpy as np\n"
            + build_src +
            "from dualgnn.connectivity import build_structural\n"
            "s = build_structural(adj, 2)\n"
            "peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss\n"
            "print(json.dumps({'peak_kb': peak_kb, 'nnz': s.matrix.nnz,\n"
            "                  'nodes': s.matrix.num_rows}))\n")
        proc = subprocess.run([sys.executable, "-c", code],
                              capture_output=True, text=True, timeout=600)
        assert proc.returncode == 0, proc.stderr
        stats = json.loads(proc.stdout)
        peak_mb = stats["peak_kb"] / 1024.0
        source = "real dataset" if pubmed.is_dir() else "random graph"
        ok = stats["nodes"] == 19717 and peak_mb < 2048.0
        record("scale", ok,
               f"two-hop structural adjacency for 19,717 nodes ({source}): "
               f"{stats['nnz']} stored entries, fresh-process peak memory "
               f"{peak_mb:.0f} MB (budget 2048 MB)")
