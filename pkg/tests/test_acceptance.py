"""End-to-end acceptance checks, one test per numbered requirement.

Covers, in order: (1) gradient correctness of the full training objective,
(2) exact arithmetic identities of the core operations, (3) the augmentation
selection contract, (4) event-separation safety of the splitter, (5) the
debiasing accuracy margins on the biased preset, (6) the event-mixed vs
event-separated accuracy gap, (7) event-only predictor sanity at the bias
extremes, and (8) byte-level determinism of repeated commands.

The heavy multi-seed experiment behind (5) and (6) runs once in a shared
fixture; it is the same per-seed procedure the ``fade ablate`` command uses.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

import fade.autodiff as ad
from fade.augmentation import compute_radius, sample_unit_vector, select_augmentation
from fade.cli import _ablate_one_seed, main
from fade.config import RunConfig
from fade.data import PropagationGraph, normalized_adjacency
from fade.encoder import encode_batch_node
from fade.inference import DebiasConfig, debias, event_only_logits, target_logits
from fade.predictors import (
    _affine_node,
    ce_loss,
    contrastive_loss,
    event_mean_pool,
    train_event_only,
    train_target,
)
from fade.splitter import SplitRatios, event_mixed_split, event_separated_split
from fade.synthgen import SynthConfig, generate

N_SEEDS = 10


def _preset_config(**overrides) -> RunConfig:
    cfg = RunConfig()
    cfg.set("preset", "t15-like")
    for key, value in overrides.items():
        cfg.set(key, value)
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def biased_protocol():
    """Ten seeds of {full, beta0, alpha0_beta0, event_mixed} at bias 0.8."""
    cfg = _preset_config(bias_strength=0.8)
    t0 = time.perf_counter()
    rows = [_ablate_one_seed(cfg, seed) for seed in range(N_SEEDS)]
    return {"rows": rows, "elapsed": time.perf_counter() - t0}


def _mean(rows, key):
    return float(np.mean([r[key] for r in rows]))


# ---------------------------------------------------------------------------
# 1. gradient correctness of the full objective


def _random_tree_graph(rng, n, dim):
    edges = [[int(rng.integers(0, k)), k] for k in range(1, n)]
    return PropagationGraph(n=n, x=rng.normal(size=(n, dim)), edges=edges)


def test_01_full_objective_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(41)
    dim, hidden, proj, n_classes, alpha = 5, 8, 8, 2, 0.3
    graphs = [_random_tree_graph(rng, int(rng.integers(4, 9)), dim) for _ in range(5)]
    labels = [int(rng.integers(0, n_classes)) for _ in graphs]
    offsets = rng.normal(scale=0.1, size=(len(graphs), hidden))

    shapes = {
        "enc0": (dim, hidden),
        "enc1": (hidden, hidden),
        "cw": (hidden, n_classes),
        "cb": (1, n_classes),
        "pw1": (hidden, proj),
        "pb1": (1, proj),
        "pw2": (proj, proj),
        "pb2": (1, proj),
    }
    base = {k: rng.normal(scale=0.5, size=s) for k, s in shapes.items()}

    def objective(tensors, want_grads=False):
        nodes = {k: ad.param(tensors[k].copy()) for k in shapes}
        rep = encode_batch_node([nodes["enc0"], nodes["enc1"]], graphs, "mean")
        logits = _affine_node(rep, nodes["cw"], nodes["cb"])
        rep_aug = ad.add(rep, ad.const(offsets))

        def project(x):
            hidden_n = ad.relu(_affine_node(x, nodes["pw1"], nodes["pb1"]))
            return _affine_node(hidden_n, nodes["pw2"], nodes["pb2"])

        loss = ad.add(
            ce_loss(logits, labels),
            ad.scale(contrastive_loss(project(rep), project(rep_aug)), alpha),
        )
        if not want_grads:
            return float(loss.value[0, 0])
        ad.backward(loss)
        return {k: nodes[k].grad.copy() for k in shapes}

    grads = objective(base, want_grads=True)
    eps = 1e-6
    worst = 0.0
    for k, (rows, cols) in shapes.items():
        for i in range(rows):
            for j in range(cols):
                up = {n: t.copy() for n, t in base.items()}
                down = {n: t.copy() for n, t in base.items()}
                up[k][i, j] += eps
                down[k][i, j] -= eps
                fd = (objective(up) - objective(down)) / (2 * eps)
                scale = max(abs(fd), abs(grads[k][i, j]), 1e-8)
                rel = abs(grads[k][i, j] - fd) / scale
                worst = max(worst, rel)
                assert rel < 1e-4, f"{k}[{i},{j}]: analytic {grads[k][i, j]}, numeric {fd}"
    elapsed = time.perf_counter() - t0
    print(f"worst relative error {worst:.2e} over all parameters, {elapsed:.1f}s")
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 2. exact arithmetic identities


def test_02_core_arithmetic_identities_hold():
    tol = dict(rtol=0.0, atol=1e-9)

    # degree-normalized adjacency on the smallest graphs
    g1 = PropagationGraph(n=1, x=np.zeros((1, 2)), edges=[])
    np.testing.assert_allclose(normalized_adjacency(g1), [[1.0]], **tol)
    g2 = PropagationGraph(n=2, x=np.zeros((2, 2)), edges=[[0, 1]])
    np.testing.assert_allclose(normalized_adjacency(g2), [[0.5, 0.5], [0.5, 0.5]], **tol)

    # perturbation radius: mean distance to the centroid
    assert compute_radius(np.array([[0.0, 0.0], [2.0, 0.0]])) == pytest.approx(1.0, abs=1e-9)
    assert compute_radius(np.array([[3.0, 7.0]])) == pytest.approx(0.0, abs=1e-9)

    # selection keeps the offset norm equal to the radius and, among the
    # label-preserving candidates, picks the one nearest the decision boundary
    rep = np.array([[1.0, 0.0]])
    classify = lambda r: np.array([[r[0, 0], -r[0, 0]]])
    candidates = [np.array([[1.0, 0.0]]), np.array([[-1.0, 0.0]])]
    chosen, fallback, _ = select_augmentation(rep, 0.5, candidates, classify, label=0)
    assert not fallback
    np.testing.assert_allclose(chosen, [[0.5, 0.0]], **tol)
    assert np.linalg.norm(chosen - rep) == pytest.approx(0.5, abs=1e-9)
    chosen0, fallback0, _ = select_augmentation(rep, 0.0, candidates, classify, label=0)
    assert not fallback0 and np.array_equal(chosen0, rep)

    # the similarity loss hits its endpoints on identical/orthogonal/opposite rows
    for a, b, expected in (
        ([[1.0, 2.0]], [[1.0, 2.0]], -1.0),
        ([[1.0, 0.0]], [[0.0, 1.0]], 0.0),
        ([[1.0, 0.0]], [[-2.0, 0.0]], 1.0),
    ):
        loss = contrastive_loss(ad.param(np.array(a)), ad.param(np.array(b)))
        assert loss.value[0, 0] == pytest.approx(expected, abs=1e-9)

    # event-mean pooling: hand mean, and identity on singleton events
    pooled = event_mean_pool(np.array([[1.0, 3.0], [3.0, 5.0]]), ["e", "e"])
    np.testing.assert_allclose(pooled, [[2.0, 4.0], [2.0, 4.0]], **tol)
    singles = np.array([[1.0, 2.0], [5.0, 6.0]])
    np.testing.assert_allclose(event_mean_pool(singles, ["a", "b"]), singles, **tol)

    # logit subtraction: hand arithmetic, zero-strength identity, constructed flip
    o_t = np.array([[0.8, 0.2]])
    o_e = np.array([[0.6, 0.4]])
    np.testing.assert_allclose(debias(o_t, o_e, DebiasConfig(beta=0.5)), [[0.5, 0.0]], **tol)
    np.testing.assert_allclose(debias(o_t, o_e, DebiasConfig(beta=0.0)), o_t, rtol=0.0, atol=0.0)
    flipped = debias(np.array([[1.0, 1.0]]), np.array([[2.0, 0.0]]), DebiasConfig(beta=1.0))
    assert int(np.argmax(flipped)) == 1


# ---------------------------------------------------------------------------
# 3. augmentation selection contract over many random draws


def test_03_augmentation_selection_contract_over_1000_draws():
    rng = np.random.default_rng(7)
    dim, n_classes, k_candidates = 6, 3, 8
    fallbacks = 0
    for trial in range(1000):
        w = rng.normal(size=(dim, n_classes))
        b = rng.normal(size=(1, n_classes))
        classify = lambda r: r @ w + b
        rep = rng.normal(size=(1, dim))
        radius = float(rng.uniform(0.05, 2.0))
        label = int(rng.integers(0, n_classes))
        directions = [sample_unit_vector(dim, rng) for _ in range(k_candidates)]

        chosen, fallback, chosen_margin = select_augmentation(
            rep, radius, directions, classify, label
        )
        kept = []
        for v in directions:
            cand = rep + radius * v
            z = classify(cand)
            if int(np.argmax(z)) == label:
                kept.append(float(z[0, label] - np.delete(z[0], label).max()))
        if fallback:
            fallbacks += 1
            assert not kept, f"trial {trial}: fallback despite label-preserving candidates"
            assert np.array_equal(chosen, rep)
        else:
            offset = float(np.linalg.norm(chosen - rep))
            assert abs(offset - radius) < 1e-9, f"trial {trial}: offset {offset} != {radius}"
            assert chosen_margin == pytest.approx(min(kept), abs=1e-12)
    print(f"fallback rate: {fallbacks / 1000:.3f} ({fallbacks}/1000)")


# ---------------------------------------------------------------------------
# 4. event separation across 100 seeded manifests


def test_04_no_event_overlap_across_100_manifests():
    datasets = [
        generate(
            SynthConfig(
                n_events=30,
                instances_per_event=6,
                n_classes=3,
                feature_dim=8,
                size_sigma=0.7,
                seed=k,
            )
        )
        for k in range(5)
    ]
    ratios = SplitRatios()
    t0 = time.perf_counter()
    checked = 0
    for ds in datasets:
        for seed in range(20):
            m = event_separated_split(ds, ratios, seed)
            assert not (m.train_events & m.val_events)
            assert not (m.train_events & m.test_events)
            assert not (m.val_events & m.test_events)
            m.assert_valid(ds, event_separated=True)
            checked += 1
    elapsed = time.perf_counter() - t0
    assert checked == 100
    print(f"100 manifests checked in {elapsed:.2f}s")
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 5. debiasing margins on the biased preset (10 seeds)


def test_05_debiasing_beats_its_ablations_on_the_biased_preset(biased_protocol):
    rows, elapsed = biased_protocol["rows"], biased_protocol["elapsed"]
    assert elapsed < 900.0, f"protocol took {elapsed:.0f}s"
    full = _mean(rows, "full")
    beta0 = _mean(rows, "beta0")
    plain = _mean(rows, "alpha0_beta0")
    margin_beta = 100.0 * (full - beta0)
    margin_plain = 100.0 * (full - plain)
    print(
        f"mean accuracy over {N_SEEDS} seeds: full {full:.3f}, "
        f"beta-zero {beta0:.3f}, plain {plain:.3f} "
        f"(margins {margin_beta:+.1f} and {margin_plain:+.1f} points, {elapsed:.0f}s)"
    )
    assert margin_beta >= 5.0 and margin_plain >= 8.0, (
        f"needed margins >= 5 and >= 8 points; measured {margin_beta:+.1f} "
        f"(full {full:.3f} vs beta-zero {beta0:.3f}) and {margin_plain:+.1f} "
        f"(full {full:.3f} vs plain {plain:.3f})"
    )


# ---------------------------------------------------------------------------
# 6. event-mixed vs event-separated gap, and its collapse without bias


def _plain_split_accuracies(cfg: RunConfig, seed: int) -> dict:
    """Plain cross-entropy model, no debiasing, on both split modes."""
    ds = generate(cfg.synth_config(seed))
    ratios = cfg.split_ratios()
    hyper = replace(cfg.hyperparams(), alpha=0.0)
    arch = cfg.arch()
    by_id = ds.by_id()
    out = {}
    for name, split_fn in (("separated", event_separated_split), ("mixed", event_mixed_split)):
        m = split_fn(ds, ratios, seed)
        params, _ = train_target(ds, m.train_ids, m.val_ids, hyper, seed=seed, arch=arch)
        test = [by_id[i] for i in m.test_ids]
        preds = np.argmax(target_logits(params, test), axis=1)
        out[name] = float(np.mean(preds == np.array([i.label for i in test])))
    return out


def test_06_mixed_split_inflates_plain_accuracy_only_under_bias(biased_protocol):
    rows = biased_protocol["rows"]
    sep_b = _mean(rows, "alpha0_beta0")
    mix_b = _mean(rows, "event_mixed")
    gap_biased = 100.0 * (mix_b - sep_b)

    cfg0 = _preset_config(bias_strength=0.0)
    rows0 = [_plain_split_accuracies(cfg0, seed) for seed in range(N_SEEDS)]
    sep_0 = float(np.mean([r["separated"] for r in rows0]))
    mix_0 = float(np.mean([r["mixed"] for r in rows0]))
    gap_unbiased = 100.0 * (mix_0 - sep_0)

    print(
        f"gap at bias 0.8: {gap_biased:+.1f} points (mixed {mix_b:.3f} vs separated {sep_b:.3f}); "
        f"gap at bias 0.0: {gap_unbiased:+.1f} points"
    )
    assert gap_biased >= 20.0, f"measured {gap_biased:+.1f} points, needed >= 20"
    assert gap_unbiased < gap_biased, (
        f"gap should shrink without bias: {gap_unbiased:+.1f} vs {gap_biased:+.1f}"
    )


# ---------------------------------------------------------------------------
# 7. event-only predictor at the bias extremes


def test_07_event_only_predictor_tracks_bias_and_nothing_else():
    # Fully biased data: the event signal alone should fit the training
    # events.  Trained without a holdout, since this is a statement about
    # fitting power — a checkpoint picked on a tiny validation set can
    # freeze an early epoch and obscure it.
    cfg1 = _preset_config(bias_strength=1.0)
    for seed in range(3):
        ds = generate(cfg1.synth_config(seed))
        all_ids = [i.id for i in ds.instances]
        params, _ = train_event_only(
            ds, all_ids, [], cfg1.hyperparams(), seed=seed, arch=cfg1.arch()
        )
        preds = np.argmax(event_only_logits(params, ds.instances), axis=1)
        acc = float(np.mean(preds == np.array([i.label for i in ds.instances])))
        print(f"bias 1.0, seed {seed}: train accuracy {acc:.3f}")
        assert acc >= 0.95, f"seed {seed}: train accuracy {acc:.3f} < 0.95"

    # unbiased data: unseen events should be indistinguishable from chance
    cfg0 = _preset_config(bias_strength=0.0)
    chance = 1.0 / cfg0.synth_config(0).n_classes
    for seed in range(4):
        ds = generate(cfg0.synth_config(seed))
        m = event_separated_split(ds, cfg0.split_ratios(), seed)
        params, _ = train_event_only(
            ds, m.train_ids, m.val_ids, cfg0.hyperparams(), seed=seed, arch=cfg0.arch()
        )
        by_id = ds.by_id()
        test = [by_id[i] for i in m.test_ids]
        preds = np.argmax(event_only_logits(params, test), axis=1)
        acc = float(np.mean(preds == np.array([i.label for i in test])))
        print(f"bias 0.0, seed {seed}: test accuracy {acc:.3f} (chance {chance:.2f})")
        assert abs(acc - chance) <= 0.1, f"seed {seed}: {acc:.3f} not within 0.1 of {chance:.2f}"


# ---------------------------------------------------------------------------
# 8. determinism of every command at fixed seed/config/data


def test_08_repeated_commands_produce_identical_artifacts(tmp_path):
    fast = [
        "--set", "n_events=12", "--set", "instances_per_event=6",
        "--set", "epochs=3", "--set", "hidden_dim=16", "--set", "proj_dim=8",
    ]

    def run_pipeline(tag):
        d = tmp_path / tag
        assert main(["gen-synth", "--seed", "3", "--out", str(d / "data.jsonl"), *fast]) == 0
        assert main(["split", "--data", str(d / "data.jsonl"), "--seed", "3",
                     "--out", str(d / "m.json"), *fast]) == 0
        assert main(["train", "--data", str(d / "data.jsonl"), "--split", str(d / "m.json"),
                     "--seed", "3", "--out", str(d / "run"), *fast]) == 0
        assert main(["eval", "--data", str(d / "data.jsonl"), "--split", str(d / "m.json"),
                     "--run", str(d / "run"), "--out", str(d / "report.json"), *fast]) == 0
        return d

    a = run_pipeline("a")
    b = run_pipeline("b")

    assert (a / "data.jsonl").read_bytes() == (b / "data.jsonl").read_bytes()
    assert (a / "m.json").read_bytes() == (b / "m.json").read_bytes()
    assert (a / "run/target.ckpt").read_bytes() == (b / "run/target.ckpt").read_bytes()
    assert (a / "run/event_only.ckpt").read_bytes() == (b / "run/event_only.ckpt").read_bytes()
    for name in ("run/log.json", "report.json"):
        left = json.loads((a / name).read_text())
        right = json.loads((b / name).read_text())
        left.pop("generated_at"), right.pop("generated_at")
        assert left == right, f"{name} differs beyond its timestamp"
