"""Acceptance criteria, one group of tests per criterion.

A summary line per criterion is printed at the end of the run (see conftest).
Criterion 7 trains six models on the checked-in synthetic treebank and
dominates the runtime.
"""
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from oracles import (all_trees, brute_force, contains, exhaustive_best, factored_score, random_partial,
                     random_projective, random_sentence, terminal_sequences)
from pardep.cli import main
from pardep.corpus import DepTree, PartialTree, load_treebank, save_treebank
from pardep.features import FeatureConfig, LinearModel
from pardep.graph import ConstraintMask, FactorScores, decode_heads, forest_log_prob, inside_outside
from pardep.pasim import keep_count, simulate_random, simulate_uncertain
from pardep.pipeline import complete_treebank
from pardep.trainers import PA, TrainConfig, TrainingInstance, evaluate, llgpar_objective_and_gradient, train
from pardep.transition import (Configuration, PartialConstraint, beam_decode, legal_actions, replay,
                               static_oracle)

DATA = Path(__file__).resolve().parent.parent / "data" / "synthetic"


def _graph_instances():
    """500 (factors, partial) pairs with n <= 6 and satisfiable partials (a third are empty)."""
    rng = random.Random(1)
    nrng = np.random.default_rng(1)
    out = []
    for i in range(500):
        n = rng.randint(1, 6)
        factors = FactorScores.random(n, nrng, scale=1.5)
        partial = PartialTree(n, {}) if i % 3 == 0 else random_partial(n, rng)[0]
        out.append((factors, partial))
    return out


# ---------------------------------------------------------------------------
# 1. enumeration equivalence


def test_c1_enumeration_equivalence(record_property):
    start = time.time()
    worst = 0.0
    for factors, partial in _graph_instances():
        best, _, marg = brute_force(factors, partial)
        mask = ConstraintMask.from_partial(partial)
        heads, score = decode_heads(factors, mask)
        assert tuple(heads[1:]) == best
        assert score == pytest.approx(factored_score(factors, best), abs=1e-9)
        io = inside_outside(factors, mask)
        worst = max(worst, float(np.abs(io.arc_marginal - marg).max()))
    elapsed = time.time() - start
    record_property("detail", f"max marginal error {worst:.1e}, {elapsed:.1f}s")
    assert worst <= 1e-8
    assert elapsed <= 60


# ---------------------------------------------------------------------------
# 2. forest probability


def test_c2_forest_probability(record_property):
    worst = 0.0
    for factors, partial in _graph_instances():
        trees = all_trees(factors.n)
        scores = np.array([factored_score(factors, t) for t in trees])
        p = np.exp(scores - scores.max())
        p /= p.sum()
        want = sum(pp for pp, t in zip(p, trees) if contains(t, partial))
        got = math.exp(forest_log_prob(factors, ConstraintMask.from_partial(partial)))
        worst = max(worst, abs(got - want))
        if not partial.heads:
            assert abs(forest_log_prob(factors, ConstraintMask.trivial(factors.n))) <= 1e-12
    record_property("detail", f"max probability error {worst:.1e}")
    assert worst <= 1e-8


# ---------------------------------------------------------------------------
# 3. gradient check


def test_c3_gradient_check(record_property):
    cfg = FeatureConfig(dimension_log2=16)
    rng = random.Random(3)
    nrng = np.random.default_rng(3)
    worst, checked = 0.0, 0
    for _ in range(25):
        n = rng.randint(2, 5)
        s = random_sentence(n, rng)
        partial = random_partial(n, rng, keep=0.5)[0]
        inst = TrainingInstance(s, partial, PA)
        w = nrng.normal(0, 0.3, cfg.dimension)
        _, grad = llgpar_objective_and_gradient([inst], w, cfg)
        coords = np.flatnonzero(grad - w)  # coordinates the data term touches
        for i in nrng.choice(coords, min(30, len(coords)), replace=False):
            e = 1e-4
            up, down = w.copy(), w.copy()
            up[i] += e
            down[i] -= e
            fd = (llgpar_objective_and_gradient([inst], up, cfg)[0]
                  - llgpar_objective_and_gradient([inst], down, cfg)[0]) / (2 * e)
            worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8))
            checked += 1
    record_property("detail", f"worst relative error {worst:.1e} over {checked} coordinates")
    assert worst <= 1e-4


# ---------------------------------------------------------------------------
# 4. transition soundness


def test_c4_transition_soundness(record_property):
    cfg = FeatureConfig(dimension_log2=16)
    model = LinearModel(np.random.default_rng(4).normal(0, 2.0, cfg.dimension), cfg)
    rng = random.Random(4)
    walks = 0
    for _ in range(1000):
        n = rng.randint(1, 12)
        tree = random_projective(n, rng)
        partial = PartialTree(n, {m: h for m, h in enumerate(tree, 1) if rng.random() < rng.random()})
        s = random_sentence(n, rng)
        for beam in (1, 8, 64):
            out = beam_decode(s, model, beam, partial)  # raises on a configuration with no permitted action
            assert contains(out.tree().heads, partial)
        # random constrained walk: every non-terminal configuration keeps a permitted action
        constraint = PartialConstraint(partial)
        config = Configuration.initial(n)
        while not config.terminal:
            actions = [a for a in legal_actions(config) if constraint.permits(config, a)]
            assert actions
            config = config.apply(rng.choice(actions))
        assert contains(config.to_tree().heads, partial)
        walks += 1
    # exhaustive: every reachable constrained configuration for n <= 5
    for n in range(1, 6):
        for _ in range(20):
            terminal_sequences(n, random_partial(n, rng)[0])
    record_property("detail", f"1000 pairs x beams (1, 8, 64), {walks} random walks")


# ---------------------------------------------------------------------------
# 5. oracle round trip and exhaustive beam


def test_c5_oracle_round_trip(record_property):
    rng = random.Random(5)
    for _ in range(1000):
        n = rng.randint(1, 25)
        tree = DepTree(random_projective(n, rng))
        actions = static_oracle(random_sentence(n, rng), tree)
        assert replay(n, actions)[-1].to_tree() == tree
    record_property("detail", "1000 trees rebuilt")


def test_c5_exhaustive_beam(record_property):
    cfg = FeatureConfig(dimension_log2=16)
    rng = random.Random(55)
    for i in range(150):
        n = rng.randint(1, 4)
        s = random_sentence(n, rng)
        model = LinearModel(np.random.default_rng(i).normal(size=cfg.dimension), cfg)
        partial = random_partial(n, rng)[0] if i % 2 else None
        # the beam bound exceeds the number of action sequences for n <= 4
        bound = len(terminal_sequences(n)) * 2 * n + 1
        best, actions = exhaustive_best(model, s, partial)
        got = beam_decode(s, model, bound, partial)
        assert got.history == actions
        assert got.score == pytest.approx(best, abs=1e-9)
    record_property("detail", "150 sentences match exhaustive argmax")


# ---------------------------------------------------------------------------
# 6. separable convergence


def test_c6_separable_convergence(record_property):
    tb = load_treebank(DATA / "separable.conll")
    start = time.time()
    notes = []
    for kind, iterations, target in (("llgpar", 50, 1.0), ("lgpar", 50, 1.0), ("ltpar", 100, 0.95)):
        config = TrainConfig(max_iterations=iterations, patience=iterations, target_dev_uas=target)
        model = train(kind, tb, [], config, tb)
        uas = evaluate(model, tb, config.beam_size).uas
        notes.append(f"{kind} {100 * uas:.1f}% in {model.metadata['best_iteration']} it")
        assert uas >= target
        assert model.metadata["best_iteration"] <= iterations
    elapsed = time.time() - start
    record_property("detail", ", ".join(notes) + f", {elapsed:.1f}s")
    assert elapsed <= 120


# ---------------------------------------------------------------------------
# 7. trend reproduction

FA_SEED = 200
TREND_CONFIG = dict(per_iter_pa_subset=500, max_iterations=20, patience=5, sgd_step=1.0)
TOL = 0.001  # 0.1 UAS points


@pytest.fixture(scope="module")
def trends():
    start = time.time()
    train_tb = load_treebank(DATA / "train.conll")
    dev = load_treebank(DATA / "dev.conll")
    test = load_treebank(DATA / "test.conll")
    fa, pool = train_tb[:FA_SEED], train_tb[FA_SEED:]
    config = TrainConfig(**TREND_CONFIG)
    beam = config.beam_size
    res = {}

    coarse = train("llgpar", fa, [], config, dev)
    res["coarse"] = evaluate(coarse, test, beam).uas

    # (a) and (c): random 30% partial annotation
    random30 = simulate_random(pool, 30, 7)
    fine = train("llgpar", fa, random30, config, dev)
    res["pa_random30"] = evaluate(fine, test, beam).uas
    picked = np.random.default_rng(7).choice(len(pool), keep_count(30, len(pool)), replace=False)
    subset = [pool[i] for i in sorted(picked)]
    res["fa_random30"] = evaluate(train("llgpar", fa, subset, config, dev), test, beam).uas
    res["complete_fine"] = complete_treebank(random30, fine, None, pool, beam)[1].uas
    res["complete_coarse"] = complete_treebank(random30, coarse, None, pool, beam)[1].uas

    # (b): uncertain 15% partial annotation chosen by the coarse model
    uncertain = simulate_uncertain(pool, 15, coarse)
    for kind in ("llgpar", "lgpar", "ltpar"):
        res[kind] = evaluate(train(kind, fa, uncertain, config, dev), test, beam).uas
    res["elapsed"] = time.time() - start
    return res


def _pct(v):
    return f"{100 * v:.2f}"


def test_c7a_partial_beats_full_on_random_subset(trends, record_property):
    record_property("detail", f"7a PA random-30 {_pct(trends['pa_random30'])} vs "
                              f"FA random-30 {_pct(trends['fa_random30'])}")
    assert trends["pa_random30"] >= trends["fa_random30"]


def test_c7b_parser_ordering_on_uncertain(trends, record_property):
    record_property("detail", f"7b LLGPar {_pct(trends['llgpar'])} / LGPar {_pct(trends['lgpar'])} "
                              f"/ LTPar {_pct(trends['ltpar'])}")
    assert trends["llgpar"] >= trends["lgpar"] - TOL
    assert trends["lgpar"] >= trends["ltpar"] - TOL


def test_c7c_fine_completer_beats_coarse(trends, record_property):
    record_property("detail", f"7c completion fine {_pct(trends['complete_fine'])} vs "
                              f"coarse {_pct(trends['complete_coarse'])}")
    assert trends["complete_fine"] > trends["complete_coarse"]


def test_c7_runtime_budget(trends, record_property):
    record_property("detail", f"trend suite {trends['elapsed'] / 60:.1f} min")
    assert trends["elapsed"] <= 3600


# ---------------------------------------------------------------------------
# 8. determinism of every CLI command


def _twice(capsys, argv, outputs=()):
    """Run a command twice; return (stdout, file bytes) per run."""
    runs = []
    for _ in range(2):
        for p in outputs:
            Path(p).unlink(missing_ok=True)
        assert main(argv) == 0
        out = capsys.readouterr().out
        runs.append((out, [Path(p).read_bytes() for p in outputs]))
    return runs


def test_c8_cli_determinism(tmp_path, capsys, record_property):
    d = tmp_path
    tb = load_treebank(DATA / "train.conll")
    save_treebank(tb[:40], d / "fa.conll")
    save_treebank(tb[40:100], d / "pool.conll")
    save_treebank(load_treebank(DATA / "dev.conll")[:20], d / "dev.conll")
    save_treebank(load_treebank(DATA / "test.conll")[:20], d / "test.conll")
    small = ["--max-iterations", "2", "--beam-size", "4", "--dimension-log2", "18", "--seed", "3"]
    commands = [
        (["split", str(d / "pool.conll"), "--sizes", "30,30",
          "--outputs", f"{d / 'p1.conll'},{d / 'p2.conll'}"], [d / "p1.conll", d / "p2.conll"]),
        (["simulate", str(d / "p1.conll"), "--setting", "random", "--alpha", "30", "--seed", "4",
          "-o", str(d / "pa.conll")], [d / "pa.conll"]),
    ]
    for kind in ("llgpar", "lgpar", "ltpar"):
        commands.append((["train", "--kind", kind, "--fa", str(d / "fa.conll"), "--pa", str(d / "pa.conll"),
                          "--dev", str(d / "dev.conll"), "--model", str(d / f"{kind}.bin")] + small,
                         [d / f"{kind}.bin", d / f"{kind}.bin.json"]))
    commands += [
        (["simulate", str(d / "p2.conll"), "--setting", "uncertain", "--alpha", "15",
          "--model", str(d / "llgpar.bin"), "-o", str(d / "unc.conll")], [d / "unc.conll"]),
        (["simulate", str(d / "p2.conll"), "--setting", "divergence", "--beam-size", "4",
          "--models", str(d / "llgpar.bin"), str(d / "lgpar.bin"), str(d / "ltpar.bin"),
          "-o", str(d / "div.conll")], [d / "div.conll"]),
        (["complete", str(d / "pa.conll"), "--model", str(d / "llgpar.bin"), "--gold", str(d / "p1.conll"),
          "-o", str(d / "done.conll")], [d / "done.conll"]),
        (["parse", str(d / "test.conll"), "--model", str(d / "ltpar.bin"), "--beam-size", "4",
          "-o", str(d / "pred.conll")], [d / "pred.conll"]),
        (["parse", str(d / "test.conll"), "--model", str(d / "lgpar.bin")], []),
        (["evaluate", "--gold", str(d / "test.conll"), "--pred", str(d / "pred.conll")], []),
    ]
    plan = d / "plan.yaml"
    plan.write_text(yaml.safe_dump({
        "fa_path": "fa.conll", "pa_source_path": "pool.conll", "dev_path": "dev.conll",
        "test_path": "test.conll", "simulation": {"setting": "uncertain", "alpha": 20},
        "regime": "complete-then-train", "completer": "fine-llgpar", "parser_kind": "lgpar",
        "train_config": {"max_iterations": 2, "beam_size": 4, "feature": {"dimension_log2": 18}}}))
    commands.append((["experiment", str(plan), "--format", "markdown", "-o", str(d / "report.md")],
                     [d / "report.md"]))
    for argv, outputs in commands:
        first, second = _twice(capsys, argv, outputs)
        assert first == second, argv[0]
    record_property("detail", f"{len(commands)} commands rerun byte-identically")
