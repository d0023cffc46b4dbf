"""Acceptance criteria, one test per criterion.

Each test records PASS/FAIL/SKIP with a short detail into
``conftest.ACCEPTANCE``; the terminal summary prints one line per criterion.
Data-dependent criteria read the public splits from ``EEGCN_DATA_DIR``
(``<dir>/<dataset>/{train,test}.jsonl``, plus ``.conllu`` parses and
``EEGCN_GLOVE`` for the training run).
"""

import contextlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE, FIXTURES
from eegcn import autodiff as ad
from eegcn.cli import main
from eegcn.corpus import (DependencyGraph, build_vocab, label_counts, load_dataset,
                          load_examples, load_glove)
from eegcn.model import (EncodedExample, ModelConfig, aspect_mask, bigcn_layer,
                         encode_examples, forward_logits, forward_pass, forward_trace,
                         fuse_and_represent, init_params, predict, retrieval_attention)
from eegcn.syntax import SdiTable, binary_adjacency, compute_sdi_table, sdi_adjacency
from eegcn.train import (Experiment, TrainConfig, accuracy, compute_loss, macro_f1,
                         run_ablation, run_experiment)

# (positive, neutral, negative) per split
DATASET_COUNTS = {
    "twitter": {"train": (1561, 3127, 1560), "test": (173, 346, 173)},
    "rest14": {"train": (2164, 637, 807), "test": (728, 196, 196)},
    "rest15": {"train": (912, 36, 256), "test": (326, 34, 182)},
    "rest16": {"train": (1240, 69, 439), "test": (469, 30, 117)},
}
REFERENCE_REST14 = {"accuracy": 0.8170, "macro_f1": 0.7363}
RELATIONS = ["nsubj", "amod", "dobj", "det", "advmod", "conj", "punct"]


@contextlib.contextmanager
def criterion(number, desc):
    """Record the outcome of the enclosed block as criterion ``number``."""
    state = {"detail": ""}
    try:
        yield state
    except pytest.skip.Exception as exc:
        ACCEPTANCE[number] = (desc, "SKIP", str(exc))
        raise
    except BaseException as exc:
        ACCEPTANCE[number] = (desc, "FAIL", state["detail"] or f"{type(exc).__name__}: {exc}")
        raise
    ACCEPTANCE[number] = (desc, "PASS", state["detail"])


def random_tree(n, rng):
    order = rng.permutation(np.arange(1, n + 1))
    edges = tuple((int(order[rng.integers(0, k)]), int(order[k]),
                   RELATIONS[rng.integers(len(RELATIONS))]) for k in range(1, n))
    return DependencyGraph(n, edges, (int(order[0]),))


def test_criterion_1_gradient_fidelity():
    with criterion(1, "end-to-end finite-difference gradient check") as rec:
        start = time.perf_counter()
        config = ModelConfig(d_w=6, d_h=6, heads=2, gcn_layers=2, ffn_width=12, dropout=0.0)
        rng = np.random.default_rng(7)
        params = init_params(config, rng.normal(scale=0.5, size=(8, 6)), rng)
        # move off the +-0.01 init so every path carries signal
        for p in params.list():
            p.data[...] += rng.uniform(-0.4, 0.4, p.shape)
        graph = DependencyGraph(4, ((2, 1, "det"), (3, 2, "nsubj"), (3, 4, "punct")), (3,))
        table = SdiTable({"det": 2, "nsubj": 1, "punct": 1}, 4)
        enc = EncodedExample(np.array([2, 5, 3, 7]), sdi_adjacency(graph, table), 2, 1, 0)
        weights = params.weight_matrices()

        def objective():
            return compute_loss(forward_logits(enc, params, config), [enc.label], weights, 1e-3)

        errors = ad.gradient_errors(objective, params.list())
        worst_err, worst_name = max(zip(errors, params.names()))
        elapsed = time.perf_counter() - start
        rec["detail"] = (f"{len(errors)} tensors, worst {worst_err:.2e} ({worst_name}), "
                         f"{elapsed:.1f}s")
        assert worst_err < 1e-4
        assert elapsed < 60


def test_criterion_2_oracle_equivalence():
    with criterion(2, "Bi-GCN, retrieval attention and fusion match dense oracles") as rec:
        rng = np.random.default_rng(2)
        worst_gcn = worst_att = worst_fuse = 0.0
        for _ in range(20):
            n = int(rng.integers(1, 7))
            graph = random_tree(n, rng)
            counts = {rel: int(rng.integers(1, 9)) for rel in RELATIONS}
            table = SdiTable(counts, sum(counts.values()))
            A = sdi_adjacency(graph, table)
            d = int(rng.integers(1, 5))
            H, b = rng.normal(size=(n, d)), rng.normal(size=d)
            for bidirectional in (True, False):
                W = rng.normal(size=(2 * d if bidirectional else d, d))
                got = bigcn_layer(ad.constant(H), A, ad.constant(W), ad.constant(b),
                                  bidirectional).data
                want = oracles.bigcn_dense(H.tolist(), A.tolist(), W.tolist(), b.tolist(),
                                           bidirectional)
                worst_gcn = max(worst_gcn, float(np.abs(got - np.array(want)).max()))

            H_ctx = rng.normal(size=(n, d))
            start = int(rng.integers(1, n + 1))
            H_mask = aspect_mask(ad.constant(rng.normal(size=(n, d))), start, 1)
            alpha = retrieval_attention(ad.constant(H_ctx), H_mask).data
            want_alpha = oracles.retrieval_alpha(H_ctx.tolist(), H_mask.data.tolist())
            worst_att = max(worst_att, float(np.abs(alpha - want_alpha).max()))

            Z, W_proj = rng.normal(size=(n, 4)), rng.normal(size=(4, d))
            res = fuse_and_represent(ad.constant(H_ctx), ad.constant(alpha), ad.constant(Z),
                                     ad.constant(W_proj)).data
            want_res = oracles.fuse(H_ctx.tolist(), alpha.tolist(), Z.tolist(), W_proj.tolist())
            worst_fuse = max(worst_fuse, float(np.abs(res - want_res).max()))
        rec["detail"] = f"max abs diff gcn {worst_gcn:.1e}, attention {worst_att:.1e}, " \
                        f"fuse {worst_fuse:.1e}"
        assert worst_gcn <= 1e-10
        assert worst_att <= 1e-12 and worst_fuse <= 1e-12


def test_criterion_3_metric_oracle():
    with criterion(3, "accuracy and macro-F1 match a brute-force oracle") as rec:
        assert accuracy([0, 1, 1, 2], [0, 0, 1, 2]) == 0.75
        assert abs(macro_f1([0, 1, 1, 2], [0, 0, 1, 2]) - 7 / 9) <= 1e-12
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            preds, golds = rng.integers(0, 3, n), rng.integers(0, 3, n)
            acc, f1 = oracles.metrics_brute(preds.tolist(), golds.tolist())
            worst = max(worst, abs(accuracy(preds, golds) - acc),
                        abs(macro_f1(preds, golds) - f1))
        rec["detail"] = f"1000 cases, max diff {worst:.1e}; worked case 0.75 / 7/9"
        assert worst <= 1e-12


def test_criterion_4_relation_weights():
    with criterion(4, "relation-frequency edge weights") as rec:
        toy = [DependencyGraph(3, ((1, 2, "nsubj"), (1, 3, "nsubj")), (1,)),
               DependencyGraph(3, ((2, 1, "amod"), (2, 3, "dobj")), (2,))]
        table = compute_sdi_table(toy)
        assert table.total == 4 and table.value("nsubj") == 0.5
        rng = np.random.default_rng(4)
        graphs = [random_tree(int(rng.integers(1, 12)), rng) for _ in range(100)]
        corpus_table = compute_sdi_table(graphs)
        total = sum(corpus_table.values().values())
        assert abs(total - 1.0) <= 1e-12
        for g in graphs:
            np.testing.assert_array_equal(sdi_adjacency(g, corpus_table) != 0,
                                          binary_adjacency(g) != 0)
        rec["detail"] = f"nsubj=0.5; sum-1 = {total - 1:.1e}; 100 graph patterns equal"


def test_criterion_5_masking_and_normalisation(fixture_experiment):
    with criterion(5, "masking, softmax normalisation and shift invariance") as rec:
        rng = np.random.default_rng(5)
        config = ModelConfig(d_w=8, d_h=4, heads=2, ffn_width=8, gcn_layers=2)
        exp = fixture_experiment
        params = init_params(config, exp.embeddings.matrix, rng)
        for p in params.list():
            p.data[...] += rng.normal(scale=0.3, size=p.shape)
        encoded = encode_examples(exp.train + exp.test, exp.embeddings.vocab, exp.sdi, config)
        worst_sum = 0.0
        for enc in encoded:
            trace = forward_trace(enc, params, config, training=True, rng=rng)
            keep = np.zeros(len(enc.ids), dtype=bool)
            keep[enc.aspect_start - 1:enc.aspect_start - 1 + enc.aspect_len] = True
            assert np.all(trace.masked.data[~keep] == 0.0)
            probs = ad.softmax_array(trace.logits.data)
            worst_sum = max(worst_sum, abs(probs.sum() - 1), abs(trace.alpha.data.sum() - 1))
        for _ in range(1000):
            logits = rng.normal(scale=rng.uniform(0.1, 50), size=3)
            shift = rng.uniform(-100, 100)
            p, q = ad.softmax_array(logits), ad.softmax_array(logits + shift)
            worst_sum = max(worst_sum, abs(p.sum() - 1), abs(q.sum() - 1))
            assert p.argmax() == q.argmax()
        preds, probs = predict(encoded, params, config)
        shifted = ad.softmax_array(np.log(probs) + 3.0)
        assert np.array_equal(shifted.argmax(axis=1), preds)
        assert forward_pass(encoded[0], params, config).shape == (3,)
        rec["detail"] = f"{len(encoded)} sentences; max |sum-1| {worst_sum:.1e}"
        assert worst_sum <= 1e-9


def test_criterion_6_overfit(fixture_experiment):
    with criterion(6, "overfit the 32-example fixture") as rec:
        start = time.perf_counter()
        config = ModelConfig(d_w=8, d_h=8, heads=2, ffn_width=16, gcn_layers=2, seed=0)
        tc = TrainConfig(epochs=200, batch_size=8, seed=0)
        exp = fixture_experiment
        overfit = Experiment(exp.train, exp.train, exp.embeddings, exp.sdi)
        run = run_experiment(overfit, config, tc)
        final = run.train.log[-1]
        correct = round(run.report.accuracy * len(exp.train))
        elapsed = time.perf_counter() - start
        rec["detail"] = (f"best train acc {correct}/32 at epoch {run.train.best_epoch}, "
                         f"final-epoch acc {final.test_acc:.3f}, {elapsed:.0f}s")
        assert len(exp.train) == 32
        assert correct >= 31
        assert elapsed < 300


def test_criterion_7_dataset_counts():
    with criterion(7, "public split label counts") as rec:
        root = os.environ.get("EEGCN_DATA_DIR")
        if not root or not Path(root).is_dir():
            rec["detail"] = ("dataset not present: set EEGCN_DATA_DIR to a directory with "
                             "twitter/rest14/rest15/rest16 {train,test}.jsonl")
            pytest.fail(rec["detail"])
        mismatches = []
        for name, splits in DATASET_COUNTS.items():
            for split, (pos, neu, neg) in splits.items():
                path = Path(root) / name / f"{split}.jsonl"
                if not path.is_file():
                    mismatches.append(f"{name}/{split}: missing")
                    continue
                counts = label_counts(load_examples(path))
                got = (counts["positive"], counts["neutral"], counts["negative"])
                if got != (pos, neu, neg):
                    mismatches.append(f"{name}/{split}: {got} != {(pos, neu, neg)}")
        rec["detail"] = "; ".join(mismatches) or "8 splits match"
        assert not mismatches


@pytest.mark.stretch
def test_criterion_8_desk_reproduction(tmp_path):
    with criterion(8, "full-size run on Rest14 (stretch, not gating)") as rec:
        root = os.environ.get("EEGCN_DATA_DIR")
        glove = os.environ.get("EEGCN_GLOVE")
        if os.environ.get("EEGCN_RUN_STRETCH") != "1" or not root or not glove:
            pytest.skip("needs EEGCN_RUN_STRETCH=1, EEGCN_DATA_DIR and EEGCN_GLOVE")
        data = Path(root) / "rest14"
        train = load_dataset(data / "train.jsonl", data / "train.conllu")
        test = load_dataset(data / "test.jsonl", data / "test.conllu")
        vocab = build_vocab(train + test)
        emb = load_glove(glove, vocab, dim=300, rng=np.random.default_rng(0))
        exp = Experiment.build(train, test, emb)
        config, tc = ModelConfig(seed=0), TrainConfig(seed=0)
        start = time.perf_counter()
        full = run_ablation("full", exp, config, tc)
        nodep = run_ablation("no-dependency", exp, config, tc)
        hours = (time.perf_counter() - start) / 3600
        summary = {
            "full": full.report.to_dict(), "no-dependency": nodep.report.to_dict(),
            "reference": REFERENCE_REST14,
            "gap": {k: REFERENCE_REST14[k] - getattr(full.report, k) for k in REFERENCE_REST14},
            "hours": hours,
        }
        out = Path(os.environ.get("EEGCN_STRETCH_OUT", tmp_path))
        out.mkdir(parents=True, exist_ok=True)
        (out / "rest14_reproduction.json").write_text(json.dumps(summary, indent=2))
        rec["detail"] = (f"acc {full.report.accuracy:.4f} f1 {full.report.macro_f1:.4f}; "
                         f"no-dependency f1 {nodep.report.macro_f1:.4f}; {hours:.2f}h")
        assert full.report.accuracy >= 0.75 and full.report.macro_f1 >= 0.60
        assert full.report.macro_f1 > nodep.report.macro_f1


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "identical training runs give byte-identical epoch logs") as rec:
        flags = ["--train", str(FIXTURES / "train.jsonl"), "--test", str(FIXTURES / "test.jsonl"),
                 "--parses-train", str(FIXTURES / "train.conllu"),
                 "--parses-test", str(FIXTURES / "test.conllu"),
                 "--glove", str(FIXTURES / "glove.txt"), "--config", str(FIXTURES / "tiny.cfg"),
                 "--set", "dropout=0.3", "--seed", "11"]
        manifests, logs = [], []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert main(["train", *flags, "--out", str(out)]) == 0
            manifest = json.loads((out / "manifest.json").read_text())
            for key in ("out", "started_at", "finished_at"):
                manifest.pop(key)
            manifests.append(manifest)
            logs.append((out / "epoch_log.csv").read_bytes())
        assert manifests[0] == manifests[1]
        assert logs[0] == logs[1]
        epochs = len(logs[0].splitlines()) - 1
        rec["detail"] = f"{epochs} epochs, {len(logs[0])} bytes identical"
