import json

import numpy as np
import pytest

from poe import checkpoint as ckpt
from poe.cli import run, sha256_file
from poe.records import eval_record_from_json, pair_from_json, read_jsonl

SMALL_FLAGS = ["--layers", "2", "--d-model", "16", "--heads", "2", "--ffn", "24", "--bottleneck", "4",
               "--max-len", "32", "--batch-size", "6", "--max-steps", "12", "--eval-every", "6"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--out", str(root / "data"), "--per-domain", "12", "--eval-size", "30", "--tasks", "5"]) == 0
    assert run(["forge", "--dialogues", str(root / "data" / "dialogues.jsonl"), "--out", str(root / "forged")]) == 0
    assert run(["train", "--data", str(root / "forged"), "--out", str(root / "p.ckpt"), *SMALL_FLAGS]) == 0
    return root


def test_forge_outputs(work):
    files = sorted(p.name for p in (work / "forged").iterdir())
    assert "manifest.json" in files and "chitchat.train.jsonl" in files and "knowledge.valid.jsonl" in files
    pairs = read_jsonl(work / "forged" / "empathy.train.jsonl", pair_from_json)
    assert sum(p.label for p in pairs) * 2 == len(pairs)


def test_train_manifest(work):
    man = json.loads((work / "p.ckpt.manifest.json").read_text())
    assert man["seed"] == 0 and man["command"] == "train"
    assert len(man["config_hash"]) == 64 and {"python", "numpy", "scipy", "poe"} <= set(man["versions"])
    assert man["outputs"][str(work / "p.ckpt")] == sha256_file(work / "p.ckpt")
    assert any(k.endswith("chitchat.train.jsonl") for k in man["inputs"])
    history = [json.loads(line) for line in (work / "p.ckpt.history.jsonl").read_text().splitlines()]
    assert {h["stage"] for h in history} == {"multitask", "finetune"}


def test_train_twice_same_hash(work, tmp_path):
    out = tmp_path / "again.ckpt"
    assert run(["train", "--data", str(work / "forged"), "--out", str(out), *SMALL_FLAGS]) == 0
    assert sha256_file(out) == sha256_file(work / "p.ckpt")


def test_pool_on_single_expert_is_identity(work, tmp_path):
    single = tmp_path / "single.ckpt"
    pooled = tmp_path / "pooled.ckpt"
    assert run(["pool", "--checkpoint", str(work / "p.ckpt"), "--mode", "min", "--out", str(single)]) == 0
    assert run(["pool", "--checkpoint", str(single), "--mode", "avg", "--out", str(pooled)]) == 0
    probe = work / "forged" / "chitchat.valid.jsonl"
    for ck, name in ((single, "a.jsonl"), (pooled, "b.jsonl")):
        assert run(["score", "--checkpoint", str(ck), "--pairs", str(probe), "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a.jsonl").read_text()
    assert a == (tmp_path / "b.jsonl").read_text()
    assert all(json.loads(line)["passes"] == 1 for line in a.splitlines())


def test_score_late_fusion_and_hint(work, tmp_path):
    probe = work / "forged" / "chitchat.valid.jsonl"
    out = tmp_path / "s.jsonl"
    assert run(["score", "--checkpoint", str(work / "p.ckpt"), "--pairs", str(probe), "--out", str(out)]) == 0
    traces = [json.loads(line) for line in out.read_text().splitlines()]
    assert all(t["passes"] == 3 and abs(t["score"] - sum(t["components"]) / 3) < 1e-12 for t in traces)
    assert run(["score", "--checkpoint", str(work / "p.ckpt"), "--pairs", str(probe), "--out", str(out),
                "--domain", "empathy"]) == 0
    hinted = [json.loads(line) for line in out.read_text().splitlines()]
    assert [h["score"] for h in hinted] == [t["components"][1] for t in traces]


def test_eval_oracle_gives_one(work, tmp_path):
    rep = tmp_path / "oracle"
    assert run(["eval", "--oracle", "--dataset", str(work / "data" / "eval_chitchat.jsonl"),
                "--dataset", f"q={work / 'data' / 'eval_quality.jsonl'}", "--report", str(rep)]) == 0
    data = json.loads((tmp_path / "oracle.json").read_text())
    assert [d["rho"] for d in data["datasets"]] == [1.0, 1.0] and data["overall"] == 1.0
    assert "Average (all)" in (tmp_path / "oracle.txt").read_text()


def test_eval_with_panel_counts_passes(work, tmp_path):
    rep = tmp_path / "panel"
    path = work / "data" / "eval_chitchat.jsonl"
    assert run(["eval", "--checkpoint", str(work / "p.ckpt"), "--dataset", str(path),
                "--domain-of", "eval_chitchat=chitchat", "--dataset", f"other={path}", "--report", str(rep)]) == 0
    data = json.loads((tmp_path / "panel.json").read_text())
    n = len(read_jsonl(path, eval_record_from_json))
    assert data["encoder_passes"] == n + 3 * n
    assert [d["domain"] for d in data["datasets"]] == ["chitchat", "Other"]


def test_select_oracle_and_random(work, tmp_path):
    tasks = work / "data" / "selection.jsonl"
    assert run(["select", "--tasks", str(tasks), "--oracle", "--report", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o.json").read_text())["hits_at_1"] == 1.0
    assert run(["select", "--tasks", str(tasks), "--checkpoint", str(work / "p.ckpt"), "--domain", "chitchat",
                "--report", str(tmp_path / "p")]) == 0
    assert 0.0 <= json.loads((tmp_path / "p.json").read_text())["hits_at_1"] <= 1.0


def test_new_adapter(work, tmp_path):
    out = tmp_path / "grown.ckpt"
    base = [str(work / "p.ckpt"), "--train", str(work / "forged" / "chitchat.train.jsonl"),
            "--valid", str(work / "forged" / "chitchat.valid.jsonl")]
    assert run(["new-adapter", "--checkpoint", *base, "--domain", "extra", "--out", str(out),
                "--max-steps", "4", "--eval-every", "2"]) == 0
    old, new = ckpt.load(work / "p.ckpt"), ckpt.load(out)
    assert new.domains == [*old.domains, "extra"]
    assert all(np.array_equal(old.params[k], new.params[k]) for k in old.params)
    assert run(["new-adapter", "--checkpoint", *base, "--domain", "empathy", "--out", str(out)]) == 2


def test_fewshot_report(work, tmp_path):
    one = tmp_path / "one.ckpt"
    assert run(["pool", "--checkpoint", str(work / "p.ckpt"), "--out", str(one)]) == 0
    assert run(["fewshot", "--checkpoint", str(one), "--data", str(work / "data" / "eval_quality.jsonl"),
                "--k", "20", "40", "--seeds", "2", "--epochs", "1", "--report", str(tmp_path / "fs")]) == 0
    data = json.loads((tmp_path / "fs.json").read_text())
    assert [r["k_percent"] for r in data["results"]] == [20, 40] and len(data["results"][0]["runs"]) == 2
    assert data["train"]["loss"] == "mse" and data["train"]["batch_size"] == 2


def test_config_precedence_and_env_seed(work, tmp_path, monkeypatch):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 7\n[fewshot]\nbatch_size = 4\nlr = 0.01\n")
    one = tmp_path / "one.ckpt"
    run(["pool", "--checkpoint", str(work / "p.ckpt"), "--out", str(one)])
    args = ["fewshot", "--checkpoint", str(one), "--data", str(work / "data" / "eval_quality.jsonl"),
            "--k", "20", "--seeds", "1", "--epochs", "1", "--config", str(ini)]
    assert run([*args, "--lr", "0.5", "--report", str(tmp_path / "a")]) == 0
    man = json.loads((tmp_path / "a.manifest.json").read_text())
    assert man["seed"] == 7 and man["config"]["train"]["batch_size"] == 4 and man["config"]["train"]["lr"] == 0.5
    monkeypatch.setenv("POE_SEED", "11")
    assert run([*args[:-2], "--report", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b.manifest.json").read_text())["seed"] == 11
    assert run([*args, "--seed", "3", "--report", str(tmp_path / "c")]) == 0
    assert json.loads((tmp_path / "c.manifest.json").read_text())["seed"] == 3


def test_exit_codes(work, tmp_path):
    assert run(["train", "--bogus"]) == 2
    assert run(["nope"]) == 2
    assert run(["score", "--checkpoint", str(work / "p.ckpt"), "--pairs", str(tmp_path / "missing.jsonl"),
                "--out", str(tmp_path / "o.jsonl")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"domain": "d", "context": ["a"], "response": "b", "extra": 1}\n')
    assert run(["score", "--checkpoint", str(work / "p.ckpt"), "--pairs", str(bad), "--out", str(tmp_path / "o")]) == 3
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes((work / "p.ckpt").read_bytes()[:300])
    assert run(["pool", "--checkpoint", str(broken), "--out", str(tmp_path / "x.ckpt")]) == 4
    ini = tmp_path / "bad.ini"
    ini.write_text("[panel]\nwidth = 3\n")
    assert run(["train", "--data", str(work / "forged"), "--out", str(tmp_path / "z"), "--config", str(ini)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(work, tmp_path):
    flags = [f for f in SMALL_FLAGS]
    assert run(["train", "--data", str(work / "forged"), "--out", str(tmp_path / "n.ckpt"), *flags,
                "--lr", "1e306", "--stages", "multitask"]) == 5
