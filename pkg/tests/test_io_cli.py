import csv
import json
import logging
import os
import struct
import subprocess
import sys

import numpy as np
import pytest

from geognn.errors import ConfigError, CorruptionError, FormatError, ValidationError
from geognn.graph import build_csr
from geognn.io import (
    load_checkpoint,
    load_run_config,
    read_edges_tsv,
    read_embeddings,
    read_json,
    read_labels_tsv,
    read_split_ids,
    save_checkpoint,
    write_edges_tsv,
    write_embeddings,
    write_json,
    write_labels_tsv,
    write_split_ids,
)
from geognn.model import GeoGNN, ModelConfig


def run_cli(args, cwd=None):
    env = dict(os.environ)
    env["OMP_NUM_THREADS"] = "1"
    code = "from geognn.cli import main; import sys; sys.exit(main())"
    return subprocess.run(
        [sys.executable, "-c", code, *args],
        capture_output=True, text=True, cwd=cwd, env=env,
    )


def test_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(7, 5))
    path = tmp_path / "emb.gemb"
    write_embeddings(matrix, path)
    back = read_embeddings(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, matrix.astype(np.float32).astype(np.float64))
    # rewriting the same matrix produces byte-identical output
    other = tmp_path / "emb2.gemb"
    write_embeddings(matrix, other)
    assert path.read_bytes() == other.read_bytes()


def test_embeddings_header_layout(tmp_path):
    path = tmp_path / "one.gemb"
    write_embeddings(np.array([[1.5, -2.0]]), path)
    blob = path.read_bytes()
    magic, version, n, d = struct.unpack_from("<4sIQQ", blob)
    assert (magic, version, n, d) == (b"GEMB", 1, 1, 2)
    assert len(blob) == 24 + 8


def test_embeddings_write_errors(tmp_path):
    path = tmp_path / "x.gemb"
    with pytest.raises(ValidationError):
        write_embeddings(np.ones(4), path)
    with pytest.raises(ValidationError):
        write_embeddings(np.ones((0, 3)), path)
    bad = np.ones((3, 2))
    bad[1, 0] = np.inf
    with pytest.raises(ValidationError) as err:
        write_embeddings(bad, path)
    assert "row 1" in str(err.value)


def test_embeddings_read_errors(tmp_path):
    ok = np.float32([[1.0, 2.0], [3.0, 4.0]]).tobytes()

    def craft(name, blob):
        p = tmp_path / name
        p.write_bytes(blob)
        return p

    with pytest.raises(ValidationError):
        read_embeddings(tmp_path / "missing.gemb")
    with pytest.raises(CorruptionError):
        read_embeddings(craft("short.gemb", b"GEMB\x01"))
    with pytest.raises(FormatError):
        read_embeddings(craft("magic.gemb", struct.pack("<4sIQQ", b"XEMB", 1, 2, 2) + ok))
    with pytest.raises(FormatError):
        read_embeddings(craft("ver.gemb", struct.pack("<4sIQQ", b"GEMB", 2, 2, 2) + ok))
    with pytest.raises(CorruptionError):
        read_embeddings(craft("trunc.gemb", struct.pack("<4sIQQ", b"GEMB", 1, 2, 2) + ok[:8]))
    nan_payload = np.float32([[1.0, np.nan]]).tobytes()
    with pytest.raises(ValidationError) as err:
        read_embeddings(craft("nan.gemb", struct.pack("<4sIQQ", b"GEMB", 1, 1, 2) + nan_payload))
    assert "row 0" in str(err.value)


def test_edges_tsv_round_trip(tmp_path):
    path = tmp_path / "edges.tsv"
    edges = np.array([[0, 1], [2, 3], [1, 4]])
    write_edges_tsv(edges, path)
    assert path.read_text().startswith("# u\tv\n")
    assert np.array_equal(read_edges_tsv(path), edges)
    assert np.array_equal(read_edges_tsv(path, n=5), edges)
    with pytest.raises(ValidationError):
        read_edges_tsv(path, n=4)
    (tmp_path / "wide.tsv").write_text("0\t1\t2\n")
    with pytest.raises(FormatError):
        read_edges_tsv(tmp_path / "wide.tsv")
    (tmp_path / "alpha.tsv").write_text("a\tb\n")
    with pytest.raises(FormatError):
        read_edges_tsv(tmp_path / "alpha.tsv")


def test_labels_tsv_round_trip(tmp_path):
    path = tmp_path / "labels.tsv"
    labels = np.array([2, 0, 1, 1])
    write_labels_tsv(labels, path)
    assert np.array_equal(read_labels_tsv(path), labels)
    assert np.array_equal(read_labels_tsv(path, n=4), labels)
    (tmp_path / "dup.tsv").write_text("0\t1\n0\t2\n")
    with pytest.raises(ValidationError):
        read_labels_tsv(tmp_path / "dup.tsv")
    (tmp_path / "gap.tsv").write_text("0\t1\n2\t0\n")
    with pytest.raises(ValidationError) as err:
        read_labels_tsv(tmp_path / "gap.tsv", n=3)
    assert "missing label for node 1" in str(err.value)


def test_split_ids_round_trip(tmp_path):
    path = tmp_path / "train.txt"
    write_split_ids(np.array([4, 1, 7]), path)
    assert np.array_equal(read_split_ids(path), [4, 1, 7])
    (tmp_path / "bad.txt").write_text("1\nx\n")
    with pytest.raises(FormatError):
        read_split_ids(tmp_path / "bad.txt")


def test_json_round_trip_and_errors(tmp_path):
    path = tmp_path / "obj.json"
    obj = {"b": [1, 2], "a": {"nested": True}}
    write_json(obj, path)
    assert read_json(path) == obj
    # sorted keys make the bytes reproducible
    other = tmp_path / "obj2.json"
    write_json({"a": {"nested": True}, "b": [1, 2]}, other)
    assert path.read_bytes() == other.read_bytes()
    (tmp_path / "broken.json").write_text("{nope")
    with pytest.raises(FormatError):
        read_json(tmp_path / "broken.json")


def test_run_config_strict_parsing(tmp_path, caplog):
    cfg = {
        "model": {"layers": 3, "tau": 0.5},
        "train": {"epochs": 5, "seeds": [0, 1]},
        "drift": {},
        "data": {"features": "feats.gemb", "edges": "/abs/edges.tsv"},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    with caplog.at_level(logging.INFO, logger="geognn"):
        run = load_run_config(path)
    assert run.model.layers == 3
    assert run.train.epochs == 5
    assert run.train.seeds == (0, 1)  # lists arrive as tuples
    assert run.data["features"] == str(tmp_path / "feats.gemb")
    assert run.data["edges"] == "/abs/edges.tsv"
    defaulted = [r.message for r in caplog.records if "defaulted" in r.message]
    assert any("model.heads" in m for m in defaulted)
    assert any("train.lr" in m for m in defaulted)

    def reject(payload):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(payload))
        with pytest.raises(ConfigError):
            load_run_config(bad)

    reject({"model": {}, "extra": {}})
    reject({"model": {"lyers": 2}})
    reject({"data": {"featurs": "x.gemb"}})
    reject({"data": {"features": 3}})
    reject({"data": "features.gemb"})

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"lyers": 2}}))
    with pytest.raises(ConfigError) as err:
        load_run_config(bad)
    assert "unknown config key: model.lyers" in str(err.value)


def small_model():
    cfg = ModelConfig(layers=2, heads=2, d_h=3, tau=0.7, alpha=0.8, seed=5)
    return GeoGNN(cfg, d_in=4, n_classes=3)


def test_checkpoint_round_trip(tmp_path):
    model = small_model()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.n_classes == model.n_classes
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert a.name == b.name
        assert np.array_equal(a.value, b.value)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(9, 4))
    g = build_csr([(0, 1), (1, 2), (3, 4), (5, 6), (7, 8), (2, 5)], 9)
    assert np.array_equal(model.forward(x, g), loaded.forward(x, g))
    other = tmp_path / "model2.ckpt"
    save_checkpoint(model, other)
    assert path.read_bytes() == other.read_bytes()


def test_checkpoint_corruption(tmp_path):
    model = small_model()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    header, payload = blob.split(b"\n", 1)

    def craft(name, data):
        p = tmp_path / name
        p.write_bytes(data)
        return p

    with pytest.raises(FormatError):
        load_checkpoint(craft("nohdr.ckpt", b"no newline here"))
    with pytest.raises(FormatError):
        load_checkpoint(craft("notckpt.ckpt", b'{"format": "other"}\n'))
    with pytest.raises(CorruptionError):
        load_checkpoint(craft("trunc.ckpt", blob[:-16]))
    with pytest.raises(CorruptionError):
        load_checkpoint(craft("trail.ckpt", blob + b"\x00" * 8))
    meta = json.loads(header)
    meta["parameters"][0]["name"] = "W9"
    with pytest.raises(CorruptionError):
        load_checkpoint(
            craft("name.ckpt", json.dumps(meta, sort_keys=True).encode() + b"\n" + payload)
        )
    nan_block = struct.pack("<d", float("nan"))
    with pytest.raises(ValidationError):
        load_checkpoint(
            craft("nan.ckpt", header + b"\n" + nan_block + payload[8:])
        )


def write_dataset(tmp_path):
    out = run_cli([
        "synth", "--nodes", "40", "--dim", "4", "--classes", "2",
        "--kappa", "100", "--p-in", "0.3", "--p-out", "0.02",
        "--seed", "1", "--out", str(tmp_path / "data"),
    ])
    assert out.returncode == 0, out.stderr
    return tmp_path / "data"


def test_cli_train_eval_pipeline(tmp_path):
    data = write_dataset(tmp_path)
    cfg = {
        "model": {"layers": 1, "heads": 1, "d_h": 4, "tau": 1.0, "alpha": 0.5},
        "train": {"epochs": 3, "lr": 0.01, "dropout": 0.0, "seeds": [0],
                  "neg_per_pos": 10, "eval_k": 5},
        "drift": {},
        "data": {
            "features": str(data / "features.gemb"),
            "edges": str(data / "edges.tsv"),
            "labels": str(data / "labels.tsv"),
        },
    }
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    out_dir = tmp_path / "run_out"
    res = run_cli(["train", "--task", "node", "--config", str(tmp_path / "run.json"),
                   "--out", str(out_dir)])
    assert res.returncode == 0, res.stderr
    metrics = json.loads((out_dir / "metrics_seed0.json").read_text())
    assert sorted(metrics.keys()) == ["config", "epochs", "seed", "task", "test"]
    assert len(metrics["epochs"]) == 3
    assert 0.0 <= metrics["test"] <= 1.0
    with open(out_dir / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["seed"] == "0"

    eval_out = tmp_path / "eval.json"
    res = run_cli([
        "eval", "--task", "node", "--checkpoint", str(out_dir / "checkpoint.ckpt"),
        "--features", str(data / "features.gemb"), "--edges", str(data / "edges.tsv"),
        "--labels", str(data / "labels.tsv"),
        "--test-ids", str(out_dir / "splits" / "test.txt"),
        "--out", str(eval_out),
    ])
    assert res.returncode == 0, res.stderr
    payload = json.loads(eval_out.read_text())
    assert payload["metric"] == "accuracy"
    assert 0.0 <= payload["value"] <= 1.0


def test_cli_drift_curve_row_count(tmp_path):
    data = write_dataset(tmp_path)
    out_csv = tmp_path / "curve.csv"
    res = run_cli([
        "drift", "--features", str(data / "features.gemb"),
        "--edges", str(data / "edges.tsv"), "--aggregator", "geodesic",
        "--layers", "4", "--k", "8", "--r", "3", "--out", str(out_csv),
    ])
    assert res.returncode == 0, res.stderr
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5  # input snapshot plus four layers
    assert [r["layer"] for r in rows] == ["0", "1", "2", "3", "4"]
    assert all(r["aggregator"] == "geodesic" for r in rows)
    assert all(float(r["mean_drift"]) >= 0.0 for r in rows)


def test_cli_gradcheck_exit_codes():
    res = run_cli(["gradcheck", "--seed", "0"])
    assert res.returncode == 0, res.stderr
    assert "max relative error" in res.stdout
    value = float(res.stdout.split("max relative error")[1].split("(")[0].strip())
    assert value < 1e-4
    res = run_cli(["gradcheck", "--seed", "0", "--threshold", "0"])
    assert res.returncode == 3


def test_cli_error_exit_codes(tmp_path):
    res = run_cli(["synth", "--not-a-flag"])
    assert res.returncode == 2
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"model": {"lyers": 2}}))
    res = run_cli(["train", "--config", str(bad_cfg), "--out", str(tmp_path / "o")])
    assert res.returncode == 2
    assert "unknown config key" in res.stderr
    res = run_cli(["drift", "--out", str(tmp_path / "d.json")])
    assert res.returncode == 2


def test_cli_synth_deterministic_bytes(tmp_path):
    a = write_dataset(tmp_path / "a")
    b = write_dataset(tmp_path / "b")
    for name in ("features.gemb", "edges.tsv", "labels.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
