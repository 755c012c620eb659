import json
import math
import os
import shutil
import subprocess
from pathlib import Path

import pytest

import metapoi

CONFIG = Path(os.environ.get("METAPOI_CONFIG", Path(__file__).resolve().parents[2] / "configs" / "synthetic.json"))
CLI = os.environ.get("METAPOI_CLI")


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    shutil.copy(CONFIG, tmp_path / "synthetic.json")
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_haversine_quarter_equator():
    assert abs(metapoi.haversine_km(0, 0, 0, 90) - 10007.54) < 0.01
    assert metapoi.haversine_km(1, 2, 1, 2) == 0.0


def test_pearson():
    assert abs(metapoi.pearson([1, 2, 3], [1, 2, 4]) - 0.9820) < 5e-4
    with pytest.raises(metapoi.NumericalError):
        metapoi.pearson([1, 2, 3], [2, 2, 2])


def test_metrics():
    assert metapoi.ndcg_at_k([3], 5) == 0.5
    assert metapoi.hit_ratio_at_k([1, 3, 6, 2], 5) == 0.75
    assert metapoi.rank_of_truth([0.2, 0.2, 0.2], 2) == 3


def test_time_and_distance_buckets():
    # 2012-04-07 is a Saturday
    ts = metapoi.parse_timestamp("2012-04-07T10:00:00Z")
    assert metapoi.discretize_time(ts) == 34
    assert metapoi.discretize_distance(3.0, first_step=True) == 0


def test_parse_and_filter():
    rows = ["user_id,poi_id,category,latitude,longitude,timestamp"]
    rows += [f"u1,p{i % 2},Food,40.0,-74.0,{1333000000 + i * 60}" for i in range(6)]
    rows.append("u2,p0,Food,95.0,-74.0,1333000000")
    records, diags = metapoi.parse_checkins_text("\n".join(rows) + "\n")
    assert len(records) == 6
    assert len(diags) == 1
    assert records[0].category_id == metapoi.category_index("Food")
    assert len(metapoi.filter_sparse(records, 5, 3)) == 6


def test_synth_and_pipeline(workdir):
    raws = metapoi.synthesize("synthetic.json")
    assert set(raws) == {"T", "A", "B"}
    assert all(Path(p).exists() for p in raws.values())
    out = metapoi.run_pipeline("synthetic.json", "MERec", iters=5)
    rep = out["report"]
    assert sorted(rep["hr"]) == [5, 10]
    assert all(0.0 <= v <= 1.0 for v in rep["hr"].values())
    assert rep["hr"][5] <= rep["hr"][10]
    assert rep["ndcg"][5] <= rep["hr"][5]
    assert rep["count"] > 0
    assert out["gammas"]["T"] == 1.0
    again = metapoi.run_pipeline("synthetic.json", "MERec", iters=5)
    assert again["report"] == rep
    with pytest.raises(ValueError):
        metapoi.run_pipeline("synthetic.json", "nope", iters=1)

    ds = metapoi.load_dataset(str(workdir / "run" / "datasets" / "T"))
    train, val, test = metapoi.split_sizes(ds)
    n = ds.num_sequences
    assert (train, val, test) == (math.floor(0.8 * n), math.floor(0.1 * n), n - math.floor(0.8 * n) - math.floor(0.1 * n))
    ids, matrix = metapoi.correlation_matrix([ds, ds])
    assert matrix[0][1] == pytest.approx(1.0)


def cli(*args):
    return subprocess.run([CLI, *args], capture_output=True, text=True)


@pytest.mark.skipif(CLI is None, reason="METAPOI_CLI not set")
def test_cli_exit_codes_and_manifests(workdir):
    assert cli("synth", "--config", "synthetic.json").returncode == 0
    r = cli("pipeline", "--config", "synthetic.json", "--iters", "5")
    assert r.returncode == 0, r.stderr
    manifest = json.loads((workdir / "run" / "pipeline_manifest.json").read_text())
    assert manifest["command"] == "pipeline"
    assert manifest["seed"] == 1

    assert cli("pipeline", "--config", "missing.json").returncode == 1
    assert cli("pipeline", "--config", "synthetic.json", "--target", "Z").returncode == 1
    assert cli("pipeline", "--config", "synthetic.json", "--no-such-flag").returncode == 1

    cfg = json.loads((workdir / "synthetic.json").read_text())
    cfg.pop("synth")
    cfg["out"] = "elsewhere"
    cfg["cities"] = [{"id": c["id"], "raw": "nowhere/" + c["id"] + ".csv"} for c in cfg["cities"]]
    (workdir / "broken.json").write_text(json.dumps(cfg))
    assert cli("ingest", "--config", "broken.json").returncode == 2
