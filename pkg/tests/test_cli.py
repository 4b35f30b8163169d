import json

import pytest

from necklab import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def error_of(err):
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) >= {"error", "message"}
    return doc


@pytest.mark.parametrize("doc", ["", "{}", "[]", "{not json", {"command": "falsify"},
                                 {"command": "certify", "bogus": 1}, {"command": "certify", "L": -1},
                                 {"command": "certify", "n_switch": 2.5}])
def test_bad_config_file_is_usage_error(tmp_path, capsys, doc):
    code, out, err = run(capsys, "certify", "--config", write_cfg(tmp_path, doc))
    assert code == 2
    assert out == ""
    assert error_of(err)["error"] == "config"


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "certify", "--config", str(tmp_path / "nope.json"))
    assert code == 2
    error_of(err)


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["certify", "--L", "abc"], ["pohozaev", "--variant", "x"]])
def test_usage_errors_are_json(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert error_of(err)["error"] == "usage"


def test_flag_out_of_range_rejected(capsys):
    code, _, err = run(capsys, "falsify", "--samples", "0")
    assert code == 2
    error_of(err)


@pytest.mark.parametrize("value", ["0", "-2", "four"])
def test_thread_variable_validated(monkeypatch, capsys, value):
    monkeypatch.setenv("NECKLAB_THREADS", value)
    code, _, err = run(capsys, "certify", "--n-switch", "20")
    assert code == 2
    assert "NECKLAB_THREADS" in error_of(err)["message"]


def test_config_merge_order(tmp_path):
    path = write_cfg(tmp_path, {"command": "falsify", "samples": 50, "seed": 3})
    cfg = cli.load_config("falsify", path, {"seed": 7, "L": None})
    assert cfg["samples"] == 50 and cfg["seed"] == 7 and cfg["L"] == cli.DEFAULTS["falsify"]["L"]


def test_provenance_hash_tracks_config():
    a = cli.provenance("falsify", dict(cli.DEFAULTS["falsify"]))
    b = cli.provenance("falsify", {**cli.DEFAULTS["falsify"], "seed": 1})
    assert a["config_sha256"] != b["config_sha256"]
    assert a == cli.provenance("falsify", dict(cli.DEFAULTS["falsify"]))
    assert not any("time" in k or "date" in k for k in a)


def test_certify_small(tmp_path, capsys):
    code, out, _ = run(capsys, "certify", "--L", "3", "--n-switch", "40", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert doc["verdict"] == "Pass"
    assert doc["provenance"]["command"] == "certify"
    assert json.loads((tmp_path / "certificate.json").read_text()) == doc["certificate"]
    assert json.loads((tmp_path / "summary.json").read_text()) == doc


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_falsify_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        code, _, _ = run(capsys, "falsify", "--samples", "500", "--n-max", "8", "--seed", "4", "--out", str(d))
        assert code == 0
    assert _files(a) == _files(b)
    csv = (a / "sup_by_degree.csv").read_text().splitlines()
    assert csv[0].startswith("# ") and "n,sup_ratio" in csv
    assert sum(line.startswith("# config_sha256=") for line in csv) == 1
    assert "runtime" not in (a / "summary.json").read_text()


def test_falsify_different_seed_differs(tmp_path, capsys):
    outs = [run(capsys, "falsify", "--samples", "200", "--n-max", "6", "--seed", s)[1] for s in ("0", "1")]
    assert outs[0] != outs[1]


def test_solve(tmp_path, capsys):
    code, out, _ = run(capsys, "solve", "--count", "2", "--seed", "1", "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == (0 if doc["verdict"] == "Pass" else 1)
    assert len(doc["problems"]) == 2
    body = [l for l in (tmp_path / "trichotomy.csv").read_text().splitlines() if not l.startswith("#")]
    assert body[0].startswith("problem,")


@pytest.mark.parametrize("variant,test_field", [("extrinsic", None), ("extrinsic", "geodesic"),
                                                ("intrinsic-laplace", "rotating"),
                                                ("intrinsic-hessian", "normalized"),
                                                ("intrinsic-laplace", None)])
def test_pohozaev(tmp_path, capsys, variant, test_field):
    argv = ["pohozaev", "--variant", variant, "--out", str(tmp_path)]
    if test_field:
        argv += ["--test-field", test_field]
    code, out, _ = run(capsys, *argv)
    doc = json.loads(out)
    assert code == 0 and doc["verdict"] == "Pass"
    assert doc["max_residual"] <= 1e-7 * doc["scale"]
    assert doc["work_subtracted"] == (variant != "extrinsic" or test_field is not None)
    assert (tmp_path / f"Q_{doc['variant']}.dat").exists()


def test_pohozaev_field_file(tmp_path, capsys):
    import numpy as np
    from necklab.spectral_core import BiharmonicField

    fld = BiharmonicField.random(np.random.default_rng(5), 3, 4, branches="AC")
    path = tmp_path / "field.json"
    path.write_text(fld.to_json())
    code, out, _ = run(capsys, "pohozaev", "--field", str(path))
    assert code == 0 and json.loads(out)["work_subtracted"] is False


def test_decay_two_sided(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"command": "decay", "T0": -16.0, "anchors": [-8.0], "seed": 2})
    code, out, _ = run(capsys, "decay", "--config", cfg, "--out", str(tmp_path / "o"))
    doc = json.loads(out)
    assert code == 0 and doc["verdict"] == "Pass"
    assert doc["coefficient"] == pytest.approx(1 / (2 * 3 ** 0.5))
    assert (tmp_path / "o" / "margins.csv").exists()


def test_decay_one_sided(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"command": "decay", "T0": -16.0, "anchors": [-6.0], "seed": 2})
    code, out, _ = run(capsys, "decay", "--config", cfg, "--one-sided")
    assert code == 0 and json.loads(out)["verdict"] == "Pass"


def test_decay_failure_exits_one(tmp_path, capsys):
    # the anchor sits too close to the end of the cylinder for a unit window
    cfg = write_cfg(tmp_path, {"command": "decay", "T0": -16.0, "anchors": [-0.5]})
    code, out, _ = run(capsys, "decay", "--config", cfg)
    doc = json.loads(out)
    assert code == 1 and doc["verdict"] == "Fail"
    assert "reason" in doc["certificates"][0]


def test_neck_removable(tmp_path, capsys):
    code, out, _ = run(capsys, "neck", "--experiment", "removable", "--out", str(tmp_path))
    assert code == 0 and json.loads(out)["verdict"] == "Pass"
    assert (tmp_path / "removable.csv").exists()


def test_neck_family_small(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"command": "neck", "experiment": "energy-identity",
                               "family": {"indices": [4, 5, 6]}})
    code, out, _ = run(capsys, "neck", "--config", cfg, "--out", str(tmp_path / "o"))
    doc = json.loads(out)
    assert code == 0 and doc["trends"]["neck_energy"]["passed"]
    assert (tmp_path / "o" / "neck_energy.dat").read_text().count("\n") == 3


def test_neck_unmet_threshold_exits_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"command": "neck", "family": {"indices": [5, 6]}, "threshold": 1e-9})
    code, out, _ = run(capsys, "neck", "--config", cfg)
    assert code == 1 and json.loads(out)["verdict"] == "Fail"


def test_neck_infeasible_family_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"command": "neck", "family": {"K": 1}})
    code, _, err = run(capsys, "neck", "--config", cfg)
    assert code == 2
    error_of(err)
