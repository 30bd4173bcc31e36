import csv
import json

import pytest

from groupclip.cli import OUTPUT_ENV, main


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


QUAD = {"task": {"kind": "quadratic", "dim": 4, "n": 64}, "sigma": 0.5, "batch_size": 16,
        "steps": 12, "lr": 0.2}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_minimal(tmp_path):
    cfg = write_json(tmp_path / "run.json", QUAD)
    assert main(["train", cfg, "--out", str(tmp_path / "out")]) == 0
    rows = read_csv(tmp_path / "out" / "all-layer_seed0.csv")
    assert rows[0] == ["step", "loss", "grad_norm", "max_peak_bytes"]
    assert len(rows) == 13
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["kind"] == "train" and summary["steps"] == 12
    assert summary["epsilon"] > 0


def test_train_two_plans_and_env_output(tmp_path, monkeypatch):
    doc = {**QUAD, "task": {"kind": "two-layer-teacher", "dim": 4, "n": 64, "depth": 4,
                            "width": 4},
           "plans": ["all-layer", "layer-wise"]}
    cfg = write_json(tmp_path / "run.json", doc)
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["train", cfg]) == 0
    out = tmp_path / "env"
    a = read_csv(out / "all-layer_seed0.csv")
    b = read_csv(out / "layer-wise_seed0.csv")
    assert [r[1] for r in a[2:]] != [r[1] for r in b[2:]]
    assert int(a[1][3]) >= int(b[1][3])


def test_train_is_byte_identical(tmp_path):
    doc = {**QUAD, "plans": ["all-layer", "layer-wise"], "seeds": [0, 1]}
    cfg = write_json(tmp_path / "run.json", doc)
    main(["train", cfg, "--out", str(tmp_path / "a")])
    main(["train", cfg, "--out", str(tmp_path / "b")])
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 5
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_train_target_eps_and_classification(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("x1,x2,label\n" + "".join(f"{i % 3},{-(i % 2)},{i % 2}\n"
                                                for i in range(20)))
    cfg = write_json(tmp_path / "run.json", {"data_csv": "data.csv", "target_eps": 4.0,
                                             "batch_size": 5, "epochs": 2})
    assert main(["train", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["epsilon"] == pytest.approx(4.0, rel=1e-3)
    assert 0 <= summary["runs"][0]["final_accuracy"] <= 1


def test_train_divergence_exit_code(tmp_path):
    doc = {**QUAD, "sigma": 0.0, "clip": "none", "lr": 1e6, "steps": 50}
    cfg = write_json(tmp_path / "run.json", doc)
    assert main(["train", cfg, "--out", str(tmp_path / "o")]) == 3


@pytest.mark.parametrize("doc", [{"task": {"kind": "quadratic"}},
                                 {**QUAD, "plans": ["uniform:0"]},
                                 {**QUAD, "batch_size": 1000}])
def test_train_bad_config_exit_code(tmp_path, doc, capsys):
    cfg = write_json(tmp_path / "run.json", doc)
    assert main(["train", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_profile_hand_value(tmp_path, capsys):
    arch = write_json(tmp_path / "a.json", {"layers": [{"T": 2, "d": 3, "p": 5}]})
    assert main(["profile", arch, "-B", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    # inputs 4*2*3 plus output gradients 4*2*5 floats
    assert doc["plans"][0]["max_peak"] == 64.0
    assert doc["plans"][0]["max_peak_bytes"] == 512


def test_profile_sweep_and_csv(tmp_path, capsys):
    layers = [{"T": 1, "d": d, "p": p} for d, p in [(8, 4), (4, 4), (4, 8), (8, 2)]]
    arch = write_json(tmp_path / "a.json", {"layers": layers})
    assert main(["profile", arch, "--sweep", "--csv", str(tmp_path / "s.csv"),
                 "--search", "exhaustive", "--top", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["boundary"] for r in doc["sweep"]] == [1, 2, 3]
    assert len(doc["search"]["ranked"]) == 3
    assert len(read_csv(tmp_path / "s.csv")) == 4


def test_profile_errors(tmp_path):
    assert main(["profile", str(tmp_path / "nope.json")]) == 2
    arch = write_json(tmp_path / "a.json", {"layers": [{"T": 1, "d": 2, "p": 2}]})
    assert main(["profile", arch, "--plan", "uniform:5"]) == 2
    assert main(["profile", arch, "--csv", str(tmp_path / "x.csv")]) == 2


def test_verify_fact1_fixed_layers(capsys):
    assert main(["verify", "fact1", "--layers", "5", "--trials", "20"]) == 0
    assert "20/20" in capsys.readouterr().out


def test_verify_counterexample_trace(capsys):
    assert main(["verify", "counterexample", "--trials", "5"]) == 0
    out = capsys.readouterr().out
    assert "PASS counterexample" in out and "not representable" in out


def test_verify_all_fast(tmp_path, capsys):
    report = tmp_path / "v.json"
    assert main(["verify", "all", "--trials", "5", "--samples", "2000",
                 "--out", str(report)]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("suites passed")
    assert all(s["passed"] for s in json.loads(report.read_text())["suites"])


def test_verify_report_is_byte_identical(tmp_path):
    for name in "ab":
        main(["verify", "ghost-norm", "roundtrip", "--trials", "10",
              "--out", str(tmp_path / f"{name}.json")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_plotdata_peak_vs_m(tmp_path):
    doc = {"task": {"kind": "two-layer-teacher", "dim": 4, "n": 32, "depth": 6, "width": 4},
           "sigma": 0.5, "batch_size": 8, "steps": 2,
           "plans": ["uniform:1", "uniform:2", "uniform:3", "uniform:6"]}
    cfg = write_json(tmp_path / "run.json", doc)
    main(["train", cfg, "--out", str(tmp_path / "o")])
    out = tmp_path / "peak.csv"
    assert main(["plotdata", str(tmp_path / "o" / "summary.json"), "--kind", "peak-vs-M",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["M", "plan", "seed", "metric", "value"]
    peaks = [int(r[4]) for r in rows[1:]]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 6]
    assert all(a >= b for a, b in zip(peaks, peaks[1:]))
    acc = tmp_path / "acc.csv"
    assert main(["plotdata", str(tmp_path / "o" / "summary.json"), "--kind",
                 "accuracy-vs-M", "--out", str(acc)]) == 0
    assert {r[3] for r in read_csv(acc)[1:]} == {"final_loss", "min_grad_norm"}


def test_plotdata_convergence_footer(tmp_path):
    data = {"trend": {"runs": []},
            "rate": {"T_values": [10, 100], "medians": [1.0, 0.1],
                     "min_grad_norms": {"10": [1.0, 1.2], "100": [0.1, 0.12]}}}
    report = write_json(tmp_path / "v.json", {"kind": "verify", "suites": [
        {"name": "convergence", "data": data}]})
    out = tmp_path / "c.csv"
    assert main(["plotdata", report, "--kind", "convergence", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "T,seed,min_grad_norm" and len(lines) == 6
    assert float(lines[-1].split("=")[1]) == pytest.approx(-1.0)


def test_plotdata_errors(tmp_path):
    empty = tmp_path / "e.json"
    empty.write_text("")
    assert main(["plotdata", str(empty), "--kind", "peak-vs-M"]) == 2
    assert main(["plotdata", write_json(tmp_path / "x.json", {"kind": "train", "runs": []}),
                 "--kind", "peak-vs-M"]) == 2
    assert main(["plotdata", str(tmp_path / "missing.json"), "--kind", "convergence"]) == 2


def test_account_and_calibrate(tmp_path, capsys):
    assert main(["account", "--sigma", "1", "--steps", "1", "--delta", "1e-5"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(5.378231366242558, rel=1e-12)
    assert main(["calibrate", "--eps", "2", "--steps", "100", "--delta", "1e-5",
                 "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["epsilon"] <= 2 and doc["epsilon"] == pytest.approx(2, rel=1e-3)
    inp = write_json(tmp_path / "in.json", {"sigma": 1, "steps": 1, "delta": 1e-5,
                                            "alphas": [2, 3]})
    assert main(["account", "--input", inp, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["alpha"] in (2.0, 3.0)


def test_account_errors():
    assert main(["account", "--sigma", "1", "--steps", "1"]) == 2
    assert main(["account", "--sigma", "-1", "--steps", "1", "--delta", "1e-5"]) == 2
    assert main(["account", "--sigma", "1", "--steps", "1", "--delta", "1e-5",
                 "--alphas", "0.5"]) == 2
    assert main(["calibrate", "--eps", "1e-9", "--steps", "1", "--delta", "1e-5"]) == 2
