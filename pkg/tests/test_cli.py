"""Command-line interface: ingestion, outputs, exit codes, determinism."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from jsonschema import Draft202012Validator
from referencing import Registry, Resource

import svcsel
from svcsel.cli import main


def _schema_dir():
    return Path(svcsel.__file__).parent / "schemas"


def _validator(name):
    schema_dir = _schema_dir()
    registry = Registry()
    for path in schema_dir.glob("*.json"):
        resource = Resource.from_contents(json.loads(path.read_text()))
        registry = registry.with_resource(path.name, resource)
    schema = json.loads((schema_dir / f"{name}.schema.json").read_text())
    return Draft202012Validator(schema, registry=registry)


def validate_output(name, payload):
    _validator(name).validate(payload)


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 30
    frame = pd.DataFrame({
        "cx": rng.uniform(0, 1, n),
        "cy": rng.uniform(0, 1, n),
        "x1": rng.normal(size=n),
        "x2": rng.normal(size=n),
    })
    frame["yy"] = 2.0 * frame["x1"] - 1.0 * frame["x2"] + 0.1 * rng.normal(size=n)
    path = tmp_path / "toy.csv"
    frame.to_csv(path, index=False, float_format="%.17g")
    return path, frame


class TestFit:
    def test_nugget_only_matches_ols(self, toy_csv, tmp_path):
        path, frame = toy_csv
        out = tmp_path / "fit.json"
        code = main(["fit", "--data", str(path), "--response", "yy",
                     "--fixed", "x1,x2", "--coords", "cx,cy",
                     "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        validate_output("fit", doc)
        X = frame[["x1", "x2"]].to_numpy()
        ols = np.linalg.lstsq(X, frame["yy"].to_numpy(), rcond=None)[0]
        got = [doc["fit"]["estimates"]["mu"]["x1"], doc["fit"]["estimates"]["mu"]["x2"]]
        assert np.max(np.abs(np.array(got) - ols)) < 1e-6

    def test_missing_column_exits_2(self, toy_csv, tmp_path):
        path, _ = toy_csv
        code = main(["fit", "--data", str(path), "--response", "nope",
                     "--fixed", "x1", "--coords", "cx,cy",
                     "--out", str(tmp_path / "o.json")])
        assert code == 2

    def test_missing_file_exits_2(self, tmp_path):
        code = main(["fit", "--data", str(tmp_path / "absent.csv"),
                     "--response", "yy", "--fixed", "x1", "--coords", "cx,cy",
                     "--out", str(tmp_path / "o.json")])
        assert code == 2

    def test_deterministic_rerun(self, toy_csv, tmp_path):
        path, _ = toy_csv
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            assert main(["fit", "--data", str(path), "--response", "yy",
                         "--fixed", "x1,x2", "--svc", "x1",
                         "--coords", "cx,cy", "--seed", "3",
                         "--out", str(out)]) in (0, 4)
            outs.append(out.read_text())
        assert outs[0] == outs[1]

    def test_standardize_records_moments(self, toy_csv, tmp_path):
        path, frame = toy_csv
        out = tmp_path / "std.json"
        code = main(["fit", "--data", str(path), "--response", "yy",
                     "--fixed", "x1,x2", "--coords", "cx,cy",
                     "--standardize", "x1", "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        rec = doc["data"]["standardization"]["x1"]
        assert rec["mean"] == pytest.approx(frame["x1"].mean())
        assert rec["sd"] == pytest.approx(frame["x1"].std(ddof=0))


class TestSelect:
    @pytest.fixture
    def svc_csv(self, tmp_path):
        rng = np.random.default_rng(1)
        n = 36
        from svcsel.kernels import covariance_matrix, GpParams, cholesky_lower, KernelSpec
        locs = rng.uniform(0, 1, (n, 2))
        x1, x2 = rng.normal(size=n), rng.normal(size=n)
        C = covariance_matrix(locs, GpParams(0.3, 0.4), KernelSpec("exp"))
        eta = cholesky_lower(C + 1e-12 * np.eye(n)) @ rng.normal(size=n)
        y = 2.0 * x1 + eta * x1 + 0.3 * rng.normal(size=n)
        frame = pd.DataFrame({"cx": locs[:, 0], "cy": locs[:, 1],
                              "x1": x1, "x2": x2, "yy": y})
        path = tmp_path / "svc.csv"
        frame.to_csv(path, index=False, float_format="%.17g")
        return path

    def test_select_structure(self, svc_csv, tmp_path):
        out = tmp_path / "sel.json"
        code = main(["select", "--data", str(svc_csv), "--response", "yy",
                     "--fixed", "x1,x2", "--svc", "x1,x2",
                     "--coords", "cx,cy", "--seed", "7",
                     "--n-init", "3", "--n-iter", "2", "--out", str(out)])
        assert code in (0, 4)
        doc = json.loads(out.read_text())
        validate_output("select", doc)
        assert len(doc["mbo_trace"]) == 5  # n_init + n_iter evaluations
        mle_nz = [g["name"] for g in doc["mle"]["estimates"]["gp"] if g["sigma2"] > 0]
        pmle_nz = [g["name"] for g in doc["pmle"]["estimates"]["gp"] if g["sigma2"] > 0]
        assert set(pmle_nz) <= set(mle_nz)  # support subset under adaptive weights
        p = len(doc["pmle"]["estimates"]["mu"])
        assert sum(v != 0 for v in doc["pmle"]["estimates"]["mu"].values()) <= p


class TestSimulate:
    def test_smoke_and_schema(self, tmp_path):
        out = tmp_path / "sim.json"
        code = main(["simulate", "--reps", "1", "--grid", "6", "--seed", "11",
                     "--n-init", "2", "--n-iter", "1", "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        validate_output("simulate", doc)
        rows = pd.read_csv(tmp_path / "sim.csv")
        assert set(rows["method"]) == {"MLE", "PMLE", "Oracle"}
        assert doc["config"]["n"] == 36

    def test_seed_reproducible(self, tmp_path):
        texts = []
        for name in ("s1", "s2"):
            out = tmp_path / f"{name}.json"
            assert main(["simulate", "--reps", "1", "--grid", "5",
                         "--seed", "4", "--n-init", "2", "--n-iter", "0",
                         "--out", str(out)]) == 0
            doc = json.loads(out.read_text())
            doc["summary"].pop("runtime_seconds")
            doc.pop("rows_csv")
            texts.append(json.dumps(doc, sort_keys=True))
        assert texts[0] == texts[1]

    def test_csv_roundtrip_lossless(self, tmp_path):
        out = tmp_path / "sim.json"
        assert main(["simulate", "--reps", "1", "--grid", "5", "--seed", "2",
                     "--n-init", "2", "--n-iter", "0", "--out", str(out)]) == 0
        csv_path = tmp_path / "sim.csv"
        first = pd.read_csv(csv_path, float_precision="round_trip")
        second_path = tmp_path / "again.csv"
        first.to_csv(second_path, index=False, float_format="%.17g")
        again = pd.read_csv(second_path, float_precision="round_trip")
        for col in first.columns:
            if first[col].dtype.kind == "f":
                assert np.array_equal(first[col].to_numpy(), again[col].to_numpy(),
                                      equal_nan=True), col


class TestCv:
    def test_two_folds_two_methods(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 30
        frame = pd.DataFrame({
            "cx": rng.uniform(0, 1, n), "cy": rng.uniform(0, 1, n),
            "x1": rng.normal(size=n), "x2": rng.normal(size=n),
        })
        frame["yy"] = 1.5 * frame["x1"] + 0.2 * rng.normal(size=n)
        path = tmp_path / "cv.csv"
        frame.to_csv(path, index=False)
        out = tmp_path / "cv_out.json"
        code = main(["cv", "--data", str(path), "--response", "yy",
                     "--fixed", "x1,x2", "--svc", "x1", "--coords", "cx,cy",
                     "--folds", "2", "--methods", "alasso,mle", "--seed", "5",
                     "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        validate_output("cv", doc)
        records = pd.read_csv(tmp_path / "cv_out.csv")
        assert sorted(records["method"].unique()) == ["ALASSO", "MLE"]
        assert sorted(records["fold"].unique()) == [1, 2]
        sizes = np.bincount(doc["summary"]["fold_plan"])[1:]
        assert max(sizes) - min(sizes) <= 1


class TestPredict:
    def test_fixed_effects_prediction(self, toy_csv, tmp_path):
        path, frame = toy_csv
        fit_out = tmp_path / "fit.json"
        assert main(["fit", "--data", str(path), "--response", "yy",
                     "--fixed", "x1,x2", "--coords", "cx,cy",
                     "--out", str(fit_out)]) == 0
        rng = np.random.default_rng(9)
        new = pd.DataFrame({
            "cx": rng.uniform(0, 1, 5), "cy": rng.uniform(0, 1, 5),
            "x1": rng.normal(size=5), "x2": rng.normal(size=5),
        })
        new_path = tmp_path / "new.csv"
        new.to_csv(new_path, index=False)
        out = tmp_path / "pred.json"
        code = main(["predict", "--data", str(path), "--response", "yy",
                     "--fixed", "x1,x2", "--coords", "cx,cy",
                     "--model", str(fit_out), "--newdata", str(new_path),
                     "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        validate_output("predict", doc)
        fit_doc = json.loads(fit_out.read_text())
        mu = np.array([fit_doc["fit"]["estimates"]["mu"]["x1"],
                       fit_doc["fit"]["estimates"]["mu"]["x2"]])
        expected = new[["x1", "x2"]].to_numpy() @ mu
        assert np.allclose(doc["predictions"], expected, atol=1e-8)
