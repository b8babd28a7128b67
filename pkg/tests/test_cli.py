import json

import numpy as np
import pydot
import pytest

from dndt.cli import main

FAST = ["--epochs", "15"]


def run(args, out=None):
    argv = list(args) + (["--out", str(out)] if out is not None else [])
    return main(argv)


def read(path):
    return path.read_text(encoding="utf-8")


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run(["train", "--dataset", "iris", *FAST], out) == 0
    return out


class TestTrain:
    def test_artifacts(self, trained):
        manifest = json.loads(read(trained / "manifest.json"))
        assert manifest["command"] == "train"
        assert set(manifest["artifacts"]) == {"model.json", "train_report.csv", "metrics.json"}
        assert len(manifest["dataset"]["fingerprint"]) == 64
        assert manifest["config"]["cutpoints_per_feature"] == 1
        metrics = json.loads(read(trained / "metrics.json"))
        assert set(metrics["test"]["per_class"]) == {"setosa", "versicolor", "virginica"}
        assert len(read(trained / "train_report.csv").splitlines()) == 16

    def test_byte_identical_reruns(self, tmp_path):
        args = ["train", "--dataset", "iris", "--cutpoints", "3", "--tau", "0.1", "--seed", "7", *FAST]
        assert run(args, tmp_path / "a") == 0 and run(args, tmp_path / "b") == 0
        for name in ("model.json", "train_report.csv", "metrics.json"):
            assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)

    def test_out_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DNDT_OUT", str(tmp_path / "env"))
        assert run(["train", "--dataset", "iris", "--epochs", "2"]) == 0
        assert (tmp_path / "env" / "model.json").exists()

    def test_wide_csv_trains_forest(self, tmp_path):
        rng = np.random.default_rng(0)
        n, D = 60, 54
        y = rng.integers(0, 2, n)
        X = np.where(rng.uniform(size=(n, D)) < 0.7, 2 * y[:, None], rng.integers(0, 3, (n, D)))
        lines = [",".join([f"c{d}" for d in range(D)] + ["outcome"])]
        lines += [",".join(map(str, row)) + f",{'win' if t else 'loss'}" for row, t in zip(X, y)]
        (tmp_path / "wide.csv").write_text("\n".join(lines) + "\n")
        assert run(["train", "--csv", str(tmp_path / "wide.csv"), "--epochs", "2"], tmp_path / "o") == 0
        manifest = json.loads(read(tmp_path / "o" / "manifest.json"))
        assert manifest["forest"]["n_trees"] == 10 and manifest["forest"]["subset_size"] == 10
        assert all(len(s) == 10 for s in manifest["forest"]["subsets"])
        assert json.loads(read(tmp_path / "o" / "model.json"))["format"] == "dndt-forest"
        assert run(["eval", "--model", str(tmp_path / "o" / "model.json"), "--csv", str(tmp_path / "wide.csv")],
                   tmp_path / "e") == 0

    def test_categorical_csv(self, tmp_path):
        rows = ["buying,doors,class"] + [f"{b},{d},{'acc' if b == 'low' else 'unacc'}"
                                          for b in ("low", "high", "med") for d in ("2", "3", "4", "5more")] * 3
        (tmp_path / "car.csv").write_text("\n".join(rows) + "\n")
        assert run(["train", "--csv", str(tmp_path / "car.csv"), "--categorical", "doors", "--epochs", "30"],
                   tmp_path / "o") == 0
        model = json.loads(read(tmp_path / "o" / "model.json"))
        assert model["features"][0]["categories"] == ["low", "high", "med"]


class TestEval:
    def test_matches_training_metrics(self, trained, tmp_path):
        assert run(["eval", "--model", str(trained / "model.json"), "--dataset", "iris"], tmp_path) == 0
        ev = json.loads(read(tmp_path / "eval_metrics.json"))
        metrics = json.loads(read(trained / "metrics.json"))
        assert ev["accuracy"] == metrics["test"]["accuracy"] and ev["n"] == 30

    def test_train_split_and_all(self, trained, tmp_path):
        assert run(["eval", "--model", str(trained / "model.json"), "--dataset", "iris", "--split", "train"],
                   tmp_path / "t") == 0
        ev = json.loads(read(tmp_path / "t" / "eval_metrics.json"))
        assert ev["accuracy"] == json.loads(read(trained / "metrics.json"))["train"]["accuracy"]
        assert run(["eval", "--model", str(trained / "model.json"), "--dataset", "iris", "--split", "all"],
                   tmp_path / "a") == 0
        assert json.loads(read(tmp_path / "a" / "eval_metrics.json"))["n"] == 150

    def test_shuffled_labels_near_chance(self, trained, tmp_path):
        from dndt.data import bundled_path

        rows = read(bundled_path("iris")).splitlines()
        header, body = rows[0], rows[1:]
        accs = []
        for seed in range(5):
            labels = np.random.default_rng(seed).permutation([r.rsplit(",", 1)[1] for r in body])
            text = "\n".join([header] + [r.rsplit(",", 1)[0] + "," + lab for r, lab in zip(body, labels)])
            (tmp_path / "shuffled.csv").write_text(text + "\n")
            assert run(["eval", "--model", str(trained / "model.json"), "--csv", str(tmp_path / "shuffled.csv"),
                        "--split", "all"], tmp_path / f"s{seed}") == 0
            accs.append(json.loads(read(tmp_path / f"s{seed}" / "eval_metrics.json"))["accuracy"])
        assert abs(np.mean(accs) - 1 / 3) < 0.1


class TestAnalysis:
    def test_analyze_with_sweep_and_model(self, trained, tmp_path):
        args = ["analyze", "--dataset", "iris", "--runs", "2", "--epochs", "5", "--sweep", "1-5",
                "--model", str(trained / "model.json")]
        assert run(args, tmp_path) == 0
        report = json.loads(read(tmp_path / "analysis.json"))
        assert -1 <= report["kendall_tau"] <= 1 and len(report["ignore_rate"]) == 4
        assert len(read(tmp_path / "sweep.csv").splitlines()) == 6
        assert len(read(tmp_path / "features.csv").splitlines()) == 5
        assert read(tmp_path / "model_active_cutpoints.csv").startswith("feature,name,active,total")

    def test_sweep(self, tmp_path):
        assert run(["sweep", "--dataset", "haberman", "--counts", "1,3", "--runs", "2", "--epochs", "5"], tmp_path) == 0
        assert len(json.loads(read(tmp_path / "sweep.json"))) == 2

    def test_compare(self, tmp_path):
        assert run(["compare", "--dataset", "iris", "--runs", "2", "--epochs", "5"], tmp_path) == 0
        summary = json.loads(read(tmp_path / "compare.json"))
        assert summary["runs"] == 2 and 0 <= summary["cart_mean"] <= 1


class TestExport:
    def test_two_feature_tree(self, tmp_path, capsys):
        from dndt.data import bundled_path

        rows = read(bundled_path("iris")).splitlines()
        text = "\n".join(",".join(r.split(",")[2:]) for r in rows)
        (tmp_path / "petals.csv").write_text(text + "\n")
        assert run(["train", "--csv", str(tmp_path / "petals.csv"), *FAST], tmp_path / "m") == 0
        capsys.readouterr()
        assert run(["export", "--model", str(tmp_path / "m" / "model.json"), "--csv", str(tmp_path / "petals.csv")]) == 0
        dot = capsys.readouterr().out
        (graph,) = pydot.graph_from_dot_data(dot)
        nodes = [n for n in graph.get_nodes() if n.get_name() not in ("node", "graph", "edge")]
        leaves = [n for n in nodes if n.get("shape") == "box"]
        assert len(nodes) == 7 and len(leaves) == 4
        assert all("n=" in n.get("label") for n in leaves)

    def test_cart_export_to_file(self, tmp_path):
        assert run(["export", "--cart", "--dataset", "iris", "--max-depth", "2"], tmp_path) == 0
        assert pydot.graph_from_dot_data(read(tmp_path / "tree.dot"))[0] is not None
        assert "tree.dot" in json.loads(read(tmp_path / "manifest.json"))["artifacts"]


@pytest.mark.parametrize(
    "args",
    [
        ["analyze", "--dataset", "iris", "--runs", "2", "--epochs", "3", "--seed", "4"],
        ["sweep", "--dataset", "iris", "--counts", "1-2", "--runs", "2", "--epochs", "3"],
        ["compare", "--dataset", "haberman", "--runs", "2", "--epochs", "3"],
        ["export", "--cart", "--dataset", "haberman"],
    ],
    ids=["analyze", "sweep", "compare", "export"],
)
def test_commands_are_deterministic(tmp_path, args):
    assert run(args, tmp_path / "a") == 0 and run(args, tmp_path / "b") == 0
    names = json.loads(read(tmp_path / "a" / "manifest.json"))["artifacts"]
    assert names
    for name in names:
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


class TestExitCodes:
    def test_usage_errors(self, tmp_path, capsys):
        for argv in (["train"], ["train", "--dataset", "iris", "--csv", "x.csv"],
                     ["train", "--dataset", "iris", "--lr", "-1"],
                     ["train", "--dataset", "iris", "--forest", "always", "--subset", "9"],
                     ["train", "--dataset", "iris", "--train-fraction", "1.5"],
                     ["export"], ["bogus"]):
            with pytest.raises(SystemExit) as info:
                run(argv, tmp_path)
            assert info.value.code == 2, argv

    def test_data_errors(self, tmp_path):
        assert run(["train", "--csv", str(tmp_path / "missing.csv")], tmp_path) == 3
        (tmp_path / "one.csv").write_text("x,y\n1,a\n2,a\n")
        assert run(["train", "--csv", str(tmp_path / "one.csv")], tmp_path) == 3
        assert run(["train", "--dataset", "mnist"], tmp_path) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_training(self, tmp_path):
        args = ["train", "--dataset", "iris", "--tau", "1e-310", "--tau-min", "1e-310", "--epochs", "2"]
        assert run(args, tmp_path) == 4
