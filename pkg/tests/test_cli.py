import io

import numpy as np
import pandas as pd
import pytest

from sng_dbscan.cli import RunConfig, main
from sng_dbscan.dataset_io import Dataset, load_binary, save_binary, save_csv
from sng_dbscan.synthetic import BallMixtureSpec, generate_ball_mixture


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("SNG_SEED", raising=False)


@pytest.fixture
def line_csv(tmp_path):
    path = tmp_path / "line.csv"
    path.write_text("0\n1\n3\n4\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def balls_csv(tmp_path):
    data = generate_ball_mixture(BallMixtureSpec.three_balls(n=300, seed=2))
    path = str(tmp_path / "balls.csv")
    save_csv(data, path)
    return path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cluster_writes_labels_and_summary(capsys, line_csv, tmp_path):
    labels = tmp_path / "labels.txt"
    code, out, _ = run(
        capsys, "cluster", line_csv, "--eps", "1", "--min-pts", "1", "--output", str(labels)
    )
    assert code == 0
    assert labels.read_text() == "0\n0\n1\n1\n"
    summary = dict(line.split("\t") for line in out.strip().split("\n"))
    assert summary["n"] == "4"
    assert summary["k"] == "2"
    assert summary["noise"] == "0"
    assert summary["edges"] == "2"
    assert summary["distance_evaluations"] == "12"


def test_cluster_default_labels_path(capsys, line_csv):
    code, _, _ = run(capsys, "cluster", "--input", line_csv, "--eps", "1", "--min-pts", "3")
    assert code == 0
    with open(line_csv + ".labels") as f:
        assert f.read() == "-1\n-1\n-1\n-1\n"


def test_cluster_missing_eps_is_usage_error(capsys, line_csv):
    code, _, _ = run(capsys, "cluster", line_csv, "--min-pts", "1")
    assert code == 2


def test_cluster_rate_out_of_range(capsys, line_csv):
    code, _, err = run(capsys, "cluster", line_csv, "--eps", "1", "--min-pts", "1", "--rate", "1.5")
    assert code == 2
    assert "(0, 1]" in err


@pytest.mark.parametrize(
    "flags",
    [
        ["--eps", "0"],
        ["--eps", "1", "--dist", "chebyshev"],
        ["--eps", "1", "--threads", "0"],
        ["--eps", "1,2"],
    ],
)
def test_cluster_flag_errors(capsys, line_csv, flags):
    code, _, _ = run(capsys, "cluster", line_csv, "--min-pts", "1", *flags)
    assert code == 2


@pytest.mark.parametrize(
    "flags", [["--eps", "--min-pts", "1"], ["--eps", "1", "--rate", "--min-pts", "1"]]
)
def test_cluster_bare_numeric_flag_is_usage_error(capsys, line_csv, flags):
    code, _, err = run(capsys, "cluster", line_csv, *flags)
    assert code == 2
    assert "needs a numeric value" in err


def test_cluster_missing_input_is_io_error(capsys, tmp_path):
    code, _, _ = run(capsys, "cluster", str(tmp_path / "absent.csv"), "--eps", "1", "--min-pts", "1")
    assert code == 3


def test_cluster_bad_csv_is_io_error(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,0\n1\n", encoding="utf-8")
    code, _, err = run(capsys, "cluster", str(path), "--eps", "1", "--min-pts", "1")
    assert code == 3
    assert "line 2" in err


def test_cluster_output_independent_of_threads(capsys, balls_csv, tmp_path):
    outputs = []
    for threads in ("1", "3"):
        labels = tmp_path / f"labels{threads}"
        code, _, _ = run(
            capsys, "cluster", balls_csv, "--eps", "0.8", "--min-pts", "2", "--rate", "0.2",
            "--seed", "5", "--threads", threads, "--label-column", "3", "--output", str(labels),
        )
        assert code == 0
        outputs.append(labels.read_bytes())
    assert outputs[0] == outputs[1]


def test_cluster_dumps_graph(capsys, line_csv, tmp_path):
    edges = tmp_path / "edges.txt"
    code, _, _ = run(
        capsys, "cluster", line_csv, "--eps", "1", "--min-pts", "1", "--dump-graph", str(edges)
    )
    assert code == 0
    assert edges.read_text() == "0 1\n2 3\n"


def test_cluster_overwrite_cache_reparses_csv(capsys, line_csv, tmp_path):
    cache = tmp_path / "cache"
    args = ["cluster", line_csv, "--eps", "1", "--min-pts", "1", "--cache-dir", str(cache)]
    code, out, _ = run(capsys, *args)
    assert code == 0
    assert "n\t4\n" in out

    # a newer cache entry with other points wins unless the cache is rebuilt
    cached = cache / "cached_line_labelNone_header0.sngd"
    save_binary(Dataset(np.array([[0.0], [9.0]])), str(cached))
    code, out, _ = run(capsys, *args)
    assert "n\t2\n" in out
    code, out, _ = run(capsys, *args, "--overwrite-cache")
    assert code == 0
    assert "n\t4\n" in out
    assert load_binary(str(cached)).n == 4


def write_labels(tmp_path, name, labels):
    path = tmp_path / name
    path.write_text("".join(f"{x}\n" for x in labels), encoding="utf-8")
    return str(path)


def test_score_identical_files(capsys, tmp_path):
    path = write_labels(tmp_path, "a", [0, 0, 1, 1, 2])
    code, out, _ = run(capsys, "score", path, path)
    assert code == 0
    assert out == "ari\t1.000000\nami\t1.000000\n"


def test_score_all_noise(capsys, tmp_path):
    pred = write_labels(tmp_path, "pred", [-1, -1, -1, -1])
    truth = write_labels(tmp_path, "truth", [0, 0, 1, 1])
    code, out, _ = run(capsys, "score", "--pred", pred, "--truth", truth)
    assert code == 0
    assert out.split("\n")[0] == "ari\t0.000000"


def test_score_length_mismatch(capsys, tmp_path):
    pred = write_labels(tmp_path, "pred", [0, 1, 1])
    truth = write_labels(tmp_path, "truth", [0, 1])
    code, _, _ = run(capsys, "score", pred, truth)
    assert code == 2


def test_score_bad_noise_policy(capsys, tmp_path):
    path = write_labels(tmp_path, "a", [0, 1])
    code, _, _ = run(capsys, "score", path, path, "--noise-policy", "ignore")
    assert code == 2


def test_gen_writes_points_and_truth(capsys, tmp_path):
    out = tmp_path / "gen.csv"
    code, _, _ = run(capsys, "gen", str(out), "--kind", "balls", "--n", "30", "--seed", "1")
    assert code == 0
    assert len(out.read_text().strip().split("\n")) == 30
    truth = (tmp_path / "gen.csv.truth").read_text().strip().split("\n")
    assert len(truth) == 30
    assert set(truth) <= {"0", "1", "2"}


def test_gen_from_config_file(capsys, tmp_path):
    config = tmp_path / "scenario.cfg"
    config.write_text("kind=theory\nn=200\ncenters=0,0;10,0\nlambda_n=0.01\n", encoding="utf-8")
    out = tmp_path / "gen.sngd"
    code, _, _ = run(capsys, "gen", str(out), "--config", str(config), "--fmt", "binary")
    assert code == 0
    assert out.read_bytes()[:4] == b"SNGD"


def test_gen_unknown_kind(capsys, tmp_path):
    code, _, _ = run(capsys, "gen", str(tmp_path / "x.csv"), "--kind", "spiral")
    assert code == 2


def test_bench_exact_and_full_rate_agree(capsys, balls_csv):
    code, out, _ = run(
        capsys, "bench", balls_csv, "--eps", "0.8", "--min-pts", "3", "--rate", "1",
        "--repeats", "2", "--exact", "--label-column", "3",
    )
    assert code == 0
    table = pd.read_csv(io.StringIO(out), sep="\t")
    assert list(table["method"]) == ["sng", "exact"]
    assert table["ari_mean"][0] == table["ari_mean"][1]
    assert table["distance_evaluations"][0] == 300 * 299


def test_bench_tiny_eps_has_no_edges(capsys, balls_csv):
    code, out, _ = run(
        capsys, "bench", balls_csv, "--eps", "1e-9", "--min-pts", "1", "--rate", "0.5",
        "--repeats", "1", "--label-column", "3",
    )
    assert code == 0
    table = pd.read_csv(io.StringIO(out), sep="\t")
    assert table["edges_mean"][0] == 0
    assert table["noise_mean"][0] == 300
    assert table["adjacency_bytes_peak"][0] == 301 * 8


def test_theory_window_without_noise(capsys):
    code, out, _ = run(capsys, "theory", "window", "--lambda-n", "0")
    assert code == 0
    table = pd.read_csv(io.StringIO(out), sep="\t")
    lo = table[table["statistic"] == "lo"]
    assert lo["value"].iloc[0] == 0.0


def test_theory_karger_full_rate(capsys):
    code, out, _ = run(capsys, "theory", "--experiment", "karger", "--s-grid", "1", "--trials", "20")
    assert code == 0
    table = pd.read_csv(io.StringIO(out), sep="\t")
    row = table[table["statistic"] == "connected_frequency"].iloc[0]
    assert row["value"] == 1.0
    assert row["trials"] == 20


def test_theory_report_independent_of_threads(capsys):
    outputs = []
    for threads in ("1", "3"):
        code, out, _ = run(
            capsys, "theory", "karger", "--s-grid", "0.1,0.3",
            "--trials", "40", "--seed", "4", "--threads", threads,
        )
        assert code == 0
        outputs.append(out)
    assert outputs[0] == outputs[1]


def test_theory_bare_eps_is_usage_error(capsys):
    code, _, _ = run(capsys, "theory", "karger", "--eps", "--trials", "5")
    assert code == 2


def test_theory_json_output(capsys, tmp_path):
    out = tmp_path / "window.json"
    code, stdout, _ = run(capsys, "theory", "window", "--json", "--output", str(out))
    assert code == 0
    assert out.read_text() == stdout
    assert stdout.startswith("[{")


def test_theory_assert_turns_failures_into_exit_one(capsys):
    # min_pts far above the window
    code, _, _ = run(capsys, "theory", "window", "--min-pts", "1000", "--assert")
    assert code == 1
    code, _, _ = run(capsys, "theory", "window", "--min-pts", "1000")
    assert code == 0


def test_theory_unknown_experiment(capsys):
    code, _, _ = run(capsys, "theory", "sorting")
    assert code == 2


def test_theory_unknown_flag(capsys):
    code, _, _ = run(capsys, "theory", "window", "--colour", "red")
    assert code == 2


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["--eps", "1"]])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert "usage: sng" in err
    assert "--min-pts" in err


def test_describe_lists_every_option():
    text = RunConfig.describe()
    for name in ("--eps", "--rate", "--seed", "--threads", "--noise-policy", "--experiment"):
        assert name in text


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(subcommand="cluster", eps="abc")
    config = RunConfig(subcommand="bench", eps="0.1,0.2", rate=(0.5, 1), min_pts=10, minpts_scale=True)
    config.validate()
    assert config.eps == [0.1, 0.2]
    assert config.degree_threshold(0.5) == 5
    assert np.isclose(config.rate, [0.5, 1.0]).all()
