import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from pop import cli, evaluation
from pop.baselines import LR_GRID
from pop.config import ConfigError, build, echo, from_echo, parse_file, parse_overrides
from pop.evaluation import EvalPriorConfig, best_so_far, ni_matrix, pop_trajectories, prior_tasks
from pop.policy import Policy

TINY_TRAIN = ["--set", "batch_functions=2", "--set", "T=3", "--set", "c=3", "--set", "features=16",
              "--set", "minibatch_size=12", "--set", "checkpoint_every=0"]


def read_rows(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0] == "# schema_version=1"
    return list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", "--iterations", "0", "--out", str(out), *TINY_TRAIN]) == 0
    return out / "ckpt_000000"


# -- config files ------------------------------------------------------------------------------------
@dataclass(frozen=True)
class Demo:
    a: int = 1
    b: float = 0.5
    name: str = "x"
    dims: tuple[int, ...] = (2,)
    flag: bool = False
    opt: float | None = None


def test_config_include_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("a = 3\nb = 1.5  # trailing comment\nname = base\n")
    (tmp_path / "run.cfg").write_text("# run file\ninclude = base.cfg\nname = run\ndims = 2, 8,16\n")
    vals = parse_file(tmp_path / "run.cfg")
    assert vals == {"a": "3", "b": "1.5", "name": "run", "dims": "2, 8,16"}
    vals.update(parse_overrides(["flag=yes", "opt=none"]))
    cfg = build(Demo, vals)
    assert cfg == Demo(a=3, b=1.5, name="run", dims=(2, 8, 16), flag=True, opt=None)
    assert from_echo(Demo, json.loads(json.dumps(echo(cfg)))) == cfg


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError) as e:
        build(Demo, {"c": "1"})
    assert e.value.key == "c"
    with pytest.raises(ConfigError) as e:
        build(Demo, {"a": "three"})
    assert e.value.key == "a"
    (tmp_path / "x.cfg").write_text("include = y.cfg\n")
    (tmp_path / "y.cfg").write_text("include = x.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        parse_file(tmp_path / "x.cfg")
    (tmp_path / "bad.cfg").write_text("no equals sign\n")
    with pytest.raises(ConfigError):
        parse_file(tmp_path / "bad.cfg")
    with pytest.raises(ConfigError):
        parse_overrides(["novalue"])


# -- train ------------------------------------------------------------------------------------------
def test_unknown_key_exits_2(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path), "--set", "bogus_key=1"]) == cli.EXIT_CONFIG
    assert "bogus_key" in capsys.readouterr().err
    assert cli.main(["train", "--out", str(tmp_path), "--set", "clip_ratio=2"]) == cli.EXIT_CONFIG


def test_zero_iterations_initial_checkpoint_only(ckpt):
    files = sorted(p.name for p in ckpt.parent.iterdir())
    assert files == ["ckpt_000000.bin", "ckpt_000000.json", "manifest.json", "train_log.csv"]
    m = json.loads((ckpt.parent / "manifest.json").read_text())
    assert m["outputs"] == ["ckpt_000000.bin", "ckpt_000000.json", "train_log.csv"]
    assert m["command"] == "train" and m["config"]["iterations"] == 0 and m["seed"] == 0


def test_same_seed_same_train_log(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["train", "--iterations", "2", "--seed", "5", "--out", str(tmp_path / d), *TINY_TRAIN]) == 0
    assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
    assert len(read_rows(tmp_path / "a" / "train_log.csv")) == 2


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path))
    assert cli.main(["sample-prior", "--n", "1", "--resolution", "2", "--seed", "3"]) == 0
    assert (tmp_path / "sample-prior-seed3" / "manifest.json").exists()


# -- evaluation -------------------------------------------------------------------------------------
def test_missing_checkpoint_exits_3(tmp_path):
    assert cli.main(["eval-prior", "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == cli.EXIT_ARTIFACT
    (tmp_path / "junk.json").write_text("{}")
    (tmp_path / "junk.bin").write_bytes(b"")
    assert cli.main(["eval-prior", "--checkpoint", str(tmp_path / "junk"), "--out", str(tmp_path / "o")]) == cli.EXIT_ARTIFACT


def test_horizon_100_gives_90_policy_steps():
    funcs, ctxs = prior_tasks(2, 64, 2, 10, seed=0)
    trajs = pop_trajectories(Policy(seed=0), funcs, ctxs, 90, 10, seed=0)
    for t in trajs:
        assert len(t) == 100 and sum(r.time_frac > 0 for r in t.records) == 90
    assert EvalPriorConfig(horizon=100).T == 90


def test_eval_prior_rows(ckpt, tmp_path):
    out = tmp_path / "ep"
    args = ["eval-prior", "--checkpoint", str(ckpt), "--n-tasks", "1024", "--dims", "2", "--horizon", "12",
            "--methods", "pop,gd", "--out", str(out)]
    assert cli.main(args) == 0
    rows = read_rows(out / "ni_rows_D2.csv")
    counts = {}
    for r in rows:
        counts[(r["method"], r["step"])] = counts.get((r["method"], r["step"]), 0) + 1
    assert set(counts.values()) == {1024} and len(counts) == 2 * 12
    curves = read_rows(out / "ni_curves_D2.csv")
    assert list(curves[0]) == ["method", "step", "mean", "ci_low", "ci_high"]
    for m in ("pop", "gd"):
        means = [float(r["mean"]) for r in curves if r["method"] == m]
        assert means[:10] == [0.0] * 10 and np.all(np.diff(means) >= 0)


def test_eval_prior_high_dimension(ckpt, tmp_path):
    args = ["eval-prior", "--checkpoint", str(ckpt), "--n-tasks", "2", "--dims", "32", "--horizon", "12",
            "--methods", "pop,pop_untrained,adam,lbfgs,random,ga,de", "--set", "write_rows=false",
            "--out", str(tmp_path)]
    assert cli.main(args) == 0
    rows = read_rows(tmp_path / "ni_curves_D32.csv")
    assert len(rows) == 7 * 12 and all(np.isfinite(float(r["mean"])) for r in rows)


def test_eval_bench_and_rerun(ckpt, tmp_path):
    out = tmp_path / "eb"
    args = ["eval-bench", "--checkpoint", str(ckpt), "--functions", "branin,rosenbrock,forrester",
            "--horizon", "16", "--repeats", "2", "--methods", "pop,gd,random,de", "--out", str(out)]
    assert cli.main(args) == 0
    reg = read_rows(out / "regret_rows.csv")
    assert list(reg[0]) == ["method", "task", "step", "best_so_far", "regret"]
    series = {}
    for r in reg:
        series.setdefault((r["method"], r["task"]), []).append(float(r["regret"]))
    assert len(series) == 4 * 6
    for s in series.values():
        assert len(s) == 16 and np.all(np.diff(s) <= 0) and min(s) >= 0 and max(s) <= 1
    # shared contexts: every method's first 10 steps coincide
    for task in {t for _, t in series}:
        first = [series[(m, task)][:10] for m in ("pop", "gd", "random", "de")]
        assert all(f == first[0] for f in first)
    ranks = read_rows(out / "rank_curves.csv")
    assert list(ranks[0]) == ["method", "step", "mean_rank", "se"]
    cat = json.loads((out / "catalog.json").read_text())
    assert [f["name"] for f in cat["functions"]] == ["branin", "rosenbrock", "forrester"]

    again = tmp_path / "again"
    assert cli.main(["rerun", str(out / "manifest.json"), "--out", str(again)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    for name in m["outputs"]:
        assert (out / name).read_bytes() == (again / name).read_bytes(), name
    m2 = json.loads((again / "manifest.json").read_text())
    assert m2["config"] == m["config"] and m2["checkpoint_sha256"] == m["checkpoint_sha256"]


def test_rerun_detects_changed_checkpoint(ckpt, tmp_path):
    import shutil
    src = tmp_path / "copy"
    src.mkdir()
    for suffix in (".json", ".bin"):
        shutil.copy(ckpt.with_suffix(suffix), src / ("c" + suffix))
    out = tmp_path / "run"
    assert cli.main(["eval-prior", "--checkpoint", str(src / "c"), "--n-tasks", "2", "--horizon", "11",
                     "--methods", "pop", "--out", str(out)]) == 0
    data = bytearray((src / "c.bin").read_bytes())
    data[-1] ^= 1
    (src / "c.bin").write_bytes(bytes(data))
    assert cli.main(["rerun", str(out / "manifest.json"), "--out", str(tmp_path / "r")]) == cli.EXIT_ARTIFACT


# -- sweep and prior samples ------------------------------------------------------------------------
def test_sweep_one_row_per_grid_value(tmp_path):
    assert cli.main(["sweep-lr", "--method", "gd", "--n-tasks", "3", "--horizon", "13", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "sweep_gd.csv")
    assert [float(r["lr"]) for r in rows] == list(LR_GRID)
    assert list(rows[0]) == ["lr", "mean_ni", "ci_low", "ci_high", "n_finite", "n_tasks"]


def test_sweep_renders_undefined_rows(tmp_path, monkeypatch):
    real = evaluation.run_methods

    def flaky(methods, *a, lrs=None, **kw):
        out = real(methods, *a, lrs=lrs, **kw)
        if lrs["lbfgs"] > 2:
            out["lbfgs"][0, -1] = np.nan
        return out

    monkeypatch.setattr(evaluation, "run_methods", flaky)
    cfg = evaluation.SweepConfig(method="lbfgs", grid=(1.0, 3.0), n_tasks=2, horizon=12)
    evaluation.sweep_lr(cfg, tmp_path)
    rows = read_rows(tmp_path / "sweep_lbfgs.csv")
    assert len(rows) == 2 and rows[0]["mean_ni"] != "nan"
    assert rows[1]["mean_ni"] == "nan" and rows[1]["n_finite"] == "1"


def test_sweep_rejects_non_gradient_method():
    with pytest.raises(ValueError):
        evaluation.SweepConfig(method="de")


def test_sample_prior_surfaces(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["sample-prior", "--n", "12", "--resolution", "5", "--seed", "4", "--out", str(d)]) == 0
    surfaces = sorted(a.glob("surface_*.csv"))
    assert len(surfaces) == 12 and len(list(a.glob("function_*.json"))) == 12
    rows = read_rows(surfaces[0])
    assert len(rows) == 25 and list(rows[0]) == ["x1", "x2", "y"]
    assert float(rows[0]["x1"]) == -50.0 and float(rows[-1]["x2"]) == 50.0
    for s in surfaces:
        assert s.read_bytes() == (b / s.name).read_bytes()
    assert cli.SamplePriorConfig().resolution == 128
    assert cli.main(["sample-prior", "--set", "dim=3", "--out", str(tmp_path / "c")]) == cli.EXIT_CONFIG


def test_ni_matrix_uses_raw_context_range():
    ys = np.array([[4.0, 0.0, 10.0, 7.0, -5.0, 1.0]])
    np.testing.assert_allclose(ni_matrix(ys, 3)[0], [0, 0, 0, 0, 0.5, 0.5], atol=1e-8)
    np.testing.assert_array_equal(best_so_far(ys)[0], [4, 0, 0, 0, -5, -5])
    nan_row = best_so_far(np.array([[3.0, np.nan, 1.0]]))[0]
    assert nan_row[0] == 3.0 and np.all(np.isnan(nan_row[1:]))
