import json

import pytest

from geoadapt import cli
from geoadapt.config import RunConfig
from geoadapt.grpo import ToyPolicy
from geoadapt.world import SyntheticGeoWorld

SCORE_ROWS = [
    # (l_visual, d_rag, d_reason, expected stratum)
    (0.9, 10.0, 20.0, "Standard"),
    (0.5, 0.0, 50.0, "Standard"),
    (0.5, 0.0, 50.5, "RagSuperior"),
    (0.1, 300.0, 800.0, "RagSuperior"),
]


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def score_input(tmp_path, extra=()):
    rows = [{"image_id": f"s{i}", "l_visual": lv, "d_rag": dr, "d_reason": ds}
            for i, (lv, dr, ds, _) in enumerate(SCORE_ROWS)]
    return write_jsonl(tmp_path / "in.jsonl", rows + list(extra))


def test_score_strata(tmp_path):
    out = tmp_path / "out.jsonl"
    assert cli.main(["score", "-i", str(score_input(tmp_path)), "-o", str(out)]) == 0
    got = [json.loads(line) for line in out.read_text().splitlines()]
    assert [g["stratum"] for g in got] == [r[3] for r in SCORE_ROWS]
    for g in got:
        assert 0 <= g["l_opt"] <= g["l_visual"]


def test_score_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert cli.main(["score", "-i", str(empty)]) == 0
    assert capsys.readouterr().out == ""


def test_score_rejects_bad_l_visual(tmp_path):
    src = score_input(tmp_path, [{"image_id": "bad", "l_visual": 1.2, "d_rag": 0, "d_reason": 0}])
    log, out = tmp_path / "err.jsonl", tmp_path / "out.jsonl"
    assert cli.main(["score", "-i", str(src), "-o", str(out), "--error-log", str(log)]) == 1
    assert not out.exists()
    assert cli.main(["--lenient", "score", "-i", str(src), "-o", str(out), "--error-log", str(log)]) == 0
    assert len(out.read_text().splitlines()) == 4
    errors = [json.loads(line) for line in log.read_text().splitlines()]
    assert [e["image_id"] for e in errors] == ["bad"]


def test_score_malformed_json_lenient(tmp_path):
    src = score_input(tmp_path)
    src.write_text(src.read_text() + "{not json\n")
    out = tmp_path / "out.jsonl"
    assert cli.main(["score", "--lenient", "-i", str(src), "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4


def test_stratify_and_curate(tmp_path, data_dir):
    src = data_dir / "curation_fixture.jsonl"
    # stratify only needs distances; the candidate-count check belongs to curation
    for cmd, n_rag, rejected in (("stratify", 6, ["r07"]), ("curate", 5, ["r06", "r07"])):
        out = tmp_path / cmd
        log = tmp_path / f"{cmd}.err"
        assert cli.main([cmd, "-i", str(src), "--out-dir", str(out)]) == 1
        assert cli.main([cmd, "--lenient", "-i", str(src), "--out-dir", str(out), "--error-log", str(log)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["counts"]["standard"] == 5
        assert summary["counts"]["rag_superior"] == n_rag
        assert len((out / "rag_superior.jsonl").read_text().splitlines()) == n_rag
        errors = [json.loads(line) for line in log.read_text().splitlines()]
        assert sorted(e["image_id"] for e in errors) == rejected
        assert all(e["line"] > 0 for e in errors)
    rag = [json.loads(line) for line in (tmp_path / "curate" / "rag_superior.jsonl").read_text().splitlines()]
    grown = [r for r in rag if len(r["augmented_steps"]) > len(r["standard_steps"])]
    assert len(grown) == 4


def test_reward(tmp_path):
    grounding = tmp_path / "g.tsv"
    grounding.write_text("img1\tEiffel Tower\t0.8\nimg1\tSeine\t0.6\n")
    rollout = {
        "image_id": "img1",
        "predicted_rationale": "I can see the Eiffel Tower near the Seine.",
        "reference_entities": ["eiffel tower", "seine", "louvre"],
        "predicted_label": 1,
        "d_rag": 0, "d_reason": 200,
        "predicted": {"country": "France", "city": "Paris", "coord": {"lat": 48.8584, "lon": 2.2945}},
        "truth": {"country": "France", "city": "Paris", "coord": {"lat": 48.8584, "lon": 2.2945}},
    }
    src = write_jsonl(tmp_path / "r.jsonl", [rollout])
    out = tmp_path / "r.out"
    assert cli.main(["reward", "-i", str(src), "-o", str(out), "--grounding", str(grounding)]) == 0
    row = json.loads(out.read_text())
    assert row["r_depth"] == 1.0
    assert row["r_vis"] == pytest.approx(0.7 * 2 / 3)
    assert row["r_geo"] == pytest.approx(1.0)
    assert row["r_stage1"] == pytest.approx(0.5 + 0.5 * 0.7 * 2 / 3)


def _train(tmp_path, tag, *extra):
    trace, policy, init = (tmp_path / f"{tag}.{s}" for s in ("trace", "policy", "init"))
    code = cli.main(["train-toy", "--trace", str(trace), "--policy", str(policy),
                     "--init-policy-out", str(init), *extra])
    assert code == 0
    return trace.read_bytes(), policy.read_bytes(), init.read_bytes()


def test_train_toy_deterministic(tmp_path):
    a = _train(tmp_path, "a")
    b = _train(tmp_path, "b")
    assert a == b
    trace = [json.loads(line) for line in a[0].decode().splitlines()]
    assert [(r["stage"], r["epoch"]) for r in trace] == [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2)]
    c = _train(tmp_path, "c", "--seed", "7")
    assert c[1] != a[1]


def test_train_toy_zero_epochs(tmp_path):
    trace, policy, init = _train(tmp_path, "z", "--set", "stage1_epochs=0", "--set", "stage2_epochs=0")
    assert trace == b""
    assert policy == init
    world = SyntheticGeoWorld.bundled()
    assert ToyPolicy.loads(policy.decode()).weights.shape == (world.n_actions, world.feature_dim)


def test_eval_outputs(tmp_path, data_dir, capsys):
    src = data_dir / "eval_fixture.jsonl"
    out = tmp_path / "m.csv"
    assert cli.main(["eval", "-i", str(src), "--format", "csv", "-o", str(out)]) == 0
    assert out.read_text() == (data_dir / "eval_fixture_golden.csv").read_text()
    assert cli.main(["eval", "-i", str(src), "--format", "xml"]) == 2
    exact = [json.loads(line) for line in src.read_text().splitlines()]
    for r in exact:
        r["predicted"] = r["truth"]
    exact_src = write_jsonl(tmp_path / "exact.jsonl", exact)
    capsys.readouterr()
    assert cli.main(["eval", "-i", str(exact_src), "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert list(report["threshold_acc"].values()) == [100.0] * 5
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert cli.main(["eval", "-i", str(empty)]) == 1


def test_eval_partial_rejects_exit_nonzero(tmp_path, data_dir):
    rows = data_dir.joinpath("eval_fixture.jsonl").read_text() + '{"image_id": "broken"}\n'
    src = tmp_path / "e.jsonl"
    src.write_text(rows)
    out = tmp_path / "m.json"
    assert cli.main(["eval", "--lenient", "-i", str(src), "--format", "json", "-o", str(out)]) == 1
    assert json.loads(out.read_text())["n_records"] == 4


def test_report_trace_and_metrics(tmp_path, data_dir, capsys):
    trace, _, _ = _train(tmp_path, "r")
    assert cli.main(["report", "--trace", str(tmp_path / "r.trace"), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "stage,epoch,mean_reward,mean_kl,objective"
    assert len(lines) == 6
    metrics = tmp_path / "m.json"
    cli.main(["eval", "-i", str(data_dir / "eval_fixture.jsonl"), "--format", "json", "-o", str(metrics)])
    capsys.readouterr()
    assert cli.main(["report", "--metrics", str(metrics), "--format", "csv"]) == 0
    assert capsys.readouterr().out == (data_dir / "eval_fixture_golden.csv").read_text()


def test_config_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv("GEOADAPT_CONFIG", raising=False)
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nseed = 5\nsigma = 50\nkl_beta = 0.1\n")
    assert RunConfig.load().seed == 42
    from_file = RunConfig.load(str(cfg_file))
    assert (from_file.seed, from_file.sigma, from_file.kl_beta) == (5, 50.0, 0.1)
    both = RunConfig.load(str(cfg_file), {"seed": "9", "sigma": "25"})
    assert (both.seed, both.sigma, both.kl_beta) == (9, 25.0, 0.1)
    monkeypatch.setenv("GEOADAPT_CONFIG", str(cfg_file))
    assert RunConfig.load().seed == 5
    with pytest.raises(KeyError):
        RunConfig.load(None, {"no_such_key": "1"})


def test_cli_config_layers(tmp_path, monkeypatch):
    monkeypatch.delenv("GEOADAPT_CONFIG", raising=False)
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("seed = 5\nstage1_epochs = 0\nstage2_epochs = 0\n")
    world = SyntheticGeoWorld.bundled()

    def init_seed(*flags):
        init = tmp_path / "init.txt"
        cli.main([*flags, "train-toy", "--trace", str(tmp_path / "t"), "--policy", str(tmp_path / "p"),
                  "--init-policy-out", str(init)])
        text = init.read_text()
        for seed in (5, 9, 11):
            if text == ToyPolicy.init(world.n_actions, world.feature_dim, seed=seed).dump():
                return seed
        return None

    assert init_seed("--config", str(cfg_file)) == 5
    assert init_seed("--config", str(cfg_file), "--seed", "9") == 9
    assert init_seed("--config", str(cfg_file), "--set", "seed=11") == 11
    monkeypatch.setenv("GEOADAPT_CONFIG", str(cfg_file))
    assert init_seed() == 5


def test_bad_config_is_usage_error(tmp_path):
    assert cli.main(["--set", "gamma1=-1", "score", "-i", str(tmp_path / "x")]) == 2
    assert cli.main(["--set", "nonsense", "score", "-i", str(tmp_path / "x")]) == 2


@pytest.mark.parametrize("cmd", ["score", "stratify", "curate", "eval"])
def test_subcommands_deterministic(tmp_path, data_dir, cmd):
    def run(tag):
        out = tmp_path / tag
        if cmd == "score":
            cli.main(["score", "-i", str(score_input(tmp_path)), "-o", str(out)])
            return out.read_bytes()
        if cmd == "eval":
            cli.main(["eval", "-i", str(data_dir / "eval_fixture.jsonl"), "--format", "json", "-o", str(out)])
            return out.read_bytes()
        cli.main([cmd, "--lenient", "-i", str(data_dir / "curation_fixture.jsonl"), "--out-dir", str(out)])
        return b"".join((out / f).read_bytes() for f in ("standard.jsonl", "rag_superior.jsonl", "summary.json"))

    assert run("a") == run("b")


def test_plot_smoke(tmp_path, data_dir):
    pytest.importorskip("matplotlib")
    out = tmp_path / "s"
    assert cli.main(["--plot", "stratify", "--lenient", "-i", str(data_dir / "curation_fixture.jsonl"),
                     "--out-dir", str(out)]) == 0
    png = out / "l_opt_histogram.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    _train(tmp_path, "p", "--set", "stage1_epochs=1", "--set", "stage2_epochs=1")
    report_out = tmp_path / "rep.txt"
    assert cli.main(["report", "--plot", "--trace", str(tmp_path / "p.trace"), "-o", str(report_out)]) == 0
    assert (tmp_path / "rep.trace.png").exists() and (tmp_path / "rep.surface.png").exists()
