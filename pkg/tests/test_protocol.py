import json

from ambs import protocol


def test_matrix_covers_seeds_and_variants():
    matrix = protocol.run_matrix("/tmp/somewhere")
    assert len(matrix) == len(protocol.SEEDS) * len(protocol.VARIANTS)
    for name, cfg in matrix.items():
        variant, seed_tag = name.rsplit("_s", 1)
        assert cfg.seed == int(seed_tag)
        assert cfg.out_dir == f"/tmp/somewhere/{name}"
        assert cfg.total_steps == protocol.TOTAL_STEPS
    assert matrix["l1_s1"].l1_baseline and matrix["l1_s1"].env_background == "scroll"
    assert not matrix["scroll_s2"].l1_baseline
    assert matrix["none_s0"].env_background == "none"


def test_root_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv("AMBS_RUNS_DIR", str(tmp_path / "elsewhere"))
    cfg = protocol.run_matrix()["scroll_s0"]
    assert cfg.out_dir.startswith(str(tmp_path / "elsewhere"))


def test_is_complete_wants_final_eval_and_matching_config(tmp_path):
    cfg = protocol.run_matrix(tmp_path)["none_s1"]
    assert not protocol.is_complete(cfg)

    out = tmp_path / "none_s1"
    out.mkdir(parents=True)
    cfg.write_resolved(out / "config.json")
    assert not protocol.is_complete(cfg)  # still no final eval

    (out / "eval_final.json").write_text(json.dumps({"mean_return": 1.0}))
    assert protocol.is_complete(cfg)

    # a config that differs in anything but out_dir is stale
    stale = json.loads((out / "config.json").read_text())
    stale["seed"] = 99
    (out / "config.json").write_text(json.dumps(stale))
    assert not protocol.is_complete(cfg)

    # corrupt config is stale, not an exception
    (out / "config.json").write_text("{nope")
    assert not protocol.is_complete(cfg)


def test_summary_reads_returns_and_balance(tmp_path):
    matrix = protocol.run_matrix(tmp_path)
    for name, cfg in matrix.items():
        out = tmp_path / name
        out.mkdir(parents=True)
        cfg.write_resolved(out / "config.json")
        (out / "eval_final.json").write_text(
            json.dumps({"mean_return": float(cfg.seed + (0 if cfg.l1_baseline else 10))}))
        rows = ["# ambs-metrics-v1", "step,c"]
        rows += [f"{s},{0.5 - 0.01 * (s // 1000)}" for s in (1000, 3000, 6000)]
        (out / "metrics.csv").write_text("\n".join(rows) + "\n")

    summary = protocol.load_summary(tmp_path)
    assert summary["returns"]["l1"] == [0.0, 1.0, 2.0]
    assert summary["mean_returns"]["scroll"] == 11.0
    assert set(summary["balance"]) == {f"{v}_s{s}" for v in ("scroll", "none")
                                       for s in protocol.SEEDS}
    b = summary["balance"]["scroll_s0"]
    assert b["logged_points"] == 3
    assert b["in_open_interval"]
    assert abs(b["max_early_move"] - 0.03) < 1e-12  # the 3k row, not the 6k one
    assert abs(b["final"] - 0.44) < 1e-12
