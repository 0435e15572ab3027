import json
import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from reinet.agents import ConfigError
from reinet.cli import main, parse_seeds
from reinet.graph import GraphError, LayeredTopology, Topology, contract_identities
from reinet.runner import (METRICS_COLUMNS, PpoChoice, RunConfig, evaluate, evaluate_variant,
                           load_config, load_parameters, load_trainer, make_variant, random_baseline,
                           read_manifest, read_metrics, run_training, train_seed)
from reinet.summary import (SUMMARY_COLUMNS, bin_curve, read_summary, render_svg, summarize_rows,
                            t_interval, write_summary)
from reinet.variants import variant_topology

SMALL_PPO = PpoChoice(None, {"buffer_size": 64, "num_minibatches": 2, "update_epochs": 2})


def small(tmp_path, **kw):
    base = dict(variant="3ppo", steps=300, ppo=SMALL_PPO, out=str(tmp_path), hidden=16)
    base.update(kw)
    return RunConfig(**base)


# ------------------------------------------------------------ config

def test_config_json_round_trip():
    cfg = RunConfig(variant="bridged-3ppo", steps=1000, seeds=(1, 2), act_every=(1, 3, 3),
                    ppo=PpoChoice("3ppo", {"learning_rate": 5e-4}),
                    ppo_by_layer={0: PpoChoice("ippo")}, checkpoint_every=500)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.config_hash() == cfg.config_hash()
    assert again.ppo_for_layer(0).learning_rate == 2.5e-4
    assert again.ppo_for_layer(2).learning_rate == 5e-4


def test_config_hash_ignores_output_and_seeds():
    cfg = RunConfig()
    assert replace(cfg, out="elsewhere", seeds=(4,)).config_hash() == cfg.config_hash()
    assert replace(cfg, steps=10).config_hash() != cfg.config_hash()


@pytest.mark.parametrize("doc", [
    {"training": {"stepz": 10}},
    {"enviroment": {}},
    {"training": {"ppo": {"preset": "ippo", "overrides": {"lr": 0.1}}}},
    {"training": {"seeds": [1, 1]}},
    {"variant": "5ppo"},
    {"variant": {"name": "x", "graph": {"vertices": 2, "edges": [], "colour": 1}}},
    {"comm": []},
])
def test_config_rejects_bad_documents(doc):
    with pytest.raises((ConfigError, GraphError)):
        RunConfig.from_dict(doc)


def test_config_rejects_unknown_preset():
    with pytest.raises(ConfigError):
        RunConfig(ppo=PpoChoice("sac")).ppo_for_layer(0)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_custom_graph_variant_round_trip(tmp_path):
    g = Topology.from_edges(5, [(4, 0), (4, 1), (3, 2), (4, 3)])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"variant": {"graph": g.to_dict()}, "env": {"params": {"n_agents": 3}}}))
    cfg = load_config(path)
    assert cfg.variant == "custom" and cfg.graph == g
    variant, env = make_variant(cfg, 0)
    # 4 sits two layers above motors 0 and 1, so each of those edges gets an identity
    assert variant.layered.vertex_count == 7 and env.n_agents == 3


# ------------------------------------------------------------ training

def test_zero_budget_writes_header_only(tmp_path):
    metrics = train_seed(small(tmp_path, steps=0), 0)
    assert metrics.read_text() == ",".join(METRICS_COLUMNS) + "\n"


def test_metrics_rows_and_types(tmp_path):
    cfg = small(tmp_path, steps=200)
    rows = read_metrics(train_seed(cfg, 3))
    assert len(rows) == 8
    assert [r["episode"] for r in rows] == list(range(8))
    assert [r["global_step"] for r in rows] == list(range(25, 201, 25))
    assert all(r["variant"] == "3ppo" and r["seed"] == 3 for r in rows)
    assert math.isnan(rows[0]["policy_loss"]) and not math.isnan(rows[-1]["policy_loss"])


def test_read_metrics_rejects_other_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_metrics(p)


def test_seeds_are_written_to_separate_dirs(tmp_path):
    paths = run_training(small(tmp_path, steps=50, seeds=(0, 1)))
    assert [p.parent.name for p in paths] == ["seed_0", "seed_1"]
    assert paths[0].read_text() != paths[1].read_text()


def test_resume_matches_uninterrupted_run(tmp_path):
    full = small(tmp_path / "a", steps=400, checkpoint_every=200)
    whole = train_seed(full, 0).read_text()
    # resuming in the same run dir drops rows past the checkpoint and appends the rest
    again = replace(full, out=str(tmp_path / "b"))
    part = train_seed(again, 0)
    part.write_text("".join(part.read_text().splitlines(keepends=True)[:11]))   # crash after step 250
    resumed = train_seed(again, 0, resume=part.parent / "checkpoint_200")
    assert resumed.read_text() == whole


def test_resume_rejects_other_config(tmp_path):
    cfg = small(tmp_path, steps=100)
    train_seed(cfg, 0)
    ckpt = tmp_path / "3ppo" / "seed_0" / "checkpoint"
    assert load_trainer(ckpt, cfg).global_step == 100
    with pytest.raises(ConfigError):
        load_trainer(ckpt, replace(cfg, steps=200))


def test_checkpoint_layout(tmp_path):
    cfg = small(tmp_path, variant="bridged-3ppo", steps=50)
    train_seed(cfg, 0)
    ckpt = tmp_path / "bridged-3ppo" / "seed_0" / "checkpoint"
    manifest = read_manifest(ckpt)
    assert manifest["step"] == 50 and manifest["seed"] == 0
    # identity agents have no parameters and get no file
    assert manifest["agents"] == [f"agent_{v}.json" for v in range(7)]
    doc = json.loads((ckpt / "agent_6.json").read_text())
    # top input: two mid messages of 36 plus four identity messages of 18
    assert doc["actor"]["shapes"][0] == [144, 16]


def test_checkpoint_shape_mismatch_is_an_error(tmp_path):
    cfg = small(tmp_path, steps=25)
    train_seed(cfg, 0)
    ckpt = tmp_path / "3ppo" / "seed_0" / "checkpoint"
    bigger, _ = make_variant(replace(cfg, hidden=32), 0)
    with pytest.raises(ConfigError):
        load_parameters(ckpt, bigger)
    (ckpt / "manifest.json").write_text(json.dumps({"format_version": 99}))
    with pytest.raises(ConfigError):
        read_manifest(ckpt)


def test_loaded_parameters_reproduce_training_policy(tmp_path):
    cfg = small(tmp_path, steps=200)
    train_seed(cfg, 0)
    ckpt = tmp_path / "3ppo" / "seed_0" / "checkpoint"
    trained = load_trainer(ckpt).state.specs
    fresh, _ = make_variant(cfg, 0)
    load_parameters(ckpt, fresh)
    for a, b in zip(trained, fresh.specs):
        if a.learnable:
            for p, q in zip(a.policy.actor.params(), b.policy.actor.params()):
                np.testing.assert_array_equal(p, q)


def test_evaluate_is_deterministic(tmp_path):
    cfg = small(tmp_path, steps=100)
    train_seed(cfg, 0)
    ckpt = tmp_path / "3ppo" / "seed_0" / "checkpoint"
    a = evaluate(ckpt, episodes=5, seed=2)
    b = evaluate(ckpt, episodes=5, seed=2)
    assert a == b and len(a.returns) == 5
    assert evaluate(ckpt, episodes=5, seed=3).returns != a.returns


def test_evaluate_does_not_learn(tmp_path):
    cfg = small(tmp_path, steps=25)
    variant, env = make_variant(cfg, 0)
    before = [p.copy() for p in variant.specs[6].policy.actor.params()]
    evaluate_variant(variant, env, 3, seed=0)
    for p, q in zip(before, variant.specs[6].policy.actor.params()):
        np.testing.assert_array_equal(p, q)
    with pytest.raises(ValueError):
        evaluate_variant(variant, env, 0, seed=0)


def test_random_baseline_is_negative_on_spread():
    res = random_baseline(RunConfig(), episodes=20, seed=0)
    assert res.mean < 0 and len(res.returns) == 20
    assert random_baseline(RunConfig(), episodes=20, seed=0) == res


# ------------------------------------------------------------ summary

def test_t_interval_examples():
    m, half = t_interval([0.0, 1.0])
    assert m == 0.5 and half == pytest.approx(0.5 * stats.t.ppf(0.975, 1))
    m, half = t_interval([2.0, 2.0, 2.0])
    assert m == 2.0 and half == 0.0
    assert t_interval([4.0]) == (4.0, None)
    with pytest.raises(ValueError):
        t_interval([])


def test_t_interval_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.standard_normal(int(rng.integers(2, 12)))
        m, half = t_interval(x)
        lo, hi = stats.t.interval(0.95, len(x) - 1, loc=x.mean(), scale=stats.sem(x))
        assert m - half == pytest.approx(lo) and m + half == pytest.approx(hi)


def test_bin_curve():
    np.testing.assert_array_equal(bin_curve([1, 2, 3, 4, 5], 2), [1.5, 3.5, 5.0])
    np.testing.assert_array_equal(bin_curve([1, 2], 100), [1.5])


def fake_rows(seed, rewards, variant="ippo"):
    return [{"variant": variant, "env": "spread", "seed": seed, "global_step": 25 * (k + 1),
             "episode": k, "mean_episode_reward": r} for k, r in enumerate(rewards)]


def test_summarize_two_seeds():
    rows = fake_rows(0, [0.0, 0.0, 0.0]) + fake_rows(1, [1.0, 1.0, 1.0, 1.0])
    bins = summarize_rows(rows, bin_width=2)
    assert len(bins) == 2                    # truncated to the bins both seeds reached
    b = bins[0]
    assert b.mean == 0.5 and b.n_seeds == 2 and b.global_step == 50.0
    assert b.ci_high - b.mean == pytest.approx(0.5 * stats.t.ppf(0.975, 1))


def test_summarize_single_seed_warns():
    with pytest.warns(UserWarning, match="one seed"):
        bins = summarize_rows(fake_rows(0, [1.0, 3.0]), bin_width=2)
    assert bins[0].mean == 2.0 and bins[0].ci_low is None


def test_summarize_rejects_bad_input():
    with pytest.raises(ValueError):
        summarize_rows([])
    with pytest.raises(ValueError):
        summarize_rows(fake_rows(0, [1.0]), bin_width=0)


def test_summary_csv_round_trip(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bins = summarize_rows(fake_rows(0, [1.0, 2.0, 3.0]) + fake_rows(1, [2.0, 2.0, 2.0])
                              + fake_rows(0, [5.0], variant="3ppo"), bin_width=2)
    path = tmp_path / "summary.csv"
    write_summary(bins, path)
    assert path.read_text().splitlines()[0] == ",".join(SUMMARY_COLUMNS)
    assert read_summary(path) == bins


def test_svg_has_series_bands_and_legend():
    rows = fake_rows(0, [0.0, 1.0, 2.0, 3.0]) + fake_rows(1, [1.0, 1.0, 3.0, 3.0])
    rows += fake_rows(0, [0.0] * 4, "3ppo") + fake_rows(1, [2.0] * 4, "3ppo")
    svg = render_svg(summarize_rows(rows, bin_width=2))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polyline") == 2 and svg.count("<polygon") == 2
    assert "ippo (spread)" in svg and "3ppo (spread)" in svg
    with pytest.raises(ValueError):
        render_svg([])


# ------------------------------------------------------------ CLI

def test_parse_seeds():
    assert parse_seeds("3") == (3,)
    assert parse_seeds("0..4") == (0, 1, 2, 3, 4)
    assert parse_seeds("1,5") == (1, 5)
    with pytest.raises(Exception):
        parse_seeds("a..b")


def test_cli_layer(tmp_path, capsys):
    src = tmp_path / "g.json"
    src.write_text(json.dumps(variant_topology("bridged-3ppo").to_dict()))
    assert main(["layer", "--in", str(src), "--out", str(tmp_path / "lay.json")]) == 0
    lay = LayeredTopology.from_dict(json.loads((tmp_path / "lay.json").read_text()))
    assert lay.vertex_count == 11 and len(lay.identity_vertices) == 4
    assert contract_identities(lay) == variant_topology("bridged-3ppo")
    assert "4 identity" in capsys.readouterr().out


def test_cli_layer_rejects_cycle(tmp_path, capsys):
    src = tmp_path / "g.json"
    src.write_text(json.dumps({"vertices": 2, "edges": [[0, 1], [1, 0]]}))
    assert main(["layer", "--in", str(src), "--out", str(tmp_path / "o.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_train_eval_summarize_plot(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"variant": "ippo", "agents": {"hidden": 16},
                                    "training": {"ppo": {"overrides": {"buffer_size": 64}}}}))
    out = tmp_path / "runs"
    assert main(["train", "--config", str(cfg_path), "--steps", "100", "--seeds", "0..1",
                 "--out", str(out)]) == 0
    assert sorted(p.parent.name for p in out.rglob("metrics.csv")) == ["seed_0", "seed_1"]
    capsys.readouterr()
    assert main(["eval", "--in", str(out / "ippo" / "seed_0" / "checkpoint"), "--episodes", "3"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["episodes"] == 3 and res["mean"] < 0
    assert main(["eval", "--random", "--episodes", "3"]) == 0
    assert main(["summarize", "--in", str(out), "--out", str(tmp_path / "sum"), "--bin-width", "2"]) == 0
    assert (tmp_path / "sum" / "summary.csv").exists() and (tmp_path / "sum" / "chart.svg").exists()
    assert main(["plot", "--in", str(tmp_path / "sum" / "summary.csv"), "--out", str(tmp_path / "c.svg")]) == 0
    assert (tmp_path / "c.svg").read_text().startswith("<svg")


def test_cli_errors(tmp_path, capsys):
    assert main(["eval", "--episodes", "3"]) == 2
    assert main(["train", "--config", str(tmp_path / "none.json")]) == 2
    assert main(["train", "--variant", "ippo", "--seeds", "0,1", "--resume", str(tmp_path)]) == 2
    assert main(["summarize", "--in", str(tmp_path), "--out", str(tmp_path / "s")]) == 2
    assert capsys.readouterr().err.count("reinet: error") == 4
