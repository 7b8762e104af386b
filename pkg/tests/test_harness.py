import json

import numpy as np
import pytest

from deformba.harness import ConfigError, Report, load_config, parse_config
from deformba.harness import checks as ck
from deformba.harness import suites
from deformba.harness.cli import main
from deformba.harness.report import atomic_write
from deformba.tensor import dtsr


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


def read_report(out, command):
    return json.loads((out / f"{command}_report.json").read_text())


# --------------------------------------------------------------------------
# config


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg.command == "verify" and cfg.seed == 0
    assert cfg.block.build().C == 8 and cfg.rig.build().num_cams == 4


@pytest.mark.parametrize(
    "data",
    [
        {"sead": 1},
        {"block": {"C": 8, "colour": "red"}},
        {"seed": -1},
        {"seed": 2**64},
        {"xa": {"N": 2}},
        {"block": {"C": 6, "G": 4}},
        {"grid": {"z_heights": [1.0, 0.0]}},
        {"rig": {"lidar2img": [[1.0] * 15]}},
        {"tolerances": {"scan": 0}},
        {"bench_lengths": [0]},
        {"command": "train"},
    ],
)
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", ""])
def test_unparseable_config(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_rig_from_row_major_matrices():
    m = np.arange(16.0).reshape(4, 4) + np.eye(4)
    cfg = parse_config({"rig": {"lidar2img": [m.ravel().tolist(), np.eye(4).ravel().tolist()], "h_img": 10, "w_img": 12}})
    rig = cfg.rig.build()
    assert rig.num_cams == 2 and np.array_equal(rig.lidar2img[0], m)
    assert (rig.h_img, rig.w_img) == (10, 12)


def test_extra_shapes_parse():
    cfg = parse_config({"extra_shapes": [{"Hb": 8, "Wb": 8, "num_cams": 2, "h": 4, "w": 4}]})
    assert cfg.extra_shapes[0].build().L == 32


# --------------------------------------------------------------------------
# report


def test_report_status_and_duplicates():
    r = Report("unit", 3)
    r.add(ck._check("b", True, 1.0, 2.0))
    assert r.status == "pass"
    r.add(ck._check("a", False, np.float64(3.0), 2.0, {"why": "too big"}))
    assert r.status == "fail" and [c.name for c in r.failures] == ["a"]
    with pytest.raises(ValueError):
        r.add(ck._check("a", True, 0, 0))
    d = json.loads(r.to_json())
    assert list(d["checks"]) == ["a", "b"]
    assert d["environment"]["seed"] == 3 and d["checks"]["a"]["detail"] == {"why": "too big"}
    assert r.summary_lines()[-1] == "unit: fail (2 checks)"


def test_report_json_is_plain():
    r = Report("unit", 0)
    r.add(ck._check("arr", True, np.arange(3), (np.int64(1), np.inf)))
    d = json.loads(r.to_json())
    assert d["checks"]["arr"]["measured"] == [0, 1, 2]


def test_atomic_write_replaces_without_leftovers(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    atomic_write(target, "one")
    atomic_write(target, b"two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]


# --------------------------------------------------------------------------
# suites


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("DEFORMBA_THREADS", "1")
    assert suites.worker_count() == 1
    monkeypatch.setenv("DEFORMBA_THREADS", "junk")
    assert suites.worker_count() >= 1
    monkeypatch.delenv("DEFORMBA_THREADS")
    assert 1 <= suites.worker_count() <= 4


def test_thread_count_does_not_change_report(monkeypatch):
    cfg = parse_config({"seed": 5})
    monkeypatch.setenv("DEFORMBA_THREADS", "1")
    one = suites.run_verify(cfg).to_json()
    monkeypatch.setenv("DEFORMBA_THREADS", "4")
    assert suites.run_verify(cfg).to_json() == one


@pytest.mark.parametrize("seed", [1, 12345, 2**64 - 1])
def test_verify_verdicts_seed_independent(seed):
    rep = suites.run_verify(parse_config({"seed": seed}))
    assert rep.status == "pass", rep.failures


def test_verify_uses_configured_rig():
    cfg = parse_config({"rig": {"yaws": [0.0]}, "grid": {"Hb": 2, "Wb": 3, "z_heights": [0.5]}, "xa": {"F": 3, "batch": 2}})
    res = {c.name: c for c in ck.configured_xa(0, cfg.xa.build(1, 1), cfg.grid.build(), cfg.rig.build(), (4, 4), 2)}
    assert all(c.passed for c in res.values())
    assert res["xa_config_output"].measured == [2, 8, 6]


# --------------------------------------------------------------------------
# CLI


def test_cli_verify_pass(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path), "--quiet"]) == 0
    assert capsys.readouterr().out.strip() == "verify: pass (20 checks)"
    assert read_report(tmp_path, "verify")["status"] == "pass"


def test_cli_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, {"seed": 3})
    assert main(["verify", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert read_report(tmp_path / "o", "verify")["environment"]["seed"] == 9


@pytest.mark.parametrize(
    "argv_extra,cfg",
    [([], "{broken"), ([], {"unknown": 1}), (["--seed", "-4"], {}), (["--seed", str(2**64)], {})],
)
def test_cli_config_errors_write_nothing(tmp_path, capsys, argv_extra, cfg):
    out = tmp_path / "out"
    rc = main(["flops", "--config", write_cfg(tmp_path, cfg), "--out", str(out)] + argv_extra)
    assert rc == 2 and not out.exists()
    assert "config error" in capsys.readouterr().err


def test_cli_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == 2


def test_cli_failing_check_exits_1(tmp_path):
    # A tolerance far below float64 resolution makes the oracle checks fail.
    cfg = write_cfg(tmp_path, {"tolerances": {"scan": 1e-300}})
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 1
    rep = read_report(tmp_path / "o", "verify")
    assert rep["status"] == "fail" and rep["checks"]["scan_equivalence"]["status"] == "fail"


def test_cli_flops_writes_tables(tmp_path):
    cfg = write_cfg(tmp_path, {"extra_shapes": [{"Hb": 10, "Wb": 10, "num_cams": 1, "h": 8, "w": 8}]})
    assert main(["flops", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    table = json.loads((tmp_path / "cost_table.json").read_text())
    assert [10, 10] in [r["bev"] for r in table["rows"]]
    assert "deformba_xa" in (tmp_path / "cost_table.txt").read_text()


def test_cli_forward_with_input(tmp_path, capsys):
    img = np.random.default_rng(0).uniform(-1, 1, (1, 3, 32, 64))
    dtsr.save(tmp_path / "img.dtsr", img)
    cfg = write_cfg(tmp_path, {"backbone": {"C": 8, "input_shape": [1, 3, 32, 64]}})
    assert main(["forward", "--config", cfg, "--input", str(tmp_path / "img.dtsr"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "stage4" in out and "(1, 64, 1, 2)" in out
    assert dtsr.load(tmp_path / "stage1.dtsr").shape == (1, 8, 8, 16)
    trace = read_report(tmp_path, "forward")["extra"]["shape_trace"]
    assert [t["stage"] for t in trace] == ["input", "stage1", "stage2", "stage3", "stage4"]


def test_cli_forward_shape_mismatch_exits_1(tmp_path):
    dtsr.save(tmp_path / "img.dtsr", np.zeros((1, 3, 60, 60)))
    cfg = write_cfg(tmp_path, {"backbone": {"C": 8, "input_shape": [1, 3, 60, 60]}})
    assert main(["forward", "--config", cfg, "--input", str(tmp_path / "img.dtsr"), "--out", str(tmp_path / "o")]) == 1
    rep = read_report(tmp_path / "o", "forward")
    assert rep["checks"]["input_contract"]["status"] == "fail"
    assert not list((tmp_path / "o").glob("*.dtsr"))


def test_cli_forward_undeclared_shape_exits_1(tmp_path):
    dtsr.save(tmp_path / "img.dtsr", np.zeros((1, 3, 32, 32)))
    rc = main(["forward", "--input", str(tmp_path / "img.dtsr"), "--out", str(tmp_path / "o"), "--quiet"])
    assert rc == 1


def test_cli_forward_corrupt_input_exits_1(tmp_path):
    (tmp_path / "bad.dtsr").write_bytes(b"garbage")
    assert main(["forward", "--input", str(tmp_path / "bad.dtsr"), "--out", str(tmp_path / "o"), "--quiet"]) == 1


def test_cli_bench(tmp_path):
    cfg = write_cfg(tmp_path, {"bench_lengths": [8, 16]})
    assert main(["bench", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    assert set(read_report(tmp_path, "bench")["extra"]["timings_seconds"]) == {"8", "16"}


def test_cli_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["flops", "--quiet"]) == 0
    assert (tmp_path / "deformba_out" / "flops_report.json").exists()
