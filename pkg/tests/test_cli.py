import json

import numpy as np
import pytest

from c2fhand.cli import build_parser, load_regressor, main, save_regressor
from c2fhand.hierarchy import load_hierarchy
from c2fhand.synth import fingertip_regressor


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ico = d / "ico.obj"
    from c2fhand.mesh import save_obj
    from c2fhand.templates import icosahedron

    save_obj(icosahedron(), ico)
    return d


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for cmd in ("hierarchy", "spirals", "synth", "train", "eval", "infer", "grad-check", "ablation"):
        assert cmd in text


def test_hierarchy_and_spirals(workspace, capsys):
    out = workspace / "h.json"
    assert main(["hierarchy", "--template", str(workspace / "ico.obj"), "--targets", "12,6,4", "-o", str(out)]) == 0
    assert load_hierarchy(out).counts == [12, 6, 4]
    sp = workspace / "sp.json"
    assert main(["spirals", "--hierarchy", str(out), "--length", "7", "-o", str(sp)]) == 0
    printed = capsys.readouterr().out
    assert "=" * 60 in printed and "level 0: 12 x 7" in printed


def test_pipeline(workspace, capsys):
    data = workspace / "data"
    ck = workspace / "ck"
    cfg = workspace / "cfg.json"
    cfg.write_text(json.dumps({"preset": "desk", "epochs": 1, "batch_size": 2, "n_train": 2,
                               "encoder": {"channels": [4, 4, 4, 4]}, "decoder": {"widths": [4, 4, 4, 4]}}))
    assert main(["synth", "-n", "2", "--seed", "1", "-o", str(data)]) == 0
    assert (data / "manifest.json").exists() and (data / "regressor.json").exists()
    assert main(["train", "--config", str(cfg), "--dataset", str(data), "-o", str(ck),
                 "--log", str(workspace / "steps.jsonl")]) == 0
    assert (ck / "loss_curve.png").exists() and (ck / "train_log.jsonl").exists()
    assert len((workspace / "steps.jsonl").read_text().splitlines()) == 1
    metrics = workspace / "metrics.json"
    assert main(["eval", "--checkpoint", str(ck), "--dataset", str(data), "-o", str(metrics)]) == 0
    rep = json.loads(metrics.read_text())
    assert set(rep) == {"pa_mpjpe", "pa_mpvpe", "f5", "f15"} and all(np.isfinite(list(rep.values())))
    assert metrics.with_suffix(".png").exists() and metrics.with_suffix(".per_sample.json").exists()
    inf = workspace / "inf"
    assert main(["infer", "--checkpoint", str(ck), "--dataset", str(data), "--index", "1", "-o", str(inf)]) == 0
    assert sorted(p.name for p in inf.glob("m*.obj")) == ["m1.obj", "m2.obj", "m3.obj", "m4.obj"]
    assert (inf / "levels.png").exists()
    assert "PA-MPVPE" in capsys.readouterr().out


def test_errors_exit_nonzero(workspace, capsys):
    assert main(["eval", "--checkpoint", str(workspace / "missing"), "--dataset", str(workspace),
                 "-o", str(workspace / "x.json")]) == 1
    assert main(["infer", "--checkpoint", str(workspace / "missing"), "-o", str(workspace / "y")]) == 1
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_grad_check_command(capsys):
    assert main(["grad-check"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_regressor_json(tmp_path, desk_hier):
    J = fingertip_regressor(desk_hier.levels[0].vertices)
    save_regressor(J, tmp_path / "r.json")
    assert np.array_equal(load_regressor(tmp_path / "r.json").to_dense(), J.to_dense())
