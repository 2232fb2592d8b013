import json
import subprocess
import sys

import numpy as np
from conftest import TINY_MODEL, tiny_config

from vir_vlfm.cli import main
from vir_vlfm.data import load_split
from vir_vlfm.data.ppm import is_p6, read_ppm
from vir_vlfm.train import build_adapt_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    lines = [l for l in err.splitlines() if l.strip()]
    assert len(lines) == 1
    return json.loads(lines[0])


def test_usage_error_is_one_json_line(capsys):
    code, _, err = run(capsys, "train")
    assert code == 2 and error_of(err)["error"] == "UsageError"
    code, _, err = run(capsys, "no-such-command")
    assert code == 2


def test_missing_dataset_reports_path(capsys, tmp_path):
    code, _, err = run(capsys, "train", tmp_path / "nowhere", tmp_path / "run", "--pretrain-checkpoint", "x")
    e = error_of(err)
    assert code == 1 and "nowhere" in e["message"]


def test_unknown_config_key(capsys, tmp_path, tiny_data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"widht": 3}))
    code, _, err = run(capsys, "train", tiny_data, tmp_path / "r", "--config", cfg)
    assert code == 1 and "widht" in error_of(err)["message"]


def test_corrupt_checkpoint(capsys, tmp_path, tiny_data, tiny_pretrain):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(tiny_pretrain.read_bytes()[:-5])
    bad.with_suffix(".json").write_bytes(tiny_pretrain.with_suffix(".json").read_bytes())
    code, _, err = run(capsys, "eval", bad, tiny_data)
    assert code == 1 and error_of(err)["error"] == "CheckpointError"


def test_gen_data_flags(capsys, tmp_path):
    code, out, _ = run(capsys, "gen-data", tmp_path / "d", "--train", 4, "--val", 2, "--test", 2,
                       "--pretrain", 2, "--eval-shifts", "[0.0]")
    assert code == 0 and json.loads(out)["dataset"].endswith("d")
    assert len(load_split(tmp_path / "d", "train", with_images=False)) == 4
    assert (tmp_path / "d" / "test_s0.jsonl").exists()


def test_train_eval_infer(capsys, tmp_path, tiny_data, tiny_pretrain):
    sizes = [x for k, v in TINY_MODEL.items() for x in (f"--{k}", v)]
    code, out, _ = run(capsys, "train", tiny_data, tmp_path / "run", "--pretrain-checkpoint", tiny_pretrain,
                       "--epochs", 1, "--train-limit", 8, "--val-limit", 2, "--quiet", *sizes)
    assert code == 0
    ckpt = json.loads(out)["checkpoint"]
    code, out, _ = run(capsys, "eval", ckpt, tiny_data, "--decoders", "rank,greedy", "--limit", 3,
                       "--out", tmp_path / "rep")
    head = json.loads(out)
    assert code == 0 and set(head) == {"rank", "greedy"} and head["rank"]["count"] == 3
    rec = load_split(tiny_data, "test", with_images=False)[0]
    cands = tmp_path / "cands.txt"
    cands.write_text("\n".join(rec.captions + ["no change was made"]))
    pair = tiny_data / "test" / rec.pair_id
    code, out, _ = run(capsys, "infer", ckpt, f"{pair}_before.ppm", f"{pair}_after.ppm",
                       "--vocab", tiny_data / "vocab.txt", "--candidates", cands)
    res = json.loads(out)
    assert code == 0 and res["rank"] in rec.captions + ["no change was made"] and isinstance(res["beam"], str)


def test_viz_flow_zero_flow_is_gray(capsys, tmp_path, tiny_data, tiny_pretrain):
    model = build_adapt_model(tiny_config(pretrain_checkpoint=str(tiny_pretrain)), 42)
    model.save(tmp_path / "init.ckpt")
    pid = load_split(tiny_data, "test", with_images=False)[0].pair_id
    code, out, _ = run(capsys, "viz-flow", tmp_path / "init.ckpt", tiny_data, tmp_path / "viz", pid)
    assert code == 0
    ppm = tmp_path / "viz" / f"{pid}_flow1.ppm"
    assert is_p6(ppm) and is_p6(tmp_path / "viz" / f"{pid}_pair.ppm")
    assert np.all(read_ppm(ppm) == 128)
    rows = (tmp_path / "viz" / f"{pid}_flow2.txt").read_text().splitlines()[1:]
    assert all(float(r.split()[2]) == 0.0 for r in rows)
    code, _, err = run(capsys, "viz-flow", tmp_path / "init.ckpt", tiny_data, tmp_path / "viz", "nope")
    assert code == 1 and "nope" in error_of(err)["message"]


def test_viz_flow_rejects_no_vrf(capsys, tmp_path, tiny_data, tiny_pretrain):
    model = build_adapt_model(tiny_config(pretrain_checkpoint=str(tiny_pretrain), vrf=False), 42)
    model.save(tmp_path / "novrf.ckpt")
    code, _, err = run(capsys, "viz-flow", tmp_path / "novrf.ckpt", tiny_data, tmp_path / "v", "x")
    assert code == 1 and "vrf" in error_of(err)["message"]


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "vir_vlfm.cli", "eval"], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "UsageError"
