import hashlib
import json
from pathlib import Path

import pytest

from evfi.cli import main
from evfi.dataset import read_index

SIM = ["--set", "dataset.n_scenes=2", "--set", "dataset.n_frames=4", "--set", "dataset.canvas=[32,32]",
       "--set", "dataset.object_size=[8,12]"]
SMALL_MODEL = ["--set", "model.levels=2", "--set", "model.synthesis_width=8", "--set", "model.flow_width=8",
               "--set", "model.fusion_width=8", "--set", "model.blend_width=8", "--set", "protocol.epochs=[1,1,1]"]


def files(root: Path, pattern="**/*") -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.glob(pattern)) if p.is_file()}


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--seed", "7", *SIM]) == 0
    return out


@pytest.fixture(scope="module")
def trained(sim, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--out", str(out), "--set", f"data={json.dumps(str(sim))}", *SMALL_MODEL]) == 0
    return out


def test_simulate_reproducible(sim, tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--seed", "7", *SIM]) == 0
    a = {k: v for k, v in files(sim).items() if k != "summary.json"}
    b = {k: v for k, v in files(tmp_path).items() if k != "summary.json"}
    assert a == b and "index.jsonl" in a


def test_simulate_empty_scene_fails(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--set", "dataset.n_scenes=0"]) != 0
    assert "EmptyScene" in capsys.readouterr().err


def test_config_echo_and_summary(sim):
    cfg = json.loads((sim / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["dataset"]["n_scenes"] == 2 and cfg["dataset"]["canvas"] == [32, 32]
    summary = json.loads((sim / "summary.json").read_text())
    assert {"n_scenes", "n_samples", "n_windows", "n_events", "wall_time_s"} <= set(summary)


def test_config_file_and_unknown_keys(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"dataset": {"n_scenes": 1, "n_frames": 3, "canvas": [24, 24],
                                            "object_size": [6, 8]}, "seed": 2}))
    assert main(["simulate", "--config", str(conf), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "config.json").read_text())["seed"] == 2
    assert main(["simulate", "--out", str(tmp_path / "p"), "--set", "dataset.nope=1"]) == 2
    assert "InvalidConfig" in capsys.readouterr().err
    conf.write_text(json.dumps({"bogus": 1}))
    assert main(["simulate", "--config", str(conf), "--out", str(tmp_path / "q")]) == 2


def test_missing_dataset_and_checkpoint(tmp_path, capsys):
    assert main(["evaluate", "--out", str(tmp_path), "--set", "predictor=\"oracle\""]) == 2
    assert "MissingDataset" in capsys.readouterr().err
    assert main(["interpolate", "--out", str(tmp_path), "--set", f"data={json.dumps(str(tmp_path))}"]) == 2


def test_train_outputs(trained):
    for name in ("checkpoints/synthesis.npz", "checkpoints/warping.npz", "checkpoints/averaging.npz",
                 "loss_curves.png", "losses.csv", "config.json", "summary.json"):
        assert (trained / name).stat().st_size > 0
    assert (trained / "loss_curves.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    summary = json.loads((trained / "summary.json").read_text())
    assert set(summary["checkpoints"]) == {"synthesis", "warping", "averaging"}
    header = (trained / "losses.csv").read_text().splitlines()[0]
    assert header == "stage,step,loss"


def test_evaluate_oracle(sim, tmp_path):
    assert main(["evaluate", "--out", str(tmp_path), "--set", f"data={json.dumps(str(sim))}",
                 "--set", "predictor=oracle"]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["aggregate"]["psnr"] == 100.0 and metrics["aggregate"]["ssim"] == pytest.approx(1.0)
    for name in ("metrics.csv", "metrics.md", "psnr_hist.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_evaluate_model(sim, trained, tmp_path):
    assert main(["evaluate", "--out", str(tmp_path), "--set", f"data={json.dumps(str(sim))}",
                 "--set", f"checkpoint={json.dumps(str(trained / 'checkpoints/averaging.npz'))}"]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert 0 < summary["psnr"] < 100 and summary["n_samples"] == 4


def test_interpolate_naming_with_three_targets(tmp_path, trained):
    data = tmp_path / "d"
    assert main(["simulate", "--out", str(data), "--set", "dataset.n_scenes=1", "--set", "dataset.n_frames=5",
                 "--set", "dataset.skip=3", "--set", "dataset.canvas=[32,32]", "--set", "dataset.object_size=[8,12]"]) == 0
    (key,) = [m.sample_id for m in read_index(data)]
    out = tmp_path / "i"
    assert main(["interpolate", "--out", str(out), "--set", f"data={json.dumps(str(data))}",
                 "--set", f"checkpoint={json.dumps(str(trained / 'checkpoints/averaging.npz'))}",
                 "--set", "save_weights=true", "--set", "save_flows=true"]) == 0
    names = sorted(p.name for p in (out / "frames").iterdir())
    assert names == [f"{key}_0.250.png", f"{key}_0.500.png", f"{key}_0.750.png"]
    assert len(list((out / "weights").iterdir())) == 3
    assert (out / "weight_maps.png").stat().st_size > 0
    assert sorted(p.name for p in (out / "flows").iterdir())[:2] == [f"{key}_0.250_t0.flo", f"{key}_0.250_t1.flo"]


def ablate(sim, out):
    return main(["ablate", "--out", str(out), "--set", f"data={json.dumps(str(sim))}", "--set", "limit=2",
                 "--set", "eval_limit=2", "--set", 'groups=["proxies"]', *SMALL_MODEL])


def test_ablate_order_and_reproducible(sim, tmp_path):
    assert ablate(sim, tmp_path / "a") == 0
    rows = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert [r["variant"] for r in rows] == ["T=1", "T=2", "T=4"]
    for name in ("ablation.csv", "ablation.md", "ablation.png", "base.npz"):
        assert (tmp_path / "a" / name).stat().st_size > 0
    assert ablate(sim, tmp_path / "b") == 0
    assert (tmp_path / "a" / "ablation.json").read_text() == (tmp_path / "b" / "ablation.json").read_text()
