"""End-to-end contract with the engine: exported directories must pass the
engine's validate command, round-trip bitwise through its reader, and feed
its training loop."""

import json
import os

import numpy as np
import pytest
from PIL import Image

from dqad.cli import main as dqad_main
from dqad.features import read_dataset, read_feature_map
from dqad_exporter.cli import main as export_main
from dqad_exporter.export import ExportSpec, Exporter, InputImage, export, load_rgb


def make_images(directory, rng, size=64):
    """One normal texture and one with a bright square defect + mask PNGs."""
    normal = rng.integers(60, 120, size=(size, size, 3), dtype=np.uint8)
    anomalous = rng.integers(60, 120, size=(size, size, 3), dtype=np.uint8)
    anomalous[20:36, 24:44] = rng.integers(200, 255, size=(16, 20, 3), dtype=np.uint8)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[20:36, 24:44] = 255

    paths = {}
    for name, arr in (("normal.png", normal), ("anomalous.png", anomalous)):
        p = os.path.join(directory, name)
        Image.fromarray(arr).save(p)
        paths[name] = p
    mask_path = os.path.join(directory, "anomalous_mask.png")
    Image.fromarray(mask).save(mask_path)
    paths["mask"] = mask_path
    return paths


def small_spec(paths, **overrides):
    base = dict(
        backbone="resnet18",
        levels=(2, 3),
        patch_size=3,
        target_h=16,
        target_w=16,
        target_c=8,
        image_size=64,
        pretrained=False,
        seed=0,
        images=[
            InputImage(path=paths["normal.png"], kind="normal", split="train"),
            InputImage(path=paths["anomalous.png"], kind="anomalous", split="train",
                       mask=paths["mask"]),
        ],
    )
    base.update(overrides)
    return ExportSpec(**base)


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(7)
    paths = make_images(str(tmp_path), rng)
    return tmp_path, paths


def test_export_passes_engine_validate(workspace):
    tmp_path, paths = workspace
    out = str(tmp_path / "exported")
    entries = export(small_spec(paths), out)
    assert len(entries) == 2
    assert dqad_main(["validate", "--data", out]) == 0


def test_export_round_trips_bitwise(workspace):
    tmp_path, paths = workspace
    out = str(tmp_path / "exported")
    spec = small_spec(paths)
    exporter = Exporter(spec)
    exporter.run(out)

    # recompute the exporter-side arrays and compare bytes via the engine reader
    expected = exporter.features_for(load_rgb(paths["normal.png"], 64))
    back = read_feature_map(os.path.join(out, "img_0000.dqadfmap"))
    assert back.data.tobytes() == expected.astype(np.float32).tobytes()


def test_manifest_dims_match_headers(workspace):
    tmp_path, paths = workspace
    out = str(tmp_path / "exported")
    export(small_spec(paths), out)
    ds = read_dataset(out)
    for entry, image in zip(ds.manifest.entries, ds.images):
        assert (entry.H, entry.W, entry.C) == (image.height, image.width, image.channels)
        assert (entry.H, entry.W, entry.C) == (16, 16, 8)


def test_engine_train_smoke_on_exported_data(workspace, tmp_path):
    _, paths = workspace
    out = str(tmp_path / "exported")
    export(small_spec(paths), out)

    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({
        "total_steps": 200, "warmup_steps": 40, "steps_per_episode": 100,
        "target_sync_every": 80, "resample_every": 60, "eps_decay_steps": 40,
        "batch_size": 8, "buffer_capacity": 200, "hidden_sizes": [8, 4],
        "n_sample_images": 1, "pool_cap": 200, "bank_size": 8, "boundary_k": 4,
        "seed": 1,
    }))
    run_dir = tmp_path / "run"
    assert dqad_main(["train", "--data", out, "--config", str(cfg), "--out", str(run_dir)]) == 0
    assert (run_dir / "checkpoint.dqadckpt").exists()


def test_rpag_export_adds_pseudo_entries(workspace):
    tmp_path, paths = workspace
    out = str(tmp_path / "exported_rpag")
    spec = small_spec(paths, rpag_enabled=True, augment_count=3)
    entries = export(spec, out)
    pseudo = [e for e in entries if e["path"].startswith("pseudo_")]
    assert 1 <= len(pseudo) <= 3
    assert all(e["kind"] == "anomalous" and e["split"] == "train" for e in pseudo)
    assert dqad_main(["validate", "--data", out]) == 0


def test_cli_export(workspace, capsys):
    tmp_path, paths = workspace
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({
        "backbone": "resnet18",
        "levels": [2, 3],
        "patch_size": 3,
        "target": {"H": 16, "W": 16, "C": 8},
        "image_size": 64,
        "pretrained": False,
        "seed": 0,
        "images": [
            {"path": "normal.png", "kind": "normal", "split": "train"},
            {"path": "anomalous.png", "kind": "anomalous", "split": "train",
             "mask": "anomalous_mask.png"},
        ],
    }))
    out = str(tmp_path / "cli_out")
    assert export_main(["--spec", str(spec_path), "--out", out]) == 0
    assert dqad_main(["validate", "--data", out]) == 0


def test_cli_bad_spec_exits_one(tmp_path):
    spec_path = tmp_path / "bad.json"
    spec_path.write_text(json.dumps({"backbone": "resnet18", "levels": [], "images": []}))
    assert export_main(["--spec", str(spec_path), "--out", str(tmp_path / "o")]) == 1


def test_anomalous_input_without_mask_rejected(workspace):
    tmp_path, paths = workspace
    spec = small_spec(paths)
    spec.images[1].mask = None
    from dqad_exporter.errors import ExportSpecError

    with pytest.raises(ExportSpecError):
        export(spec, str(tmp_path / "x"))
