"""
CLI Tests
Exit codes, reproducible generation and the gen -> pretrain -> refine -> infer -> eval pipeline
"""

import json

import pytest

from conftest import tiny_run_config
from equipose.cli import EVAL_CSV, EVAL_SUMMARY, EVAL_XLSX, main
from equipose.database.cloud_io import write_epc
from equipose.database.dataset_store import load_dataset
from equipose.database.file_store import atomic_write_text
from equipose.geometry import PointCloud
from equipose.models import InferenceBatch, InferenceRecord
from equipose.services.inference_service import PREDICTIONS_FILE
from equipose.services.report_generator import read_records_csv
from test_synth_dataset import tree_digest


def write_perfect_predictions(dataset, out):
    """Predictions copied from ground truth: exact pose, scale, extents and shape."""
    records = []
    for instance in dataset.instances("test"):
        entry = instance.entry
        relative = f"shapes/{entry.instance_id}.epc"
        write_epc(out / relative, PointCloud(coords=instance.canonical.numpy()))
        records.append(InferenceRecord(
            instance_id=entry.instance_id,
            category=entry.category,
            quaternion=entry.pose.rotation,
            translation_m=entry.pose.translation,
            scale=entry.scale,
            chamfer=0.0,
            hypothesis_indices=(0, 0),
            canonical_extents=entry.canonical_extents,
            shape_file=relative,
        ))
    atomic_write_text(out / PREDICTIONS_FILE, InferenceBatch(records=records).model_dump_json(indent=2))
    return records


def test_usage_errors(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().out
    assert main(["explode"]) == 2
    assert main(["gen", "--instances", "many"]) == 2
    assert main(["--help"]) == 0


def test_failures_exit_one(tmp_path):
    assert main(["pretrain", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "run")]) == 1
    assert main(["eval", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "run")]) == 1


def test_gen_is_reproducible(tmp_path):
    args = ["gen", "--seed", "7", "--instances", "2", "--points", "32", "--categories", "box", "bottle"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    dataset = load_dataset(tmp_path / "a")
    assert dataset.manifest.spec.seed == 7 and len(dataset) == 4


def test_eval_on_perfect_predictions(toy_dataset_dir, tmp_path):
    out = tmp_path / "run"
    records = write_perfect_predictions(load_dataset(toy_dataset_dir), out)
    assert main(["eval", "--data", str(toy_dataset_dir), "--out", str(out)]) == 0
    summary = json.loads((out / EVAL_SUMMARY).read_text(encoding="utf-8"))
    assert summary["count"] == len(records)
    assert summary["mean_cd"] == 0.0
    for key in ("iou50", "iou75", "5deg2cm", "5deg5cm", "10deg2cm", "10deg5cm"):
        assert summary[key] == 1.0
    rows = read_records_csv(out / EVAL_CSV)
    assert [row["instance_id"] for row in rows] == [r.instance_id for r in records]
    assert (out / EVAL_XLSX).exists()


def test_eval_rejects_unknown_instance(toy_dataset_dir, tmp_path):
    out = tmp_path / "run"
    write_perfect_predictions(load_dataset(toy_dataset_dir), out)
    batch = InferenceBatch.model_validate_json((out / PREDICTIONS_FILE).read_text(encoding="utf-8"))
    batch.records[0] = batch.records[0].model_copy(update={"instance_id": "teapot-0000"})
    atomic_write_text(out / PREDICTIONS_FILE, batch.model_dump_json())
    assert main(["eval", "--data", str(toy_dataset_dir), "--out", str(out)]) == 1
    assert not (out / EVAL_SUMMARY).exists()


def test_full_pipeline(toy_dataset_dir, tmp_path):
    config = tmp_path / "run.json"
    config.write_text(tiny_run_config().model_dump_json(), encoding="utf-8")
    out = tmp_path / "run"
    common = ["--data", str(toy_dataset_dir), "--out", str(out)]
    assert main(["pretrain", "--config", str(config)] + common) == 0
    assert main(["refine", "--config", str(config)] + common) == 0
    assert main(["infer"] + common) == 0
    batch = InferenceBatch.model_validate_json((out / PREDICTIONS_FILE).read_text(encoding="utf-8"))
    assert [r.instance_id for r in batch.records] == ["box-0003", "cylinder-0003"]
    assert all((out / r.shape_file).exists() for r in batch.records)
    assert main(["eval"] + common) == 0
    summary = json.loads((out / EVAL_SUMMARY).read_text(encoding="utf-8"))
    assert summary["count"] == 2
    assert all(0.0 <= summary[key] <= 1.0 for key in ("iou50", "5deg2cm", "10deg5cm"))


def test_infer_is_reproducible(toy_dataset_dir, tmp_path):
    config = tmp_path / "run.json"
    config.write_text(tiny_run_config().model_dump_json(), encoding="utf-8")
    out = tmp_path / "run"
    assert main(["pretrain", "--config", str(config), "--data", str(toy_dataset_dir), "--out", str(out)]) == 0
    checkpoint = str(out / "pretrain")
    for name in ("a", "b"):
        assert main(["infer", "--data", str(toy_dataset_dir), "--out", str(tmp_path / name),
                     "--checkpoint", checkpoint, "--seed", "3"]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


@pytest.mark.slow
def test_selftest_passes():
    assert main(["selftest"]) == 0


@pytest.mark.slow
def test_gradcheck_passes(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text(encoding="utf-8"))
    assert report["tensors"] and all(t["passed"] for t in report["tensors"])
