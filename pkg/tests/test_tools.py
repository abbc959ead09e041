"""
Unit tests for checkpoint persistence, CSV/JSON exporters and report models.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from geoward.analysis.metric import assemble_metric, spectrum
from geoward.analysis.paths import naive_linear_path, trace_path
from geoward.core.exceptions import FormatError, InvalidInputError
from geoward.formats.damage_plan import DamagePlan
from geoward.formats.reports import json_schemas
from geoward.model.training import EpochRecord, TrainingLog
from geoward.tools.checkpoint import CheckpointCodec, load_checkpoint, save_checkpoint
from geoward.tools.exporters import (
    SPECTRUM_HEADER,
    TRACE_HEADER,
    read_rows,
    write_metric_blob,
    write_rows,
    write_spectrum,
    write_trace,
    write_training_log,
)

SHIPPED_SCHEMAS = Path(__file__).resolve().parent.parent / "schemas"


class TestCheckpoint:
    """Manifest plus weight blob."""

    def test_round_trip_is_bit_exact(self, tmp_path, tiny_spec, tiny_weights):
        manifest = save_checkpoint(tmp_path / "ckpt.json", tiny_spec, tiny_weights, "sha256:0123456789abcdef")
        spec, w = load_checkpoint(tmp_path / "ckpt.json")
        assert spec == tiny_spec
        assert w.values.tobytes() == tiny_weights.values.tobytes()
        assert manifest.blob == "ckpt.weights"
        assert manifest.weight_count == tiny_spec.n_params

    def test_blob_is_little_endian_float64(self, tmp_path, tiny_spec, tiny_weights):
        save_checkpoint(tmp_path / "ckpt.json", tiny_spec, tiny_weights)
        raw = (tmp_path / "ckpt.weights").read_bytes()
        assert len(raw) == 8 * tiny_spec.n_params
        assert np.array_equal(np.frombuffer(raw, dtype="<f8"), tiny_weights.values)

    def test_truncated_blob(self, tmp_path, tiny_spec, tiny_weights):
        save_checkpoint(tmp_path / "ckpt.json", tiny_spec, tiny_weights)
        blob = CheckpointCodec.blob_path(tmp_path / "ckpt.json")
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "ckpt.json")

    def test_wrong_weight_count(self, tmp_path, tiny_spec, tiny_weights):
        save_checkpoint(tmp_path / "ckpt.json", tiny_spec, tiny_weights)
        manifest = json.loads((tmp_path / "ckpt.json").read_text())
        manifest["weight_count"] += 1
        (tmp_path / "ckpt.json").write_text(json.dumps(manifest))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "ckpt.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_checkpoint(tmp_path / "absent.json")


class TestExporters:
    """CSV layout and exact float formatting."""

    def test_floats_round_trip(self, tmp_path):
        value = 0.1 + 0.2
        write_rows(tmp_path / "x.csv", ["a", "b", "c"], [(value, True, None)])
        rows = read_rows(tmp_path / "x.csv")
        assert float(rows[0]["a"]) == value
        assert rows[0]["b"] == "1" and rows[0]["c"] == ""

    def test_training_log(self, tmp_path):
        log = TrainingLog(records=[EpochRecord(1, 0.5, 0.75), EpochRecord(2, 0.25, 1.0)])
        write_training_log(tmp_path / "log.csv", log)
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines == ["epoch,loss,accuracy", "1,0.5,0.75", "2,0.25,1.0"]

    def test_spectrum_csv(self, tmp_path, tiny_spec, tiny_weights, blobs):
        s = spectrum(assemble_metric(tiny_spec, tiny_weights, blobs))
        write_spectrum(tmp_path / "spectrum.csv", s)
        rows = read_rows(tmp_path / "spectrum.csv")
        assert list(rows[0]) == SPECTRUM_HEADER
        assert len(rows) == tiny_spec.n_params
        assert sum(int(r["vulnerable"]) for r in rows) == s.vulnerable_count

    def test_metric_blob_is_upper_triangle(self, tmp_path, tiny_spec, tiny_weights, blobs):
        gt = assemble_metric(tiny_spec, tiny_weights, blobs)
        write_metric_blob(tmp_path / "metric.bin", gt)
        n = tiny_spec.n_params
        values = np.frombuffer((tmp_path / "metric.bin").read_bytes(), dtype="<f8")
        assert values.shape == (n * (n + 1) // 2,)
        assert values[0] == gt.g.entries[0, 0] and values[1] == gt.g.entries[0, 1]

    def test_trace_with_sidecar(self, tmp_path, tiny_spec, tiny_weights, blobs):
        plan = DamagePlan.from_indices([0, 1])
        trace = trace_path(tiny_spec, blobs, blobs, naive_linear_path(tiny_weights, plan, 3), kind="naive_linear")
        csv_path, meta_path = write_trace(tmp_path / "trace.csv", trace, plan=plan, seeds={"seed": 4})
        rows = read_rows(csv_path)
        assert list(rows[0]) == TRACE_HEADER
        assert [float(r["t"]) for r in rows] == [0.0, 0.5, 1.0]
        meta = json.loads(meta_path.read_text())
        assert meta["kind"] == "naive_linear" and meta["samples"] == 3
        assert meta["plan"]["indices"] == [0, 1]
        assert meta["seeds"] == {"seed": 4}


class TestSchemas:
    def test_every_report_has_a_schema(self):
        schemas = json_schemas()
        for name in ("checkpoint_manifest", "damage_plan", "spectrum_summary", "trace_metadata", "recovery_summary", "comparison_report", "run_manifest"):
            assert name in schemas
            assert schemas[name]["type"] == "object"

    @pytest.mark.parametrize("name", sorted(json_schemas()))
    def test_shipped_schema_matches_model(self, name):
        shipped = json.loads((SHIPPED_SCHEMAS / f"{name}.schema.json").read_text(encoding="utf-8"))
        generated = json_schemas()[name]
        assert shipped["title"] == generated["title"]
        assert set(shipped["properties"]) == set(generated["properties"])
        assert set(shipped.get("required", [])) == set(generated.get("required", []))

    def test_no_stale_schema_files(self):
        assert {p.name for p in SHIPPED_SCHEMAS.glob("*.schema.json")} == {f"{n}.schema.json" for n in json_schemas()}
