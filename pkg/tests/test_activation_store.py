import json
import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsc.activation_store import (
    MAGIC,
    ActivationRecord,
    DatasetManifest,
    SamplePool,
    load_dataset,
    load_sample_pool,
    save_dataset,
    save_sample_pool,
)
from actsc.errors import DatasetFormatError

from conftest import make_records


def _dataset(n_records=3, neurons=4, seed=0):
    rng = np.random.default_rng(seed)
    acts = rng.normal(size=(n_records, neurons))
    records = make_records(acts, difficulties=[1 + i % 5 for i in range(n_records)])
    manifest = DatasetManifest(
        name="toy", neuron_count=neurons, record_count=n_records,
        source_model="test-model", layer_spec="ffn.last",
    )
    return manifest, records


class TestRecordInvariants:
    def test_difficulty_out_of_range(self):
        with pytest.raises(DatasetFormatError, match="difficulty"):
            ActivationRecord("p", np.zeros(3), difficulty=6)

    def test_non_finite_rejected(self):
        with pytest.raises(DatasetFormatError, match="non-finite"):
            ActivationRecord("p", np.array([1.0, np.nan]))
        with pytest.raises(DatasetFormatError, match="non-finite"):
            ActivationRecord("p", np.array([np.inf, 0.0]))

    def test_activations_immutable(self):
        rec = ActivationRecord("p", np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            rec.activations[0] = 5.0

    def test_empty_gold_answer_normalized_to_absent(self):
        assert ActivationRecord("p", np.zeros(2), gold_answer="").gold_answer is None


class TestJsonl:
    def test_round_trip(self, tmp_path):
        manifest, records = _dataset()
        path = tmp_path / "d.jsonl"
        save_dataset(manifest, records, path, "jsonl")
        m2, r2 = load_dataset(path, "jsonl")
        assert m2 == manifest
        assert [r.problem_id for r in r2] == [r.problem_id for r in records]
        assert [r.difficulty for r in r2] == [r.difficulty for r in records]
        for a, b in zip(records, r2):
            # float32 prints exactly as its double value, so jsonl is bit-exact
            np.testing.assert_array_equal(a.activations, b.activations)

    def test_three_records_header(self, tmp_path):
        manifest, records = _dataset(n_records=3, neurons=4)
        path = tmp_path / "d.jsonl"
        save_dataset(manifest, records, path, "jsonl")
        m2, r2 = load_dataset(path, "jsonl")
        assert m2.record_count == 3 and m2.neuron_count == 4 and len(r2) == 3

    def test_empty_dataset(self, tmp_path):
        manifest = DatasetManifest(name="empty", neuron_count=4, record_count=0)
        path = tmp_path / "d.jsonl"
        save_dataset(manifest, [], path, "jsonl")
        m2, r2 = load_dataset(path, "jsonl")
        assert m2.record_count == 0 and r2 == []

    def test_dimension_mismatch_names_problem(self, tmp_path):
        path = tmp_path / "d.jsonl"
        lines = [
            json.dumps({"manifest": {"name": "x", "neuron_count": 4, "record_count": 1}}),
            json.dumps({"problem_id": "odd-one", "activations": [0.0] * 5}),
        ]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="odd-one"):
            load_dataset(path, "jsonl")

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"manifest": {"name":"x","neuron_count":2,"record_count":1}}\n{oops\n')
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(path, "jsonl")

    def test_missing_manifest(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps({"problem_id": "p", "activations": [0.0]}) + "\n")
        with pytest.raises(DatasetFormatError, match="manifest"):
            load_dataset(path, "jsonl")

    def test_record_count_mismatch(self, tmp_path):
        path = tmp_path / "d.jsonl"
        lines = [
            json.dumps({"manifest": {"name": "x", "neuron_count": 2, "record_count": 2}}),
            json.dumps({"problem_id": "p", "activations": [0.0, 1.0]}),
        ]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="record_count"):
            load_dataset(path, "jsonl")

    def test_duplicate_problem_id(self, tmp_path):
        path = tmp_path / "d.jsonl"
        rec = json.dumps({"problem_id": "p", "activations": [0.0, 1.0]})
        lines = [json.dumps({"manifest": {"name": "x", "neuron_count": 2, "record_count": 2}}), rec, rec]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="duplicate"):
            load_dataset(path, "jsonl")

    def test_non_finite_value_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        lines = [
            json.dumps({"manifest": {"name": "x", "neuron_count": 1, "record_count": 1}}),
            '{"problem_id": "p", "activations": [NaN]}',
        ]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError):
            load_dataset(path, "jsonl")


class TestPacked:
    def test_round_trip_bit_identical(self, tmp_path):
        manifest, records = _dataset(n_records=2, neurons=6, seed=3)
        path = tmp_path / "d.bin"
        save_dataset(manifest, records, path, "packed")
        m2, r2 = load_dataset(path, "packed")
        assert m2.neuron_count == 6 and m2.record_count == 2
        for a, b in zip(records, r2):
            assert a.problem_id == b.problem_id
            assert a.difficulty == b.difficulty
            assert a.activations.tobytes() == b.activations.tobytes()

    def test_header_layout(self, tmp_path):
        manifest, records = _dataset(n_records=1, neurons=3)
        path = tmp_path / "d.bin"
        save_dataset(manifest, records, path, "packed")
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert raw[8] == 0x01
        assert struct.unpack_from("<II", raw, 9) == (3, 1)

    def test_absent_fields(self, tmp_path):
        manifest = DatasetManifest(name="", neuron_count=2, record_count=1)
        rec = ActivationRecord("p", np.array([0.5, -0.5]))
        path = tmp_path / "d.bin"
        save_dataset(manifest, [rec], path, "packed")
        _, r2 = load_dataset(path, "packed")
        assert r2[0].difficulty is None and r2[0].gold_answer is None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.bin"
        path.write_bytes(b"NOTMAGIC" + bytes(16))
        with pytest.raises(DatasetFormatError, match="magic"):
            load_dataset(path, "packed")

    def test_truncated(self, tmp_path):
        manifest, records = _dataset(n_records=2, neurons=4)
        path = tmp_path / "d.bin"
        save_dataset(manifest, records, path, "packed")
        (tmp_path / "t.bin").write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path / "t.bin", "packed")

    def test_trailing_garbage(self, tmp_path):
        manifest, records = _dataset(n_records=1, neurons=2)
        path = tmp_path / "d.bin"
        save_dataset(manifest, records, path, "packed")
        (tmp_path / "t.bin").write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DatasetFormatError, match="trailing"):
            load_dataset(tmp_path / "t.bin", "packed")


class TestFormatIndependence:
    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.lists(st.floats(-1e6, 1e6, allow_nan=False, width=32), min_size=3, max_size=3),
                st.sampled_from([None, 1, 2, 3, 4, 5]),
            ),
            min_size=1, max_size=6,
        )
    )
    def test_jsonl_equals_packed(self, items):
        rows = [row for row, _ in items]
        difficulties = [d for _, d in items]
        with tempfile.TemporaryDirectory() as tmpdir:
            tmp = Path(tmpdir)
            records = make_records(rows, difficulties=difficulties)
            manifest = DatasetManifest(name="h", neuron_count=3, record_count=len(rows))
            save_dataset(manifest, records, tmp / "d.jsonl", "jsonl")
            save_dataset(manifest, records, tmp / "d.bin", "packed")
            _, from_jsonl = load_dataset(tmp / "d.jsonl", "jsonl")
            _, from_packed = load_dataset(tmp / "d.bin", "packed")
        for a, b in zip(from_jsonl, from_packed):
            assert a.problem_id == b.problem_id
            assert a.difficulty == b.difficulty
            np.testing.assert_allclose(a.activations, b.activations, rtol=1e-9)

    def test_save_unwritable_path_raises(self, tmp_path):
        manifest, records = _dataset(n_records=1)
        with pytest.raises(OSError):
            save_dataset(manifest, records, tmp_path / "missing-dir" / "d.jsonl", "jsonl")


class TestSamplePool:
    def test_round_trip(self, tmp_path):
        pool = SamplePool(
            gold_answers={"q1": "42"},
            samples={"q1": [("42", 120, 350)]},
        )
        path = tmp_path / "pool.jsonl"
        save_sample_pool(pool, path)
        loaded = load_sample_pool(path)
        assert loaded.gold_answers == {"q1": "42"}
        assert loaded.samples == {"q1": [("42", 120, 350)]}

    def test_duplicate_problem_id(self, tmp_path):
        path = tmp_path / "pool.jsonl"
        line = json.dumps({"problem_id": "dup", "gold_answer": "A",
                           "samples": [{"answer": "A", "input_tokens": 1, "output_tokens": 2}]})
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(DatasetFormatError, match="dup"):
            load_sample_pool(path)

    def test_empty_samples_rejected(self, tmp_path):
        path = tmp_path / "pool.jsonl"
        path.write_text(json.dumps({"problem_id": "q", "gold_answer": "A", "samples": []}) + "\n")
        with pytest.raises(DatasetFormatError, match="at least one sample"):
            load_sample_pool(path)

    def test_negative_tokens_rejected(self, tmp_path):
        path = tmp_path / "pool.jsonl"
        path.write_text(json.dumps({
            "problem_id": "q", "gold_answer": "A",
            "samples": [{"answer": "A", "input_tokens": -1, "output_tokens": 2}],
        }) + "\n")
        with pytest.raises(DatasetFormatError, match="token count"):
            load_sample_pool(path)
