import json
import subprocess
import sys

import numpy as np
import pytest

from actsc_extractor.cli import main as cli_main
from actsc_extractor.extract import ExtractionConfig, ExtractionError, extract, load_prompts


def run_extract(model_dir, prompts, out, **kw):
    return extract(ExtractionConfig(
        model_id=model_dir, prompt_file=prompts, output=str(out), **kw
    ))


def read_dump(path):
    lines = [json.loads(l) for l in open(path, encoding="utf-8")]
    return lines[0]["manifest"], lines[1:]


class TestExtraction:
    def test_dump_shape_and_manifest(self, tiny_model_dir, prompts_file, tmp_path):
        summary = run_extract(tiny_model_dir, prompts_file, tmp_path / "dump.jsonl")
        assert summary["records"] == 12
        assert summary["neuron_count"] == 24  # n_inner of the tiny model
        manifest, records = read_dump(tmp_path / "dump.jsonl")
        assert manifest["record_count"] == 12
        assert manifest["neuron_count"] == 24
        assert manifest["source_model"] == tiny_model_dir
        assert all(len(r["activations"]) == 24 for r in records)
        assert records[0]["difficulty"] == 1 and records[1]["difficulty"] == 5

    def test_validates_under_primary_cli(self, tiny_model_dir, prompts_file, tmp_path):
        """The dump must pass the consumer's own format validation."""
        run_extract(tiny_model_dir, prompts_file, tmp_path / "dump.jsonl")
        proc = subprocess.run(
            [sys.executable, "-m", "actsc.cli", "validate",
             "--dataset", str(tmp_path / "dump.jsonl"), "--format", "jsonl"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "12 records x 24 neurons" in proc.stdout

    def test_forward_pass_deterministic(self, tiny_model_dir, tmp_path):
        prompts = tmp_path / "p.jsonl"
        with open(prompts, "w") as fh:
            fh.write(json.dumps({"problem_id": "a", "question": "what is 2 + 3 ?"}) + "\n")
            fh.write(json.dumps({"problem_id": "b", "question": "what is 2 + 3 ?"}) + "\n")
        run_extract(tiny_model_dir, str(prompts), tmp_path / "d.jsonl")
        _, records = read_dump(tmp_path / "d.jsonl")
        assert records[0]["activations"] == records[1]["activations"]

    def test_repeat_extraction_byte_identical(self, tiny_model_dir, prompts_file, tmp_path):
        run_extract(tiny_model_dir, prompts_file, tmp_path / "a.jsonl")
        run_extract(tiny_model_dir, prompts_file, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_batch_size_does_not_change_vectors(self, tiny_model_dir, prompts_file, tmp_path):
        run_extract(tiny_model_dir, prompts_file, tmp_path / "a.jsonl", batch_size=1)
        run_extract(tiny_model_dir, prompts_file, tmp_path / "b.jsonl", batch_size=5)
        _, ra = read_dump(tmp_path / "a.jsonl")
        _, rb = read_dump(tmp_path / "b.jsonl")
        for a, b in zip(ra, rb):
            np.testing.assert_allclose(a["activations"], b["activations"], atol=1e-5)

    def test_all_layers_concatenate(self, tiny_model_dir, prompts_file, tmp_path):
        summary = run_extract(tiny_model_dir, prompts_file, tmp_path / "d.jsonl",
                              layer_selector="all")
        assert summary["neuron_count"] == 48  # 2 blocks x 24
        assert summary["layers"] == [0, 1]

    def test_explicit_layer_index(self, tiny_model_dir, prompts_file, tmp_path):
        summary = run_extract(tiny_model_dir, prompts_file, tmp_path / "d.jsonl",
                              layer_selector="0")
        assert summary["layers"] == [0]

    def test_layer_out_of_range(self, tiny_model_dir, prompts_file, tmp_path):
        with pytest.raises(ExtractionError, match="out of range"):
            run_extract(tiny_model_dir, prompts_file, tmp_path / "d.jsonl",
                        layer_selector="7")

    def test_bad_model_path(self, prompts_file, tmp_path):
        with pytest.raises(ExtractionError, match="could not load model"):
            run_extract("/no/such/model", prompts_file, tmp_path / "d.jsonl")

    def test_duplicate_prompt_ids_rejected(self, tmp_path):
        prompts = tmp_path / "p.jsonl"
        line = json.dumps({"problem_id": "a", "question": "x"})
        prompts.write_text(line + "\n" + line + "\n")
        with pytest.raises(ExtractionError, match="duplicate"):
            load_prompts(prompts)


class TestEndToEndWithPrimary:
    def test_probe_trains_on_extracted_dump(self, tiny_model_dir, prompts_file, tmp_path):
        """Extractor smoke: dump -> dsn-identify -> probe-train -> calibrate-tau
        through the primary package's CLI, error-free."""
        dump = tmp_path / "dump.jsonl"
        run_extract(tiny_model_dir, prompts_file, dump)

        def actsc(*args):
            proc = subprocess.run(
                [sys.executable, "-m", "actsc.cli", *args],
                capture_output=True, text=True,
            )
            assert proc.returncode == 0, proc.stdout + proc.stderr
            return proc.stdout

        actsc("validate", "--dataset", str(dump))
        actsc("dsn-identify", "--dataset", str(dump), "--out", str(tmp_path / "dsn.json"))
        actsc("probe-train", "--dataset", str(dump), "--dsn", str(tmp_path / "dsn.json"),
              "--epochs", "200", "--out", str(tmp_path / "probe.json"))
        out = actsc("probe-eval", "--probe", str(tmp_path / "probe.json"),
                    "--dataset", str(dump))
        assert "accuracy" in out
        out = actsc("calibrate-tau", "--probe", str(tmp_path / "probe.json"),
                    "--dataset", str(dump))
        assert "tau" in out


class TestCli:
    def test_cli_happy_path(self, tiny_model_dir, prompts_file, tmp_path, capsys):
        rc = cli_main([
            "--model", tiny_model_dir, "--layer", "last",
            "--prompts", prompts_file, "--out", str(tmp_path / "d.jsonl"),
        ])
        assert rc == 0
        assert "12 records x 24 neurons" in capsys.readouterr().out

    def test_cli_error_exit_code(self, prompts_file, tmp_path, capsys):
        rc = cli_main([
            "--model", "/no/such/model", "--prompts", prompts_file,
            "--out", str(tmp_path / "d.jsonl"),
        ])
        assert rc == 1
        assert "error" in capsys.readouterr().err
