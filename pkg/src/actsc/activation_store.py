"""Activation-dump and sample-pool file formats.

Two dataset encodings are supported:

* JSONL: first line is ``{"manifest": {...}}``, then one record object per
  line. Human-inspectable, used for interchange with the extractor.
* Packed binary: magic ``ACTSCDMP``, version byte ``0x01``, little-endian
  ``u32 neuron_count``, ``u32 record_count``, then per record a
  ``u16`` id length + UTF-8 id, ``i8`` difficulty (-1 = absent), ``u16``
  gold-answer length + UTF-8 (length 0 = absent), and ``neuron_count``
  little-endian IEEE-754 float32 activations. The packed layout carries no
  manifest strings; name/source_model/layer_spec come back empty.

Activations are stored as float32 (matching typical model dumps); all
engine arithmetic downstream is float64. Loaders are pure functions and
loaded records are immutable, so datasets are safe to share across threads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError

MAGIC = b"ACTSCDMP"
VERSION = 0x01

DIFFICULTY_LEVELS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class ActivationRecord:
    """One problem's id, optional difficulty label, and activation vector."""

    problem_id: str
    activations: np.ndarray
    difficulty: int | None = None
    gold_answer: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.activations, dtype=np.float32)
        if arr.ndim != 1:
            raise DatasetFormatError(
                f"record '{self.problem_id}': activations must be a 1-D vector"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "activations", arr)
        # empty-string answers are unrepresentable in the packed format
        if self.gold_answer == "":
            object.__setattr__(self, "gold_answer", None)
        if not self.problem_id:
            raise DatasetFormatError("record with empty problem_id")
        if self.difficulty is not None and self.difficulty not in DIFFICULTY_LEVELS:
            raise DatasetFormatError(
                f"record '{self.problem_id}': difficulty {self.difficulty!r} not in 1..5"
            )
        if not np.all(np.isfinite(arr)):
            raise DatasetFormatError(
                f"record '{self.problem_id}': non-finite activation value"
            )


@dataclass(frozen=True)
class DatasetManifest:
    """Dataset-level metadata; neuron_count pins the vector length for every record."""

    name: str
    neuron_count: int
    record_count: int
    source_model: str = ""
    layer_spec: str = ""

    def __post_init__(self):
        if self.neuron_count <= 0:
            raise DatasetFormatError("manifest: neuron_count must be > 0")
        if self.record_count < 0:
            raise DatasetFormatError("manifest: record_count must be >= 0")


@dataclass(frozen=True)
class SamplePool:
    """Pre-generated answers per problem, used by the replay sampler.

    ``samples[pid]`` is an ordered list of (answer, input_tokens,
    output_tokens) tuples; replay serves them in this order.
    """

    gold_answers: dict[str, str] = field(default_factory=dict)
    samples: dict[str, list[tuple[str, int, int]]] = field(default_factory=dict)

    @property
    def problem_ids(self) -> list[str]:
        return list(self.samples.keys())


def _validate_records(manifest: DatasetManifest, records: list[ActivationRecord]) -> None:
    if manifest.record_count != len(records):
        raise DatasetFormatError(
            f"manifest record_count {manifest.record_count} != {len(records)} records"
        )
    seen: set[str] = set()
    for rec in records:
        if rec.problem_id in seen:
            raise DatasetFormatError(f"duplicate problem_id '{rec.problem_id}'")
        seen.add(rec.problem_id)
        if rec.activations.shape[0] != manifest.neuron_count:
            raise DatasetFormatError(
                f"record '{rec.problem_id}': {rec.activations.shape[0]} activations, "
                f"expected neuron_count {manifest.neuron_count}"
            )


def _record_from_obj(obj: dict, line_no: int) -> ActivationRecord:
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"line {line_no}: expected a JSON object")
    try:
        problem_id = obj["problem_id"]
        activations = obj["activations"]
    except KeyError as exc:
        raise DatasetFormatError(f"line {line_no}: missing field {exc}") from None
    if not isinstance(problem_id, str):
        raise DatasetFormatError(f"line {line_no}: problem_id must be a string")
    if not isinstance(activations, list):
        raise DatasetFormatError(f"line {line_no}: activations must be a list")
    difficulty = obj.get("difficulty")
    if difficulty is not None and not isinstance(difficulty, int):
        raise DatasetFormatError(f"line {line_no}: difficulty must be an integer or null")
    gold = obj.get("gold_answer")
    if gold is not None and not isinstance(gold, str):
        raise DatasetFormatError(f"line {line_no}: gold_answer must be a string or null")
    for v in activations:
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DatasetFormatError(
                f"line {line_no}: non-finite or non-numeric activation in '{problem_id}'"
            )
    return ActivationRecord(
        problem_id=problem_id,
        activations=np.asarray(activations, dtype=np.float32),
        difficulty=difficulty,
        gold_answer=gold,
    )


def _load_jsonl(path: Path) -> tuple[DatasetManifest, list[ActivationRecord]]:
    records: list[ActivationRecord] = []
    manifest: DatasetManifest | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            if line_no == 1 or (manifest is None and "manifest" in obj):
                if "manifest" not in obj:
                    raise DatasetFormatError("line 1: first line must be the manifest object")
                m = obj["manifest"]
                try:
                    manifest = DatasetManifest(
                        name=m.get("name", ""),
                        neuron_count=int(m["neuron_count"]),
                        record_count=int(m["record_count"]),
                        source_model=m.get("source_model", ""),
                        layer_spec=m.get("layer_spec", ""),
                    )
                except KeyError as exc:
                    raise DatasetFormatError(f"line 1: manifest missing field {exc}") from None
                continue
            records.append(_record_from_obj(obj, line_no))
    if manifest is None:
        raise DatasetFormatError("missing manifest line")
    return manifest, records


def _load_packed(path: Path) -> tuple[DatasetManifest, list[ActivationRecord]]:
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 1 + 8:
        raise DatasetFormatError("packed file truncated before header")
    if data[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic bytes, not a packed activation dump")
    if data[len(MAGIC)] != VERSION:
        raise DatasetFormatError(f"unsupported packed version {data[len(MAGIC)]}")
    off = len(MAGIC) + 1
    neuron_count, record_count = struct.unpack_from("<II", data, off)
    off += 8
    if neuron_count == 0:
        raise DatasetFormatError("manifest: neuron_count must be > 0")
    records: list[ActivationRecord] = []
    for i in range(record_count):
        try:
            (id_len,) = struct.unpack_from("<H", data, off)
            off += 2
            problem_id = data[off : off + id_len].decode("utf-8")
            off += id_len
            (diff_raw,) = struct.unpack_from("<b", data, off)
            off += 1
            (gold_len,) = struct.unpack_from("<H", data, off)
            off += 2
            gold = data[off : off + gold_len].decode("utf-8") if gold_len else None
            off += gold_len
            vec = np.frombuffer(data, dtype="<f4", count=neuron_count, offset=off)
            if vec.shape[0] != neuron_count:
                raise struct.error("short read")
            off += 4 * neuron_count
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise DatasetFormatError(f"packed record {i}: truncated or corrupt ({exc})") from exc
        records.append(
            ActivationRecord(
                problem_id=problem_id,
                activations=vec,
                difficulty=None if diff_raw == -1 else int(diff_raw),
                gold_answer=gold,
            )
        )
    if off != len(data):
        raise DatasetFormatError(f"{len(data) - off} trailing bytes after last record")
    manifest = DatasetManifest(name="", neuron_count=neuron_count, record_count=record_count)
    return manifest, records


def load_dataset(path: str | Path, format: str = "jsonl") -> tuple[DatasetManifest, list[ActivationRecord]]:
    """Load and validate an activation dump.

    Raises DatasetFormatError on parse failure, dimension mismatch, or any
    record-invariant violation; the message names the offending line or
    problem_id.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"no such file: {path}")
    if format == "jsonl":
        manifest, records = _load_jsonl(path)
    elif format == "packed":
        manifest, records = _load_packed(path)
    else:
        raise DatasetFormatError(f"unknown format '{format}' (expected jsonl or packed)")
    _validate_records(manifest, records)
    return manifest, records


def save_dataset(
    manifest: DatasetManifest,
    records: list[ActivationRecord],
    path: str | Path,
    format: str = "jsonl",
) -> None:
    """Write a validated dump; load_dataset(save_dataset(x)) round-trips.

    Activation values survive bit-identically in packed format; in JSONL
    the float32 values are printed exactly (shortest round-trip repr of the
    widened double), so the round-trip is also exact.
    """
    manifest = replace(manifest, record_count=len(records))
    _validate_records(manifest, records)
    path = Path(path)
    if format == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "manifest": {
                    "name": manifest.name,
                    "neuron_count": manifest.neuron_count,
                    "record_count": manifest.record_count,
                    "source_model": manifest.source_model,
                    "layer_spec": manifest.layer_spec,
                }
            }, sort_keys=True) + "\n")
            for rec in records:
                obj: dict = {
                    "problem_id": rec.problem_id,
                    "activations": [float(v) for v in rec.activations],
                }
                if rec.difficulty is not None:
                    obj["difficulty"] = rec.difficulty
                if rec.gold_answer is not None:
                    obj["gold_answer"] = rec.gold_answer
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
    elif format == "packed":
        chunks = [MAGIC, bytes([VERSION]), struct.pack("<II", manifest.neuron_count, len(records))]
        for rec in records:
            ident = rec.problem_id.encode("utf-8")
            gold = (rec.gold_answer or "").encode("utf-8")
            if len(ident) > 0xFFFF or len(gold) > 0xFFFF:
                raise DatasetFormatError(f"record '{rec.problem_id}': id/gold too long for packed format")
            chunks.append(struct.pack("<H", len(ident)))
            chunks.append(ident)
            chunks.append(struct.pack("<b", -1 if rec.difficulty is None else rec.difficulty))
            chunks.append(struct.pack("<H", len(gold)))
            chunks.append(gold)
            chunks.append(rec.activations.astype("<f4").tobytes())
        path.write_bytes(b"".join(chunks))
    else:
        raise DatasetFormatError(f"unknown format '{format}' (expected jsonl or packed)")


def load_sample_pool(path: str | Path) -> SamplePool:
    """Load a JSONL sample pool: one problem per line with gold answer and samples."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"no such file: {path}")
    gold_answers: dict[str, str] = {}
    samples: dict[str, list[tuple[str, int, int]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            try:
                pid = obj["problem_id"]
                gold = obj["gold_answer"]
                entries = obj["samples"]
            except KeyError as exc:
                raise DatasetFormatError(f"line {line_no}: missing field {exc}") from None
            if pid in samples:
                raise DatasetFormatError(f"line {line_no}: duplicate problem_id '{pid}'")
            if not isinstance(entries, list) or not entries:
                raise DatasetFormatError(
                    f"line {line_no}: problem '{pid}' must list at least one sample"
                )
            parsed: list[tuple[str, int, int]] = []
            for j, s in enumerate(entries):
                try:
                    answer, tin, tout = s["answer"], s["input_tokens"], s["output_tokens"]
                except (KeyError, TypeError):
                    raise DatasetFormatError(
                        f"line {line_no}: sample {j} of '{pid}' missing answer/input_tokens/output_tokens"
                    ) from None
                if not isinstance(tin, int) or not isinstance(tout, int) or tin < 0 or tout < 0:
                    raise DatasetFormatError(
                        f"line {line_no}: sample {j} of '{pid}' has negative or non-integer token count"
                    )
                parsed.append((str(answer), tin, tout))
            gold_answers[pid] = str(gold)
            samples[pid] = parsed
    return SamplePool(gold_answers=gold_answers, samples=samples)


def save_sample_pool(pool: SamplePool, path: str | Path) -> None:
    """Write a sample pool in the JSONL format load_sample_pool reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for pid, entries in pool.samples.items():
            if not entries:
                raise DatasetFormatError(f"problem '{pid}' has an empty samples list")
            obj = {
                "problem_id": pid,
                "gold_answer": pool.gold_answers.get(pid, ""),
                "samples": [
                    {"answer": a, "input_tokens": tin, "output_tokens": tout}
                    for a, tin, tout in entries
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
