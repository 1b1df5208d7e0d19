"""Forward-pass FFN activation capture.

For each prompt, runs the model once (no generation) and records the
post-nonlinearity hidden vector of the selected feed-forward block(s) at
the last input token. Capture uses a forward pre-hook on the FFN's
projection-back layer, whose input is exactly the post-nonlinearity
intermediate for both vanilla (fc -> act -> proj) and gated
(act(gate) * up -> down) MLP variants.

Output is the activation-dump JSONL format: a manifest line followed by
one record per prompt. Model weights are never updated and no tokens are
generated, so a dump costs one forward pass per prompt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch


class ExtractionError(Exception):
    pass


# (container path, block-list attribute) pairs for common decoder layouts
_BLOCK_PATHS = (
    ("transformer", "h"),          # gpt2-style
    ("model", "layers"),           # llama/qwen-style
    ("gpt_neox", "layers"),
    ("model", "decoder", "layers"),
)
_MLP_NAMES = ("mlp", "feed_forward", "ffn")
_PROJ_NAMES = ("c_proj", "down_proj", "fc2", "dense_4h_to_h", "fc_out", "w2", "out_proj")


@dataclass(frozen=True)
class ExtractionConfig:
    model_id: str
    prompt_file: str
    output: str
    layer_selector: str = "last"   # "last", "all", or a 0-based layer index
    batch_size: int = 8
    device: str = "cpu"
    dataset_name: str = ""

    def __post_init__(self):
        if self.batch_size < 1:
            raise ExtractionError("batch_size must be >= 1")


def _find_blocks(model) -> list:
    for path in _BLOCK_PATHS:
        node = model
        for attr in path:
            node = getattr(node, attr, None)
            if node is None:
                break
        if node is not None and len(list(node)) > 0:
            return list(node)
    raise ExtractionError(
        f"could not locate decoder blocks in model of type {type(model).__name__}"
    )


def _find_projection(block):
    mlp = None
    for name in _MLP_NAMES:
        mlp = getattr(block, name, None)
        if mlp is not None:
            break
    if mlp is None:
        raise ExtractionError(f"no feed-forward submodule on block {type(block).__name__}")
    for name in _PROJ_NAMES:
        proj = getattr(mlp, name, None)
        if proj is not None:
            return proj
    raise ExtractionError(
        f"no projection-back layer found on {type(mlp).__name__} (looked for {_PROJ_NAMES})"
    )


def resolve_layers(model, layer_selector: str) -> list[int]:
    """Map the selector to block indices; errors name the valid range."""
    blocks = _find_blocks(model)
    n = len(blocks)
    if layer_selector == "last":
        return [n - 1]
    if layer_selector == "all":
        return list(range(n))
    try:
        idx = int(layer_selector)
    except ValueError:
        raise ExtractionError(
            f"layer_selector '{layer_selector}' is not 'last', 'all', or an integer"
        ) from None
    if not (0 <= idx < n):
        raise ExtractionError(f"layer {idx} out of range: model has {n} blocks (0..{n - 1})")
    return [idx]


def load_prompts(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ExtractionError(f"no such file: {path}")
    prompts = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pid, question = obj["problem_id"], obj["question"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ExtractionError(f"line {line_no}: bad prompt record ({exc})") from exc
            if pid in seen:
                raise ExtractionError(f"line {line_no}: duplicate problem_id '{pid}'")
            seen.add(pid)
            prompts.append({
                "problem_id": pid,
                "question": question,
                "difficulty": obj.get("difficulty"),
                "gold_answer": obj.get("gold_answer"),
            })
    if not prompts:
        raise ExtractionError(f"{path}: no prompts")
    return prompts


def _load_model(config: ExtractionConfig):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(config.model_id)
        model = AutoModelForCausalLM.from_pretrained(config.model_id)
    except Exception as exc:
        raise ExtractionError(f"could not load model '{config.model_id}': {exc}") from exc
    if tokenizer.pad_token is None:
        tokenizer.pad_token = tokenizer.eos_token or tokenizer.unk_token
    tokenizer.padding_side = "right"
    model.eval()
    model.to(config.device)
    return tokenizer, model


def _capture_batch(model, encoded, projections) -> np.ndarray:
    """One forward pass; returns (batch, sum of intermediate widths) float32."""
    captured: dict[int, torch.Tensor] = {}
    handles = []
    for i, proj in enumerate(projections):
        handles.append(proj.register_forward_pre_hook(
            lambda module, args, _i=i: captured.__setitem__(_i, args[0].detach())
        ))
    try:
        with torch.no_grad():
            model(**encoded)
    finally:
        for h in handles:
            h.remove()
    if len(captured) != len(projections):
        raise ExtractionError("a selected layer did not run; wrong capture point")
    last_idx = encoded["attention_mask"].sum(dim=1) - 1  # right padding
    rows = []
    for i in range(len(projections)):
        acts = captured[i]  # (batch, seq, intermediate)
        batch_rows = acts[torch.arange(acts.shape[0]), last_idx]
        rows.append(batch_rows.to(torch.float32).cpu().numpy())
    return np.concatenate(rows, axis=1)


def extract(config: ExtractionConfig) -> dict:
    """Run the capture and write the dump; returns a small summary dict."""
    prompts = load_prompts(config.prompt_file)
    tokenizer, model = _load_model(config)
    layers = resolve_layers(model, config.layer_selector)
    blocks = _find_blocks(model)
    projections = [_find_projection(blocks[i]) for i in layers]

    vectors = []
    try:
        for start in range(0, len(prompts), config.batch_size):
            batch = prompts[start : start + config.batch_size]
            encoded = tokenizer(
                [p["question"] for p in batch],
                return_tensors="pt",
                padding=True,
                truncation=True,
            ).to(config.device)
            vectors.append(_capture_batch(model, encoded, projections))
    except torch.cuda.OutOfMemoryError as exc:
        raise ExtractionError(
            f"out of memory at batch_size={config.batch_size}; retry with a smaller --batch-size"
        ) from exc
    activations = np.concatenate(vectors, axis=0)
    if not np.isfinite(activations).all():
        raise ExtractionError("model produced non-finite activations")

    neuron_count = activations.shape[1]
    layer_spec = f"{config.layer_selector} -> blocks {layers} (pre-projection FFN hidden)"
    name = config.dataset_name or Path(config.prompt_file).stem
    out = Path(config.output)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"manifest": {
            "name": name,
            "neuron_count": neuron_count,
            "record_count": len(prompts),
            "source_model": config.model_id,
            "layer_spec": layer_spec,
        }}, sort_keys=True) + "\n")
        for p, row in zip(prompts, activations):
            obj = {
                "problem_id": p["problem_id"],
                "activations": [float(v) for v in row.astype(np.float32)],
            }
            if p["difficulty"] is not None:
                obj["difficulty"] = p["difficulty"]
            if p["gold_answer"] is not None:
                obj["gold_answer"] = p["gold_answer"]
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    return {
        "records": len(prompts),
        "neuron_count": neuron_count,
        "layers": layers,
        "output": str(out),
    }
