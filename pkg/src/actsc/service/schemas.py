"""Pydantic request/response models for the service endpoints.

File-path fields refer to the filesystem of the machine the service runs
on; the bundled CLI runs the app in-process by default, so paths resolve
locally there.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Format = Literal["jsonl", "packed"]


class HealthResponse(BaseModel):
    status: str
    version: str


class ValidateRequest(BaseModel):
    dataset: str
    format: Format = "jsonl"


class ValidateResponse(BaseModel):
    valid: bool
    name: str
    neuron_count: int
    record_count: int
    labeled_count: int


class DsnIdentifyRequest(BaseModel):
    dataset: str
    format: Format = "jsonl"
    theta_easy: int = 1
    theta_hard: int = 5
    margin: float = 0.0
    mode: Literal["sign", "abs", "top_k"] = "sign"
    top_k: Optional[int] = None
    out: Optional[str] = None


class DsnIdentifyResponse(BaseModel):
    easy_set: list[int]
    hard_set: list[int]
    union_set: list[int]
    neuron_count: int
    out: Optional[str] = None


class ProbeTrainRequest(BaseModel):
    dataset: str
    format: Format = "jsonl"
    dsn: str = Field(description="path to a dsn.json produced by /dsn/identify")
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 0.0
    convergence_tol: float = 1e-7
    theta_easy: int = 1
    theta_hard: int = 5
    out: str


class ProbeTrainResponse(BaseModel):
    final_loss: float
    epochs_run: int
    n_train: int
    n_features: int
    out: str


class ProbeEvalRequest(BaseModel):
    probe: str
    dataset: str
    format: Format = "jsonl"
    logits_out: Optional[str] = None


class ProbeEvalResponse(BaseModel):
    accuracy: float
    mean_bce: float
    n: int
    logits_out: Optional[str] = None


class CalibrateTauRequest(BaseModel):
    probe: str
    dataset: str
    format: Format = "jsonl"
    out: Optional[str] = None


class CalibrateTauResponse(BaseModel):
    tau: float
    n: int
    dataset_name: str
    out: Optional[str] = None


class SamplerSpec(BaseModel):
    """Which answer source a run uses and how to construct it."""

    kind: Literal["sim", "replay", "live"]
    sim_spec: Optional[str] = None
    pool: Optional[str] = None
    prompts: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    temperature: float = 0.7
    top_p: float = 0.8
    max_output_tokens: int = 2048
    request_timeout: float = 120.0
    max_retries: int = 3
    prompt_template: Optional[str] = None
    answer_pattern: Literal["boxed", "final-answer-line"] = "boxed"
    batch_n: bool = True


class ControllerParams(BaseModel):
    k_max: int = 40
    ac_threshold: float = 0.95
    ac_min_samples: int = 2
    esc_window: int = 5
    dsc_presamples: int = 3
    dsc_threshold: float = 0.95
    actsc_window: int = 5
    actsc_gamma: float = 0.50
    conf_scope: Literal["global", "window"] = "global"


class RunRequest(BaseModel):
    policy: Literal["sc", "ac", "esc", "dsc", "actsc"]
    sampler: SamplerSpec
    params: ControllerParams = ControllerParams()
    dataset: Optional[str] = None
    dataset_format: Format = "jsonl"
    probe: Optional[str] = None
    tau_file: Optional[str] = None
    tau: Optional[float] = None
    seed: int = 0
    trace_out: Optional[str] = None
    max_workers: int = 1


class RunResponse(BaseModel):
    report: dict
    trace_out: Optional[str] = None


class CompareRequest(BaseModel):
    policies: list[Literal["sc", "ac", "esc", "dsc", "actsc"]]
    sampler: SamplerSpec
    params: ControllerParams = ControllerParams()
    dataset: Optional[str] = None
    dataset_format: Format = "jsonl"
    probe: Optional[str] = None
    tau_file: Optional[str] = None
    tau: Optional[float] = None
    seed: int = 0
    trace_dir: Optional[str] = None
    report_out: Optional[str] = None
    report_format: Literal["text_table", "json", "csv"] = "text_table"
    max_workers: int = 1


class CompareResponse(BaseModel):
    reports: list[dict]
    rendered: str
    report_out: Optional[str] = None
    trace_outs: dict[str, str] = {}


class ExportLogitsRequest(BaseModel):
    probe: str
    dataset: str
    format: Format = "jsonl"
    out: str


class ExportLogitsResponse(BaseModel):
    n: int
    out: str
