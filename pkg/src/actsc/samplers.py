"""Answer sources feeding the sampling-budget controllers.

Three backends share one interface: ``draw(problem_id, count)`` returns
exactly ``count`` answer samples with token counts.

* ``SimSampler`` draws from per-problem categorical answer distributions.
  Each problem's stream is seeded from (global_seed, sha256(problem_id)),
  so results do not depend on the order problems are visited, and the
  stream is materialized in fixed power-of-two chunks so the sequence does
  not depend on how a controller batches its draws. Two samplers built with
  the same seed serve identical streams, which is what makes policy
  comparisons paired.
* ``ReplaySampler`` serves pre-generated samples from a pool, in pool
  order; exhausting a problem's pool is an error.
* ``LiveSampler`` speaks the OpenAI-compatible ``POST /v1/chat/completions``
  protocol with retries and exponential backoff; token counts come from the
  response ``usage`` fields.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .activation_store import SamplePool
from .errors import ConfigError, DatasetFormatError, PoolExhaustedError, SamplerError

NO_ANSWER = "<no-answer>"

ANSWER_PATTERNS = ("boxed", "final-answer-line")

API_KEY_ENV = "ACTSC_API_KEY"

DEFAULT_PROMPT_TEMPLATE = (
    "Solve the following problem. Reason step by step, then give the final "
    "answer inside \\boxed{{}}.\n\n{question}"
)


@dataclass(frozen=True)
class AnswerSample:
    """One canonicalized final answer and the tokens spent producing it."""

    answer: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self):
        if not self.answer:
            object.__setattr__(self, "answer", NO_ANSWER)
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ConfigError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens


def _canonicalize(text: str) -> str:
    return " ".join(text.split())


def _last_boxed_content(text: str) -> str | None:
    start = text.rfind("\\boxed{")
    if start == -1:
        return None
    depth = 0
    for i in range(start + len("\\boxed"), len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start + len("\\boxed{") : i]
    return None  # unbalanced braces


_FINAL_ANSWER_RE = re.compile(r"final answer:[ \t]*(.*)", re.IGNORECASE)


def extract_final_answer(text: str, pattern: str = "boxed") -> str:
    """Pull the final answer out of a raw completion.

    ``boxed`` takes the content of the last balanced ``\\boxed{...}``;
    ``final-answer-line`` takes the rest of the line after the last
    "Final Answer:" marker. The result is whitespace-collapsed; when no
    match is found the sentinel answer is returned.
    """
    if pattern == "boxed":
        content = _last_boxed_content(text)
    elif pattern == "final-answer-line":
        matches = _FINAL_ANSWER_RE.findall(text)
        content = matches[-1] if matches else None
    else:
        raise ConfigError(f"unknown answer pattern '{pattern}' (expected one of {ANSWER_PATTERNS})")
    if content is None:
        return NO_ANSWER
    content = _canonicalize(content)
    return content if content else NO_ANSWER


@dataclass(frozen=True)
class SimProblemSpec:
    """Categorical answer distribution plus token-count means for one problem."""

    problem_id: str
    gold_answer: str
    answer_distribution: tuple[tuple[str, float], ...]
    mean_input_tokens: int
    mean_output_tokens: int

    def __post_init__(self):
        if not self.answer_distribution:
            raise ConfigError(f"problem '{self.problem_id}': needs at least one outcome")
        total = math.fsum(p for _, p in self.answer_distribution)
        if any(not (0.0 <= p <= 1.0) for _, p in self.answer_distribution):
            raise ConfigError(f"problem '{self.problem_id}': probabilities must lie in [0, 1]")
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"problem '{self.problem_id}': probabilities sum to {total}, not 1")
        if self.mean_input_tokens <= 0 or self.mean_output_tokens <= 0:
            raise ConfigError(f"problem '{self.problem_id}': token means must be positive")


def load_sim_specs(path: str | Path) -> dict[str, SimProblemSpec]:
    """Load a JSONL file of simulation problem specs, keyed by problem_id."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"no such file: {path}")
    specs: dict[str, SimProblemSpec] = {}
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
                spec = SimProblemSpec(
                    problem_id=obj["problem_id"],
                    gold_answer=str(obj["gold_answer"]),
                    answer_distribution=tuple(
                        (str(a), float(p)) for a, p in obj["answer_distribution"]
                    ),
                    mean_input_tokens=int(obj["mean_input_tokens"]),
                    mean_output_tokens=int(obj["mean_output_tokens"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"line {line_no}: bad sim spec ({exc})") from exc
            if spec.problem_id in specs:
                raise DatasetFormatError(f"line {line_no}: duplicate problem_id '{spec.problem_id}'")
            specs[spec.problem_id] = spec
    return specs


def save_sim_specs(specs: Sequence[SimProblemSpec], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for spec in specs:
            obj = {
                "problem_id": spec.problem_id,
                "gold_answer": spec.gold_answer,
                "answer_distribution": [[a, p] for a, p in spec.answer_distribution],
                "mean_input_tokens": spec.mean_input_tokens,
                "mean_output_tokens": spec.mean_output_tokens,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


class Sampler:
    """Common interface for answer sources."""

    def draw(self, problem_id: str, count: int) -> list[AnswerSample]:
        raise NotImplementedError

    def gold_answer(self, problem_id: str) -> str | None:
        return None


def _problem_seed_words(problem_id: str) -> list[int]:
    digest = hashlib.sha256(problem_id.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class _SimStream:
    """Lazily materialized sample stream for one problem."""

    __slots__ = ("spec", "rng", "labels", "probs", "answers", "tokens_in", "tokens_out", "cursor")

    def __init__(self, spec: SimProblemSpec, seed: int):
        self.spec = spec
        seq = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *_problem_seed_words(spec.problem_id)])
        self.rng = np.random.default_rng(seq)
        self.labels = [a for a, _ in spec.answer_distribution]
        probs = np.asarray([p for _, p in spec.answer_distribution], dtype=np.float64)
        self.probs = probs / probs.sum()
        self.answers: list[str] = []
        self.tokens_in: list[int] = []
        self.tokens_out: list[int] = []
        self.cursor = 0

    def ensure(self, n: int) -> None:
        # extend in fixed power-of-two chunks so the stream is independent
        # of how draws are batched
        while len(self.answers) < n:
            target = max(64, 2 * len(self.answers))
            m = target - len(self.answers)
            picks = self.rng.choice(len(self.labels), size=m, p=self.probs)
            self.answers.extend(self.labels[i] for i in picks)
            self.tokens_in.extend(int(v) for v in self.rng.poisson(self.spec.mean_input_tokens, size=m))
            self.tokens_out.extend(int(v) for v in self.rng.poisson(self.spec.mean_output_tokens, size=m))

    def take(self, count: int) -> list[AnswerSample]:
        self.ensure(self.cursor + count)
        out = [
            AnswerSample(self.answers[i], self.tokens_in[i], self.tokens_out[i])
            for i in range(self.cursor, self.cursor + count)
        ]
        self.cursor += count
        return out


class SimSampler(Sampler):
    """Seeded categorical simulator with Poisson token jitter."""

    def __init__(self, specs: dict[str, SimProblemSpec], seed: int = 0):
        self.seed = seed
        self._streams = {pid: _SimStream(spec, seed) for pid, spec in specs.items()}

    def draw(self, problem_id: str, count: int) -> list[AnswerSample]:
        if count < 1:
            raise SamplerError("draw count must be >= 1")
        stream = self._streams.get(problem_id)
        if stream is None:
            raise SamplerError(f"unknown problem '{problem_id}'")
        return stream.take(count)

    def gold_answer(self, problem_id: str) -> str | None:
        stream = self._streams.get(problem_id)
        return stream.spec.gold_answer if stream else None


class ReplaySampler(Sampler):
    """Deterministic replay of a pre-generated sample pool, in pool order."""

    def __init__(self, pool: SamplePool):
        self.pool = pool
        self._cursors = {pid: 0 for pid in pool.samples}

    def draw(self, problem_id: str, count: int) -> list[AnswerSample]:
        if count < 1:
            raise SamplerError("draw count must be >= 1")
        entries = self.pool.samples.get(problem_id)
        if entries is None:
            raise SamplerError(f"unknown problem '{problem_id}'")
        cursor = self._cursors[problem_id]
        if cursor + count > len(entries):
            raise PoolExhaustedError(
                f"problem '{problem_id}': pool exhausted "
                f"({len(entries) - cursor} of {len(entries)} samples left, {count} requested)"
            )
        out = [AnswerSample(a, tin, tout) for a, tin, tout in entries[cursor : cursor + count]]
        self._cursors[problem_id] = cursor + count
        return out

    def gold_answer(self, problem_id: str) -> str | None:
        return self.pool.gold_answers.get(problem_id)


@dataclass(frozen=True)
class LiveSamplerConfig:
    """Connection and decoding settings for an OpenAI-compatible server."""

    endpoint_url: str
    model_name: str
    temperature: float = 0.7
    top_p: float = 0.8
    max_output_tokens: int = 2048
    request_timeout: float = 120.0
    max_retries: int = 3
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    answer_pattern: str = "boxed"
    batch_n: bool = True          # one request with n=count when True, else count single requests
    backoff_base: float = 0.5     # seconds; doubles per retry

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.answer_pattern not in ANSWER_PATTERNS:
            raise ConfigError(f"unknown answer pattern '{self.answer_pattern}'")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


class LiveSampler(Sampler):
    """Client for a chat-completions endpoint.

    Requests for one draw are issued in order and results keep request
    order. On transport errors and 429/5xx responses the request is retried
    with exponential backoff up to max_retries; a draw that cannot be
    completed raises after discarding any partial results, so controllers
    never observe a half-window.
    """

    def __init__(
        self,
        config: LiveSamplerConfig,
        questions: dict[str, str],
        gold_answers: dict[str, str] | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.questions = questions
        self.gold_answers = gold_answers or {}
        self._sleep = sleep
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.endpoint_url,
            timeout=config.request_timeout,
            headers=headers,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _post_completion(self, prompt: str, n: int) -> dict:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_output_tokens,
            "n": n,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/v1/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code == 200:
                return resp.json()
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = SamplerError(f"server returned {resp.status_code}: {resp.text[:200]}")
                continue
            raise SamplerError(f"server returned {resp.status_code}: {resp.text[:200]}")
        raise SamplerError(
            f"request failed after {self.config.max_retries + 1} attempts: {last_error}"
        )

    def _samples_from_response(self, payload: dict, n: int) -> list[AnswerSample]:
        choices = payload.get("choices", [])
        if len(choices) != n:
            raise SamplerError(f"server returned {len(choices)} choices, expected {n}")
        choices = sorted(choices, key=lambda c: c.get("index", 0))
        usage = payload.get("usage", {})
        prompt_tokens = int(usage.get("prompt_tokens", 0))
        completion_tokens = int(usage.get("completion_tokens", 0))
        # the prompt is processed once per request: attribute it to the first
        # sample; completion tokens are split evenly, remainder to the front
        base, rem = divmod(completion_tokens, n)
        samples = []
        for i, choice in enumerate(choices):
            content = (choice.get("message") or {}).get("content") or ""
            samples.append(
                AnswerSample(
                    answer=extract_final_answer(content, self.config.answer_pattern),
                    input_tokens=prompt_tokens if i == 0 else 0,
                    output_tokens=base + (1 if i < rem else 0),
                )
            )
        return samples

    def draw(self, problem_id: str, count: int) -> list[AnswerSample]:
        if count < 1:
            raise SamplerError("draw count must be >= 1")
        question = self.questions.get(problem_id)
        if question is None:
            raise SamplerError(f"unknown problem '{problem_id}' (no prompt text)")
        prompt = self.config.prompt_template.format(question=question)
        if self.config.batch_n:
            payload = self._post_completion(prompt, count)
            return self._samples_from_response(payload, count)
        samples: list[AnswerSample] = []
        for _ in range(count):
            payload = self._post_completion(prompt, 1)
            samples.extend(self._samples_from_response(payload, 1))
        return samples

    def gold_answer(self, problem_id: str) -> str | None:
        return self.gold_answers.get(problem_id)


def load_prompts(path: str | Path) -> tuple[dict[str, str], dict[str, str]]:
    """Load a prompts JSONL (problem_id, question, gold_answer?) for live runs.

    Returns (questions, gold_answers); gold answers may be missing.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"no such file: {path}")
    questions: dict[str, str] = {}
    gold: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pid, question = obj["problem_id"], obj["question"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetFormatError(f"line {line_no}: bad prompt record ({exc})") from exc
            if pid in questions:
                raise DatasetFormatError(f"line {line_no}: duplicate problem_id '{pid}'")
            questions[pid] = question
            if obj.get("gold_answer") is not None:
                gold[pid] = str(obj["gold_answer"])
    return questions, gold
