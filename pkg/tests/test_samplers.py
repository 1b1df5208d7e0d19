import json

import httpx
import numpy as np
import pytest
from scipy import stats

from actsc.activation_store import SamplePool
from actsc.errors import ConfigError, DatasetFormatError, PoolExhaustedError, SamplerError
from actsc.samplers import (
    NO_ANSWER,
    AnswerSample,
    LiveSampler,
    LiveSamplerConfig,
    ReplaySampler,
    SimProblemSpec,
    SimSampler,
    extract_final_answer,
    load_sim_specs,
    save_sim_specs,
)

from conftest import scripted_pool


class TestExtractFinalAnswer:
    def test_boxed_single(self):
        assert extract_final_answer("... the answer is \\boxed{42}.", "boxed") == "42"

    def test_boxed_last_of_two(self):
        text = "first \\boxed{1} then finally \\boxed{2}"
        assert extract_final_answer(text, "boxed") == "2"

    def test_boxed_nested_braces(self):
        assert extract_final_answer("\\boxed{\\frac{1}{2}}", "boxed") == "\\frac{1}{2}"

    def test_boxed_missing_gives_sentinel(self):
        assert extract_final_answer("no marker here", "boxed") == NO_ANSWER

    def test_boxed_whitespace_collapsed(self):
        assert extract_final_answer("\\boxed{ 1 +   1 }", "boxed") == "1 + 1"

    def test_final_answer_line(self):
        assert extract_final_answer("thinking...\nFinal Answer: 7\n", "final-answer-line") == "7"

    def test_final_answer_last_marker_wins(self):
        text = "Final Answer: 1\nwait...\nfinal answer: 2"
        assert extract_final_answer(text, "final-answer-line") == "2"

    def test_final_answer_empty_gives_sentinel(self):
        assert extract_final_answer("Final Answer: \n", "final-answer-line") == NO_ANSWER

    def test_unknown_pattern(self):
        with pytest.raises(ConfigError):
            extract_final_answer("x", "regex42")


def spec(pid="q1", dist=(("A", 1.0),), gold="A", tin=100, tout=300):
    return SimProblemSpec(
        problem_id=pid, gold_answer=gold, answer_distribution=tuple(dist),
        mean_input_tokens=tin, mean_output_tokens=tout,
    )


class TestSimSpecValidation:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ConfigError, match="sum"):
            spec(dist=(("A", 0.5), ("B", 0.4)))

    def test_needs_an_outcome(self):
        with pytest.raises(ConfigError):
            spec(dist=())

    def test_round_trip(self, tmp_path):
        specs = [spec("a"), spec("b", dist=(("X", 0.5), ("Y", 0.5)), gold="X")]
        save_sim_specs(specs, tmp_path / "specs.jsonl")
        loaded = load_sim_specs(tmp_path / "specs.jsonl")
        assert set(loaded) == {"a", "b"}
        assert loaded["b"].answer_distribution == (("X", 0.5), ("Y", 0.5))

    def test_duplicate_rejected(self, tmp_path):
        save_sim_specs([spec("a")], tmp_path / "s.jsonl")
        doubled = (tmp_path / "s.jsonl").read_text() * 2
        (tmp_path / "d.jsonl").write_text(doubled)
        with pytest.raises(DatasetFormatError, match="duplicate"):
            load_sim_specs(tmp_path / "d.jsonl")


class TestSimSampler:
    def test_degenerate_distribution(self):
        sampler = SimSampler({"q1": spec()}, seed=0)
        out = sampler.draw("q1", 5)
        assert [s.answer for s in out] == ["A"] * 5

    def test_unknown_problem(self):
        with pytest.raises(SamplerError, match="unknown"):
            SimSampler({}, seed=0).draw("nope", 1)

    def test_same_seed_same_stream(self):
        specs = {"q1": spec(dist=(("A", 0.5), ("B", 0.5)))}
        a = SimSampler(specs, seed=9).draw("q1", 50)
        b = SimSampler(specs, seed=9).draw("q1", 50)
        assert a == b

    def test_different_seed_different_stream(self):
        specs = {"q1": spec(dist=(("A", 0.5), ("B", 0.5)))}
        a = SimSampler(specs, seed=1).draw("q1", 50)
        b = SimSampler(specs, seed=2).draw("q1", 50)
        assert a != b

    def test_problem_order_independence(self):
        specs = {
            "q1": spec("q1", dist=(("A", 0.5), ("B", 0.5))),
            "q2": spec("q2", dist=(("A", 0.5), ("B", 0.5))),
        }
        s1 = SimSampler(specs, seed=3)
        first_q1 = s1.draw("q1", 20)
        s2 = SimSampler(specs, seed=3)
        s2.draw("q2", 7)  # touching q2 first must not disturb q1's stream
        assert s2.draw("q1", 20) == first_q1

    def test_chunking_independence(self):
        """draw(5)+draw(4) serves the same prefix as a single draw(9)."""
        specs = {"q1": spec(dist=(("A", 0.3), ("B", 0.3), ("C", 0.4)))}
        chunked = SimSampler(specs, seed=5)
        got = chunked.draw("q1", 5) + chunked.draw("q1", 4)
        whole = SimSampler(specs, seed=5).draw("q1", 9)
        assert got == whole

    def test_chunking_independence_across_buffer_growth(self):
        specs = {"q1": spec(dist=(("A", 0.5), ("B", 0.5)))}
        chunked = SimSampler(specs, seed=5)
        got = [chunked.draw("q1", 1)[0] for _ in range(200)]
        whole = SimSampler(specs, seed=5).draw("q1", 200)
        assert got == whole

    def test_empirical_frequency_two_outcomes(self):
        # 4-sigma band around 0.5 for n = 10^4
        sampler = SimSampler({"q1": spec(dist=(("A", 0.5), ("B", 0.5)))}, seed=1234)
        out = sampler.draw("q1", 10_000)
        freq = sum(1 for s in out if s.answer == "A") / len(out)
        assert 0.48 <= freq <= 0.52

    def test_chi_square_goodness_of_fit(self):
        probs = {"A": 0.1, "B": 0.2, "C": 0.3, "D": 0.4}
        sampler = SimSampler(
            {"q1": spec(dist=tuple(probs.items()))}, seed=77,
        )
        out = sampler.draw("q1", 100_000)
        observed = [sum(1 for s in out if s.answer == a) for a in probs]
        expected = [p * len(out) for p in probs.values()]
        _, p_value = stats.chisquare(observed, expected)
        assert p_value > 0.001

    def test_token_accounting_exact(self):
        sampler = SimSampler({"q1": spec(tin=120, tout=350)}, seed=0)
        out = sampler.draw("q1", 100)
        assert all(s.input_tokens >= 0 and s.output_tokens >= 0 for s in out)
        total = sum(s.total_tokens for s in out)
        assert total == sum(s.input_tokens for s in out) + sum(s.output_tokens for s in out)
        # Poisson jitter centers on the configured means
        assert np.mean([s.input_tokens for s in out]) == pytest.approx(120, rel=0.15)
        assert np.mean([s.output_tokens for s in out]) == pytest.approx(350, rel=0.15)

    def test_gold_answer_lookup(self):
        sampler = SimSampler({"q1": spec(gold="A")}, seed=0)
        assert sampler.gold_answer("q1") == "A"
        assert sampler.gold_answer("nope") is None


class TestReplaySampler:
    def test_pool_order_and_exhaustion(self):
        pool = scripted_pool({"q1": ["A", "B"]})
        sampler = ReplaySampler(pool)
        assert [s.answer for s in sampler.draw("q1", 2)] == ["A", "B"]
        with pytest.raises(PoolExhaustedError, match="q1"):
            sampler.draw("q1", 1)

    def test_partial_then_exhausted(self):
        sampler = ReplaySampler(scripted_pool({"q1": ["A", "B", "C"]}))
        assert [s.answer for s in sampler.draw("q1", 2)] == ["A", "B"]
        assert [s.answer for s in sampler.draw("q1", 1)] == ["C"]
        with pytest.raises(PoolExhaustedError):
            sampler.draw("q1", 1)

    def test_unknown_problem(self):
        with pytest.raises(SamplerError, match="unknown"):
            ReplaySampler(scripted_pool({"q1": ["A"]})).draw("q2", 1)

    def test_full_run_reproducible(self):
        pool = scripted_pool({"q1": ["A", "B", "A"], "q2": ["C"]})
        a = [s.answer for s in ReplaySampler(pool).draw("q1", 3)]
        b = [s.answer for s in ReplaySampler(pool).draw("q1", 3)]
        assert a == b == ["A", "B", "A"]

    def test_token_fields_preserved(self):
        pool = SamplePool(gold_answers={"q": "A"}, samples={"q": [("A", 7, 13)]})
        out = ReplaySampler(pool).draw("q", 1)
        assert out[0] == AnswerSample("A", 7, 13)


def completion_response(contents, prompt_tokens=50, completion_tokens=None):
    n = len(contents)
    completion_tokens = completion_tokens if completion_tokens is not None else 10 * n
    return {
        "id": "x", "object": "chat.completion",
        "choices": [
            {"index": i, "message": {"role": "assistant", "content": c}, "finish_reason": "stop"}
            for i, c in enumerate(contents)
        ],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    }


def live_config(**kw):
    defaults = dict(endpoint_url="http://sampler.test", model_name="m", backoff_base=0.01)
    defaults.update(kw)
    return LiveSamplerConfig(**defaults)


class TestLiveSampler:
    def test_batch_draw_parses_usage(self):
        seen = {}

        def handler(request):
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=completion_response(
                ["\\boxed{1}", "\\boxed{2}", "\\boxed{1}"], prompt_tokens=100, completion_tokens=10,
            ))

        sampler = LiveSampler(live_config(), {"q": "what?"}, transport=httpx.MockTransport(handler))
        out = sampler.draw("q", 3)
        assert [s.answer for s in out] == ["1", "2", "1"]
        assert seen["body"]["n"] == 3
        assert seen["body"]["temperature"] == 0.7 and seen["body"]["top_p"] == 0.8
        # prompt attributed once, completion split with remainder at the front
        assert [s.input_tokens for s in out] == [100, 0, 0]
        assert [s.output_tokens for s in out] == [4, 3, 3]
        assert sum(s.total_tokens for s in out) == 110

    def test_sequential_mode(self):
        calls = []

        def handler(request):
            body = json.loads(request.content)
            calls.append(body["n"])
            return httpx.Response(200, json=completion_response([f"\\boxed{{{len(calls)}}}"]))

        sampler = LiveSampler(
            live_config(batch_n=False), {"q": "?"}, transport=httpx.MockTransport(handler)
        )
        out = sampler.draw("q", 3)
        assert calls == [1, 1, 1]
        assert [s.answer for s in out] == ["1", "2", "3"]

    def test_retry_then_success_with_backoff(self):
        attempts = []
        sleeps = []

        def handler(request):
            attempts.append(1)
            if len(attempts) < 3:
                return httpx.Response(500, text="boom")
            return httpx.Response(200, json=completion_response(["\\boxed{9}"]))

        sampler = LiveSampler(
            live_config(max_retries=3, backoff_base=0.5), {"q": "?"},
            transport=httpx.MockTransport(handler), sleep=sleeps.append,
        )
        out = sampler.draw("q", 1)
        assert out[0].answer == "9"
        assert len(attempts) == 3
        assert sleeps == [0.5, 1.0]  # exponential backoff

    def test_gives_up_after_max_retries(self):
        def handler(request):
            return httpx.Response(503, text="nope")

        sampler = LiveSampler(
            live_config(max_retries=2), {"q": "?"},
            transport=httpx.MockTransport(handler), sleep=lambda _: None,
        )
        with pytest.raises(SamplerError, match="after 3 attempts"):
            sampler.draw("q", 1)

    def test_client_error_is_not_retried(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            return httpx.Response(400, text="bad request")

        sampler = LiveSampler(
            live_config(max_retries=5), {"q": "?"},
            transport=httpx.MockTransport(handler), sleep=lambda _: None,
        )
        with pytest.raises(SamplerError, match="400"):
            sampler.draw("q", 1)
        assert len(attempts) == 1

    def test_transport_error_retried(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            if len(attempts) == 1:
                raise httpx.ConnectError("refused")
            return httpx.Response(200, json=completion_response(["\\boxed{3}"]))

        sampler = LiveSampler(
            live_config(), {"q": "?"}, transport=httpx.MockTransport(handler), sleep=lambda _: None
        )
        assert sampler.draw("q", 1)[0].answer == "3"
        assert len(attempts) == 2

    def test_unknown_problem(self):
        sampler = LiveSampler(live_config(), {}, transport=httpx.MockTransport(lambda r: None))
        with pytest.raises(SamplerError, match="no prompt"):
            sampler.draw("q", 1)

    def test_api_key_header(self, monkeypatch):
        monkeypatch.setenv("ACTSC_API_KEY", "sk-test")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=completion_response(["\\boxed{1}"]))

        sampler = LiveSampler(live_config(), {"q": "?"}, transport=httpx.MockTransport(handler))
        sampler.draw("q", 1)
        assert seen["auth"] == "Bearer sk-test"

    def test_no_answer_sentinel_on_unparseable(self):
        def handler(request):
            return httpx.Response(200, json=completion_response(["I give up"]))

        sampler = LiveSampler(live_config(), {"q": "?"}, transport=httpx.MockTransport(handler))
        assert sampler.draw("q", 1)[0].answer == NO_ANSWER

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            live_config(top_p=0.0)
        with pytest.raises(ConfigError):
            live_config(temperature=-1.0)
        with pytest.raises(ConfigError):
            live_config(answer_pattern="nope")
