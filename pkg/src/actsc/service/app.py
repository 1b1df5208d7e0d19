"""FastAPI service wrapping the core library.

Each endpoint is a thin adapter: parse the request model, call into the
core modules, write any requested artifacts, return a response model.
Domain errors surface as HTTP 422 with the original message.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..activation_store import ActivationRecord, load_dataset, load_sample_pool
from ..calibration import calibrate_tau, load_tau, save_tau
from ..controllers import ConfScope, Policy, PolicyConfig
from ..dsn import GapConfig, SelectionMode, identify_dsn, load_selection, save_selection
from ..errors import ActscError, ConfigError
from ..harness import (
    export_probe_logits,
    render_report,
    run_benchmark,
    write_traces,
)
from ..probe import (
    build_training_set,
    evaluate_probe,
    load_probe,
    make_labels,
    predict_p_hard,
    save_probe,
    train_probe,
    TrainConfig,
)
from ..samplers import (
    LiveSampler,
    LiveSamplerConfig,
    ReplaySampler,
    SimSampler,
    load_prompts,
    load_sim_specs,
    DEFAULT_PROMPT_TEMPLATE,
)
from . import schemas


def _policy_config(params: schemas.ControllerParams, tau: float | None) -> PolicyConfig:
    return PolicyConfig(
        k_max=params.k_max,
        ac_threshold=params.ac_threshold,
        ac_min_samples=params.ac_min_samples,
        esc_window=params.esc_window,
        dsc_presamples=params.dsc_presamples,
        dsc_threshold=params.dsc_threshold,
        actsc_window=params.actsc_window,
        actsc_gamma=params.actsc_gamma,
        tau=tau,
        conf_scope=ConfScope(params.conf_scope),
    )


def _build_source(spec: schemas.SamplerSpec, seed: int):
    """Problem ids, gold answers, and a fresh-sampler factory for one backend."""
    if spec.kind == "sim":
        if not spec.sim_spec:
            raise ConfigError("sim sampler needs sim_spec (path to a spec JSONL)")
        specs = load_sim_specs(spec.sim_spec)
        ids = sorted(specs)
        gold = {pid: s.gold_answer for pid, s in specs.items()}
        return ids, gold, lambda: SimSampler(specs, seed)
    if spec.kind == "replay":
        if not spec.pool:
            raise ConfigError("replay sampler needs pool (path to a sample-pool JSONL)")
        pool = load_sample_pool(spec.pool)
        ids = sorted(pool.samples)
        return ids, dict(pool.gold_answers), lambda: ReplaySampler(pool)
    # live
    if not (spec.endpoint and spec.model and spec.prompts):
        raise ConfigError("live sampler needs endpoint, model, and prompts")
    questions, gold = load_prompts(spec.prompts)
    config = LiveSamplerConfig(
        endpoint_url=spec.endpoint,
        model_name=spec.model,
        temperature=spec.temperature,
        top_p=spec.top_p,
        max_output_tokens=spec.max_output_tokens,
        request_timeout=spec.request_timeout,
        max_retries=spec.max_retries,
        prompt_template=spec.prompt_template or DEFAULT_PROMPT_TEMPLATE,
        answer_pattern=spec.answer_pattern,
        batch_n=spec.batch_n,
    )
    ids = sorted(questions)
    return ids, gold, lambda: LiveSampler(config, questions, gold)


def _resolve_routing(
    req: schemas.RunRequest | schemas.CompareRequest,
    problem_ids: list[str],
    needs_probe: bool,
) -> tuple[float | None, dict[str, float] | None, str]:
    """Load probe + activations and produce (tau, p_hard map, dataset name)."""
    if not needs_probe:
        return req.tau, None, ""
    if not req.probe:
        raise ConfigError("the probe-routed policy needs --probe")
    if not req.dataset:
        raise ConfigError("the probe-routed policy needs --dataset (activations for the problems)")
    model, _ = load_probe(req.probe)
    manifest, records = load_dataset(req.dataset, req.dataset_format)
    by_id: dict[str, ActivationRecord] = {r.problem_id: r for r in records}
    missing = [pid for pid in problem_ids if pid not in by_id]
    if missing:
        raise ConfigError(f"activation dataset lacks problems: {missing[:5]}")
    p_hard = {pid: predict_p_hard(model, by_id[pid].activations) for pid in problem_ids}
    if req.tau is not None:
        tau = req.tau
    elif req.tau_file:
        tau = load_tau(req.tau_file).tau
    else:
        tau = calibrate_tau(model, [by_id[pid] for pid in problem_ids], manifest.name).tau
    return tau, p_hard, manifest.name


def create_app() -> FastAPI:
    app = FastAPI(title="actsc", version=__version__)

    @app.exception_handler(ActscError)
    async def _domain_error(_: Request, exc: ActscError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/dataset/validate", response_model=schemas.ValidateResponse)
    def validate(req: schemas.ValidateRequest):
        manifest, records = load_dataset(req.dataset, req.format)
        return schemas.ValidateResponse(
            valid=True,
            name=manifest.name,
            neuron_count=manifest.neuron_count,
            record_count=manifest.record_count,
            labeled_count=sum(1 for r in records if r.difficulty is not None),
        )

    @app.post("/dsn/identify", response_model=schemas.DsnIdentifyResponse)
    def dsn_identify(req: schemas.DsnIdentifyRequest):
        manifest, records = load_dataset(req.dataset, req.format)
        config = GapConfig(
            theta_easy=req.theta_easy,
            theta_hard=req.theta_hard,
            margin=req.margin,
            selection_mode=SelectionMode(req.mode),
            top_k=req.top_k,
        )
        selection = identify_dsn(records, config)
        if req.out:
            save_selection(selection, config, req.out)
        return schemas.DsnIdentifyResponse(
            easy_set=list(selection.easy_set),
            hard_set=list(selection.hard_set),
            union_set=list(selection.union_set),
            neuron_count=manifest.neuron_count,
            out=req.out,
        )

    @app.post("/probe/train", response_model=schemas.ProbeTrainResponse)
    def probe_train(req: schemas.ProbeTrainRequest):
        _, records = load_dataset(req.dataset, req.format)
        selection, _ = load_selection(req.dsn)
        config = TrainConfig(
            learning_rate=req.learning_rate,
            epochs=req.epochs,
            l2=req.l2,
            convergence_tol=req.convergence_tol,
        )
        training_set = build_training_set(records, selection, req.theta_easy, req.theta_hard)
        model = train_probe(training_set, config)
        save_probe(model, req.out, config, req.theta_easy, req.theta_hard)
        return schemas.ProbeTrainResponse(
            final_loss=model.train_meta.final_loss,
            epochs_run=model.train_meta.epochs_run,
            n_train=training_set.features.shape[0],
            n_features=training_set.features.shape[1],
            out=req.out,
        )

    @app.post("/probe/eval", response_model=schemas.ProbeEvalResponse)
    def probe_eval(req: schemas.ProbeEvalRequest):
        model, config_echo = load_probe(req.probe)
        _, records = load_dataset(req.dataset, req.format)
        theta_easy = int(config_echo.get("theta_easy", 1))
        theta_hard = int(config_echo.get("theta_hard", 5))
        kept, labels = make_labels(records, theta_easy, theta_hard)
        result = evaluate_probe(model, kept, labels)
        if req.logits_out:
            export_probe_logits(model, records, req.logits_out)
        return schemas.ProbeEvalResponse(
            accuracy=result.accuracy,
            mean_bce=result.mean_bce,
            n=len(kept),
            logits_out=req.logits_out,
        )

    @app.post("/calibrate/tau", response_model=schemas.CalibrateTauResponse)
    def calibrate(req: schemas.CalibrateTauRequest):
        model, _ = load_probe(req.probe)
        manifest, records = load_dataset(req.dataset, req.format)
        calibration = calibrate_tau(model, records, manifest.name)
        if req.out:
            save_tau(calibration, req.out)
        return schemas.CalibrateTauResponse(
            tau=calibration.tau,
            n=calibration.n,
            dataset_name=calibration.dataset_name,
            out=req.out,
        )

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        policy = Policy(req.policy)
        problem_ids, gold, factory = _build_source(req.sampler, req.seed)
        tau, p_hard, dataset_name = _resolve_routing(req, problem_ids, policy == Policy.ACTSC)
        config = _policy_config(req.params, tau)
        results = run_benchmark(
            problem_ids, gold, factory, [policy], config,
            p_hard=p_hard, dataset=dataset_name or req.sampler.kind,
            max_workers=req.max_workers,
        )
        report, traces = results[policy]
        if req.trace_out:
            write_traces(traces, req.trace_out)
        return schemas.RunResponse(report=report.to_dict(), trace_out=req.trace_out)

    @app.post("/compare", response_model=schemas.CompareResponse)
    def compare(req: schemas.CompareRequest):
        policies = [Policy(p) for p in req.policies]
        if not policies:
            raise ConfigError("compare needs at least one policy")
        problem_ids, gold, factory = _build_source(req.sampler, req.seed)
        tau, p_hard, dataset_name = _resolve_routing(req, problem_ids, Policy.ACTSC in policies)
        config = _policy_config(req.params, tau)
        results = run_benchmark(
            problem_ids, gold, factory, policies, config,
            p_hard=p_hard, dataset=dataset_name or req.sampler.kind,
            max_workers=req.max_workers,
        )
        trace_outs: dict[str, str] = {}
        if req.trace_dir:
            Path(req.trace_dir).mkdir(parents=True, exist_ok=True)
            for policy in policies:
                path = str(Path(req.trace_dir) / f"traces_{policy.value}.jsonl")
                write_traces(results[policy][1], path)
                trace_outs[policy.value] = path
        reports = [results[p][0] for p in policies]
        rendered = render_report(reports, req.report_format)
        if req.report_out:
            Path(req.report_out).write_text(rendered, encoding="utf-8")
        return schemas.CompareResponse(
            reports=[r.to_dict() for r in reports],
            rendered=rendered,
            report_out=req.report_out,
            trace_outs=trace_outs,
        )

    @app.post("/probe/export-logits", response_model=schemas.ExportLogitsResponse)
    def export_logits(req: schemas.ExportLogitsRequest):
        model, _ = load_probe(req.probe)
        _, records = load_dataset(req.dataset, req.format)
        export_probe_logits(model, records, req.out)
        return schemas.ExportLogitsResponse(n=len(records), out=req.out)

    return app


app = create_app()
