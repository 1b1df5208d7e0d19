"""Command-line interface, implemented as a thin client of the service.

Every subcommand builds a request for the corresponding endpoint. Without
``--server`` the FastAPI app is mounted in-process (no socket), so the CLI
works standalone; with ``--server http://host:port`` the same requests go
to a running instance, in which case file paths are interpreted on the
server's filesystem.
"""

from __future__ import annotations

import json
import sys

import click
import httpx


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        # this environment's starlette warns about its own test client import
        warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _post(client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"{path}: {detail}")
    return resp.json()


server_option = click.option(
    "--server", envvar="ACTSC_SERVER", default=None,
    help="Base URL of a running service; default runs the app in-process.",
)


@click.group()
def main():
    """Difficulty-aware self-consistency toolkit."""


@main.command()
@click.option("--dataset", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "packed"]), default="jsonl")
@server_option
def validate(dataset, format_, server):
    """Validate an activation dump against the format invariants."""
    with _make_client(server) as client:
        out = _post(client, "/dataset/validate", {"dataset": dataset, "format": format_})
    click.echo(
        f"ok: {out['record_count']} records x {out['neuron_count']} neurons "
        f"({out['labeled_count']} labeled)"
        + (f", name '{out['name']}'" if out["name"] else "")
    )


@main.command("dsn-identify")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "packed"]), default="jsonl")
@click.option("--theta-easy", default=1, show_default=True)
@click.option("--theta-hard", default=5, show_default=True)
@click.option("--margin", default=0.0, show_default=True)
@click.option("--mode", type=click.Choice(["sign", "abs", "top_k"]), default="sign", show_default=True)
@click.option("--top-k", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@server_option
def dsn_identify(dataset, format_, theta_easy, theta_hard, margin, mode, top_k, out, server):
    """Select difficulty-sensitive neurons and write the selection JSON."""
    payload = {
        "dataset": dataset, "format": format_, "theta_easy": theta_easy,
        "theta_hard": theta_hard, "margin": margin, "mode": mode,
        "top_k": top_k, "out": out,
    }
    with _make_client(server) as client:
        res = _post(client, "/dsn/identify", payload)
    click.echo(
        f"selected {len(res['union_set'])} of {res['neuron_count']} neurons "
        f"(easy {len(res['easy_set'])}, hard {len(res['hard_set'])}) -> {out}"
    )


@main.command("probe-train")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "packed"]), default="jsonl")
@click.option("--dsn", required=True, type=click.Path())
@click.option("--lr", default=0.1, show_default=True)
@click.option("--epochs", default=500, show_default=True)
@click.option("--l2", default=0.0, show_default=True)
@click.option("--tol", default=1e-7, show_default=True)
@click.option("--theta-easy", default=1, show_default=True)
@click.option("--theta-hard", default=5, show_default=True)
@click.option("--out", required=True, type=click.Path())
@server_option
def probe_train(dataset, format_, dsn, lr, epochs, l2, tol, theta_easy, theta_hard, out, server):
    """Train the difficulty probe on a labeled dump."""
    payload = {
        "dataset": dataset, "format": format_, "dsn": dsn, "learning_rate": lr,
        "epochs": epochs, "l2": l2, "convergence_tol": tol,
        "theta_easy": theta_easy, "theta_hard": theta_hard, "out": out,
    }
    with _make_client(server) as client:
        res = _post(client, "/probe/train", payload)
    click.echo(
        f"trained on {res['n_train']} records x {res['n_features']} features: "
        f"loss {res['final_loss']:.6f} after {res['epochs_run']} epochs -> {out}"
    )


@main.command("probe-eval")
@click.option("--probe", required=True, type=click.Path())
@click.option("--dataset", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "packed"]), default="jsonl")
@click.option("--logits-out", default=None, type=click.Path())
@server_option
def probe_eval(probe, dataset, format_, logits_out, server):
    """Evaluate probe accuracy/BCE; optionally export per-problem logits as CSV."""
    payload = {"probe": probe, "dataset": dataset, "format": format_, "logits_out": logits_out}
    with _make_client(server) as client:
        res = _post(client, "/probe/eval", payload)
    line = f"accuracy {res['accuracy']:.4f}, mean BCE {res['mean_bce']:.6f} over {res['n']} records"
    if logits_out:
        line += f"; logits -> {logits_out}"
    click.echo(line)


@main.command("calibrate-tau")
@click.option("--probe", required=True, type=click.Path())
@click.option("--dataset", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "packed"]), default="jsonl")
@click.option("--out", default=None, type=click.Path())
@server_option
def calibrate_tau_cmd(probe, dataset, format_, out, server):
    """Compute the routing threshold as the dataset mean of P(hard)."""
    payload = {"probe": probe, "dataset": dataset, "format": format_, "out": out}
    with _make_client(server) as client:
        res = _post(client, "/calibrate/tau", payload)
    click.echo(f"tau = {res['tau']!r} over {res['n']} problems" + (f" -> {out}" if out else ""))


def _sampler_options(fn):
    opts = [
        click.option("--sampler", type=click.Choice(["sim", "replay", "live"]), required=True),
        click.option("--sim-spec", default=None, type=click.Path(), help="sim: problem spec JSONL"),
        click.option("--pool", default=None, type=click.Path(), help="replay: sample pool JSONL"),
        click.option("--prompts", default=None, type=click.Path(), help="live: prompts JSONL"),
        click.option("--endpoint", default=None, help="live: base URL of the chat-completions server"),
        click.option("--model", default=None, help="live: model name"),
        click.option("--temperature", default=0.7, show_default=True),
        click.option("--top-p", default=0.8, show_default=True),
        click.option("--max-output-tokens", default=2048, show_default=True),
        click.option("--request-timeout", default=120.0, show_default=True),
        click.option("--max-retries", default=3, show_default=True),
        click.option("--answer-pattern", type=click.Choice(["boxed", "final-answer-line"]), default="boxed", show_default=True),
        click.option("--live-config", default=None, type=click.Path(), help="live: TOML file with the flags above"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _controller_options(fn):
    opts = [
        click.option("--k-max", default=40, show_default=True),
        click.option("--ac-threshold", default=0.95, show_default=True),
        click.option("--ac-min-samples", default=2, show_default=True),
        click.option("--dsc-presamples", default=3, show_default=True),
        click.option("--dsc-threshold", default=0.95, show_default=True),
        click.option("--window", default=5, show_default=True, help="window size for esc and actsc"),
        click.option("--gamma", default=0.5, show_default=True),
        click.option("--conf-scope", type=click.Choice(["global", "window"]), default="global", show_default=True),
        click.option("--dataset", default=None, type=click.Path(), help="activation dump (needed for actsc)"),
        click.option("--dataset-format", type=click.Choice(["jsonl", "packed"]), default="jsonl"),
        click.option("--probe", default=None, type=click.Path()),
        click.option("--tau-file", default=None, type=click.Path()),
        click.option("--tau", default=None, type=float, help="fixed routing threshold override"),
        click.option("--seed", default=0, show_default=True),
        click.option("--workers", default=1, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _load_live_toml(path: str) -> dict:
    try:
        import tomllib  # py >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


_LIVE_KEYS = (
    "endpoint", "model", "prompts", "temperature", "top_p",
    "max_output_tokens", "request_timeout", "max_retries", "answer_pattern",
    "prompt_template", "batch_n",
)


def _sampler_payload(ctx, kind, sim_spec, pool, prompts, endpoint, model, temperature,
                     top_p, max_output_tokens, request_timeout, max_retries,
                     answer_pattern, live_config) -> dict:
    payload = {
        "kind": kind, "sim_spec": sim_spec, "pool": pool, "prompts": prompts,
        "endpoint": endpoint, "model": model, "temperature": temperature,
        "top_p": top_p, "max_output_tokens": max_output_tokens,
        "request_timeout": request_timeout, "max_retries": max_retries,
        "answer_pattern": answer_pattern,
    }
    if live_config:
        # TOML fills in whatever was not given explicitly on the command line
        doc = _load_live_toml(live_config)
        flag_names = {
            "endpoint": "endpoint", "model": "model", "prompts": "prompts",
            "temperature": "temperature", "top_p": "top_p",
            "max_output_tokens": "max_output_tokens",
            "request_timeout": "request_timeout", "max_retries": "max_retries",
            "answer_pattern": "answer_pattern",
        }
        for key in _LIVE_KEYS:
            if key not in doc:
                continue
            flag = flag_names.get(key)
            if flag is None or ctx.get_parameter_source(flag).name == "DEFAULT":
                payload[key] = doc[key]
    return payload


def _params_payload(k_max, ac_threshold, ac_min_samples, dsc_presamples, dsc_threshold,
                    window, gamma, conf_scope) -> dict:
    return {
        "k_max": k_max, "ac_threshold": ac_threshold, "ac_min_samples": ac_min_samples,
        "esc_window": window, "dsc_presamples": dsc_presamples,
        "dsc_threshold": dsc_threshold, "actsc_window": window,
        "actsc_gamma": gamma, "conf_scope": conf_scope,
    }


@main.command()
@click.option("--policy", type=click.Choice(["sc", "ac", "esc", "dsc", "actsc"]), required=True)
@_sampler_options
@_controller_options
@click.option("--trace-out", default=None, type=click.Path())
@server_option
@click.pass_context
def run(ctx, policy, sampler, sim_spec, pool, prompts, endpoint, model, temperature,
        top_p, max_output_tokens, request_timeout, max_retries, answer_pattern,
        live_config, k_max, ac_threshold, ac_min_samples, dsc_presamples, dsc_threshold,
        window, gamma, conf_scope, dataset, dataset_format, probe, tau_file, tau, seed,
        workers, trace_out, server):
    """Run one policy over a problem set and print its report."""
    payload = {
        "policy": policy,
        "sampler": _sampler_payload(ctx, sampler, sim_spec, pool, prompts, endpoint, model,
                                    temperature, top_p, max_output_tokens, request_timeout,
                                    max_retries, answer_pattern, live_config),
        "params": _params_payload(k_max, ac_threshold, ac_min_samples, dsc_presamples,
                                  dsc_threshold, window, gamma, conf_scope),
        "dataset": dataset, "dataset_format": dataset_format, "probe": probe,
        "tau_file": tau_file, "tau": tau, "seed": seed,
        "trace_out": trace_out, "max_workers": workers,
    }
    with _make_client(server) as client:
        res = _post(client, "/run", payload)
    report = dict(res["report"])
    report.pop("per_problem", None)
    click.echo(json.dumps(report, indent=1, sort_keys=True))
    if trace_out:
        click.echo(f"traces -> {trace_out}", err=True)


@main.command()
@click.option("--policies", default="sc,ac,esc,dsc,actsc", show_default=True,
              help="comma-separated subset of sc,ac,esc,dsc,actsc")
@_sampler_options
@_controller_options
@click.option("--trace-dir", default=None, type=click.Path())
@click.option("--report-out", default=None, type=click.Path())
@click.option("--format", "report_format", type=click.Choice(["text_table", "json", "csv"]),
              default="text_table", show_default=True)
@server_option
@click.pass_context
def compare(ctx, policies, sampler, sim_spec, pool, prompts, endpoint, model, temperature,
            top_p, max_output_tokens, request_timeout, max_retries, answer_pattern,
            live_config, k_max, ac_threshold, ac_min_samples, dsc_presamples, dsc_threshold,
            window, gamma, conf_scope, dataset, dataset_format, probe, tau_file, tau, seed,
            workers, trace_dir, report_out, report_format, server):
    """Run several policies over the same problem set and print the comparison table."""
    policy_list = [p.strip() for p in policies.split(",") if p.strip()]
    payload = {
        "policies": policy_list,
        "sampler": _sampler_payload(ctx, sampler, sim_spec, pool, prompts, endpoint, model,
                                    temperature, top_p, max_output_tokens, request_timeout,
                                    max_retries, answer_pattern, live_config),
        "params": _params_payload(k_max, ac_threshold, ac_min_samples, dsc_presamples,
                                  dsc_threshold, window, gamma, conf_scope),
        "dataset": dataset, "dataset_format": dataset_format, "probe": probe,
        "tau_file": tau_file, "tau": tau, "seed": seed,
        "trace_dir": trace_dir, "report_out": report_out,
        "report_format": report_format, "max_workers": workers,
    }
    with _make_client(server) as client:
        res = _post(client, "/compare", payload)
    click.echo(res["rendered"], nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8462, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
