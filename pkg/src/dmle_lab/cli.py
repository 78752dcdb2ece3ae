"""Command-line client for the experiment service.

The CLI never runs experiments itself: `run` and `verify` submit jobs to
the service API and poll for completion. Without --server it drives an
in-process app instance over the same request/response path, so no
separately started server is needed; `serve` starts a network instance.

Exit codes: 0 success, 1 usage error, 2 run failure, 3 verification failure.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import click

from . import __version__
from .data import DATASET_NAMES
from .verification import SUITES

REQUEST_FIELDS = (
    "dataset", "acquisition", "selection", "estimator", "k", "beta", "cycles",
    "seeds", "base_seed", "epochs_per_cycle", "exact_z", "ssrs_smooth",
    "out_dir", "workers", "timings_in_curve", "bald_samples", "hidden_dims",
    "dataset_size", "dataset_seed", "data_dir", "arcs_n", "arcs_noise")


class ClientError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class ServiceClient:
    """Thin HTTP client; in-process ASGI transport unless --server is given."""

    def __init__(self, server: str | None = None):
        if server:
            import httpx
            self._http = httpx.Client(base_url=server, timeout=120.0)
        else:
            import warnings
            with warnings.catch_warnings():
                # starlette 1.3 deprecates its httpx-backed test transport
                # (custom warning category); it remains the supported
                # in-process path for this stack
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient
            from .service import create_app
            self._http = TestClient(create_app())

    def _request(self, method: str, path: str, payload=None) -> dict:
        try:
            response = self._http.request(method, path, json=payload)
        except Exception as exc:
            raise ClientError(f"cannot reach service: {exc}", 2)
        if response.status_code == 422:
            detail = response.json().get("detail", response.text)
            raise ClientError(f"invalid request: {detail}", 1)
        if response.status_code >= 400:
            raise ClientError(f"service error {response.status_code}: "
                              f"{response.text}", 2)
        return response.json()

    def run_job(self, path: str, payload: dict, poll_s: float = 0.2) -> dict:
        job = self._request("POST", path, payload)
        while True:
            status = self._request("GET", f"/jobs/{job['job_id']}")
            if status["status"] in ("done", "failed"):
                return status
            time.sleep(poll_s)


def _load_config_file(path: str) -> dict:
    """Flat key=value lines, or a JSON mirror of the flags."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        loaded = json.loads(text)
        if not isinstance(loaded, dict):
            raise click.UsageError(f"{path}: JSON config must be an object")
        return loaded
    values: dict = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip()
        if raw.lower() in ("true", "false"):
            values[key] = raw.lower() == "true"
        else:
            try:
                values[key] = int(raw)
            except ValueError:
                try:
                    values[key] = float(raw)
                except ValueError:
                    values[key] = raw
    return values


def _merge_request(ctx: click.Context, flags: dict, config_path: str | None) -> dict:
    file_values = _load_config_file(config_path) if config_path else {}
    unknown = set(file_values) - set(REQUEST_FIELDS)
    if unknown:
        raise click.UsageError(
            f"unknown config keys {sorted(unknown)}; valid: {sorted(REQUEST_FIELDS)}")
    request = {}
    for name in REQUEST_FIELDS:
        source = ctx.get_parameter_source(name)
        explicit = source is not None and source.name == "COMMANDLINE"
        if explicit or name not in file_values:
            request[name] = flags[name]
        else:
            request[name] = file_values[name]
    # the environment variable wins over both, per the output-dir contract
    env_out = os.environ.get("DMLE_LAB_OUT")
    if env_out:
        request["out_dir"] = env_out
    if request["hidden_dims"] is not None and isinstance(request["hidden_dims"], str):
        request["hidden_dims"] = [int(v) for v in request["hidden_dims"].split(",") if v]
    return request


def _validate_dataset_flag(value: str) -> str:
    if value.startswith("csv:") or value in DATASET_NAMES[:-1]:
        return value
    raise click.UsageError(
        f"invalid --dataset {value!r}: valid values are "
        f"{', '.join(DATASET_NAMES[:-1])} or csv:<path>")


@click.group()
@click.version_option(__version__)
def cli():
    """Active-learning experiments: dependency-aware vs independent MLE."""


@cli.command("run")
@click.option("--dataset", default="two-arcs", show_default=True,
              help="iris | mnist | digits | two-arcs | csv:<path>")
@click.option("--acquisition", default="entropy", show_default=True,
              type=click.Choice(["entropy", "bald", "least_confidence", "coreset"]))
@click.option("--selection", default="ssms", show_default=True,
              type=click.Choice(["topk", "ssms", "sps", "ssrs"]))
@click.option("--estimator", default="both", show_default=True,
              type=click.Choice(["imle", "dmle", "both"]))
@click.option("--k", default=1, show_default=True, type=int)
@click.option("--beta", default=1.0, show_default=True, type=float)
@click.option("--cycles", default=10, show_default=True, type=int)
@click.option("--seeds", default=8, show_default=True, type=int)
@click.option("--base-seed", default=0, show_default=True, type=int)
@click.option("--epochs-per-cycle", default=30, show_default=True, type=int)
@click.option("--exact-z", is_flag=True, default=False)
@click.option("--ssrs-smooth", is_flag=True, default=False)
@click.option("--out-dir", default="out", show_default=True)
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--timings-in-curve", is_flag=True, default=False,
              help="Fill wall-clock cells in curve.csv (breaks byte-identity).")
@click.option("--bald-samples", default=10, show_default=True, type=int)
@click.option("--hidden-dims", default=None,
              help="Comma-separated hidden layer sizes, e.g. 32,16.")
@click.option("--dataset-size", default=None, type=int,
              help="Subsample the source to this many samples.")
@click.option("--dataset-seed", default=0, show_default=True, type=int)
@click.option("--data-dir", default=None, help="Directory with mnist IDX files.")
@click.option("--arcs-n", default=1000, show_default=True, type=int)
@click.option("--arcs-noise", default=0.15, show_default=True, type=float)
@click.option("--config", "config_path", default=None,
              help="key=value or JSON file mirroring these flags.")
@click.option("--server", default=None, help="Remote service URL.")
@click.pass_context
def run_cmd(ctx, config_path, server, **flags):
    """Run a DMLE/IMLE experiment matrix across seeds."""
    flags["dataset"] = _validate_dataset_flag(flags["dataset"])
    request = _merge_request(ctx, flags, config_path)
    client = ServiceClient(server)
    job = client.run_job("/matrices", request)
    if job["status"] == "failed":
        raise ClientError(f"matrix job failed: {job['error']}", 2)
    result = job["result"]
    for cell in result["cells"]:
        acc = cell["final_test_acc"]
        acc_text = f"acc={acc:.4f}" if acc is not None else f"error={cell['error']}"
        click.echo(f"{cell['status']:>7}  {cell['estimator']:<4} seed {cell['seed']:<3} "
                   f"{acc_text}  {cell['dir']}")
    comparison = result.get("comparison")
    if comparison:
        click.echo(f"paired comparison over seeds {comparison['seeds']}: "
                   f"mean gap {comparison['mean_gap']:+.4f}, "
                   f"W={comparison['w_statistic']:g}, p={comparison['p_value']:.4g}")
    click.echo(f"outputs in {result['out_dir']}/{result['group']}")
    if result["failed"]:
        raise ClientError("one or more cells failed", 2)


@cli.command("verify")
@click.argument("suite", type=click.Choice(list(SUITES)))
@click.option("--out-dir", default="out", show_default=True)
@click.option("--server", default=None, help="Remote service URL.")
def verify_cmd(suite, out_dir, server):
    """Run a verification suite and print its report."""
    out_dir = os.environ.get("DMLE_LAB_OUT") or out_dir
    client = ServiceClient(server)
    job = client.run_job("/verify", {"suite": suite, "out_dir": out_dir})
    if job["status"] == "failed":
        raise ClientError(f"verification job failed: {job['error']}", 3)
    click.echo(job["result"]["text"], nl=False)
    if not job["result"]["passed"]:
        raise ClientError("verification failed", 3)


@cli.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
def serve_cmd(host, port):
    """Start the experiment service."""
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except ClientError as exc:
        click.echo(f"error: {exc.message}", err=True)
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
