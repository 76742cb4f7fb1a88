"""Command-line client for the analysis service.

The CLI is a thin client: every command builds a request, sends it to the
service (an in-process instance by default, or ``--server URL``), and
writes the returned CSV/JSON artifacts. A run manifest capturing the exact
request is written next to the outputs, and ``--manifest`` replays one.
"""
from __future__ import annotations

import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import click

from .cost import VARIANTS


def _client(server: Optional[str]):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # in-process transport import chatter
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(server: Optional[str], path: str, payload: dict) -> dict:
    with _client(server) as c:
        resp = c.post(path, json=payload)
        if resp.status_code != 200:
            raise click.ClickException(f"service error {resp.status_code}: {resp.text[:500]}")
        return resp.json()


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_params(text: Optional[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        key, _, val = item.partition("=")
        if not val:
            raise click.UsageError(f"bad --params entry {item!r}, expected k=v")
        out[key.strip()] = int(val)
    return out


def _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab) -> dict:
    if cascade_file and builtin:
        raise click.UsageError("--cascade and --builtin are mutually exclusive")
    spec: dict = {"phase": phase, "merge": not no_merge, "merge_ab": merge_ab}
    if cascade_file:
        spec["source"] = Path(cascade_file).read_text()
    else:
        spec["builtin"] = builtin or "mamba1"
        spec["preset"] = "tiny" if tiny else preset
        spec["params"] = _parse_params(params)
    return spec


def _hw_spec(hw_file: Optional[str]) -> dict:
    if not hw_file:
        return {}
    return {"text": Path(hw_file).read_text()}


def _emit_diagnostics(diags: list[dict], as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps({"diagnostics": diags}, indent=2))
        return
    for d in diags:
        loc = f"einsum {d['einsum']}: " if d.get("einsum") is not None else ""
        pos = f"{d['line']}:{d['col']}: " if d.get("line") is not None else ""
        click.echo(f"{d['severity']}: {pos}{loc}{d['message']}")


def _finish(doc: dict, as_json: bool) -> None:
    _emit_diagnostics(doc.get("diagnostics", []), as_json=False)
    if not doc.get("ok", False):
        sys.exit(1)


def _write_manifest(out: Optional[str], command: str, payload: dict, seed: Optional[int] = None) -> None:
    if not out:
        return
    doc = {"command": command, "request": payload, "out": out}
    if seed is not None:
        doc["seed"] = seed
    _write_atomic(Path(out) / "run-manifest.json", json.dumps(doc, indent=2) + "\n")


def cascade_options(f):
    f = click.option("--builtin", default=None, help="builtin cascade name (mamba1)")(f)
    f = click.option("--cascade", "cascade_file", type=click.Path(exists=True), default=None,
                     help="cascade description file")(f)
    f = click.option("--preset", default=None, help="parameter preset: tiny, mamba-370m, mamba-2.8b")(f)
    f = click.option("--tiny", is_flag=True, help="shorthand for --preset tiny")(f)
    f = click.option("--params", default=None, help="comma-separated overrides, e.g. B=64,I=2048")(f)
    f = click.option("--phase", type=click.Choice(["prefill", "decode"]), default="prefill")(f)
    f = click.option("--no-merge", is_flag=True, help="skip shared-input merging")(f)
    f = click.option("--merge-ab", is_flag=True, help="also merge the discretization pair")(f)
    return f


def common_options(f):
    f = click.option("--server", default=None, help="remote service URL (default: in-process)")(f)
    f = click.option("--out", default=None, help="output directory")(f)
    f = click.option("--json", "as_json", is_flag=True, help="machine-readable output")(f)
    return f


@click.group()
def main() -> None:
    """Einsum-cascade fusion analysis toolkit."""


@main.command()
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--server", default=None)
def replay(manifest: str, server: Optional[str]) -> None:
    """Replay a recorded run manifest byte-identically."""
    doc = json.loads(Path(manifest).read_text())
    command, payload = doc["command"], doc["request"]
    out = doc.get("out")
    handler = _REPLAY_HANDLERS.get(command)
    if handler is None:
        raise click.UsageError(f"manifest command {command!r} not replayable")
    handler(payload, server, out, as_json=False)


@main.command()
@cascade_options
@common_options
def validate(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab, server, out, as_json) -> None:
    """Check a cascade against every structural invariant."""
    payload = {"cascade": _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab)}
    doc = _post(server, "/validate", payload)
    _write_manifest(out, "validate", payload)
    if as_json:
        click.echo(json.dumps(doc, indent=2))
        sys.exit(0 if doc["ok"] else 1)
    click.echo(f"einsums: {doc['einsums']}")
    _finish(doc, as_json)
    click.echo("OK")


def _do_stitch(payload: dict, server, out, as_json) -> None:
    doc = _post(server, "/stitch", payload)
    if not doc.get("ok"):
        _finish(doc, as_json)
    plan = doc["plan"]
    text = json.dumps(plan, indent=2) + "\n"
    if out:
        _write_atomic(Path(out) / f"fusion-plan-{doc['policy']}.json", text)
        payload2 = dict(payload)
        _write_manifest(out, "stitch", payload2)
    if as_json:
        click.echo(text)
    else:
        click.echo(f"policy: {doc['policy']}")
        click.echo(f"groups: {plan['group_count']}")
        for g in plan["groups"]:
            ids = ",".join(str(i) for i in g["einsums"])
            stat = ",".join(g["stationary"])
            click.echo(f"  group {g['id']}: einsums [{ids}] stationary [{stat}]")


@main.command()
@cascade_options
@common_options
@click.option("--policy", type=click.Choice(["unfused", "ri", "ri-rsb", "ri-rsb-rsp", "fully-fused"]), default="fully-fused")
def stitch(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab, server, out, as_json, policy) -> None:
    """Stitch the cascade into fusion groups under a policy."""
    payload = {
        "cascade": _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab),
        "policy": policy,
    }
    _do_stitch(payload, server, out, as_json)


def _do_lower(payload: dict, server, out, as_json) -> None:
    doc = _post(server, "/lower", payload)
    if not doc.get("ok"):
        _finish(doc, as_json)
    policy = payload.get("policy", "fully-fused")
    if out:
        _write_atomic(Path(out) / f"schedule-{policy}.txt", doc["pretty"])
        _write_atomic(Path(out) / f"schedule-{policy}.json", json.dumps(doc["nest"], indent=2) + "\n")
        _write_manifest(out, "lower", payload)
    if as_json:
        click.echo(json.dumps(doc["nest"], indent=2))
    else:
        click.echo(doc["pretty"], nl=False)


@main.command()
@cascade_options
@common_options
@click.option("--policy", type=click.Choice(["unfused", "ri", "ri-rsb", "ri-rsb-rsp", "fully-fused"]), default="fully-fused")
@click.option("--tiles", default=None, help="per-rank tile sizes, e.g. I=16,D=64")
def lower(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab, server, out, as_json, policy, tiles) -> None:
    """Lower the stitched groups to a loop-nest schedule."""
    payload = {
        "cascade": _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab),
        "policy": policy,
        "tiles": _parse_params(tiles),
    }
    _do_lower(payload, server, out, as_json)


def _do_run(payload: dict, server, out, as_json) -> None:
    doc = _post(server, "/run", payload)
    if not doc.get("ok"):
        _finish(doc, as_json)
    if out:
        _write_atomic(Path(out) / f"trace-{payload['policy']}.csv", doc["trace_csv"])
        _write_manifest(out, "run", payload, seed=payload.get("seed"))
    if as_json:
        doc.pop("trace_csv", None)
        click.echo(json.dumps(doc, indent=2))
    else:
        if doc["equivalent"]:
            click.echo(f"EQUIVALENT (max rel err {doc['max_rel_err']:.3e} <= 1e-10)")
        else:
            click.echo(f"MISMATCH (max rel err {doc['max_rel_err']:.3e})")
        if doc["nonfinite"]:
            click.echo(f"warning: non-finite values in {', '.join(doc['nonfinite'])}")
    if not doc["equivalent"]:
        sys.exit(1)


@main.command()
@cascade_options
@common_options
@click.option("--policy", type=click.Choice(["ri", "ri-rsb", "ri-rsb-rsp", "fully-fused"]), default="fully-fused")
@click.option("--seed", type=int, default=0)
def run(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab, server, out, as_json, policy, seed) -> None:
    """Interpret fused vs unfused schedules and verify equivalence."""
    payload = {
        "cascade": _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab),
        "policy": policy,
        "seed": seed,
    }
    _do_run(payload, server, out, as_json)


def _do_cost(payload: dict, server, out, as_json) -> None:
    doc = _post(server, "/cost", payload)
    if not doc.get("ok"):
        _finish(doc, as_json)
    variant, phase = doc["variant"], doc["phase"]
    if out:
        _write_atomic(Path(out) / f"cost-{variant}-{phase}.csv", doc["report_csv"])
        _write_atomic(Path(out) / f"util-{variant}-{phase}.csv", doc["util_csv"])
        _write_manifest(out, "cost", payload)
    if as_json:
        slim = {k: v for k, v in doc.items() if not k.endswith("_csv")}
        click.echo(json.dumps(slim, indent=2))
    else:
        click.echo(
            f"{variant} {phase}: latency {doc['latency_s']:.6e} s, "
            f"inter {doc['bytes_inter']:.3e} B, intra {doc['bytes_intra']:.3e} B"
            + (f", ideal {doc['ideal_latency_s']:.6e} s" if doc.get("ideal_latency_s") else "")
        )
        for w in doc.get("warnings", []):
            click.echo(f"  {w}")


@main.command()
@cascade_options
@common_options
@click.option("--policy", "variant", type=click.Choice(list(VARIANTS)), default="fully-fused",
              help="fusion variant or baseline to evaluate")
@click.option("--hw", "hw_file", type=click.Path(exists=True), default=None, help="hardware config file")
def cost(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab, server, out, as_json, variant, hw_file) -> None:
    """Analytical traffic and roofline latency for one variant."""
    payload = {
        "cascade": _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab),
        "variant": variant,
        "hw": _hw_spec(hw_file),
    }
    _do_cost(payload, server, out, as_json)


def _parse_scenarios(text: Optional[str]) -> Optional[list[dict]]:
    if not text or text in ("reference", "paper"):
        return None
    out = []
    for item in text.split(","):
        name, pre, dec = item.split(":")
        out.append({"name": name, "prefill_tokens": int(pre), "decode_steps": int(dec)})
    return out


def _do_compare(payload: dict, server, out, as_json) -> None:
    doc = _post(server, "/compare", payload)
    if not doc.get("ok"):
        _finish(doc, as_json)
    if out:
        _write_atomic(Path(out) / "e2e.csv", doc["e2e_csv"])
        for key, csv in doc["cost_csv"].items():
            _write_atomic(Path(out) / f"cost-{key}.csv", csv)
        for key, csv in doc["util_csv"].items():
            _write_atomic(Path(out) / f"util-{key}.csv", csv)
        summary = {k: doc[k] for k in ("per_layer", "e2e")}
        _write_atomic(Path(out) / "compare-summary.json", json.dumps(summary, indent=2) + "\n")
        _write_manifest(out, "compare", payload)
    if as_json:
        click.echo(json.dumps({k: doc[k] for k in ("per_layer", "e2e")}, indent=2))
        return
    click.echo(f"{'variant':14s} {'prefill[s]':>12s} {'speedup':>8s} {'decode[s]':>12s} {'speedup':>8s} {'e2e geomean':>12s}")
    geo = doc["e2e"]["geomean_speedup"]
    for v in doc["per_layer"]["prefill"]:
        pre = doc["per_layer"]["prefill"][v]
        dec = doc["per_layer"]["decode"][v]
        click.echo(
            f"{v:14s} {pre['latency_s']:12.5e} {pre['speedup_vs_unfused']:8.3f} "
            f"{dec['latency_s']:12.5e} {dec['speedup_vs_unfused']:8.3f} {geo.get(v, 1.0):12.3f}"
        )


@main.command()
@cascade_options
@common_options
@click.option("--variants", default=None, help="comma-separated subset of variants")
@click.option("--scenarios", default="reference", help="'reference' (builtin set) or name:prefill:steps,...")
@click.option("--hw", "hw_file", type=click.Path(exists=True), default=None)
def compare(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab, server, out, as_json, variants, scenarios, hw_file) -> None:
    """Side-by-side cost of all variants plus end-to-end scenarios."""
    payload = {
        "cascade": _cascade_spec(builtin, cascade_file, preset, tiny, params, phase, no_merge, merge_ab),
        "variants": [v.strip() for v in variants.split(",")] if variants else [],
        "scenarios": _parse_scenarios(scenarios),
        "hw": _hw_spec(hw_file),
    }
    _do_compare(payload, server, out, as_json)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host: str, port: int) -> None:
    """Run the analysis service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


_REPLAY_HANDLERS = {
    "stitch": _do_stitch,
    "lower": _do_lower,
    "run": _do_run,
    "cost": _do_cost,
    "compare": _do_compare,
}


if __name__ == "__main__":
    main()
