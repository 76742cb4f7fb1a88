"""FastAPI service exposing the fusion toolkit.

Every endpoint is a pure function of its request body, so the service is
safe to scale out; the CLI talks to it through an in-process ASGI
transport by default.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Optional

from fastapi import FastAPI

from .. import __version__
from ..cost import (
    REFERENCE_SCENARIOS,
    VARIANTS,
    HardwareConfig,
    Scenario,
    e2e_csv,
    end_to_end,
    evaluate_variant,
    parse_hw_config,
)
from ..frontend import ParamSet, build_mamba1, make_params, mamba1_merged, parse
from ..fusion import StitchPolicy, fusion_plan, greedy_stitch
from ..interp import MAMBA_RANGES, max_rel_err, run as interp_run, synthesize
from ..ir import Cascade, Diagnostic, validate
from ..schedule import ScheduleError, lower_variant, pretty, to_json, unfused_schedule
from .schemas import (
    CascadeSpec,
    CompareRequest,
    CompareResponse,
    CostRequest,
    CostResponse,
    DiagnosticOut,
    HwSpec,
    LowerRequest,
    LowerResponse,
    RunRequest,
    RunResponse,
    StitchRequest,
    StitchResponse,
    ValidateRequest,
    ValidateResponse,
)

POLICY_NAMES = {p.value: p for p in StitchPolicy}


def _diag_out(diags: list[Diagnostic]) -> list[DiagnosticOut]:
    return [
        DiagnosticOut(
            severity=d.severity, message=d.message, einsum=d.eid, line=d.line, col=d.col
        )
        for d in diags
    ]


def resolve_cascade(
    spec: CascadeSpec,
) -> tuple[Optional[Cascade], Optional[ParamSet], list[Diagnostic]]:
    if spec.source is not None:
        r = parse(spec.source)
        return r.cascade, None, r.diagnostics
    if spec.builtin not in (None, "mamba1"):
        return None, None, [Diagnostic("error", f"unknown builtin {spec.builtin!r}")]
    try:
        params = make_params(spec.preset, phase=spec.phase, **spec.params)
    except (ValueError, KeyError, TypeError) as exc:
        return None, None, [Diagnostic("error", f"bad parameters: {exc}")]
    if spec.merge:
        m = mamba1_merged(params, include_ab=spec.merge_ab)
        return m.cascade, params, list(m.diagnostics)
    return build_mamba1(params), params, []


def resolve_hw(hw: HwSpec) -> HardwareConfig:
    cfg = parse_hw_config(hw.text) if hw.text else HardwareConfig()
    if hw.overrides:
        fields = {}
        for k, v in hw.overrides.items():
            if k not in HardwareConfig.__dataclass_fields__:
                raise ValueError(f"unknown hardware config key {k!r}")
            want = HardwareConfig.__dataclass_fields__[k].type
            fields[k] = float(v) if want == "float" else int(v)
        cfg = replace(cfg, **fields)
    return cfg


def create_app() -> FastAPI:
    app = FastAPI(title="einfuse", version=__version__)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/validate", response_model=ValidateResponse)
    def validate_endpoint(req: ValidateRequest) -> ValidateResponse:
        cascade, _params, diags = resolve_cascade(req.cascade)
        if cascade is not None:
            diags = diags + validate(cascade)
        ok = cascade is not None and not any(d.severity == "error" for d in diags)
        return ValidateResponse(
            ok=ok,
            einsums=len(cascade.einsums) if cascade is not None else 0,
            diagnostics=_diag_out(diags),
        )

    @app.post("/stitch", response_model=StitchResponse)
    def stitch_endpoint(req: StitchRequest) -> StitchResponse:
        cascade, _params, diags = resolve_cascade(req.cascade)
        if cascade is None:
            return StitchResponse(ok=False, diagnostics=_diag_out(diags))
        if req.policy == "unfused":
            nest = unfused_schedule(cascade)
            return StitchResponse(
                ok=True,
                policy="unfused",
                plan=fusion_plan(cascade, nest.groups),
                diagnostics=_diag_out(diags),
            )
        policy = POLICY_NAMES.get(req.policy)
        if policy is None:
            diags.append(Diagnostic("error", f"unknown policy {req.policy!r}"))
            return StitchResponse(ok=False, diagnostics=_diag_out(diags))
        groups = greedy_stitch(cascade, policy)
        return StitchResponse(
            ok=True,
            policy=policy.value,
            plan=fusion_plan(cascade, groups),
            diagnostics=_diag_out(diags),
        )

    @app.post("/lower", response_model=LowerResponse)
    def lower_endpoint(req: LowerRequest) -> LowerResponse:
        import json as _json

        cascade, _params, diags = resolve_cascade(req.cascade)
        if cascade is None:
            return LowerResponse(ok=False, diagnostics=_diag_out(diags))
        try:
            if req.policy == "unfused":
                nest = unfused_schedule(cascade)
            else:
                policy = POLICY_NAMES.get(req.policy)
                if policy is None:
                    diags.append(Diagnostic("error", f"unknown policy {req.policy!r}"))
                    return LowerResponse(ok=False, diagnostics=_diag_out(diags))
                groups = greedy_stitch(cascade, policy)
                nest = lower_variant(cascade, groups, tiles=req.tiles, label=policy.value)
        except ScheduleError as exc:
            return LowerResponse(
                ok=False, diagnostics=_diag_out(diags + exc.diagnostics)
            )
        return LowerResponse(
            ok=True,
            pretty=pretty(nest, cascade),
            nest=_json.loads(to_json(nest, cascade)),
            diagnostics=_diag_out(diags),
        )

    @app.post("/run", response_model=RunResponse)
    def run_endpoint(req: RunRequest) -> RunResponse:
        cascade, params, diags = resolve_cascade(req.cascade)
        if cascade is None:
            return RunResponse(ok=False, diagnostics=_diag_out(diags))
        ranges = MAMBA_RANGES if req.cascade.source is None else None
        policy = POLICY_NAMES.get(req.policy)
        if policy is None:
            diags.append(Diagnostic("error", f"unknown policy {req.policy!r}"))
            return RunResponse(ok=False, diagnostics=_diag_out(diags))
        store = synthesize(cascade, req.seed, ranges=ranges)
        ref, _ = interp_run(unfused_schedule(cascade), cascade, store.copy(), trace_traffic=False)
        nest = lower_variant(cascade, greedy_stitch(cascade, policy), label=policy.value)
        got, trace = interp_run(nest, cascade, store.copy())
        err = max_rel_err(got, ref)
        return RunResponse(
            ok=True,
            equivalent=err <= req.tolerance,
            max_rel_err=err,
            trace_csv=trace.to_csv(),
            nonfinite=trace.nonfinite,
            diagnostics=_diag_out(diags),
        )

    @app.post("/cost", response_model=CostResponse)
    def cost_endpoint(req: CostRequest) -> CostResponse:
        cascade, params, diags = resolve_cascade(req.cascade)
        if params is None:
            diags.append(
                Diagnostic("error", "cost evaluation needs the builtin cascade with parameters")
            )
            return CostResponse(ok=False, diagnostics=_diag_out(diags))
        try:
            cfg = resolve_hw(req.hw)
        except ValueError as exc:
            diags.append(Diagnostic("error", str(exc)))
            return CostResponse(ok=False, diagnostics=_diag_out(diags))
        if req.variant not in VARIANTS:
            diags.append(Diagnostic("error", f"unknown variant {req.variant!r}"))
            return CostResponse(ok=False, diagnostics=_diag_out(diags))
        rep = evaluate_variant(req.variant, params, cfg, include_ideal=req.include_ideal)
        return CostResponse(
            ok=True,
            variant=req.variant,
            phase=params.phase,
            latency_s=rep.latency,
            bytes_inter=rep.bytes_inter,
            bytes_intra=rep.bytes_intra,
            report_csv=rep.to_csv(),
            util_csv=rep.util_csv(cfg),
            ideal_latency_s=rep.ideal.latency if rep.ideal else None,
            warnings=[str(w) for w in rep.warnings],
            diagnostics=_diag_out(diags),
        )

    @app.post("/compare", response_model=CompareResponse)
    def compare_endpoint(req: CompareRequest) -> CompareResponse:
        cascade, params, diags = resolve_cascade(req.cascade)
        if params is None:
            diags.append(
                Diagnostic("error", "comparison needs the builtin cascade with parameters")
            )
            return CompareResponse(ok=False, diagnostics=_diag_out(diags))
        try:
            cfg = resolve_hw(req.hw)
        except ValueError as exc:
            diags.append(Diagnostic("error", str(exc)))
            return CompareResponse(ok=False, diagnostics=_diag_out(diags))
        variants = tuple(req.variants) if req.variants else VARIANTS
        bad = [v for v in variants if v not in VARIANTS]
        if bad:
            diags.append(Diagnostic("error", f"unknown variant {bad[0]!r}"))
            return CompareResponse(ok=False, diagnostics=_diag_out(diags))

        per_layer: dict = {}
        cost_csvs: dict[str, str] = {}
        util_csvs: dict[str, str] = {}
        for phase in ("prefill", "decode"):
            p = replace(params, I=1 if phase == "decode" else params.I, phase=phase)
            reports = {v: evaluate_variant(v, p, cfg) for v in variants}
            base = reports.get("unfused")
            per_layer[phase] = {
                v: {
                    "latency_s": r.latency,
                    "speedup_vs_unfused": (base.latency / r.latency) if base else 1.0,
                    "ideal_latency_s": r.ideal.latency if r.ideal else None,
                }
                for v, r in reports.items()
            }
            for v, r in reports.items():
                cost_csvs[f"{v}-{phase}"] = r.to_csv()
                util_csvs[f"{v}-{phase}"] = r.util_csv(cfg)

        scenarios = (
            tuple(Scenario(s.name, s.prefill_tokens, s.decode_steps) for s in req.scenarios)
            if req.scenarios
            else REFERENCE_SCENARIOS
        )
        e2e = end_to_end(params, cfg, scenarios=scenarios, variants=variants)
        return CompareResponse(
            ok=True,
            per_layer=per_layer,
            e2e=e2e,
            e2e_csv=e2e_csv(e2e),
            cost_csv=cost_csvs,
            util_csv=util_csvs,
            diagnostics=_diag_out(diags),
        )

    return app


app = create_app()
