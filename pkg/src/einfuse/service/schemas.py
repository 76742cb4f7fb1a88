"""Request/response models for the analysis service."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class CascadeSpec(BaseModel):
    """Where the cascade comes from: inline text or a builtin + parameters."""

    source: Optional[str] = None
    builtin: Optional[str] = None  # "mamba1"
    preset: Optional[str] = None   # "tiny" | "mamba-370m" | "mamba-2.8b"
    params: dict[str, int] = Field(default_factory=dict)
    phase: str = "prefill"
    merge: bool = True
    merge_ab: bool = False


class HwSpec(BaseModel):
    text: Optional[str] = None               # key=value lines
    overrides: dict[str, float] = Field(default_factory=dict)


class DiagnosticOut(BaseModel):
    severity: str
    message: str
    einsum: Optional[int] = None
    line: Optional[int] = None
    col: Optional[int] = None


class ValidateRequest(BaseModel):
    cascade: CascadeSpec


class ValidateResponse(BaseModel):
    ok: bool
    einsums: int = 0
    diagnostics: list[DiagnosticOut] = Field(default_factory=list)


class StitchRequest(BaseModel):
    cascade: CascadeSpec
    policy: str = "fully-fused"


class StitchResponse(BaseModel):
    ok: bool
    policy: str = ""
    plan: Optional[dict] = None
    diagnostics: list[DiagnosticOut] = Field(default_factory=list)


class LowerRequest(BaseModel):
    cascade: CascadeSpec
    policy: str = "fully-fused"
    tiles: dict[str, int] = Field(default_factory=dict)


class LowerResponse(BaseModel):
    ok: bool
    pretty: str = ""
    nest: Optional[dict] = None
    diagnostics: list[DiagnosticOut] = Field(default_factory=list)


class RunRequest(BaseModel):
    cascade: CascadeSpec
    policy: str = "fully-fused"
    seed: int = 0
    tolerance: float = 1e-10


class RunResponse(BaseModel):
    ok: bool
    equivalent: bool = False
    max_rel_err: float = 0.0
    trace_csv: str = ""
    nonfinite: list[str] = Field(default_factory=list)
    diagnostics: list[DiagnosticOut] = Field(default_factory=list)


class CostRequest(BaseModel):
    cascade: CascadeSpec
    variant: str = "fully-fused"
    hw: HwSpec = Field(default_factory=HwSpec)
    include_ideal: bool = True


class CostResponse(BaseModel):
    ok: bool
    variant: str = ""
    phase: str = ""
    latency_s: float = 0.0
    bytes_inter: float = 0.0
    bytes_intra: float = 0.0
    report_csv: str = ""
    util_csv: str = ""
    ideal_latency_s: Optional[float] = None
    warnings: list[str] = Field(default_factory=list)
    diagnostics: list[DiagnosticOut] = Field(default_factory=list)


class ScenarioIn(BaseModel):
    name: str
    prefill_tokens: int
    decode_steps: int


class CompareRequest(BaseModel):
    cascade: CascadeSpec
    variants: list[str] = Field(default_factory=list)  # empty = all
    scenarios: Optional[list[ScenarioIn]] = None       # None = builtin reference set
    hw: HwSpec = Field(default_factory=HwSpec)


class CompareResponse(BaseModel):
    ok: bool
    per_layer: dict = Field(default_factory=dict)     # phase -> variant -> {latency_s, speedup}
    e2e: dict = Field(default_factory=dict)
    e2e_csv: str = ""
    cost_csv: dict[str, str] = Field(default_factory=dict)  # "<variant>-<phase>" -> csv
    util_csv: dict[str, str] = Field(default_factory=dict)
    diagnostics: list[DiagnosticOut] = Field(default_factory=list)
