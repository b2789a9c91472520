"""HTTP service exposing the pipeline verbs.

Each endpoint takes a pydantic request model and runs on paths visible to
the server process (client and server share a filesystem, as with any local
tool daemon). The CLI builds these same request models and either calls the
handler functions in-process or posts them to a running server.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .bridge import EchoServer, bridge_self_test
from .config import PipelineConfig
from .errors import ConfigError, StageError
from .pipeline import run_pipeline, verify_output
from .synthetic import SyntheticScene, default_scene, make_synthetic


class SynthRequest(BaseModel):
    out_dir: str
    scene: SyntheticScene | None = None
    config: PipelineConfig = PipelineConfig()


class SynthResponse(BaseModel):
    input_dir: str
    truth_dir: str
    frames: int
    views: int


class RunRequest(BaseModel):
    input_dir: str
    out_dir: str
    config: PipelineConfig = PipelineConfig()


class RunResponse(BaseModel):
    ok: bool
    out_dir: str
    report: dict


class VerifyRequest(BaseModel):
    out_dir: str


class VerifyResponse(BaseModel):
    ok: bool
    issues: list[str]


class BridgeCheckRequest(BaseModel):
    address: str | None = None      # default: spin up the reference endpoint


class BridgeCheckResponse(BaseModel):
    ok: bool
    address: str
    checks: list[dict]


def do_synth(req: SynthRequest) -> SynthResponse:
    scene = req.scene if req.scene is not None else default_scene(focal=req.config.focal)
    info = make_synthetic(scene, req.config, req.out_dir)
    return SynthResponse(**info)


def do_run(req: RunRequest) -> RunResponse:
    report = run_pipeline(req.config, req.input_dir, req.out_dir)
    return RunResponse(ok=True, out_dir=req.out_dir, report=report)


def do_verify(req: VerifyRequest) -> VerifyResponse:
    issues = verify_output(req.out_dir)
    return VerifyResponse(ok=not issues, issues=issues)


def do_bridge_check(req: BridgeCheckRequest) -> BridgeCheckResponse:
    if req.address:
        checks = bridge_self_test(req.address)
        address = req.address
    else:
        with EchoServer() as server:
            address = server.address
            checks = bridge_self_test(address)
    return BridgeCheckResponse(ok=all(c["passed"] for c in checks),
                               address=address, checks=checks)


app = FastAPI(title="framematrix", version=__version__)


def _guard(fn, req):
    try:
        return fn(req)
    except (ConfigError, StageError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e)) from e
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e)) from e


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.get("/config/defaults", response_model=PipelineConfig)
def config_defaults() -> PipelineConfig:
    return PipelineConfig()


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest) -> SynthResponse:
    return _guard(do_synth, req)


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    return _guard(do_run, req)


@app.post("/verify", response_model=VerifyResponse)
def verify(req: VerifyRequest) -> VerifyResponse:
    return _guard(do_verify, req)


@app.post("/bridge-check", response_model=BridgeCheckResponse)
def bridge_check(req: BridgeCheckRequest) -> BridgeCheckResponse:
    return _guard(do_bridge_check, req)
