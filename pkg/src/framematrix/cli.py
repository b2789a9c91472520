"""Command-line client for the pipeline service.

Verbs mirror the HTTP endpoints: ``synth``, ``run``, ``verify``,
``bridge-check``, plus ``serve`` to start the service. Without ``--server``
the request executes in-process; with it, the same request model is posted
to a running service. The FM_SEED environment variable overrides the
configured seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .service import (BridgeCheckRequest, RunRequest, SynthRequest,
                      VerifyRequest, do_bridge_check, do_run, do_synth,
                      do_verify)
from .synthetic import SyntheticScene


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def _build_config(args) -> PipelineConfig:
    return load_config(path=getattr(args, "config", None),
                       overrides=_parse_sets(getattr(args, "set", []) or []),
                       seed_env=os.environ.get("FM_SEED"))


def _post(server: str, path: str, payload, response_field: str | None = None) -> dict:
    import httpx
    r = httpx.post(f"{server.rstrip('/')}{path}", json=payload.model_dump(),
                   timeout=None)
    if r.status_code >= 400:
        raise SystemExit(f"server error {r.status_code}: {r.text}")
    return r.json()


def _emit(obj) -> None:
    data = obj if isinstance(obj, dict) else obj.model_dump()
    json.dump(data, sys.stdout, indent=1)
    sys.stdout.write("\n")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="framematrix",
        description="stereo/spatial video synthesis via frame-matrix denoising")
    parser.add_argument("--server", help="URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic input directory + ground truth")
    p.add_argument("--out", required=True, help="input directory to create")
    p.add_argument("--scene", help="JSON scene description (default: two-layer scene)")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("run", help="run the full pipeline on an input directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("verify", help="re-run integrity checks on an output directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bridge-check", help="protocol self-test against a denoiser endpoint")
    p.add_argument("--address", help="host:port (default: built-in reference endpoint)")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8474)

    args = parser.parse_args(argv)

    if args.verb == "serve":
        import uvicorn
        from .service import app
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    if args.verb == "synth":
        scene = None
        if args.scene:
            scene = SyntheticScene(**json.loads(Path(args.scene).read_text()))
        req = SynthRequest(out_dir=args.out, scene=scene, config=_build_config(args))
        _emit(_post(args.server, "/synth", req) if args.server else do_synth(req))
        return 0

    if args.verb == "run":
        req = RunRequest(input_dir=args.input, out_dir=args.out,
                         config=_build_config(args))
        _emit(_post(args.server, "/run", req) if args.server else do_run(req))
        return 0

    if args.verb == "verify":
        req = VerifyRequest(out_dir=args.out)
        resp = _post(args.server, "/verify", req) if args.server else do_verify(req).model_dump()
        _emit(resp)
        ok = resp["ok"] if isinstance(resp, dict) else resp.ok
        return 0 if ok else 1

    if args.verb == "bridge-check":
        req = BridgeCheckRequest(address=args.address)
        resp = _post(args.server, "/bridge-check", req) if args.server \
            else do_bridge_check(req).model_dump()
        _emit(resp)
        ok = resp["ok"] if isinstance(resp, dict) else resp.ok
        return 0 if ok else 1

    return 2


if __name__ == "__main__":
    sys.exit(main())
