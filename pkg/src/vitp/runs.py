"""Run directories: runs/<digest>/ with a manifest written before outputs."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

from . import __version__


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    code_version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def create_run_dir(base: str, digest: str) -> str:
    path = os.path.join(base, digest)
    os.makedirs(path, exist_ok=True)
    return path


def start_manifest(run_dir: str, command: str, digest: str, seed: int,
                   outputs: list) -> RunManifest:
    """Written before any output file; lists every planned output path."""
    manifest = RunManifest(command=command, config_digest=digest, seed=seed,
                           started=_now(), outputs=list(outputs))
    _write(run_dir, manifest)
    return manifest


def finish_manifest(run_dir: str, manifest: RunManifest) -> None:
    manifest.finished = _now()
    _write(run_dir, manifest)


def _write(run_dir: str, manifest: RunManifest) -> None:
    path = os.path.join(run_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(asdict(manifest), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def load_manifest(run_dir: str) -> dict:
    with open(os.path.join(run_dir, "manifest.json"), "r", encoding="utf-8") as f:
        return json.load(f)
