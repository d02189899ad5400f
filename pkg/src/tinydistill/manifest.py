"""Run manifests: ordered stage entries with content hashes of every artifact."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import IntegrityError

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StageEntry:
    kind: str
    config_hash: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)    # artifact name -> sha256
    outputs: dict[str, str] = field(default_factory=dict)   # run-relative path -> sha256
    status: str = "running"
    wall_time: float = 0.0
    error: str | None = None
    info: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    run_id: str
    tool_version: str
    config_hash: str
    external_inputs: dict[str, str] = field(default_factory=dict)
    stages: list[StageEntry] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    def write(self, run_dir) -> Path:
        p = Path(run_dir) / MANIFEST_NAME
        tmp = p.with_suffix(".tmp")
        tmp.write_text(self.to_json(), encoding="utf-8")
        tmp.replace(p)
        return p

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        stages = [StageEntry(**s) for s in d.get("stages", [])]
        return cls(d["run_id"], d["tool_version"], d["config_hash"],
                   dict(d.get("external_inputs", {})), stages)

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        p = Path(run_dir)
        if p.is_dir():
            p = p / MANIFEST_NAME
        try:
            return cls.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise IntegrityError(f"{p}: unreadable manifest ({exc})") from None

    def entry(self, kind: str) -> StageEntry | None:
        for e in self.stages:
            if e.kind == kind:
                return e
        return None

    def producer(self, rel: str) -> StageEntry | None:
        for e in self.stages:
            if rel in e.outputs:
                return e
        return None

    def known_hashes(self) -> set[str]:
        out = set(self.external_inputs.values())
        for e in self.stages:
            out.update(e.outputs.values())
        return out


def verify_outputs(run_dir, entry: StageEntry) -> None:
    """Re-hash every output of ``entry``; raise on a missing or altered file."""
    for rel, want in sorted(entry.outputs.items()):
        p = Path(run_dir) / rel
        if not p.exists():
            raise IntegrityError(f"{rel} (output of stage {entry.kind}) is missing")
        got = file_sha256(p)
        if got != want:
            raise IntegrityError(f"{rel} (output of stage {entry.kind}) hash mismatch: "
                                 f"manifest {want[:16]}, file {got[:16]}")


def check_completeness(run_dir, manifest: RunManifest) -> list[str]:
    """Problems with the one-entry-per-file rule (empty list when the run is complete)."""
    run_dir = Path(run_dir)
    owners: dict[str, list[str]] = {}
    for e in manifest.stages:
        for rel in e.outputs:
            owners.setdefault(rel, []).append(e.kind)
    problems = []
    for p in sorted(run_dir.rglob("*")):
        if p.is_dir() or p.name == MANIFEST_NAME:
            continue
        rel = p.relative_to(run_dir).as_posix()
        n = len(owners.get(rel, []))
        if n != 1:
            problems.append(f"{rel}: referenced by {n} manifest entries")
    for rel in owners:
        if not (run_dir / rel).exists():
            problems.append(f"{rel}: listed in the manifest but missing")
    return problems


def verify_run(run_dir) -> RunManifest:
    manifest = RunManifest.read(run_dir)
    for e in manifest.stages:
        if e.status == "completed":
            verify_outputs(run_dir, e)
    problems = check_completeness(run_dir, manifest)
    if problems:
        raise IntegrityError("; ".join(problems))
    return manifest
