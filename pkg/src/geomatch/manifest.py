"""Pipeline manifest: artifact registry with content hashes.

Every CLI stage registers the files it writes; downstream stages verify
the hashes of what they consume, so a stale or hand-edited artifact
fails loudly instead of silently skewing results.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"


class ManifestError(RuntimeError):
    pass


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class PipelineManifest:
    workdir: Path
    root_seed: int
    artifacts: dict = field(default_factory=dict)
    created: str = ""
    updated: str = ""

    @classmethod
    def create(cls, workdir, root_seed: int) -> "PipelineManifest":
        now = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        m = cls(Path(workdir), root_seed, {}, now, now)
        m.save()
        return m

    @classmethod
    def load(cls, workdir) -> "PipelineManifest":
        workdir = Path(workdir)
        path = workdir / MANIFEST_NAME
        if not path.exists():
            raise ManifestError(f"no {MANIFEST_NAME} in {workdir}; run generate first")
        obj = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            workdir=workdir,
            root_seed=obj["root_seed"],
            artifacts=obj["artifacts"],
            created=obj["created"],
            updated=obj["updated"],
        )

    def save(self) -> None:
        self.updated = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        blob = {
            "root_seed": self.root_seed,
            "created": self.created,
            "updated": self.updated,
            "artifacts": self.artifacts,
        }
        (self.workdir / MANIFEST_NAME).write_text(
            json.dumps(blob, indent=2, sort_keys=True), encoding="utf-8"
        )

    def path(self, name: str) -> Path:
        if name not in self.artifacts:
            raise ManifestError(f"artifact {name!r} not in manifest; run its stage first")
        return self.workdir / self.artifacts[name]["path"]

    def register(self, name: str, relpath: str, digest: str | None = None) -> None:
        full = self.workdir / relpath
        if digest is None:
            if not full.exists():
                raise ManifestError(f"cannot register missing file {full}")
            digest = _sha256_file(full)
        self.artifacts[name] = {"path": relpath, "sha256": digest}
        self.save()

    def verify(self, *names) -> None:
        """Check existence and hash of the named artifacts (or all)."""
        from .boosting import modelset_hash

        for name in names or tuple(self.artifacts):
            entry = self.artifacts.get(name)
            if entry is None:
                raise ManifestError(f"artifact {name!r} not in manifest")
            full = self.workdir / entry["path"]
            if not full.exists():
                raise ManifestError(f"artifact {name!r} missing at {full}")
            actual = modelset_hash(full) if full.is_dir() else _sha256_file(full)
            if actual != entry["sha256"]:
                raise ManifestError(
                    f"artifact {name!r} hash mismatch (expected {entry['sha256'][:12]}, "
                    f"got {actual[:12]})"
                )
