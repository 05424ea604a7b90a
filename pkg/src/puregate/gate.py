"""The runtime verification gate: six sequential, short-circuiting checks.

Order is load-bearing and fixed: (1) certifier trust and signature,
(2) artifact-hash binding, (3) proof-hash binding, (4) independent import
re-extraction and equality, (5) re-classification against the runtime
whitelist plus version-range currency, (6) conclusion check. The first
failure wins; rejections are decisions, never exceptions.

Acceptance decisions are cached by artifact hash. A cache entry records the
runtime whitelist snapshot it was decided under, and a hit requires snapshot
equality, so whitelist changes invalidate implicitly even if the explicit
invalidation call is missed. Every decision (accept and reject) is appended
to a decision log for audit.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Collection, Mapping

from .canonical import canonical_bytes, canonical_loads
from .certificate import (
    INVALID_SIGNATURE,
    PurityCertificate,
    verify_certificate_signature,
)
from .proof import PURE, PurityProof, proof_hash
from .wasm_inspect import MalformedBinary, parse_imports
from .whitelist import (
    DISALLOWED,
    Whitelist,
    check_version_range,
    classify_import,
)

ACCEPT = "accept"
REJECT = "reject"

R_INVALID_SIGNATURE = "invalid_signature"
R_UNTRUSTED_CERTIFIER = "untrusted_certifier"
R_ARTIFACT_HASH_MISMATCH = "artifact_hash_mismatch"
R_PROOF_HASH_MISMATCH = "proof_hash_mismatch"
R_IMPORT_MISMATCH = "import_mismatch"
R_MALFORMED_BINARY = "malformed_binary"
R_DISALLOWED_IMPORT = "disallowed_import"
R_STALE_OR_UNKNOWN_WHITELIST = "stale_or_unknown_whitelist"
R_CONCLUSION_NOT_PURE = "conclusion_not_pure"

REASONS = (
    R_INVALID_SIGNATURE,
    R_UNTRUSTED_CERTIFIER,
    R_ARTIFACT_HASH_MISMATCH,
    R_PROOF_HASH_MISMATCH,
    R_IMPORT_MISMATCH,
    R_MALFORMED_BINARY,
    R_DISALLOWED_IMPORT,
    R_STALE_OR_UNKNOWN_WHITELIST,
    R_CONCLUSION_NOT_PURE,
)

CACHE_INVALIDATION_CAUSES = ("whitelist_changed", "keys_rotated", "manual")


@dataclass(frozen=True)
class GateDecision:
    verdict: str
    reason: str | None = None
    detail: str | None = None
    failed_step: int | None = None
    from_cache: bool = False
    # Hash of the exact bytes this decision was made for; the host re-checks
    # it before instantiation so a decision cannot be replayed onto other
    # bytes.
    artifact_hash: bytes | None = None

    @property
    def accepted(self) -> bool:
        return self.verdict == ACCEPT

    def to_json(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "detail": self.detail,
            "failed_step": self.failed_step,
            "from_cache": self.from_cache,
            "artifact_hash": (
                self.artifact_hash.hex() if self.artifact_hash else None
            ),
        }


@dataclass(frozen=True)
class CacheEntry:
    whitelist_version: int
    whitelist_hash: bytes
    decided_at: float


@dataclass
class GateCache:
    accepted: dict[bytes, CacheEntry] = field(default_factory=dict)

    def lookup(self, artifact_hash: bytes, runtime: Whitelist) -> CacheEntry | None:
        entry = self.accepted.get(artifact_hash)
        if entry is None:
            return None
        if (
            entry.whitelist_version != runtime.version
            or entry.whitelist_hash != runtime.content_hash
        ):
            return None
        return entry

    def insert(self, artifact_hash: bytes, runtime: Whitelist, now: float) -> None:
        self.accepted[artifact_hash] = CacheEntry(
            whitelist_version=runtime.version,
            whitelist_hash=runtime.content_hash,
            decided_at=now,
        )


class DecisionLog:
    """Append-only record of gate decisions and cache events.

    Kept in memory always; mirrored to a JSONL file when a path is given.
    """

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self.events: list[dict[str, Any]] = []

    def append(self, event: dict[str, Any]) -> None:
        self.events.append(event)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(canonical_bytes(event).decode("utf-8") + "\n")

    def record_decision(
        self,
        decision: GateDecision,
        now: float,
        runtime_whitelist: "Whitelist | None" = None,
    ) -> None:
        event = {"event": "gate_decision", "timestamp": now, **decision.to_json()}
        if runtime_whitelist is not None:
            event["whitelist_version"] = runtime_whitelist.version
            event["whitelist_hash"] = runtime_whitelist.content_hash.hex()
        self.append(event)

    def record_invalidation(self, cause: str, now: float) -> None:
        self.append({"event": "cache_invalidated", "timestamp": now, "cause": cause})

    @staticmethod
    def read_events(path: Path) -> list[dict[str, Any]]:
        events = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                events.append(canonical_loads(line))
        return events


def _reject(
    reason: str, step: int, artifact_hash: bytes, detail: str | None = None
) -> GateDecision:
    return GateDecision(
        verdict=REJECT,
        reason=reason,
        detail=detail,
        failed_step=step,
        artifact_hash=artifact_hash,
    )


def gate_verify(
    binary_bytes: bytes,
    cert: PurityCertificate,
    proof: PurityProof,
    runtime_whitelist: Whitelist,
    trusted_keys: Collection[bytes],
    minimum_version: int = 1,
    cache: GateCache | None = None,
    known_hashes: Mapping[int, bytes] | None = None,
    log: DecisionLog | None = None,
    now: float | None = None,
) -> GateDecision:
    """Run the six checks (or serve a cached acceptance) and log the outcome."""
    if now is None:
        now = time.time()
    artifact_hash = hashlib.sha256(binary_bytes).digest()

    if cache is not None and cache.lookup(artifact_hash, runtime_whitelist):
        decision = GateDecision(
            verdict=ACCEPT, from_cache=True, artifact_hash=artifact_hash
        )
        if log is not None:
            log.record_decision(decision, now, runtime_whitelist)
        return decision

    decision = _run_checks(
        binary_bytes,
        artifact_hash,
        cert,
        proof,
        runtime_whitelist,
        trusted_keys,
        minimum_version,
        known_hashes,
    )
    if decision.accepted and cache is not None:
        cache.insert(artifact_hash, runtime_whitelist, now)
    if log is not None:
        log.record_decision(decision, now, runtime_whitelist)
    return decision


def _run_checks(
    binary_bytes: bytes,
    artifact_hash: bytes,
    cert: PurityCertificate,
    proof: PurityProof,
    runtime_whitelist: Whitelist,
    trusted_keys: Collection[bytes],
    minimum_version: int,
    known_hashes: Mapping[int, bytes] | None,
) -> GateDecision:
    # step 1: trust establishment, then signature verification
    sig = verify_certificate_signature(cert, trusted_keys)
    if not sig.accepted:
        reason = (
            R_INVALID_SIGNATURE
            if sig.reason == INVALID_SIGNATURE
            else R_UNTRUSTED_CERTIFIER
        )
        return _reject(reason, 1, artifact_hash)

    # step 2: artifact binding
    if artifact_hash != cert.artifact_hash:
        return _reject(R_ARTIFACT_HASH_MISMATCH, 2, artifact_hash)

    # step 3: proof binding
    if proof_hash(proof) != cert.proof_hash:
        return _reject(R_PROOF_HASH_MISMATCH, 3, artifact_hash)

    # step 4: independent import extraction
    try:
        module = parse_imports(binary_bytes)
    except MalformedBinary:
        return _reject(R_MALFORMED_BINARY, 4, artifact_hash)
    if module.imports != proof.imports:
        return _reject(R_IMPORT_MISMATCH, 4, artifact_hash)

    # step 5: re-classification against the runtime whitelist, then currency
    for imp in module.imports:
        if classify_import(imp, runtime_whitelist).verdict == DISALLOWED:
            return _reject(
                R_DISALLOWED_IMPORT,
                5,
                artifact_hash,
                detail=f"{imp.namespace}.{imp.name}",
            )
    currency = check_version_range(
        cert.metadata.whitelist_version,
        cert.metadata.whitelist_hash,
        runtime_whitelist,
        minimum_version,
        known_hashes,
    )
    if not currency.accepted:
        return _reject(
            R_STALE_OR_UNKNOWN_WHITELIST, 5, artifact_hash, detail=currency.reason
        )
    if (
        proof.whitelist_version != cert.metadata.whitelist_version
        or proof.whitelist_hash != cert.metadata.whitelist_hash
    ):
        return _reject(
            R_STALE_OR_UNKNOWN_WHITELIST,
            5,
            artifact_hash,
            detail="proof/certificate disagree",
        )

    # step 6: conclusion
    if proof.conclusion != PURE:
        return _reject(R_CONCLUSION_NOT_PURE, 6, artifact_hash)

    return GateDecision(verdict=ACCEPT, artifact_hash=artifact_hash)


def invalidate_cache(
    cache: GateCache,
    cause: str,
    log: DecisionLog | None = None,
    now: float | None = None,
) -> GateCache:
    if cause not in CACHE_INVALIDATION_CAUSES:
        raise ValueError(f"unknown invalidation cause: {cause!r}")
    if log is not None:
        log.record_invalidation(cause, time.time() if now is None else now)
    cache.accepted.clear()
    return cache
