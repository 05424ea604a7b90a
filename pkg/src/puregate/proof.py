"""Purity proofs: the structured evidence that a module's imports are pure.

A proof pairs a module's import list with per-import classifications and a
conclusion (pure iff no verdict is disallowed). Impurity is a proof outcome,
not an error: building a proof never raises, and rejection happens later at
certification or at the gate. Each proof embeds the version and content hash
of the whitelist it was classified against so the gate can check currency.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .canonical import canonical_bytes, canonical_loads
from .wasm_inspect import ImportRecord, MalformedBinary, ModuleImports, parse_imports
from .whitelist import DISALLOWED, Classification, Whitelist, classify_import

PURE = "pure"
IMPURE = "impure"

IMPORT_MISMATCH = "ImportMismatch"
MALFORMED_BINARY = "MalformedBinary"


class ProofFormatError(ValueError):
    """A proof document does not satisfy the proof invariants."""


@dataclass(frozen=True)
class PurityProof:
    imports: tuple[ImportRecord, ...]
    classifications: tuple[Classification, ...]
    conclusion: str
    whitelist_version: int
    whitelist_hash: bytes


@dataclass(frozen=True)
class ProofValidation:
    accepted: bool
    reason: str | None = None


def build_proof(module: ModuleImports, whitelist: Whitelist) -> PurityProof:
    """Classify every import in binary order and draw the conclusion."""
    classifications = tuple(classify_import(imp, whitelist) for imp in module.imports)
    impure = any(c.verdict == DISALLOWED for c in classifications)
    return PurityProof(
        imports=module.imports,
        classifications=classifications,
        conclusion=IMPURE if impure else PURE,
        whitelist_version=whitelist.version,
        whitelist_hash=whitelist.content_hash,
    )


def proof_to_json(proof: PurityProof) -> dict[str, Any]:
    return {
        "imports": [imp.to_json() for imp in proof.imports],
        "classifications": [c.to_json() for c in proof.classifications],
        "conclusion": proof.conclusion,
        "whitelist_version": proof.whitelist_version,
        "whitelist_hash": proof.whitelist_hash.hex(),
    }


def proof_from_json(doc: Mapping[str, Any]) -> PurityProof:
    try:
        proof = PurityProof(
            imports=tuple(ImportRecord.from_json(i) for i in doc["imports"]),
            classifications=tuple(
                Classification.from_json(c) for c in doc["classifications"]
            ),
            conclusion=doc["conclusion"],
            whitelist_version=doc["whitelist_version"],
            whitelist_hash=bytes.fromhex(doc["whitelist_hash"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProofFormatError(f"bad proof document: {exc}") from exc
    if proof.conclusion not in (PURE, IMPURE):
        raise ProofFormatError(f"unknown conclusion: {proof.conclusion!r}")
    if len(proof.imports) != len(proof.classifications):
        raise ProofFormatError("classifications not parallel to imports")
    if len(proof.whitelist_hash) != 32:
        raise ProofFormatError("whitelist_hash must be 32 bytes")
    return proof


def proof_bytes(proof: PurityProof) -> bytes:
    """Canonical serialization (fixed key order, imports in binary order)."""
    return canonical_bytes(proof_to_json(proof))


def proof_hash(proof: PurityProof) -> bytes:
    return hashlib.sha256(proof_bytes(proof)).digest()


def save_proof(proof: PurityProof, path: Path) -> None:
    Path(path).write_bytes(proof_bytes(proof) + b"\n")


def load_proof(path: Path) -> PurityProof:
    try:
        doc = canonical_loads(Path(path).read_bytes())
    except (OSError, ValueError) as exc:
        raise ProofFormatError(f"cannot read proof {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProofFormatError("proof file must hold a JSON object")
    return proof_from_json(doc)


def validate_proof_against_binary(
    proof: PurityProof, binary_bytes: bytes
) -> ProofValidation:
    """Independently re-parse the binary and demand exact import equality.

    Order matters: a reordered import list is a different module as far as
    evidence binding is concerned, so it is rejected.
    """
    try:
        module = parse_imports(binary_bytes)
    except MalformedBinary:
        return ProofValidation(False, MALFORMED_BINARY)
    if module.imports != proof.imports:
        return ProofValidation(False, IMPORT_MISMATCH)
    return ProofValidation(True)
