"""Purity certificates: signed bindings of an artifact to its proof.

A certificate carries the artifact hash, the proof hash, an Ed25519 signature
over their raw 64-byte concatenation, and metadata naming the certifier key
and the whitelist the proof was built against. Certifying an impure proof is
refused outright; the certificate only ever attests to purity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Collection, Mapping

from . import signing
from .canonical import canonical_bytes, canonical_loads
from .proof import PURE, PurityProof, proof_hash, validate_proof_against_binary

FORMAT_VERSION = 1
MAX_CERT_BYTES = 4096

UNTRUSTED_CERTIFIER = "UntrustedCertifier"
INVALID_SIGNATURE = "InvalidSignature"


class RefuseImpure(ValueError):
    """Refusal to sign: the proof's conclusion is not pure."""


class ProofBinaryMismatch(ValueError):
    """Refusal to sign: the proof does not describe these binary bytes."""


class CertificateFormatError(ValueError):
    """A certificate document does not satisfy the certificate invariants."""


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes


def keygen() -> KeyPair:
    seed = signing.generate_seed()
    return keypair_from_seed(seed)


def keypair_from_seed(seed: bytes) -> KeyPair:
    public = signing.public_key_bytes(signing.private_key_from_seed(seed))
    return KeyPair(public_key=public, private_key=seed)


@dataclass(frozen=True)
class CertificateMetadata:
    certifier_key: bytes
    timestamp: int
    whitelist_version: int
    whitelist_hash: bytes
    format_version: int = FORMAT_VERSION


@dataclass(frozen=True)
class PurityCertificate:
    artifact_hash: bytes
    proof_hash: bytes
    signature: bytes
    metadata: CertificateMetadata


@dataclass(frozen=True)
class SignatureCheck:
    accepted: bool
    reason: str | None = None


def signing_message(artifact_hash: bytes, proof_digest: bytes) -> bytes:
    """The signed message: raw digest concatenation, no outer hash."""
    return artifact_hash + proof_digest


def sign_certificate(
    binary_bytes: bytes, proof: PurityProof, key: KeyPair, now: int
) -> PurityCertificate:
    if proof.conclusion != PURE:
        raise RefuseImpure("disallowed imports found; refusing to certify")
    validation = validate_proof_against_binary(proof, binary_bytes)
    if not validation.accepted:
        raise ProofBinaryMismatch(f"proof does not match binary: {validation.reason}")
    artifact_hash = hashlib.sha256(binary_bytes).digest()
    proof_digest = proof_hash(proof)
    signature = signing.sign(
        key.private_key, signing_message(artifact_hash, proof_digest)
    )
    return PurityCertificate(
        artifact_hash=artifact_hash,
        proof_hash=proof_digest,
        signature=signature,
        metadata=CertificateMetadata(
            certifier_key=key.public_key,
            timestamp=int(now),
            whitelist_version=proof.whitelist_version,
            whitelist_hash=proof.whitelist_hash,
        ),
    )


def verify_certificate_signature(
    cert: PurityCertificate, trusted_keys: Collection[bytes]
) -> SignatureCheck:
    """Trust establishment precedes signature math."""
    if cert.metadata.certifier_key not in set(trusted_keys):
        return SignatureCheck(False, UNTRUSTED_CERTIFIER)
    ok = signing.verify(
        cert.metadata.certifier_key,
        cert.signature,
        signing_message(cert.artifact_hash, cert.proof_hash),
    )
    if not ok:
        return SignatureCheck(False, INVALID_SIGNATURE)
    return SignatureCheck(True)


# ---------------------------------------------------------------------------
# file form
# ---------------------------------------------------------------------------

def certificate_to_json(cert: PurityCertificate) -> dict[str, Any]:
    return {
        "artifact_hash": cert.artifact_hash.hex(),
        "proof_hash": cert.proof_hash.hex(),
        "signature": cert.signature.hex(),
        "metadata": {
            "certifier_key": cert.metadata.certifier_key.hex(),
            "timestamp": cert.metadata.timestamp,
            "whitelist_version": cert.metadata.whitelist_version,
            "whitelist_hash": cert.metadata.whitelist_hash.hex(),
            "format_version": cert.metadata.format_version,
        },
    }


def certificate_from_json(doc: Mapping[str, Any]) -> PurityCertificate:
    try:
        meta = doc["metadata"]
        cert = PurityCertificate(
            artifact_hash=bytes.fromhex(doc["artifact_hash"]),
            proof_hash=bytes.fromhex(doc["proof_hash"]),
            signature=bytes.fromhex(doc["signature"]),
            metadata=CertificateMetadata(
                certifier_key=bytes.fromhex(meta["certifier_key"]),
                timestamp=int(meta["timestamp"]),
                whitelist_version=int(meta["whitelist_version"]),
                whitelist_hash=bytes.fromhex(meta["whitelist_hash"]),
                format_version=int(meta["format_version"]),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CertificateFormatError(f"bad certificate document: {exc}") from exc
    if len(cert.artifact_hash) != 32 or len(cert.proof_hash) != 32:
        raise CertificateFormatError("digests must be 32 bytes")
    if len(cert.signature) != signing.SIGNATURE_BYTES:
        raise CertificateFormatError("signature must be 64 bytes")
    if len(cert.metadata.certifier_key) != signing.PUBLIC_KEY_BYTES:
        raise CertificateFormatError("certifier key must be 32 bytes")
    if cert.metadata.format_version != FORMAT_VERSION:
        raise CertificateFormatError(
            f"unsupported format_version {cert.metadata.format_version}"
        )
    return cert


def certificate_bytes(cert: PurityCertificate) -> bytes:
    return canonical_bytes(certificate_to_json(cert))


def save_certificate(cert: PurityCertificate, path: Path) -> None:
    Path(path).write_bytes(certificate_bytes(cert) + b"\n")


def load_certificate(path: Path) -> PurityCertificate:
    try:
        doc = canonical_loads(Path(path).read_bytes())
    except (OSError, ValueError) as exc:
        raise CertificateFormatError(f"cannot read certificate {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CertificateFormatError("certificate file must hold a JSON object")
    return certificate_from_json(doc)
