"""Versioned pure host-function whitelist and import classification.

The whitelist W is the union of two partitions: pure_data (reads, pure
computation) and pure_directive (constructors that append effect descriptions
to an output buffer without performing them). Classification is exact-match
on (namespace, name, type_signature) with kind=function; anything else is
disallowed. Whitelists are content-addressed: a version number plus the
SHA-256 of the canonical serialization, optionally signed by an authority.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import signing
from .canonical import canonical_bytes as _canonical_json
from .canonical import canonical_loads
from .wasm_inspect import ImportRecord

PURE_DATA = "pure_data"
PURE_DIRECTIVE = "pure_directive"
DISALLOWED = "disallowed"

PURITY_CLASSES = (PURE_DATA, PURE_DIRECTIVE)
VERDICTS = (PURE_DATA, PURE_DIRECTIVE, DISALLOWED)

STALE_WHITELIST = "StaleWhitelist"
UNKNOWN_WHITELIST_HASH = "UnknownWhitelistHash"
FUTURE_WHITELIST = "FutureWhitelist"


class DuplicateEntry(ValueError):
    """Two whitelist entries share (namespace, name)."""


class WhitelistFormatError(ValueError):
    """A whitelist file does not match the expected structure."""


@dataclass(frozen=True)
class WhitelistEntry:
    namespace: str
    name: str
    purity_class: str
    type_signature: str

    def __post_init__(self) -> None:
        if self.purity_class not in PURITY_CLASSES:
            raise ValueError(f"unknown purity class: {self.purity_class!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "namespace": self.namespace,
            "name": self.name,
            "class": self.purity_class,
            "type_signature": self.type_signature,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "WhitelistEntry":
        return cls(
            namespace=obj["namespace"],
            name=obj["name"],
            purity_class=obj["class"],
            type_signature=obj["type_signature"],
        )


@dataclass(frozen=True)
class Whitelist:
    version: int
    entries: tuple[WhitelistEntry, ...]
    content_hash: bytes
    authority_key: bytes | None = None
    authority_signature: bytes | None = None

    def lookup(self, namespace: str, name: str) -> WhitelistEntry | None:
        for entry in self.entries:
            if entry.namespace == namespace and entry.name == name:
                return entry
        return None


@dataclass(frozen=True)
class Classification:
    import_record: ImportRecord
    verdict: str

    def to_json(self) -> dict[str, Any]:
        return {"import": self.import_record.to_json(), "verdict": self.verdict}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Classification":
        verdict = obj["verdict"]
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict: {verdict!r}")
        return cls(ImportRecord.from_json(obj["import"]), verdict)


@dataclass(frozen=True)
class RangeCheck:
    accepted: bool
    reason: str | None = None


# ---------------------------------------------------------------------------
# canonical form and hashing
# ---------------------------------------------------------------------------

def _sorted_entries(entries: Iterable[WhitelistEntry]) -> tuple[WhitelistEntry, ...]:
    ordered = tuple(sorted(entries, key=lambda e: (e.namespace, e.name)))
    seen: set[tuple[str, str]] = set()
    for entry in ordered:
        key = (entry.namespace, entry.name)
        if key in seen:
            raise DuplicateEntry(f"duplicate whitelist entry {key[0]}.{key[1]}")
        seen.add(key)
    return ordered


def canonicalize(version: int, entries: Iterable[WhitelistEntry]) -> bytes:
    """Deterministic byte form hashed into content_hash; signature excluded."""
    ordered = _sorted_entries(entries)
    return _canonical_json(
        {"entries": [e.to_json() for e in ordered], "version": version}
    )


def content_hash(version: int, entries: Iterable[WhitelistEntry]) -> bytes:
    return hashlib.sha256(canonicalize(version, entries)).digest()


def make_whitelist(version: int, entries: Iterable[WhitelistEntry]) -> Whitelist:
    if version < 1:
        raise ValueError("whitelist version must be a positive integer")
    ordered = _sorted_entries(entries)
    return Whitelist(
        version=version,
        entries=ordered,
        content_hash=content_hash(version, ordered),
    )


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def classify_import(imp: ImportRecord, whitelist: Whitelist) -> Classification:
    """Exact-match lookup; a near miss of any kind is disallowed, not an error."""
    if imp.kind != "function":
        return Classification(imp, DISALLOWED)
    entry = whitelist.lookup(imp.namespace, imp.name)
    if entry is None or entry.type_signature != imp.type_signature:
        return Classification(imp, DISALLOWED)
    return Classification(imp, entry.purity_class)


# ---------------------------------------------------------------------------
# version-range currency
# ---------------------------------------------------------------------------

def check_version_range(
    cert_whitelist_version: int,
    cert_whitelist_hash: bytes,
    runtime: Whitelist,
    minimum_required: int,
    known_hashes: Mapping[int, bytes] | None = None,
) -> RangeCheck:
    """Accept iff the certificate's whitelist is within the acceptable range.

    known_hashes maps every accepted historical version to its content hash;
    when omitted the runtime's own version is the only known one. A version
    inside the range whose hash is not on record is rejected rather than
    trusted.
    """
    table = dict(known_hashes) if known_hashes else {}
    table.setdefault(runtime.version, runtime.content_hash)

    if cert_whitelist_version < minimum_required:
        return RangeCheck(False, STALE_WHITELIST)
    if cert_whitelist_version > runtime.version:
        return RangeCheck(False, FUTURE_WHITELIST)
    expected = table.get(cert_whitelist_version)
    if expected is None or expected != cert_whitelist_hash:
        return RangeCheck(False, UNKNOWN_WHITELIST_HASH)
    return RangeCheck(True)


# ---------------------------------------------------------------------------
# authority signing
# ---------------------------------------------------------------------------

def sign_whitelist(whitelist: Whitelist, seed: bytes) -> Whitelist:
    signature = signing.sign(seed, whitelist.content_hash)
    key = signing.public_key_bytes(signing.private_key_from_seed(seed))
    return replace(whitelist, authority_key=key, authority_signature=signature)


def verify_whitelist_signature(whitelist: Whitelist) -> bool:
    if whitelist.authority_key is None or whitelist.authority_signature is None:
        return False
    return signing.verify(
        whitelist.authority_key,
        whitelist.authority_signature,
        whitelist.content_hash,
    )


# ---------------------------------------------------------------------------
# file form
# ---------------------------------------------------------------------------

def whitelist_to_json(whitelist: Whitelist) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "version": whitelist.version,
        "entries": [e.to_json() for e in whitelist.entries],
        "content_hash": whitelist.content_hash.hex(),
    }
    if whitelist.authority_key is not None:
        doc["authority_key"] = whitelist.authority_key.hex()
    if whitelist.authority_signature is not None:
        doc["authority_signature"] = whitelist.authority_signature.hex()
    return doc


def whitelist_from_json(doc: Mapping[str, Any]) -> Whitelist:
    try:
        version = doc["version"]
        entries = tuple(WhitelistEntry.from_json(e) for e in doc["entries"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WhitelistFormatError(f"bad whitelist document: {exc}") from exc
    built = make_whitelist(version, entries)
    recorded = doc.get("content_hash")
    if recorded is not None and bytes.fromhex(recorded) != built.content_hash:
        raise WhitelistFormatError(
            "recorded content_hash does not match the canonical entries"
        )
    key_hex = doc.get("authority_key")
    sig_hex = doc.get("authority_signature")
    if key_hex is not None and sig_hex is not None:
        built = replace(
            built,
            authority_key=bytes.fromhex(key_hex),
            authority_signature=bytes.fromhex(sig_hex),
        )
    return built


def save_whitelist(whitelist: Whitelist, path: Path) -> None:
    Path(path).write_bytes(_canonical_json(whitelist_to_json(whitelist)) + b"\n")


def load_whitelist(path: Path) -> Whitelist:
    try:
        doc = canonical_loads(Path(path).read_bytes())
    except (OSError, ValueError) as exc:
        raise WhitelistFormatError(f"cannot read whitelist {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise WhitelistFormatError("whitelist file must hold a JSON object")
    return whitelist_from_json(doc)


# ---------------------------------------------------------------------------
# shipped whitelists
# ---------------------------------------------------------------------------

HOST_NAMESPACE = "mashin"

# v1: the four-function profile every shipped executor fixture compiles against.
DEFAULT_V1_ENTRIES = (
    WhitelistEntry(HOST_NAMESPACE, "get_input_len", PURE_DATA, "() -> i32"),
    WhitelistEntry(HOST_NAMESPACE, "get_input", PURE_DATA, "(i32) -> ()"),
    WhitelistEntry(HOST_NAMESPACE, "set_output", PURE_DIRECTIVE, "(i32, i32) -> ()"),
    WhitelistEntry(HOST_NAMESPACE, "log", PURE_DATA, "(i32, i32) -> ()"),
)

_V2_DATA_NAMES = {
    "mem_alloc": "(i32) -> i32",
    "mem_free": "(i32) -> ()",
    "mem_copy": "(i32, i32, i32) -> ()",
    "str_concat": "(i32, i32) -> i32",
    "str_slice": "(i32, i32, i32) -> i32",
    "str_len": "(i32) -> i32",
    "str_encode_utf8": "(i32, i32) -> i32",
    "int_add": "(i64, i64) -> i64",
    "int_sub": "(i64, i64) -> i64",
    "int_mul": "(i64, i64) -> i64",
    "int_div": "(i64, i64) -> i64",
    "float_add": "(f64, f64) -> f64",
    "float_sub": "(f64, f64) -> f64",
    "float_mul": "(f64, f64) -> f64",
    "float_div": "(f64, f64) -> f64",
    "list_new": "() -> i32",
    "list_push": "(i32, i32) -> i32",
    "list_get": "(i32, i32) -> i32",
    "list_len": "(i32) -> i32",
    "map_new": "() -> i32",
    "map_put": "(i32, i32, i32) -> i32",
    "map_get": "(i32, i32) -> i32",
    "map_keys": "(i32) -> i32",
    "json_encode": "(i32) -> i32",
    "json_decode": "(i32, i32) -> i32",
    "ctx_get": "(i32, i32) -> i32",
    "ctx_get_step_output": "(i32, i32) -> i32",
    "ctx_get_input": "() -> i32",
}

_V2_DIRECTIVE_NAMES = (
    "directive_llm_call",
    "directive_llm_call_stream",
    "directive_http_request",
    "directive_file_op",
    "directive_call_machine",
    "directive_memory_op",
    "directive_db_op",
    "directive_exec_op",
    "directive_emit_event",
    "directive_broadcast",
)

# v2-extended: the v1 profile plus the full design-envelope surface. Directive
# constructors share one ABI: a (ptr, len) JSON payload appended to the output
# directive list.
V2_EXTENDED_ENTRIES = DEFAULT_V1_ENTRIES + tuple(
    WhitelistEntry(HOST_NAMESPACE, name, PURE_DATA, sig)
    for name, sig in _V2_DATA_NAMES.items()
) + tuple(
    WhitelistEntry(HOST_NAMESPACE, name, PURE_DIRECTIVE, "(i32, i32) -> ()")
    for name in _V2_DIRECTIVE_NAMES
)


def builtin_whitelist(version: int) -> Whitelist:
    """The whitelists this distribution ships: v1 (default) and v2-extended."""
    if version == 1:
        return make_whitelist(1, DEFAULT_V1_ENTRIES)
    if version == 2:
        return make_whitelist(2, V2_EXTENDED_ENTRIES)
    raise ValueError(f"no builtin whitelist version {version}")
