"""Read-only WebAssembly binary inspection.

Parses exactly enough of the binary format (magic, version, section framing,
type section, import section) to extract the complete import list in
declaration order, and hashes the artifact bytes. Nothing here executes code
or trusts the producer; a binary that cannot be parsed raises MalformedBinary
so the caller rejects it rather than treating it as import-free.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any

WASM_MAGIC = b"\x00asm"
WASM_VERSION = b"\x01\x00\x00\x00"
MAX_BINARY_BYTES = 64 * 1024 * 1024

SECTION_TYPE = 1
SECTION_IMPORT = 2

_VALTYPE = {
    0x7F: "i32",
    0x7E: "i64",
    0x7D: "f32",
    0x7C: "f64",
    0x7B: "v128",
    0x70: "funcref",
    0x6F: "externref",
}

IMPORT_KINDS = ("function", "table", "memory", "global")


class MalformedBinary(ValueError):
    """The bytes are not a parseable WASM module; reject the artifact."""


def hash_bytes(data: bytes) -> bytes:
    """SHA-256 digest of data (32 raw bytes; rendered lowercase hex in files)."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class ImportRecord:
    """One entry of a module's import section, exactly as declared."""

    namespace: str
    name: str
    kind: str
    type_signature: str

    def to_json(self) -> dict[str, Any]:
        return {
            "namespace": self.namespace,
            "name": self.name,
            "kind": self.kind,
            "type_signature": self.type_signature,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ImportRecord":
        rec = cls(
            namespace=obj["namespace"],
            name=obj["name"],
            kind=obj["kind"],
            type_signature=obj["type_signature"],
        )
        if rec.kind not in IMPORT_KINDS:
            raise ValueError(f"unknown import kind: {rec.kind!r}")
        return rec


@dataclass(frozen=True)
class ModuleImports:
    """Parsed import section plus the artifact hash of the full binary."""

    imports: tuple[ImportRecord, ...]
    artifact_hash: bytes
    byte_length: int


class _Reader:
    """Bounded cursor over the binary; every read failure is MalformedBinary."""

    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MalformedBinary("truncated binary")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def byte(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        # unsigned LEB128, at most 5 bytes, must fit in 32 bits
        result = 0
        shift = 0
        for _ in range(5):
            b = self.byte()
            result |= (b & 0x7F) << shift
            if not (b & 0x80):
                if result >= 1 << 32:
                    raise MalformedBinary("LEB128 value exceeds u32")
                return result
            shift += 7
        raise MalformedBinary("overlong LEB128 encoding")

    def name(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedBinary("import name is not valid UTF-8") from exc

    def valtype(self) -> str:
        b = self.byte()
        if b not in _VALTYPE:
            raise MalformedBinary(f"unknown value type 0x{b:02x}")
        return _VALTYPE[b]

    def limits(self) -> tuple[int, int | None]:
        flag = self.byte()
        if flag == 0x00:
            return self.u32(), None
        if flag == 0x01:
            lo = self.u32()
            hi = self.u32()
            return lo, hi
        raise MalformedBinary(f"invalid limits flag 0x{flag:02x}")


def render_func_signature(params: list[str], results: list[str]) -> str:
    """Canonical text form of a function type, e.g. "(i32, i32) -> ()"."""
    left = "(" + ", ".join(params) + ")"
    if len(results) == 1:
        right = results[0]
    else:
        right = "(" + ", ".join(results) + ")"
    return f"{left} -> {right}"


def _parse_functype(r: _Reader) -> str:
    if r.byte() != 0x60:
        raise MalformedBinary("type section entry is not a function type")
    params = [r.valtype() for _ in range(r.u32())]
    results = [r.valtype() for _ in range(r.u32())]
    return render_func_signature(params, results)


def _render_limits(limits: tuple[int, int | None]) -> str:
    lo, hi = limits
    return f"{lo}" if hi is None else f"{lo} {hi}"


def _parse_import(r: _Reader, functypes: list[str]) -> ImportRecord:
    namespace = r.name()
    name = r.name()
    if not namespace or not name:
        raise MalformedBinary("empty import namespace or name")
    desc = r.byte()
    if desc == 0x00:
        typeidx = r.u32()
        if typeidx >= len(functypes):
            raise MalformedBinary(f"import references unknown type index {typeidx}")
        return ImportRecord(namespace, name, "function", functypes[typeidx])
    if desc == 0x01:
        reftype = r.valtype()
        sig = f"(table {_render_limits(r.limits())} {reftype})"
        return ImportRecord(namespace, name, "table", sig)
    if desc == 0x02:
        sig = f"(memory {_render_limits(r.limits())})"
        return ImportRecord(namespace, name, "memory", sig)
    if desc == 0x03:
        vt = r.valtype()
        mut = r.byte()
        if mut not in (0x00, 0x01):
            raise MalformedBinary("invalid global mutability flag")
        sig = f"(global (mut {vt}))" if mut else f"(global {vt})"
        return ImportRecord(namespace, name, "global", sig)
    raise MalformedBinary(f"unknown import descriptor 0x{desc:02x}")


def iter_sections(data: bytes):
    """Yield (section_id, start, end) over a module's section framing."""
    r = _Reader(data)
    if r.take(4) != WASM_MAGIC:
        raise MalformedBinary("bad magic bytes")
    if r.take(4) != WASM_VERSION:
        raise MalformedBinary("unsupported WASM version")
    seen: set[int] = set()
    while r.pos < r.end:
        section_id = r.byte()
        size = r.u32()
        if section_id > 12:
            raise MalformedBinary(f"unknown section id {section_id}")
        if section_id != 0:
            if section_id in seen:
                raise MalformedBinary(f"duplicate section id {section_id}")
            seen.add(section_id)
        start = r.pos
        r.take(size)
        yield section_id, start, r.pos


def parse_imports(binary_bytes: bytes) -> ModuleImports:
    """Extract the complete import section of a WASM binary, in order.

    The artifact hash is computed over the exact input bytes before any
    parsing decision, so a malformed binary still has a well-defined hash.
    """
    artifact_hash = hash_bytes(binary_bytes)
    if not binary_bytes:
        raise MalformedBinary("empty input")
    if len(binary_bytes) > MAX_BINARY_BYTES:
        raise MalformedBinary("binary exceeds the 64 MiB acceptance limit")

    functypes: list[str] = []
    imports: list[ImportRecord] = []
    for section_id, start, end in iter_sections(binary_bytes):
        if section_id == SECTION_TYPE:
            r = _Reader(binary_bytes, start, end)
            functypes = [_parse_functype(r) for _ in range(r.u32())]
            if r.pos != end:
                raise MalformedBinary("trailing bytes in type section")
        elif section_id == SECTION_IMPORT:
            r = _Reader(binary_bytes, start, end)
            imports = [_parse_import(r, functypes) for _ in range(r.u32())]
            if r.pos != end:
                raise MalformedBinary("trailing bytes in import section")

    return ModuleImports(
        imports=tuple(imports),
        artifact_hash=artifact_hash,
        byte_length=len(binary_bytes),
    )
