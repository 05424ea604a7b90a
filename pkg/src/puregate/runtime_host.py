"""Execution host for gate-accepted executors.

Instantiates a verified module with exactly the host functions named in the
runtime whitelist, runs its `plan` export, and collects the output. All data
crosses the WASM boundary through host calls: the input document is fetched
via get_input_len/get_input, the output document leaves via set_output (at
most once), log lines via log, and, under the extended whitelist, directive
constructors append effect descriptions to a host-side accumulator.

plan's ABI: exported as `plan() -> i32`, 0 meaning ok and any nonzero value
an executor-declared error code (surfaced as PlanFailed, a deterministic
abnormal termination).

Every invocation gets a fresh instance and private memory; nothing survives
between calls.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

from .canonical import CanonicalError, canonical_bytes, canonical_loads
from .gate import GateDecision
from .wasmvm import (
    FuelExhausted,
    HostFunc,
    Instance,
    MemoryExceeded,
    MissingExport,
    Timeout,
    Trap,
    VMError,
    instantiate,
)
from .whitelist import Whitelist, builtin_whitelist

DEFAULT_FUEL = 10**8
DEFAULT_MEMORY_MAX = 64 * 1024 * 1024
DEFAULT_WALL_CLOCK_MS = 1000

DIRECTIVE_KINDS = (
    "llm_call",
    "http_request",
    "file_op",
    "call_machine",
    "memory_op",
    "code_eval",
    "emit_event",
)

# Directive-constructor host functions and the directive kind each one emits.
CONSTRUCTOR_KINDS = {
    "directive_llm_call": "llm_call",
    "directive_llm_call_stream": "llm_call",
    "directive_http_request": "http_request",
    "directive_file_op": "file_op",
    "directive_call_machine": "call_machine",
    "directive_memory_op": "memory_op",
    "directive_db_op": "memory_op",
    "directive_exec_op": "code_eval",
    "directive_emit_event": "emit_event",
    "directive_broadcast": "emit_event",
}


class GateNotPassed(Exception):
    """Refusal to instantiate: no accepting gate decision for these bytes."""


class MalformedOutput(VMError):
    """The executor's output protocol was violated."""


class PlanFailed(Trap):
    """plan returned a nonzero executor-declared error code."""

    def __init__(self, code: int):
        super().__init__(f"plan returned error code {code}")
        self.code = code


@dataclass(frozen=True)
class ResourceLimits:
    fuel: int = DEFAULT_FUEL
    memory_max: int = DEFAULT_MEMORY_MAX
    wall_clock_ms: int = DEFAULT_WALL_CLOCK_MS

    def __post_init__(self) -> None:
        if self.fuel <= 0 or self.memory_max <= 0 or self.wall_clock_ms <= 0:
            raise ValueError("resource limits must all be positive")


@dataclass(frozen=True)
class ExecutorInput:
    step_config: Any
    context: Any

    def serialize(self) -> bytes:
        return canonical_bytes(
            {"context": self.context, "step_config": self.step_config}
        )


@dataclass(frozen=True)
class Directive:
    kind: str
    payload: Any

    def __post_init__(self) -> None:
        if self.kind not in DIRECTIVE_KINDS:
            raise ValueError(f"unknown directive kind: {self.kind!r}")

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "payload": self.payload}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Directive":
        return cls(kind=obj["kind"], payload=obj["payload"])


@dataclass(frozen=True)
class ExecutorOutput:
    result: Any
    directives: tuple[Directive, ...]
    log_lines: tuple[str, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "result": self.result,
            "directives": [d.to_json() for d in self.directives],
            "log_lines": list(self.log_lines),
        }


@dataclass
class _HostState:
    """Per-invocation mutable buffers the host functions write into."""

    input_bytes: bytes
    output_docs: list[bytes] = field(default_factory=list)
    directives: list[Directive] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)


def build_host_functions(
    whitelist: Whitelist, state: _HostState
) -> dict[tuple[str, str], HostFunc]:
    """The import-resolution table: exactly one entry per whitelist entry.

    Capability closure depends on this being a bijection with the whitelist:
    nothing outside the whitelist is resolvable, and everything inside it is.
    Entries without a real implementation in this host profile resolve to a
    deterministic trap, which grants no effect capability.
    """
    table: dict[tuple[str, str], HostFunc] = {}
    for entry in whitelist.entries:
        impl = _implementation_for(entry.name, state)
        table[(entry.namespace, entry.name)] = HostFunc(entry.type_signature, impl)
    return table


def _implementation_for(name: str, state: _HostState):
    if name == "get_input_len":
        def get_input_len(inst: Instance) -> int:
            return len(state.input_bytes)

        return get_input_len
    if name == "get_input":
        def get_input(inst: Instance, ptr: int) -> None:
            inst.write_mem(ptr, state.input_bytes)

        return get_input
    if name == "set_output":
        def set_output(inst: Instance, ptr: int, length: int) -> None:
            if state.output_docs:
                raise MalformedOutput("set_output called more than once")
            state.output_docs.append(inst.read_mem(ptr, length))

        return set_output
    if name == "log":
        def log(inst: Instance, ptr: int, length: int) -> None:
            state.log_lines.append(
                inst.read_mem(ptr, length).decode("utf-8", errors="replace")
            )

        return log
    if name in CONSTRUCTOR_KINDS:
        kind = CONSTRUCTOR_KINDS[name]

        def construct(inst: Instance, ptr: int, length: int) -> None:
            raw = inst.read_mem(ptr, length)
            try:
                payload = canonical_loads(raw)
            except (CanonicalError, ValueError) as exc:
                raise MalformedOutput(
                    f"{name} payload is not a valid document: {exc}"
                ) from exc
            state.directives.append(Directive(kind=kind, payload=payload))

        return construct

    def unprovided(inst: Instance, *args: int) -> None:
        # whitelisted but not implemented by this host profile; calling it
        # terminates deterministically and performs nothing
        raise Trap(f"host function {name} is not provided by this profile")

    return unprovided


def _parse_output_doc(raw: bytes, state: _HostState) -> ExecutorOutput:
    try:
        doc = canonical_loads(raw)
    except (CanonicalError, ValueError) as exc:
        raise MalformedOutput(f"output is not a valid document: {exc}") from exc
    if not isinstance(doc, dict) or "result" not in doc:
        raise MalformedOutput("output document must be an object with a result")
    doc_directives = doc.get("directives", [])
    if not isinstance(doc_directives, list):
        raise MalformedOutput("directives must be a list")
    directives = list(state.directives)
    for item in doc_directives:
        try:
            directives.append(Directive.from_json(item))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedOutput(f"bad directive in output: {exc}") from exc
    return ExecutorOutput(
        result=doc["result"],
        directives=tuple(directives),
        log_lines=tuple(state.log_lines),
    )


def instantiate_and_plan(
    binary_bytes: bytes,
    decision: GateDecision,
    executor_input: ExecutorInput,
    limits: ResourceLimits = ResourceLimits(),
    runtime_whitelist: Whitelist | None = None,
    timings: dict[str, float] | None = None,
) -> ExecutorOutput:
    """Run one gated invocation: fresh instance, plan call, output collection.

    The gate decision is re-bound to the exact bytes given here; a decision
    for different bytes (or a rejection) refuses instantiation.
    """
    t_total = time.perf_counter()
    if runtime_whitelist is None:
        runtime_whitelist = builtin_whitelist(1)

    artifact_hash = hashlib.sha256(binary_bytes).digest()
    if not decision.accepted or decision.artifact_hash != artifact_hash:
        raise GateNotPassed(
            "no accepting gate decision for these bytes; refusing to run"
        )

    t0 = time.perf_counter()
    input_bytes = executor_input.serialize()
    serialize_us = (time.perf_counter() - t0) * 1e6

    state = _HostState(input_bytes=input_bytes)
    host_funcs = build_host_functions(runtime_whitelist, state)

    t0 = time.perf_counter()
    instance = instantiate(binary_bytes, host_funcs, limits.memory_max)
    instantiate_us = (time.perf_counter() - t0) * 1e6

    t0 = time.perf_counter()
    results = instance.invoke("plan", [], limits.fuel, limits.wall_clock_ms)
    call_us = (time.perf_counter() - t0) * 1e6

    code = results[0] if results else 0
    if code != 0:
        raise PlanFailed(code)
    if not state.output_docs:
        raise MalformedOutput("plan returned without calling set_output")
    output = _parse_output_doc(state.output_docs[0], state)

    if timings is not None:
        timings.update(
            {
                "serialize_us": serialize_us,
                "instantiate_us": instantiate_us,
                "call_us": call_us,
                "total_us": (time.perf_counter() - t_total) * 1e6,
            }
        )
    return output


def determinism_check(
    binary_bytes: bytes,
    decision: GateDecision,
    executor_input: ExecutorInput,
    limits: ResourceLimits = ResourceLimits(),
    n: int = 20,
    runtime_whitelist: Whitelist | None = None,
) -> dict[str, Any]:
    """Run plan n times on identical input; count divergent serialized outputs.

    An errored run is represented by its error class and message, so n runs
    that all fail identically count as zero divergences.
    """
    digests: list[str] = []
    for _ in range(n):
        try:
            output = instantiate_and_plan(
                binary_bytes, decision, executor_input, limits, runtime_whitelist
            )
            rendering = canonical_bytes(output.to_json())
        except (VMError, GateNotPassed) as exc:
            rendering = canonical_bytes(
                {"error": type(exc).__name__, "message": str(exc)}
            )
        digests.append(hashlib.sha256(rendering).hexdigest())
    divergences = sum(1 for d in digests if d != digests[0])
    return {"divergences": divergences, "outputs": digests}


__all__ = [
    "DIRECTIVE_KINDS",
    "CONSTRUCTOR_KINDS",
    "Directive",
    "ExecutorInput",
    "ExecutorOutput",
    "GateNotPassed",
    "MalformedOutput",
    "PlanFailed",
    "ResourceLimits",
    "build_host_functions",
    "determinism_check",
    "instantiate_and_plan",
    # re-exported execution errors
    "Trap",
    "FuelExhausted",
    "MemoryExceeded",
    "Timeout",
    "MissingExport",
]
