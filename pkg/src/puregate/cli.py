"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 on success, 1 when a verifier rejects (gate, certificate,
attestation, provenance), 2 on usage or file errors. Every subcommand
accepts --json for machine-readable output on stdout.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from .attestation import (
    AttestationFormatError,
    EnvironmentDescriptor,
    GateNeverAccepted,
    build_attestation,
    attestation_hash,
    load_attestation,
    load_policy,
    save_attestation,
    verify_attestation,
)
from .bench import METRICS, bench
from .canonical import CanonicalError, canonical_dumps, canonical_loads
from .certificate import (
    CertificateFormatError,
    KeyPair,
    ProofBinaryMismatch,
    RefuseImpure,
    certificate_bytes,
    keypair_from_seed,
    load_certificate,
    save_certificate,
    sign_certificate,
    verify_certificate_signature,
)
from .fixtures import (
    ImpureFixture,
    UnknownFixture,
    certified_bundle,
    fixture_binary,
    list_fixtures,
)
from .gate import DecisionLog, GateCache, gate_verify
from .interpreter import (
    ExecutorRejected,
    RuntimeServices,
    TierPolicy,
    WasmExecutor,
    default_governance,
    run_machine,
)
from .proof import (
    ProofFormatError,
    build_proof,
    load_proof,
    proof_hash,
    save_proof,
)
from .provenance import (
    ProvenanceFormatError,
    cross_org_hash,
    load_run_record,
    save_run_record,
    verify_chain,
)
from .runtime_host import ExecutorInput, ResourceLimits, instantiate_and_plan
from .signing import SigningError, generate_seed, load_public_key, load_seed, save_keypair
from .wasm_inspect import MalformedBinary, parse_imports
from .whitelist import (
    WhitelistFormatError,
    builtin_whitelist,
    load_whitelist,
    sign_whitelist,
    save_whitelist,
    verify_whitelist_signature,
)

KEY_DIR_ENV = "PUREGATE_KEY_DIR"

_USAGE_ERRORS = (
    OSError,
    CanonicalError,
    CertificateFormatError,
    ProofFormatError,
    WhitelistFormatError,
    AttestationFormatError,
    ProvenanceFormatError,
    MalformedBinary,
    SigningError,
    UnknownFixture,
    ValueError,
    KeyError,
)
_DOMAIN_ERRORS = (RefuseImpure, ProofBinaryMismatch, GateNeverAccepted, ImpureFixture)


def _key_dir() -> Path:
    return Path(os.environ.get(KEY_DIR_ENV, "."))


def _resolve_key_path(name: str) -> Path:
    """A bare name refers to the key directory; a path is used as given."""
    path = Path(name)
    if path.exists():
        return path
    candidates = [_key_dir() / name, _key_dir() / f"{name}.key"]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    return path  # let the read fail with a normal file error


def _load_keypair(name: str) -> KeyPair:
    return keypair_from_seed(load_seed(_resolve_key_path(name)))


def _trusted_keys(values: Sequence[str]) -> list[bytes]:
    keys = []
    for value in values:
        path = Path(value)
        if path.exists() or (_key_dir() / value).exists():
            actual = path if path.exists() else _key_dir() / value
            keys.append(load_public_key(actual))
        else:
            key = bytes.fromhex(value)
            if len(key) != 32:
                raise ValueError(f"public key must be 32 bytes, got {len(key)}")
            keys.append(key)
    return keys


def _load_runtime_whitelist(value: str | None):
    if value is None:
        return builtin_whitelist(1)
    if value in ("v1", "v2-extended"):
        return builtin_whitelist(1 if value == "v1" else 2)
    return load_whitelist(Path(value))


def _emit(args: argparse.Namespace, doc: dict[str, Any], human: str) -> None:
    if args.json:
        print(canonical_dumps(doc))
    else:
        print(human)


def _read_json(path: str) -> Any:
    return canonical_loads(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_keygen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if not out.is_absolute() and out.parent == Path("."):
        out = _key_dir() / out
    out.parent.mkdir(parents=True, exist_ok=True)
    seed = generate_seed()
    key_path = save_keypair(out, seed)
    pair = keypair_from_seed(seed)
    _emit(
        args,
        {"key_file": str(key_path), "public_key": pair.public_key.hex()},
        f"wrote {key_path} (+.pub), public key {pair.public_key.hex()}",
    )
    return 0


def _cmd_certify(args: argparse.Namespace) -> int:
    binary = Path(args.wasm).read_bytes()
    whitelist = _load_runtime_whitelist(args.whitelist)
    key = _load_keypair(args.key)
    module = parse_imports(binary)
    proof = build_proof(module, whitelist)
    timestamp = args.timestamp if args.timestamp is not None else int(time.time())
    cert = sign_certificate(binary, proof, key, timestamp)

    out_cert = Path(args.out_cert or f"{args.wasm}.cert")
    out_proof = Path(args.out_proof or f"{args.wasm}.proof")
    save_certificate(cert, out_cert)
    save_proof(proof, out_proof)
    _emit(
        args,
        {
            "artifact_hash": cert.artifact_hash.hex(),
            "proof_hash": cert.proof_hash.hex(),
            "certificate": str(out_cert),
            "proof": str(out_proof),
            "certificate_bytes": len(certificate_bytes(cert)),
        },
        f"certified {args.wasm}: artifact {cert.artifact_hash.hex()[:16]}…, "
        f"cert → {out_cert}, proof → {out_proof}",
    )
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    binary = Path(args.wasm).read_bytes()
    cert = load_certificate(Path(args.cert))
    proof = load_proof(Path(args.proof))
    trusted = set(_trusted_keys(args.trust))

    check = verify_certificate_signature(cert, trusted)
    reason = None
    if not check.accepted:
        reason = check.reason
    elif cert.artifact_hash != parse_imports(binary).artifact_hash:
        reason = "artifact_hash_mismatch"
    elif cert.proof_hash != proof_hash(proof):
        reason = "proof_hash_mismatch"

    ok = reason is None
    _emit(
        args,
        {"verdict": "accept" if ok else "reject", "reason": reason},
        "accept" if ok else f"reject: {reason}",
    )
    return 0 if ok else 1


def _cmd_gate(args: argparse.Namespace) -> int:
    binary = Path(args.wasm).read_bytes()
    cert = load_certificate(Path(args.cert))
    proof = load_proof(Path(args.proof))
    whitelist = _load_runtime_whitelist(args.whitelist)
    trusted = _trusted_keys(args.trust)
    log = DecisionLog(Path(args.log)) if args.log else None

    start = time.perf_counter()
    decision = gate_verify(
        binary,
        cert,
        proof,
        whitelist,
        trusted,
        minimum_version=args.min_version,
        log=log,
    )
    gate_us = (time.perf_counter() - start) * 1e6
    doc = decision.to_json()
    doc["timings"] = {"gate_us": gate_us}
    human = (
        f"verdict={decision.verdict} reason={decision.reason} "
        f"failed_step={decision.failed_step} gate_us={gate_us:.1f}"
    )
    _emit(args, doc, human)
    return 0 if decision.accepted else 1


def _cmd_run(args: argparse.Namespace) -> int:
    binary = Path(args.wasm).read_bytes()
    cert = load_certificate(Path(args.cert))
    proof = load_proof(Path(args.proof))
    whitelist = _load_runtime_whitelist(args.whitelist)
    trusted = _trusted_keys(args.trust)
    input_doc = _read_json(args.input)

    decision = gate_verify(binary, cert, proof, whitelist, trusted)
    if not decision.accepted:
        _emit(
            args,
            decision.to_json(),
            f"gate rejected: {decision.reason} (step {decision.failed_step})",
        )
        return 1

    limits = ResourceLimits(
        fuel=args.fuel, memory_max=args.mem_max, wall_clock_ms=args.timeout
    )
    executor_input = ExecutorInput(
        step_config=input_doc.get("step_config", input_doc),
        context=input_doc.get("context", {}),
    )
    reports = []
    output = None
    for _ in range(args.repeat):
        timings: dict[str, float] = {}
        output = instantiate_and_plan(
            binary, decision, executor_input, limits, whitelist, timings
        )
        reports.append(timings)
    assert output is not None
    doc = {"output": output.to_json(), "timings": reports}
    human_lines = [canonical_dumps(output.to_json())]
    for timing in reports:
        human_lines.append(
            "instantiate_us={instantiate_us:.1f} serialize_us={serialize_us:.1f} "
            "call_us={call_us:.1f} total_us={total_us:.1f}".format(**timing)
        )
    _emit(args, doc, "\n".join(human_lines))
    return 0


def _cmd_run_machine(args: argparse.Namespace) -> int:
    machine_path = Path(args.machine)
    machine_bytes = machine_path.read_bytes()
    machine_doc = canonical_loads(machine_bytes)
    whitelist = _load_runtime_whitelist(args.whitelist)
    trusted = _trusted_keys(args.trust)

    registry: dict[str, WasmExecutor] = {}
    for name, paths in machine_doc.get("executors", {}).items():
        registry[name] = WasmExecutor(
            binary=Path(paths["wasm"]).read_bytes(),
            cert=load_certificate(Path(paths["cert"])),
            proof=load_proof(Path(paths["proof"])),
        )

    services = RuntimeServices(whitelist=whitelist, trusted_keys=trusted)
    governance = default_governance(tuple(args.allow_host))
    try:
        record, step_results = run_machine(
            {k: v for k, v in machine_doc.items() if k != "executors"},
            governance,
            TierPolicy(),
            registry,
            services,
            machine_bytes=machine_bytes,
        )
    except ExecutorRejected as exc:
        _emit(
            args,
            exc.decision.to_json(),
            f"gate rejected: {exc.decision.reason} (step {exc.decision.failed_step})",
        )
        return 1

    chain_out = Path(args.chain_out or machine_path.with_suffix(".chain.jsonl"))
    effects_out = Path(args.effects_out or machine_path.with_suffix(".effects.jsonl"))
    save_run_record(record, chain_out)
    with open(effects_out, "w", encoding="utf-8") as fh:
        for entry in governance.sink.log:
            fh.write(canonical_dumps(entry) + "\n")

    doc = {
        "run_hash": record.run_hash_vp.hex(),
        "steps": len(record.steps),
        "chain_file": str(chain_out),
        "effects_file": str(effects_out),
        "results": [list(r.results) for r in step_results],
    }
    _emit(
        args,
        doc,
        f"ran {len(record.steps)} steps, run hash {record.run_hash_vp.hex()[:16]}…, "
        f"chain → {chain_out}, effects → {effects_out}",
    )
    return 0


def _cmd_attest(args: argparse.Namespace) -> int:
    binary = Path(args.wasm).read_bytes()
    cert = load_certificate(Path(args.cert))
    proof = load_proof(Path(args.proof))
    env = EnvironmentDescriptor.from_json(_read_json(args.env))
    env_key = _load_keypair(args.env_key)
    whitelist = _load_runtime_whitelist(args.whitelist)
    trusted = _trusted_keys(args.trust) if args.trust else list(
        env.accepted_certifier_keys
    )

    log = DecisionLog()
    decision = gate_verify(binary, cert, proof, whitelist, trusted, log=log)
    if not decision.accepted:
        _emit(
            args,
            decision.to_json(),
            f"gate rejected: {decision.reason} (step {decision.failed_step})",
        )
        return 1

    record = build_attestation(cert, proof, env, env_key, log)
    out = Path(args.out or f"{args.wasm}.attest")
    save_attestation(record, out)
    _emit(
        args,
        {"attestation": str(out), "attestation_hash": attestation_hash(record).hex()},
        f"attestation → {out} ({attestation_hash(record).hex()[:16]}…)",
    )
    return 0


def _cmd_attest_verify(args: argparse.Namespace) -> int:
    record = load_attestation(Path(args.file))
    policy = load_policy(Path(args.policy))
    whitelists = None
    if args.whitelist:
        whitelists = {}
        for value in args.whitelist:
            wl = _load_runtime_whitelist(value)
            whitelists[wl.content_hash] = wl
    verdict = verify_attestation(record, policy, whitelists)
    doc: dict[str, Any] = {
        "accepted": verdict.accepted,
        "step": verdict.step,
        "reason": verdict.reason,
    }
    if verdict.compat is not None:
        doc["conjuncts"] = dict(verdict.compat.conjuncts)
    human = (
        "accept"
        if verdict.accepted
        else f"reject at step {verdict.step}: {verdict.reason}"
    )
    _emit(args, doc, human)
    return 0 if verdict.accepted else 1


def _cmd_whitelist(args: argparse.Namespace) -> int:
    whitelist = _load_runtime_whitelist(args.file)
    if args.action == "hash":
        _emit(
            args,
            {"version": whitelist.version, "content_hash": whitelist.content_hash.hex()},
            f"version {whitelist.version}, hash {whitelist.content_hash.hex()}",
        )
        return 0
    if args.action == "sign":
        seed = load_seed(_resolve_key_path(args.key))
        signed = sign_whitelist(whitelist, seed)
        out = Path(args.out or args.file)
        save_whitelist(signed, out)
        _emit(
            args,
            {
                "file": str(out),
                "authority_key": signed.authority_key.hex(),
            },
            f"signed whitelist → {out}",
        )
        return 0
    # verify
    ok = verify_whitelist_signature(whitelist)
    _emit(
        args,
        {"verdict": "accept" if ok else "reject"},
        "signature valid" if ok else "signature invalid or missing",
    )
    return 0 if ok else 1


def _cmd_provenance(args: argparse.Namespace) -> int:
    if args.action == "verify":
        record = load_run_record(Path(args.chain))
        verdict = verify_chain(record)
        doc = {"valid": verdict.valid, "failure": verdict.failure}
        _emit(
            args,
            doc,
            "chain valid" if verdict.valid else f"chain invalid at {verdict.failure}",
        )
        return 0 if verdict.valid else 1
    # cross-org
    caller = load_run_record(Path(args.caller))
    callee = load_run_record(Path(args.callee))
    record = load_attestation(Path(args.attestation))
    for name, rec in (("caller", caller), ("callee", callee)):
        verdict = verify_chain(rec)
        if not verdict.valid:
            _emit(
                args,
                {"valid": False, "chain": name, "failure": verdict.failure},
                f"{name} chain invalid at {verdict.failure}",
            )
            return 1
    combined = cross_org_hash(
        caller.run_hash_vp, attestation_hash(record), callee.run_hash_vp
    )
    _emit(
        args,
        {"cross_org_hash": combined.hex()},
        f"cross-org hash {combined.hex()}",
    )
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    report = bench(args.metric, args.executor, args.samples, args.warmup)
    human = (
        f"{report.metric} executor={report.executor} samples={report.samples} "
        f"warmup={report.warmup} median={report.median_us:.2f} "
        f"mean={report.mean_us:.2f} p99={report.p99_us:.2f}"
    )
    _emit(args, report.to_json(), human)
    return 0


def _cmd_fixtures(args: argparse.Namespace) -> int:
    names = args.names or list(list_fixtures())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names:
        binary = fixture_binary(name)
        path = out_dir / f"{name}.wasm"
        path.write_bytes(binary)
        written.append({"name": name, "path": str(path), "bytes": len(binary)})
    _emit(
        args,
        {"fixtures": written},
        "\n".join(f"{w['name']} → {w['path']} ({w['bytes']} B)" for w in written),
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="puregate",
        description="certified-purity toolchain and governed executor host",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--json", action="store_true", help="structured output")
        p.set_defaults(handler=handler)
        return p

    p = add("keygen", _cmd_keygen, help="generate an Ed25519 keypair")
    p.add_argument("--out", required=True, help="key file stem (bare names land in the key dir)")

    p = add("certify", _cmd_certify, help="build a proof and sign a certificate")
    p.add_argument("wasm")
    p.add_argument("--key", required=True)
    p.add_argument("--whitelist", default=None, help="file, 'v1', or 'v2-extended'")
    p.add_argument("--out-cert", default=None)
    p.add_argument("--out-proof", default=None)
    p.add_argument("--timestamp", type=int, default=None)

    p = add("verify", _cmd_verify, help="check a certificate against a binary")
    p.add_argument("wasm")
    p.add_argument("--cert", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--trust", nargs="+", required=True, metavar="PUBKEY")

    p = add("gate", _cmd_gate, help="run the full admission gate")
    p.add_argument("wasm")
    p.add_argument("--cert", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--whitelist", default=None)
    p.add_argument("--trust", nargs="+", required=True, metavar="PUBKEY")
    p.add_argument("--min-version", type=int, default=1)
    p.add_argument("--log", default=None, help="append decisions to this file")

    p = add("run", _cmd_run, help="gate and execute one executor")
    p.add_argument("wasm")
    p.add_argument("--cert", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--whitelist", default=None)
    p.add_argument("--trust", nargs="+", required=True, metavar="PUBKEY")
    p.add_argument("--fuel", type=int, default=ResourceLimits().fuel)
    p.add_argument("--mem-max", type=int, default=ResourceLimits().memory_max)
    p.add_argument("--timeout", type=int, default=ResourceLimits().wall_clock_ms)
    p.add_argument("--repeat", type=int, default=1)

    p = add("run-machine", _cmd_run_machine, help="execute a machine document")
    p.add_argument("machine")
    p.add_argument("--whitelist", default=None)
    p.add_argument("--trust", nargs="+", required=True, metavar="PUBKEY")
    p.add_argument("--chain-out", default=None)
    p.add_argument("--effects-out", default=None)
    p.add_argument(
        "--allow-host",
        nargs="*",
        default=["example.org"],
        help="hosts the http_request guard admits",
    )

    p = add("attest", _cmd_attest, help="gate locally and sign an attestation")
    p.add_argument("wasm")
    p.add_argument("--cert", required=True)
    p.add_argument("--proof", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--env-key", required=True)
    p.add_argument("--whitelist", default=None)
    p.add_argument("--trust", nargs="*", default=None, metavar="PUBKEY")
    p.add_argument("--out", default=None)

    p = add("attest-verify", _cmd_attest_verify, help="verify a received attestation")
    p.add_argument("file")
    p.add_argument("--policy", required=True)
    p.add_argument("--whitelist", nargs="*", default=None)

    p = add("whitelist", _cmd_whitelist, help="hash, sign, or verify a whitelist file")
    p.add_argument("action", choices=("hash", "sign", "verify"))
    p.add_argument("file")
    p.add_argument("--key", default=None)
    p.add_argument("--out", default=None)

    p = add("provenance", _cmd_provenance, help="verify chains and cross-org links")
    p.add_argument("action", choices=("verify", "cross-org"))
    p.add_argument("chain", nargs="?", default=None)
    p.add_argument("--caller", default=None)
    p.add_argument("--attestation", default=None)
    p.add_argument("--callee", default=None)

    p = add("bench", _cmd_bench, help="measure one evaluation metric")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--executor", default="emit_call")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)

    p = add("fixtures", _cmd_fixtures, help="assemble the fixture corpus to disk")
    p.add_argument("action", choices=("build",))
    p.add_argument("names", nargs="*")
    p.add_argument("--out-dir", default="fixtures_out")

    return parser


def _validate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    if args.command == "whitelist" and args.action == "sign" and not args.key:
        parser.error("whitelist sign requires --key")
    if args.command == "provenance":
        if args.action == "verify" and not args.chain:
            parser.error("provenance verify requires a chain file")
        if args.action == "cross-org" and not (
            args.caller and args.attestation and args.callee
        ):
            parser.error("provenance cross-org requires --caller, --attestation, --callee")


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _validate(args, parser)
    try:
        return args.handler(args)
    except _DOMAIN_ERRORS as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return 1
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
