#!/usr/bin/env python3
"""Freeze golden values for the test suite using only the standard library.

Each golden is derived here from first principles (literal tables and bare
hashlib/json) so the committed values constitute an independent oracle for
the package's canonical serialization and hash-chain code. Rerunning the
script must reproduce the committed files byte for byte.
"""

import hashlib
import json
from pathlib import Path

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "golden"


def canonical(doc) -> bytes:
    return json.dumps(
        doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# the version-1 whitelist: namespace, name, purity class, signature
V1_ENTRIES = [
    ("mashin", "get_input", "pure_data", "(i32) -> ()"),
    ("mashin", "get_input_len", "pure_data", "() -> i32"),
    ("mashin", "log", "pure_data", "(i32, i32) -> ()"),
    ("mashin", "set_output", "pure_directive", "(i32, i32) -> ()"),
]

# emit_call's imports in declaration order, with their v1 verdicts
EMIT_CALL_IMPORTS = [
    ("mashin", "get_input_len", "() -> i32", "pure_data"),
    ("mashin", "get_input", "(i32) -> ()", "pure_data"),
    ("mashin", "set_output", "(i32, i32) -> ()", "pure_directive"),
    ("mashin", "log", "(i32, i32) -> ()", "pure_data"),
]


def freeze_whitelist() -> bytes:
    doc = {
        "version": 1,
        "entries": [
            {
                "namespace": namespace,
                "name": name,
                "class": purity_class,
                "type_signature": signature,
            }
            for namespace, name, purity_class, signature in sorted(V1_ENTRIES)
        ],
    }
    blob = canonical(doc)
    digest = sha256(blob)
    (OUT_DIR / "whitelist_v1.json").write_text(
        json.dumps(
            {"canonical": blob.decode(), "content_hash": digest.hex()}, indent=1
        )
        + "\n"
    )
    return digest


def freeze_proof(whitelist_hash: bytes) -> None:
    imports = [
        {
            "namespace": namespace,
            "name": name,
            "kind": "function",
            "type_signature": signature,
        }
        for namespace, name, signature, _ in EMIT_CALL_IMPORTS
    ]
    doc = {
        "imports": imports,
        "classifications": [
            {"import": imp, "verdict": verdict}
            for imp, (_, _, _, verdict) in zip(imports, EMIT_CALL_IMPORTS)
        ],
        "conclusion": "pure",
        "whitelist_version": 1,
        "whitelist_hash": whitelist_hash.hex(),
    }
    blob = canonical(doc)
    (OUT_DIR / "proof_emit_call.json").write_text(
        json.dumps(
            {"canonical": blob.decode(), "proof_hash": sha256(blob).hex()}, indent=1
        )
        + "\n"
    )


def freeze_chain() -> None:
    steps = []
    prev = bytes(32)
    for index in (1, 2, 3):
        parts = {
            "directive_hash": sha256(f"directive-{index}".encode()),
            "governance_hash": sha256(f"governance-{index}".encode()),
            "result_hash": sha256(f"result-{index}".encode()),
            "purity_cert_hash": sha256(f"cert-{index}".encode()),
        }
        prev = sha256(
            parts["directive_hash"]
            + parts["governance_hash"]
            + parts["result_hash"]
            + parts["purity_cert_hash"]
            + prev
        )
        steps.append(
            {
                "step_index": index,
                **{k: v.hex() for k, v in parts.items()},
                "execution_hash_vp": prev.hex(),
            }
        )
    machine_version_hash = sha256(b"machine-version")
    input_hash = sha256(b"input")
    output_hash = sha256(b"output")
    run = sha256(machine_version_hash + input_hash + prev + output_hash)
    (OUT_DIR / "chain_3step.json").write_text(
        json.dumps(
            {
                "steps": steps,
                "machine_version_hash": machine_version_hash.hex(),
                "input_hash": input_hash.hex(),
                "output_hash": output_hash.hex(),
                "run_hash_vp": run.hex(),
            },
            indent=1,
        )
        + "\n"
    )


def freeze_cross_org() -> None:
    caller = sha256(b"caller-run")
    attestation = sha256(b"callee-attestation")
    callee = sha256(b"callee-run")
    (OUT_DIR / "cross_org.json").write_text(
        json.dumps(
            {
                "caller_run_hash": caller.hex(),
                "callee_attestation_hash": attestation.hex(),
                "callee_run_hash": callee.hex(),
                "cross_org_hash": sha256(caller + attestation + callee).hex(),
            },
            indent=1,
        )
        + "\n"
    )


def main() -> int:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    whitelist_hash = freeze_whitelist()
    freeze_proof(whitelist_hash)
    freeze_chain()
    freeze_cross_org()
    for path in sorted(OUT_DIR.glob("*.json")):
        print(path.name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
