#!/usr/bin/env python3
"""Independent chain-hash oracle: recompute a chain file with bare hashlib.

Reads a run-chain JSONL file and reprints every execution hash plus the run
hash, derived from nothing but the recorded component digests. Deliberately
imports no project code so the test suite can diff the two implementations.
"""

import hashlib
import json
import sys

GENESIS = bytes(32)


def main(path: str) -> int:
    steps = []
    run = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            if doc["type"] == "step":
                steps.append(doc)
            elif doc["type"] == "run":
                run = doc

    prev = GENESIS
    for doc in steps:
        prev = hashlib.sha256(
            bytes.fromhex(doc["directive_hash"])
            + bytes.fromhex(doc["governance_hash"])
            + bytes.fromhex(doc["result_hash"])
            + bytes.fromhex(doc["purity_cert_hash"])
            + prev
        ).digest()
        print(f"step:{doc['step_index']} {prev.hex()}")

    if run is not None:
        run_hash = hashlib.sha256(
            bytes.fromhex(run["machine_version_hash"])
            + bytes.fromhex(run["input_hash"])
            + prev
            + bytes.fromhex(run["output_hash"])
        ).digest()
        print(f"run {run_hash.hex()}")
    return 0


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("usage: golden_oracle.py <chain-file>", file=sys.stderr)
        sys.exit(2)
    sys.exit(main(sys.argv[1]))
