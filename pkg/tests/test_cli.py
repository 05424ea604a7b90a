import json
import shutil
import subprocess

import pytest

from puregate.attestation import OrgPolicy, save_policy
from puregate.cli import main
from puregate.whitelist import builtin_whitelist

RUNTIME_ID = "mashin-sim"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def run_json(capsys, *argv):
    code, out = run_cli(capsys, *argv, "--json")
    return code, json.loads(out)


@pytest.fixture()
def workspace(tmp_path, monkeypatch, capsys):
    """Keys, a certified executor, and an input doc under one tmp root."""
    monkeypatch.setenv("PUREGATE_KEY_DIR", str(tmp_path / "keys"))
    monkeypatch.chdir(tmp_path)

    code, doc = run_json(capsys, "keygen", "--out", "certifier")
    assert code == 0
    pub = doc["public_key"]

    code, doc = run_json(
        capsys, "fixtures", "build", "emit_call", "echo", "--out-dir", "bins"
    )
    assert code == 0

    wasm = tmp_path / "bins" / "emit_call.wasm"
    code, doc = run_json(
        capsys,
        "certify", str(wasm),
        "--key", "certifier",
        "--timestamp", "1700000000",
    )
    assert code == 0
    (tmp_path / "input.json").write_text(
        json.dumps({"step_config": {"x": 1}, "context": {}})
    )
    return {
        "root": tmp_path,
        "pub": pub,
        "wasm": wasm,
        "cert": f"{wasm}.cert",
        "proof": f"{wasm}.proof",
    }


def test_keygen_writes_into_key_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PUREGATE_KEY_DIR", str(tmp_path / "keys"))
    code, doc = run_json(capsys, "keygen", "--out", "alpha")
    assert code == 0
    assert (tmp_path / "keys" / "alpha.key").exists()
    assert (tmp_path / "keys" / "alpha.pub").read_text().strip() == doc[
        "public_key"
    ]


def test_certify_then_verify_accepts(workspace, capsys):
    code, doc = run_json(
        capsys,
        "verify", str(workspace["wasm"]),
        "--cert", workspace["cert"],
        "--proof", workspace["proof"],
        "--trust", workspace["pub"],
    )
    assert code == 0
    assert doc == {"verdict": "accept", "reason": None}


def test_verify_rejects_tampered_binary(workspace, capsys):
    tampered = workspace["root"] / "tampered.wasm"
    data = bytearray(workspace["wasm"].read_bytes())
    data[-1] ^= 0xFF
    tampered.write_bytes(bytes(data))
    code, doc = run_json(
        capsys,
        "verify", str(tampered),
        "--cert", workspace["cert"],
        "--proof", workspace["proof"],
        "--trust", workspace["pub"],
    )
    assert code == 1
    assert doc["reason"] == "artifact_hash_mismatch"


def test_gate_accepts_and_reports_timing(workspace, capsys):
    code, doc = run_json(
        capsys,
        "gate", str(workspace["wasm"]),
        "--cert", workspace["cert"],
        "--proof", workspace["proof"],
        "--trust", workspace["pub"],
    )
    assert code == 0
    assert doc["verdict"] == "accept"
    assert doc["timings"]["gate_us"] > 0


def test_gate_rejects_untrusted_certifier(workspace, capsys):
    code, doc = run_json(
        capsys,
        "gate", str(workspace["wasm"]),
        "--cert", workspace["cert"],
        "--proof", workspace["proof"],
        "--trust", "ab" * 32,
    )
    assert code == 1
    assert doc["reason"] == "untrusted_certifier"
    assert doc["failed_step"] == 1


def test_run_executes_and_reports_output(workspace, capsys):
    code, doc = run_json(
        capsys,
        "run", str(workspace["wasm"]),
        "--cert", workspace["cert"],
        "--proof", workspace["proof"],
        "--input", str(workspace["root"] / "input.json"),
        "--trust", workspace["pub"],
        "--repeat", "2",
    )
    assert code == 0
    kinds = [d["kind"] for d in doc["output"]["directives"]]
    assert kinds == ["call_machine"]
    assert len(doc["timings"]) == 2
    assert all(t["total_us"] > 0 for t in doc["timings"])


def test_run_machine_writes_chain_and_effects(workspace, capsys):
    root = workspace["root"]
    machine = root / "machine.json"
    machine.write_text(json.dumps({
        "machine": "demo",
        "input": {"q": 1},
        "steps": [
            {"executor_ref": "emitter", "config": {"n": 1}},
            {"executor_ref": "emitter", "config": {"n": 2}},
        ],
        "executors": {
            "emitter": {
                "wasm": str(workspace["wasm"]),
                "cert": workspace["cert"],
                "proof": workspace["proof"],
            }
        },
    }))
    code, doc = run_json(
        capsys,
        "run-machine", str(machine),
        "--trust", workspace["pub"],
        "--chain-out", str(root / "run.chain"),
        "--effects-out", str(root / "run.effects"),
    )
    assert code == 0
    assert doc["steps"] == 2
    assert len(doc["results"]) == 2

    code, doc = run_json(capsys, "provenance", "verify", str(root / "run.chain"))
    assert code == 0
    assert doc == {"valid": True, "failure": None}

    effects = [
        json.loads(line)
        for line in (root / "run.effects").read_text().splitlines()
    ]
    assert len(effects) == 2
    assert all(e["directive"]["kind"] == "call_machine" for e in effects)


def test_provenance_verify_rejects_tampered_chain(workspace, capsys):
    root = workspace["root"]
    machine = root / "m.json"
    machine.write_text(json.dumps({
        "machine": "demo",
        "input": None,
        "steps": [{"executor_ref": "e"}],
        "executors": {
            "e": {
                "wasm": str(workspace["wasm"]),
                "cert": workspace["cert"],
                "proof": workspace["proof"],
            }
        },
    }))
    code, _ = run_json(
        capsys, "run-machine", str(machine), "--trust", workspace["pub"],
        "--chain-out", str(root / "t.chain"),
    )
    assert code == 0
    lines = (root / "t.chain").read_text().splitlines()
    step = json.loads(lines[0])
    step["result_hash"] = ("00" * 32)
    lines[0] = json.dumps(step)
    (root / "t.chain").write_text("\n".join(lines) + "\n")
    code, doc = run_json(capsys, "provenance", "verify", str(root / "t.chain"))
    assert code == 1
    assert doc == {"valid": False, "failure": "step:1"}


def test_attest_and_attest_verify(workspace, capsys):
    root = workspace["root"]
    wl = builtin_whitelist(1)
    env = {
        "runtime_identity": RUNTIME_ID,
        "runtime_version": "1.0",
        "whitelist_version": 1,
        "whitelist_hash": wl.content_hash.hex(),
        "accepted_certifier_keys": [workspace["pub"]],
    }
    (root / "env.json").write_text(json.dumps(env))
    code, doc = run_json(
        capsys,
        "attest", str(workspace["wasm"]),
        "--cert", workspace["cert"],
        "--proof", workspace["proof"],
        "--env", str(root / "env.json"),
        "--env-key", "certifier",
        "--out", str(root / "record.attest"),
    )
    assert code == 0
    assert (root / "record.attest").exists()

    env_pub = (root / "keys" / "certifier.pub").read_text().strip()
    policy = OrgPolicy(
        accepted_whitelists=frozenset([wl.content_hash]),
        trusted_runtimes=frozenset([RUNTIME_ID]),
        trusted_certifiers=frozenset([bytes.fromhex(workspace["pub"])]),
        minimum_required=1,
        trusted_env_keys=frozenset([bytes.fromhex(env_pub)]),
    )
    save_policy(policy, root / "policy.json")
    code, doc = run_json(
        capsys,
        "attest-verify", str(root / "record.attest"),
        "--policy", str(root / "policy.json"),
        "--whitelist", "v1",
    )
    assert code == 0
    assert doc["accepted"] is True
    assert doc["conjuncts"] == {
        "whitelist_accepted": True,
        "runtime_trusted": True,
        "certifier_trusted": True,
        "version_current": True,
    }

    strict = OrgPolicy(
        accepted_whitelists=policy.accepted_whitelists,
        trusted_runtimes=policy.trusted_runtimes,
        trusted_certifiers=policy.trusted_certifiers,
        minimum_required=2,
        trusted_env_keys=policy.trusted_env_keys,
    )
    save_policy(strict, root / "strict.json")
    code, doc = run_json(
        capsys,
        "attest-verify", str(root / "record.attest"),
        "--policy", str(root / "strict.json"),
    )
    assert code == 1
    assert doc["step"] == 4
    assert doc["conjuncts"]["version_current"] is False


def test_whitelist_hash_sign_verify(workspace, capsys):
    root = workspace["root"]
    code, doc = run_json(capsys, "whitelist", "hash", "v1")
    assert code == 0
    assert doc["version"] == 1
    assert doc["content_hash"] == builtin_whitelist(1).content_hash.hex()

    src = root / "wl.json"
    shutil.copy(_builtin_v1_path(), src)
    code, doc = run_json(capsys, "whitelist", "verify", str(src))
    assert code == 1  # unsigned

    code, doc = run_json(
        capsys, "whitelist", "sign", str(src),
        "--key", "certifier", "--out", str(root / "wl_signed.json"),
    )
    assert code == 0
    code, doc = run_json(
        capsys, "whitelist", "verify", str(root / "wl_signed.json")
    )
    assert code == 0


def _builtin_v1_path():
    import pathlib

    import puregate

    return pathlib.Path(puregate.__file__).parent / "whitelists" / "v1.json"


def test_bench_runs_one_metric(workspace, capsys):
    code, doc = run_json(
        capsys, "bench", "--metric", "cert_size", "--executor", "emit_call"
    )
    assert code == 0
    assert 0 < doc["median_us"] <= 4096


def test_bench_rejects_insufficient_samples(workspace, capsys):
    code = main(["bench", "--metric", "verify_latency", "--samples", "3"])
    assert code == 2


def test_missing_file_is_usage_error(workspace, capsys):
    code = main([
        "gate", "no_such.wasm",
        "--cert", "x.cert", "--proof", "x.proof", "--trust", "ab" * 32,
    ])
    assert code == 2


def test_unknown_fixture_is_usage_error(workspace, capsys):
    code = main(["fixtures", "build", "ghost_fixture"])
    assert code == 2


def test_console_script_is_installed(tmp_path):
    exe = shutil.which("puregate")
    if exe is None:
        pytest.skip("console script not on PATH in this environment")
    proc = subprocess.run(
        [exe, "whitelist", "hash", "v1", "--json"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["version"] == 1
