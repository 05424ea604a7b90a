import dataclasses
import random

import pytest

from puregate import signing
from puregate.certificate import (
    certificate_from_json,
    certificate_to_json,
    keypair_from_seed,
    sign_certificate,
)
from puregate.fixtures import certified_bundle, fixture_binary
from puregate.gate import (
    CACHE_INVALIDATION_CAUSES,
    DecisionLog,
    GateCache,
    R_ARTIFACT_HASH_MISMATCH,
    R_CONCLUSION_NOT_PURE,
    R_DISALLOWED_IMPORT,
    R_IMPORT_MISMATCH,
    R_INVALID_SIGNATURE,
    R_MALFORMED_BINARY,
    R_PROOF_HASH_MISMATCH,
    R_STALE_OR_UNKNOWN_WHITELIST,
    R_UNTRUSTED_CERTIFIER,
    gate_verify,
    invalidate_cache,
)
from puregate.proof import build_proof, proof_from_json, proof_to_json
from puregate.wasm_inspect import parse_imports
from puregate.whitelist import (
    HOST_NAMESPACE,
    PURE_DATA,
    WhitelistEntry,
    make_whitelist,
)
from tests.conftest import FIXED_NOW


def _gate(bundle, wl, keys, **kwargs):
    binary, proof, cert = bundle
    return gate_verify(binary, cert, proof, wl, keys, **kwargs)


def _adversarial_whitelist(binary, version=1):
    """A whitelist permissive enough to certify any function-import binary."""
    entries = {
        (i.namespace, i.name): WhitelistEntry(
            i.namespace, i.name, PURE_DATA, i.type_signature
        )
        for i in parse_imports(binary).imports
        if i.kind == "function"
    }
    return make_whitelist(version, entries.values())


def test_accepts_well_formed_bundle(bundles, wl_v1, certifier_key):
    decision = _gate(bundles["emit_call"], wl_v1, [certifier_key.public_key])
    assert decision.accepted
    assert decision.reason is None and decision.failed_step is None
    assert decision.artifact_hash == bundles["emit_call"][2].artifact_hash


def test_step1_untrusted_certifier(bundles, wl_v1, rogue_key):
    decision = _gate(bundles["emit_call"], wl_v1, [rogue_key.public_key])
    assert (decision.reason, decision.failed_step) == (R_UNTRUSTED_CERTIFIER, 1)


def test_step1_invalid_signature(bundles, wl_v1, certifier_key):
    binary, proof, cert = bundles["emit_call"]
    doc = certificate_to_json(cert)
    raw = bytearray(bytes.fromhex(doc["signature"]))
    raw[-1] ^= 0x01
    doc["signature"] = raw.hex()
    tampered = certificate_from_json(doc)
    decision = gate_verify(
        binary, tampered, proof, wl_v1, [certifier_key.public_key]
    )
    assert (decision.reason, decision.failed_step) == (R_INVALID_SIGNATURE, 1)


def test_step2_artifact_binding(bundles, wl_v1, certifier_key):
    _, proof, cert = bundles["emit_call"]
    other = fixture_binary("emit_poc")
    decision = gate_verify(other, cert, proof, wl_v1, [certifier_key.public_key])
    assert (decision.reason, decision.failed_step) == (R_ARTIFACT_HASH_MISMATCH, 2)


def test_step3_proof_binding(bundles, wl_v1, certifier_key):
    binary, _, cert = bundles["emit_call"]
    _, other_proof, _ = bundles["emit_poc"]
    decision = gate_verify(
        binary, cert, other_proof, wl_v1, [certifier_key.public_key]
    )
    assert (decision.reason, decision.failed_step) == (R_PROOF_HASH_MISMATCH, 3)


def test_step4_malformed_binary(bundles, wl_v1, certifier_key):
    """Unparseable bytes surface at re-extraction, after the hash bindings."""
    binary, proof, cert = bundles["emit_call"]
    truncated = binary[:20]
    proof_adv = build_proof(parse_imports(binary), wl_v1)
    adversary = keypair_from_seed(b"\x55" * 32)
    # certificate adversarially re-bound to the truncated bytes
    cert_doc = certificate_to_json(
        sign_certificate(binary, proof_adv, adversary, FIXED_NOW)
    )
    import hashlib

    cert_doc["artifact_hash"] = hashlib.sha256(truncated).hexdigest()
    message = bytes.fromhex(cert_doc["artifact_hash"]) + bytes.fromhex(
        cert_doc["proof_hash"]
    )
    cert_doc["signature"] = signing.sign(adversary.private_key, message).hex()
    rebound = certificate_from_json(cert_doc)
    decision = gate_verify(
        truncated, rebound, proof_adv, wl_v1, [adversary.public_key]
    )
    assert (decision.reason, decision.failed_step) == (R_MALFORMED_BINARY, 4)


def test_step4_import_mismatch(bundles, wl_v1, certifier_key):
    """A proof whose import list was reordered no longer matches the binary."""
    binary, proof, cert = bundles["emit_call"]
    doc = proof_to_json(proof)
    doc["imports"] = doc["imports"][::-1]
    doc["classifications"] = doc["classifications"][::-1]
    reordered = proof_from_json(doc)
    adversary = keypair_from_seed(b"\x66" * 32)
    forged = dataclasses.replace(
        sign_certificate(binary, proof, adversary, FIXED_NOW)
    )
    import hashlib

    from puregate.proof import proof_hash as ph

    cert_doc = certificate_to_json(forged)
    cert_doc["proof_hash"] = ph(reordered).hex()
    message = bytes.fromhex(cert_doc["artifact_hash"]) + bytes.fromhex(
        cert_doc["proof_hash"]
    )
    cert_doc["signature"] = signing.sign(adversary.private_key, message).hex()
    rebound = certificate_from_json(cert_doc)
    decision = gate_verify(
        binary, rebound, reordered, wl_v1, [adversary.public_key]
    )
    assert (decision.reason, decision.failed_step) == (R_IMPORT_MISMATCH, 4)


@pytest.mark.parametrize(
    "fixture,expected_detail",
    [
        ("bypass_undeclared", "mashin.clock_now"),
        ("bypass_wasi", "wasi_snapshot_preview1.fd_write"),
        ("bypass_table_import", "mashin.shared_table"),
        ("bypass_second_namespace", "evil.exfiltrate"),
        ("mismatched_sig", "mashin.get_input"),
    ],
)
def test_step5_disallowed_import(wl_v1, fixture, expected_detail):
    """Adversarially certified bypass binaries fail re-classification."""
    binary = fixture_binary(fixture)
    adversary = keypair_from_seed(b"\x77" * 32)
    adversarial = _adversarial_whitelist(binary)
    proof = build_proof(parse_imports(binary), adversarial)
    if proof.conclusion != "pure":
        # non-function imports can never be whitelisted, so the adversary
        # forges the classification lines instead; the signer does not
        # re-derive them, only the gate does
        doc = proof_to_json(proof)
        for cls in doc["classifications"]:
            cls["verdict"] = "pure_data"
        doc["conclusion"] = "pure"
        proof = proof_from_json(doc)
    cert = sign_certificate(binary, proof, adversary, FIXED_NOW)
    decision = gate_verify(binary, cert, proof, wl_v1, [adversary.public_key])
    assert (decision.reason, decision.failed_step) == (R_DISALLOWED_IMPORT, 5)
    assert decision.detail == expected_detail


def test_step5_stale_whitelist(wl_v2, certifier_key):
    """A version-1 certificate is stale once policy demands version 2."""
    bundle = certified_bundle(
        "emit_poc", certifier_key, make_whitelist(1, wl_v2.entries), FIXED_NOW
    )
    binary, proof, cert = bundle
    decision = gate_verify(
        binary,
        cert,
        proof,
        wl_v2,
        [certifier_key.public_key],
        minimum_version=2,
        known_hashes={1: cert.metadata.whitelist_hash},
    )
    assert (decision.reason, decision.failed_step) == (
        R_STALE_OR_UNKNOWN_WHITELIST,
        5,
    )
    assert decision.detail == "StaleWhitelist"


def test_step5_future_whitelist(wl_v1, wl_v2, certifier_key):
    binary, proof, cert = certified_bundle("emit_poc", certifier_key, wl_v2, FIXED_NOW)
    decision = gate_verify(binary, cert, proof, wl_v1, [certifier_key.public_key])
    assert (decision.reason, decision.failed_step) == (
        R_STALE_OR_UNKNOWN_WHITELIST,
        5,
    )
    assert decision.detail == "FutureWhitelist"


def test_step5_unknown_whitelist_hash(wl_v1, certifier_key):
    """Same version number, different content: hash pinning catches it."""
    variant = make_whitelist(
        1,
        list(wl_v1.entries)
        + [WhitelistEntry(HOST_NAMESPACE, "extra", PURE_DATA, "() -> i32")],
    )
    binary, proof, cert = certified_bundle("emit_poc", certifier_key, variant, FIXED_NOW)
    decision = gate_verify(binary, cert, proof, wl_v1, [certifier_key.public_key])
    assert (decision.reason, decision.failed_step) == (
        R_STALE_OR_UNKNOWN_WHITELIST,
        5,
    )
    assert decision.detail == "UnknownWhitelistHash"


def test_step6_conclusion_not_pure(wl_v1, certifier_key):
    """An adversarially signed impure proof falls at the final check."""
    binary = fixture_binary("emit_poc")
    proof = build_proof(parse_imports(binary), wl_v1)
    doc = proof_to_json(proof)
    doc["conclusion"] = "impure"
    impure_proof = proof_from_json(doc)
    adversary = keypair_from_seed(b"\x88" * 32)
    from puregate.proof import proof_hash as ph

    cert = sign_certificate(binary, proof, adversary, FIXED_NOW)
    cert_doc = certificate_to_json(cert)
    cert_doc["proof_hash"] = ph(impure_proof).hex()
    message = bytes.fromhex(cert_doc["artifact_hash"]) + bytes.fromhex(
        cert_doc["proof_hash"]
    )
    cert_doc["signature"] = signing.sign(adversary.private_key, message).hex()
    rebound = certificate_from_json(cert_doc)
    decision = gate_verify(
        binary, rebound, impure_proof, wl_v1, [adversary.public_key]
    )
    assert (decision.reason, decision.failed_step) == (R_CONCLUSION_NOT_PURE, 6)


# ---------------------------------------------------------------------------
# cache behavior
# ---------------------------------------------------------------------------

def test_cache_hit_skips_all_crypto(bundles, wl_v1, certifier_key):
    cache = GateCache()
    keys = [certifier_key.public_key]
    cold = _gate(bundles["emit_call"], wl_v1, keys, cache=cache)
    assert cold.accepted and not cold.from_cache

    signing.reset_verify_call_count()
    warm = _gate(bundles["emit_call"], wl_v1, keys, cache=cache)
    assert warm.accepted and warm.from_cache
    assert signing.verify_call_count == 0


def test_rejections_are_never_cached(bundles, wl_v1, rogue_key):
    cache = GateCache()
    decision = _gate(bundles["emit_call"], wl_v1, [rogue_key.public_key], cache=cache)
    assert not decision.accepted
    assert cache.accepted == {}


def test_cache_entry_records_whitelist_snapshot(bundles, wl_v1, certifier_key):
    cache = GateCache()
    decision = _gate(
        bundles["emit_call"],
        wl_v1,
        [certifier_key.public_key],
        cache=cache,
        now=1234.5,
    )
    entry = cache.accepted[decision.artifact_hash]
    assert entry.whitelist_version == wl_v1.version
    assert entry.whitelist_hash == wl_v1.content_hash
    assert entry.decided_at == 1234.5


def test_whitelist_change_misses_cache(bundles, wl_v1, wl_v2, certifier_key):
    cache = GateCache()
    keys = [certifier_key.public_key]
    _gate(bundles["emit_call"], wl_v1, keys, cache=cache)
    # same artifact, new runtime whitelist: snapshot equality fails
    binary, proof, cert = bundles["emit_call"]
    decision = gate_verify(binary, cert, proof, wl_v2, keys, cache=cache)
    assert not decision.from_cache


def test_explicit_invalidation(bundles, wl_v1, certifier_key):
    cache = GateCache()
    log = DecisionLog()
    keys = [certifier_key.public_key]
    _gate(bundles["emit_call"], wl_v1, keys, cache=cache)
    assert cache.accepted
    invalidate_cache(cache, "keys_rotated", log, now=5.0)
    assert cache.accepted == {}
    assert log.events[-1] == {
        "event": "cache_invalidated",
        "timestamp": 5.0,
        "cause": "keys_rotated",
    }
    decision = _gate(bundles["emit_call"], wl_v1, keys, cache=cache)
    assert decision.accepted and not decision.from_cache


def test_unknown_invalidation_cause_rejected():
    with pytest.raises(ValueError):
        invalidate_cache(GateCache(), "tuesday")
    assert set(CACHE_INVALIDATION_CAUSES) == {
        "whitelist_changed",
        "keys_rotated",
        "manual",
    }


# ---------------------------------------------------------------------------
# decision log
# ---------------------------------------------------------------------------

def test_every_decision_logged_accepts_and_rejects(
    bundles, wl_v1, certifier_key, rogue_key, tmp_path
):
    log = DecisionLog(tmp_path / "decisions.jsonl")
    keys = [certifier_key.public_key]
    _gate(bundles["emit_call"], wl_v1, keys, log=log, now=1.0)
    _gate(bundles["emit_call"], wl_v1, [rogue_key.public_key], log=log, now=2.0)

    assert [e["verdict"] for e in log.events] == ["accept", "reject"]
    assert all(e["event"] == "gate_decision" for e in log.events)
    assert all(e["whitelist_hash"] == wl_v1.content_hash.hex() for e in log.events)

    replayed = DecisionLog.read_events(tmp_path / "decisions.jsonl")
    assert replayed == log.events


def test_cache_hits_are_also_logged(bundles, wl_v1, certifier_key):
    cache = GateCache()
    log = DecisionLog()
    keys = [certifier_key.public_key]
    _gate(bundles["emit_call"], wl_v1, keys, cache=cache, log=log)
    _gate(bundles["emit_call"], wl_v1, keys, cache=cache, log=log)
    assert [e["from_cache"] for e in log.events] == [False, True]


# ---------------------------------------------------------------------------
# certificate transfer resistance
# ---------------------------------------------------------------------------

def test_single_byte_cert_mutations_rejected_early(bundles, wl_v1, certifier_key):
    """Flipping any byte of the certificate kills it at step 1 (or 2/3)."""
    binary, proof, cert = bundles["emit_poc"]
    keys = [certifier_key.public_key]
    doc = certificate_to_json(cert)
    rng = random.Random(99)
    for field in ("artifact_hash", "proof_hash", "signature"):
        for _ in range(8):
            raw = bytearray(bytes.fromhex(doc[field]))
            raw[rng.randrange(len(raw))] ^= 1 + rng.randrange(255)
            mutated_doc = dict(doc)
            mutated_doc[field] = raw.hex()
            mutated = certificate_from_json(mutated_doc)
            decision = gate_verify(binary, mutated, proof, wl_v1, keys)
            assert not decision.accepted
            assert decision.failed_step in (1, 2, 3)
