import pytest

from enclavefm.codec import DecodeError
from enclavefm.defenses import ALL_ON
from enclavefm.enclave import PlatformRoot, launch_enclave
from enclavefm.errors import DecryptFail, DigestMismatch, KeyNotProvisioned, NoModelLoaded
from enclavefm.manifest import parse_manifest
from enclavefm.model_store import (
    HEADER_SIZE,
    EncryptedModelPackage,
    ModelWeights,
    attest_model_hash,
    decrypt_package,
    load_model,
    pack_model,
    provision_key,
    unpack_model,
    unpack_model_in_enclave,
)
from enclavefm import crypto
from enclavefm.testbed import sample_manifest, sample_software

KEY = bytes(range(32))
KID = bytes(16)
SMALL = ModelWeights.generate(3, vocab_size=16, embed_dim=4, context_window=3)


@pytest.fixture
def rt():
    platform = PlatformRoot.generate()
    return launch_enclave(platform, parse_manifest(sample_manifest("inference")), sample_software()).enter()


def test_generate_is_deterministic():
    assert ModelWeights.generate(3, 16, 4, 3) == SMALL
    assert ModelWeights.generate(4, 16, 4, 3) != SMALL


def test_serialize_roundtrip():
    assert ModelWeights.deserialize(SMALL.serialize()) == SMALL


def test_deserialize_rejects_inconsistent_sizes():
    with pytest.raises(DecodeError):
        ModelWeights.deserialize(SMALL.serialize()[:-1])
    with pytest.raises(DecodeError):
        ModelWeights.deserialize(b"XXXX" + SMALL.serialize()[4:])


def test_dimensions_must_be_positive():
    with pytest.raises(ValueError):
        ModelWeights.generate(1, vocab_size=0)


def test_pack_unpack():
    pkg = pack_model(SMALL, KEY, KID)
    assert pkg.model_digest == SMALL.digest()
    again = EncryptedModelPackage.from_bytes(pkg.to_bytes())
    assert unpack_model(again, KEY) == SMALL


def test_package_hides_weights():
    raw = pack_model(SMALL, KEY, KID).to_bytes()
    assert SMALL.serialize()[24:40] not in raw


def test_wrong_key_and_tamper():
    pkg = pack_model(SMALL, KEY, KID)
    with pytest.raises(DecryptFail):
        unpack_model(pkg, bytes(32))
    raw = bytearray(pkg.to_bytes())
    raw[HEADER_SIZE - 1] ^= 1  # digest byte in the header
    with pytest.raises(DecryptFail):
        decrypt_package(EncryptedModelPackage.from_bytes(bytes(raw)), KEY)


def test_structural_errors_are_decrypt_failures():
    for bad in (b"", b"NOPE" + bytes(100), b"FMTE\x09" + bytes(100)):
        with pytest.raises(DecryptFail):
            EncryptedModelPackage.from_bytes(bad)


def test_header_digest_must_match_payload():
    # a correctly encrypted payload whose header claims a different digest
    pkg = EncryptedModelPackage(KID, bytes(12), bytes(32), b"")
    ct = crypto.aead_seal(KEY, pkg.nonce, SMALL.serialize(), pkg.header())
    with pytest.raises(DigestMismatch):
        decrypt_package(EncryptedModelPackage(KID, bytes(12), bytes(32), ct), KEY)


def test_without_authentication_tamper_is_accepted():
    pkg = pack_model(SMALL, KEY, KID)
    raw = bytearray(pkg.to_bytes())
    raw[HEADER_SIZE + 30] ^= 1
    plain = decrypt_package(EncryptedModelPackage.from_bytes(bytes(raw)), KEY,
                            ALL_ON.without("package_authentication"))
    assert plain != SMALL.serialize() and len(plain) == len(SMALL.serialize())


def test_in_enclave_load(rt):
    with pytest.raises(KeyNotProvisioned):
        unpack_model_in_enclave(rt, pack_model(SMALL, KEY, KID), KID)
    with pytest.raises(NoModelLoaded):
        load_model(rt)
    provision_key(rt, KID, KEY)
    assert unpack_model_in_enclave(rt, pack_model(SMALL, KEY, KID).to_bytes(), KID) == SMALL
    assert load_model(rt) == SMALL
    assert attest_model_hash(rt).report_data == SMALL.digest()


def test_in_enclave_load_rejects_other_key_id(rt):
    provision_key(rt, KID, KEY)
    provision_key(rt, b"\x01" * 16, KEY)
    with pytest.raises(DecryptFail):
        unpack_model_in_enclave(rt, pack_model(SMALL, KEY, KID), b"\x01" * 16)


def test_loaded_model_is_encrypted_in_memory(rt):
    provision_key(rt, KID, KEY)
    unpack_model_in_enclave(rt, pack_model(SMALL, KEY, KID), KID)
    region = rt.slots["model"].region
    assert rt.enclave.host_read(region.offset, region.length) != SMALL.serialize()
