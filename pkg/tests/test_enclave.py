import pytest

from enclavefm.codec import DecodeError
from enclavefm.defenses import ALL_ON
from enclavefm.enclave import (
    PAGE_SIZE,
    AttestationQuote,
    PlatformRoot,
    State,
    enclave_read_as_host,
    enclave_write_as_host,
    get_quote,
    launch_enclave,
)
from enclavefm.errors import DecryptFail, EnclaveCrashed, EnclaveError, IntegrityFault, NotOwner, SealMismatch, \
    ValidationFailed
from enclavefm.manifest import FileTree, parse_manifest
from enclavefm.testbed import sample_manifest, sample_measurement, sample_software


@pytest.fixture
def platform():
    return PlatformRoot.generate("application", b"fixed-seed")


@pytest.fixture
def enclave(platform):
    return launch_enclave(platform, parse_manifest(sample_manifest("inference")), sample_software())


def test_launch_measures_and_runs(enclave):
    assert enclave.state is State.RUNNING
    assert enclave.measurement == sample_measurement("inference")
    assert [r.label for r in enclave.regions][:2] == ["file:app/inference_server.py", "file:app/runtime.cfg"]


def test_launch_rejects_missing_trusted_file(platform):
    tree = FileTree({"app/inference_server.py": b"x"})
    with pytest.raises(ValidationFailed):
        launch_enclave(platform, parse_manifest(sample_manifest("inference")), tree)


def test_platform_from_seed_is_reproducible():
    a, b = PlatformRoot.generate("vm", b"s"), PlatformRoot.generate("vm", b"s")
    assert a.platform_id == b.platform_id and a.root_public == b.root_public
    assert PlatformRoot.generate("vm", b"t").platform_id != a.platform_id


def test_quote_signed_and_roundtrips(enclave, platform):
    rt = enclave.enter()
    q = rt.get_quote(b"\x01" * 32)
    assert q.signature_valid(platform.root_public)
    assert q.measurement == enclave.measurement and q.report_data == b"\x01" * 32
    assert AttestationQuote.from_bytes(q.to_bytes()) == q
    assert not q.signature_valid(PlatformRoot.generate().root_public)


def test_quote_requires_owner_and_32_bytes(enclave):
    with pytest.raises(NotOwner):
        get_quote(enclave, bytes(32))
    with pytest.raises(ValueError):
        enclave.enter().get_quote(b"short")


def test_quote_decode_rejects_bad_fields(enclave):
    raw = bytearray(enclave.enter().get_quote(bytes(32)).to_bytes())
    for mutate in (lambda b: b.__setitem__(0, 9), lambda b: b.__setitem__(1, 7), lambda b: b.extend(b"x")):
        bad = bytearray(raw)
        mutate(bad)
        with pytest.raises(DecodeError):
            AttestationQuote.from_bytes(bytes(bad))


def test_memory_roundtrip_across_pages(enclave):
    rt = enclave.enter()
    data = bytes(range(256)) * 40  # spans three pages
    region = rt.store(data, "blob")
    assert rt.read(region.offset, len(data)) == data
    rt.write(region.offset + PAGE_SIZE - 2, b"abcd")
    assert rt.read(region.offset + PAGE_SIZE - 2, 4) == b"abcd"


def test_host_sees_only_ciphertext(enclave):
    rt = enclave.enter()
    data = b"model weights " * 100
    region = rt.store(data)
    physical = enclave_read_as_host(enclave, region.offset, len(data))
    assert physical != data and b"model weights" not in physical


def test_host_write_faults_on_next_access_and_crash_is_absorbing(enclave):
    rt = enclave.enter()
    region = rt.store(b"x" * 100)
    enclave_write_as_host(enclave, region.offset, b"\x00")
    with pytest.raises(IntegrityFault):
        rt.read(region.offset, 1)
    assert enclave.crashed
    for op in (lambda: rt.read(0, 1), lambda: rt.get_quote(bytes(32)), lambda: rt.seal(b"k", b"v")):
        with pytest.raises(EnclaveCrashed):
            op()


def test_host_bit_flip_detected(enclave):
    rt = enclave.enter()
    region = rt.store(b"y" * 10)
    enclave.host_flip_bit(region.offset + 3, 5)
    with pytest.raises(IntegrityFault):
        rt.read(region.offset, 10)


def test_range_checks(enclave):
    rt = enclave.enter()
    with pytest.raises(EnclaveError):
        rt.read(enclave.size - 1, 2)
    with pytest.raises(EnclaveError):
        enclave.host_read(-1, 1)


def test_without_memory_encryption_host_sees_plaintext(platform):
    e = launch_enclave(platform, parse_manifest(sample_manifest("inference")), sample_software(),
                       ALL_ON.without("memory_encryption"))
    region = e.enter().store(b"plain text here")
    assert e.host_read(region.offset, 15) == b"plain text here"


def test_without_memory_integrity_tamper_goes_unnoticed(platform):
    e = launch_enclave(platform, parse_manifest(sample_manifest("inference")), sample_software(),
                       ALL_ON.without("memory_integrity"))
    rt = e.enter()
    region = rt.store(b"abc")
    e.host_flip_bit(region.offset, 0)
    assert rt.read(region.offset, 3) != b"abc"
    assert not e.crashed


def test_seal_unseal(enclave):
    rt = enclave.enter()
    blob = rt.seal(b"kid", b"secret")
    assert rt.unseal(b"kid") == b"secret"
    assert rt.unseal(b"kid", blob) == b"secret"
    with pytest.raises(DecryptFail):
        rt.unseal(b"other", blob)
    bad = bytearray(blob)
    bad[-1] ^= 1
    with pytest.raises(DecryptFail):
        rt.unseal(b"kid", bytes(bad))


def test_seal_bound_to_measurement_and_platform(platform):
    m = parse_manifest(sample_manifest("inference"))
    a = launch_enclave(platform, m, sample_software())
    blob = a.enter().seal(b"k", b"v")
    # same identity on a relaunch: unseals
    assert launch_enclave(platform, m, sample_software()).enter().unseal(b"k", blob) == b"v"
    other_sw = sample_software().replace("app/runtime.cfg", b"changed")
    with pytest.raises(SealMismatch):
        launch_enclave(platform, m, other_sw).enter().unseal(b"k", blob)
    with pytest.raises(SealMismatch):
        launch_enclave(PlatformRoot.generate(), m, sample_software()).enter().unseal(b"k", blob)
