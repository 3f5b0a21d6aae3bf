"""Command line entry point: every role and harness behind one binary.

Exit codes: 0 success, 1 usage or input error, 2 attestation failure
(including an aborted deployment), 3 integrity failure, 4 protocol error.

Services (``verifier serve``, ``csp host``) publish their address in the
data directory so clients started later in other terminals find them.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import signal
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import crypto, kvfile
from .adversary import AttackKind, AttackScenario, Fixture, SuiteReport, run_all, run_attack, run_negative_controls
from .bench import DEFAULT_TAX, MODES, BenchmarkReport, compare, run_benchmark
from .codec import DecodeError
from .enclave import TEE_TYPES, PlatformRoot
from .errors import (
    AttestationFailed,
    BindFailed,
    ChannelError,
    ConnectionClosed,
    CryptoError,
    DeploymentAborted,
    DigestMismatch,
    EnclaveError,
    EnclaveFMError,
    HandshakeMalformed,
    KeyBindingMismatch,
    ProtocolError,
    ReplayDetected,
    ServiceCrashed,
)
from .inference import GenerationConfig, generate
from .manifest import FileTree, compute_measurement, parse_manifest
from .model_store import EncryptedModelPackage, ModelWeights, load_model, pack_model, unpack_model
from .orchestrator import CspBehavior, CspHost, ServiceDescriptor, load_provider_config, provider_deploy, user_prompt
from .orchestrator.provider import deploy_rag_chain, render_documents, render_key_file
from .testbed import SAMPLE_DIR, build_testbed, sample_documents, sample_measurement
from .transport import SimNetwork, TcpNetwork
from .verifier import ReferencePolicy, parse_policy
from .verifier import serve as serve_verifier

log = logging.getLogger("enclavefm")

EXIT_OK, EXIT_USAGE, EXIT_ATTESTATION, EXIT_INTEGRITY, EXIT_PROTOCOL = 0, 1, 2, 3, 4
DATA_DIR_ENV = "ENCLAVEFM_DATA_DIR"
INTEGRITY_REASONS = {"DECRYPT_FAIL", "INTEGRITY_FAULT", "ENCLAVE_CRASHED", "DIGEST_MISMATCH",
                     "MODEL_DIGEST_MISMATCH"}


class UsageError(Exception):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, DeploymentAborted):
        return EXIT_INTEGRITY if exc.reason in INTEGRITY_REASONS else EXIT_ATTESTATION
    if isinstance(exc, (AttestationFailed, KeyBindingMismatch)):
        return EXIT_ATTESTATION
    if isinstance(exc, (EnclaveError, ServiceCrashed, CryptoError, DigestMismatch)):
        return EXIT_INTEGRITY
    if isinstance(exc, (ProtocolError, ConnectionClosed, ChannelError, HandshakeMalformed, ReplayDetected,
                        DecodeError, BindFailed)):
        return EXIT_PROTOCOL
    return EXIT_USAGE


# -- data directory ------------------------------------------------------------------

def data_dir(args) -> Path:
    path = Path(args.data_dir or os.environ.get(DATA_DIR_ENV) or "enclavefm-data").resolve()
    path.mkdir(parents=True, exist_ok=True)
    return path


def out_path(args, name: str) -> Path:
    """Output files live in the data directory; relative names resolve there."""
    base = data_dir(args)
    path = (base / name).resolve()
    if base != path and base not in path.parents:
        raise UsageError(f"{name}: outputs must stay inside the data directory {base}")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def in_path(args, name: str) -> Path:
    """Inputs are read as given, falling back to the data directory."""
    path = Path(name)
    if not path.exists() and not path.is_absolute():
        candidate = data_dir(args) / name
        if candidate.exists():
            return candidate
    if not path.exists():
        raise UsageError(f"{name}: no such file")
    return path


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_kv(args, name: str) -> dict:
    path = data_dir(args) / name
    if not path.exists():
        raise UsageError(f"{path} not found; is the service running with the same --data-dir?")
    return kvfile.parse_dict(path.read_text())


def load_platforms(args) -> dict[str, PlatformRoot]:
    """Simulated hardware roots, one per TEE type, created once per data directory."""
    path = data_dir(args) / "platforms.kv"
    if not path.exists():
        seeds = kvfile.render_pairs((t, os.urandom(32).hex()) for t in TEE_TYPES)
        try:
            with open(path, "x") as f:
                f.write(seeds)
        except FileExistsError:
            pass
    d = kvfile.parse_dict(path.read_text())
    return {t: PlatformRoot.generate(t, bytes.fromhex(d[t])) for t in TEE_TYPES}


def require_tcp(args) -> None:
    if (args.transport or "tcp") != "tcp":
        raise UsageError("this subcommand talks to other processes and needs --transport tcp")


def _interrupt(signum, frame):
    raise KeyboardInterrupt


def serve_forever(duration: float | None) -> None:
    signal.signal(signal.SIGTERM, _interrupt)
    deadline = None if duration is None else time.monotonic() + duration
    try:
        while deadline is None or time.monotonic() < deadline:
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass


def parse_tokens(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError("prompts are whitespace- or comma-separated token ids") from None


def format_tokens(tokens) -> str:
    return ",".join(map(str, tokens))


def step_printer(step: int, text: str) -> None:
    print(f"step {step} PASS {text}", flush=True)


def deploy_with_transcript(fn, *args, **kwargs):
    try:
        return fn(*args, on_step=step_printer, **kwargs)
    except DeploymentAborted as exc:
        print(f"step {exc.step} FAIL {exc}", flush=True)
        raise


# -- verifier ------------------------------------------------------------------------

def cmd_verifier_serve(args) -> int:
    require_tcp(args)
    platforms = load_platforms(args)
    if args.policy:
        policy = parse_policy(in_path(args, args.policy).read_text())
    else:
        policy = ReferencePolicy(
            frozenset(sample_measurement(k) for k in ("inference", "rag")), frozenset(TEE_TYPES),
            {p.platform_id: p.root_public for p in platforms.values()},
        )
    key_path = data_dir(args) / "verifier.key"
    if not key_path.exists():
        write_atomic(key_path, os.urandom(32).hex() + "\n")
    signing = crypto.SigningKeyPair.from_private_bytes(bytes.fromhex(key_path.read_text().strip()))
    verifier, listener = serve_verifier(args.bind, policy, TcpNetwork(), signing)
    write_atomic(data_dir(args) / "verifier.kv",
                 kvfile.render_pairs([("address", listener.address), ("public", verifier.public.hex())]))
    log.info("verifier listening on %s", listener.address)
    print(f"verifier listening on {listener.address} public {verifier.public.hex()}", flush=True)
    serve_forever(args.duration)
    listener.close()
    return EXIT_OK


# -- csp -----------------------------------------------------------------------------

def _swap_software(tree: FileTree) -> FileTree:
    """Launch slightly different server code than the provider asked for."""
    for path in ("app/inference_server.py", "app/rag_server.py"):
        if path in tree:
            content = bytearray(tree[path])
            content[0] ^= 0x01
            tree = tree.replace(path, bytes(content))
    return tree


def _flip_package_bit(package: bytes) -> bytes:
    if not package:
        return package
    data = bytearray(package)
    data[len(data) // 2] ^= 0x01
    return bytes(data)


def cmd_csp_host(args) -> int:
    require_tcp(args)
    behavior = CspBehavior()
    if args.misbehave == "swap-software":
        behavior.swap_software = _swap_software
    elif args.misbehave == "tamper-package":
        behavior.tamper_package = _flip_package_bit
    elif args.misbehave == "swap-model":
        if not args.swap_package:
            raise UsageError("--misbehave swap-model needs --swap-package")
        behavior.swap_package = in_path(args, args.swap_package).read_bytes()
    csp = CspHost(TcpNetwork(), load_platforms(args), enclave_tax=args.enclave_tax, behavior=behavior)
    listener = csp.serve(args.bind)
    write_atomic(data_dir(args) / "csp.kv", kvfile.render_pairs([("address", listener.address)]))
    print(f"csp listening on {listener.address} misbehave={args.misbehave or 'none'}", flush=True)
    serve_forever(args.duration)
    csp.close()
    return EXIT_OK


# -- provider ------------------------------------------------------------------------

def cmd_provider_pack(args) -> int:
    base = out_path(args, "provider")
    base.mkdir(exist_ok=True)
    weights = ModelWeights.generate(args.seed, args.vocab_size, args.embed_dim, args.context_window)
    key = os.urandom(crypto.KEY_SIZE)
    key_id = crypto.digest(b"key-id" + key)[:16]
    (base / "model.fmte").write_bytes(pack_model(weights, key, key_id).to_bytes())
    write_atomic(base / "model.key", render_key_file(key_id, key))
    os.chmod(base / "model.key", 0o600)
    for kind in ("inference", "rag"):
        shutil.copyfile(SAMPLE_DIR / f"{kind}.manifest", base / f"{kind}.manifest")
    shutil.copytree(SAMPLE_DIR / "software", base / "software", dirs_exist_ok=True)
    write_atomic(base / "documents.tsv", render_documents(sample_documents(args.vocab_size)))
    tree = FileTree.from_directory(base / "software")
    common = [("tee_type", args.tee_type), ("software_root", "software")]
    write_atomic(base / "inference.cfg", kvfile.render_pairs([
        ("kind", "inference"), *common, ("manifest", "inference.manifest"),
        ("package", "model.fmte"), ("key_file", "model.key"),
        ("expected_measurement", compute_measurement(parse_manifest((base / "inference.manifest").read_text()),
                                                     tree).hex()),
        ("expected_model_digest", weights.digest().hex()),
    ]))
    write_atomic(base / "rag.cfg", kvfile.render_pairs([
        ("kind", "rag"), *common, ("manifest", "rag.manifest"), ("documents", "documents.tsv"),
    ]))
    print(f"model digest {weights.digest().hex()}")
    print(f"wrote {base}/inference.cfg {base}/rag.cfg {base}/model.fmte")
    return EXIT_OK


def _provider_config(args, path: str):
    verifier = read_kv(args, "verifier.kv") if not args.verifier else {}
    address = args.verifier or verifier.get("address")
    public = bytes.fromhex(args.verifier_public) if args.verifier_public else \
        bytes.fromhex(verifier["public"]) if "public" in verifier else None
    return load_provider_config(in_path(args, path), verifier_address=address, verifier_public=public)


def _csp_address(args) -> str:
    return args.csp or read_kv(args, "csp.kv")["address"]


def _write_descriptor(args, desc: ServiceDescriptor, name: str) -> Path:
    path = out_path(args, name)
    write_atomic(path, desc.render())
    return path


def cmd_provider_deploy(args) -> int:
    require_tcp(args)
    cfg = _provider_config(args, args.config)
    desc = deploy_with_transcript(provider_deploy, cfg, _csp_address(args), TcpNetwork())
    path = _write_descriptor(args, desc, args.out or f"descriptors/{cfg.kind}.desc")
    print(f"descriptor written to {path}")
    return EXIT_OK


def cmd_provider_verify_model(args) -> int:
    from .orchestrator.provider import parse_key_file

    _, key = parse_key_file(in_path(args, args.key_file).read_text())
    pkg = EncryptedModelPackage.from_bytes(in_path(args, args.package).read_bytes())
    digest = unpack_model(pkg, key).digest()
    print(digest.hex())
    if args.expected_digest and bytes.fromhex(args.expected_digest) != digest:
        raise DigestMismatch(f"package holds {digest.hex()}, expected {args.expected_digest}")
    return EXIT_OK


def cmd_rag_deploy(args) -> int:
    require_tcp(args)
    rag_cfg = _provider_config(args, args.config)
    inference_cfg = _provider_config(args, args.inference_config)
    inference, rag = deploy_with_transcript(deploy_rag_chain, inference_cfg, rag_cfg, _csp_address(args), TcpNetwork())
    for desc in (rag, inference):
        print(f"descriptor written to {_write_descriptor(args, desc, f'descriptors/{desc.kind}.desc')}")
    return EXIT_OK


# -- user ----------------------------------------------------------------------------

def cmd_user_prompt(args) -> int:
    require_tcp(args)
    desc = ServiceDescriptor.parse(in_path(args, args.descriptor).read_text())
    text = in_path(args, args.prompt_file).read_text() if args.prompt_file else args.prompt
    if text is None:
        raise UsageError("give --prompt-file or --prompt")
    result = user_prompt(desc, parse_tokens(text), TcpNetwork(), mode=args.mode,
                         max_new_tokens=args.max_new_tokens, beam_width=args.beam_width)
    log.info("verdict passed=%s quote=%s", result.verdict.passed, result.verdict.quote_digest.hex())
    print(format_tokens(result.completion))
    return EXIT_OK


# -- attack --------------------------------------------------------------------------

def cmd_attack_run(args) -> int:
    fixture = Fixture(transport=args.transport or "inproc", seed=args.seed)
    kinds = tuple(AttackKind) if args.all else tuple(AttackKind(s) for s in args.scenario or ())
    if not kinds:
        raise UsageError("give --scenario NAME or --all")
    if args.negative_controls:
        suite = run_negative_controls(fixture, kinds)
    elif len(kinds) == len(AttackKind):
        suite = run_all(fixture, kinds)
    else:
        suite = SuiteReport(tuple(run_attack(AttackScenario(k), fixture) for k in kinds))
    text = suite.to_jsonl()
    if args.out:
        write_atomic(out_path(args, args.out), text)
    sys.stdout.write(text)
    return EXIT_OK if suite.passed else EXIT_INTEGRITY


# -- bench ---------------------------------------------------------------------------

def cmd_bench_run(args) -> int:
    names = ("bare", "enclave") if args.target == "both" else (args.target,)
    out = Path(args.out)
    paths = {name: out_path(args, str(out if len(names) == 1 else out.with_name(f"{out.stem}-{name}{out.suffix}")))
             for name in names}
    reports = run_benchmark(args.mode, names, min_tokens=args.min_tokens, enclave_tax=args.enclave_tax,
                            seed=args.seed)
    for name, report in reports.items():
        path = paths[name]
        path.write_text(report.to_jsonl())
        print(json.dumps({"target": name, "mode": args.mode, "report": str(path), **report.summary()},
                         sort_keys=True))
    return EXIT_OK


def cmd_bench_compare(args) -> int:
    baseline = BenchmarkReport.from_jsonl(in_path(args, args.baseline).read_text())
    secured = BenchmarkReport.from_jsonl(in_path(args, args.secured).read_text())
    print(compare(baseline, secured).to_json())
    return EXIT_OK


# -- manifest ------------------------------------------------------------------------

def cmd_manifest_measure(args) -> int:
    manifest = parse_manifest(in_path(args, args.manifest).read_text() if args.manifest else
                              (SAMPLE_DIR / "inference.manifest").read_text())
    tree = FileTree.from_directory(args.root) if args.root else FileTree.from_directory(SAMPLE_DIR / "software")
    print(compute_measurement(manifest, tree).hex())
    return EXIT_OK


# -- demo ----------------------------------------------------------------------------

def run_demo(transport: str = "inproc", *, rag: bool = False, prompt=None, max_new_tokens: int = 16,
             out=print) -> bool:
    """Deploy a service and query it as a user, printing one line per step."""
    network = SimNetwork() if transport == "inproc" else TcpNetwork()
    started = time.perf_counter()
    ok = True
    with build_testbed(network=network) as tb:
        out(f"setup verifier at {tb.verifier_address}, csp at {tb.csp_address}")
        if rag:
            rag_desc = tb.deploy(tb.rag_cfg, on_step=lambda step, text: out(f"step {step} PASS [rag] {text}"))
            out(f"  retrieval service published at {rag_desc.address}")
            cfg = replace(tb.inference_cfg, rag=rag_desc)
        else:
            cfg = tb.inference_cfg
        inference = tb.deploy(cfg, on_step=lambda step, text: out(f"step {step} PASS {text}"))
        out(f"  service published at {inference.address}")
        if prompt is None:
            prompt = next(iter(tb.rag_cfg.documents)) + (5, 6, 7) if rag else (3, 1, 4, 1, 5, 9)
        result = user_prompt(inference, list(prompt), network, mode="live", max_new_tokens=max_new_tokens)
        out(f"step 8 PASS user channel opened; prompt {format_tokens(prompt)} -> {format_tokens(result.completion)}")
        attested = result.verdict.passed and result.verdict.signature_valid(inference.verifier_public)
        out(f"step 9 {'PASS' if attested else 'FAIL'} user attested the enclave through the verifier while "
            f"opening the channel (quote {result.verdict.quote_digest.hex()[:16]}...)")
        ok &= attested

        rt = tb.csp.instance(inference.address).app.rt
        context = list(prompt)
        if rag:
            context = list(tb.rag_cfg.documents.get(tuple(prompt[:2]), [])) + context
        cfg = GenerationConfig(1, 1, max_new_tokens, len(context))
        direct = generate(load_model(rt), [context], cfg).completions[0]
        same = direct == result.completion
        out(f"check {'PASS' if same else 'FAIL'} completion bit-matches direct in-enclave generation")
        ok &= same
    out(f"{'PASS' if ok else 'FAIL'} end-to-end in {time.perf_counter() - started:.2f} s")
    return ok


def cmd_demo_e2e(args) -> int:
    prompt = parse_tokens(args.prompt) if args.prompt else None
    ok = run_demo(args.transport or "inproc", rag=args.rag, prompt=prompt, max_new_tokens=args.max_new_tokens,
                  out=lambda line: print(line, flush=True))
    return EXIT_OK if ok else EXIT_ATTESTATION


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enclavefm", description="Simulated confidential model deployment")
    parser.add_argument("--data-dir", help=f"state and outputs (default ${DATA_DIR_ENV} or ./enclavefm-data)")
    parser.add_argument("--transport", choices=("inproc", "tcp"),
                        help="inproc for single-process runs, tcp between processes")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log to stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    def group(name, help_text):
        p = sub.add_parser(name, help=help_text)
        return p.add_subparsers(dest="action", required=True)

    verifier = group("verifier", "attestation verifier service")
    p = verifier.add_parser("serve", help="run the verifier until interrupted")
    p.add_argument("--bind", default="127.0.0.1:0")
    p.add_argument("--policy", help="reference policy file (default: sample measurements, local platforms)")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.set_defaults(func=cmd_verifier_serve)

    csp = group("csp", "cloud service provider host")
    p = csp.add_parser("host", help="launch enclaves on request until interrupted")
    p.add_argument("--bind", default="127.0.0.1:0")
    p.add_argument("--misbehave", choices=("swap-software", "tamper-package", "swap-model"))
    p.add_argument("--swap-package", help="package served instead of the provider's with swap-model")
    p.add_argument("--enclave-tax", type=float, default=0.0)
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.set_defaults(func=cmd_csp_host)

    provider = group("provider", "model provider actions")
    p = provider.add_parser("pack", help="generate a model, encrypt it and write provider configs")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--context-window", type=int, default=8)
    p.add_argument("--tee-type", choices=TEE_TYPES, default="application")
    p.set_defaults(func=cmd_provider_pack)
    p = provider.add_parser("deploy", help="deploy a service on the CSP (steps 1-7)")
    p.add_argument("--config", default="provider/inference.cfg")
    p.add_argument("--csp", help="CSP address (default: from the data directory)")
    p.add_argument("--verifier", help="verifier address (default: from the data directory)")
    p.add_argument("--verifier-public", help="verifier public key, hex")
    p.add_argument("--out", help="descriptor file inside the data directory")
    p.set_defaults(func=cmd_provider_deploy)
    p = provider.add_parser("verify-model", help="decrypt a package locally and print the model digest")
    p.add_argument("--package", default="provider/model.fmte")
    p.add_argument("--key-file", default="provider/model.key")
    p.add_argument("--expected-digest")
    p.set_defaults(func=cmd_provider_verify_model)

    user = group("user", "end-user client")
    p = user.add_parser("prompt", help="attest the service and run one prompt")
    p.add_argument("--descriptor", default="descriptors/inference.desc")
    p.add_argument("--prompt-file")
    p.add_argument("--prompt", help="token ids, e.g. '3,1,4'")
    p.add_argument("--mode", choices=("live", "verdict"), default="live",
                   help="ask the verifier live or check the stapled verdict")
    p.add_argument("--max-new-tokens", type=int, default=16)
    p.add_argument("--beam-width", type=int, default=1)
    p.set_defaults(func=cmd_user_prompt)

    rag = group("rag", "retrieval service")
    p = rag.add_parser("deploy", help="deploy a retrieval enclave and an inference enclave that uses it")
    p.add_argument("--config", default="provider/rag.cfg")
    p.add_argument("--inference-config", default="provider/inference.cfg")
    p.add_argument("--csp")
    p.add_argument("--verifier")
    p.add_argument("--verifier-public")
    p.set_defaults(func=cmd_rag_deploy)

    attack = group("attack", "adversary harness")
    p = attack.add_parser("run", help="run attack scenarios; JSON lines on stdout")
    p.add_argument("--scenario", action="append", choices=[k.value for k in AttackKind])
    p.add_argument("--all", action="store_true")
    p.add_argument("--negative-controls", action="store_true",
                   help="switch off each scenario's defense and expect NOT blocked")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="also write the report inside the data directory")
    p.set_defaults(func=cmd_attack_run)

    bench = group("bench", "token latency and throughput benchmarks")
    p = bench.add_parser("run", help="measure targets and write reports")
    p.add_argument("--mode", choices=sorted(MODES), default="latency")
    p.add_argument("--target", choices=("bare", "enclave", "both"), default="both",
                   help="both interleaves the two targets step by step and writes OUT-bare and OUT-enclave")
    p.add_argument("--min-tokens", type=int, default=1000)
    p.add_argument("--enclave-tax", type=float, default=DEFAULT_TAX)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report file inside the data directory")
    p.set_defaults(func=cmd_bench_run)
    p = bench.add_parser("compare", help="overhead of a secured report over a baseline")
    p.add_argument("baseline")
    p.add_argument("secured")
    p.set_defaults(func=cmd_bench_compare)

    manifest = group("manifest", "manifests and measurements")
    p = manifest.add_parser("measure", help="print the measurement of a manifest over a software tree")
    p.add_argument("--manifest", help="manifest file (default: sample inference manifest)")
    p.add_argument("--root", help="software tree (default: sample software)")
    p.set_defaults(func=cmd_manifest_measure)

    demo = group("demo", "demonstrations")
    p = demo.add_parser("e2e", help="full deployment and query in one process, steps 1-9")
    p.add_argument("--rag", action="store_true", help="chain a retrieval service")
    p.add_argument("--prompt", help="token ids")
    p.add_argument("--max-new-tokens", type=int, default=16)
    p.set_defaults(func=cmd_demo_e2e)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EnclaveFMError, DecodeError) as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
