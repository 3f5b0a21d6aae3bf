import json
import os
import re
import subprocess
import sys

import pytest

from enclavefm.cli import EXIT_ATTESTATION, EXIT_INTEGRITY, EXIT_PROTOCOL, EXIT_USAGE, exit_code_for, main
from enclavefm.errors import DeploymentAborted, DigestMismatch, ReplayDetected, ServiceCrashed
from enclavefm.inference import greedy_decode
from enclavefm.model_store import ModelWeights

SUBCOMMANDS = [
    [], ["verifier", "serve"], ["csp", "host"], ["provider", "pack"], ["provider", "deploy"],
    ["provider", "verify-model"], ["user", "prompt"], ["rag", "deploy"], ["attack", "run"],
    ["bench", "run"], ["bench", "compare"], ["manifest", "measure"], ["demo", "e2e"],
]
SAMPLE_MEASUREMENT = "74a24b948da91ab3929fdaeea010e2087b730f7e5a32583ccc32665b3a28d319"


def run(data, *args, cwd=None, timeout=120):
    env = dict(os.environ, ENCLAVEFM_DATA_DIR=str(data))
    return subprocess.run([sys.executable, "-m", "enclavefm", *args], capture_output=True, text=True,
                          env=env, cwd=cwd, timeout=timeout)


class Service:
    def __init__(self, data, *args):
        env = dict(os.environ, ENCLAVEFM_DATA_DIR=str(data))
        self.proc = subprocess.Popen([sys.executable, "-m", "enclavefm", *args, "--duration", "120"],
                                     stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True, env=env)
        self.line = self.proc.stdout.readline()

    def stop(self):
        self.proc.terminate()
        self.proc.wait(timeout=10)
        self.proc.stdout.close()


@pytest.fixture
def services(tmp_path):
    started = []

    def start(*args):
        s = Service(tmp_path, *args)
        started.append(s)
        assert "listening on" in s.line, s.line
        return s

    yield start
    for s in started:
        s.stop()


@pytest.mark.parametrize("words", SUBCOMMANDS, ids=lambda w: "-".join(w) or "top")
def test_help(words, capsys):
    assert main([*words, "--help"]) == 0
    assert "usage:" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["bench", "run"]) == EXIT_USAGE  # --out missing
    assert main(["--data-dir", str(tmp_path), "user", "prompt"]) == EXIT_USAGE
    assert main(["--data-dir", str(tmp_path), "--transport", "inproc", "csp", "host"]) == EXIT_USAGE


def test_exit_code_mapping():
    assert exit_code_for(DeploymentAborted(5, "MEASUREMENT_MISMATCH")) == EXIT_ATTESTATION
    assert exit_code_for(DeploymentAborted(6, "DECRYPT_FAIL")) == EXIT_INTEGRITY
    assert exit_code_for(DeploymentAborted(7, "MODEL_DIGEST_MISMATCH")) == EXIT_INTEGRITY
    assert exit_code_for(ServiceCrashed("x")) == EXIT_INTEGRITY
    assert exit_code_for(DigestMismatch("x")) == EXIT_INTEGRITY
    assert exit_code_for(ReplayDetected("x")) == EXIT_PROTOCOL
    assert exit_code_for(ValueError("x")) == EXIT_USAGE


def test_manifest_measure(tmp_path, capsys):
    assert main(["--data-dir", str(tmp_path), "manifest", "measure"]) == 0
    assert capsys.readouterr().out.strip() == SAMPLE_MEASUREMENT


def test_outputs_confined_to_data_dir(tmp_path):
    r = run(tmp_path / "d", "bench", "run", "--out", "../escape.jsonl", "--min-tokens", "8")
    assert r.returncode == EXIT_USAGE and not (tmp_path / "escape-bare.jsonl").exists()
    r = run(tmp_path / "d", "attack", "run", "--scenario", "EAVESDROP_NETWORK", "--out", str(tmp_path / "a.jsonl"))
    assert r.returncode == EXIT_USAGE and not (tmp_path / "a.jsonl").exists()


def test_writes_nothing_outside_data_dir(tmp_path):
    cwd = tmp_path / "cwd"
    cwd.mkdir()
    assert run(tmp_path / "d", "provider", "pack", cwd=cwd).returncode == 0
    assert run(tmp_path / "d", "demo", "e2e", "--max-new-tokens", "2", cwd=cwd).returncode == 0
    assert list(cwd.iterdir()) == []


@pytest.mark.parametrize("rag", [False, True])
def test_demo_e2e(tmp_path, rag):
    r = run(tmp_path, "demo", "e2e", *(["--rag"] if rag else []))
    assert r.returncode == 0, r.stderr
    for n in range(1, 10):
        assert re.search(rf"^(\[rag\] )?step {n} PASS", r.stdout, re.M), r.stdout
    assert "check PASS completion bit-matches direct in-enclave generation" in r.stdout
    assert "FAIL" not in r.stdout


def test_attack_run_single_scenario(tmp_path):
    r = run(tmp_path, "attack", "run", "--scenario", "TAMPER_MEMORY", "--out", "attacks.jsonl")
    assert r.returncode == 0, r.stderr
    lines = [json.loads(line) for line in r.stdout.splitlines()]
    assert lines[0]["type"] == "header" and lines[-1]["passed"] is True
    attacks = [x for x in lines if x.get("type") == "attack"]
    assert len(attacks) == 1 and attacks[0]["blocked"]
    assert (tmp_path / "attacks.jsonl").read_text() == r.stdout


def test_bench_run_and_compare(tmp_path):
    r = run(tmp_path, "bench", "run", "--min-tokens", "32", "--out", "r.jsonl")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "r-bare.jsonl").exists() and (tmp_path / "r-enclave.jsonl").exists()
    r = run(tmp_path, "bench", "compare", str(tmp_path / "r-bare.jsonl"), str(tmp_path / "r-enclave.jsonl"))
    assert r.returncode == 0, r.stderr
    report = json.loads(r.stdout)
    assert {"latency_overhead_pct", "throughput_overhead_pct"} <= set(report)
    r = run(tmp_path, "bench", "compare", str(tmp_path / "r-bare.jsonl"), str(tmp_path / "missing.jsonl"))
    assert r.returncode == EXIT_USAGE


def test_verify_model_digest(tmp_path):
    r = run(tmp_path, "provider", "pack", "--seed", "4")
    assert r.returncode == 0, r.stderr
    digest = re.search(r"model digest ([0-9a-f]{64})", r.stdout).group(1)
    assert digest == ModelWeights.generate(4, 256, 64, 8).digest().hex()
    assert run(tmp_path, "provider", "verify-model", "--expected-digest", digest).returncode == 0
    r = run(tmp_path, "provider", "verify-model", "--expected-digest", "00" * 32)
    assert r.returncode == EXIT_INTEGRITY


def test_three_process_tcp_flow(tmp_path, services):
    services("verifier", "serve")
    services("csp", "host")
    assert run(tmp_path, "provider", "pack").returncode == 0
    r = run(tmp_path, "provider", "deploy")
    assert r.returncode == 0, r.stdout + r.stderr
    assert [int(m) for m in re.findall(r"^step (\d) PASS", r.stdout, re.M)] == list(range(1, 8))
    weights = ModelWeights.generate(1, 256, 64, 8)
    expected = ",".join(map(str, greedy_decode(weights, [3, 1, 4], 5)))
    for mode in ("live", "verdict"):
        r = run(tmp_path, "user", "prompt", "--prompt", "3,1,4", "--max-new-tokens", "5", "--mode", mode)
        assert r.returncode == 0, r.stderr
        assert r.stdout.strip() == expected

    r = run(tmp_path, "rag", "deploy")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "descriptors" / "rag.desc").exists()
    # the document for key (0, 1) is prepended before generation
    docs = dict(line.split("\t") for line in (tmp_path / "provider" / "documents.tsv").read_text().splitlines())
    context = [int(x) for x in docs["0,1"].split(",")] + [0, 1, 9]
    r = run(tmp_path, "user", "prompt", "--prompt", "0,1,9", "--max-new-tokens", "4")
    assert r.stdout.strip() == ",".join(map(str, greedy_decode(weights, context, 4)))
    # the retrieval enclave does not serve generation requests
    r = run(tmp_path, "user", "prompt", "--descriptor", "descriptors/rag.desc", "--prompt", "0,1")
    assert r.returncode == EXIT_PROTOCOL


@pytest.mark.parametrize("misbehave,step,code", [
    ("swap-software", 5, EXIT_ATTESTATION),
    ("tamper-package", 6, EXIT_INTEGRITY),
])
def test_misbehaving_csp_aborts_deployment(tmp_path, services, misbehave, step, code):
    services("verifier", "serve")
    services("csp", "host", "--misbehave", misbehave)
    assert run(tmp_path, "provider", "pack").returncode == 0
    r = run(tmp_path, "provider", "deploy")
    assert r.returncode == code
    assert f"step {step} FAIL" in r.stdout
    assert not (tmp_path / "descriptors" / "inference.desc").exists()
