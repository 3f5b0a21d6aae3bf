"""Confidential deployment of a toy language model on simulated TEEs.

A provider deploys an inference service on an untrusted cloud host, checks
through remote attestation that the enclave runs the expected software,
provisions the model key over an attested channel and publishes the
service. Users attest the enclave while opening their own channel. The
adversary harness attacks the deployment and the bench harness measures
per-token latency and throughput with and without the simulated enclave.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
