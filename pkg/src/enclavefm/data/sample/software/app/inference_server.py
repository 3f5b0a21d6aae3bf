# Entrypoint measured into the inference enclave.
# The simulator runs enclavefm.orchestrator.apps.InferenceApp for this file.
SERVICE = "inference"
DECODING = "greedy-or-beam"
