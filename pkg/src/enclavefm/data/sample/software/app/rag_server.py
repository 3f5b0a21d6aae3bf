# Entrypoint measured into the retrieval enclave.
# The simulator runs enclavefm.orchestrator.apps.RagApp for this file.
SERVICE = "rag"
MATCH = "exact-prefix"
