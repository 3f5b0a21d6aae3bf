"""Roles of a confidential deployment: CSP host, enclave apps, provider, user."""

from .apps import InferenceApp, RagApp
from .client import ServiceClient, UserResult, connect_service, user_prompt
from .csp import CspAdminClient, CspBehavior, CspHost
from .protocol import DeploymentRequest, Provisioning, ServiceDescriptor, index_digest, retrieval_key
from .provider import ProviderConfig, deploy_rag_chain, load_provider_config, provider_deploy

__all__ = [
    "CspAdminClient", "CspBehavior", "CspHost", "DeploymentRequest", "InferenceApp", "ProviderConfig",
    "Provisioning", "RagApp", "ServiceClient", "ServiceDescriptor", "UserResult", "connect_service",
    "deploy_rag_chain", "index_digest", "load_provider_config", "provider_deploy", "retrieval_key", "user_prompt",
]
