"""Pluggable agent contracts: prompt templates, strict response parsing,
retry policy, transcripts, and deterministic offline mocks."""

from __future__ import annotations

from .backend import (
    DEFAULT_RETRIES,
    PARSE_OUTCOMES,
    AgentBackend,
    AgentCall,
    AgentTranscript,
    BackendReply,
    BoundedBackend,
    HttpAgentBackend,
    LiveBackendConfig,
    TranscriptLog,
    call_with_retry,
    read_transcripts,
)
from .mock import (
    MockAgentBackend,
    MockProfile,
    mock_backend,
    profile_from_file,
    profile_from_mapping,
    token_overlap,
    tokens,
)
from .parsing import (
    extract_json,
    knowledge_entries_from_response,
    parse_frequency,
    parse_response,
)
from .roles import ROLES, AgentRole, PromptTemplate, load_template, render_prompt

__all__ = [
    "DEFAULT_RETRIES",
    "PARSE_OUTCOMES",
    "ROLES",
    "AgentBackend",
    "AgentCall",
    "AgentRole",
    "AgentTranscript",
    "BackendReply",
    "BoundedBackend",
    "HttpAgentBackend",
    "LiveBackendConfig",
    "MockAgentBackend",
    "MockProfile",
    "PromptTemplate",
    "TranscriptLog",
    "call_with_retry",
    "extract_json",
    "knowledge_entries_from_response",
    "load_template",
    "mock_backend",
    "parse_frequency",
    "parse_response",
    "profile_from_file",
    "profile_from_mapping",
    "read_transcripts",
    "render_prompt",
    "token_overlap",
    "tokens",
]
